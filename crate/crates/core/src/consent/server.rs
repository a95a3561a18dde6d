//! Loopback HTTP front of a [`ConsentSession`].
//!
//! One thread owns the session and answers requests in arrival order, so
//! every mutation is serialized. The listener binds to 127.0.0.1 only and
//! shuts down after a successful `POST /purge`.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/session` | |
//! | GET | `/variables` | |
//! | GET | `/preview/{variable}?page=n&page_size=m` | |
//! | POST | `/decision` | `{"variable": "...", "decision": "approved" \| "rejected"}` |
//! | POST | `/finalize` | |
//! | GET | `/package` (`?format=zip` for the archive) | |
//! | POST | `/purge` | `{"keep_archives": bool}` |

use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;
use tiny_http::{Header, Method, Response, Server};

use super::{ConsentError, ConsentSession, Decision, DEFAULT_PAGE_SIZE};
use crate::timestamp::Timestamp;

pub struct ConsentServer {
    server: Server,
    addr: SocketAddr,
    session: ConsentSession,
    package_out: Option<PathBuf>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    thread: JoinHandle<ConsentSession>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the purge that ends the session.
    pub fn join(self) -> ConsentSession {
        self.thread.join().expect("consent server thread panicked")
    }
}

struct Reply {
    status: u16,
    body: Vec<u8>,
    content_type: &'static str,
    stop: bool,
}

impl Reply {
    fn json(status: u16, value: serde_json::Value) -> Reply {
        Reply {
            status,
            body: serde_json::to_vec(&value).expect("JSON values serialize"),
            content_type: "application/json; charset=utf-8",
            stop: false,
        }
    }

    fn error(status: u16, message: impl ToString) -> Reply {
        Reply::json(status, json!({ "error": message.to_string() }))
    }
}

fn consent_status(e: &ConsentError) -> u16 {
    match e {
        ConsentError::NotFound(_) => 404,
        ConsentError::Immutable(_)
        | ConsentError::Incomplete(_)
        | ConsentError::WrongState { .. }
        | ConsentError::NothingConsented => 409,
        _ => 400,
    }
}

#[derive(Deserialize)]
struct DecisionBody {
    variable: String,
    decision: Decision,
}

#[derive(Deserialize, Default)]
struct PurgeBody {
    #[serde(default)]
    keep_archives: bool,
}

fn now() -> Timestamp {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    Timestamp::from_epoch_ms(ms)
}

fn query_param<'a>(query: &'a str, key: &str) -> Option<&'a str> {
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

impl ConsentServer {
    /// Binds `127.0.0.1:port`; port 0 picks a free one.
    pub fn bind(session: ConsentSession, port: u16) -> std::io::Result<ConsentServer> {
        let server = Server::http((Ipv4Addr::LOCALHOST, port)).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("listener has no IP address"))?;
        Ok(ConsentServer {
            server,
            addr,
            session,
            package_out: None,
        })
    }

    /// Also writes the package archive to `path` on finalize.
    pub fn with_package_out(mut self, path: impl Into<PathBuf>) -> Self {
        self.package_out = Some(path.into());
        self
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves requests until the session is purged, then returns it.
    pub fn serve(mut self) -> ConsentSession {
        loop {
            let mut request = match self.server.recv() {
                Ok(r) => r,
                Err(_) => continue,
            };
            let mut body = Vec::new();
            let reply = match request.as_reader().read_to_end(&mut body) {
                Ok(_) => {
                    let url = request.url().to_string();
                    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
                    self.handle(request.method(), path, query, &body)
                }
                Err(e) => Reply::error(400, e),
            };
            let stop = reply.stop;
            let response = Response::from_data(reply.body)
                .with_status_code(reply.status)
                .with_header(
                    Header::from_bytes(&b"Content-Type"[..], reply.content_type.as_bytes())
                        .expect("static header is valid"),
                );
            let _ = request.respond(response);
            if stop {
                return self.session;
            }
        }
    }

    pub fn spawn(self) -> ServerHandle {
        let addr = self.addr;
        ServerHandle {
            addr,
            thread: std::thread::spawn(move || self.serve()),
        }
    }

    fn handle(&mut self, method: &Method, path: &str, query: &str, body: &[u8]) -> Reply {
        let s = &mut self.session;
        match (method, path) {
            (Method::Get, "/session") => Reply::json(200, json!(s.summary())),
            (Method::Get, "/variables") => Reply::json(200, json!(s.variables())),
            (Method::Get, p) if p.starts_with("/preview/") => {
                let variable = &p["/preview/".len()..];
                let parse = |key: &str, default: usize| {
                    query_param(query, key).map_or(Ok(default), |v| v.parse::<usize>())
                };
                let (Ok(page), Ok(size)) =
                    (parse("page", 0), parse("page_size", DEFAULT_PAGE_SIZE))
                else {
                    return Reply::error(400, "page and page_size must be non-negative integers");
                };
                match s.preview(variable, page, size) {
                    Ok(p) => Reply::json(200, json!(p)),
                    Err(e) => Reply::error(consent_status(&e), e),
                }
            }
            (Method::Post, "/decision") => {
                let req: DecisionBody = match serde_json::from_slice(body) {
                    Ok(r) => r,
                    Err(e) => return Reply::error(400, format!("bad decision body: {e}")),
                };
                if req.decision == Decision::Pending {
                    return Reply::error(400, "decision must be approved or rejected");
                }
                match s.record_decision(&req.variable, req.decision) {
                    Ok(entry) => Reply::json(200, json!(entry)),
                    Err(e) => Reply::error(consent_status(&e), e),
                }
            }
            (Method::Post, "/finalize") => match s.finalize(now()) {
                Ok(pkg) => {
                    if let (Some(pkg), Some(out)) = (pkg, &self.package_out) {
                        if let Err(e) = pkg.write_to(out) {
                            return Reply::error(500, e);
                        }
                    }
                    Reply::json(200, json!(s.outcome()))
                }
                Err(e) => Reply::error(consent_status(&e), e),
            },
            (Method::Get, "/package") => match s.package() {
                Some(pkg) if query_param(query, "format") == Some("zip") => Reply {
                    status: 200,
                    body: pkg.to_zip_bytes(),
                    content_type: "application/zip",
                    stop: false,
                },
                Some(pkg) => Reply::json(
                    200,
                    json!({
                        "study_id": pkg.study_id,
                        "pseudonym": pkg.owner,
                        "variables": pkg.variables,
                        "records": pkg.records.len(),
                        "checksum": pkg.checksum(),
                    }),
                ),
                None => {
                    let e = match s.outcome() {
                        Some(_) => ConsentError::NothingConsented,
                        None => ConsentError::WrongState {
                            action: "fetch the package",
                            state: s.state(),
                        },
                    };
                    Reply::error(consent_status(&e), e)
                }
            },
            (Method::Post, "/purge") => {
                let req: PurgeBody = if body.iter().all(u8::is_ascii_whitespace) {
                    PurgeBody::default()
                } else {
                    match serde_json::from_slice(body) {
                        Ok(r) => r,
                        Err(e) => return Reply::error(400, format!("bad purge body: {e}")),
                    }
                };
                let report = s.purge_local(req.keep_archives);
                let mut reply = Reply::json(
                    200,
                    json!({
                        "deleted": report.deleted,
                        "kept": report.kept,
                        "survivors": report.survivors,
                        "nothing_to_delete": report.nothing_to_delete(),
                    }),
                );
                reply.stop = true;
                reply
            }
            (_, "/session" | "/variables" | "/decision" | "/finalize" | "/package" | "/purge") => {
                Reply::error(405, "method not allowed")
            }
            _ => Reply::error(404, format!("no endpoint {path}")),
        }
    }
}
