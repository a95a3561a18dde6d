//! Local processing of data download packages (DDPs) for donation studies.
//!
//! The crate follows a package from the respondent's device to the
//! researcher's integrated dataset:
//!
//! * [`archive`] sniffs archive members and detects the providing platform,
//! * [`parsers`] turns fixture-schema archives into raw media and location records,
//! * [`transform`] derives minimal research variables locally,
//! * [`consent`] lets the respondent approve or reject each variable and builds
//!   the checksummed [`consent::DonationPackage`],
//! * [`integrate`] links packages on person and time level and validates the result,
//! * [`errorframe`] holds the error diagnostics: misclassification correction,
//!   post-stratification, agreement statistics and the representation funnel simulator,
//! * [`study`] wires everything into pipeline, ingest and checklist runs,
//! * [`fixture`] generates deterministic synthetic archives with ground-truth sidecars.

pub mod archive;
pub mod consent;
pub mod errorframe;
pub mod fixture;
pub mod integrate;
pub mod parsers;
pub mod stats;
pub mod study;
pub mod timestamp;
pub mod transform;
pub mod types;

pub use timestamp::{parse_timestamp, SourceFormat, Timestamp};
pub use types::{DetectedFormat, FileEntry, MediaKind, ProviderId, Pseudonym};
