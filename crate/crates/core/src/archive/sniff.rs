//! Magic-byte content sniffing. File extensions are never consulted.

use crate::types::DetectedFormat;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

pub fn sniff(bytes: &[u8]) -> DetectedFormat {
    use DetectedFormat::*;

    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        return Jpeg;
    }
    if bytes.starts_with(PNG_MAGIC) {
        return Png;
    }
    if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        return Gif;
    }
    if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" {
        match &bytes[8..12] {
            b"WEBP" => return Webp,
            b"AVI " => return Avi,
            _ => {}
        }
    }
    if bytes.len() >= 12 && &bytes[4..8] == b"ftyp" {
        return match &bytes[8..12] {
            b"heic" | b"heix" | b"hevc" | b"mif1" | b"msf1" | b"avif" => Heic,
            b"qt  " => QuickTime,
            _ => Mp4,
        };
    }
    if bytes.starts_with(&[0x1A, 0x45, 0xDF, 0xA3]) {
        return Webm;
    }
    if is_bmp(bytes) {
        return Bmp;
    }
    sniff_text(bytes)
}

// "BM" alone is too weak; also require the header's file-size field to match.
fn is_bmp(bytes: &[u8]) -> bool {
    bytes.len() >= 26
        && bytes.starts_with(b"BM")
        && u32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as usize == bytes.len()
}

fn sniff_text(bytes: &[u8]) -> DetectedFormat {
    let body = bytes.strip_prefix(&[0xEF, 0xBB, 0xBF]).unwrap_or(bytes);
    let Ok(text) = std::str::from_utf8(body) else {
        return DetectedFormat::Unknown;
    };
    if text.trim().is_empty() {
        return DetectedFormat::Unknown;
    }
    if text
        .chars()
        .any(|c| c.is_control() && !matches!(c, '\t' | '\n' | '\r' | '\x0c'))
    {
        return DetectedFormat::Unknown;
    }
    match text.trim_start().as_bytes().first() {
        Some(b'{') | Some(b'[') => DetectedFormat::Json,
        _ => DetectedFormat::Text,
    }
}

/// Pixel dimensions for PNG, GIF and baseline/progressive JPEG.
pub fn image_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    match sniff(bytes) {
        DetectedFormat::Png => {
            if bytes.len() < 24 || &bytes[12..16] != b"IHDR" {
                return None;
            }
            let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
            let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
            Some((w, h))
        }
        DetectedFormat::Gif => {
            if bytes.len() < 10 {
                return None;
            }
            let w = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
            let h = u16::from_le_bytes([bytes[8], bytes[9]]) as u32;
            Some((w, h))
        }
        DetectedFormat::Jpeg => jpeg_dimensions(bytes),
        _ => None,
    }
}

fn jpeg_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let mut i = 2;
    while i + 4 <= bytes.len() {
        if bytes[i] != 0xFF {
            return None;
        }
        let marker = bytes[i + 1];
        if marker == 0xFF {
            i += 1;
            continue;
        }
        // Standalone markers carry no length.
        if marker == 0x01 || (0xD0..=0xD9).contains(&marker) {
            i += 2;
            continue;
        }
        let len = u16::from_be_bytes([bytes[i + 2], bytes[i + 3]]) as usize;
        let is_sof = (0xC0..=0xCF).contains(&marker) && !matches!(marker, 0xC4 | 0xC8 | 0xCC);
        if is_sof {
            if i + 9 > bytes.len() {
                return None;
            }
            let h = u16::from_be_bytes([bytes[i + 5], bytes[i + 6]]) as u32;
            let w = u16::from_be_bytes([bytes[i + 7], bytes[i + 8]]) as u32;
            return Some((w, h));
        }
        i += 2 + len;
    }
    None
}
