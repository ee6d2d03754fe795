//! Minimal portable-pixmap IO: P6 write, P5/P6 read.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::stack::Image;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a P5/P6 pixmap: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0}")]
    BadMaxval(u32),
    #[error("pixel payload truncated: expected {expected}, got {got}")]
    Truncated { expected: usize, got: usize },
}

/// Write an RGB image as a binary P6 file.
pub fn write_p6(image: &Image, path: &Path) -> Result<(), PpmError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes())?;
    f.write_all(&image.data)?;
    Ok(())
}

/// Read a binary P5 (grayscale) or P6 (RGB) file into an RGB image.
/// P5 samples are replicated across the three channels.
pub fn read_pnm(bytes: &[u8]) -> Result<Image, PpmError> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos)
        .ok_or_else(|| PpmError::BadHeader("missing magic".into()))?;
    let channels = match magic {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(PpmError::BadHeader(format!(
                "magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_dim(bytes, &mut pos)?;
    let height = parse_dim(bytes, &mut pos)?;
    let maxval = parse_dim(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(PpmError::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let expected = width as usize * height as usize * channels;
    let payload = bytes
        .get(pos..pos + expected)
        .ok_or(PpmError::Truncated {
            expected,
            got: bytes.len().saturating_sub(pos),
        })?;
    let data = if channels == 3 {
        payload.to_vec()
    } else {
        let mut rgb = Vec::with_capacity(expected * 3);
        for &v in payload {
            rgb.extend_from_slice(&[v, v, v]);
        }
        rgb
    };
    Ok(Image {
        width: width as u16,
        height: height as u16,
        data,
    })
}

fn parse_dim(bytes: &[u8], pos: &mut usize) -> Result<u32, PpmError> {
    let tok = take_token(bytes, pos).ok_or_else(|| PpmError::BadHeader("missing field".into()))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PpmError::BadHeader(format!("bad field {:?}", String::from_utf8_lossy(tok))))
}

/// Next whitespace-delimited token, skipping `#` comment lines.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(&bytes[start..*pos])
    } else {
        None
    }
}
