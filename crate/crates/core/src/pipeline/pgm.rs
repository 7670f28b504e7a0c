//! Binary grayscale PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::FrameTensor;

/// Parses a P5 image, scaling bytes to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<FrameTensor> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::data("empty PGM"))?;
    match magic {
        b"P5" => {}
        b"P2" => return Err(Error::data("ASCII PGM (P2) is not supported; expected P5")),
        other => {
            return Err(Error::data(format!(
                "bad PGM magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    }
    let mut field = |name: &str| -> Result<usize> {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::data(format!("PGM header missing {name}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::data(format!("PGM {name} is not a number")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::data("PGM has zero size"));
    }
    if maxval != 255 {
        return Err(Error::data(format!("PGM maxval {maxval} unsupported; expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::data("PGM header not terminated"));
    }
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::data(format!(
            "PGM payload truncated: {} of {n} bytes",
            bytes.len().saturating_sub(pos)
        )))?;
    let values = raster.iter().map(|&b| f64::from(b) / 255.0).collect();
    FrameTensor::new(height, width, values)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn load_frame(path: &Path) -> Result<FrameTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| e.context(path.display()))
}

/// Encodes values clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_pgm(frame: &FrameTensor) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn save_frame(path: &Path, frame: &FrameTensor) -> Result<()> {
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_tiny_image() {
        let f = decode_pgm(b"P5\n2 2\n255\n\x00\xff\x00\xff").unwrap();
        assert_eq!(f.dims(), (2, 2));
        assert_eq!(f.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn header_comments_allowed() {
        let f = decode_pgm(b"P5 # made by hand\n3 1 # w h\n255\n\x01\x02\x03").unwrap();
        assert_eq!(f.dims(), (1, 3));
    }

    #[test]
    fn rejects_ascii_and_other_maxval() {
        let err = decode_pgm(b"P2\n2 1\n255\n0 255\n").unwrap_err();
        assert!(err.to_string().contains("P2"), "{err}");
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let err = decode_pgm(b"P5\n2 2\n255\n\x00\x01\x02").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn encode_round_trips_bytes() {
        let bytes: Vec<u8> = (0..12).map(|i| (i * 21) as u8).collect();
        let mut file = b"P5\n4 3\n255\n".to_vec();
        file.extend(&bytes);
        let f = decode_pgm(&file).unwrap();
        assert_eq!(encode_pgm(&f), file);
    }
}
