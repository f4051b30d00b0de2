//! Binary PPM (P6, maxval 255) codec. Other formats must be converted first,
//! e.g. `convert in.jpg out.ppm`.

use super::{DataError, Result};
use crate::tensor::Tensor;

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DataError::Decode(format!("missing or malformed {what}")))
}

/// Decodes to a `3 x H x W` tensor with values scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(DataError::Decode("not a binary PPM (magic P6)".into()));
    }
    let mut pos = 2;
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if w == 0 || h == 0 {
        return Err(DataError::Decode(format!("empty image {w}x{h}")));
    }
    if maxval != 255 {
        return Err(DataError::Decode(format!("maxval {maxval} unsupported, need 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DataError::Decode("no separator after header".into())),
    }
    let plane = w * h;
    let payload = bytes
        .get(pos..pos + 3 * plane)
        .ok_or_else(|| DataError::Decode(format!("truncated payload: need {} bytes, have {}", 3 * plane, bytes.len() - pos)))?;
    let mut data = vec![0.0; 3 * plane];
    for (i, rgb) in payload.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = rgb[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(data, &[3, h, w])?)
}

/// Encodes a `3 x H x W` tensor, clamping to `[0, 1]` and rounding to bytes.
pub fn encode_ppm(x: &Tensor) -> Result<Vec<u8>> {
    let &[3, h, w] = x.shape() else {
        return Err(DataError::Contract(format!("expected 3 x H x W, got {:?}", x.shape())));
    };
    let data = x.data();
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let t = decode_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_by_two_fixture() {
        let mut bytes = b"P6 # comment\n2 2 255\n".to_vec();
        let px: [u8; 12] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];
        bytes.extend_from_slice(&px);
        let t = decode_ppm(&bytes).unwrap();
        let want: Vec<f64> = [10, 40, 70, 100, 20, 50, 80, 110, 30, 60, 90, 120]
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect();
        assert_eq!(t.to_vec(), want);
        assert_eq!(encode_ppm(&t).unwrap()[11..], px);
    }

    #[test]
    fn errors() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1\n").is_err());
        assert!(decode_ppm(b"").is_err());
    }

    #[test]
    fn round_trip() {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
        let t = Tensor::new(data.clone(), &[3, 4, 5]).unwrap();
        let back = decode_ppm(&encode_ppm(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[3, 4, 5]);
        assert_eq!(back.to_vec(), data);
    }
}
