//! Binary greyscale PGM (`P5`, maxval 255) and area-average resizing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::IMAGE_SIDE;
use crate::tensor::Tensor;

/// Decodes a `P5` image into `[1, H, W]` with pixels scaled to `[0, 1]`.
/// Bytes after the pixel block are ignored.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut p = Parser { bytes, pos: 0 };
    if bytes.get(..2) != Some(b"P5") {
        return Err(p.error("expected magic \"P5\""));
    }
    p.pos = 2;
    let (width_at, width) = p.header_number("width")?;
    let (height_at, height) = p.header_number("height")?;
    for (at, v, what) in [(width_at, width, "width"), (height_at, height, "height")] {
        if v == 0 {
            return Err(Error::Pgm {
                offset: at,
                msg: format!("{what} must be positive"),
            });
        }
    }
    let (maxval_at, maxval) = p.header_number("maxval")?;
    if maxval != 255 {
        return Err(Error::Pgm {
            offset: maxval_at,
            msg: format!("maxval must be 255, got {maxval}"),
        });
    }
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return Err(p.error("expected one whitespace byte before the pixel data")),
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| p.error("image dimensions overflow"))?;
    let pixels = bytes.get(p.pos..p.pos + count).ok_or_else(|| Error::Pgm {
        offset: bytes.len(),
        msg: format!("truncated pixel data: expected {count} bytes from offset {}", p.pos),
    })?;
    let data = pixels.iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::new(vec![1, height, width], data)
}

/// Encodes `[1, H, W]` with pixels in `[0, 1]`, rounding to 8 bits.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    image.expect_rank("encode_pgm", 3)?;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if c != 1 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch {
            op: "encode_pgm",
            expected: vec![1, h.max(1), w.max(1)],
            got: image.shape().to_vec(),
        });
    }
    if !image.data().iter().all(|p| (0.0..=1.0).contains(p)) {
        return Err(Error::invalid("encode_pgm", "pixel values must lie in [0, 1]"));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&p| (p * 255.0).round() as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pgm(&bytes)
}

pub fn save_image(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Area-average resize of `[1, H, W]` (H, W ≥ 64) to `[1, 64, 64]`. Each
/// output pixel is the mean of the source area it covers, with partially
/// covered source pixels weighted by overlap.
pub fn resize_to_64(image: &Tensor) -> Result<Tensor> {
    image.expect_rank("resize_to_64", 3)?;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if c != 1 || h < IMAGE_SIDE || w < IMAGE_SIDE {
        return Err(Error::invalid(
            "resize_to_64",
            format!("need a [1, H, W] image with H, W ≥ {IMAGE_SIDE}, got {:?}", image.shape()),
        ));
    }
    if h == IMAGE_SIDE && w == IMAGE_SIDE {
        return Ok(image.clone());
    }
    let rows = area_weights(h, IMAGE_SIDE);
    let cols = area_weights(w, IMAGE_SIDE);
    let src = image.data();
    // Rows first: [h, w] -> [64, w].
    let mut tmp = vec![0.0; IMAGE_SIDE * w];
    for (oy, taps) in rows.iter().enumerate() {
        let dst = &mut tmp[oy * w..(oy + 1) * w];
        for &(y, weight) in taps {
            for (d, s) in dst.iter_mut().zip(&src[y * w..(y + 1) * w]) {
                *d += weight * s;
            }
        }
    }
    let mut out = Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]);
    for (oy, row) in out.data_mut().chunks_exact_mut(IMAGE_SIDE).enumerate() {
        let src_row = &tmp[oy * w..(oy + 1) * w];
        for (v, taps) in row.iter_mut().zip(&cols) {
            *v = taps.iter().map(|&(x, weight)| weight * src_row[x]).sum();
        }
    }
    Ok(out)
}

/// For each of `m` output cells over `n ≥ m` source cells, the covered source
/// indices and their normalized overlap weights.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units of 1/m source pixels so every boundary is an integer.
    (0..m)
        .map(|i| {
            let (lo, hi) = (i * n, (i + 1) * n);
            (lo / m..hi.div_ceil(m))
                .map(|j| {
                    let overlap = hi.min((j + 1) * m) - lo.max(j * m);
                    (j, overlap as f64 / n as f64)
                })
                .collect()
        })
        .collect()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Pgm {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) -> usize {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.pos
    }

    /// Whitespace-separated decimal header field and its offset.
    fn header_number(&mut self, what: &str) -> Result<(usize, usize)> {
        let before = self.pos;
        let start = self.skip_space_and_comments();
        if start == before {
            return Err(self.error(format!("expected whitespace before {what}")));
        }
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(if start >= self.bytes.len() {
                self.error(format!("header ends before {what}"))
            } else {
                self.error(format!("expected a decimal {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ASCII digits")
            .parse()
            .map(|v| (start, v))
            .map_err(|_| Error::Pgm {
                offset: start,
                msg: format!("{what} is too large"),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::new(vec![1, h, w], data).unwrap()
    }

    fn offset_of(r: Result<Tensor>) -> usize {
        match r {
            Err(Error::Pgm { offset, .. }) => offset,
            other => panic!("expected a PGM error, got {other:?}"),
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = image(3, 5, |y, x| ((y * 5 + x) * 17 % 256) as f64 / 255.0);
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn header_comments_and_spacing() {
        let mut bytes = b"P5 # made by hand\n2\t1\n# depth\n255 ".to_vec();
        bytes.extend([0, 255, 7]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 1, 2]);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        assert_eq!(offset_of(decode_pgm(b"P2\n1 1\n255\n\0")), 0);
        assert_eq!(offset_of(decode_pgm(b"P5\nx 1\n255\n\0")), 3);
        assert_eq!(offset_of(decode_pgm(b"P5\n1 1\n65535\n\0\0")), 7);
        assert_eq!(offset_of(decode_pgm(b"P5\n1 1\n")), 7);
        assert_eq!(offset_of(decode_pgm(b"P5\n2 2\n255\n\0\0\0")), 14);
        assert_eq!(offset_of(decode_pgm(b"P5\n0 2\n255\n")), 3);
        assert_eq!(offset_of(decode_pgm(b"P51 1\n255\n\0")), 2);
        assert_eq!(offset_of(decode_pgm(b"P5\n1 1\n255")), 10);
    }

    #[test]
    fn encode_rejects_bad_input() {
        assert!(encode_pgm(&Tensor::zeros(&[2, 4, 4])).is_err());
        assert!(encode_pgm(&Tensor::zeros(&[4, 4])).is_err());
        assert!(encode_pgm(&Tensor::full(&[1, 2, 2], 1.5)).is_err());
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let out = resize_to_64(&image(128, 128, |_, _| 200.0 / 255.0)).unwrap();
        for &v in out.data() {
            assert!((v - 200.0 / 255.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pixel_checkerboard_averages_to_half() {
        // Every 2×2 source block holds two black and two white pixels.
        let img = image(128, 128, |y, x| ((y + x) % 2) as f64);
        let out = resize_to_64(&img).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_at_64() {
        let img = image(64, 64, |y, x| ((y * 7 + x * 3) % 11) as f64 / 10.0);
        assert_eq!(resize_to_64(&img).unwrap(), img);
    }

    #[test]
    fn uneven_sizes_weight_partial_pixels() {
        // 96 → 64: each output covers 1.5 source pixels.
        let img = image(64, 96, |_, x| x as f64);
        let out = resize_to_64(&img).unwrap();
        assert!((out.data()[0] - (0.0 + 0.5 * 1.0) / 1.5).abs() < 1e-12);
        assert!((out.data()[1] - (0.5 * 1.0 + 2.0) / 1.5).abs() < 1e-12);
        let mean_in: f64 = img.data().iter().sum::<f64>() / img.len() as f64;
        let mean_out: f64 = out.data().iter().sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn resize_rejects_small_or_multichannel() {
        assert!(resize_to_64(&Tensor::zeros(&[1, 63, 100])).is_err());
        assert!(resize_to_64(&Tensor::zeros(&[3, 64, 64])).is_err());
    }
}
