//! Binary greyscale PGM (P5) and decoding grids.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses the exact header layout written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let fmt = |offset: usize, message: &str| Error::Format {
        offset: offset as u64,
        message: message.to_string(),
    };
    if !bytes.starts_with(b"P5\n") {
        return Err(fmt(0, "missing P5 magic"));
    }
    let mut pos = 3;
    let line = |pos: &mut usize| -> Result<&[u8]> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt(start, "unterminated header line"))?;
        *pos = start + end + 1;
        Ok(&bytes[start..start + end])
    };
    let dims_at = pos;
    let dims = std::str::from_utf8(line(&mut pos)?).map_err(|_| fmt(dims_at, "non-ASCII header"))?;
    let mut it = dims.split(' ').map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(fmt(dims_at, "bad width/height line")),
    };
    let max_at = pos;
    if line(&mut pos)? != b"255" {
        return Err(fmt(max_at, "maxval must be 255"));
    }
    let body = &bytes[pos..];
    if body.len() != width * height {
        return Err(Error::Length {
            expected: (pos + width * height) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(GrayImage {
        width,
        height,
        pixels: body.to_vec(),
    })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One row of tiles: the input followed by `decode(h_1) .. decode(h_L)`.
pub fn decoding_grid(bundle: &ModelBundle, x: &[f64], height: usize, width: usize) -> Result<GrayImage> {
    if x.len() != height * width || x.len() != bundle.arch.input_dim {
        return Err(Error::dim("grid input", &[x.len()], &[height * width]));
    }
    let xt = Tensor::new([1, x.len()], x.to_vec())?;
    let (_, trace) = bundle.forward_with_trace(&xt)?;
    let mut tiles = vec![xt];
    for h in &trace.activations {
        tiles.push(bundle.decode(h)?);
    }
    let gw = tiles.len() * width;
    let mut pixels = vec![0u8; gw * height];
    for (t, tile) in tiles.iter().enumerate() {
        for r in 0..height {
            for c in 0..width {
                pixels[r * gw + t * width + c] = to_byte(tile.data()[r * width + c]);
            }
        }
    }
    Ok(GrayImage {
        width: gw,
        height,
        pixels,
    })
}

/// Writes `<prefix><tag>.pgm` for each `(tag, example)`; returns the paths.
pub fn export_decoding_grid(
    bundle: &ModelBundle,
    examples: &[(String, &[f64])],
    height: usize,
    width: usize,
    path_prefix: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let prefix = path_prefix.as_ref().as_os_str().to_owned();
    let mut out = Vec::with_capacity(examples.len());
    for (tag, x) in examples {
        let mut name = prefix.clone();
        name.push(format!("{tag}.pgm"));
        let path = PathBuf::from(name);
        write_pgm(&path, &decoding_grid(bundle, x, height, width)?)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchSpec;

    #[test]
    fn header_layout_and_zero_body() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0; 6],
        };
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 0));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn malformed_headers_are_errors() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 x\n255\n\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_pgm(b"P5\n2 1\n255\n\0"), Err(Error::Length { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n65535\n\0"), Err(Error::Format { .. })));
    }

    #[test]
    fn byte_rounding() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-0.2), 0);
    }

    #[test]
    fn grid_width_is_layers_plus_one_tiles() {
        let arch = ArchSpec {
            input_dim: 12,
            blocks: 3,
            hidden: 4,
            classes: 2,
            decoder_hidden: 5,
        };
        let b = ModelBundle::init(&arch, 0).unwrap();
        let g = decoding_grid(&b, &[0.5; 12], 3, 4).unwrap();
        assert_eq!((g.width, g.height), (16, 3));
        // first tile is the input itself
        assert_eq!(g.pixels[0], 128);
    }
}
