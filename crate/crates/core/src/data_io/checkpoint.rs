//! Binary checkpoints.
//!
//! ```text
//! "DCNN" | u32 version | u64 payload length | payload | u64 FNV-1a(payload)
//! ```
//!
//! All integers and floats are little-endian. The payload holds the
//! architecture (five u32), every parameter array in registry order
//! (u32 rank, u32 extents, f64 values), optional Adam state, optional RNG
//! position, the number of completed epochs and a JSON echo of the config.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::models::{ArchSpec, ModelBundle};
use crate::tensor::Tensor;
use crate::training::{AdamState, RngState};

pub const MAGIC: &[u8; 4] = b"DCNN";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
    pub epochs_done: u64,
    pub config_json: String,
}

impl Checkpoint {
    pub fn new(bundle: ModelBundle) -> Self {
        Self {
            bundle,
            adam: None,
            rng: None,
            epochs_done: 0,
            config_json: String::new(),
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.bundle.arch
    }
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut p = Vec::new();
    let a = &ck.bundle.arch;
    for v in [a.input_dim, a.blocks, a.hidden, a.classes, a.decoder_hidden] {
        put_u32(&mut p, v);
    }
    let params = ck.bundle.params();
    put_u32(&mut p, params.len());
    for t in &params {
        put_array(&mut p, t);
    }
    match &ck.adam {
        None => p.push(0),
        Some(s) => {
            p.push(1);
            p.extend_from_slice(&s.step.to_le_bytes());
            for c in [s.beta1, s.beta2, s.eps] {
                p.extend_from_slice(&c.to_le_bytes());
            }
            put_u32(&mut p, s.m.len());
            for t in s.m.iter().chain(&s.v) {
                put_array(&mut p, t);
            }
        }
    }
    match &ck.rng {
        None => p.push(0),
        Some(r) => {
            p.push(1);
            p.extend_from_slice(&r.seed);
            p.extend_from_slice(&r.stream.to_le_bytes());
            p.extend_from_slice(&r.word_pos.to_le_bytes());
        }
    }
    p.extend_from_slice(&ck.epochs_done.to_le_bytes());
    put_u32(&mut p, ck.config_json.len());
    p.extend_from_slice(ck.config_json.as_bytes());

    let mut out = Vec::with_capacity(HEADER + p.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out.extend_from_slice(&checksum(&p).to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: (self.base + self.pos) as u64,
                message: format!("payload ends before a {n}-byte field"),
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: (self.base + self.pos) as u64,
            message: message.into(),
        }
    }

    fn array(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank > 4 {
            return Err(self.err(format!("array rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()?);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("array too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| self.err(e.to_string()))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.err(format!("flag byte {b}"))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER {
        return Err(Error::Length {
            expected: HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing DCNN magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (HEADER as u64).saturating_add(len).saturating_add(8);
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len() as u64,
        });
    }
    let payload = &bytes[HEADER..HEADER + len as usize];
    let stored = u64::from_le_bytes(bytes[HEADER + len as usize..].try_into().unwrap());
    let computed = checksum(payload);
    if stored != computed {
        return Err(Error::Corruption { stored, computed });
    }

    let mut c = Cursor {
        bytes: payload,
        pos: 0,
        base: HEADER,
    };
    let arch = ArchSpec {
        input_dim: c.u32()?,
        blocks: c.u32()?,
        hidden: c.u32()?,
        classes: c.u32()?,
        decoder_hidden: c.u32()?,
    };
    arch.validate().map_err(|e| c.err(e.to_string()))?;
    let mut bundle = ModelBundle::zeros(&arch)?;
    let count = c.u32()?;
    {
        let mut slots = bundle.params_mut();
        if count != slots.len() {
            return Err(c.err(format!("{count} arrays, architecture needs {}", slots.len())));
        }
        for slot in slots.iter_mut() {
            let t = c.array()?;
            if t.shape() != slot.shape() {
                return Err(c.err(format!(
                    "array shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
    }
    let adam = if c.flag()? {
        let step = c.u64()?;
        let (beta1, beta2, eps) = (c.f64()?, c.f64()?, c.f64()?);
        let k = c.u32()?;
        if k != count {
            return Err(c.err("optimizer state does not match the parameters"));
        }
        let mut m = Vec::with_capacity(k);
        let mut v = Vec::with_capacity(k);
        for _ in 0..k {
            m.push(c.array()?);
        }
        for _ in 0..k {
            v.push(c.array()?);
        }
        let params = bundle.params();
        for (i, p) in params.iter().enumerate() {
            if m[i].shape() != p.shape() || v[i].shape() != p.shape() {
                return Err(c.err(format!("moment shape mismatch for parameter {i}")));
            }
        }
        Some(AdamState {
            m,
            v,
            step,
            beta1,
            beta2,
            eps,
        })
    } else {
        None
    };
    let rng = if c.flag()? {
        let seed: [u8; 32] = c.take(32)?.try_into().unwrap();
        let stream = c.u64()?;
        let word_pos = u128::from_le_bytes(c.take(16)?.try_into().unwrap());
        Some(RngState {
            seed,
            stream,
            word_pos,
        })
    } else {
        None
    };
    let epochs_done = c.u64()?;
    let n = c.u32()?;
    let config_json = String::from_utf8(c.take(n)?.to_vec()).map_err(|_| c.err("config is not UTF-8"))?;
    if c.pos != payload.len() {
        return Err(c.err("trailing bytes after config"));
    }
    Ok(Checkpoint {
        bundle,
        adam,
        rng,
        epochs_done,
        config_json,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let arch = ArchSpec {
            input_dim: 5,
            blocks: 2,
            hidden: 3,
            classes: 2,
            decoder_hidden: 4,
        };
        let bundle = ModelBundle::init(&arch, 7).unwrap();
        let mut adam = AdamState::new(bundle.params());
        adam.step = 12;
        adam.m[0].data_mut()[1] = -0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(1);
        rng.set_word_pos(99);
        Checkpoint {
            bundle,
            adam: Some(adam),
            rng: Some(RngState::capture(&rng)),
            epochs_done: 4,
            config_json: r#"{"epochs":4}"#.into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode(&ck);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back), bytes);
        let bare = Checkpoint::new(ck.bundle.clone());
        assert_eq!(decode(&encode(&bare)).unwrap(), bare);
    }

    #[test]
    fn every_flipped_payload_byte_is_detected() {
        let bytes = encode(&sample());
        for i in (HEADER..bytes.len() - 8).step_by(7) {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(decode(&b), Err(Error::Corruption { .. })), "byte {i}");
        }
    }

    #[test]
    fn header_errors() {
        let bytes = encode(&sample());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode(&v), Err(Error::Version { found: 9, expected: 1 })));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(decode(&m), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Length { .. })));
        assert!(matches!(decode(&bytes[..3]), Err(Error::Length { .. })));
    }

    #[test]
    fn shape_mismatch_inside_valid_checksum_is_format_error() {
        let mut ck = sample();
        ck.adam = None;
        let mut bytes = encode(&ck);
        // claim blocks = 3: array count no longer matches
        bytes[HEADER + 4] = 3;
        let len = bytes.len();
        let sum = checksum(&bytes[HEADER..len - 8]);
        bytes[len - 8..].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }
}
