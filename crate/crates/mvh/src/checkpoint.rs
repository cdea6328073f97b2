//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "MVHCKPT1"
//! u64 record count
//! per record:  u32 name length, name (UTF-8), u32 rank, rank × u64 dims, f64 values
//! optimizer:   u64 step, f64 lr, beta1, beta2, eps, u64 moment count,
//!              per moment: u32 name length, name, u64 length, f64 m values, f64 v values
//! 32-byte architecture fingerprint
//! ```
//!
//! The run seed travels as the record `meta.seed` holding the seed's bit
//! pattern; it is stripped from the parameter store on load.

use std::collections::BTreeMap;
use std::path::Path;

use mvh_core::autodiff::{Adam, AdamConfig, MomentState};
use mvh_core::harness::TrainState;
use mvh_core::params::ParamStore;
use mvh_core::{Error, Tensor};

use crate::error::AppResult;
use crate::fsio::{atomic_write, read_bytes};

pub const MAGIC: &[u8; 8] = b"MVHCKPT1";
const SEED_RECORD: &str = "meta.seed";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub state: TrainState,
    pub fingerprint: [u8; 32],
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], vals: &[f64]) {
    put_name(out, name);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_f64s(out, vals);
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let params = &ckpt.state.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u64 + 1).to_le_bytes());
    put_record(&mut out, SEED_RECORD, &[1], &[f64::from_bits(ckpt.seed)]);
    for (name, t) in params.iter() {
        put_record(&mut out, name, t.shape(), t.data());
    }
    let adam = &ckpt.state.adam;
    out.extend_from_slice(&adam.step.to_le_bytes());
    let c = adam.config;
    put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.eps]);
    out.extend_from_slice(&(adam.moments.len() as u64).to_le_bytes());
    for (name, m) in &adam.moments {
        put_name(&mut out, name);
        out.extend_from_slice(&(m.m.len() as u64).to_le_bytes());
        put_f64s(&mut out, &m.m);
        put_f64s(&mut out, &m.v);
    }
    out.extend_from_slice(&ckpt.fingerprint);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint: {what}"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, Error> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, Error> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    }

    fn name(&mut self) -> Result<String, Error> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("non-UTF-8 name"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, Error> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| corrupt("missing magic"))? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let n_records = r.len()?;
    let mut params = ParamStore::new();
    let mut seed = None;
    for _ in 0..n_records {
        let name = r.name()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<usize>, Error>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("dims overflow"))?;
        let vals = r.f64s(n)?;
        if name == SEED_RECORD {
            seed = Some(vals.first().copied().map(f64::to_bits).ok_or_else(|| corrupt("empty seed record"))?);
            continue;
        }
        if params.contains(&name) {
            return Err(corrupt(format!("duplicate record {name:?}")));
        }
        params.insert(&name, Tensor::new(&shape, vals)?);
    }
    let step = r.u64()?;
    let c = r.f64s(4)?;
    let config = AdamConfig {
        lr: c[0],
        beta1: c[1],
        beta2: c[2],
        eps: c[3],
    };
    let mut moments = BTreeMap::new();
    for _ in 0..r.len()? {
        let name = r.name()?;
        let n = r.len()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        moments.insert(name, MomentState { m, v });
    }
    let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Checkpoint {
        seed: seed.ok_or_else(|| corrupt("missing meta.seed record"))?,
        state: TrainState {
            params,
            adam: Adam { config, step, moments },
        },
        fingerprint,
    })
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Errors unless the stored architecture fingerprint equals `expected`.
pub fn check_fingerprint(ckpt: &Checkpoint, expected: &[u8; 32], path: &Path) -> Result<(), Error> {
    if &ckpt.fingerprint != expected {
        return Err(Error::Checkpoint(format!(
            "{} was written for a different architecture (fingerprint {}, expected {})",
            path.display(),
            &hex(&ckpt.fingerprint)[..16],
            &hex(expected)[..16]
        )));
    }
    Ok(())
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    atomic_write(path, &encode(ckpt))
}

pub fn load(path: &Path, expected: &[u8; 32]) -> AppResult<Checkpoint> {
    let ckpt = decode(&read_bytes(path)?).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })?;
    check_fingerprint(&ckpt, expected, path)?;
    Ok(ckpt)
}
