//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "URSCT1"  u32 version  u32 count  tensor*count       parameters
//! u32 count  tensor*count                              optimizer moments, named m/<p> and v/<p>
//! u64 step  u64 epoch
//! u32 len  rng[len]                                    ChaCha8 seed(32) stream(u64) word_pos(u128)
//! u32 len  config[len]                                 effective configuration text
//!
//! tensor: u16 name_len  name  u8 dtype(0 = f32)  u8 ndim  u32 dims*ndim  f32 data
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ursct_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 6] = b"URSCT1";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub moments_m: BTreeMap<String, Tensor<f32>>,
    pub moments_v: BTreeMap<String, Tensor<f32>>,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
    pub rng: ChaCha8Rng,
    pub config_text: String,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
    out.extend(name_len.to_le_bytes());
    out.extend(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
    Ok(())
}

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend((bytes.len() as u32).to_le_bytes());
    out.extend(bytes);
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((state.params.len() as u32).to_le_bytes());
    for (name, t) in state.params.iter() {
        put_tensor(&mut out, name, t)?;
    }
    let moments = state.moments_m.len() + state.moments_v.len();
    out.extend((moments as u32).to_le_bytes());
    for (prefix, map) in [("m/", &state.moments_m), ("v/", &state.moments_v)] {
        for (name, t) in map {
            put_tensor(&mut out, &format!("{prefix}{name}"), t)?;
        }
    }
    out.extend(state.step.to_le_bytes());
    out.extend(state.epoch.to_le_bytes());
    let mut rng = Vec::with_capacity(56);
    rng.extend(state.rng.get_seed());
    rng.extend(state.rng.get_stream().to_le_bytes());
    rng.extend(state.rng.get_word_pos().to_le_bytes());
    put_blob(&mut out, &rng);
    put_blob(&mut out, state.config_text.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let n = self.u16()? as usize;
        let name =
            String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("`{name}`: unsupported dtype tag {dtype}")));
        }
        let ndim = self.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| Ok(self.u32()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let bytes = self.take(count * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut params = ParamStore::new();
    for _ in 0..r.u32()? {
        let (name, t) = r.tensor()?;
        params
            .insert(&name, t)
            .map_err(|_| Error::Format(format!("duplicate tensor `{name}`")))?;
    }
    let (mut moments_m, mut moments_v) = (BTreeMap::new(), BTreeMap::new());
    for _ in 0..r.u32()? {
        let (name, t) = r.tensor()?;
        match name.split_once('/') {
            Some(("m", p)) => moments_m.insert(p.to_string(), t),
            Some(("v", p)) => moments_v.insert(p.to_string(), t),
            _ => return Err(Error::Format(format!("unexpected moment tensor `{name}`"))),
        };
    }
    let step = r.u64()?;
    let epoch = r.u64()?;
    let mut rb = Reader { buf: r.blob()?, pos: 0 };
    let seed: [u8; 32] = rb.array()?;
    let stream = rb.u64()?;
    let word_pos = u128::from_le_bytes(rb.array()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let config_text = String::from_utf8(r.blob()?.to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(TrainState {
        params,
        moments_m,
        moments_v,
        step,
        epoch,
        rng,
        config_text,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
