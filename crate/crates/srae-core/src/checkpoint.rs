//! Versioned binary checkpoint format (little-endian):
//!
//! ```text
//! magic "SRAE" | u32 version=1 | u32 variant | u32 x8 hyper block
//! (image_h, image_w, image_c, a, b, j, k, m) | u64 step count |
//! u32 tensor count | per tensor: u16 name len, UTF-8 name, u8 rank,
//! u32 dims[rank], f32 data
//! ```
//!
//! Layer widths are not part of the hyper block; they are recovered from the
//! stored tensor shapes on load.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ParamStore, SraeHyper, Variant};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SRAE";
pub const VERSION: u32 = 1;

/// A trained model: everything needed to run inference and resume tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub hyper: SraeHyper,
    pub variant: Variant,
    pub params: ParamStore,
    pub step_count: u64,
}

impl Checkpoint {
    pub fn new(hyper: SraeHyper, variant: Variant, params: ParamStore, step_count: u64) -> Self {
        Checkpoint { version: VERSION, hyper, variant, params, step_count }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.variant.code().to_le_bytes());
        let hy = &self.hyper;
        for v in [hy.image_h, hy.image_w, hy.image_c, hy.a, hy.b, hy.j, hy.k, hy.m] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.step_count.to_le_bytes());
        let count = self.params.len() as u32;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let variant = Variant::from_code(r.u32()?)?;
        let dims: Vec<usize> = (0..8).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let step_count = r.u64()?;
        let count = r.u32()?;

        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name_bytes = r.take(name_len)?;
            let name = String::from_utf8(name_bytes.to_vec())
                .map_err(|_| Error::Checkpoint("corrupt checkpoint: bad tensor name".into()))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let tensor = Tensor::from_vec(shape, data)
                .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
            params
                .insert(name, tensor)
                .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("corrupt checkpoint: trailing bytes".into()));
        }

        let hyper = infer_hyper(&dims, &params)?;
        hyper
            .validate()
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        Ok(Checkpoint { version, hyper, variant, params, step_count })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("corrupt checkpoint: truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reconstructs the layer widths from stored tensor shapes.
fn infer_hyper(dims: &[usize], params: &ParamStore) -> Result<SraeHyper> {
    let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: missing {what}"));

    let mut trunk = Vec::new();
    for i in 0.. {
        match params.get(&format!("theta_phi/conv{i}/w")) {
            Some(t) => trunk.push(t.shape()[3]),
            None => break,
        }
    }
    if trunk.is_empty() {
        return Err(corrupt("trunk convolutions"));
    }
    let stream_c = params
        .get("theta_c/conv0/w")
        .ok_or_else(|| corrupt("content stream"))?
        .shape()[3];
    let stream_d = params
        .get("theta_d/conv0/w")
        .ok_or_else(|| corrupt("domain stream"))?
        .shape()[3];
    let mut decoder = Vec::new();
    for i in 0.. {
        match params.get(&format!("theta_g/conv{i}/w")) {
            Some(t) => decoder.push(t.shape()[3]),
            None => break,
        }
    }
    if decoder.is_empty() || params.get("theta_g/out/w").is_none() {
        return Err(corrupt("decoder convolutions"));
    }
    let disc_hidden = params
        .get("theta_q/fc0/w")
        .ok_or_else(|| corrupt("content discriminator"))?
        .shape()[1];

    Ok(SraeHyper {
        image_h: dims[0],
        image_w: dims[1],
        image_c: dims[2],
        a: dims[3],
        b: dims[4],
        j: dims[5],
        k: dims[6],
        m: dims[7],
        trunk,
        stream_c,
        stream_d,
        decoder,
        disc_hidden,
    })
}
