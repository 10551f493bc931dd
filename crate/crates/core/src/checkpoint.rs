//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "WSEGCKPT" | u32 version | u32 len + model config (TOML)
//! u32 blob count | blobs...
//! blob: u32 len + name | u8 dtype | u8 rank | u32 dims[rank] | u64 len + payload
//! ```
//!
//! Blobs follow registry order. Kernels contribute `weights` (and `bias`);
//! batch norms contribute `gamma`, `beta`, `running_mean`, `running_var`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::registry::{Param, Registry};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 8] = b"WSEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    name: String,
    dtype: DType,
    dims: Vec<usize>,
    values: Vec<f64>,
    raw: Vec<u8>,
}

fn blob_views<T: Scalar>(reg: &Registry<T>) -> Vec<(String, Vec<usize>, &[T])> {
    let mut out = Vec::new();
    for (name, p) in reg.entries() {
        match p {
            Param::Conv(k) => {
                let s = k.shape;
                out.push((format!("{name}.weights"), vec![s.kh, s.kw, s.cin, s.cout], k.weights.as_slice()));
                if let Some(b) = &k.bias {
                    out.push((format!("{name}.bias"), vec![b.len()], b.as_slice()));
                }
            }
            Param::Norm(s) => {
                let c = vec![s.channels()];
                out.push((format!("{name}.gamma"), c.clone(), s.gamma.as_slice()));
                out.push((format!("{name}.beta"), c.clone(), s.beta.as_slice()));
                out.push((format!("{name}.running_mean"), c.clone(), s.running_mean.as_slice()));
                out.push((format!("{name}.running_var"), c, s.running_var.as_slice()));
            }
        }
    }
    out
}

fn blob_targets<T: Scalar>(reg: &mut Registry<T>) -> Vec<(String, Vec<usize>, &mut Vec<T>)> {
    let mut out = Vec::new();
    for (name, p) in reg.entries_mut() {
        match p {
            Param::Conv(k) => {
                let s = k.shape;
                out.push((format!("{name}.weights"), vec![s.kh, s.kw, s.cin, s.cout], &mut k.weights));
                if let Some(b) = &mut k.bias {
                    out.push((format!("{name}.bias"), vec![b.len()], b));
                }
            }
            Param::Norm(s) => {
                let c = vec![s.channels()];
                out.push((format!("{name}.gamma"), c.clone(), &mut s.gamma));
                out.push((format!("{name}.beta"), c.clone(), &mut s.beta));
                out.push((format!("{name}.running_mean"), c.clone(), &mut s.running_mean));
                out.push((format!("{name}.running_var"), c, &mut s.running_var));
            }
        }
    }
    out
}

/// Copies every parameter and buffer between registries of identical layout.
pub(crate) fn copy_registry<S: Scalar, T: Scalar>(from: &Registry<S>, to: &mut Registry<T>) {
    let src = blob_views(from);
    for ((_, _, values), (_, _, dst)) in src.into_iter().zip(blob_targets(to)) {
        for (d, v) in dst.iter_mut().zip(values) {
            *d = T::of(v.as_f64());
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &model.config().to_toml());
    let blobs = blob_views(model.registry());
    put_u32(&mut out, blobs.len() as u32);
    for (name, dims, values) in blobs {
        put_str(&mut out, &name);
        out.push(T::DTYPE.tag());
        out.push(dims.len() as u8);
        for d in &dims {
            put_u32(&mut out, *d as u32);
        }
        out.extend_from_slice(&((values.len() * T::DTYPE.size()) as u64).to_le_bytes());
        for v in values {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(format!("{what} is not UTF-8")))
    }
}

fn parse(bytes: &[u8]) -> Result<(ModelConfig, Vec<Blob>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig::from_toml(&r.string("config")?)
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let count = r.u32("blob count")? as usize;
    let mut blobs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string("blob name")?;
        let tag = r.u8("dtype")?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::format(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let len = r.u64("payload length")? as usize;
        let expect = dims.iter().product::<usize>() * dtype.size();
        if len != expect {
            return Err(Error::format(format!("{name}: payload of {len} bytes, dims imply {expect}")));
        }
        let raw = r.take(len, &name)?.to_vec();
        let values = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
        };
        blobs.push(Blob {
            name,
            dtype,
            dims,
            values,
            raw,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    Ok((config, blobs))
}

fn fill<T: Scalar>(model: &mut Model<T>, blobs: &[Blob]) -> Result<()> {
    let targets = blob_targets(model.registry_mut());
    for (i, (name, dims, dst)) in targets.into_iter().enumerate() {
        let Some(b) = blobs.get(i) else {
            return Err(Error::shape(format!("checkpoint has no entry for parameter {name}")));
        };
        if b.name != name || b.dims != dims {
            return Err(Error::shape(format!(
                "parameter {name} {dims:?} does not match checkpoint entry {} {:?}",
                b.name, b.dims
            )));
        }
        if b.dtype == T::DTYPE {
            for (d, c) in dst.iter_mut().zip(b.raw.chunks_exact(T::DTYPE.size())) {
                *d = T::read_le(c);
            }
        } else {
            for (d, v) in dst.iter_mut().zip(&b.values) {
                *d = T::of(*v);
            }
        }
    }
    let expected = blob_views(model.registry()).len();
    if blobs.len() != expected {
        return Err(Error::shape(format!(
            "checkpoint has {} entries, model expects {expected}; first extra is {}",
            blobs.len(),
            blobs[expected.min(blobs.len() - 1)].name
        )));
    }
    Ok(())
}

/// Rebuilds the model described by the checkpoint's own config.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let (config, blobs) = parse(bytes)?;
    let mut model = Model::build(&config)?;
    fill(&mut model, &blobs)?;
    Ok(model)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    from_bytes(&fs::read(path)?)
}

/// Loads parameters into a model built from `config`, failing with a shape
/// error that names the first parameter whose name or shape differs.
pub fn load_with_config<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model<T>> {
    let (_, blobs) = parse(&fs::read(path)?)?;
    let mut model = Model::build(config)?;
    fill(&mut model, &blobs)?;
    Ok(model)
}

/// Model config echoed in a checkpoint header.
pub fn read_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    Ok(parse(&fs::read(path)?)?.0)
}
