//! Checkpoint container: magic "SBCK", version, the model config as JSON,
//! the optimizer step count, and a named table of f32 tensors (parameters,
//! batchnorm running stats, Adam moments under `adam.m.` / `adam.v.`).

use std::io::{Read as _, Write as _};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::model::{Senet, SenetConfig};
use super::optim::Adam;
use super::tensor::Element;

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: SenetConfig,
    pub step: u64,
    pub tensors: IndexMap<String, Vec<f32>>,
}

impl Checkpoint {
    /// Capture the full training state. Pass the optimizer to make the
    /// checkpoint resumable; omit it for inference-only snapshots.
    pub fn capture<T: Element>(net: &mut Senet<T>, opt: Option<&Adam>) -> Self {
        let mut tensors = IndexMap::new();
        net.visit_params(&mut |name, data, _, _| {
            tensors.insert(name, data.iter().map(|v| v.to64() as f32).collect());
        });
        net.visit_buffers(&mut |name, data| {
            tensors.insert(name, data.iter().map(|v| v.to64() as f32).collect());
        });
        let mut step = 0;
        if let Some(opt) = opt {
            step = opt.step_count();
            for (name, m, v) in opt.moments() {
                tensors.insert(format!("adam.m.{name}"), m.iter().map(|&x| x as f32).collect());
                tensors.insert(format!("adam.v.{name}"), v.iter().map(|&x| x as f32).collect());
            }
        }
        Checkpoint {
            config: net.config.clone(),
            step,
            tensors,
        }
    }

    /// Build a network and load every parameter and buffer from the tensor
    /// table. Fails, without partial effects visible to the caller, on the
    /// first missing or wrongly-sized tensor.
    pub fn build_net<T: Element>(&self) -> Result<Senet<T>> {
        let mut net = Senet::new(self.config.clone(), 0)?;
        let mut problem: Option<String> = None;
        let mut restore = |name: String, data: &mut Vec<T>| {
            if problem.is_some() {
                return;
            }
            match self.tensors.get(&name) {
                None => problem = Some(format!("checkpoint is missing tensor `{name}`")),
                Some(src) if src.len() != data.len() => {
                    problem = Some(format!(
                        "checkpoint tensor `{name}` has {} values, expected {}",
                        src.len(),
                        data.len()
                    ));
                }
                Some(src) => {
                    for (d, &s) in data.iter_mut().zip(src) {
                        *d = T::from64(s as f64);
                    }
                }
            }
        };
        net.visit_params(&mut |name, data, _, _| restore(name, data));
        net.visit_buffers(&mut |name, data| restore(name, data));
        if let Some(reason) = problem {
            return Err(Error::Config(reason));
        }
        Ok(net)
    }

    /// Restore Adam moments (if present) into an optimizer.
    pub fn restore_optimizer(&self, opt: &mut Adam) {
        opt.set_step_count(self.step);
        for (name, values) in &self.tensors {
            if let Some(base) = name.strip_prefix("adam.m.") {
                if let Some(v) = self.tensors.get(&format!("adam.v.{base}")) {
                    opt.set_moments(
                        base,
                        values.iter().map(|&x| x as f64).collect(),
                        v.iter().map(|&x| x as f64).collect(),
                    );
                }
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let config_json =
        serde_json::to_vec(&ckpt.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    buf.extend_from_slice(&ckpt.step.to_le_bytes());
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, values) in &ckpt.tensors {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };
    let magic = cur.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint file"));
    }
    let version = u16::from_le_bytes(cur.bytes(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let config_len = u32::from_le_bytes(cur.bytes(4)?.try_into().unwrap()) as usize;
    let config: SenetConfig = serde_json::from_slice(cur.bytes(config_len)?)
        .map_err(|e| Error::format(path, format!("bad embedded config: {e}")))?;
    let step = u64::from_le_bytes(cur.bytes(8)?.try_into().unwrap());
    let count = u32::from_le_bytes(cur.bytes(4)?.try_into().unwrap()) as usize;
    let mut tensors = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.bytes(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.bytes(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let len = u32::from_le_bytes(cur.bytes(4)?.try_into().unwrap()) as usize;
        let raw = cur.bytes(len * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), values).is_some() {
            return Err(Error::format(path, format!("duplicate tensor `{name}`")));
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::format(path, "trailing bytes after tensor table"));
    }
    Ok(Checkpoint { config, step, tensors })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
