use std::collections::BTreeMap;
use std::path::Path;

use super::optim::OptimizerState;
use crate::binio::{Reader, Writer};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::glyph_data::{read_vocab, write_vocab, Vocab};
use crate::recognizer::{Architecture, Params, Recognizer};

const MAGIC: &[u8; 4] = b"SMCK";
const VERSION: u32 = 1;
const OP_LOAD: &str = "trainer::load_checkpoint";

/// Model parameters plus everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub arch: Architecture,
    /// Optimizer steps taken in the current training phase.
    pub step: u64,
    pub params: Params<f64>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn recognizer(&self) -> Recognizer<f64> {
        Recognizer {
            arch: self.arch,
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        write_vocab(&mut w, &self.vocab);
        for v in [
            self.arch.d_feat,
            self.arch.hidden,
            self.arch.embed,
            self.arch.classes,
            self.arch.max_len,
        ] {
            w.u32(v as u32);
        }
        w.u64(self.step);
        w.u32((self.params.len() + self.optimizer.tensors.len()) as u32);
        let all = self
            .params
            .iter()
            .chain(self.optimizer.tensors.iter());
        for (name, t) in all {
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
            w.u8(t.rank() as u8);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, OP_LOAD);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                op: OP_LOAD,
                offset: 0,
                detail: "bad magic, expected \"SMCK\"".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let vocab = read_vocab(&mut r)?;
        let mut dims = [0usize; 5];
        for (d, what) in dims
            .iter_mut()
            .zip(["d_feat", "hidden", "embed", "classes", "max_len"])
        {
            *d = r.u32(what)? as usize;
            if *d == 0 {
                return Err(r.error(format!("architecture field {what} is zero")));
            }
        }
        if dims[3] != vocab.classes() {
            return Err(r.error(format!(
                "class count {} does not match a vocabulary of {} characters",
                dims[3],
                vocab.num_chars()
            )));
        }
        let step = r.u64("step counter")?;
        let count = r.u32("tensor count")? as usize;
        let mut params = BTreeMap::new();
        let mut opt = BTreeMap::new();
        let mut prev = String::from("<none>");
        for i in 0..count {
            let missing = |e: Error| match e {
                Error::Format { offset, .. } => Error::Format {
                    op: OP_LOAD,
                    offset,
                    detail: format!("tensor #{i} of {count} is missing (after '{prev}')"),
                },
                other => other,
            };
            let len = r.u16("tensor name length").map_err(missing)? as usize;
            let raw = r.take(len, "tensor name").map_err(missing)?;
            let name = String::from_utf8(raw.to_vec())
                .map_err(|_| r.error(format!("tensor #{i} name is not UTF-8")))?;
            let truncated = |e: Error| match e {
                Error::Format { offset, detail, .. } => Error::Format {
                    op: OP_LOAD,
                    offset,
                    detail: format!("tensor '{name}' is incomplete: {detail}"),
                },
                other => other,
            };
            let rank = r.u8("tensor rank").map_err(truncated)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dimension").map_err(truncated)? as usize);
            }
            let numel: usize = shape.iter().product();
            if rank == 0 || numel == 0 {
                return Err(r.error(format!("tensor '{name}' has empty shape {shape:?}")));
            }
            let raw = r.take(numel * 8, "tensor values").map_err(truncated)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| r.error(e.to_string()))?;
            let dst = if name.starts_with("opt/") { &mut opt } else { &mut params };
            if dst.insert(name.clone(), t).is_some() {
                return Err(r.error(format!("duplicate tensor '{name}'")));
            }
            prev = name;
        }
        if !r.at_end() {
            return Err(r.error("trailing bytes after last tensor"));
        }
        let arch = Architecture {
            d_feat: dims[0],
            hidden: dims[1],
            embed: dims[2],
            classes: dims[3],
            max_len: dims[4],
            bidirectional: params.contains_key("enc_bwd.wx"),
        };
        let shape_err = |e: Error| Error::Format {
            op: OP_LOAD,
            offset: bytes.len() as u64,
            detail: format!("tensors do not match the architecture record: {e}"),
        };
        let params = Params::from_map(&arch, params).map_err(shape_err)?;
        let optimizer = OptimizerState::from_tensors(&params, opt).map_err(shape_err)?;
        Ok(Checkpoint {
            vocab,
            arch,
            step,
            params,
            optimizer,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_bytes()).map_err(Error::io("trainer::save_checkpoint", path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(OP_LOAD, path))?;
    Checkpoint::from_bytes(&bytes)
}
