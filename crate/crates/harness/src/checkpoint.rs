//! Binary checkpoint files.
//!
//! All integers are little-endian.
//!
//! ```text
//! "LOGA"  u32 version
//! u32 meta_len, meta (TOML: epoch, step, optimizer steps, train and model config)
//! u32 count, count × tensor record        parameters and running statistics
//! u32 count, count × tensor record        optimizer moments
//! u32 count, count × rng record           sampler and triplet-mining streams
//! u32 crc32 of every preceding byte
//!
//! tensor record: u32 name_len, name, u8 dtype (0 f32, 1 f64), u32 rank,
//!                rank × u64 extent, payload
//! rng record:    u32 name_len, name, [u8; 32] seed, u64 stream, u128 word position
//! ```
//!
//! Running statistics of layer `X` are stored as `X.running_mean` and
//! `X.running_var`; optimizer moments as `adam.m.<param>` and `adam.v.<param>`.

use std::path::Path;

use indexmap::IndexMap;
use loga_core::{ModelConfig, ParameterStore};
use loga_datagen::SamplerState;
use loga_tensor::{BnStats, DType, Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::optim::AdamW;

pub const MAGIC: &[u8; 4] = b"LOGA";
pub const VERSION: u32 = 1;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";
const SAMPLER_RNG: &str = "sampler";
const TRIPLET_RNG: &str = "triplet";

/// Everything needed to evaluate a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model_config: ModelConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub params: ParameterStore<f32>,
    pub optimizer: AdamW<f32>,
    pub sampler: Option<SamplerState>,
    pub triplet_rng: Option<SamplerState>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    step: usize,
    optimizer_steps: u64,
    model: ModelConfig,
    train: TrainConfig,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
}

fn put_tensor<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_name(out, name);
    out.push(T::DTYPE.tag());
    put_u32(out, t.rank());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn put_rng(out: &mut Vec<u8>, name: &str, s: &SamplerState) {
    put_name(out, name);
    out.extend_from_slice(&s.seed);
    out.extend_from_slice(&s.stream.to_le_bytes());
    out.extend_from_slice(&s.word_pos.to_le_bytes());
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(bad(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32("name length")?;
        String::from_utf8(self.take(n, "name")?.to_vec()).map_err(|_| bad("record name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.name()?;
        let tag = self.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| bad(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = self.u32("rank")?;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(self.array("extent")?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| bad(format!("{name}: extents overflow")))?;
        let payload = self.take(
            len.checked_mul(dtype.size()).ok_or_else(|| bad(format!("{name}: payload overflows")))?,
            &name,
        )?;
        let data: Vec<f32> = match dtype {
            DType::F32 => payload.chunks_exact(4).map(f32::read_le).collect(),
            DType::F64 => payload.chunks_exact(8).map(|b| f64::read_le(b) as f32).collect(),
        };
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        Ok((name, t))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor<f32>)>> {
        let n = self.u32("record count")?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = toml::to_string(&Meta {
            epoch: self.epoch,
            step: self.step,
            optimizer_steps: self.optimizer.t,
            model: self.model_config.clone(),
            train: self.train.clone(),
        })
        .expect("metadata serializes");
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());

        let running: Vec<_> = self.params.running_stats().collect();
        put_u32(&mut out, self.params.params().count() + 2 * running.len());
        for (name, t) in self.params.params() {
            put_tensor(&mut out, name, t);
        }
        for (layer, stats) in running {
            put_tensor(&mut out, &format!("{layer}{RUNNING_MEAN}"), &stats.mean);
            put_tensor(&mut out, &format!("{layer}{RUNNING_VAR}"), &stats.var);
        }

        put_u32(&mut out, self.optimizer.m.len() + self.optimizer.v.len());
        for (name, t) in &self.optimizer.m {
            put_tensor(&mut out, &format!("{MOMENT_M}{name}"), t);
        }
        for (name, t) in &self.optimizer.v {
            put_tensor(&mut out, &format!("{MOMENT_V}{name}"), t);
        }

        let rngs: Vec<_> = [(SAMPLER_RNG, &self.sampler), (TRIPLET_RNG, &self.triplet_rng)]
            .into_iter()
            .filter_map(|(n, s)| s.as_ref().map(|s| (n, s)))
            .collect();
        put_u32(&mut out, rngs.len());
        for (name, s) in rngs {
            put_rng(&mut out, name, s);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(HarnessError::CheckpointVersion {
                found: version,
                supported: VERSION,
            });
        }
        if bytes.len() < 12 {
            return Err(bad("truncated checkpoint"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(bad("checksum mismatch"));
        }
        let mut c = Cursor { bytes: body, pos: 8 };

        let meta_len = c.u32("metadata length")?;
        let meta = std::str::from_utf8(c.take(meta_len, "metadata")?).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta: Meta = toml::from_str(meta).map_err(|e| bad(format!("metadata: {e}")))?;

        let mut params = ParameterStore::new();
        let mut running: IndexMap<String, (Option<Tensor<f32>>, Option<Tensor<f32>>)> = IndexMap::new();
        for (name, t) in c.tensors()? {
            if let Some(layer) = name.strip_suffix(RUNNING_MEAN) {
                running.entry(layer.to_string()).or_default().0 = Some(t);
            } else if let Some(layer) = name.strip_suffix(RUNNING_VAR) {
                running.entry(layer.to_string()).or_default().1 = Some(t);
            } else {
                params.insert(&name, t);
            }
        }
        for (layer, stats) in running {
            match stats {
                (Some(mean), Some(var)) => params.insert_running(&layer, BnStats { mean, var }),
                _ => return Err(bad(format!("{layer}: incomplete running statistics"))),
            }
        }

        let mut optimizer = AdamW::new(meta.train.weight_decay);
        optimizer.t = meta.optimizer_steps;
        for (name, t) in c.tensors()? {
            if let Some(p) = name.strip_prefix(MOMENT_M) {
                optimizer.m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(MOMENT_V) {
                optimizer.v.insert(p.to_string(), t);
            } else {
                return Err(bad(format!("unexpected optimizer record `{name}`")));
            }
        }

        let (mut sampler, mut triplet_rng) = (None, None);
        for _ in 0..c.u32("rng count")? {
            let name = c.name()?;
            let state = SamplerState {
                seed: c.array("rng seed")?,
                stream: u64::from_le_bytes(c.array("rng stream")?),
                word_pos: u128::from_le_bytes(c.array("rng position")?),
            };
            match name.as_str() {
                SAMPLER_RNG => sampler = Some(state),
                TRIPLET_RNG => triplet_rng = Some(state),
                other => return Err(bad(format!("unexpected rng record `{other}`"))),
            }
        }
        if c.pos != body.len() {
            return Err(bad(format!("{} unexpected trailing bytes", body.len() - c.pos)));
        }
        Ok(Self {
            train: meta.train,
            model_config: meta.model,
            epoch: meta.epoch,
            step: meta.step,
            params,
            optimizer,
            sampler,
            triplet_rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(HarnessError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
        Self::from_bytes(&bytes)
    }
}
