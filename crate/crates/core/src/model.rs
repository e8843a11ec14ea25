//! Full forward pass from clips to descriptors.

use loga_tensor::{BatchNormMode, Element, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::Clip;
use crate::config::ModelConfig;
use crate::encoder;
use crate::error::Result;
use crate::params::ParameterStore;
use crate::session::Session;
use crate::strategy::{Assembled, AssemblyStrategy, BatchFeatures};

/// Clips per graph when describing without gradients.
const EVAL_CHUNK: usize = 32;

/// Encodes every frame of `clips` and prepares the raw-pixel inputs of the
/// local branch.
pub fn batch_features<T: Element>(
    s: &mut Session<'_, T>,
    clips: &[&Clip],
    config: &ModelConfig,
) -> Result<BatchFeatures> {
    let frames = encoder::frames_tensor(clips, config)?;
    let frames = s.constant(frames);
    let embeddings = encoder::encode(s, frames)?;
    let laq_inputs = clips
        .iter()
        .map(|c| Ok(s.constant(encoder::flatten_for_laq(c)?)))
        .collect::<Result<_>>()?;
    Ok(BatchFeatures {
        embeddings,
        laq_inputs,
        clip_len: config.clip_len,
        attention_scale: config.attention_scale,
    })
}

/// Encodes and assembles a batch inside an existing session.
pub fn forward<T: Element>(
    s: &mut Session<'_, T>,
    config: &ModelConfig,
    strategy: &dyn AssemblyStrategy<T>,
    clips: &[&Clip],
) -> Result<Assembled> {
    let features = batch_features(s, clips, config)?;
    strategy.assemble(s, &features)
}

/// Descriptor and intermediate scores of one clip. Scores a strategy does
/// not compute are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipOutput<T> {
    pub descriptor: Vec<T>,
    pub w_local: Option<Vec<T>>,
    pub w_global: Option<Vec<T>>,
    pub prototype: Option<Vec<T>>,
    pub p_hat: Option<Vec<T>>,
}

/// Model configuration plus its parameters.
#[derive(Debug, Clone)]
pub struct LogaModel<T: Element> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
}

impl<T: Element> LogaModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParameterStore::init(&config, &mut rng)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params })
    }

    /// Eval-mode descriptors for `clips`, in order.
    pub fn describe(
        &mut self,
        strategy: &dyn AssemblyStrategy<T>,
        clips: &[&Clip],
    ) -> Result<Vec<ClipOutput<T>>> {
        let mut out = Vec::with_capacity(clips.len());
        for chunk in clips.chunks(EVAL_CHUNK) {
            let mut s = Session::new(&mut self.params, BatchNormMode::Eval);
            let assembled = forward(&mut s, &self.config, strategy, chunk)?;
            let desc = s.value(assembled.descriptors);
            let (_, b) = desc.dims2("describe")?;
            let read = |v: Option<Var>| v.map(|v| s.value(v).data().to_vec());
            for (j, trace) in assembled.traces.iter().enumerate() {
                out.push(ClipOutput {
                    descriptor: desc.column(j),
                    w_local: read(trace.w_local),
                    w_global: read(trace.w_global),
                    prototype: read(trace.prototype),
                    p_hat: read(trace.p_hat),
                });
            }
            debug_assert_eq!(b, chunk.len());
        }
        Ok(out)
    }
}
