//! Whole-model gradient check: analytic gradients of the training loss
//! against central finite differences, per parameter tensor.

use loga_tensor::check::{relative_error, FD_STEP};
use loga_tensor::{FaultSite, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{Clip, Frame, FrameFlag};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::forward;
use crate::objectives::{batch_loss, Mining};
use crate::params::ParameterStore;
use crate::session::Session;
use crate::strategy::StrategyRegistry;
use crate::Mode;

/// Fails a group above this relative error.
pub const FAIL_THRESHOLD: f64 = 1e-4;

/// Entries above this error at the base step are retried with smaller steps.
pub const TARGET: f64 = 1e-6;

/// Step divisors tried in order. A probe that straddles a ReLU kink gives a
/// wrong central difference; a smaller step usually stays on one side.
const REFINEMENTS: [f64; 3] = [1.0, 10.0, 100.0];

/// Small enough to finite-difference every scalar in seconds.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        clip_len: 4,
        height: 8,
        width: 4,
        channels: 3,
        part_size: 4,
        feature_dim: 8,
        num_classes: 3,
        attention_scale: false,
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub config: ModelConfig,
    pub seed: u64,
    pub strategy: String,
    pub mining: Mining,
    pub margin: f64,
    pub clips_per_identity: usize,
    pub step: f64,
    /// Corrupts one backward rule, to confirm the check can fail.
    pub fault: Option<FaultSite>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            config: tiny_config(),
            seed: 0,
            strategy: StrategyRegistry::<f64>::DEFAULT.to_string(),
            mining: Mining::Random,
            margin: 0.3,
            clips_per_identity: 2,
            step: FD_STEP,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    /// Entries that needed a smaller step to agree.
    pub refined: usize,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < FAIL_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub loss: f64,
    pub groups: Vec<GroupResult>,
}

impl GradReport {
    pub fn failures(&self) -> Vec<&GroupResult> {
        self.groups.iter().filter(|g| !g.passed()).collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }
}

fn random_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, per_identity: usize) -> Vec<Clip> {
    let n = cfg.channels * cfg.height * cfg.width;
    (0..cfg.num_classes * per_identity)
        .map(|id| Clip {
            id,
            tracklet: id,
            identity: id / per_identity,
            camera: 0,
            frames: (0..cfg.clip_len)
                .map(|_| Frame::new(cfg.height, cfg.width, cfg.channels, (0..n).map(|_| rng.gen()).collect()))
                .collect(),
            flags: vec![FrameFlag::Clean; cfg.clip_len],
        })
        .collect()
}

/// Runs the check in float64 on a seeded model with a randomized fusion
/// layer and a seeded batch of `num_classes × clips_per_identity` clips.
pub fn gradcheck(opts: &GradCheckOptions) -> Result<GradReport> {
    let cfg = &opts.config;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParameterStore::<f64>::init(cfg, &mut rng)?;
    store.randomize_fusion(&mut rng)?;
    let clips = random_batch(&mut rng, cfg, opts.clips_per_identity);
    let refs: Vec<&Clip> = clips.iter().collect();
    let labels: Vec<usize> = clips.iter().map(|c| c.identity).collect();
    let registry = StrategyRegistry::<f64>::with_defaults();
    let strategy = registry.get(&opts.strategy)?;
    let sample_seed = rng.gen::<u64>();

    let loss_of = |store: &ParameterStore<f64>, fault: Option<FaultSite>, grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut scratch = store.clone();
        let mut s = Session::new(&mut scratch, Mode::Train).with_trainable(grads);
        s.inject_fault(fault);
        let out = forward(&mut s, cfg, strategy.as_ref(), &refs)?;
        let mut sampler = ChaCha8Rng::seed_from_u64(sample_seed);
        let terms = batch_loss(&mut s, out.descriptors, &labels, opts.margin, opts.mining, &mut sampler)?;
        let loss = s.value(terms.total).item();
        if !grads {
            return Ok((loss, Vec::new()));
        }
        s.graph.backward(terms.total)?;
        Ok((loss, s.gradients().into_values().collect()))
    };

    let (loss, analytic) = loss_of(&store, opts.fault, true)?;
    let names = store.names();
    let mut groups = Vec::with_capacity(names.len());
    for (name, grad) in names.iter().zip(&analytic) {
        let mut worst = 0.0f64;
        let mut refined = 0;
        for i in 0..grad.len() {
            let original = store.get(name)?.data()[i];
            let mut best = f64::INFINITY;
            for (k, div) in REFINEMENTS.iter().enumerate() {
                let h = opts.step / div;
                store.get_mut(name)?.data_mut()[i] = original + h;
                let plus = loss_of(&store, None, false)?.0;
                store.get_mut(name)?.data_mut()[i] = original - h;
                let minus = loss_of(&store, None, false)?.0;
                store.get_mut(name)?.data_mut()[i] = original;
                best = best.min(relative_error(grad.data()[i], (plus - minus) / (2.0 * h)));
                if best <= TARGET {
                    refined += usize::from(k > 0);
                    break;
                }
            }
            worst = worst.max(best);
        }
        groups.push(GroupResult {
            name: name.clone(),
            entries: grad.len(),
            max_relative_error: worst,
            max_abs_gradient: grad.data().iter().fold(0.0, |m, v| m.max(v.abs())),
            refined,
        });
    }
    Ok(GradReport { loss, groups })
}
