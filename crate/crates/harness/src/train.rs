//! Mini-batch training with identity-balanced batches.

use std::sync::Arc;

use loga_core::model::forward;
use loga_core::objectives::batch_loss;
use loga_core::{AssemblyStrategy, Clip, LogaModel, Mode, Session, StrategyRegistry};
use loga_datagen::render::derive_seed;
use loga_datagen::{Dataset, PkSampler, SamplerState, Split};
use loga_tensor::Element;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::optim::AdamW;

/// Sub-seed paths of the single training seed.
const MODEL_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const TRIPLET_STREAM: u64 = 2;

/// One optimizer step, emitted as a JSON line by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub id_loss: f64,
    pub triplet_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_id_loss: f64,
    pub mean_triplet_loss: f64,
    pub mean_total: f64,
}

pub fn rng_state(rng: &ChaCha8Rng) -> SamplerState {
    SamplerState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn rng_from_state(state: SamplerState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}

pub fn strategy(name: &str) -> Result<Arc<dyn AssemblyStrategy<f32>>> {
    Ok(StrategyRegistry::with_defaults().get(name)?)
}

/// Optimizer steps per epoch: enough batches to cover every training clip
/// once in expectation.
pub fn steps_per_epoch(train_clips: usize, config: &TrainConfig) -> usize {
    train_clips.div_ceil(config.p * config.k).max(1)
}

pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub model: LogaModel<f32>,
    pub optimizer: AdamW<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    strategy: Arc<dyn AssemblyStrategy<f32>>,
    sampler: PkSampler,
    triplet_rng: ChaCha8Rng,
    clips: Vec<&'d Clip>,
    labels: Vec<usize>,
}

impl<'d> Trainer<'d> {
    /// Fresh model and optimizer, all randomness derived from `config.seed`.
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        config.validate()?;
        let classes = dataset.train_classes();
        let model_config = config.model_config(dataset.manifest(), classes.len().max(1));
        let model = LogaModel::new(model_config, derive_seed(config.seed, &[MODEL_STREAM]))?;
        let triplet_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TRIPLET_STREAM]));
        Self::assemble(config, dataset, model, AdamW::new(0.0), triplet_rng, None)
    }

    /// Continues from a checkpoint with its optimizer and random streams.
    pub fn resume(checkpoint: Checkpoint, dataset: &'d Dataset) -> Result<Self> {
        let model = LogaModel::from_parts(checkpoint.model_config, checkpoint.params)?;
        let triplet_rng = match checkpoint.triplet_rng {
            Some(s) => rng_from_state(s),
            None => ChaCha8Rng::seed_from_u64(derive_seed(checkpoint.train.seed, &[TRIPLET_STREAM])),
        };
        let mut t = Self::assemble(
            checkpoint.train,
            dataset,
            model,
            checkpoint.optimizer,
            triplet_rng,
            checkpoint.sampler,
        )?;
        t.epoch = checkpoint.epoch;
        t.step = checkpoint.step;
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &'d Dataset,
        model: LogaModel<f32>,
        mut optimizer: AdamW<f32>,
        triplet_rng: ChaCha8Rng,
        sampler_state: Option<SamplerState>,
    ) -> Result<Self> {
        let classes = dataset.train_classes();
        let clips = dataset.split(Split::Train);
        let labels: Vec<usize> = clips.iter().map(|c| classes[&c.identity]).collect();
        if model.config.num_classes != classes.len() {
            return Err(HarnessError::Config(format!(
                "model has {} classes, dataset has {} training identities",
                model.config.num_classes,
                classes.len()
            )));
        }
        let mut sampler = PkSampler::new(&labels, config.p, config.k, derive_seed(config.seed, &[SAMPLER_STREAM]))?;
        if let Some(s) = sampler_state {
            sampler.restore(s);
        }
        optimizer.weight_decay = config.weight_decay;
        Ok(Self {
            strategy: strategy(&config.strategy)?,
            config,
            model,
            optimizer,
            epoch: 0,
            step: 0,
            sampler,
            triplet_rng,
            clips,
            labels,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        steps_per_epoch(self.clips.len(), &self.config)
    }

    fn out_of_steps(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.out_of_steps()
    }

    /// Samples a batch, computes the losses and applies one update.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let batch = self.sampler.next_batch();
        let clips: Vec<&Clip> = batch.iter().map(|&i| self.clips[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        let lr = self.config.lr_at(self.epoch);

        let mut s = Session::new(&mut self.model.params, Mode::Train);
        let assembled = forward(&mut s, &self.model.config, self.strategy.as_ref(), &clips)?;
        let terms = batch_loss(
            &mut s,
            assembled.descriptors,
            &labels,
            self.config.margin,
            self.config.mining,
            &mut self.triplet_rng,
        )?;
        let total = s.value(terms.total).item().widen();
        if !(total.is_finite() && terms.id_loss.is_finite() && terms.triplet_loss.is_finite()) {
            let ids: Vec<usize> = clips.iter().map(|c| c.id).collect();
            log::error!(
                "non-finite loss at epoch {} step {}: id {} triplet {} total {}, clips {:?}",
                self.epoch,
                self.step,
                terms.id_loss,
                terms.triplet_loss,
                total,
                ids
            );
            return Err(HarnessError::NonFinite {
                epoch: self.epoch,
                step: self.step,
                batch: self.step,
                clips: ids,
            });
        }
        s.graph.backward(terms.total).map_err(loga_core::CoreError::from)?;
        let grads = s.gradients();
        drop(s);
        self.optimizer.step(&mut self.model.params, &grads, lr);

        let log = StepLog {
            epoch: self.epoch,
            step: self.step,
            lr,
            id_loss: terms.id_loss,
            triplet_loss: terms.triplet_loss,
            total,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs one epoch, stopping early if `max_steps` is reached.
    pub fn run_epoch(&mut self, on_step: &mut dyn FnMut(&StepLog)) -> Result<EpochLog> {
        let (mut id, mut trip, mut total, mut n) = (0.0, 0.0, 0.0, 0);
        for _ in 0..self.steps_per_epoch() {
            if self.out_of_steps() {
                break;
            }
            let log = self.train_step()?;
            on_step(&log);
            id += log.id_loss;
            trip += log.triplet_loss;
            total += log.total;
            n += 1;
        }
        let d = n.max(1) as f64;
        let log = EpochLog {
            epoch: self.epoch,
            steps: n,
            mean_id_loss: id / d,
            mean_triplet_loss: trip / d,
            mean_total: total / d,
        };
        self.epoch += 1;
        log::info!(
            "epoch {} ({} steps): id {:.4} triplet {:.4} total {:.4}",
            log.epoch,
            log.steps,
            log.mean_id_loss,
            log.mean_triplet_loss,
            log.mean_total
        );
        Ok(log)
    }

    /// Trains until `config.epochs` (or `max_steps`). `on_epoch` runs after
    /// every epoch, e.g. to write periodic checkpoints.
    pub fn run(
        &mut self,
        on_step: &mut dyn FnMut(&StepLog),
        on_epoch: &mut dyn FnMut(&Trainer<'d>, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.finished() {
            let log = self.run_epoch(on_step)?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train: self.config.clone(),
            model_config: self.model.config.clone(),
            epoch: self.epoch,
            step: self.step,
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
            sampler: Some(self.sampler.state()),
            triplet_rng: Some(rng_state(&self.triplet_rng)),
        }
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

/// Trains from scratch without intermediate checkpoints.
pub fn train(config: TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, dataset)?;
    let mut steps = Vec::new();
    let epochs = trainer.run(&mut |s| steps.push(s.clone()), &mut |_, _| Ok(()))?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        steps,
        epochs,
    })
}
