//! Adam optimizer and the two-phase training loop: word embeddings frozen
//! for the first phase, everything trainable in the second. Per-epoch dev
//! metrics drive best-per-component checkpoint selection.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::ckpt::{save_model, Dtype};
use crate::embed::PAD;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metrics};
use crate::model::Model;
use crate::params::Params;
use crate::sql::{Example, TableSchema};
use crate::tensor::{Tape, Tensor};
use crate::TrainRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers align with the parameter
/// registry by index; frozen parameters (no gradient) are skipped whole.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &Params) -> Self {
        let m = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Adam { cfg, t: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. `grads[i] == None` leaves parameter
    /// `i` and its moments untouched.
    pub fn step(&mut self, params: &mut Params, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(grad) = &grads[i] else { continue };
            let p = params.get_mut(id);
            if grad.shape() != p.shape() {
                return Err(Error::dim(format!(
                    "gradient shape {:?} != parameter shape {:?}",
                    grad.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, g) in grad.data().iter().enumerate() {
                let g = g + self.cfg.weight_decay * p.data()[j];
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data_mut()[j] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Training-run configuration; JSON files mirror these fields. Omitted
/// fields fall back to the paper-scale defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs with the word embedding frozen (char embedding trainable).
    pub epochs_phase1: usize,
    /// Epochs with every embedding trainable.
    pub epochs_phase2: usize,
    pub seed: u64,
    pub model: crate::model::ModelConfig,
    pub train_data: PathBuf,
    pub dev_data: Option<PathBuf>,
    pub tables: PathBuf,
    pub word_vectors: Option<PathBuf>,
    pub char_vectors: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            weight_decay: 0.0,
            batch_size: 64,
            epochs_phase1: 100,
            epochs_phase2: 100,
            seed: 0,
            model: crate::model::ModelConfig::default(),
            train_data: PathBuf::new(),
            dev_data: None,
            tables: PathBuf::new(),
            word_vectors: None,
            char_vectors: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if self.gamma() <= 0.0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        self.model.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    fn gamma(&self) -> f64 {
        self.model.gamma
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Per-epoch record handed to the progress callback.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: u8,
    pub train_loss: f64,
    /// Gold condition values that failed question-span alignment.
    pub unaligned_values: usize,
    pub dev: Option<Metrics>,
}

/// Outcome of a full run.
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub best_lf: Option<f64>,
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    cfg: TrainConfig,
    rng: TrainRng,
    best: BTreeMap<&'static str, f64>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Adam::new(cfg.adam(), &model.params);
        let rng = TrainRng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            model,
            optimizer,
            cfg,
            rng,
            best: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One pass over the training set. Returns (mean example loss,
    /// unaligned-value count).
    pub fn train_epoch(
        &mut self,
        examples: &[Example],
        tables: &BTreeMap<String, TableSchema>,
        freeze_word_embedding: bool,
    ) -> Result<(f64, usize)> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        let mut unaligned = 0;
        for batch in order.chunks(self.cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = self
                .model
                .params
                .bind(&mut tape, |name| freeze_word_embedding && name == "embed.word");
            let mut parts = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &examples[i];
                let table = tables
                    .get(&ex.table_id)
                    .ok_or_else(|| Error::Schema(format!("unknown table id {:?}", ex.table_id)))?;
                let prep = self.model.prepare(&ex.tokens, table);
                let (loss, miss) =
                    self.model
                        .example_loss(&mut tape, &bound, &prep, &ex.gold, Some(&mut self.rng))?;
                unaligned += miss;
                parts.push(loss);
            }
            let total = crate::heads::total_loss(&mut tape, &parts)?;
            let mean = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_val = tape.value(mean).item()?;
            if !loss_val.is_finite() {
                let dump: Vec<String> = batch
                    .iter()
                    .map(|&i| format!("  [{i}] {:?}", examples[i].question))
                    .collect();
                return Err(Error::Contract(format!(
                    "non-finite loss {loss_val} on batch:\n{}",
                    dump.join("\n")
                )));
            }
            loss_sum += loss_val * batch.len() as f64;
            tape.backward(mean)?;

            let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.model.params.len());
            for (id, name, _) in self.model.params.iter() {
                let mut g = tape.grad(bound.var(id));
                // padding rows stay pinned at zero
                if let Some(g) = g.as_mut() {
                    if name == "embed.word" || name == "embed.char" {
                        let cols = g.shape()[1];
                        for v in &mut g.data_mut()[PAD * cols..(PAD + 1) * cols] {
                            *v = 0.0;
                        }
                    }
                }
                grads.push(g);
            }
            drop(tape);
            self.optimizer.step(&mut self.model.params, &grads)?;
        }
        Ok((loss_sum / examples.len() as f64, unaligned))
    }

    fn maybe_checkpoint(&self, key: &'static str, value: f64, sub: &str) -> Result<bool> {
        let improved = self.best.get(key).map_or(true, |b| value > *b);
        if improved {
            if let Some(dir) = &self.cfg.checkpoint_dir {
                save_model(&self.model, &dir.join(sub), Dtype::F64)?;
            }
        }
        Ok(improved)
    }

    /// Full two-phase run with per-epoch dev evaluation and best-per-
    /// component checkpointing.
    pub fn run(
        &mut self,
        train: &[Example],
        dev: Option<&[Example]>,
        tables: &BTreeMap<String, TableSchema>,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::contract("empty training set"));
        }
        let total = self.cfg.total_epochs();
        let mut final_loss = f64::NAN;
        for epoch in 0..total {
            let phase1 = epoch < self.cfg.epochs_phase1;
            let (loss, unaligned) = self.train_epoch(train, tables, phase1)?;
            final_loss = loss;

            let dev_metrics = match dev {
                Some(d) => Some(evaluate(&self.model, d, tables)?.metrics()),
                None => None,
            };
            if let Some(m) = &dev_metrics {
                for (key, value, sub) in [
                    ("agg", m.acc_agg, "best_agg"),
                    ("sel", m.acc_sel, "best_sel"),
                    ("where", m.acc_where, "best_where"),
                    ("lf", m.lf_match, "best_overall"),
                ] {
                    if self.maybe_checkpoint(key, value, sub)? {
                        self.best.insert(key, value);
                    }
                }
            }
            if let Some(dir) = &self.cfg.checkpoint_dir {
                save_model(&self.model, &dir.join("last"), Dtype::F64)?;
            }
            on_epoch(&EpochStats {
                epoch,
                phase: if phase1 { 1 } else { 2 },
                train_loss: loss,
                unaligned_values: unaligned,
                dev: dev_metrics,
            });
        }
        Ok(TrainOutcome {
            epochs_run: total,
            final_train_loss: final_loss,
            best_lf: self.best.get("lf").copied(),
        })
    }
}
