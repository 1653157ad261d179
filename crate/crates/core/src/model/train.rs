//! Training loop: Adam over the trainable partition, seeded batching,
//! interval checkpoints and best-on-validation selection.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{mask_targets, multi_tag_target, MaskTargets};
use super::{Prepared, RunMetadata, UnifiedModel};
use crate::config::TagTargetMode;
use crate::corpus::{Necessity, Request};
use crate::dfg::RequestGraph;
use crate::error::{Error, Result};

/// A prepared request with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub prepared: Prepared,
    /// Label indices of the truth tags.
    pub tags: Vec<usize>,
    pub necessity: Necessity,
}

impl Example {
    pub fn id(&self) -> u64 {
        self.prepared.input.request_id
    }
}

/// Prepare requests for training or evaluation. Tags outside the label
/// space are dropped; a request left without tags is skipped.
pub fn make_examples(model: &UnifiedModel, requests: &[Request], graphs: &HashMap<u64, RequestGraph>) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(requests.len());
    for r in requests {
        let tags: Vec<usize> = r.tags.iter().filter_map(|t| model.labels.index_of(t)).collect();
        if tags.is_empty() {
            log::warn!("request {} has no tag in the label space; skipped", r.id);
            continue;
        }
        out.push(Example { prepared: model.prepare(r, graphs.get(&r.id))?, tags, necessity: r.necessity });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub losses: Vec<f64>,
    /// Validation loss after each epoch.
    pub val_losses: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub best_step: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Where training writes; without an output directory nothing touches disk.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Metadata stamped into every checkpoint; step and val loss are filled in.
    pub meta: Option<RunMetadata>,
}

pub const BEST_DIR: &str = "best";
pub const LOG_FILE: &str = "train_log.jsonl";

/// One logical optimization sequence over a fixed training set.
pub struct Trainer<'m> {
    model: &'m UnifiedModel,
    opt: AdamW,
    rng: ChaCha8Rng,
    mode: TagTargetMode,
    /// Tag drawn once per training example, used in fixed mode.
    fixed: Vec<usize>,
    step: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m UnifiedModel, train: &[Example]) -> Result<Self> {
        let cfg = &model.config.model;
        let params = ParamsAdamW { lr: cfg.lr, weight_decay: 0.0, ..Default::default() };
        let opt = AdamW::new(model.store.trainable_vars(), params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fixed = train.iter().map(|e| e.tags[rng.random_range(0..e.tags.len())]).collect();
        Ok(Self { model, opt, rng, mode: cfg.tag_target, fixed, step: 0 })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Label index drawn for each training example, used in fixed mode.
    pub fn fixed_targets(&self) -> &[usize] {
        &self.fixed
    }

    pub fn learning_rate(&self) -> f64 {
        self.opt.learning_rate()
    }

    /// Targets of one visit to each indexed example.
    pub fn targets(&mut self, train: &[Example], idx: &[usize]) -> Vec<MaskTargets> {
        let n_topic = self.model.template.n_topic_masks();
        idx.iter()
            .map(|&i| {
                let ex = &train[i];
                let weights = multi_tag_target(&ex.tags, self.mode, Some(self.fixed[i]), &mut self.rng);
                mask_targets(&weights, ex.necessity, &self.model.verbalizer, n_topic)
            })
            .collect()
    }

    /// Loss of a batch of training examples under freshly drawn targets.
    pub fn batch_loss(&mut self, train: &[Example], idx: &[usize]) -> Result<Tensor> {
        let targets = self.targets(train, idx);
        let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        batch_loss(self.model, &batch, &targets)
    }

    /// Gradients with frozen parameters removed, so the optimizer never sees them.
    pub fn gradients(&self, loss: &Tensor) -> Result<GradStore> {
        let mut grads = loss.backward()?;
        for (_, p) in self.model.store.iter().filter(|(_, p)| !p.trainable) {
            grads.remove(p.var.as_tensor());
        }
        for (_, p) in self.model.encoder.params().iter() {
            grads.remove(p.var.as_tensor());
        }
        Ok(grads)
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self, train: &[Example], idx: &[usize]) -> Result<f64> {
        let loss = self.batch_loss(train, idx)?;
        let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, batch_ids: idx.iter().map(|&i| train[i].id()).collect() });
        }
        let grads = self.gradients(&loss)?;
        self.opt.step(&grads)?;
        self.step += 1;
        Ok(value)
    }
}

/// Loss of a batch under explicit targets.
pub fn batch_loss(model: &UnifiedModel, batch: &[&Example], targets: &[MaskTargets]) -> Result<Tensor> {
    let prepared: Vec<&Prepared> = batch.iter().map(|e| &e.prepared).collect();
    let out = model.forward(&prepared)?;
    let necessity: Vec<Necessity> = batch.iter().map(|e| e.necessity).collect();
    let tags: Vec<Vec<usize>> = batch.iter().map(|e| e.tags.clone()).collect();
    model.loss(&out, targets, &necessity, &tags)
}

/// Mean validation loss with soft targets, which makes it deterministic.
pub fn validation_loss(model: &UnifiedModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let n_topic = model.template.n_topic_masks();
    let mut total = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in examples.chunks(model.config.model.batch_size.max(1)) {
        let batch: Vec<&Example> = chunk.iter().collect();
        let targets: Vec<MaskTargets> = chunk
            .iter()
            .map(|e| {
                let w = multi_tag_target(&e.tags, TagTargetMode::Soft, None, &mut rng);
                mask_targets(&w, e.necessity, &model.verbalizer, n_topic)
            })
            .collect();
        let loss = batch_loss(model, &batch, &targets)?;
        total += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn save(model: &UnifiedModel, dir: &Path, opts: &TrainOptions, step: usize, val: Option<f64>) -> Result<()> {
    let mut meta = opts.meta.clone().unwrap_or_else(|| default_meta(model));
    meta.step = step;
    meta.val_loss = val;
    model.save_checkpoint(dir, &meta)
}

pub fn default_meta(model: &UnifiedModel) -> RunMetadata {
    let c = &model.config;
    RunMetadata {
        seed: c.model.seed,
        necessity_rule: c.corpus.necessity_rule.to_string(),
        manifest_hash: String::new(),
        config_hash: c.model_hash(),
        ablation: model.spec,
        backbone: c.model.backbone.clone(),
        code_encoder: c.model.code_encoder.clone(),
        adapter: model.has_adapter(),
        step: 0,
        val_loss: None,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Run the configured epochs. With an output directory, writes the JSONL
/// log, `checkpoints/step-N` every interval and `best/` whenever the
/// validation loss improves (the last epoch when there is no validation set).
pub fn train(model: &UnifiedModel, train: &[Example], val: &[Example], opts: &TrainOptions) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let cfg = model.config.model.clone();
    let mut trainer = Trainer::new(model, train)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(cfg.batch_size) {
            let loss = trainer.step(train, idx)?;
            report.losses.push(loss);
            let step = trainer.step_count();
            if let Some((file, path)) = log.as_mut() {
                let rec = LogRecord { step, epoch, loss, lr: trainer.learning_rate(), timestamp: now() };
                serde_json::to_writer(&mut *file, &rec)?;
                file.write_all(b"\n").map_err(|e| Error::io(path.as_path(), e))?;
            }
            if let Some(dir) = &opts.out_dir {
                if step % cfg.checkpoint_interval == 0 {
                    let ck = dir.join("checkpoints").join(format!("step-{step}"));
                    save(model, &ck, opts, step, None)?;
                    report.checkpoints.push(ck);
                }
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                report.steps = step;
                finish_epoch(model, val, opts, &mut report, step, true)?;
                break 'epochs;
            }
        }
        let step = trainer.step_count();
        report.steps = step;
        finish_epoch(model, val, opts, &mut report, step, epoch + 1 == cfg.epochs)?;
    }
    Ok(report)
}

fn finish_epoch(model: &UnifiedModel, val: &[Example], opts: &TrainOptions, report: &mut TrainReport, step: usize, last: bool) -> Result<()> {
    let v = validation_loss(model, val)?;
    let improved = if v.is_nan() {
        last
    } else {
        report.val_losses.push(v);
        report.best_val_loss.is_none_or(|b| v < b)
    };
    if improved {
        if !v.is_nan() {
            report.best_val_loss = Some(v);
        }
        report.best_step = step;
        if let Some(dir) = &opts.out_dir {
            save(model, &dir.join(BEST_DIR), opts, step, (!v.is_nan()).then_some(v))?;
        }
    }
    Ok(())
}
