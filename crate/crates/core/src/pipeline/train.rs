use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{calibration_views, load_split, Checkpoint, PreparedObject, RunConfig, TrainView};
use crate::autodiff::{accumulate_gradients, AdamState, Stage, Tape};
use crate::calibrator::calibrate_multi;
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::losses::{loss_csr, loss_vsr, CSR_TERMS, VSR_TERMS};
use crate::network::{csr_forward, is_csr_param, predict_offsets, Model};

pub const LOG_FILE: &str = "train_log.csv";

pub fn checkpoint_file(stage: Stage) -> &'static str {
    match stage {
        Stage::Csr => "csr.ckpt",
        Stage::Vsr => "vsr.ckpt",
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Csr => "csr",
        Stage::Vsr => "vsr",
    }
}

fn stage_terms(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Csr => &CSR_TERMS,
        Stage::Vsr => &VSR_TERMS,
    }
}

/// One optimizer step: batch-mean loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl LogRow {
    pub fn csv_header() -> String {
        let terms: Vec<&str> = CSR_TERMS.iter().chain(&VSR_TERMS).copied().collect();
        format!("stage,epoch,step,lr,{},total\n", terms.join(","))
    }

    /// Terms of the other stage are left empty.
    pub fn csv_line(&self) -> String {
        let mut out = format!("{},{},{},{}", stage_name(self.stage), self.epoch, self.step, self.lr);
        for name in CSR_TERMS.iter().chain(&VSR_TERMS) {
            out.push(',');
            if let Some((_, v)) = self.terms.iter().find(|(n, _)| n == name) {
                write!(out, "{v}").unwrap();
            }
        }
        writeln!(out, ",{}", self.total).unwrap();
        out
    }
}

/// Sample-weighted mean of every loss term over one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub stage: Stage,
    pub epoch: usize,
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl EpochSummary {
    /// Sum of the projection terms.
    pub fn projection(&self) -> f64 {
        self.terms.iter().filter(|(n, _)| n.starts_with("proj")).map(|(_, v)| v).sum()
    }
}

type Grads = BTreeMap<String, Vec<f64>>;

/// Mini-batch training over prepared objects. Each sample is one object seen
/// through one input view; every view of the object supervises the
/// projection loss.
pub struct Trainer<'a> {
    pub run: RunConfig,
    pub model: Model,
    pub objects: &'a [PreparedObject],
    adam: AdamState,
    stage: Stage,
    /// Optimizer steps taken in the current stage.
    pub step: usize,
    /// Calibrated coarse clouds per `(object, view)`; the coarse stage is
    /// frozen while these are in use.
    cache: BTreeMap<(usize, usize), PointCloud>,
    pub log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(run: RunConfig, model: Model, objects: &'a [PreparedObject]) -> Result<Self> {
        run.validate()?;
        if objects.is_empty() {
            return Err(Error::Empty);
        }
        let adam = AdamState::new(run.adam);
        Ok(Trainer { run, model, objects, adam, stage: Stage::Csr, step: 0, cache: BTreeMap::new(), log: Vec::new() })
    }

    fn enter(&mut self, stage: Stage) {
        if stage != self.stage {
            self.stage = stage;
            self.adam = AdamState::new(self.run.adam);
            self.step = 0;
            self.cache.clear();
        }
    }

    /// Positions the trainer at the start of `epoch` of `stage`, as after an
    /// uninterrupted run. Optimizer moments start from zero.
    pub fn resume_at(&mut self, stage: Stage, epoch: usize) {
        self.enter(stage);
        self.step = epoch * self.objects.len().div_ceil(self.run.batch_size);
    }

    pub fn input_view(&self, epoch: usize, object: usize) -> usize {
        match self.run.train_view {
            TrainView::Canonical => 0,
            TrainView::Cycle => (epoch + object) % self.objects[object].views.len(),
        }
    }

    fn sample_grads(&self, stage: Stage, (obj, view): (usize, usize)) -> Result<(Grads, Vec<(&'static str, f64)>)> {
        let o = &self.objects[obj];
        let v = &o.views[view];
        let mut tape = Tape::new();
        let p_in = tape.constant(v.p_in.to_tensor())?;
        let (bound, breakdown) = match stage {
            Stage::Csr => {
                let bound = self.model.params.bind(&mut tape, is_csr_param)?;
                let out = csr_forward(&mut tape, &bound, &self.model.config, &v.p_in, &v.image, true)?;
                let b = loss_csr(&mut tape, &o.targets, out.p0, out.p2, out.pc, p_in, self.run.loss)?;
                (bound, b)
            }
            Stage::Vsr => {
                let p_cal = &self.cache[&(obj, view)];
                let bound = self.model.params.bind_only(&mut tape, |n| !is_csr_param(n))?;
                let (_, p_op) = predict_offsets(&mut tape, &bound, &self.model.config, p_cal)?;
                (bound, loss_vsr(&mut tape, &o.targets, p_op, p_in, self.run.loss)?)
            }
        };
        let values = breakdown.values(&tape);
        if let Some(&(term, value)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Divergence { step: self.step, term: term.into(), value });
        }
        let grads = tape.backward(breakdown.total)?;
        Ok((bound.named_gradients(&tape, &grads), values))
    }

    /// `Pc` calibrated against the sample's views, input view last.
    fn calibrated(&self, obj: usize, view: usize) -> Result<PointCloud> {
        let o = &self.objects[obj];
        let v = &o.views[view];
        let pc = self.model.coarse(&v.p_in, &v.image, true)?;
        let order = calibration_views(view, o.views.len(), self.run.calibration_views);
        if order.is_empty() {
            return Ok(pc);
        }
        let cal: Vec<_> = order.iter().map(|&i| (o.views[i].camera.clone(), o.views[i].silhouette.clone())).collect();
        calibrate_multi(&pc, &cal, &(0..cal.len()).collect::<Vec<_>>())
    }

    fn fill_cache(&mut self, samples: &[(usize, usize)]) -> Result<()> {
        let missing: Vec<(usize, usize)> = samples.iter().copied().filter(|s| !self.cache.contains_key(s)).collect();
        let fresh = missing.par_iter().map(|&(o, v)| self.calibrated(o, v)).collect::<Result<Vec<_>>>()?;
        self.cache.extend(missing.into_iter().zip(fresh));
        Ok(())
    }

    /// Loss terms of one sample at the current parameters, without a step.
    pub fn sample_losses(&mut self, stage: Stage, sample: (usize, usize)) -> Result<Vec<(&'static str, f64)>> {
        self.enter(stage);
        if stage == Stage::Vsr {
            self.fill_cache(&[sample])?;
        }
        Ok(self.sample_grads(stage, sample)?.1)
    }

    /// One optimizer step on the mean gradient of `samples`.
    pub fn step(&mut self, stage: Stage, epoch: usize, samples: &[(usize, usize)], lr: f64) -> Result<LogRow> {
        self.enter(stage);
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        if stage == Stage::Vsr {
            self.fill_cache(samples)?;
        }
        let step = self.step;
        let results = samples
            .par_iter()
            .map(|&s| self.sample_grads(stage, s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                // Overflow inside the forward pass, before any loss term exists.
                Error::NonFinite { op } => Error::Divergence { step, term: format!("{op} output"), value: f64::NAN },
                e => e,
            })?;
        let mut total: Grads = BTreeMap::new();
        let mut terms: Vec<(&'static str, f64)> = stage_terms(stage).iter().map(|&n| (n, 0.0)).collect();
        let scale = 1.0 / samples.len() as f64;
        for (grads, values) in results {
            accumulate_gradients(&mut total, grads);
            for (acc, (_, v)) in terms.iter_mut().zip(values) {
                acc.1 += v * scale;
            }
        }
        for (name, g) in total.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
            if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
                return Err(Error::Divergence { step: self.step, term: format!("gradient of {name}"), value: *bad });
            }
        }
        self.adam.step(&mut self.model.params, &total, lr)?;
        let row = LogRow { stage, epoch, step: self.step, lr, total: terms.iter().map(|(_, v)| v).sum(), terms };
        self.step += 1;
        self.log.push(row.clone());
        Ok(row)
    }

    /// One pass over every object in a seeded order; the learning rate
    /// comes from the stage schedule at `epoch`.
    pub fn epoch(&mut self, stage: Stage, epoch: usize) -> Result<EpochSummary> {
        let schedule = match stage {
            Stage::Csr => self.run.csr_schedule,
            Stage::Vsr => self.run.vsr_schedule,
        };
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        let tag = match stage {
            Stage::Csr => 0u64,
            Stage::Vsr => 1,
        };
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.run.seed ^ (tag << 40) ^ epoch as u64));
        let samples: Vec<(usize, usize)> = order.iter().map(|&o| (o, self.input_view(epoch, o))).collect();
        let mut terms: Vec<(&'static str, f64)> = stage_terms(stage).iter().map(|&n| (n, 0.0)).collect();
        for batch in samples.chunks(self.run.batch_size) {
            let row = self.step(stage, epoch, batch, lr)?;
            let w = batch.len() as f64 / samples.len() as f64;
            for (acc, (_, v)) in terms.iter_mut().zip(&row.terms) {
                acc.1 += v * w;
            }
        }
        Ok(EpochSummary { stage, epoch, total: terms.iter().map(|(_, v)| v).sum(), terms })
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub epochs: Vec<EpochSummary>,
    pub checkpoint: Checkpoint,
    pub log_path: PathBuf,
}

/// Two-stage training on the train split of `run.dataset`, writing
/// `csr.ckpt`, `vsr.ckpt` and the CSV log into `out_dir` after every epoch.
///
/// With `resume`, training continues at the stored stage and epoch; the
/// log is appended to and the learning rate picks up from the schedule.
pub fn train(run: &RunConfig, out_dir: &Path, resume: Option<Checkpoint>) -> Result<TrainOutput> {
    run.validate()?;
    let manifest = Manifest::load(&run.dataset)?;
    let objects = load_split(&manifest, Split::Train, &run.model)?;
    let (model, start_stage, start_epoch) = match &resume {
        Some(ck) => {
            if ck.config.model != run.model {
                return Err(Error::shape("resume", "checkpoint model config differs from the run config"));
            }
            (ck.model()?, ck.stage, ck.epoch)
        }
        None => (Model::new(run.model.clone(), run.seed)?, Stage::Csr, 0),
    };
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = if resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = fs::File::create(&log_path)?;
        f.write_all(LogRow::csv_header().as_bytes())?;
        f
    };

    let mut trainer = Trainer::new(run.clone(), model, &objects)?;
    trainer.resume_at(start_stage, start_epoch);
    let mut epochs = Vec::new();
    let mut checkpoint = None;
    for (stage, count) in [(Stage::Csr, run.epochs_csr), (Stage::Vsr, run.epochs_vsr)] {
        let first = match (start_stage, stage) {
            (Stage::Vsr, Stage::Csr) => continue,
            (s, t) if s == t => start_epoch,
            _ => 0,
        };
        for epoch in first..count {
            let before = trainer.log.len();
            epochs.push(trainer.epoch(stage, epoch)?);
            let lines: String = trainer.log[before..].iter().map(LogRow::csv_line).collect();
            log.write_all(lines.as_bytes())?;
            let ck = Checkpoint { stage, epoch: epoch + 1, config: run.clone(), params: trainer.model.params.clone() };
            ck.save(&out_dir.join(checkpoint_file(stage)))?;
            checkpoint = Some(ck);
        }
    }
    let checkpoint = match checkpoint {
        Some(ck) => ck,
        // Nothing left to train.
        None => resume.expect("a fresh run trains at least one epoch"),
    };
    Ok(TrainOutput { epochs, checkpoint, log_path })
}
