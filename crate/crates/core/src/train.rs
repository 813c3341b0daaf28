//! Training (loss on x0 predictions with Adam), held-out evaluation and the
//! ablation matrix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::gaussian_points;
use crate::geometry::{centroid, Point};
use crate::gpnet::{Ablation, Conditions, GpNet, HyperParams, ModelError};
use crate::grad::{Adam, Gradients};
use crate::metrics::{compare, guiding_mse, ip_3d, mean_report, MetricReport, SceneFrame, DEFAULT_F1_TAU};
use crate::synth::{Interaction, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("metric: {0}")]
    Metric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub ablation: Ablation,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm limit.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            ablation: Ablation::Full,
            epochs: 200,
            lr: 1e-3,
            batch: 8,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.hyper.validate()?;
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0) {
            return Err(TrainError::Config("epochs, batch and lr must be positive".into()));
        }
        Ok(())
    }
}

/// One interaction prepared for the model: conditions and target in the
/// normalized frame.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub frame: SceneFrame,
    pub cond: Conditions,
    pub target: Vec<Point>,
    pub target_world: Vec<Point>,
    pub entities_world: Vec<Vec<Point>>,
}

impl Example {
    pub fn new(item: &Interaction, n: usize) -> Result<Self, ModelError> {
        let clouds = item.entity_clouds();
        let (frame, cond) = Conditions::from_world(&clouds, &item.prompt, n)?;
        let target_world = crate::gpnet::resample(&item.target.points, n);
        Ok(Self {
            id: item.id.clone(),
            frame,
            cond,
            target: frame.cloud_to_frame(&target_world),
            target_world,
            entities_world: clouds,
        })
    }
}

pub fn prepare(data: &[Interaction], n: usize) -> Result<Vec<Example>, ModelError> {
    data.iter().map(|i| Example::new(i, n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    /// Mean guiding-point MSE (m²) on the held-out set, when one is given.
    pub guiding_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    /// One JSON record per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Relative drop of the epoch-mean loss from the first to the last epoch.
    pub fn loss_reduction(&self) -> Option<f64> {
        let first = self.epochs.first()?.loss;
        let last = self.epochs.last()?.loss;
        Some(1.0 - last / first)
    }
}

/// Mean guiding-point MSE in world units over `examples`.
pub fn heldout_guiding_mse(model: &GpNet, examples: &[Example]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        let gp = model.guiding_points(&ex.cond)?;
        let c = centroid(&ex.target_world).ok_or(TrainError::EmptyDataset)?;
        total += guiding_mse(&ex.frame.cloud_to_world(&gp.s_tilde), c);
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Sums per-example gradients of one minibatch; returns the mean loss.
fn batch_step(
    model: &GpNet,
    batch: &[&Example],
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<(f64, Gradients), TrainError> {
    let steps = model.hyper().steps;
    let mut total: Option<Gradients> = None;
    let mut loss_sum = 0.0;
    for ex in batch {
        let t = rng.gen_range(0..steps);
        let noise = gaussian_points(ex.target.len(), rng);
        let (loss, grads) = model.loss_and_gradients(&ex.cond, &ex.target, t, &noise)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        loss_sum += loss;
        match total.as_mut() {
            Some(acc) => acc.merge(grads),
            None => total = Some(grads),
        }
    }
    let mut grads = total.expect("non-empty batch");
    grads.scale(1.0 / batch.len() as f64);
    Ok((loss_sum / batch.len() as f64, grads))
}

/// Trains from scratch. Epoch losses average the sampled minibatch losses.
pub fn train(
    examples: &[Example],
    cfg: &TrainConfig,
    vocab: Vocabulary,
    heldout: Option<&[Example]>,
) -> Result<(GpNet, TrainLog), TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = GpNet::new(cfg.hyper.clone(), cfg.ablation, vocab, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    opt.clip_norm = cfg.clip_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|i| &examples[*i]).collect();
            let (loss, grads) = batch_step(&model, &batch, &mut rng, step)?;
            opt.step(model.params_mut(), &grads);
            if !model.params().is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let guiding = match heldout {
            Some(h) if !h.is_empty() => Some(heldout_guiding_mse(&model, h)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
            guiding_mse: guiding,
        };
        tracing::debug!(?record, "epoch");
        log.epochs.push(record);
    }
    Ok((model, log))
}

/// Runs `steps` optimizer steps on a single example (batch of one).
pub fn overfit(example: &Example, cfg: &TrainConfig, vocab: Vocabulary, steps: usize) -> Result<(GpNet, Vec<f64>), TrainError> {
    cfg.validate()?;
    let mut model = GpNet::new(cfg.hyper.clone(), cfg.ablation, vocab, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    opt.clip_norm = cfg.clip_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = batch_step(&model, &[example], &mut rng, step)?;
        opt.step(model.params_mut(), &grads);
        losses.push(loss);
    }
    Ok((model, losses))
}

/// Mean loss over a fixed grid of timesteps with seeded noise.
pub fn grid_loss(model: &GpNet, example: &Example, timesteps: &[usize], seed: u64) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for t in timesteps {
        let noise = gaussian_points(example.target.len(), &mut rng);
        total += model.loss(&example.cond, &example.target, *t, &noise)?;
    }
    Ok(total / timesteps.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: MetricReport,
    pub samples: Vec<SampleRecord>,
}

/// Samples every example with `seed` and scores it against its target in world units.
pub fn evaluate(model: &GpNet, examples: &[Example], seed: u64) -> Result<EvalReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut samples = Vec::with_capacity(examples.len());
    for ex in examples {
        let (pred, gp) = model.sample(&ex.cond, seed)?;
        let pred = ex.frame.cloud_to_world(&pred);
        let mut report = compare(&pred, &ex.target_world, DEFAULT_F1_TAU).map_err(|e| TrainError::Metric(e.to_string()))?;
        let c = centroid(&ex.target_world).ok_or(TrainError::EmptyDataset)?;
        report.guiding_mse = Some(guiding_mse(&ex.frame.cloud_to_world(&gp.s_tilde), c));
        report.ip3d = Some(ip_3d(&pred, &ex.entities_world).value);
        samples.push(SampleRecord {
            id: ex.id.clone(),
            report,
        });
    }
    let reports: Vec<MetricReport> = samples.iter().map(|s| s.report.clone()).collect();
    Ok(EvalReport {
        mean: mean_report(&reports),
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub points: usize,
    pub seed: u64,
    pub report: MetricReport,
    pub final_loss: f64,
}

/// Trains and evaluates every ablation flag at the base point count, plus
/// the full model at each of `point_counts`, for each seed.
pub fn run_ablation_matrix(
    train_set: &[Interaction],
    test_set: &[Interaction],
    base: &TrainConfig,
    point_counts: &[usize],
    seeds: &[u64],
    vocab: &Vocabulary,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut variants: Vec<(Ablation, usize)> = Ablation::ALL.iter().map(|a| (*a, base.hyper.points)).collect();
    for n in point_counts {
        if *n != base.hyper.points {
            variants.push((Ablation::Full, *n));
        }
    }
    let mut rows = Vec::new();
    for seed in seeds {
        for (ablation, n) in &variants {
            let mut cfg = base.clone();
            cfg.ablation = *ablation;
            cfg.hyper.points = *n;
            cfg.seed = *seed;
            let train_ex = prepare(train_set, *n)?;
            let test_ex = prepare(test_set, *n)?;
            let (model, log) = train(&train_ex, &cfg, vocab.clone(), None)?;
            let report = evaluate(&model, &test_ex, *seed)?.mean;
            let variant = if *n == base.hyper.points {
                ablation.to_string()
            } else {
                format!("{ablation}@{n}")
            };
            tracing::info!(%variant, seed, cd = report.cd, "ablation cell done");
            rows.push(AblationRow {
                variant,
                ablation: *ablation,
                points: *n,
                seed: *seed,
                report,
                final_loss: log.epochs.last().map_or(f64::NAN, |r| r.loss),
            });
        }
    }
    Ok(rows)
}

fn averaged(rows: &[AblationRow]) -> Vec<(String, usize, MetricReport)> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant) {
            names.push(r.variant.clone());
        }
    }
    names
        .into_iter()
        .map(|name| {
            let sel: Vec<MetricReport> = rows.iter().filter(|r| r.variant == name).map(|r| r.report.clone()).collect();
            let count = sel.len();
            (name, count, mean_report(&sel))
        })
        .collect()
}

/// Seed-averaged table as CSV.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seeds,cd,emd,f1,guiding_mse\n");
    for (name, count, r) in averaged(rows) {
        writeln!(
            out,
            "{name},{count},{:.6},{:.6},{:.6},{:.6}",
            r.cd,
            r.emd,
            r.f1,
            r.guiding_mse.unwrap_or(f64::NAN)
        )
        .expect("string write");
    }
    out
}

/// Seed-averaged table as Markdown.
pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | seeds | CD | EMD | F1 | guiding MSE |\n|---|---|---|---|---|---|\n");
    for (name, count, r) in averaged(rows) {
        writeln!(
            out,
            "| {name} | {count} | {:.4} | {:.4} | {:.4} | {:.4} |",
            r.cd,
            r.emd,
            r.f1,
            r.guiding_mse.unwrap_or(f64::NAN)
        )
        .expect("string write");
    }
    out
}

/// Saves a model under `dir` and returns the checkpoint hash.
pub fn save_model(model: &mut GpNet, dir: &Path) -> Result<String, TrainError> {
    Ok(model.save(dir)?)
}
