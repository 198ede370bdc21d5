//! The accommodation learning loop: per minibatch, invert the target
//! acoustics, ground the forward model on the plant's actual response to the
//! produced commands, take one Adam step on f, then one Adam step on g
//! through the frozen f. Epoch orchestration adds shuffling, validation
//! metrics, early stopping, and checkpointing, all deterministic from the
//! run seed.
//!
//! The trainer sees corpora only through `TrainSet`, which strips
//! articulatory ground truth and segment labels at construction; learning is
//! acoustics-only by API, not by convention.

use std::fmt;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{json_line, Corpus};
use crate::models::{
    flatten_valid, frozen_chain_backward, save_checkpoint, ForwardModel, InverseModel,
    ModelConfig, SeqBatch,
};
use crate::numerics::{adam_step, mse_loss, Mode, Tensor};
use crate::plant::{ArticulatorySample, SpeakerPlant, ACOUSTIC_DIM, ARTIC_DIM};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn model_config(self) -> ModelConfig {
        match self {
            Profile::Paper => ModelConfig::paper(),
            Profile::Desk => ModelConfig::desk(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected paper or desk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Minibatch size in sequences.
    pub k: usize,
    pub lr_f: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Epochs without validation rmse_inverse improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Step (iii) reruns the inversion against the just-updated f when true;
    /// false keeps the pre-update prediction (ablation).
    pub recompute_for_inverse: bool,
    pub profile: Profile,
    /// Stddev of Gaussian exploration noise added to executed commands;
    /// 0 disables the hook and draws nothing from the noise stream.
    pub noise_sigma: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(profile: Profile, seed: u64) -> Self {
        TrainConfig {
            k: 8,
            lr_f: 1e-3,
            lr_g: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 300,
            patience: 20,
            seed,
            recompute_for_inverse: true,
            profile,
            noise_sigma: 0.0,
            model: profile.model_config(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("minibatch size must be at least 1".into()));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(Error::Config(
                "patience and max_epochs must be at least 1".into(),
            ));
        }
        for (name, v) in [("lr_f", self.lr_f), ("lr_g", self.lr_g), ("eps", self.eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        self.model.validate()
    }
}

/// Acoustic-only view of one utterance: an id and a [T x 18] frame matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainUtterance {
    pub id: String,
    pub frames: Tensor,
}

/// What the trainer is allowed to know about a corpus. Articulatory ground
/// truth and segment labels are dropped here and have no accessor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub speaker: String,
    pub train: Vec<TrainUtterance>,
    pub val: Vec<TrainUtterance>,
    pub test: Vec<TrainUtterance>,
}

pub fn frames_tensor(frames: &[crate::plant::AcousticFrame]) -> Tensor {
    let mut t = Tensor::zeros(vec![frames.len(), ACOUSTIC_DIM]);
    for (i, fr) in frames.iter().enumerate() {
        t.row_mut(i).copy_from_slice(&fr.bands);
    }
    t
}

impl TrainSet {
    pub fn from_corpus(corpus: &Corpus) -> Result<TrainSet> {
        let pick = |ids: &[String]| -> Result<Vec<TrainUtterance>> {
            Ok(corpus
                .subset(ids)?
                .into_iter()
                .map(|u| TrainUtterance {
                    id: u.id.clone(),
                    frames: frames_tensor(&u.frames),
                })
                .collect())
        };
        Ok(TrainSet {
            speaker: corpus.header.speaker.clone(),
            train: pick(&corpus.split.train)?,
            val: pick(&corpus.split.val)?,
            test: pick(&corpus.split.test)?,
        })
    }

    pub fn train_frames(&self) -> usize {
        self.train.iter().map(|u| u.frames.rows()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub loss_f: f64,
    pub loss_g: f64,
    /// Valid (unpadded) frames in the minibatch, for epoch-level weighting.
    pub frames: usize,
}

fn sample_from_row(row: &[f64]) -> ArticulatorySample {
    ArticulatorySample::from_array([row[0], row[1], row[2], row[3], row[4], row[5]])
}

fn synthesize_rows(plant: &SpeakerPlant, a: &Tensor) -> Tensor {
    let mut s = Tensor::zeros(vec![a.rows(), ACOUSTIC_DIM]);
    for r in 0..a.rows() {
        let frame = plant.synthesize_frame(&sample_from_row(a.row(r)));
        s.row_mut(r).copy_from_slice(&frame.bands);
    }
    s
}

fn ensure_finite(
    loss: f64,
    context: &str,
    batch: &[&TrainUtterance],
    f: &ForwardModel,
    g: &InverseModel,
) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    Err(Error::NonFinite {
        context: context.to_string(),
        batch_ids: batch.iter().map(|u| u.id.clone()).collect(),
        param_norm: f.params.value_norm().hypot(g.params.value_norm()),
    })
}

/// One accommodation step on a minibatch:
/// (i)   a = g(s) in train mode; s_tilde = plant(a) with a as constants;
/// (ii)  one Adam step on f minimizing MSE(f(a), s_tilde) over valid frames;
/// (iii) one Adam step on g minimizing MSE(s, f(g(s))) through the frozen f
///       (recomputed against the updated f unless configured stale).
///
/// Losses and gradients only ever see valid frames: padding is excluded by
/// flattening before the losses, and the zero gradients it would contribute
/// are exact zeros through the recurrence.
#[allow(clippy::too_many_arguments)]
pub fn accommodation_step(
    batch: &[&TrainUtterance],
    f: &mut ForwardModel,
    g: &mut InverseModel,
    plant: &SpeakerPlant,
    cfg: &TrainConfig,
    drop_f: &mut RngStream,
    drop_g: &mut RngStream,
    noise: &mut RngStream,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let frames: Vec<&Tensor> = batch.iter().map(|u| &u.frames).collect();
    let seq = SeqBatch::new(&frames)?;
    let (s_flat, _) = flatten_valid(&seq.steps, &seq.mask, ACOUSTIC_DIM);
    let n_valid = seq.n_valid();

    // (i) invert the targets and ground on the plant
    let (a_steps, g_caches) = g.forward_batch(&seq, Mode::Train, drop_g)?;
    let (a_flat, map_a) = flatten_valid(&a_steps, &seq.mask, ARTIC_DIM);
    let a_exec = if cfg.noise_sigma > 0.0 {
        let mut t = a_flat.clone();
        for v in t.data_mut() {
            *v = (*v + cfg.noise_sigma * noise.next_gaussian()).clamp(-0.98, 0.98);
        }
        t
    } else {
        a_flat.clone()
    };
    let s_tilde = synthesize_rows(plant, &a_exec);

    // stale variant: g's gradient against the not-yet-updated f
    let mut loss_g = 0.0;
    if !cfg.recompute_for_inverse {
        let (shat_old, f_inf) = f.infer_caches(&a_flat)?;
        let (lg, d_shat) = mse_loss(&shat_old, &s_flat)?;
        ensure_finite(lg, "inverse-model loss", batch, f, g)?;
        loss_g = lg;
        frozen_chain_backward(
            f,
            g,
            &g_caches,
            &f_inf,
            &d_shat,
            &map_a,
            seq.t_max(),
            seq.batch_size(),
        )?;
    }

    // (ii) ground the forward model on the plant's response
    let (shat_train, f_caches) = f.forward(&a_exec, Mode::Train, drop_f)?;
    let (loss_f, dy) = mse_loss(&shat_train, &s_tilde)?;
    ensure_finite(loss_f, "forward-model loss", batch, f, g)?;
    f.backward(&f_caches, &dy)?;
    adam_step(&mut f.params, cfg.lr_f, cfg.beta1, cfg.beta2, cfg.eps);

    // (iii) improve the inverse model through the frozen forward model
    let frozen = f.params.checksum();
    if cfg.recompute_for_inverse {
        let (a2_steps, g_caches2) = g.forward_batch(&seq, Mode::Train, drop_g)?;
        let (a2_flat, map2) = flatten_valid(&a2_steps, &seq.mask, ARTIC_DIM);
        let (shat, f_inf) = f.infer_caches(&a2_flat)?;
        let (lg, d_shat) = mse_loss(&shat, &s_flat)?;
        ensure_finite(lg, "inverse-model loss", batch, f, g)?;
        loss_g = lg;
        frozen_chain_backward(
            f,
            g,
            &g_caches2,
            &f_inf,
            &d_shat,
            &map2,
            seq.t_max(),
            seq.batch_size(),
        )?;
    }
    adam_step(&mut g.params, cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps);
    if f.params.checksum() != frozen {
        return Err(Error::Contract(
            "forward model parameters moved during the inverse update".into(),
        ));
    }

    Ok(StepLosses {
        loss_f,
        loss_g,
        frames: n_valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// RMSE between the forward model's prediction and the plant's response.
    pub rmse_forward: f64,
    /// RMSE between the target acoustics and the plant's response (imitation
    /// as actually produced).
    pub rmse_inverse: f64,
    /// RMSE between the target acoustics and the forward model's prediction
    /// (the trained objective's own readout).
    pub rmse_imitation: f64,
}

/// Infer-mode metrics over a split. Per-utterance sums are reduced in id
/// order, so the result does not depend on the order utterances arrive in.
pub fn evaluate_split(
    f: &ForwardModel,
    g: &InverseModel,
    plant: &SpeakerPlant,
    utts: &[TrainUtterance],
) -> Result<EvalMetrics> {
    if utts.is_empty() {
        return Err(Error::MissingData("empty evaluation split".into()));
    }
    let mut parts: Vec<(&str, [f64; 3], usize)> = Vec::with_capacity(utts.len());
    for u in utts {
        let a = g.infer(&u.frames)?;
        let shat = f.infer(&a)?;
        let s_tilde = synthesize_rows(plant, &a);
        let mut sse = [0.0; 3];
        for i in 0..u.frames.len() {
            let s = u.frames.data()[i];
            let sh = shat.data()[i];
            let st = s_tilde.data()[i];
            sse[0] += (sh - st) * (sh - st);
            sse[1] += (s - st) * (s - st);
            sse[2] += (s - sh) * (s - sh);
        }
        parts.push((&u.id, sse, u.frames.len()));
    }
    parts.sort_by(|x, y| x.0.cmp(y.0));
    let mut total = [0.0; 3];
    let mut count = 0usize;
    for (_, sse, c) in &parts {
        for j in 0..3 {
            total[j] += sse[j];
        }
        count += c;
    }
    let n = count as f64;
    Ok(EvalMetrics {
        rmse_forward: (total[0] / n).sqrt(),
        rmse_inverse: (total[1] / n).sqrt(),
        rmse_imitation: (total[2] / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub rmse_forward: f64,
    pub rmse_inverse: f64,
    pub train_loss_f: f64,
    pub train_loss_g: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,rmse_forward,rmse_inverse,train_loss_f,train_loss_g,wall_time_s";

pub fn metrics_csv_line(m: &EpochMetrics) -> String {
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.3}",
        m.epoch, m.rmse_forward, m.rmse_inverse, m.train_loss_f, m.train_loss_g, m.wall_time_s
    )
}

/// Drops the final (wall-time) column of every line; determinism checks
/// compare metrics files through this.
pub fn strip_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(idx) => &line[..idx],
            None => line,
        })
        .map(|s| format!("{s}\n"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub speaker: String,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Plant queries made by the training loop in each epoch; the black-box
    /// contract pins these to exactly one per training frame.
    pub plant_queries: Vec<u64>,
}

/// Config snapshot written into every run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    /// Speaker whose material is imitated (the corpus speaker).
    pub speaker: String,
    /// Speaker whose plant executed the commands (the imitating agent).
    pub agent: String,
    pub config: TrainConfig,
}

pub fn read_run_meta(run_dir: &Path) -> Result<RunMeta> {
    let text = fs::read_to_string(run_dir.join("config.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("run config: {e}"),
    })
}

/// Trains one (f, g) pair on the set's train split, validating per epoch.
///
/// Writes into `run_dir`: config.json, metrics.csv (header plus one line per
/// epoch, flushed as written), and checkpoints epoch-1.json / best.json /
/// final.json. Early-stops when validation rmse_inverse has not improved for
/// `patience` epochs.
pub fn run_training(
    set: &TrainSet,
    plant: &SpeakerPlant,
    cfg: &TrainConfig,
    run_dir: &Path,
) -> Result<RunRecord> {
    cfg.validate()?;
    if set.train.is_empty() || set.val.is_empty() {
        return Err(Error::MissingData(
            "training requires non-empty train and val splits".into(),
        ));
    }
    fs::create_dir_all(run_dir)?;
    let meta = RunMeta {
        speaker: set.speaker.clone(),
        agent: plant.speaker_id.clone(),
        config: cfg.clone(),
    };
    fs::write(run_dir.join("config.json"), json_line(&meta)? + "\n")?;
    let mut metrics_file = File::create(run_dir.join("metrics.csv"))?;
    writeln!(metrics_file, "{METRICS_HEADER}")?;
    metrics_file.flush()?;

    let mut f = ForwardModel::init(&cfg.model, &mut RngStream::new(cfg.seed, "init/f"))?;
    let mut g = InverseModel::init(&cfg.model, &mut RngStream::new(cfg.seed, "init/g"))?;
    let mut drop_f = RngStream::new(cfg.seed, "dropout/f");
    let mut drop_g = RngStream::new(cfg.seed, "dropout/g");
    let mut noise = RngStream::new(cfg.seed, "noise");

    let train_frames = set.train_frames() as u64;
    let mut record = RunRecord {
        config: cfg.clone(),
        speaker: set.speaker.clone(),
        metrics: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        plant_queries: Vec::new(),
    };
    let mut best_rmse = f64::INFINITY;
    let mut since_best = 0usize;
    let mut last_epoch = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let q0 = plant.query_count();
        let mut order: Vec<usize> = (0..set.train.len()).collect();
        RngStream::new(cfg.seed, &format!("shuffle/{epoch}")).shuffle(&mut order);
        let mut weighted_f = 0.0;
        let mut weighted_g = 0.0;
        let mut frames_seen = 0usize;
        for chunk in order.chunks(cfg.k) {
            let batch: Vec<&TrainUtterance> = chunk.iter().map(|&i| &set.train[i]).collect();
            let losses = accommodation_step(
                &batch, &mut f, &mut g, plant, cfg, &mut drop_f, &mut drop_g, &mut noise,
            )?;
            weighted_f += losses.loss_f * losses.frames as f64;
            weighted_g += losses.loss_g * losses.frames as f64;
            frames_seen += losses.frames;
        }
        let queries = plant.query_count() - q0;
        if queries != train_frames {
            return Err(Error::Contract(format!(
                "plant queried {queries} times for {train_frames} training frames"
            )));
        }
        record.plant_queries.push(queries);

        let ev = evaluate_split(&f, &g, plant, &set.val)?;
        let m = EpochMetrics {
            epoch,
            rmse_forward: ev.rmse_forward,
            rmse_inverse: ev.rmse_inverse,
            train_loss_f: weighted_f / frames_seen as f64,
            train_loss_g: weighted_g / frames_seen as f64,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        writeln!(metrics_file, "{}", metrics_csv_line(&m))?;
        metrics_file.flush()?;
        record.metrics.push(m);
        last_epoch = epoch;

        if epoch == 1 {
            save_checkpoint(&run_dir.join("epoch-1.json"), &f, &g, 1)?;
        }
        if ev.rmse_inverse < best_rmse {
            best_rmse = ev.rmse_inverse;
            record.best_epoch = epoch;
            since_best = 0;
            save_checkpoint(&run_dir.join("best.json"), &f, &g, epoch)?;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                record.stopped_early = true;
                break;
            }
        }
    }
    save_checkpoint(&run_dir.join("final.json"), &f, &g, last_epoch)?;
    Ok(record)
}
