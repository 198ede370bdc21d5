//! Evaluation probes over trained checkpoints: local forward-model accuracy
//! under articulatory offsets, a nearest-prototype correctness proxy for
//! imitation quality, and an articulatory-recovery diagnostic.
//!
//! Probes are allowed to read segment labels and ground-truth articulation;
//! the trainer's API cannot. All probe randomness comes from an explicit
//! stream, so results are deterministic given (checkpoints, seed).

use crate::corpus::{Inventory, Utterance};
use crate::models::{ForwardModel, InverseModel};
use crate::numerics::Tensor;
use crate::plant::{AcousticFrame, ArticulatorySample, SpeakerPlant, ACOUSTIC_DIM, ARTIC_DIM};
use crate::rng::RngStream;
use crate::trainer::frames_tensor;
use crate::{Error, Result};

/// Maps an acoustic sequence to articulation. Implemented by the trained
/// inverse model; tests swap in oracle or degenerate stubs.
pub trait Inverter {
    fn invert(&self, id: &str, frames: &Tensor) -> Result<Tensor>;
}

impl Inverter for InverseModel {
    fn invert(&self, _id: &str, frames: &Tensor) -> Result<Tensor> {
        self.infer(frames)
    }
}

fn row_sample(row: &[f64]) -> ArticulatorySample {
    ArticulatorySample::from_array([row[0], row[1], row[2], row[3], row[4], row[5]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetProbeParams {
    pub n_offsets_per_frame: usize,
    /// Offset magnitudes are uniform in [0, max_magnitude].
    pub max_magnitude: f64,
    pub n_bins: usize,
}

impl Default for OffsetProbeParams {
    fn default() -> Self {
        OffsetProbeParams {
            n_offsets_per_frame: 4,
            max_magnitude: 1.5,
            n_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetBin {
    pub lo: f64,
    pub hi: f64,
    /// Mean over the bin's samples; 0.0 when the bin is empty.
    pub mean_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetProbeResult {
    pub epoch_tag: String,
    /// (post-clamp offset distance, forward-vs-plant error) per sample.
    pub samples: Vec<(f64, f64)>,
    /// Equal-width bins spanning [0, max observed distance].
    pub bins: Vec<OffsetBin>,
}

fn bin_samples(samples: &[(f64, f64)], n_bins: usize) -> Vec<OffsetBin> {
    let max_d = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let width = if max_d > 0.0 {
        max_d / n_bins as f64
    } else {
        0.0
    };
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(d, e) in samples {
        let idx = if width > 0.0 {
            ((d / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        sums[idx] += e;
        counts[idx] += 1;
    }
    (0..n_bins)
        .map(|i| OffsetBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            mean_error: if counts[i] > 0 {
                sums[i] / counts[i] as f64
            } else {
                0.0
            },
            count: counts[i],
        })
        .collect()
}

/// Local accuracy of f around the articulatory region the agent actually
/// visits: invert every test frame, offset the result in a random direction
/// (uniform on the sphere, magnitude uniform in [0, max]), clamp to the
/// plant's domain, and compare f's prediction against the plant's response.
pub fn probe_forward_accuracy(
    g: &dyn Inverter,
    f: &ForwardModel,
    plant: &SpeakerPlant,
    test_set: &[&Utterance],
    params: &OffsetProbeParams,
    stream: &mut RngStream,
    epoch_tag: &str,
) -> Result<OffsetProbeResult> {
    if test_set.is_empty() {
        return Err(Error::MissingData("offset probe needs a test set".into()));
    }
    if params.n_offsets_per_frame == 0 || params.n_bins == 0 {
        return Err(Error::Config(
            "offset probe needs at least one offset per frame and one bin".into(),
        ));
    }
    let mut probe_rows: Vec<f64> = Vec::new();
    let mut dists: Vec<f64> = Vec::new();
    for u in test_set {
        let a = g.invert(&u.id, &frames_tensor(&u.frames))?;
        for r in 0..a.rows() {
            let base = a.row(r);
            for _ in 0..params.n_offsets_per_frame {
                let mut dir = [0.0; ARTIC_DIM];
                for d in dir.iter_mut() {
                    *d = stream.next_gaussian();
                }
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mag = stream.next_range(0.0, params.max_magnitude);
                let mut dist_sq = 0.0;
                for (j, d) in dir.iter().enumerate() {
                    let step = if norm > 0.0 { mag * d / norm } else { 0.0 };
                    let moved = (base[j] + step).clamp(-0.98, 0.98);
                    dist_sq += (moved - base[j]) * (moved - base[j]);
                    probe_rows.push(moved);
                }
                dists.push(dist_sq.sqrt());
            }
        }
    }
    let n = dists.len();
    let probes = Tensor::new(vec![n, ARTIC_DIM], probe_rows)?;
    let preds = f.infer(&probes)?;
    let mut samples = Vec::with_capacity(n);
    for (i, &dist) in dists.iter().enumerate() {
        let actual = plant.synthesize_frame(&row_sample(probes.row(i)));
        let err = preds
            .row(i)
            .iter()
            .zip(actual.bands.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            .sqrt();
        samples.push((dist, err));
    }
    let bins = bin_samples(&samples, params.n_bins);
    Ok(OffsetProbeResult {
        epoch_tag: epoch_tag.to_string(),
        samples,
        bins,
    })
}

/// One acoustic prototype per inventory target, produced by the agent's own
/// plant; the correctness proxy classifies productions against these.
pub fn prototype_frames(plant_agent: &SpeakerPlant, inventory: &Inventory) -> Vec<AcousticFrame> {
    inventory
        .targets
        .iter()
        .map(|t| plant_agent.synthesize_frame(t))
        .collect()
}

fn nearest_prototype(frame: &AcousticFrame, prototypes: &[AcousticFrame]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in prototypes.iter().enumerate() {
        let d = frame.dist(p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fraction of labeled segments whose production (the agent's plant applied
/// to the inverted trajectory) classifies to the generator's label under a
/// nearest-prototype decoder. Per segment, the classified feature is the
/// mean of the central 50% of produced frames (all frames when trimming
/// would leave fewer than 2).
pub fn probe_correctness(
    g: &dyn Inverter,
    plant_agent: &SpeakerPlant,
    test_set: &[&Utterance],
    inventory: &Inventory,
) -> Result<f64> {
    let prototypes = prototype_frames(plant_agent, inventory);
    let mut total = 0usize;
    let mut correct = 0usize;
    for u in test_set {
        let segs = u.segments.as_ref().ok_or_else(|| {
            Error::MissingData(format!("utterance {} carries no segment labels", u.id))
        })?;
        let a = g.invert(&u.id, &frames_tensor(&u.frames))?;
        let produced: Vec<AcousticFrame> = (0..a.rows())
            .map(|r| plant_agent.synthesize_frame(&row_sample(a.row(r))))
            .collect();
        for seg in segs {
            let len = seg.end - seg.start;
            let trim = len / 4;
            let (mut lo, mut hi) = (seg.start + trim, seg.end - trim);
            if hi - lo < 2 {
                lo = seg.start;
                hi = seg.end;
            }
            let mut mean = [0.0; ACOUSTIC_DIM];
            for frame in &produced[lo..hi] {
                for (m, b) in mean.iter_mut().zip(frame.bands.iter()) {
                    *m += b;
                }
            }
            for m in mean.iter_mut() {
                *m /= (hi - lo) as f64;
            }
            total += 1;
            if nearest_prototype(&AcousticFrame { bands: mean }, &prototypes) == seg.label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::MissingData("no labeled segments to classify".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticRecovery {
    pub per_dim: [f64; ARTIC_DIM],
    pub overall: f64,
    pub frames: usize,
}

/// Framewise RMSE between the inverted trajectory and the generator's ground
/// truth, per articulatory dimension. A diagnostic only: inverse
/// non-uniqueness means this can stay high while acoustic imitation is good.
pub fn probe_articulatory_recovery(
    g: &dyn Inverter,
    test_set: &[&Utterance],
) -> Result<ArticRecovery> {
    let mut sse = [0.0; ARTIC_DIM];
    let mut frames = 0usize;
    for u in test_set {
        let artic = u.artic.as_ref().ok_or_else(|| {
            Error::MissingData(format!("utterance {} carries no articulation", u.id))
        })?;
        let a = g.invert(&u.id, &frames_tensor(&u.frames))?;
        for (r, truth) in artic.iter().enumerate() {
            let t = truth.to_array();
            for (j, sj) in sse.iter_mut().enumerate() {
                let e = a.at(r, j) - t[j];
                *sj += e * e;
            }
        }
        frames += artic.len();
    }
    if frames == 0 {
        return Err(Error::MissingData("no articulated frames".into()));
    }
    let mut per_dim = [0.0; ARTIC_DIM];
    let mut total = 0.0;
    for (j, &sj) in sse.iter().enumerate() {
        per_dim[j] = (sj / frames as f64).sqrt();
        total += sj;
    }
    Ok(ArticRecovery {
        per_dim,
        overall: (total / (frames * ARTIC_DIM) as f64).sqrt(),
        frames,
    })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the mean rank of their span
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Contract(format!(
            "spearman needs two equal-length series of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(ry.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Contract(
            "spearman undefined for a constant series".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

pub const OFFSET_BINS_HEADER: &str = "epoch_tag,bin_lo,bin_hi,mean_forward_error,count";
pub const OFFSET_SAMPLES_HEADER: &str = "epoch_tag,offset_distance,forward_error";
pub const CORRECTNESS_HEADER: &str = "epoch,speaker,seed,correctness";

pub fn offset_bins_csv(results: &[&OffsetProbeResult]) -> String {
    let mut out = format!("{OFFSET_BINS_HEADER}\n");
    for r in results {
        for b in &r.bins {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{}\n",
                r.epoch_tag, b.lo, b.hi, b.mean_error, b.count
            ));
        }
    }
    out
}

pub fn offset_samples_csv(results: &[&OffsetProbeResult]) -> String {
    let mut out = format!("{OFFSET_SAMPLES_HEADER}\n");
    for r in results {
        for (d, e) in &r.samples {
            out.push_str(&format!("{},{:.16e},{:.16e}\n", r.epoch_tag, d, e));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessRow {
    pub epoch: usize,
    pub speaker: String,
    pub seed: u64,
    pub correctness: f64,
}

pub fn correctness_csv(rows: &[CorrectnessRow]) -> String {
    let mut out = format!("{CORRECTNESS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.16e}\n",
            r.epoch, r.speaker, r.seed, r.correctness
        ));
    }
    out
}

pub fn artic_recovery_csv(rec: &ArticRecovery) -> String {
    let mut out = String::from("dim,rmse\n");
    for (name, v) in ["jh", "tb", "td", "tt", "lp", "lh"].iter().zip(rec.per_dim) {
        out.push_str(&format!("{name},{v:.16e}\n"));
    }
    out.push_str(&format!("overall,{:.16e}\n", rec.overall));
    out
}
