//! Deterministic corpus generation, splitting, and serialization.
//!
//! A corpus is a set of synthetic utterances for one speaker: smooth
//! articulatory trajectories through a shared target inventory, rendered to
//! acoustics by that speaker's plant. Every byte is a function of
//! `(seed, n, speaker)`; the train/val/test split is re-derived from the seed
//! on read instead of being stored.
//!
//! Draw-order contract (fixed so regeneration is bit-identical):
//! * inventory: stream `"inventory"`, six components per candidate;
//! * utterance i: stream `"traj/{i}"`, segment count, then per segment its
//!   label then its hold length;
//! * split: stream `"split"` shuffles utterance indices, test ids first, then
//!   val, remainder train.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::plant::{AcousticFrame, ArticulatorySample, SpeakerPlant, ACOUSTIC_DIM, ARTIC_DIM};
use crate::rng::RngStream;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const INVENTORY_SIZE: usize = 8;
pub const MIN_ACOUSTIC_SEPARATION: f64 = 0.5;
const INVENTORY_ATTEMPT_CAP: usize = 1000;

/// Labeled articulatory targets; the label of `targets[k]` is `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    pub targets: Vec<ArticulatorySample>,
}

impl Inventory {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Half-open frame range [start, end) holding one inventory target.
/// Boundaries are the pre-smoothing segment edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub frames: Vec<AcousticFrame>,
    /// Ground-truth trajectory, for evaluation only; the trainer never sees it.
    pub artic: Option<Vec<ArticulatorySample>>,
    pub segments: Option<Vec<Segment>>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames.len();
        if t == 0 {
            return Err(Error::Contract(format!("utterance {} has no frames", self.id)));
        }
        if let Some(artic) = &self.artic {
            if artic.len() != t {
                return Err(Error::Contract(format!(
                    "utterance {}: {} artic frames vs {} acoustic frames",
                    self.id,
                    artic.len(),
                    t
                )));
            }
        }
        if let Some(segments) = &self.segments {
            let mut cursor = 0;
            for s in segments {
                if s.start != cursor || s.end <= s.start {
                    return Err(Error::Contract(format!(
                        "utterance {}: segments do not tile [0, {t})",
                        self.id
                    )));
                }
                cursor = s.end;
            }
            if cursor != t {
                return Err(Error::Contract(format!(
                    "utterance {}: segments cover [0, {cursor}) of [0, {t})",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHeader {
    pub format_version: u32,
    pub seed: u64,
    pub n: usize,
    pub speaker: String,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub utterances: Vec<Utterance>,
    pub split: CorpusSplit,
}

impl Corpus {
    pub fn utterance(&self, id: &str) -> Result<&Utterance> {
        self.utterances
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| Error::MissingData(format!("utterance {id} not in corpus")))
    }

    pub fn subset(&self, ids: &[String]) -> Result<Vec<&Utterance>> {
        ids.iter().map(|id| self.utterance(id)).collect()
    }
}

/// Draws `v` targets uniform in [-0.9, 0.9]^6 from stream `(seed,
/// "inventory")`, rejecting any candidate closer than `min_sep` (acoustic
/// Euclidean distance under the reference-speaker plant) to an accepted one.
pub fn gen_inventory_custom(seed: u64, v: usize, min_sep: f64) -> Result<Inventory> {
    let plant = SpeakerPlant::rs();
    let mut stream = RngStream::new(seed, "inventory");
    let mut targets: Vec<ArticulatorySample> = Vec::with_capacity(v);
    let mut frames: Vec<AcousticFrame> = Vec::with_capacity(v);
    let mut attempts = 0;
    while targets.len() < v && attempts < INVENTORY_ATTEMPT_CAP {
        attempts += 1;
        let mut arr = [0.0; ARTIC_DIM];
        arr.iter_mut().for_each(|x| *x = stream.next_range(-0.9, 0.9));
        let cand = ArticulatorySample::from_array(arr);
        let cf = plant.synthesize_frame(&cand);
        if frames.iter().all(|f| f.dist(&cf) >= min_sep) {
            targets.push(cand);
            frames.push(cf);
        }
    }
    if targets.len() < v {
        return Err(Error::Generation(format!(
            "only {}/{v} inventory targets reach separation {min_sep} after {attempts} attempts",
            targets.len()
        )));
    }
    Ok(Inventory { targets })
}

pub fn gen_inventory(seed: u64) -> Result<Inventory> {
    gen_inventory_custom(seed, INVENTORY_SIZE, MIN_ACOUSTIC_SEPARATION)
}

#[derive(Debug, Clone)]
pub struct TrajectoryParams {
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_hold: usize,
    pub max_hold: usize,
    pub sigma: f64,
    pub kernel_half_width: usize,
    pub clamp: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            min_segments: 3,
            max_segments: 8,
            min_hold: 8,
            max_hold: 20,
            sigma: 3.0,
            kernel_half_width: 9,
            clamp: 0.98,
        }
    }
}

/// Normalized Gaussian smoothing with symmetric reflect padding. Kernel
/// weights exp(-k^2 / (2 sigma^2)) for k in [-half, half], normalized by
/// their ascending-k sum; accumulation runs in ascending k. Both orders are
/// part of the determinism contract.
pub fn gaussian_smooth(xs: &[f64], sigma: f64, half: usize) -> Vec<f64> {
    let t = xs.len();
    if t == 0 {
        return Vec::new();
    }
    let hw = half as i64;
    let mut w = Vec::with_capacity(2 * half + 1);
    for k in -hw..=hw {
        w.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let mut out = vec![0.0; t];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (ki, wk) in w.iter().enumerate() {
            let mut idx = i as i64 + ki as i64 - hw;
            // reflect repeatedly so inputs shorter than the kernel still work
            loop {
                if idx < 0 {
                    idx = -idx - 1;
                } else if idx >= t as i64 {
                    idx = 2 * t as i64 - 1 - idx;
                } else {
                    break;
                }
            }
            acc += wk * xs[idx as usize];
        }
        *o = acc;
    }
    out
}

/// Piecewise-constant walk through the inventory, Gaussian-smoothed per
/// dimension and clamped to [-clamp, clamp]. Segment boundaries are recorded
/// before smoothing.
pub fn gen_trajectory(
    inventory: &Inventory,
    stream: &mut RngStream,
    params: &TrajectoryParams,
) -> (Vec<ArticulatorySample>, Vec<Segment>) {
    assert!(!inventory.is_empty(), "empty inventory");
    assert!(params.min_segments >= 1 && params.max_segments >= params.min_segments);
    assert!(params.min_hold >= 1 && params.max_hold >= params.min_hold);

    let span_m = (params.max_segments - params.min_segments + 1) as u64;
    let m = params.min_segments + stream.next_below(span_m) as usize;
    let span_h = (params.max_hold - params.min_hold + 1) as u64;

    let mut segments = Vec::with_capacity(m);
    let mut raw: Vec<[f64; ARTIC_DIM]> = Vec::new();
    for _ in 0..m {
        let label = stream.next_below(inventory.len() as u64) as usize;
        let hold = params.min_hold + stream.next_below(span_h) as usize;
        let start = raw.len();
        let target = inventory.targets[label].to_array();
        raw.resize(start + hold, target);
        segments.push(Segment {
            label,
            start,
            end: start + hold,
        });
    }

    let t = raw.len();
    let mut smoothed = vec![[0.0; ARTIC_DIM]; t];
    for d in 0..ARTIC_DIM {
        let col: Vec<f64> = raw.iter().map(|r| r[d]).collect();
        let sm = gaussian_smooth(&col, params.sigma, params.kernel_half_width);
        for (row, v) in smoothed.iter_mut().zip(sm) {
            row[d] = v.clamp(-params.clamp, params.clamp);
        }
    }
    let artic = smoothed
        .into_iter()
        .map(ArticulatorySample::from_array)
        .collect();
    (artic, segments)
}

/// Shuffles indices with stream `(seed, "split")`; the first floor(n/5) are
/// test, the next floor((n - test)/5) are validation, the rest train.
pub fn derive_split(ids: &[String], seed: u64) -> CorpusSplit {
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed, "split").shuffle(&mut order);
    let n_test = n / 5;
    let n_val = (n - n_test) / 5;
    let pick = |range: std::ops::Range<usize>| -> Vec<String> {
        order[range].iter().map(|&i| ids[i].clone()).collect()
    };
    CorpusSplit {
        test: pick(0..n_test),
        val: pick(n_test..n_test + n_val),
        train: pick(n_test + n_val..n),
    }
}

/// Generates `n` utterances for one speaker. The inventory and all
/// trajectories depend only on `seed`, so corpora generated for different
/// speakers from the same seed share articulations and differ only in
/// acoustics.
pub fn gen_corpus(speaker: &SpeakerPlant, n: usize, seed: u64) -> Result<Corpus> {
    if n < 5 {
        return Err(Error::Config(format!(
            "corpus size {n}: split would be empty (need n >= 5)"
        )));
    }
    let inventory = gen_inventory(seed)?;
    let params = TrajectoryParams::default();
    let mut utterances = Vec::with_capacity(n);
    for i in 0..n {
        let mut stream = RngStream::new(seed, &format!("traj/{i}"));
        let (artic, segments) = gen_trajectory(&inventory, &mut stream, &params);
        let frames = speaker.synthesize_utterance(&artic);
        utterances.push(Utterance {
            id: format!("u{i:04}"),
            speaker_id: speaker.speaker_id.clone(),
            frames,
            artic: Some(artic),
            segments: Some(segments),
        });
    }
    let ids: Vec<String> = utterances.iter().map(|u| u.id.clone()).collect();
    let split = derive_split(&ids, seed);
    Ok(Corpus {
        header: CorpusHeader {
            format_version: FORMAT_VERSION,
            seed,
            n,
            speaker: speaker.speaker_id.clone(),
            lambda: speaker.lambda,
        },
        utterances,
        split,
    })
}

// ---- serialization ----
//
// Line-delimited JSON: one header line, then one line per utterance. Floats
// are written with 17 significant digits ({:.16e}), which round-trips f64
// exactly and keeps the files diffable.

struct SigFig17;

impl serde_json::ser::Formatter for SigFig17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub(crate) fn json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFig17);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Generation(format!("serialize: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format_version: u32,
    seed: u64,
    n: usize,
    speaker: String,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct UttLine {
    id: String,
    speaker: String,
    frames: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    artic: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<(usize, usize, usize)>>,
}

impl UttLine {
    fn from_utterance(u: &Utterance) -> Self {
        UttLine {
            id: u.id.clone(),
            speaker: u.speaker_id.clone(),
            frames: u.frames.iter().map(|f| f.bands.to_vec()).collect(),
            artic: u
                .artic
                .as_ref()
                .map(|a| a.iter().map(|s| s.to_array().to_vec()).collect()),
            segments: u
                .segments
                .as_ref()
                .map(|segs| segs.iter().map(|s| (s.label, s.start, s.end)).collect()),
        }
    }

    fn into_utterance(self, line: usize) -> Result<Utterance> {
        let parse_err = |msg: String| Error::Parse { line, msg };
        let mut frames = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            if f.len() != ACOUSTIC_DIM {
                return Err(parse_err(format!(
                    "frame with {} bands, expected {ACOUSTIC_DIM}",
                    f.len()
                )));
            }
            let mut bands = [0.0; ACOUSTIC_DIM];
            bands.copy_from_slice(f);
            frames.push(AcousticFrame { bands });
        }
        let artic = match self.artic {
            None => None,
            Some(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                for r in &rows {
                    if r.len() != ARTIC_DIM {
                        return Err(parse_err(format!(
                            "articulatory sample with {} components, expected {ARTIC_DIM}",
                            r.len()
                        )));
                    }
                    let mut arr = [0.0; ARTIC_DIM];
                    arr.copy_from_slice(r);
                    out.push(ArticulatorySample::from_array(arr));
                }
                Some(out)
            }
        };
        let segments = self.segments.map(|segs| {
            segs.into_iter()
                .map(|(label, start, end)| Segment { label, start, end })
                .collect()
        });
        let utt = Utterance {
            id: self.id,
            speaker_id: self.speaker,
            frames,
            artic,
            segments,
        };
        utt.validate()
            .map_err(|e| parse_err(format!("invalid utterance: {e}")))?;
        Ok(utt)
    }
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = HeaderLine {
        format_version: corpus.header.format_version,
        seed: corpus.header.seed,
        n: corpus.header.n,
        speaker: corpus.header.speaker.clone(),
        lambda: corpus.header.lambda,
    };
    writeln!(out, "{}", json_line(&header)?)?;
    for u in &corpus.utterances {
        writeln!(out, "{}", json_line(&UttLine::from_utterance(u))?)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_text) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file, expected header line".into(),
    })?;
    let header: HeaderLine = serde_json::from_str(header_text).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("header: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "format_version {} unsupported (expected {FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    let mut utterances = Vec::with_capacity(header.n);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: UttLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        utterances.push(rec.into_utterance(lineno)?);
    }
    if utterances.len() != header.n {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header declares n={} but file holds {} utterances",
                header.n,
                utterances.len()
            ),
        });
    }
    let ids: Vec<String> = utterances.iter().map(|u| u.id.clone()).collect();
    let split = derive_split(&ids, header.seed);
    Ok(Corpus {
        header: CorpusHeader {
            format_version: header.format_version,
            seed: header.seed,
            n: header.n,
            speaker: header.speaker,
            lambda: header.lambda,
        },
        utterances,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventory_deterministic_and_separated() {
        let a = gen_inventory(7).unwrap();
        let b = gen_inventory(7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), INVENTORY_SIZE);
        let plant = SpeakerPlant::rs();
        let frames: Vec<AcousticFrame> =
            a.targets.iter().map(|t| plant.synthesize_frame(t)).collect();
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                assert!(frames[i].dist(&frames[j]) >= MIN_ACOUSTIC_SEPARATION);
            }
        }
        for t in &a.targets {
            for v in t.to_array() {
                assert!((-0.9..=0.9).contains(&v));
            }
        }
    }

    #[test]
    fn single_target_inventory_valid() {
        let inv = gen_inventory_custom(3, 1, MIN_ACOUSTIC_SEPARATION).unwrap();
        assert_eq!(inv.len(), 1);
    }

    #[test]
    fn unattainable_separation_errors() {
        let err = gen_inventory_custom(7, 8, 50.0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
    }

    #[test]
    fn single_segment_trajectory_is_constant() {
        let inv = gen_inventory(7).unwrap();
        let params = TrajectoryParams {
            min_segments: 1,
            max_segments: 1,
            ..TrajectoryParams::default()
        };
        let mut stream = RngStream::new(5, "traj/0");
        let (artic, segments) = gen_trajectory(&inv, &mut stream, &params);
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].start, 0);
        assert_eq!(segments[0].end, artic.len());
        let target = inv.targets[segments[0].label].to_array();
        for a in &artic {
            for (got, want) in a.to_array().iter().zip(&target) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn trajectories_stay_clamped_and_tiled() {
        let inv = gen_inventory(7).unwrap();
        let params = TrajectoryParams::default();
        for i in 0..50 {
            let mut stream = RngStream::new(123, &format!("traj/{i}"));
            let (artic, segments) = gen_trajectory(&inv, &mut stream, &params);
            assert!(artic.len() >= params.min_segments * params.min_hold);
            for a in &artic {
                for v in a.to_array() {
                    assert!(v.abs() <= 0.98);
                }
            }
            let mut cursor = 0;
            for s in &segments {
                assert_eq!(s.start, cursor);
                assert!(s.end > s.start);
                cursor = s.end;
            }
            assert_eq!(cursor, artic.len());
        }
    }

    #[test]
    fn step_response_matches_kernel_oracle() {
        // 20 zeros then 20 ones; boundary frame B = 20
        let mut xs = vec![0.0; 20];
        xs.extend(vec![1.0; 20]);
        let y = gaussian_smooth(&xs, 3.0, 9);
        assert!((y[20] - 0.5665879980).abs() < 1e-9, "y[B] = {}", y[20]);
        assert!((y[19] - 0.4334120020).abs() < 1e-9, "y[B-1] = {}", y[19]);
        let midpoint = 0.5 * (y[19] + y[20]);
        assert!((midpoint - 0.5).abs() < 1e-12, "midpoint {midpoint}");

        // unit impulse recovers the center kernel weight
        let mut imp = vec![0.0; 41];
        imp[20] = 1.0;
        let z = gaussian_smooth(&imp, 3.0, 9);
        assert!((z[20] - 0.1331759960).abs() < 1e-9, "w0 = {}", z[20]);
    }

    #[test]
    fn smoothing_of_empty_and_short_inputs() {
        assert!(gaussian_smooth(&[], 3.0, 9).is_empty());
        // shorter than the kernel: smoothing of a constant is still constant
        let y = gaussian_smooth(&[0.4; 5], 3.0, 9);
        for v in y {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn per_frame_step_bound() {
        let corpus = gen_corpus(&SpeakerPlant::rs(), 30, 11).unwrap();
        let mut worst = 0.0f64;
        for u in &corpus.utterances {
            let artic = u.artic.as_ref().unwrap();
            for w in artic.windows(2) {
                let step = w[0]
                    .to_array()
                    .iter()
                    .zip(w[1].to_array())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                worst = worst.max(step);
            }
        }
        assert!(worst <= 0.35, "max articulatory step {worst}");
    }

    #[test]
    fn split_proportions_exact() {
        let corpus = gen_corpus(&SpeakerPlant::rs(), 100, 7).unwrap();
        assert_eq!(corpus.split.test.len(), 20);
        assert_eq!(corpus.split.val.len(), 16);
        assert_eq!(corpus.split.train.len(), 64);
        let mut all: Vec<&String> = corpus
            .split
            .train
            .iter()
            .chain(&corpus.split.val)
            .chain(&corpus.split.test)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn same_seed_speakers_share_articulation() {
        let rs = gen_corpus(&SpeakerPlant::rs(), 8, 21).unwrap();
        let s1 = gen_corpus(&SpeakerPlant::s1(), 8, 21).unwrap();
        for (a, b) in rs.utterances.iter().zip(&s1.utterances) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.artic, b.artic);
            assert_eq!(a.segments, b.segments);
            assert_ne!(a.frames, b.frames);
        }
        assert_eq!(rs.split, s1.split);
    }

    #[test]
    fn corpus_size_floor() {
        assert!(gen_corpus(&SpeakerPlant::rs(), 4, 7).is_err());
        assert!(gen_corpus(&SpeakerPlant::rs(), 5, 7).is_ok());
    }

    #[test]
    fn generated_utterances_validate() {
        let corpus = gen_corpus(&SpeakerPlant::s2(), 10, 3).unwrap();
        for u in &corpus.utterances {
            u.validate().unwrap();
        }
    }
}
