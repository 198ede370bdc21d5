//! Synthetic articulatory synthesizer φ: 6 articulatory parameters to an
//! 18-band Bark-scale log-magnitude spectrum, per speaker.
//!
//! The plant is the learner's black box. Nothing outside this module computes
//! or uses dφ/da; training code touches it only through `synthesize_frame`
//! and `synthesize_utterance`, and the plant keeps its own query/clamp
//! counters so a run can prove how often it consulted the box.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::{Error, Result};

pub const ARTIC_DIM: usize = 6;
pub const ACOUSTIC_DIM: usize = 18;

/// Spectral floor added under the log; bounds every band value below by
/// ln(FLOOR) and above by ln(3 + FLOOR) (three unit-amplitude resonances).
pub const FLOOR_DEFAULT: f64 = 1e-3;

/// Vocal-tract scale factors for the three built-in speakers.
pub const LAMBDA_RS: f64 = 1.0;
pub const LAMBDA_S1: f64 = 0.88;
pub const LAMBDA_S2: f64 = 1.12;

/// Minimal spacing enforced between adjacent formants, as a ratio.
const ORDER_MARGIN: f64 = 1.05;

/// One frame of articulatory state. Components are dimensionless positions
/// in [-1, 1]: jaw height, tongue body, tongue dorsum, tongue tip, lip
/// protrusion, lip height.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArticulatorySample {
    pub jh: f64,
    pub tb: f64,
    pub td: f64,
    pub tt: f64,
    pub lp: f64,
    pub lh: f64,
}

impl ArticulatorySample {
    pub fn from_array(a: [f64; ARTIC_DIM]) -> Self {
        ArticulatorySample {
            jh: a[0],
            tb: a[1],
            td: a[2],
            tt: a[3],
            lp: a[4],
            lh: a[5],
        }
    }

    pub fn to_array(self) -> [f64; ARTIC_DIM] {
        [self.jh, self.tb, self.td, self.tt, self.lp, self.lh]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.to_array().iter().enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(v) {
                return Err(Error::Contract(format!(
                    "articulatory component {i} = {v} outside [-1,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn in_domain(&self) -> bool {
        self.to_array().iter().all(|v| (-1.0..=1.0).contains(v))
    }

    fn clamped(self) -> Self {
        let mut a = self.to_array();
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        ArticulatorySample::from_array(a)
    }
}

/// One 18-band acoustic frame: natural-log Bark-band magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticFrame {
    pub bands: [f64; ACOUSTIC_DIM],
}

impl AcousticFrame {
    pub fn dist(&self, other: &AcousticFrame) -> f64 {
        self.bands
            .iter()
            .zip(&other.bands)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Traunmüller/Zwicker-style analytic Bark transform:
/// z = 13 atan(0.00076 f) + 3.5 atan((f/7500)^2). Monotone in f >= 0.
pub fn bark_of_freq(f_hz: f64) -> f64 {
    let r = f_hz / 7500.0;
    13.0 * (0.00076 * f_hz).atan() + 3.5 * (r * r).atan()
}

/// Centers fc_j of the 18 analysis bands: bark(fc_j) = j - 0.5, solved by
/// bisection on [0, 8000]. The iteration count is fixed at 200 (bracket
/// collapses to ulp level, far below the 1e-9 requirement) so that any
/// conforming implementation lands on the same f64.
pub fn band_centers() -> &'static [f64; ACOUSTIC_DIM] {
    static CENTERS: OnceLock<[f64; ACOUSTIC_DIM]> = OnceLock::new();
    CENTERS.get_or_init(|| {
        let mut fc = [0.0; ACOUSTIC_DIM];
        for (j, c) in fc.iter_mut().enumerate() {
            let target = (j + 1) as f64 - 0.5;
            let (mut lo, mut hi) = (0.0f64, 8000.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if bark_of_freq(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            *c = 0.5 * (lo + hi);
        }
        fc
    })
}

/// Articulatory state to three formant/bandwidth pairs in Hz.
///
/// The documented coefficient map alone can invert F1/F2 (and F2/F3) on a few
/// percent of the domain, so adjacent formants are pushed apart to a fixed
/// 1.05 ratio where needed; the guard is the identity on the rest of the
/// domain and keeps F1 < F2 < F3 everywhere. Out-of-range inputs are clamped.
pub fn formant_map(a: &ArticulatorySample, lambda: f64) -> ([f64; 3], [f64; 3]) {
    let c = a.clamped();
    let (jh, tb, td, tt, lp, lh) = (c.jh, c.tb, c.td, c.tt, c.lp, c.lh);
    let u1 = -0.45 * jh - 0.20 * tb + 0.10 * tt - 0.15 * lh + 0.10 * (tb * jh).tanh();
    let u2 = 0.15 * jh + 0.25 * tb + 0.30 * td - 0.30 * lp + 0.10 * (tt * td).tanh();
    let u3 = 0.10 * td + 0.25 * tt - 0.15 * lp + 0.05 * (tb * lp).tanh();
    let f1 = lambda * 500.0 * u1.exp();
    let mut f2 = lambda * 1500.0 * u2.exp();
    let mut f3 = lambda * 2500.0 * u3.exp();
    f2 = f2.max(ORDER_MARGIN * f1);
    f3 = f3.max(ORDER_MARGIN * f2);
    let bw = [80.0 + 0.02 * f1, 80.0 + 0.02 * f2, 80.0 + 0.02 * f3];
    ([f1, f2, f3], bw)
}

/// One speaker's plant: the formant map at a fixed vocal-tract scale, plus
/// usage counters. Queries counts synthesize_frame calls; clamps counts
/// frames whose input left [-1,1] (the "logged warning" for out-of-range
/// input; normal training must keep this at zero).
#[derive(Debug)]
pub struct SpeakerPlant {
    pub speaker_id: String,
    pub lambda: f64,
    pub floor: f64,
    queries: AtomicU64,
    clamps: AtomicU64,
}

impl Clone for SpeakerPlant {
    fn clone(&self) -> Self {
        SpeakerPlant {
            speaker_id: self.speaker_id.clone(),
            lambda: self.lambda,
            floor: self.floor,
            queries: AtomicU64::new(self.queries.load(Ordering::Relaxed)),
            clamps: AtomicU64::new(self.clamps.load(Ordering::Relaxed)),
        }
    }
}

impl SpeakerPlant {
    pub fn new(speaker_id: &str, lambda: f64, floor: f64) -> Result<Self> {
        if !(0.7..=1.4).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda {lambda} outside [0.7, 1.4]"
            )));
        }
        if !(floor > 0.0) {
            return Err(Error::Config(format!("floor {floor} must be positive")));
        }
        Ok(SpeakerPlant {
            speaker_id: speaker_id.to_string(),
            lambda,
            floor,
            queries: AtomicU64::new(0),
            clamps: AtomicU64::new(0),
        })
    }

    pub fn rs() -> Self {
        SpeakerPlant::new("RS", LAMBDA_RS, FLOOR_DEFAULT).unwrap()
    }

    pub fn s1() -> Self {
        SpeakerPlant::new("S1", LAMBDA_S1, FLOOR_DEFAULT).unwrap()
    }

    pub fn s2() -> Self {
        SpeakerPlant::new("S2", LAMBDA_S2, FLOOR_DEFAULT).unwrap()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "RS" => Ok(SpeakerPlant::rs()),
            "S1" => Ok(SpeakerPlant::s1()),
            "S2" => Ok(SpeakerPlant::s2()),
            other => Err(Error::Config(format!(
                "unknown speaker {other:?} (expected RS, S1, or S2)"
            ))),
        }
    }

    /// Number of synthesize_frame evaluations since construction/reset.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Number of frames whose input needed clamping into [-1,1].
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.queries.store(0, Ordering::Relaxed);
        self.clamps.store(0, Ordering::Relaxed);
    }

    /// s̃ = φ(a): resonance energy at each band center from three formants,
    /// E_j = Σ_i 1/(1 + ((fc_j - F_i)/B_i)^2), band j = ln(E_j + floor).
    pub fn synthesize_frame(&self, a: &ArticulatorySample) -> AcousticFrame {
        self.queries.fetch_add(1, Ordering::Relaxed);
        if !a.in_domain() {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        let (formants, bws) = formant_map(a, self.lambda);
        let mut bands = [0.0; ACOUSTIC_DIM];
        for (band, fc) in bands.iter_mut().zip(band_centers()) {
            let mut e = 0.0;
            for (fi, bi) in formants.iter().zip(&bws) {
                let r = (fc - fi) / bi;
                e += 1.0 / (1.0 + r * r);
            }
            *band = (e + self.floor).ln();
        }
        AcousticFrame { bands }
    }

    /// Framewise map of synthesize_frame; length is preserved.
    pub fn synthesize_utterance(&self, traj: &[ArticulatorySample]) -> Vec<AcousticFrame> {
        traj.iter().map(|a| self.synthesize_frame(a)).collect()
    }
}
