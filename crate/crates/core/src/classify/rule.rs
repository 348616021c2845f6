//! Deterministic decision tree over duration, amplitude lobes and
//! harmonicity.
//!
//! Order of tests: harmonic stack held for long enough → HS; short single
//! lobe → SB; several lobes split by quiet gaps → MB; long gap-free → CRS;
//! otherwise the class whose nominal duration range has the nearest centre.

use serde::{Deserialize, Serialize};

use super::{ClassProbabilities, ClassifyRequest, Classifier};
use crate::audio::{time_to_index, AudioClip};
use crate::detect::EventInterval;
use crate::dsp::{moving_average, next_pow2, SpectrumAnalyzer};
use crate::error::{Error, Result};
use crate::framefeat::{self, ProfileConfig};
use crate::patterns::{PatternLabel, PATTERN_SPECS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub harm_win_ms: f64,
    pub harm_hop_ms: f64,
    /// Spectral peaks weaker than this (dB below the frame maximum) are
    /// ignored.
    pub peak_floor_db: f64,
    pub max_peaks: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Allowed deviation of a peak from an integer multiple of f0.
    pub harmonic_tol: f64,
    pub min_harmonics: usize,
    /// Relative f0 change tolerated between consecutive frames.
    pub f0_stability: f64,
    pub min_harmonic_ms: f64,
    /// Frames whose smoothed squared normalised RMS is below this level
    /// (dB) count as quiet.
    pub quiet_db: f64,
    pub quiet_smooth_frames: usize,
    pub min_gap_ms: f64,
    pub sb_max_ms: f64,
    pub crs_min_ms: f64,
    pub winner_prob: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            harm_win_ms: 32.0,
            harm_hop_ms: 2.0,
            peak_floor_db: -30.0,
            max_peaks: 8,
            f0_min_hz: 60.0,
            f0_max_hz: 400.0,
            harmonic_tol: 0.04,
            min_harmonics: 3,
            f0_stability: 0.05,
            min_harmonic_ms: 50.0,
            quiet_db: 3.0,
            quiet_smooth_frames: 5,
            min_gap_ms: 10.0,
            sb_max_ms: 40.0,
            crs_min_ms: 200.0,
            winner_prob: 0.7,
        }
    }
}

/// Intermediate measurements, exposed for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleEvidence {
    pub duration_ms: f64,
    pub lobes: usize,
    /// Length of the longest stretch with a stable harmonic f0.
    pub harmonic_ms: f64,
    pub f0_hz: Option<f64>,
    pub label: PatternLabel,
}

/// Fundamental of one analysis frame, when at least `min_harmonics`
/// distinct harmonics line up on it. The lowest qualifying f0 wins.
fn frame_f0(mags: &[f64], bin_hz: f64, cfg: &RuleConfig) -> Option<f64> {
    let max = mags.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let floor = max * 10f64.powf(cfg.peak_floor_db / 20.0);
    let mut peaks: Vec<usize> = (1..mags.len() - 1)
        .filter(|&k| mags[k] > mags[k - 1] && mags[k] >= mags[k + 1] && mags[k] >= floor)
        .collect();
    peaks.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    peaks.truncate(cfg.max_peaks);
    let freqs: Vec<f64> = peaks
        .iter()
        .map(|&k| {
            let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
            let offset = if a > 0.0 && c > 0.0 {
                let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
                let den = la - 2.0 * lb + lc;
                if den < 0.0 {
                    0.5 * (la - lc) / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            (k as f64 + offset) * bin_hz
        })
        .collect();

    let mut best: Option<f64> = None;
    for &f in &freqs {
        for div in 1..=3 {
            let f0 = f / div as f64;
            if f0 < cfg.f0_min_hz || f0 > cfg.f0_max_hz {
                continue;
            }
            let mut orders: Vec<i64> = freqs
                .iter()
                .filter_map(|&g| {
                    let r = g / f0;
                    let k = r.round();
                    (k >= 1.0 && (r - k).abs() <= cfg.harmonic_tol).then_some(k as i64)
                })
                .collect();
            orders.sort_unstable();
            orders.dedup();
            if orders.len() >= cfg.min_harmonics && best.is_none_or(|b| f0 < b) {
                best = Some(f0);
            }
        }
    }
    best
}

/// Longest stable-f0 stretch in milliseconds and its median f0.
fn harmonic_span(samples: &[f32], fs: u32, cfg: &RuleConfig) -> (f64, Option<f64>) {
    let win = ((cfg.harm_win_ms * f64::from(fs) / 1000.0).round() as usize).max(4);
    let hop = ((cfg.harm_hop_ms * f64::from(fs) / 1000.0).round() as usize).max(1);
    if samples.len() < win {
        return (0.0, None);
    }
    let n_fft = 2 * next_pow2(win);
    let mut an = SpectrumAnalyzer::new(win, n_fft);
    let mut mags = vec![0.0; an.n_bins()];
    let bin_hz = f64::from(fs) / n_fft as f64;
    let hop_ms = hop as f64 * 1000.0 / f64::from(fs);
    let win_ms = win as f64 * 1000.0 / f64::from(fs);

    let mut best_run = 0usize;
    let mut best_f0 = None;
    let mut run = 0usize;
    let mut run_f0s: Vec<f64> = Vec::new();
    let mut prev: Option<f64> = None;
    let mut start = 0;
    while start + win <= samples.len() {
        an.magnitudes(samples, start as isize, &mut mags);
        let f0 = frame_f0(&mags, bin_hz, cfg);
        match (f0, prev) {
            (Some(f), Some(p)) if (f - p).abs() / p < cfg.f0_stability => {
                run += 1;
                run_f0s.push(f);
            }
            (Some(f), _) => {
                run = 1;
                run_f0s.clear();
                run_f0s.push(f);
            }
            (None, _) => {
                run = 0;
                run_f0s.clear();
            }
        }
        if run > best_run {
            best_run = run;
            let mut sorted = run_f0s.clone();
            sorted.sort_by(f64::total_cmp);
            best_f0 = Some(sorted[(sorted.len() - 1) / 2]);
        }
        prev = f0;
        start += hop;
    }
    if best_run == 0 {
        (0.0, None)
    } else {
        ((best_run - 1) as f64 * hop_ms + win_ms, best_f0)
    }
}

/// Count loud lobes after joining those separated by short quiet gaps.
fn count_lobes(rms_norm: &[f64], cfg: &RuleConfig) -> usize {
    let sq: Vec<f64> = rms_norm.iter().map(|r| r * r).collect();
    let width = cfg.quiet_smooth_frames.max(1) | 1;
    let smooth = moving_average(&sq, width);
    let quiet_level = 10f64.powf(cfg.quiet_db / 10.0);
    let min_gap = cfg.min_gap_ms.ceil() as usize;

    let mut lobes = 0usize;
    let mut quiet_run = 0usize;
    let mut seen_loud = false;
    for &v in &smooth {
        if v < quiet_level {
            quiet_run += 1;
        } else {
            if !seen_loud || quiet_run >= min_gap {
                lobes += 1;
            }
            seen_loud = true;
            quiet_run = 0;
        }
    }
    lobes
}

fn nearest_centroid(duration_ms: f64) -> PatternLabel {
    let mut best = PATTERN_SPECS[0];
    for spec in &PATTERN_SPECS[1..] {
        if (duration_ms - spec.centroid_ms()).abs() < (duration_ms - best.centroid_ms()).abs() {
            best = *spec;
        }
    }
    best.label
}

/// Apply the decision tree given per-frame normalised RMS of the event.
pub fn rule_evidence(
    samples: &[f32],
    fs: u32,
    rms_norm: &[f64],
    duration_ms: f64,
    cfg: &RuleConfig,
) -> RuleEvidence {
    let (harmonic_ms, f0_hz) = harmonic_span(samples, fs, cfg);
    let lobes = count_lobes(rms_norm, cfg);
    let label = if harmonic_ms >= cfg.min_harmonic_ms {
        PatternLabel::HS
    } else if duration_ms < cfg.sb_max_ms && lobes <= 1 {
        PatternLabel::SB
    } else if lobes >= 2 {
        PatternLabel::MB
    } else if duration_ms >= cfg.crs_min_ms {
        PatternLabel::CRS
    } else {
        nearest_centroid(duration_ms)
    };
    RuleEvidence {
        duration_ms,
        lobes,
        harmonic_ms,
        f0_hz,
        label,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleClassifier {
    pub config: RuleConfig,
    /// Used only when a request carries no precomputed frame features.
    pub profile: ProfileConfig,
}

impl RuleClassifier {
    pub fn evidence(&self, req: &ClassifyRequest<'_>) -> Result<RuleEvidence> {
        let ev = req.interval;
        if ev.frame_span < 2 {
            return Err(Error::IntervalTooShort {
                frames: ev.frame_span,
            });
        }
        let owned;
        let features = match req.features {
            Some(f) => f,
            None => {
                owned = framefeat::analyze(req.clip, &self.profile)?;
                &owned
            }
        };
        if ev.end_frame > features.len() {
            return Err(Error::SliceOutOfRange {
                start_s: ev.start_s,
                end_s: ev.end_s,
                duration_s: req.clip.duration_s(),
            });
        }
        let fs = req.clip.sample_rate();
        let a = time_to_index(ev.start_s, fs);
        let b = time_to_index(ev.end_s, fs).min(req.clip.len());
        Ok(rule_evidence(
            &req.clip.samples()[a..b],
            fs,
            &features.rms_norm[ev.start_frame..ev.end_frame],
            ev.duration_s() * 1000.0,
            &self.config,
        ))
    }
}

impl Classifier for RuleClassifier {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities> {
        let e = self.evidence(req)?;
        Ok(ClassProbabilities::one_hot_soft(e.label, self.config.winner_prob))
    }

    fn name(&self) -> &str {
        "rule"
    }
}

/// Classify one interval of `clip` with default settings, computing the
/// channel features on the fly.
pub fn rule_classify(clip: &AudioClip, interval: &EventInterval) -> Result<ClassProbabilities> {
    RuleClassifier::default().classify(&ClassifyRequest {
        clip,
        interval,
        features: None,
        model_id: "rule",
    })
}
