//! Per-frame detection features on a 1 ms grid.
//!
//! Each frame carries its time-domain RMS and energy, a spectral energy
//! profile in dB (relative to the loudest spectral bin of the whole clip,
//! averaged across frequency and smoothed over time), and the normalised
//! variants used by the detector. Thresholds are the medians of the
//! frame-wise distributions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{median_lower, moving_average, next_pow2, SpectrumAnalyzer};
use crate::error::{Error, Result};

/// Detection frames per second.
pub const FRAME_RATE: u32 = 1000;

/// Minimum number of frames a clip must provide.
pub const MIN_FRAMES: usize = 10;

/// Settings for the spectral energy profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// STFT window length in milliseconds; the hop is one detection frame.
    pub win_ms: f64,
    /// Width of the centered moving average, in frames (odd).
    pub smooth_frames: usize,
    /// Lower clamp for per-bin dB values.
    pub floor_db: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            win_ms: 4.0,
            smooth_frames: 5,
            floor_db: -100.0,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.win_ms.is_finite() && self.win_ms > 0.0) {
            return Err(Error::Config(format!("win_ms must be positive, got {}", self.win_ms)));
        }
        if self.smooth_frames == 0 || self.smooth_frames % 2 == 0 {
            return Err(Error::Config(format!(
                "smooth_frames must be odd and >= 1, got {}",
                self.smooth_frames
            )));
        }
        if !(self.floor_db.is_finite() && self.floor_db < 0.0) {
            return Err(Error::Config(format!("floor_db must be negative, got {}", self.floor_db)));
        }
        Ok(())
    }
}

/// Samples per 1 ms frame for a sample rate.
pub fn frame_len(sample_rate: u32) -> usize {
    ((f64::from(sample_rate) / f64::from(FRAME_RATE)).round() as usize).max(1)
}

/// Time-domain frame features (RMS and energy).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame_len_samples: usize,
    pub rms: Vec<f64>,
    pub energy: Vec<f64>,
}

/// RMS and energy over non-overlapping 1 ms frames. The trailing partial
/// frame is discarded.
pub fn frame_features(clip: &AudioClip) -> Result<FrameFeatures> {
    let n = frame_len(clip.sample_rate());
    let frames = clip.len() / n;
    if frames < MIN_FRAMES {
        return Err(Error::ClipTooShort {
            frames,
            required: MIN_FRAMES,
        });
    }
    let mut rms = Vec::with_capacity(frames);
    let mut energy = Vec::with_capacity(frames);
    for frame in clip.samples().chunks_exact(n) {
        let e: f64 = frame.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        energy.push(e);
        rms.push((e / n as f64).sqrt());
    }
    Ok(FrameFeatures {
        frame_len_samples: n,
        rms,
        energy,
    })
}

/// Spectral energy profile on the detection grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    /// Per-frame mean over frequency of the clamped dB magnitude.
    pub energy_db: Vec<f64>,
    pub energy_db_smooth: Vec<f64>,
    /// Set when the clip has no spectral content at all.
    pub silent: bool,
}

/// dB energy profile with a global reference equal to the largest spectral
/// magnitude in the clip.
///
/// Frame `i` of the profile is the STFT frame centered on detection frame
/// `i`; samples beyond the clip edges count as zero.
pub fn energy_db_profile(clip: &AudioClip, cfg: &ProfileConfig) -> Result<EnergyProfile> {
    cfg.validate()?;
    let fs = clip.sample_rate();
    let n = frame_len(fs);
    let frames = clip.len() / n;
    let win = ((cfg.win_ms * f64::from(fs) / 1000.0).round() as usize).max(2);
    if clip.len() < win || frames == 0 {
        return Err(Error::ClipTooShort {
            frames,
            required: MIN_FRAMES,
        });
    }
    let mut analyzer = SpectrumAnalyzer::new(win, next_pow2(win));
    let mut mags = vec![0.0; analyzer.n_bins()];
    let samples = clip.samples();
    let start_of = |i: usize| (i * n + n / 2) as isize - (win / 2) as isize;

    let mut global_max = 0.0f64;
    for i in 0..frames {
        analyzer.magnitudes(samples, start_of(i), &mut mags);
        global_max = mags.iter().copied().fold(global_max, f64::max);
    }
    if global_max <= 0.0 {
        let floor = vec![cfg.floor_db; frames];
        return Ok(EnergyProfile {
            energy_db: floor.clone(),
            energy_db_smooth: floor,
            silent: true,
        });
    }

    let n_bins = mags.len() as f64;
    let mut energy_db = Vec::with_capacity(frames);
    for i in 0..frames {
        analyzer.magnitudes(samples, start_of(i), &mut mags);
        let sum: f64 = mags
            .iter()
            .map(|&m| {
                if m > 0.0 {
                    (20.0 * (m / global_max).log10()).max(cfg.floor_db)
                } else {
                    cfg.floor_db
                }
            })
            .sum();
        energy_db.push((sum / n_bins).min(0.0));
    }
    let energy_db_smooth = moving_average(&energy_db, cfg.smooth_frames);
    Ok(EnergyProfile {
        energy_db,
        energy_db_smooth,
        silent: false,
    })
}

/// All per-frame series used by detection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureTrack {
    pub sample_rate: u32,
    pub frame_len_samples: usize,
    pub rms: Vec<f64>,
    pub energy: Vec<f64>,
    pub energy_db: Vec<f64>,
    pub energy_db_smooth: Vec<f64>,
    pub rms_norm: Vec<f64>,
    /// Smoothed dB energy minus the baseline (dB difference form).
    pub energy_norm: Vec<f64>,
    /// First difference of the smoothed dB profile; element 0 is 0.
    pub energy_delta: Vec<f64>,
    pub baseline_rms: f64,
    pub baseline_energy: f64,
}

impl FrameFeatureTrack {
    pub fn len(&self) -> usize {
        self.rms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rms.is_empty()
    }

    pub fn frame_rate(&self) -> u32 {
        FRAME_RATE
    }

    /// Write every per-frame series as CSV, one row per frame.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "time_s",
            "rms",
            "energy",
            "energy_db_smooth",
            "rms_norm",
            "energy_norm",
            "energy_delta",
        ])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                format!("{:.3}", i as f64 / f64::from(FRAME_RATE)),
                self.rms[i].to_string(),
                self.energy[i].to_string(),
                self.energy_db_smooth[i].to_string(),
                self.rms_norm[i].to_string(),
                self.energy_norm[i].to_string(),
                self.energy_delta[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Baseline and normalised series.
///
/// The energy baseline is the median of the smoothed profile; the RMS
/// baseline is the mean RMS over frames at or below that median.
pub fn normalize(
    sample_rate: u32,
    features: FrameFeatures,
    profile: EnergyProfile,
) -> Result<FrameFeatureTrack> {
    let FrameFeatures {
        frame_len_samples,
        rms,
        energy,
    } = features;
    if profile.energy_db_smooth.len() != rms.len() {
        return Err(Error::Config(format!(
            "profile has {} frames, features have {}",
            profile.energy_db_smooth.len(),
            rms.len()
        )));
    }
    if profile.silent {
        return Err(Error::SilentBaseline);
    }
    let smooth = profile.energy_db_smooth;
    let baseline_energy = median_lower(&smooth).ok_or(Error::SilentBaseline)?;
    let (sum, count) = rms
        .iter()
        .zip(&smooth)
        .filter(|(_, &e)| e <= baseline_energy)
        .fold((0.0, 0usize), |(s, c), (&r, _)| (s + r, c + 1));
    let baseline_rms = if count > 0 { sum / count as f64 } else { 0.0 };
    if !(baseline_rms > 0.0) {
        return Err(Error::SilentBaseline);
    }
    let rms_norm = rms.iter().map(|r| r / baseline_rms).collect();
    let energy_norm = smooth.iter().map(|e| e - baseline_energy).collect();
    let energy_delta = std::iter::once(0.0)
        .chain(smooth.windows(2).map(|w| w[1] - w[0]))
        .collect();
    Ok(FrameFeatureTrack {
        sample_rate,
        frame_len_samples,
        rms,
        energy,
        energy_db: profile.energy_db,
        energy_db_smooth: smooth,
        rms_norm,
        energy_norm,
        energy_delta,
        baseline_rms,
        baseline_energy,
    })
}

/// Frame features, energy profile and normalisation in one call.
pub fn analyze(clip: &AudioClip, cfg: &ProfileConfig) -> Result<FrameFeatureTrack> {
    let features = frame_features(clip)?;
    let profile = energy_db_profile(clip, cfg)?;
    normalize(clip.sample_rate(), features, profile)
}

/// Median-based detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub thr_rms: f64,
    pub thr_energy_delta: f64,
    pub thr_energy_rel: f64,
}

pub fn thresholds(track: &FrameFeatureTrack) -> ThresholdSet {
    thresholds_pooled(std::slice::from_ref(track))
}

/// Thresholds over the concatenated series of several tracks, e.g. all
/// channels of one subject.
pub fn thresholds_pooled(tracks: &[FrameFeatureTrack]) -> ThresholdSet {
    let pool = |f: fn(&FrameFeatureTrack) -> &Vec<f64>| -> f64 {
        let all: Vec<f64> = tracks.iter().flat_map(|t| f(t).iter().copied()).collect();
        median_lower(&all).unwrap_or(0.0)
    };
    ThresholdSet {
        thr_rms: pool(|t| &t.rms_norm),
        thr_energy_delta: pool(|t| &t.energy_delta),
        thr_energy_rel: pool(|t| &t.energy_norm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = rand_distr::Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| rng.sample(dist)).collect()
    }

    #[test]
    fn constant_clip_features() {
        let clip = AudioClip::new(vec![0.5; 8000], 8000).unwrap();
        let f = frame_features(&clip).unwrap();
        assert_eq!(f.frame_len_samples, 8);
        assert_eq!(f.rms.len(), 1000);
        assert!(f.rms.iter().all(|&r| (r - 0.5).abs() < 1e-12));
        assert!(f.energy.iter().all(|&e| (e - 2.0).abs() < 1e-12));
    }

    #[test]
    fn zero_clip_features() {
        let clip = AudioClip::new(vec![0.0; 800], 8000).unwrap();
        let f = frame_features(&clip).unwrap();
        assert!(f.rms.iter().chain(&f.energy).all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_frame() {
        // [3,4,0,0,0,0,0,0]/5 followed by silence: rms = sqrt(1/8), energy = 1
        let mut s = vec![0.6f32, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        s.resize(80, 0.0);
        let f = frame_features(&AudioClip::new(s, 8000).unwrap()).unwrap();
        assert!((f.rms[0] - 0.353_553_390_593_273_8).abs() < 1e-7);
        assert!((f.energy[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn partial_frame_dropped_and_short_clip_rejected() {
        let f = frame_features(&AudioClip::new(vec![0.1; 8 * 12 + 5], 8000).unwrap()).unwrap();
        assert_eq!(f.rms.len(), 12);
        assert!(matches!(
            frame_features(&AudioClip::new(vec![0.1; 79], 8000).unwrap()),
            Err(Error::ClipTooShort { frames: 9, .. })
        ));
    }

    #[test]
    fn silent_clip_profile_sits_on_floor() {
        let clip = AudioClip::new(vec![0.0; 8000], 8000).unwrap();
        let p = energy_db_profile(&clip, &ProfileConfig::default()).unwrap();
        assert!(p.silent);
        assert!(p.energy_db_smooth.iter().all(|&v| v == -100.0));
        assert!(matches!(
            analyze(&clip, &ProfileConfig::default()),
            Err(Error::SilentBaseline)
        ));
    }

    #[test]
    fn profile_is_non_positive_and_peaks_in_burst() {
        let fs = 8000;
        let mut x = noise(fs as usize, 1e-3, 7);
        for i in 0..160 {
            let t = i as f64 / f64::from(fs);
            x[4000 + i] += 0.5 * (2.0 * std::f64::consts::PI * 400.0 * t).sin();
        }
        let clip = AudioClip::from_f64(&x, fs).unwrap();
        let p = energy_db_profile(&clip, &ProfileConfig::default()).unwrap();
        assert!(p.energy_db.iter().all(|&v| v <= 0.0));
        let argmax = p
            .energy_db
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((500..520).contains(&argmax), "peak frame {argmax}");
        let inside = p.energy_db_smooth[505..515].iter().copied().fold(f64::INFINITY, f64::min);
        let outside = p.energy_db_smooth[..480]
            .iter()
            .chain(&p.energy_db_smooth[540..])
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(outside <= inside);
    }

    #[test]
    fn tone_profile_is_flat_after_warm_up() {
        let fs = 8000;
        let x: Vec<f64> = (0..fs as usize)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / f64::from(fs)).sin())
            .collect();
        let p = energy_db_profile(&AudioClip::from_f64(&x, fs).unwrap(), &ProfileConfig::default())
            .unwrap();
        let body = &p.energy_db_smooth[20..980];
        let lo = body.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = body.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 3.0, "spread {}", hi - lo);
    }

    #[test]
    fn normalisation_and_thresholds_on_noise() {
        let clip = AudioClip::from_f64(&noise(16_000, 0.01, 3), 8000).unwrap();
        let t = analyze(&clip, &ProfileConfig::default()).unwrap();
        assert_eq!(t.baseline_energy, median_lower(&t.energy_db_smooth).unwrap());
        let below = t.energy_norm.iter().filter(|&&e| e < 0.0).count() as f64 / t.len() as f64;
        assert!((below - 0.5).abs() < 0.01, "{below}");
        let thr = thresholds(&t);
        assert_eq!(thr.thr_energy_rel, 0.0);
        assert_eq!(t.energy_delta[0], 0.0);
        for i in 0..t.len() {
            assert!((t.energy[i] - 8.0 * t.rms[i] * t.rms[i]).abs() <= 1e-9 * t.energy[i].max(1.0));
        }
    }

    #[test]
    fn gain_leaves_normalised_series_unchanged() {
        let x = noise(16_000, 0.004, 11);
        let a = analyze(&AudioClip::from_f64(&x, 8000).unwrap(), &ProfileConfig::default()).unwrap();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let b = analyze(&AudioClip::from_f64(&y, 8000).unwrap(), &ProfileConfig::default()).unwrap();
        for i in 0..a.len() {
            assert!((a.rms_norm[i] - b.rms_norm[i]).abs() <= 1e-6 * a.rms_norm[i].max(1e-12));
            assert!((a.energy_norm[i] - b.energy_norm[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn threshold_examples() {
        let mk = |rms_norm: Vec<f64>, energy_norm: Vec<f64>, delta: Vec<f64>| FrameFeatureTrack {
            sample_rate: 8000,
            frame_len_samples: 8,
            rms: vec![0.0; rms_norm.len()],
            energy: vec![0.0; rms_norm.len()],
            energy_db: vec![0.0; rms_norm.len()],
            energy_db_smooth: vec![0.0; rms_norm.len()],
            rms_norm,
            energy_norm,
            energy_delta: delta,
            baseline_rms: 1.0,
            baseline_energy: 0.0,
        };
        let t = mk(
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![-1.0, 0.0, 2.0, -3.0, 1.0],
            vec![0.0; 5],
        );
        let thr = thresholds(&t);
        assert_eq!(thr.thr_rms, 3.0);
        assert_eq!(thr.thr_energy_rel, 0.0);
        assert_eq!(thr.thr_energy_delta, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(ProfileConfig { smooth_frames: 4, ..Default::default() }.validate().is_err());
        assert!(ProfileConfig { win_ms: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProfileConfig::default().validate().is_ok());
    }

    #[test]
    fn csv_dump_has_one_row_per_frame() {
        let clip = AudioClip::from_f64(&noise(800, 0.01, 1), 8000).unwrap();
        let t = analyze(&clip, &ProfileConfig::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), t.len() + 1);
        assert!(text.starts_with("index,time_s,rms,energy,energy_db_smooth"));
    }
}
