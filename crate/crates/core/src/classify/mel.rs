//! Log-mel spectrogram: HTK mel scale, triangular filters, power in dB.

use serde::{Deserialize, Serialize};

use crate::dsp::{next_pow2, SpectrumAnalyzer};
use crate::error::{Error, Result};

/// Lower clamp on filter-bank power before the log.
const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandNormalization {
    #[default]
    PerBandMeanVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub normalization: BandNormalization,
    /// Longest analysed stretch; longer segments are truncated.
    pub max_patch_s: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            win_ms: 25.0,
            hop_ms: 10.0,
            normalization: BandNormalization::PerBandMeanVariance,
            max_patch_s: 4.1,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || !(self.win_ms > 0.0) || !(self.hop_ms > 0.0) || !(self.max_patch_s > 0.0) {
            return Err(Error::Config(format!("invalid mel configuration {self:?}")));
        }
        Ok(())
    }

    pub fn win_samples(&self, fs: u32) -> usize {
        ((self.win_ms * f64::from(fs) / 1000.0).round() as usize).max(2)
    }

    pub fn hop_samples(&self, fs: u32) -> usize {
        ((self.hop_ms * f64::from(fs) / 1000.0).round() as usize).max(1)
    }

    /// FFT size: at least the window and at least `fs / 8` points, so bins
    /// are at most 8 Hz wide and the narrow low bands each cover a bin.
    pub fn n_fft(&self, fs: u32) -> usize {
        next_pow2(self.win_samples(fs).max(fs as usize / 8))
    }

    /// Frame count of a full-length patch.
    pub fn max_frames(&self, fs: u32) -> usize {
        let max_len = (self.max_patch_s * f64::from(fs)).round() as usize;
        frame_count(max_len, self.win_samples(fs), self.hop_samples(fs))
    }
}

/// Frames for `len` samples; anything shorter than a window gives one frame.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len <= win {
        1
    } else {
        1 + (len - win) / hop
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels` triangles between 0 Hz and Nyquist, rows over `n_fft / 2 + 1`
/// bins, peak weight 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, fs: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(fs) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(fs) / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-mel frames of one segment, in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub n_mels: usize,
    /// Row-major `[frame][band]`.
    pub frames: Vec<Vec<f64>>,
}

impl LogMel {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Fixed-size patch of `n_frames` rows, zero-padded or truncated on the
    /// right, and the number of rows that hold real frames.
    pub fn patch(&self, n_frames: usize) -> (Vec<Vec<f64>>, usize) {
        let valid = self.frames.len().min(n_frames);
        let mut rows: Vec<Vec<f64>> = self.frames[..valid].to_vec();
        rows.resize(n_frames, vec![0.0; self.n_mels]);
        (rows, valid)
    }
}

/// Reusable log-mel extractor for one sample rate.
pub struct MelExtractor {
    config: MelConfig,
    fs: u32,
    analyzer: SpectrumAnalyzer,
    filters: Vec<Vec<(usize, f64)>>,
    mags: Vec<f64>,
}

impl MelExtractor {
    pub fn new(config: &MelConfig, fs: u32) -> Result<Self> {
        config.validate()?;
        let win = config.win_samples(fs);
        let n_fft = config.n_fft(fs);
        let filters = mel_filterbank(config.n_mels, n_fft, fs)
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|(_, w)| *w > 0.0)
                    .collect::<Vec<_>>()
            })
            .collect();
        let analyzer = SpectrumAnalyzer::new(win, n_fft);
        let mags = vec![0.0; analyzer.n_bins()];
        Ok(Self {
            config: config.clone(),
            fs,
            analyzer,
            filters,
            mags,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Log-mel frames of `samples`, truncated to the maximum patch length.
    pub fn log_mel(&mut self, samples: &[f32]) -> LogMel {
        let win = self.config.win_samples(self.fs);
        let hop = self.config.hop_samples(self.fs);
        let max_len = (self.config.max_patch_s * f64::from(self.fs)).round() as usize;
        let x = &samples[..samples.len().min(max_len)];
        let n = frame_count(x.len(), win, hop);
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            self.analyzer.magnitudes(x, (i * hop) as isize, &mut self.mags);
            let row = self
                .filters
                .iter()
                .map(|f| {
                    let p: f64 = f.iter().map(|&(k, w)| w * self.mags[k] * self.mags[k]).sum();
                    10.0 * p.max(POWER_FLOOR).log10()
                })
                .collect();
            frames.push(row);
        }
        LogMel {
            n_mels: self.config.n_mels,
            frames,
        }
    }
}
