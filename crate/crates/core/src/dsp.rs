//! Small numeric helpers shared by the feature, classification and synthesis
//! code.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Exact median; for even lengths the lower of the two central values.
///
/// Returns `None` for an empty slice or when the data contain NaN.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut buf = values.to_vec();
    let k = (buf.len() - 1) / 2;
    let (_, m, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

/// Centered moving average of odd `width`; edges are padded by repeating the
/// first and last values.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    debug_assert!(width % 2 == 1);
    let n = values.len();
    if width <= 1 || n == 0 {
        return values.to_vec();
    }
    let half = width / 2;
    let at = |i: isize| -> f64 { values[i.clamp(0, n as isize - 1) as usize] };
    let mut out = Vec::with_capacity(n);
    let mut acc: f64 = (-(half as isize)..=half as isize).map(at).sum();
    out.push(acc / width as f64);
    for i in 1..n as isize {
        acc += at(i + half as isize) - at(i - 1 - half as isize);
        out.push(acc / width as f64);
    }
    out
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / len as f64).sin();
            s * s
        })
        .collect()
}

/// Windowed magnitude spectra of fixed-size frames.
///
/// Frames are zero-padded to `n_fft` and only the non-negative frequency
/// bins (`n_fft / 2 + 1`) are returned.
pub struct SpectrumAnalyzer {
    window: Vec<f64>,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(win_len: usize, n_fft: usize) -> Self {
        assert!(win_len >= 1 && n_fft >= win_len);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            window: hann(win_len),
            n_fft,
            fft,
            buffer: vec![Complex::default(); n_fft],
            scratch,
        }
    }

    pub fn win_len(&self) -> usize {
        self.window.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Magnitude spectrum of the frame starting at sample `start` (may be
    /// negative); samples outside `signal` count as zero.
    pub fn magnitudes(&mut self, signal: &[f32], start: isize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_bins());
        let n = signal.len() as isize;
        for (k, slot) in self.buffer.iter_mut().enumerate() {
            *slot = if k < self.window.len() {
                let idx = start + k as isize;
                let x = if (0..n).contains(&idx) {
                    f64::from(signal[idx as usize])
                } else {
                    0.0
                };
                Complex::new(x * self.window[k], 0.0)
            } else {
                Complex::default()
            };
        }
        self.fft.process_with_scratch(&mut self.buffer, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buffer) {
            *o = c.norm();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median_lower(&[5.0, 1.0, 3.0, 2.0, 4.0]), Some(3.0));
        assert_eq!(median_lower(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(median_lower(&[]), None);
        assert_eq!(median_lower(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn moving_average_matches_direct_sum() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let w = 7;
        let got = moving_average(&x, w);
        for i in 0..x.len() {
            let direct: f64 = (0..w)
                .map(|k| x[(i as isize + k as isize - 3).clamp(0, 49) as usize])
                .sum::<f64>()
                / w as f64;
            assert!((got[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_peak_at_tone_bin() {
        let fs = 8000.0;
        let sig: Vec<f32> = (0..256)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs).sin() as f32)
            .collect();
        let mut an = SpectrumAnalyzer::new(256, 256);
        let mut mags = vec![0.0; an.n_bins()];
        an.magnitudes(&sig, 0, &mut mags);
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 32);
    }
}
