//! Scripted synthetic recordings with exact ground-truth labels.
//!
//! Events are normalised to unit peak and scaled to `peak_db` (dBFS) over a
//! Gaussian noise floor. Every random draw comes from a ChaCha8 stream keyed
//! by the script seed: stream 0 for the floor, stream `k + 1` for event `k`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{time_to_index, AudioClip, Recording, MIN_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::patterns::{LabelTrack, PatternLabel, Segment, TrackSource, PATTERN_SPECS};

/// Minimum silence between consecutive scripted events.
pub const MIN_SPACING_S: f64 = 0.150;
/// Required peak level of every event over the noise floor.
pub const MIN_PEAK_SNR_DB: f64 = 20.0;

const FADE_S: f64 = 0.005;
const SB_FREQ_HZ: (f64, f64) = (150.0, 800.0);
const MB_BURSTS: (usize, usize) = (2, 6);
const MB_GAP_MS: (f64, f64) = (30.0, 200.0);
const CRS_BAND_HZ: (f64, f64) = (100.0, 1000.0);
const CRS_MOD_DEPTH: (f64, f64) = (0.2, 0.6);
const CRS_MOD_RATE_HZ: (f64, f64) = (3.0, 8.0);
const HS_F0_HZ: (f64, f64) = (80.0, 300.0);
const HS_HARMONICS: (usize, usize) = (3, 4);

/// Optional per-event parameters. Anything left out is drawn from the
/// event's random stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventParams {
    /// Total duration (SB, CRS, HS). MB duration follows from its bursts.
    pub duration_ms: Option<f64>,
    /// Peak level in dBFS.
    pub peak_db: Option<f64>,
    /// SB centre frequency.
    pub freq_hz: Option<f64>,
    /// MB burst durations; its length sets the burst count.
    pub bursts_ms: Option<Vec<f64>>,
    /// MB gaps, one fewer than bursts.
    pub gaps_ms: Option<Vec<f64>>,
    pub n_bursts: Option<usize>,
    /// MB burst centre frequencies, one per burst.
    pub burst_freqs_hz: Option<Vec<f64>>,
    pub mod_depth: Option<f64>,
    pub mod_rate_hz: Option<f64>,
    pub f0_hz: Option<f64>,
    pub n_harmonics: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub label: PatternLabel,
    pub t_start_s: f64,
    #[serde(default)]
    pub params: EventParams,
}

fn default_noise_floor_db() -> f64 {
    -60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScript {
    pub seed: u64,
    pub fs: u32,
    pub duration_s: f64,
    #[serde(default = "default_noise_floor_db")]
    pub noise_floor_db: f64,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
}

/// Fully determined event waveform parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum EventShape {
    Sb { duration_ms: f64, freq_hz: f64 },
    Mb { bursts: Vec<(f64, f64)>, gaps_ms: Vec<f64> },
    Crs { duration_ms: f64, mod_depth: f64, mod_rate_hz: f64 },
    Hs { duration_ms: f64, f0_hz: f64, n_harmonics: usize },
}

impl EventShape {
    pub fn label(&self) -> PatternLabel {
        match self {
            EventShape::Sb { .. } => PatternLabel::SB,
            EventShape::Mb { .. } => PatternLabel::MB,
            EventShape::Crs { .. } => PatternLabel::CRS,
            EventShape::Hs { .. } => PatternLabel::HS,
        }
    }
}

fn in_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Synth(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

fn duration_range(label: PatternLabel) -> (f64, f64) {
    let s = label.spec().expect("event label");
    (s.min_ms, s.max_ms)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

impl EventShape {
    /// Fill unset parameters from `rng` and check every value.
    pub fn resolve(label: PatternLabel, p: &EventParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shape = match label {
            PatternLabel::SB => EventShape::Sb {
                duration_ms: p.duration_ms.unwrap_or_else(|| uniform(rng, duration_range(label))),
                freq_hz: p.freq_hz.unwrap_or_else(|| uniform(rng, SB_FREQ_HZ)),
            },
            PatternLabel::MB => {
                if p.duration_ms.is_some() {
                    return Err(Error::Synth(
                        "MB duration is set by bursts_ms and gaps_ms".into(),
                    ));
                }
                let n = match (&p.bursts_ms, p.n_bursts) {
                    (Some(b), _) => b.len(),
                    (None, Some(n)) => n,
                    (None, None) => count(rng, MB_BURSTS),
                };
                if !(MB_BURSTS.0..=MB_BURSTS.1).contains(&n) {
                    return Err(Error::Synth(format!("MB needs 2 to 6 bursts, got {n}")));
                }
                let sb_range = duration_range(PatternLabel::SB);
                let durs = p
                    .bursts_ms
                    .clone()
                    .unwrap_or_else(|| (0..n).map(|_| uniform(rng, sb_range)).collect());
                let gaps_ms = p
                    .gaps_ms
                    .clone()
                    .unwrap_or_else(|| (1..n).map(|_| uniform(rng, MB_GAP_MS)).collect());
                if gaps_ms.len() + 1 != n {
                    return Err(Error::Synth(format!(
                        "MB with {n} bursts needs {} gaps, got {}",
                        n - 1,
                        gaps_ms.len()
                    )));
                }
                let freqs = p
                    .burst_freqs_hz
                    .clone()
                    .unwrap_or_else(|| (0..n).map(|_| uniform(rng, SB_FREQ_HZ)).collect());
                if durs.len() != n || freqs.len() != n {
                    return Err(Error::Synth(format!(
                        "MB with {n} bursts needs {n} durations and frequencies"
                    )));
                }
                let bursts = durs.into_iter().zip(freqs).collect();
                EventShape::Mb { bursts, gaps_ms }
            }
            PatternLabel::CRS => EventShape::Crs {
                duration_ms: p.duration_ms.unwrap_or_else(|| uniform(rng, duration_range(label))),
                mod_depth: p.mod_depth.unwrap_or_else(|| uniform(rng, CRS_MOD_DEPTH)),
                mod_rate_hz: p.mod_rate_hz.unwrap_or_else(|| uniform(rng, CRS_MOD_RATE_HZ)),
            },
            PatternLabel::HS => EventShape::Hs {
                duration_ms: p.duration_ms.unwrap_or_else(|| uniform(rng, duration_range(label))),
                f0_hz: p.f0_hz.unwrap_or_else(|| uniform(rng, HS_F0_HZ)),
                n_harmonics: p.n_harmonics.unwrap_or_else(|| count(rng, HS_HARMONICS)),
            },
            PatternLabel::None => {
                return Err(Error::Synth("None is not a synthesisable event".into()))
            }
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EventShape::Sb { duration_ms, freq_hz } => {
                in_range("SB duration_ms", *duration_ms, duration_range(PatternLabel::SB))?;
                in_range("SB freq_hz", *freq_hz, SB_FREQ_HZ)
            }
            EventShape::Mb { bursts, gaps_ms } => {
                if !(MB_BURSTS.0..=MB_BURSTS.1).contains(&bursts.len())
                    || gaps_ms.len() + 1 != bursts.len()
                {
                    return Err(Error::Synth("MB needs 2 to 6 bursts and one gap between each".into()));
                }
                for (d, f) in bursts {
                    in_range("MB burst duration_ms", *d, duration_range(PatternLabel::SB))?;
                    in_range("MB burst freq_hz", *f, SB_FREQ_HZ)?;
                }
                for g in gaps_ms {
                    in_range("MB gap_ms", *g, MB_GAP_MS)?;
                }
                let total: f64 = bursts.iter().map(|b| b.0).sum::<f64>() + gaps_ms.iter().sum::<f64>();
                in_range("MB total duration_ms", total, duration_range(PatternLabel::MB))
            }
            EventShape::Crs {
                duration_ms,
                mod_depth,
                mod_rate_hz,
            } => {
                in_range("CRS duration_ms", *duration_ms, duration_range(PatternLabel::CRS))?;
                in_range("CRS mod_depth", *mod_depth, CRS_MOD_DEPTH)?;
                in_range("CRS mod_rate_hz", *mod_rate_hz, CRS_MOD_RATE_HZ)
            }
            EventShape::Hs {
                duration_ms,
                f0_hz,
                n_harmonics,
            } => {
                in_range("HS duration_ms", *duration_ms, duration_range(PatternLabel::HS))?;
                in_range("HS f0_hz", *f0_hz, HS_F0_HZ)?;
                if !(HS_HARMONICS.0..=HS_HARMONICS.1).contains(n_harmonics) {
                    return Err(Error::Synth(format!("HS needs 3 or 4 harmonics, got {n_harmonics}")));
                }
                Ok(())
            }
        }
    }
}

fn n_samples(ms: f64, fs: u32) -> usize {
    (ms / 1000.0 * f64::from(fs)).round() as usize
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

fn fade_gain(i: usize, n: usize, fs: u32) -> f64 {
    let t = i as f64 / f64::from(fs);
    let d = n as f64 / f64::from(fs);
    (t.min(d - t) / FADE_S).clamp(0.0, 1.0)
}

/// Exponentially damped sinusoid, decay constant a fifth of the duration.
pub fn damped_burst(duration_ms: f64, freq_hz: f64, fs: u32) -> Vec<f64> {
    let n = n_samples(duration_ms, fs);
    let tau = duration_ms / 1000.0 / 5.0;
    let w = 2.0 * std::f64::consts::PI * freq_hz;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(fs);
            (-t / tau).exp() * (w * t).sin()
        })
        .collect()
}

fn band_noise(n: usize, fs: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(normal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = f64::from(fs) / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if f < CRS_BAND_HZ.0 || f > CRS_BAND_HZ.1 {
            *c = Complex::default();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Unit-peak waveform of one event.
pub fn synth_event(shape: &EventShape, fs: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    shape.validate()?;
    if fs < MIN_SAMPLE_RATE {
        return Err(Error::Synth(format!("sample rate {fs} Hz too low")));
    }
    let nyquist = f64::from(fs) / 2.0;
    let mut x = match shape {
        EventShape::Sb { duration_ms, freq_hz } => damped_burst(*duration_ms, *freq_hz, fs),
        EventShape::Mb { bursts, gaps_ms } => {
            let mut out = Vec::new();
            for (k, (d, f)) in bursts.iter().enumerate() {
                let mut b = damped_burst(*d, *f, fs);
                normalize_peak(&mut b);
                out.extend(b);
                if let Some(g) = gaps_ms.get(k) {
                    out.resize(out.len() + n_samples(*g, fs), 0.0);
                }
            }
            out
        }
        EventShape::Crs {
            duration_ms,
            mod_depth,
            mod_rate_hz,
        } => {
            if CRS_BAND_HZ.1 >= nyquist {
                return Err(Error::Synth(format!("CRS band needs fs above {} Hz", 2.0 * CRS_BAND_HZ.1)));
            }
            let n = n_samples(*duration_ms, fs);
            let mut x = band_noise(n, fs, rng);
            normalize_peak(&mut x);
            let w = 2.0 * std::f64::consts::PI * mod_rate_hz;
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / f64::from(fs);
                let env = 1.0 - mod_depth * 0.5 * (1.0 + (w * t).sin());
                *v *= env * fade_gain(i, n, fs);
            }
            x
        }
        EventShape::Hs {
            duration_ms,
            f0_hz,
            n_harmonics,
        } => {
            if f0_hz * *n_harmonics as f64 >= nyquist {
                return Err(Error::Synth(format!(
                    "harmonic {n_harmonics} of {f0_hz} Hz exceeds Nyquist"
                )));
            }
            let n = n_samples(*duration_ms, fs);
            let w = 2.0 * std::f64::consts::PI * f0_hz;
            (0..n)
                .map(|i| {
                    let t = i as f64 / f64::from(fs);
                    let s: f64 = (1..=*n_harmonics)
                        .map(|h| (w * h as f64 * t).sin() / h as f64)
                        .sum();
                    s * fade_gain(i, n, fs)
                })
                .collect()
        }
    };
    normalize_peak(&mut x);
    Ok(x)
}

/// An event after parameter resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedEvent {
    pub shape: EventShape,
    pub peak_db: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub recording: Recording,
    pub truth: LabelTrack,
    pub events: Vec<RenderedEvent>,
}

fn event_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

impl SynthScript {
    pub fn validate(&self) -> Result<()> {
        if self.fs < MIN_SAMPLE_RATE {
            return Err(Error::Synth(format!("sample rate {} Hz too low", self.fs)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Synth(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if !(self.noise_floor_db.is_finite() && self.noise_floor_db < -MIN_PEAK_SNR_DB) {
            return Err(Error::Synth(format!(
                "noise_floor_db must leave {MIN_PEAK_SNR_DB} dB of headroom, got {}",
                self.noise_floor_db
            )));
        }
        for w in self.events.windows(2) {
            if w[1].t_start_s < w[0].t_start_s {
                return Err(Error::Synth(format!(
                    "events not sorted at t = {} s",
                    w[1].t_start_s
                )));
            }
        }
        Ok(())
    }

    /// Resolve every event, checking spacing and the recording bounds.
    pub fn resolve(&self) -> Result<Vec<RenderedEvent>> {
        self.validate()?;
        let fs = f64::from(self.fs);
        let mut out: Vec<RenderedEvent> = Vec::with_capacity(self.events.len());
        for (k, ev) in self.events.iter().enumerate() {
            let mut rng = event_rng(self.seed, k);
            let shape = EventShape::resolve(ev.label, &ev.params, &mut rng)?;
            let peak_db = ev.params.peak_db.unwrap_or_else(|| uniform(&mut rng, (-40.0, -10.0)));
            if !(peak_db <= 0.0 && peak_db - self.noise_floor_db >= MIN_PEAK_SNR_DB) {
                return Err(Error::Synth(format!(
                    "event {k}: peak {peak_db} dBFS must be <= 0 and >= {MIN_PEAK_SNR_DB} dB over the floor"
                )));
            }
            let n = event_len(&shape, self.fs);
            let i0 = time_to_index(ev.t_start_s, self.fs);
            let start_s = i0 as f64 / fs;
            let end_s = (i0 + n) as f64 / fs;
            if ev.t_start_s < 0.0 || i0 + n > (self.duration_s * fs).round() as usize {
                return Err(Error::Synth(format!("event {k} extends outside the recording")));
            }
            if let Some(prev) = out.last() {
                if start_s - prev.end_s < MIN_SPACING_S - 1e-9 {
                    return Err(Error::Synth(format!(
                        "event {k} starts {:.1} ms after the previous one ends; at least {} ms required",
                        (start_s - prev.end_s) * 1000.0,
                        MIN_SPACING_S * 1000.0
                    )));
                }
            }
            out.push(RenderedEvent {
                shape,
                peak_db,
                start_s,
                end_s,
            });
        }
        Ok(out)
    }

    /// Render the script to a mono recording (first quadrant) and its
    /// ground-truth track.
    pub fn render(&self) -> Result<Rendered> {
        let events = self.resolve()?;
        let n_total = (self.duration_s * f64::from(self.fs)).round() as usize;
        let sigma = 10f64.powf(self.noise_floor_db / 20.0);
        let mut floor_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Synth(e.to_string()))?;
        let mut x: Vec<f64> = (0..n_total).map(|_| normal.sample(&mut floor_rng)).collect();
        for (k, ev) in events.iter().enumerate() {
            // replay the stream so waveform draws follow parameter draws
            let mut rng = event_rng(self.seed, k);
            EventShape::resolve(self.events[k].label, &self.events[k].params, &mut rng)?;
            if self.events[k].params.peak_db.is_none() {
                uniform(&mut rng, (-40.0, -10.0));
            }
            let wave = synth_event(&ev.shape, self.fs, &mut rng)?;
            let gain = 10f64.powf(ev.peak_db / 20.0);
            let peak_snr = 20.0 * (wave.iter().fold(0.0f64, |m, v| m.max(v.abs())) * gain).log10()
                - self.noise_floor_db;
            assert!(
                peak_snr >= MIN_PEAK_SNR_DB - 1e-9,
                "event {k} rendered at {peak_snr:.2} dB over the floor"
            );
            let i0 = time_to_index(ev.start_s, self.fs);
            for (dst, v) in x[i0..i0 + wave.len()].iter_mut().zip(&wave) {
                *dst += gain * v;
            }
        }
        x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        let clip = AudioClip::from_f64(&x, self.fs)?;
        let truth = LabelTrack::new(
            events
                .iter()
                .map(|e| Segment::new(e.start_s, e.end_s, e.shape.label()))
                .collect(),
            TrackSource::Manual,
        )?;
        Ok(Rendered {
            recording: Recording::mono(clip),
            truth,
            events,
        })
    }
}

/// Sample count of a resolved event.
pub fn event_len(shape: &EventShape, fs: u32) -> usize {
    match shape {
        EventShape::Sb { duration_ms, .. }
        | EventShape::Crs { duration_ms, .. }
        | EventShape::Hs { duration_ms, .. } => n_samples(*duration_ms, fs),
        EventShape::Mb { bursts, gaps_ms } => {
            bursts.iter().map(|b| n_samples(b.0, fs)).sum::<usize>()
                + gaps_ms.iter().map(|g| n_samples(*g, fs)).sum::<usize>()
        }
    }
}

/// Per-100-segment class proportions of healthy manual annotations. None
/// fills the remainder and is not scripted.
pub fn healthy_mix() -> [(PatternLabel, f64); 4] {
    [
        (PatternLabel::SB, 43.0),
        (PatternLabel::MB, 5.0),
        (PatternLabel::CRS, 2.9),
        (PatternLabel::HS, 0.1),
    ]
}

/// Integer counts summing to `n` that follow `weights` by largest
/// remainder; ties go to the earlier entry.
pub fn allocate_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if n == 0 || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Settings for a randomly scripted corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub fs: u32,
    pub n_events: usize,
    pub mix: Vec<(PatternLabel, f64)>,
    /// Silence between events, drawn uniformly.
    pub spacing_s: (f64, f64),
    pub peak_db: (f64, f64),
    pub noise_floor_db: f64,
    pub lead_s: f64,
    /// Lower bound on the recording length; the tail is padded with floor.
    pub min_duration_s: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            fs: 8000,
            n_events: 100,
            mix: healthy_mix().to_vec(),
            spacing_s: (0.25, 0.8),
            peak_db: (-40.0, -10.0),
            noise_floor_db: -60.0,
            lead_s: 0.5,
            min_duration_s: 0.0,
        }
    }
}

/// Build a script whose class counts follow `spec.mix` in shuffled order.
pub fn corpus_script(spec: &CorpusSpec) -> Result<SynthScript> {
    if spec.spacing_s.0 < MIN_SPACING_S || spec.spacing_s.1 < spec.spacing_s.0 {
        return Err(Error::Synth(format!(
            "spacing must be an interval starting at or above {MIN_SPACING_S} s"
        )));
    }
    let weights: Vec<f64> = spec.mix.iter().map(|m| m.1).collect();
    let counts = allocate_counts(spec.n_events, &weights);
    let mut labels: Vec<PatternLabel> = spec
        .mix
        .iter()
        .zip(&counts)
        .flat_map(|((l, _), &c)| std::iter::repeat_n(*l, c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    labels.shuffle(&mut rng);

    let mut events = Vec::with_capacity(labels.len());
    let mut t = spec.lead_s;
    for (k, label) in labels.into_iter().enumerate() {
        let mut ev_rng = event_rng(spec.seed, k);
        let shape = EventShape::resolve(label, &EventParams::default(), &mut ev_rng)?;
        let params = shape_params(&shape, uniform(&mut rng, spec.peak_db));
        let start = time_to_index(t, spec.fs) as f64 / f64::from(spec.fs);
        let dur = event_len(&shape, spec.fs) as f64 / f64::from(spec.fs);
        events.push(ScriptEvent {
            label,
            t_start_s: start,
            params,
        });
        t = start + dur + uniform(&mut rng, spec.spacing_s);
    }
    let duration_s = (t + spec.lead_s).max(spec.min_duration_s);
    Ok(SynthScript {
        seed: spec.seed,
        fs: spec.fs,
        duration_s: (duration_s * 1000.0).ceil() / 1000.0,
        noise_floor_db: spec.noise_floor_db,
        events,
    })
}

/// Explicit parameters reproducing `shape`, so scripts are self-describing.
pub fn shape_params(shape: &EventShape, peak_db: f64) -> EventParams {
    let mut p = EventParams {
        peak_db: Some(peak_db),
        ..EventParams::default()
    };
    match shape {
        EventShape::Sb { duration_ms, freq_hz } => {
            p.duration_ms = Some(*duration_ms);
            p.freq_hz = Some(*freq_hz);
        }
        EventShape::Mb { bursts, gaps_ms } => {
            p.bursts_ms = Some(bursts.iter().map(|b| b.0).collect());
            p.burst_freqs_hz = Some(bursts.iter().map(|b| b.1).collect());
            p.gaps_ms = Some(gaps_ms.clone());
        }
        EventShape::Crs {
            duration_ms,
            mod_depth,
            mod_rate_hz,
        } => {
            p.duration_ms = Some(*duration_ms);
            p.mod_depth = Some(*mod_depth);
            p.mod_rate_hz = Some(*mod_rate_hz);
        }
        EventShape::Hs {
            duration_ms,
            f0_hz,
            n_harmonics,
        } => {
            p.duration_ms = Some(*duration_ms);
            p.f0_hz = Some(*f0_hz);
            p.n_harmonics = Some(*n_harmonics);
        }
    }
    p
}

/// Duration bounds of every scripted class, for reference.
pub fn class_ranges() -> impl Iterator<Item = (PatternLabel, f64, f64)> {
    PATTERN_SPECS.iter().map(|s| (s.label, s.min_ms, s.max_ms))
}
