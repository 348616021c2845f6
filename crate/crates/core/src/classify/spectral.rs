//! Trainable spectral classifier: pooled log-mel statistics plus log
//! duration, fed to a multinomial logistic regression.
//!
//! Log-mel frames are normalised per band with statistics of the training
//! frames; each segment is then summarised by the per-band mean and standard
//! deviation over its real (unpadded) frames.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mel::{MelConfig, MelExtractor};
use super::{ClassProbabilities, ClassifyRequest, Classifier};
use crate::audio::{time_to_index, AudioClip};
use crate::error::{Error, Result};
use crate::patterns::{LabelTrack, PatternLabel, Segment};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One labelled recording channel of a training corpus.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub clip: AudioClip,
    pub track: LabelTrack,
    pub subject_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Train / validation / test fractions of subjects.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 1500,
            learning_rate: 0.5,
            l2: 1e-4,
            split: [0.70, 0.15, 0.15],
        }
    }
}

/// Running per-band mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl BandStats {
    pub fn new(n_bands: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; n_bands],
            m2: vec![0.0; n_bands],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for (b, &x) in row.iter().enumerate() {
            let d = x - self.mean[b];
            self.mean[b] += d / n;
            self.m2[b] += d * (x - self.mean[b]);
        }
    }

    /// Merge another set of statistics (parallel variance formula).
    pub fn merge(&mut self, other: &BandStats) {
        if other.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for b in 0..self.mean.len() {
            let d = other.mean[b] - self.mean[b];
            self.mean[b] += d * nb / n;
            self.m2[b] += other.m2[b] + d * d * na * nb / n;
        }
        self.n += other.n;
    }

    /// Population standard deviation per band; zero-variance bands get 1.
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|m2| {
                let s = (m2 / self.n.max(1) as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Per-band statistics and duration of one segment.
#[derive(Debug, Clone)]
pub struct SegmentSummary {
    pub label: PatternLabel,
    pub subject: usize,
    pub duration_s: f64,
    pub bands: BandStats,
}

fn segment_samples<'a>(clip: &'a AudioClip, seg: &Segment) -> Result<&'a [f32]> {
    let fs = clip.sample_rate();
    let a = time_to_index(seg.start_s, fs);
    let b = time_to_index(seg.end_s, fs).min(clip.len());
    if a >= b {
        return Err(Error::Training(format!(
            "segment [{}, {}] holds no samples",
            seg.start_s, seg.end_s
        )));
    }
    Ok(&clip.samples()[a..b])
}

fn summarize(ex: &mut MelExtractor, samples: &[f32]) -> BandStats {
    let lm = ex.log_mel(samples);
    let mut stats = BandStats::new(lm.n_mels);
    for row in &lm.frames {
        stats.push(row);
    }
    stats
}

/// Feature vector: normalised per-band means, normalised per-band standard
/// deviations, then the log duration.
fn pooled_features(seg: &BandStats, duration_s: f64, band_mean: &[f64], band_std: &[f64]) -> Vec<f64> {
    let n = seg.n.max(1) as f64;
    let mut f = Vec::with_capacity(2 * band_mean.len() + 1);
    f.extend((0..band_mean.len()).map(|b| (seg.mean[b] - band_mean[b]) / band_std[b]));
    f.extend((0..band_mean.len()).map(|b| (seg.m2[b] / n).sqrt() / band_std[b]));
    f.push(duration_s.max(1e-6).ln());
    f
}

/// Apply per-band mean–variance normalisation to log-mel rows.
pub fn normalize_frames(rows: &[Vec<f64>], band_mean: &[f64], band_std: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(b, v)| (v - band_mean[b]) / band_std[b])
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Subject-level split stratified by each subject's most frequent label.
pub fn split_subjects(
    subjects: &BTreeMap<String, Vec<PatternLabel>>,
    fractions: [f64; 3],
    seed: u64,
) -> SubjectSplit {
    let mut strata: BTreeMap<PatternLabel, Vec<&String>> = BTreeMap::new();
    for (id, labels) in subjects {
        let mut counts = [0usize; 4];
        for l in labels {
            if let Some(i) = l.event_index() {
                counts[i] += 1;
            }
        }
        let mut best = 0;
        for i in 1..4 {
            if counts[i] > counts[best] {
                best = i;
            }
        }
        strata.entry(PatternLabel::EVENTS[best]).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = fractions.iter().sum();
    let mut split = SubjectSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut ids) in strata {
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_test = ((fractions[2] / total) * n as f64).round() as usize;
        let n_val = ((fractions[1] / total) * n as f64).round() as usize;
        let (n_val, n_test) = if n_val + n_test >= n {
            // keep at least one training subject per stratum
            let spare = n.saturating_sub(1);
            let t = n_test.min(spare);
            (n_val.min(spare - t), t)
        } else {
            (n_val, n_test)
        };
        let n_train = n - n_val - n_test;
        split.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split.validation.extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        split.test.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.validation.sort();
    split.test.sort();
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralModel {
    pub v: u32,
    pub model_id: String,
    pub cohort: String,
    pub sample_rate: u32,
    pub mel: MelConfig,
    pub band_mean: Vec<f64>,
    pub band_std: Vec<f64>,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    /// One row per class in SB, MB, CRS, HS order.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub train: TrainConfig,
    pub split: SubjectSplit,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct HashedContent<'a> {
    cohort: &'a str,
    sample_rate: u32,
    mel: &'a MelConfig,
    band_mean: &'a [f64],
    band_std: &'a [f64],
    feat_mean: &'a [f64],
    feat_std: &'a [f64],
    weights: &'a [Vec<f64>],
    bias: &'a [f64],
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl SpectralModel {
    /// SHA-256 over the parameters that determine predictions.
    pub fn content_hash(&self) -> String {
        let content = HashedContent {
            cohort: &self.cohort,
            sample_rate: self.sample_rate,
            mel: &self.mel,
            band_mean: &self.band_mean,
            band_std: &self.band_std,
            feat_mean: &self.feat_mean,
            feat_std: &self.feat_std,
            weights: &self.weights,
            bias: &self.bias,
        };
        let json = serde_json::to_vec(&content).expect("model serialises");
        hex(&Sha256::digest(&json))
    }

    fn check(&self) -> Result<()> {
        let nb = self.mel.n_mels;
        let d = 2 * nb + 1;
        if self.v != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported model format {}", self.v)));
        }
        if self.band_mean.len() != nb
            || self.band_std.len() != nb
            || self.feat_mean.len() != d
            || self.feat_std.len() != d
            || self.weights.len() != 4
            || self.weights.iter().any(|w| w.len() != d)
            || self.bias.len() != 4
        {
            return Err(Error::Model("parameter shapes do not match the mel configuration".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: SpectralModel = serde_json::from_slice(&std::fs::read(path)?)?;
        model.check()?;
        Ok(model)
    }

    fn features(&self, ex: &mut MelExtractor, samples: &[f32], duration_s: f64) -> Vec<f64> {
        let stats = summarize(ex, samples);
        let mut f = pooled_features(&stats, duration_s, &self.band_mean, &self.band_std);
        for (i, v) in f.iter_mut().enumerate() {
            *v = (*v - self.feat_mean[i]) / self.feat_std[i];
        }
        f
    }

    fn logits(&self, x: &[f64]) -> [f64; 4] {
        let mut z = [0.0; 4];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = self.bias[c] + self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }

    pub fn predict(&self, samples: &[f32], fs: u32) -> Result<ClassProbabilities> {
        if fs != self.sample_rate {
            return Err(Error::Model(format!(
                "model trained at {} Hz, input at {fs} Hz",
                self.sample_rate
            )));
        }
        if samples.is_empty() {
            return Err(Error::Model("empty segment".into()));
        }
        let mut ex = MelExtractor::new(&self.mel, fs)?;
        let duration_s = samples.len() as f64 / f64::from(fs);
        let x = self.features(&mut ex, samples, duration_s);
        Ok(ClassProbabilities::from_logits(self.logits(&x)))
    }
}

fn softmax_regression(
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &TrainConfig,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mut w = vec![vec![0.0; d]; 4];
    let mut b = vec![0.0; 4];
    let mut gw = vec![vec![0.0; d]; 4];
    let mut gb = vec![0.0; 4];
    for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        gb.iter_mut().for_each(|v| *v = 0.0);
        for (x, &y) in xs.iter().zip(ys) {
            let mut z = [0.0; 4];
            for c in 0..4 {
                z[c] = b[c] + w[c].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            let p = ClassProbabilities::from_logits(z).as_array();
            for c in 0..4 {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, xi) in gw[c].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        for c in 0..4 {
            b[c] -= cfg.learning_rate * gb[c] / n;
            for (wi, g) in w[c].iter_mut().zip(&gw[c]) {
                *wi -= cfg.learning_rate * (g / n + cfg.l2 * *wi);
            }
        }
    }
    (w, b)
}

/// Train a model for `cohort` on the event segments of `corpus`.
pub fn train_spectral(
    corpus: &[TrainingItem],
    cohort: &str,
    mel: &MelConfig,
    cfg: &TrainConfig,
) -> Result<SpectralModel> {
    mel.validate()?;
    let fs = corpus
        .first()
        .map(|i| i.clip.sample_rate())
        .ok_or_else(|| Error::Training("empty corpus".into()))?;
    if corpus.iter().any(|i| i.clip.sample_rate() != fs) {
        return Err(Error::Training("corpus mixes sample rates".into()));
    }
    let classes: BTreeSet<PatternLabel> = corpus
        .iter()
        .flat_map(|i| i.track.events().map(|s| s.label))
        .collect();
    if classes.len() < 2 {
        return Err(Error::Training(format!(
            "corpus contains a single class ({}); at least two are needed",
            classes.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }

    let mut subject_labels: BTreeMap<String, Vec<PatternLabel>> = BTreeMap::new();
    for item in corpus {
        subject_labels
            .entry(item.subject_id.clone())
            .or_default()
            .extend(item.track.events().map(|s| s.label));
    }
    let subject_index: BTreeMap<&String, usize> =
        subject_labels.keys().enumerate().map(|(i, s)| (s, i)).collect();
    let split = split_subjects(&subject_labels, cfg.split, cfg.seed);

    let mut ex = MelExtractor::new(mel, fs)?;
    let mut summaries = Vec::new();
    for item in corpus {
        for seg in item.track.events() {
            let samples = segment_samples(&item.clip, seg)?;
            summaries.push(SegmentSummary {
                label: seg.label,
                subject: subject_index[&item.subject_id],
                duration_s: samples.len() as f64 / f64::from(fs),
                bands: summarize(&mut ex, samples),
            });
        }
    }
    let ids: Vec<&String> = subject_labels.keys().collect();
    let role = |s: &SegmentSummary| -> usize {
        let id = ids[s.subject];
        if split.train.contains(id) {
            0
        } else if split.validation.contains(id) {
            1
        } else {
            2
        }
    };

    let roles: Vec<usize> = summaries.iter().map(role).collect();
    let mut band = BandStats::new(mel.n_mels);
    for s in summaries.iter().filter(|s| role(s) == 0) {
        band.merge(&s.bands);
    }
    if band.n == 0 {
        return Err(Error::Training("no training segments after the subject split".into()));
    }
    let band_mean = band.mean.clone();
    let band_std = band.std();

    let raw: Vec<Vec<f64>> = summaries
        .iter()
        .map(|s| pooled_features(&s.bands, s.duration_s, &band_mean, &band_std))
        .collect();
    let d = 2 * mel.n_mels + 1;
    let train_rows: Vec<usize> = (0..summaries.len()).filter(|&i| roles[i] == 0).collect();
    let mut feat_mean = vec![0.0; d];
    let mut feat_std = vec![0.0; d];
    for &i in &train_rows {
        for (m, v) in feat_mean.iter_mut().zip(&raw[i]) {
            *m += v;
        }
    }
    feat_mean.iter_mut().for_each(|m| *m /= train_rows.len() as f64);
    for &i in &train_rows {
        for j in 0..d {
            feat_std[j] += (raw[i][j] - feat_mean[j]).powi(2);
        }
    }
    for s in feat_std.iter_mut() {
        *s = (*s / train_rows.len() as f64).sqrt();
        if *s <= 1e-12 {
            *s = 1.0;
        }
    }
    let xs: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - feat_mean[j]) / feat_std[j]).collect())
        .collect();
    let ys: Vec<usize> = summaries
        .iter()
        .map(|s| s.label.event_index().expect("event label"))
        .collect();

    let train_x: Vec<Vec<f64>> = train_rows.iter().map(|&i| xs[i].clone()).collect();
    let train_y: Vec<usize> = train_rows.iter().map(|&i| ys[i]).collect();
    let (weights, bias) = softmax_regression(&train_x, &train_y, cfg);

    let mut model = SpectralModel {
        v: MODEL_FORMAT_VERSION,
        model_id: String::new(),
        cohort: cohort.to_string(),
        sample_rate: fs,
        mel: mel.clone(),
        band_mean,
        band_std,
        feat_mean,
        feat_std,
        weights,
        bias,
        train: cfg.clone(),
        split,
        train_accuracy: 0.0,
        validation_accuracy: None,
        test_accuracy: None,
    };
    let accuracy = |which: usize| -> Option<f64> {
        let rows: Vec<usize> = (0..summaries.len()).filter(|&i| roles[i] == which).collect();
        (!rows.is_empty()).then(|| {
            let hits = rows
                .iter()
                .filter(|&&i| ClassProbabilities::from_logits(model.logits(&xs[i])).argmax() == summaries[i].label)
                .count();
            hits as f64 / rows.len() as f64
        })
    };
    let (tr, va, te) = (accuracy(0), accuracy(1), accuracy(2));
    model.train_accuracy = tr.unwrap_or(0.0);
    model.validation_accuracy = va;
    model.test_accuracy = te;
    model.model_id = format!("spectral-{cohort}-{}", &model.content_hash()[..12]);
    Ok(model)
}

/// Spectral backend holding models by id.
#[derive(Debug, Clone, Default)]
pub struct SpectralClassifier {
    models: BTreeMap<String, SpectralModel>,
}

impl SpectralClassifier {
    pub fn new(models: impl IntoIterator<Item = SpectralModel>) -> Self {
        Self {
            models: models.into_iter().map(|m| (m.model_id.clone(), m)).collect(),
        }
    }

    /// Load every `*.json` model in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let models = paths
            .iter()
            .map(SpectralModel::load)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(models))
    }

    /// Look up by model id, falling back to the single model trained for a
    /// cohort of that name.
    pub fn get(&self, id: &str) -> Result<&SpectralModel> {
        if let Some(m) = self.models.get(id) {
            return Ok(m);
        }
        let by_cohort: Vec<&SpectralModel> = self.models.values().filter(|m| m.cohort == id).collect();
        match by_cohort.as_slice() {
            [m] => Ok(m),
            [] => Err(Error::Model(format!("no spectral model {id:?}"))),
            _ => Err(Error::Model(format!("several spectral models for cohort {id:?}"))),
        }
    }
}

impl Classifier for SpectralClassifier {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities> {
        let model = self.get(req.model_id)?;
        let seg = Segment::new(req.interval.start_s, req.interval.end_s, PatternLabel::None);
        let samples = segment_samples(req.clip, &seg).map_err(|e| Error::Model(e.to_string()))?;
        model.predict(samples, req.clip.sample_rate())
    }

    fn name(&self) -> &str {
        "spectral"
    }
}
