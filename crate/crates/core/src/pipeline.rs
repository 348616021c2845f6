//! Detect, classify and refine one recording.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{AudioClip, Cohort};
use crate::classify::{
    classify_track, AdapterEndpoint, BackendKind, ClassifiedEvent, Classifier, CohortModelSelector,
    ExternalClassifier, FallbackClassifier, MelConfig, RuleClassifier, RuleConfig, SpectralClassifier,
};
use crate::detect::{ChannelDetection, DetectorConfig};
use crate::error::{Error, Result};
use crate::patterns::{LabelTrack, TrackSource};
use crate::postproc::{refine, PostprocConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub postproc: PostprocConfig,
    pub backend: BackendKind,
    pub models: CohortModelSelector,
    pub mel: MelConfig,
    pub cohort: Cohort,
    pub rule: RuleConfig,
    /// Directory of spectral model files.
    pub model_dir: Option<PathBuf>,
    /// External adapter address, `tcp://host:port` or a command line.
    pub adapter: Option<String>,
    pub adapter_timeout_ms: u64,
    /// Classify with the rule backend when the adapter is unreachable,
    /// times out or answers garbage.
    pub fallback_to_rule: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            postproc: PostprocConfig::default(),
            backend: BackendKind::Rule,
            models: CohortModelSelector::default(),
            mel: MelConfig::default(),
            cohort: Cohort::Unknown,
            rule: RuleConfig::default(),
            model_dir: None,
            adapter: None,
            adapter_timeout_ms: 10_000,
            fallback_to_rule: true,
        }
    }
}

impl PipelineConfig {
    /// Read a `.toml` or `.json` file; missing fields take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.postproc.validate()?;
        self.mel.validate()?;
        match self.backend {
            BackendKind::Spectral if self.model_dir.is_none() => {
                Err(Error::Config("the spectral backend needs model_dir".into()))
            }
            BackendKind::External if self.adapter.is_none() => {
                Err(Error::Config("the external backend needs an adapter address".into()))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_id(&self) -> &str {
        self.models.model_for(self.cohort)
    }

    pub fn build_backend(&self) -> Result<Box<dyn Classifier>> {
        let rule = RuleClassifier {
            config: self.rule.clone(),
            profile: self.detector.profile.clone(),
        };
        Ok(match self.backend {
            BackendKind::Rule => Box::new(rule),
            BackendKind::Spectral => {
                let dir = self
                    .model_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("the spectral backend needs model_dir".into()))?;
                let sc = SpectralClassifier::from_dir(dir)?;
                sc.get(self.model_id())?;
                Box::new(sc)
            }
            BackendKind::External => {
                let addr = self
                    .adapter
                    .as_deref()
                    .ok_or_else(|| Error::Config("the external backend needs an adapter address".into()))?;
                let ext = ExternalClassifier::with_timeout(
                    addr.parse::<AdapterEndpoint>()?,
                    Duration::from_millis(self.adapter_timeout_ms),
                );
                if self.fallback_to_rule {
                    Box::new(FallbackClassifier {
                        primary: ext,
                        fallback: rule,
                    })
                } else {
                    Box::new(ext)
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub detect_s: f64,
    pub classify_s: f64,
    pub refine_s: f64,
}

/// Result of one channel.
#[derive(Debug)]
pub struct ChannelAnnotation {
    /// Refined track covering the channel, source Auto.
    pub track: LabelTrack,
    pub events: Vec<ClassifiedEvent>,
    /// Events the backend could not classify, by detection index.
    pub failures: Vec<(usize, Error)>,
    pub timings: StageTimings,
}

/// Classify the detected events of a channel and refine the result.
pub fn classify_and_refine(
    clip: &AudioClip,
    detection: &ChannelDetection,
    cfg: &PipelineConfig,
    backend: &dyn Classifier,
) -> Result<ChannelAnnotation> {
    let t0 = Instant::now();
    let classified = classify_track(
        clip,
        &detection.events,
        Some(&detection.features),
        backend,
        &cfg.models,
        cfg.cohort,
        TrackSource::Auto,
    )?;
    let t1 = Instant::now();
    let track = refine(&classified.track, clip.duration_s(), &cfg.postproc)?.with_source(TrackSource::Auto);
    Ok(ChannelAnnotation {
        track,
        events: classified.events,
        failures: classified.failures,
        timings: StageTimings {
            detect_s: 0.0,
            classify_s: (t1 - t0).as_secs_f64(),
            refine_s: t1.elapsed().as_secs_f64(),
        },
    })
}

/// Run every stage on a single clip.
pub fn annotate_clip(clip: &AudioClip, cfg: &PipelineConfig, backend: &dyn Classifier) -> Result<ChannelAnnotation> {
    let t0 = Instant::now();
    let features = crate::framefeat::analyze(clip, &cfg.detector.profile)?;
    let thresholds = crate::framefeat::thresholds(&features);
    let events = crate::detect::detect_events(&features, &thresholds, &cfg.detector);
    let detection = ChannelDetection {
        features,
        thresholds,
        events,
    };
    let detect_s = t0.elapsed().as_secs_f64();
    let mut out = classify_and_refine(clip, &detection, cfg, backend)?;
    out.timings.detect_s = detect_s;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::PatternLabel;
    use crate::synth::{corpus_script, CorpusSpec};

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.postproc.gap_fill_min_ms = 150.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_files() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "cohort = \"patient\"\n[postproc]\ngap_fill_min_ms = 50.0\n").unwrap();
        let c = PipelineConfig::load(&toml_path).unwrap();
        assert_eq!(c.cohort, Cohort::Patient);
        assert_eq!(c.postproc.gap_fill_min_ms, 50.0);
        assert_eq!(c.model_id(), "patient");

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"backend": "spectral"}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&json_path), Err(Error::Config(_))));
        std::fs::write(&json_path, r#"{"bogus": 1}"#).unwrap();
        assert!(PipelineConfig::load(&json_path).is_err());
    }

    #[test]
    fn annotates_synthetic_clip() {
        let spec = CorpusSpec {
            seed: 3,
            n_events: 20,
            ..Default::default()
        };
        let r = corpus_script(&spec).unwrap().render().unwrap();
        let clip = r.recording.channels().values().next().unwrap();
        let cfg = PipelineConfig::default();
        let backend = cfg.build_backend().unwrap();
        let out = annotate_clip(clip, &cfg, backend.as_ref()).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.track.source(), TrackSource::Auto);
        assert!(out.track.segments().iter().any(|s| s.label == PatternLabel::None));
        assert!((out.track.end_s() - clip.duration_s()).abs() < 1e-9);
        let n_events = out.track.events().count();
        assert!((18..=22).contains(&n_events), "{n_events} events");
    }

    #[test]
    fn unreachable_adapter_falls_back() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let cfg = PipelineConfig {
            backend: BackendKind::External,
            adapter: Some(format!("tcp://{addr}")),
            ..Default::default()
        };
        let r = corpus_script(&CorpusSpec {
            seed: 4,
            n_events: 5,
            ..Default::default()
        })
        .unwrap()
        .render()
        .unwrap();
        let clip = r.recording.channels().values().next().unwrap();
        let out = annotate_clip(clip, &cfg, cfg.build_backend().unwrap().as_ref()).unwrap();
        assert!(out.failures.is_empty());
        assert!(out.track.events().count() >= 4);

        let strict = PipelineConfig {
            fallback_to_rule: false,
            ..cfg
        };
        let out = annotate_clip(clip, &strict, strict.build_backend().unwrap().as_ref()).unwrap();
        assert!(out.track.events().next().is_none());
        assert!(matches!(out.failures[0].1, Error::Transport(_)));
    }
}
