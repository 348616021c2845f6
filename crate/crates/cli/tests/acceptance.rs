//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsannot::{cmd_annotate, AnnotateArgs};
use bsannot_core::audio::{write_wav, PcmFormat};
use bsannot_core::classify::{
    train_spectral, ClassProbabilities, Classifier, ClassifyRequest, MelConfig, RuleClassifier, TrainConfig,
    TrainingItem,
};
use bsannot_core::detect::{detect_events, DetectorConfig, EventInterval};
use bsannot_core::evalstats::agreement::match_events;
use bsannot_core::evalstats::{self, binary_auroc};
use bsannot_core::framefeat::{self, frame_features, ProfileConfig};
use bsannot_core::patterns::{parse_label_track, write_label_track};
use bsannot_core::pipeline::{annotate_clip, PipelineConfig};
use bsannot_core::postproc::{refine, refine_idempotent_check, PostprocConfig};
use bsannot_core::synth::{corpus_script, CorpusSpec, Rendered};
use bsannot_core::{AudioClip, LabelTrack, PatternLabel, Recording, Segment, TrackSource};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn render(spec: &CorpusSpec) -> Result<Rendered, String> {
    corpus_script(spec).and_then(|s| s.render()).map_err(err)
}

fn mono(r: &Rendered) -> &AudioClip {
    r.recording.channels().values().next().expect("one channel")
}

fn detect(clip: &AudioClip, cfg: &DetectorConfig) -> Result<Vec<EventInterval>, String> {
    let features = framefeat::analyze(clip, &cfg.profile).map_err(err)?;
    let thr = framefeat::thresholds(&features);
    Ok(detect_events(&features, &thr, cfg))
}

fn as_segment(e: &EventInterval) -> Segment {
    Segment::new(e.start_s, e.end_s, PatternLabel::SB)
}

fn truth_interval(s: &Segment) -> EventInterval {
    EventInterval::from_frames((s.start_s * 1000.0).floor() as usize, (s.end_s * 1000.0).ceil() as usize, 0.0)
}

fn balanced(seed: u64, n_events: usize) -> CorpusSpec {
    CorpusSpec {
        seed,
        n_events,
        mix: PatternLabel::EVENTS.iter().map(|&l| (l, 1.0)).collect(),
        ..Default::default()
    }
}

fn energy_rms_relation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut frames = 0usize;
    for _ in 0..1000 {
        let fs = [4000u32, 8000, 16000, 22050, 44100][rng.random_range(0..5)];
        let n = rng.random_range(10 * fs as usize / 1000..fs as usize / 2);
        let amp: f64 = 10f64.powf(rng.random_range(-4.0..0.0));
        let x: Vec<f64> = (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let f = frame_features(&AudioClip::from_f64(&x, fs).map_err(err)?).map_err(err)?;
        let len = f.frame_len_samples as f64;
        for (e, r) in f.energy.iter().zip(&f.rms) {
            let rel = if *e == 0.0 { (len * r * r).abs() } else { (e - len * r * r).abs() / e };
            worst = worst.max(rel);
            frames += 1;
        }
    }
    ensure(worst <= 1e-9, format!("worst relative error {worst:e}"))?;
    Ok(format!("{frames} frames, worst relative error {worst:.2e}"))
}

fn gain_invariance() -> Outcome {
    let spec = CorpusSpec {
        seed: 3,
        n_events: 80,
        peak_db: (-72.0, -42.0),
        noise_floor_db: -100.0,
        ..Default::default()
    };
    let r = render(&spec)?;
    let base = mono(&r);
    let cfg = DetectorConfig::default();
    let key = |ev: &[EventInterval]| ev.iter().map(|e| (e.start_frame, e.end_frame)).collect::<Vec<_>>();
    let reference = key(&detect(base, &cfg)?);
    ensure(reference.len() >= 60, format!("only {} events on the base clip", reference.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gains: Vec<f64> = vec![0.01, 100.0];
    gains.extend((0..18).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))));
    for g in &gains {
        let y: Vec<f64> = base.samples().iter().map(|&v| f64::from(v) * g).collect();
        let scaled = AudioClip::from_f64(&y, base.sample_rate()).map_err(err)?;
        let got = key(&detect(&scaled, &cfg)?);
        ensure(got == reference, format!("gain {g:.4}: {} events vs {}", got.len(), reference.len()))?;
    }
    Ok(format!("{} gains in [0.01, 100], {} events identical", gains.len(), reference.len()))
}

fn detection_on_synthetic_corpus() -> Outcome {
    let r = render(&CorpusSpec {
        seed: 7,
        n_events: 500,
        ..Default::default()
    })?;
    let detected = detect(mono(&r), &DetectorConfig::default())?;
    let truth: Vec<&Segment> = r.truth.events().collect();
    let cand: Vec<Segment> = detected.iter().map(as_segment).collect();
    let cand_refs: Vec<&Segment> = cand.iter().collect();
    let matched = match_events(&truth, &cand_refs, 0.3).len();
    let recall = matched as f64 / truth.len() as f64;
    let precision = matched as f64 / cand.len() as f64;
    ensure(truth.len() >= 500, "corpus too small")?;
    ensure(
        recall >= 0.95 && precision >= 0.90,
        format!("recall {recall:.3} precision {precision:.3}"),
    )?;
    Ok(format!(
        "{} events, {} detected, recall {recall:.3}, precision {precision:.3}",
        truth.len(),
        cand.len()
    ))
}

fn runtime_30_min() -> Outcome {
    let r = render(&CorpusSpec {
        seed: 11,
        n_events: 2000,
        min_duration_s: 1800.0,
        ..Default::default()
    })?;
    let clip = mono(&r);
    ensure(clip.duration_s() >= 1800.0, "clip shorter than 30 min")?;
    let cfg = PipelineConfig::default();
    let backend = cfg.build_backend().map_err(err)?;
    let t0 = Instant::now();
    let ann = annotate_clip(clip, &cfg, backend.as_ref()).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("{secs:.1} s"))?;
    Ok(format!(
        "{:.0} s of 8 kHz audio, {} events, {secs:.1} s",
        clip.duration_s(),
        ann.events.len()
    ))
}

fn crs_fragmentation() -> Outcome {
    let r = render(&CorpusSpec {
        seed: 5,
        n_events: 1000,
        // event time must stay below half the recording for a quiet baseline
        mix: vec![(PatternLabel::CRS, 0.2), (PatternLabel::SB, 0.8)],
        ..Default::default()
    })?;
    let detected = detect(mono(&r), &DetectorConfig::default())?;
    let crs: Vec<&Segment> = r.truth.events().filter(|s| s.label == PatternLabel::CRS).collect();
    let whole = crs
        .iter()
        .filter(|t| {
            detected
                .iter()
                .filter(|d| d.start_s < t.end_s && d.end_s > t.start_s)
                .count()
                == 1
        })
        .count();
    let share = whole as f64 / crs.len() as f64;
    ensure(share >= 0.90, format!("{whole}/{} CRS events in one interval", crs.len()))?;
    Ok(format!("{whole}/{} CRS events in exactly one interval ({:.1}%)", crs.len(), 100.0 * share))
}

fn rule_classifier() -> Outcome {
    let clf = RuleClassifier::default();
    let (mut right, mut total) = (0usize, 0usize);
    for seed in 0..4 {
        let r = render(&balanced(seed, 200))?;
        let clip = mono(&r);
        let features = framefeat::analyze(clip, &ProfileConfig::default()).map_err(err)?;
        for s in r.truth.events() {
            let iv = truth_interval(s);
            let p = clf
                .classify(&ClassifyRequest {
                    clip,
                    interval: &iv,
                    features: Some(&features),
                    model_id: "rule",
                })
                .map_err(err)?;
            right += usize::from(p.argmax() == s.label);
            total += 1;
        }
    }
    let acc = right as f64 / total as f64;
    ensure(acc >= 0.90, format!("accuracy {acc:.4}"))?;
    Ok(format!("{right}/{total} correct, accuracy {acc:.4}"))
}

fn spectral_classifier() -> Outcome {
    let items = (0..20u64)
        .map(|s| {
            let r = render(&balanced(100 + s, 40))?;
            Ok(TrainingItem {
                clip: mono(&r).clone(),
                track: r.truth,
                subject_id: format!("s{s:02}"),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let model = train_spectral(&items, "combined", &MelConfig::default(), &TrainConfig::default()).map_err(err)?;
    let test = model.test_accuracy.ok_or("no held-out subjects")?;
    ensure(test >= 0.95, format!("held-out accuracy {test:.4}"))?;
    Ok(format!(
        "{} subjects, held-out test subjects {:?}, accuracy {test:.4}",
        items.len(),
        model.split.test
    ))
}

fn brute_auroc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(s / (pos.len() * neg.len()) as f64)
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 2000;
    for t in 0..trials {
        let n = rng.random_range(2..=200usize);
        let n_pos = rng.random_range(1..n);
        let coarse = t % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if coarse {
                f64::from(rng.random_range(0..8u32)) / 8.0
            } else {
                rng.random::<f64>()
            }
        };
        let pos: Vec<f64> = (0..n_pos).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (n_pos..n).map(|_| draw(&mut rng)).collect();
        let (a, b) = (binary_auroc(&pos, &neg), brute_auroc(&pos, &neg));
        ensure(a == b, format!("trial {t}: {a:?} vs {b:?}"))?;
    }
    // one-vs-rest over the class probabilities
    for t in 0..200 {
        let n = rng.random_range(1..=200usize);
        let labels: Vec<PatternLabel> = (0..n).map(|_| PatternLabel::EVENTS[rng.random_range(0..4)]).collect();
        let scores = (0..n)
            .map(|_| {
                let w: [f64; 4] = std::array::from_fn(|_| f64::from(rng.random_range(1..5u32)));
                let sum: f64 = w.iter().sum();
                ClassProbabilities::new(w.map(|x| x / sum)).map_err(err)
            })
            .collect::<Result<Vec<_>, String>>()?;
        let report = evalstats::auroc(&labels, &scores).map_err(err)?;
        for row in &report.per_class {
            let pos: Vec<f64> = (0..n).filter(|&i| labels[i] == row.label).map(|i| scores[i].get(row.label)).collect();
            let neg: Vec<f64> = (0..n).filter(|&i| labels[i] != row.label).map(|i| scores[i].get(row.label)).collect();
            let b = brute_auroc(&pos, &neg);
            ensure(row.auroc == b, format!("multiclass trial {t} {}: {:?} vs {b:?}", row.label, row.auroc))?;
        }
    }
    Ok(format!("{trials} binary and 200 one-vs-rest inputs equal the pairwise count"))
}

fn random_track(rng: &mut ChaCha8Rng) -> (LabelTrack, f64) {
    let n = rng.random_range(0..30);
    let mut t_us: i64 = rng.random_range(0..300_000);
    let mut segs = Vec::with_capacity(n);
    for _ in 0..n {
        let d = rng.random_range(1..1_500_000);
        let label = PatternLabel::ALL[rng.random_range(0..5)];
        segs.push(Segment::new(t_us as f64 / 1e6, (t_us + d) as f64 / 1e6, label));
        let gap = match rng.random_range(0..5) {
            0 => 0,
            1 => 100_000,
            2 => 101_000,
            _ => rng.random_range(0..400_000),
        };
        t_us += d + gap;
    }
    let total = (t_us + rng.random_range(0..300_000)) as f64 / 1e6;
    (LabelTrack::new(segs, TrackSource::Auto).expect("ordered, disjoint"), total)
}

fn postproc_idempotence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfgs = [
        PostprocConfig::default(),
        PostprocConfig {
            merge_max_gap_ms: 50.0,
            ..Default::default()
        },
    ];
    for i in 0..1000 {
        let (track, total) = random_track(&mut rng);
        let cfg = &cfgs[i % 2];
        ensure(refine_idempotent_check(&track, total, cfg).map_err(err)?, format!("track {i} not idempotent"))?;
    }
    Ok("1000 random tracks".into())
}

fn fixture(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn postproc_golden() -> Outcome {
    let track = LabelTrack::new(
        vec![Segment::new(0.0, 1.0, PatternLabel::SB), Segment::new(1.5, 2.0, PatternLabel::MB)],
        TrackSource::Auto,
    )
    .map_err(err)?;
    let out = write_label_track(&refine(&track, 2.0, &PostprocConfig::default()).map_err(err)?);
    let golden = fixture("gap_fill.labels.txt")?;
    ensure(out == golden, format!("got {out:?}"))?;
    Ok("gap-fill output byte-exact".into())
}

fn postproc_boundary() -> Outcome {
    let cfg = PostprocConfig::default();
    let filled = |gap_end: f64| -> Result<bool, String> {
        let t = LabelTrack::new(
            vec![Segment::new(0.0, 1.0, PatternLabel::SB), Segment::new(gap_end, 1.2, PatternLabel::SB)],
            TrackSource::Auto,
        )
        .map_err(err)?;
        Ok(refine(&t, 1.2, &cfg).map_err(err)?.segments().iter().any(|s| s.label == PatternLabel::None))
    };
    ensure(!filled(1.1)?, "100 ms gap was filled")?;
    ensure(filled(1.101)?, "101 ms gap was not filled")?;
    Ok("100 ms kept, 101 ms filled".into())
}

fn label_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let (track, _) = random_track(&mut rng);
        let text = write_label_track(&track);
        let back = parse_label_track(&text, TrackSource::Auto).map_err(err)?;
        ensure(back == track, format!("track {i} changed on parse"))?;
        ensure(write_label_track(&back) == text, format!("track {i} changed on write"))?;
    }
    for name in ["gap_fill.labels.txt", "mixed.labels.txt"] {
        let golden = fixture(name)?;
        let track = parse_label_track(&golden, TrackSource::Manual).map_err(err)?;
        ensure(write_label_track(&track) == golden, format!("{name} not byte-exact"))?;
    }
    Ok("1000 random tracks, 2 golden files byte-exact".into())
}

fn sb_adjustment_fixture() -> Outcome {
    let auto: Vec<Segment> = (0..400)
        .map(|i| {
            let t = f64::from(i);
            Segment::new(t, t + 0.084, PatternLabel::SB)
        })
        .collect();
    let expert: Vec<Segment> = (0..315)
        .map(|i| {
            let t = f64::from(i) + 0.002;
            Segment::new(t, t + 0.101, PatternLabel::SB)
        })
        .collect();
    let pad = |mut v: Vec<Segment>, source| {
        v.push(Segment::new(400.0, 401.0, PatternLabel::None));
        LabelTrack::new(v, source).map_err(err)
    };
    let auto = pad(auto, TrackSource::Auto)?;
    let expert = pad(expert, TrackSource::ExpertAdjusted)?;
    let report = evalstats::adjustment_report(&auto, &expert, None).map_err(err)?;
    let sb = report.row(PatternLabel::SB);
    let got = (sb.auto_count, sb.mean_dur_auto_s, sb.expert_count, sb.mean_dur_expert_s);
    ensure(got == (400, Some(0.084), 315, Some(0.101)), format!("got {got:?}"))?;
    Ok(format!(
        "SB auto 400 x 0.084 s, expert 315 x 0.101 s, {:.2}% removed or merged",
        report.pct_removed_or_merged
    ))
}

fn distribution_fixture() -> Outcome {
    let counts = [
        (PatternLabel::None, 490, 0.4),
        (PatternLabel::SB, 430, 0.02),
        (PatternLabel::MB, 50, 0.3),
        (PatternLabel::CRS, 29, 0.8),
        (PatternLabel::HS, 1, 0.3),
    ];
    let mut labels: Vec<(PatternLabel, f64)> =
        counts.iter().flat_map(|&(l, n, d)| std::iter::repeat_n((l, d), n)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let mut t = 0.0;
    let segs = labels
        .into_iter()
        .map(|(l, d)| {
            let s = Segment::new(t, t + d, l);
            t += d;
            s
        })
        .collect();
    let report = evalstats::distribution(&LabelTrack::new(segs, TrackSource::Manual).map_err(err)?);
    let mut worst = 0.0f64;
    for (label, n, _) in counts {
        let pct = 100.0 * report.row(label).normalized_count;
        worst = worst.max((pct - n as f64 / 10.0).abs());
    }
    ensure(worst <= 0.1, format!("largest deviation {worst:.3} points"))?;
    Ok(format!(
        "None/SB/MB/CRS/HS = 49.0/43.0/5.0/2.9/0.1%, largest deviation {worst:.3} points"
    ))
}

fn without_timings(path: &Path) -> Result<serde_json::Value, String> {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).map_err(err)?).map_err(err)?;
    v.as_object_mut().ok_or("manifest is not an object")?.remove("timings");
    Ok(v)
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let clips = [21u64, 22, 23, 24]
        .iter()
        .map(|&seed| {
            render(&CorpusSpec {
                seed,
                n_events: 60,
                min_duration_s: 40.0,
                ..Default::default()
            })
            .map(|r| mono(&r).clone())
        })
        .collect::<Result<Vec<_>, String>>()?;
    let n = clips.iter().map(AudioClip::len).min().unwrap_or(0);
    let rec = Recording::from_clips(clips.iter().map(|c| c.slice_samples(0, n)).collect()).map_err(err)?;
    let wav = dir.path().join("subject.wav");
    write_wav(&wav, &rec, PcmFormat::Int16).map_err(err)?;

    let run = |out: &str, jobs: usize| {
        cmd_annotate(&AnnotateArgs {
            input: wav.clone(),
            out: dir.path().join(out),
            config: None,
            cohort: None,
            backend: None,
            adapter: None,
            model_dir: None,
            jobs,
            keep_going: false,
        })
        .map_err(|e| e.message)
    };
    let a = run("a", 4)?;
    run("b", 1)?;
    ensure(a.label_files.len() == 4, format!("{} label files", a.label_files.len()))?;
    let mut compared = 0;
    for entry in std::fs::read_dir(dir.path().join("a")).map_err(err)? {
        let pa = entry.map_err(err)?.path();
        let name = pa.file_name().expect("file name").to_owned();
        let pb = dir.path().join("b").join(&name);
        if pa == a.manifest_path {
            ensure(without_timings(&pa)? == without_timings(&pb)?, "manifests differ")?;
        } else {
            let same = std::fs::read(&pa).map_err(err)? == std::fs::read(&pb).map_err(err)?;
            ensure(same, format!("{} differs", name.to_string_lossy()))?;
        }
        compared += 1;
    }
    Ok(format!("{compared} output files identical across two runs"))
}

fn main() {
    let checks: Vec<(&str, fn() -> Outcome)> = vec![
        ("energy_rms_relation", energy_rms_relation),
        ("gain_invariance", gain_invariance),
        ("detection_synthetic_corpus", detection_on_synthetic_corpus),
        ("detection_runtime_30min", runtime_30_min),
        ("crs_anti_fragmentation", crs_fragmentation),
        ("rule_classifier_accuracy", rule_classifier),
        ("spectral_heldout_accuracy", spectral_classifier),
        ("auroc_pairwise_oracle", auroc_oracle),
        ("postproc_idempotence", postproc_idempotence),
        ("postproc_gap_fill_golden", postproc_golden),
        ("postproc_gap_boundary", postproc_boundary),
        ("label_format_round_trip", label_round_trip),
        ("adjustment_sb_row_fixture", sb_adjustment_fixture),
        ("distribution_percentages_fixture", distribution_fixture),
        ("annotate_determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
