//! Onset / sustain / offset event detector over frame features.
//!
//! The state machine enters ACTIVE when both the normalised RMS and the
//! energy slope exceed their thresholds, stays there while the relative
//! energy is above its threshold, and leaves once all three series are at or
//! below threshold. Raw events then pass a peak-level gate and are grouped
//! when separated by short gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::audio::{ChannelId, Recording};
use crate::error::{Error, Result};
use crate::framefeat::{self, FrameFeatureTrack, ProfileConfig, ThresholdSet, FRAME_RATE};

/// A detected event on the 1 ms frame grid. Frames `start_frame..end_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventInterval {
    pub start_s: f64,
    pub end_s: f64,
    /// Highest relative energy (dB over baseline) inside the event.
    pub peak_energy_norm: f64,
    pub frame_span: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl EventInterval {
    pub fn from_frames(start_frame: usize, end_frame: usize, peak_energy_norm: f64) -> Self {
        debug_assert!(end_frame > start_frame);
        let rate = f64::from(FRAME_RATE);
        Self {
            start_s: start_frame as f64 / rate,
            end_s: end_frame as f64 / rate,
            peak_energy_norm,
            frame_span: end_frame - start_frame,
            start_frame,
            end_frame,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub profile: ProfileConfig,
    /// Events shorter than this are dropped.
    pub min_event_ms: f64,
    /// Extra all-quiet frames required before an offset is confirmed.
    pub hangover_frames: usize,
    /// Events whose peak normalised RMS stays below this level (dB over the
    /// RMS baseline) are discarded. `None` keeps every event.
    pub min_peak_snr_db: Option<f64>,
    /// Events separated by at most this gap are joined into one interval.
    pub group_gap_ms: f64,
    /// Compute thresholds over all channels of a recording instead of per
    /// channel.
    pub pool_channels: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            profile: ProfileConfig::default(),
            min_event_ms: 5.0,
            hangover_frames: 0,
            min_peak_snr_db: Some(12.0),
            group_gap_ms: 200.0,
            pool_channels: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !(self.min_event_ms >= 1.0) {
            return Err(Error::Config(format!(
                "min_event_ms must be >= 1, got {}",
                self.min_event_ms
            )));
        }
        if !(self.group_gap_ms >= 0.0) {
            return Err(Error::Config(format!(
                "group_gap_ms must be >= 0, got {}",
                self.group_gap_ms
            )));
        }
        if let Some(db) = self.min_peak_snr_db {
            if !db.is_finite() {
                return Err(Error::Config("min_peak_snr_db must be finite".into()));
            }
        }
        Ok(())
    }

    fn frames(ms: f64) -> usize {
        (ms * f64::from(FRAME_RATE) / 1000.0).ceil() as usize
    }
}

/// Run only the three-phase state machine. No gating, grouping or
/// minimum-duration filter.
pub fn state_machine(
    track: &FrameFeatureTrack,
    thr: &ThresholdSet,
    hangover_frames: usize,
) -> Vec<EventInterval> {
    let n = track.len();
    let mut out = Vec::new();
    let mut active: Option<(usize, f64)> = None;
    let mut quiet = 0usize;
    for i in 0..n {
        let rms = track.rms_norm[i];
        let delta = track.energy_delta[i];
        let rel = track.energy_norm[i];
        match active {
            None => {
                if rms > thr.thr_rms && delta > thr.thr_energy_delta {
                    active = Some((i, rel));
                    quiet = 0;
                }
            }
            Some((start, ref mut peak)) => {
                *peak = peak.max(rel);
                let all_below =
                    rms <= thr.thr_rms && delta <= thr.thr_energy_delta && rel <= thr.thr_energy_rel;
                if all_below {
                    quiet += 1;
                    if quiet > hangover_frames {
                        let end = i + 1 - quiet;
                        out.push(EventInterval::from_frames(start, end, *peak));
                        active = None;
                    }
                } else {
                    quiet = 0;
                }
            }
        }
    }
    if let Some((start, peak)) = active {
        let end = n - quiet;
        if end > start {
            out.push(EventInterval::from_frames(start, end, peak));
        }
    }
    out
}

fn peak_rms_db(track: &FrameFeatureTrack, ev: &EventInterval) -> f64 {
    let peak = track.rms_norm[ev.start_frame..ev.end_frame]
        .iter()
        .copied()
        .fold(0.0, f64::max);
    20.0 * peak.log10()
}

/// Join events whose gap is at most `max_gap` frames.
pub fn group_events(events: &[EventInterval], max_gap: usize) -> Vec<EventInterval> {
    let mut out: Vec<EventInterval> = Vec::with_capacity(events.len());
    for ev in events {
        match out.last_mut() {
            Some(last) if ev.start_frame <= last.end_frame + max_gap => {
                let peak = last.peak_energy_norm.max(ev.peak_energy_norm);
                let end = last.end_frame.max(ev.end_frame);
                *last = EventInterval::from_frames(last.start_frame, end, peak);
            }
            _ => out.push(*ev),
        }
    }
    out
}

/// Full detector: state machine, minimum duration, peak gate, grouping.
pub fn detect_events(
    track: &FrameFeatureTrack,
    thr: &ThresholdSet,
    cfg: &DetectorConfig,
) -> Vec<EventInterval> {
    let min_frames = DetectorConfig::frames(cfg.min_event_ms);
    let kept: Vec<EventInterval> = state_machine(track, thr, cfg.hangover_frames)
        .into_iter()
        .filter(|ev| ev.frame_span >= min_frames)
        .filter(|ev| match cfg.min_peak_snr_db {
            Some(db) => peak_rms_db(track, ev) >= db,
            None => true,
        })
        .collect();
    let gap = (cfg.group_gap_ms * f64::from(FRAME_RATE) / 1000.0).floor() as usize;
    group_events(&kept, gap)
}

/// Features, thresholds and events of one channel.
#[derive(Debug, Clone)]
pub struct ChannelDetection {
    pub features: FrameFeatureTrack,
    pub thresholds: ThresholdSet,
    pub events: Vec<EventInterval>,
}

/// Detect events independently on every channel. Channel failures are
/// reported per channel and do not affect the others.
pub fn detect_recording(
    rec: &Recording,
    cfg: &DetectorConfig,
) -> BTreeMap<ChannelId, Result<ChannelDetection>> {
    let mut tracks: BTreeMap<ChannelId, Result<FrameFeatureTrack>> = rec
        .channels()
        .iter()
        .map(|(id, clip)| (*id, framefeat::analyze(clip, &cfg.profile)))
        .collect();
    let pooled = if cfg.pool_channels {
        let ok: Vec<FrameFeatureTrack> =
            tracks.values().filter_map(|t| t.as_ref().ok().cloned()).collect();
        (!ok.is_empty()).then(|| framefeat::thresholds_pooled(&ok))
    } else {
        None
    };
    let ids: Vec<ChannelId> = tracks.keys().copied().collect();
    ids.into_iter()
        .map(|id| {
            let res = tracks.remove(&id).expect("channel present").map(|features| {
                let thresholds = pooled.unwrap_or_else(|| framefeat::thresholds(&features));
                let events = detect_events(&features, &thresholds, cfg);
                ChannelDetection {
                    features,
                    thresholds,
                    events,
                }
            });
            (id, res.map_err(|e| e.in_channel(id)))
        })
        .collect()
}

/// Events as Audacity label text with the generic label `event`.
pub fn events_label_text(events: &[EventInterval]) -> String {
    let mut out = String::new();
    for ev in events {
        let _ = writeln!(out, "{:.6}\t{:.6}\tevent", ev.start_s, ev.end_s);
    }
    out
}
