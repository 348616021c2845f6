//! Recordings and sessions under one data directory.
//!
//! ```text
//! data/<name>.wav                         recordings
//! data/<name>.<QUADRANT>.labels.txt       automatic labels (annotate output)
//! data/sessions/<id>.json                 session: auto track, edit log, working track
//! data/sessions/<id>.expert.labels.txt    working track of a finished session
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use bsannot_core::audio::load_wav;
use bsannot_core::evalstats::AdjustmentReport;
use bsannot_core::patterns::{parse_label_track, write_label_track, LabelTrack, TrackSource};
use bsannot_core::{ChannelId, Recording};

use crate::error::{ReviewError, ReviewResult};
use crate::session::{Edit, ReviewSession};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingInfo {
    pub name: String,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub channels: Vec<ChannelId>,
    /// Channels with an automatic label file.
    pub labelled: Vec<ChannelId>,
}

pub fn auto_labels_path(dir: &Path, recording: &str, channel: ChannelId) -> PathBuf {
    dir.join(format!("{recording}.{channel}.labels.txt"))
}

pub struct Store {
    data_dir: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<ReviewSession>>>>,
    recordings: Mutex<HashMap<String, Arc<Recording>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Store {
    /// Open `data_dir`, reloading any sessions saved there.
    pub fn open(data_dir: impl Into<PathBuf>) -> ReviewResult<Self> {
        let data_dir = data_dir.into();
        let sessions_dir = data_dir.join("sessions");
        std::fs::create_dir_all(&sessions_dir)?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&sessions_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s: ReviewSession = serde_json::from_slice(&std::fs::read(&path)?)?;
                sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(Self {
            data_dir,
            sessions: RwLock::new(sessions),
            recordings: Mutex::new(HashMap::new()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }

    fn recording_names(&self) -> ReviewResult<Vec<String>> {
        let mut names: Vec<String> = std::fs::read_dir(&self.data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn recording(&self, name: &str) -> ReviewResult<Arc<Recording>> {
        if let Some(r) = lock(&self.recordings).get(name) {
            return Ok(r.clone());
        }
        if !self.recording_names()?.iter().any(|n| n == name) {
            return Err(ReviewError::NoRecording(name.to_string()));
        }
        let rec = Arc::new(load_wav(self.data_dir.join(format!("{name}.wav")))?);
        lock(&self.recordings).insert(name.to_string(), rec.clone());
        Ok(rec)
    }

    pub fn list_recordings(&self) -> ReviewResult<Vec<RecordingInfo>> {
        self.recording_names()?
            .into_iter()
            .map(|name| {
                let rec = self.recording(&name)?;
                let channels: Vec<ChannelId> = rec.channels().keys().copied().collect();
                let labelled = channels
                    .iter()
                    .copied()
                    .filter(|c| auto_labels_path(&self.data_dir, &name, *c).exists())
                    .collect();
                Ok(RecordingInfo {
                    sample_rate: rec.sample_rate(),
                    duration_s: rec.duration_s(),
                    name,
                    channels,
                    labelled,
                })
            })
            .collect()
    }

    /// Start reviewing one channel. Without an automatic label file the
    /// session starts from an empty track.
    pub fn create_session(&self, recording: &str, quadrant: ChannelId) -> ReviewResult<ReviewSession> {
        let rec = self.recording(recording)?;
        let clip = rec
            .channel(quadrant)
            .ok_or_else(|| ReviewError::BadRequest(format!("{recording} has no channel {quadrant}")))?;
        let path = auto_labels_path(&self.data_dir, recording, quadrant);
        let auto = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            parse_label_track(&text, TrackSource::Auto).map_err(bsannot_core::Error::from)?
        } else {
            LabelTrack::empty(TrackSource::Auto)
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = ReviewSession::new(id.clone(), recording.to_string(), quadrant, clip.duration_s(), auto, now_ms());
        self.persist(&session)?;
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> ReviewResult<Arc<Mutex<ReviewSession>>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::NoSession(id.to_string()))
    }

    /// Snapshot of a session.
    pub fn session(&self, id: &str) -> ReviewResult<ReviewSession> {
        let handle = self.handle(id)?;
        let snapshot = lock(&handle).clone();
        Ok(snapshot)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    /// Apply and persist one edit. The file is written before the change
    /// becomes visible, so a failed write leaves the session as it was.
    pub fn apply_edit(&self, id: &str, revision: u64, edit: Edit) -> ReviewResult<ReviewSession> {
        let handle = self.handle(id)?;
        let mut guard = lock(&handle);
        let mut next = guard.clone();
        next.apply_edit(revision, edit, now_ms())?;
        self.persist(&next)?;
        *guard = next.clone();
        Ok(next)
    }

    pub fn finish(&self, id: &str) -> ReviewResult<AdjustmentReport> {
        let handle = self.handle(id)?;
        let mut guard = lock(&handle);
        let mut next = guard.clone();
        let report = next.finish(now_ms())?;
        std::fs::write(
            self.sessions_dir().join(format!("{id}.expert.labels.txt")),
            write_label_track(&next.working_track),
        )?;
        self.persist(&next)?;
        *guard = next;
        Ok(report)
    }

    /// Write every session to disk.
    pub fn flush_all(&self) -> ReviewResult<usize> {
        let handles: Vec<_> = self.sessions.read().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
        for h in &handles {
            self.persist(&lock(h))?;
        }
        Ok(handles.len())
    }

    fn persist(&self, s: &ReviewSession) -> ReviewResult<()> {
        let path = self.sessions_dir().join(format!("{}.json", s.id));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(s)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
