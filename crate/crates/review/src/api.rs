//! HTTP routes.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use bsannot_core::audio::{wav_bytes, PcmFormat};
use bsannot_core::classify::mel::{hz_to_mel, mel_to_hz, MelExtractor};
use bsannot_core::classify::MelConfig;
use bsannot_core::patterns::Segment;
use bsannot_core::ChannelId;

use crate::error::{ReviewError, ReviewResult};
use crate::session::{Edit, ReviewSession};
use crate::store::Store;
use crate::API_VERSION;

/// Longest stretch served by one spectrogram request.
pub const MAX_TILE_S: f64 = 60.0;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub mel: MelConfig,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/recordings", get(recordings))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/audio", get(audio))
        .route("/sessions/{id}/spectrogram", get(spectrogram))
        .route("/sessions/{id}/edits", post(post_edit))
        .route("/sessions/{id}/finish", post(finish))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then write every session to disk.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let store = state.store.clone();
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    let n = store.flush_all().map_err(std::io::Error::other)?;
    log::info!("flushed {n} sessions");
    Ok(())
}

fn check_version(v: Option<u32>) -> ReviewResult<()> {
    match v {
        Some(v) if v != API_VERSION => Err(ReviewError::BadRequest(format!("unsupported payload version {v}"))),
        _ => Ok(()),
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ReviewResult<T> {
    payload.map(|Json(t)| t).map_err(|e| ReviewError::BadRequest(e.body_text()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub v: u32,
    pub id: String,
    pub recording: String,
    pub quadrant: ChannelId,
    pub duration_s: f64,
    pub revision: u64,
    pub finished: bool,
    pub edit_count: usize,
    pub track: Vec<Segment>,
    pub auto_track: Vec<Segment>,
}

impl From<&ReviewSession> for SessionView {
    fn from(s: &ReviewSession) -> Self {
        Self {
            v: API_VERSION,
            id: s.id.clone(),
            recording: s.recording.clone(),
            quadrant: s.quadrant,
            duration_s: s.duration_s,
            revision: s.revision,
            finished: s.is_finished(),
            edit_count: s.edit_log.len(),
            track: s.working_track.segments().to_vec(),
            auto_track: s.auto_track.segments().to_vec(),
        }
    }
}

async fn health() -> Json<Value> {
    Json(json!({
        "v": API_VERSION,
        "status": "ok",
        "service": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn recordings(State(st): State<AppState>) -> ReviewResult<Json<Value>> {
    Ok(Json(json!({ "v": API_VERSION, "recordings": st.store.list_recordings()? })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    #[serde(default)]
    pub v: Option<u32>,
    pub recording: String,
    pub quadrant: ChannelId,
}

async fn create_session(
    State(st): State<AppState>,
    payload: Result<Json<NewSession>, JsonRejection>,
) -> ReviewResult<(StatusCode, Json<SessionView>)> {
    let req = body(payload)?;
    check_version(req.v)?;
    let s = st.store.create_session(&req.recording, req.quadrant)?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&s))))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ReviewResult<Json<SessionView>> {
    Ok(Json(SessionView::from(&st.store.session(&id)?)))
}

#[derive(Debug, Deserialize)]
pub struct Range {
    pub from: Option<f64>,
    pub to: Option<f64>,
}

impl Range {
    fn resolve(&self, duration_s: f64) -> ReviewResult<(f64, f64)> {
        let from = self.from.unwrap_or(0.0);
        let to = self.to.unwrap_or(duration_s).min(duration_s);
        if !(from >= 0.0 && to > from) {
            return Err(ReviewError::BadRequest(format!("empty or invalid range {from}..{to}")));
        }
        Ok((from, to))
    }
}

async fn audio(State(st): State<AppState>, Path(id): Path<String>, Query(range): Query<Range>) -> ReviewResult<Response> {
    let s = st.store.session(&id)?;
    let rec = st.store.recording(&s.recording)?;
    let clip = rec
        .channel(s.quadrant)
        .ok_or_else(|| ReviewError::BadRequest(format!("no channel {}", s.quadrant)))?;
    let (from, to) = range.resolve(clip.duration_s())?;
    let bytes = wav_bytes(&clip.slice(from, to)?, PcmFormat::Int16)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpectrogramTile {
    pub v: u32,
    pub from_s: f64,
    pub to_s: f64,
    /// Frame centres, seconds from the recording start.
    pub times: Vec<f64>,
    /// Band centre frequencies, Hz.
    pub bands: Vec<f64>,
    /// `[frame][band]`, dB.
    pub db: Vec<Vec<f64>>,
}

async fn spectrogram(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(range): Query<Range>,
) -> ReviewResult<Json<SpectrogramTile>> {
    let s = st.store.session(&id)?;
    let rec = st.store.recording(&s.recording)?;
    let clip = rec
        .channel(s.quadrant)
        .ok_or_else(|| ReviewError::BadRequest(format!("no channel {}", s.quadrant)))?;
    let (from, to) = range.resolve(clip.duration_s())?;
    if to - from > MAX_TILE_S {
        return Err(ReviewError::BadRequest(format!("tiles are limited to {MAX_TILE_S} s")));
    }
    let fs = clip.sample_rate();
    let cfg = MelConfig {
        max_patch_s: to - from,
        ..st.mel.clone()
    };
    let mut ex = MelExtractor::new(&cfg, fs)?;
    let lm = ex.log_mel(clip.slice(from, to)?.samples());
    let hop = cfg.hop_samples(fs) as f64 / f64::from(fs);
    let half_win = cfg.win_samples(fs) as f64 / f64::from(fs) / 2.0;
    let top = hz_to_mel(f64::from(fs) / 2.0);
    Ok(Json(SpectrogramTile {
        v: API_VERSION,
        from_s: from,
        to_s: to,
        times: (0..lm.n_frames()).map(|i| from + i as f64 * hop + half_win).collect(),
        bands: (1..=cfg.n_mels)
            .map(|m| mel_to_hz(top * m as f64 / (cfg.n_mels + 1) as f64))
            .collect(),
        db: lm.frames,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default)]
    pub v: Option<u32>,
    pub revision: u64,
    pub edit: Edit,
}

async fn post_edit(
    State(st): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<EditRequest>, JsonRejection>,
) -> ReviewResult<Json<SessionView>> {
    let req = body(payload)?;
    check_version(req.v)?;
    let s = st.store.apply_edit(&id, req.revision, req.edit)?;
    Ok(Json(SessionView::from(&s)))
}

async fn finish(State(st): State<AppState>, Path(id): Path<String>) -> ReviewResult<Json<Value>> {
    let report = st.store.finish(&id)?;
    Ok(Json(json!({ "v": API_VERSION, "report": report })))
}
