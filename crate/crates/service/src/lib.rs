//! Local HTTP service over the restoration engine. Every endpoint lives under
//! `/v1`:
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | GET | `/v1/health` | | checkpoint id, session count |
//! | POST | `/v1/clips` | WAV bytes, raw or multipart | session id, duration, sample rate |
//! | GET | `/v1/clips/{id}/spectrogram` | `db_floor` (default -80) | 8-bit dB grid, base64 |
//! | GET | `/v1/clips/{id}/controls` | `feature=dsc\|centroid\|rolloff` | control CSV |
//! | POST | `/v1/clips/{id}/restore` | JSON, see [`RestoreBody`] | base64 WAV plus scores |
//! | DELETE | `/v1/clips/{id}` | | |
//!
//! [`Service::handle`] is a pure request → response function, so the HTTP
//! layer in [`server`] is a thin shell around it.

pub mod multipart;
pub mod server;
pub mod session;

use std::collections::HashMap;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use contourflow_core::audio::WavEncoding;
use contourflow_core::cfm::{write_checkpoint, AnalysisConfig, FlowModel};
use contourflow_core::features::{extract_from_spectrogram, ControlFeature, ControlSignal};
use contourflow_core::pipeline::{fit_control, restore_clip, RestoreRequest};
use contourflow_core::{AudioClip, Error as CoreError};

pub use server::{serve, ServerHandle};
use session::{Session, SessionStore};

pub const API_PREFIX: &str = "/v1";
pub const DEFAULT_DB_FLOOR: f64 = -80.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    pub workers: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: 32,
            workers: 4,
            max_body_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no route for {0}")]
    NoRoute(String),
    #[error("method {0} not allowed here")]
    MethodNotAllowed(String),
    #[error("no checkpoint loaded")]
    NoCheckpoint,
    #[error("{0}")]
    Unprocessable(String),
    #[error("request body exceeds {0} bytes")]
    TooLarge(usize),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            Self::BadRequest(_) => 400,
            Self::UnknownSession(_) | Self::NoRoute(_) => 404,
            Self::MethodNotAllowed(_) => 405,
            Self::NoCheckpoint => 409,
            Self::TooLarge(_) => 413,
            Self::Unprocessable(_) => 422,
            Self::Internal(_) => 500,
        }
    }
}

fn from_core(e: CoreError) -> ApiError {
    match e {
        CoreError::Control(_) | CoreError::InvalidParam(_) | CoreError::Shape(_) => {
            ApiError::Unprocessable(e.to_string())
        }
        CoreError::Wav(_) | CoreError::EmptyClip => ApiError::BadRequest(e.to_string()),
        other => ApiError::Internal(other.to_string()),
    }
}

/// Transport-independent request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ApiRequest {
    pub method: String,
    /// Path with optional query string.
    pub url: String,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: &str, url: &str) -> Self {
        Self {
            method: method.to_string(),
            url: url.to_string(),
            ..Self::default()
        }
    }

    pub fn with_body(mut self, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        self.content_type = Some(content_type.to_string());
        self.body = body.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        let body = serde_json::to_vec(value).expect("response types serialize");
        Self {
            status,
            content_type: "application/json",
            body,
        }
    }

    fn error(e: &ApiError) -> Self {
        Self::json(e.status(), &serde_json::json!({ "error": e.to_string() }))
    }

    pub fn json_value(&self) -> Option<serde_json::Value> {
        serde_json::from_slice(&self.body).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadReply {
    pub session_id: String,
    pub duration: f64,
    pub sample_rate: u32,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramReply {
    pub n_frames: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    /// Seconds between frames.
    pub hop_s: f64,
    /// Hz between bins.
    pub bin_hz: f64,
    pub db_floor: f64,
    pub db_max: f64,
    /// Row-major frames × bins; byte v maps to db_floor + v/255·(db_max − db_floor).
    pub data: String,
}

/// Control in a restore request: the CSV interchange format, or bare
/// per-frame Hz values for a single DSC track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlPayload {
    Csv(String),
    Frames(Vec<f64>),
}

/// Restore request body. Omitted fields take [`RestoreRequest`] defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreBody {
    pub control: ControlPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gl_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RestoreBody {
    pub fn request(&self) -> RestoreRequest {
        let d = RestoreRequest::default();
        RestoreRequest {
            w: self.w.unwrap_or(d.w),
            steps: self.steps.unwrap_or(d.steps),
            scale: self.scale.unwrap_or(d.scale),
            cutoff_hz: self.cutoff_hz,
            gl_iters: self.gl_iters.unwrap_or(d.gl_iters),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreReply {
    /// Restored audio as base64 32-bit float WAV.
    pub wav_base64: String,
    pub adherence: f64,
    pub lsd_vs_input: f64,
    pub clipped: usize,
    pub cutoff_hz: f64,
    /// Control the restoration was steered with, after scaling, Hz per frame.
    pub target: Vec<f64>,
    /// DSC re-extracted from the restored audio, Hz per frame.
    pub realized: Vec<f64>,
}

/// Encoding used for every WAV the service and command line emit.
pub const OUTPUT_WAV: WavEncoding = WavEncoding::Float32;

pub struct Service {
    model: Option<FlowModel>,
    checkpoint_id: Option<String>,
    analysis: AnalysisConfig,
    sessions: Mutex<SessionStore>,
    config: ServiceConfig,
}

/// FNV-1a over the serialized checkpoint.
fn fingerprint(model: &FlowModel) -> String {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes).expect("in-memory write");
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    format!("{h:016x}")
}

fn query_params(query: &str) -> HashMap<&str, &str> {
    query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| kv.split_once('=').unwrap_or((kv, "")))
        .collect()
}

impl Service {
    pub fn new(model: Option<FlowModel>, config: ServiceConfig) -> Self {
        let analysis = model.as_ref().map(|m| m.analysis).unwrap_or_default();
        let checkpoint_id = model.as_ref().map(fingerprint);
        Self {
            model,
            checkpoint_id,
            analysis,
            sessions: Mutex::new(SessionStore::new(config.max_sessions)),
            config,
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn checkpoint_id(&self) -> Option<&str> {
        self.checkpoint_id.as_deref()
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        match self.route(req) {
            Ok(r) => r,
            Err(e) => ApiResponse::error(&e),
        }
    }

    fn route(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        if req.body.len() > self.config.max_body_bytes {
            return Err(ApiError::TooLarge(self.config.max_body_bytes));
        }
        let (path, query) = req.url.split_once('?').unwrap_or((&req.url, ""));
        let rest = path
            .strip_prefix(API_PREFIX)
            .ok_or_else(|| ApiError::NoRoute(path.to_string()))?;
        let segments: Vec<&str> = rest.split('/').filter(|s| !s.is_empty()).collect();
        let method = req.method.to_ascii_uppercase();
        let params = query_params(query);
        match (method.as_str(), segments.as_slice()) {
            ("GET", ["health"]) => Ok(self.health()),
            ("POST", ["clips"]) => self.upload(req),
            ("GET", ["clips", id, "spectrogram"]) => self.spectrogram(id, &params),
            ("GET", ["clips", id, "controls"]) => self.controls(id, &params),
            ("POST", ["clips", id, "restore"]) => self.restore(id, &req.body),
            ("DELETE", ["clips", id]) => {
                if self.sessions.lock().expect("session lock").remove(id) {
                    Ok(ApiResponse::json(
                        200,
                        &serde_json::json!({ "deleted": id }),
                    ))
                } else {
                    Err(ApiError::UnknownSession(id.to_string()))
                }
            }
            (
                _,
                ["health"]
                | ["clips"]
                | ["clips", _]
                | ["clips", _, "spectrogram" | "controls" | "restore"],
            ) => Err(ApiError::MethodNotAllowed(method)),
            _ => Err(ApiError::NoRoute(path.to_string())),
        }
    }

    fn health(&self) -> ApiResponse {
        let sessions = self.sessions.lock().expect("session lock").len();
        ApiResponse::json(
            200,
            &serde_json::json!({ "checkpoint_loaded": self.model.is_some(), "checkpoint_id": self.checkpoint_id, "sessions": sessions }),
        )
    }

    fn session(&self, id: &str) -> Result<session::SharedSession, ApiError> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    fn upload(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let bytes = match req.content_type.as_deref().and_then(multipart::boundary) {
            Some(b) => multipart::first_part(&req.body, &b)
                .ok_or_else(|| ApiError::BadRequest("malformed multipart body".into()))?,
            None => &req.body[..],
        };
        let clip =
            AudioClip::from_wav_bytes(bytes).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        self.analysis.check_rate(&clip).map_err(from_core)?;
        let (spectrogram, mel) = self.analysis.analyze(&clip).map_err(from_core)?;
        let mut store = self.sessions.lock().expect("session lock");
        let id = store.next_id();
        let reply = UploadReply {
            session_id: id.clone(),
            duration: clip.duration_secs(),
            sample_rate: clip.sample_rate(),
            n_frames: spectrogram.n_frames(),
        };
        store.insert(Session {
            id,
            clip,
            spectrogram,
            mel,
            controls: HashMap::new(),
        });
        Ok(ApiResponse::json(201, &reply))
    }

    fn spectrogram(&self, id: &str, params: &HashMap<&str, &str>) -> Result<ApiResponse, ApiError> {
        let db_floor = match params.get("db_floor") {
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| ApiError::BadRequest(format!("bad db_floor {v:?}")))?,
            None => DEFAULT_DB_FLOOR,
        };
        let shared = self.session(id)?;
        let s = shared.lock().expect("session lock");
        let spec = &s.spectrogram;
        let db: Vec<f64> = spec
            .mags
            .iter()
            .map(|&m| 20.0 * m.max(1e-12).log10())
            .collect();
        let db_max = db.iter().copied().fold(db_floor, f64::max);
        let span = db_max - db_floor;
        let data: Vec<u8> = db
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    (255.0 * ((v - db_floor) / span).clamp(0.0, 1.0)).round() as u8
                } else {
                    0
                }
            })
            .collect();
        Ok(ApiResponse::json(
            200,
            &SpectrogramReply {
                n_frames: spec.n_frames(),
                n_bins: spec.n_bins(),
                sample_rate: spec.sample_rate,
                hop_s: spec.config.hop as f64 / spec.sample_rate as f64,
                bin_hz: spec.bin_hz(1),
                db_floor,
                db_max,
                data: BASE64.encode(data),
            },
        ))
    }

    fn controls(&self, id: &str, params: &HashMap<&str, &str>) -> Result<ApiResponse, ApiError> {
        let feature: ControlFeature = params
            .get("feature")
            .copied()
            .unwrap_or("dsc")
            .parse()
            .map_err(|e: CoreError| ApiError::BadRequest(e.to_string()))?;
        let shared = self.session(id)?;
        let mut s = shared.lock().expect("session lock");
        let control = match s.controls.get(&feature) {
            Some(c) => c.clone(),
            None => {
                let c = extract_from_spectrogram(&s.spectrogram, feature, &self.analysis.dsc)
                    .map_err(from_core)?;
                s.controls.insert(feature, c.clone());
                c
            }
        };
        Ok(ApiResponse {
            status: 200,
            content_type: "text/csv",
            body: control.to_csv().into_bytes(),
        })
    }

    fn restore(&self, id: &str, body: &[u8]) -> Result<ApiResponse, ApiError> {
        let shared = self.session(id)?;
        let model = self.model.as_ref().ok_or(ApiError::NoCheckpoint)?;
        let body: RestoreBody = serde_json::from_slice(body)
            .map_err(|e| ApiError::BadRequest(format!("restore body: {e}")))?;
        let s = shared.lock().expect("session lock");
        let control = match &body.control {
            ControlPayload::Csv(text) => ControlSignal::from_csv(text),
            ControlPayload::Frames(track) => ControlSignal::single(
                "dsc",
                track.clone(),
                s.clip.sample_rate(),
                self.analysis.stft,
            ),
        }
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let control = fit_control(&control, s.mel.n_frames())
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let out = restore_clip(model, &s.clip, &control, &body.request()).map_err(from_core)?;
        let wav = out.clip.to_wav_bytes(OUTPUT_WAV).map_err(from_core)?;
        Ok(ApiResponse::json(
            200,
            &RestoreReply {
                wav_base64: BASE64.encode(wav),
                adherence: out.adherence,
                lsd_vs_input: out.lsd_vs_input,
                clipped: out.clipped,
                cutoff_hz: out.cutoff_hz,
                target: out.target.track(0),
                realized: out.realized.track(0),
            },
        ))
    }
}

/// Decodes the WAV carried by a [`RestoreReply`].
pub fn decode_wav(reply: &RestoreReply) -> contourflow_core::Result<AudioClip> {
    let bytes = BASE64
        .decode(&reply.wav_base64)
        .map_err(|e| CoreError::InvalidParam(format!("base64: {e}")))?;
    AudioClip::from_wav_bytes(&bytes)
}
