//! Local HTTP API over silhouette extraction, quantization and synthesis.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /v1/extract?window=&hop=` | WAV bytes | silhouette document |
//! | `POST /v1/synthesize` | [`SynthesisRequest`] | 16-bit WAV, `x-silhouette-mse` header |
//! | `GET /v1/models` | | checkpoint inventory |
//! | `POST /v1/models/load` | [`LoadRequest`] | loaded model summary |

mod error;
mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::header::{HeaderName, CONTENT_TYPE};
use axum::http::{HeaderValue, Method};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use silhouette_core::audio::{decode_wav, encode_wav};
use silhouette_core::{
    extract_silhouette, serialize_silhouette, QuantizationScheme, SilhouetteDocument,
    SilhouetteTrack, DEFAULT_HOP, DEFAULT_WINDOW,
};
use silhouette_nn::FRAME_HOP;
use silhouette_train::eval::achieved_mse;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ServiceError;
pub use registry::{LoadedModel, LoadedSummary, ModelEntry, Registry};

pub const DEFAULT_PORT: u16 = 8765;
pub const MSE_HEADER: &str = "x-silhouette-mse";
pub const FINGERPRINT_HEADER: &str = "x-model-fingerprint";
pub const MODEL_ID_HEADER: &str = "x-model-id";
pub const QUANTIZATION_HEADER: &str = "x-quantization";
const SILHOUETTE_CONTENT_TYPE: &str = "application/json";
const MAX_BODY_BYTES: usize = 256 << 20;

/// Scheme given either as a short name (`MU016`) or as `{kind, num_bins}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeSpec {
    Name(String),
    Scheme(QuantizationScheme),
}

impl SchemeSpec {
    fn resolve(&self) -> Result<QuantizationScheme, ServiceError> {
        let s = match self {
            Self::Name(n) => n.parse()?,
            Self::Scheme(s) => *s,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub silhouette: SilhouetteDocument,
    /// Overrides the scheme the loaded model was trained with.
    #[serde(default)]
    pub quantization: Option<SchemeSpec>,
    /// Must name the loaded model when given.
    #[serde(default)]
    pub model: Option<String>,
}

/// Either an inventory id or a checkpoint path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inventory {
    pub directory: PathBuf,
    pub pinned_fingerprint: Option<String>,
    pub loaded: Option<LoadedSummary>,
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Deserialize)]
struct Framing {
    window: Option<usize>,
    hop: Option<usize>,
}

pub type AppState = Arc<Registry>;

/// The API with CORS open to local origins (`localhost`, `127.0.0.1`, `[::1]`).
pub fn router(registry: AppState) -> Router {
    let exposed = [MSE_HEADER, FINGERPRINT_HEADER, MODEL_ID_HEADER, QUANTIZATION_HEADER]
        .map(HeaderName::from_static);
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            is_local_origin(origin)
        }))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([CONTENT_TYPE])
        .expose_headers(exposed);
    Router::new()
        .route("/v1/extract", post(extract))
        .route("/v1/synthesize", post(synthesize))
        .route("/v1/models", get(models))
        .route("/v1/models/load", post(load_model))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(registry)
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(s) = origin.to_str() else {
        return false;
    };
    let Some(rest) = s.strip_prefix("http://").or_else(|| s.strip_prefix("https://")) else {
        return false;
    };
    let host = match rest.strip_prefix('[') {
        Some(v6) => v6.split(']').next().unwrap_or(""),
        None => rest.split(':').next().unwrap_or(""),
    };
    matches!(host, "localhost" | "127.0.0.1" | "::1")
}

/// Serves until the process is stopped.
pub async fn serve(registry: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(registry)).await
}

async fn extract(Query(framing): Query<Framing>, body: Bytes) -> Result<Response, ServiceError> {
    if body.is_empty() {
        return Err(ServiceError::BadRequest("empty body; expected WAV bytes".into()));
    }
    let window = framing.window.unwrap_or(DEFAULT_WINDOW);
    let hop = framing.hop.unwrap_or(DEFAULT_HOP);
    let doc = blocking(move || {
        let w = decode_wav(&body)?;
        Ok(serialize_silhouette(&extract_silhouette(&w, window, hop)?))
    })
    .await?;
    Ok(([(CONTENT_TYPE, SILHOUETTE_CONTENT_TYPE)], doc).into_response())
}

async fn synthesize(State(registry): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let req: SynthesisRequest = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("invalid synthesis request: {e}")))?;
    let track = SilhouetteTrack::try_from(req.silhouette)?;
    if track.hop_len() != FRAME_HOP || track.window_len() != DEFAULT_WINDOW {
        return Err(ServiceError::unprocessable(format!(
            "silhouette framing {}/{} is not supported; the synthesizer expects {DEFAULT_WINDOW}/{FRAME_HOP}",
            track.window_len(),
            track.hop_len()
        )));
    }
    // The achieved silhouette of F·256 samples has F−3 frames.
    let min_frames = DEFAULT_WINDOW / FRAME_HOP;
    if track.len() < min_frames {
        return Err(ServiceError::unprocessable(format!(
            "silhouette has {} frames; at least {min_frames} are needed",
            track.len()
        )));
    }
    let override_scheme = req.quantization.as_ref().map(SchemeSpec::resolve).transpose()?;

    // One snapshot serves the whole request, so a concurrent load cannot mix models.
    let model = registry.current().ok_or(ServiceError::NoModel)?;
    if let Some(id) = &req.model {
        if *id != model.id {
            return Err(match registry.resolve_id(id) {
                Some(_) => ServiceError::Conflict(format!(
                    "model {id} is not loaded (current: {})",
                    model.id
                )),
                None => ServiceError::NotFound(format!("unknown model {id}")),
            });
        }
    }
    let scheme = override_scheme.or(model.quantization).or(track.quantization());
    let (wav, mse) = {
        let model = model.clone();
        blocking(move || {
            let reference = track.without_tag();
            let conditioning = match scheme {
                Some(s) => reference.quantize(s)?,
                None => reference.clone(),
            };
            let out = model
                .synth
                .synthesize(&conditioning)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            // Measured on the 16-bit audio the client receives.
            let wav = encode_wav(&out)?;
            let sent = decode_wav(&wav)?;
            let mse = achieved_mse(&reference, &sent).map_err(|e| ServiceError::Internal(e.to_string()))?;
            Ok((wav, mse))
        })
        .await?
    };
    let scheme_name = scheme.map_or_else(|| "none".to_string(), |s| s.short_name());
    Ok((
        [
            (CONTENT_TYPE, "audio/wav".to_string()),
            (HeaderName::from_static(MSE_HEADER), format!("{mse:e}")),
            (HeaderName::from_static(FINGERPRINT_HEADER), model.fingerprint.clone()),
            (HeaderName::from_static(MODEL_ID_HEADER), model.id.clone()),
            (HeaderName::from_static(QUANTIZATION_HEADER), scheme_name),
        ],
        wav,
    )
        .into_response())
}

async fn models(State(registry): State<AppState>) -> Result<Json<Inventory>, ServiceError> {
    let inv = blocking(move || {
        Ok(Inventory {
            directory: registry.dir().to_path_buf(),
            pinned_fingerprint: registry.pinned().map(str::to_string),
            loaded: registry.current().as_deref().map(LoadedSummary::from),
            models: registry.inventory(),
        })
    })
    .await?;
    Ok(Json(inv))
}

async fn load_model(State(registry): State<AppState>, body: Bytes) -> Result<Json<LoadedSummary>, ServiceError> {
    let req: LoadRequest = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("invalid load request: {e}")))?;
    let loaded = blocking(move || {
        let path = match (req.id, req.path) {
            (Some(id), None) => registry
                .resolve_id(&id)
                .ok_or_else(|| ServiceError::NotFound(format!("unknown model {id}")))?,
            (None, Some(p)) if p.is_relative() => registry.dir().join(p),
            (None, Some(p)) => p,
            _ => {
                return Err(ServiceError::BadRequest(
                    "give exactly one of \"id\" or \"path\"".into(),
                ))
            }
        };
        registry.load(&path)
    })
    .await?;
    tracing::info!("loaded {} ({})", loaded.id, loaded.fingerprint);
    Ok(Json(LoadedSummary::from(&*loaded)))
}

/// Runs CPU-bound work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}
