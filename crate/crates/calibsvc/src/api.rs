use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use turbseg::cues::CueRole;
use turbseg::fusion::{self, FusionConfig, FusionWeights};
use turbseg::metrics::{self, EmptyPolicy};
use turbseg::overlay;
use turbseg::pipeline::{self, PipelineConfig};
use turbseg::proposal::{BoxProposal, ProposalParams};
use turbseg::refine;

use crate::session::Session;
use crate::ServeError;

pub type AppState = Arc<Session>;

pub fn router(session: AppState) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/frames/{t}", get(frame_png))
        .route("/cues/{role}/{t}", get(cue_png))
        .route("/fuse", post(fuse))
        .route("/score", get(score))
        .route("/config", get(get_config).put(put_config))
        .with_state(session)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(msg: impl Into<String>) -> Self {
        Self(StatusCode::NOT_FOUND, msg.into())
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Invalid(_) => Self::invalid(e.to_string()),
            other => Self(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn check_frame(s: &Session, t: usize) -> ApiResult<()> {
    if t < s.len() {
        Ok(())
    } else {
        Err(ApiError::not_found(format!("frame {t} outside 0..{}", s.len())))
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    frames: usize,
    width: usize,
    height: usize,
    videos: Vec<&'a str>,
    roles: Vec<&'static str>,
    ground_truth: bool,
}

async fn meta(State(s): State<AppState>) -> Response {
    let d = s.dims();
    Json(Meta {
        frames: s.len(),
        width: d.width,
        height: d.height,
        videos: vec![s.name()],
        roles: s.roles(),
        ground_truth: s.has_ground_truth(),
    })
    .into_response()
}

async fn frame_png(State(s): State<AppState>, Path(t): Path<usize>) -> ApiResult<Response> {
    check_frame(&s, t)?;
    Ok(png(overlay::frame_png(s.frame(t).unwrap())))
}

async fn cue_png(State(s): State<AppState>, Path((role, t)): Path<(String, usize)>) -> ApiResult<Response> {
    let role = CueRole::parse(&role).ok_or_else(|| ApiError::not_found(format!("unknown cue role {role:?}")))?;
    check_frame(&s, t)?;
    Ok(png(overlay::heatmap_png(s.bundle(t).unwrap().get(role))))
}

/// Candidate parameters; anything omitted comes from the current config.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseRequest {
    pub frame: usize,
    #[serde(default)]
    pub weights: Option<FusionWeights>,
    #[serde(default)]
    pub tau: Option<f32>,
    #[serde(default)]
    pub proposal: Option<ProposalParams>,
    #[serde(default)]
    pub semantic_pregate: Option<bool>,
    #[serde(default)]
    pub pregate_epsilon: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FuseResponse {
    pub frame: usize,
    /// Base64-encoded PNG.
    pub overlay_png: String,
    pub boxes: Vec<BoxProposal>,
    pub foreground_pixels: usize,
}

fn candidate(cfg: &PipelineConfig, req: &FuseRequest) -> ApiResult<(FusionConfig, ProposalParams)> {
    let mut f = cfg.fusion;
    if let Some(w) = req.weights {
        f.weights = w;
    }
    if let Some(tau) = req.tau {
        f.tau = tau;
    }
    if let Some(on) = req.semantic_pregate {
        f.semantic_pregate = on;
    }
    if let Some(eps) = req.pregate_epsilon {
        f.pregate_epsilon = eps;
    }
    f.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok((f, req.proposal.unwrap_or(cfg.proposal)))
}

async fn fuse(State(s): State<AppState>, Json(req): Json<FuseRequest>) -> ApiResult<Json<FuseResponse>> {
    // parameters are snapshotted before any work
    let cfg = s.config();
    check_frame(&s, req.frame)?;
    let (fusion_cfg, params) = candidate(&cfg, &req)?;
    let t = req.frame;
    let score = fusion::score(s.bundle(t).unwrap(), &fusion_cfg);
    let (mask, boxes) = pipeline::frame_proposal(&score, &fusion_cfg, &params, t);
    let bytes = overlay::overlay_png(s.frame(t).unwrap(), &mask, &boxes);
    Ok(Json(FuseResponse {
        frame: t,
        overlay_png: base64::engine::general_purpose::STANDARD.encode(bytes),
        boxes,
        foreground_pixels: mask.count(),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreQuery {
    pub frame: usize,
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub gamma: Option<f32>,
    pub delta: Option<f32>,
    pub tau: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub frame: usize,
    /// Box-refined mask (fallback refiner on this frame's boxes).
    pub iou: f64,
    pub dice: f64,
    /// Binarized proposal score itself.
    pub proposal_iou: f64,
    pub proposal_dice: f64,
}

async fn score(State(s): State<AppState>, Query(q): Query<ScoreQuery>) -> ApiResult<Json<ScoreResponse>> {
    let cfg = s.config();
    check_frame(&s, q.frame)?;
    let gt = s
        .ground_truth(q.frame)
        .ok_or_else(|| ApiError::not_found("no ground truth loaded (config has no usable [eval] section)"))?;
    let w = cfg.fusion.weights;
    let req = FuseRequest {
        frame: q.frame,
        weights: Some(FusionWeights {
            alpha: q.alpha.unwrap_or(w.alpha),
            beta: q.beta.unwrap_or(w.beta),
            gamma: q.gamma.unwrap_or(w.gamma),
            delta: q.delta.unwrap_or(w.delta),
        }),
        tau: q.tau,
        ..Default::default()
    };
    let (fusion_cfg, params) = candidate(&cfg, &req)?;
    let t = q.frame;
    let score = fusion::score(s.bundle(t).unwrap(), &fusion_cfg);
    let (mask, boxes) = pipeline::frame_proposal(&score, &fusion_cfg, &params, t);
    let tau_box = cfg.refine.tau_box.unwrap_or(fusion_cfg.tau);
    let refined = refine::fallback_refine(&score, &boxes, tau_box);
    let policy = cfg.eval.as_ref().map(|e| e.empty_policy).unwrap_or_default();
    // a skipped empty/empty frame reports as perfect agreement
    let policy = if policy == EmptyPolicy::Skip { EmptyPolicy::One } else { policy };
    let fin = metrics::score_frame(&refined, gt, policy).unwrap().unwrap();
    let prop = metrics::score_frame(&mask, gt, policy).unwrap().unwrap();
    Ok(Json(ScoreResponse {
        frame: t,
        iou: fin.iou,
        dice: fin.dice,
        proposal_iou: prop.iou,
        proposal_dice: prop.dice,
    }))
}

async fn get_config(State(s): State<AppState>) -> Json<PipelineConfig> {
    Json(s.config())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Deep-merges the JSON body into the current config, validates, persists.
async fn put_config(State(s): State<AppState>, Json(patch): Json<Value>) -> ApiResult<Json<PipelineConfig>> {
    let mut value = serde_json::to_value(s.config()).expect("config serializes");
    merge(&mut value, patch);
    let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(Json(s.replace_config(cfg)?))
}
