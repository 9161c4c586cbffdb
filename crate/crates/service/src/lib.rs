//! Render service for a single loaded model.
//!
//! * `GET /info` reports model accounting and the relight counter.
//! * `POST /render` takes a [`RenderRequest`] and returns PNG bytes.
//! * `GET /interactive` upgrades to a WebSocket. The client sends
//!   [`StateUpdate`] text messages; the server answers with binary frames of
//!   an 8-byte little-endian sequence number followed by PNG bytes. Updates
//!   that arrive while a frame is rendering are coalesced, so only the latest
//!   state is rendered next. Errors arrive as JSON text messages carrying the
//!   offending `seq`.

pub mod protocol;

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bshsplat::io::envmap::load_env_map;
use bshsplat::io::model::load_model;
use bshsplat::io::png::encode_png;
use bshsplat::optimizer::tone_map_ldr;
use bshsplat::raster::Renderer;
use bshsplat::scene::{Scene, BYTES_PER_PRIMITIVE, PARAMS_PER_PRIMITIVE};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

pub use protocol::{ApiError, CameraSpec, EnvMaps, InfoResponse, Limits, LightSpec, RenderRequest, StateUpdate};
use protocol::ResolvedRender;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Shared, read-only service state.
#[derive(Clone)]
pub struct AppState {
    renderer: Arc<Renderer<f64>>,
    limits: Limits,
    envs: Arc<EnvMaps>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    /// Takes the model at storage precision; rendering runs in f64.
    pub fn new(scene: Scene<f32>, limits: Limits, envs: EnvMaps) -> Self {
        AppState {
            renderer: Arc::new(Renderer::new(Arc::new(scene.cast()))),
            limits,
            envs: Arc::new(envs),
            shutdown: watch::channel(false).1,
        }
    }

    /// Loads a model file and named environment maps (PFM).
    pub fn load(model: impl AsRef<Path>, limits: Limits, env_maps: &[(String, PathBuf)]) -> bshsplat::error::Result<Self> {
        let scene = load_model::<f32>(model)?;
        let mut envs = EnvMaps::new();
        for (name, path) in env_maps {
            envs.insert(name.clone(), Arc::new(load_env_map::<f64>(path)?));
        }
        Ok(AppState::new(scene, limits, envs))
    }

    pub fn info(&self) -> InfoResponse {
        let scene = self.renderer.scene();
        let mut env_maps: Vec<String> = self.envs.keys().cloned().collect();
        env_maps.sort();
        InfoResponse {
            primitives: scene.len() as u64,
            parameters: scene.parameter_count(),
            parameters_per_primitive: PARAMS_PER_PRIMITIVE as u64,
            bytes_per_primitive: BYTES_PER_PRIMITIVE as u64,
            memory_bytes: scene.memory_bytes(),
            relight_evaluations: self.renderer.relight_evaluations(),
            limits: self.limits,
            env_maps,
        }
    }

    fn render_png(&self, req: &ResolvedRender) -> Result<Vec<u8>, ApiError> {
        let img = self
            .renderer
            .render(&req.lights, &req.camera, req.mask)
            .map_err(|e| ApiError::internal("render_failed", e.to_string()))?;
        let ldr = if req.tone_map { tone_map_ldr(&img) } else { img.to_ldr() };
        encode_png(&ldr).map_err(|e| ApiError::internal("encode_failed", e.to_string()))
    }

    async fn render_blocking(&self, req: ResolvedRender) -> Result<Vec<u8>, ApiError> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || state.render_png(&req))
            .await
            .map_err(|e| ApiError::internal("render_failed", format!("render task failed: {e}")))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/render", post(render))
        .route("/interactive", get(interactive))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes interactive sessions and
/// waits for in-flight requests.
pub async fn serve(
    listener: TcpListener,
    mut state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (stop_tx, stop_rx) = watch::channel(false);
    state.shutdown = stop_rx;
    let app = router(state).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        })
        .await
}

async fn info(State(state): State<AppState>) -> Json<InfoResponse> {
    Json(state.info())
}

async fn render(State(state): State<AppState>, body: Bytes) -> Response {
    let req: RenderRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError::bad_request("malformed_request", e.to_string()).into_response(),
    };
    let resolved = match req.resolve(&state.limits, &state.envs) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match state.render_blocking(resolved).await {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn interactive(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

/// Session state as last set by the client.
#[derive(Default)]
struct SessionSpec {
    camera: Option<CameraSpec>,
    lights: Vec<LightSpec>,
    mask: Option<String>,
    tone_map: Option<bool>,
}

impl SessionSpec {
    fn apply(&self, u: &StateUpdate) -> Result<(SessionSpec, RenderRequest), ApiError> {
        let next = SessionSpec {
            camera: u.camera.clone().or_else(|| self.camera.clone()),
            lights: u.lights.clone().unwrap_or_else(|| self.lights.clone()),
            mask: u.mask.clone().or_else(|| self.mask.clone()),
            tone_map: u.tone_map.or(self.tone_map),
        };
        let camera = next
            .camera
            .clone()
            .ok_or_else(|| ApiError::unprocessable("missing_camera", "the first update must set a camera"))?;
        let req = RenderRequest {
            camera,
            lights: next.lights.clone(),
            mask: next.mask.clone().unwrap_or_else(|| "full".into()),
            tone_map: next.tone_map.unwrap_or(true),
        };
        Ok((next, req))
    }
}

fn error_message(seq: Option<u64>, e: &ApiError) -> Message {
    let body = serde_json::json!({ "seq": seq, "error": e.error, "message": e.message });
    Message::Text(body.to_string().into())
}

async fn session(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (latest_tx, mut latest_rx) = watch::channel::<Option<(u64, ResolvedRender)>>(None);
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(8);

    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(msg).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    // One render in flight per session; the watch channel keeps only the
    // newest state, which is what coalesces bursts.
    let render_state = state.clone();
    let render_out = out_tx.clone();
    let renderer = tokio::spawn(async move {
        while latest_rx.changed().await.is_ok() {
            let Some((seq, req)) = latest_rx.borrow_and_update().clone() else { continue };
            let msg = match render_state.render_blocking(req).await {
                Ok(png) => {
                    let mut frame = Vec::with_capacity(8 + png.len());
                    frame.extend_from_slice(&seq.to_le_bytes());
                    frame.extend_from_slice(&png);
                    Message::Binary(frame.into())
                }
                Err(e) => error_message(Some(seq), &e),
            };
            if render_out.send(msg).await.is_err() {
                break;
            }
        }
    });

    let mut spec = SessionSpec::default();
    let mut shutdown = state.shutdown.clone();
    loop {
        let msg = tokio::select! {
            m = stream.next() => m,
            _ = shutdown.wait_for(|stop| *stop) => break,
        };
        let Some(Ok(msg)) = msg else { break };
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let update: StateUpdate = match serde_json::from_str(text.as_str()) {
            Ok(u) => u,
            Err(e) => {
                let _ = out_tx.send(error_message(None, &ApiError::bad_request("malformed_update", e.to_string()))).await;
                continue;
            }
        };
        let resolved = spec
            .apply(&update)
            .and_then(|(next, req)| req.resolve(&state.limits, &state.envs).map(|r| (next, r)));
        match resolved {
            Ok((next, r)) => {
                spec = next;
                latest_tx.send_replace(Some((update.seq, r)));
            }
            Err(e) => {
                let _ = out_tx.send(error_message(Some(update.seq), &e)).await;
            }
        }
    }
    drop(latest_tx);
    let _ = renderer.await;
    drop(out_tx);
    let _ = writer.await;
}
