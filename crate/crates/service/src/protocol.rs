//! Request and response schemas.
//!
//! A render request is a JSON object:
//!
//! ```json
//! {
//!   "camera": {"kind": "look_at", "eye": [0, 1, 4], "target": [0, 0, 0],
//!              "fov_y_deg": 40, "width": 256, "height": 256},
//!   "lights": [{"kind": "point", "position": [2, 3, 2], "intensity": [16, 16, 16]}],
//!   "mask": "full",
//!   "tone_map": true
//! }
//! ```
//!
//! Cameras are either `look_at` (with optional `up`, default `[0, 1, 0]`, and
//! `fov_y_deg`, default 40) or `pinhole` with explicit `fx, fy, cx, cy`,
//! world-to-camera `rotation` and `translation`. Lights are `point`
//! (`position`, `intensity`), `directional` (`direction` toward the light,
//! `radiance`) or `environment` (`map` naming a map loaded at startup,
//! optional `samples`).

use std::collections::HashMap;
use std::sync::Arc;

use bshsplat::image::HdrImage;
use bshsplat::raster::Camera;
use bshsplat::relight::ComponentMask;
use bshsplat::scene::{LightSource, DEFAULT_ENV_SAMPLES};
use bshsplat::sh::Direction;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraSpec {
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        #[serde(default = "default_fov")]
        fov_y_deg: f64,
        width: usize,
        height: usize,
    },
    Pinhole {
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    },
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    40.0
}

impl CameraSpec {
    pub fn resolution(&self) -> (usize, usize) {
        match self {
            CameraSpec::LookAt { width, height, .. } | CameraSpec::Pinhole { width, height, .. } => (*width, *height),
        }
    }

    pub fn camera(&self) -> bshsplat::error::Result<Camera<f64>> {
        let cam: Camera<f64> = match self {
            CameraSpec::LookAt { eye, target, up, fov_y_deg, width, height } => {
                Camera::look_at(*eye, *target, *up, *fov_y_deg, *width, *height)?
            }
            CameraSpec::Pinhole { fx, fy, cx, cy, width, height, rotation, translation } => {
                Camera::new(*fx, *fy, *cx, *cy, *width, *height, *rotation, *translation)?
            }
        };
        Ok(cam)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightSpec {
    Point { position: [f64; 3], intensity: [f64; 3] },
    Directional { direction: [f64; 3], radiance: [f64; 3] },
    Environment { map: String, #[serde(default)] samples: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub camera: CameraSpec,
    #[serde(default)]
    pub lights: Vec<LightSpec>,
    #[serde(default = "default_mask")]
    pub mask: String,
    #[serde(default = "default_tone_map")]
    pub tone_map: bool,
}

fn default_mask() -> String {
    "full".into()
}

fn default_tone_map() -> bool {
    true
}

/// Incremental update on the interactive channel; present fields replace the
/// session's current values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateUpdate {
    pub seq: u64,
    #[serde(default)]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub lights: Option<Vec<LightSpec>>,
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub tone_map: Option<bool>,
}

/// Request bounds enforced before any rendering work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_width: usize,
    pub max_height: usize,
    pub max_lights: usize,
    pub max_env_samples: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_width: 2048, max_height: 2048, max_lights: 64, max_env_samples: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub primitives: u64,
    pub parameters: u64,
    pub parameters_per_primitive: u64,
    pub bytes_per_primitive: u64,
    pub memory_bytes: u64,
    pub relight_evaluations: u64,
    pub limits: Limits,
    pub env_maps: Vec<String>,
}

/// Machine-readable failure: HTTP status, stable code and human message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError { status: 400, error: code.into(), message: message.into() }
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        ApiError { status: 422, error: code.into(), message: message.into() }
    }

    pub fn internal(code: &str, message: impl Into<String>) -> Self {
        ApiError { status: 500, error: code.into(), message: message.into() }
    }
}

/// A validated request ready to render.
#[derive(Clone, Debug)]
pub struct ResolvedRender {
    pub camera: Camera<f64>,
    pub lights: Vec<LightSource<f64>>,
    pub mask: ComponentMask,
    pub tone_map: bool,
}

pub type EnvMaps = HashMap<String, Arc<HdrImage<f64>>>;

impl RenderRequest {
    pub fn resolve(&self, limits: &Limits, envs: &EnvMaps) -> Result<ResolvedRender, ApiError> {
        let (w, h) = self.camera.resolution();
        if w > limits.max_width || h > limits.max_height {
            return Err(ApiError::unprocessable(
                "resolution_too_large",
                format!("{w}x{h} exceeds the limit of {}x{}", limits.max_width, limits.max_height),
            ));
        }
        if self.lights.len() > limits.max_lights {
            return Err(ApiError::unprocessable(
                "too_many_lights",
                format!("{} lights exceed the limit of {}", self.lights.len(), limits.max_lights),
            ));
        }
        let camera = self.camera.camera().map_err(|e| ApiError::unprocessable("invalid_camera", e.to_string()))?;
        let mask = ComponentMask::parse(&self.mask).map_err(|e| ApiError::unprocessable("invalid_mask", e.to_string()))?;
        let lights = self
            .lights
            .iter()
            .enumerate()
            .map(|(i, l)| resolve_light(i, l, limits, envs))
            .collect::<Result<_, _>>()?;
        Ok(ResolvedRender { camera, lights, mask, tone_map: self.tone_map })
    }
}

fn resolve_light(i: usize, spec: &LightSpec, limits: &Limits, envs: &EnvMaps) -> Result<LightSource<f64>, ApiError> {
    let invalid = |e: bshsplat::error::Error| ApiError::unprocessable("invalid_light", format!("lights[{i}]: {e}"));
    match spec {
        LightSpec::Point { position, intensity } => LightSource::point(*position, *intensity).map_err(invalid),
        LightSpec::Directional { direction, radiance } => {
            let d = Direction::from_array(*direction).map_err(invalid)?;
            LightSource::directional(d, *radiance).map_err(invalid)
        }
        LightSpec::Environment { map, samples } => {
            let env = envs.get(map).ok_or_else(|| {
                ApiError::unprocessable("unknown_env_map", format!("lights[{i}]: no environment map named {map:?}"))
            })?;
            let n = samples.unwrap_or(DEFAULT_ENV_SAMPLES);
            if n > limits.max_env_samples {
                return Err(ApiError::unprocessable(
                    "too_many_env_samples",
                    format!("lights[{i}]: {n} samples exceed the limit of {}", limits.max_env_samples),
                ));
            }
            LightSource::environment(env.clone(), n).map_err(invalid)
        }
    }
}
