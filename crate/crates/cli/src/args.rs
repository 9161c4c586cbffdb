use std::path::PathBuf;

use bshsplat::io::synthetic::SyntheticConfig;
use bshsplat::optimizer::TrainingConfig;
use bshsplat::scene::DEFAULT_ENV_SAMPLES;
use clap::{Args, Parser, Subcommand};

/// Relightable Gaussian splats: synthetic data, training, rendering and serving.
#[derive(Debug, Parser)]
#[command(name = "bshsplat", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random ground-truth model for synthetic experiments.
    MakeSubject(MakeSubjectArgs),
    /// Add Gaussian noise to every appearance parameter of a model.
    Perturb(PerturbArgs),
    /// Render a one-light-at-a-time dataset of a model.
    MakeSynthetic(MakeSyntheticArgs),
    /// Optimize a model's appearance against a dataset.
    Train(TrainArgs),
    /// Render one image.
    Render(RenderArgs),
    /// Render the diffuse, directional, direct, indirect and full images.
    Decompose(DecomposeArgs),
    /// Time the relight, projection and rasterization stages.
    Bench(BenchArgs),
    /// Serve a model over HTTP and WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MakeSubjectArgs {
    /// Number of primitives.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Standard deviation of the noise in parameter space.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeSyntheticArgs {
    /// Ground-truth model.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for frames/ and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Training lights on the upper hemisphere.
    #[arg(long, default_value_t = SyntheticConfig::default().n_lights)]
    pub lights: usize,
    /// Cameras on the upper hemisphere.
    #[arg(long, default_value_t = SyntheticConfig::default().n_cams)]
    pub cameras: usize,
    /// Held-out lights, disjoint from the training lights.
    #[arg(long, default_value_t = SyntheticConfig::default().n_holdout_lights)]
    pub holdout_lights: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().width)]
    pub width: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().height)]
    pub height: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().light_radius)]
    pub light_radius: f64,
    /// Point light intensity, all channels.
    #[arg(long, default_value_t = SyntheticConfig::default().light_intensity)]
    pub light_intensity: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().camera_radius)]
    pub camera_radius: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = SyntheticConfig::default().fov_y_deg)]
    pub fov: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Initial model.
    #[arg(long)]
    pub init: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step metrics as JSON lines.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = TrainingConfig::default().iterations)]
    pub iterations: usize,
    #[arg(long, default_value_t = TrainingConfig::default().learning_rate)]
    pub lr: f64,
    /// Weight of the D-SSIM term.
    #[arg(long, default_value_t = TrainingConfig::default().lambda_dssim)]
    pub lambda_dssim: f64,
    /// Weight of the energy-conservation penalty.
    #[arg(long, default_value_t = TrainingConfig::default().lambda_s)]
    pub lambda_s: f64,
    /// Weight of the negativity penalty.
    #[arg(long, default_value_t = TrainingConfig::default().lambda_plus)]
    pub lambda_plus: f64,
    /// Final fraction of the run during which indirect transfer is trained.
    #[arg(long, default_value_t = TrainingConfig::default().t_ind_activation_fraction)]
    pub indirect_fraction: f64,
    #[arg(long, default_value_t = TrainingConfig::default().seed)]
    pub seed: u64,
    /// Training images per step.
    #[arg(long, default_value_t = TrainingConfig::default().batch_size)]
    pub batch: usize,
    /// Steps between held-out evaluations; 0 disables them.
    #[arg(long, default_value_t = TrainingConfig::default().eval_interval)]
    pub eval_interval: usize,
    #[arg(long, default_value_t = TrainingConfig::default().tile_size)]
    pub tile_size: usize,
    /// Steps between progress log lines.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Camera position, "x,y,z".
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,1,4")]
    pub eye: [f64; 3],
    /// Point the camera looks at, "x,y,z".
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
    pub target: [f64; 3],
    /// World up vector, "x,y,z".
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,1,0")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 40.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LightArgs {
    /// Point light "x,y,z:I" or "x,y,z:r,g,b"; repeatable.
    #[arg(long = "point", value_parser = parse_light, allow_hyphen_values = true)]
    pub points: Vec<([f64; 3], [f64; 3])>,
    /// Directional light "dx,dy,dz:L" or "dx,dy,dz:r,g,b" (direction toward the light); repeatable.
    #[arg(long = "directional", value_parser = parse_light, allow_hyphen_values = true)]
    pub directionals: Vec<([f64; 3], [f64; 3])>,
    /// Equirectangular environment map (PFM).
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Quadrature directions for the environment map.
    #[arg(long, requires = "env", default_value_t = DEFAULT_ENV_SAMPLES)]
    pub env_samples: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Tone-mapped PNG output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional linear HDR output (PFM).
    #[arg(long)]
    pub pfm: Option<PathBuf>,
    /// Components to render: full, diffuse, directional, direct or indirect.
    #[arg(long, default_value = "full")]
    pub mask: String,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub lights: LightArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Receives <component>.png and <component>.pfm for each component.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub lights: LightArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub model: Option<PathBuf>,
    /// Benchmark a random model with this many primitives instead of a file.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed of the random model.
    #[arg(long, default_value_t = 1, requires = "synthetic")]
    pub seed: u64,
    /// Directional lights spread over the upper hemisphere.
    #[arg(long, default_value_t = 1)]
    pub lights: usize,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Named environment map "name=path.pfm"; repeatable.
    #[arg(long = "env", value_parser = parse_named_path)]
    pub envs: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 2048)]
    pub max_width: usize,
    #[arg(long, default_value_t = 2048)]
    pub max_height: usize,
    #[arg(long, default_value_t = 64)]
    pub max_lights: usize,
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("{p:?} is not finite"));
        }
    }
    Ok(v)
}

pub fn parse_light(s: &str) -> Result<([f64; 3], [f64; 3]), String> {
    let (pos, rgb) = s.split_once(':').ok_or_else(|| format!("expected \"x,y,z:intensity\", got {s:?}"))?;
    let pos = parse_vec3(pos)?;
    let rgb = if rgb.contains(',') {
        parse_vec3(rgb)?
    } else {
        let v: f64 = rgb.trim().parse().map_err(|e| format!("{rgb:?}: {e}"))?;
        [v; 3]
    };
    if rgb.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!("light radiance must be finite and non-negative, got {rgb:?}"));
    }
    Ok((pos, rgb))
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected \"name=path\", got {s:?}")),
    }
}
