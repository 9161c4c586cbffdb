use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use bshsplat::bench::bench_render;
use bshsplat::image::HdrImage;
use bshsplat::io::envmap::load_env_map;
use bshsplat::io::manifest::OlatDataset;
use bshsplat::io::model::{load_model, save_model};
use bshsplat::io::pfm::write_pfm;
use bshsplat::io::png::write_png;
use bshsplat::io::synthetic::{hemisphere_points, make_synthetic_dataset, perturb_appearance, random_subject, SyntheticConfig};
use bshsplat::optimizer::{tone_map_ldr, train, TrainingConfig};
use bshsplat::raster::{render, Camera};
use bshsplat::relight::ComponentMask;
use bshsplat::scene::{LightSource, Scene};
use bshsplat::sh::Direction;
use bshsplat_service::{serve, AppState, Limits};
use log::info;

use crate::args::*;

/// A flag combination rejected before any work starts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSubject(a) => make_subject(a),
        Command::Perturb(a) => perturb(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Decompose(a) => decompose(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn load(path: &Path) -> Result<Scene<f64>> {
    let scene = load_model::<f32>(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(scene.cast())
}

fn save(scene: &Scene<f64>, path: &Path) -> Result<()> {
    save_model(&scene.cast::<f32>(), path).with_context(|| format!("writing model {}", path.display()))
}

fn make_subject(a: MakeSubjectArgs) -> Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be positive"));
    }
    save(&random_subject(a.count, a.seed), &a.out)?;
    info!("wrote {} primitives to {}", a.count, a.out.display());
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(usage("--sigma must be finite and non-negative"));
    }
    let scene = load(&a.model)?;
    save(&perturb_appearance(&scene, a.sigma, a.seed)?, &a.out)?;
    info!("wrote perturbed model to {}", a.out.display());
    Ok(())
}

fn make_synthetic(a: MakeSyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_lights: a.lights,
        n_cams: a.cameras,
        n_holdout_lights: a.holdout_lights,
        width: a.width,
        height: a.height,
        light_radius: a.light_radius,
        light_intensity: a.light_intensity,
        camera_radius: a.camera_radius,
        fov_y_deg: a.fov,
    };
    if cfg.n_lights == 0 || cfg.n_cams == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(usage("--lights, --cameras, --width and --height must be positive"));
    }
    let gt = load(&a.model)?;
    let manifest = make_synthetic_dataset(&gt, &cfg, &a.out_dir)?;
    info!("wrote {} frames to {}", manifest.frames.len(), a.out_dir.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = TrainingConfig {
        lambda_dssim: a.lambda_dssim,
        lambda_s: a.lambda_s,
        lambda_plus: a.lambda_plus,
        learning_rate: a.lr,
        iterations: a.iterations,
        t_ind_activation_fraction: a.indirect_fraction,
        seed: a.seed,
        batch_size: a.batch,
        eval_interval: a.eval_interval,
        tile_size: a.tile_size,
    };
    config.validate().map_err(usage)?;
    let dataset = OlatDataset::<f64>::load(&a.manifest).with_context(|| format!("loading dataset {}", a.manifest.display()))?;
    let init = load(&a.init)?;
    let mut metrics = match &a.metrics {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut write_error = None;
    let started = Instant::now();
    let outcome = train(&dataset, &init, &config, |m, _| {
        if let (Some(w), None) = (metrics.as_mut(), &write_error) {
            let line = serde_json::to_string(m).expect("metrics serialize");
            if let Err(e) = writeln!(w, "{line}") {
                write_error = Some(e);
            }
        }
        if let Some(p) = m.holdout_psnr {
            info!("step {} held-out PSNR {:.2} dB", m.step, p);
        }
        if a.log_every > 0 && (m.step + 1) % a.log_every == 0 {
            info!("step {} loss {:.5} (l1 {:.5} dssim {:.5} l_s {:.3e} l_plus {:.3e})", m.step, m.total, m.l1, m.dssim, m.l_s, m.l_plus);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context("writing metrics");
    }
    if let Some(mut w) = metrics {
        w.flush().context("writing metrics")?;
    }
    save(&outcome.scene, &a.out)?;
    info!("trained {} steps in {:.1} s, wrote {}", config.iterations, started.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}

fn camera(c: &CameraArgs) -> Result<Camera<f64>> {
    Camera::look_at(c.eye, c.target, c.up, c.fov, c.width, c.height).map_err(|e| usage(format!("camera: {e}")))
}

fn lights(l: &LightArgs) -> Result<Vec<LightSource<f64>>> {
    let mut out = Vec::new();
    for (p, rgb) in &l.points {
        out.push(LightSource::point(*p, *rgb).map_err(|e| usage(format!("--point: {e}")))?);
    }
    for (d, rgb) in &l.directionals {
        let dir = Direction::from_array(*d).map_err(|e| usage(format!("--directional: {e}")))?;
        out.push(LightSource::directional(dir, *rgb).map_err(|e| usage(format!("--directional: {e}")))?);
    }
    if let Some(path) = &l.env {
        if l.env_samples == 0 {
            return Err(usage("--env-samples must be positive"));
        }
        let map = load_env_map::<f64>(path).with_context(|| format!("loading environment map {}", path.display()))?;
        out.push(LightSource::environment(Arc::new(map), l.env_samples)?);
    }
    Ok(out)
}

fn write_outputs(img: &HdrImage<f64>, png: &Path, pfm: Option<&Path>) -> Result<()> {
    write_png(&tone_map_ldr(img), png).with_context(|| format!("writing {}", png.display()))?;
    if let Some(p) = pfm {
        write_pfm(&img.cast::<f32>(), p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let mask = ComponentMask::parse(&a.mask).map_err(|e| usage(format!("--mask: {e}")))?;
    let cam = camera(&a.camera)?;
    let lights = lights(&a.lights)?;
    let scene = load(&a.model)?;
    let img = render(&scene, &lights, &cam, mask)?;
    write_outputs(&img, &a.out, a.pfm.as_deref())?;
    info!("wrote {}", a.out.display());
    Ok(())
}

pub const COMPONENTS: [(&str, ComponentMask); 5] = [
    ("diffuse", ComponentMask::DIFFUSE),
    ("directional", ComponentMask::DIRECTIONAL),
    ("direct", ComponentMask::DIRECT),
    ("indirect", ComponentMask::INDIRECT),
    ("full", ComponentMask::FULL),
];

fn decompose(a: DecomposeArgs) -> Result<()> {
    let cam = camera(&a.camera)?;
    let lights = lights(&a.lights)?;
    let scene = load(&a.model)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (name, mask) in COMPONENTS {
        let img = render(&scene, &lights, &cam, mask)?;
        let png = a.out_dir.join(format!("{name}.png"));
        write_outputs(&img, &png, Some(&a.out_dir.join(format!("{name}.pfm"))))?;
    }
    info!("wrote {} components to {}", COMPONENTS.len(), a.out_dir.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.repetitions == 0 {
        return Err(usage("--repetitions must be positive"));
    }
    if a.synthetic == Some(0) {
        return Err(usage("--synthetic must be positive"));
    }
    let cam = Camera::look_at([0.0, 1.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, a.width, a.height)
        .map_err(|e| usage(format!("camera: {e}")))?;
    let scene: Scene<f32> = match (&a.model, a.synthetic) {
        (Some(path), _) => load_model(path).with_context(|| format!("loading model {}", path.display()))?,
        (None, Some(n)) => random_subject(n, a.seed).cast(),
        (None, None) => unreachable!("clap requires a model source"),
    };
    let lights = hemisphere_points(a.lights, 0.0)
        .into_iter()
        .map(|p| LightSource::directional(Direction::from_array(p.map(|v| v as f32))?, [1.0; 3]))
        .collect::<bshsplat::Result<Vec<_>>>()?;
    let report = bench_render(&scene, &lights, &cam.cast(), a.repetitions)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("primitives        {}", report.primitives);
        println!("parameters        {}", report.parameters);
        println!("memory_bytes      {}", report.memory_bytes);
        println!("lights            {}", report.lights);
        println!("resolution        {}x{}", report.width, report.height);
        println!("relight_ms        {:.3}", report.relight_ms);
        println!("project_ms        {:.3}", report.project_ms);
        println!("rasterize_ms      {:.3}", report.rasterize_ms);
        println!("total_ms          {:.3}", report.total_ms);
        println!("relight_us_per_primitive {:.4}", report.relight_us_per_primitive);
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let limits = Limits { max_width: a.max_width, max_height: a.max_height, max_lights: a.max_lights, ..Limits::default() };
    let state = AppState::load(&a.model, limits, &a.envs).with_context(|| format!("loading {}", a.model.display()))?;
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind).await.with_context(|| format!("binding {}", a.bind))?;
        info!("listening on http://{}", listener.local_addr()?);
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await
        .context("serving")
    })
}
