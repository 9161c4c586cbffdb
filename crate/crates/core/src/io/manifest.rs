//! OLAT dataset manifest: a JSON document naming cameras, lights and frames.
//!
//! ```json
//! {
//!   "name": "subject",
//!   "cameras": [{"id": "cam0", "fx": 88.0, "fy": 88.0, "cx": 32.0, "cy": 32.0,
//!                "width": 64, "height": 64,
//!                "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,4]}],
//!   "lights": [{"id": "L0", "kind": "point", "position": [0,4,0], "intensity": [16,16,16]}],
//!   "frames": [{"image": "frames/train_L0_cam0.pfm", "camera": "cam0",
//!               "light": "L0", "partition": "train"}]
//! }
//! ```
//!
//! Image paths are relative to the manifest's directory. A frame in the
//! `all-on` partition uses the light marker `"all-on"`, meaning every light
//! that appears in a `train` frame is switched on together.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::io::pfm::read_pfm;
use crate::math::{Mat3, Vec3};
use crate::raster::Camera;
use crate::real::Real;
use crate::scene::LightSource;
use crate::sh::Direction;

pub const ALL_ON: &str = "all-on";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl CameraEntry {
    pub fn from_camera<T: Real>(id: impl Into<String>, cam: &Camera<T>) -> Self {
        let c = cam.cast::<f64>();
        CameraEntry {
            id: id.into(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: c.rotation,
            translation: c.translation,
        }
    }

    pub fn camera<T: Real>(&self) -> Result<Camera<T>> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.rotation,
            self.translation,
        )
        .map(|c| c.cast())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LightKind {
    Point { position: Vec3<f64>, intensity: [f64; 3] },
    Directional { direction: Vec3<f64>, radiance: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightEntry {
    pub id: String,
    #[serde(flatten)]
    pub kind: LightKind,
}

impl LightEntry {
    pub fn light<T: Real>(&self) -> Result<LightSource<T>> {
        let c = |v: [f64; 3]| v.map(T::lit);
        match &self.kind {
            LightKind::Point { position, intensity } => LightSource::point(c(*position), c(*intensity)),
            LightKind::Directional { direction, radiance } => {
                LightSource::directional(Direction::from_array(c(*direction))?, c(*radiance))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "all-on")]
    AllOn,
    #[serde(rename = "holdout")]
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub image: String,
    pub camera: String,
    pub light: String,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlatManifest {
    pub name: String,
    pub cameras: Vec<CameraEntry>,
    pub lights: Vec<LightEntry>,
    pub frames: Vec<FrameEntry>,
}

fn manifest_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Manifest { location: location.into(), message: message.into() }
}

impl OlatManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: OlatManifest = serde_json::from_str(text).map_err(|e| {
            manifest_err(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Checks id uniqueness, references, and partition/marker pairing.
    pub fn validate(&self) -> Result<()> {
        let mut cams = HashSet::new();
        for (i, c) in self.cameras.iter().enumerate() {
            if !cams.insert(c.id.as_str()) {
                return Err(manifest_err(format!("cameras[{i}].id"), format!("duplicate camera id {:?}", c.id)));
            }
            c.camera::<f64>().map_err(|e| manifest_err(format!("cameras[{i}]"), e.to_string()))?;
        }
        let mut lights = HashSet::new();
        for (i, l) in self.lights.iter().enumerate() {
            if l.id == ALL_ON {
                return Err(manifest_err(format!("lights[{i}].id"), "\"all-on\" is reserved"));
            }
            if !lights.insert(l.id.as_str()) {
                return Err(manifest_err(format!("lights[{i}].id"), format!("duplicate light id {:?}", l.id)));
            }
            l.light::<f64>().map_err(|e| manifest_err(format!("lights[{i}]"), e.to_string()))?;
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !cams.contains(f.camera.as_str()) {
                return Err(manifest_err(format!("frames[{i}].camera"), format!("unknown camera id {:?}", f.camera)));
            }
            let marker = f.light == ALL_ON;
            match (f.partition, marker) {
                (Partition::AllOn, true) => {}
                (Partition::AllOn, false) => {
                    return Err(manifest_err(format!("frames[{i}].light"), "all-on frames must use the \"all-on\" marker"));
                }
                (_, true) => {
                    return Err(manifest_err(format!("frames[{i}].light"), "\"all-on\" marker outside the all-on partition"));
                }
                (_, false) if !lights.contains(f.light.as_str()) => {
                    return Err(manifest_err(format!("frames[{i}].light"), format!("unknown light id {:?}", f.light)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Ids of the lights referenced by training frames, in declaration order.
    pub fn train_light_ids(&self) -> Vec<&str> {
        let used: HashSet<&str> = self
            .frames
            .iter()
            .filter(|f| f.partition == Partition::Train)
            .map(|f| f.light.as_str())
            .collect();
        self.lights.iter().map(|l| l.id.as_str()).filter(|id| used.contains(id)).collect()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<OlatManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    OlatManifest::from_json(&text)
}

pub fn write_manifest(manifest: &OlatManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

/// One loaded image with the camera and lights it was captured under.
#[derive(Clone, Debug)]
pub struct Frame<T> {
    pub camera: Camera<T>,
    pub camera_id: String,
    pub lights: Vec<LightSource<T>>,
    pub light_id: String,
    pub partition: Partition,
    pub image: HdrImage<T>,
}

#[derive(Clone, Debug)]
pub struct OlatDataset<T> {
    pub name: String,
    pub frames: Vec<Frame<T>>,
}

impl<T: Real> OlatDataset<T> {
    /// Reads the manifest, resolves every image path and checks that image
    /// sizes agree with their cameras.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = read_manifest(manifest_path)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_manifest(&manifest, &base)
    }

    pub fn from_manifest(manifest: &OlatManifest, base: &Path) -> Result<Self> {
        manifest.validate()?;
        let cameras: HashMap<&str, Camera<T>> = manifest
            .cameras
            .iter()
            .map(|c| Ok((c.id.as_str(), c.camera()?)))
            .collect::<Result<_>>()?;
        let lights: HashMap<&str, LightSource<T>> = manifest
            .lights
            .iter()
            .map(|l| Ok((l.id.as_str(), l.light()?)))
            .collect::<Result<_>>()?;
        let all_on: Vec<LightSource<T>> =
            manifest.train_light_ids().into_iter().map(|id| lights[id].clone()).collect();
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for (i, f) in manifest.frames.iter().enumerate() {
            let path: PathBuf = base.join(&f.image);
            if !path.is_file() {
                return Err(manifest_err(format!("frames[{i}].image"), format!("{} does not exist", path.display())));
            }
            let image = read_pfm(&path)?.cast::<T>();
            let camera = cameras[f.camera.as_str()].clone();
            if (image.width, image.height) != (camera.width, camera.height) {
                return Err(manifest_err(
                    format!("frames[{i}].image"),
                    format!(
                        "image is {}x{} but camera {:?} is {}x{}",
                        image.width, image.height, f.camera, camera.width, camera.height
                    ),
                ));
            }
            let frame_lights = if f.partition == Partition::AllOn {
                all_on.clone()
            } else {
                vec![lights[f.light.as_str()].clone()]
            };
            frames.push(Frame {
                camera,
                camera_id: f.camera.clone(),
                lights: frame_lights,
                light_id: f.light.clone(),
                partition: f.partition,
                image,
            });
        }
        Ok(OlatDataset { name: manifest.name.clone(), frames })
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &Frame<T>> {
        self.frames.iter().filter(move |f| f.partition == p)
    }

    pub fn count(&self, p: Partition) -> usize {
        self.partition(p).count()
    }
}
