//! Projection of 3D Gaussians and front-to-back alpha compositing.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::math::{self, Mat3, Vec3};
use crate::real::Real;
use crate::relight::{relight_scene, ComponentMask, RelightCache, RelitColor};
use crate::scene::{LightSource, Primitive, Scene};
use crate::sh::{dot_basis, eval_sh_basis, Direction};

/// Added to the diagonal of every screen-space covariance (px^2).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this.
pub const T_MIN: f64 = 1e-4;
/// Camera-space depth at or below which primitives are culled.
pub const NEAR_PLANE: f64 = 0.01;
pub const DEFAULT_TILE_SIZE: usize = 16;

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// coordinates are `u = fx x / z + cx`, `v = fy y / z + cy` and pixel
/// `(i, j)` is centered at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    /// World-to-camera translation.
    pub translation: Vec3<T>,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Mat3<T>,
        translation: Vec3<T>,
    ) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        Ok(Camera { fx, fy, cx, cy, width, height, rotation, translation })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly toward the top of
    /// the frame and a vertical field of view in degrees.
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        fov_y_deg: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = Direction::from_array(math::sub(target, eye))?.as_array();
        let right = Direction::from_array(math::cross(forward, up))
            .map_err(|_| Error::invalid("look_at: up vector parallel to view direction"))?
            .as_array();
        let down = math::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = math::scale(math::mat_vec(&rotation, eye), -T::one());
        let half = T::lit(0.5);
        let fy = T::lit(height as f64) * half / (fov_y_deg.to_radians() * half).tan();
        Camera::new(
            fy,
            fy,
            T::lit(width as f64) * half,
            T::lit(height as f64) * half,
            width,
            height,
            rotation,
            translation,
        )
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3<T> {
        math::scale(math::mat_vec(&math::transpose(&self.rotation), self.translation), -T::one())
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        math::add(math::mat_vec(&self.rotation, p), self.translation)
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
        }
    }
}

/// A primitive in screen space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    /// Index of the source primitive.
    pub index: usize,
    pub mean: [T; 2],
    /// Symmetric covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub cov: [T; 3],
    pub depth: T,
    pub opacity: T,
    pub color: RelitColor<T>,
    pub view_dir: Direction<T>,
}

impl<T: Real> ProjectedGaussian<T> {
    /// Radiance toward the camera, clamped at zero per channel. The second
    /// array flags channels where the clamp passes (value >= 0).
    pub fn rgb(&self) -> ([T; 3], [bool; 3]) {
        let basis = eval_sh_basis(&self.view_dir);
        let raw = self.color.sh.map(|c| dot_basis(&c, &basis));
        let pass = raw.map(|v| v >= T::zero());
        (std::array::from_fn(|c| if pass[c] { raw[c] } else { T::zero() }), pass)
    }
}

/// Projects one primitive. Returns `None` when it lies at or behind the near plane.
pub fn project<T: Real>(
    index: usize,
    prim: &Primitive<T>,
    color: RelitColor<T>,
    cam: &Camera<T>,
) -> Option<ProjectedGaussian<T>> {
    let p = cam.world_to_camera(prim.position);
    if !(p[2] > T::lit(NEAR_PLANE)) {
        return None;
    }
    let z = p[2];
    let mean = [cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy];
    let z2 = z * z;
    let j = [
        [cam.fx / z, T::zero(), -cam.fx * p[0] / z2],
        [T::zero(), cam.fy / z, -cam.fy * p[1] / z2],
    ];
    // M = J W, then cov2d = M Sigma M^T.
    let w = &cam.rotation;
    let m: [[T; 3]; 2] = std::array::from_fn(|r| {
        std::array::from_fn(|c| j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c])
    });
    let sigma = prim.covariance();
    let ms: [[T; 3]; 2] = std::array::from_fn(|r| math::mat_vec(&math::transpose(&sigma), m[r]));
    let a = math::dot(ms[0], m[0]) + T::lit(LOW_PASS);
    let b = math::dot(ms[0], m[1]);
    let c = math::dot(ms[1], m[1]) + T::lit(LOW_PASS);
    let view_dir = Direction::from_array(math::sub(prim.position, cam.center())).ok()?;
    Some(ProjectedGaussian {
        index,
        mean,
        cov: [a, b, c],
        depth: z,
        opacity: prim.opacity(),
        color,
        view_dir,
    })
}

/// Screen-space data needed per pixel.
#[derive(Clone, Debug)]
pub(crate) struct Splat<T> {
    /// Position in the projected list.
    pub source: usize,
    pub mean: [T; 2],
    pub conic: [T; 3],
    pub opacity: T,
    pub rgb: [T; 3],
    pub pass: [bool; 3],
    pub depth: T,
    /// Pixel radius beyond which alpha is guaranteed below the skip threshold.
    pub radius: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterStats {
    /// Splats dropped because their screen covariance was not invertible.
    pub non_invertible: usize,
    /// Splats that can never reach the alpha threshold.
    pub transparent: usize,
}

/// Converts projected Gaussians into depth-sorted splats; ties in depth are
/// broken by primitive index.
pub(crate) fn prepare_splats<T: Real>(projected: &[ProjectedGaussian<T>]) -> (Vec<Splat<T>>, RasterStats) {
    let mut stats = RasterStats::default();
    let mut splats = Vec::with_capacity(projected.len());
    let alpha_min = T::lit(ALPHA_MIN);
    for (k, g) in projected.iter().enumerate() {
        let [a, b, c] = g.cov;
        let det = a * c - b * b;
        if !(det > T::zero()) || !det.is_finite() {
            stats.non_invertible += 1;
            continue;
        }
        if g.opacity < alpha_min {
            stats.transparent += 1;
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let half_tr = (a + c) * T::lit(0.5);
        let lambda_max = half_tr + (half_tr * half_tr - det).max(T::zero()).sqrt();
        let reach = (T::lit(2.0) * (g.opacity / alpha_min).ln()).max(T::zero());
        let radius = (reach * lambda_max).sqrt() + T::one();
        let (rgb, pass) = g.rgb();
        splats.push(Splat {
            source: k,
            mean: g.mean,
            conic,
            opacity: g.opacity,
            rgb,
            pass,
            depth: g.depth,
            radius,
        });
    }
    splats.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(projected[x.source].index.cmp(&projected[y.source].index))
    });
    (splats, stats)
}

/// Tile grid with, per tile, the depth-ordered splat indices overlapping it.
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

pub(crate) fn bin_tiles<T: Real>(splats: &[Splat<T>], width: usize, height: usize, tile_size: usize) -> TileBins {
    let tile_size = tile_size.max(1);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let (u, v, r) = (s.mean[0].as_f64(), s.mean[1].as_f64(), s.radius.as_f64());
        let x0 = (u - r - 0.5).ceil().max(0.0);
        let x1 = (u + r - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (v - r - 0.5).ceil().max(0.0);
        let y1 = (v + r - 0.5).floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / tile_size, x1 as usize / tile_size);
        let (ty0, ty1) = (y0 as usize / tile_size, y1 as usize / tile_size);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins { tile_size, tiles_x, lists }
}

/// Per-contribution record: position in the tile list, alpha, and the
/// transmittance in front of it.
pub(crate) struct Contribution<T> {
    pub slot: usize,
    pub alpha: T,
    /// Whether alpha hit the `ALPHA_MAX` clip.
    pub clipped: bool,
    pub transmittance: T,
    pub gauss: T,
}

/// Composites one pixel front to back over `list`; `visit` sees every
/// contribution that was accumulated.
#[inline]
pub(crate) fn composite_pixel<T: Real>(
    px: usize,
    py: usize,
    list: &[u32],
    splats: &[Splat<T>],
    mut visit: impl FnMut(Contribution<T>),
) -> [T; 3] {
    let half = T::lit(0.5);
    let p = [T::lit(px as f64) + half, T::lit(py as f64) + half];
    let alpha_max = T::lit(ALPHA_MAX);
    let alpha_min = T::lit(ALPHA_MIN);
    let t_min = T::lit(T_MIN);
    let mut color = [T::zero(); 3];
    let mut trans = T::one();
    for (slot, &i) in list.iter().enumerate() {
        let s = &splats[i as usize];
        let dx = p[0] - s.mean[0];
        let dy = p[1] - s.mean[1];
        let power = -half * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
        if power > T::zero() {
            continue;
        }
        let gauss = power.exp();
        let raw = s.opacity * gauss;
        let clipped = raw > alpha_max;
        let alpha = if clipped { alpha_max } else { raw };
        if alpha < alpha_min {
            continue;
        }
        let w = trans * alpha;
        for c in 0..3 {
            color[c] += w * s.rgb[c];
        }
        visit(Contribution { slot, alpha, clipped, transmittance: trans, gauss });
        trans = trans * (T::one() - alpha);
        if trans < t_min {
            break;
        }
    }
    color
}

/// Tile-parallel rasterization of already projected Gaussians.
pub fn rasterize<T: Real>(
    projected: &[ProjectedGaussian<T>],
    cam: &Camera<T>,
    tile_size: usize,
) -> (HdrImage<T>, RasterStats) {
    let (splats, stats) = prepare_splats(projected);
    let bins = bin_tiles(&splats, cam.width, cam.height, tile_size);
    let image = composite_tiles(&splats, &bins, cam.width, cam.height);
    (image, stats)
}

pub(crate) fn composite_tiles<T: Real>(splats: &[Splat<T>], bins: &TileBins, width: usize, height: usize) -> HdrImage<T> {
    let ts = bins.tile_size;
    let blocks: Vec<Vec<[T; 3]>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
            let list = &bins.lists[t];
            let mut block = Vec::with_capacity(ts * ts);
            for py in ty * ts..((ty + 1) * ts).min(height) {
                for px in tx * ts..((tx + 1) * ts).min(width) {
                    block.push(if list.is_empty() {
                        [T::zero(); 3]
                    } else {
                        composite_pixel(px, py, list, splats, |_| {})
                    });
                }
            }
            block
        })
        .collect();
    let mut image = HdrImage::new(width, height);
    for (t, block) in blocks.into_iter().enumerate() {
        let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
        let mut it = block.into_iter();
        for py in ty * ts..((ty + 1) * ts).min(height) {
            for px in tx * ts..((tx + 1) * ts).min(width) {
                image.set_pixel(px, py, it.next().expect("block covers tile"));
            }
        }
    }
    image
}

/// Projects every primitive with its relit color; culled ones are dropped.
pub fn project_scene<T: Real>(
    scene: &Scene<T>,
    colors: &[RelitColor<T>],
    cam: &Camera<T>,
) -> Vec<ProjectedGaussian<T>> {
    scene
        .primitives
        .par_iter()
        .zip(colors.par_iter())
        .enumerate()
        .filter_map(|(i, (prim, color))| project(i, prim, *color, cam))
        .collect()
}

/// Relight, project, sort, bin and composite.
pub fn render<T: Real>(
    scene: &Scene<T>,
    lights: &[LightSource<T>],
    cam: &Camera<T>,
    mask: ComponentMask,
) -> Result<HdrImage<T>> {
    let colors = relight_scene(scene, lights, mask)?;
    Ok(rasterize(&project_scene(scene, &colors, cam), cam, DEFAULT_TILE_SIZE).0)
}

/// Renders one scene snapshot, re-running relighting only when the lighting
/// state changes.
pub struct Renderer<T> {
    scene: Arc<Scene<T>>,
    cache: RelightCache<T>,
    tile_size: usize,
}

impl<T: Real> Renderer<T> {
    pub fn new(scene: Arc<Scene<T>>) -> Self {
        Renderer { scene, cache: RelightCache::new(), tile_size: DEFAULT_TILE_SIZE }
    }

    pub fn with_tile_size(mut self, tile_size: usize) -> Self {
        self.tile_size = tile_size.max(1);
        self
    }

    pub fn scene(&self) -> &Arc<Scene<T>> {
        &self.scene
    }

    pub fn relight_evaluations(&self) -> u64 {
        self.cache.evaluations()
    }

    pub fn relight(&self, lights: &[LightSource<T>], mask: ComponentMask) -> Result<Arc<Vec<RelitColor<T>>>> {
        self.cache.relight(&self.scene, lights, mask)
    }

    pub fn render(&self, lights: &[LightSource<T>], cam: &Camera<T>, mask: ComponentMask) -> Result<HdrImage<T>> {
        let colors = self.relight(lights, mask)?;
        Ok(rasterize(&project_scene(&self.scene, &colors, cam), cam, self.tile_size).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::ShVector;

    fn axis_camera(d: f64) -> Camera<f64> {
        Camera::look_at([0.0, 0.0, d], [0.0; 3], [0.0, 1.0, 0.0], 60.0, 32, 32).unwrap()
    }

    fn const_color(rgb: [f64; 3]) -> RelitColor<f64> {
        RelitColor { sh: rgb.map(ShVector::constant) }
    }

    #[test]
    fn camera_validation() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, id, [0.0; 3]).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 4, id, [0.0; 3]).is_err());
        let cam = axis_camera(5.0);
        let c = cam.center();
        assert!((c[2] - 5.0).abs() < 1e-12 && c[0].abs() < 1e-12);
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let cam = axis_camera(4.0);
        let p = Primitive::<f64>::default();
        let g = project(0, &p, RelitColor::default(), &cam).unwrap();
        assert!((g.mean[0] - cam.cx).abs() < 1e-12);
        assert!((g.mean[1] - cam.cy).abs() < 1e-12);
        assert!((g.depth - 4.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let d = 4.0;
        let cam = axis_camera(d);
        let sigma: f64 = 0.2;
        let mut p = Primitive::<f64>::default();
        p.log_scale = [sigma.ln(); 3];
        let g = project(0, &p, RelitColor::default(), &cam).unwrap();
        let expect = (cam.fx * sigma / d).powi(2) + LOW_PASS;
        assert!((g.cov[0] - expect).abs() < 1e-12);
        assert!((g.cov[2] - expect).abs() < 1e-12);
        assert!(g.cov[1].abs() < 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = axis_camera(0.005);
        assert!(project(0, &Primitive::<f64>::default(), RelitColor::default(), &cam).is_none());
        let behind = axis_camera(-3.0);
        let mut p = Primitive::<f64>::default();
        p.position = [0.0, 0.0, -5.0];
        assert!(project(0, &p, RelitColor::default(), &behind).is_none());
    }

    fn point_splat(mean: [f64; 2], opacity: f64, rgb: [f64; 3], depth: f64, index: usize) -> ProjectedGaussian<f64> {
        ProjectedGaussian {
            index,
            mean,
            cov: [0.5, 0.0, 0.5],
            depth,
            opacity,
            color: const_color(rgb),
            view_dir: Direction::new(0.0, 0.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn single_gaussian_centered_on_pixel() {
        let cam = axis_camera(4.0);
        let g = point_splat([10.5, 7.5], 0.6, [0.2, 0.5, 1.0], 1.0, 0);
        let (img, _) = rasterize(&[g], &cam, 16);
        let px = img.pixel(10, 7);
        for (c, want) in [0.2, 0.5, 1.0].iter().enumerate() {
            assert!((px[c] - 0.6 * want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_coincident_gaussians() {
        let cam = axis_camera(4.0);
        let (o1, o2) = (0.4, 0.7);
        let front = point_splat([3.5, 3.5], o1, [1.0, 0.0, 0.0], 1.0, 1);
        let back = point_splat([3.5, 3.5], o2, [0.0, 1.0, 0.0], 2.0, 0);
        let (img, _) = rasterize(&[back, front], &cam, 8);
        let px = img.pixel(3, 3);
        assert!((px[0] - o1).abs() < 1e-12);
        assert!((px[1] - (1.0 - o1) * o2).abs() < 1e-12);
    }

    #[test]
    fn equal_depth_ties_broken_by_index() {
        let cam = axis_camera(4.0);
        let a = point_splat([3.5, 3.5], 0.5, [1.0, 0.0, 0.0], 1.0, 0);
        let b = point_splat([3.5, 3.5], 0.5, [0.0, 1.0, 0.0], 1.0, 1);
        let (x, _) = rasterize(&[a.clone(), b.clone()], &cam, 16);
        let (y, _) = rasterize(&[b, a], &cam, 16);
        assert_eq!(x, y);
        assert!((x.pixel(3, 3)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_invertible_is_skipped_and_counted() {
        let cam = axis_camera(4.0);
        let mut g = point_splat([3.5, 3.5], 0.5, [1.0; 3], 1.0, 0);
        g.cov = [1.0, 1.0, 1.0];
        let (img, stats) = rasterize(&[g], &cam, 16);
        assert_eq!(stats.non_invertible, 1);
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_radiance_is_clamped() {
        let cam = axis_camera(4.0);
        let g = point_splat([3.5, 3.5], 0.5, [-1.0, 0.5, 0.0], 1.0, 0);
        let (img, _) = rasterize(&[g], &cam, 16);
        assert_eq!(img.pixel(3, 3)[0], 0.0);
    }

    #[test]
    fn empty_scene_renders_black() {
        let cam = axis_camera(4.0);
        let img = render(&Scene::<f64>::default(), &[], &cam, ComponentMask::FULL).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        assert!(img.data.iter().all(|&v| v == 0.0));
    }
}
