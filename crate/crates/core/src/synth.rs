//! Seeded planar scenes with exact ground truth.
//!
//! A [`Scene`] is a smooth procedural texture over a square of `extent` meters
//! (x east, y north). Satellite crops are north-up orthographic renders; ground
//! panoramas cast each pixel ray below the horizon onto the ground plane and read
//! the same texture at the hit point. Above the horizon the panorama holds a
//! constant sky value.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feat::{check_fov, fov_columns};
use crate::img::{save_png, Image};
use crate::xform;

/// Panorama value above the horizon.
pub const SKY: f32 = 0.53;

pub const DEFAULT_EXTENT: f64 = 200.0;

/// Spacing of scene origins on the dataset's world grid, meters.
pub const DEFAULT_SPACING: f64 = 100.0;

#[derive(Clone, Copy, Debug)]
struct Patch {
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
struct Road {
    px: f64,
    py: f64,
    dx: f64,
    dy: f64,
    half_width: f64,
    color: [f64; 3],
}

/// Immutable procedural scene.
#[derive(Clone, Debug)]
pub struct Scene {
    seed: u64,
    extent: f64,
    low: [f64; 3],
    high: [f64; 3],
    patches: Vec<Patch>,
    roads: Vec<Road>,
}

/// Camera pose in scene meters; azimuth in degrees, 0 = north, clockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePose {
    pub x: f64,
    pub y: f64,
    pub azimuth_deg: f64,
}

impl ScenePose {
    pub fn new(x: f64, y: f64, azimuth_deg: f64) -> Self {
        Self { x, y, azimuth_deg }
    }
}

const EDGE: f64 = 1.0;
const OCTAVES: [(f64, f64); 3] = [(20.0, 0.5), (7.0, 0.3), (3.0, 0.2)];

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64(octave ^ mix64(ix as u64 ^ mix64(iy as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, octave: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, octave, ix, iy);
    let b = lattice(seed, octave, ix + 1, iy);
    let c = lattice(seed, octave, ix, iy + 1);
    let d = lattice(seed, octave, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Smooth step from 0 at `d = -EDGE` to 1 at `d = EDGE`.
fn soft(d: f64) -> f64 {
    let t = ((d + EDGE) / (2.0 * EDGE)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

impl Scene {
    pub fn new(seed: u64, extent: f64) -> Result<Self> {
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::invalid(format!("scene extent {extent} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let low = random_color(&mut rng, 0.15, 0.35);
        let high = random_color(&mut rng, 0.5, 0.8);
        let area = extent * extent;
        let n_patches = ((area / 2500.0).round() as usize).clamp(4, 40);
        let patches = (0..n_patches)
            .map(|_| {
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Patch {
                    cx: rng.gen_range(0.0..extent),
                    cy: rng.gen_range(0.0..extent),
                    hx: rng.gen_range(3.0..10.0),
                    hy: rng.gen_range(3.0..10.0),
                    cos: angle.cos(),
                    sin: angle.sin(),
                    color: random_color(&mut rng, 0.1, 0.95),
                }
            })
            .collect();
        let n_roads = rng.gen_range(2..=4);
        let roads = (0..n_roads)
            .map(|_| {
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let gray = rng.gen_range(0.3..0.5);
                Road {
                    px: rng.gen_range(0.2 * extent..0.8 * extent),
                    py: rng.gen_range(0.2 * extent..0.8 * extent),
                    dx: angle.cos(),
                    dy: angle.sin(),
                    half_width: rng.gen_range(1.5..4.0),
                    color: [gray, gray, gray + 0.03],
                }
            })
            .collect();
        Ok(Self {
            seed,
            extent,
            low,
            high,
            patches,
            roads,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// RGB texture at world `(x, y)` meters, each channel in `[0, 1]`.
    pub fn texture(&self, x: f64, y: f64) -> [f64; 3] {
        let mut base = 0.0;
        let mut fine = 0.0;
        for (o, &(scale, weight)) in OCTAVES.iter().enumerate() {
            let n = value_noise(self.seed, o as u64, x / scale, y / scale);
            base += weight * n;
            fine = n;
        }
        let mut rgb = lerp3(self.low, self.high, base);
        for p in &self.patches {
            let (dx, dy) = (x - p.cx, y - p.cy);
            if dx.abs() > p.hx + p.hy + EDGE || dy.abs() > p.hx + p.hy + EDGE {
                continue;
            }
            let lx = dx * p.cos + dy * p.sin;
            let ly = -dx * p.sin + dy * p.cos;
            let m = soft(p.hx - lx.abs()) * soft(p.hy - ly.abs());
            if m > 0.0 {
                let shade = 0.85 + 0.3 * fine;
                let c = [p.color[0] * shade, p.color[1] * shade, p.color[2] * shade];
                rgb = lerp3(rgb, c, m);
            }
        }
        for r in &self.roads {
            let dist = ((x - r.px) * r.dy - (y - r.py) * r.dx).abs();
            let m = soft(r.half_width - dist);
            if m > 0.0 {
                rgb = lerp3(rgb, r.color, m);
            }
        }
        rgb.map(|v| v.clamp(0.0, 1.0))
    }

    fn shade(&self, x: f64, y: f64, out: &mut [f32]) {
        let rgb = self.texture(x, y);
        for (o, v) in out.iter_mut().zip(rgb) {
            *o = v as f32;
        }
    }
}

/// North-up orthographic crop of `size_px` pixels centered on `(x, y)`.
///
/// Pixel `(i, j)` shows world `(x + (j - c) * mpp, y - (i - c) * mpp)` with
/// `c = (size_px - 1) / 2`, the same center used by the transforms.
pub fn render_satellite(scene: &Scene, x: f64, y: f64, size_px: usize, mpp: f64) -> Result<Image> {
    if size_px == 0 || !(mpp > 0.0) {
        return Err(Error::invalid("satellite crop needs a positive size and resolution"));
    }
    let half = size_px as f64 * mpp / 2.0;
    if x - half < 0.0 || y - half < 0.0 || x + half > scene.extent || y + half > scene.extent {
        return Err(Error::invalid(format!(
            "crop of {:.2} m around ({x:.2}, {y:.2}) leaves a {:.2} m scene",
            2.0 * half,
            scene.extent
        )));
    }
    let c = (size_px as f64 - 1.0) / 2.0;
    let mut img = Image::new(size_px, size_px, 3);
    img.data_mut()
        .par_chunks_mut(size_px * 3)
        .enumerate()
        .for_each(|(i, row)| {
            let wy = y - (i as f64 - c) * mpp;
            for (j, px) in row.chunks_exact_mut(3).enumerate() {
                scene.shade(x + (j as f64 - c) * mpp, wy, px);
            }
        });
    Ok(img)
}

/// Equirectangular ground panorama at `pose`.
///
/// Column `u` looks at azimuth `pose.azimuth_deg + 360 u / W_g`; row `k` has polar
/// angle `pi (k + 1) / H_g`, so the last row is the nadir.
pub fn render_panorama(
    scene: &Scene,
    pose: &ScenePose,
    pano_h: usize,
    pano_w: usize,
    cam_height: f64,
) -> Result<Image> {
    if pano_h < 2 || pano_h % 2 != 0 || pano_w == 0 {
        return Err(Error::invalid(format!(
            "panorama {pano_h}x{pano_w} needs an even height >= 2 and positive width"
        )));
    }
    if !(cam_height > 0.0) {
        return Err(Error::invalid("camera height must be positive"));
    }
    let w = pano_w as f64;
    let shift = pose.azimuth_deg * w / 360.0;
    let dirs: Vec<(f64, f64)> = (0..pano_w)
        .map(|u| {
            let psi = std::f64::consts::TAU * (u as f64 + shift).rem_euclid(w) / w;
            (psi.sin(), psi.cos())
        })
        .collect();
    let mut img = Image::filled(pano_h, pano_w, 3, SKY);
    img.data_mut()
        .par_chunks_mut(pano_w * 3)
        .enumerate()
        .skip(pano_h / 2)
        .for_each(|(k, row)| {
            let theta = std::f64::consts::PI * (k + 1) as f64 / pano_h as f64;
            let dist = -cam_height * theta.tan();
            for (px, &(east, north)) in row.chunks_exact_mut(3).zip(&dirs) {
                scene.shade(pose.x + dist * east, pose.y + dist * north, px);
            }
        });
    Ok(img)
}

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Camera offsets are drawn uniformly from `-offset_max_px..=offset_max_px`.
    pub offset_max_px: i64,
    pub fovs: Vec<f64>,
    pub sat_size: usize,
    pub meters_per_pixel: f64,
    pub pano_h: usize,
    pub pano_w: usize,
    pub cam_height: f64,
    pub extent: f64,
    pub spacing: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 10,
            offset_max_px: 0,
            fovs: vec![360.0],
            sat_size: 512,
            meters_per_pixel: xform::DEFAULT_METERS_PER_PIXEL,
            pano_h: xform::DEFAULT_PANO_H,
            pano_w: xform::DEFAULT_PANO_W,
            cam_height: xform::DEFAULT_CAM_HEIGHT,
            extent: DEFAULT_EXTENT,
            spacing: DEFAULT_SPACING,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::invalid("a dataset needs at least one scene"));
        }
        if self.offset_max_px < 0 {
            return Err(Error::invalid("offset bound must be non-negative"));
        }
        for &f in &self.fovs {
            check_fov(f)?;
        }
        let half = self.sat_size as f64 * self.meters_per_pixel / 2.0;
        let offset = self.offset_max_px as f64 * self.meters_per_pixel;
        if !(self.extent / 2.0 - offset >= half) {
            return Err(Error::invalid(format!(
                "scene extent {} m is too small for {} px crops at {} m/px",
                self.extent, self.sat_size, self.meters_per_pixel
            )));
        }
        if self.spacing < 0.0 {
            return Err(Error::invalid("scene spacing must be non-negative"));
        }
        Ok(())
    }

    /// Global position of a scene's local origin.
    pub fn origin(&self, id: u64) -> (f64, f64) {
        let side = (self.n_scenes as f64).sqrt().ceil().max(1.0) as u64;
        ((id % side) as f64 * self.spacing, (id / side) as f64 * self.spacing)
    }
}

/// Ground truth of one generated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: u64,
    pub scene_seed: u64,
    /// Global position of the satellite crop center.
    pub ref_x: f64,
    pub ref_y: f64,
    /// Global camera position.
    pub x_m: f64,
    pub y_m: f64,
    pub azimuth_deg: f64,
    /// Camera column (east) and row (south) offset from the crop center, pixels.
    pub offset_du_px: i64,
    pub offset_dv_px: i64,
}

impl SceneRecord {
    pub fn scene(&self, cfg: &DatasetConfig) -> Result<Scene> {
        Scene::new(self.scene_seed, cfg.extent)
    }

    /// Local pose inside the scene.
    pub fn pose(&self, cfg: &DatasetConfig) -> ScenePose {
        let c = cfg.extent / 2.0;
        ScenePose::new(
            c + self.offset_du_px as f64 * cfg.meters_per_pixel,
            c - self.offset_dv_px as f64 * cfg.meters_per_pixel,
            self.azimuth_deg,
        )
    }

    pub fn satellite(&self, scene: &Scene, cfg: &DatasetConfig) -> Result<Image> {
        let c = cfg.extent / 2.0;
        render_satellite(scene, c, c, cfg.sat_size, cfg.meters_per_pixel)
    }

    pub fn panorama(&self, scene: &Scene, cfg: &DatasetConfig) -> Result<Image> {
        render_panorama(scene, &self.pose(cfg), cfg.pano_h, cfg.pano_w, cfg.cam_height)
    }
}

/// Limited-FoV query: the first `W_g * fov / 360` columns.
pub fn crop_fov(pano: &Image, fov_deg: f64) -> Result<Image> {
    check_fov(fov_deg)?;
    Ok(pano.crop_columns_cyclic(0, fov_columns(pano.width(), fov_deg)))
}

/// Draws every pose from one generator seeded with `cfg.seed`.
///
/// Azimuths are whole panorama columns so rotations are exact column shifts.
pub fn generate_records(cfg: &DatasetConfig) -> Result<Vec<SceneRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.extent / 2.0;
    Ok((0..cfg.n_scenes as u64)
        .map(|id| {
            let scene_seed = rng.gen();
            let m = cfg.offset_max_px;
            let du = rng.gen_range(-m..=m);
            let dv = rng.gen_range(-m..=m);
            let k = rng.gen_range(0..cfg.pano_w);
            let (ox, oy) = cfg.origin(id);
            SceneRecord {
                id,
                scene_seed,
                ref_x: ox + c,
                ref_y: oy + c,
                x_m: ox + c + du as f64 * cfg.meters_per_pixel,
                y_m: oy + c - dv as f64 * cfg.meters_per_pixel,
                azimuth_deg: 360.0 * k as f64 / cfg.pano_w as f64,
                offset_du_px: du,
                offset_dv_px: dv,
            }
        })
        .collect())
}

/// One `manifest.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub azimuth_deg: f64,
    pub offset_du_px: i64,
    pub offset_dv_px: i64,
    pub fov: f64,
}

/// One `references.csv` row: satellite crop center geotags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub id: u64,
    pub x_m: f64,
    pub y_m: f64,
}

pub fn scene_dir(root: &Path, id: u64) -> PathBuf {
    root.join("scenes").join(id.to_string())
}

pub fn pano_path(root: &Path, id: u64, fov_deg: f64) -> PathBuf {
    scene_dir(root, id).join(format!("pano_{fov_deg}.png"))
}

pub fn sat_path(root: &Path, id: u64) -> PathBuf {
    scene_dir(root, id).join("sat.png")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if !e.is_io_error() {
        return Error::table(path, e);
    }
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::table(path, format!("{other:?}")),
    }
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `scenes/<id>/sat.png`, `scenes/<id>/pano_<fov>.png` (always including the
/// full 360 view), `manifest.csv` and `references.csv` under `root`.
pub fn make_dataset(root: &Path, cfg: &DatasetConfig) -> Result<Vec<SceneRecord>> {
    let records = generate_records(cfg)?;
    create_dir(root)?;
    records.iter().try_for_each(|r| -> Result<()> {
        let scene = r.scene(cfg)?;
        create_dir(&scene_dir(root, r.id))?;
        save_png(&r.satellite(&scene, cfg)?, sat_path(root, r.id))?;
        let pano = r.panorama(&scene, cfg)?;
        save_png(&pano, pano_path(root, r.id, 360.0))?;
        for &f in cfg.fovs.iter().filter(|&&f| f < 360.0) {
            save_png(&crop_fov(&pano, f)?, pano_path(root, r.id, f))?;
        }
        Ok(())
    })?;
    let manifest: Vec<ManifestRow> = records
        .iter()
        .flat_map(|r| {
            cfg.fovs.iter().map(move |&fov| ManifestRow {
                id: r.id,
                x_m: r.x_m,
                y_m: r.y_m,
                azimuth_deg: r.azimuth_deg,
                offset_du_px: r.offset_du_px,
                offset_dv_px: r.offset_dv_px,
                fov,
            })
        })
        .collect();
    write_csv(&root.join("manifest.csv"), &manifest)?;
    let refs: Vec<ReferenceRow> = records
        .iter()
        .map(|r| ReferenceRow { id: r.id, x_m: r.ref_x, y_m: r.ref_y })
        .collect();
    write_csv(&root.join("references.csv"), &refs)?;
    Ok(records)
}

fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    read_csv(&root.join("manifest.csv"))
}

pub fn read_references(root: &Path) -> Result<Vec<ReferenceRow>> {
    read_csv(&root.join("references.csv"))
}
