//! Handcrafted feature volumes and global descriptors.
//!
//! The extractor tiles an image into `grid_h x grid_w` cells and accumulates a
//! magnitude-weighted histogram of gradient directions per cell. Horizontal
//! gradients wrap around for full panoramas, which makes the volume
//! circularly shift-equivariant along its width when the shift is a whole
//! number of cells.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::scalar::Real;
use crate::xform::{self, PolarParams, ProjParams};

/// `h x w x c` tensor stored row-major as `(row, column, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume<T> {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureVolume<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![T::zero(); h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::invalid(format!(
                "volume buffer has {} values, expected {h}x{w}x{c}",
                data.len()
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    data.push(f(r, col, ch));
                }
            }
        }
        Self { h, w, c, data }
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[(row * self.w + col) * self.c + ch]
    }

    /// Channel slice at `(row, col)`.
    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.w + col) * self.c;
        &self.data[o..o + self.c]
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Unit Frobenius norm; the zero volume stays zero.
    pub fn l2_normalized(&self) -> Self {
        let n = self.frobenius_norm();
        if n > T::zero() {
            self.scaled(T::one() / n)
        } else {
            self.clone()
        }
    }

    /// `width` columns starting at `start`, wrapping around.
    pub fn crop_columns_cyclic(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.h * width * self.c);
        for r in 0..self.h {
            for j in 0..width {
                data.extend_from_slice(self.cell(r, (start + j) % self.w));
            }
        }
        Self {
            h: self.h,
            w: width,
            c: self.c,
            data,
        }
    }

    /// Output column `j` holds input column `(j + k) mod w`.
    pub fn roll_columns(&self, k: usize) -> Self {
        self.crop_columns_cyclic(k % self.w.max(1), self.w)
    }

    /// Channels `start..end` as a new volume.
    pub fn channel_range(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.c {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} outside {} channels",
                self.c
            )));
        }
        let mut data = Vec::with_capacity(self.h * self.w * (end - start));
        for cell in self.data.chunks_exact(self.c) {
            data.extend_from_slice(&cell[start..end]);
        }
        Ok(Self {
            h: self.h,
            w: self.w,
            c: end - start,
            data,
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.h, self.w, self.c) == (other.h, other.w, other.c)
    }

    /// Frobenius distance; shapes must agree.
    pub fn distance(&self, other: &Self) -> Result<T> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "volume shapes differ: {}x{}x{} vs {}x{}x{}",
                self.h, self.w, self.c, other.h, other.w, other.c
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt())
    }

    pub fn cast<U: Real>(&self) -> FeatureVolume<U> {
        FeatureVolume {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// Divides by the Frobenius norm, leaving the zero volume unchanged.
pub fn l2_normalize<T: Real>(vol: &FeatureVolume<T>) -> FeatureVolume<T> {
    vol.l2_normalized()
}

/// Projective-branch and polar-branch volumes concatenated along channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor<T> {
    volume: FeatureVolume<T>,
    proj_channels: usize,
}

impl<T: Real> Descriptor<T> {
    /// Wraps an already concatenated volume whose first `proj_channels` channels
    /// come from the projective branch.
    pub fn from_volume(volume: FeatureVolume<T>, proj_channels: usize) -> Result<Self> {
        if proj_channels > volume.c() {
            return Err(Error::invalid(format!(
                "projective part of {proj_channels} channels exceeds {}",
                volume.c()
            )));
        }
        Ok(Self {
            volume,
            proj_channels,
        })
    }

    pub fn volume(&self) -> &FeatureVolume<T> {
        &self.volume
    }

    pub fn into_volume(self) -> FeatureVolume<T> {
        self.volume
    }

    pub fn proj_channels(&self) -> usize {
        self.proj_channels
    }

    pub fn proj_part(&self) -> FeatureVolume<T> {
        self.volume
            .channel_range(0, self.proj_channels)
            .expect("split lies inside the volume")
    }

    pub fn polar_part(&self) -> FeatureVolume<T> {
        self.volume
            .channel_range(self.proj_channels, self.volume.c())
            .expect("split lies inside the volume")
    }

    pub fn h(&self) -> usize {
        self.volume.h()
    }

    pub fn w(&self) -> usize {
        self.volume.w()
    }

    pub fn c(&self) -> usize {
        self.volume.c()
    }

    /// Same descriptor with both parts rolled by `k` columns.
    pub fn roll_columns(&self, k: usize) -> Self {
        Self {
            volume: self.volume.roll_columns(k),
            proj_channels: self.proj_channels,
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            volume: self.volume.scaled(factor),
            proj_channels: self.proj_channels,
        }
    }
}

/// Concatenates along channels, projective part first.
pub fn make_descriptor<T: Real>(
    proj: &FeatureVolume<T>,
    polar: &FeatureVolume<T>,
) -> Result<Descriptor<T>> {
    if proj.h() != polar.h() || proj.w() != polar.w() {
        return Err(Error::invalid(format!(
            "descriptor parts disagree: {}x{} vs {}x{}",
            proj.h(),
            proj.w(),
            polar.h(),
            polar.w()
        )));
    }
    let c = proj.c() + polar.c();
    let mut data = Vec::with_capacity(proj.h() * proj.w() * c);
    for (a, b) in proj
        .data()
        .chunks_exact(proj.c().max(1))
        .zip(polar.data().chunks_exact(polar.c().max(1)))
    {
        data.extend_from_slice(&a[..proj.c()]);
        data.extend_from_slice(&b[..polar.c()]);
    }
    let volume = FeatureVolume::from_vec(proj.h(), proj.w(), c, data)?;
    Descriptor::from_volume(volume, proj.c())
}

/// Guard added to each cell norm; cells without gradients stay zero.
pub const CELL_EPS: f64 = 1e-4;

fn cell_bounds(total: usize, cells: usize) -> Vec<usize> {
    (0..=cells).map(|i| i * total / cells).collect()
}

/// Gradient-orientation cell histogram of `img`.
///
/// `wrap` selects cyclic horizontal gradients (full panoramas); otherwise border
/// pixels replicate their neighbour. Directions in `[0, 360)` degrees are split
/// linearly between the two nearest of `c` bin centers spaced `360 / c` apart.
/// Each cell's mean vote per pixel is square-rooted and the cell histogram is
/// divided by its L2 norm plus [`CELL_EPS`].
pub fn extract<T: Real>(
    img: &Image,
    grid_h: usize,
    grid_w: usize,
    c: usize,
    wrap: bool,
) -> Result<FeatureVolume<T>> {
    let (h, w) = (img.height(), img.width());
    if grid_h == 0 || grid_w == 0 || c == 0 {
        return Err(Error::invalid("feature grid and channel count must be positive"));
    }
    if grid_h > h || grid_w > w {
        return Err(Error::invalid(format!(
            "feature grid {grid_h}x{grid_w} larger than image {h}x{w}"
        )));
    }
    let gray = img.to_gray();
    let px = |r: usize, col: usize| T::of(gray.get(r, col, 0) as f64);
    let rows = cell_bounds(h, grid_h);
    let cols = cell_bounds(w, grid_w);
    let half = T::of(0.5);
    let bin_width = T::of(360.0) / T::of_usize(c);
    let mut out = FeatureVolume::zeros(grid_h, grid_w, c);

    for gr in 0..grid_h {
        for gc in 0..grid_w {
            let mut hist = vec![T::zero(); c];
            for r in rows[gr]..rows[gr + 1] {
                let up = r.saturating_sub(1);
                let down = (r + 1).min(h - 1);
                for col in cols[gc]..cols[gc + 1] {
                    let (left, right) = if wrap {
                        ((col + w - 1) % w, (col + 1) % w)
                    } else {
                        (col.saturating_sub(1), (col + 1).min(w - 1))
                    };
                    let gx = (px(r, right) - px(r, left)) * half;
                    let gy = (px(down, col) - px(up, col)) * half;
                    let mag = (gx * gx + gy * gy).sqrt();
                    if mag == T::zero() {
                        continue;
                    }
                    let mut deg = gy.atan2(gx).to_degrees();
                    if deg < T::zero() {
                        deg = deg + T::of(360.0);
                    }
                    let pos = deg / bin_width;
                    let lo = pos.floor();
                    let frac = pos - lo;
                    let b0 = lo.to_usize().unwrap_or(0) % c;
                    let b1 = (b0 + 1) % c;
                    hist[b0] = hist[b0] + mag * (T::one() - frac);
                    hist[b1] = hist[b1] + mag * frac;
                }
            }
            let area = T::of_usize((rows[gr + 1] - rows[gr]) * (cols[gc + 1] - cols[gc]));
            for v in hist.iter_mut() {
                *v = (*v / area).sqrt();
            }
            let norm = hist.iter().fold(T::zero(), |a, &v| a + v * v).sqrt() + T::of(CELL_EPS);
            let o = (gr * grid_w + gc) * c;
            for (dst, v) in out.data[o..o + c].iter_mut().zip(hist) {
                *dst = v / norm;
            }
        }
    }
    Ok(out)
}

/// Columns covered by a field of view out of a full-circle `total`.
pub fn fov_columns(total: usize, fov_deg: f64) -> usize {
    ((total as f64) * fov_deg / 360.0).round() as usize
}

pub(crate) fn check_fov(fov_deg: f64) -> Result<()> {
    if !(fov_deg > 0.0 && fov_deg <= 360.0) {
        return Err(Error::invalid(format!("field of view {fov_deg} outside (0, 360]")));
    }
    Ok(())
}

/// Geometry and grid shared by the satellite and ground descriptor pipelines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Histogram bins per branch.
    pub channels: usize,
    pub pano_h: usize,
    pub pano_w: usize,
    pub px_per_meter: f64,
    pub cam_height: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            grid_h: 4,
            grid_w: 64,
            channels: 8,
            pano_h: xform::DEFAULT_PANO_H,
            pano_w: xform::DEFAULT_PANO_W,
            px_per_meter: xform::DEFAULT_PX_PER_METER,
            cam_height: xform::DEFAULT_CAM_HEIGHT,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pano_w % self.grid_w != 0 {
            return Err(Error::invalid(format!(
                "panorama width {} not divisible by descriptor width {}",
                self.pano_w, self.grid_w
            )));
        }
        if self.pano_h % 2 != 0 || self.pano_h / 2 < self.grid_h {
            return Err(Error::invalid(format!(
                "panorama height {} must be even and at least twice the grid height {}",
                self.pano_h, self.grid_h
            )));
        }
        Ok(())
    }

    pub fn proj_params(&self, sat: &Image) -> Result<ProjParams<f64>> {
        let mut p = ProjParams::for_satellite(sat, self.pano_h, self.pano_w)?;
        p.px_per_meter = self.px_per_meter;
        p.cam_height = self.cam_height;
        p.validate()?;
        Ok(p)
    }

    /// Descriptor width for a field of view.
    pub fn query_width(&self, fov_deg: f64) -> usize {
        fov_columns(self.grid_w, fov_deg)
    }

    /// Query image width in pixels for a field of view.
    pub fn query_pixels(&self, fov_deg: f64) -> usize {
        fov_columns(self.pano_w, fov_deg)
    }
}

/// Satellite descriptor: projective branch then polar branch, both full width.
pub fn satellite_descriptor<T: Real>(sat: &Image, cfg: &DescriptorConfig) -> Result<Descriptor<T>> {
    cfg.validate()?;
    let proj = xform::projective_transform(sat, &cfg.proj_params(sat)?)?;
    let polar = xform::polar_transform(sat, &PolarParams::for_satellite(sat, cfg.pano_h, cfg.pano_w)?)?;
    let a = extract(&proj, cfg.grid_h, cfg.grid_w, cfg.channels, true)?;
    let b = extract(&polar, cfg.grid_h, cfg.grid_w, cfg.channels, true)?;
    make_descriptor(&a, &b)
}

/// Ground descriptor: bottom half then whole image. `pano` spans `fov_deg` degrees
/// starting at its viewing azimuth.
pub fn ground_descriptor<T: Real>(
    pano: &Image,
    fov_deg: f64,
    cfg: &DescriptorConfig,
) -> Result<Descriptor<T>> {
    cfg.validate()?;
    check_fov(fov_deg)?;
    let width = cfg.query_width(fov_deg);
    if width == 0 {
        return Err(Error::invalid(format!(
            "field of view {fov_deg} covers no descriptor column"
        )));
    }
    if pano.height() != cfg.pano_h {
        return Err(Error::invalid(format!(
            "ground image height {} differs from configured {}",
            pano.height(),
            cfg.pano_h
        )));
    }
    let wrap = fov_deg >= 360.0;
    let bottom = pano.rows(pano.height() / 2, pano.height())?;
    let a = extract(&bottom, cfg.grid_h, width, cfg.channels, wrap)?;
    let b = extract(pano, cfg.grid_h, width, cfg.channels, wrap)?;
    make_descriptor(&a, &b)
}
