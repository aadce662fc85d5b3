//! Satellite-to-ground transforms.
//!
//! Both maps take a target panorama pixel `(u_t, v_t)` (column, row with the
//! nadir at `v_t = H_g`) and return a satellite position. The first returned
//! coordinate runs along satellite *rows* (decreasing northwards) and the second
//! along satellite *columns* (increasing eastwards), so azimuth zero looks north
//! and azimuth grows clockwise. Output image row `k` corresponds to `v_t = k + 1`,
//! which puts the nadir on the last row.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::scalar::Real;

/// Satellite pixels per meter for a 256 px crop covering 72 m.
pub const DEFAULT_PX_PER_METER: f64 = 256.0 / 72.0;

/// Meters per satellite pixel matching [`DEFAULT_PX_PER_METER`].
pub const DEFAULT_METERS_PER_PIXEL: f64 = 72.0 / 256.0;

/// Camera height above the ground plane in meters.
pub const DEFAULT_CAM_HEIGHT: f64 = 1.7;

pub const DEFAULT_PANO_H: usize = 128;
pub const DEFAULT_PANO_W: usize = 512;

/// Position in satellite pixel space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SatPoint<T> {
    pub row: T,
    pub col: T,
}

impl<T> SatPoint<T> {
    pub fn new(row: T, col: T) -> Self {
        Self { row, col }
    }
}

impl<T: Real> SatPoint<T> {
    /// Geometric center of an image's pixel grid.
    pub fn center_of(img: &Image) -> Self {
        let (c, r) = img.center();
        Self {
            row: T::of(r),
            col: T::of(c),
        }
    }

    pub fn offset(self, d_col: T, d_row: T) -> Self {
        Self {
            row: self.row + d_row,
            col: self.col + d_col,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarParams<T> {
    pub sat_size: usize,
    pub center: SatPoint<T>,
    pub target_h: usize,
    pub target_w: usize,
    pub max_radius: T,
}

impl<T: Real> PolarParams<T> {
    /// Polar origin at the grid center and maximum radius `S / 2`.
    pub fn for_satellite(sat: &Image, target_h: usize, target_w: usize) -> Result<Self> {
        let size = sat.height().min(sat.width());
        let p = Self {
            sat_size: size,
            center: SatPoint::center_of(sat),
            target_h,
            target_w,
            max_radius: T::of_usize(size) / T::of(2.0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_h == 0 || self.target_w == 0 {
            return Err(Error::invalid(format!(
                "polar target size {}x{} must be positive",
                self.target_h, self.target_w
            )));
        }
        if !(self.max_radius > T::zero()) {
            return Err(Error::invalid("polar max radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjParams<T> {
    pub center: SatPoint<T>,
    /// Satellite resolution `s` in pixels per meter.
    pub px_per_meter: T,
    /// Height of the camera above the ground plane (`z2`), meters.
    pub cam_height: T,
    /// Full panorama height `H_g`; only the bottom half is produced.
    pub target_h: usize,
    pub target_w: usize,
}

impl<T: Real> ProjParams<T> {
    pub fn for_satellite(sat: &Image, target_h: usize, target_w: usize) -> Result<Self> {
        let p = Self {
            center: SatPoint::center_of(sat),
            px_per_meter: T::of(DEFAULT_PX_PER_METER),
            cam_height: T::of(DEFAULT_CAM_HEIGHT),
            target_h,
            target_w,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_center(mut self, center: SatPoint<T>) -> Self {
        self.center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.px_per_meter > T::zero()) {
            return Err(Error::invalid("satellite resolution must be positive"));
        }
        if !(self.cam_height > T::zero()) {
            return Err(Error::invalid("camera height must be positive"));
        }
        if self.target_h < 2 || self.target_h % 2 != 0 || self.target_w == 0 {
            return Err(Error::invalid(format!(
                "projective target {}x{} needs an even height >= 2 and positive width",
                self.target_h, self.target_w
            )));
        }
        Ok(())
    }
}

/// Polar map from panorama pixel `(u_t, v_t)` to satellite position.
pub fn polar_coords<T: Real>(u_t: T, v_t: T, p: &PolarParams<T>) -> SatPoint<T> {
    let h = T::of_usize(p.target_h);
    let phi = T::TAU() * u_t / T::of_usize(p.target_w);
    let radius = p.max_radius * (h - v_t) / h;
    SatPoint {
        row: p.center.row - radius * phi.cos(),
        col: p.center.col + radius * phi.sin(),
    }
}

/// Ground-plane projective map from panorama pixel `(u_t, v_t)` to satellite position.
///
/// Defined for `H_g / 2 < v_t <= H_g`; the horizon row is a tangent singularity.
pub fn projective_coords<T: Real>(u_t: T, v_t: T, p: &ProjParams<T>) -> Result<SatPoint<T>> {
    let h = T::of_usize(p.target_h);
    if !(v_t > h / T::of(2.0) && v_t <= h) {
        return Err(Error::Domain(format!(
            "panorama row {v_t} outside the ground half ({}, {}]",
            h / T::of(2.0),
            h
        )));
    }
    let (dr, dc) = projective_offset(u_t, v_t, p);
    Ok(SatPoint {
        row: p.center.row + dr,
        col: p.center.col + dc,
    })
}

#[inline]
fn projective_offset<T: Real>(u_t: T, v_t: T, p: &ProjParams<T>) -> (T, T) {
    let theta = T::PI() * v_t / T::of_usize(p.target_h);
    let phi = T::TAU() * u_t / T::of_usize(p.target_w);
    let reach = p.px_per_meter * p.cam_height * theta.tan();
    (reach * phi.cos(), -(reach * phi.sin()))
}

/// Inverse-warps a satellite image into an `H_g x W_g` polar image.
pub fn polar_transform(sat: &Image, p: &PolarParams<f64>) -> Result<Image> {
    p.validate()?;
    let mut out = Image::new(p.target_h, p.target_w, sat.channels());
    let mut buf = vec![0.0; sat.channels()];
    for k in 0..p.target_h {
        let v_t = (k + 1) as f64;
        for j in 0..p.target_w {
            let s = polar_coords(j as f64, v_t, p);
            sat.sample_into(s.col, s.row, &mut buf);
            out.pixel_mut(k, j).copy_from_slice(&buf);
        }
    }
    Ok(out)
}

/// Satellite offsets of every ground-half output pixel relative to the projection center.
///
/// Independent of the center, so a grid search can reuse one table for all candidates.
#[derive(Clone, Debug)]
pub struct ProjectiveLut {
    rows: usize,
    cols: usize,
    offsets: Vec<(f64, f64)>,
}

impl ProjectiveLut {
    pub fn new(p: &ProjParams<f64>) -> Result<Self> {
        p.validate()?;
        let rows = p.target_h / 2;
        let cols = p.target_w;
        let mut offsets = Vec::with_capacity(rows * cols);
        for k in 0..rows {
            let v_t = (p.target_h / 2 + 1 + k) as f64;
            for j in 0..cols {
                offsets.push(projective_offset(j as f64, v_t, p));
            }
        }
        Ok(Self {
            rows,
            cols,
            offsets,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Offset `(d_row, d_col)` for output pixel `(k, j)`.
    pub fn offset(&self, k: usize, j: usize) -> (f64, f64) {
        self.offsets[k * self.cols + j]
    }

    /// Projects `sat` around `center`.
    pub fn render(&self, sat: &Image, center: SatPoint<f64>) -> Image {
        let mut out = Image::new(self.rows, self.cols, sat.channels());
        let mut buf = vec![0.0; sat.channels()];
        for k in 0..self.rows {
            for j in 0..self.cols {
                let (dr, dc) = self.offsets[k * self.cols + j];
                sat.sample_into(center.col + dc, center.row + dr, &mut buf);
                out.pixel_mut(k, j).copy_from_slice(&buf);
            }
        }
        out
    }
}

/// Inverse-warps the ground half of the panorama: an `(H_g / 2) x W_g` image whose
/// row `k` is panorama row `v_t = H_g / 2 + 1 + k`.
pub fn projective_transform(sat: &Image, p: &ProjParams<f64>) -> Result<Image> {
    Ok(ProjectiveLut::new(p)?.render(sat, p.center))
}
