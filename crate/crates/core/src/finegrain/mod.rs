//! Fine-grained location and orientation search.
//!
//! Around the satellite center, every candidate projection center on a square
//! grid re-renders the ground half of the panorama with
//! [`ProjectiveLut`](crate::xform::ProjectiveLut). Each rendering is rolled
//! through `n_orient` azimuth shifts, cropped to the query's field of view and
//! compared with SSIM. A candidate keeps its best orientation; the best candidate
//! wins, ties resolved by grid index and then shift.

mod ssim;

pub use ssim::{ssim, ssim_in, K1, K2, RANGE, SIGMA, WINDOW};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feat::{check_fov, fov_columns};
use crate::img::Image;
use crate::xform::{self, ProjParams, ProjectiveLut, SatPoint};
use ssim::{SsimPlan, SsimScratch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    /// Half the side of the candidate square, in satellite pixels.
    pub region_half: usize,
    /// `false`: offsets `-half..half` (even count); `true`: `-half..=half`.
    pub inclusive: bool,
    pub grid_step: usize,
    pub n_orient: usize,
    pub fov_deg: f64,
    pub meters_per_pixel: f64,
    /// Projection settings; the center is replaced per candidate.
    pub proj: ProjParams<f64>,
}

impl SearchConfig {
    /// 40 x 40 candidate centers and 512 orientations.
    pub fn full(proj: ProjParams<f64>) -> Self {
        Self {
            region_half: 20,
            inclusive: false,
            grid_step: 1,
            n_orient: 512,
            fov_deg: 360.0,
            meters_per_pixel: xform::DEFAULT_METERS_PER_PIXEL,
            proj,
        }
    }

    /// 20 x 20 candidate centers and 128 orientations.
    pub fn reduced(proj: ProjParams<f64>) -> Self {
        Self {
            region_half: 10,
            n_orient: 128,
            ..Self::full(proj)
        }
    }

    /// Candidate offsets along one axis.
    pub fn axis_offsets(&self) -> Vec<i64> {
        let half = self.region_half as i64;
        let end = if self.inclusive { half + 1 } else { half };
        (-half..end).step_by(self.grid_step.max(1)).collect()
    }

    /// Number of (center, orientation) pairs scored by a search.
    pub fn candidate_count(&self) -> u64 {
        let n = self.axis_offsets().len() as u64;
        n * n * self.n_orient as u64
    }

    fn validate(&self, sat: &Image) -> Result<()> {
        self.proj.validate()?;
        check_fov(self.fov_deg)?;
        if self.n_orient == 0 || self.grid_step == 0 {
            return Err(Error::invalid("orientation count and grid step must be positive"));
        }
        if self.proj.target_w % self.n_orient != 0 {
            return Err(Error::invalid(format!(
                "panorama width {} is not a multiple of {} orientations",
                self.proj.target_w, self.n_orient
            )));
        }
        if !(self.meters_per_pixel > 0.0) {
            return Err(Error::invalid("meters per pixel must be positive"));
        }
        let (cx, cy) = sat.center();
        let reach = self.region_half as f64 + 1.0;
        if cx - reach < 0.0
            || cy - reach < 0.0
            || cx + reach > (sat.width() - 1) as f64
            || cy + reach > (sat.height() - 1) as f64
        {
            return Err(Error::invalid(format!(
                "search region of half size {} does not fit a {}x{} satellite image",
                self.region_half,
                sat.height(),
                sat.width()
            )));
        }
        Ok(())
    }
}

/// Outcome of a fine search.
#[derive(Clone, Debug, PartialEq)]
pub struct FineResult {
    /// `(du, dv)`: column and row offset of the camera from the satellite center.
    pub offset: (i64, i64),
    /// Offset in meters along the same axes (east, south).
    pub offset_m: (f64, f64),
    pub shift: usize,
    pub azimuth_deg: f64,
    pub score: f64,
    /// Best score per candidate center, row-major over `(dv, du)`.
    pub score_map: Vec<f64>,
    pub grid_side: usize,
    /// Number of (center, orientation) pairs scored.
    pub evaluated: u64,
}

impl FineResult {
    /// Score map scaled to `[0, 1]` as a grayscale heatmap.
    pub fn heatmap(&self) -> Image {
        let (lo, hi) = self
            .score_map
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = self.grid_side;
        Image::from_fn(n, n, 1, |r, c, _| ((self.score_map[r * n + c] - lo) / span) as f32)
    }
}

/// Componentwise pixel-to-meter conversion.
pub fn offset_to_meters(offset: (i64, i64), meters_per_pixel: f64) -> Result<(f64, f64)> {
    if !(meters_per_pixel > 0.0) {
        return Err(Error::invalid("meters per pixel must be positive"));
    }
    Ok((
        offset.0 as f64 * meters_per_pixel,
        offset.1 as f64 * meters_per_pixel,
    ))
}

/// Exhaustive location/orientation search of `query` inside `sat`.
///
/// `query` is either the ground half (`H_g / 2` rows) or a full-height view whose
/// bottom half is used; its width must span `fov_deg` of a `W_g` panorama.
pub fn fine_localize(sat: &Image, query: &Image, cfg: &SearchConfig) -> Result<FineResult> {
    cfg.validate(sat)?;
    let pano_h = cfg.proj.target_h;
    let pano_w = cfg.proj.target_w;
    let half_h = pano_h / 2;
    let ground = if query.height() == half_h {
        query.clone()
    } else if query.height() == pano_h {
        query.rows(half_h, pano_h)?
    } else {
        return Err(Error::invalid(format!(
            "query height {} is neither {half_h} nor {pano_h}",
            query.height()
        )));
    };
    let qw = fov_columns(pano_w, cfg.fov_deg);
    if ground.width() != qw || qw == 0 {
        return Err(Error::invalid(format!(
            "query width {} does not match {qw} columns for a {} degree view",
            ground.width(),
            cfg.fov_deg
        )));
    }

    let plan = SsimPlan::new(&ground.to_gray())?;
    let lut = ProjectiveLut::new(&cfg.proj)?;
    let sat_center = SatPoint::<f64>::center_of(sat);
    let axis = cfg.axis_offsets();
    let side = axis.len();
    let step_cols = pano_w / cfg.n_orient;

    let best_per_center: Vec<(f64, usize)> = (0..side * side)
        .into_par_iter()
        .map_init(SsimScratch::default, |scratch, idx| {
            let (du, dv) = (axis[idx % side], axis[idx / side]);
            let center = sat_center.offset(du as f64, dv as f64);
            let ring = lut.render(sat, center).to_gray();
            let cand = plan.candidate(&ring)?;
            let mut best = (f64::NEG_INFINITY, 0usize);
            for o in 0..cfg.n_orient {
                let s = plan.score(&cand, o * step_cols, scratch);
                if s > best.0 {
                    best = (s, o);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;

    let (mut best_idx, mut best) = (0usize, (f64::NEG_INFINITY, 0usize));
    for (i, &cand) in best_per_center.iter().enumerate() {
        if cand.0 > best.0 {
            best = cand;
            best_idx = i;
        }
    }
    let offset = (axis[best_idx % side], axis[best_idx / side]);
    let shift = best.1 * step_cols;
    Ok(FineResult {
        offset,
        offset_m: offset_to_meters(offset, cfg.meters_per_pixel)?,
        shift,
        azimuth_deg: 360.0 * shift as f64 / pano_w as f64,
        score: best.0,
        score_map: best_per_center.iter().map(|b| b.0).collect(),
        grid_side: side,
        evaluated: (side * side * cfg.n_orient) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn smooth_sat(size: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f32, f32, f32)> = (0..12)
            .map(|_| (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(0.0..6.28)))
            .collect();
        Image::from_fn(size, size, 1, |r, c, _| {
            let v: f32 = waves
                .iter()
                .map(|(a, b, p)| (a * r as f32 + b * c as f32 + p).sin())
                .sum();
            (0.5 + v / 24.0).clamp(0.0, 1.0)
        })
    }

    fn small_cfg(sat: &Image) -> SearchConfig {
        let mut proj = ProjParams::for_satellite(sat, 32, 128).unwrap();
        proj.px_per_meter = 4.0;
        SearchConfig {
            region_half: 3,
            n_orient: 32,
            ..SearchConfig::reduced(proj)
        }
    }

    #[test]
    fn offsets_to_meters() {
        assert_eq!(offset_to_meters((40, 0), 0.28125).unwrap(), (11.25, 0.0));
        assert_eq!(offset_to_meters((5, 5), 0.28125).unwrap(), (1.40625, 1.40625));
        assert_eq!(offset_to_meters((0, 0), 0.28125).unwrap(), (0.0, 0.0));
        assert!(offset_to_meters((1, 1), 0.0).is_err());
    }

    #[test]
    fn candidate_counts() {
        let sat = Image::new(256, 256, 1);
        let p = ProjParams::for_satellite(&sat, 128, 512).unwrap();
        let full = SearchConfig::full(p);
        assert_eq!(full.axis_offsets().len(), 40);
        assert_eq!(*full.axis_offsets().first().unwrap(), -20);
        assert_eq!(*full.axis_offsets().last().unwrap(), 19);
        assert_eq!(full.candidate_count(), 819_200);
        let inclusive = SearchConfig { inclusive: true, ..full };
        assert_eq!(inclusive.candidate_count(), 41 * 41 * 512);
        let stepped = SearchConfig { grid_step: 2, inclusive: true, ..full };
        assert_eq!(stepped.axis_offsets().len(), 21);
        assert_eq!(SearchConfig::reduced(p).candidate_count(), 20 * 20 * 128);
    }

    #[test]
    fn self_localization() {
        let sat = smooth_sat(64, 1);
        let cfg = small_cfg(&sat);
        let query = xform::projective_transform(&sat, &cfg.proj).unwrap();
        let r = fine_localize(&sat, &query, &cfg).unwrap();
        assert_eq!(r.offset, (0, 0));
        assert_eq!(r.shift, 0);
        assert!((r.score - 1.0).abs() < 1e-5, "{}", r.score);
        assert_eq!(r.evaluated, 36 * 32);
        let max = r.score_map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, r.score);
    }

    #[test]
    fn recovers_offset_and_rotation() {
        let sat = smooth_sat(64, 2);
        let cfg = small_cfg(&sat);
        let center = SatPoint::center_of(&sat).offset(2.0, -1.0);
        let query = xform::projective_transform(&sat, &cfg.proj.with_center(center))
            .unwrap()
            .roll_columns(3 * 4);
        let r = fine_localize(&sat, &query, &cfg).unwrap();
        assert_eq!(r.offset, (2, -1));
        assert_eq!(r.shift, 12);
        assert!((r.azimuth_deg - 360.0 * 12.0 / 128.0).abs() < 1e-12);
    }

    #[test]
    fn limited_view_search() {
        let sat = smooth_sat(64, 3);
        let cfg = SearchConfig { fov_deg: 180.0, ..small_cfg(&sat) };
        let center = SatPoint::center_of(&sat).offset(-2.0, 1.0);
        let ring = xform::projective_transform(&sat, &cfg.proj.with_center(center)).unwrap();
        let query = ring.crop_columns_cyclic(20, 64);
        let r = fine_localize(&sat, &query, &cfg).unwrap();
        assert_eq!(r.offset, (-2, 1));
        assert_eq!(r.shift, 20);
    }

    #[test]
    fn rejects_bad_configs() {
        let sat = smooth_sat(64, 4);
        let cfg = small_cfg(&sat);
        let query = xform::projective_transform(&sat, &cfg.proj).unwrap();
        let bad_orient = SearchConfig { n_orient: 7, ..cfg };
        assert!(fine_localize(&sat, &query, &bad_orient).is_err());
        let too_big = SearchConfig { region_half: 40, ..cfg };
        assert!(fine_localize(&sat, &query, &too_big).is_err());
        let wrong_fov = SearchConfig { fov_deg: 90.0, ..cfg };
        assert!(fine_localize(&sat, &query, &wrong_fov).is_err());
        assert!(fine_localize(&sat, &query.rows(0, 10).unwrap(), &cfg).is_err());
    }
}
