//! Structural similarity with an 11x11 Gaussian window (sigma 1.5).
//!
//! Multi-channel inputs are reduced to the channel mean first. The score is
//! the mean of the local SSIM map over windows lying fully inside the image.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::scalar::Real;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Dynamic range of pixel values.
pub const RANGE: f64 = 1.0;

pub(crate) fn gaussian_kernel<T: Real>(size: usize) -> Vec<T> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-(d * d) / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::of(v / sum)).collect()
}

pub(crate) fn window_for(h: usize, w: usize) -> usize {
    WINDOW.min(h).min(w)
}

/// Valid-mode separable filter of an `h x w` plane.
fn filter_valid<T: Real>(src: &[T], h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let win = kernel.len();
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let mut vert = vec![T::zero(); oh * w];
    for y in 0..oh {
        for (dy, &g) in kernel.iter().enumerate() {
            let row = &src[(y + dy) * w..(y + dy + 1) * w];
            for (dst, &v) in vert[y * w..(y + 1) * w].iter_mut().zip(row) {
                *dst = *dst + g * v;
            }
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        let row = &vert[y * w..(y + 1) * w];
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .zip(&row[x..x + win])
                .fold(T::zero(), |acc, (&g, &v)| acc + g * v);
        }
    }
    out
}

#[inline]
pub(crate) fn ssim_pixel<T: Real>(mu_a: T, mu_b: T, saa: T, sbb: T, sab: T, c1: T, c2: T) -> T {
    let two = T::of(2.0);
    ((two * mu_a * mu_b + c1) * (two * sab + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2))
}

/// Mean SSIM computed in scalar type `T`.
pub fn ssim_in<T: Real>(a: &Image, b: &Image) -> Result<T> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::invalid(format!(
            "SSIM needs equal shapes, got {}x{}x{} and {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h == 0 || w == 0 {
        return Err(Error::invalid("SSIM of an empty image"));
    }
    let plane = |img: &Image| -> Vec<T> {
        img.to_gray()
            .data()
            .iter()
            .map(|&v| T::of(v as f64))
            .collect()
    };
    let (pa, pb) = (plane(a), plane(b));
    let kernel = gaussian_kernel::<T>(window_for(h, w));
    let prod = |x: &[T], y: &[T]| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| p * q).collect() };
    let mu_a = filter_valid(&pa, h, w, &kernel);
    let mu_b = filter_valid(&pb, h, w, &kernel);
    let e_aa = filter_valid(&prod(&pa, &pa), h, w, &kernel);
    let e_bb = filter_valid(&prod(&pb, &pb), h, w, &kernel);
    let e_ab = filter_valid(&prod(&pa, &pb), h, w, &kernel);
    let c1 = T::of((K1 * RANGE).powi(2));
    let c2 = T::of((K2 * RANGE).powi(2));
    let n = mu_a.len();
    let mut total = T::zero();
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        total = total
            + ssim_pixel(
                ma,
                mb,
                e_aa[i] - ma * ma,
                e_bb[i] - mb * mb,
                e_ab[i] - ma * mb,
                c1,
                c2,
            );
    }
    Ok(total / T::of_usize(n))
}

/// Mean SSIM in double precision.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_in::<f64>(a, b)
}

/// Local statistics of one grayscale plane, filtered in valid mode.
#[derive(Clone, Debug, Default)]
pub(crate) struct PlaneStats {
    pub w: usize,
    pub plane: Vec<f32>,
    /// `(h - win + 1) x (w - win + 1)` local means.
    pub mu: Vec<f32>,
    /// Local variances on the same grid.
    pub var: Vec<f32>,
}

/// Precomputed query side of a shift search: every candidate is a `W`-column
/// ring compared against the query through a circular crop starting at a shift.
pub(crate) struct SsimPlan {
    kernel: Vec<f32>,
    h: usize,
    qw: usize,
    query: PlaneStats,
    c1: f32,
    c2: f32,
}

/// Per-worker buffers.
#[derive(Default)]
pub(crate) struct SsimScratch {
    prod: Vec<f32>,
    vert: Vec<f32>,
    horiz: Vec<f32>,
}

impl SsimPlan {
    pub fn new(query_gray: &Image) -> Result<Self> {
        let (h, w) = (query_gray.height(), query_gray.width());
        if h == 0 || w == 0 || query_gray.channels() != 1 {
            return Err(Error::invalid("SSIM plan needs a non-empty single-channel query"));
        }
        let kernel = gaussian_kernel::<f32>(window_for(h, w));
        let query = stats_of(query_gray.data().to_vec(), h, w, &kernel);
        Ok(Self {
            kernel,
            h,
            qw: w,
            query,
            c1: ((K1 * RANGE).powi(2)) as f32,
            c2: ((K2 * RANGE).powi(2)) as f32,
        })
    }

    /// Candidate ring of `h x ring_w` extended by `qw - 1` wrapped columns.
    pub fn candidate(&self, ring: &Image) -> Result<PlaneStats> {
        if ring.height() != self.h || ring.channels() != 1 || ring.width() < self.qw {
            return Err(Error::invalid("candidate ring does not fit the query"));
        }
        let rw = ring.width();
        let ext_w = rw + self.qw - 1;
        let mut plane = Vec::with_capacity(self.h * ext_w);
        for r in 0..self.h {
            let row = &ring.data()[r * rw..(r + 1) * rw];
            plane.extend_from_slice(row);
            plane.extend_from_slice(&row[..self.qw - 1]);
        }
        Ok(stats_of(plane, self.h, ext_w, &self.kernel))
    }

    /// Mean SSIM between the query and candidate columns `shift..shift + qw`.
    pub fn score(&self, cand: &PlaneStats, shift: usize, scratch: &mut SsimScratch) -> f64 {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were detected at runtime.
                return unsafe { self.score_avx2(cand, shift, scratch) };
            }
        }
        self.score_generic(cand, shift, scratch)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn score_avx2(&self, cand: &PlaneStats, shift: usize, scratch: &mut SsimScratch) -> f64 {
        self.score_generic(cand, shift, scratch)
    }

    #[inline(always)]
    fn score_generic(&self, cand: &PlaneStats, shift: usize, scratch: &mut SsimScratch) -> f64 {
        let (h, qw) = (self.h, self.qw);
        let win = self.kernel.len();
        let (oh, ow) = (h + 1 - win, qw + 1 - win);
        let ext_w = cand.w;
        let cand_ow = ext_w + 1 - win;

        scratch.prod.resize(h * qw, 0.0);
        for r in 0..h {
            let p = &cand.plane[r * ext_w + shift..r * ext_w + shift + qw];
            let q = &self.query.plane[r * qw..(r + 1) * qw];
            for ((d, &a), &b) in scratch.prod[r * qw..(r + 1) * qw].iter_mut().zip(p).zip(q) {
                *d = a * b;
            }
        }
        vertical(&scratch.prod, h, qw, &self.kernel, &mut scratch.vert);
        horizontal(&scratch.vert, oh, qw, &self.kernel, &mut scratch.horiz);

        let mut total = 0.0f64;
        for y in 0..oh {
            let e_ab = &scratch.horiz[y * ow..(y + 1) * ow];
            let mu_a = &cand.mu[y * cand_ow + shift..y * cand_ow + shift + ow];
            let var_a = &cand.var[y * cand_ow + shift..y * cand_ow + shift + ow];
            let mu_b = &self.query.mu[y * ow..(y + 1) * ow];
            let var_b = &self.query.var[y * ow..(y + 1) * ow];
            let mut row = 0.0f32;
            for x in 0..ow {
                let cov = e_ab[x] - mu_a[x] * mu_b[x];
                row += ssim_pixel(mu_a[x], mu_b[x], var_a[x], var_b[x], cov, self.c1, self.c2);
            }
            total += row as f64;
        }
        total / (oh * ow) as f64
    }
}

#[inline(always)]
fn vertical(src: &[f32], h: usize, w: usize, kernel: &[f32], out: &mut Vec<f32>) {
    let win = kernel.len();
    let oh = h + 1 - win;
    out.clear();
    out.resize(oh * w, 0.0);
    for y in 0..oh {
        let dst = &mut out[y * w..(y + 1) * w];
        for (dy, &g) in kernel.iter().enumerate() {
            let row = &src[(y + dy) * w..(y + dy + 1) * w];
            for (d, &v) in dst.iter_mut().zip(row) {
                *d += g * v;
            }
        }
    }
}

#[inline(always)]
fn horizontal(src: &[f32], h: usize, w: usize, kernel: &[f32], out: &mut Vec<f32>) {
    let win = kernel.len();
    let ow = w + 1 - win;
    out.clear();
    out.resize(h * ow, 0.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (dx, &g) in kernel.iter().enumerate() {
            for (d, &v) in dst.iter_mut().zip(&row[dx..dx + ow]) {
                *d += g * v;
            }
        }
    }
}

fn stats_of(plane: Vec<f32>, h: usize, w: usize, kernel: &[f32]) -> PlaneStats {
    let win = kernel.len();
    let oh = h + 1 - win;
    let mut vert = Vec::new();
    let mut mu = Vec::new();
    vertical(&plane, h, w, kernel, &mut vert);
    horizontal(&vert, oh, w, kernel, &mut mu);
    let sq: Vec<f32> = plane.iter().map(|v| v * v).collect();
    let mut e2 = Vec::new();
    vertical(&sq, h, w, kernel, &mut vert);
    horizontal(&vert, oh, w, kernel, &mut e2);
    let var = e2.iter().zip(&mu).map(|(e, m)| e - m * m).collect();
    PlaneStats {
        w,
        plane,
        mu,
        var,
    }
}
