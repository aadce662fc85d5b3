//! Dynamic similarity matching.
//!
//! A ground descriptor slides circularly along the azimuth axis of a satellite
//! descriptor; the correlation peak gives both the orientation and the match
//! score. Two backends compute the same profile: a spatial triple loop and a
//! spectral one that multiplies cached width-axis spectra and sums over rows
//! and channels before a single inverse transform.

use std::sync::Arc;

use rand::{seq::SliceRandom, SeedableRng};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::feat::{self, Descriptor, FeatureVolume};
use crate::scalar::Real;

/// Correlation score for every candidate shift of the satellite descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationProfile<T> {
    scores: Vec<T>,
}

impl<T: Real> CorrelationProfile<T> {
    pub fn new(scores: Vec<T>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("empty correlation profile"));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn w_s(&self) -> usize {
        self.scores.len()
    }
}

/// Best alignment of a query against one reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    pub ref_id: u64,
    pub best_shift: usize,
    pub azimuth_deg: f64,
    /// Higher is better.
    pub similarity: f64,
}

/// How to choose among equal correlation maxima.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Smallest shift index.
    #[default]
    Lowest,
    /// Uniform choice among the maxima, seeded per reference.
    Seeded(u64),
}

fn check_shapes<T: Real>(fs: &FeatureVolume<T>, fg: &FeatureVolume<T>) -> Result<()> {
    if fs.h() != fg.h() || fs.c() != fg.c() || fg.w() > fs.w() || fs.w() == 0 {
        return Err(Error::invalid(format!(
            "cannot correlate satellite {}x{}x{} with ground {}x{}x{}",
            fs.h(),
            fs.w(),
            fs.c(),
            fg.h(),
            fg.w(),
            fg.c()
        )));
    }
    Ok(())
}

/// Spatial-domain circular correlation,
/// `scores[i] = sum_{h,w,c} Fs(h, (i + w) mod W_s, c) * Fg(h, w, c)`.
pub fn correlate_direct<T: Real>(
    fs: &FeatureVolume<T>,
    fg: &FeatureVolume<T>,
) -> Result<CorrelationProfile<T>> {
    check_shapes(fs, fg)?;
    let w_s = fs.w();
    let mut scores = vec![T::zero(); w_s];
    for h in 0..fg.h() {
        for w in 0..fg.w() {
            let g = fg.cell(h, w);
            for (i, score) in scores.iter_mut().enumerate() {
                let s = fs.cell(h, (i + w) % w_s);
                let dot = s.iter().zip(g).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                *score = *score + dot;
            }
        }
    }
    CorrelationProfile::new(scores)
}

/// Half spectra (`W_s / 2 + 1` bins) of every `(row, channel)` line of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    lines: usize,
    w_s: usize,
    bins: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn bins_per_line(&self) -> usize {
        self.w_s / 2 + 1
    }

    pub fn w_s(&self) -> usize {
        self.w_s
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn bins(&self) -> &[Complex<T>] {
        &self.bins
    }
}

/// Planned transforms for one satellite width.
pub struct FftCorrelator<T: Real> {
    w_s: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> FftCorrelator<T> {
    pub fn new(w_s: usize) -> Result<Self> {
        if w_s == 0 {
            return Err(Error::invalid("correlation width must be positive"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            w_s,
            forward: planner.plan_fft_forward(w_s),
            inverse: planner.plan_fft_inverse(w_s),
        })
    }

    pub fn w_s(&self) -> usize {
        self.w_s
    }

    /// Spectrum of a volume zero-padded (along width) to `W_s`.
    pub fn spectrum(&self, vol: &FeatureVolume<T>) -> Result<Spectrum<T>> {
        if vol.w() > self.w_s {
            return Err(Error::invalid(format!(
                "volume width {} exceeds correlation width {}",
                vol.w(),
                self.w_s
            )));
        }
        let half = self.w_s / 2 + 1;
        let lines = vol.h() * vol.c();
        let mut bins = Vec::with_capacity(lines * half);
        let mut line = vec![Complex::new(T::zero(), T::zero()); self.w_s];
        for h in 0..vol.h() {
            for c in 0..vol.c() {
                line.iter_mut().for_each(|z| *z = Complex::new(T::zero(), T::zero()));
                for w in 0..vol.w() {
                    line[w].re = vol.get(h, w, c);
                }
                self.forward.process(&mut line);
                bins.extend_from_slice(&line[..half]);
            }
        }
        Ok(Spectrum {
            lines,
            w_s: self.w_s,
            bins,
        })
    }

    /// Correlation profile from a reference spectrum and a query spectrum.
    pub fn correlate_spectra(
        &self,
        reference: &Spectrum<T>,
        query: &Spectrum<T>,
        work: &mut FftWork<T>,
    ) -> Result<CorrelationProfile<T>> {
        if reference.lines != query.lines || reference.w_s != self.w_s || query.w_s != self.w_s {
            return Err(Error::invalid("spectra were computed for different shapes"));
        }
        let n = self.w_s;
        let half = n / 2 + 1;
        work.ensure(n, self.inverse.get_inplace_scratch_len());
        let acc = &mut work.acc[..half];
        acc.iter_mut().for_each(|z| *z = Complex::new(T::zero(), T::zero()));
        for (a_line, b_line) in reference
            .bins
            .chunks_exact(half)
            .zip(query.bins.chunks_exact(half))
        {
            for ((dst, a), b) in acc.iter_mut().zip(a_line).zip(b_line) {
                // a * conj(b)
                dst.re = dst.re + a.re * b.re + a.im * b.im;
                dst.im = dst.im + a.im * b.re - a.re * b.im;
            }
        }
        let full = &mut work.full[..n];
        full[..half].copy_from_slice(&work.acc[..half]);
        for k in half..n {
            full[k] = work.acc[n - k].conj();
        }
        self.inverse.process_with_scratch(full, &mut work.scratch);
        let scale = T::one() / T::of_usize(n);
        CorrelationProfile::new(full.iter().map(|z| z.re * scale).collect())
    }
}

/// Reusable buffers for [`FftCorrelator::correlate_spectra`].
#[derive(Default)]
pub struct FftWork<T> {
    acc: Vec<Complex<T>>,
    full: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real> FftWork<T> {
    fn ensure(&mut self, n: usize, scratch: usize) {
        let zero = Complex::new(T::zero(), T::zero());
        if self.acc.len() < n {
            self.acc.resize(n, zero);
            self.full.resize(n, zero);
        }
        if self.scratch.len() < scratch {
            self.scratch.resize(scratch, zero);
        }
    }
}

/// Spectral circular correlation; equals [`correlate_direct`] up to rounding.
pub fn correlate_fft<T: Real>(
    fs: &FeatureVolume<T>,
    fg: &FeatureVolume<T>,
) -> Result<CorrelationProfile<T>> {
    check_shapes(fs, fg)?;
    let fft = FftCorrelator::new(fs.w())?;
    let a = fft.spectrum(fs)?;
    let b = fft.spectrum(fg)?;
    fft.correlate_spectra(&a, &b, &mut FftWork::default())
}

fn argmax_candidates<T: Real>(scores: &[T]) -> Vec<usize> {
    let best = scores
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
    scores
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .collect()
}

fn pick_shift<T: Real>(profile: &CorrelationProfile<T>, tie: TieBreak, salt: u64) -> usize {
    let cands = argmax_candidates(&profile.scores);
    match tie {
        TieBreak::Lowest => cands.first().copied().unwrap_or(0),
        TieBreak::Seeded(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17));
            cands.choose(&mut rng).copied().unwrap_or(0)
        }
    }
}

/// Best shift (lowest index among ties) and its azimuth `360 * shift / W_s` in degrees.
pub fn estimate_orientation<T: Real>(profile: &CorrelationProfile<T>) -> (usize, f64) {
    estimate_orientation_with(profile, TieBreak::Lowest, 0)
}

pub fn estimate_orientation_with<T: Real>(
    profile: &CorrelationProfile<T>,
    tie: TieBreak,
    salt: u64,
) -> (usize, f64) {
    let shift = pick_shift(profile, tie, salt);
    (shift, 360.0 * shift as f64 / profile.w_s() as f64)
}

fn check_pair<T: Real>(sat: &Descriptor<T>, ground: &Descriptor<T>, fov_deg: f64) -> Result<()> {
    feat::check_fov(fov_deg)?;
    let expect = feat::fov_columns(sat.w(), fov_deg);
    if ground.w() != expect {
        return Err(Error::invalid(format!(
            "ground descriptor width {} does not match {expect} columns for a {fov_deg} degree view",
            ground.w()
        )));
    }
    if sat.h() != ground.h() || sat.c() != ground.c() {
        return Err(Error::invalid("descriptor heights or channel counts differ"));
    }
    Ok(())
}

/// Turns a correlation profile into a match for one reference.
fn finish_match<T: Real>(
    ref_id: u64,
    sat: &FeatureVolume<T>,
    sat_norm: T,
    ground: &FeatureVolume<T>,
    ground_unit: &FeatureVolume<T>,
    ground_norm: T,
    profile: &CorrelationProfile<T>,
    fov_deg: f64,
    tie: TieBreak,
) -> MatchResult {
    let (shift, azimuth_deg) = estimate_orientation_with(profile, tie, ref_id);
    let similarity = if ground.w() == sat.w() && fov_deg >= 360.0 {
        let denom = sat_norm * ground_norm;
        if denom > T::zero() {
            (profile.scores[shift] / denom).to_f64_lossy()
        } else {
            0.0
        }
    } else {
        let crop = sat.crop_columns_cyclic(shift, ground.w()).l2_normalized();
        let d = crop
            .distance(ground_unit)
            .expect("crop has the ground descriptor's shape");
        -d.to_f64_lossy()
    };
    MatchResult {
        ref_id,
        best_shift: shift,
        azimuth_deg,
        similarity,
    }
}

/// Scores one satellite/ground descriptor pair over all azimuth shifts.
///
/// Full panoramas score by normalized correlation; limited views crop the
/// satellite descriptor at the best shift, renormalize and score by negated
/// Frobenius distance.
pub fn score_pair<T: Real>(
    sat: &Descriptor<T>,
    ground: &Descriptor<T>,
    fov_deg: f64,
) -> Result<MatchResult> {
    check_pair(sat, ground, fov_deg)?;
    let profile = correlate_direct(sat.volume(), ground.volume())?;
    let g = ground.volume();
    Ok(finish_match(
        0,
        sat.volume(),
        sat.volume().frobenius_norm(),
        g,
        &g.l2_normalized(),
        g.frobenius_norm(),
        &profile,
        fov_deg,
        TieBreak::Lowest,
    ))
}

/// A database descriptor with its cached width-axis spectrum.
#[derive(Clone, Debug)]
pub struct Reference<T> {
    pub id: u64,
    pub descriptor: Descriptor<T>,
    spectrum: Spectrum<T>,
    norm: T,
}

impl<T: Real> Reference<T> {
    pub fn new(id: u64, descriptor: Descriptor<T>, fft: &FftCorrelator<T>) -> Result<Self> {
        let spectrum = fft.spectrum(descriptor.volume())?;
        let norm = descriptor.volume().frobenius_norm();
        Ok(Self {
            id,
            descriptor,
            spectrum,
            norm,
        })
    }

    pub fn spectrum(&self) -> &Spectrum<T> {
        &self.spectrum
    }
}

/// Orders matches by similarity (descending), then reference id.
pub fn sort_matches(matches: &mut [MatchResult]) {
    matches.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.ref_id.cmp(&b.ref_id))
    });
}

/// Ranks spectrum-cached references against a query.
pub fn rank_references<T: Real>(
    query: &Descriptor<T>,
    refs: &[Reference<T>],
    fft: &FftCorrelator<T>,
    fov_deg: f64,
    tie: TieBreak,
) -> Result<Vec<MatchResult>> {
    if refs.is_empty() {
        return Err(Error::invalid("cannot rank against an empty database"));
    }
    for r in refs {
        check_pair(&r.descriptor, query, fov_deg)?;
    }
    let g = query.volume();
    let g_unit = g.l2_normalized();
    let g_norm = g.frobenius_norm();
    let q_spec = fft.spectrum(g)?;
    let mut matches = refs
        .par_iter()
        .map_init(FftWork::default, |work, r| {
            let profile = fft.correlate_spectra(&r.spectrum, &q_spec, work)?;
            Ok(finish_match(
                r.id,
                r.descriptor.volume(),
                r.norm,
                g,
                &g_unit,
                g_norm,
                &profile,
                fov_deg,
                tie,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_matches(&mut matches);
    Ok(matches)
}

/// Scores a query against every `(id, descriptor)` and returns the ranking.
pub fn rank_database<T: Real>(
    query: &Descriptor<T>,
    db: &[(u64, Descriptor<T>)],
    fov_deg: f64,
) -> Result<Vec<MatchResult>> {
    let first = db
        .first()
        .ok_or_else(|| Error::invalid("cannot rank against an empty database"))?;
    let fft = FftCorrelator::new(first.1.w())?;
    let refs = db
        .iter()
        .map(|(id, d)| Reference::new(*id, d.clone(), &fft))
        .collect::<Result<Vec<_>>>()?;
    rank_references(query, &refs, &fft, fov_deg, TieBreak::Lowest)
}
