//! Direct versus spectral correlation timing.

use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsm::{correlate_direct, FftCorrelator, FftWork};
use crate::error::{Error, Result};
use crate::feat::FeatureVolume;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub n_refs: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub repetitions: usize,
    /// Median time to correlate one query against all references.
    pub direct_ns: u128,
    pub fft_ns: u128,
    pub speedup: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_refs={}", self.n_refs)?;
        writeln!(f, "shape={}x{}x{}", self.h, self.w, self.c)?;
        writeln!(f, "repetitions={}", self.repetitions)?;
        writeln!(f, "direct_ns={}", self.direct_ns)?;
        writeln!(f, "fft_ns={}", self.fft_ns)?;
        writeln!(f, "speedup={:.3}", self.speedup)
    }
}

fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Median single-threaded wall time of one query against `n_refs` references
/// of shape `h x w x c`, with reference spectra computed ahead of time.
pub fn bench_correlation(
    n_refs: usize,
    h: usize,
    w: usize,
    c: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if n_refs == 0 || h == 0 || w == 0 || c == 0 || repetitions == 0 {
        return Err(Error::invalid("benchmark sizes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = || FeatureVolume::<f32>::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0));
    let refs: Vec<_> = (0..n_refs).map(|_| random()).collect();
    let query = random();
    let fft = FftCorrelator::new(w)?;
    let spectra = refs.iter().map(|r| fft.spectrum(r)).collect::<Result<Vec<_>>>()?;
    let mut work = FftWork::default();

    let mut direct = Vec::with_capacity(repetitions);
    let mut spectral = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        for r in &refs {
            black_box(correlate_direct(r, black_box(&query))?);
        }
        direct.push(t.elapsed().as_nanos());

        let t = Instant::now();
        let q = fft.spectrum(black_box(&query))?;
        for s in &spectra {
            black_box(fft.correlate_spectra(s, &q, &mut work)?);
        }
        spectral.push(t.elapsed().as_nanos());
    }
    let direct_ns = median(direct);
    let fft_ns = median(spectral).max(1);
    Ok(BenchReport {
        n_refs,
        h,
        w,
        c,
        repetitions,
        direct_ns,
        fft_ns,
        speedup: direct_ns as f64 / fft_ns as f64,
    })
}
