//! Acceptance run: one PASS/FAIL line per criterion, each within its time budget.
//!
//! Criteria run sequentially in a plain binary so that timings are not
//! distorted by other tests sharing the core.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xview::dsm::{correlate_direct, correlate_fft, score_pair, TieBreak};
use xview::eval::{
    self, build_db_from_dir, build_db_from_records, coarse_queries, distance_recall, load_queries,
    orientation_accuracy, overall, recall_at_k, synthetic_queries, MetricsReport, RetrievalResult,
};
use xview::feat::{ground_descriptor, satellite_descriptor, DescriptorConfig, FeatureVolume};
use xview::finegrain::{fine_localize, SearchConfig};
use xview::img::{load_png, Image};
use xview::loss::{exhaustive_triplet_count, soft_margin, soft_margin_grad, total_loss, TripletTerm};
use xview::synth::{self, crop_fov, generate_records, DatasetConfig, Scene, ScenePose, SceneRecord};
use xview::xform::{self, polar_coords, projective_coords, PolarParams, ProjParams, SatPoint};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// transforms

fn polar_oracle(u: f64, v: f64, s: &PolarParams<f64>) -> (f64, f64) {
    let (h, w) = (s.target_h as f64, s.target_w as f64);
    let rho = s.max_radius * (h - v) / h;
    let ang = 2.0 * PI * u / w;
    (s.center.row - rho * ang.cos(), s.center.col + rho * ang.sin())
}

fn projective_oracle(u: f64, v: f64, p: &ProjParams<f64>) -> (f64, f64) {
    let (h, w) = (p.target_h as f64, p.target_w as f64);
    let t = (PI * v / h).tan();
    let ang = 2.0 * PI * u / w;
    (
        p.center.row + p.px_per_meter * p.cam_height * t * ang.cos(),
        p.center.col - p.px_per_meter * p.cam_height * t * ang.sin(),
    )
}

fn transforms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let size = rng.gen_range(64..1024usize);
        let target_h = 2 * rng.gen_range(1..256usize);
        let target_w = rng.gen_range(1..1024usize);
        let center = SatPoint::new(rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
        let polar = PolarParams {
            sat_size: size,
            center,
            target_h,
            target_w,
            max_radius: rng.gen_range(1.0..size as f64),
        };
        let proj = ProjParams {
            center,
            px_per_meter: rng.gen_range(0.5..10.0),
            cam_height: rng.gen_range(0.5..5.0),
            target_h,
            target_w,
        };
        let u = rng.gen_range(0.0..target_w as f64);
        let v_any = rng.gen_range(0.0..=target_h as f64);
        let v_ground = target_h as f64 * rng.gen_range(0.55..=1.0);
        let a = polar_coords(u, v_any, &polar);
        let b = polar_oracle(u, v_any, &polar);
        worst = worst.max((a.row - b.0).abs()).max((a.col - b.1).abs());
        let a = projective_coords(u, v_ground, &proj).unwrap();
        let b = projective_oracle(u, v_ground, &proj);
        worst = worst.max((a.row - b.0).abs()).max((a.col - b.1).abs());
    }
    let p: PolarParams<f64> = PolarParams {
        sat_size: 256,
        center: SatPoint::new(128.0, 128.0),
        target_h: 128,
        target_w: 512,
        max_radius: 128.0,
    };
    let q: ProjParams<f64> = ProjParams {
        center: SatPoint::new(128.0, 128.0),
        px_per_meter: 256.0 / 72.0,
        cam_height: 1.7,
        target_h: 128,
        target_w: 512,
    };
    let mut exact = true;
    for u in [0.0, 17.0, 300.5] {
        exact &= polar_coords(u, 128.0, &p) == p.center;
        let n = projective_coords(u, 128.0, &q).unwrap();
        exact &= (n.row - 128.0).abs() < 1e-12 && (n.col - 128.0).abs() < 1e-12;
    }
    let ex = polar_coords(128.0, 64.0, &p);
    exact &= (ex.row - 128.0).abs() < 1e-12 && (ex.col - 192.0).abs() < 1e-12;
    exact &= projective_coords(0.0, 64.0, &q).is_err();
    outcome(worst <= 1e-10 && exact, format!("max coordinate error {worst:.2e}, trivial cases exact: {exact}"))
}

// ---------------------------------------------------------------------------
// geometry

fn geometry() -> Outcome {
    let mpp = xform::DEFAULT_METERS_PER_PIXEL;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for scene_seed in 0..20u64 {
        let scene = Scene::new(1000 + scene_seed, synth::DEFAULT_EXTENT).unwrap();
        let k = rng.gen_range(0..512usize);
        let pose = ScenePose::new(rng.gen_range(90.0..110.0), rng.gen_range(90.0..110.0), 360.0 * k as f64 / 512.0);
        let pano = synth::render_panorama(&scene, &pose, 128, 512, xform::DEFAULT_CAM_HEIGHT).unwrap();
        let sat = synth::render_satellite(&scene, pose.x, pose.y, 512, mpp).unwrap();
        let p = ProjParams::for_satellite(&sat, 128, 512).unwrap();
        let proj = xform::projective_transform(&sat, &p).unwrap().roll_columns(k);
        let psnr = pano.rows(64, 128).unwrap().psnr(&proj).unwrap();
        worst = worst.min(psnr);
    }
    outcome(worst >= 35.0, format!("min PSNR {worst:.2} dB over 20 scenes"))
}

// ---------------------------------------------------------------------------
// dsm

fn triple_loop(fs: &FeatureVolume<f64>, fg: &FeatureVolume<f64>) -> Vec<f64> {
    let ws = fs.w();
    let mut out = vec![0.0; ws];
    for (i, o) in out.iter_mut().enumerate() {
        for h in 0..fg.h() {
            for w in 0..fg.w() {
                for c in 0..fg.c() {
                    *o += fs.get(h, (i + w) % ws, c) * fg.get(h, w, c);
                }
            }
        }
    }
    out
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn dsm_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut fft_vs_direct, mut vs_oracle) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = FeatureVolume::<f64>::from_fn(4, 64, 16, |_, _, _| rng.gen_range(-1.0..1.0));
        let b = FeatureVolume::<f64>::from_fn(4, 64, 16, |_, _, _| rng.gen_range(-1.0..1.0));
        let oracle = triple_loop(&a, &b);
        let direct = correlate_direct(&a, &b).unwrap();
        let fft = correlate_fft(&a, &b).unwrap();
        fft_vs_direct = fft_vs_direct.max(rel_error(fft.scores(), direct.scores()));
        vs_oracle = vs_oracle
            .max(rel_error(direct.scores(), &oracle))
            .max(rel_error(fft.scores(), &oracle));
    }
    outcome(
        fft_vs_direct <= 1e-4 && vs_oracle <= 1e-4,
        format!("fft vs direct {fft_vs_direct:.2e}, vs triple loop {vs_oracle:.2e}"),
    )
}

fn fft_speedup() -> Outcome {
    let r = eval::bench_correlation(1000, 4, 64, 16, 7, 4).unwrap();
    outcome(
        r.speedup >= 3.0,
        format!("direct {} us, fft {} us, speedup {:.1}x", r.direct_ns / 1000, r.fft_ns / 1000, r.speedup),
    )
}

// ---------------------------------------------------------------------------
// orientation and retrieval

fn circular_cols(a: f64, b: f64, w: f64) -> f64 {
    let d = (a - b).rem_euclid(w);
    d.min(w - d)
}

fn rendered(records: &[SceneRecord], cfg: &DatasetConfig) -> Vec<(Image, Image)> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| {
            let s = r.scene(cfg).unwrap();
            (r.satellite(&s, cfg).unwrap(), r.panorama(&s, cfg).unwrap())
        })
        .collect()
}

fn orientation() -> Outcome {
    let dc = DescriptorConfig::default();
    let cfg = DatasetConfig {
        seed: 5,
        n_scenes: 200,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let block = (cfg.pano_w / dc.grid_w) as f64;
    let records: Vec<SceneRecord> = generate_records(&cfg)
        .unwrap()
        .into_iter()
        .map(|r| SceneRecord {
            azimuth_deg: 360.0 * (8 * rng.gen_range(0..64)) as f64 / 512.0,
            ..r
        })
        .collect();
    let aligned = rendered(&records, &cfg);
    let random = generate_records(&DatasetConfig { seed: 6, ..cfg.clone() }).unwrap();
    let unaligned = rendered(&random, &cfg);

    let mut exact = 0;
    for (r, (sat, pano)) in records.iter().zip(&aligned) {
        let s = satellite_descriptor::<f32>(sat, &dc).unwrap();
        let g = ground_descriptor::<f32>(pano, 360.0, &dc).unwrap();
        let m = score_pair(&s, &g, 360.0).unwrap();
        let truth = r.azimuth_deg * cfg.pano_w as f64 / 360.0 / block;
        exact += (circular_cols(m.best_shift as f64, truth, 64.0) == 0.0) as usize;
    }
    let mut within = 0;
    for (r, (sat, pano)) in random.iter().zip(&unaligned) {
        let s = satellite_descriptor::<f32>(sat, &dc).unwrap();
        let g = ground_descriptor::<f32>(&crop_fov(pano, 180.0).unwrap(), 180.0, &dc).unwrap();
        let m = score_pair(&s, &g, 180.0).unwrap();
        let truth = r.azimuth_deg * cfg.pano_w as f64 / 360.0 / block;
        within += (circular_cols(m.best_shift as f64, truth, 64.0) <= 1.0) as usize;
    }
    outcome(
        exact == 200 && within as f64 >= 0.95 * 200.0,
        format!("FoV 360 exact {exact}/200, FoV 180 within 1 column {within}/200"),
    )
}

fn coarse_retrieval() -> Outcome {
    let dc = DescriptorConfig::default();
    let cfg = DatasetConfig {
        seed: 7,
        n_scenes: 200,
        ..Default::default()
    };
    let records = generate_records(&cfg).unwrap();
    let db = build_db_from_records(&records, &cfg, &dc).unwrap();
    let mut r1 = Vec::new();
    let mut monotone = true;
    for fov in [360.0, 180.0] {
        let queries = synthetic_queries(&records, &cfg, fov).unwrap();
        let results = coarse_queries(&db, &queries, &dc, fov, TieBreak::Lowest).unwrap();
        let curve: Vec<f64> = (1..=200).map(|k| recall_at_k(&results, k).unwrap()).collect();
        monotone &= curve.windows(2).all(|w| w[1] >= w[0]) && curve[199] == 1.0;
        r1.push(curve[0]);
    }
    outcome(
        r1[0] >= 0.95 && r1[1] >= 0.80 && monotone,
        format!("r@1 {:.3} (FoV 360), {:.3} (FoV 180), non-decreasing in K: {monotone}", r1[0], r1[1]),
    )
}

// ---------------------------------------------------------------------------
// fine search

fn fine_localization() -> Outcome {
    let cfg = DatasetConfig {
        seed: 8,
        n_scenes: 50,
        offset_max_px: 9,
        ..Default::default()
    };
    let records = generate_records(&cfg).unwrap();
    let mut ok = 0;
    for r in &records {
        let scene = r.scene(&cfg).unwrap();
        let sat = r.satellite(&scene, &cfg).unwrap();
        let pano = r.panorama(&scene, &cfg).unwrap();
        let sc = SearchConfig::reduced(ProjParams::for_satellite(&sat, 128, 512).unwrap());
        let f = fine_localize(&sat, &pano, &sc).unwrap();
        let step = 360.0 / sc.n_orient as f64;
        let loc = (f.offset.0 - r.offset_du_px).abs() <= 1 && (f.offset.1 - r.offset_dv_px).abs() <= 1;
        ok += (loc && eval::circular_error(f.azimuth_deg, r.azimuth_deg) <= 2.0 * step) as usize;
    }

    let tiny = Image::from_fn(256, 256, 1, |i, j, _| ((i as f32 * 0.3).sin() + (j as f32 * 0.2).cos()) * 0.25 + 0.5);
    let full = SearchConfig::full(ProjParams::for_satellite(&tiny, 16, 512).unwrap());
    let query = xform::projective_transform(&tiny, &full.proj).unwrap();
    let visited = fine_localize(&tiny, &query, &full).unwrap().evaluated;
    let claimed = 614_400u64;
    outcome(
        ok as f64 >= 0.9 * 50.0 && visited == claimed,
        format!(
            "reduced-scale trials within tolerance {ok}/50; 40x40x512 search visits {visited} candidates, claim is {claimed}"
        ),
    )
}

// ---------------------------------------------------------------------------
// loss and metrics

fn loss_arithmetic() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let t = TripletTerm::new(0.42, 0.42, 10.0).unwrap();
    let per_term = (soft_margin(&t) - ln2).abs();
    let g = FeatureVolume::<f64>::from_fn(4, 64, 8, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f64 * 0.01);
    let s = FeatureVolume::<f64>::from_fn(4, 64, 8, |r, c, ch| ((r + c * 5 + ch * 2) % 13) as f64 * 0.02);
    let total = (total_loss(&g, &g, &s, &s, &s, &s, 10.0).unwrap() - 3.0 * ln2).abs();
    let count = exhaustive_triplet_count(32).unwrap();
    let mut worst = 0.0f64;
    for (p, n) in [(0.1, 0.2), (0.5, 0.45), (1.3, 0.2), (0.0, 0.9), (0.7, 0.7)] {
        let h = 1e-6;
        let f = |d: f64| soft_margin(&TripletTerm::new(d, n, 10.0).unwrap());
        let fd = (f(p + h) - f((p - h).max(0.0))) / (p + h - (p - h).max(0.0));
        let an = soft_margin_grad(&TripletTerm::new(p, n, 10.0).unwrap());
        worst = worst.max((fd - an).abs() / an.abs());
    }
    outcome(
        per_term < 1e-12 && total < 1e-12 && count == 1984 && worst <= 1e-5,
        format!("ln2 term error {per_term:.1e}, 3 ln2 total error {total:.1e}, count(32) = {count}, gradient rel error {worst:.1e}"),
    )
}

fn metrics_arithmetic() -> Outcome {
    use xview::dsm::MatchResult;
    let o = overall(0.7894, 0.9945);
    let m = |id: u64, az: f64| MatchResult {
        ref_id: id,
        best_shift: 0,
        azimuth_deg: az,
        similarity: 1.0,
    };
    let res = |ranked: Vec<MatchResult>, truth_az: f64| RetrievalResult {
        query_id: 0,
        truth_id: 0,
        truth_azimuth_deg: truth_az,
        truth_xy: (0.0, 0.0),
        ranked,
    };
    let geo: HashMap<u64, (f64, f64)> = [(0, (50.0, 50.0)), (1, (4.9, 0.0)), (2, (0.0, 5.1))].into();
    let near = distance_recall(&[res(vec![m(1, 0.0)], 0.0)], &geo, 1, 5.0).unwrap();
    let far = distance_recall(&[res(vec![m(2, 0.0)], 0.0)], &geo, 1, 5.0).unwrap();
    let orient = |est: f64, fov: f64| orientation_accuracy(&[res(vec![m(0, est)], 0.0)], fov).unwrap();
    let cases = [
        orient(35.9, 360.0) == Some(1.0),
        orient(36.1, 360.0) == Some(0.0),
        orient(350.0, 360.0) == Some(1.0),
        orient(17.9, 180.0) == Some(1.0),
        orient(18.1, 180.0) == Some(0.0),
        orientation_accuracy(&[res(vec![m(1, 0.0), m(0, 0.0)], 0.0)], 360.0).unwrap().is_none(),
    ];
    let ok = (o - 0.78506).abs() <= 5e-5 && near == 1.0 && far == 0.0 && cases.iter().all(|&c| c);
    outcome(
        ok,
        format!("overall {o:.5}; 4.9 m counted {}, 5.1 m counted {}; FoV thresholds {cases:?}", near == 1.0, far == 1.0),
    )
}

// ---------------------------------------------------------------------------
// determinism

fn pipeline_outputs(root: &std::path::Path) -> (Vec<Vec<u8>>, String) {
    let cfg = DatasetConfig {
        seed: 9,
        n_scenes: 12,
        offset_max_px: 2,
        fovs: vec![360.0, 180.0],
        ..Default::default()
    };
    let dc = DescriptorConfig::default();
    synth::make_dataset(root, &cfg).unwrap();
    let mut files = Vec::new();
    for rel in ["manifest.csv", "references.csv"] {
        files.push(std::fs::read(root.join(rel)).unwrap());
    }
    for id in 0..12 {
        files.push(std::fs::read(synth::sat_path(root, id)).unwrap());
        files.push(std::fs::read(synth::pano_path(root, id, 180.0)).unwrap());
    }
    let db = build_db_from_dir(root, &dc).unwrap();
    files.push(db.to_bytes());
    let mut reports = Vec::new();
    let mut ranked = String::new();
    for fov in [360.0, 180.0] {
        let q = load_queries(root, fov).unwrap();
        let results = coarse_queries(&db, &q, &dc, fov, TieBreak::Seeded(3)).unwrap();
        for r in &results {
            for m in r.ranked.iter().take(5) {
                ranked.push_str(&format!("{},{},{},{:?}\n", r.query_id, m.ref_id, m.best_shift, m.similarity));
            }
        }
        reports.push(MetricsReport::compute(&results, &db.geotags(), fov, 5.0).unwrap());
    }
    files.push(ranked.into_bytes());
    let sat = load_png(synth::sat_path(root, 4)).unwrap();
    let query = load_png(synth::pano_path(root, 4, 180.0)).unwrap();
    let sc = SearchConfig {
        region_half: 3,
        n_orient: 64,
        fov_deg: 180.0,
        ..SearchConfig::reduced(ProjParams::for_satellite(&sat, 128, 512).unwrap())
    };
    let f = fine_localize(&sat, &query, &sc).unwrap();
    files.push(format!("{:?}", f).into_bytes());
    (files, MetricsReport::to_csv(&reports))
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn determinism() -> Outcome {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let (a, ma) = in_pool(1, || pipeline_outputs(dirs[0].path()));
    let (b, mb) = in_pool(1, || pipeline_outputs(dirs[1].path()));
    let (_, mc) = in_pool(4, || pipeline_outputs(dirs[2].path()));
    let identical = a == b && ma == mb;
    outcome(
        identical && ma == mc,
        format!(
            "{} single-thread artifacts byte-identical: {identical}; metrics identical with 4 threads: {}",
            a.len(),
            ma == mc
        ),
    )
}

// ---------------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
    /// Documented as unattainable as stated; the run must fail for that reason only.
    known_unattainable: bool,
}

fn main() {
    let criteria = [
        Criterion { name: "transform correctness", budget: Duration::from_secs(1), run: transforms, known_unattainable: false },
        Criterion { name: "cross-module geometry", budget: Duration::from_secs(30), run: geometry, known_unattainable: false },
        Criterion { name: "DSM oracle equivalence", budget: Duration::from_secs(10), run: dsm_equivalence, known_unattainable: false },
        Criterion { name: "FFT speedup", budget: Duration::from_secs(60), run: fft_speedup, known_unattainable: false },
        Criterion { name: "orientation recovery", budget: Duration::from_secs(120), run: orientation, known_unattainable: false },
        Criterion { name: "coarse retrieval", budget: Duration::from_secs(300), run: coarse_retrieval, known_unattainable: false },
        Criterion { name: "fine-grained localization", budget: Duration::from_secs(900), run: fine_localization, known_unattainable: true },
        Criterion { name: "loss arithmetic", budget: Duration::from_secs(1), run: loss_arithmetic, known_unattainable: false },
        Criterion { name: "metrics arithmetic", budget: Duration::from_secs(1), run: metrics_arithmetic, known_unattainable: false },
        Criterion { name: "determinism", budget: Duration::from_secs(300), run: determinism, known_unattainable: false },
    ];
    let mut unexpected = Vec::new();
    for c in &criteria {
        let t = Instant::now();
        let o = (c.run)();
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = o.pass && in_time;
        println!(
            "{} {}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            o.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if pass == c.known_unattainable {
            unexpected.push(c.name);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for {unexpected:?}");
        std::process::exit(1);
    }
}
