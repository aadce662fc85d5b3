use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xview::img::load_png;

fn xview(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xview"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = xview(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: [&str; 6] = ["--hg", "64", "--wg", "256", "--sat-size", "128"];

fn small_dataset(dir: &Path, name: &str, threads: &str) {
    let mut args = vec!["--seed", "7", "--threads", threads, "synth", "--out", name, "--n", "5", "--extent", "80"];
    args.extend(SMALL);
    ok(dir, &args);
}

fn pipeline(dir: &Path, name: &str, threads: &str) -> (Vec<u8>, Vec<u8>) {
    small_dataset(dir, name, threads);
    let db = format!("{name}.xvdb");
    let ranked = format!("{name}_ranked.csv");
    let metrics = format!("{name}_metrics.csv");
    let pano = ["--hg", "64", "--wg", "256"];
    let mut a = vec!["--threads", threads, "db-build", "--data", name, "--out", &db];
    a.extend(pano);
    ok(dir, &a);
    let mut a = vec!["--threads", threads, "locate-coarse", "--db", &db, "--data", name, "--fov", "180", "--out", &ranked];
    a.extend(pano);
    ok(dir, &a);
    let mut a = vec!["--threads", threads, "eval", "--db", &db, "--data", name, "--fov", "360", "--fov", "180", "--csv", &metrics];
    a.extend(pano);
    ok(dir, &a);
    (fs::read(dir.join(&ranked)).unwrap(), fs::read(dir.join(&metrics)).unwrap())
}

#[test]
fn polar_writes_image_and_params() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "1");
    ok(dir.path(), &["polar", "--in", "ds/scenes/0/sat.png", "--out", "p.png", "--hg", "128", "--wg", "512"]);
    let img = load_png(dir.path().join("p.png")).unwrap();
    assert_eq!((img.height(), img.width()), (128, 512));
    let params = fs::read_to_string(dir.path().join("p.png.params.txt")).unwrap();
    assert!(params.contains("transform = polar"));
    assert!(params.contains("radius = 64"));
}

#[test]
fn project_off_center() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "1");
    ok(dir.path(), &["project", "--in", "ds/scenes/0/sat.png", "--out", "a.png", "--center", "70,60"]);
    ok(dir.path(), &["project", "--in", "ds/scenes/0/sat.png", "--out", "b.png"]);
    let a = load_png(dir.path().join("a.png")).unwrap();
    let b = load_png(dir.path().join("b.png")).unwrap();
    assert_eq!((a.height(), a.width()), (64, 512));
    assert_ne!(a, b);
    let params = fs::read_to_string(dir.path().join("a.png.params.txt")).unwrap();
    assert!(params.contains("center = 70,60"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = xview(dir.path(), &["polar", "--in", "x.png", "--out", "y.png", "--hg", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--hg"));
    let out = xview(dir.path(), &["polar", "--in", "missing.png", "--out", "y.png"]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(dir.path().join("bad.xvdb"), b"nonsense").unwrap();
    small_dataset(dir.path(), "ds", "1");
    let out = xview(dir.path(), &["eval", "--db", "bad.xvdb", "--data", "ds", "--hg", "64", "--wg", "256"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
    let out = xview(dir.path(), &["project", "--in", "ds/scenes/0/sat.png", "--out", "z.png", "--hg", "63"]);
    assert_eq!(out.status.code(), Some(2));
    let out = xview(dir.path(), &["locate-fine", "--out", "f.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (ranked_a, metrics_a) = pipeline(dir.path(), "a", "1");
    let (ranked_b, metrics_b) = pipeline(dir.path(), "b", "1");
    assert_eq!(ranked_a, ranked_b);
    assert_eq!(metrics_a, metrics_b);
    for rel in ["manifest.csv", "references.csv", "scenes/3/sat.png", "scenes/3/pano_180.png"] {
        assert_eq!(fs::read(dir.path().join("a").join(rel)).unwrap(), fs::read(dir.path().join("b").join(rel)).unwrap());
    }
    assert_eq!(fs::read(dir.path().join("a.xvdb")).unwrap(), fs::read(dir.path().join("b.xvdb")).unwrap());
    let (_, metrics_c) = pipeline(dir.path(), "c", "2");
    assert_eq!(metrics_a, metrics_c);
    let text = String::from_utf8(ranked_a).unwrap();
    assert!(text.starts_with("query_id,rank,ref_id,shift,azimuth_deg,similarity\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 5);
    let metrics = String::from_utf8(metrics_a).unwrap();
    assert!(metrics.contains("360,5,r@1,"));
    assert!(metrics.contains("180,5,overall,"));
}

#[test]
fn fine_search_single_query() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "1");
    ok(
        dir.path(),
        &[
            "locate-fine", "--sat", "ds/scenes/1/sat.png", "--query", "ds/scenes/1/pano_180.png",
            "--fov", "180", "--hg", "64", "--wg", "256", "--region-half", "3", "--orientations", "64",
            "--out", "f.csv", "--heatmap", "h.png",
        ],
    );
    let text = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("query_id,du_px,dv_px,x_m,y_m,azimuth_deg,ssim"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], &["0", "0", "0"]);
    let manifest = fs::read_to_string(dir.path().join("ds/manifest.csv")).unwrap();
    let truth: f64 = manifest.lines().nth(3).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    let az: f64 = row[5].parse().unwrap();
    assert!((az - truth).abs() <= 360.0 / 64.0, "{az} vs {truth}");
    let heat = load_png(dir.path().join("h.png")).unwrap();
    assert_eq!((heat.height(), heat.width()), (6, 6));
}

#[test]
fn bench_reports_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bench", "--n", "5", "--reps", "3", "--out", "bench.txt"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("speedup="));
    assert_eq!(fs::read_to_string(dir.path().join("bench.txt")).unwrap(), text);
}
