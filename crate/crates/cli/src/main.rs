use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};
use xview::dsm::TieBreak;
use xview::eval::{self, DescriptorDb, MetricsReport};
use xview::feat::DescriptorConfig;
use xview::finegrain::{fine_localize, FineResult, SearchConfig};
use xview::img::{load_png, save_png, Image};
use xview::synth::{self, DatasetConfig};
use xview::xform::{self, PolarParams, ProjParams, SatPoint};
use xview::Error;

#[derive(Parser, Debug)]
#[command(name = "xview", version, about = "Ground-to-satellite cross-view localization")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Polar transform of a satellite image.
    Polar(PolarArgs),
    /// Ground-plane projective transform of a satellite image.
    Project(ProjectArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Build a descriptor database from a dataset.
    DbBuild(DbBuildArgs),
    /// Rank database references for every dataset query.
    LocateCoarse(CoarseArgs),
    /// Exhaustive location and orientation search.
    LocateFine(FineArgs),
    /// Retrieval metrics for a database and dataset.
    Eval(EvalArgs),
    /// Direct versus FFT correlation timing.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct PanoArgs {
    #[arg(long, default_value_t = xform::DEFAULT_PANO_H, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    hg: usize,
    #[arg(long, default_value_t = xform::DEFAULT_PANO_W, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    wg: usize,
}

#[derive(Args, Debug)]
struct PolarArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pano: PanoArgs,
    /// Maximum radius in pixels; defaults to half the image size.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct ProjArgs {
    #[arg(long, default_value_t = xform::DEFAULT_PX_PER_METER)]
    px_per_meter: f64,
    #[arg(long, default_value_t = xform::DEFAULT_CAM_HEIGHT)]
    cam_height: f64,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pano: PanoArgs,
    #[command(flatten)]
    proj: ProjArgs,
    /// Projection center as `x,y` (column,row) pixels; defaults to the image center.
    #[arg(long, value_parser = parse_pair)]
    center: Option<(f64, f64)>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "n", default_value_t = 50)]
    n_scenes: usize,
    /// Largest camera offset from the crop center, pixels.
    #[arg(long, default_value_t = 0)]
    offset_max: i64,
    /// Query fields of view; repeat for several.
    #[arg(long = "fov", default_values_t = vec![360.0, 180.0])]
    fovs: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    sat_size: usize,
    #[arg(long, default_value_t = xform::DEFAULT_METERS_PER_PIXEL)]
    mpp: f64,
    #[command(flatten)]
    pano: PanoArgs,
    #[arg(long, default_value_t = xform::DEFAULT_CAM_HEIGHT)]
    cam_height: f64,
    #[arg(long, default_value_t = synth::DEFAULT_EXTENT)]
    extent: f64,
}

#[derive(Args, Debug, Clone)]
struct DescArgs {
    #[arg(long, default_value_t = 4)]
    grid_h: usize,
    #[arg(long, default_value_t = 64)]
    grid_w: usize,
    #[arg(long, default_value_t = 8)]
    bins: usize,
    #[command(flatten)]
    pano: PanoArgs,
    #[command(flatten)]
    proj: ProjArgs,
}

impl DescArgs {
    fn config(&self) -> DescriptorConfig {
        DescriptorConfig {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            channels: self.bins,
            pano_h: self.pano.hg,
            pano_w: self.pano.wg,
            px_per_meter: self.proj.px_per_meter,
            cam_height: self.proj.cam_height,
        }
    }
}

#[derive(Args, Debug)]
struct DbBuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    desc: DescArgs,
}

#[derive(Args, Debug)]
struct CoarseArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 360.0)]
    fov: f64,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Break correlation ties randomly (seeded) instead of by lowest shift.
    #[arg(long)]
    random_ties: bool,
    #[command(flatten)]
    desc: DescArgs,
}

#[derive(Args, Debug)]
struct FineArgs {
    /// Satellite image (single-query mode).
    #[arg(long, requires = "query", conflicts_with = "data")]
    sat: Option<PathBuf>,
    /// Ground query image (single-query mode).
    #[arg(long, requires = "sat")]
    query: Option<PathBuf>,
    /// Dataset root (batch mode over the manifest).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Coarse ranking CSV; rank-1 references replace the true ones in batch mode.
    #[arg(long, requires = "data")]
    ranked: Option<PathBuf>,
    /// Process only the first N queries in batch mode.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 360.0)]
    fov: f64,
    #[arg(long, default_value_t = 20)]
    region_half: usize,
    #[arg(long)]
    inclusive: bool,
    #[arg(long, default_value_t = 1)]
    grid_step: usize,
    #[arg(long, default_value_t = 512)]
    orientations: usize,
    /// Use the reduced 20x20 grid with 128 orientations.
    #[arg(long)]
    reduced: bool,
    #[arg(long, default_value_t = xform::DEFAULT_METERS_PER_PIXEL)]
    mpp: f64,
    #[command(flatten)]
    pano: PanoArgs,
    #[command(flatten)]
    proj: ProjArgs,
    #[arg(long)]
    out: PathBuf,
    /// Score map heatmap PNG (single-query mode).
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "fov", default_values_t = vec![360.0])]
    fovs: Vec<f64>,
    #[arg(long, default_value_t = eval::DEFAULT_RADIUS_M)]
    radius: f64,
    /// Metrics CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    desc: DescArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long = "n", default_value_t = 1000)]
    n_refs: usize,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 64)]
    w: usize,
    #[arg(long, default_value_t = 16)]
    c: usize,
    #[arg(long, default_value_t = 11)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Domain(_) => 2,
            Error::Io { .. } => 3,
            Error::Image { .. } | Error::Format { .. } | Error::Table { .. } => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected x,y but got {s:?}"))?;
    let x = a.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y = b.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    Ok((x, y))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".params.txt");
    PathBuf::from(name)
}

fn echo(cmd: &str, items: &[(&str, String)]) {
    eprintln!("xview {cmd}");
    for (k, v) in items {
        eprintln!("  {k} = {v}");
    }
}

fn check_positive(flag: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{flag} must be positive, got {v}")))
    }
}

fn cmd_polar(a: &PolarArgs) -> CliResult<()> {
    let sat = load_png(&a.input)?;
    let mut p = PolarParams::for_satellite(&sat, a.pano.hg, a.pano.wg)?;
    if let Some(r) = a.radius {
        check_positive("radius", r)?;
        p.max_radius = r;
    }
    let items = [
        ("input", a.input.display().to_string()),
        ("hg", p.target_h.to_string()),
        ("wg", p.target_w.to_string()),
        ("center", format!("{},{}", p.center.col, p.center.row)),
        ("radius", p.max_radius.to_string()),
    ];
    echo("polar", &items);
    save_png(&xform::polar_transform(&sat, &p)?, &a.out)?;
    write_text(&sidecar(&a.out), &params_text("polar", &items))
}

fn params_text(kind: &str, items: &[(&str, String)]) -> String {
    let mut s = format!("transform = {kind}\n");
    for (k, v) in items {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn proj_params(sat: &Image, pano: &PanoArgs, proj: &ProjArgs) -> CliResult<ProjParams<f64>> {
    check_positive("px-per-meter", proj.px_per_meter)?;
    check_positive("cam-height", proj.cam_height)?;
    if pano.hg % 2 != 0 {
        return Err(usage(format!("--hg must be even for the projective transform, got {}", pano.hg)));
    }
    let mut p = ProjParams::for_satellite(sat, pano.hg, pano.wg)?;
    p.px_per_meter = proj.px_per_meter;
    p.cam_height = proj.cam_height;
    Ok(p)
}

fn cmd_project(a: &ProjectArgs) -> CliResult<()> {
    let sat = load_png(&a.input)?;
    let mut p = proj_params(&sat, &a.pano, &a.proj)?;
    if let Some((x, y)) = a.center {
        p = p.with_center(SatPoint::new(y, x));
    }
    let items = [
        ("input", a.input.display().to_string()),
        ("hg", p.target_h.to_string()),
        ("wg", p.target_w.to_string()),
        ("center", format!("{},{}", p.center.col, p.center.row)),
        ("px_per_meter", p.px_per_meter.to_string()),
        ("cam_height", p.cam_height.to_string()),
    ];
    echo("project", &items);
    save_png(&xform::projective_transform(&sat, &p)?, &a.out)?;
    write_text(&sidecar(&a.out), &params_text("projective", &items))
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    let cfg = DatasetConfig {
        seed,
        n_scenes: a.n_scenes,
        offset_max_px: a.offset_max,
        fovs: a.fovs.clone(),
        sat_size: a.sat_size,
        meters_per_pixel: a.mpp,
        pano_h: a.pano.hg,
        pano_w: a.pano.wg,
        cam_height: a.cam_height,
        extent: a.extent,
        spacing: synth::DEFAULT_SPACING,
    };
    echo(
        "synth",
        &[
            ("out", a.out.display().to_string()),
            ("seed", seed.to_string()),
            ("scenes", cfg.n_scenes.to_string()),
            ("offset_max_px", cfg.offset_max_px.to_string()),
            ("fovs", format!("{:?}", cfg.fovs)),
            ("sat_size", cfg.sat_size.to_string()),
            ("mpp", cfg.meters_per_pixel.to_string()),
            ("pano", format!("{}x{}", cfg.pano_h, cfg.pano_w)),
            ("cam_height", cfg.cam_height.to_string()),
            ("extent", cfg.extent.to_string()),
        ],
    );
    let records = synth::make_dataset(&a.out, &cfg)?;
    eprintln!("wrote {} scenes", records.len());
    Ok(())
}

fn desc_config(d: &DescArgs) -> CliResult<DescriptorConfig> {
    let cfg = d.config();
    cfg.validate()?;
    Ok(cfg)
}

fn echo_desc(cmd: &str, cfg: &DescriptorConfig, extra: &[(&str, String)]) {
    let mut items = vec![
        ("descriptor", format!("{}x{}x{}", cfg.grid_h, cfg.grid_w, 2 * cfg.channels)),
        ("pano", format!("{}x{}", cfg.pano_h, cfg.pano_w)),
        ("px_per_meter", cfg.px_per_meter.to_string()),
        ("cam_height", cfg.cam_height.to_string()),
    ];
    items.extend(extra.iter().cloned());
    echo(cmd, &items);
}

fn cmd_db_build(a: &DbBuildArgs) -> CliResult<()> {
    let cfg = desc_config(&a.desc)?;
    echo_desc("db-build", &cfg, &[("data", a.data.display().to_string())]);
    let db = eval::build_db_from_dir(&a.data, &cfg)?;
    eval::save_db(&db, &a.out)?;
    eprintln!("stored {} references", db.len());
    Ok(())
}

fn check_db(db: &DescriptorDb, cfg: &DescriptorConfig) -> CliResult<()> {
    if db.shape() != (cfg.grid_h, cfg.grid_w, 2 * cfg.channels) {
        return Err(Failure {
            code: 4,
            message: format!("database descriptors {:?} do not match the configured shape", db.shape()),
        });
    }
    Ok(())
}

fn cmd_locate_coarse(a: &CoarseArgs, seed: u64) -> CliResult<()> {
    let cfg = desc_config(&a.desc)?;
    if a.top_k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    echo_desc(
        "locate-coarse",
        &cfg,
        &[
            ("fov", a.fov.to_string()),
            ("top_k", a.top_k.to_string()),
            ("ties", if a.random_ties { format!("seeded({seed})") } else { "lowest".into() }),
        ],
    );
    let db = eval::load_db(&a.db)?;
    check_db(&db, &cfg)?;
    let tie = if a.random_ties { TieBreak::Seeded(seed) } else { TieBreak::Lowest };
    let queries = eval::load_queries(&a.data, a.fov)?;
    if queries.is_empty() {
        return Err(usage(format!("the manifest lists no queries for fov {}", a.fov)));
    }
    let results = eval::coarse_queries(&db, &queries, &cfg, a.fov, tie)?;
    let mut s = String::from("query_id,rank,ref_id,shift,azimuth_deg,similarity\n");
    for r in &results {
        for (i, m) in r.ranked.iter().take(a.top_k).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.9}",
                r.query_id,
                i + 1,
                m.ref_id,
                m.best_shift,
                m.azimuth_deg,
                m.similarity
            );
        }
    }
    write_text(&a.out, &s)
}

fn search_config(a: &FineArgs, sat: &Image) -> CliResult<SearchConfig> {
    check_positive("mpp", a.mpp)?;
    let proj = proj_params(sat, &a.pano, &a.proj)?;
    let mut cfg = if a.reduced {
        SearchConfig::reduced(proj)
    } else {
        SearchConfig {
            region_half: a.region_half,
            grid_step: a.grid_step,
            n_orient: a.orientations,
            ..SearchConfig::full(proj)
        }
    };
    cfg.inclusive = a.inclusive;
    cfg.fov_deg = a.fov;
    cfg.meters_per_pixel = a.mpp;
    Ok(cfg)
}

fn fine_row(id: &str, r: &FineResult, origin: (f64, f64)) -> String {
    format!(
        "{id},{},{},{:.6},{:.6},{:.6},{:.9}\n",
        r.offset.0,
        r.offset.1,
        origin.0 + r.offset_m.0,
        origin.1 - r.offset_m.1,
        r.azimuth_deg,
        r.score
    )
}

const FINE_HEADER: &str = "query_id,du_px,dv_px,x_m,y_m,azimuth_deg,ssim\n";

fn read_rank1(path: &Path) -> CliResult<HashMap<u64, u64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |line: usize| Failure {
        code: 4,
        message: format!("{}: malformed ranking at line {line}", path.display()),
    };
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 1));
        }
        if f[1] == "1" {
            let q = f[0].parse().map_err(|_| bad(i + 1))?;
            let r = f[2].parse().map_err(|_| bad(i + 1))?;
            out.insert(q, r);
        }
    }
    Ok(out)
}

fn cmd_locate_fine(a: &FineArgs) -> CliResult<()> {
    match (&a.sat, &a.query, &a.data) {
        (Some(sat_path), Some(query_path), None) => {
            let sat = load_png(sat_path)?;
            let query = load_png(query_path)?;
            let cfg = search_config(a, &sat)?;
            echo_fine(&cfg);
            let r = fine_localize(&sat, &query, &cfg)?;
            let mut s = String::from(FINE_HEADER);
            s.push_str(&fine_row("0", &r, (0.0, 0.0)));
            write_text(&a.out, &s)?;
            if let Some(h) = &a.heatmap {
                save_png(&r.heatmap(), h)?;
            }
            Ok(())
        }
        (None, None, Some(root)) => {
            let refs: HashMap<u64, (f64, f64)> = synth::read_references(root)?
                .into_iter()
                .map(|r| (r.id, (r.x_m, r.y_m)))
                .collect();
            let rank1 = a.ranked.as_deref().map(read_rank1).transpose()?;
            let rows: Vec<_> = synth::read_manifest(root)?
                .into_iter()
                .filter(|m| m.fov == a.fov)
                .take(a.limit.unwrap_or(usize::MAX))
                .collect();
            let mut s = String::from(FINE_HEADER);
            let mut echoed = false;
            for m in rows {
                let ref_id = match &rank1 {
                    Some(r1) => *r1
                        .get(&m.id)
                        .ok_or_else(|| usage(format!("query {} missing from the ranking", m.id)))?,
                    None => m.id,
                };
                let sat = load_png(synth::sat_path(root, ref_id))?;
                let query = load_png(synth::pano_path(root, m.id, a.fov))?;
                let cfg = search_config(a, &sat)?;
                if !echoed {
                    echo_fine(&cfg);
                    echoed = true;
                }
                let origin = *refs
                    .get(&ref_id)
                    .ok_or_else(|| usage(format!("reference {ref_id} has no geotag")))?;
                let r = fine_localize(&sat, &query, &cfg)?;
                s.push_str(&fine_row(&m.id.to_string(), &r, origin));
            }
            write_text(&a.out, &s)
        }
        _ => Err(usage("locate-fine needs either --sat and --query, or --data")),
    }
}

fn echo_fine(cfg: &SearchConfig) {
    let side = cfg.axis_offsets().len();
    echo(
        "locate-fine",
        &[
            ("grid", format!("{side}x{side} (half {}, step {}, inclusive {})", cfg.region_half, cfg.grid_step, cfg.inclusive)),
            ("orientations", cfg.n_orient.to_string()),
            ("candidates", cfg.candidate_count().to_string()),
            ("fov", cfg.fov_deg.to_string()),
            ("mpp", cfg.meters_per_pixel.to_string()),
            ("pano", format!("{}x{}", cfg.proj.target_h, cfg.proj.target_w)),
        ],
    );
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = desc_config(&a.desc)?;
    echo_desc(
        "eval",
        &cfg,
        &[
            ("fovs", format!("{:?}", a.fovs)),
            ("radius_m", a.radius.to_string()),
            ("orientation_tolerance", format!("{} x fov", eval::ORIENTATION_TOLERANCE)),
        ],
    );
    let db = eval::load_db(&a.db)?;
    check_db(&db, &cfg)?;
    let geotags = db.geotags();
    let mut reports = Vec::new();
    for &fov in &a.fovs {
        let queries = eval::load_queries(&a.data, fov)?;
        let results = eval::coarse_queries(&db, &queries, &cfg, fov, TieBreak::Lowest)?;
        reports.push(MetricsReport::compute(&results, &geotags, fov, a.radius)?);
    }
    print!("{}", MetricsReport::to_table(&reports));
    if let Some(path) = &a.csv {
        write_text(path, &MetricsReport::to_csv(&reports))?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> CliResult<()> {
    echo(
        "bench",
        &[
            ("n", a.n_refs.to_string()),
            ("shape", format!("{}x{}x{}", a.h, a.w, a.c)),
            ("reps", a.reps.to_string()),
        ],
    );
    let report = eval::bench_correlation(a.n_refs, a.h, a.w, a.c, a.reps, seed)?;
    print!("{report}");
    if let Some(out) = &a.out {
        write_text(out, &report.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| usage(format!("--threads: {e}")))?;
    match &cli.cmd {
        Command::Polar(a) => cmd_polar(a),
        Command::Project(a) => cmd_project(a),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::DbBuild(a) => cmd_db_build(a),
        Command::LocateCoarse(a) => cmd_locate_coarse(a, cli.seed),
        Command::LocateFine(a) => cmd_locate_fine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
