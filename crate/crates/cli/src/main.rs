//! `tiledet` command line. Machine-readable results go to stdout or to the
//! files named by flags; progress and errors go to stderr.
//!
//! Exit codes: 0 success, 1 compliance check failed, 2 configuration or
//! usage error, 3 model inconsistency, 4 I/O failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use tiledet::augment::{
    augment_corpus, mosaic, read_backgrounds, read_corpus, write_corpus, AugmentConfig, AugmentMode, CollationMode,
    LabeledImage,
};
use tiledet::bench::{compare, run_bench, BenchReport, ReferenceNote};
use tiledet::compliance::{check_corpus, render_heat_map, render_size_histogram, OddConstraints, Verdict};
use tiledet::kernels::{footprint, gemm_blocked, run_graph, GemmBlockParams, GemmConfig, GemmShape, Matrix};
use tiledet::model::{parse_cfg, serialize_weights, write_cfg};
use tiledet::pipeline::{self, detect_frame, load_model, PipelineError, RunConfig};
use tiledet::tensor::{ElementKind, Tensor};
use tiledet::tiling::{make_plan_with, optimal_areas, slice_frame, verify_object_coverage, Area, AreaProfile, DEFAULT_MARGIN};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (git ",
    env!("TILEDET_GIT_HASH"),
    ", ",
    env!("TILEDET_PROFILE"),
    " build for ",
    env!("TILEDET_TARGET"),
    ")"
);

#[derive(Parser)]
#[command(name = "tiledet", version = VERSION, about = "Tiled object detection for high-resolution frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile layout, optimal areas and object-coverage verdict for a frame size.
    PlanTiles(PlanTilesArgs),
    /// Augment a labelled corpus (spatial coverage, mosaic, brightness, multi-object).
    Augment(AugmentArgs),
    /// Build one 2x2 mosaic from four labelled images.
    Mosaic(MosaicArgs),
    /// Check a labelled corpus against ODD constraints.
    CheckOdd(CheckOddArgs),
    /// Parse a cfg (and optionally bind weights) and report shapes and footprint.
    ParseModel(ParseModelArgs),
    /// Detect objects in frames: tiling, inference, decode and merge.
    Run(RunArgs),
    /// Time one GEMM shape with a given blocking and numeric format.
    BenchGemm(BenchGemmArgs),
    /// Time a model on one tile and on a whole tiled frame.
    BenchModel(BenchModelArgs),
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const CONFIG: u8 = 2;
const MODEL: u8 = 3;
const IO: u8 = 4;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string()).code(IO)?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display())).code(CONFIG)
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes") + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| p.display().to_string()).code(IO),
        None => std::io::stdout().write_all(text.as_bytes()).context("stdout").code(IO),
    }
}

fn parse_wxh(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(w)?, p(h)?))
}

fn parse_reference(s: &str) -> Result<ReferenceNote, String> {
    let (label, ms) = s.split_once('=').ok_or_else(|| format!("expected LABEL=MS, got `{s}`"))?;
    let ms = ms.parse::<f64>().map_err(|e| format!("`{ms}`: {e}"))?;
    Ok(ReferenceNote { label: label.to_string(), mean_ms: Some(ms), owcet_ms: None })
}

// ---- plan-tiles

#[derive(Args)]
struct PlanTilesArgs {
    /// Frame size as WxH.
    #[arg(long, value_parser = parse_wxh)]
    frame: (usize, usize),
    #[arg(long, default_value = "a3")]
    profile: Area,
    /// Border excluded from a tile's optimal area (px).
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: usize,
    /// Object side to verify coverage for (defaults to the profile's largest object).
    #[arg(long)]
    object_size: Option<usize>,
    /// Override the profile's tile side.
    #[arg(long)]
    tile: Option<usize>,
    /// Override the profile's minimum overlap ratio.
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn plan_tiles(a: PlanTilesArgs) -> CmdResult {
    let p = AreaProfile::for_area(a.profile);
    let tile = a.tile.unwrap_or(p.tile_size);
    let overlap = a.overlap.unwrap_or(p.min_overlap);
    let (w, h) = a.frame;
    let plan = make_plan_with(tile, overlap, p.input_size, a.margin, w, h).code(CONFIG)?;
    let areas = optimal_areas(&plan, a.margin).code(CONFIG)?;
    let s = a.object_size.unwrap_or(p.max_object_size);
    let coverage = verify_object_coverage(&plan, a.margin, s).code(CONFIG)?;
    let (ox, oy) = plan.min_overlap_px();
    let ratio = |px: Option<usize>| px.map(|v| v as f64 / tile as f64);
    let tiles: Vec<_> = (0..plan.tile_count()).map(|i| plan.tile_rect(i)).collect();
    emit(
        &json!({
            "frame": {"width": w, "height": h},
            "profile": p.area,
            "tile_size": tile,
            "min_overlap": overlap,
            "input_size": plan.input_size,
            "resize_factor": plan.resize_factor,
            "nominal_resize_percent": p.nominal_resize_percent,
            "tile_count": tiles.len(),
            "tiles": tiles,
            "overlap_px": {"x": ox, "y": oy},
            "overlap_ratio": {"x": ratio(ox), "y": ratio(oy)},
            "margin": a.margin,
            "optimal_areas": areas,
            "object_size": s,
            "coverage": coverage,
        }),
        a.output.as_deref(),
    )
}

// ---- augment

#[derive(Args)]
struct AugmentArgs {
    /// Directory of images with YOLO-style `<stem>.txt` labels.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Extra object-free images for collation.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    /// JSON file with augmentation settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    multiplier: Option<usize>,
    #[arg(long)]
    mode: Option<AugmentMode>,
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long)]
    cell_size: Option<usize>,
    #[arg(long)]
    collation: Option<CollationMode>,
    /// Only accept 1920x1080 sources.
    #[arg(long)]
    strict: bool,
    /// Output raster format.
    #[arg(long, default_value = "bmp", value_parser = ["bmp", "png"])]
    format: String,
}

fn augment(a: AugmentArgs) -> CmdResult {
    let mut cfg: AugmentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => AugmentConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.multiplier {
        cfg.multiplier = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.target_size {
        cfg.target_size = v;
    }
    if let Some(v) = a.cell_size {
        cfg.cell_size = v;
    }
    if let Some(v) = a.collation {
        cfg.collation = v;
    }
    if a.strict {
        cfg.relaxed = false;
    }
    cfg.validate().code(CONFIG)?;
    let (corpus, skipped) = read_corpus(&a.input).code(IO)?;
    for s in &skipped {
        eprintln!("skipped {}: {}", s.source, s.reason);
    }
    let backgrounds = match &a.backgrounds {
        Some(d) => read_backgrounds(d).code(IO)?,
        None => Vec::new(),
    };
    let mut out = augment_corpus(&corpus, &backgrounds, &cfg).code(CONFIG)?;
    out.manifest.skipped.extend(skipped);
    write_corpus(&a.out, &out.images, &out.manifest, &a.format).code(IO)?;
    eprintln!("wrote {} images to {}", out.images.len(), a.out.display());
    Ok(())
}

// ---- mosaic

#[derive(Args)]
struct MosaicArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image path; labels go next to it as `<stem>.txt`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ids (file stems) of the four samples; by default the first four labelled images.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    #[arg(long, default_value_t = 320)]
    cell_size: usize,
    #[arg(long, default_value_t = -40, allow_hyphen_values = true)]
    brightness_min: i32,
    #[arg(long, default_value_t = 40, allow_hyphen_values = true)]
    brightness_max: i32,
}

fn mosaic_cmd(a: MosaicArgs) -> CmdResult {
    let cfg = AugmentConfig {
        seed: a.seed,
        cell_size: a.cell_size,
        brightness_range: (a.brightness_min, a.brightness_max),
        ..AugmentConfig::default()
    };
    cfg.validate().code(CONFIG)?;
    let (corpus, _) = read_corpus(&a.input).code(IO)?;
    let samples: Vec<&LabeledImage> = if a.ids.is_empty() {
        corpus.iter().filter(|i| !i.boxes.is_empty()).take(4).collect()
    } else {
        a.ids
            .iter()
            .map(|id| corpus.iter().find(|i| &i.id == id).ok_or_else(|| anyhow!("no image with id `{id}`")))
            .collect::<Result<_, _>>()
            .code(CONFIG)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let m = mosaic(&samples, &cfg, &mut rng).code(CONFIG)?;
    m.image.save(&a.out).code(IO)?;
    let labels = a.out.with_extension("txt");
    fs::write(&labels, tiledet::augment::format_labels(&m.boxes)).with_context(|| labels.display().to_string()).code(IO)?;
    emit(&json!({"sources": samples.iter().map(|s| &s.id).collect::<Vec<_>>(), "seed": a.seed, "boxes": m.boxes}), None)
}

// ---- check-odd

#[derive(Args)]
struct CheckOddArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON constraint set; omitted constraints use their defaults.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Report destination (stdout by default).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Render the object-centre heat map to this image.
    #[arg(long)]
    heat_map: Option<PathBuf>,
    /// Render the object-size histogram to this image.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

fn check_odd(a: CheckOddArgs) -> CmdResult {
    let constraints: OddConstraints = match &a.constraints {
        Some(p) => read_json(p)?,
        None => OddConstraints::default(),
    };
    constraints.validate().map_err(|e| anyhow!(e)).code(CONFIG)?;
    let (corpus, skipped) = read_corpus(&a.input).code(IO)?;
    for s in &skipped {
        eprintln!("skipped {}: {}", s.source, s.reason);
    }
    let report = check_corpus(&corpus, &constraints);
    if let Some(p) = &a.heat_map {
        render_heat_map(&report.position_heat_map, 32).save(p).code(IO)?;
    }
    if let Some(p) = &a.histogram {
        render_size_histogram(&report.size_histogram, 8, 200).save(p).code(IO)?;
    }
    emit(&serde_json::to_value(&report).expect("report serializes"), a.output.as_deref())?;
    eprintln!("verdict: {:?}", report.verdict);
    if report.verdict == Verdict::Fail {
        return Err(Failure { code: 1, error: anyhow!("corpus violates the ODD constraints") });
    }
    Ok(())
}

// ---- parse-model

#[derive(Args)]
struct ParseModelArgs {
    #[arg(long)]
    cfg: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Storage format used for the byte counts of the footprint.
    #[arg(long, default_value = "fp32")]
    format: ElementKind,
    /// Write the normalized cfg here.
    #[arg(long)]
    write_cfg: Option<PathBuf>,
    /// Re-serialize the bound weights here (needs --weights).
    #[arg(long)]
    write_weights: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_model(a: ParseModelArgs) -> CmdResult {
    let text = fs::read_to_string(&a.cfg).with_context(|| a.cfg.display().to_string()).code(IO)?;
    let mut g = parse_cfg(&text).with_context(|| a.cfg.display().to_string()).code(MODEL)?;
    if let Some(w) = &a.weights {
        let bytes = fs::read(w).with_context(|| w.display().to_string()).code(IO)?;
        g = tiledet::model::bind_weights_bytes(&g, &bytes).with_context(|| w.display().to_string()).code(MODEL)?;
        if let Some(out) = &a.write_weights {
            let header = tiledet::model::WeightsFile::from_bytes(&bytes).code(MODEL)?.header;
            let file = serialize_weights(&g, header).code(MODEL)?;
            fs::write(out, file.to_bytes()).with_context(|| out.display().to_string()).code(IO)?;
        }
    } else if a.write_weights.is_some() {
        return Err(Failure { code: CONFIG, error: anyhow!("--write-weights needs --weights") });
    }
    if let Some(out) = &a.write_cfg {
        fs::write(out, write_cfg(&g)).with_context(|| out.display().to_string()).code(IO)?;
    }
    let fp = footprint(&g, a.format);
    let layers: Vec<_> = g
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            json!({
                "index": i,
                "kind": l.spec.kind_name(),
                "input": l.input.to_string(),
                "output": l.output.to_string(),
                "params": l.param_count(),
                "spec": l.spec,
            })
        })
        .collect();
    emit(
        &json!({
            "input": g.input.to_string(),
            "layers": layers,
            "param_count": g.param_count(),
            "weights_bytes": tiledet::model::expected_weights_len(&g),
            "bound": g.is_bound(),
            "footprint": fp,
        }),
        a.output.as_deref(),
    )
}

// ---- run

/// Keys accepted by `run --config`; every key is optional.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunFile {
    cfg: Option<PathBuf>,
    weights: Option<PathBuf>,
    profile: Option<Area>,
    format: Option<ElementKind>,
    conf: Option<f32>,
    iou: Option<f32>,
    frames: Option<Vec<PathBuf>>,
    output: Option<PathBuf>,
    timings: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cfg: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Area>,
    #[arg(long)]
    format: Option<ElementKind>,
    /// Confidence threshold.
    #[arg(long)]
    conf: Option<f32>,
    /// IoU threshold of the cross-tile merge.
    #[arg(long)]
    iou: Option<f32>,
    /// Input frames (images, or `.tensor` raw dumps).
    #[arg(long = "frame", num_args = 1..)]
    frames: Vec<PathBuf>,
    /// Detections as JSON lines: a file for one frame, a directory for several; stdout by default.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Timing summary JSON; stderr by default.
    #[arg(long)]
    timings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tile inference threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve_run(a: RunArgs) -> Result<(RunConfig, Option<PathBuf>), Failure> {
    let file: RunFile = match &a.config {
        Some(p) => read_json(p)?,
        None => RunFile::default(),
    };
    let need = |v: Option<PathBuf>, name: &str| v.ok_or_else(|| anyhow!("--{name} is required")).code(CONFIG);
    let frames = if a.frames.is_empty() { file.frames.unwrap_or_default() } else { a.frames };
    let mut cfg = RunConfig::new(need(a.cfg.or(file.cfg), "cfg")?, need(a.weights.or(file.weights), "weights")?, frames);
    if let Some(area) = a.profile.or(file.profile) {
        cfg.profile = AreaProfile::for_area(area);
    }
    cfg.format = a.format.or(file.format).unwrap_or(cfg.format);
    cfg.confidence_threshold = a.conf.or(file.conf).unwrap_or(cfg.confidence_threshold);
    cfg.iou_threshold = a.iou.or(file.iou).unwrap_or(cfg.iou_threshold);
    cfg.output = a.output.or(file.output);
    cfg.seed = a.seed.or(file.seed).unwrap_or(0);
    cfg.workers = a
        .workers
        .or(file.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((cfg, a.timings.or(file.timings)))
}

fn run(a: RunArgs) -> CmdResult {
    let (cfg, timings) = resolve_run(a)?;
    let out = pipeline::run(&cfg).map_err(|e: PipelineError| Failure { code: e.exit_code() as u8, error: e.into() })?;
    match &cfg.output {
        Some(p) => {
            pipeline::write_detections(&out, p).code(IO)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for f in &out.frames {
                stdout.write_all(f.json_lines().as_bytes()).context("stdout").code(IO)?;
            }
        }
    }
    let summary = serde_json::to_string(&out.summary).expect("summary serializes");
    match timings {
        Some(p) => fs::write(&p, summary + "\n").with_context(|| p.display().to_string()).code(IO)?,
        None => eprintln!("{summary}"),
    }
    Ok(())
}

// ---- bench-gemm

#[derive(Args)]
struct BenchGemmArgs {
    /// GEMM shape MxNxK.
    #[arg(long)]
    shape: GemmShape,
    /// Blocking: c1, c2, naive, or BM,BN,BK,TM. Defaults to the regime rule's choice.
    #[arg(long)]
    params: Option<GemmBlockParams>,
    #[arg(long, default_value = "fp32")]
    format: ElementKind,
    #[arg(long, default_value_t = 3)]
    warmups: usize,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Seed of the synthetic operands.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also time this blocking as a baseline and report the relative deltas against it.
    #[arg(long)]
    compare: Option<GemmBlockParams>,
    /// Per-sample CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Externally measured reference kept in the report, as LABEL=MS.
    #[arg(long, value_parser = parse_reference)]
    reference: Option<ReferenceNote>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Deterministic operand in [-1, 1) from a 64-bit mix of (seed, salt, i, j).
fn operand(rows: usize, cols: usize, seed: u64, salt: u64) -> anyhow::Result<Matrix> {
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((i as u64) << 32 | j as u64);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })?)
}

fn write_csv(report: &BenchReport, path: &Path, append: bool) -> CmdResult {
    let mut buf = Vec::new();
    report.write_csv(&mut buf).code(IO)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    let text = if append { text.lines().skip(1).map(|l| format!("{l}\n")).collect() } else { text };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .with_context(|| path.display().to_string())
        .code(IO)?;
    f.write_all(text.as_bytes()).with_context(|| path.display().to_string()).code(IO)
}

fn bench_gemm(a: BenchGemmArgs) -> CmdResult {
    let GemmShape { m, n, k } = a.shape;
    let lhs = operand(m, k, a.seed, 1).code(CONFIG)?;
    let rhs = operand(k, n, a.seed, 2).code(CONFIG)?;
    let params = a.params.unwrap_or_else(|| tiledet::kernels::select_block_params(a.shape));
    params.validate().code(CONFIG)?;
    // same subject for every blocking so that reports of variants compare cleanly
    let subject = format!("gemm {m}x{n}x{k} {:?}", a.format);
    let time = |p: GemmBlockParams| {
        run_bench(&subject, a.warmups, a.iterations, || gemm_blocked(&lhs, &rhs, p, a.format)).code(CONFIG)
    };
    let mut report = time(params)?;
    if let Some(r) = a.reference.clone() {
        report = report.with_reference(r);
    }
    if let Some(p) = &a.csv {
        write_csv(&report, p, false)?;
    }
    let mut value = json!({"shape": format!("{m}x{n}x{k}"), "params": params, "report": report});
    if let Some(other) = a.compare {
        other.validate().code(CONFIG)?;
        let b = time(other)?;
        if let Some(p) = &a.csv {
            write_csv(&b, p, true)?;
        }
        value["baseline_params"] = json!(other);
        value["baseline"] = json!(b);
        // the compared blocking is the baseline, so a positive delta means the chosen one is faster
        value["comparison"] = json!(compare(&b, &report));
    }
    emit(&value, a.output.as_deref())
}

// ---- bench-model

#[derive(Args)]
struct BenchModelArgs {
    #[arg(long)]
    cfg: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Tiling profile.
    #[arg(long, default_value = "a3")]
    tiles: Area,
    #[arg(long, default_value = "fp32")]
    format: ElementKind,
    /// Synthetic frame size WxH.
    #[arg(long, default_value = "1920x1080", value_parser = parse_wxh)]
    frame: (usize, usize),
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Tile inference threads for the whole-frame measurement.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_parser = parse_reference)]
    reference: Option<ReferenceNote>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn bench_model(a: BenchModelArgs) -> CmdResult {
    let to_failure = |e: PipelineError| Failure { code: e.exit_code() as u8, error: e.into() };
    let g = load_model(&a.cfg, &a.weights).map_err(to_failure)?;
    let profile = AreaProfile::for_area(a.tiles);
    let (w, h) = a.frame;
    let frame = Tensor::from_fn(h, w, g.input.channels, |y, x, c| ((x * 7 + y * 13 + c * 29) % 256) as f32 / 255.0)
        .code(CONFIG)?;
    let plan = pipeline::plan_for(&g, &profile, w, h).map_err(to_failure)?;
    let tiles = slice_frame(&frame, &plan).code(CONFIG)?;
    let gemm = GemmConfig { format: a.format, ..GemmConfig::default() };
    let tile_report =
        run_bench(&format!("tile {:?} {:?}", a.tiles, a.format), a.warmups, a.iterations, || run_graph(&g, &tiles[0], &gemm))
            .code(MODEL)?;
    let frame_report = pipeline::with_workers(a.workers, || {
        run_bench(&format!("frame {:?} {:?}", a.tiles, a.format), a.warmups, a.iterations, || {
            detect_frame(&g, &frame, &profile, &gemm, 0.25, 0.5)
        })
    })
    .map_err(to_failure)?
    .code(MODEL)?;
    let frame_report = match a.reference.clone() {
        Some(r) => frame_report.with_reference(r),
        None => frame_report,
    };
    if let Some(p) = &a.csv {
        write_csv(&tile_report, p, false)?;
        write_csv(&frame_report, p, true)?;
    }
    let fp = footprint(&g, a.format);
    emit(
        &json!({
            "tiles": plan.tile_count(),
            "input_size": plan.input_size,
            "macs_per_tile": fp.total_macs,
            "tile": tile_report,
            "frame": frame_report,
        }),
        a.output.as_deref(),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PlanTiles(a) => plan_tiles(a),
        Command::Augment(a) => augment(a),
        Command::Mosaic(a) => mosaic_cmd(a),
        Command::CheckOdd(a) => check_odd(a),
        Command::ParseModel(a) => parse_model(a),
        Command::Run(a) => run(a),
        Command::BenchGemm(a) => bench_gemm(a),
        Command::BenchModel(a) => bench_model(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
