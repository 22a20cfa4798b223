//! End-to-end frame processing: slice a frame into tiles, run the network on
//! every tile, decode the YOLO heads, map boxes back to the frame and merge.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{merge, to_global, to_json_lines, Detection, DEFAULT_IOU_THRESHOLD};
use crate::kernels::{run_graph, yolo_decode, GemmConfig, KernelError};
use crate::model::{bind_weights_bytes, parse_cfg, ModelGraph};
use crate::tensor::{read_raw, ElementKind, Tensor};
use crate::tiling::{make_plan_with, AreaProfile, TilePlan};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f32 = 0.25;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 model consistency, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Model(_) => 3,
            PipelineError::Io(_) => 4,
        }
    }
}

impl From<KernelError> for PipelineError {
    fn from(e: KernelError) -> Self {
        PipelineError::Model(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cfg: PathBuf,
    pub weights: PathBuf,
    pub profile: AreaProfile,
    pub format: ElementKind,
    pub confidence_threshold: f32,
    pub iou_threshold: f32,
    pub frames: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    /// Recorded in the summary. Inference itself draws no random numbers.
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    pub fn new(cfg: impl Into<PathBuf>, weights: impl Into<PathBuf>, frames: Vec<PathBuf>) -> Self {
        Self {
            cfg: cfg.into(),
            weights: weights.into(),
            profile: AreaProfile::a3(),
            format: ElementKind::F32,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            frames,
            output: None,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, v) in [("confidence", self.confidence_threshold), ("iou", self.iou_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} threshold {v} is outside [0, 1]"));
            }
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.frames.is_empty() {
            return bad("no input frames".into());
        }
        if !(0.0..1.0).contains(&self.profile.min_overlap) || self.profile.tile_size == 0 {
            return bad(format!("invalid tiling profile {:?}", self.profile));
        }
        for p in [&self.cfg, &self.weights].into_iter().chain(&self.frames) {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Wall-clock time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load_ms: f64,
    pub slice_ms: f64,
    pub inference_ms: f64,
    pub decode_ms: f64,
    pub merge_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: PathBuf,
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
    /// Detections before the cross-tile merge.
    pub raw_detections: usize,
    pub detections: Vec<Detection>,
    pub timings: StageTimings,
}

impl FrameResult {
    pub fn json_lines(&self) -> String {
        to_json_lines(&self.detections)
    }
}

/// Timing summary; kept apart from the detection output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: ElementKind,
    pub workers: usize,
    pub seed: u64,
    pub model_load_ms: f64,
    pub frames: Vec<FrameSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: PathBuf,
    pub tiles: usize,
    pub raw_detections: usize,
    pub detections: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<FrameResult>,
    pub summary: RunSummary,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

/// Parses the cfg and binds the weights.
pub fn load_model(cfg: &Path, weights: &Path) -> Result<ModelGraph, PipelineError> {
    let text = String::from_utf8(read(cfg)?).map_err(|e| PipelineError::Model(format!("{}: {e}", cfg.display())))?;
    let g = parse_cfg(&text).map_err(|e| PipelineError::Model(format!("{}: {e}", cfg.display())))?;
    bind_weights_bytes(&g, &read(weights)?).map_err(|e| PipelineError::Model(format!("{}: {e}", weights.display())))
}

/// Loads a frame as an HWC fp32 tensor: images become RGB scaled to [0, 1],
/// `.tensor` files are raw dumps.
pub fn load_frame(path: &Path) -> Result<Tensor, PipelineError> {
    if path.extension().is_some_and(|e| e == "tensor") {
        let bytes = read(path)?;
        return read_raw(bytes.as_slice()).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())));
    }
    let img = image::open(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::from_f32(h, w, 3, data).map_err(|e| PipelineError::Io(e.to_string()))
}

/// Tiling for a frame. The tile size and overlap come from the profile, the
/// resize target from the network input.
pub fn plan_for(model: &ModelGraph, profile: &AreaProfile, width: usize, height: usize) -> Result<TilePlan, PipelineError> {
    let input = model.input;
    if input.height != input.width {
        return Err(PipelineError::Model(format!("network input {input} is not square")));
    }
    make_plan_with(profile.tile_size, profile.min_overlap, input.width, crate::tiling::DEFAULT_MARGIN, width, height)
        .map_err(|e| PipelineError::Config(e.to_string()))
}

/// Detections for one frame, parallel over tiles on the current rayon pool.
/// The result does not depend on the pool size: tiles are decoded in tile
/// order and the merge ranks by a total order.
pub fn detect_frame(
    model: &ModelGraph,
    frame: &Tensor,
    profile: &AreaProfile,
    gemm: &GemmConfig,
    confidence: f32,
    iou: f32,
) -> Result<(TilePlan, Vec<Detection>, usize, StageTimings), PipelineError> {
    let mut t = StageTimings::default();
    let start = Instant::now();
    let (h, w, c) = frame.shape();
    if c != model.input.channels {
        return Err(PipelineError::Model(format!("frame has {c} channels, network expects {}", model.input.channels)));
    }
    let plan = plan_for(model, profile, w, h)?;

    let t0 = Instant::now();
    let tiles = crate::tiling::slice_frame(frame, &plan).map_err(|e| PipelineError::Config(e.to_string()))?;
    t.slice_ms = ms(t0);

    let t0 = Instant::now();
    let outputs = tiles.par_iter().map(|tile| run_graph(model, tile, gemm)).collect::<Result<Vec<_>, _>>()?;
    t.inference_ms = ms(t0);

    let t0 = Instant::now();
    let size = (plan.input_size, plan.input_size);
    let per_tile = outputs
        .par_iter()
        .enumerate()
        .map(|(i, out)| -> Result<Vec<Detection>, PipelineError> {
            let mut ds = Vec::new();
            for (_, spec, feature) in &out.heads {
                for mut d in yolo_decode(feature, spec, size, confidence)? {
                    d.tile = i;
                    ds.push(to_global(&d, &plan).map_err(|e| PipelineError::Model(e.to_string()))?);
                }
            }
            Ok(ds)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<Detection> = per_tile.into_iter().flatten().collect();
    t.decode_ms = ms(t0);

    let t0 = Instant::now();
    let merged = merge(&raw, iou);
    t.merge_ms = ms(t0);
    t.total_ms = ms(start);
    Ok((plan, merged, raw.len(), t))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every frame of `cfg` on a pool of `cfg.workers` threads.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let model = load_model(&cfg.cfg, &cfg.weights)?;
    if !model.is_bound() {
        return Err(PipelineError::Model("network has unbound layers".into()));
    }
    let model_load_ms = ms(t0);
    let gemm = GemmConfig { format: cfg.format, ..GemmConfig::default() };

    let mut frames = Vec::with_capacity(cfg.frames.len());
    for path in &cfg.frames {
        let t0 = Instant::now();
        let frame = load_frame(path)?;
        let load_ms = ms(t0);
        let (plan, detections, raw, mut timings) = with_workers(cfg.workers, || {
            detect_frame(&model, &frame, &cfg.profile, &gemm, cfg.confidence_threshold, cfg.iou_threshold)
        })??;
        timings.load_ms = load_ms;
        timings.total_ms += load_ms;
        frames.push(FrameResult {
            frame: path.clone(),
            width: plan.frame_width,
            height: plan.frame_height,
            tiles: plan.tile_count(),
            raw_detections: raw,
            detections,
            timings,
        });
    }
    let summary = RunSummary {
        format: cfg.format,
        workers: cfg.workers,
        seed: cfg.seed,
        model_load_ms,
        frames: frames
            .iter()
            .map(|f| FrameSummary {
                frame: f.frame.clone(),
                tiles: f.tiles,
                raw_detections: f.raw_detections,
                detections: f.detections.len(),
                timings: f.timings,
            })
            .collect(),
    };
    Ok(RunOutput { frames, summary })
}

/// Writes detections as JSON lines. A single frame goes to `path` itself;
/// several frames go to one `NNNN_<stem>.jsonl` file each inside directory `path`.
pub fn write_detections(out: &RunOutput, path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    if out.frames.len() == 1 {
        std::fs::write(path, out.frames[0].json_lines()).map_err(io)?;
        return Ok(vec![path.to_path_buf()]);
    }
    std::fs::create_dir_all(path).map_err(io)?;
    let mut written = Vec::new();
    for (i, f) in out.frames.iter().enumerate() {
        let stem = f.frame.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let p = path.join(format!("{i:04}_{stem}.jsonl"));
        std::fs::write(&p, f.json_lines()).map_err(io)?;
        written.push(p);
    }
    Ok(written)
}
