use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::coverage::spatial_coverage;
use super::image::{format_labels, parse_labels};
use super::mosaic::{brightness_jitter, mosaic};
use super::{AugmentConfig, AugmentError, AugmentMode, CollationMode, LabeledBox, LabeledImage, Rgb8Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Coverage,
    Mosaic,
    Brightness,
    MultiObject,
}

impl VariantKind {
    fn name(self) -> &'static str {
        match self {
            VariantKind::Coverage => "coverage",
            VariantKind::Mosaic => "mosaic",
            VariantKind::Brightness => "brightness",
            VariantKind::MultiObject => "multi_object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub output: String,
    pub kind: VariantKind,
    pub sources: Vec<String>,
    pub seed: u64,
    /// ChaCha stream of the output's generator.
    pub stream: u64,
    pub objects: usize,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub source: String,
    pub kind: Option<VariantKind>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub config: Option<AugmentConfig>,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone)]
pub struct AugmentOutput {
    pub images: Vec<LabeledImage>,
    pub manifest: Manifest,
}

struct Job {
    source: usize,
    kind: VariantKind,
    stream: u64,
    /// Object count for multi-object composites.
    count: usize,
}

fn kinds(mode: AugmentMode) -> Vec<VariantKind> {
    match mode {
        AugmentMode::Coverage => vec![VariantKind::Coverage],
        AugmentMode::Mosaic => vec![VariantKind::Mosaic],
        AugmentMode::Brightness => vec![VariantKind::Brightness],
        AugmentMode::MultiObject => vec![VariantKind::MultiObject],
        AugmentMode::All => vec![VariantKind::Coverage, VariantKind::Mosaic, VariantKind::Brightness, VariantKind::MultiObject],
    }
}

fn plan_jobs(n_sources: usize, cfg: &AugmentConfig) -> Vec<Job> {
    let ks = kinds(cfg.mode);
    let mut multi = 0usize;
    let mut jobs = Vec::with_capacity(n_sources * cfg.multiplier);
    for source in 0..n_sources {
        for j in 0..cfg.multiplier {
            let stream = (source * cfg.multiplier + j) as u64;
            let kind = ks[stream as usize % ks.len()];
            let count = if kind == VariantKind::MultiObject {
                multi += 1;
                (multi - 1) % (cfg.max_objects + 1)
            } else {
                0
            };
            jobs.push(Job { source, kind, stream, count });
        }
    }
    jobs
}

fn boxes_intersect(a: &LabeledBox, b: &LabeledBox) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h
}

/// `count` object patches from the corpus pasted without overlap on a background.
fn multi_object(
    corpus: &[LabeledImage],
    objects: &[(usize, LabeledBox)],
    pool: &[Rgb8Image],
    source: &LabeledImage,
    count: usize,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LabeledImage, serde_json::Value), AugmentError> {
    let s = cfg.target_size;
    let (mut canvas, background) = if pool.is_empty() {
        (Rgb8Image::filled(s, s, source.image.mean_color()), json!({"fill": "mean_color"}))
    } else {
        let k = rng.random_range(0..pool.len());
        let bg = &pool[k];
        let (ox, oy) = (rng.random_range(0..bg.width()), rng.random_range(0..bg.height()));
        let img = Rgb8Image::from_fn(s, s, |x, y| bg.pixel((ox + x) % bg.width(), (oy + y) % bg.height()));
        (img, json!({"pool": k, "offset": [ox, oy]}))
    };
    if count > 0 && objects.is_empty() {
        return Err(AugmentError::InvalidConfig("corpus holds no labeled objects to paste".into()));
    }
    let mut placed: Vec<LabeledBox> = Vec::with_capacity(count);
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        let (src, b) = objects[rng.random_range(0..objects.len())];
        if b.w as usize > s || b.h as usize > s {
            return Err(AugmentError::ObjectTooLarge { width: b.w, height: b.h, target: s });
        }
        let mut spot = None;
        for _ in 0..1000 {
            let x = rng.random_range(0..=(s - b.w as usize)) as u32;
            let y = rng.random_range(0..=(s - b.h as usize)) as u32;
            let cand = LabeledBox { x, y, ..b };
            if !placed.iter().any(|p| boxes_intersect(p, &cand)) {
                spot = Some(cand);
                break;
            }
        }
        let cand = spot.ok_or_else(|| AugmentError::InvalidConfig(format!("no free position for a {}x{} object", b.w, b.h)))?;
        let patch = corpus[src].image.crop(b.x as usize, b.y as usize, b.w as usize, b.h as usize);
        canvas.blit(&patch, cand.x as usize, cand.y as usize);
        picks.push(json!({"source": corpus[src].id, "box": [b.x, b.y, b.w, b.h], "at": [cand.x, cand.y]}));
        placed.push(cand);
    }
    let detail = json!({"background": background, "objects": picks});
    Ok((LabeledImage { id: source.id.clone(), image: canvas, boxes: placed }, detail))
}

fn run_job(
    job: &Job,
    corpus: &[LabeledImage],
    objects: &[(usize, LabeledBox)],
    pool: &[Rgb8Image],
    cfg: &AugmentConfig,
) -> Result<(LabeledImage, ManifestEntry), AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(job.stream);
    let src = &corpus[job.source];
    let mut sources = vec![src.id.clone()];
    let (mut image, detail) = match job.kind {
        VariantKind::Coverage | VariantKind::Brightness => {
            let out = spatial_coverage(src, cfg, pool, &mut rng)?;
            let mut detail = json!({"window": [out.window.0, out.window.1], "chosen": out.chosen, "neighbours": out.neighbours});
            let mut img = out.image;
            if job.kind == VariantKind::Brightness {
                let delta = rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1);
                img.image = brightness_jitter(&img.image, delta);
                detail["delta"] = json!(delta);
            }
            (img, detail)
        }
        VariantKind::Mosaic => {
            let others: Vec<usize> = (0..3).map(|_| rng.random_range(0..corpus.len())).collect();
            let mut picks: Vec<&LabeledImage> = vec![src];
            picks.extend(others.iter().map(|&i| &corpus[i]));
            sources.extend(others.iter().map(|&i| corpus[i].id.clone()));
            let img = mosaic(&picks, cfg, &mut rng)?;
            (img, json!({"cells": sources}))
        }
        VariantKind::MultiObject => multi_object(corpus, objects, pool, src, job.count, cfg, &mut rng)?,
    };
    image.id = format!("{:06}_{}", job.stream, job.kind.name());
    let entry = ManifestEntry {
        output: image.id.clone(),
        kind: job.kind,
        sources,
        seed: cfg.seed,
        stream: job.stream,
        objects: image.boxes.len(),
        detail,
    };
    Ok((image, entry))
}

/// Emits `multiplier` variants per source, cycling through the enabled kinds.
///
/// The background pool is `backgrounds` followed by every unlabeled corpus
/// image. Each output draws from its own generator stream, so results do not
/// depend on scheduling; failures are recorded per output in `skipped`.
pub fn augment_corpus(corpus: &[LabeledImage], backgrounds: &[Rgb8Image], cfg: &AugmentConfig) -> Result<AugmentOutput, AugmentError> {
    cfg.validate()?;
    let mut pool: Vec<Rgb8Image> = backgrounds.to_vec();
    pool.extend(corpus.iter().filter(|i| i.boxes.is_empty()).map(|i| i.image.clone()));
    let jobs = plan_jobs(corpus.len(), cfg);
    let needs_pool = jobs.iter().any(|j| matches!(j.kind, VariantKind::Coverage | VariantKind::Brightness));
    if needs_pool && cfg.collation == CollationMode::Background && pool.is_empty() {
        return Err(AugmentError::EmptyBackgroundPool);
    }
    let objects: Vec<(usize, LabeledBox)> =
        corpus.iter().enumerate().flat_map(|(i, img)| img.boxes.iter().map(move |b| (i, *b))).collect();
    let results: Vec<_> = jobs.par_iter().map(|j| run_job(j, corpus, &objects, &pool, cfg)).collect();
    let mut out = AugmentOutput { images: Vec::new(), manifest: Manifest { config: Some(cfg.clone()), ..Manifest::default() } };
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok((img, entry)) => {
                out.images.push(img);
                out.manifest.entries.push(entry);
            }
            Err(e) => out.manifest.skipped.push(Skipped {
                source: corpus[job.source].id.clone(),
                kind: Some(job.kind),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, AugmentError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AugmentError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "bmp" | "png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads `*.bmp` / `*.png` with optional `*.txt` label sidecars, in file-name order.
/// Unreadable files are reported in the second list and skipped.
pub fn read_corpus(dir: &Path) -> Result<(Vec<LabeledImage>, Vec<Skipped>), AugmentError> {
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in image_files(dir)? {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let load = || -> Result<LabeledImage, AugmentError> {
            let image = Rgb8Image::load(&path)?;
            let sidecar = path.with_extension("txt");
            let boxes = if sidecar.exists() {
                let text = fs::read_to_string(&sidecar).map_err(|e| AugmentError::Io(format!("{}: {e}", sidecar.display())))?;
                parse_labels(&text)?
            } else {
                Vec::new()
            };
            LabeledImage::new(id.clone(), image, boxes)
        };
        match load() {
            Ok(img) => images.push(img),
            Err(e) => skipped.push(Skipped { source: path.display().to_string(), kind: None, reason: e.to_string() }),
        }
    }
    Ok((images, skipped))
}

pub fn read_backgrounds(dir: &Path) -> Result<Vec<Rgb8Image>, AugmentError> {
    image_files(dir)?.iter().map(|p| Rgb8Image::load(p)).collect()
}

/// Writes `<id>.<ext>` plus `<id>.txt` per image and `manifest.json`.
pub fn write_corpus(dir: &Path, images: &[LabeledImage], manifest: &Manifest, ext: &str) -> Result<(), AugmentError> {
    fs::create_dir_all(dir).map_err(|e| AugmentError::Io(format!("{}: {e}", dir.display())))?;
    images.par_iter().try_for_each(|img| {
        img.image.save(&dir.join(format!("{}.{ext}", img.id)))?;
        fs::write(dir.join(format!("{}.txt", img.id)), format_labels(&img.boxes)).map_err(|e| AugmentError::Io(e.to_string()))
    })?;
    let text = serde_json::to_string_pretty(manifest).map_err(|e| AugmentError::Io(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text).map_err(|e| AugmentError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<LabeledImage> {
        (0..n)
            .map(|i| {
                let img = Rgb8Image::from_fn(480, 360, |x, y| [(x + i) as u8, y as u8, (i * 20) as u8]);
                let boxes = if i % 3 == 2 { vec![] } else { vec![LabeledBox::new(i % 2, 50 + 10 * i as u32, 40, 16, 12)] };
                LabeledImage::new(format!("src{i}"), img, boxes).unwrap()
            })
            .collect()
    }

    #[test]
    fn multiplier_and_determinism() {
        let c = corpus(10);
        let cfg = AugmentConfig { seed: 9, ..AugmentConfig::default() };
        let a = augment_corpus(&c, &[], &cfg).unwrap();
        assert!(a.manifest.skipped.is_empty(), "{:?}", a.manifest.skipped);
        assert_eq!(a.images.len(), 30);
        let b = augment_corpus(&c, &[], &cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.manifest, b.manifest);
        for img in &a.images {
            assert!(img.boxes.iter().all(|bx| bx.inside(img.image.width(), img.image.height())));
        }
        let counts: Vec<usize> = a.manifest.entries.iter().filter(|e| e.kind == VariantKind::MultiObject).map(|e| e.objects).collect();
        assert_eq!(&counts[..5], &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_corpus() {
        let out = augment_corpus(&[], &[], &AugmentConfig::default()).unwrap();
        assert!(out.images.is_empty() && out.manifest.entries.is_empty() && out.manifest.skipped.is_empty());
    }

    #[test]
    fn missing_pool_is_an_error() {
        let c: Vec<LabeledImage> = corpus(2);
        assert!(matches!(augment_corpus(&c, &[], &AugmentConfig::default()), Err(AugmentError::EmptyBackgroundPool)));
        let rep = AugmentConfig { collation: CollationMode::Replicate, ..AugmentConfig::default() };
        assert_eq!(augment_corpus(&c, &[], &rep).unwrap().images.len(), 6);
    }

    #[test]
    fn disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(3);
        let cfg = AugmentConfig { multiplier: 2, ..AugmentConfig::default() };
        let out = augment_corpus(&c, &[], &cfg).unwrap();
        write_corpus(dir.path(), &out.images, &out.manifest, "bmp").unwrap();
        let (back, skipped) = read_corpus(dir.path()).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(back, out.images);
        fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
        let (_, skipped) = read_corpus(dir.path()).unwrap();
        assert_eq!(skipped.len(), 1);
    }
}
