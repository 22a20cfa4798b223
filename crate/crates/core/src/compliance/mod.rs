//! Machine-checkable operating-domain constraints on a labeled image corpus,
//! aggregated into a compliance report.

mod render;
mod spectrum;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::augment::LabeledImage;

pub use self::render::{render_heat_map, render_size_histogram};
pub use self::spectrum::low_frequency_fraction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    ObjectSizeRange,
    SizeQuantile,
    PositionUniformity,
    BrightnessRange,
    SpatialFrequency,
    ObjectsPerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub kind: ConstraintKind,
    pub verdict: Verdict,
    pub statistic: Option<f64>,
    pub threshold: Option<f64>,
    pub samples: usize,
    /// Sorted identifiers of offending samples; non-empty on every failure.
    pub offenders: Vec<String>,
    pub note: String,
}

impl ConstraintResult {
    fn indeterminate(kind: ConstraintKind, samples: usize, note: impl Into<String>) -> Self {
        Self { kind, verdict: Verdict::Indeterminate, statistic: None, threshold: None, samples, offenders: vec![], note: note.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeConstraint {
    /// Every object side must lie in this range, px.
    pub outer: (u32, u32),
    /// At least `fraction` of objects must lie in this range, px.
    pub inner: (u32, u32),
    pub fraction: f64,
}

impl Default for SizeConstraint {
    fn default() -> Self {
        Self { outer: (20, 400), inner: (20, 100), fraction: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionConstraint {
    pub grid: usize,
    pub alpha: f64,
}

impl Default for PositionConstraint {
    fn default() -> Self {
        Self { grid: 8, alpha: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrightnessConstraint {
    /// Allowed mean HSV value, in `[0, 1]`.
    pub range: (f64, f64),
}

impl Default for BrightnessConstraint {
    fn default() -> Self {
        Self { range: (0.15, 0.85) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencyConstraint {
    /// Shortest wavelength, px, counted as low frequency.
    pub cutoff_wavelength: f64,
    /// Minimum share of non-DC spectral energy at or above the cutoff wavelength.
    pub min_fraction: f64,
}

impl Default for FrequencyConstraint {
    fn default() -> Self {
        Self { cutoff_wavelength: 20.0, min_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountConstraint {
    pub range: (usize, usize),
}

impl Default for CountConstraint {
    fn default() -> Self {
        Self { range: (0, 4) }
    }
}

/// Constraint set; `None` disables a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OddConstraints {
    pub size: Option<SizeConstraint>,
    pub position: Option<PositionConstraint>,
    pub brightness: Option<BrightnessConstraint>,
    pub spatial_frequency: Option<FrequencyConstraint>,
    pub objects_per_image: Option<CountConstraint>,
}

impl Default for OddConstraints {
    fn default() -> Self {
        Self {
            size: Some(SizeConstraint::default()),
            position: Some(PositionConstraint::default()),
            brightness: Some(BrightnessConstraint::default()),
            spatial_frequency: Some(FrequencyConstraint::default()),
            objects_per_image: Some(CountConstraint::default()),
        }
    }
}

impl OddConstraints {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(s) = &self.size {
            if s.outer.0 > s.outer.1 || s.inner.0 > s.inner.1 || !(0.0..=1.0).contains(&s.fraction) {
                return Err(format!("invalid size constraint {s:?}"));
            }
        }
        if let Some(p) = &self.position {
            if p.grid == 0 || !(p.alpha > 0.0 && p.alpha < 1.0) {
                return Err(format!("invalid position constraint {p:?}"));
            }
        }
        if let Some(b) = &self.brightness {
            if b.range.0 > b.range.1 {
                return Err(format!("empty brightness range {:?}", b.range));
            }
        }
        if let Some(f) = &self.spatial_frequency {
            if !(f.cutoff_wavelength > 0.0) || !(0.0..=1.0).contains(&f.min_fraction) {
                return Err(format!("invalid spatial-frequency constraint {f:?}"));
            }
        }
        if let Some(c) = &self.objects_per_image {
            if c.range.0 > c.range.1 {
                return Err(format!("empty object-count range {:?}", c.range));
            }
        }
        Ok(())
    }
}

fn box_id(img: &LabeledImage, k: usize) -> String {
    format!("{}#{k}", img.id)
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

/// Object size is the longer bounding-box side in pixels.
///
/// Returns the outer-range result and the inner-fraction result.
pub fn check_sizes(corpus: &[LabeledImage], c: &SizeConstraint) -> (ConstraintResult, ConstraintResult) {
    let sizes: Vec<(String, u32)> =
        corpus.iter().flat_map(|img| img.boxes.iter().enumerate().map(move |(k, b)| (box_id(img, k), b.size()))).collect();
    if sizes.is_empty() {
        let why = "corpus holds no labeled objects";
        return (
            ConstraintResult::indeterminate(ConstraintKind::ObjectSizeRange, 0, why),
            ConstraintResult::indeterminate(ConstraintKind::SizeQuantile, 0, why),
        );
    }
    let n = sizes.len();
    let outside = |r: (u32, u32)| -> Vec<String> {
        sorted(sizes.iter().filter(|(_, s)| *s < r.0 || *s > r.1).map(|(id, _)| id.clone()).collect())
    };
    let outer_bad = outside(c.outer);
    let outer = ConstraintResult {
        kind: ConstraintKind::ObjectSizeRange,
        verdict: if outer_bad.is_empty() { Verdict::Pass } else { Verdict::Fail },
        statistic: Some((n - outer_bad.len()) as f64 / n as f64),
        threshold: Some(1.0),
        samples: n,
        offenders: outer_bad,
        note: format!("fraction of objects with longer side in [{}, {}] px", c.outer.0, c.outer.1),
    };
    let inner_bad = outside(c.inner);
    let frac = (n - inner_bad.len()) as f64 / n as f64;
    let pass = frac >= c.fraction;
    let inner = ConstraintResult {
        kind: ConstraintKind::SizeQuantile,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        statistic: Some(frac),
        threshold: Some(c.fraction),
        samples: n,
        offenders: if pass { vec![] } else { inner_bad },
        note: format!("fraction of objects with longer side in [{}, {}] px", c.inner.0, c.inner.1),
    };
    (outer, inner)
}

/// Object-centre counts on a `grid × grid` partition of each image (row-major).
pub fn position_grid(corpus: &[LabeledImage], grid: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; grid]; grid];
    for img in corpus {
        let (w, h) = (img.image.width() as f64, img.image.height() as f64);
        for b in &img.boxes {
            let (cx, cy) = b.center();
            let col = ((cx / w * grid as f64) as usize).min(grid - 1);
            let row = ((cy / h * grid as f64) as usize).min(grid - 1);
            counts[row][col] += 1;
        }
    }
    counts
}

/// Pearson chi-square statistic against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}

/// Upper `alpha` critical value of the chi-square distribution.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64).expect("positive degrees of freedom").inverse_cdf(1.0 - alpha)
}

pub fn check_position_uniformity(corpus: &[LabeledImage], c: &PositionConstraint) -> ConstraintResult {
    let k = c.grid;
    let grid = position_grid(corpus, k);
    let flat: Vec<u64> = grid.iter().flatten().copied().collect();
    let n: u64 = flat.iter().sum();
    let needed = 10 * k * k;
    if (n as usize) < needed || k < 2 {
        return ConstraintResult::indeterminate(
            ConstraintKind::PositionUniformity,
            n as usize,
            format!("{n} object centres, at least {needed} needed for a {k}x{k} grid"),
        );
    }
    let stat = chi_square_uniform(&flat);
    let crit = chi_square_critical(k * k - 1, c.alpha);
    let pass = stat < crit;
    let offenders = if pass {
        vec![]
    } else {
        // objects in the most over-represented cell
        let (hot, _) = flat.iter().enumerate().max_by_key(|&(i, &v)| (v, std::cmp::Reverse(i))).unwrap();
        let mut ids = Vec::new();
        for img in corpus {
            let (w, h) = (img.image.width() as f64, img.image.height() as f64);
            for (j, b) in img.boxes.iter().enumerate() {
                let (cx, cy) = b.center();
                let col = ((cx / w * k as f64) as usize).min(k - 1);
                let row = ((cy / h * k as f64) as usize).min(k - 1);
                if row * k + col == hot {
                    ids.push(box_id(img, j));
                }
            }
        }
        sorted(ids)
    };
    ConstraintResult {
        kind: ConstraintKind::PositionUniformity,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        statistic: Some(stat),
        threshold: Some(crit),
        samples: n as usize,
        offenders,
        note: format!("chi-square over {k}x{k} cells, {} degrees of freedom, alpha {}", k * k - 1, c.alpha),
    }
}

/// Mean over pixels of `max(R, G, B) / 255`.
pub fn mean_value(img: &crate::augment::Rgb8Image) -> f64 {
    let sum: u64 = img.data().chunks_exact(3).map(|p| p[0].max(p[1]).max(p[2]) as u64).sum();
    sum as f64 / (255.0 * (img.width() * img.height()) as f64)
}

pub fn check_brightness(corpus: &[LabeledImage], c: &BrightnessConstraint) -> ConstraintResult {
    if corpus.is_empty() {
        return ConstraintResult::indeterminate(ConstraintKind::BrightnessRange, 0, "empty corpus");
    }
    let values: Vec<(String, f64)> = corpus.par_iter().map(|img| (img.id.clone(), mean_value(&img.image))).collect();
    let bad = sorted(values.iter().filter(|(_, v)| *v < c.range.0 || *v > c.range.1).map(|(id, _)| id.clone()).collect());
    let worst = values
        .iter()
        .map(|(_, v)| if *v < c.range.0 { c.range.0 - v } else if *v > c.range.1 { v - c.range.1 } else { 0.0 })
        .fold(0.0f64, f64::max);
    ConstraintResult {
        kind: ConstraintKind::BrightnessRange,
        verdict: if bad.is_empty() { Verdict::Pass } else { Verdict::Fail },
        statistic: Some(worst),
        threshold: Some(0.0),
        samples: corpus.len(),
        offenders: bad,
        note: format!("mean HSV value per image must lie in [{}, {}]; statistic is the largest excursion", c.range.0, c.range.1),
    }
}

pub fn check_spatial_frequency(corpus: &[LabeledImage], c: &FrequencyConstraint) -> ConstraintResult {
    if corpus.is_empty() {
        return ConstraintResult::indeterminate(ConstraintKind::SpatialFrequency, 0, "empty corpus");
    }
    let fractions: Vec<(String, f64)> =
        corpus.par_iter().map(|img| (img.id.clone(), low_frequency_fraction(&img.image, c.cutoff_wavelength))).collect();
    let bad = sorted(fractions.iter().filter(|(_, f)| *f < c.min_fraction).map(|(id, _)| id.clone()).collect());
    let min = fractions.iter().map(|(_, f)| *f).fold(1.0f64, f64::min);
    ConstraintResult {
        kind: ConstraintKind::SpatialFrequency,
        verdict: if bad.is_empty() { Verdict::Pass } else { Verdict::Fail },
        statistic: Some(min),
        threshold: Some(c.min_fraction),
        samples: corpus.len(),
        offenders: bad,
        note: format!(
            "share of non-DC spectral energy at wavelengths >= {} px; statistic is the smallest per-image share",
            c.cutoff_wavelength
        ),
    }
}

pub fn check_object_count(corpus: &[LabeledImage], c: &CountConstraint) -> ConstraintResult {
    if corpus.is_empty() {
        return ConstraintResult::indeterminate(ConstraintKind::ObjectsPerImage, 0, "empty corpus");
    }
    let (lo, hi) = c.range;
    let mut seen = vec![false; hi - lo + 1];
    let mut offenders = Vec::new();
    for img in corpus {
        let n = img.boxes.len();
        if n < lo || n > hi {
            offenders.push(img.id.clone());
        } else {
            seen[n - lo] = true;
        }
    }
    let mut offenders = sorted(offenders);
    let missing: Vec<usize> = seen.iter().enumerate().filter(|(_, &s)| !s).map(|(i, _)| i + lo).collect();
    offenders.extend(missing.iter().map(|m| format!("count={m} (missing)")));
    let covered = seen.iter().filter(|&&s| s).count();
    ConstraintResult {
        kind: ConstraintKind::ObjectsPerImage,
        verdict: if offenders.is_empty() { Verdict::Pass } else { Verdict::Fail },
        statistic: Some(covered as f64),
        threshold: Some(seen.len() as f64),
        samples: corpus.len(),
        offenders,
        note: format!("every image holds {lo}..={hi} objects and every count occurs; statistic is the number of counts present"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: u32,
    pub hi: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub verdict: Verdict,
    pub results: Vec<ConstraintResult>,
    pub position_heat_map: Vec<Vec<u64>>,
    pub size_histogram: Vec<HistogramBin>,
    pub size_interpretation: String,
    pub manual_conditions: Vec<String>,
    pub images: usize,
    pub objects: usize,
}

pub const SIZE_INTERPRETATION: &str = "Object size is the longer side of the bounding box in pixels. Ranges written in px^2 \
     elsewhere are read as side lengths (e.g. 100 means a box up to 100x100 px).";

pub fn manual_conditions() -> Vec<String> {
    [
        "Edge case: intruder painted or coloured like its background (e.g. green over grass); needs curated samples.",
        "Outlier: distant airplanes or helicopters that resemble small drones; exclude by siting or label policy.",
        "Intruder type limited to quadrotor and birotor.",
        "Time of day, season, weather and lighting ranges come from metadata, not pixels.",
        "Sun position and glare in the field of view.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Size histogram with `width`-px bins up to `max`, plus an overflow bin.
pub fn size_histogram(corpus: &[LabeledImage], width: u32, max: u32) -> Vec<HistogramBin> {
    let nb = max.div_ceil(width) as usize;
    let mut bins: Vec<HistogramBin> =
        (0..nb).map(|i| HistogramBin { lo: i as u32 * width, hi: (i as u32 + 1) * width, count: 0 }).collect();
    bins.push(HistogramBin { lo: nb as u32 * width, hi: u32::MAX, count: 0 });
    for b in corpus.iter().flat_map(|i| &i.boxes) {
        let i = ((b.size() / width) as usize).min(nb);
        bins[i].count += 1;
    }
    bins
}

/// Runs every enabled check. The overall verdict fails if any check fails,
/// passes only if all pass, and is indeterminate otherwise.
pub fn check_corpus(corpus: &[LabeledImage], c: &OddConstraints) -> ComplianceReport {
    let mut results = Vec::new();
    if let Some(s) = &c.size {
        let (a, b) = check_sizes(corpus, s);
        results.push(a);
        results.push(b);
    }
    if let Some(p) = &c.position {
        results.push(check_position_uniformity(corpus, p));
    }
    if let Some(b) = &c.brightness {
        results.push(check_brightness(corpus, b));
    }
    if let Some(f) = &c.spatial_frequency {
        results.push(check_spatial_frequency(corpus, f));
    }
    if let Some(n) = &c.objects_per_image {
        results.push(check_object_count(corpus, n));
    }
    let verdict = if results.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if results.iter().all(|r| r.verdict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Indeterminate
    };
    let grid = c.position.as_ref().map_or(8, |p| p.grid);
    ComplianceReport {
        verdict,
        results,
        position_heat_map: position_grid(corpus, grid),
        size_histogram: size_histogram(corpus, 20, 400),
        size_interpretation: SIZE_INTERPRETATION.to_string(),
        manual_conditions: manual_conditions(),
        images: corpus.len(),
        objects: corpus.iter().map(|i| i.boxes.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{LabeledBox, Rgb8Image};

    fn img(id: &str, boxes: Vec<LabeledBox>) -> LabeledImage {
        LabeledImage::new(id, Rgb8Image::filled(640, 640, [100, 100, 100]), boxes).unwrap()
    }

    #[test]
    fn size_checks() {
        let mut corpus: Vec<LabeledImage> = (0..19).map(|i| img(&format!("i{i:02}"), vec![LabeledBox::new(0, 0, 0, 50, 30)])).collect();
        corpus.push(img("big", vec![LabeledBox::new(0, 0, 0, 150, 30)]));
        let (outer, inner) = check_sizes(&corpus, &SizeConstraint::default());
        assert_eq!(outer.verdict, Verdict::Pass);
        assert_eq!(inner.verdict, Verdict::Pass);
        assert_eq!(inner.statistic, Some(0.95));
        corpus.push(img("huge", vec![LabeledBox::new(0, 0, 0, 500, 30)]));
        let (outer, inner) = check_sizes(&corpus, &SizeConstraint::default());
        assert_eq!(outer.verdict, Verdict::Fail);
        assert_eq!(outer.offenders, vec!["huge#0".to_string()]);
        assert_eq!(inner.verdict, Verdict::Fail);
        assert!(!inner.offenders.is_empty());
        let (e, _) = check_sizes(&[], &SizeConstraint::default());
        assert_eq!(e.verdict, Verdict::Indeterminate);
    }

    #[test]
    fn uniform_grid_passes_and_clustered_fails() {
        let mut grid_corpus = Vec::new();
        for r in 0..8u32 {
            for c in 0..8u32 {
                let boxes = (0..10).map(|_| LabeledBox::new(0, c * 80 + 30, r * 80 + 30, 20, 20)).collect();
                grid_corpus.push(img(&format!("g{r}{c}"), boxes));
            }
        }
        let r = check_position_uniformity(&grid_corpus, &PositionConstraint::default());
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.statistic, Some(0.0));

        // 70 % of centres in the middle, the rest spread out
        let mut clustered = Vec::new();
        for i in 0..1000u32 {
            let (x, y) = if i % 10 < 7 { (310, 310) } else { ((i * 37) % 600, (i * 53) % 600) };
            clustered.push(img(&format!("c{i:04}"), vec![LabeledBox::new(0, x, y, 20, 20)]));
        }
        let r = check_position_uniformity(&clustered, &PositionConstraint::default());
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!r.offenders.is_empty());
        assert_eq!(check_position_uniformity(&clustered[..100], &PositionConstraint::default()).verdict, Verdict::Indeterminate);
    }

    #[test]
    fn brightness_values() {
        assert_eq!(mean_value(&Rgb8Image::filled(4, 4, [0, 0, 0])), 0.0);
        assert_eq!(mean_value(&Rgb8Image::filled(4, 4, [255, 255, 255])), 1.0);
        let half = Rgb8Image::from_fn(4, 4, |x, _| if x < 2 { [0, 0, 0] } else { [255, 255, 255] });
        assert_eq!(mean_value(&half), 0.5);
        let dark = LabeledImage::new("dark", Rgb8Image::filled(8, 8, [0, 0, 0]), vec![]).unwrap();
        let r = check_brightness(&[dark], &BrightnessConstraint::default());
        assert_eq!((r.verdict, r.offenders.clone()), (Verdict::Fail, vec!["dark".to_string()]));
    }

    #[test]
    fn object_counts() {
        let one: Vec<LabeledImage> = (0..5).map(|i| img(&i.to_string(), vec![LabeledBox::new(0, 0, 0, 30, 30)])).collect();
        let r = check_object_count(&one, &CountConstraint::default());
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.offenders.contains(&"count=0 (missing)".to_string()));
        let all: Vec<LabeledImage> =
            (0..5).map(|n| img(&n.to_string(), (0..n).map(|k| LabeledBox::new(0, 40 * k as u32, 0, 30, 30)).collect())).collect();
        assert_eq!(check_object_count(&all, &CountConstraint::default()).verdict, Verdict::Pass);
    }

    #[test]
    fn report_is_order_independent() {
        let mut corpus: Vec<LabeledImage> =
            (0..7).map(|n| img(&format!("x{n}"), (0..n % 5).map(|k| LabeledBox::new(0, 60 * k as u32, 9, 30, 30)).collect())).collect();
        let a = check_corpus(&corpus, &OddConstraints::default());
        corpus.reverse();
        let b = check_corpus(&corpus, &OddConstraints::default());
        assert_eq!(a, b);
        assert_eq!(a.verdict, Verdict::Indeterminate);
        assert_eq!(check_corpus(&[], &OddConstraints::default()).verdict, Verdict::Indeterminate);
    }

    #[test]
    fn critical_value_matches_table() {
        // tabulated chi-square quantiles
        assert!((chi_square_critical(63, 0.01) - 92.010).abs() < 1e-2);
        assert!((chi_square_critical(1, 0.05) - 3.841).abs() < 1e-3);
    }
}
