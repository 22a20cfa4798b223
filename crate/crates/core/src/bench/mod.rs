//! Latency harness: per-sample wall-clock timings with mean, dispersion and
//! observed worst case (OWCET), and relative comparison of two reports.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("iterations must be >= 1")]
    NoIterations,
    #[error("subject `{subject}` failed at sample {sample}: {message}")]
    SubjectFailed { subject: String, sample: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Externally measured figure kept next to a report for context, never asserted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNote {
    pub label: String,
    pub mean_ms: Option<f64>,
    pub owcet_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub subject: String,
    pub warmups: usize,
    pub samples_ns: Vec<u64>,
    pub mean_ns: f64,
    /// Sample standard deviation (n − 1); zero for a single sample.
    pub std_ns: f64,
    pub min_ns: u64,
    pub owcet_ns: u64,
    pub reference: Option<ReferenceNote>,
}

impl BenchReport {
    pub fn from_samples(subject: impl Into<String>, warmups: usize, samples_ns: Vec<u64>) -> Result<Self, BenchError> {
        if samples_ns.is_empty() {
            return Err(BenchError::NoIterations);
        }
        let n = samples_ns.len() as f64;
        let mean = samples_ns.iter().map(|&s| s as f64).sum::<f64>() / n;
        let std = if samples_ns.len() > 1 {
            (samples_ns.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            subject: subject.into(),
            warmups,
            min_ns: *samples_ns.iter().min().unwrap(),
            owcet_ns: *samples_ns.iter().max().unwrap(),
            mean_ns: mean,
            std_ns: std,
            samples_ns,
            reference: None,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples_ns.len()
    }

    pub fn with_reference(mut self, note: ReferenceNote) -> Self {
        self.reference = Some(note);
        self
    }

    /// One `subject,sample,latency_ns` row per sample, with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), BenchError> {
        writeln!(out, "subject,sample,latency_ns")?;
        for (i, s) in self.samples_ns.iter().enumerate() {
            writeln!(out, "{},{i},{s}", self.subject)?;
        }
        Ok(())
    }
}

/// Runs `subject` `warmups` times unrecorded, then `iterations` timed runs.
/// Results pass through `black_box` so they cannot be optimised away; a
/// failing run aborts the whole measurement.
pub fn run_bench<T, E: std::fmt::Display>(
    subject: &str,
    warmups: usize,
    iterations: usize,
    mut f: impl FnMut() -> Result<T, E>,
) -> Result<BenchReport, BenchError> {
    if iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    let fail = |sample: usize, e: E| BenchError::SubjectFailed { subject: subject.to_string(), sample, message: e.to_string() };
    for i in 0..warmups {
        black_box(f().map_err(|e| fail(i, e))?);
    }
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed();
        black_box(out.map_err(|e| fail(i, e))?);
        samples.push(dt.as_nanos() as u64);
    }
    BenchReport::from_samples(subject, warmups, samples)
}

/// Relative decrease from `baseline` to `candidate`, in percent.
pub fn reduction_percent(baseline: f64, candidate: f64) -> f64 {
    (baseline - candidate) / baseline * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    pub mean_reduction_percent: f64,
    pub owcet_reduction_percent: f64,
    pub std_delta_ns: f64,
    /// Set when the two reports measure different subjects.
    pub subject_mismatch: bool,
}

pub fn compare(baseline: &BenchReport, candidate: &BenchReport) -> Comparison {
    Comparison {
        baseline: baseline.subject.clone(),
        candidate: candidate.subject.clone(),
        mean_reduction_percent: reduction_percent(baseline.mean_ns, candidate.mean_ns),
        owcet_reduction_percent: reduction_percent(baseline.owcet_ns as f64, candidate.owcet_ns as f64),
        std_delta_ns: candidate.std_ns - baseline.std_ns,
        subject_mismatch: baseline.subject != candidate.subject,
    }
}
