//! Run reports: manifests, traces, summaries, and their CSV/JSON/SVG forms.
//!
//! CSV files use comma separation, '.' as the decimal point, and lowercase
//! `nan`/`inf`/`-inf` tokens; boolean flags are written as 0/1. JSON carries
//! the manifest and summary (nonfinite numbers serialize as null, per JSON).
//! Emission is deterministic: identical manifests produce identical bytes
//! within one build.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::monitor::NanEvent;
use crate::svg::{LinePlot, Series};

/// Everything needed to reproduce a run within one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Runner id, e.g. "sim-sqrt".
    pub run: String,
    /// Crate version the report was produced by.
    pub build: String,
    /// Random generator algorithm.
    pub generator: String,
    pub seed: u64,
    /// The full runner configuration as given.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new<C: Serialize>(run: &str, seed: u64, config: &C) -> Self {
        Manifest {
            run: run.to_string(),
            build: env!("CARGO_PKG_VERSION").to_string(),
            generator: stablab::simgen::GENERATOR_ID.to_string(),
            seed,
            config: serde_json::to_value(config).expect("configs serialize"),
        }
    }
}

/// One iteration of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub lr: f32,
    pub loss: f32,
    /// Biased variance of the weight gradient, in binary64.
    pub grad_var: f64,
    /// True when any tensor of this iteration contained NaN or infinity.
    pub nan_flag: bool,
}

/// Derived view of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub iterations_completed: u64,
    pub final_loss: Option<f32>,
    /// Smallest finite loss seen, with its iteration.
    pub min_loss: Option<f32>,
    pub min_loss_iteration: Option<u64>,
    pub first_nan_iteration: Option<u64>,
    pub nan_rows: u64,
    pub skipped_batches: u64,
    pub first_event: Option<NanEvent>,
}

impl Summary {
    pub fn from_trace(trace: &[TraceRow], first_event: Option<NanEvent>, skipped: u64) -> Self {
        let mut min_loss = None;
        let mut min_iter = None;
        for row in trace {
            if row.loss.is_finite() && min_loss.map_or(true, |m| row.loss < m) {
                min_loss = Some(row.loss);
                min_iter = Some(row.iteration);
            }
        }
        Summary {
            iterations_completed: trace.len() as u64,
            final_loss: trace.last().map(|r| r.loss),
            min_loss,
            min_loss_iteration: min_iter,
            first_nan_iteration: trace.iter().find(|r| r.nan_flag).map(|r| r.iteration),
            nan_rows: trace.iter().filter(|r| r.nan_flag).count() as u64,
            skipped_batches: skipped,
            first_event,
        }
    }
}

/// Report of one training simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub manifest: Manifest,
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
}

/// One grid cell of a sweep: an (epsilon, sigma_w) pair aggregated over
/// replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    /// Epsilon as spelled in the config.
    pub epsilon_text: String,
    /// Resolved binary32 epsilon.
    pub epsilon: f32,
    pub sigma_w: f32,
    pub replicas: usize,
    /// Replicas whose loss or gradients went nonfinite.
    pub nan_count: usize,
    pub nan_fraction: f64,
    /// Mean over all replicas; NaN whenever any replica was nonfinite.
    pub mean_grad_var: f64,
    /// Mean over the finite replicas only.
    pub mean_grad_var_finite: Option<f64>,
    /// Event from the lowest-indexed nonfinite replica.
    pub first_event: Option<NanEvent>,
}

/// Report of a gradient-scale or epsilon sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub manifest: Manifest,
    pub cells: Vec<SweepCell>,
}

/// Per-rate NaN counts for the two variance estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub valid_rate: f64,
    pub trials: u64,
    pub nan_unbiased: u64,
    pub nan_biased: u64,
    /// Trials that drew no valid pixel at all.
    pub n0_trials: u64,
    /// Trials that drew exactly one valid pixel.
    pub n1_trials: u64,
    /// Trials skipped by the n = 0 guard (only with skip_guard).
    pub skipped: u64,
    /// Trials where the observed NaN pattern contradicted n <= 1 / n = 0.
    pub structural_violations: u64,
}

/// Report of the sparse-variance NaN table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceTableReport {
    pub manifest: Manifest,
    pub rows: Vec<RateRow>,
}

/// Lowercase-token float formatting for CSV.
pub fn fmt_f32(v: f32) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f32::INFINITY {
        "inf".to_string()
    } else if v == f32::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Output formats selectable on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

impl SimReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,lr,loss,grad_var,nan_flag\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.iteration,
                fmt_f32(row.lr),
                fmt_f32(row.loss),
                fmt_f64(row.grad_var),
                u8::from(row.nan_flag)
            ));
        }
        out
    }

    /// Manifest and summary as pretty JSON (the trace lives in the CSV).
    pub fn to_json(&self) -> String {
        let doc = serde_json::json!({ "manifest": self.manifest, "summary": self.summary });
        serde_json::to_string_pretty(&doc).expect("reports serialize") + "\n"
    }

    pub fn to_svg(&self) -> String {
        let loss_points: Vec<(f64, f64)> = self
            .trace
            .iter()
            .map(|r| (r.iteration as f64, f64::from(r.loss)))
            .collect();
        let grad_points: Vec<(f64, f64)> =
            self.trace.iter().map(|r| (r.iteration as f64, r.grad_var)).collect();
        let markers: Vec<(f64, f64)> = self
            .trace
            .iter()
            .filter(|r| r.nan_flag)
            .map(|r| (r.iteration as f64, f64::from(r.loss)))
            .collect();
        LinePlot {
            title: format!("{} (seed {})", self.manifest.run, self.manifest.seed),
            x_label: "iteration".to_string(),
            y_label: "loss / grad variance (log)".to_string(),
            log_x: false,
            log_y: true,
            series: vec![
                Series { name: "loss".to_string(), points: loss_points },
                Series { name: "grad_var".to_string(), points: grad_points },
            ],
            markers,
        }
        .render()
    }

    pub fn write(&self, dir: &Path, formats: &[Format]) -> io::Result<Vec<PathBuf>> {
        let stem = &self.manifest.run;
        let mut written = Vec::new();
        for format in formats {
            let path = match format {
                Format::Csv => write_file(dir, &format!("{stem}_trace.csv"), &self.trace_csv())?,
                Format::Json => write_file(dir, &format!("{stem}.json"), &self.to_json())?,
                Format::Svg => write_file(dir, &format!("{stem}.svg"), &self.to_svg())?,
            };
            written.push(path);
        }
        Ok(written)
    }
}

impl SweepReport {
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "epsilon,sigma_w,replicas,nan_count,nan_fraction,mean_grad_var,mean_grad_var_finite\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.epsilon_text,
                fmt_f32(c.sigma_w),
                c.replicas,
                c.nan_count,
                fmt_f64(c.nan_fraction),
                fmt_f64(c.mean_grad_var),
                c.mean_grad_var_finite.map_or("nan".to_string(), fmt_f64),
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_svg(&self) -> String {
        // one curve per epsilon over sigma_w; markers on cells with NaNs
        let mut series: Vec<Series> = Vec::new();
        let mut markers = Vec::new();
        for cell in &self.cells {
            let name = format!("eps={}", cell.epsilon_text);
            if series.last().map(|s: &Series| s.name != name).unwrap_or(true) {
                series.push(Series { name, points: Vec::new() });
            }
            let y = cell.mean_grad_var_finite.unwrap_or(f64::NAN);
            series.last_mut().unwrap().points.push((f64::from(cell.sigma_w), y));
            if cell.nan_count > 0 {
                markers.push((f64::from(cell.sigma_w), y));
            }
        }
        LinePlot {
            title: format!("{}: gradient scale vs weight scale", self.manifest.run),
            x_label: "sigma_w (log)".to_string(),
            y_label: "mean Var[dL/dW] (log)".to_string(),
            log_x: true,
            log_y: true,
            series,
            markers,
        }
        .render()
    }

    pub fn write(&self, dir: &Path, formats: &[Format]) -> io::Result<Vec<PathBuf>> {
        let stem = &self.manifest.run;
        let mut written = Vec::new();
        for format in formats {
            let path = match format {
                Format::Csv => write_file(dir, &format!("{stem}_table.csv"), &self.table_csv())?,
                Format::Json => write_file(dir, &format!("{stem}.json"), &self.to_json())?,
                Format::Svg => write_file(dir, &format!("{stem}.svg"), &self.to_svg())?,
            };
            written.push(path);
        }
        Ok(written)
    }
}

impl VarianceTableReport {
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "valid_rate,trials,nan_unbiased,nan_biased,n0_trials,n1_trials,skipped\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_f64(r.valid_rate),
                r.trials,
                r.nan_unbiased,
                r.nan_biased,
                r.n0_trials,
                r.n1_trials,
                r.skipped
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_svg(&self) -> String {
        let unbiased: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.valid_rate * 100.0, r.nan_unbiased as f64))
            .collect();
        let biased: Vec<(f64, f64)> =
            self.rows.iter().map(|r| (r.valid_rate * 100.0, r.nan_biased as f64)).collect();
        LinePlot {
            title: format!("{}: NaN count vs valid-pixel rate", self.manifest.run),
            x_label: "valid rate (%)".to_string(),
            y_label: "NaN count".to_string(),
            log_x: false,
            log_y: false,
            series: vec![
                Series { name: "unbiased".to_string(), points: unbiased },
                Series { name: "biased".to_string(), points: biased },
            ],
            markers: Vec::new(),
        }
        .render()
    }

    pub fn write(&self, dir: &Path, formats: &[Format]) -> io::Result<Vec<PathBuf>> {
        let stem = &self.manifest.run;
        let mut written = Vec::new();
        for format in formats {
            let path = match format {
                Format::Csv => write_file(dir, &format!("{stem}_table.csv"), &self.table_csv())?,
                Format::Json => write_file(dir, &format!("{stem}.json"), &self.to_json())?,
                Format::Svg => write_file(dir, &format!("{stem}.svg"), &self.to_svg())?,
            };
            written.push(path);
        }
        Ok(written)
    }
}
