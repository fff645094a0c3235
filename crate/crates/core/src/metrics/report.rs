//! Per-image metric rows, mean and sample standard deviation aggregates,
//! and paired comparisons between methods.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ImageGrid;

use super::lpc::{lpc_si, LpcParams};
use super::regressor::RegressorModel;
use super::wilcoxon::wilcoxon_signed_rank;
use super::{brisque_score, entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Entropy,
    #[serde(rename = "BRISQUE")]
    Brisque,
    #[serde(rename = "LPC-SI")]
    LpcSi,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Entropy, Metric::Brisque, Metric::LpcSi];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Entropy => "Entropy",
            Metric::Brisque => "BRISQUE",
            Metric::LpcSi => "LPC-SI",
        }
    }

    /// Whether larger values indicate better quality.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Brisque)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub entropy: f64,
    pub brisque: f64,
    pub lpc_si: f64,
}

impl ImageMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Entropy => self.entropy,
            Metric::Brisque => self.brisque,
            Metric::LpcSi => self.lpc_si,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single row.
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    /// `mean ± std` with three decimals.
    pub fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(rename = "Entropy")]
    pub entropy: Aggregate,
    #[serde(rename = "BRISQUE")]
    pub brisque: Aggregate,
    #[serde(rename = "LPC-SI")]
    pub lpc_si: Aggregate,
}

impl Aggregates {
    pub fn get(&self, m: Metric) -> Aggregate {
        match m {
            Metric::Entropy => self.entropy,
            Metric::Brisque => self.brisque,
            Metric::LpcSi => self.lpc_si,
        }
    }

    pub fn from_rows(rows: &[ImageMetrics]) -> Self {
        let col = |m: Metric| Aggregate::of(&rows.iter().map(|r| r.get(m)).collect::<Vec<_>>());
        Self {
            entropy: col(Metric::Entropy),
            brisque: col(Metric::Brisque),
            lpc_si: col(Metric::LpcSi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub metric: Metric,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregates,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

impl MetricReport {
    pub fn from_rows(method: impl Into<String>, per_image: Vec<ImageMetrics>) -> Self {
        Self {
            method: method.into(),
            aggregate: Aggregates::from_rows(&per_image),
            per_image,
            comparisons: Vec::new(),
        }
    }

    /// Checks that the stored aggregates serialize identically to a fresh
    /// recomputation from the rows.
    pub fn verify_aggregate(&self) -> Result<()> {
        let fresh = serde_json::to_string(&Aggregates::from_rows(&self.per_image)).expect("serializes");
        let stored = serde_json::to_string(&self.aggregate).expect("serializes");
        if fresh != stored {
            return Err(Error::Contract(format!(
                "aggregate mismatch for {}: stored {stored}, recomputed {fresh}",
                self.method
            )));
        }
        Ok(())
    }

    /// Paired Wilcoxon tests of every metric against `other`, rows matched by position.
    pub fn compare(&self, other: &MetricReport) -> Result<Vec<Comparison>> {
        if self.per_image.len() != other.per_image.len() {
            return Err(Error::Contract(format!(
                "cannot pair {} rows of {} with {} rows of {}",
                self.per_image.len(),
                self.method,
                other.per_image.len(),
                other.method
            )));
        }
        Metric::ALL
            .iter()
            .map(|&m| {
                let a: Vec<f64> = self.per_image.iter().map(|r| r.get(m)).collect();
                let b: Vec<f64> = other.per_image.iter().map(|r| r.get(m)).collect();
                Ok(Comparison {
                    method_a: self.method.clone(),
                    method_b: other.method.clone(),
                    metric: m,
                    p_value: wilcoxon_signed_rank(&a, &b)?.p_value,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))?;
        r.verify_aggregate()?;
        Ok(r)
    }

    /// Method-by-metric table of `mean ± std` cells.
    pub fn table_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from("method");
        for m in Metric::ALL {
            write!(out, ",{}", m.name()).unwrap();
        }
        out.push('\n');
        for r in reports {
            out.push_str(&csv_field(&r.method));
            for m in Metric::ALL {
                write!(out, ",{}", r.aggregate.get(m).cell()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Per-image rows as CSV.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("id,Entropy,BRISQUE,LPC-SI\n");
        for r in &self.per_image {
            writeln!(out, "{},{},{},{}", csv_field(&r.id), r.entropy, r.brisque, r.lpc_si).unwrap();
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// The three measures with fixed settings.
#[derive(Debug, Clone)]
pub struct MetricSuite {
    pub regressor: RegressorModel,
    pub lpc: LpcParams,
}

impl Default for MetricSuite {
    fn default() -> Self {
        Self {
            regressor: RegressorModel::bundled(),
            lpc: LpcParams::default(),
        }
    }
}

impl MetricSuite {
    pub fn evaluate(&self, id: impl Into<String>, img: &ImageGrid) -> Result<ImageMetrics> {
        Ok(ImageMetrics {
            id: id.into(),
            entropy: entropy(img),
            brisque: brisque_score(img, &self.regressor)?,
            lpc_si: lpc_si(img, &self.lpc)?,
        })
    }

    /// Evaluates images in parallel on the current rayon pool; row order follows the input.
    pub fn report(&self, method: &str, items: &[(String, ImageGrid)]) -> Result<MetricReport> {
        let rows = items
            .par_iter()
            .map(|(id, img)| self.evaluate(id.clone(), img))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport::from_rows(method, rows))
    }
}
