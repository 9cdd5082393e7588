use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Iou,
    /// Chamfer distance; reported scaled by 10³.
    Cd,
    Epe,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Cd => "cd",
            MetricKind::Epe => "epe",
        }
    }

    /// Factor applied to raw values in reports.
    pub fn report_scale(self) -> f64 {
        match self {
            MetricKind::Cd => 1e3,
            _ => 1.0,
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(MetricKind::Iou),
            "cd" => Ok(MetricKind::Cd),
            "epe" => Ok(MetricKind::Epe),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// Per-sample values of one metric (raw, unscaled).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub threshold: Option<f64>,
    pub samples: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new(kind: MetricKind, threshold: Option<f64>) -> Self {
        Self {
            kind,
            threshold,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample_id: impl Into<String>, value: f64) {
        self.samples.push((sample_id.into(), value));
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Arithmetic mean of the raw values; NaN for an empty report.
    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|s| s.1).sum::<f64>() / self.samples.len() as f64
    }

    /// Means per group label, with `groups[i]` naming the group of sample `i`.
    pub fn group_means(&self, groups: &[String]) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for ((_, v), g) in self.samples.iter().zip(groups) {
            let e = acc.entry(g.as_str()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(g, (s, n))| (g.to_string(), s / n as f64))
            .collect()
    }

    /// `sample_id \t metric \t value` rows, values scaled for reporting.
    pub fn write_tsv(&self, out: &mut String) {
        let scale = self.kind.report_scale();
        for (id, v) in &self.samples {
            let _ = writeln!(out, "{id}\t{}\t{}", self.kind.name(), v * scale);
        }
    }

    pub fn tsv(reports: &[MetricReport]) -> String {
        let mut out = String::from("sample_id\tmetric\tvalue\n");
        for r in reports {
            r.write_tsv(&mut out);
        }
        out
    }
}
