use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BucketedFScore, BUCKETS};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format: u32,
    /// The only field allowed to differ between identical runs.
    pub generated_at: String,
}

/// Test score of one (method, seed, direction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub seed: u64,
    pub direction: String,
    pub test_bleu: Option<f64>,
    pub error: Option<String>,
}

/// Synthetic data before and after repair, scored against the hidden gold
/// side, for the first repair iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAnalysis {
    pub seed: u64,
    /// Direction whose training data was repaired.
    pub direction: String,
    pub rows: usize,
    pub bleu_before: f64,
    pub bleu_after: f64,
    pub fscore_before: BucketedFScore,
    pub fscore_after: BucketedFScore,
    pub ppl_in_before: f64,
    pub ppl_in_after: f64,
    pub ppl_out_before: f64,
    pub ppl_out_after: f64,
}

/// Dev score after each iteration; index 0 is the unadapted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub method: String,
    pub seed: u64,
    pub direction: String,
    pub dev_bleu: Vec<f64>,
}

/// Benchmark premise: the out-of-domain forward model misses in-domain
/// conflict-token images on the in-domain test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseCheck {
    pub seed: u64,
    pub conflict_tokens: usize,
    pub conflict_miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub seed: u64,
    pub run: String,
    pub id: String,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: ReportHeader,
    pub config: String,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub analysis: Vec<RepairAnalysis>,
    pub premise: Vec<PremiseCheck>,
    pub curves: Vec<Curve>,
    pub lineage: Vec<LineageEntry>,
    /// Metric blocks as `metric<TAB>bucket or n<TAB>value` lines.
    pub metrics_tsv: String,
}

pub const DIRECTION_NAMES: [&str; 2] = ["src2tgt", "tgt2src"];

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

impl RunReport {
    pub fn cell(&self, method: &str, seed: u64, direction: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.seed == seed && c.direction == direction)
    }

    /// Per-seed test BLEU averaged over both directions; seeds with a
    /// failed cell are skipped.
    pub fn mean_bleu_by_seed(&self, method: &str) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|&s| {
                let a = self.cell(method, s, DIRECTION_NAMES[0])?.test_bleu?;
                let b = self.cell(method, s, DIRECTION_NAMES[1])?.test_bleu?;
                Some((a + b) / 2.0)
            })
            .collect()
    }

    pub fn median_bleu(&self, method: &str) -> Option<f64> {
        median(&self.mean_bleu_by_seed(method))
    }

    /// Every cell succeeded.
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_none())
    }

    /// JSON with the timestamp and output directory blanked, for byte
    /// comparison of runs.
    pub fn content_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.header.generated_at.clear();
        r.config = r
            .config
            .lines()
            .map(|l| if l.starts_with("out_dir=") { "out_dir=" } else { l })
            .map(|l| format!("{l}\n"))
            .collect();
        Ok(serde_json::to_string_pretty(&r)?)
    }

    /// Rows `method × direction`, one column per seed and a median column.
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("method\tdirection");
        for s in &self.seeds {
            let _ = write!(out, "\tseed{s}");
        }
        out.push_str("\tmedian\n");
        for m in &self.methods {
            for d in DIRECTION_NAMES {
                let _ = write!(out, "{m}\t{d}");
                let mut ok = Vec::new();
                for &s in &self.seeds {
                    match self.cell(m, s, d).and_then(|c| c.test_bleu) {
                        Some(b) => {
                            ok.push(b);
                            let _ = write!(out, "\t{b:.2}");
                        }
                        None => out.push_str("\tFAILED"),
                    }
                }
                match median(&ok) {
                    Some(b) if ok.len() == self.seeds.len() => {
                        let _ = writeln!(out, "\t{b:.2}");
                    }
                    _ => out.push_str("\tFAILED\n"),
                }
            }
        }
        out
    }
}

/// Metric blocks for the repair analysis.
pub fn analysis_tsv(rows: &[RepairAnalysis]) -> String {
    let mut out = String::from("metric\tbucket_or_n\tvalue\n");
    for a in rows {
        let tag = format!("seed{}.{}", a.seed, a.direction);
        let _ = writeln!(out, "{tag}.bleu_before\t{}\t{:.2}", a.rows, a.bleu_before);
        let _ = writeln!(out, "{tag}.bleu_after\t{}\t{:.2}", a.rows, a.bleu_after);
        for (b, name) in BUCKETS.iter().enumerate() {
            let _ = writeln!(out, "{tag}.f1_before\t{name}\t{:.4}", a.fscore_before.buckets[b].f1);
            let _ = writeln!(out, "{tag}.f1_after\t{name}\t{:.4}", a.fscore_after.buckets[b].f1);
        }
        for (k, v) in [
            ("ppl_in_before", a.ppl_in_before),
            ("ppl_in_after", a.ppl_in_after),
            ("ppl_out_before", a.ppl_out_before),
            ("ppl_out_after", a.ppl_out_after),
        ] {
            let _ = writeln!(out, "{tag}.{k}\t{}\t{v:.3}", a.rows);
        }
    }
    out
}

/// Writes `report.json` and `summary.tsv` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let tsv = dir.join("summary.tsv");
    fs::write(&tsv, report.summary_tsv()).map_err(|e| Error::io(&tsv, e))
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport {
            methods: vec!["base".into(), "bt".into()],
            seeds: vec![1, 2],
            ..RunReport::default()
        };
        for m in ["base", "bt"] {
            for s in [1, 2] {
                for d in DIRECTION_NAMES {
                    r.cells.push(Cell {
                        method: m.into(),
                        seed: s,
                        direction: d.into(),
                        test_bleu: Some(43.4249 + s as f64),
                        error: None,
                    });
                }
            }
        }
        r.header.generated_at = "now".into();
        r
    }

    #[test]
    fn emit_then_parse() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(load_report(&dir.path().join("report.json")).unwrap(), r);
        let tsv = fs::read_to_string(dir.path().join("summary.tsv")).unwrap();
        let rows: Vec<&str> = tsv.lines().skip(1).collect();
        assert_eq!(rows.len(), r.methods.len() * 2);
        assert_eq!(rows[0], "base\tsrc2tgt\t44.42\t45.42\t44.92");
    }

    #[test]
    fn failed_cells_marked() {
        let mut r = sample();
        r.cells[0].test_bleu = None;
        r.cells[0].error = Some("boom".into());
        assert!(!r.all_ok());
        let tsv = r.summary_tsv();
        assert!(tsv.lines().nth(1).unwrap().contains("FAILED"));
        assert_eq!(r.mean_bleu_by_seed("base").len(), 1);
    }

    #[test]
    fn timestamp_and_location_excluded_from_content() {
        let mut a = sample();
        let mut b = sample();
        a.config = "methods=base\nout_dir=runs/a\n".into();
        b.config = "methods=base\nout_dir=runs/b\n".into();
        b.header.generated_at = "later".into();
        assert_eq!(a.content_json().unwrap(), b.content_json().unwrap());
        b.config = "methods=bt\nout_dir=runs/b\n".into();
        assert_ne!(a.content_json().unwrap(), b.content_json().unwrap());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
    }
}
