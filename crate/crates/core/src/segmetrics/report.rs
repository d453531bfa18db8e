//! Per-page outcome records and the run-level evaluation report.
//!
//! Records are line-oriented so that every reported number can be recomputed
//! from disk:
//!
//! ```text
//! <group> <run> <page> <class> <intersection> <union> <predicted> <truth>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::stats::{significance_stars, welch_t_test, RunStats, WelchResult};
use super::{averaged_metric, miou, IoUResult, RateMetric, Threshold, ThresholdRange};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageRecord {
    /// Model or modality label, e.g. `image+text`.
    pub group: String,
    pub run: u32,
    pub page: String,
    pub class: u8,
    pub result: IoUResult,
}

pub fn write_records(path: &Path, records: &[PageRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        if r.group.contains(char::is_whitespace) || r.page.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "record labels may not contain whitespace: `{}` / `{}`",
                r.group, r.page
            )));
        }
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            r.group,
            r.run,
            r.page,
            r.class,
            r.result.intersection,
            r.result.union,
            r.result.predicted,
            r.result.truth
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PageRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 8 {
            return Err(Error::parse(
                &name,
                i + 1,
                format!("expected 8 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| {
                Error::parse(&name, i + 1, format!("`{s}` is not a non-negative integer"))
            })
        };
        let result = IoUResult {
            intersection: num(f[4])?,
            union: num(f[5])?,
            predicted: num(f[6])?,
            truth: num(f[7])?,
        };
        let consistent = result.intersection <= result.predicted.min(result.truth)
            && result.union == result.predicted + result.truth - result.intersection;
        if !consistent {
            return Err(Error::parse(&name, i + 1, "inconsistent IoU counts"));
        }
        out.push(PageRecord {
            group: f[0].to_string(),
            run: num(f[1])? as u32,
            page: f[2].to_string(),
            class: u8::try_from(num(f[3])?)
                .map_err(|_| Error::parse(&name, i + 1, "class id > 255"))?,
            result,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Group that significance stars compare against.
    pub baseline: Option<String>,
    pub thresholds: Vec<u32>,
    pub range: ThresholdRange,
    /// Display order of groups; groups not listed follow in record order.
    pub group_order: Vec<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            baseline: None,
            thresholds: vec![60, 80],
            range: ThresholdRange::new(50, 5, 95).expect("static range"),
            group_order: Vec::new(),
        }
    }
}

/// Metric values of one run, in report column order. `None` is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub values: Vec<Option<f64>>,
}

fn run_metrics(results: &[IoUResult], opts: &ReportOptions) -> Result<RunMetrics> {
    let mut values = vec![miou(results).value()];
    for metric in [RateMetric::Precision, RateMetric::Recall] {
        for &t in &opts.thresholds {
            values.push(metric.at(results, Threshold::percent(t)?));
        }
        values.push(averaged_metric(metric, results, opts.range).value);
    }
    Ok(RunMetrics { values })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Runs where the metric was defined.
    pub runs: usize,
    pub welch: Option<WelchSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WelchSummary {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub stars: String,
    /// Sign of `mean(group) - mean(baseline)`.
    pub direction: i8,
}

impl From<(WelchResult, f64)> for WelchSummary {
    fn from((w, diff): (WelchResult, f64)) -> Self {
        WelchSummary {
            t: w.t,
            df: w.df,
            p: w.p,
            stars: significance_stars(w.p).to_string(),
            direction: if diff > 0.0 {
                1
            } else if diff < 0.0 {
                -1
            } else {
                0
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    /// Class name, or `Average` for the pooled row.
    pub class: String,
    pub group: String,
    pub cells: Vec<CellSummary>,
    pub per_run: BTreeMap<u32, RunMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub columns: Vec<String>,
    pub baseline: Option<String>,
    pub rows: Vec<ReportRow>,
}

pub const AVERAGE_ROW: &str = "Average";

/// Aggregates per-page records into per-class and pooled rows.
/// `class_names[id]` names class `id`; id 0 (background) is never reported.
pub fn summarize(
    records: &[PageRecord],
    class_names: &[String],
    opts: &ReportOptions,
) -> Result<EvalReport> {
    let mut columns = vec!["mIoU".to_string()];
    for m in ["P", "R"] {
        for t in &opts.thresholds {
            columns.push(format!("{m}@{t}"));
        }
        columns.push(format!("{m}@{}", opts.range));
    }

    let mut groups: Vec<String> = opts.group_order.clone();
    for r in records {
        if !groups.contains(&r.group) {
            groups.push(r.group.clone());
        }
    }
    groups.retain(|g| records.iter().any(|r| &r.group == g));
    let mut classes: Vec<u8> = records
        .iter()
        .map(|r| r.class)
        .filter(|&c| c != 0)
        .collect();
    classes.sort_unstable();
    classes.dedup();

    // (group, run, class) -> results, with class None for the pooled row
    let mut buckets: BTreeMap<(&str, u32, Option<u8>), Vec<IoUResult>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.class != 0) {
        buckets
            .entry((&r.group, r.run, Some(r.class)))
            .or_default()
            .push(r.result);
        buckets
            .entry((&r.group, r.run, None))
            .or_default()
            .push(r.result);
    }

    let class_keys: Vec<Option<u8>> = classes.iter().map(|&c| Some(c)).chain([None]).collect();
    let mut per_run: BTreeMap<(String, Option<u8>), BTreeMap<u32, RunMetrics>> = BTreeMap::new();
    for ((g, run, c), results) in &buckets {
        per_run
            .entry((g.to_string(), *c))
            .or_default()
            .insert(*run, run_metrics(results, opts)?);
    }

    let column_values = |g: &str, c: Option<u8>, col: usize| -> Vec<f64> {
        per_run
            .get(&(g.to_string(), c))
            .map(|m| m.values().filter_map(|rm| rm.values[col]).collect())
            .unwrap_or_default()
    };

    let mut rows = Vec::new();
    for &c in &class_keys {
        let class = match c {
            Some(id) => class_names
                .get(id as usize)
                .cloned()
                .unwrap_or_else(|| format!("class{id}")),
            None => AVERAGE_ROW.to_string(),
        };
        for g in &groups {
            let cells = (0..columns.len())
                .map(|col| {
                    let vals = column_values(g, c, col);
                    let stats = RunStats::new(vals.clone());
                    let welch = match &opts.baseline {
                        Some(base) if base != g => {
                            let bv = column_values(base, c, col);
                            welch_t_test(&vals, &bv).ok().map(|w| {
                                let diff = stats.as_ref().map_or(0.0, |s| s.mean)
                                    - RunStats::new(bv).map_or(0.0, |s| s.mean);
                                WelchSummary::from((w, diff))
                            })
                        }
                        _ => None,
                    };
                    CellSummary {
                        mean: stats.as_ref().map(|s| s.mean),
                        std: stats.as_ref().map(|s| s.std),
                        runs: vals.len(),
                        welch,
                    }
                })
                .collect();
            rows.push(ReportRow {
                class: class.clone(),
                group: g.clone(),
                cells,
                per_run: per_run.get(&(g.clone(), c)).cloned().unwrap_or_default(),
            });
        }
    }
    Ok(EvalReport {
        columns,
        baseline: opts.baseline.clone(),
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, class: &str, group: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.group == group)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Fixed-width text table, values in percent as `mean±std`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# values: mean±std over runs, in percent");
        if let Some(b) = &self.baseline {
            let _ = writeln!(
                s,
                "# stars: two-tailed Welch t-test against `{b}` (* p<=0.05, ** p<=0.01, *** p<=0.001, **** p<=0.0001); +/- gives the sign of the mean difference"
            );
        }
        let _ = write!(s, "{:<16} {:<12}", "class", "model");
        for c in &self.columns {
            let _ = write!(s, " {c:>19}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<16} {:<12}", r.class, r.group);
            for cell in &r.cells {
                let mut v = match (cell.mean, cell.std) {
                    (Some(m), Some(sd)) => format!("{:.2}±{:.2}", m * 100.0, sd * 100.0),
                    _ => "n/a".to_string(),
                };
                if let Some(w) = cell.welch.as_ref().filter(|w| !w.stars.is_empty()) {
                    let sign = match w.direction {
                        1 => "+",
                        -1 => "-",
                        _ => "=",
                    };
                    let _ = write!(v, " {sign}{}", w.stars);
                }
                let _ = write!(s, " {v:>19}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(group: &str, run: u32, page: &str, class: u8, i: u64, p: u64, g: u64) -> PageRecord {
        PageRecord {
            group: group.into(),
            run,
            page: page.into(),
            class,
            result: IoUResult {
                intersection: i,
                union: p + g - i,
                predicted: p,
                truth: g,
            },
        }
    }

    fn names() -> Vec<String> {
        vec!["background".into(), "serial".into(), "stocks".into()]
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        let rs = vec![
            rec("image", 0, "p1", 1, 3, 4, 5),
            rec("image+text", 2, "p2", 2, 0, 0, 0),
        ];
        write_records(&path, &rs).unwrap();
        assert_eq!(read_records(&path).unwrap(), rs);
        std::fs::write(&path, "image 0 p 1 5 4 4 4\n").unwrap();
        assert!(read_records(&path).is_err());
    }

    #[test]
    fn pooled_average_is_micro() {
        // class 1: IoU 1.0 and a TN; class 2: IoU 0.5
        let rs = vec![
            rec("a", 0, "p1", 1, 4, 4, 4),
            rec("a", 0, "p2", 1, 0, 0, 0),
            rec("a", 0, "p1", 2, 2, 4, 2),
        ];
        let rep = summarize(&rs, &names(), &ReportOptions::default()).unwrap();
        let miou_col = rep.column("mIoU").unwrap();
        assert_eq!(
            rep.row("serial", "a").unwrap().cells[miou_col].mean,
            Some(1.0)
        );
        assert_eq!(
            rep.row("stocks", "a").unwrap().cells[miou_col].mean,
            Some(0.5)
        );
        assert_eq!(
            rep.row(AVERAGE_ROW, "a").unwrap().cells[miou_col].mean,
            Some(0.75)
        );
        let p60 = rep.column("P@60").unwrap();
        // pooled: one TP (IoU 1), one FP (IoU 0.5), one TN
        assert_eq!(
            rep.row(AVERAGE_ROW, "a").unwrap().cells[p60].mean,
            Some(0.5)
        );
    }

    #[test]
    fn stars_against_baseline() {
        let mut rs = Vec::new();
        for run in 0..5 {
            rs.push(rec("image", run, "p", 1, 50 + run as u64, 100, 100));
            rs.push(rec("image+text", run, "p", 1, 90 + run as u64, 100, 100));
        }
        let opts = ReportOptions {
            baseline: Some("image".into()),
            ..Default::default()
        };
        let rep = summarize(&rs, &names(), &opts).unwrap();
        let row = rep.row("serial", "image+text").unwrap();
        let w = row.cells[0].welch.as_ref().unwrap();
        assert_eq!(w.direction, 1);
        assert_eq!(w.stars, "****");
        assert!(rep.row("serial", "image").unwrap().cells[0].welch.is_none());
        let text = rep.to_text();
        assert!(text.contains("+****"), "{text}");
        assert_eq!(rep.columns.len(), 7);
    }
}
