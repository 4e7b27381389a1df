use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{confusion_recall_percent, micro_macro_f, Confusion};
use super::plan::slug;
use crate::error::{Error, Result};

/// One (arm, fold, missing count, trial) evaluation. `confusion` is `None`
/// for a failed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub arm: String,
    pub fold: u8,
    pub missing_count: usize,
    pub trial: usize,
    pub missing: BTreeSet<usize>,
    pub confusion: Option<Confusion>,
}

impl TrialRecord {
    /// `(micro_f, macro_f)`, or `None` for failed or empty trials.
    pub fn scores(&self) -> Option<(f64, f64)> {
        self.confusion.as_ref().and_then(|c| micro_macro_f(c).ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub arm: String,
    pub fold: u8,
    /// Channels masked in the training data (matched condition only).
    pub missing: BTreeSet<usize>,
    pub epoch_losses: Vec<f64>,
}

/// Pooled result of one (arm, missing count) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub arm: String,
    pub missing_count: usize,
    pub trials: usize,
    pub failed: usize,
    pub confusion: Confusion,
    /// NaN when every trial failed.
    pub micro_f: f64,
    pub macro_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub labels: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub training: Vec<TrainingRecord>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_score(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NaN".to_string(),
    }
}

impl ExperimentReport {
    pub fn failed_trials(&self) -> usize {
        self.trials.iter().filter(|t| t.confusion.is_none()).count()
    }

    /// Arm names in first-appearance order.
    pub fn arms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.trials {
            if !out.contains(&t.arm) {
                out.push(t.arm.clone());
            }
        }
        out
    }

    /// Confusions pooled over every completed trial and fold of each cell;
    /// scores are computed from the pooled matrix.
    pub fn cells(&self) -> Vec<CellSummary> {
        let n = self.labels.len();
        let mut out = Vec::new();
        for arm in self.arms() {
            let counts: BTreeSet<usize> = self
                .trials
                .iter()
                .filter(|t| t.arm == arm)
                .map(|t| t.missing_count)
                .collect();
            for count in counts {
                let mut pooled = Confusion::new(n);
                let (mut trials, mut failed) = (0, 0);
                for t in self.trials.iter().filter(|t| t.arm == arm && t.missing_count == count) {
                    trials += 1;
                    match &t.confusion {
                        Some(c) => pooled.merge(c).expect("trials share the label set"),
                        None => failed += 1,
                    }
                }
                let (micro_f, macro_f) = micro_macro_f(&pooled).unwrap_or((f64::NAN, f64::NAN));
                out.push(CellSummary {
                    arm: arm.clone(),
                    missing_count: count,
                    trials,
                    failed,
                    confusion: pooled,
                    micro_f,
                    macro_f,
                });
            }
        }
        out
    }

    pub fn cell(&self, arm: &str, missing_count: usize) -> Option<CellSummary> {
        self.cells()
            .into_iter()
            .find(|c| c.arm == arm && c.missing_count == missing_count)
    }

    /// `arm,fold,missing_count,trial,micro_f,macro_f`; failed trials score NaN.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("arm,fold,missing_count,trial,micro_f,macro_f\n");
        for t in &self.trials {
            let scores = t.scores();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&t.arm),
                t.fold,
                t.missing_count,
                t.trial,
                fmt_score(scores.map(|x| x.0)),
                fmt_score(scores.map(|x| x.1))
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("arm,missing_count,trials,failed,micro_f,macro_f\n");
        for c in self.cells() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&c.arm),
                c.missing_count,
                c.trials,
                c.failed,
                fmt_score(Some(c.micro_f)),
                fmt_score(Some(c.macro_f))
            );
        }
        s
    }

    pub fn training_csv(&self) -> String {
        let mut s = String::from("arm,fold,missing,epoch,loss\n");
        for r in &self.training {
            let missing: Vec<String> = r.missing.iter().map(usize::to_string).collect();
            for (e, loss) in r.epoch_losses.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{e},{}",
                    csv_field(&r.arm),
                    r.fold,
                    missing.join(" "),
                    fmt_score(Some(*loss))
                );
            }
        }
        s
    }

    /// Writes report.csv, summary.csv, training.csv and per-cell
    /// `confusion_<arm>_<count>.csv` / `recall_<arm>_<count>.csv`.
    /// Returns the written paths.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut files = vec![
            ("report.csv".to_string(), self.report_csv()),
            ("summary.csv".to_string(), self.summary_csv()),
            ("training.csv".to_string(), self.training_csv()),
        ];
        for c in self.cells() {
            let arm = slug(&c.arm);
            let header = self.labels.iter().map(|l| csv_field(l)).collect::<Vec<_>>().join(",");
            files.push((
                format!("confusion_{arm}_{}.csv", c.missing_count),
                format!("{header}\n{}", c.confusion.to_csv()),
            ));
            let mut recall = format!("{header}\n");
            for row in confusion_recall_percent(&c.confusion) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                recall.push_str(&cells.join(","));
                recall.push('\n');
            }
            files.push((format!("recall_{arm}_{}.csv", c.missing_count), recall));
        }
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = out_dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// A micro-F (or macro-F) table, arms as rows and missing counts as
/// columns, read back from `summary.csv`.
pub fn summary_table(summary_csv: &str, macro_f: bool) -> Result<String> {
    let mut rows: Vec<(String, usize, f64)> = Vec::new();
    for (i, line) in summary_csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 6 {
            return Err(Error::CorruptFile(format!("summary line {}: expected 6 fields", i + 1)));
        }
        let parse_err = |what: &str| Error::CorruptFile(format!("summary line {}: bad {what}", i + 1));
        let count: usize = fields[1].parse().map_err(|_| parse_err("missing_count"))?;
        let v: f64 = fields[if macro_f { 5 } else { 4 }]
            .parse()
            .map_err(|_| parse_err("score"))?;
        rows.push((fields[0].clone(), count, v));
    }
    let counts: BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
    let mut arms: Vec<String> = Vec::new();
    for r in &rows {
        if !arms.contains(&r.0) {
            arms.push(r.0.clone());
        }
    }
    let width = arms.iter().map(String::len).max().unwrap_or(0).max(4);
    let mut s = format!("{:width$}", if macro_f { "macro-F (%)" } else { "micro-F (%)" });
    for c in &counts {
        let _ = write!(s, " {:>7}", format!("{c}ch"));
    }
    s.push('\n');
    for arm in &arms {
        let _ = write!(s, "{arm:width$}");
        for c in &counts {
            match rows.iter().find(|r| &r.0 == arm && r.1 == *c) {
                Some(r) => {
                    let _ = write!(s, " {:>7.2}", 100.0 * r.2);
                }
                None => {
                    let _ = write!(s, " {:>7}", "-");
                }
            }
        }
        s.push('\n');
    }
    Ok(s)
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match (ch, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(arm: &str, count: usize, rows: Option<Vec<Vec<u64>>>) -> TrialRecord {
        TrialRecord {
            arm: arm.into(),
            fold: 0,
            missing_count: count,
            trial: 0,
            missing: BTreeSet::new(),
            confusion: rows.map(|r| Confusion::from_rows(&r).unwrap()),
        }
    }

    #[test]
    fn cells_pool_confusions_and_count_failures() {
        let report = ExperimentReport {
            labels: vec!["a".into(), "b".into()],
            trials: vec![
                trial("x, y", 1, Some(vec![vec![3, 1], vec![0, 0]])),
                trial("x, y", 1, Some(vec![vec![0, 0], vec![2, 4]])),
                trial("x, y", 1, None),
                trial("z", 2, None),
            ],
            training: vec![],
        };
        let cells = report.cells();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].confusion.rows(), vec![vec![3, 1], vec![2, 4]]);
        assert_eq!((cells[0].trials, cells[0].failed), (3, 1));
        assert_eq!(cells[0].micro_f, 0.7);
        assert!(cells[1].micro_f.is_nan());
        assert_eq!(report.failed_trials(), 2);
        let csv = report.report_csv();
        assert!(csv.contains("\"x, y\",0,1,0,"));
        assert!(csv.ends_with("z,0,2,0,NaN,NaN\n"));
        let table = summary_table(&report.summary_csv(), false).unwrap();
        assert!(table.contains("x, y"));
        assert!(table.contains("70.00"));
    }
}
