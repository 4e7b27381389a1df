//! Confusion matrices and the F-scores derived from them.

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Confusion {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Confusion {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.n).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Element-wise sum; both matrices must have the same class count.
    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Shape(format!(
                "cannot pool {}-class and {}-class confusions",
                self.n, other.n
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Integer counts as CSV rows (no header).
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.n {
            let cells: Vec<String> = self.row(r).iter().map(u64::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Micro-F (pooled decisions, i.e. accuracy) and macro-F (unweighted mean of
/// per-class F1, with an undefined precision or recall counted as zero).
pub fn micro_macro_f(c: &Confusion) -> Result<(f64, f64)> {
    let total = c.total();
    if c.n == 0 || total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let micro = c.trace() as f64 / total as f64;
    let mut f1_sum = 0.0;
    for k in 0..c.n {
        let tp = c.get(k, k) as f64;
        let predicted: u64 = (0..c.n).map(|r| c.get(r, k)).sum();
        let actual: u64 = c.row(k).iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        if p + r > 0.0 {
            f1_sum += 2.0 * p * r / (p + r);
        }
    }
    Ok((micro, f1_sum / c.n as f64))
}

/// Rows scaled to percentages; all-zero rows stay zero.
pub fn confusion_recall_percent(c: &Confusion) -> Vec<Vec<f64>> {
    (0..c.n)
        .map(|r| {
            let row = c.row(r);
            let sum: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if sum == 0 { 0.0 } else { 100.0 * v as f64 / sum as f64 })
                .collect()
        })
        .collect()
}
