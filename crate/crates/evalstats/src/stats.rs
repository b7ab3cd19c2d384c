//! Friedman, Wilcoxon signed-rank, Holm and Cohen's kappa.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Friedman,
    WilcoxonExact,
    WilcoxonNormal,
}

/// Zero-difference handling in the signed-rank test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Discard zero differences before ranking.
    #[default]
    Drop,
    /// Rank zeros with the rest, then leave their ranks out of both sums.
    Pratt,
}

impl std::str::FromStr for ZeroMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(ZeroMethod::Drop),
            "pratt" => Ok(ZeroMethod::Pratt),
            other => Err(format!("unknown zero method {other:?} (expected drop or pratt)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Tie-corrected chi-square (Friedman) or positive rank sum W+ (Wilcoxon).
    pub statistic: f64,
    pub df: u32,
    pub p: f64,
    /// Kendall's W for Friedman; absent for Wilcoxon.
    pub effect: Option<f64>,
    /// Blocks (Friedman) or non-zero pairs (Wilcoxon) that entered the test.
    pub n: usize,
    pub method: Method,
    /// Set when the data carry no information (every difference zero, or
    /// every block fully tied); `p` is then 1.
    pub degenerate: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {min} {what}, got {got}")]
    TooFew { what: &'static str, min: usize, got: usize },
    #[error("incomplete block: row {row} has {got} cells, expected {expected}")]
    IncompleteBlock { row: usize, got: usize, expected: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("kappa is undefined when chance agreement is 1")]
    UndefinedKappa,
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups in `values`.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        out.push(j);
        i += j;
    }
    out
}

/// Friedman test over `rows` (blocks) by columns (treatments), tie-corrected.
pub fn friedman_test(rows: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let n = rows.len();
    if n < 2 {
        return Err(StatsError::TooFew { what: "blocks", min: 2, got: n });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(StatsError::TooFew { what: "treatments", min: 2, got: k });
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for (r, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(StatsError::IncompleteBlock { row: r, got: row.len(), expected: k });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(r * k + c));
        }
        for (s, rank) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += rank;
        }
        tie_term += tie_sizes(row).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let df = (k - 1) as u32;
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            df,
            p: 1.0,
            effect: Some(0.0),
            n,
            method: Method::Friedman,
            degenerate: true,
        });
    }
    let ssq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * ssq - 3.0 * nf * (kf + 1.0);
    let statistic = (raw / correction).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    Ok(TestResult {
        statistic,
        df,
        p: chi.sf(statistic).clamp(0.0, 1.0),
        effect: Some(kendall_w(statistic, n, k)),
        n,
        method: Method::Friedman,
        degenerate: false,
    })
}

/// Kendall's W from a Friedman statistic: `chi2 / (n (k - 1))`.
pub fn kendall_w(chi2: f64, n: usize, k: usize) -> f64 {
    chi2 / (n as f64 * (k as f64 - 1.0))
}

/// Two-sided Wilcoxon signed-rank test on the differences `x - y`.
///
/// Exact over all sign assignments (given the tied ranks) when at most
/// [`EXACT_MAX`] differences are non-zero; normal approximation with
/// continuity correction otherwise.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], zeros: ZeroMethod) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::TooFew { what: "pairs", min: 1, got: 0 });
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if let Some(i) = diffs.iter().position(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let ranked: Vec<f64> = match zeros {
        ZeroMethod::Drop => diffs.iter().copied().filter(|d| *d != 0.0).collect(),
        ZeroMethod::Pratt => diffs.clone(),
    };
    let ranks = average_ranks(&ranked.iter().map(|d| d.abs()).collect::<Vec<_>>());
    // (rank, positive) for every non-zero difference.
    let signed: Vec<(f64, bool)> = ranked
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d != 0.0)
        .map(|(d, r)| (*r, *d > 0.0))
        .collect();
    let m = signed.len();
    if m == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            df: 0,
            p: 1.0,
            effect: None,
            n: 0,
            method: Method::WilcoxonExact,
            degenerate: true,
        });
    }
    let w_plus: f64 = signed.iter().filter(|s| s.1).map(|s| s.0).sum();
    let rank_values: Vec<f64> = signed.iter().map(|s| s.0).collect();
    let (p, method) = if m <= EXACT_MAX {
        (exact_signed_rank_p(&rank_values, w_plus), Method::WilcoxonExact)
    } else {
        (normal_signed_rank_p(&rank_values, w_plus), Method::WilcoxonNormal)
    };
    Ok(TestResult {
        statistic: w_plus,
        df: 0,
        p,
        effect: None,
        n: m,
        method,
        degenerate: false,
    })
}

/// Exact two-sided p of `w_plus` under random signs on `ranks`.
///
/// Ranks are averages of integers, so doubling makes them integral and the
/// null distribution is a subset-sum count.
fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

fn normal_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let sd = (ranks.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt();
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Holm step-down adjustment; output is in input order.
///
/// # Panics
/// If any p-value lies outside `[0, 1]`.
pub fn holm_adjust(pvalues: &[f64]) -> Vec<f64> {
    assert!(
        pvalues.iter().all(|p| (0.0..=1.0).contains(p)),
        "p-values must lie in [0, 1]"
    );
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * pvalues[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

/// Cohen's kappa for two raters' labels on the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::TooFew { what: "items", min: 1, got: 0 });
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut margins: BTreeMap<&T, (f64, f64)> = BTreeMap::new();
    for x in a {
        margins.entry(x).or_default().0 += 1.0;
    }
    for y in b {
        margins.entry(y).or_default().1 += 1.0;
    }
    let expected: f64 = margins.values().map(|(ca, cb)| (ca / n) * (cb / n)).sum();
    if (1.0 - expected).abs() < f64::EPSILON {
        return Err(StatsError::UndefinedKappa);
    }
    Ok((observed - expected) / (1.0 - expected))
}
