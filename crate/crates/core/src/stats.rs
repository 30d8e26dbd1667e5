//! Validation statistics: Fleiss' kappa, Mann-Whitney U, Pearson chi-square
//! on 2x2 tables, and per-turn mean curves with Student-t intervals.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Largest `n1 * n2` for which the Mann-Whitney p-value is enumerated exactly.
pub const EXACT_MWU_LIMIT: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("invalid ratings matrix: {0}")]
    InvalidMatrix(String),
    #[error("kappa is undefined: every rating falls in one category")]
    Degenerate,
    #[error("both groups must be non-empty")]
    EmptyGroup,
    #[error("values must be finite")]
    NonFinite,
    #[error("2x2 table has a zero expected count")]
    DegenerateTable,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Standard normal upper tail, `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log(1.0 - x) - ln_beta(a, b));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student-t quantile for probability `p` in (0, 1), by bisection on the CDF.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) || !(df > 0.0) {
        return Err(StatsError::InvalidArgument(format!("t quantile p={p} df={df}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let upper = p > 0.5;
    let target = if upper { p } else { 1.0 - p };
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < target {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(if upper { q } else { -q })
}

// ---------------------------------------------------------------------------
// Fleiss' kappa
// ---------------------------------------------------------------------------

/// Items x categories count matrix; each row sums to the rater count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    pub categories: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

impl RatingsMatrix {
    pub fn new(categories: Vec<String>, counts: Vec<Vec<u32>>) -> Result<Self, StatsError> {
        let m = Self { categories, counts };
        m.raters()?;
        Ok(m)
    }

    /// Builds a matrix from per-item labels (one label per rater).
    pub fn from_labels<T: Ord + Clone + fmt::Display>(items: &[Vec<T>]) -> Result<Self, StatsError> {
        let mut cats: Vec<T> = items.iter().flatten().cloned().collect();
        cats.sort();
        cats.dedup();
        let counts = items
            .iter()
            .map(|row| {
                cats.iter()
                    .map(|c| row.iter().filter(|v| *v == c).count() as u32)
                    .collect()
            })
            .collect();
        Self::new(cats.iter().map(|c| format!("{c}")).collect(), counts)
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    /// Rater count `k`, after checking the matrix shape.
    pub fn raters(&self) -> Result<u32, StatsError> {
        let bad = |s: &str| Err(StatsError::InvalidMatrix(s.into()));
        if self.counts.len() < 2 {
            return bad("need at least 2 items");
        }
        let width = self.categories.len();
        if width == 0 || self.counts.iter().any(|r| r.len() != width) {
            return bad("every row needs one count per category");
        }
        let k: u32 = self.counts[0].iter().sum();
        if k < 2 {
            return bad("need at least 2 raters");
        }
        if self.counts.iter().any(|r| r.iter().sum::<u32>() != k) {
            return bad("rows must all sum to the rater count");
        }
        Ok(k)
    }
}

pub fn fleiss_kappa(m: &RatingsMatrix) -> Result<f64, StatsError> {
    let k = m.raters()? as f64;
    let n = m.items() as f64;
    let width = m.categories.len();
    let mut col = vec![0u64; width];
    let mut p_bar = 0.0;
    for row in &m.counts {
        let sq: u64 = row.iter().map(|&c| (c as u64) * (c as u64)).sum();
        p_bar += (sq as f64 - k) / (k * (k - 1.0));
        for (j, &c) in row.iter().enumerate() {
            col[j] += c as u64;
        }
    }
    p_bar /= n;
    let total = n * k;
    if col.iter().any(|&c| c as f64 == total) {
        return Err(StatsError::Degenerate);
    }
    let p_e: f64 = col.iter().map(|&c| (c as f64 / total) * (c as f64 / total)).sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first group: pairs (x, y) with x > y, ties counting 1/2.
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: PMethod,
}

/// Midranks (1-based) of the concatenation of `a` and `b`.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(core::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&all);
    let r_a: f64 = ranks[..n1].iter().sum();
    let u_a = r_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let u_b = (n1 * n2) as f64 - u_a;

    let (p, method) = if n1 * n2 <= EXACT_MWU_LIMIT {
        (exact_p(&ranks, n1, n2), PMethod::Exact)
    } else {
        (normal_p(u_a, n1, n2, &ties), PMethod::Normal)
    };
    Ok(MannWhitney { u_a, u_b, p, method })
}

/// Exact two-sided p-value under the permutation distribution, ties included.
/// Counts size-m subsets of the doubled midranks by their sum, where m is the
/// smaller group.
fn exact_p(ranks: &[f64], n1: usize, n2: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(r * 2.0) as usize).collect();
    let (m, group): (usize, &[usize]) = if n1 <= n2 { (n1, &doubled[..n1]) } else { (n2, &doubled[n1..]) };
    let max_sum: usize = doubled.iter().sum();
    // dp[j][s]: subsets of size j with doubled-rank sum s.
    let mut dp = vec![vec![0f64; max_sum + 1]; m + 1];
    dp[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=m).rev() {
            let (lower, upper) = dp.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                let add = prev[s - r];
                if add != 0.0 {
                    cur[s] += add;
                }
            }
        }
    }
    let observed: usize = group.iter().sum();
    let dist = &dp[m];
    let total: f64 = dist.iter().sum();
    let le: f64 = dist[..=observed].iter().sum();
    let ge: f64 = dist[observed..].iter().sum();
    (2.0 * le.min(ge) / total).min(1.0)
}

fn normal_p(u_a: f64, n1: usize, n2: usize, ties: &[usize]) -> f64 {
    let n = (n1 + n2) as f64;
    let (n1, n2) = (n1 as f64, n2 as f64);
    let mu = n1 * n2 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| {
        let t = t as f64;
        t * t * t - t
    }).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u_a - mu).abs() - 0.5) / libm::sqrt(var);
    (2.0 * normal_sf(z)).min(1.0)
}

// ---------------------------------------------------------------------------
// Chi-square 2x2
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub chi2: f64,
    pub p: f64,
    pub df: u32,
}

/// Pearson chi-square for a 2x2 table (no continuity correction).
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<ChiSquare, StatsError> {
    let [[a, b], [c, d]] = table.map(|r| r.map(|v| v as f64));
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0.0 || r2 == 0.0 || c1 == 0.0 || c2 == 0.0 {
        return Err(StatsError::DegenerateTable);
    }
    let n = r1 + r2;
    let diff = a * d - b * c;
    let chi2 = n * diff * diff / (r1 * r2 * c1 * c2);
    let p = libm::erfc(libm::sqrt(chi2 / 2.0));
    Ok(ChiSquare { chi2, p, df: 1 })
}

// ---------------------------------------------------------------------------
// Turn curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScores {
    pub group: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedScores {
    pub sessions: Vec<SessionScores>,
    /// Only the first `truncation` turns of each session count.
    pub truncation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub group: String,
    /// 1-based turn number.
    pub turn: usize,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Single-sample bucket: no spread, so the interval collapses to the mean.
    pub degenerate: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (xs.len() - 1) as f64)
}

/// Per-group, per-turn mean with a 95% Student-t interval. Groups come out
/// in label order; empty turn buckets are left out.
pub fn turn_curves(g: &GroupedScores) -> Result<Vec<CurvePoint>, StatsError> {
    if g.truncation == 0 {
        return Err(StatsError::InvalidArgument("truncation must be at least 1".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for s in &g.sessions {
        let n = s.scores.len().min(g.truncation);
        groups.entry(s.group.as_str()).or_default().push(&s.scores[..n]);
    }
    let mut out = Vec::new();
    for (group, sessions) in groups {
        for turn in 0..g.truncation {
            let bucket: Vec<f64> = sessions.iter().filter_map(|s| s.get(turn).copied()).collect();
            if bucket.is_empty() {
                continue;
            }
            let n = bucket.len();
            let m = mean(&bucket);
            let sd = sample_sd(&bucket);
            let (lo, hi, degenerate) = if n < 2 {
                (m, m, true)
            } else {
                let t = student_t_quantile(0.975, (n - 1) as f64)?;
                let half = t * sd / libm::sqrt(n as f64);
                (m - half, m + half, false)
            };
            out.push(CurvePoint {
                group: String::from(group),
                turn: turn + 1,
                n,
                mean: m,
                sd,
                ci_low: lo,
                ci_high: hi,
                degenerate,
            });
        }
    }
    Ok(out)
}
