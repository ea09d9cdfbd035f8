//! Rank tests, correlations, z-scores and box-plot summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::EvalError;

/// Largest smaller-sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: PValueMethod,
    /// Continuity-corrected z, for the normal approximation.
    pub z: Option<f64>,
    pub n_x: usize,
    pub n_y: usize,
}

/// 1-based ranks with ties replaced by their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|&&w| w == v[i]).count();
        sizes.push(j);
        i += j;
    }
    sizes
}

/// Two-sided Mann-Whitney U test with midranks.
///
/// When the smaller sample has at most [`EXACT_MAX_N`] values the p-value
/// comes from the exact permutation distribution of the observed midranks
/// (so ties are handled exactly); otherwise from the normal approximation
/// with tie and continuity corrections.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney, EvalError> {
    mann_whitney_u_with(x, y, None)
}

/// As [`mann_whitney_u`], optionally forcing the p-value method.
pub fn mann_whitney_u_with(x: &[f64], y: &[f64], method: Option<PValueMethod>) -> Result<MannWhitney, EvalError> {
    if x.is_empty() || y.is_empty() {
        return Err(EvalError::InsufficientData("Mann-Whitney needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::DegenerateInput("non-finite value in Mann-Whitney input".into()));
    }
    let (nx, ny) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let rx: f64 = ranks[..nx].iter().sum();
    let u = rx - (nx * (nx + 1)) as f64 / 2.0;
    let method = method.unwrap_or(if nx.min(ny) <= EXACT_MAX_N { PValueMethod::Exact } else { PValueMethod::NormalApprox });
    let (p, method, z) = if method == PValueMethod::Exact {
        (exact_p(&ranks, nx, u), PValueMethod::Exact, None)
    } else {
        let (p, z) = normal_p(&pooled, nx, ny, u);
        (p, PValueMethod::NormalApprox, Some(z))
    };
    Ok(MannWhitney { u, p_two_sided: p, method, z, n_x: nx, n_y: ny })
}

/// Exact two-sided p: twice the smaller tail of the permutation
/// distribution of U, capped at 1.
fn exact_p(ranks: &[f64], nx: usize, u: f64) -> f64 {
    let n = ranks.len();
    let ny = n - nx;
    // work with the smaller group; doubled midranks are integers
    let (k, u_k) = if nx <= ny { (nx, u) } else { (ny, (nx * ny) as f64 - u) };
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable();
        d[n - k..].iter().sum()
    };
    // counts[j][s]: ways to choose j items whose doubled ranks sum to s
    let mut counts = vec![vec![0u128; max_sum + 1]; k + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for j in (1..=k).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let total: u128 = counts[k].iter().sum();
    // U_k = R_k - k(k+1)/2, so 2U_k = S - k(k+1)
    let offset = (k * (k + 1)) as f64;
    let (mut le, mut ge) = (0u128, 0u128);
    for (s, &c) in counts[k].iter().enumerate() {
        if c == 0 {
            continue;
        }
        let two_u = s as f64 - offset;
        if two_u <= 2.0 * u_k + 1e-9 {
            le += c;
        }
        if two_u >= 2.0 * u_k - 1e-9 {
            ge += c;
        }
    }
    let tail = le.min(ge) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

fn normal_p(pooled: &[f64], nx: usize, ny: usize, u: f64) -> (f64, f64) {
    let n = (nx + ny) as f64;
    let (nxf, nyf) = (nx as f64, ny as f64);
    let mu = nxf * nyf / 2.0;
    let tie_term: f64 = tie_sizes(pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nxf * nyf / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return (1.0, 0.0);
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    ((2.0 * std.sf(z)).min(1.0), z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p from a t distribution with n − 2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DegenerateInput(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(EvalError::InsufficientData(format!("correlation needs n >= 3, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateInput("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation { r, p: correlation_p(r, n), n })
}

/// Pearson correlation of midranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Correlation, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DegenerateInput(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    pearson_r(&midranks(x), &midranks(y))
}

fn correlation_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScores {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub threshold: f64,
    /// `(index, z)` of every value with `|z| > threshold`.
    pub flagged: Vec<(usize, f64)>,
}

pub fn zscore_outliers(values: &[f64], threshold: f64) -> Result<ZScores, EvalError> {
    let n = values.len();
    if n < 3 {
        return Err(EvalError::InsufficientData(format!("z-scores need n >= 3, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if sd == 0.0 {
        tracing::warn!("all values equal; no z-score outliers");
        return Ok(ZScores { mean, sd, threshold, flagged: Vec::new() });
    }
    let flagged = values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, (v - mean) / sd))
        .filter(|(_, z)| z.abs() > threshold)
        .collect();
    Ok(ZScores { mean, sd, threshold, flagged })
}

/// Distribution summary with Tukey whiskers (1.5·IQR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub fliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::InsufficientData("summary of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
    Ok(Summary {
        n,
        mean,
        sd,
        min: v[0],
        q1,
        median,
        q3,
        max: v[n - 1],
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        fliers: v.iter().copied().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
    })
}
