//! Improvement statistics, best-after-N-queries curves and bootstrap
//! intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    percentile_sorted(&sorted(xs), 0.5)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Adjusted Fisher-Pearson skewness `G1`; 0 for fewer than 3 samples or
/// zero variance.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return 0.0;
    }
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    // Rounding noise on constant data is not spread.
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m2 <= (1e-12 * scale).powi(2) {
        return 0.0;
    }
    let g1 = m3 / m2.powf(1.5);
    (n * (n - 1.0)).sqrt() / (n - 2.0) * g1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    /// `bins` equal bins over `[lo, hi]`; the last bin is closed.
    pub fn new(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
        let width = (hi - lo) / bins as f64;
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|i| HistogramBin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
                count: 0,
            })
            .collect();
        let (mut below, mut above) = (0, 0);
        for &x in xs {
            if x < lo {
                below += 1;
            } else if x > hi {
                above += 1;
            } else {
                let i = (((x - lo) / width) as usize).min(bins - 1);
                out[i].count += 1;
            }
        }
        Histogram { bins: out, below, above }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum::<usize>() + self.below + self.above
    }

    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for b in &self.bins {
            s.push_str(&format!("{:.6},{:.6},{}\n", b.lo, b.hi, b.count));
        }
        s
    }
}

/// Percentile interval holding `level` of the mass, centered on the median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Histogram range for improvements: plus or minus 12.5 points.
pub const IMPROVEMENT_RANGE: f64 = 0.125;
pub const IMPROVEMENT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementStats {
    pub count: usize,
    pub median: f64,
    pub intervals: Vec<Interval>,
    pub skew: f64,
    pub histogram: Histogram,
}

/// Statistics of `final - initial` accuracy differences.
pub fn improvement_stats(improvements: &[f64]) -> Result<ImprovementStats, StatsError> {
    if improvements.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: improvements.len(),
        });
    }
    let s = sorted(improvements);
    let intervals = [0.5, 0.8, 0.95]
        .iter()
        .map(|&level| Interval {
            level,
            lo: percentile_sorted(&s, 0.5 - level / 2.0),
            hi: percentile_sorted(&s, 0.5 + level / 2.0),
        })
        .collect();
    Ok(ImprovementStats {
        count: s.len(),
        median: percentile_sorted(&s, 0.5),
        intervals,
        // Sorted input makes the moment sums independent of record order.
        skew: skewness(&s),
        histogram: Histogram::new(&s, -IMPROVEMENT_RANGE, IMPROVEMENT_RANGE, IMPROVEMENT_BINS),
    })
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    samples: &[f64],
    confidence: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64), StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok((percentile_sorted(&means, tail), percentile_sorted(&means, 1.0 - tail)))
}

pub const BOOTSTRAP_RESAMPLES: usize = 5_000;

/// One run: `(queries charged, accuracy)` per episode in order.
pub type Run = Vec<(u64, f64)>;

/// Best accuracy among episodes whose cumulative charge fits in `budget`.
pub fn best_within(run: &[(u64, f64)], budget: u64) -> Option<f64> {
    let mut spent = 0u64;
    let mut best: Option<f64> = None;
    for &(q, acc) in run {
        spent += q;
        if spent > budget {
            break;
        }
        best = Some(best.map_or(acc, |b: f64| b.max(acc)));
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: u64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryCurve {
    pub points: Vec<CurvePoint>,
}

impl QueryCurve {
    /// `budget,mean,ci_lo,ci_hi` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("budget,mean,ci_lo,ci_hi\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", p.budget, p.mean, p.ci_lo, p.ci_hi));
        }
        s
    }

    pub fn at(&self, budget: u64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.budget == budget)
    }
}

/// Mean best-so-far over runs per budget with bootstrap intervals. Budgets
/// where no run has data are left out; runs without data at a budget do
/// not count toward it. A single contributing run gives a zero-width
/// interval.
pub fn best_after_queries<R: Rng + ?Sized>(runs: &[Run], budgets: &[u64], resamples: usize, rng: &mut R) -> QueryCurve {
    let mut points = Vec::new();
    for &budget in budgets {
        if budget == 0 {
            continue;
        }
        let vals: Vec<f64> = runs.iter().filter_map(|r| best_within(r, budget)).collect();
        if vals.is_empty() {
            continue;
        }
        let m = mean(&vals);
        let (ci_lo, ci_hi) = bootstrap_ci(&vals, 0.95, resamples, rng).unwrap_or((m, m));
        points.push(CurvePoint {
            budget,
            mean: m,
            ci_lo,
            ci_hi,
            runs: vals.len(),
        });
    }
    QueryCurve { points }
}
