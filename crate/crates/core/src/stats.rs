//! Monte Carlo summary statistics and SE-guarded verdicts.

use serde::Serialize;

/// Mean with standard error over replicates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

impl Summary {
    pub fn from_slice(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "need at least two replicates for a standard error");
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        Self {
            n,
            mean,
            se: (var / n as f64).sqrt(),
        }
    }

    /// Three-standard-error half width.
    pub fn half_width(&self) -> f64 {
        3.0 * self.se
    }
}

/// Sample variance as an estimate with its own standard error
/// (moment-based: `Var(s^2) ~ (m4 - s^4) / n`).
pub fn variance_summary(values: &[f64]) -> Summary {
    let n = values.len();
    assert!(n >= 2);
    let mean = values.iter().sum::<f64>() / n as f64;
    let s2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
    let var_of_var = ((m4 - s2 * s2) / n as f64).max(0.0);
    Summary {
        n,
        mean: s2,
        se: var_of_var.sqrt(),
    }
}

/// z-score of the difference between two independent estimates.
pub fn z_diff(a: &Summary, b: &Summary) -> f64 {
    let denom = (a.se * a.se + b.se * b.se).sqrt();
    if denom == 0.0 {
        if a.mean == b.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.mean - b.mean) / denom
    }
}

/// Median with a distribution-free confidence interval from order statistics
/// (normal approximation to the binomial ranks at `z` standard deviations).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn median_ci(values: &[f64], z: f64) -> MedianCi {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let half = z * (n as f64).sqrt() / 2.0;
    let lo_idx = ((n as f64 - 1.0) / 2.0 - half).floor().max(0.0) as usize;
    let hi_idx = (((n as f64 - 1.0) / 2.0 + half).ceil() as usize).min(n - 1);
    MedianCi {
        median,
        lo: sorted[lo_idx],
        hi: sorted[hi_idx],
    }
}

/// Outcome of a statistical assertion. Statistical verdicts are ordinary
/// results, never crashes; `Inconclusive` means the replicate budget did not
/// resolve the effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// SE-guarded monotone-trend check over `(value, lo, hi)` rows.
///
/// Consecutive rows are compared only when their intervals do not overlap:
/// a disjoint pair ordered against the trend fails, any overlapping pair
/// leaves the verdict inconclusive, and a fully disjoint ordered sequence
/// passes. MC noise therefore cannot flip a verdict to fail.
pub fn trend_verdict(rows: &[(f64, f64, f64)], direction: Direction) -> Verdict {
    let mut any_overlap = false;
    for w in rows.windows(2) {
        let (_, lo_a, hi_a) = w[0];
        let (_, lo_b, hi_b) = w[1];
        let disjoint_up = lo_b > hi_a;
        let disjoint_down = hi_b < lo_a;
        match direction {
            Direction::Increasing => {
                if disjoint_down {
                    return Verdict::Fail;
                }
                if !disjoint_up {
                    any_overlap = true;
                }
            }
            Direction::Decreasing => {
                if disjoint_up {
                    return Verdict::Fail;
                }
                if !disjoint_down {
                    any_overlap = true;
                }
            }
        }
    }
    if any_overlap {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_has_zero_se() {
        let s = Summary::from_slice(&[2.0; 50]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.se, 0.0);
    }

    #[test]
    fn summary_matches_hand_computation() {
        let s = Summary::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-12);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn median_ci_brackets_true_median() {
        let values: Vec<f64> = (0..1001).map(|i| i as f64).collect();
        let ci = median_ci(&values, 3.0);
        assert_eq!(ci.median, 500.0);
        assert!(ci.lo < 500.0 && ci.hi > 500.0);
        assert!(ci.hi - ci.lo < 120.0);
    }

    #[test]
    fn trend_detects_order_overlap_and_reversal() {
        let up = [(1.0, 0.9, 1.1), (2.0, 1.9, 2.1), (3.0, 2.9, 3.1)];
        assert_eq!(trend_verdict(&up, Direction::Increasing), Verdict::Pass);
        assert_eq!(trend_verdict(&up, Direction::Decreasing), Verdict::Fail);

        let overlap = [(1.0, 0.5, 1.5), (1.2, 0.9, 1.6)];
        assert_eq!(
            trend_verdict(&overlap, Direction::Increasing),
            Verdict::Inconclusive
        );
    }

    #[test]
    fn z_diff_zero_for_identical() {
        let a = Summary::from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(z_diff(&a, &a), 0.0);
    }
}
