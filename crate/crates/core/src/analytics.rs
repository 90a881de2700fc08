//! Post-hoc accuracy-series metrics: threshold epochs, windowed
//! mean/volatility, monotonic-improvement fractions, and run comparison.

use crate::error::{Error, Result};

/// Per-epoch accuracies in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySeries {
    values: Vec<f64>,
}

impl AccuracySeries {
    pub fn new(values: Vec<f64>) -> Result<AccuracySeries> {
        if values.is_empty() {
            return Err(Error::usage("accuracy series is empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 100.0) {
            return Err(Error::usage(
                "accuracy series must be finite percentages in [0,100]",
            ));
        }
        Ok(AccuracySeries { values })
    }

    /// Builds from fractional accuracies in [0,1] (as the harness CSV stores them).
    pub fn from_fractions(fractions: &[f64]) -> Result<AccuracySeries> {
        AccuracySeries::new(fractions.iter().map(|v| v * 100.0).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// Smallest 0-based epoch whose value reaches `threshold`; `None` if the
/// series never gets there.
pub fn threshold_epoch(series: &AccuracySeries, threshold: f64) -> Option<usize> {
    series.values().iter().position(|&v| v >= threshold)
}

/// Sample mean and population standard deviation over `[start, end)`.
pub fn window_stats(series: &AccuracySeries, start: usize, end: usize) -> Result<(f64, f64)> {
    if start >= end || end > series.len() {
        return Err(Error::usage(format!(
            "window {start}:{end} invalid for series of {}",
            series.len()
        )));
    }
    let w = &series.values()[start..end];
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Fractions over the series, per consecutive pair (first two) and per
/// epoch t >= 1 against the running max of strictly earlier epochs (third).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicStats {
    /// v[t+1] > v[t]
    pub improve_frac: f64,
    /// v[t+1] >= v[t] - tol
    pub stable_frac: f64,
    /// v[t] >= max(v[0..t]) - tol
    pub stable_vs_max_frac: f64,
}

pub fn monotonic_stats(series: &AccuracySeries, tol: f64) -> Result<MonotonicStats> {
    let v = series.values();
    if v.len() < 2 {
        return Err(Error::usage("monotonic stats need at least two epochs"));
    }
    let pairs = (v.len() - 1) as f64;
    let mut improve = 0usize;
    let mut stable = 0usize;
    for w in v.windows(2) {
        if w[1] > w[0] {
            improve += 1;
        }
        if w[1] >= w[0] - tol {
            stable += 1;
        }
    }
    let mut vs_max = 0usize;
    let mut running_max = v[0];
    for &x in &v[1..] {
        if x >= running_max - tol {
            vs_max += 1;
        }
        if x > running_max {
            running_max = x;
        }
    }
    Ok(MonotonicStats {
        improve_frac: improve as f64 / pairs,
        stable_frac: stable as f64 / pairs,
        stable_vs_max_frac: vs_max as f64 / pairs,
    })
}

/// Mean pointwise (candidate - baseline) over `[start, end)`.
pub fn compare_runs(
    candidate: &AccuracySeries,
    baseline: &AccuracySeries,
    start: usize,
    end: usize,
) -> Result<f64> {
    if candidate.len() != baseline.len() {
        return Err(Error::usage(format!(
            "series lengths differ: {} vs {}",
            candidate.len(),
            baseline.len()
        )));
    }
    if start >= end || end > candidate.len() {
        return Err(Error::usage(format!(
            "range {start}:{end} invalid for series of {}",
            candidate.len()
        )));
    }
    let diff: f64 = candidate.values()[start..end]
        .iter()
        .zip(&baseline.values()[start..end])
        .map(|(c, b)| c - b)
        .sum();
    Ok(diff / (end - start) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> AccuracySeries {
        AccuracySeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn threshold_epoch_finds_first_crossing() {
        let s = series(&[50.0, 70.0, 91.0, 89.0]);
        assert_eq!(threshold_epoch(&s, 90.0), Some(2));
        assert_eq!(threshold_epoch(&s, 99.0), None);
        // boundary inclusive
        let flat = series(&[80.0, 80.0]);
        assert_eq!(threshold_epoch(&flat, 80.0), Some(0));
    }

    #[test]
    fn threshold_epoch_is_monotone_in_threshold() {
        let s = series(&[10.0, 55.0, 43.0, 80.0, 78.0, 95.0]);
        let mut last = Some(0);
        for t in [5.0, 20.0, 50.0, 60.0, 80.0, 90.0, 95.0, 99.0] {
            let e = threshold_epoch(&s, t);
            if let (Some(a), Some(b)) = (last, e) {
                assert!(b >= a, "threshold {t} moved earlier");
            }
            if last.is_none() {
                assert!(e.is_none(), "higher threshold cannot be reached later");
            }
            last = e;
        }
    }

    #[test]
    fn window_stats_constant_and_two_point() {
        let s = series(&[1.0, 1.0, 1.0, 1.0]);
        let (mean, sd) = window_stats(&s, 0, 4).unwrap();
        assert_eq!((mean, sd), (1.0, 0.0));
        let s = series(&[0.0, 2.0]);
        let (mean, sd) = window_stats(&s, 0, 2).unwrap();
        assert_eq!((mean, sd), (1.0, 1.0));
    }

    #[test]
    fn window_stats_matches_two_pass_oracle() {
        // deterministic pseudo-random series
        let mut x = 0.5f64;
        let v: Vec<f64> = (0..1000)
            .map(|_| {
                x = (x * 997.0 + 0.123).fract();
                x * 100.0
            })
            .collect();
        let s = series(&v);
        let (mean, sd) = window_stats(&s, 100, 900).unwrap();
        let w = &v[100..900];
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / w.len() as f64;
        assert!((mean - m).abs() < 1e-9);
        assert!((sd - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn window_stats_rejects_empty_window() {
        let s = series(&[1.0, 2.0]);
        assert!(window_stats(&s, 1, 1).is_err());
        assert!(window_stats(&s, 0, 3).is_err());
    }

    #[test]
    fn monotonic_stats_strictly_increasing() {
        let s = series(&[1.0, 2.0, 3.0, 4.0]);
        let m = monotonic_stats(&s, 0.2).unwrap();
        assert_eq!(
            (m.improve_frac, m.stable_frac, m.stable_vs_max_frac),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn monotonic_stats_within_tolerance() {
        let s = series(&[90.0, 89.9]);
        let m = monotonic_stats(&s, 0.2).unwrap();
        assert_eq!(
            (m.improve_frac, m.stable_frac, m.stable_vs_max_frac),
            (0.0, 1.0, 1.0)
        );
    }

    #[test]
    fn monotonic_stats_hand_enumeration() {
        // pairs: 90->88 (no, no), 88->91 (yes, yes), 91->90.9 (no, yes)
        // vs max: 88 >= 89.8? no; 91 >= 89.8? yes; 90.9 >= 90.8? yes
        let s = series(&[90.0, 88.0, 91.0, 90.9]);
        let m = monotonic_stats(&s, 0.2).unwrap();
        assert!((m.improve_frac - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.stable_frac - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.stable_vs_max_frac - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn improvement_implies_stability() {
        let seqs = [
            vec![10.0, 30.0, 20.0, 20.0, 50.0, 49.9],
            vec![5.0, 5.0, 5.0],
            vec![90.0, 10.0, 90.0, 10.0],
        ];
        for v in seqs {
            let m = monotonic_stats(&series(&v), 0.2).unwrap();
            assert!(m.improve_frac <= m.stable_frac);
            for f in [m.improve_frac, m.stable_frac, m.stable_vs_max_frac] {
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn compare_runs_mean_difference() {
        let a = series(&[10.0, 20.0, 30.0]);
        let b = series(&[10.0, 20.0, 30.0]);
        assert_eq!(compare_runs(&a, &b, 0, 3).unwrap(), 0.0);
        let c = series(&[13.0, 23.0, 33.0]);
        assert_eq!(compare_runs(&c, &b, 0, 3).unwrap(), 3.0);
        // range restriction equals full computation on truncated inputs
        let d = series(&[13.0, 23.0]);
        let e = series(&[10.0, 20.0]);
        assert_eq!(
            compare_runs(&c, &b, 0, 2).unwrap(),
            compare_runs(&d, &e, 0, 2).unwrap()
        );
    }

    #[test]
    fn compare_runs_rejects_length_mismatch() {
        let a = series(&[1.0, 2.0]);
        let b = series(&[1.0]);
        assert!(compare_runs(&a, &b, 0, 1).is_err());
    }

    #[test]
    fn series_validation() {
        assert!(AccuracySeries::new(vec![]).is_err());
        assert!(AccuracySeries::new(vec![101.0]).is_err());
        assert!(AccuracySeries::new(vec![f64::NAN]).is_err());
        let s = AccuracySeries::from_fractions(&[0.5, 0.75]).unwrap();
        assert_eq!(s.values(), &[50.0, 75.0]);
    }
}
