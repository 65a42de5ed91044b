//! Quality measures over atomic measurements.

use crate::error::{Error, Result};
use crate::stopping::QueryOutcome;

/// Fraction of truths inside their closed interval.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    aligned(intervals.len(), truths.len())?;
    if truths.is_empty() {
        return Err(Error::invalid("coverage of an empty set"));
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

pub fn rmse(points: &[f64], truths: &[f64]) -> Result<f64> {
    aligned(points.len(), truths.len())?;
    if truths.is_empty() {
        return Err(Error::invalid("rmse of an empty set"));
    }
    let ss: f64 = points.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / truths.len() as f64).sqrt())
}

/// `1 - sum(stopped) / sum(totals)`.
pub fn time_savings(stopped: &[u64], totals: &[u64]) -> Result<f64> {
    aligned(stopped.len(), totals.len())?;
    if let Some(i) = stopped.iter().zip(totals).position(|(s, t)| s > t) {
        return Err(Error::invalid(format!("query {i} stopped after its full search")));
    }
    let total: u64 = totals.iter().sum();
    if total == 0 {
        return Err(Error::invalid("time savings with zero total work"));
    }
    Ok(1.0 - stopped.iter().sum::<u64>() as f64 / total as f64)
}

/// Fraction of audited outcomes whose answer is exact.
pub fn exact_ratio(outcomes: &[QueryOutcome]) -> Option<f64> {
    ratio(outcomes.iter().map(|o| o.answer_exact))
}

/// Fraction of audited outcomes whose majority class is the exact one.
pub fn exact_class_ratio(outcomes: &[QueryOutcome]) -> Option<f64> {
    ratio(outcomes.iter().map(|o| o.was_exact_class))
}

fn ratio(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for f in flags {
        let f = f?;
        n += 1;
        hits += usize::from(f);
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { expected: a, actual: b });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[(0.0, 2.0), (0.0, 1.0)], &[1.0, 1.5]).unwrap(), 0.5);
        assert_eq!(coverage(&[(f64::NEG_INFINITY, f64::INFINITY); 3], &[1.0, -4.0, 9.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[(1.0, 1.0), (2.5, 2.5)], &[1.0, 2.5]).unwrap(), 1.0);
        assert!(coverage(&[(0.0, 1.0)], &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        let a = rmse(&[1.0, 5.0, 2.0], &[0.0, 4.5, 3.0]).unwrap();
        let b = rmse(&[2.0, 1.0, 5.0], &[3.0, 0.0, 4.5]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn savings_examples() {
        assert_eq!(time_savings(&[100], &[400]).unwrap(), 0.75);
        assert_eq!(time_savings(&[400, 10], &[400, 10]).unwrap(), 0.0);
        assert_eq!(time_savings(&[1, 1], &[1, 1]).unwrap(), 0.0);
        assert!(time_savings(&[5], &[4]).is_err());
        assert!(time_savings(&[0], &[0]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
