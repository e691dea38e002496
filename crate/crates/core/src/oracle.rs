//! Literal evaluations of the run-indicator formulas for persistent Betti
//! numbers. These are deliberately slow and share no code with the sweep in
//! [`crate::diagram`]; tests use them as ground truth.
//!
//! Indices are one-based as in the formulas: `x_{0} = x_{n+1} = +inf`.
//!
//! Every indicator factors as `1{run max <= t, flanks > t} * 1{run min <= s}`.
//! The `*_firing_minima` functions evaluate the `t`-part of every term once and
//! return the minima of the runs that pass, so `beta^{s,t}` for a whole row of
//! `s` values is the number of returned minima that are `<= s`.

use crate::diagram::{Rectangle, TimeSeries};
use crate::error::{Error, Result};

fn check_thresholds(s: f64, t: f64) -> Result<()> {
    if s.is_nan() || t.is_nan() || s > t {
        Err(Error::InvalidThresholds { s, t })
    } else {
        Ok(())
    }
}

fn check_level(t: f64) -> Result<()> {
    if t.is_nan() || t == f64::INFINITY {
        Err(Error::DomainError(format!("level t = {t} must be finite")))
    } else {
        Ok(())
    }
}

fn count_at_most(minima: &[f64], s: f64) -> usize {
    minima.iter().filter(|&&m| m <= s).count()
}

/// Minimum of the run `x_j .. x_{j+i-1}` if the run stays at or below `t` and
/// both flanks exceed `t`; `None` otherwise.
fn c_run(series: &TimeSeries, i: usize, j: usize, t: f64) -> Option<f64> {
    if series.padded(j - 1).min(series.padded(j + i)) <= t {
        return None;
    }
    let mut run_min = f64::INFINITY;
    for k in j..j + i {
        let x = series.padded(k);
        if x > t {
            return None;
        }
        run_min = run_min.min(x);
    }
    Some(run_min)
}

/// `C^n_{i,j}(s, t)`: the run `x_j .. x_{j+i-1}` lies at or below `t`, reaches
/// `s`, and both flanking values exceed `t`.
pub fn c_term(series: &TimeSeries, i: usize, j: usize, s: f64, t: f64) -> Result<bool> {
    check_thresholds(s, t)?;
    let n = series.len();
    if i == 0 || j == 0 || j + i - 1 > n {
        return Err(Error::IndexOutOfRange(format!(
            "run i = {i}, j = {j} does not fit in n = {n}"
        )));
    }
    Ok(c_run(series, i, j, t).is_some_and(|m| m <= s))
}

/// The `t`-part of `Y^m_{j,n}`: the minimum of the (unique) run starting at `j`
/// of length at most `cap` that stays at or below `t` and is flanked above `t`.
fn y_run(series: &TimeSeries, j: usize, cap: usize, t: f64) -> Option<f64> {
    let mut run_min = f64::INFINITY;
    let mut fired = None;
    for i in 1..=cap {
        let x = series.padded(j + i - 1);
        if x > t {
            // Every longer run also exceeds t.
            break;
        }
        run_min = run_min.min(x);
        if series.padded(j - 1).min(series.padded(j + i)) > t {
            debug_assert!(fired.is_none(), "two run lengths fired at j = {j}");
            fired = Some(run_min);
        }
    }
    fired
}

/// `Y^m_{j,n}(s, t)`: sum of `C_{i,j}` over run lengths `i = 1..=m`. `m = None`
/// means no cap, which is the same as `m = n - j + 1`. At most one term fires.
pub fn y_term(series: &TimeSeries, j: usize, m: Option<usize>, s: f64, t: f64) -> Result<u8> {
    check_thresholds(s, t)?;
    let n = series.len();
    if j == 0 || j > n {
        return Err(Error::IndexOutOfRange(format!("j = {j} outside 1..={n}")));
    }
    let cap = m.unwrap_or(n - j + 1).min(n - j + 1);
    Ok(u8::from(y_run(series, j, cap, t).is_some_and(|min| min <= s)))
}

/// Firing-run minima of the double sum over `i = 1..=n`, `j = 1..=n-i+1`,
/// enumerated term by term in that order.
pub fn bruteforce_firing_minima(series: &TimeSeries, t: f64) -> Result<Vec<f64>> {
    check_level(t)?;
    let n = series.len();
    let mut minima = Vec::new();
    for i in 1..=n {
        for j in 1..=n - i + 1 {
            if series.padded(j - 1).min(series.padded(j + i)) <= t {
                continue;
            }
            let run = &series.values()[j - 1..j + i - 1];
            if run.iter().all(|&x| x <= t) {
                minima.push(run.iter().cloned().fold(f64::INFINITY, f64::min));
            }
        }
    }
    Ok(minima)
}

/// Firing-run minima of `sum_j Y^{n-j+1}_{j,n}`.
pub fn y_firing_minima(series: &TimeSeries, t: f64) -> Result<Vec<f64>> {
    check_level(t)?;
    let n = series.len();
    Ok((1..=n).filter_map(|j| y_run(series, j, n - j + 1, t)).collect())
}

/// Firing-run minima of `sum_j sum_i C^n_{i,j}`, with the inner loop stopped
/// once the run contains a value above `t` (all further terms vanish).
pub fn c_firing_minima(series: &TimeSeries, t: f64) -> Result<Vec<f64>> {
    check_level(t)?;
    let n = series.len();
    let mut minima = Vec::new();
    for j in 1..=n {
        for i in 1..=n - j + 1 {
            if series.padded(j + i - 1) > t {
                break;
            }
            minima.extend(c_run(series, i, j, t));
        }
    }
    Ok(minima)
}

fn betti_from<F>(series: &TimeSeries, s: f64, t: f64, minima: F) -> Result<usize>
where
    F: FnOnce(&TimeSeries, f64) -> Result<Vec<f64>>,
{
    check_thresholds(s, t)?;
    if t == f64::INFINITY {
        let min = series.values().iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(usize::from(min <= s));
    }
    Ok(count_at_most(&minima(series, t)?, s))
}

/// `beta^{s,t}_{0,n}` by the double sum over run lengths `i` and starts `j`.
/// For `t = +inf` this is `1{min <= s}`.
pub fn betti_bruteforce(series: &TimeSeries, s: f64, t: f64) -> Result<usize> {
    betti_from(series, s, t, bruteforce_firing_minima)
}

/// `sum_{j=1}^n Y^{n-j+1}_{j,n}(s, t)`.
pub fn betti_by_y_terms(series: &TimeSeries, s: f64, t: f64) -> Result<usize> {
    betti_from(series, s, t, y_firing_minima)
}

/// `sum_{i,j} C^n_{i,j}(s, t)`.
pub fn betti_by_c_terms(series: &TimeSeries, s: f64, t: f64) -> Result<usize> {
    betti_from(series, s, t, c_firing_minima)
}

/// Which literal formula to evaluate in [`betti_row`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    DoubleSum,
    YTerms,
    CTerms,
}

/// `beta^{s,t}` for every `s` in `s_values` (each must be `<= t`) at one level `t`.
pub fn betti_row(
    series: &TimeSeries,
    formula: Formula,
    t: f64,
    s_values: &[f64],
) -> Result<Vec<usize>> {
    for &s in s_values {
        check_thresholds(s, t)?;
    }
    if t == f64::INFINITY {
        let min = series.values().iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(s_values.iter().map(|&s| usize::from(min <= s)).collect());
    }
    let minima = match formula {
        Formula::DoubleSum => bruteforce_firing_minima(series, t)?,
        Formula::YTerms => y_firing_minima(series, t)?,
        Formula::CTerms => c_firing_minima(series, t)?,
    };
    Ok(s_values.iter().map(|&s| count_at_most(&minima, s)).collect())
}

/// Number of diagram points in `r` from double-sum Betti numbers:
/// `beta(s2, t1) - beta(s2, t2) - beta(s1, t1) + beta(s1, t2)`. Terms at
/// `s = -inf` vanish, and so do terms at `t = +inf`, since no death exceeds
/// `+inf`.
pub fn rectangle_count_bruteforce(series: &TimeSeries, r: &Rectangle) -> Result<i64> {
    let (s1, s2, t1, t2) = r.coords();
    let beta = |s: f64, t: f64| -> Result<i64> {
        if s == f64::NEG_INFINITY || t == f64::INFINITY {
            Ok(0)
        } else {
            Ok(betti_bruteforce(series, s, t)? as i64)
        }
    };
    Ok(beta(s2, t1)? - beta(s2, t2)? - beta(s1, t1)? + beta(s1, t2)?)
}

/// `sum_{i=1}^n (n - i + 1) a^i` in closed form, for `0 < a <= 1`.
pub fn geometric_weighted_sum(a: f64, n: u64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::DomainError(format!("a = {a} outside (0, 1]")));
    }
    let nf = n as f64;
    if a == 1.0 {
        return Ok(nf * (nf + 1.0) / 2.0);
    }
    let b = 1.0 / a;
    Ok((nf * b - (nf + 1.0) + a.powf(nf)) / ((b - 1.0) * (b - 1.0)))
}

/// Grid of thresholds on which Betti numbers of `series` can change: every
/// distinct value, midpoints between consecutive distinct values, and one point
/// beyond each end.
pub fn threshold_grid(series: &TimeSeries) -> Vec<f64> {
    let mut v = series.values().to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut grid = Vec::with_capacity(2 * v.len() + 1);
    grid.push(v[0] - 1.0);
    for w in v.windows(2) {
        grid.push(w[0]);
        grid.push(0.5 * (w[0] + w[1]));
    }
    let last = *v.last().expect("non-empty");
    grid.push(last);
    grid.push(last + 1.0);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::TiePolicy;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::strict(v.to_vec()).unwrap()
    }

    #[test]
    fn bruteforce_examples() {
        let x = ts(&[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(betti_bruteforce(&x, 2.0, 2.5).unwrap(), 2);
        assert_eq!(betti_bruteforce(&x, 0.0, 0.5).unwrap(), 0);
        assert_eq!(betti_bruteforce(&x, 4.0, f64::INFINITY).unwrap(), 1);
        assert!(betti_bruteforce(&x, 1.0, 0.0).is_err());
    }

    #[test]
    fn y_term_examples() {
        let x = ts(&[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(y_term(&x, 1, None, 1.0, 1.0).unwrap(), 1);
        assert_eq!(y_term(&x, 2, None, 1.0, 1.0).unwrap(), 0);
        assert!(y_term(&x, 0, None, 1.0, 1.0).is_err());
        assert!(y_term(&x, 5, None, 1.0, 1.0).is_err());
    }

    #[test]
    fn c_term_examples() {
        let x = ts(&[1.0, 3.0, 2.0, 4.0]);
        assert!(c_term(&x, 1, 3, 2.0, 2.5).unwrap());
        assert!(!c_term(&x, 2, 1, 2.0, 2.5).unwrap());
        assert!(!c_term(&x, 4, 1, 2.0, 2.5).unwrap());
        assert!(c_term(&x, 4, 2, 2.0, 2.5).is_err());
        assert!(c_term(&x, 1, 0, 2.0, 2.5).is_err());
    }

    #[test]
    fn y_term_is_monotone_in_cap() {
        let x = ts(&[0.5, 0.2, 0.4, 0.1, 0.9, 0.3, 0.35, 0.95]);
        for j in 1..=x.len() {
            let mut prev = 0;
            for m in 1..=x.len() {
                let y = y_term(&x, j, Some(m), 0.3, 0.6).unwrap();
                assert!(y >= prev && y <= 1);
                prev = y;
            }
            assert_eq!(prev, y_term(&x, j, None, 0.3, 0.6).unwrap());
        }
    }

    #[test]
    fn oracles_agree_pointwise_and_by_row() {
        let x = TimeSeries::new(
            vec![3.0, 1.0, 1.0, 4.0, 0.0, 2.0, 2.0, 5.0, 1.0],
            TiePolicy::PerturbByIndex,
        )
        .unwrap();
        let grid = threshold_grid(&x);
        for (a, &t) in grid.iter().enumerate() {
            let row = betti_row(&x, Formula::DoubleSum, t, &grid[..=a]).unwrap();
            for (b, &s) in grid[..=a].iter().enumerate() {
                let brute = betti_bruteforce(&x, s, t).unwrap();
                assert_eq!(brute, row[b]);
                assert_eq!(brute, betti_by_y_terms(&x, s, t).unwrap());
                assert_eq!(brute, betti_by_c_terms(&x, s, t).unwrap());
                let y_sum: usize = (1..=x.len())
                    .map(|j| y_term(&x, j, Some(x.len() - j + 1), s, t).unwrap() as usize)
                    .sum();
                assert_eq!(brute, y_sum);
                let mut c_sum = 0;
                for i in 1..=x.len() {
                    for j in 1..=x.len() - i + 1 {
                        c_sum += usize::from(c_term(&x, i, j, s, t).unwrap());
                    }
                }
                assert_eq!(brute, c_sum);
            }
        }
    }

    #[test]
    fn bruteforce_is_monotone() {
        let x = ts(&[0.5, 0.2, 0.4, 0.1, 0.9, 0.3, 0.35, 0.95, 0.05]);
        let grid = threshold_grid(&x);
        for (a, &s) in grid.iter().enumerate() {
            for &t in &grid[a..] {
                let b = betti_bruteforce(&x, s, t).unwrap();
                if a > 0 {
                    assert!(betti_bruteforce(&x, grid[a - 1], t).unwrap() <= b);
                }
                assert!(betti_bruteforce(&x, s, t + 0.01).unwrap() <= b);
            }
        }
    }

    #[test]
    fn geometric_sum_examples() {
        assert!((geometric_weighted_sum(0.5, 3).unwrap() - 2.125).abs() < 1e-15);
        assert_eq!(geometric_weighted_sum(1.0, 4).unwrap(), 10.0);
        assert!(geometric_weighted_sum(0.0, 4).is_err());
        assert!(geometric_weighted_sum(1.5, 4).is_err());
    }

    #[test]
    fn grid_brackets_data() {
        let g = threshold_grid(&ts(&[2.0, 1.0, 3.0]));
        assert_eq!(g, vec![0.0, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]);
    }
}
