//! Adaptive Gauss-Kronrod (7/15) quadrature on finite intervals, with an
//! iterated 2-D variant.

use crate::error::{Error, Result};
use crate::exec::compensated_sum;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes 1, 3, 5, 7.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

pub const DEFAULT_ABS_TOL: f64 = 1e-9;
const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = h * XGK[k];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// `int_a^b f` to absolute tolerance `tol` by global bisection of the worst
/// segment. Endpoints are never evaluated, so integrable endpoint
/// singularities are fine.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::DomainError(format!("quadrature needs finite limits, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    if a > b {
        let q = integrate(f, b, a, tol)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut segments = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let err: f64 = segments.iter().map(|s| s.3).sum();
        if err <= tol || segments.len() >= MAX_SEGMENTS {
            let value = compensated_sum(segments.iter().map(|s| s.2));
            if !value.is_finite() {
                return Err(Error::DomainError("integrand produced a non-finite value".into()));
            }
            return Ok(Quadrature { value, error: err, evaluations });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = segments.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // Interval cannot be split further; keep its estimate.
            let (v, _) = gk15(&mut f, lo, hi);
            segments.push((lo, hi, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        evaluations += 30;
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
}

/// `int_{x0}^{x1} int_{y0(x)}^{y1(x)} f(x, y) dy dx`. The inner tolerance is a
/// fraction of the outer one scaled by the outer interval length.
pub fn integrate_2d<F, L, U>(f: F, x0: f64, x1: f64, y0: L, y1: U, tol: f64) -> Result<Quadrature>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> f64,
    U: Fn(f64) -> f64,
{
    let width = (x1 - x0).abs().max(f64::MIN_POSITIVE);
    let inner_tol = 0.1 * tol / width;
    let mut inner_err: Option<Error> = None;
    let mut evaluations = 0;
    let outer = integrate(
        |x| {
            let (lo, hi) = (y0(x), y1(x));
            if hi <= lo {
                return 0.0;
            }
            match integrate(|y| f(x, y), lo, hi, inner_tol) {
                Ok(q) => {
                    evaluations += q.evaluations;
                    q.value
                }
                Err(e) => {
                    inner_err.get_or_insert(e);
                    0.0
                }
            }
        },
        x0,
        x1,
        tol,
    )?;
    if let Some(e) = inner_err {
        return Err(e);
    }
    Ok(Quadrature { evaluations, ..outer })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent check: adaptive Simpson.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn closed_forms() {
        let q = integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((q.value - 9.0).abs() < 1e-12);
        let q = integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
        let q = integrate(|x| x.exp(), 1.0, 0.0, 1e-12).unwrap();
        assert!((q.value + (1f64.exp() - 1.0)).abs() < 1e-12);
        // Endpoint singularity: int_0^1 x^{-1/2} = 2.
        let q = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-9).unwrap();
        assert!((q.value - 2.0).abs() < 1e-6);
        assert!(integrate(|x| x, 0.0, f64::INFINITY, 1e-9).is_err());
    }

    #[test]
    fn agrees_with_simpson() {
        let f = |x: f64| (3.0 * x).cos() * (-x * x).exp() + x.abs().sqrt();
        let gk = integrate(f, -2.0, 1.5, 1e-11).unwrap().value;
        let sm = simpson(&f, -2.0, 1.5, 1e-11);
        assert!((gk - sm).abs() < 1e-8, "{gk} vs {sm}");
    }

    #[test]
    fn two_dimensional() {
        // Triangle 0 < x < y < 1 of 6xy -> 6 * 1/8 = 3/4.
        let q = integrate_2d(|x, y| 6.0 * x * y, 0.0, 1.0, |x| x, |_| 1.0, 1e-10).unwrap();
        assert!((q.value - 0.75).abs() < 1e-9);
        let q = integrate_2d(|x, y| x + y, 0.0, 1.0, |_| 0.0, |_| 2.0, 1e-10).unwrap();
        assert!((q.value - 3.0).abs() < 1e-9);
    }
}
