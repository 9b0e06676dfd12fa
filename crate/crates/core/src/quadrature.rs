//! Adaptive Gauss–Kronrod (7, 15) quadrature.

use std::collections::BinaryHeap;

use crate::error::{IcpmError, Result};

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
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Returns `(kronrod estimate, |kronrod - gauss|)` on `[a, b]`.
fn gk15(f: &mut impl FnMut(f64) -> Result<f64>, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c)?;
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = hl * XGK[j];
        let s = f(c - x)? + f(c + x)?;
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    let (rk, rg) = (rk * hl, rg * hl);
    if !rk.is_finite() {
        return Err(IcpmError::Numeric(format!("non-finite integrand on [{a:.6}, {b:.6}]")));
    }
    Ok((rk, (rk - rg).abs()))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`, bisecting the worst panel first.
pub fn integrate(mut f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if !(abs_tol > 0.0) {
        return Err(IcpmError::InvalidInput(format!("quadrature tolerance must be positive, got {abs_tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    let (value, err) = gk15(&mut f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, err });
    let (mut total, mut total_err) = (value, err);
    for _ in 0..2000 {
        if total_err <= abs_tol {
            return Ok(total);
        }
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        if (p.b - p.a).abs() < 1e-13 * p.a.abs().max(1.0) {
            return Err(IcpmError::Numeric(format!(
                "quadrature failed to converge on [{:.6}, {:.6}]",
                p.a, p.b
            )));
        }
        let (v1, e1) = gk15(&mut f, p.a, m)?;
        let (v2, e2) = gk15(&mut f, m, p.b)?;
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.err;
        heap.push(Panel { a: p.a, b: m, value: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, value: v2, err: e2 });
    }
    let worst = heap.peek().expect("heap is never empty");
    Err(IcpmError::Numeric(format!(
        "quadrature failed to converge on [{:.6}, {:.6}] (error estimate {:.3e})",
        worst.a, worst.b, total_err
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| Ok(x.powi(6) - 2.0 * x), 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 128.0 / 7.0 - 4.0, epsilon = 1e-12);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = integrate(|x| Ok((10.0 * x).cos()), 0.0, 3.0, 1e-12).unwrap();
        assert_relative_eq!(v, (30.0f64).sin() / 10.0, epsilon = 1e-11);
    }

    #[test]
    fn reversed_interval_negates() {
        let v = integrate(|x| Ok(x.exp()), 1.0, 0.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0 - 1f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn non_finite_integrand_names_interval() {
        let err = integrate(|x| Ok(1.0 / x), 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, IcpmError::Numeric(_)));
    }
}
