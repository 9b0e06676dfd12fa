//! Dormand–Prince 5(4) integrator with 4th-order continuous extension.
//!
//! The integrator is exposed as a stepper so that callers can inspect every
//! accepted step, locate events on the dense output and restart after a
//! discontinuity.

use nalgebra::DVector;

use crate::error::{IcpmError, Result};

/// Error-control tolerances.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite()) {
            return Err(IcpmError::InvalidInput(format!(
                "tolerances must be positive, got rtol={} atol={}",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    r: [DVector<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1 + (r2 + (r3 + (r4 + r5 * th1) * th) * th1) * th
    }

    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))
    }
}

/// One accepted step.
#[derive(Debug, Clone)]
pub struct Step {
    pub t_prev: f64,
    pub y_prev: DVector<f64>,
    pub t: f64,
    pub y: DVector<f64>,
    pub dense: DenseSegment,
}

pub struct Stepper<F>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    f: F,
    tol: Tolerances,
    t: f64,
    y: DVector<f64>,
    k1: DVector<f64>,
    h: f64,
    err_old: f64,
    h_min: f64,
    h_max: f64,
    pub n_eval: usize,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

impl<F> Stepper<F>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    pub fn new(mut f: F, t0: f64, y0: DVector<f64>, tol: Tolerances) -> Result<Self> {
        tol.validate()?;
        crate::dynamics::ensure_finite("initial state", y0.as_slice())?;
        let k1 = f(t0, &y0)?;
        let mut s = Self {
            f,
            tol,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            err_old: 1e-4,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            n_eval: 1,
            n_accepted: 0,
            n_rejected: 0,
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    pub fn with_max_step(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self.h = self.h.min(h_max);
        self
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn rhs(&mut self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.n_eval += 1;
        (self.f)(t, y)
    }

    /// Restarts from a new state, e.g. after a velocity jump.
    pub fn reset(&mut self, t: f64, y: DVector<f64>) -> Result<()> {
        crate::dynamics::ensure_finite("state", y.as_slice())?;
        self.k1 = (self.f)(t, &y)?;
        self.n_eval += 1;
        self.t = t;
        self.y = y;
        self.err_old = 1e-4;
        self.h = self.initial_step()?;
        Ok(())
    }

    fn scale(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        a.zip_map(b, |x, y| self.tol.atol + self.tol.rtol * x.abs().max(y.abs()))
    }

    fn initial_step(&mut self) -> Result<f64> {
        let sc = self.scale(&self.y, &self.y);
        let n = self.y.len() as f64;
        let d0 = (self.y.component_div(&sc).norm_squared() / n).sqrt();
        let d1 = (self.k1.component_div(&sc).norm_squared() / n).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.h_max);
        let y1 = &self.y + &self.k1 * h0;
        let k2 = self.rhs(self.t + h0, &y1)?;
        let d2 = ((&k2 - &self.k1).component_div(&sc).norm_squared() / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.h_max))
    }

    /// One Dormand–Prince step of size `h` from `(t, y)` with slope `k1`; returns `(y1, k7, err_vec, k)`.
    #[allow(clippy::type_complexity)]
    fn attempt(
        &mut self,
        t: f64,
        y: &DVector<f64>,
        k1: &DVector<f64>,
        h: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, [DVector<f64>; 6])> {
        let k2 = self.rhs(t + C2 * h, &(y + k1 * (h * A21)))?;
        let k3 = self.rhs(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))?;
        let k4 = self.rhs(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
        let k5 = self.rhs(t + C5 * h, &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h))?;
        let k6 = self.rhs(t + h, &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h))?;
        let y1 = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = self.rhs(t + h, &y1)?;
        Ok((y1, k7.clone(), [k2, k3, k4, k5, k6, k7]))
    }

    /// Fifth-order solution after a single step of size `h` from `(t0, y0)`, with no error control.
    pub fn single_step(&mut self, t0: f64, y0: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        if h == 0.0 {
            return Ok(y0.clone());
        }
        let k1 = self.rhs(t0, y0)?;
        let (y1, _, _) = self.attempt(t0, y0, &k1, h)?;
        Ok(y1)
    }

    /// Takes one accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Step> {
        const SAFETY: f64 = 0.9;
        const BETA: f64 = 0.04;
        const EXPO: f64 = 0.2 - BETA * 0.75;
        if t_limit <= self.t {
            return Err(IcpmError::InvalidInput(format!("step limit {t_limit} is not after t = {}", self.t)));
        }
        let mut h = self.h.min(t_limit - self.t);
        let mut last_rejected = false;
        loop {
            if h < self.h_min * self.t.abs().max(1.0) {
                return Err(IcpmError::Numeric(format!("step size underflow at t = {:.6}", self.t)));
            }
            let t = self.t;
            let y = self.y.clone();
            let k1 = self.k1.clone();
            let (y1, k7, ks) = self.attempt(t, &y, &k1, h)?;
            let [_k2, k3, k4, k5, k6, _] = &ks;
            let err_vec = (&k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + &k7 * E7) * h;
            let sc = self.scale(&y, &y1);
            let err = (err_vec.component_div(&sc).norm_squared() / y.len() as f64).sqrt();
            if !err.is_finite() {
                h *= 0.1;
                last_rejected = true;
                self.n_rejected += 1;
                continue;
            }
            let fac11 = err.powf(EXPO);
            let mut fac = fac11 / self.err_old.powf(BETA);
            fac = (fac / SAFETY).clamp(0.1, 5.0);
            let h_new = h / fac;
            if err <= 1.0 {
                self.err_old = err.max(1e-4);
                let ydiff = &y1 - &y;
                let bspl = &k1 * h - &ydiff;
                let r4 = &ydiff - &k7 * h - &bspl;
                let r5 = (&k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + &k7 * D7) * h;
                let dense = DenseSegment { t0: t, h, r: [y.clone(), ydiff, bspl, r4, r5] };
                let t_new = if (t + h - t_limit).abs() <= 1e-14 * t_limit.abs().max(1.0) { t_limit } else { t + h };
                self.t = t_new;
                self.y = y1.clone();
                self.k1 = k7;
                self.h = if last_rejected { h_new.min(h) } else { h_new }.min(self.h_max);
                self.n_accepted += 1;
                return Ok(Step { t_prev: t, y_prev: y, t: t_new, y: y1, dense });
            }
            h /= (fac11 / SAFETY).min(5.0);
            last_rejected = true;
            self.n_rejected += 1;
        }
    }
}

/// Integrates from `t0` to `t1` and returns the final state.
pub fn integrate<F>(f: F, t0: f64, y0: DVector<f64>, t1: f64, tol: Tolerances) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if t1 == t0 {
        return Ok(y0);
    }
    let mut s = Stepper::new(f, t0, y0, tol)?;
    while s.t() < t1 {
        s.step(t1)?;
    }
    Ok(s.y().clone())
}

/// Finds a root of `g` on `[a, b]` with `g(a) < 0 <= g(b)` or the reverse, by the Illinois method with bisection fallback.
pub fn bracketed_root(mut g: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let mut fa = g(a);
    let mut fb = g(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= xtol {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let fc = g(c);
        if fc == 0.0 {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}
