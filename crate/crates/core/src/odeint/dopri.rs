//! Dormand–Prince 5(4) stepper with the order-4 continuous extension of
//! Hairer, Nørsett & Wanner (the `dopri5` dense output).

use super::{IntegratorConfig, OdeError, Trajectory};
use crate::sysdef::EvalError;

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

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Right-hand side signature shared by every integration in the crate.
pub trait Rhs: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError> {}
impl<F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError>> Rhs for F {}

/// Interpolation data for one accepted step.
pub(crate) struct DenseStep<'a> {
    pub t_old: f64,
    pub h: f64,
    pub y_old: &'a [f64],
    /// `r2..r5` of the continuous extension, concatenated.
    pub coef: &'a [f64],
}

impl DenseStep<'_> {
    pub fn t_new(&self) -> f64 {
        self.t_old + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        interpolate(self.t_old, self.h, self.y_old, self.coef, t, out);
    }
}

pub(crate) fn interpolate(t_old: f64, h: f64, y_old: &[f64], coef: &[f64], t: f64, out: &mut [f64]) {
    let n = y_old.len();
    let s = (t - t_old) / h;
    let s1 = 1.0 - s;
    let (r2, rest) = coef.split_at(n);
    let (r3, rest) = rest.split_at(n);
    let (r4, r5) = rest.split_at(n);
    for i in 0..n {
        out[i] = y_old[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
    }
}

pub(crate) struct Stepper<F> {
    field: F,
    n: usize,
    t: f64,
    t_end: f64,
    dir: f64,
    h: f64,
    y: Vec<f64>,
    y_old: Vec<f64>,
    y_new: Vec<f64>,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    coef: Vec<f64>,
    t_old: f64,
    h_last: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_step: f64,
    max_steps: usize,
    accepted: usize,
    attempts: usize,
    rejected_last: bool,
    record: Option<Trajectory>,
}

impl<F: Rhs> Stepper<F> {
    pub fn new(
        mut field: F,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        cfg: &IntegratorConfig,
        record: bool,
    ) -> Result<Self, OdeError> {
        cfg.validate()?;
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(OdeError::Config(format!("non-finite time span [{t0}, {t_end}]")));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t: t0 });
        }
        let n = y0.len();
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        field(t0, y0, &mut k[0]).map_err(|source| OdeError::Field { t: t0, source })?;
        if k[0].iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t: t0 });
        }
        let mut stepper = Stepper {
            field,
            n,
            t: t0,
            t_end,
            dir,
            h: 0.0,
            y: y0.to_vec(),
            y_old: y0.to_vec(),
            y_new: y0.to_vec(),
            k,
            tmp: vec![0.0; n],
            coef: vec![0.0; 4 * n],
            t_old: t0,
            h_last: 0.0,
            abs_tol: cfg.abs_tol,
            rel_tol: cfg.rel_tol,
            max_step: cfg.max_step.unwrap_or(f64::INFINITY),
            max_steps: cfg.max_steps,
            accepted: 0,
            attempts: 0,
            rejected_last: false,
            record: record.then(|| Trajectory::start(t0, y0)),
        };
        if t_end != t0 {
            stepper.h = match cfg.initial_step {
                Some(h) => dir * h.min(stepper.max_step).min((t_end - t0).abs()),
                None => stepper.initial_step()?,
            };
        }
        Ok(stepper)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn done(&self) -> bool {
        self.t == self.t_end
    }

    pub fn last_step(&self) -> DenseStep<'_> {
        DenseStep { t_old: self.t_old, h: self.h_last, y_old: &self.y_old, coef: &self.coef }
    }

    pub fn into_trajectory(self) -> Option<Trajectory> {
        self.record
    }

    fn eval(&mut self, t: f64, stage: usize) -> Result<(), OdeError> {
        let (tmp, k) = (&self.tmp, &mut self.k);
        (self.field)(t, tmp, &mut k[stage]).map_err(|source| OdeError::Field { t, source })
    }

    fn error_scale(&self, a: f64, b: f64) -> f64 {
        self.abs_tol + self.rel_tol * a.abs().max(b.abs())
    }

    /// Starting step from Hairer's heuristic (`hinit` in dopri5).
    fn initial_step(&mut self) -> Result<f64, OdeError> {
        let n = self.n.max(1) as f64;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..self.n {
            let sk = self.error_scale(self.y[i], 0.0);
            dnf += (self.k[0][i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let span = (self.t_end - self.t).abs();
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.max_step).min(span);
        for i in 0..self.n {
            self.tmp[i] = self.y[i] + self.dir * h * self.k[0][i];
        }
        self.eval(self.t + self.dir * h, 1)?;
        let mut der2 = 0.0;
        for i in 0..self.n {
            let sk = self.error_scale(self.y[i], 0.0);
            der2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        Ok(self.dir * (100.0 * h).min(h1).min(self.max_step).min(span))
    }

    /// Advances by one accepted step. No-op once `t_end` is reached.
    pub fn step(&mut self) -> Result<(), OdeError> {
        if self.done() {
            return Ok(());
        }
        let n = self.n;
        loop {
            if self.attempts >= self.max_steps {
                return Err(OdeError::MaxSteps { t: self.t, steps: self.attempts });
            }
            self.attempts += 1;
            let remaining = self.t_end - self.t;
            let mut h = self.h;
            let last = (h.abs() >= remaining.abs()) || (self.t + h - self.t_end) * self.dir >= 0.0;
            if last {
                h = remaining;
            }
            if h.abs() <= 1e-14 * self.t.abs().max(1.0) && !last {
                return Err(OdeError::StepUnderflow { t: self.t });
            }
            let t = self.t;
            let mut y_new = std::mem::take(&mut self.y_new);

            macro_rules! stage {
                ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                    for i in 0..n {
                        self.tmp[i] = self.y[i] + h * (0.0 $(+ $a * self.k[$j][i])*);
                    }
                    self.eval(t + $c * h, $dst)?;
                }};
            }
            stage!(1, C2, [(A21, 0)]);
            stage!(2, C3, [(A31, 0), (A32, 1)]);
            stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
            stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
            stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
            let t_new = if last { self.t_end } else { t + h };
            // fifth-order solution, then its derivative (FSAL stage)
            for i in 0..n {
                y_new[i] = self.y[i]
                    + h * (A71 * self.k[0][i]
                        + A73 * self.k[2][i]
                        + A74 * self.k[3][i]
                        + A75 * self.k[4][i]
                        + A76 * self.k[5][i]);
            }
            self.tmp.copy_from_slice(&y_new);
            self.eval(t_new, 6)?;

            let mut err = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let sk = self.error_scale(self.y[i], y_new[i]);
                err += (e / sk).powi(2);
                finite &= y_new[i].is_finite() && self.k[6][i].is_finite();
            }
            let err = if n == 0 { 0.0 } else { (err / n as f64).sqrt() };
            if !finite || !err.is_finite() {
                // a blow-up shows as non-finite stages; shrink hard and retry
                self.y_new = y_new;
                if h.abs() <= 1e-12 * self.t.abs().max(1.0) {
                    return Err(OdeError::NonFinite { t });
                }
                self.h = h * FAC_MIN;
                self.rejected_last = true;
                continue;
            }

            let fac = if err == 0.0 { FAC_MAX } else { SAFETY * err.powf(-0.2) };
            if err <= 1.0 {
                let fac_max = if self.rejected_last { 1.0 } else { FAC_MAX };
                // dense output coefficients
                let (r2, rest) = self.coef.split_at_mut(n);
                let (r3, rest) = rest.split_at_mut(n);
                let (r4, r5) = rest.split_at_mut(n);
                for i in 0..n {
                    let ydiff = y_new[i] - self.y[i];
                    let bspl = h * self.k[0][i] - ydiff;
                    r2[i] = ydiff;
                    r3[i] = bspl;
                    r4[i] = ydiff - h * self.k[6][i] - bspl;
                    r5[i] = h
                        * (D1 * self.k[0][i]
                            + D3 * self.k[2][i]
                            + D4 * self.k[3][i]
                            + D5 * self.k[4][i]
                            + D6 * self.k[5][i]
                            + D7 * self.k[6][i]);
                }
                let previous = std::mem::replace(&mut self.y, y_new);
                self.y_new = std::mem::replace(&mut self.y_old, previous);
                self.k.swap(0, 6);
                self.t_old = t;
                self.h_last = t_new - t;
                self.t = t_new;
                self.accepted += 1;
                self.rejected_last = false;
                let mut next = h * fac.clamp(FAC_MIN, fac_max);
                if next.abs() > self.max_step {
                    next = self.dir * self.max_step;
                }
                if !last {
                    self.h = next;
                }
                if let Some(rec) = self.record.as_mut() {
                    rec.push(self.t, &self.y, &self.coef);
                }
                return Ok(());
            }
            self.y_new = y_new;
            self.h = h * fac.clamp(FAC_MIN, 1.0);
            self.rejected_last = true;
        }
    }

    pub fn run(&mut self) -> Result<(), OdeError> {
        while !self.done() {
            self.step()?;
        }
        Ok(())
    }
}
