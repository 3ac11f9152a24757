use super::dopri::interpolate;

/// Dense-output solution of an initial value problem.
///
/// Forward and backward integrations are both stored in integration order;
/// the mesh is monotone in either direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    coef: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn start(t0: f64, y0: &[f64]) -> Self {
        Trajectory { n: y0.len(), times: vec![t0], states: y0.to_vec(), coef: Vec::new() }
    }

    pub(crate) fn push(&mut self, t: f64, y: &[f64], coef: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.coef.extend_from_slice(coef);
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Lower and upper end of the time span.
    pub fn span(&self) -> (f64, f64) {
        let (a, b) = (self.t_start(), self.t_end());
        (a.min(b), a.max(b))
    }

    pub fn mesh(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state_at_mesh(&self, i: usize) -> &[f64] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.state_at_mesh(self.steps())
    }

    /// Interpolated state at `t`. Times outside the span are clamped to it.
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.evaluate_into(t, &mut out);
        out
    }

    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) {
        let steps = self.steps();
        if steps == 0 {
            out.copy_from_slice(self.state_at_mesh(0));
            return;
        }
        let forward = self.t_end() >= self.t_start();
        let (lo, hi) = self.span();
        let t = t.clamp(lo, hi);
        let idx = if forward {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        let i = idx.saturating_sub(1).min(steps - 1);
        if t == self.times[i] {
            out.copy_from_slice(self.state_at_mesh(i));
            return;
        }
        if t == self.times[i + 1] {
            out.copy_from_slice(self.state_at_mesh(i + 1));
            return;
        }
        let n = self.n;
        let h = self.times[i + 1] - self.times[i];
        interpolate(self.times[i], h, self.state_at_mesh(i), &self.coef[4 * n * i..4 * n * (i + 1)], t, out);
    }

    /// Multiplies every stored state and interpolation coefficient by
    /// `factor`. Only meaningful for solutions of linear equations.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.states.iter_mut().for_each(|v| *v *= factor);
        self.coef.iter_mut().for_each(|v| *v *= factor);
        self
    }
}
