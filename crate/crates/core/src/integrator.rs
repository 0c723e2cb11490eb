//! Dormand–Prince 5(4) with Hairer's continuous extension, on flat complex
//! state vectors.

use num_complex::Complex64;
use thiserror::Error;

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
const PI_BETA: f64 = 0.04;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeControls {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeControls {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

impl OdeControls {
    pub fn with_max_step(self, max_step: f64) -> Self {
        Self { max_step, ..self }
    }

    /// Both tolerances multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
            ..self
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size {h:e} underflowed at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Adaptive Dormand–Prince integrator. Keeps its last step size so that
/// consecutive calls (e.g. across drive-window edges) resume smoothly.
pub struct Dopri5 {
    controls: OdeControls,
    h: Option<f64>,
    fac_old: f64,
    k: [Vec<Complex64>; 7],
    y_stage: Vec<Complex64>,
    y_new: Vec<Complex64>,
    dense: [Vec<Complex64>; 5],
    pub stats: OdeStats,
}

impl Dopri5 {
    pub fn new(controls: OdeControls) -> Self {
        Self {
            controls,
            h: None,
            fac_old: 1e-4,
            k: Default::default(),
            y_stage: Vec::new(),
            y_new: Vec::new(),
            dense: Default::default(),
            stats: OdeStats::default(),
        }
    }

    pub fn controls(&self) -> &OdeControls {
        &self.controls
    }

    pub fn set_max_step(&mut self, max_step: f64) {
        self.controls.max_step = max_step;
        if let Some(h) = self.h.as_mut() {
            *h = h.min(max_step);
        }
    }

    fn resize(&mut self, n: usize) {
        let zero = Complex64::new(0.0, 0.0);
        for v in self.k.iter_mut().chain(self.dense.iter_mut()) {
            v.resize(n, zero);
        }
        self.y_stage.resize(n, zero);
        self.y_new.resize(n, zero);
    }

    fn error_norm(&self, y: &[Complex64], h: f64) -> f64 {
        let (rtol, atol) = (self.controls.rtol, self.controls.atol);
        let mut sum = 0.0;
        for i in 0..y.len() {
            let e = h
                * (self.k[0][i] * E1
                    + self.k[2][i] * E3
                    + self.k[3][i] * E4
                    + self.k[4][i] * E5
                    + self.k[5][i] * E6
                    + self.k[6][i] * E7);
            let sc = atol + rtol * y[i].norm().max(self.y_new[i].norm());
            sum += e.norm_sqr() / (sc * sc);
        }
        (sum / y.len().max(1) as f64).sqrt()
    }

    fn initial_step<F>(&mut self, f: &mut F, t: f64, y: &[Complex64], span: f64) -> f64
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let (rtol, atol) = (self.controls.rtol, self.controls.atol);
        let n = y.len().max(1) as f64;
        let scale = |v: Complex64| atol + rtol * v.norm();
        let d0 = (y.iter().map(|&v| (v.norm() / scale(v)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.k[0].iter().zip(y).map(|(d, &v)| (d.norm() / scale(v)).powi(2)).sum::<f64>() / n).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span).min(self.controls.max_step);
        for i in 0..y.len() {
            self.y_stage[i] = y[i] + self.k[0][i] * h0;
        }
        f(t + h0, &self.y_stage, &mut self.k[1]);
        self.stats.evaluations += 1;
        let d2 = (self.k[1]
            .iter()
            .zip(&self.k[0])
            .zip(y)
            .map(|((a, b), &v)| ((a - b).norm() / scale(v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(self.controls.max_step)
    }

    /// Advances `y` from `t0` to `t_end`, calling `out(t, y)` at every requested
    /// output time in `[t0, t_end]` (sorted ascending) via dense interpolation.
    pub fn integrate<F, O>(
        &mut self,
        f: &mut F,
        t0: f64,
        y: &mut [Complex64],
        t_end: f64,
        outputs: &[f64],
        out: &mut O,
    ) -> Result<(), OdeError>
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
        O: FnMut(f64, &[Complex64]),
    {
        if !(t_end >= t0) {
            return Err(OdeError::InvalidRequest(format!("t_end = {t_end} precedes t0 = {t0}")));
        }
        let n = y.len();
        self.resize(n);
        let mut next_out = outputs.partition_point(|&s| s < t0);
        while next_out < outputs.len() && outputs[next_out] == t0 {
            out(t0, y);
            next_out += 1;
        }
        if t_end == t0 {
            return Ok(());
        }

        let mut t = t0;
        f(t, y, &mut self.k[0]);
        self.stats.evaluations += 1;
        let span = t_end - t0;
        let mut h = match self.h {
            Some(h) => h.min(span).min(self.controls.max_step),
            None => self.initial_step(f, t, y, span),
        };
        let mut steps = 0usize;
        let mut last_rejected = false;
        loop {
            if steps >= self.controls.max_steps {
                return Err(OdeError::TooManySteps(self.controls.max_steps));
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepSizeUnderflow { t, h });
            }
            let last = t + 1.01 * h >= t_end;
            if last {
                h = t_end - t;
            }
            steps += 1;
            self.stage(f, t, y, h);
            let err = self.error_norm(y, h);
            if !err.is_finite() {
                if self.y_new.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) && h < 1e-10 {
                    return Err(OdeError::NonFinite(t));
                }
                h *= MIN_SCALE;
                self.stats.rejected += 1;
                last_rejected = true;
                continue;
            }
            let fac11 = err.powf(0.2 - 0.75 * PI_BETA);
            if err <= 1.0 {
                let mut scale = SAFETY / (fac11 / self.fac_old.powf(PI_BETA)).max(1e-10);
                scale = scale.clamp(MIN_SCALE, MAX_SCALE);
                if last_rejected {
                    scale = scale.min(1.0);
                }
                self.fac_old = err.max(1e-4);
                self.stats.accepted += 1;
                let t_new = if last { t_end } else { t + h };
                self.prepare_dense(y, h);
                while next_out < outputs.len() && outputs[next_out] <= t_new {
                    let s = outputs[next_out];
                    if s == t_new {
                        out(s, &self.y_new);
                    } else {
                        let mut buf = std::mem::take(&mut self.y_stage);
                        self.interpolate((s - t) / h, &mut buf);
                        out(s, &buf);
                        self.y_stage = buf;
                    }
                    next_out += 1;
                }
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                t = t_new;
                self.h = Some(h * scale);
                if last {
                    return Ok(());
                }
                h = (h * scale).min(self.controls.max_step);
                last_rejected = false;
            } else {
                let scale = (SAFETY / fac11).max(MIN_SCALE);
                h *= scale;
                self.stats.rejected += 1;
                last_rejected = true;
            }
        }
    }

    fn stage<F>(&mut self, f: &mut F, t: f64, y: &[Complex64], h: f64)
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ys = &mut self.y_stage;
        for i in 0..n {
            ys[i] = y[i] + h * (A21 * k1[i]);
        }
        f(t + C2 * h, ys, k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, ys, k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, ys, k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, ys, k5);
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, ys, k6);
        let yn = &mut self.y_new;
        for i in 0..n {
            yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, yn, k7);
        self.stats.evaluations += 6;
    }

    fn prepare_dense(&mut self, y: &[Complex64], h: f64) {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let [r1, r2, r3, r4, r5] = &mut self.dense;
        for i in 0..y.len() {
            let diff = self.y_new[i] - y[i];
            let bspl = h * k1[i] - diff;
            r1[i] = y[i];
            r2[i] = diff;
            r3[i] = bspl;
            r4[i] = diff - h * k7[i] - bspl;
            r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
    }

    fn interpolate(&self, theta: f64, buf: &mut [Complex64]) {
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.dense;
        for i in 0..buf.len() {
            buf[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}
