//! Dormand–Prince 5(4) for autonomous linear systems over complex vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-8 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite() {
            Ok(())
        } else {
            Err(Error::Validation(format!("tolerances must be positive, got {self:?}")))
        }
    }
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct Dopri5 {
    tol: Tolerances,
    k: [Vec<Complex64>; 7],
    stage: Vec<Complex64>,
    y_new: Vec<Complex64>,
    fsal: bool,
    pub h: f64,
    pub steps: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(dim: usize, tol: Tolerances, h0: f64) -> Self {
        Dopri5 {
            tol,
            k: std::array::from_fn(|_| vec![Complex64::ZERO; dim]),
            stage: vec![Complex64::ZERO; dim],
            y_new: vec![Complex64::ZERO; dim],
            fsal: false,
            h: h0,
            steps: 0,
            rejected: 0,
        }
    }

    /// Resize for a new state dimension and drop the cached derivative.
    pub fn reset(&mut self, dim: usize) {
        for k in &mut self.k {
            k.resize(dim, Complex64::ZERO);
        }
        self.stage.resize(dim, Complex64::ZERO);
        self.y_new.resize(dim, Complex64::ZERO);
        self.fsal = false;
    }

    /// One trial step of size `h` from `y`. The result is left in
    /// [`Self::proposal`]; returns the scaled error norm.
    pub fn trial<F>(&mut self, f: &mut F, y: &[Complex64], h: f64) -> f64
    where
        F: FnMut(&[Complex64], &mut [Complex64]),
    {
        if !self.fsal {
            f(y, &mut self.k[0]);
            self.fsal = true;
        }
        for s in 0..6 {
            for (idx, out) in self.stage.iter_mut().enumerate() {
                let mut acc = Complex64::ZERO;
                for (r, a) in A[s].iter().enumerate().take(s + 1) {
                    if *a != 0.0 {
                        acc += self.k[r][idx] * *a;
                    }
                }
                *out = y[idx] + acc * h;
            }
            let (_, tail) = self.k.split_at_mut(s + 1);
            f(&self.stage, &mut tail[0]);
        }
        // stage 6 evaluated the fifth-order solution, which is also the next k1
        self.y_new.copy_from_slice(&self.stage);
        let mut sum = 0.0;
        for idx in 0..y.len() {
            let mut e = Complex64::ZERO;
            for (r, c) in E.iter().enumerate() {
                if *c != 0.0 {
                    e += self.k[r][idx] * *c;
                }
            }
            let scale = self.tol.atol + self.tol.rtol * y[idx].norm().max(self.y_new[idx].norm());
            sum += (e.norm() * h / scale).powi(2);
        }
        (sum / y.len().max(1) as f64).sqrt()
    }

    pub fn proposal(&self) -> &[Complex64] {
        &self.y_new
    }

    /// Accept the last trial: the final stage becomes the next first stage.
    fn accept(&mut self, y: &mut [Complex64]) {
        y.copy_from_slice(&self.y_new);
        self.k.swap(0, 6);
        self.steps += 1;
    }

    /// Discard cached stages after `y` was modified externally.
    pub fn invalidate(&mut self) {
        self.fsal = false;
    }

    fn next_h(&self, h: f64, err: f64) -> f64 {
        let factor = if err == 0.0 { MAX_FACTOR } else { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
        h * factor
    }

    /// Adaptive integration of y over a span of length `dt`.
    pub fn advance<F>(&mut self, f: &mut F, y: &mut [Complex64], dt: f64) -> Result<()>
    where
        F: FnMut(&[Complex64], &mut [Complex64]),
    {
        let mut done = 0.0;
        while done < dt {
            let remaining = dt - done;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let err = self.trial(f, y, h);
            if !err.is_finite() {
                return Err(Error::Numerical(format!("non-finite integrator error after {} steps", self.steps)));
            }
            if err <= 1.0 {
                self.accept(y);
                done = if last { dt } else { done + h };
                let grown = self.next_h(h, err);
                // a short final step to land on the target says nothing about the scale
                if !last || grown > self.h {
                    self.h = grown;
                }
            } else {
                self.rejected += 1;
                self.h = self.next_h(h, err).min(h);
                // the cached first stage is still valid for y
            }
            if self.h < 1e-14 * dt.max(1e-300) || self.h == 0.0 {
                return Err(Error::Numerical(format!(
                    "step size underflow (h = {:e}) after {} steps, {} rejected",
                    self.h, self.steps, self.rejected
                )));
            }
        }
        Ok(())
    }
}
