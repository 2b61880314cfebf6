//! Discrete rational transfer function with integer transport delay.

use num_complex::Complex64;

use crate::dsp::spectra::FrequencyResponse;
use crate::{Error, Result};

/// `H(z) = z^-delay * num(z^-1) / den(z^-1)` with `den[0] = 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransferFunction {
    /// Numerator coefficients in ascending powers of `z^-1`.
    pub num: Vec<f64>,
    /// Denominator coefficients in ascending powers of `z^-1`; `den[0] = 1`.
    pub den: Vec<f64>,
    /// Transport delay in samples.
    pub delay: usize,
    /// Sampling period, s.
    pub t_s: f64,
}

impl TransferFunction {
    /// Builds a transfer function, normalizing the denominator so that
    /// `den[0] = 1`.
    pub fn new(num: Vec<f64>, den: Vec<f64>, delay: usize, t_s: f64) -> Result<Self> {
        if den.is_empty() || num.is_empty() {
            return Err(Error::InvalidInput("transfer function needs nonempty num/den".into()));
        }
        if den[0] == 0.0 {
            return Err(Error::InvalidInput("den[0] must be nonzero".into()));
        }
        if t_s <= 0.0 {
            return Err(Error::InvalidInput("sampling period must be positive".into()));
        }
        let d0 = den[0];
        Ok(TransferFunction {
            num: num.iter().map(|v| v / d0).collect(),
            den: den.iter().map(|v| v / d0).collect(),
            delay,
            t_s,
        })
    }

    /// Pure gain (zeroth order).
    pub fn gain(g: f64, t_s: f64) -> Self {
        TransferFunction { num: vec![g], den: vec![1.0], delay: 0, t_s }
    }

    /// Denominator order.
    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// DC gain `num(1)/den(1)`.
    pub fn dc_gain(&self) -> f64 {
        self.num.iter().sum::<f64>() / self.den.iter().sum::<f64>()
    }

    /// Response at a single frequency: evaluation at `z = exp(j 2 pi f T_s)`
    /// including the transport-delay phase.
    pub fn response_at(&self, f: f64) -> Complex64 {
        let theta = 2.0 * std::f64::consts::PI * f * self.t_s;
        let zinv = Complex64::from_polar(1.0, -theta);
        let num = poly_eval(&self.num, zinv);
        let den = poly_eval(&self.den, zinv);
        let delay_phase = Complex64::from_polar(1.0, -theta * self.delay as f64);
        num / den * delay_phase
    }

    /// Response over a frequency grid.
    pub fn frequency_response(&self, grid: &[f64]) -> Result<FrequencyResponse> {
        let nyquist = 0.5 / self.t_s;
        if grid.iter().any(|&f| f < 0.0 || f >= nyquist) {
            return Err(Error::InvalidInput("frequency grid must lie in [0, f_s/2)".into()));
        }
        FrequencyResponse::new(grid.to_vec(), grid.iter().map(|&f| self.response_at(f)).collect())
    }

    /// First `n` samples of the impulse response (delay included).
    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut input = vec![0.0; n];
        if !input.is_empty() {
            input[0] = 1.0;
        }
        self.simulate(&input)
    }

    /// Runs the difference equation over `input`, starting from rest.
    pub fn simulate(&self, input: &[f64]) -> Vec<f64> {
        let mut state = TfState::new(self);
        input.iter().map(|&u| state.step(u)).collect()
    }

    /// Poles (denominator roots in `z`).
    pub fn poles(&self) -> Vec<Complex64> {
        poly_roots(&self.den)
    }

    /// True when every pole lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

/// Evaluates `c[0] + c[1] x + c[2] x^2 + ...` by Horner's rule.
pub fn poly_eval(coeffs: &[f64], x: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// Roots of `c[0] + c[1] x + ... + c[n] x^n = 0` interpreted in `z^-1`
/// coefficients as used here: for a denominator in ascending powers of
/// `z^-1`, the poles in `z` are the roots of the reversed polynomial.
pub fn poly_roots(coeffs_zinv: &[f64]) -> Vec<Complex64> {
    // strip trailing (highest z^-1 power) zeros; they only add poles at z = 0
    let mut c: Vec<f64> = coeffs_zinv.to_vec();
    while c.len() > 1 && c.last() == Some(&0.0) {
        c.pop();
    }
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    // z^n * den(z^-1) = c0 z^n + c1 z^(n-1) + ... + cn: companion matrix
    let lead = c[0];
    let mut comp = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        comp[(0, k)] = -c[k + 1] / lead;
    }
    for k in 1..n {
        comp[(k, k - 1)] = 1.0;
    }
    comp.complex_eigenvalues().iter().cloned().collect()
}

/// Running state for the difference equation of a [`TransferFunction`].
#[derive(Debug, Clone)]
pub struct TfState {
    num: Vec<f64>,
    den: Vec<f64>,
    delay_fifo: std::collections::VecDeque<f64>,
    u_hist: std::collections::VecDeque<f64>,
    y_hist: std::collections::VecDeque<f64>,
}

impl TfState {
    pub fn new(tf: &TransferFunction) -> Self {
        TfState {
            num: tf.num.clone(),
            den: tf.den.clone(),
            delay_fifo: std::iter::repeat(0.0).take(tf.delay).collect(),
            u_hist: std::iter::repeat(0.0).take(tf.num.len()).collect(),
            y_hist: std::iter::repeat(0.0).take(tf.den.len() - 1).collect(),
        }
    }

    /// Advances one sample.
    pub fn step(&mut self, u: f64) -> f64 {
        self.step_with_disturbance(u, 0.0)
    }

    /// Advances one sample with an extra disturbance added at the dynamics
    /// input, downstream of the transport delay.
    pub fn step_with_disturbance(&mut self, u: f64, w: f64) -> f64 {
        let u_delayed = if self.delay_fifo.is_empty() {
            u
        } else {
            self.delay_fifo.push_back(u);
            self.delay_fifo.pop_front().unwrap()
        };
        self.u_hist.push_front(u_delayed + w);
        self.u_hist.pop_back();
        let mut y = 0.0;
        for (k, &b) in self.num.iter().enumerate() {
            y += b * self.u_hist[k];
        }
        for (k, &a) in self.den.iter().enumerate().skip(1) {
            y -= a * self.y_hist[k - 1];
        }
        self.y_hist.push_front(y);
        self.y_hist.pop_back();
        y
    }

    pub fn reset(&mut self) {
        for v in self.delay_fifo.iter_mut() {
            *v = 0.0;
        }
        for v in self.u_hist.iter_mut() {
            *v = 0.0;
        }
        for v in self.y_hist.iter_mut() {
            *v = 0.0;
        }
    }
}
