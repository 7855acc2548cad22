//! Variational Mode Decomposition: splits a 1-D signal into K band-limited
//! modes by ADMM in the Fourier domain.
//!
//! The signal is mirror-extended by half its length on each side, decomposed
//! on the doubled grid, and the center half of each mode is returned, so every
//! mode has the input's length.

use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Center-frequency initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitScheme {
    /// All centers start at zero.
    Zeros,
    /// Centers spread uniformly over [0, 0.5): ω_k = 0.5·k/K.
    #[default]
    Uniform,
    /// Centers drawn log-uniformly over [1/N, 0.5], sorted; seeded.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmdConfig {
    /// Number of modes.
    pub k: usize,
    /// Bandwidth penalty; larger α narrows each mode's band.
    pub alpha: f64,
    /// Lagrangian ascent step; 0 disables the exactness constraint.
    pub tau: f64,
    /// Pin mode 0 at zero frequency.
    pub dc_mode: bool,
    pub init: InitScheme,
    /// Convergence threshold on Σ_k ‖Δu_k‖²/‖u_k‖².
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for [`InitScheme::Random`]; ignored otherwise.
    pub seed: u64,
}

impl Default for VmdConfig {
    fn default() -> Self {
        VmdConfig {
            k: 11,
            alpha: 5000.0,
            tau: 0.0,
            dc_mode: false,
            init: InitScheme::Uniform,
            tol: 1e-7,
            max_iter: 500,
            seed: 0,
        }
    }
}

impl VmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("vmd: K must be ≥ 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::validation("vmd: alpha must be > 0"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("vmd: tol must be > 0"));
        }
        if self.max_iter < 1 {
            return Err(Error::validation("vmd: max_iter must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VmdResult {
    /// K × N; row k is mode k, rows ordered by ascending center frequency.
    pub modes: Array2<f64>,
    /// Center frequencies in cycles/sample, ascending, each in [0, 0.5].
    pub omegas: Vec<f64>,
    pub iterations: usize,
    /// Last value of the convergence measure; > tol means the iteration cap
    /// was hit before convergence.
    pub final_residual: f64,
}

/// Decomposes `signal` into `config.k` modes.
pub fn decompose(signal: &[f64], config: &VmdConfig) -> Result<VmdResult> {
    config.validate()?;
    let n = signal.len();
    if n < 2 * config.k {
        return Err(Error::validation(format!(
            "vmd: signal length {n} < 2·K = {}",
            2 * config.k
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("vmd: signal contains non-finite values"));
    }
    let k = config.k;

    // Mirror extension to 2N samples; the original occupies [left, left+N).
    let left = n / 2;
    let t_len = 2 * n;
    let mut extended = Vec::with_capacity(t_len);
    extended.extend(signal[..left].iter().rev());
    extended.extend_from_slice(signal);
    extended.extend(signal[left..].iter().rev());
    debug_assert_eq!(extended.len(), t_len);

    // Shifted frequency grid: freqs[i] = i/T − 0.5, so freqs[T/2] = 0.
    let freqs: Vec<f64> = (0..t_len).map(|i| i as f64 / t_len as f64 - 0.5).collect();
    let half = t_len / 2;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(t_len);
    let mut f_hat: Vec<Complex64> = extended
        .iter()
        .map(|v| Complex64::new(*v, 0.0))
        .collect();
    fft.process(&mut f_hat);
    fftshift(&mut f_hat);
    // Analytic (positive-frequency) spectrum only.
    let mut f_hat_plus = f_hat;
    for v in &mut f_hat_plus[..half] {
        *v = Complex64::ZERO;
    }

    let mut omega = initial_omegas(config, n);
    if config.dc_mode {
        omega[0] = 0.0;
    }

    let mut u_hat = vec![vec![Complex64::ZERO; t_len]; k];
    let mut u_prev = vec![vec![Complex64::ZERO; t_len]; k];
    let mut lambda_hat = vec![Complex64::ZERO; t_len];

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < config.max_iter {
        for (dst, src) in u_prev.iter_mut().zip(&u_hat) {
            dst.copy_from_slice(src);
        }

        // Gauss-Seidel sweep: each mode sees the others' freshest estimates.
        for mode in 0..k {
            let w_k = omega[mode];
            let mut num = 0.0;
            let mut den = 0.0;
            for j in half..t_len {
                let mut others = Complex64::ZERO;
                for (i, u) in u_hat.iter().enumerate() {
                    if i != mode {
                        others += u[j];
                    }
                }
                let gain = 1.0 + 2.0 * config.alpha * (freqs[j] - w_k) * (freqs[j] - w_k);
                let updated = (f_hat_plus[j] - others + lambda_hat[j] * 0.5) / gain;
                u_hat[mode][j] = updated;
                let power = updated.norm_sqr();
                num += freqs[j] * power;
                den += power;
            }
            if !(config.dc_mode && mode == 0) && den > 0.0 {
                omega[mode] = num / den;
            }
        }

        if config.tau != 0.0 {
            for j in half..t_len {
                let total: Complex64 = u_hat.iter().map(|u| u[j]).sum();
                lambda_hat[j] += config.tau * (f_hat_plus[j] - total);
            }
        }

        iterations += 1;
        residual = 0.0;
        for (new, old) in u_hat.iter().zip(&u_prev) {
            let mut dn = 0.0;
            let mut pn = 0.0;
            for (a, b) in new.iter().zip(old) {
                dn += (a - b).norm_sqr();
                pn += b.norm_sqr();
            }
            // First sweep starts from zero modes: treat any change as "not yet
            // converged" rather than dividing by zero.
            residual += if pn == 0.0 {
                if dn == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                dn / pn
            };
        }
        if residual < config.tol {
            break;
        }
    }

    // Rebuild full spectra by conjugate symmetry and invert.
    let ifft = planner.plan_fft_inverse(t_len);
    let mut modes = Array2::zeros((k, n));
    for (mode, u) in u_hat.iter().enumerate() {
        let mut full = vec![Complex64::ZERO; t_len];
        full[half..].copy_from_slice(&u[half..]);
        for j in 1..=half {
            full[j] = u[t_len - j].conj();
        }
        full[0] = full[t_len - 1].conj();
        ifftshift(&mut full);
        ifft.process(&mut full);
        for (i, value) in full[left..left + n].iter().enumerate() {
            modes[[mode, i]] = value.re / t_len as f64;
        }
    }

    // Ascending-frequency order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| omega[*a].total_cmp(&omega[*b]));
    let sorted_modes =
        Array2::from_shape_fn((k, n), |(row, col)| modes[[order[row], col]]);
    let sorted_omegas: Vec<f64> = order.iter().map(|i| omega[*i]).collect();

    Ok(VmdResult {
        modes: sorted_modes,
        omegas: sorted_omegas,
        iterations,
        final_residual: residual,
    })
}

/// Leakage-controlled variant: rows `0..train_len` come from decomposing the
/// training segment alone; each later row re-decomposes the expanding window
/// ending there and keeps only its last sample.
pub fn decompose_causal(signal: &[f64], train_len: usize, config: &VmdConfig) -> Result<VmdResult> {
    if train_len == 0 || train_len > signal.len() {
        return Err(Error::validation(format!(
            "vmd: train_len {train_len} out of range for signal of {}",
            signal.len()
        )));
    }
    let base = decompose(&signal[..train_len], config)?;
    let n = signal.len();
    let mut modes = Array2::zeros((config.k, n));
    modes
        .slice_mut(ndarray::s![.., ..train_len])
        .assign(&base.modes);
    let mut iterations = base.iterations;
    let mut residual = base.final_residual;
    for t in train_len..n {
        let step = decompose(&signal[..=t], config)?;
        for mode in 0..config.k {
            modes[[mode, t]] = step.modes[[mode, t]];
        }
        iterations = step.iterations;
        residual = step.final_residual;
    }
    Ok(VmdResult {
        modes,
        omegas: base.omegas,
        iterations,
        final_residual: residual,
    })
}

fn initial_omegas(config: &VmdConfig, n: usize) -> Vec<f64> {
    match config.init {
        InitScheme::Zeros => vec![0.0; config.k],
        InitScheme::Uniform => (0..config.k)
            .map(|i| 0.5 * i as f64 / config.k as f64)
            .collect(),
        InitScheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let fs = 1.0 / n as f64;
            let mut omegas: Vec<f64> = (0..config.k)
                .map(|_| (fs.ln() + (0.5f64.ln() - fs.ln()) * rng.random::<f64>()).exp())
                .collect();
            omegas.sort_by(f64::total_cmp);
            omegas
        }
    }
}

/// In-place fftshift for even-length buffers: swaps the two halves.
fn fftshift(buffer: &mut [Complex64]) {
    let half = buffer.len() / 2;
    let (a, b) = buffer.split_at_mut(half);
    a.swap_with_slice(b);
}

/// Inverse of [`fftshift`]; identical for even lengths.
fn ifftshift(buffer: &mut [Complex64]) {
    fftshift(buffer);
}

/// Writes modes as `date,M0..M(K−1)` rows.
pub fn write_modes_csv(path: &Path, dates: &[chrono::NaiveDate], result: &VmdResult) -> Result<()> {
    let (k, n) = result.modes.dim();
    if dates.len() != n {
        return Err(Error::validation(format!(
            "modes span {n} samples but {} dates given",
            dates.len()
        )));
    }
    let mut body = String::from("date");
    for mode in 0..k {
        let _ = write!(body, ",M{mode}");
    }
    body.push('\n');
    for (i, date) in dates.iter().enumerate() {
        let _ = write!(body, "{date}");
        for mode in 0..k {
            let _ = write!(body, ",{:?}", result.modes[[mode, i]]);
        }
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a stacked-layout plot-data file: one block per mode, highest
/// frequency at the bottom, each offset vertically so the traces do not
/// overlap. Blocks are blank-line separated for plotting tools.
pub fn write_modes_plot_data(path: &Path, result: &VmdResult) -> Result<()> {
    let (k, n) = result.modes.dim();
    let mut span: f64 = 0.0;
    for value in &result.modes {
        span = span.max(value.abs());
    }
    let step = 2.2 * span.max(1e-12);
    let mut body = String::new();
    for mode in 0..k {
        let offset = (k - 1 - mode) as f64 * step;
        let _ = writeln!(body, "# M{mode} omega={:?}", result.omegas[mode]);
        for i in 0..n {
            let _ = writeln!(body, "{i} {:?}", result.modes[[mode, i]] + offset);
        }
        body.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(body.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
