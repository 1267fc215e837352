//! Thin wrappers over `rustfft` for real-valued series.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn forward(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse transform scaled by `1/n`, returning the real part.
pub fn inverse_real(mut spectrum: Vec<Complex64>) -> Vec<f64> {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    spectrum.into_iter().map(|c| c.re * scale).collect()
}
