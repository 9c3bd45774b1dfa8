//! Thin wrappers over rustfft: cached plans plus real<->complex conveniences.
//!
//! Convention: `forward` computes the unnormalised DFT, `inverse` the
//! unnormalised inverse DFT; callers apply the `1/nfft` factor where their
//! derivation puts it.

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Process-wide planner: rustfft planners memoise the plans they have built,
/// so sharing one makes repeated transforms of the same size cheap everywhere
/// (training loops plan the same handful of sizes every epoch).
fn global_planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Shared planner for the half-size real-input / real-output transforms.
fn global_real_planner() -> &'static Mutex<RealFftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<RealFftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(RealFftPlanner::new()))
}

/// Per-call handle over the shared plan cache. Cheap to construct; holds
/// local references so the global lock is touched once per transform size.
pub struct FftScratch {
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
    r2c: HashMap<usize, Arc<dyn RealToComplex<f64>>>,
    c2r: HashMap<usize, Arc<dyn ComplexToReal<f64>>>,
    work: Vec<Complex<f64>>,
}

impl Default for FftScratch {
    fn default() -> Self {
        Self::new()
    }
}

impl FftScratch {
    pub fn new() -> Self {
        Self {
            forward: HashMap::new(),
            inverse: HashMap::new(),
            r2c: HashMap::new(),
            c2r: HashMap::new(),
            work: Vec::new(),
        }
    }

    pub fn forward(&mut self, buf: &mut [Complex<f64>]) {
        let plan = self.forward.entry(buf.len()).or_insert_with(|| {
            global_planner().lock().unwrap_or_else(|e| e.into_inner()).plan_fft_forward(buf.len())
        });
        plan.process(buf);
    }

    pub fn inverse(&mut self, buf: &mut [Complex<f64>]) {
        let plan = self.inverse.entry(buf.len()).or_insert_with(|| {
            global_planner().lock().unwrap_or_else(|e| e.into_inner()).plan_fft_inverse(buf.len())
        });
        plan.process(buf);
    }

    /// Unnormalised one-sided DFT of a real buffer: fills `out`
    /// (length `input.len() / 2 + 1`) with bins `0..=n/2`, identical to the
    /// lower half of the full complex DFT. `input` is clobbered as scratch.
    pub fn forward_real(&mut self, input: &mut [f64], out: &mut [Complex<f64>]) {
        let plan = self.r2c.entry(input.len()).or_insert_with(|| {
            global_real_planner()
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .plan_fft_forward(input.len())
        });
        if self.work.len() < plan.get_scratch_len() {
            self.work.resize(plan.get_scratch_len(), Complex::new(0.0, 0.0));
        }
        plan.process_with_scratch(input, out, &mut self.work)
            .expect("real DFT buffers sized to plan");
    }

    /// Unnormalised inverse DFT of the Hermitian extension of a one-sided
    /// spectrum (`spectrum.len() == out.len() / 2 + 1`). Interior bins
    /// therefore count twice (once as themselves, once as their conjugate
    /// mirror); the imaginary parts of the self-conjugate bins (DC and, for
    /// even lengths, Nyquist) are ignored. `spectrum` is clobbered.
    pub fn inverse_real(&mut self, spectrum: &mut [Complex<f64>], out: &mut [f64]) {
        let plan = self.c2r.entry(out.len()).or_insert_with(|| {
            global_real_planner()
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .plan_fft_inverse(out.len())
        });
        if self.work.len() < plan.get_scratch_len() {
            self.work.resize(plan.get_scratch_len(), Complex::new(0.0, 0.0));
        }
        spectrum[0].im = 0.0;
        if out.len() % 2 == 0 {
            let last = spectrum.len() - 1;
            spectrum[last].im = 0.0;
        }
        plan.process_with_scratch(spectrum, out, &mut self.work)
            .expect("inverse real DFT buffers sized to plan");
    }

    /// DFT of a real signal zero-padded to `nfft`.
    pub fn real_forward(&mut self, x: &[f64], nfft: usize) -> Vec<Complex<f64>> {
        let mut buf = complex_padded(x, nfft);
        self.forward(&mut buf);
        buf
    }

    /// Real part of the normalised inverse DFT.
    pub fn real_inverse(&mut self, spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        let scale = 1.0 / buf.len() as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Copies a real signal into a zero-padded complex buffer.
pub fn complex_padded(x: &[f64], nfft: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for (b, &v) in buf.iter_mut().zip(x) {
        *b = Complex::new(v, 0.0);
    }
    buf
}

/// Smallest power of two >= `n`.
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_recovers_signal() {
        let x = vec![1.0, -0.5, 0.25, 0.75, -1.0, 0.0, 0.5, -0.25];
        let mut s = FftScratch::new();
        let spec = s.real_forward(&x, 16);
        let back = s.real_inverse(&spec);
        for (got, want) in back.iter().zip(&x) {
            assert!((got - want).abs() < 1e-12);
        }
        for got in &back[x.len()..] {
            assert!(got.abs() < 1e-12);
        }
    }

    #[test]
    fn forward_of_delta_is_flat() {
        let mut s = FftScratch::new();
        let spec = s.real_forward(&[1.0], 8);
        for c in spec {
            assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn one_sided_forward_matches_complex_lower_half() {
        for n in [8usize, 12, 9] {
            let x: Vec<f64> = (0..n).map(|i| ((i * i) as f64 * 0.13).sin()).collect();
            let mut s = FftScratch::new();
            let full = s.real_forward(&x, n);
            let mut input = x.clone();
            let mut half = vec![Complex::new(0.0, 0.0); n / 2 + 1];
            s.forward_real(&mut input, &mut half);
            for (k, h) in half.iter().enumerate() {
                assert!((h - full[k]).norm() < 1e-10, "n={n} bin {k}");
            }
        }
    }

    #[test]
    fn hermitian_inverse_matches_mirrored_complex_inverse() {
        for n in [8usize, 12, 9] {
            let bins = n / 2 + 1;
            // An arbitrary one-sided spectrum with real self-conjugate bins.
            let mut half: Vec<Complex<f64>> = (0..bins)
                .map(|k| Complex::new((k as f64 * 0.7).cos(), (k as f64 * 1.3).sin()))
                .collect();
            half[0].im = 0.0;
            if n % 2 == 0 {
                half[bins - 1].im = 0.0;
            }
            // Reference: explicit Hermitian mirror through the complex path.
            let mut full = vec![Complex::new(0.0, 0.0); n];
            for (k, h) in half.iter().enumerate() {
                full[k] = *h;
                if k != 0 && n - k < n {
                    full[n - k] = h.conj();
                }
            }
            let mut s = FftScratch::new();
            s.inverse(&mut full);
            let mut out = vec![0.0; n];
            let mut spec = half.clone();
            s.inverse_real(&mut spec, &mut out);
            for (i, o) in out.iter().enumerate() {
                assert!((o - full[i].re).abs() < 1e-10, "n={n} sample {i}");
                assert!(full[i].im.abs() < 1e-10);
            }
        }
    }
}
