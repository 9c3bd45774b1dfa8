//! Signal-rate building blocks: time-varying FIR filtering, control-rate
//! upsampling, analysis windows, a deterministic chirp-train test signal, and
//! the pre-emphasis filter used before waveform losses.

use crate::error::FilterError;
use crate::signal::CoeffTrajectory;

/// Gradients of a scalar loss through [`tv_fir`].
#[derive(Debug, Clone)]
pub struct FirGrad {
    pub grad_x: Vec<f64>,
    /// Same layout as the tap trajectory (column `i` is lag `i`).
    pub grad_coeffs: CoeffTrajectory,
}

/// Time-varying FIR: `y(n) = sum_{i=0..K-1} b_i(n) x(n-i)` with column `i` of
/// `b` holding the lag-`i` tap at each sample.
pub fn tv_fir(x: &[f64], b: &CoeffTrajectory) -> Result<Vec<f64>, FilterError> {
    if b.rows() != x.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "signal has {} samples but tap trajectory has {} rows",
            x.len(),
            b.rows()
        )));
    }
    let taps = b.cols();
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let row = b.row(n);
        let mut acc = 0.0;
        for i in 0..taps.min(n + 1) {
            acc += row[i] * x[n - i];
        }
        y[n] = acc;
    }
    Ok(y)
}

/// Reverse-mode gradients through [`tv_fir`]: the adjoint scatters each tap's
/// contribution back in time, `grad_x(n) = sum_i b_i(n+i) grad_y(n+i)`, and
/// the tap gradient is pointwise `grad_b_i(n) = grad_y(n) x(n-i)`.
pub fn tv_fir_backward(
    grad_y: &[f64],
    x: &[f64],
    b: &CoeffTrajectory,
) -> Result<FirGrad, FilterError> {
    if grad_y.len() != x.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "gradient has {} samples but input has {}",
            grad_y.len(),
            x.len()
        )));
    }
    if b.rows() != x.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "signal has {} samples but tap trajectory has {} rows",
            x.len(),
            b.rows()
        )));
    }
    let n_len = x.len();
    let taps = b.cols();
    let mut grad_x = vec![0.0; n_len];
    let mut grad_b = vec![0.0; n_len * taps];
    for n in 0..n_len {
        let row = b.row(n);
        for i in 0..taps.min(n + 1) {
            grad_x[n - i] += row[i] * grad_y[n];
            grad_b[n * taps + i] = grad_y[n] * x[n - i];
        }
    }
    Ok(FirGrad {
        grad_x,
        grad_coeffs: CoeffTrajectory::from_rows(grad_b, taps).expect("same shape as taps"),
    })
}

/// Linearly interpolates a control sequence up to audio rate: frame `k` lands
/// on sample `k * hop` and the final segment holds the last frame's value.
pub fn upsample_linear(
    frames: &[f64],
    target_len: usize,
    hop: usize,
) -> Result<Vec<f64>, FilterError> {
    if frames.len() < 2 {
        return Err(FilterError::BadArgument(
            "control upsampling needs at least 2 frames".into(),
        ));
    }
    if hop == 0 || target_len == 0 {
        return Err(FilterError::BadArgument("hop and target length must be >= 1".into()));
    }
    let last = frames.len() - 1;
    let mut out = Vec::with_capacity(target_len);
    for n in 0..target_len {
        let k = n / hop;
        if k >= last {
            out.push(frames[last]);
        } else {
            let frac = (n - k * hop) as f64 / hop as f64;
            out.push(frames[k] * (1.0 - frac) + frames[k + 1] * frac);
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample_linear`]: scatters an audio-rate gradient back onto
/// the control frames with the same interpolation weights.
pub fn upsample_linear_adjoint(
    grad_out: &[f64],
    frames_len: usize,
    hop: usize,
) -> Result<Vec<f64>, FilterError> {
    if frames_len < 2 {
        return Err(FilterError::BadArgument(
            "control upsampling needs at least 2 frames".into(),
        ));
    }
    if hop == 0 {
        return Err(FilterError::BadArgument("hop must be >= 1".into()));
    }
    let last = frames_len - 1;
    let mut grad = vec![0.0; frames_len];
    for (n, &g) in grad_out.iter().enumerate() {
        let k = n / hop;
        if k >= last {
            grad[last] += g;
        } else {
            let frac = (n - k * hop) as f64 / hop as f64;
            grad[k] += g * (1.0 - frac);
            grad[k + 1] += g * frac;
        }
    }
    Ok(grad)
}

/// Periodic Hann window `w(n) = 0.5 (1 - cos(2 pi n / len))`. At 75% overlap
/// (hop = len / 4) the shifted windows sum to a constant, as do their squares,
/// which is what the overlap-add reconstruction in the frequency-sampling
/// filter relies on.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Parameters for [`chirp_train`].
#[derive(Debug, Clone, Copy)]
pub struct ChirpTrain {
    pub chirps_per_second: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub peak: f64,
}

impl Default for ChirpTrain {
    fn default() -> Self {
        Self { chirps_per_second: 1.0, f_lo: 20.0, f_hi: 20_000.0, peak: 0.9 }
    }
}

/// Deterministic train of exponential sine sweeps. Each segment sweeps
/// `f_lo -> f_hi` (capped below Nyquist), with short raised-cosine fades at
/// the segment edges so repeated sweeps don't click.
pub fn chirp_train(
    duration_s: f64,
    sample_rate: f64,
    params: ChirpTrain,
) -> Result<Vec<f64>, FilterError> {
    if !(duration_s > 0.0) || !(sample_rate > 0.0) || !(params.chirps_per_second > 0.0) {
        return Err(FilterError::BadArgument(
            "duration, rate and chirp rate must be positive".into(),
        ));
    }
    if !(params.peak > 0.0 && params.peak <= 0.9) {
        return Err(FilterError::BadArgument("chirp peak must lie in (0, 0.9]".into()));
    }
    let total = (duration_s * sample_rate).round() as usize;
    let seg_len = (sample_rate / params.chirps_per_second).round().max(8.0) as usize;
    let f_hi = params.f_hi.min(0.45 * sample_rate);
    let f_lo = params.f_lo.min(f_hi * 0.5);
    let seg_t = seg_len as f64 / sample_rate;
    let ratio = f_hi / f_lo;
    let fade = (0.005 * sample_rate).round() as usize; // 5 ms edge fades
    let mut out = Vec::with_capacity(total);
    for n in 0..total {
        let m = n % seg_len;
        let t = m as f64 / sample_rate;
        // Exponential sweep: instantaneous frequency f_lo * ratio^(t/T).
        let phase = 2.0 * std::f64::consts::PI * f_lo * seg_t / ratio.ln()
            * ((ratio.powf(t / seg_t)) - 1.0);
        let mut s = phase.sin();
        if fade > 0 && m < fade {
            s *= 0.5 * (1.0 - (std::f64::consts::PI * m as f64 / fade as f64).cos());
        }
        if fade > 0 && m + fade >= seg_len {
            let k = seg_len - 1 - m;
            s *= 0.5 * (1.0 - (std::f64::consts::PI * k as f64 / fade as f64).cos());
        }
        out.push(params.peak * s);
    }
    Ok(out)
}

/// Pole of the pre-emphasis filter `H(z) = (1 - z^-1) / (1 - 0.995 z^-1)`.
pub const PRE_EMPHASIS_POLE: f64 = 0.995;

/// First-order pre-emphasis used before waveform-domain losses; boosts highs
/// so broadband errors aren't swamped by low-frequency energy.
pub fn pre_emphasis(x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let mut x_prev = 0.0;
    let mut y_prev = 0.0;
    for (n, &xn) in x.iter().enumerate() {
        let yn = xn - x_prev + PRE_EMPHASIS_POLE * y_prev;
        y[n] = yn;
        x_prev = xn;
        y_prev = yn;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_taps_match_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kernel = [0.5, -0.25, 0.125];
        let b = CoeffTrajectory::constant(&kernel, x.len()).unwrap();
        let y = tv_fir(&x, &b).unwrap();
        for n in 0..x.len() {
            let mut want = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                if n >= i {
                    want += k * x[n - i];
                }
            }
            assert!((y[n] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_taps_delay_the_input() {
        let x: Vec<f64> = (0..10).map(|n| n as f64).collect();
        let b = CoeffTrajectory::constant(&[0.0, 0.0, 1.0], x.len()).unwrap();
        let y = tv_fir(&x, &b).unwrap();
        assert_eq!(&y[2..], &x[..8]);
        assert_eq!(&y[..2], &[0.0, 0.0]);
    }

    #[test]
    fn fir_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n_len = 20;
        let taps = 3;
        let x: Vec<f64> = (0..n_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = CoeffTrajectory::from_rows(
            (0..n_len * taps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            taps,
        )
        .unwrap();
        let w: Vec<f64> = (0..n_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], b: &CoeffTrajectory| -> f64 {
            tv_fir(x, b).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum()
        };
        let grads = tv_fir_backward(&w, &x, &b).unwrap();
        let h = 1e-6;
        for n in 0..n_len {
            let mut xp = x.clone();
            xp[n] += h;
            let mut xm = x.clone();
            xm[n] -= h;
            let fd = (loss(&xp, &b) - loss(&xm, &b)) / (2.0 * h);
            assert!((fd - grads.grad_x[n]).abs() < 1e-7);
        }
        for n in 0..n_len {
            for i in 0..taps {
                let per = |delta: f64| {
                    let mut d = b.data().to_vec();
                    d[n * taps + i] += delta;
                    loss(&x, &CoeffTrajectory::from_rows(d, taps).unwrap())
                };
                let fd = (per(h) - per(-h)) / (2.0 * h);
                assert!((fd - grads.grad_coeffs.at(n, i)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn upsample_interpolates_and_holds_tail() {
        let c = [0.0, 1.0];
        let up = upsample_linear(&c, 5, 4).unwrap();
        assert_eq!(up, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let up = upsample_linear(&[1.0, 3.0], 8, 2).unwrap();
        assert_eq!(up, vec![1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn upsample_adjoint_satisfies_dot_product_identity() {
        // <up(du), w> must equal <du, adjoint(w)> for the pairing to be exact.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(frames, hop, target) in &[(5usize, 4usize, 20usize), (7, 3, 25), (3, 8, 17)] {
            let du: Vec<f64> = (0..frames).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..target).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let up = upsample_linear(&du, target, hop).unwrap();
            let adj = upsample_linear_adjoint(&w, frames, hop).unwrap();
            let lhs: f64 = up.iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs: f64 = du.iter().zip(&adj).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn hann_windows_overlap_add_to_a_constant() {
        let len = 64;
        let hop = len / 4;
        let w = hann_window(len);
        let span = len * 8;
        let mut acc = vec![0.0; span];
        let mut acc_sq = vec![0.0; span];
        let mut start = 0;
        while start + len <= span {
            for (i, &wi) in w.iter().enumerate() {
                acc[start + i] += wi;
                acc_sq[start + i] += wi * wi;
            }
            start += hop;
        }
        // Interior samples (fully covered by 4 windows).
        for n in len..span - len {
            assert!((acc[n] - 2.0).abs() < 1e-9, "sum at {n} = {}", acc[n]);
            assert!((acc_sq[n] - 1.5).abs() < 1e-9, "sq sum at {n} = {}", acc_sq[n]);
        }
    }

    #[test]
    fn chirp_train_stays_within_peak_and_is_periodic() {
        let sr = 8000.0;
        let x = chirp_train(2.0, sr, ChirpTrain::default()).unwrap();
        assert_eq!(x.len(), 16000);
        assert!(x.iter().all(|v| v.abs() <= 0.9 + 1e-12));
        // Two identical one-second sweeps.
        assert_eq!(&x[..8000], &x[8000..]);
        // Carries real energy.
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rms > 0.3, "rms {rms}");
    }

    #[test]
    fn pre_emphasis_impulse_response_starts_one_then_decays() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        let y = pre_emphasis(&x);
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((y[1] - (-0.005)).abs() < 1e-15);
        // Geometric tail with ratio 0.995.
        assert!((y[2] - y[1] * PRE_EMPHASIS_POLE).abs() < 1e-15);
    }
}
