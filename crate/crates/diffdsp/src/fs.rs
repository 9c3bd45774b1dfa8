//! Frequency-sampling approximations of time-varying filters.
//!
//! Instead of running the recursion sample by sample, the input is chopped into
//! overlapping Hann-windowed frames, each frame is multiplied in the frequency
//! domain by the rational response `B/A` frozen at the frame centre, and the
//! frames are overlap-added back with the same window (weighted OLA, normalised
//! per sample by the summed squared window). The approximation is cheap and
//! exact for slowly varying coefficients but smears fast modulation across the
//! frame; both forward and reverse passes are provided so the approximation can
//! be timed and trained as a baseline.

use crate::error::FilterError;
use crate::fft::{complex_padded, next_pow2, FftScratch};
use crate::signal::CoeffTrajectory;
use crate::sigops::hann_window;
use rustfft::num_complex::Complex;

/// Frame geometry for [`fs_tv_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsFilterSpec {
    /// Analysis/synthesis window length in samples.
    pub n_win: usize,
    /// Hop between frames; also the hop of the coefficient trajectories.
    pub hop: usize,
}

impl FsFilterSpec {
    /// Default geometry: windows spanning four hops (75% overlap).
    pub fn for_hop(hop: usize) -> Self {
        Self { n_win: 4 * hop, hop }
    }

    /// FFT length: twice the window length rounded up to a power of two, so
    /// each frame has room for the response tail before wrapping.
    pub fn nfft(&self) -> usize {
        2 * next_pow2(self.n_win)
    }

    fn validate(&self) -> Result<(), FilterError> {
        if self.hop == 0 || self.n_win == 0 || self.hop > self.n_win {
            return Err(FilterError::BadArgument(format!(
                "need 1 <= hop <= n_win, got hop {} n_win {}",
                self.hop, self.n_win
            )));
        }
        Ok(())
    }
}

/// How small |A| may get at any frequency bin before the frame counts as
/// singular (a denominator root on the unit circle).
const MIN_DENOMINATOR_ABS: f64 = 1e-9;

struct FramePlan {
    pad: usize,
    padded_len: usize,
    window: Vec<f64>,
    /// Per-sample sum of squared synthesis windows over the padded span.
    norm: Vec<f64>,
    frame_starts: Vec<usize>,
    /// Coefficient row used by each frame (nearest row to the frame centre).
    frame_rows: Vec<usize>,
}

fn plan_frames(sig_len: usize, n_rows: usize, spec: &FsFilterSpec) -> FramePlan {
    let pad = spec.n_win;
    let padded_len = pad + sig_len + spec.n_win;
    let window = hann_window(spec.n_win);
    let mut frame_starts = Vec::new();
    let mut frame_rows = Vec::new();
    let mut start = 0;
    while start + spec.n_win <= padded_len {
        frame_starts.push(start);
        let centre = start as f64 - pad as f64 + spec.n_win as f64 / 2.0;
        let row = (centre / spec.hop as f64).round().clamp(0.0, (n_rows - 1) as f64);
        frame_rows.push(row as usize);
        start += spec.hop;
    }
    let mut norm = vec![0.0; padded_len];
    for &s in &frame_starts {
        for (i, &w) in window.iter().enumerate() {
            norm[s + i] += w * w;
        }
    }
    FramePlan { pad, padded_len, window, norm, frame_starts, frame_rows }
}

fn check_coeff_shapes(
    b_rows: &CoeffTrajectory,
    a_rows: &CoeffTrajectory,
) -> Result<(), FilterError> {
    if b_rows.rows() != a_rows.rows() {
        return Err(FilterError::ShapeMismatch(format!(
            "tap trajectory has {} rows but feedback trajectory has {}",
            b_rows.rows(),
            a_rows.rows()
        )));
    }
    Ok(())
}

/// Frozen frame response `H = FFT(b) / FFT([1, a])`, checking for on-circle
/// denominator roots.
fn frame_response(
    scratch: &mut FftScratch,
    b_row: &[f64],
    a_row: &[f64],
    nfft: usize,
    frame: usize,
) -> Result<(Vec<Complex<f64>>, Vec<Complex<f64>>), FilterError> {
    let b_spec = scratch.real_forward(b_row, nfft);
    let mut a_full = Vec::with_capacity(a_row.len() + 1);
    a_full.push(1.0);
    a_full.extend_from_slice(a_row);
    let a_spec = scratch.real_forward(&a_full, nfft);
    for (bin, a) in a_spec.iter().enumerate() {
        let mag = a.norm();
        if mag < MIN_DENOMINATOR_ABS {
            return Err(FilterError::SingularFrame { frame, bin, min_abs: MIN_DENOMINATOR_ABS });
        }
    }
    let h: Vec<Complex<f64>> = b_spec.iter().zip(&a_spec).map(|(b, a)| b / a).collect();
    Ok((h, a_spec))
}

/// Applies a frame-rate rational filter trajectory by frequency sampling.
///
/// `b_rows` holds the feed-forward taps (lag 0 first), `a_rows` the feedback
/// coefficients (lag 1 first, unity lead implied); row `k` is centred on audio
/// sample `k * hop`. Output has the length of `x`.
pub fn fs_tv_filter(
    x: &[f64],
    b_rows: &CoeffTrajectory,
    a_rows: &CoeffTrajectory,
    spec: &FsFilterSpec,
) -> Result<Vec<f64>, FilterError> {
    spec.validate()?;
    check_coeff_shapes(b_rows, a_rows)?;
    let plan = plan_frames(x.len(), b_rows.rows(), spec);
    let nfft = spec.nfft();
    let mut scratch = FftScratch::new();

    let mut xp = vec![0.0; plan.padded_len];
    xp[plan.pad..plan.pad + x.len()].copy_from_slice(x);

    let mut out = vec![0.0; plan.padded_len];
    let mut seg = vec![0.0; spec.n_win];
    for (f, (&start, &row)) in plan.frame_starts.iter().zip(&plan.frame_rows).enumerate() {
        for (i, s) in seg.iter_mut().enumerate() {
            *s = xp[start + i] * plan.window[i];
        }
        let mut spec_buf = complex_padded(&seg, nfft);
        scratch.forward(&mut spec_buf);
        let (h, _) = frame_response(&mut scratch, b_rows.row(row), a_rows.row(row), nfft, f)?;
        for (s, h) in spec_buf.iter_mut().zip(&h) {
            *s *= h;
        }
        scratch.inverse(&mut spec_buf);
        let scale = 1.0 / nfft as f64;
        for (i, &w) in plan.window.iter().enumerate() {
            out[start + i] += w * spec_buf[i].re * scale;
        }
    }

    let mut y = Vec::with_capacity(x.len());
    for n in 0..x.len() {
        let t = plan.pad + n;
        let d = plan.norm[t];
        y.push(if d > 1e-12 { out[t] / d } else { 0.0 });
    }
    Ok(y)
}

/// Gradients of a scalar loss through [`fs_tv_filter`].
#[derive(Debug, Clone)]
pub struct FsFilterGrad {
    pub grad_x: Vec<f64>,
    /// Frame-rate gradient w.r.t. the feed-forward taps.
    pub grad_b: CoeffTrajectory,
    /// Frame-rate gradient w.r.t. the feedback coefficients.
    pub grad_a: CoeffTrajectory,
}

/// Reverse pass of [`fs_tv_filter`]. Per frame the chain is linear in the
/// windowed input spectrum `S` and holomorphic in the frame response; the
/// adjoints fall out of the complex products: `grad_S = conj(H) grad_Y`,
/// `grad_H = conj(S) grad_Y`, `grad_B = conj(1/A) grad_H`,
/// `grad_A = -conj(H/A) grad_H`, each pulled back through unnormalised DFTs.
pub fn fs_tv_filter_backward(
    grad_y: &[f64],
    x: &[f64],
    b_rows: &CoeffTrajectory,
    a_rows: &CoeffTrajectory,
    spec: &FsFilterSpec,
) -> Result<FsFilterGrad, FilterError> {
    spec.validate()?;
    check_coeff_shapes(b_rows, a_rows)?;
    if grad_y.len() != x.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "gradient has {} samples but input has {}",
            grad_y.len(),
            x.len()
        )));
    }
    let plan = plan_frames(x.len(), b_rows.rows(), spec);
    let nfft = spec.nfft();
    let mut scratch = FftScratch::new();

    let mut xp = vec![0.0; plan.padded_len];
    xp[plan.pad..plan.pad + x.len()].copy_from_slice(x);
    // Upstream gradient divided by the OLA normaliser, placed on the padded grid.
    let mut gp = vec![0.0; plan.padded_len];
    for (n, &g) in grad_y.iter().enumerate() {
        let t = plan.pad + n;
        if plan.norm[t] > 1e-12 {
            gp[t] = g / plan.norm[t];
        }
    }

    let n_taps = b_rows.cols();
    let n_fb = a_rows.cols();
    let mut grad_xp = vec![0.0; plan.padded_len];
    let mut grad_b = vec![0.0; b_rows.rows() * n_taps];
    let mut grad_a = vec![0.0; a_rows.rows() * n_fb];
    let mut seg = vec![0.0; spec.n_win];

    for (f, (&start, &row)) in plan.frame_starts.iter().zip(&plan.frame_rows).enumerate() {
        // Recompute the frame's forward intermediates.
        for (i, s) in seg.iter_mut().enumerate() {
            *s = xp[start + i] * plan.window[i];
        }
        let mut s_spec = complex_padded(&seg, nfft);
        scratch.forward(&mut s_spec);
        let (h, a_spec) = frame_response(&mut scratch, b_rows.row(row), a_rows.row(row), nfft, f)?;

        // d loss / d (filtered frame), synthesis window applied.
        let mut gy_frame = vec![0.0; spec.n_win];
        for (i, &w) in plan.window.iter().enumerate() {
            gy_frame[i] = w * gp[start + i];
        }
        let mut grad_spec = complex_padded(&gy_frame, nfft);
        scratch.forward(&mut grad_spec);
        let inv_nfft = 1.0 / nfft as f64;
        for g in grad_spec.iter_mut() {
            *g *= inv_nfft; // grad_Y
        }

        // Input branch: grad_S = conj(H) grad_Y -> frame -> analysis window.
        let mut grad_s: Vec<Complex<f64>> =
            grad_spec.iter().zip(&h).map(|(g, h)| g * h.conj()).collect();
        scratch.inverse(&mut grad_s);
        for (i, &w) in plan.window.iter().enumerate() {
            grad_xp[start + i] += w * grad_s[i].re;
        }

        // Coefficient branch.
        let grad_h: Vec<Complex<f64>> =
            grad_spec.iter().zip(&s_spec).map(|(g, s)| g * s.conj()).collect();
        let mut grad_b_spec: Vec<Complex<f64>> =
            grad_h.iter().zip(&a_spec).map(|(g, a)| g * (1.0 / a).conj()).collect();
        scratch.inverse(&mut grad_b_spec);
        for i in 0..n_taps {
            grad_b[row * n_taps + i] += grad_b_spec[i].re;
        }
        let mut grad_a_spec: Vec<Complex<f64>> = grad_h
            .iter()
            .zip(h.iter().zip(&a_spec))
            .map(|(g, (h, a))| -(g * (h / a).conj()))
            .collect();
        scratch.inverse(&mut grad_a_spec);
        for i in 0..n_fb {
            grad_a[row * n_fb + i] += grad_a_spec[i + 1].re;
        }
    }

    Ok(FsFilterGrad {
        grad_x: grad_xp[plan.pad..plan.pad + x.len()].to_vec(),
        grad_b: CoeffTrajectory::from_rows(grad_b, n_taps).expect("same shape as taps"),
        grad_a: CoeffTrajectory::from_rows(grad_a, n_fb).expect("same shape as feedback"),
    })
}

/// One-pole smoother `y(n) = alpha u(n) + (1 - alpha) y(n-1)` applied over the
/// whole signal at once by sampling its transfer function on an FFT grid at
/// least twice the signal length.
pub fn fs_one_pole(u: &[f64], alpha: f64) -> Result<Vec<f64>, FilterError> {
    let (y, _) = fs_one_pole_with_spectra(u, alpha, None)?;
    Ok(y)
}

/// Gradients of a scalar loss through [`fs_one_pole`].
#[derive(Debug, Clone)]
pub struct FsOnePoleGrad {
    pub grad_u: Vec<f64>,
    pub grad_alpha: f64,
}

fn one_pole_response(alpha: f64, nfft: usize) -> Vec<Complex<f64>> {
    (0..nfft)
        .map(|k| {
            let w = 2.0 * std::f64::consts::PI * k as f64 / nfft as f64;
            let z_inv = Complex::from_polar(1.0, -w);
            alpha / (1.0 - (1.0 - alpha) * z_inv)
        })
        .collect()
}

fn fs_one_pole_with_spectra(
    u: &[f64],
    alpha: f64,
    grad_y: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<FsOnePoleGrad>), FilterError> {
    if u.is_empty() {
        return Err(FilterError::BadArgument("empty input".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FilterError::BadArgument(format!(
            "smoothing coefficient must lie in (0, 1), got {alpha}"
        )));
    }
    let nfft = next_pow2(2 * u.len());
    let mut scratch = FftScratch::new();
    let h = one_pole_response(alpha, nfft);
    let u_spec = scratch.real_forward(u, nfft);
    let mut y_spec: Vec<Complex<f64>> = u_spec.iter().zip(&h).map(|(u, h)| u * h).collect();
    scratch.inverse(&mut y_spec);
    let scale = 1.0 / nfft as f64;
    let y: Vec<f64> = y_spec[..u.len()].iter().map(|c| c.re * scale).collect();

    let grads = match grad_y {
        None => None,
        Some(g) => {
            if g.len() != u.len() {
                return Err(FilterError::ShapeMismatch(format!(
                    "gradient has {} samples but input has {}",
                    g.len(),
                    u.len()
                )));
            }
            let mut g_spec = scratch.real_forward(g, nfft);
            for gs in g_spec.iter_mut() {
                *gs *= scale; // grad_Y
            }
            let mut grad_u_spec: Vec<Complex<f64>> =
                g_spec.iter().zip(&h).map(|(g, h)| g * h.conj()).collect();
            scratch.inverse(&mut grad_u_spec);
            let grad_u: Vec<f64> = grad_u_spec[..u.len()].iter().map(|c| c.re).collect();

            // d H / d alpha = (1 - z^-1) / (1 - (1 - alpha) z^-1)^2
            let mut grad_alpha = 0.0;
            for (k, gs) in g_spec.iter().enumerate() {
                let w = 2.0 * std::f64::consts::PI * k as f64 / nfft as f64;
                let z_inv = Complex::from_polar(1.0, -w);
                let denom = 1.0 - (1.0 - alpha) * z_inv;
                let dh = (1.0 - z_inv) / (denom * denom);
                grad_alpha += (gs.conj() * u_spec[k] * dh).re;
            }
            Some(FsOnePoleGrad { grad_u, grad_alpha })
        }
    };
    Ok((y, grads))
}

/// Reverse pass of [`fs_one_pole`].
pub fn fs_one_pole_backward(
    grad_y: &[f64],
    u: &[f64],
    alpha: f64,
) -> Result<FsOnePoleGrad, FilterError> {
    let (_, grads) = fs_one_pole_with_spectra(u, alpha, Some(grad_y))?;
    Ok(grads.expect("gradients requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allpole::allpole_forward;
    use crate::sigops::{tv_fir, upsample_linear};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn esr(y: &[f64], t: &[f64]) -> f64 {
        let num: f64 = y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = t.iter().map(|b| b * b).sum();
        num / den
    }

    #[test]
    fn identity_filter_reconstructs_input_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows = x.len() / 64 + 2;
        let b = CoeffTrajectory::constant(&[1.0, 0.0, 0.0], rows).unwrap();
        let a = CoeffTrajectory::constant(&[0.0, 0.0], rows).unwrap();
        let y = fs_tv_filter(&x, &b, &a, &FsFilterSpec::for_hop(64)).unwrap();
        for (n, (got, want)) in y.iter().zip(&x).enumerate() {
            assert!((got - want).abs() < 1e-9, "sample {n}: {got} vs {want}");
        }
    }

    #[test]
    fn time_invariant_filter_matches_recursion_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Mild lowpass biquad.
        let (b, a) = ([0.06745, 0.1349, 0.06745], [-1.1430, 0.4128]);
        let hop = 256;
        let spec = FsFilterSpec::for_hop(hop);
        let rows = n / hop + 2;
        let b_rows = CoeffTrajectory::constant(&b, rows).unwrap();
        let a_rows = CoeffTrajectory::constant(&a, rows).unwrap();
        let y_fs = fs_tv_filter(&x, &b_rows, &a_rows, &spec).unwrap();

        let b_aud = CoeffTrajectory::constant(&b, n).unwrap();
        let a_aud = CoeffTrajectory::constant(&a, n).unwrap();
        let y_td = allpole_forward(&tv_fir(&x, &b_aud).unwrap(), &a_aud).unwrap();

        let lo = 4 * spec.n_win;
        let hi = n - 4 * spec.n_win;
        let e = esr(&y_fs[lo..hi], &y_td[lo..hi]);
        assert!(e < 1e-6, "interior ESR {e}");
    }

    #[test]
    fn divergence_from_recursion_grows_with_modulation_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sr = 16_000.0;
        let n = 16_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hop = 128;
        let spec = FsFilterSpec::for_hop(hop);
        let rows = n / hop + 2;
        let mut errors = Vec::new();
        for rate in [0.5, 2.0, 8.0] {
            let mut b_data = Vec::new();
            let mut a_data = Vec::new();
            for k in 0..rows {
                let t = k as f64 * hop as f64 / sr;
                let fc = 1200.0 + 900.0 * (2.0 * std::f64::consts::PI * rate * t).sin();
                let w0 = 2.0 * std::f64::consts::PI * fc / sr;
                let alpha = w0.sin() / (2.0 * 0.9);
                let c = w0.cos();
                let a0 = 1.0 + alpha;
                b_data.extend_from_slice(&[
                    (1.0 - c) / 2.0 / a0,
                    (1.0 - c) / a0,
                    (1.0 - c) / 2.0 / a0,
                ]);
                a_data.extend_from_slice(&[-2.0 * c / a0, (1.0 - alpha) / a0]);
            }
            let b_rows = CoeffTrajectory::from_rows(b_data, 3).unwrap();
            let a_rows = CoeffTrajectory::from_rows(a_data, 2).unwrap();
            let y_fs = fs_tv_filter(&x, &b_rows, &a_rows, &spec).unwrap();

            let b_cols: Vec<Vec<f64>> =
                (0..3).map(|i| upsample_linear(&b_rows.column(i), n, hop).unwrap()).collect();
            let a_cols: Vec<Vec<f64>> =
                (0..2).map(|i| upsample_linear(&a_rows.column(i), n, hop).unwrap()).collect();
            let b_aud = CoeffTrajectory::from_columns(
                &b_cols.iter().map(|c| c.as_slice()).collect::<Vec<_>>(),
            )
            .unwrap();
            let a_aud = CoeffTrajectory::from_columns(
                &a_cols.iter().map(|c| c.as_slice()).collect::<Vec<_>>(),
            )
            .unwrap();
            let y_td = allpole_forward(&tv_fir(&x, &b_aud).unwrap(), &a_aud).unwrap();
            let lo = 4 * spec.n_win;
            let hi = n - 4 * spec.n_win;
            errors.push(esr(&y_fs[lo..hi], &y_td[lo..hi]));
        }
        assert!(errors[0] < errors[1] && errors[1] < errors[2], "not monotone: {errors:?}");
    }

    #[test]
    fn filter_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 96;
        let hop = 8;
        let spec = FsFilterSpec::for_hop(hop);
        let rows = n / hop + 2;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b_rows = CoeffTrajectory::from_rows(
            (0..rows * 2).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            2,
        )
        .unwrap();
        let a_rows = CoeffTrajectory::from_rows(
            (0..rows).map(|_| rng.gen_range(-0.4..0.4)).collect(),
            1,
        )
        .unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], b: &CoeffTrajectory, a: &CoeffTrajectory| -> f64 {
            fs_tv_filter(x, b, a, &spec).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum()
        };
        let grads = fs_tv_filter_backward(&w, &x, &b_rows, &a_rows, &spec).unwrap();
        let h = 1e-6;
        for n_i in (0..n).step_by(7) {
            let mut xp = x.clone();
            xp[n_i] += h;
            let mut xm = x.clone();
            xm[n_i] -= h;
            let fd = (loss(&xp, &b_rows, &a_rows) - loss(&xm, &b_rows, &a_rows)) / (2.0 * h);
            assert!(
                (fd - grads.grad_x[n_i]).abs() < 1e-6 * fd.abs().max(1.0),
                "x[{n_i}]: {fd} vs {}",
                grads.grad_x[n_i]
            );
        }
        for r in 0..rows {
            for i in 0..2 {
                let per = |delta: f64| {
                    let mut d = b_rows.data().to_vec();
                    d[r * 2 + i] += delta;
                    loss(&x, &CoeffTrajectory::from_rows(d, 2).unwrap(), &a_rows)
                };
                let fd = (per(h) - per(-h)) / (2.0 * h);
                let got = grads.grad_b.at(r, i);
                assert!((fd - got).abs() < 1e-6 * fd.abs().max(1.0), "b[{r},{i}]: {fd} vs {got}");
            }
            let per = |delta: f64| {
                let mut d = a_rows.data().to_vec();
                d[r] += delta;
                loss(&x, &b_rows, &CoeffTrajectory::from_rows(d, 1).unwrap())
            };
            let fd = (per(h) - per(-h)) / (2.0 * h);
            let got = grads.grad_a.at(r, 0);
            assert!((fd - got).abs() < 1e-6 * fd.abs().max(1.0), "a[{r}]: {fd} vs {got}");
        }
    }

    #[test]
    fn one_pole_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4096;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 0.3;
        let y = fs_one_pole(&u, alpha).unwrap();
        let mut want = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            prev = alpha * u[i] + (1.0 - alpha) * prev;
            want[i] = prev;
        }
        for (n_i, (got, want)) in y.iter().zip(&want).enumerate() {
            assert!((got - want).abs() < 1e-9, "sample {n_i}: {got} vs {want}");
        }
    }

    #[test]
    fn one_pole_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 128;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 0.07;
        let loss = |u: &[f64], alpha: f64| -> f64 {
            fs_one_pole(u, alpha).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum()
        };
        let grads = fs_one_pole_backward(&w, &u, alpha).unwrap();
        let h = 1e-7;
        let fd_alpha = (loss(&u, alpha + h) - loss(&u, alpha - h)) / (2.0 * h);
        assert!(
            (fd_alpha - grads.grad_alpha).abs() < 1e-5 * fd_alpha.abs().max(1.0),
            "alpha: {fd_alpha} vs {}",
            grads.grad_alpha
        );
        for n_i in (0..n).step_by(11) {
            let mut up = u.clone();
            up[n_i] += h;
            let mut um = u.clone();
            um[n_i] -= h;
            let fd = (loss(&up, alpha) - loss(&um, alpha)) / (2.0 * h);
            assert!((fd - grads.grad_u[n_i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn singular_denominator_is_reported() {
        let x = vec![0.0; 256];
        let rows = 256 / 16 + 2;
        let b = CoeffTrajectory::constant(&[1.0], rows).unwrap();
        // a_1 = -1 puts a root exactly on the unit circle at DC.
        let a = CoeffTrajectory::constant(&[-1.0], rows).unwrap();
        match fs_tv_filter(&x, &b, &a, &FsFilterSpec::for_hop(16)) {
            Err(FilterError::SingularFrame { .. }) => {}
            other => panic!("expected singular frame, got {other:?}"),
        }
    }
}
