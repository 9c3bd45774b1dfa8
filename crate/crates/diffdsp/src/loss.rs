//! Waveform and spectral losses, plus helpers that assemble them as tape
//! graphs so their gradients flow back into model parameters.

use crate::error::{FilterError, TapeError};
use crate::fft::FftScratch;
use crate::signal::CoeffTrajectory;
use crate::sigops::{hann_window, pre_emphasis, PRE_EMPHASIS_POLE};
use crate::tape::{NodeId, Tape};
use rustfft::num_complex::Complex;
use std::sync::Arc;

/// Error-to-signal ratio: `sum (y - t)^2 / sum t^2`.
pub fn esr(y: &[f64], target: &[f64]) -> Result<f64, FilterError> {
    if y.len() != target.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "output has {} samples but target has {}",
            y.len(),
            target.len()
        )));
    }
    let den: f64 = target.iter().map(|t| t * t).sum();
    if den <= 0.0 {
        return Err(FilterError::BadArgument("target signal has zero energy".into()));
    }
    let num: f64 = y.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum();
    Ok(num / den)
}

/// Mean absolute error.
pub fn mae(y: &[f64], target: &[f64]) -> Result<f64, FilterError> {
    if y.len() != target.len() {
        return Err(FilterError::ShapeMismatch(format!(
            "output has {} samples but target has {}",
            y.len(),
            target.len()
        )));
    }
    if y.is_empty() {
        return Err(FilterError::BadArgument("empty signals".into()));
    }
    Ok(y.iter().zip(target).map(|(y, t)| (y - t).abs()).sum::<f64>() / y.len() as f64)
}

/// One STFT resolution of the spectral loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftSpec {
    pub n_fft: usize,
    pub hop: usize,
}

/// Default multi-resolution set: FFT sizes 512/1024/2048, hop a quarter of the
/// FFT size, Hann windows.
pub fn default_stft_specs() -> Vec<StftSpec> {
    [512, 1024, 2048].iter().map(|&n_fft| StftSpec { n_fft, hop: n_fft / 4 }).collect()
}

/// Floor applied to spectral magnitudes before logs and divisions.
const MAG_FLOOR: f64 = 1e-8;

fn frame_count(len: usize, spec: &StftSpec) -> usize {
    if len <= spec.n_fft {
        1
    } else {
        (len - spec.n_fft + spec.hop - 1) / spec.hop + 1
    }
}

/// Fills `seg` with the windowed, zero-padded frame `f` of `x`.
fn fill_frame(x: &[f64], spec: &StftSpec, w: &[f64], f: usize, seg: &mut [f64]) {
    let start = f * spec.hop;
    seg.fill(0.0);
    for i in 0..spec.n_fft.min(x.len().saturating_sub(start)) {
        seg[i] = x[start + i] * w[i];
    }
}

/// Precomputed target side of the spectral loss: magnitude spectrograms,
/// their floored log-magnitudes and Frobenius norms, and the analysis windows
/// for every resolution. Build it once per fitting run; the target never
/// changes between epochs.
#[derive(Debug, Clone)]
pub struct MssTarget {
    specs: Vec<StftSpec>,
    n: usize,
    /// `mags[s][f][k]`: magnitude of bin `k` in frame `f` at resolution `s`.
    mags: Vec<Vec<Vec<f64>>>,
    /// `ln(mags.max(MAG_FLOOR))`, same shape.
    log_mags: Vec<Vec<Vec<f64>>>,
    norms: Vec<f64>,
    windows: Vec<Vec<f64>>,
}

/// Magnitude without `hypot`'s overflow guard: spectral magnitudes of audio
/// signals sit far inside the representable range, so the straightforward
/// form is safe and considerably cheaper.
#[inline]
fn bin_mag(c: Complex<f64>) -> f64 {
    (c.re * c.re + c.im * c.im).sqrt()
}

impl MssTarget {
    pub fn new(target: &[f64], specs: &[StftSpec]) -> Result<Self, FilterError> {
        if specs.is_empty() {
            return Err(FilterError::BadArgument("no STFT resolutions given".into()));
        }
        if target.is_empty() {
            return Err(FilterError::BadArgument("empty target".into()));
        }
        let mut scratch = FftScratch::new();
        let mut mags = Vec::with_capacity(specs.len());
        let mut log_mags = Vec::with_capacity(specs.len());
        let mut norms = Vec::with_capacity(specs.len());
        let mut windows = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.n_fft < 2 || spec.hop == 0 {
                return Err(FilterError::BadArgument(format!(
                    "bad STFT resolution: n_fft {} hop {}",
                    spec.n_fft, spec.hop
                )));
            }
            let w = hann_window(spec.n_fft);
            let bins = spec.n_fft / 2 + 1;
            let mut seg = vec![0.0; spec.n_fft];
            let mut buf = vec![Complex::new(0.0, 0.0); bins];
            let mut frames = Vec::with_capacity(frame_count(target.len(), spec));
            let mut log_frames = Vec::with_capacity(frame_count(target.len(), spec));
            let mut t_sq = 0.0;
            for f in 0..frame_count(target.len(), spec) {
                fill_frame(target, spec, &w, f, &mut seg);
                scratch.forward_real(&mut seg, &mut buf);
                let mag: Vec<f64> = buf.iter().map(|&c| bin_mag(c)).collect();
                t_sq += mag.iter().map(|m| m * m).sum::<f64>();
                log_frames.push(mag.iter().map(|m| m.max(MAG_FLOOR).ln()).collect());
                frames.push(mag);
            }
            if t_sq <= 0.0 {
                return Err(FilterError::BadArgument(
                    "target spectrogram has zero energy".into(),
                ));
            }
            mags.push(frames);
            log_mags.push(log_frames);
            norms.push(t_sq.sqrt());
            windows.push(w);
        }
        Ok(Self { specs: specs.to_vec(), n: target.len(), mags, log_mags, norms, windows })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn specs(&self) -> &[StftSpec] {
        &self.specs
    }
}

/// Output-side evaluation: the loss plus everything the adjoint needs (the
/// complex frame spectra and their magnitudes), so the backward pass costs
/// one inverse transform per frame and no forward transforms.
#[derive(Debug)]
pub struct MssEval {
    pub loss: f64,
    /// `spectra[s][f]`: one-sided complex spectrum (bins `0..=n_fft/2`) of
    /// output frame `f` at resolution `s`.
    spectra: Vec<Vec<Vec<Complex<f64>>>>,
    mags: Vec<Vec<Vec<f64>>>,
    sc_nums: Vec<f64>,
}

/// Forward pass of the multi-resolution spectral loss against a precomputed
/// target, retaining the output spectra for [`mss_eval_grad`].
pub fn mss_eval(y: &[f64], tgt: &MssTarget) -> Result<MssEval, FilterError> {
    if y.len() != tgt.n {
        return Err(FilterError::ShapeMismatch(format!(
            "output has {} samples but target has {}",
            y.len(),
            tgt.n
        )));
    }
    let mut scratch = FftScratch::new();
    let mut loss = 0.0;
    let mut spectra = Vec::with_capacity(tgt.specs.len());
    let mut mags = Vec::with_capacity(tgt.specs.len());
    let mut sc_nums = Vec::with_capacity(tgt.specs.len());
    for (s, spec) in tgt.specs.iter().enumerate() {
        let w = &tgt.windows[s];
        let bins = spec.n_fft / 2 + 1;
        let t_frames = &tgt.mags[s];
        let count = (bins * t_frames.len()) as f64;
        let mut seg = vec![0.0; spec.n_fft];
        let mut diff_sq = 0.0;
        let mut log_l1 = 0.0;
        let mut y_spectra = Vec::with_capacity(t_frames.len());
        let mut y_mags = Vec::with_capacity(t_frames.len());
        for (f, t_mag) in t_frames.iter().enumerate() {
            fill_frame(y, spec, w, f, &mut seg);
            let mut buf = vec![Complex::new(0.0, 0.0); bins];
            scratch.forward_real(&mut seg, &mut buf);
            let mag: Vec<f64> = buf.iter().map(|&c| bin_mag(c)).collect();
            let t_log = &tgt.log_mags[s][f];
            for ((&t, &t_ln), &yv) in t_mag.iter().zip(t_log).zip(&mag) {
                diff_sq += (t - yv) * (t - yv);
                log_l1 += (t_ln - yv.max(MAG_FLOOR).ln()).abs();
            }
            y_spectra.push(buf);
            y_mags.push(mag);
        }
        let sc_num = diff_sq.sqrt();
        loss += sc_num / tgt.norms[s] + log_l1 / count;
        spectra.push(y_spectra);
        mags.push(y_mags);
        sc_nums.push(sc_num);
    }
    Ok(MssEval { loss, spectra, mags, sc_nums })
}

/// Adjoint of [`mss_eval`]: per-bin magnitude gradients are rotated back onto
/// the retained complex bins, inverse-transformed per frame, windowed, and
/// overlap-added. Returns d loss / d y.
pub fn mss_eval_grad(eval: &MssEval, tgt: &MssTarget) -> Vec<f64> {
    let mut scratch = FftScratch::new();
    let mut grad = vec![0.0; tgt.n];
    for (s, spec) in tgt.specs.iter().enumerate() {
        let w = &tgt.windows[s];
        let bins = spec.n_fft / 2 + 1;
        // The loss touches each one-sided bin exactly once, so its adjoint is
        // Re Σ_{k=0..n/2} G_k e^{+jωki}. The Hermitian inverse counts interior
        // bins twice (self + conjugate mirror), hence the 0.5 below; the
        // self-conjugate bins (DC, and Nyquist at even sizes) pass through.
        let self_conj_hi = if spec.n_fft % 2 == 0 { bins - 1 } else { bins };
        let t_frames = &tgt.mags[s];
        let count = (bins * t_frames.len()) as f64;
        let sc_num = eval.sc_nums[s];
        let t_norm = tgt.norms[s];
        let mut grad_bins = vec![Complex::new(0.0, 0.0); bins];
        let mut time_buf = vec![0.0; spec.n_fft];
        for (f, t_mag) in t_frames.iter().enumerate() {
            let start = f * spec.hop;
            let y_spec = &eval.spectra[s][f];
            let y_mag = &eval.mags[s][f];
            for (k, (&mag_y, &mag_t)) in y_mag.iter().zip(t_mag).enumerate() {
                let mut g_mag = 0.0;
                if sc_num > 1e-300 {
                    g_mag += (mag_y - mag_t) / (sc_num * t_norm);
                }
                if mag_y > MAG_FLOOR {
                    // ln is monotone, so the sign of the log difference is
                    // the sign of the (floored) magnitude difference.
                    let sgn = (mag_t.max(MAG_FLOOR) - mag_y).signum();
                    g_mag += -sgn / (count * mag_y);
                }
                grad_bins[k] = if g_mag != 0.0 && mag_y > 1e-300 {
                    let scale = if k == 0 || k >= self_conj_hi { g_mag } else { 0.5 * g_mag };
                    y_spec[k] * (scale / mag_y)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            scratch.inverse_real(&mut grad_bins, &mut time_buf);
            for i in 0..spec.n_fft {
                if start + i < tgt.n {
                    grad[start + i] += time_buf[i] * w[i];
                }
            }
        }
    }
    grad
}

/// Multi-resolution spectral loss: for each resolution the spectral-convergence
/// term `||T - Y||_F / ||T||_F` plus the mean absolute log-magnitude
/// difference, summed over resolutions.
pub fn mss(y: &[f64], target: &[f64], specs: &[StftSpec]) -> Result<f64, FilterError> {
    Ok(mss_eval(y, &MssTarget::new(target, specs)?)?.loss)
}

/// Spectral loss and (optionally) its gradient w.r.t. `y`. One-shot wrapper
/// over [`MssTarget`] / [`mss_eval`] / [`mss_eval_grad`] for callers that do
/// not reuse the target.
pub fn mss_with_grad(
    y: &[f64],
    target: &[f64],
    specs: &[StftSpec],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), FilterError> {
    let tgt = MssTarget::new(target, specs)?;
    let eval = mss_eval(y, &tgt)?;
    let grad = want_grad.then(|| mss_eval_grad(&eval, &tgt));
    Ok((eval.loss, grad))
}

/// Builds the error-to-signal ratio against a fixed target as a tape graph.
pub fn esr_node(tape: &mut Tape, y: NodeId, target: &[f64]) -> Result<NodeId, TapeError> {
    let den: f64 = target.iter().map(|t| t * t).sum();
    if den <= 0.0 {
        return Err(TapeError::BadArgument("target signal has zero energy".into()));
    }
    let t = tape.vector(target.to_vec());
    let d = tape.sub(y, t)?;
    let sq = tape.mul(d, d)?;
    let num = tape.sum(sq)?;
    let scale = tape.scalar(1.0 / den);
    tape.mul(num, scale)
}

/// Builds the mean absolute error against a fixed target as a tape graph.
pub fn mae_node(tape: &mut Tape, y: NodeId, target: &[f64]) -> Result<NodeId, TapeError> {
    if target.is_empty() {
        return Err(TapeError::BadArgument("empty target".into()));
    }
    let t = tape.vector(target.to_vec());
    let d = tape.sub(y, t)?;
    let a = tape.abs(d)?;
    let s = tape.sum(a)?;
    let scale = tape.scalar(1.0 / target.len() as f64);
    tape.mul(s, scale)
}

/// Mean absolute error after pre-emphasising both sides with
/// `(1 - z^-1) / (1 - 0.995 z^-1)`; the filter is expressed with constant-tap
/// filter nodes so gradients flow through it.
pub fn mae_pre_emphasis_node(
    tape: &mut Tape,
    y: NodeId,
    target: &[f64],
) -> Result<NodeId, TapeError> {
    let n = target.len();
    if n == 0 {
        return Err(TapeError::BadArgument("empty target".into()));
    }
    let y_pe = pre_emphasis_node(tape, y, n)?;
    let t_pe = pre_emphasis(target);
    mae_node(tape, y_pe, &t_pe)
}

/// Applies the pre-emphasis filter to a length-`n` vector node.
pub fn pre_emphasis_node(tape: &mut Tape, y: NodeId, n: usize) -> Result<NodeId, TapeError> {
    let ff = CoeffTrajectory::constant(&[1.0, -1.0], n)
        .map_err(TapeError::Kernel)?;
    let fb = CoeffTrajectory::constant(&[-PRE_EMPHASIS_POLE], n)
        .map_err(TapeError::Kernel)?;
    let b0 = tape.vector(ff.column(0));
    let b1 = tape.vector(ff.column(1));
    let a1 = tape.vector(fb.column(0));
    let v = tape.tv_fir(y, &[b0, b1])?;
    tape.allpole(v, &[a1])
}

/// Builds the multi-resolution spectral loss against a fixed target.
pub fn mss_node(
    tape: &mut Tape,
    y: NodeId,
    target: &[f64],
    specs: &[StftSpec],
) -> Result<NodeId, TapeError> {
    tape.spectral_loss(y, target.to_vec(), specs.to_vec())
}

/// Spectral-loss node against a target prepared once with [`MssTarget::new`].
/// Use this inside fitting loops: the target spectrograms are shared across
/// epochs instead of being recomputed on every tape.
pub fn mss_node_with(tape: &mut Tape, y: NodeId, target: &Arc<MssTarget>) -> Result<NodeId, TapeError> {
    tape.spectral_loss_cached(y, Arc::clone(target))
}
