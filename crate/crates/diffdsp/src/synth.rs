//! Subtractive synthesizer: a morphing sawtooth/square oscillator shaped by a
//! decay envelope, a time-varying resonant lowpass whose cutoff moves at
//! frame rate, and a tanh waveshaper.
//!
//! Pitch, phase, and note length are inputs, not parameters; the model learns
//! four global scalars (oscillator mix, envelope shape, oscillator gain,
//! waveshaper drive) plus the frame-rate filter modulation — either cutoff
//! frames feeding a standard resonant-lowpass design, or raw biquad
//! coefficient frames through a stability-triangle map.

use crate::error::{FilterError, TapeError};
use crate::fs::FsFilterSpec;
use crate::signal::CoeffTrajectory;
use crate::tape::{NodeId, Tape};

/// Default frame hop of the filter modulation signal, in audio samples.
pub const MOD_HOP: usize = 32;

/// Limits for the sigmoid range transforms of the learnable globals and the
/// filter modulation.
pub mod ranges {
    /// Oscillator mix `rho_osc` in [0, 1].
    pub const OSC_MIX: (f64, f64) = (0.0, 1.0);
    /// Envelope exponent `rho_env` in [0.1, 10].
    pub const ENV_SHAPE: (f64, f64) = (0.1, 10.0);
    /// Oscillator gain in [0, 4].
    pub const OSC_GAIN: (f64, f64) = (0.0, 4.0);
    /// Waveshaper drive in [0.1, 20].
    pub const DRIVE: (f64, f64) = (0.1, 20.0);
    /// Lowpass cutoff in Hz, [100, 8000].
    pub const CUTOFF_HZ: (f64, f64) = (100.0, 8000.0);
    /// Lowpass resonance, [sqrt(2)/2, 8].
    pub const Q: (f64, f64) = (std::f64::consts::FRAC_1_SQRT_2, 8.0);
}

/// `lo + (hi - lo) sigmoid(raw)`.
pub fn range_transform(raw: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) / (1.0 + (-raw).exp())
}

/// Inverse of [`range_transform`] for picking pre-images of natural values.
pub fn range_pre_image(value: f64, (lo, hi): (f64, f64)) -> f64 {
    let t = (value - lo) / (hi - lo);
    assert!(t > 0.0 && t < 1.0, "value {value} outside open range ({lo}, {hi})");
    (t / (1.0 - t)).ln()
}

/// Note inputs: fundamental, starting phase, gate length. These are given to
/// the model per note, never learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteInput {
    pub f0_hz: f64,
    pub phase: f64,
    pub note_on: usize,
}

/// Learnable global scalars, stored as unconstrained pre-images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthGlobals {
    pub osc_mix_raw: f64,
    pub env_shape_raw: f64,
    pub osc_gain_raw: f64,
    pub drive_raw: f64,
}

impl SynthGlobals {
    /// Pre-images of natural values (mix, envelope exponent, gain, drive).
    pub fn from_natural(mix: f64, env: f64, gain: f64, drive: f64) -> Self {
        Self {
            osc_mix_raw: range_pre_image(mix, ranges::OSC_MIX),
            env_shape_raw: range_pre_image(env, ranges::ENV_SHAPE),
            osc_gain_raw: range_pre_image(gain, ranges::OSC_GAIN),
            drive_raw: range_pre_image(drive, ranges::DRIVE),
        }
    }

    pub fn natural(&self) -> (f64, f64, f64, f64) {
        (
            range_transform(self.osc_mix_raw, ranges::OSC_MIX),
            range_transform(self.env_shape_raw, ranges::ENV_SHAPE),
            range_transform(self.osc_gain_raw, ranges::OSC_GAIN),
            range_transform(self.drive_raw, ranges::DRIVE),
        )
    }

    pub fn as_flat(&self) -> [f64; 4] {
        [self.osc_mix_raw, self.env_shape_raw, self.osc_gain_raw, self.drive_raw]
    }

    pub fn from_flat(v: &[f64; 4]) -> Self {
        Self { osc_mix_raw: v[0], env_shape_raw: v[1], osc_gain_raw: v[2], drive_raw: v[3] }
    }
}

/// Frame-rate filter modulation, in one of two parameterisations.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthModulation {
    /// Cutoff pre-image per frame plus one resonance pre-image; mapped through
    /// the sigmoid ranges and a standard resonant-lowpass design.
    LowPass { cutoff_raw: Vec<f64>, q_raw: f64 },
    /// Raw coefficient frames: three numerator taps plus a feedback pair
    /// through the stability-triangle map.
    Coefficients {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        b0: Vec<f64>,
        b1: Vec<f64>,
        b2: Vec<f64>,
    },
}

impl SynthModulation {
    pub fn frames(&self) -> usize {
        match self {
            SynthModulation::LowPass { cutoff_raw, .. } => cutoff_raw.len(),
            SynthModulation::Coefficients { theta1, .. } => theta1.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            SynthModulation::LowPass { cutoff_raw, .. } => cutoff_raw.len() + 1,
            SynthModulation::Coefficients { theta1, .. } => 5 * theta1.len(),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            SynthModulation::LowPass { cutoff_raw, q_raw } => {
                let mut v = cutoff_raw.clone();
                v.push(*q_raw);
                v
            }
            SynthModulation::Coefficients { theta1, theta2, b0, b1, b2 } => {
                let mut v = Vec::with_capacity(5 * theta1.len());
                for s in [theta1, theta2, b0, b1, b2] {
                    v.extend_from_slice(s);
                }
                v
            }
        }
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        match self {
            SynthModulation::LowPass { cutoff_raw, q_raw } => {
                let k = cutoff_raw.len();
                cutoff_raw.copy_from_slice(&flat[..k]);
                *q_raw = flat[k];
            }
            SynthModulation::Coefficients { theta1, theta2, b0, b1, b2 } => {
                let k = theta1.len();
                theta1.copy_from_slice(&flat[..k]);
                theta2.copy_from_slice(&flat[k..2 * k]);
                b0.copy_from_slice(&flat[2 * k..3 * k]);
                b1.copy_from_slice(&flat[3 * k..4 * k]);
                b2.copy_from_slice(&flat[4 * k..5 * k]);
            }
        }
    }
}

/// Number of modulation frames for `n` samples at the given hop.
pub fn mod_frames(n: usize, hop: usize) -> usize {
    n.div_ceil(hop).max(2)
}

/// Full synth parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub globals: SynthGlobals,
    pub modulation: SynthModulation,
}

impl SynthModel {
    /// Neutral start for `n` samples: mid-range globals, mid-range cutoff.
    pub fn init_lowpass(n: usize, hop: usize) -> Self {
        Self {
            globals: SynthGlobals { osc_mix_raw: 0.0, env_shape_raw: 0.0, osc_gain_raw: 0.0, drive_raw: 0.0 },
            modulation: SynthModulation::LowPass { cutoff_raw: vec![0.0; mod_frames(n, hop)], q_raw: 0.0 },
        }
    }

    pub fn param_count(&self) -> usize {
        4 + self.modulation.param_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.globals.as_flat().to_vec();
        v.extend(self.modulation.flat_params());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        self.globals = SynthGlobals::from_flat(&[flat[0], flat[1], flat[2], flat[3]]);
        self.modulation.set_flat(&flat[4..]);
    }
}

/// Wrapped oscillator phase `(2 pi n f0 / Fs + phase) mod 2 pi`.
pub fn oscillator_phase(note: &NoteInput, n: usize, sample_rate: f64) -> Vec<f64> {
    let step = 2.0 * std::f64::consts::PI * note.f0_hz / sample_rate;
    (0..n)
        .map(|i| (i as f64 * step + note.phase).rem_euclid(2.0 * std::f64::consts::PI))
        .collect()
}

/// Sawtooth from wrapped phase: `1 - psi / pi`, a unit-amplitude downward ramp.
pub fn sawtooth(psi: &[f64]) -> Vec<f64> {
    psi.iter().map(|&p| 1.0 - p / std::f64::consts::PI).collect()
}

/// Square-like wave: `tanh(pi P sin(psi) / 2)` with the sharpness
/// `P = 12000 / (f0 log10 f0)` tied to the fundamental so the edges stay
/// band-limited.
pub fn soft_square(psi: &[f64], f0_hz: f64) -> Vec<f64> {
    let sharp = square_sharpness(f0_hz);
    psi.iter()
        .map(|&p| (std::f64::consts::PI * sharp * p.sin() / 2.0).tanh())
        .collect()
}

pub fn square_sharpness(f0_hz: f64) -> f64 {
    assert!(f0_hz > 1.0, "fundamental must exceed 1 Hz");
    12_000.0 / (f0_hz * f0_hz.log10())
}

/// Decay ramp used as the envelope base: 1 at sample 0, 0 at `note_on`,
/// clamped at 0 afterwards.
pub fn envelope_ramp(n: usize, note_on: usize) -> Vec<f64> {
    assert!(note_on > 0, "note length must be positive");
    (0..n).map(|i| (1.0 - i as f64 / note_on as f64).max(0.0)).collect()
}

/// Note-dependent base signals consumed by the synth graph: the two
/// oscillator shapes and the envelope ramp. They are fixed functions of the
/// note and render geometry, so fitting loops compute them once and reuse
/// them across epochs instead of re-deriving them on every tape.
#[derive(Debug, Clone)]
pub struct NoteSignals {
    pub saw: Vec<f64>,
    pub square: Vec<f64>,
    pub ramp: Vec<f64>,
}

impl NoteSignals {
    pub fn new(note: &NoteInput, n: usize, sample_rate: f64) -> Self {
        let psi = oscillator_phase(note, n, sample_rate);
        Self {
            saw: sawtooth(&psi),
            square: soft_square(&psi, note.f0_hz),
            ramp: envelope_ramp(n, note.note_on),
        }
    }
}

/// Resonant lowpass design: maps cutoff (Hz) and Q to five coefficients
/// `[b0, b1, b2, a1, a2]`, normalised to a unit leading denominator.
pub fn lowpass_coeffs(cutoff_hz: f64, q: f64, sample_rate: f64) -> [f64; 5] {
    let w = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate;
    let alpha = w.sin() / (2.0 * q);
    let cosw = w.cos();
    let a0 = 1.0 + alpha;
    [
        (1.0 - cosw) / 2.0 / a0,
        (1.0 - cosw) / a0,
        (1.0 - cosw) / 2.0 / a0,
        -2.0 * cosw / a0,
        (1.0 - alpha) / a0,
    ]
}

/// Plain coefficient frames `[b0 b1 b2 | a1 a2]` for the given modulation.
pub fn modulation_coeff_frames(
    modulation: &SynthModulation,
    sample_rate: f64,
) -> Result<(CoeffTrajectory, CoeffTrajectory), FilterError> {
    match modulation {
        SynthModulation::LowPass { cutoff_raw, q_raw } => {
            let q = range_transform(*q_raw, ranges::Q);
            let mut b = Vec::with_capacity(cutoff_raw.len() * 3);
            let mut a = Vec::with_capacity(cutoff_raw.len() * 2);
            for &c in cutoff_raw {
                let fc = range_transform(c, ranges::CUTOFF_HZ);
                let k = lowpass_coeffs(fc, q, sample_rate);
                b.extend_from_slice(&k[..3]);
                a.extend_from_slice(&k[3..]);
            }
            Ok((CoeffTrajectory::from_rows(b, 3)?, CoeffTrajectory::from_rows(a, 2)?))
        }
        SynthModulation::Coefficients { theta1, theta2, b0, b1, b2 } => {
            let k = theta1.len();
            if [theta2.len(), b0.len(), b1.len(), b2.len()].iter().any(|&l| l != k) {
                return Err(FilterError::ShapeMismatch(format!(
                    "modulation frame counts must all equal {k}"
                )));
            }
            let mut b = Vec::with_capacity(k * 3);
            let mut a = Vec::with_capacity(k * 2);
            for i in 0..k {
                let (a1, a2) = crate::phaser::triangle_map(theta1[i], theta2[i]);
                b.extend_from_slice(&[b0[i], b1[i], b2[i]]);
                a.extend_from_slice(&[a1, a2]);
            }
            Ok((CoeffTrajectory::from_rows(b, 3)?, CoeffTrajectory::from_rows(a, 2)?))
        }
    }
}

/// How the time-varying filter stage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthFilterKind {
    /// Upsample the frames to audio rate and run the recursive filter.
    TimeDomain,
    /// Approximate each frame by a sampled frequency response and overlap-add.
    FrequencySampling,
}

/// Frequency-sampling window spec for a given modulation hop.
pub fn synth_fs_spec(hop: usize) -> FsFilterSpec {
    FsFilterSpec::for_hop(hop)
}

/// Plain (tape-free) render, always through the time-domain path.
pub fn synth_render(
    model: &SynthModel,
    note: &NoteInput,
    n: usize,
    sample_rate: f64,
    hop: usize,
) -> Result<Vec<f64>, FilterError> {
    let (mix, env_shape, gain, drive) = model.globals.natural();
    let psi = oscillator_phase(note, n, sample_rate);
    let saw = sawtooth(&psi);
    let sq = soft_square(&psi, note.f0_hz);
    let ramp = envelope_ramp(n, note.note_on);
    let (b_frames, a_frames) = modulation_coeff_frames(&model.modulation, sample_rate)?;
    let b = upsample_trajectory(&b_frames, n, hop)?;
    let a = upsample_trajectory(&a_frames, n, hop)?;
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let osc = mix * saw[i] + (1.0 - mix) * sq[i];
        let env = if ramp[i] > 0.0 { ramp[i].powf(env_shape) } else { 0.0 };
        s.push(gain * env * osc);
    }
    let v = crate::sigops::tv_fir(&s, &b)?;
    let filtered = crate::allpole::allpole_forward(&v, &a)?;
    Ok(filtered.iter().map(|&y| (drive * y).tanh()).collect())
}

fn upsample_trajectory(
    frames: &CoeffTrajectory,
    n: usize,
    hop: usize,
) -> Result<CoeffTrajectory, FilterError> {
    let cols: Vec<Vec<f64>> = (0..frames.cols())
        .map(|c| crate::sigops::upsample_linear(&frames.column(c), n, hop))
        .collect::<Result<_, _>>()?;
    CoeffTrajectory::from_columns(&cols)
}

/// Node handles for a synth tape graph.
#[derive(Debug)]
pub struct SynthGraph {
    pub output: NodeId,
    /// Leaves in [`SynthModel::flat_params`] order.
    param_leaves: Vec<NodeId>,
}

impl SynthGraph {
    /// Concatenated adjoints in [`SynthModel::flat_params`] order.
    pub fn flat_grads(&self, grads: &crate::tape::Gradients) -> Vec<f64> {
        let mut v = Vec::new();
        for &id in &self.param_leaves {
            v.extend_from_slice(grads.wrt(id));
        }
        v
    }
}

fn range_transform_node(
    tape: &mut Tape,
    raw: NodeId,
    (lo, hi): (f64, f64),
) -> Result<NodeId, TapeError> {
    let sig = tape.sigmoid(raw)?;
    let span = tape.scalar(hi - lo);
    let base = tape.scalar(lo);
    let scaled = tape.mul(span, sig)?;
    tape.add(base, scaled)
}

/// Builds the differentiable synth on `tape`, deriving the oscillator and
/// envelope base signals from the note. Fitting loops should precompute
/// [`NoteSignals`] once and call [`build_synth_with`] instead.
pub fn build_synth(
    tape: &mut Tape,
    model: &SynthModel,
    note: &NoteInput,
    n: usize,
    sample_rate: f64,
    filter: SynthFilterKind,
    hop: usize,
) -> Result<SynthGraph, TapeError> {
    let signals = NoteSignals::new(note, n, sample_rate);
    build_synth_with(tape, model, &signals, n, sample_rate, filter, hop)
}

/// Builds the differentiable synth on `tape` from precomputed note signals.
pub fn build_synth_with(
    tape: &mut Tape,
    model: &SynthModel,
    signals: &NoteSignals,
    n: usize,
    sample_rate: f64,
    filter: SynthFilterKind,
    hop: usize,
) -> Result<SynthGraph, TapeError> {
    if n == 0 {
        return Err(TapeError::BadArgument("empty render length".into()));
    }
    if hop == 0 {
        return Err(TapeError::BadArgument("modulation hop must be positive".into()));
    }
    if signals.saw.len() != n || signals.square.len() != n || signals.ramp.len() != n {
        return Err(TapeError::ShapeMismatch(format!(
            "note signals have lengths {}/{}/{}, render needs {n}",
            signals.saw.len(),
            signals.square.len(),
            signals.ramp.len()
        )));
    }
    if model.modulation.frames() < mod_frames(n, hop) {
        return Err(TapeError::BadArgument(format!(
            "modulation has {} frames, need at least {}",
            model.modulation.frames(),
            mod_frames(n, hop)
        )));
    }

    // Learnable globals.
    let mix_raw = tape.scalar(model.globals.osc_mix_raw);
    let env_raw = tape.scalar(model.globals.env_shape_raw);
    let gain_raw = tape.scalar(model.globals.osc_gain_raw);
    let drive_raw = tape.scalar(model.globals.drive_raw);
    let mut param_leaves = vec![mix_raw, env_raw, gain_raw, drive_raw];

    let mix = range_transform_node(tape, mix_raw, ranges::OSC_MIX)?;
    let env_shape = range_transform_node(tape, env_raw, ranges::ENV_SHAPE)?;
    let gain = range_transform_node(tape, gain_raw, ranges::OSC_GAIN)?;
    let drive = range_transform_node(tape, drive_raw, ranges::DRIVE)?;

    let saw = tape.vector(signals.saw.clone());
    let sq = tape.vector(signals.square.clone());
    let ramp = {
        let rn = tape.vector(signals.ramp.clone());
        tape.max_const(rn, 0.0)?
    };

    // Oscillator mix, envelope power, gain.
    let one = tape.scalar(1.0);
    let osc = {
        let a = tape.mul(mix, saw)?;
        let inv_mix = tape.sub(one, mix)?;
        let b = tape.mul(inv_mix, sq)?;
        tape.add(a, b)?
    };
    let env = tape.pow(ramp, env_shape)?;
    let shaped = {
        let ge = tape.mul(gain, env)?;
        tape.mul(ge, osc)?
    };

    // Frame-rate filter coefficients.
    let (b_frames, a_frames) = build_modulation_frames(tape, &model.modulation, sample_rate, &mut param_leaves)?;

    let filtered = match filter {
        SynthFilterKind::TimeDomain => {
            let b_cols: Vec<NodeId> = b_frames
                .iter()
                .map(|&f| tape.upsample(f, n, hop))
                .collect::<Result<_, _>>()?;
            let a_cols: Vec<NodeId> = a_frames
                .iter()
                .map(|&f| tape.upsample(f, n, hop))
                .collect::<Result<_, _>>()?;
            let v = tape.tv_fir(shaped, &b_cols)?;
            tape.allpole(v, &a_cols)?
        }
        SynthFilterKind::FrequencySampling => {
            tape.fs_tv_filter(shaped, &b_frames, &a_frames, synth_fs_spec(hop))?
        }
    };

    // Waveshaper.
    let driven = tape.mul(drive, filtered)?;
    let output = tape.tanh(driven)?;
    Ok(SynthGraph { output, param_leaves })
}

/// Emits the five coefficient-frame columns (b0 b1 b2, a1 a2) as tape nodes
/// and appends the underlying leaves to `param_leaves` in flat order.
fn build_modulation_frames(
    tape: &mut Tape,
    modulation: &SynthModulation,
    sample_rate: f64,
    param_leaves: &mut Vec<NodeId>,
) -> Result<(Vec<NodeId>, Vec<NodeId>), TapeError> {
    match modulation {
        SynthModulation::LowPass { cutoff_raw, q_raw } => {
            let cut_raw = tape.vector(cutoff_raw.clone());
            let q_raw_n = tape.scalar(*q_raw);
            param_leaves.push(cut_raw);
            param_leaves.push(q_raw_n);

            let fc = range_transform_node(tape, cut_raw, ranges::CUTOFF_HZ)?;
            let q = range_transform_node(tape, q_raw_n, ranges::Q)?;

            // w = 2 pi fc / Fs; alpha = sin(w) / (2 q); normalise by 1 + alpha.
            let w = {
                let c = tape.scalar(2.0 * std::f64::consts::PI / sample_rate);
                tape.mul(c, fc)?
            };
            let sinw = tape.sin(w)?;
            let cosw = tape.cos(w)?;
            let alpha = {
                let half = tape.scalar(0.5);
                let inv_q = tape.pow_const(q, -1.0)?;
                let hs = tape.mul(half, sinw)?;
                tape.mul(hs, inv_q)?
            };
            let one = tape.scalar(1.0);
            let a0 = tape.add(one, alpha)?;
            let inv_a0 = tape.pow_const(a0, -1.0)?;
            let one_m_cos = tape.sub(one, cosw)?;
            let b1 = tape.mul(one_m_cos, inv_a0)?;
            let b0 = {
                let half = tape.scalar(0.5);
                tape.mul(half, b1)?
            };
            let a1 = {
                let m2 = tape.scalar(-2.0);
                let mc = tape.mul(m2, cosw)?;
                tape.mul(mc, inv_a0)?
            };
            let a2 = {
                let one_m_alpha = tape.sub(one, alpha)?;
                tape.mul(one_m_alpha, inv_a0)?
            };
            Ok((vec![b0, b1, b0], vec![a1, a2]))
        }
        SynthModulation::Coefficients { theta1, theta2, b0, b1, b2 } => {
            let th1 = tape.vector(theta1.clone());
            let th2 = tape.vector(theta2.clone());
            let b0n = tape.vector(b0.clone());
            let b1n = tape.vector(b1.clone());
            let b2n = tape.vector(b2.clone());
            param_leaves.extend_from_slice(&[th1, th2, b0n, b1n, b2n]);

            let two = tape.scalar(2.0);
            let half = tape.scalar(0.5);
            let t1 = tape.tanh(th1)?;
            let a1 = tape.mul(two, t1)?;
            let abs_a1 = tape.abs(a1)?;
            let gap = tape.sub(two, abs_a1)?;
            let t2 = tape.tanh(th2)?;
            let scaled = tape.mul(gap, t2)?;
            let summed = tape.add(scaled, abs_a1)?;
            let a2 = tape.mul(half, summed)?;
            Ok((vec![b0n, b1n, b2n], vec![a1, a2]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::mss_node;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const RATE: f64 = 48_000.0;

    fn test_note() -> NoteInput {
        NoteInput { f0_hz: 220.0, phase: 0.4, note_on: 400 }
    }

    fn random_lowpass_model(rng: &mut impl Rng, n: usize) -> SynthModel {
        SynthModel {
            globals: SynthGlobals {
                osc_mix_raw: rng.gen_range(-1.0..1.0),
                env_shape_raw: rng.gen_range(-1.0..1.0),
                osc_gain_raw: rng.gen_range(-1.0..1.0),
                drive_raw: rng.gen_range(-1.0..1.0),
            },
            modulation: SynthModulation::LowPass {
                cutoff_raw: (0..mod_frames(n, MOD_HOP)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                q_raw: rng.gen_range(-1.0..1.0),
            },
        }
    }

    #[test]
    fn lowpass_design_has_unit_dc_gain_and_stable_poles() {
        for &(fc, q) in &[(100.0, 0.7071), (1000.0, 2.0), (8000.0, 8.0), (440.0, 0.8)] {
            let k = lowpass_coeffs(fc, q, RATE);
            let dc = (k[0] + k[1] + k[2]) / (1.0 + k[3] + k[4]);
            assert!((dc - 1.0).abs() < 1e-9, "fc={fc} q={q}: dc gain {dc}");
            // Stability triangle for [1, a1, a2].
            assert!(k[4].abs() < 1.0 && k[3].abs() < 1.0 + k[4]);
        }
    }

    #[test]
    fn lowpass_attenuates_above_cutoff() {
        let k = lowpass_coeffs(500.0, 1.0, RATE);
        let mag = |f_hz: f64| -> f64 {
            let w = 2.0 * std::f64::consts::PI * f_hz / RATE;
            let z = rustfft::num_complex::Complex::from_polar(1.0, -w);
            let num = k[0] + k[1] * z + k[2] * z * z;
            let den = 1.0 + k[3] * z + k[4] * z * z;
            (num / den).norm()
        };
        assert!(mag(4000.0) < 0.05 * mag(100.0));
    }

    #[test]
    fn oscillator_phase_wraps_and_matches_step() {
        let note = NoteInput { f0_hz: 1000.0, phase: 6.0, note_on: 100 };
        let psi = oscillator_phase(&note, 200, RATE);
        let step = 2.0 * std::f64::consts::PI * 1000.0 / RATE;
        for (i, &p) in psi.iter().enumerate() {
            assert!((0.0..2.0 * std::f64::consts::PI).contains(&p));
            let want = (i as f64 * step + 6.0).rem_euclid(2.0 * std::f64::consts::PI);
            assert!((p - want).abs() < 1e-9);
        }
    }

    #[test]
    fn sawtooth_spans_unit_amplitude() {
        let note = NoteInput { f0_hz: 440.0, phase: 0.0, note_on: 100 };
        let psi = oscillator_phase(&note, 4096, RATE);
        let saw = sawtooth(&psi);
        let max = saw.iter().cloned().fold(f64::MIN, f64::max);
        let min = saw.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max <= 1.0 && max > 0.98);
        assert!(min >= -1.0 && min < -0.97);
    }

    #[test]
    fn soft_square_saturates_to_unit_plateaus() {
        let note = NoteInput { f0_hz: 220.0, phase: 0.0, note_on: 100 };
        let psi = oscillator_phase(&note, 4096, RATE);
        let sq = soft_square(&psi, 220.0);
        // Near psi = pi/2 the wave should be hard against +1.
        let quarter = (RATE / 220.0 / 4.0).round() as usize;
        assert!(sq[quarter] > 0.999);
        assert!(sq.iter().all(|&v| v.abs() <= 1.0));
        // Sharpness shrinks with pitch so high notes stay smooth.
        assert!(square_sharpness(2000.0) < square_sharpness(100.0));
    }

    #[test]
    fn envelope_ramp_hits_endpoints_and_clamps() {
        let r = envelope_ramp(500, 400);
        assert_eq!(r[0], 1.0);
        assert!((r[200] - 0.5).abs() < 1e-12);
        assert_eq!(r[400], 0.0);
        assert_eq!(r[499], 0.0);
    }

    #[test]
    fn tape_graph_matches_plain_render() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let n = 700;
        let model = random_lowpass_model(&mut rng, n);
        let note = test_note();
        let plain = synth_render(&model, &note, n, RATE, MOD_HOP).unwrap();
        let mut tape = Tape::new();
        let graph =
            build_synth(&mut tape, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                .unwrap();
        let taped = tape.value(graph.output);
        let err = plain.iter().zip(taped).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max deviation {err}");
    }

    #[test]
    fn coefficient_modulation_matches_triangle_map() {
        let modulation = SynthModulation::Coefficients {
            theta1: vec![0.3, -0.7],
            theta2: vec![-0.2, 0.5],
            b0: vec![1.0, 0.8],
            b1: vec![0.0, 0.1],
            b2: vec![0.0, -0.1],
        };
        let (b, a) = modulation_coeff_frames(&modulation, RATE).unwrap();
        assert_eq!(b.row(1), &[0.8, 0.1, -0.1]);
        let (a1, a2) = crate::phaser::triangle_map(0.3, -0.2);
        assert!((a.at(0, 0) - a1).abs() < 1e-15);
        assert!((a.at(0, 1) - a2).abs() < 1e-15);
        assert!(a2.abs() < 1.0 && a1.abs() < 1.0 + a2);
    }

    #[test]
    fn frequency_sampling_path_tracks_time_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let n = 4096;
        // Gentle modulation so both paths describe the same filter.
        let model = SynthModel {
            globals: SynthGlobals::from_natural(0.5, 1.0, 1.0, 1.0),
            modulation: SynthModulation::LowPass {
                cutoff_raw: (0..mod_frames(n, MOD_HOP))
                    .map(|k| 0.2 * (k as f64 * 0.05).sin())
                    .collect(),
                q_raw: -1.0,
            },
        };
        let note = NoteInput { f0_hz: 220.0, phase: rng.gen_range(0.0..1.0), note_on: 3000 };
        let mut t1 = Tape::new();
        let g1 =
            build_synth(&mut t1, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                .unwrap();
        let mut t2 = Tape::new();
        let g2 = build_synth(
            &mut t2,
            &model,
            &note,
            n,
            RATE,
            SynthFilterKind::FrequencySampling,
            MOD_HOP,
        )
        .unwrap();
        let e = crate::loss::esr(t2.value(g2.output), t1.value(g1.output)).unwrap();
        assert!(e < 0.05, "ESR between filter modes {e}");
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let n = 512;
        let mut model = random_lowpass_model(&mut rng, n);
        let note = NoteInput { f0_hz: 330.0, phase: 0.8, note_on: 300 };
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let specs = [crate::loss::StftSpec { n_fft: 128, hop: 32 }];

        let mut tape = Tape::new();
        let graph =
            build_synth(&mut tape, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                .unwrap();
        let loss = mss_node(&mut tape, graph.output, &target, &specs).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = graph.flat_grads(&grads);
        let flat = model.flat_params();
        assert_eq!(analytic.len(), flat.len());

        let h = 1e-6;
        let mut eval = |params: &[f64]| -> f64 {
            model.set_flat(params);
            let mut t = Tape::new();
            let g =
                build_synth(&mut t, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                    .unwrap();
            let l = mss_node(&mut t, g.output, &target, &specs).unwrap();
            t.scalar_value(l)
        };
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                (fd - analytic[k]).abs() <= 2e-4 * fd.abs().max(1e-2),
                "param {k}: fd {fd} vs adjoint {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn coefficient_mode_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let n = 256;
        let frames = mod_frames(n, MOD_HOP);
        let mut model = SynthModel {
            globals: SynthGlobals::from_natural(0.4, 2.0, 1.5, 3.0),
            modulation: SynthModulation::Coefficients {
                theta1: (0..frames).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                theta2: (0..frames).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                b0: (0..frames).map(|_| rng.gen_range(0.5..1.0)).collect(),
                b1: (0..frames).map(|_| rng.gen_range(-0.2..0.2)).collect(),
                b2: (0..frames).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            },
        };
        let note = NoteInput { f0_hz: 440.0, phase: 0.1, note_on: 200 };
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();

        let mut tape = Tape::new();
        let graph =
            build_synth(&mut tape, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                .unwrap();
        let loss = crate::loss::esr_node(&mut tape, graph.output, &target).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = graph.flat_grads(&grads);
        let flat = model.flat_params();
        assert_eq!(analytic.len(), flat.len());

        let h = 1e-6;
        let mut eval = |params: &[f64]| -> f64 {
            model.set_flat(params);
            let mut t = Tape::new();
            let g =
                build_synth(&mut t, &model, &note, n, RATE, SynthFilterKind::TimeDomain, MOD_HOP)
                    .unwrap();
            let l = crate::loss::esr_node(&mut t, g.output, &target).unwrap();
            t.scalar_value(l)
        };
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                (fd - analytic[k]).abs() <= 2e-4 * fd.abs().max(1e-2),
                "param {k}: fd {fd} vs adjoint {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn range_transforms_round_trip_and_bound() {
        for &(range, value) in &[
            (ranges::ENV_SHAPE, 1.0),
            (ranges::CUTOFF_HZ, 440.0),
            (ranges::Q, 1.0),
            (ranges::DRIVE, 5.0),
        ] {
            let raw = range_pre_image(value, range);
            assert!((range_transform(raw, range) - value).abs() < 1e-9);
        }
        assert!(range_transform(40.0, ranges::Q) <= ranges::Q.1);
        assert!(range_transform(-40.0, ranges::Q) >= ranges::Q.0);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let n = 600;
        let model = random_lowpass_model(&mut rng, n);
        let flat = model.flat_params();
        assert_eq!(flat.len(), model.param_count());
        assert_eq!(flat.len(), 4 + mod_frames(n, MOD_HOP) + 1);
        let mut other = SynthModel::init_lowpass(n, MOD_HOP);
        other.set_flat(&flat);
        assert_eq!(other, model);
    }
}
