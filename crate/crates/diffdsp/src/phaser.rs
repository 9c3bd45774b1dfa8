//! Virtual-analog phaser: a damped LFO drives a small MLP whose output is the
//! pole of four cascaded first-order all-pass sections, wrapped in an
//! instantaneous feedback loop `g2`, summed with a through path `g1`, and
//! followed by a biquad.
//!
//! Per sample the whole structure collapses — by polynomial algebra on the
//! frozen pole value — into a single sixth-order time-varying filter: a 7-tap
//! FIR stage followed by a 6-coefficient all-pole stage, which is how the
//! model runs and differentiates. A direct simulation of the cascade (solving
//! the instantaneous feedback per sample) is kept alongside as an independent
//! reference for tests.

use crate::error::{FilterError, TapeError};
use crate::signal::CoeffTrajectory;
use crate::tape::{NodeId, Tape};
use rand::Rng;

/// One affine layer: `rows x cols` weights plus a length-`rows` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { rows, cols, weights, bias: vec![0.0; rows] }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A stack of tanh layers (tanh on every layer, including the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseParams>,
}

impl Mlp {
    /// The phaser's control network: 1 input, three hidden layers of width 8,
    /// 1 output.
    pub fn phaser_shape(rng: &mut impl Rng) -> Self {
        let dims = [1usize, 8, 8, 8, 1];
        let layers =
            dims.windows(2).map(|w| DenseParams::glorot(rng, w[1], w[0])).collect();
        Self { layers }
    }

    /// Plain scalar-in scalar-out evaluation (the tape path mirrors this
    /// arithmetic exactly).
    pub fn eval(&self, input: f64) -> f64 {
        let mut v = vec![input];
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let mut acc = layer.bias[r];
                for (c, x) in v.iter().enumerate() {
                    acc += layer.weights[r * layer.cols + c] * x;
                }
                out.push(acc.tanh());
            }
            v = out;
        }
        v[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseParams::len).sum()
    }
}

/// Learnable phaser parameters as unconstrained pre-images. The natural
/// values are `f0 = (F_c/2) tanh(f0_raw)`, `phi = pi tanh(phi_raw)`,
/// `g2 = sigmoid(g2_raw)`, the biquad feedback pair through the stability
/// triangle map, and `sigma`, `g1`, `bq_b` used directly.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaserModel {
    pub f0_raw: f64,
    pub sigma: f64,
    pub phi_raw: f64,
    pub g1: f64,
    pub g2_raw: f64,
    pub bq_b: [f64; 3],
    pub bq_theta: [f64; 2],
    pub mlp: Mlp,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unconstrained pair into the biquad stability triangle
/// `{|a2| < 1, |a1| < 1 + a2}`.
pub fn triangle_map(theta1: f64, theta2: f64) -> (f64, f64) {
    let a1 = 2.0 * theta1.tanh();
    let a2 = ((2.0 - a1.abs()) * theta2.tanh() + a1.abs()) / 2.0;
    (a1, a2)
}

/// Natural-unit phaser parameters (everything except the MLP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaserNatural {
    pub f0_hz: f64,
    pub sigma: f64,
    pub phi: f64,
    pub g1: f64,
    pub g2: f64,
    pub bq_b: [f64; 3],
    pub bq_a: [f64; 2],
}

impl PhaserModel {
    /// Neutral training start: zero LFO pre-images, unity through path, no
    /// feedback bias, identity biquad, random control network.
    pub fn init(rng: &mut impl Rng) -> Self {
        Self {
            f0_raw: rng.gen_range(-0.05..0.05),
            sigma: 0.0,
            phi_raw: 0.0,
            g1: 1.0,
            g2_raw: 0.0,
            bq_b: [1.0, 0.0, 0.0],
            bq_theta: [0.0, 0.0],
            mlp: Mlp::phaser_shape(rng),
        }
    }

    pub fn natural(&self, control_rate: f64) -> PhaserNatural {
        PhaserNatural {
            f0_hz: control_rate / 2.0 * self.f0_raw.tanh(),
            sigma: self.sigma,
            phi: std::f64::consts::PI * self.phi_raw.tanh(),
            g1: self.g1,
            g2: sigmoid(self.g2_raw),
            bq_b: self.bq_b,
            bq_a: {
                let (a1, a2) = triangle_map(self.bq_theta[0], self.bq_theta[1]);
                [a1, a2]
            },
        }
    }

    pub fn param_count(&self) -> usize {
        10 + self.mlp.param_count()
    }

    /// Flattened parameter vector: the ten filter scalars, then each MLP
    /// layer's weights (row-major) followed by its bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = vec![
            self.f0_raw,
            self.sigma,
            self.phi_raw,
            self.g1,
            self.g2_raw,
            self.bq_b[0],
            self.bq_b[1],
            self.bq_b[2],
            self.bq_theta[0],
            self.bq_theta[1],
        ];
        for layer in &self.mlp.layers {
            v.extend_from_slice(&layer.weights);
            v.extend_from_slice(&layer.bias);
        }
        v
    }

    /// Inverse of [`flat_params`]; the MLP architecture stays as-is.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        self.f0_raw = flat[0];
        self.sigma = flat[1];
        self.phi_raw = flat[2];
        self.g1 = flat[3];
        self.g2_raw = flat[4];
        self.bq_b = [flat[5], flat[6], flat[7]];
        self.bq_theta = [flat[8], flat[9]];
        let mut off = 10;
        for layer in &mut self.mlp.layers {
            let nw = layer.rows * layer.cols;
            layer.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            layer.bias.copy_from_slice(&flat[off..off + layer.rows]);
            off += layer.rows;
        }
    }
}

/// Damped-oscillator control signal
/// `s(m) = exp(-sigma^2 m / F_c) cos(2 pi f0 m / F_c + phi)`.
pub fn damped_osc(f0_hz: f64, sigma: f64, phi: f64, frames: usize, control_rate: f64) -> Vec<f64> {
    let decay = sigma * sigma;
    (0..frames)
        .map(|m| {
            let t = m as f64 / control_rate;
            (-decay * t).exp() * (2.0 * std::f64::consts::PI * f0_hz * t + phi).cos()
        })
        .collect()
}

/// Number of control frames used for `n` audio samples at the given hop.
pub fn control_frames(n: usize, hop: usize) -> usize {
    n.div_ceil(hop).max(2)
}

/// Collapses the pole trajectory and the section gains into the sixth-order
/// filter: a 7-column FIR trajectory (lag 0 first) and a 6-column feedback
/// trajectory (lag 1 first), both normalised by the lag-0 denominator
/// coefficient.
///
/// Per sample: the all-pass cascade is `B4 / A4` with
/// `B4 = (p - z^-1)^4`, `A4 = (1 - p z^-1)^4`; closing the feedback gives the
/// denominator `D = A4 - g2 B4`; the through path adds `g1 D` to the
/// numerator; and the biquad multiplies both sides.
pub fn assemble_phaser_coeffs(
    p: &[f64],
    g1: f64,
    g2: f64,
    bq_b: &[f64; 3],
    bq_a: &[f64; 2],
) -> Result<(CoeffTrajectory, CoeffTrajectory), FilterError> {
    if p.is_empty() {
        return Err(FilterError::BadArgument("empty pole trajectory".into()));
    }
    let n = p.len();
    let mut b_rows = vec![0.0; n * 7];
    let mut a_rows = vec![0.0; n * 6];
    for (i, &pv) in p.iter().enumerate() {
        let p2 = pv * pv;
        let p3 = p2 * pv;
        let p4 = p2 * p2;
        let a4 = [1.0, -4.0 * pv, 6.0 * p2, -4.0 * p3, p4];
        let b4 = [p4, -4.0 * p3, 6.0 * p2, -4.0 * pv, 1.0];
        let mut d = [0.0; 5];
        let mut nm = [0.0; 5];
        for j in 0..5 {
            d[j] = a4[j] - g2 * b4[j];
            nm[j] = g1 * d[j] + b4[j];
        }
        // Polynomial products with the biquad: numerator by [b0, b1, b2],
        // denominator by [1, a1, a2].
        let mut bfull = [0.0; 7];
        let mut afull = [0.0; 7];
        for j in 0..5 {
            bfull[j] += nm[j] * bq_b[0];
            bfull[j + 1] += nm[j] * bq_b[1];
            bfull[j + 2] += nm[j] * bq_b[2];
            afull[j] += d[j];
            afull[j + 1] += d[j] * bq_a[0];
            afull[j + 2] += d[j] * bq_a[1];
        }
        let lead = afull[0];
        if lead.abs() < 1e-9 {
            return Err(FilterError::SingularNormalisation {
                index: i,
                name: "lag-0 denominator",
                value: lead,
            });
        }
        for j in 0..7 {
            b_rows[i * 7 + j] = bfull[j] / lead;
        }
        for j in 1..7 {
            a_rows[i * 6 + (j - 1)] = afull[j] / lead;
        }
    }
    Ok((CoeffTrajectory::from_rows(b_rows, 7)?, CoeffTrajectory::from_rows(a_rows, 6)?))
}

/// Direct simulation of the structure the coefficients are assembled from:
/// four first-order all-pass sections in series, instantaneous feedback `g2`
/// solved in closed form per sample, through path `g1`, biquad at the output.
/// Used as an independent oracle for the assembled filter.
pub fn apf_cascade_reference(
    x: &[f64],
    p: &[f64],
    g1: f64,
    g2: f64,
    bq_b: &[f64; 3],
    bq_a: &[f64; 2],
) -> Vec<f64> {
    assert_eq!(x.len(), p.len(), "input and pole trajectory must share a length");
    let mut x_prev = [0.0; 4];
    let mut y_prev = [0.0; 4];
    let (mut w1, mut w2, mut yb1, mut yb2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(x.len());
    for (&xn, &pv) in x.iter().zip(p) {
        // Each section is out_k = p * in_k + c_k with c_k fixed by its state.
        let c: [f64; 4] = std::array::from_fn(|k| pv * y_prev[k] - x_prev[k]);
        let p4 = pv * pv * pv * pv;
        let tail = ((c[0] * pv + c[1]) * pv + c[2]) * pv + c[3];
        // Cascade output is p^4 u + tail; solve u = x + g2 (p^4 u + tail).
        let u = (xn + g2 * tail) / (1.0 - g2 * p4);
        let mut inp = u;
        for k in 0..4 {
            let y = pv * inp + c[k];
            x_prev[k] = inp;
            y_prev[k] = y;
            inp = y;
        }
        let w = g1 * xn + inp;
        let yb = bq_b[0] * w + bq_b[1] * w1 + bq_b[2] * w2 - bq_a[0] * yb1 - bq_a[1] * yb2;
        w2 = w1;
        w1 = w;
        yb2 = yb1;
        yb1 = yb;
        out.push(yb);
    }
    out
}

/// Renders the phaser without a tape (target generation, inference).
pub fn phaser_render(
    x: &[f64],
    model: &PhaserModel,
    hop: usize,
    sample_rate: f64,
) -> Result<Vec<f64>, FilterError> {
    let control_rate = sample_rate / hop as f64;
    render_phaser_natural(x, &model.natural(control_rate), &model.mlp, hop, sample_rate)
}

/// Renders from natural-unit parameters directly. Unlike [`phaser_render`]
/// this can express boundary settings (e.g. `g2 = 0`) that have no
/// unconstrained pre-image, which target recipes need.
pub fn render_phaser_natural(
    x: &[f64],
    nat: &PhaserNatural,
    mlp: &Mlp,
    hop: usize,
    sample_rate: f64,
) -> Result<Vec<f64>, FilterError> {
    let control_rate = sample_rate / hop as f64;
    let frames = control_frames(x.len(), hop);
    let s = damped_osc(nat.f0_hz, nat.sigma, nat.phi, frames, control_rate);
    let p_frames: Vec<f64> = s.iter().map(|&sm| mlp.eval(sm)).collect();
    let p = crate::sigops::upsample_linear(&p_frames, x.len(), hop)?;
    let (b, a) = assemble_phaser_coeffs(&p, nat.g1, nat.g2, &nat.bq_b, &nat.bq_a)?;
    let v = crate::sigops::tv_fir(x, &b)?;
    crate::allpole::allpole_forward(&v, &a)
}

/// Node handles for a phaser tape graph.
#[derive(Debug)]
pub struct PhaserGraph {
    pub output: NodeId,
    /// Audio-rate pole trajectory (diagnostics).
    pub pole: NodeId,
    /// Leaves in [`PhaserModel::flat_params`] order: ten scalars, then each
    /// MLP layer's weight matrix and bias vector.
    param_leaves: Vec<NodeId>,
}

impl PhaserGraph {
    /// Concatenated adjoints in [`PhaserModel::flat_params`] order.
    pub fn flat_grads(&self, grads: &crate::tape::Gradients) -> Vec<f64> {
        let mut v = Vec::new();
        for &id in &self.param_leaves {
            v.extend_from_slice(grads.wrt(id));
        }
        v
    }
}

/// Builds the differentiable phaser on `tape`.
pub fn build_phaser(
    tape: &mut Tape,
    x: &[f64],
    model: &PhaserModel,
    hop: usize,
    sample_rate: f64,
) -> Result<PhaserGraph, TapeError> {
    if x.is_empty() {
        return Err(TapeError::BadArgument("empty input".into()));
    }
    if hop == 0 || sample_rate <= 0.0 {
        return Err(TapeError::BadArgument("hop and sample rate must be positive".into()));
    }
    let n = x.len();
    let control_rate = sample_rate / hop as f64;
    let frames = control_frames(n, hop);

    // Parameter leaves, in flat order.
    let f0_raw = tape.scalar(model.f0_raw);
    let sigma = tape.scalar(model.sigma);
    let phi_raw = tape.scalar(model.phi_raw);
    let g1 = tape.scalar(model.g1);
    let g2_raw = tape.scalar(model.g2_raw);
    let bb: Vec<NodeId> = model.bq_b.iter().map(|&b| tape.scalar(b)).collect();
    let th1 = tape.scalar(model.bq_theta[0]);
    let th2 = tape.scalar(model.bq_theta[1]);
    let mut param_leaves = vec![f0_raw, sigma, phi_raw, g1, g2_raw, bb[0], bb[1], bb[2], th1, th2];
    let mut mlp_nodes = Vec::new();
    for layer in &model.mlp.layers {
        let w = tape.matrix(layer.rows, layer.cols, layer.weights.clone())?;
        let b = tape.vector(layer.bias.clone());
        param_leaves.push(w);
        param_leaves.push(b);
        mlp_nodes.push((w, b));
    }

    // Natural-unit transforms.
    let half_rate = tape.scalar(control_rate / 2.0);
    let f0 = {
        let t = tape.tanh(f0_raw)?;
        tape.mul(half_rate, t)?
    };
    let phi = {
        let pi = tape.scalar(std::f64::consts::PI);
        let t = tape.tanh(phi_raw)?;
        tape.mul(pi, t)?
    };
    let g2 = tape.sigmoid(g2_raw)?;
    let neg_decay = {
        let s2 = tape.mul(sigma, sigma)?;
        let neg1 = tape.scalar(-1.0);
        tape.mul(neg1, s2)?
    };
    let two_pi_f0 = {
        let c = tape.scalar(2.0 * std::f64::consts::PI);
        tape.mul(c, f0)?
    };

    // LFO and control network, one scalar chain per control frame.
    let mut p_parts = Vec::with_capacity(frames);
    for m in 0..frames {
        let t_m = tape.scalar(m as f64 / control_rate);
        let decay = {
            let e = tape.mul(neg_decay, t_m)?;
            tape.exp(e)?
        };
        let angle = {
            let a = tape.mul(two_pi_f0, t_m)?;
            tape.add(a, phi)?
        };
        let cosv = tape.cos(angle)?;
        let s_m = tape.mul(decay, cosv)?;
        let mut h = tape.concat(&[s_m])?;
        for &(w, b) in &mlp_nodes {
            let lin = tape.dense(w, b, h)?;
            h = tape.tanh(lin)?;
        }
        p_parts.push(h);
    }
    let p_frames = tape.concat(&p_parts)?;
    let pole = tape.upsample(p_frames, n, hop)?;

    // Per-sample polynomial assembly on the audio-rate pole.
    let ones = tape.vector(vec![1.0; n]);
    let m4 = tape.scalar(-4.0);
    let c6 = tape.scalar(6.0);
    let p2 = tape.mul(pole, pole)?;
    let p3 = tape.mul(p2, pole)?;
    let p4 = tape.mul(p2, p2)?;
    let a4 = [
        ones,
        tape.mul(m4, pole)?,
        tape.mul(c6, p2)?,
        tape.mul(m4, p3)?,
        p4,
    ];
    let b4 = [
        p4,
        tape.mul(m4, p3)?,
        tape.mul(c6, p2)?,
        tape.mul(m4, pole)?,
        ones,
    ];
    let mut d = Vec::with_capacity(5);
    let mut nm = Vec::with_capacity(5);
    for j in 0..5 {
        let fb = tape.mul(g2, b4[j])?;
        let dj = tape.sub(a4[j], fb)?;
        let through = tape.mul(g1, dj)?;
        nm.push(tape.add(through, b4[j])?);
        d.push(dj);
    }

    // Numerator times [b0, b1, b2], denominator times [1, a1, a2].
    let (bq_a1, bq_a2) = {
        let two = tape.scalar(2.0);
        let half = tape.scalar(0.5);
        let t1 = tape.tanh(th1)?;
        let a1 = tape.mul(two, t1)?;
        let abs_a1 = tape.abs(a1)?;
        let gap = tape.sub(two, abs_a1)?;
        let t2 = tape.tanh(th2)?;
        let scaled = tape.mul(gap, t2)?;
        let summed = tape.add(scaled, abs_a1)?;
        (a1, tape.mul(half, summed)?)
    };
    let mut b_cols: Vec<Option<NodeId>> = vec![None; 7];
    let mut a_cols: Vec<Option<NodeId>> = vec![None; 7];
    let add_into = |tape: &mut Tape,
                        slot: &mut Option<NodeId>,
                        term: NodeId|
     -> Result<(), TapeError> {
        *slot = Some(match *slot {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        Ok(())
    };
    for j in 0..5 {
        for (lag, &bq) in bb.iter().enumerate() {
            let term = tape.mul(bq, nm[j])?;
            add_into(tape, &mut b_cols[j + lag], term)?;
        }
        add_into(tape, &mut a_cols[j], d[j])?;
        let t1 = tape.mul(bq_a1, d[j])?;
        add_into(tape, &mut a_cols[j + 1], t1)?;
        let t2 = tape.mul(bq_a2, d[j])?;
        add_into(tape, &mut a_cols[j + 2], t2)?;
    }
    let b_cols: Vec<NodeId> = b_cols.into_iter().map(|c| c.expect("filled")).collect();
    let a_cols: Vec<NodeId> = a_cols.into_iter().map(|c| c.expect("filled")).collect();

    // Normalise by the lag-0 denominator coefficient, rejecting near-zeros.
    let lead = a_cols[0];
    for (i, &v) in tape.value(lead).iter().enumerate() {
        if v.abs() < 1e-9 {
            return Err(TapeError::Kernel(FilterError::SingularNormalisation {
                index: i,
                name: "lag-0 denominator",
                value: v,
            }));
        }
    }
    let inv = tape.pow_const(lead, -1.0)?;
    let b_norm: Vec<NodeId> =
        b_cols.iter().map(|&c| tape.mul(c, inv)).collect::<Result<_, _>>()?;
    let a_norm: Vec<NodeId> =
        a_cols[1..].iter().map(|&c| tape.mul(c, inv)).collect::<Result<_, _>>()?;

    let x_node = tape.vector(x.to_vec());
    let v = tape.tv_fir(x_node, &b_norm)?;
    let output = tape.allpole(v, &a_norm)?;
    Ok(PhaserGraph { output, pole, param_leaves })
}
