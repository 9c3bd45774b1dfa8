//! Experiment runners: synthetic program material, self-identification fits
//! for the three models, and serialisable reports. Every run is deterministic
//! given (seed, config): control flow never depends on wall-clock time.

use std::path::Path;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compressor::{
    alpha_to_time, build_compressor, compressor_forward, time_to_alpha, CompressorParams,
    FfPreset, RawCompressorParams, SmootherKind,
};
use crate::config::{
    config_hash, CompressorFitConfig, PhaserFitConfig, RenderConfig, SynthFitConfig,
};
use crate::error::HarnessError;
use crate::loss::{
    default_stft_specs, esr, esr_node, mae_pre_emphasis_node, mss_node_with, MssTarget,
};
use crate::optim::{Adam, Optimizer, Sgd};
use crate::phaser::{
    build_phaser, phaser_render, render_phaser_natural, Mlp, PhaserModel, PhaserNatural,
};
use crate::sigops::{chirp_train, pre_emphasis, ChirpTrain};
use crate::synth::{
    build_synth_with, mod_frames, range_pre_image, range_transform, ranges, synth_render,
    NoteInput, NoteSignals, SynthFilterKind, SynthGlobals, SynthModel, SynthModulation,
};
use crate::tape::Tape;
use crate::wav::{wav_write, WavFormat};

/// Crate version embedded in every report.
pub fn library_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Provenance block shared by all reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub task: String,
    pub library_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub precision: String,
}

impl RunMeta {
    pub fn new<T: Serialize>(task: &str, seed: u64, config: &T) -> Self {
        Self {
            task: task.to_string(),
            library_version: library_version().to_string(),
            seed,
            config_hash: config_hash(config),
            precision: "f64".to_string(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// On divergence the aborted run leaves its last state next to the report.
#[derive(Debug, Clone, Serialize)]
struct StateDump<'a> {
    epoch: usize,
    loss: f64,
    params: &'a [f64],
}

fn dump_state(out: Option<&Path>, epoch: usize, loss: f64, params: &[f64]) {
    if let Some(dir) = out {
        let _ = write_json(&dir.join("state_dump.json"), &StateDump { epoch, loss, params });
    }
}

fn peak_normalise(x: &mut [f64], peak: f64) {
    let max = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

/// Constant-coefficient biquad used when shaping synthetic noise.
fn biquad(x: &[f64], c: &[f64; 5]) -> Vec<f64> {
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&xi| {
            let y = c[0] * xi + c[1] * x1 + c[2] * x2 - c[3] * y1 - c[4] * y2;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// 60 s-style compressor program: a broadband chirp train mixed with
/// lowpass-filtered noise whose level jumps between loud and quiet plateaus,
/// exercising both attack and release.
pub fn compressor_program(
    seconds: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let n = (seconds * sample_rate).round() as usize;
    let chirp = chirp_train(seconds, sample_rate, ChirpTrain::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0fe_fade);
    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shaped = biquad(&white, &crate::synth::lowpass_coeffs(1200.0, 0.9, sample_rate));

    // Level plateaus cycling every 1.5 s with 30 ms raised-cosine crossfades.
    let levels = [0.08, 0.9, 0.25, 0.7];
    let seg = (1.5 * sample_rate).round() as usize;
    let fade = (0.03 * sample_rate).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = i / seg.max(1);
        let m = i % seg.max(1);
        let cur = levels[k % levels.len()];
        let prev = if k == 0 { cur } else { levels[(k - 1) % levels.len()] };
        let env = if m < fade && fade > 0 {
            let t = 0.5 * (1.0 - (std::f64::consts::PI * m as f64 / fade as f64).cos());
            prev + (cur - prev) * t
        } else {
            cur
        };
        out.push(0.5 * chirp[i] + 0.5 * env * shaped[i]);
    }
    peak_normalise(&mut out, 0.95);
    Ok(out)
}

/// Broadband phaser program: chirp train plus unmodulated filtered noise, so
/// the moving notches always have energy to carve.
pub fn phaser_program(
    seconds: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let n = (seconds * sample_rate).round() as usize;
    let chirp = chirp_train(seconds, sample_rate, ChirpTrain::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfa5e_0001);
    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shaped = biquad(&white, &crate::synth::lowpass_coeffs(4000.0, 0.7071, sample_rate));
    let mut out: Vec<f64> =
        chirp.iter().zip(&shaped).map(|(&c, &w)| 0.5 * c + 0.5 * w).collect();
    peak_normalise(&mut out, 0.9);
    Ok(out)
}

/// Ground-truth phaser for self-identification: the configured LFO with the
/// identity biquad and a seeded control network biased towards a wide,
/// audible pole sweep.
pub fn phaser_target(cfg: &PhaserFitConfig, seed: u64) -> (PhaserNatural, Mlp) {
    let nat = PhaserNatural {
        f0_hz: cfg.target_f0_hz,
        sigma: cfg.target_sigma,
        phi: cfg.target_phi,
        g1: cfg.target_g1,
        g2: cfg.target_g2,
        bq_b: [1.0, 0.0, 0.0],
        bq_a: [0.0, 0.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut mlp = Mlp::phaser_shape(&mut rng);
    let last = mlp.layers.last_mut().expect("phaser mlp has layers");
    for w in &mut last.weights {
        *w *= 1.5;
    }
    last.bias[0] += 0.5;
    (nat, mlp)
}

/// Hand-written synth target: an exponentially decaying cutoff sweep with
/// moderate resonance and fixed globals.
pub fn synth_target_model(cfg: &SynthFitConfig) -> SynthModel {
    let frames = mod_frames(cfg.samples, cfg.hop);
    let cutoff_raw = (0..frames)
        .map(|k| {
            let fc = 250.0 + 5000.0 * (-3.0 * k as f64 / frames as f64).exp();
            range_pre_image(fc, ranges::CUTOFF_HZ)
        })
        .collect();
    SynthModel {
        globals: SynthGlobals::from_natural(0.65, 2.5, 1.3, 3.0),
        modulation: SynthModulation::LowPass {
            cutoff_raw,
            q_raw: range_pre_image(2.5, ranges::Q),
        },
    }
}

// ---------------------------------------------------------------------------
// Compressor fit
// ---------------------------------------------------------------------------

/// Natural-unit compressor parameters as reported (times in milliseconds).
#[derive(Debug, Clone, Serialize)]
pub struct CompressorParamsReport {
    pub ratio: f64,
    pub threshold_db: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub rms_alpha: f64,
    pub makeup_gain: f64,
}

impl From<&CompressorParams> for CompressorParamsReport {
    fn from(p: &CompressorParams) -> Self {
        Self {
            ratio: p.ratio,
            threshold_db: p.threshold_db,
            attack_ms: alpha_to_time(p.attack_alpha) * 1e3,
            release_ms: alpha_to_time(p.release_alpha) * 1e3,
            rms_alpha: p.rms_alpha,
            makeup_gain: p.makeup_gain,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressorFitReport {
    pub meta: RunMeta,
    pub preset: String,
    pub smoother: String,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_train_loss: f64,
    /// Error-to-signal ratio of the best model on the pre-emphasised program.
    pub esr: f64,
    pub esr_percent: f64,
    pub learned: CompressorParamsReport,
    pub truth: CompressorParamsReport,
    pub attack_rel_err: f64,
    pub release_rel_err: f64,
}

pub fn parse_preset(name: &str) -> Result<FfPreset, HarnessError> {
    match name {
        "FF-A" => Ok(FfPreset::A),
        "FF-B" => Ok(FfPreset::B),
        "FF-C" => Ok(FfPreset::C),
        other => Err(HarnessError::Config(format!(
            "unknown preset {other:?}; expected FF-A, FF-B or FF-C"
        ))),
    }
}

/// Training start recommended for the compressor: 50 ms time constants,
/// gentle ratio, -10 dB threshold, fast level detector, unity makeup.
pub fn compressor_training_init() -> CompressorParams {
    CompressorParams {
        ratio: 2.0,
        threshold_db: -10.0,
        attack_alpha: time_to_alpha(0.05),
        release_alpha: time_to_alpha(0.05),
        rms_alpha: 0.3,
        makeup_gain: 1.0,
    }
}

/// Renders the compressor the way the configured method would at inference.
fn render_compressor(
    x: &[f64],
    raw: &RawCompressorParams,
    kind: SmootherKind,
) -> Result<Vec<f64>, HarnessError> {
    match kind {
        SmootherKind::TimeDomain => Ok(compressor_forward(x, &raw.to_params())?),
        SmootherKind::FrequencySampling => {
            let mut tape = Tape::new();
            let graph = build_compressor(&mut tape, x, raw, kind)?;
            Ok(tape.value(graph.output).to_vec())
        }
    }
}

fn pre_emphasised_esr(y: &[f64], target: &[f64]) -> Result<f64, HarnessError> {
    Ok(esr(&pre_emphasis(y), &pre_emphasis(target))?)
}

pub fn fit_compressor(
    cfg: &CompressorFitConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<CompressorFitReport, HarnessError> {
    let preset = parse_preset(&cfg.preset)?;
    let truth = preset.params();
    let kind = if cfg.frequency_sampling {
        SmootherKind::FrequencySampling
    } else {
        SmootherKind::TimeDomain
    };
    let x = compressor_program(cfg.seconds, cfg.sample_rate, seed)?;
    let target = compressor_forward(&x, &truth)?;

    let mut raw = RawCompressorParams::from_params(&compressor_training_init());
    let mut flat = raw.as_flat();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, flat);

    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut tape = Tape::new();
        let graph = build_compressor(&mut tape, &x, &raw, kind)?;
        let loss_node = mae_pre_emphasis_node(&mut tape, graph.output, &target)?;
        let loss = tape.scalar_value(loss_node);
        curve.push(loss);
        if !loss.is_finite() || loss > 1e9 {
            dump_state(out, epoch, loss, &flat);
            return Err(HarnessError::Diverged { epoch, loss });
        }
        if loss < best.0 {
            best = (loss, epoch, flat);
        }

        // Optional early stops; both are functions of the recorded history
        // and the (deterministic) evaluation render only.
        if let Some(stop) = cfg.early_stop_esr {
            if epoch % 20 == 19 {
                let y = render_compressor(&x, &RawCompressorParams::from_flat(&best.2), kind)?;
                if pre_emphasised_esr(&y, &target)? < stop {
                    break;
                }
            }
        }
        if let Some(tol) = cfg.plateau_rel_tol {
            let w = cfg.plateau_window.max(1);
            if epoch >= 2 * w {
                let old = curve[epoch - w];
                if old.is_finite() && (old - loss) / old.abs().max(1e-300) < tol {
                    break;
                }
            }
        }

        let grads = tape.backward(loss_node)?;
        let nodes = graph.param_nodes();
        let g: Vec<f64> = nodes.iter().map(|&id| grads.scalar(id)).collect();
        opt.step(&mut flat, &g)?;
        // Keep the sigmoid-parameterised coefficients representable: past
        // |logit| = 36 the sigmoid rounds to exactly 0 or 1 in f64, which the
        // smoother rejects. Clamping only touches already-degenerate values.
        for v in &mut flat[2..5] {
            *v = v.clamp(-36.0, 36.0);
        }
        // Raw parameters are log-ratios, decibels, logits, and a linear gain;
        // anything beyond 1e8 (or non-finite) means the step exploded and the
        // next forward pass would only manufacture infs.
        if flat.iter().any(|v| !v.is_finite() || v.abs() > 1e8) {
            dump_state(out, epoch, loss, &flat);
            return Err(HarnessError::Diverged { epoch, loss });
        }
        raw = RawCompressorParams::from_flat(&flat);
    }

    let best_raw = RawCompressorParams::from_flat(&best.2);
    let learned = best_raw.to_params();
    let y = render_compressor(&x, &best_raw, kind)?;
    let e = pre_emphasised_esr(&y, &target)?;
    let learned_report = CompressorParamsReport::from(&learned);
    let truth_report = CompressorParamsReport::from(&truth);
    let report = CompressorFitReport {
        meta: RunMeta::new("fit-compressor", seed, cfg),
        preset: preset.name().to_string(),
        smoother: match kind {
            SmootherKind::TimeDomain => "time-domain".into(),
            SmootherKind::FrequencySampling => "frequency-sampling".into(),
        },
        epochs_run,
        best_epoch: best.1,
        best_train_loss: best.0,
        esr: e,
        esr_percent: 100.0 * e,
        attack_rel_err: (learned_report.attack_ms - truth_report.attack_ms).abs()
            / truth_report.attack_ms,
        release_rel_err: (learned_report.release_ms - truth_report.release_ms).abs()
            / truth_report.release_ms,
        learned: learned_report,
        truth: truth_report,
        train_loss: curve,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        let rate = cfg.sample_rate.round() as u32;
        wav_write(&dir.join("program.wav"), &x, rate, WavFormat::Float32)?;
        wav_write(&dir.join("target.wav"), &target, rate, WavFormat::Float32)?;
        wav_write(&dir.join("model_output.wav"), &y, rate, WavFormat::Float32)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Phaser fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PhaserRestartReport {
    pub restart: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_train_esr: f64,
    pub held_out_esr: f64,
    pub learned_f0_hz: f64,
    /// Per-frame LFO decay factor `exp(-sigma^2 / F_c)`; 1 means undamped.
    pub learned_decay_factor: f64,
    pub f0_rel_err: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaserFitReport {
    pub meta: RunMeta,
    pub control_rate: f64,
    pub target_f0_hz: f64,
    pub target_g2: f64,
    pub restarts: Vec<PhaserRestartReport>,
    pub best_restart: usize,
    pub best_held_out_esr: f64,
    pub best_f0_rel_err: f64,
    pub best_decay_factor: f64,
    /// Training curve of the best restart.
    pub train_loss: Vec<f64>,
}

pub fn fit_phaser(
    cfg: &PhaserFitConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<PhaserFitReport, HarnessError> {
    let rate = cfg.sample_rate;
    let control_rate = rate / cfg.hop as f64;
    let n_train = (cfg.train_seconds * rate).round() as usize;
    let n_total = ((cfg.train_seconds + cfg.test_seconds) * rate).round() as usize;
    let x_full = phaser_program(cfg.train_seconds + cfg.test_seconds, rate, seed)?;
    let (nat_target, mlp_target) = phaser_target(cfg, seed);
    let target_full = render_phaser_natural(&x_full, &nat_target, &mlp_target, cfg.hop, rate)?;
    let x_train = &x_full[..n_train];
    let t_train = &target_full[..n_train];

    let mut restarts = Vec::with_capacity(cfg.restarts);
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(cfg.restarts);
    let mut best_models: Vec<Option<PhaserModel>> = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let restart_seed = seed.wrapping_add(r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
        let mut model = PhaserModel::init(&mut rng);
        let mut flat = model.flat_params();
        let mut opt = Adam::new(cfg.learning_rate);
        let mut curve = Vec::new();
        let mut diverged = false;
        let mut epochs_run = 0;
        for _epoch in 0..cfg.epochs {
            epochs_run += 1;
            let mut tape = Tape::new();
            let step = (|| -> Result<f64, HarnessError> {
                let graph = build_phaser(&mut tape, x_train, &model, cfg.hop, rate)?;
                let loss_node = esr_node(&mut tape, graph.output, t_train)?;
                let loss = tape.scalar_value(loss_node);
                if !loss.is_finite() {
                    return Err(HarnessError::Diverged { epoch: epochs_run - 1, loss });
                }
                let grads = tape.backward(loss_node)?;
                let g = graph.flat_grads(&grads);
                opt.step(&mut flat, &g)?;
                model.set_flat(&flat);
                Ok(loss)
            })();
            match step {
                Ok(loss) => {
                    curve.push(loss);
                    if loss < cfg.early_stop_esr {
                        break;
                    }
                }
                Err(_) => {
                    // A single restart blowing up (non-finite loss or a
                    // singular assembly) doesn't abort the run.
                    diverged = true;
                    break;
                }
            }
        }
        let final_train_esr = curve.last().copied().unwrap_or(f64::INFINITY);
        let eval = if diverged {
            None
        } else {
            phaser_render(&x_full, &model, cfg.hop, rate)
                .ok()
                .and_then(|y| esr(&y[n_train..], &target_full[n_train..]).ok())
        };
        let nat = model.natural(control_rate);
        let learned_f0 = nat.f0_hz.abs();
        restarts.push(PhaserRestartReport {
            restart: r,
            seed: restart_seed,
            epochs_run,
            final_train_esr,
            held_out_esr: eval.unwrap_or(f64::INFINITY),
            learned_f0_hz: learned_f0,
            learned_decay_factor: (-nat.sigma * nat.sigma / control_rate).exp(),
            f0_rel_err: (learned_f0 - cfg.target_f0_hz).abs() / cfg.target_f0_hz.abs().max(1e-12),
            diverged: diverged || eval.is_none(),
        });
        curves.push(curve);
        best_models.push(if diverged { None } else { Some(model) });
    }

    let best_restart = restarts
        .iter()
        .enumerate()
        .filter(|(_, r)| r.held_out_esr.is_finite())
        .min_by(|a, b| a.1.held_out_esr.total_cmp(&b.1.held_out_esr))
        .map(|(i, _)| i);
    let Some(best_restart) = best_restart else {
        dump_state(out, 0, f64::INFINITY, &[]);
        return Err(HarnessError::Diverged { epoch: 0, loss: f64::INFINITY });
    };

    let best = &restarts[best_restart];
    let report = PhaserFitReport {
        meta: RunMeta::new("fit-phaser", seed, cfg),
        control_rate,
        target_f0_hz: cfg.target_f0_hz,
        target_g2: cfg.target_g2,
        best_restart,
        best_held_out_esr: best.held_out_esr,
        best_f0_rel_err: best.f0_rel_err,
        best_decay_factor: best.learned_decay_factor,
        train_loss: curves[best_restart].clone(),
        restarts,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        let rate_u = rate.round() as u32;
        wav_write(&dir.join("input.wav"), &x_full, rate_u, WavFormat::Float32)?;
        wav_write(&dir.join("target.wav"), &target_full, rate_u, WavFormat::Float32)?;
        if let Some(model) = &best_models[best_restart] {
            let y = phaser_render(&x_full, model, cfg.hop, rate)?;
            wav_write(&dir.join("model_output.wav"), &y, rate_u, WavFormat::Float32)?;
        }
        let _ = n_total;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Synth fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SynthGlobalsReport {
    pub osc_mix: f64,
    pub env_shape: f64,
    pub osc_gain: f64,
    pub drive: f64,
}

impl From<&SynthGlobals> for SynthGlobalsReport {
    fn from(g: &SynthGlobals) -> Self {
        let (osc_mix, env_shape, osc_gain, drive) = g.natural();
        Self { osc_mix, env_shape, osc_gain, drive }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthFitReport {
    pub meta: RunMeta,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub final_mss: f64,
    pub waveform_esr: f64,
    pub learned_globals: SynthGlobalsReport,
    pub truth_globals: SynthGlobalsReport,
    /// Mean absolute cutoff error over frames, in Hz.
    pub cutoff_mae_hz: Option<f64>,
}

pub fn fit_synth(
    cfg: &SynthFitConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<SynthFitReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let note = NoteInput {
        f0_hz: cfg.note_f0_hz,
        phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
        note_on: cfg.note_on,
    };
    let target_model = synth_target_model(cfg);
    let target = synth_render(&target_model, &note, cfg.samples, cfg.sample_rate, cfg.hop)?;

    let mut model = SynthModel::init_lowpass(cfg.samples, cfg.hop);
    let mut flat = model.flat_params();
    let mut opt = Adam::with_weight_decay(cfg.learning_rate, cfg.weight_decay);
    let specs = default_stft_specs();
    let target_spectra = Arc::new(MssTarget::new(&target, &specs)?);
    let signals = NoteSignals::new(&note, cfg.samples, cfg.sample_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut tape = Tape::new();
        let graph = build_synth_with(
            &mut tape,
            &model,
            &signals,
            cfg.samples,
            cfg.sample_rate,
            SynthFilterKind::TimeDomain,
            cfg.hop,
        )?;
        let loss_node = mss_node_with(&mut tape, graph.output, &target_spectra)?;
        let loss = tape.scalar_value(loss_node);
        curve.push(loss);
        if !loss.is_finite() || loss > 1e9 {
            dump_state(out, epoch, loss, &flat);
            return Err(HarnessError::Diverged { epoch, loss });
        }
        let grads = tape.backward(loss_node)?;
        let g = graph.flat_grads(&grads);
        opt.step(&mut flat, &g)?;
        model.set_flat(&flat);
    }

    let y = synth_render(&model, &note, cfg.samples, cfg.sample_rate, cfg.hop)?;
    let final_mss = crate::loss::mss(&y, &target, &specs)?;
    let waveform_esr = esr(&y, &target)?;
    let cutoff_mae_hz = match (&model.modulation, &target_model.modulation) {
        (
            SynthModulation::LowPass { cutoff_raw: got, .. },
            SynthModulation::LowPass { cutoff_raw: want, .. },
        ) => Some(
            got.iter()
                .zip(want)
                .map(|(&g, &w)| {
                    (range_transform(g, ranges::CUTOFF_HZ) - range_transform(w, ranges::CUTOFF_HZ))
                        .abs()
                })
                .sum::<f64>()
                / got.len() as f64,
        ),
        _ => None,
    };
    let report = SynthFitReport {
        meta: RunMeta::new("fit-synth", seed, cfg),
        epochs_run,
        train_loss: curve,
        final_mss,
        waveform_esr,
        learned_globals: SynthGlobalsReport::from(&model.globals),
        truth_globals: SynthGlobalsReport::from(&target_model.globals),
        cutoff_mae_hz,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        let rate = cfg.sample_rate.round() as u32;
        wav_write(&dir.join("target.wav"), &target, rate, WavFormat::Float32)?;
        wav_write(&dir.join("model_output.wav"), &y, rate, WavFormat::Float32)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Render task
// ---------------------------------------------------------------------------

/// Renders the synthetic inputs and targets for the configured model family
/// to WAV files; returns the file names written.
pub fn run_render(
    cfg: &RenderConfig,
    seed: u64,
    out: &Path,
) -> Result<Vec<String>, HarnessError> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match cfg.model.as_str() {
        "compressor" => {
            let c = &cfg.compressor;
            let preset = parse_preset(&c.preset)?;
            let x = compressor_program(c.seconds, c.sample_rate, seed)?;
            let y = compressor_forward(&x, &preset.params())?;
            let rate = c.sample_rate.round() as u32;
            wav_write(&out.join("program.wav"), &x, rate, WavFormat::Float32)?;
            wav_write(&out.join("target.wav"), &y, rate, WavFormat::Float32)?;
            written.push("program.wav".into());
            written.push("target.wav".into());
        }
        "phaser" => {
            let p = &cfg.phaser;
            let seconds = p.train_seconds + p.test_seconds;
            let x = phaser_program(seconds, p.sample_rate, seed)?;
            let (nat, mlp) = phaser_target(p, seed);
            let y = render_phaser_natural(&x, &nat, &mlp, p.hop, p.sample_rate)?;
            let rate = p.sample_rate.round() as u32;
            wav_write(&out.join("input.wav"), &x, rate, WavFormat::Float32)?;
            wav_write(&out.join("target.wav"), &y, rate, WavFormat::Float32)?;
            written.push("input.wav".into());
            written.push("target.wav".into());
        }
        "synth" => {
            let s = &cfg.synth;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let note = NoteInput {
                f0_hz: s.note_f0_hz,
                phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                note_on: s.note_on,
            };
            let y = synth_render(&synth_target_model(s), &note, s.samples, s.sample_rate, s.hop)?;
            wav_write(
                &out.join("target.wav"),
                &y,
                s.sample_rate.round() as u32,
                WavFormat::Float32,
            )?;
            written.push("target.wav".into());
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown model {other:?}; expected compressor, phaser or synth"
            )))
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compressor_program_is_deterministic_and_bounded() {
        let a = compressor_program(1.2, 8000.0, 7).unwrap();
        let b = compressor_program(1.2, 8000.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9600);
        let peak = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak <= 0.95 + 1e-12 && peak > 0.9);
        let c = compressor_program(1.2, 8000.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_compressor_fit_learns_and_reports() {
        let cfg = CompressorFitConfig {
            seconds: 1.5,
            sample_rate: 8000.0,
            epochs: 60,
            learning_rate: 10.0,
            ..Default::default()
        };
        let report = fit_compressor(&cfg, 11, None).unwrap();
        assert_eq!(report.meta.config_hash, config_hash(&cfg));
        assert_eq!(report.preset, "FF-A");
        assert_eq!(report.train_loss.len(), report.epochs_run);
        assert!(report.best_train_loss < report.train_loss[0]);
        assert!(report.esr.is_finite());
        // Deterministic rerun.
        let again = fit_compressor(&cfg, 11, None).unwrap();
        assert_eq!(report.train_loss, again.train_loss);
        assert_eq!(report.learned.attack_ms, again.learned.attack_ms);
    }

    #[test]
    fn compressor_divergence_aborts_with_state_dump() {
        let dir = std::env::temp_dir().join(format!("diffdsp-div-{}", std::process::id()));
        let cfg = CompressorFitConfig {
            seconds: 0.4,
            sample_rate: 8000.0,
            epochs: 40,
            learning_rate: 1e200,
            ..Default::default()
        };
        let err = fit_compressor(&cfg, 3, Some(&dir)).unwrap_err();
        assert!(matches!(err, HarnessError::Diverged { .. }), "expected divergence, got {err:?}");
        assert!(dir.join("state_dump.json").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn small_phaser_fit_improves_over_restarts() {
        let cfg = PhaserFitConfig {
            sample_rate: 8000.0,
            hop: 320,
            train_seconds: 1.5,
            test_seconds: 0.75,
            epochs: 40,
            restarts: 2,
            target_f0_hz: 2.0,
            ..Default::default()
        };
        let report = fit_phaser(&cfg, 5, None).unwrap();
        assert_eq!(report.restarts.len(), 2);
        let curve = &report.train_loss;
        assert!(curve.last().unwrap() < curve.first().unwrap());
        assert!(report.best_held_out_esr.is_finite());
        let again = fit_phaser(&cfg, 5, None).unwrap();
        assert_eq!(report.best_held_out_esr, again.best_held_out_esr);
    }

    #[test]
    fn small_synth_fit_reduces_spectral_loss() {
        let cfg = SynthFitConfig {
            samples: 1600,
            epochs: 40,
            note_on: 1200,
            ..Default::default()
        };
        let report = fit_synth(&cfg, 4, None).unwrap();
        assert_eq!(report.train_loss.len(), 40);
        assert!(report.final_mss < report.train_loss[0]);
        assert!(report.cutoff_mae_hz.unwrap().is_finite());
    }

    #[test]
    fn render_writes_the_expected_files() {
        let dir = std::env::temp_dir().join(format!("diffdsp-render-{}", std::process::id()));
        let cfg = RenderConfig {
            model: "synth".into(),
            synth: SynthFitConfig { samples: 800, note_on: 600, ..Default::default() },
            ..Default::default()
        };
        let files = run_render(&cfg, 1, &dir).unwrap();
        assert_eq!(files, vec!["target.wav".to_string()]);
        let back = crate::wav::wav_read(&dir.join("target.wav")).unwrap();
        assert_eq!(back.sample_rate, 48_000);
        assert_eq!(back.samples.len(), 800);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn phaser_target_sweeps_a_wide_pole_range() {
        let cfg = PhaserFitConfig::default();
        let (nat, mlp) = phaser_target(&cfg, 42);
        let control_rate = cfg.sample_rate / cfg.hop as f64;
        let s = crate::phaser::damped_osc(nat.f0_hz, nat.sigma, nat.phi, 200, control_rate);
        let p: Vec<f64> = s.iter().map(|&v| mlp.eval(v)).collect();
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        let min = p.iter().cloned().fold(f64::MAX, f64::min);
        assert!(p.iter().all(|v| v.abs() < 1.0));
        assert!(max - min > 0.4, "sweep range [{min}, {max}] too narrow");
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        let cfg = CompressorFitConfig { preset: "FF-Z".into(), ..Default::default() };
        assert!(matches!(
            fit_compressor(&cfg, 0, None).unwrap_err(),
            HarnessError::Config(_)
        ));
    }
}
