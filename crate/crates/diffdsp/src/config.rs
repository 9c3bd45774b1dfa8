//! Experiment configuration: serde-backed JSON configs for each CLI task,
//! with defaults matching the built-in synthetic recipes, plus a stable hash
//! that reports embed so results can be traced to the exact settings.

use serde::{Deserialize, Serialize};

/// Self-identification fit of the phaser against a target it rendered itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhaserFitConfig {
    pub sample_rate: f64,
    /// Pole-trajectory hop in samples (40 ms at 44.1 kHz by default).
    pub hop: usize,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Independently seeded restarts; the best run is reported.
    pub restarts: usize,
    /// Stop a restart early once training ESR falls below this.
    pub early_stop_esr: f64,
    /// Ground-truth LFO settings for the rendered target.
    pub target_f0_hz: f64,
    pub target_sigma: f64,
    pub target_phi: f64,
    pub target_g1: f64,
    pub target_g2: f64,
}

impl Default for PhaserFitConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100.0,
            hop: 1764,
            train_seconds: 4.0,
            test_seconds: 2.0,
            epochs: 1500,
            learning_rate: 5e-4,
            restarts: 5,
            early_stop_esr: 0.004,
            target_f0_hz: 0.6,
            target_sigma: 0.0,
            target_phi: 0.0,
            target_g1: 1.0,
            target_g2: 0.5,
        }
    }
}

/// Self-identification fit of the compressor against a preset rendering.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorFitConfig {
    pub sample_rate: f64,
    pub seconds: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Target preset: "FF-A", "FF-B", or "FF-C".
    pub preset: String,
    /// Use the frequency-sampling smoother (single time constant) instead of
    /// the recursive one.
    pub frequency_sampling: bool,
    /// Stop early once the evaluation ESR falls below this (fraction, not %).
    pub early_stop_esr: Option<f64>,
    /// Stop early when the training loss improves by less than this relative
    /// amount over the last `plateau_window` epochs.
    pub plateau_rel_tol: Option<f64>,
    pub plateau_window: usize,
}

impl Default for CompressorFitConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100.0,
            seconds: 60.0,
            epochs: 1000,
            learning_rate: 100.0,
            momentum: 0.9,
            preset: "FF-A".into(),
            frequency_sampling: false,
            early_stop_esr: None,
            plateau_rel_tol: None,
            plateau_window: 10,
        }
    }
}

/// Self-identification fit of the synth against hand-written modulation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFitConfig {
    pub sample_rate: f64,
    pub samples: usize,
    /// Modulation hop in samples.
    pub hop: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub note_f0_hz: f64,
    pub note_on: usize,
}

impl Default for SynthFitConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48_000.0,
            samples: 6000,
            hop: crate::synth::MOD_HOP,
            epochs: 600,
            learning_rate: 5e-3,
            weight_decay: 1e-4,
            note_f0_hz: 220.0,
            note_on: 4800,
        }
    }
}

/// Timing comparison of the recursive and frequency-sampling paths.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// "compressor", "synth", or "all".
    pub scenario: String,
    pub repeats: usize,
    pub compressor_seconds: f64,
    pub compressor_sample_rate: f64,
    pub synth_samples: usize,
    pub synth_batch: usize,
    pub synth_sample_rate: f64,
    /// Time-domain modulation hop.
    pub synth_hop: usize,
    /// Frequency-sampling window length; its hop is a quarter window.
    pub synth_fs_window: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenario: "all".into(),
            repeats: 5,
            compressor_seconds: 60.0,
            compressor_sample_rate: 44_100.0,
            synth_samples: 6000,
            synth_batch: 8,
            synth_sample_rate: 48_000.0,
            synth_hop: crate::synth::MOD_HOP,
            synth_fs_window: 512,
        }
    }
}

/// Renders the synthetic program material and targets for a task to WAV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// "phaser", "synth", or "compressor".
    pub model: String,
    pub phaser: PhaserFitConfig,
    pub synth: SynthFitConfig,
    pub compressor: CompressorFitConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            model: "compressor".into(),
            phaser: PhaserFitConfig::default(),
            synth: SynthFitConfig::default(),
            compressor: CompressorFitConfig::default(),
        }
    }
}

/// A task configuration as stored on disk, tagged by task name.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentConfig {
    FitPhaser(PhaserFitConfig),
    FitCompressor(CompressorFitConfig),
    FitSynth(SynthFitConfig),
    Bench(BenchConfig),
    Render(RenderConfig),
}

impl ExperimentConfig {
    pub fn task_name(&self) -> &'static str {
        match self {
            ExperimentConfig::FitPhaser(_) => "fit-phaser",
            ExperimentConfig::FitCompressor(_) => "fit-compressor",
            ExperimentConfig::FitSynth(_) => "fit-synth",
            ExperimentConfig::Bench(_) => "bench",
            ExperimentConfig::Render(_) => "render",
        }
    }
}

/// Stable FNV-1a hash of a config's canonical JSON, hex-encoded. Reports
/// embed this so a result can be matched to its exact settings.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serialises");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
