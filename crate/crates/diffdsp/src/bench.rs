//! Wall-clock benchmarks of one optimisation step (forward + backward) for
//! the recursive and frequency-sampling filter paths, reported as the median
//! over repeats. These back the CLI's `bench` task; fine-grained kernel
//! timings live in the criterion benchmark crate.

use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compressor::{build_compressor, compressor_forward, RawCompressorParams, SmootherKind};
use crate::config::BenchConfig;
use crate::error::HarnessError;
use crate::experiment::{compressor_program, compressor_training_init, RunMeta};
use crate::loss::{default_stft_specs, mae_pre_emphasis_node, mss_node_with, MssTarget};
use crate::synth::{
    build_synth_with, synth_render, NoteInput, NoteSignals, SynthFilterKind, SynthModel,
};
use crate::tape::Tape;

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioTiming {
    pub scenario: String,
    pub repeats: usize,
    pub threads: usize,
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub meta: RunMeta,
    pub scenarios: Vec<ScenarioTiming>,
    /// How many times slower the frequency-sampling step is (> 1 means the
    /// recursive path wins).
    pub compressor_fs_over_td: Option<f64>,
    pub synth_fs_over_td: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `step` `repeats` times after one untimed warmup.
fn time_step(
    scenario: &str,
    repeats: usize,
    threads: usize,
    mut step: impl FnMut(),
) -> ScenarioTiming {
    step();
    let times_ms: Vec<f64> = (0..repeats)
        .map(|_| {
            let t0 = Instant::now();
            step();
            t0.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    ScenarioTiming {
        scenario: scenario.to_string(),
        repeats,
        threads,
        median_ms: median(times_ms.clone()),
        times_ms,
    }
}

/// One compressor training step on `seconds` of program material.
pub fn bench_compressor_step(
    kind: SmootherKind,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<ScenarioTiming, HarnessError> {
    let x = compressor_program(cfg.compressor_seconds, cfg.compressor_sample_rate, seed)?;
    let raw = RawCompressorParams::from_params(&compressor_training_init());
    let target = compressor_forward(&x, &crate::compressor::FfPreset::A.params())?;
    let name = match kind {
        SmootherKind::TimeDomain => "compressor-td",
        SmootherKind::FrequencySampling => "compressor-fs",
    };
    Ok(time_step(name, cfg.repeats, 1, || {
        let mut tape = Tape::new();
        let graph = build_compressor(&mut tape, &x, &raw, kind).expect("bench graph builds");
        let loss = mae_pre_emphasis_node(&mut tape, graph.output, &target)
            .expect("bench loss builds");
        let grads = tape.backward(loss).expect("bench backward runs");
        let g: Vec<f64> =
            graph.param_nodes().iter().map(|&id| grads.scalar(id)).collect();
        black_box(g);
    }))
}

/// One synth training step over a batch of notes. The recursive path runs at
/// the configured time-domain hop; the frequency-sampling path runs at the
/// hop implied by its window (a quarter window).
pub fn bench_synth_step(
    kind: SynthFilterKind,
    cfg: &BenchConfig,
    seed: u64,
    threads: usize,
) -> Result<ScenarioTiming, HarnessError> {
    let n = cfg.synth_samples;
    let rate = cfg.synth_sample_rate;
    let hop = match kind {
        SynthFilterKind::TimeDomain => cfg.synth_hop,
        SynthFilterKind::FrequencySampling => (cfg.synth_fs_window / 4).max(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let notes: Vec<NoteInput> = (0..cfg.synth_batch)
        .map(|i| NoteInput {
            f0_hz: 110.0 * 2f64.powf(i as f64 / 3.0),
            phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
            note_on: (n * 3) / 4,
        })
        .collect();
    let model = SynthModel::init_lowpass(n, hop);
    let target_model = crate::experiment::synth_target_model(&crate::config::SynthFitConfig {
        samples: n,
        hop,
        sample_rate: rate,
        ..Default::default()
    });
    let specs = default_stft_specs();
    let prepared: Vec<(NoteSignals, Arc<MssTarget>)> = notes
        .iter()
        .map(|note| {
            let t = synth_render(&target_model, note, n, rate, hop)?;
            Ok((NoteSignals::new(note, n, rate), Arc::new(MssTarget::new(&t, &specs)?)))
        })
        .collect::<Result<_, HarnessError>>()?;

    let name = match kind {
        SynthFilterKind::TimeDomain => format!("synth-td-hop{hop}"),
        SynthFilterKind::FrequencySampling => format!("synth-fs{}", cfg.synth_fs_window),
    };
    let per_note = |(signals, target): &(NoteSignals, Arc<MssTarget>)| -> Vec<f64> {
        let mut tape = Tape::new();
        let graph = build_synth_with(&mut tape, &model, signals, n, rate, kind, hop)
            .expect("bench graph builds");
        let loss =
            mss_node_with(&mut tape, graph.output, target).expect("bench loss builds");
        let grads = tape.backward(loss).expect("bench backward runs");
        graph.flat_grads(&grads)
    };
    let threads = threads.max(1);
    Ok(time_step(&name, cfg.repeats, threads, || {
        if threads <= 1 {
            for p in &prepared {
                black_box(per_note(p));
            }
        } else {
            // Batch-level parallelism only: notes are split across threads.
            std::thread::scope(|scope| {
                let chunk = cfg.synth_batch.div_ceil(threads);
                let jobs: Vec<_> = prepared
                    .chunks(chunk)
                    .map(|ps| {
                        scope.spawn(move || {
                            for p in ps {
                                black_box(per_note(p));
                            }
                        })
                    })
                    .collect();
                for j in jobs {
                    j.join().expect("bench worker");
                }
            });
        }
    }))
}

/// Runs the configured scenarios and assembles the report.
pub fn run_bench(cfg: &BenchConfig, seed: u64, threads: usize) -> Result<BenchReport, HarnessError> {
    let mut scenarios = Vec::new();
    let want = cfg.scenario.as_str();
    if !matches!(want, "all" | "compressor" | "synth") {
        return Err(HarnessError::Config(format!(
            "unknown scenario {want:?}; expected compressor, synth or all"
        )));
    }
    let mut comp = (None, None);
    let mut synth = (None, None);
    if want == "all" || want == "compressor" {
        let td = bench_compressor_step(SmootherKind::TimeDomain, cfg, seed)?;
        let fs = bench_compressor_step(SmootherKind::FrequencySampling, cfg, seed)?;
        comp = (Some(td.median_ms), Some(fs.median_ms));
        scenarios.push(td);
        scenarios.push(fs);
    }
    if want == "all" || want == "synth" {
        let td = bench_synth_step(SynthFilterKind::TimeDomain, cfg, seed, threads)?;
        let fs = bench_synth_step(SynthFilterKind::FrequencySampling, cfg, seed, threads)?;
        synth = (Some(td.median_ms), Some(fs.median_ms));
        scenarios.push(td);
        scenarios.push(fs);
    }
    Ok(BenchReport {
        meta: RunMeta::new("bench", seed, cfg),
        scenarios,
        compressor_fs_over_td: match comp {
            (Some(td), Some(fs)) => Some(fs / td),
            _ => None,
        },
        synth_fs_over_td: match synth {
            (Some(td), Some(fs)) => Some(fs / td),
            _ => None,
        },
    })
}
