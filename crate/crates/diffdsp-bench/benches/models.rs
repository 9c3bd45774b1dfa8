//! Whole-model benchmarks: one training step (graph build, forward, loss,
//! backward, parameter gradients) for each trainable model, in both
//! time-domain and frequency-sampling forms where both exist.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use diffdsp::compressor::{
    build_compressor, compressor_forward, FfPreset, RawCompressorParams, SmootherKind,
};
use diffdsp::experiment::{compressor_program, phaser_program};
use diffdsp::loss::{mae_pre_emphasis_node, mss_node, StftSpec};
use diffdsp::phaser::{build_phaser, PhaserModel};
use diffdsp::synth::{build_synth, NoteInput, SynthFilterKind, SynthModel};
use diffdsp::Tape;

/// One-second program at 44.1 kHz: long enough that the recursion dominates,
/// short enough for criterion's test mode.
fn compressor_step(c: &mut Criterion) {
    let rate = 44_100.0;
    let x = compressor_program(1.0, rate, 7).unwrap();
    let target = compressor_forward(&x, &FfPreset::A.params()).unwrap();
    let raw = RawCompressorParams::from_params(&FfPreset::B.params());
    let mut group = c.benchmark_group("compressor-step");
    group.sample_size(20);
    for (name, kind) in [
        ("time-domain", SmootherKind::TimeDomain),
        ("frequency-sampling", SmootherKind::FrequencySampling),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let graph = build_compressor(&mut tape, black_box(&x), &raw, kind).unwrap();
                let loss = mae_pre_emphasis_node(&mut tape, graph.output, &target).unwrap();
                let grads = tape.backward(loss).unwrap();
                let g: Vec<f64> =
                    graph.param_nodes().iter().map(|&id| grads.scalar(id)).collect();
                black_box(g)
            })
        });
    }
    group.finish();
}

fn phaser_step(c: &mut Criterion) {
    let rate = 44_100.0;
    let x = phaser_program(0.5, rate, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = PhaserModel::init(&mut rng);
    let target = diffdsp::phaser::phaser_render(&x, &model, 441, rate).unwrap();
    let mut group = c.benchmark_group("phaser-step");
    group.sample_size(20);
    group.bench_function("time-domain", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let graph = build_phaser(&mut tape, black_box(&x), &model, 441, rate).unwrap();
            let loss = diffdsp::loss::esr_node(&mut tape, graph.output, &target).unwrap();
            let grads = tape.backward(loss).unwrap();
            black_box(graph.flat_grads(&grads))
        })
    });
    group.finish();
}

fn synth_step(c: &mut Criterion) {
    let rate = 48_000.0;
    let n = 6000;
    let note = NoteInput { f0_hz: 220.0, phase: 0.1, note_on: n * 4 / 5 };
    let specs = [
        StftSpec { n_fft: 512, hop: 128 },
        StftSpec { n_fft: 1024, hop: 256 },
        StftSpec { n_fft: 2048, hop: 512 },
    ];
    let target_model = SynthModel::init_lowpass(n, 32);
    let target =
        diffdsp::synth::synth_render(&target_model, &note, n, rate, 32).unwrap();
    let mut group = c.benchmark_group("synth-step");
    group.sample_size(20);
    for (name, filter, hop) in [
        ("time-domain-hop32", SynthFilterKind::TimeDomain, 32usize),
        ("frequency-sampling-512", SynthFilterKind::FrequencySampling, 128),
    ] {
        let model = SynthModel::init_lowpass(n, hop);
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let graph =
                    build_synth(&mut tape, &model, &note, n, rate, filter, hop).unwrap();
                let loss = mss_node(&mut tape, graph.output, &target, &specs).unwrap();
                let grads = tape.backward(loss).unwrap();
                black_box(graph.flat_grads(&grads))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, compressor_step, phaser_step, synth_step);
criterion_main!(benches);
