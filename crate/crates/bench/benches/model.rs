use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statetrack_core::corpus::synth_corpus;
use statetrack_core::pipeline::{teacher_forced_step, Mode};
use statetrack_core::tensor::{bilstm_encode, Adam, AdamConfig, BiLstmLayer, LstmWeights};
use statetrack_core::{predict_process, Model, ModelConfig, ProcessInstance, Tape, Var};

fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (values(&mut rng, 64 * 128), values(&mut rng, 128 * 256));
    c.bench_function("matmul 64x128x256 forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let x = tape.variable(64, 128, a.clone()).unwrap();
            let w = tape.variable(128, 256, b.clone()).unwrap();
            let y = tape.sum(tape.matmul(x, w).unwrap());
            black_box(tape.backward(y).unwrap());
        })
    });
}

fn lstm_layer(tape: &Tape, rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmWeights {
    let mut v = |r: usize, c: usize| -> Var { tape.variable(r, c, values(rng, r * c)).unwrap() };
    LstmWeights {
        w_x: v(input, 4 * hidden),
        w_h: v(hidden, 4 * hidden),
        b: v(1, 4 * hidden),
        hidden,
    }
}

fn bilstm(c: &mut Criterion) {
    // a 60-token prefix through the reference-size two-layer encoder
    let (len, input, hidden) = (60, 52, 64);
    c.bench_function("bilstm 2 layers, 60 tokens, forward+backward", |bench| {
        bench.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let tape = Tape::new();
            let inputs: Vec<Var> = (0..len)
                .map(|_| tape.constant(1, input, values(&mut rng, input)).unwrap())
                .collect();
            let layers = [
                BiLstmLayer {
                    fwd: lstm_layer(&tape, &mut rng, input, hidden),
                    bwd: lstm_layer(&tape, &mut rng, input, hidden),
                },
                BiLstmLayer {
                    fwd: lstm_layer(&tape, &mut rng, 2 * hidden, hidden),
                    bwd: lstm_layer(&tape, &mut rng, 2 * hidden, hidden),
                },
            ];
            let out = bilstm_encode(&tape, &inputs, &layers, None).unwrap();
            let loss = tape.sum(tape.concat_rows(&out).unwrap());
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn model_steps(c: &mut Criterion) {
    let corpus = synth_corpus(1, 8);
    let model = Model::for_corpus(ModelConfig::default(), &corpus, 1).unwrap();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("teacher_forced_step, batch of 8", |bench| {
        let batch: Vec<&ProcessInstance> = corpus.iter().collect();
        let seeds: Vec<u64> = (0..8).collect();
        bench.iter_batched(
            || (model.clone(), Adam::new(AdamConfig::default())),
            |(mut m, mut adam)| black_box(teacher_forced_step(&mut m, &mut adam, &batch, &seeds).unwrap()),
            criterion::BatchSize::LargeInput,
        )
    });
    group.bench_function("predict_process", |bench| {
        bench.iter(|| black_box(predict_process(&model, &corpus[0]).unwrap()))
    });
    group.bench_function("run_process, free-running", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            black_box(statetrack_core::pipeline::run_process(&model.forward(&tape), &corpus[0], Mode::Free).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, bilstm, model_steps);
criterion_main!(benches);
