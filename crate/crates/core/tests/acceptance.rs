//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use e2e_st::ctc::{ctc_brute_force, ctc_loss, ctc_loss_var, min_frames};
use e2e_st::data::{ExamplePair, FeatureSequence};
use e2e_st::decode_eval::{beam_decode, greedy_decode, score_lines, Direction, SearchOptions, Source};
use e2e_st::experiment::{cmd_train, median, DataConfig, ExperimentConfig, Splits};
use e2e_st::layers::{
    additive_attention, blstm, dropout, embed, init_params, lstm_step, max_pool_time, smoothed_target, Attention,
    Blstm, Embedding, Lstm, OutputLayer,
};
use e2e_st::models::{build, AdapterPosition, ForwardOptions, Mode, ModelConfig, ModelGraph, Network, Topology};
use e2e_st::numerics::{grad_check, ParamStore, Tape, Tensor, Var};
use e2e_st::transplant::{
    apply_transplant, finetune, insert_adapter, Checkpoint, Discard, FinetuneOutcome, Graft, TrainSchedule,
    TransplantScheme,
};
use e2e_st::{Error, Result};

const THRESHOLD: f64 = 0.9;
const SEEDS: [u64; 3] = [1, 2, 3];
const EPOCHS: usize = 30;
const PRETRAIN_EPOCHS: usize = 15;

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{id} {verdict}: {detail}").unwrap();
    out.flush().unwrap();
}

fn check(id: &str, pass: bool, detail: String) {
    report(id, pass, &detail);
    assert!(pass, "{id} failed: {detail}");
}

// ---------------------------------------------------------------- A1

fn random_probs(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        data.extend(logits.iter().map(|l| l.exp() / z));
    }
    Tensor::matrix(frames, classes, data).unwrap()
}

#[test]
fn a1_ctc_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 500 {
        let frames = rng.random_range(1..=6);
        let labels = rng.random_range(1..=4);
        let len = rng.random_range(1..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(0..labels)).collect();
        if min_frames(&target) > frames {
            continue;
        }
        let probs = random_probs(&mut rng, frames, labels + 1);
        let logs = Tensor::matrix(frames, labels + 1, probs.data().iter().map(|p| p.ln()).collect()).unwrap();
        let dp = ctc_loss(&logs, &target).unwrap();
        let oracle = -ctc_brute_force(&probs, &target).unwrap().ln();
        worst = worst.max((dp - oracle).abs());
        done += 1;
    }
    let elapsed = start.elapsed();
    check(
        "A1",
        worst <= 1e-9 && elapsed < Duration::from_secs(30),
        format!("500 instances, max |dp - brute force| = {worst:.2e}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------- A2

fn seeded_store(seed: u64, inputs: &[(&str, Vec<usize>)], specs: &[e2e_st::layers::ParamSpec]) -> ParamStore {
    let mut store = ParamStore::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, shape) in inputs {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        store.insert(*name, Tensor::new(shape.clone(), data).unwrap()).unwrap();
    }
    init_params(&mut store, specs).unwrap();
    store
}

type LossFn = Box<dyn for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>>;

fn p<'t>(t: &'t Tape, s: &ParamStore, name: &str) -> Result<Var<'t>> {
    t.param(s, name)
}

fn op_cases() -> Vec<(&'static str, LossFn)> {
    vec![
        ("add", Box::new(|t, s| Ok(p(t, s, "a")?.add(p(t, s, "b")?)?.tanh().sum()))),
        ("sub", Box::new(|t, s| Ok(p(t, s, "a")?.sub(p(t, s, "b")?)?.sigmoid().sum()))),
        ("mul", Box::new(|t, s| Ok(p(t, s, "a")?.mul(p(t, s, "b")?)?.sum()))),
        ("max", Box::new(|t, s| Ok(p(t, s, "a")?.max(p(t, s, "b")?)?.tanh().sum()))),
        ("scale", Box::new(|t, s| Ok(p(t, s, "a")?.scale(-1.7).sigmoid().sum()))),
        ("softmax", Box::new(|t, s| p(t, s, "a")?.softmax().dot(p(t, s, "b")?))),
        ("log_softmax", Box::new(|t, s| p(t, s, "a")?.log_softmax().dot(p(t, s, "b")?))),
        ("log_softmax_rows", Box::new(|t, s| Ok(p(t, s, "m")?.log_softmax_rows().mul(p(t, s, "m2")?)?.sum()))),
        ("dot", Box::new(|t, s| Ok(p(t, s, "a")?.dot(p(t, s, "b")?)?.tanh()))),
        ("pick", Box::new(|t, s| p(t, s, "a")?.tanh().pick(2))),
        ("slice", Box::new(|t, s| p(t, s, "a")?.slice(1, 2)?.dot(p(t, s, "b")?.slice(0, 2)?))),
        ("row", Box::new(|t, s| Ok(p(t, s, "m")?.row(1)?.tanh().sum()))),
        ("add_row", Box::new(|t, s| Ok(p(t, s, "m")?.add_row(p(t, s, "a")?)?.tanh().sum()))),
        ("matvec_t", Box::new(|t, s| Ok(p(t, s, "m")?.matvec_t(p(t, s, "c")?)?.tanh().sum()))),
        ("masked", Box::new(|t, s| Ok(p(t, s, "a")?.masked(vec![1.0, 0.0, 1.0, 1.0])?.tanh().sum()))),
        ("smoothed_nll", Box::new(|t, s| p(t, s, "a")?.log_softmax().smoothed_nll(smoothed_target(4, 1, 0.1)?))),
        ("linear", Box::new(|t, s| Ok(t.linear(p(t, s, "m")?, p(t, s, "a")?, Some(p(t, s, "c")?))?.tanh().sum()))),
        ("matmul_nt", Box::new(|t, s| Ok(t.matmul_nt(p(t, s, "m")?, p(t, s, "m2")?)?.tanh().sum()))),
        ("outer", Box::new(|t, s| Ok(t.outer(p(t, s, "a")?, p(t, s, "c")?)?.sigmoid().sum()))),
        ("concat", Box::new(|t, s| Ok(t.concat(&[p(t, s, "a")?, p(t, s, "c")?])?.tanh().sum()))),
        ("stack", Box::new(|t, s| Ok(t.stack(&[p(t, s, "a")?, p(t, s, "b")?])?.log_softmax_rows().sum()))),
    ]
}

fn layer_cases() -> Vec<(&'static str, Vec<e2e_st::layers::ParamSpec>, LossFn)> {
    let lstm = Lstm::new("lstm", 4, 3);
    let bl = Blstm::new("blstm", 4, 2);
    let att = Attention::new("att", 3, 4, 5);
    let emb = Embedding::new("emb", 5, 4);
    let out = OutputLayer::new("out", 4, 5);
    let head = OutputLayer::new("ctc", 4, 4);
    let (l1, l2, l3, l4, l5, l6) = (lstm.clone(), bl.clone(), att.clone(), emb.clone(), out.clone(), head.clone());
    vec![
        (
            "lstm_step",
            lstm.param_specs(),
            Box::new(move |t, s| {
                let v = l1.bind(t, s)?;
                let mut state = v.zero_state();
                for i in 0..3 {
                    state = lstm_step(&v, p(t, s, "m")?.row(i)?, state)?;
                }
                state.0.dot(p(t, s, "c")?)?.add(state.1.sum())
            }),
        ),
        (
            "blstm",
            bl.param_specs(),
            Box::new(move |t, s| {
                let v = l2.bind(t, s)?;
                let xs = (0..3).map(|i| p(t, s, "m")?.row(i)).collect::<Result<Vec<_>>>()?;
                let hs = blstm(&v, &xs)?;
                Ok(t.concat(&hs)?.tanh().sum())
            }),
        ),
        (
            "max_pool_time",
            vec![],
            Box::new(|t, s| {
                let xs = (0..3).map(|i| p(t, s, "m")?.row(i)).collect::<Result<Vec<_>>>()?;
                let pooled = max_pool_time(&xs, 2)?;
                Ok(t.concat(&pooled)?.tanh().sum())
            }),
        ),
        (
            "additive_attention",
            att.param_specs(),
            Box::new(move |t, s| {
                let v = l3.bind(t, s)?;
                let states = (0..3).map(|i| p(t, s, "m")?.row(i)).collect::<Result<Vec<_>>>()?;
                let mem = v.memory(&states)?;
                let s1 = additive_attention(&v, p(t, s, "q")?, &mem, mem.zero_feedback())?;
                let s2 = additive_attention(&v, s1.context.slice(0, 3)?, &mem, s1.feedback)?;
                s2.context.dot(p(t, s, "a")?)
            }),
        ),
        (
            "embed",
            emb.param_specs(),
            Box::new(move |t, s| {
                let table = l4.bind(t, s)?;
                embed(table, 3)?.add(embed(table, 1)?)?.tanh().dot(p(t, s, "a")?)
            }),
        ),
        (
            "output_log_probs",
            out.param_specs(),
            Box::new(move |t, s| {
                let lp = l5.bind(t, s)?.log_probs(&[p(t, s, "a")?.slice(0, 1)?, p(t, s, "c")?])?;
                lp.smoothed_nll(smoothed_target(5, 2, 0.1)?)
            }),
        ),
        (
            "dropout",
            vec![],
            Box::new(|t, s| {
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                Ok(dropout(p(t, s, "a")?, 0.3, true, &mut rng)?.tanh().sum())
            }),
        ),
        (
            "ctc_loss",
            head.param_specs(),
            Box::new(move |t, s| {
                let v = l6.bind(t, s)?;
                let rows = (0..3).map(|i| p(t, s, "m")?.row(i)).collect::<Result<Vec<_>>>()?;
                let frames = rows
                    .iter()
                    .map(|r| v.log_probs(&[*r]))
                    .collect::<Result<Vec<_>>>()?;
                ctc_loss_var(t.stack(&frames)?, &[0, 2])
            }),
        ),
    ]
}

fn inputs() -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("a", vec![4]),
        ("b", vec![4]),
        ("c", vec![3]),
        ("q", vec![3]),
        ("m", vec![3, 4]),
        ("m2", vec![3, 4]),
    ]
}

fn grad_model_config(ctc: bool) -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        src_vocab_size: 8,
        tgt_vocab_size: 8,
        embed_dim: 3,
        enc_hidden: 2,
        enc_layers: 2,
        pools: 1,
        text_enc_layers: 1,
        dec_hidden: 4,
        dec_layers: 1,
        att_dim: 3,
        lambda: 0.5,
        ctc,
        dropout: 0.0,
        label_smoothing: 0.1,
    }
}

fn grad_example(seed: u64) -> ExamplePair {
    let ds = e2e_st::data::generate(&e2e_st::data::GenerationParams {
        seed,
        n_examples: 1,
        vocab_size: 4,
        min_len: 2,
        max_len: 3,
        min_frames_per_token: 4,
        max_frames_per_token: 5,
        noise_sigma: 0.3,
    })
    .unwrap();
    ds.examples[0].clone()
}

#[test]
fn a2_gradient_suite() {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut note = |name: String, err: f64| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name);
        }
        checked += 1;
    };
    for (name, f) in op_cases() {
        let store = seeded_store(5, &inputs(), &[]);
        let r = grad_check(f, &store, 1e-5).unwrap();
        note(format!("op {name}"), r.max_error);
    }
    for (name, specs, f) in layer_cases() {
        let store = seeded_store(6, &inputs(), &specs);
        let r = grad_check(f, &store, 1e-5).unwrap();
        note(format!("layer {name}"), r.max_error);
    }
    let ex = grad_example(3);
    for ctc in [false, true] {
        for topology in Topology::ALL {
            let mut graph = build(&grad_model_config(ctc), topology).unwrap();
            if let Some(pos) = topology.adapter_position() {
                graph = graph.with_adapter(pos).unwrap();
            }
            let store = graph.init_store(11).unwrap();
            let modes: &[Mode] = match topology {
                Topology::Many2one => &[Mode::Speech, Mode::Text],
                _ => &[Mode::default_for(topology)],
            };
            for &mode in modes {
                let r = grad_check(
                    |tape, s| Ok(Network::bind(&graph, tape, s)?.forward(&ex, mode, ForwardOptions::default())?.loss),
                    &store,
                    1e-5,
                )
                .unwrap();
                note(format!("{topology} ctc={ctc} {mode:?}"), r.max_error);
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        "A2",
        worst.0 <= 1e-4 && elapsed < Duration::from_secs(300),
        format!("{checked} gradient checks, max relative error {:.2e} ({}), {elapsed:.2?}", worst.0, worst.1),
    );
}

// ---------------------------------------------------------------- A3-A6

fn trend_model(ctc: bool) -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        enc_hidden: 32,
        enc_layers: 2,
        dec_hidden: 64,
        att_dim: 64,
        dropout: 0.0,
        ctc,
        ..ModelConfig::default()
    }
}

fn trend_data() -> Splits {
    DataConfig::default().load().unwrap()
}

fn schedule(seed: u64, epochs: usize) -> TrainSchedule {
    TrainSchedule {
        epochs,
        learning_rate: 0.0015,
        batch_size: 8,
        seed,
        ..TrainSchedule::default()
    }
}

fn train(graph: &ModelGraph, store: ParamStore, splits: &Splits, seed: u64, epochs: usize) -> (FinetuneOutcome, Duration) {
    let start = Instant::now();
    let out = finetune(graph, store, &splits.train, &splits.dev, &schedule(seed, epochs), &[], &mut Discard).unwrap();
    (out, start.elapsed())
}

struct SeedRuns {
    fresh: FinetuneOutcome,
    fresh_time: Duration,
    ctc: FinetuneOutcome,
    asr_enc: FinetuneOutcome,
    enc_dec: FinetuneOutcome,
    enc_dec_adapter: FinetuneOutcome,
}

fn run_seed(splits: &Splits, seed: u64) -> SeedRuns {
    let direct = build(&trend_model(false), Topology::Direct).unwrap();
    let (fresh, fresh_time) = train(&direct, direct.init_store(seed).unwrap(), splits, seed, EPOCHS);

    let with_ctc = build(&trend_model(true), Topology::Direct).unwrap();
    let (ctc, _) = train(&with_ctc, with_ctc.init_store(seed).unwrap(), splits, seed, EPOCHS);

    let asr_graph = build(&trend_model(false), Topology::Asr).unwrap();
    let (asr, _) = train(&asr_graph, asr_graph.init_store(100 + seed).unwrap(), splits, 100 + seed, PRETRAIN_EPOCHS);
    let mt_graph = build(&trend_model(false), Topology::Mt).unwrap();
    let (mt, _) = train(&mt_graph, mt_graph.init_store(200 + seed).unwrap(), splits, 200 + seed, PRETRAIN_EPOCHS);

    let none = TransplantScheme::default();
    let mut store = direct.init_store(seed).unwrap();
    apply_transplant(&direct, &mut store, &none, &[(Graft::AsrEnc, &asr.best)]).unwrap();
    let (asr_enc, _) = train(&direct, store, splits, seed, EPOCHS);

    let both = [(Graft::AsrEnc, &asr.best), (Graft::MtDec, &mt.best)];
    let mut store = direct.init_store(seed).unwrap();
    apply_transplant(&direct, &mut store, &none, &both).unwrap();
    let (enc_dec, _) = train(&direct, store, splits, seed, EPOCHS);

    let mut store = direct.init_store(seed).unwrap();
    let adapted = insert_adapter(&direct, &mut store, AdapterPosition::EncoderTop).unwrap();
    apply_transplant(&adapted, &mut store, &none, &both).unwrap();
    let (enc_dec_adapter, _) = train(&adapted, store, splits, seed, EPOCHS);

    SeedRuns {
        fresh,
        fresh_time,
        ctc,
        asr_enc,
        enc_dec,
        enc_dec_adapter,
    }
}

fn trend_runs() -> &'static [SeedRuns] {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let splits = trend_data();
        SEEDS.iter().map(|&s| run_seed(&splits, s)).collect()
    })
}

/// Epochs to the threshold; a run that never gets there counts as one past the budget.
fn epochs(out: &FinetuneOutcome) -> f64 {
    out.epochs_to_accuracy(THRESHOLD).map_or(EPOCHS as f64 + 1.0, |e| e as f64)
}

fn final_bleu(out: &FinetuneOutcome) -> f64 {
    out.best_row().dev.bleu
}

fn per_seed(runs: &[SeedRuns], f: impl Fn(&SeedRuns) -> f64) -> Vec<f64> {
    runs.iter().map(f).collect()
}

#[test]
fn a3_direct_model_converges() {
    let runs = trend_runs();
    let first = &runs[0];
    let reached = first.fresh.epochs_to_accuracy(THRESHOLD);
    let best = first.fresh.rows.iter().map(|r| r.dev.accuracy).fold(0.0, f64::max);
    check(
        "A3",
        reached.is_some_and(|e| e <= EPOCHS) && first.fresh_time < Duration::from_secs(600),
        format!(
            "direct model: dev accuracy {THRESHOLD} at epoch {reached:?} (best {best:.3}), {EPOCHS} epochs in {:.1?}",
            first.fresh_time
        ),
    );
}

#[test]
fn a4_ctc_does_not_slow_convergence() {
    let runs = trend_runs();
    let without = per_seed(runs, |r| epochs(&r.fresh));
    let with = per_seed(runs, |r| epochs(&r.ctc));
    let bleu_without = per_seed(runs, |r| final_bleu(&r.fresh));
    let bleu_with = per_seed(runs, |r| final_bleu(&r.ctc));
    let (e0, e1) = (median(&without), median(&with));
    let (b0, b1) = (median(&bleu_without), median(&bleu_with));
    check(
        "A4",
        e1 <= e0 && b1 >= b0 - 1.0,
        format!("median epochs -CTC {e0} / +CTC {e1} (per seed {without:?} / {with:?}), dev BLEU -CTC {b0:.2} / +CTC {b1:.2}"),
    );
}

#[test]
fn a5_pretrained_encoder_converges_faster() {
    let runs = trend_runs();
    let fresh = per_seed(runs, |r| epochs(&r.fresh));
    let grafted = per_seed(runs, |r| epochs(&r.asr_enc));
    let (e0, e1) = (median(&fresh), median(&grafted));
    check(
        "A5",
        e1 < e0,
        format!("median epochs fresh {e0} / ASR encoder {e1} (per seed {fresh:?} / {grafted:?})"),
    );
}

#[test]
fn a6_adapter_helps_transplanted_decoder() {
    let runs = trend_runs();
    let plain = per_seed(runs, |r| final_bleu(&r.enc_dec));
    let adapter = per_seed(runs, |r| final_bleu(&r.enc_dec_adapter));
    let (b0, b1) = (median(&plain), median(&adapter));
    check(
        "A6",
        b1 >= b0,
        format!("median dev BLEU ASR enc. + MT dec. {b0:.2} / with adapter {b1:.2} (per seed {plain:.2?} / {adapter:.2?})"),
    );
}

// ---------------------------------------------------------------- A7

#[test]
fn a7_loss_combination_is_exact() {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..10u64 {
        let ex = grad_example(seed + 40);
        for ctc in [false, true] {
            for topology in Topology::ALL {
                let graph = build(&grad_model_config(ctc), topology).unwrap();
                let store = graph.init_store(seed).unwrap();
                let tape = Tape::new();
                let net = Network::bind(&graph, &tape, &store).unwrap();
                let out = net.forward(&ex, Mode::default_for(topology), ForwardOptions::default()).unwrap();
                let b = out.breakdown;
                let ctc_term = if graph.has_ctc() { b.ctc_loss } else { 0.0 };
                let expected = match topology {
                    Topology::Direct => b.st_loss + ctc_term,
                    Topology::Asr => b.asr_loss + ctc_term,
                    Topology::Mt => b.st_loss,
                    Topology::Many2one => b.st_loss + ctc_term,
                    _ => 0.5 * b.st_loss + 0.5 * (b.asr_loss + ctc_term),
                };
                if matches!(topology, Topology::One2many | Topology::TiedCascade | Topology::TiedTriangle) && !ctc {
                    worst = worst.max((b.combined - (b.st_loss + b.asr_loss) / 2.0).abs());
                }
                worst = worst.max((b.combined - expected).abs());
                worst = worst.max((out.loss.scalar() - b.combined).abs());
                cases += 1;
            }
        }
    }
    check("A7", worst <= 1e-12, format!("{cases} forward passes, max deviation {worst:.2e}"));
}

// ---------------------------------------------------------------- A8

fn random_features(rng: &mut ChaCha8Rng, dim: usize) -> FeatureSequence {
    let frames = rng.random_range(2..=12);
    let data = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureSequence::new(Tensor::matrix(frames, dim, data).unwrap()).unwrap()
}

#[test]
fn a8_metric_golden_values_and_beam_one() {
    let lines = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let corpus = lines(&["a b c d e", "the cat sat", "x"]);
    let same = score_lines(&corpus, &corpus, true).unwrap().bleu;
    let wer = score_lines(&lines(&["a x c"]), &lines(&["a b c"]), true).unwrap().wer;
    let ter = score_lines(&lines(&["b a"]), &lines(&["a b"]), true).unwrap().ter;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut identical = 0;
    for i in 0..100u64 {
        let topology = [Topology::Direct, Topology::One2many, Topology::TiedTriangle][i as usize % 3];
        let graph = build(&grad_model_config(i % 2 == 0), topology).unwrap();
        let store = graph.init_store(i).unwrap();
        let x = random_features(&mut rng, 4);
        let g = greedy_decode(&graph, &store, Direction::St, Source::Speech(&x), None).unwrap();
        let opts = SearchOptions {
            beam: 1,
            ..SearchOptions::default()
        };
        let b = beam_decode(&graph, &store, Direction::St, Source::Speech(&x), &opts).unwrap();
        if b.tokens == g.tokens {
            identical += 1;
        }
    }
    check(
        "A8",
        same == 100.0 && (wer - 33.33).abs() <= 0.01 && ter == 50.0 && identical == 100,
        format!("BLEU(identical) {same}, WER {wer:.2}, TER {ter}, beam 1 = greedy on {identical}/100"),
    );
}

// ---------------------------------------------------------------- A9

#[test]
fn a9_checkpoints_and_transplant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grad_model_config(true);
    let asr_graph = build(&cfg, Topology::Asr).unwrap();
    let source = Checkpoint {
        params: asr_graph.init_store(77).unwrap(),
        graph: asr_graph,
        optimizer: None,
        step: 12,
        dev_history: vec![1.5, 2.25],
    };
    let path = dir.path().join("ckpt-12");
    source.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let round_trip = loaded == source && loaded.to_bytes().unwrap() == std::fs::read(&path).unwrap();

    let target = build(&cfg, Topology::Direct).unwrap();
    let mut store = target.init_store(3).unwrap();
    let report = apply_transplant(&target, &mut store, &TransplantScheme::default(), &[(Graft::AsrEnc, &loaded)])
        .unwrap();
    let bit_identical = !report.grafted.is_empty()
        && report.grafted.iter().all(|n| {
            let (a, b) = (store.get(n).unwrap(), source.params.get(n).unwrap());
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let before = store.clone();
    let wrong = build(&ModelConfig { enc_hidden: 3, ..cfg.clone() }, Topology::Asr).unwrap();
    let mismatched = Checkpoint {
        params: wrong.init_store(1).unwrap(),
        graph: wrong,
        optimizer: None,
        step: 0,
        dev_history: vec![],
    };
    let rejected = matches!(
        apply_transplant(&target, &mut store, &TransplantScheme::default(), &[(Graft::AsrEnc, &mismatched)]),
        Err(Error::Transplant(_))
    );
    let unchanged = store == before;
    check(
        "A9",
        round_trip && bit_identical && rejected && unchanged,
        format!(
            "round trip {round_trip}, {} grafted tensors bit-identical {bit_identical}, mismatch rejected {rejected}, store unchanged {unchanged}",
            report.grafted.len()
        ),
    );
}

// ---------------------------------------------------------------- A10

#[test]
fn a10_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig {
        embed_dim: 8,
        enc_hidden: 8,
        enc_layers: 2,
        dec_hidden: 16,
        att_dim: 8,
        dropout: 0.2,
        ctc: true,
        ..ModelConfig::default()
    };
    cfg.data.train = 60;
    cfg.data.dev = 10;
    cfg.data.test = 10;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg.train.test_beam = 2;
    let mut files = Vec::new();
    for run in ["first", "second"] {
        cfg.out_dir = dir.path().join(run);
        let records = cmd_train(&cfg).unwrap();
        files.push(std::fs::read(records[0].dir.join("metrics.jsonl")).unwrap());
    }
    let rows = String::from_utf8_lossy(&files[0]).lines().count();
    check(
        "A10",
        files[0] == files[1] && rows == 4,
        format!("two runs, {rows} metric rows each, identical bytes {}", files[0] == files[1]),
    );
}
