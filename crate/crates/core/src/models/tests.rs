use super::*;
use crate::data::{generate, Dataset, GenerationParams};
use crate::numerics::{grad_check, Gradients, ParamStore, Tape, Tensor};

fn tiny_config(ctc: bool) -> ModelConfig {
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

fn tiny_data(n: usize, seed: u64) -> Dataset {
    generate(&GenerationParams {
        seed,
        n_examples: n,
        vocab_size: 4,
        min_len: 2,
        max_len: 3,
        min_frames_per_token: 2,
        max_frames_per_token: 3,
        noise_sigma: 0.3,
    })
    .unwrap()
}

fn zero_store(graph: &ModelGraph) -> ParamStore {
    let mut s = ParamStore::new(0);
    for spec in graph.param_specs() {
        s.insert(spec.name, Tensor::zeros(&spec.shape)).unwrap();
    }
    s
}

fn loss_of(graph: &ModelGraph, store: &ParamStore, ex: &crate::data::ExamplePair, mode: Mode) -> LossBreakdown {
    evaluate_example(graph, store, ex, mode).unwrap().breakdown
}

#[test]
fn zero_parameters_give_uniform_loss() {
    let ds = tiny_data(3, 1);
    for eps in [0.0, 0.1, 0.3] {
        let cfg = ModelConfig { label_smoothing: eps, ..tiny_config(false) };
        let g = build(&cfg, Topology::Direct).unwrap();
        let store = zero_store(&g);
        for ex in &ds.examples {
            let l = loss_of(&g, &store, ex, Mode::Speech);
            let steps = (ex.e.len() + 1) as f64;
            let v = (cfg.tgt_vocab_size - 1) as f64;
            assert!((l.st_loss - steps * v.ln()).abs() < 1e-12);
            assert_eq!(l.combined, l.st_loss);
        }
    }
}

#[test]
fn combined_losses_follow_their_formulas() {
    let ds = tiny_data(4, 2);
    for ctc in [false, true] {
        for lambda in [0.0, 0.3, 0.5, 1.0] {
            let cfg = ModelConfig { lambda, ..tiny_config(ctc) };
            for t in Topology::ALL {
                let g = build(&cfg, t).unwrap();
                let store = g.init_store(5).unwrap();
                for ex in &ds.examples {
                    let l = loss_of(&g, &store, ex, Mode::default_for(t));
                    let c = if g.has_ctc() { l.ctc_loss } else { 0.0 };
                    let expected = match t {
                        Topology::Direct => l.st_loss + c,
                        Topology::Asr => l.asr_loss + c,
                        Topology::Mt => l.st_loss,
                        Topology::Many2one => l.st_loss + c,
                        _ => lambda * l.st_loss + (1.0 - lambda) * (l.asr_loss + c),
                    };
                    assert!((l.combined - expected).abs() <= 1e-12, "{t} ctc={ctc} λ={lambda}");
                    if !g.has_ctc() {
                        assert_eq!(l.ctc_loss, 0.0);
                    } else {
                        assert!(l.ctc_loss > 0.0);
                    }
                }
            }
        }
    }
    // λ = 0.5 is the plain mean of the two task losses
    let g = build(&tiny_config(false), Topology::One2many).unwrap();
    let store = g.init_store(9).unwrap();
    let l = loss_of(&g, &store, &ds.examples[0], Mode::Speech);
    assert!((l.combined - (l.st_loss + l.asr_loss) / 2.0).abs() <= 1e-12);
}

#[test]
fn every_topology_passes_grad_check() {
    let ds = tiny_data(2, 3);
    let ex = &ds.examples[0];
    for ctc in [false, true] {
        for t in Topology::ALL {
            let mut g = build(&tiny_config(ctc), t).unwrap();
            if let Some(pos) = t.adapter_position() {
                g = g.with_adapter(pos).unwrap();
            }
            let store = g.init_store(11).unwrap();
            let modes: &[Mode] = match t {
                Topology::Many2one => &[Mode::Speech, Mode::Text],
                _ => &[Mode::default_for(t)],
            };
            for &mode in modes {
                let report = grad_check(
                    |tape, s| Ok(Network::bind(&g, tape, s)?.forward(ex, mode, ForwardOptions::default())?.loss),
                    &store,
                    1e-5,
                )
                .unwrap();
                assert!(
                    report.passes(1e-4),
                    "{t} ctc={ctc} {mode:?}: {} at {:?}",
                    report.max_error,
                    report.worst_param
                );
            }
        }
    }
}

#[test]
fn one2many_with_lambda_one_matches_direct() {
    let ds = tiny_data(3, 4);
    let cfg = ModelConfig { lambda: 1.0, dropout: 0.3, ..tiny_config(false) };
    let direct = build(&cfg, Topology::Direct).unwrap();
    let o2m = build(&cfg, Topology::One2many).unwrap();
    let sd = direct.init_store(1).unwrap();
    let so = o2m.init_store(1).unwrap();
    for (name, t) in sd.iter() {
        assert_eq!(so.get(name).unwrap(), t, "{name}");
    }
    for (i, ex) in ds.examples.iter().enumerate() {
        let opts = ForwardOptions { dropout_seed: Some(100 + i as u64) };
        let mut gd = Gradients::zeros_like(&sd);
        let mut go = Gradients::zeros_like(&so);
        let rd = accumulate_example(&direct, &sd, ex, Mode::Speech, opts, 1.0, &mut gd).unwrap();
        let ro = accumulate_example(&o2m, &so, ex, Mode::Speech, opts, 1.0, &mut go).unwrap();
        assert_eq!(rd.breakdown.combined.to_bits(), ro.breakdown.combined.to_bits());
        for (name, g) in gd.iter() {
            assert_eq!(go.get(name).unwrap(), g, "{name}");
        }
        for (name, g) in go.iter().filter(|(n, _)| n.starts_with("decoder_asr.")) {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn many2one_modes_share_the_decoder() {
    let ds = tiny_data(2, 5);
    let ex = &ds.examples[0];
    let cfg = tiny_config(true);
    let m2o = build(&cfg, Topology::Many2one).unwrap();
    let store = m2o.init_store(2).unwrap();
    let direct = build(&cfg, Topology::Direct).unwrap();
    let mut dstore = ParamStore::new(2);
    for spec in direct.param_specs() {
        dstore.insert(spec.name.clone(), store.get(&spec.name).unwrap().clone()).unwrap();
    }
    let a = loss_of(&m2o, &store, ex, Mode::Speech);
    let b = loss_of(&direct, &dstore, ex, Mode::Speech);
    assert!((a.combined - b.combined).abs() <= 1e-12);

    let mut speech = Gradients::zeros_like(&store);
    let mut text = Gradients::zeros_like(&store);
    accumulate_example(&m2o, &store, ex, Mode::Speech, ForwardOptions::default(), 1.0, &mut speech).unwrap();
    accumulate_example(&m2o, &store, ex, Mode::Text, ForwardOptions::default(), 1.0, &mut text).unwrap();
    let dec = |g: &Gradients| -> Vec<String> {
        g.nonzero_names().into_iter().filter(|n| n.starts_with("decoder_st.")).map(String::from).collect()
    };
    assert!(!dec(&speech).is_empty());
    assert_eq!(dec(&speech), dec(&text));
    assert!(text.nonzero_names().iter().all(|n| !n.starts_with("encoder.")));
    assert!(speech.nonzero_names().iter().all(|n| !n.starts_with("text_encoder.")));
}

#[test]
fn tied_cascade_attends_only_to_first_decoder() {
    let ds = tiny_data(3, 6);
    let g = build(&tiny_config(false), Topology::TiedCascade).unwrap();
    let store = g.init_store(4).unwrap();
    for ex in &ds.examples {
        let tape = Tape::new();
        let net = Network::bind(&g, &tape, &store).unwrap();
        let out = net.forward(ex, Mode::Speech, ForwardOptions::default()).unwrap();
        let n = out.intermediate_len.unwrap();
        assert!(n >= 1 && n <= intermediate_max_len(ex.f.len()));

        // replay the second decoder to look at its attention support
        let mut off = Dropout::off();
        let enc = net.encode_speech(&ex.x, &mut off).unwrap();
        let dasr = net.asr_decoder().unwrap();
        let (tokens, states) = dasr.greedy(&dasr.memory(&enc, None).unwrap(), intermediate_max_len(ex.f.len()), &mut off).unwrap();
        assert_eq!(tokens.len(), n);
        let dst = net.st_decoder().unwrap();
        let mem = dst.memory(&states, None).unwrap();
        assert_eq!(mem.primary.len, n);
        assert!(mem.secondary.is_none());
        let pred = dst.predict(&mem, &dst.start(&mem), &mut off).unwrap();
        assert_eq!(pred.weights.len(), n);
    }
    // encoder gradients reach the second decoder's loss only through the first decoder
    let layout = g.st_decoder().unwrap();
    assert_eq!(layout.key_dim, g.config.dec_hidden);
    assert!(layout.key2_dim.is_none());
}

#[test]
fn tied_triangle_has_two_normalized_attentions() {
    let ds = tiny_data(2, 7);
    let ex = &ds.examples[0];
    let g = build(&tiny_config(false), Topology::TiedTriangle).unwrap();
    let store = g.init_store(8).unwrap();
    let layout = g.st_decoder().unwrap();
    assert_eq!(layout.context_dim(), g.config.enc_output_dim() + g.config.dec_hidden);
    let tape = Tape::new();
    let net = Network::bind(&g, &tape, &store).unwrap();
    let mut off = Dropout::off();
    let enc = net.encode_speech(&ex.x, &mut off).unwrap();
    let dasr = net.asr_decoder().unwrap();
    let (_, states) = dasr.greedy(&dasr.memory(&enc, None).unwrap(), 4, &mut off).unwrap();
    let dst = net.st_decoder().unwrap();
    let mem = dst.memory(&enc, Some(&states)).unwrap();
    let mut state = dst.start(&mem);
    for &y in &ex.e.ids {
        let pred = dst.predict(&mem, &state, &mut off).unwrap();
        let s1: f64 = pred.weights.to_vec().iter().sum();
        let s2: f64 = pred.weights2.unwrap().to_vec().iter().sum();
        assert!((s1 - 1.0).abs() < 1e-12 && (s2 - 1.0).abs() < 1e-12);
        assert_eq!(pred.weights.len(), enc.len());
        assert_eq!(pred.weights2.unwrap().len(), states.len());
        state = dst.advance(&state, &pred, y).unwrap();
    }
}

#[test]
fn adapter_feeds_the_attention_keys() {
    let ds = tiny_data(2, 8);
    let ex = &ds.examples[0];
    let base = build(&tiny_config(false), Topology::Direct).unwrap();
    let with = base.with_adapter(AdapterPosition::EncoderTop).unwrap();
    let mut store = with.init_store(3).unwrap();
    let before = loss_of(&with, &store, ex, Mode::Speech).combined;
    let w = store.get("adapter.fw.w_ih").unwrap().clone();
    let mut bumped = w.clone();
    bumped.data_mut()[0] += 0.5;
    store.set("adapter.fw.w_ih", bumped).unwrap();
    assert_ne!(loss_of(&with, &store, ex, Mode::Speech).combined, before);
    // same keys dimension, so non-adapter parameters are shared unchanged
    let fresh = base.init_store(3).unwrap();
    for (name, t) in fresh.iter() {
        assert_eq!(store.get(name).unwrap().shape(), t.shape());
    }
}

#[test]
fn growth_preserves_existing_layers() {
    let cfg = ModelConfig { enc_layers: 3, ..tiny_config(true) };
    let g2 = build(&cfg, Topology::Direct).unwrap().with_depth(2).unwrap();
    let mut store = g2.init_store(6).unwrap();
    let before = store.clone();
    let g3 = g2.grow_encoder(3).unwrap();
    let added = g3.init_missing(&mut store).unwrap();
    assert!(!added.is_empty() && added.iter().all(|n| n.starts_with("encoder.blstm2.")));
    for (name, t) in before.iter() {
        assert_eq!(store.get(name).unwrap(), t);
    }
    g3.check_store(&store).unwrap();
    let ds = tiny_data(1, 9);
    assert!(evaluate_example(&g3, &store, &ds.examples[0], Mode::Speech).is_ok());
}

#[test]
fn mode_mismatch_is_rejected() {
    let ds = tiny_data(1, 10);
    let g = build(&tiny_config(false), Topology::Direct).unwrap();
    let store = g.init_store(1).unwrap();
    assert!(evaluate_example(&g, &store, &ds.examples[0], Mode::Text).is_err());
    let mt = build(&tiny_config(false), Topology::Mt).unwrap();
    let store = mt.init_store(1).unwrap();
    assert!(evaluate_example(&mt, &store, &ds.examples[0], Mode::Speech).is_err());
}
