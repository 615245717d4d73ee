//! Central finite-difference checks for every differentiable building
//! block and for the assembled model. Inputs double as named parameters so
//! the checks cover signal gradients, not just weight gradients. Tests that
//! feed a relu first verify the pre-activations sit away from the kink,
//! otherwise the two-sided difference quotient would be meaningless.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthsep_core::gradcheck::{grad_check, grad_check_sampled, GradCheckConfig, GradCheckReport};
use sthsep_core::{CoreError, Graph, NodeId, ParamStore, TensorF};
use sthsep_graph::{adaptive_adjacency_node, hyperedge_features_node, HyperedgeFfn, PairwiseFfn};
use sthsep_model::config::PatchSpec;
use sthsep_model::spatial::{adaptive_gcn, hypergraph_conv, mixprop, s_block, t_block};
use sthsep_model::temporal::{FfnNames, LayerNames};
use sthsep_model::{
    gated_fusion, transformer_layer, GateBehavior, GateSetting, HgcnNames, MixPropConfig,
    MixPropGate, Model, ModelConfig,
};

fn check_cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn assert_clean(report: &GradCheckReport, label: &str) {
    let cfg = check_cfg();
    assert!(
        report.passes(&cfg),
        "{label}: max rel err {:.3e} over {} coords (worst: {:?})",
        report.max_rel_err,
        report.coords_checked,
        report.worst
    );
}

/// mean(out^2), a smooth scalar readout for any node.
fn squared_readout(g: &mut Graph<'_>, out: NodeId) -> CoreResult2 {
    let sq = g.pow_const(out, 2.0);
    Ok(g.mean_all(sq))
}

type CoreResult2 = Result<NodeId, CoreError>;

#[test]
fn mixprop_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    store
        .insert("x", TensorF::uniform(&[4, 3], -1.0, 1.0, &mut rng))
        .unwrap();
    let a = TensorF::uniform(&[4, 4], 0.0, 0.5, &mut rng);
    let cfg = MixPropConfig { k: 3, alpha: 0.3, gated: false };
    let report = grad_check(&store, &["x"], &check_cfg(), |g| {
        let x = g.param("x")?;
        let a = g.constant(a.clone());
        let out = mixprop(g, x, a, &cfg, &MixPropGate::None)?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "mixprop ungated");
}

#[test]
fn gated_mixprop_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store
        .insert("x", TensorF::uniform(&[4, 3], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("wg", TensorF::uniform(&[3, 3], -0.8, 0.8, &mut rng))
        .unwrap();
    let a = TensorF::uniform(&[4, 4], 0.0, 0.5, &mut rng);
    let cfg = MixPropConfig { k: 2, alpha: 0.5, gated: true };
    let report = grad_check(&store, &["x", "wg"], &check_cfg(), |g| {
        let x = g.param("x")?;
        let a = g.constant(a.clone());
        let out = mixprop(g, x, a, &cfg, &MixPropGate::Weight("wg".into()))?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "mixprop gated");
}

#[test]
fn adaptive_propagation_gradients() {
    let (n, d, f) = (3, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store
        .insert("e1", TensorF::uniform(&[n, d], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("e2", TensorF::uniform(&[n, d], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("pw", TensorF::uniform(&[d, n], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("pb", TensorF::uniform(&[n], -0.5, 0.5, &mut rng))
        .unwrap();
    store
        .insert("x", TensorF::uniform(&[n, f], -1.0, 1.0, &mut rng))
        .unwrap();

    // The adjacency relu must not sit at its kink for any off-diagonal
    // entry, or the difference quotient would straddle it.
    let features = |e: &TensorF| {
        let w = store.value("pw").unwrap();
        let b = store.value("pb").unwrap();
        let mut out = TensorF::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut acc = b.data()[j];
                for k in 0..d {
                    acc += e.get2(i, k) * w.get2(k, j);
                }
                out.set2(i, j, acc.tanh());
            }
        }
        out
    };
    let f1 = features(store.value("e1").unwrap());
    let f2 = features(store.value("e2").unwrap());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut s = 0.0;
            for k in 0..n {
                s += f1.get2(k, i) * f2.get2(k, j) - f2.get2(k, i) * f1.get2(k, j);
            }
            assert!(s.abs() > 2e-3, "pre-relu entry ({i}, {j}) too close to the kink: {s}");
        }
    }

    let ffn = PairwiseFfn {
        weight: "pw".into(),
        bias: "pb".into(),
    };
    let cfg = MixPropConfig { k: 2, alpha: 0.4, gated: false };
    let report = grad_check(&store, &["e1", "e2", "pw", "pb", "x"], &check_cfg(), |g| {
        let x = g.param("x")?;
        let a = adaptive_adjacency_node(g, "e1", "e2", &ffn, 1.0)?;
        let out = adaptive_gcn(g, x, a, None, &cfg, &MixPropGate::None)?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "adaptive propagation");
}

#[test]
fn hyperedge_feature_gradients() {
    let (n, d) = (5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    store
        .insert("e3", TensorF::uniform(&[n, d], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("hw", TensorF::uniform(&[d, d], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("hb", TensorF::uniform(&[d], -0.5, 0.5, &mut rng))
        .unwrap();
    let ffn = HyperedgeFfn {
        weight: "hw".into(),
        bias: "hb".into(),
    };
    let report = grad_check(&store, &["e3", "hw", "hb"], &check_cfg(), |g| {
        let out = hyperedge_features_node(g, "e3", &ffn, 1.5)?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "hyperedge features");
}

#[test]
fn hypergraph_conv_gradients() {
    let (n, f, m) = (4, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    store
        .insert("x", TensorF::uniform(&[n, f], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("ew", TensorF::uniform(&[f, f], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("eb", TensorF::uniform(&[f], -0.5, 0.5, &mut rng))
        .unwrap();
    store
        .insert("w", TensorF::uniform(&[f, f], -1.0, 1.0, &mut rng))
        .unwrap();
    let mut h = TensorF::zeros(&[n, m]);
    for e in 0..m {
        h.set2(e, e, 1.0);
        h.set2(e + 1, e, 1.0);
    }

    // Pre-relu edge features must clear the kink.
    {
        let x = store.value("x").unwrap();
        let ew = store.value("ew").unwrap();
        let eb = store.value("eb").unwrap();
        let w = store.value("w").unwrap();
        let mut xw = TensorF::zeros(&[n, f]);
        for i in 0..n {
            for c in 0..f {
                let mut enc = 0.0;
                for k in 0..f {
                    let mut e_val = eb.data()[k];
                    for l in 0..f {
                        e_val += x.get2(i, l) * ew.get2(l, k);
                    }
                    enc += e_val * w.get2(k, c);
                }
                xw.set2(i, c, enc);
            }
        }
        for e in 0..m {
            for c in 0..f {
                let mut pre = 0.0;
                for i in 0..n {
                    pre += h.get2(i, e) * xw.get2(i, c);
                }
                assert!(pre.abs() > 2e-3, "edge pre-activation ({e}, {c}) near kink: {pre}");
            }
        }
    }

    let names = HgcnNames {
        enc: Some(("ew".into(), "eb".into())),
        weight: "w".into(),
    };
    let report = grad_check(&store, &["x", "ew", "eb", "w"], &check_cfg(), |g| {
        let x = g.param("x")?;
        let h = g.constant(h.clone());
        let out = hypergraph_conv(g, x, h, &names, true)?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "hypergraph conv");
}

#[test]
fn s_block_gradients() {
    let (t, n, c) = (2, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    store
        .insert("h", TensorF::uniform(&[t, n, c], -2.0, 2.0, &mut rng))
        .unwrap();
    store
        .insert("eps", TensorF::new(vec![1], vec![0.1]).unwrap())
        .unwrap();
    let support =
        TensorF::new(vec![n, n], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();

    {
        let h = store.value("h").unwrap();
        for ti in 0..t {
            for i in 0..n {
                for ci in 0..c {
                    let mut pre = 1.1 * h.data()[(ti * n + i) * c + ci];
                    for j in 0..n {
                        pre += support.get2(i, j) * h.data()[(ti * n + j) * c + ci];
                    }
                    assert!(pre.abs() > 2e-3, "pre-activation near kink: {pre}");
                }
            }
        }
    }

    let report = grad_check(&store, &["h", "eps"], &check_cfg(), |g| {
        let h = g.param("h")?;
        let s = g.constant(support.clone());
        let out = s_block(g, h, s, "eps")?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "s-block");
}

#[test]
fn t_block_gradients() {
    let (t, n, c) = (5, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    store
        .insert("chi", TensorF::uniform(&[t, n, c], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("c0.w", TensorF::uniform(&[2, c, c], -0.8, 0.8, &mut rng))
        .unwrap();
    store
        .insert("c0.b", TensorF::uniform(&[c], -0.3, 0.3, &mut rng))
        .unwrap();
    store
        .insert("c1.w", TensorF::uniform(&[2, c, c], -0.8, 0.8, &mut rng))
        .unwrap();
    store
        .insert("c1.b", TensorF::uniform(&[c], -0.3, 0.3, &mut rng))
        .unwrap();
    let convs = vec![
        ("c0.w".to_string(), "c0.b".to_string()),
        ("c1.w".to_string(), "c1.b".to_string()),
    ];
    let report = grad_check(
        &store,
        &["chi", "c0.w", "c0.b", "c1.w", "c1.b"],
        &check_cfg(),
        |g| {
            let chi = g.param("chi")?;
            let out = t_block(g, chi, &convs, &[1, 2])?;
            squared_readout(g, out)
        },
    )
    .unwrap();
    assert_clean(&report, "t-block");
}

#[test]
fn transformer_layer_gradients() {
    let d_m = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    store
        .insert("z", TensorF::uniform(&[5, d_m], -1.0, 1.0, &mut rng))
        .unwrap();
    for name in ["h0.wq", "h0.wk", "h0.wv", "h1.wq", "h1.wk", "h1.wv"] {
        store
            .insert(name, TensorF::uniform(&[d_m, 2], -0.6, 0.6, &mut rng))
            .unwrap();
    }
    store
        .insert("ao.w", TensorF::uniform(&[d_m, d_m], -0.6, 0.6, &mut rng))
        .unwrap();
    store
        .insert("ao.b", TensorF::uniform(&[d_m], -0.3, 0.3, &mut rng))
        .unwrap();
    store
        .insert("ffn.w1", TensorF::uniform(&[d_m, 6], -0.6, 0.6, &mut rng))
        .unwrap();
    store
        .insert("ffn.b1", TensorF::uniform(&[6], -0.3, 0.3, &mut rng))
        .unwrap();
    store
        .insert("ffn.w2", TensorF::uniform(&[6, d_m], -0.6, 0.6, &mut rng))
        .unwrap();
    store
        .insert("ffn.b2", TensorF::uniform(&[d_m], -0.3, 0.3, &mut rng))
        .unwrap();
    let names = LayerNames {
        heads: vec![
            ("h0.wq".into(), "h0.wk".into(), "h0.wv".into()),
            ("h1.wq".into(), "h1.wk".into(), "h1.wv".into()),
        ],
        attn_out: ("ao.w".into(), "ao.b".into()),
        ffn: FfnNames {
            w1: "ffn.w1".into(),
            b1: "ffn.b1".into(),
            w2: "ffn.w2".into(),
            b2: "ffn.b2".into(),
            adapters: None,
        },
    };
    let all: Vec<String> = store.names();
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    let report = grad_check(&store, &refs, &check_cfg(), |g| {
        let z = g.param("z")?;
        let out = transformer_layer(g, z, &names, 2)?;
        squared_readout(g, out)
    })
    .unwrap();
    assert_clean(&report, "transformer layer");
}

#[test]
fn fusion_gate_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    store
        .insert("o1", TensorF::uniform(&[4, 3], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("o2", TensorF::uniform(&[4, 3], -1.0, 1.0, &mut rng))
        .unwrap();
    store
        .insert("fg.w", TensorF::uniform(&[2], -0.5, 0.5, &mut rng))
        .unwrap();
    store
        .insert("fg.b", TensorF::uniform(&[1], -0.5, 0.5, &mut rng))
        .unwrap();
    let behavior = GateBehavior::Learned {
        weight: "fg.w".into(),
        bias: "fg.b".into(),
    };
    let report = grad_check(&store, &["o1", "o2", "fg.w", "fg.b"], &check_cfg(), |g| {
        let o1 = g.param("o1")?;
        let o2 = g.param("o2")?;
        let (fused, _) = gated_fusion(g, o1, o2, &behavior)?;
        squared_readout(g, fused)
    })
    .unwrap();
    assert_clean(&report, "fusion gate");
}

fn full_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.window.lookback = 12;
    cfg.window.horizon = 4;
    cfg.graph.embed_dim = 3;
    cfg.graph.hyper_order = 2;
    cfg.patch = PatchSpec { p: 6, s: 3, d_m: 8 };
    cfg.transformer.layers = 1;
    cfg.transformer.heads = 2;
    cfg.transformer.ffn_width = 8;
    cfg.fusion.tblock_channels = 2;
    cfg.fusion.tblock_dilations = vec![1, 2];
    cfg.gate = GateSetting::Learned;
    cfg
}

fn check_full_model(cfg: ModelConfig, n: usize, seed: u64, label: &str) {
    let mut cfg = cfg;
    cfg.train.seed = seed;
    let model = Model::new(cfg.clone(), n).unwrap();
    let bundle = model.rebuild_supports(None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let x = TensorF::uniform(&[cfg.window.lookback, n], -1.5, 1.5, &mut rng);
    let target = TensorF::uniform(&[cfg.window.horizon, n], -1.5, 1.5, &mut rng);

    let names: Vec<String> = model
        .store
        .names()
        .into_iter()
        .filter(|name| !model.store.is_frozen(name).unwrap())
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = grad_check_sampled(&model.store, &refs, &check_cfg(), 3, seed, |g| {
        let out = model
            .forward(g, &x, &bundle)
            .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
        let tgt = g.input(target.clone());
        let diff = g.sub(out, tgt)?;
        squared_readout(g, diff)
    })
    .unwrap();
    assert_clean(&report, label);
}

#[test]
fn full_model_gradients() {
    for seed in [0, 1] {
        check_full_model(full_model_config(), 4, seed, "full model");
    }
}

#[test]
fn full_model_gradients_with_adapters() {
    let mut cfg = full_model_config();
    cfg.transformer.adapter_rank = 2;
    check_full_model(cfg, 4, 2, "full model with adapters");
}

#[test]
fn full_model_gradients_with_gated_mixprop_and_incident_support() {
    let mut cfg = full_model_config();
    cfg.mixprop.gated = true;
    cfg.graph.use_incident = true;
    cfg.train.seed = 3;
    let n = 4;
    let model = Model::new(cfg.clone(), n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut dist = TensorF::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = rng.gen_range(0.1..2.0);
            dist.set2(i, j, d);
            dist.set2(j, i, d);
        }
    }
    let bundle = model.rebuild_supports(Some(&dist)).unwrap();
    let x = TensorF::uniform(&[cfg.window.lookback, n], -1.5, 1.5, &mut rng);
    let target = TensorF::uniform(&[cfg.window.horizon, n], -1.5, 1.5, &mut rng);
    let names: Vec<String> = model.store.names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = grad_check_sampled(&model.store, &refs, &check_cfg(), 3, 5, |g| {
        let out = model
            .forward(g, &x, &bundle)
            .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
        let tgt = g.input(target.clone());
        let diff = g.sub(out, tgt)?;
        squared_readout(g, diff)
    })
    .unwrap();
    assert_clean(&report, "full model, gated mixprop, incident support");
}
