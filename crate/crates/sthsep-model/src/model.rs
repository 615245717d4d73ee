//! Assembles the two branches into one trainable model: a parameter
//! registry with deterministic initialization, support-matrix construction
//! from the current embeddings, and the fused forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthsep_core::{Graph, NodeId, ParamStore, TensorF};
use sthsep_graph::adjacency::default_sigma;
use sthsep_graph::{
    adaptive_adjacency_eval, gaussian_incident, hyperedge_features_eval, incidence,
    knn_hyperedges, normalize_adjacency, GraphError, Hypergraph, PairwiseFfn,
};

use crate::config::{GateSetting, ModelConfig};
use crate::error::{ModelError, ModelResult};
use crate::fusion::{gated_fusion, GateBehavior};
use crate::spatial::{spatial_branch, BlockNames, HgcnNames, SpatialNames, SpatialSupports};
use crate::temporal::{
    patch_count, temporal_branch, AdapterNames, FfnNames, LayerNames, TemporalNames, STATS_WIDTH,
};

/// How a parameter starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    UniformFanIn(usize),
    Zero,
    Const(f64),
}

/// Support matrices derived from the current embeddings and geometry.
/// Rebuilt on the schedule in the config; constant within one forward pass.
#[derive(Debug, Clone)]
pub struct GraphBundle {
    pub hypergraph: Hypergraph,
    /// Node-by-hyperedge membership, `[N, M]`.
    pub incidence: TensorF,
    /// Binary neighbor mask for the S-blocks: union of the adaptive
    /// adjacency's support and the distance kernel's off-diagonal support.
    pub sblock_support: TensorF,
    /// Degree-normalized distance-kernel adjacency, when geometry is used.
    pub incident_norm: Option<TensorF>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    n_nodes: usize,
    pub store: ParamStore,
    spatial_names: SpatialNames,
    temporal_names: TemporalNames,
}

/// Every parameter the model owns, in initialization draw order. Adapter
/// deltas come last so turning them on leaves the base weights' random
/// draws untouched.
pub fn param_specs(cfg: &ModelConfig, n_nodes: usize) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.graph.embed_dim;
    let l = cfg.window.lookback;
    let h = cfg.window.horizon;
    let c = cfg.fusion.tblock_channels;
    let kernel = cfg.fusion.tblock_kernel;
    let d_m = cfg.patch.d_m;
    let d_h = d_m / cfg.transformer.heads;
    let ffn_w = cfg.transformer.ffn_width;
    let rank = cfg.transformer.adapter_rank;
    let tokens = 1 + patch_count(l, cfg.patch.p, cfg.patch.s);

    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| specs.push((name, shape, init));

    push("graph.e1".into(), vec![n_nodes, d], Init::UniformFanIn(d));
    push("graph.e2".into(), vec![n_nodes, d], Init::UniformFanIn(d));
    push("graph.e3".into(), vec![n_nodes, d], Init::UniformFanIn(d));
    push("graph.pair.weight".into(), vec![d, n_nodes], Init::UniformFanIn(d));
    push("graph.pair.bias".into(), vec![n_nodes], Init::UniformFanIn(d));
    push("graph.hyper.weight".into(), vec![d, d], Init::UniformFanIn(d));
    push("graph.hyper.bias".into(), vec![d], Init::UniformFanIn(d));

    push("spatial.hgcn.enc.weight".into(), vec![l, l], Init::UniformFanIn(l));
    push("spatial.hgcn.enc.bias".into(), vec![l], Init::UniformFanIn(l));
    push("spatial.hgcn.weight".into(), vec![l, l], Init::UniformFanIn(l));
    if cfg.mixprop.gated {
        push("spatial.mixprop.gate".into(), vec![l, l], Init::UniformFanIn(l));
    }
    push("spatial.lift.weight".into(), vec![1, c], Init::UniformFanIn(1));
    push("spatial.lift.bias".into(), vec![c], Init::UniformFanIn(1));
    for i in 0..cfg.fusion.st_blocks {
        push(
            format!("spatial.block{i}.epsilon"),
            vec![1],
            Init::Const(cfg.fusion.epsilon_init),
        );
        for j in 0..cfg.fusion.tblock_dilations.len() {
            push(
                format!("spatial.block{i}.conv{j}.weight"),
                vec![kernel, c, c],
                Init::UniformFanIn(kernel * c),
            );
            push(
                format!("spatial.block{i}.conv{j}.bias"),
                vec![c],
                Init::UniformFanIn(kernel * c),
            );
        }
    }
    push("spatial.collapse.weight".into(), vec![c, 1], Init::UniformFanIn(c));
    push("spatial.collapse.bias".into(), vec![1], Init::UniformFanIn(c));
    push("spatial.head.weight".into(), vec![l, h], Init::UniformFanIn(l));
    push("spatial.head.bias".into(), vec![h], Init::UniformFanIn(l));

    push("temporal.patch.weight".into(), vec![cfg.patch.p, d_m], Init::UniformFanIn(cfg.patch.p));
    push("temporal.patch.bias".into(), vec![d_m], Init::UniformFanIn(cfg.patch.p));
    push("temporal.stats.weight".into(), vec![STATS_WIDTH, d_m], Init::UniformFanIn(STATS_WIDTH));
    push("temporal.stats.bias".into(), vec![d_m], Init::UniformFanIn(STATS_WIDTH));
    push("temporal.pos".into(), vec![tokens, d_m], Init::UniformFanIn(d_m));
    for layer in 0..cfg.transformer.layers {
        for head in 0..cfg.transformer.heads {
            for mat in ["wq", "wk", "wv"] {
                push(
                    format!("temporal.layer{layer}.head{head}.{mat}"),
                    vec![d_m, d_h],
                    Init::UniformFanIn(d_m),
                );
            }
        }
        push(
            format!("temporal.layer{layer}.attn_out.weight"),
            vec![d_m, d_m],
            Init::UniformFanIn(d_m),
        );
        push(
            format!("temporal.layer{layer}.attn_out.bias"),
            vec![d_m],
            Init::UniformFanIn(d_m),
        );
        push(format!("temporal.layer{layer}.ffn.w1"), vec![d_m, ffn_w], Init::UniformFanIn(d_m));
        push(format!("temporal.layer{layer}.ffn.b1"), vec![ffn_w], Init::UniformFanIn(d_m));
        push(format!("temporal.layer{layer}.ffn.w2"), vec![ffn_w, d_m], Init::UniformFanIn(ffn_w));
        push(format!("temporal.layer{layer}.ffn.b2"), vec![d_m], Init::UniformFanIn(ffn_w));
    }
    push(
        "temporal.proj.weight".into(),
        vec![tokens * d_m, h],
        Init::UniformFanIn(tokens * d_m),
    );
    push("temporal.proj.bias".into(), vec![h], Init::UniformFanIn(tokens * d_m));

    push("fusion.gate.weight".into(), vec![2], Init::UniformFanIn(2));
    push("fusion.gate.bias".into(), vec![1], Init::UniformFanIn(2));

    if rank > 0 {
        for layer in 0..cfg.transformer.layers {
            push(format!("temporal.layer{layer}.ffn.w1_down"), vec![d_m, rank], Init::Zero);
            push(
                format!("temporal.layer{layer}.ffn.w1_up"),
                vec![rank, ffn_w],
                Init::UniformFanIn(rank),
            );
            push(format!("temporal.layer{layer}.ffn.w2_down"), vec![ffn_w, rank], Init::Zero);
            push(
                format!("temporal.layer{layer}.ffn.w2_up"),
                vec![rank, d_m],
                Init::UniformFanIn(rank),
            );
        }
    }

    specs
}

fn build_spatial_names(cfg: &ModelConfig) -> SpatialNames {
    SpatialNames {
        e1: "graph.e1".into(),
        e2: "graph.e2".into(),
        pair: PairwiseFfn {
            weight: "graph.pair.weight".into(),
            bias: "graph.pair.bias".into(),
        },
        mixprop_gate: if cfg.mixprop.gated {
            Some("spatial.mixprop.gate".into())
        } else {
            None
        },
        hgcn: HgcnNames {
            enc: Some((
                "spatial.hgcn.enc.weight".into(),
                "spatial.hgcn.enc.bias".into(),
            )),
            weight: "spatial.hgcn.weight".into(),
        },
        lift: ("spatial.lift.weight".into(), "spatial.lift.bias".into()),
        blocks: (0..cfg.fusion.st_blocks)
            .map(|i| BlockNames {
                epsilon: format!("spatial.block{i}.epsilon"),
                convs: (0..cfg.fusion.tblock_dilations.len())
                    .map(|j| {
                        (
                            format!("spatial.block{i}.conv{j}.weight"),
                            format!("spatial.block{i}.conv{j}.bias"),
                        )
                    })
                    .collect(),
            })
            .collect(),
        collapse: (
            "spatial.collapse.weight".into(),
            "spatial.collapse.bias".into(),
        ),
        head: ("spatial.head.weight".into(), "spatial.head.bias".into()),
    }
}

fn build_temporal_names(cfg: &ModelConfig) -> TemporalNames {
    let rank = cfg.transformer.adapter_rank;
    TemporalNames {
        patch: ("temporal.patch.weight".into(), "temporal.patch.bias".into()),
        stats: ("temporal.stats.weight".into(), "temporal.stats.bias".into()),
        pos: "temporal.pos".into(),
        layers: (0..cfg.transformer.layers)
            .map(|l| LayerNames {
                heads: (0..cfg.transformer.heads)
                    .map(|h| {
                        (
                            format!("temporal.layer{l}.head{h}.wq"),
                            format!("temporal.layer{l}.head{h}.wk"),
                            format!("temporal.layer{l}.head{h}.wv"),
                        )
                    })
                    .collect(),
                attn_out: (
                    format!("temporal.layer{l}.attn_out.weight"),
                    format!("temporal.layer{l}.attn_out.bias"),
                ),
                ffn: FfnNames {
                    w1: format!("temporal.layer{l}.ffn.w1"),
                    b1: format!("temporal.layer{l}.ffn.b1"),
                    w2: format!("temporal.layer{l}.ffn.w2"),
                    b2: format!("temporal.layer{l}.ffn.b2"),
                    adapters: (rank > 0).then(|| AdapterNames {
                        w1_down: format!("temporal.layer{l}.ffn.w1_down"),
                        w1_up: format!("temporal.layer{l}.ffn.w1_up"),
                        w2_down: format!("temporal.layer{l}.ffn.w2_down"),
                        w2_up: format!("temporal.layer{l}.ffn.w2_up"),
                    }),
                },
            })
            .collect(),
        proj: ("temporal.proj.weight".into(), "temporal.proj.bias".into()),
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, n_nodes: usize) -> ModelResult<Model> {
        cfg.validate()?;
        if n_nodes == 0 {
            return Err(ModelError::Config("model needs at least one node".into()));
        }
        if cfg.graph.hyper_order > n_nodes {
            return Err(ModelError::Config(format!(
                "hyperedge order {} exceeds node count {n_nodes}",
                cfg.graph.hyper_order
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        for (name, shape, init) in param_specs(&cfg, n_nodes) {
            let value = match init {
                Init::UniformFanIn(fan) => {
                    let bound = 1.0 / (fan as f64).sqrt();
                    TensorF::uniform(&shape, -bound, bound, &mut rng)
                }
                Init::Zero => TensorF::zeros(&shape),
                Init::Const(v) => TensorF::filled(&shape, v),
            };
            store.insert(name, value)?;
        }
        let mut model = Model {
            spatial_names: build_spatial_names(&cfg),
            temporal_names: build_temporal_names(&cfg),
            cfg,
            n_nodes,
            store,
        };
        model.apply_freezing()?;
        Ok(model)
    }

    /// Rebuilds a model from a config and a full parameter list, checking
    /// the set of names and every shape against the registry. The node
    /// count is inferred from the embedding table.
    pub fn from_parts(cfg: ModelConfig, params: Vec<(String, TensorF)>) -> ModelResult<Model> {
        cfg.validate()?;
        let n_nodes = params
            .iter()
            .find(|(name, _)| name == "graph.e1")
            .map(|(_, v)| v.shape()[0])
            .ok_or_else(|| ModelError::MissingParam("graph.e1".into()))?;
        let specs = param_specs(&cfg, n_nodes);
        let mut incoming: std::collections::BTreeMap<String, TensorF> =
            params.into_iter().collect();
        let mut store = ParamStore::new();
        for (name, shape, _) in &specs {
            let value = incoming
                .remove(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if value.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: value.shape().to_vec(),
                });
            }
            store.insert(name.clone(), value)?;
        }
        if let Some((name, _)) = incoming.into_iter().next() {
            return Err(ModelError::CheckpointParse(format!(
                "unexpected parameter `{name}`"
            )));
        }
        let mut model = Model {
            spatial_names: build_spatial_names(&cfg),
            temporal_names: build_temporal_names(&cfg),
            cfg,
            n_nodes,
            store,
        };
        model.apply_freezing()?;
        Ok(model)
    }

    /// Base feed-forward weights freeze exactly when adapters are active;
    /// the flag is derived from the config, never persisted.
    fn apply_freezing(&mut self) -> ModelResult<()> {
        if self.cfg.transformer.adapter_rank == 0 {
            return Ok(());
        }
        for l in 0..self.cfg.transformer.layers {
            self.store
                .set_frozen(&format!("temporal.layer{l}.ffn.w1"), true)?;
            self.store
                .set_frozen(&format!("temporal.layer{l}.ffn.w2"), true)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spatial_names(&self) -> &SpatialNames {
        &self.spatial_names
    }

    pub fn temporal_names(&self) -> &TemporalNames {
        &self.temporal_names
    }

    /// Derives the hypergraph, incidence matrix, S-block support, and the
    /// optional distance-kernel adjacency from the current parameters.
    pub fn rebuild_supports(&self, distances: Option<&TensorF>) -> ModelResult<GraphBundle> {
        let alpha = self.cfg.graph.alpha;
        let f3 = hyperedge_features_eval(
            self.store.value("graph.e3")?,
            self.store.value("graph.hyper.weight")?,
            self.store.value("graph.hyper.bias")?,
            alpha,
        )?;
        let hypergraph = knn_hyperedges(&f3, self.cfg.graph.hyper_order)?;
        let inc = incidence(&hypergraph);

        let a_adp = adaptive_adjacency_eval(
            self.store.value("graph.e1")?,
            self.store.value("graph.e2")?,
            self.store.value("graph.pair.weight")?,
            self.store.value("graph.pair.bias")?,
            alpha,
        )?;

        let (incident_raw, incident_norm) = if self.cfg.graph.use_incident {
            let d = distances.ok_or(GraphError::MissingDistances)?;
            let sigma = self.cfg.graph.sigma.unwrap_or_else(|| default_sigma(d));
            let a = gaussian_incident(Some(d), sigma, self.cfg.graph.threshold)?;
            let norm = normalize_adjacency(&a)?;
            (Some(a), Some(norm))
        } else {
            (None, None)
        };

        let n = self.n_nodes;
        let mut sblock_support = TensorF::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut on = a_adp.get2(i, j) > 0.0;
                if let Some(a) = &incident_raw {
                    on = on || a.get2(i, j) > 0.0;
                }
                if on {
                    sblock_support.set2(i, j, 1.0);
                }
            }
        }

        Ok(GraphBundle {
            hypergraph,
            incidence: inc.matrix,
            sblock_support,
            incident_norm,
        })
    }

    /// Builds the forward pass for one lookback window; returns the `[H, N]`
    /// forecast node. Only the branches the gate setting can see are built.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x_window: &TensorF,
        bundle: &GraphBundle,
    ) -> ModelResult<NodeId> {
        let expected = [self.cfg.window.lookback, self.n_nodes];
        if x_window.shape() != expected {
            return Err(ModelError::Config(format!(
                "window shape {:?} does not match [lookback, nodes] = {expected:?}",
                x_window.shape()
            )));
        }
        let supports = SpatialSupports {
            incident_norm: bundle.incident_norm.as_ref(),
            incidence: &bundle.incidence,
            sblock_support: &bundle.sblock_support,
        };
        let out = match self.cfg.gate {
            GateSetting::TemporalOnly => temporal_branch(
                g,
                x_window,
                &self.temporal_names,
                &self.cfg.patch,
                &self.cfg.transformer,
            )?,
            GateSetting::SpatialOnly => {
                spatial_branch(g, x_window, &supports, &self.spatial_names, &self.cfg)?
            }
            GateSetting::Learned => {
                let trend = temporal_branch(
                    g,
                    x_window,
                    &self.temporal_names,
                    &self.cfg.patch,
                    &self.cfg.transformer,
                )?;
                let refined =
                    spatial_branch(g, x_window, &supports, &self.spatial_names, &self.cfg)?;
                let behavior = GateBehavior::Learned {
                    weight: "fusion.gate.weight".into(),
                    bias: "fusion.gate.bias".into(),
                };
                gated_fusion(g, trend, refined, &behavior)?.0
            }
        };
        Ok(out)
    }

    /// Convenience scoring pass: one window in, the `[H, N]` forecast out.
    pub fn predict(&self, x_window: &TensorF, bundle: &GraphBundle) -> ModelResult<TensorF> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, x_window, bundle)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GateSetting;

    fn small_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.window.lookback = 12;
        cfg.window.horizon = 4;
        cfg.graph.embed_dim = 3;
        cfg.graph.hyper_order = 2;
        cfg.patch = crate::config::PatchSpec { p: 6, s: 3, d_m: 8 };
        cfg.transformer.layers = 1;
        cfg.transformer.heads = 2;
        cfg.transformer.ffn_width = 8;
        cfg.fusion.tblock_channels = 2;
        cfg.fusion.tblock_dilations = vec![1, 2];
        cfg
    }

    fn window(cfg: &ModelConfig, n: usize) -> TensorF {
        let l = cfg.window.lookback;
        let data: Vec<f64> = (0..l * n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        TensorF::new(vec![l, n], data).unwrap()
    }

    #[test]
    fn registry_and_store_agree() {
        let cfg = small_config();
        let model = Model::new(cfg.clone(), 5).unwrap();
        let specs = param_specs(&cfg, 5);
        assert_eq!(model.store.len(), specs.len());
        for (name, shape, _) in &specs {
            assert_eq!(model.store.value(name).unwrap().shape(), shape.as_slice());
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = small_config();
        let a = Model::new(cfg.clone(), 4).unwrap();
        let b = Model::new(cfg, 4).unwrap();
        for (name, entry) in a.store.iter() {
            assert!(
                entry.value.bits_eq(b.store.value(name).unwrap()),
                "{name} differs"
            );
        }
    }

    #[test]
    fn adapters_do_not_shift_base_draws() {
        let base = Model::new(small_config(), 4).unwrap();
        let mut cfg = small_config();
        cfg.transformer.adapter_rank = 2;
        let adapted = Model::new(cfg, 4).unwrap();
        for (name, entry) in base.store.iter() {
            assert!(
                entry.value.bits_eq(adapted.store.value(name).unwrap()),
                "{name} shifted"
            );
        }
        assert!(adapted.store.is_frozen("temporal.layer0.ffn.w1").unwrap());
        assert!(adapted.store.is_frozen("temporal.layer0.ffn.w2").unwrap());
        assert!(!base.store.is_frozen("temporal.layer0.ffn.w1").unwrap());
        let down = adapted.store.value("temporal.layer0.ffn.w1_down").unwrap();
        assert!(down.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supports_have_expected_structure() {
        let model = Model::new(small_config(), 5).unwrap();
        let bundle = model.rebuild_supports(None).unwrap();
        assert_eq!(bundle.incidence.shape()[0], 5);
        assert_eq!(bundle.hypergraph.order_k, 2);
        let s = &bundle.sblock_support;
        assert_eq!(s.shape(), [5, 5]);
        for i in 0..5 {
            assert_eq!(s.get2(i, i), 0.0);
            for j in 0..5 {
                let v = s.get2(i, j);
                assert!(v == 0.0 || v == 1.0);
            }
        }
        assert!(bundle.incident_norm.is_none());
    }

    #[test]
    fn forward_shapes_for_every_gate_setting() {
        for gate in [
            GateSetting::Learned,
            GateSetting::TemporalOnly,
            GateSetting::SpatialOnly,
        ] {
            let mut cfg = small_config();
            cfg.gate = gate;
            let model = Model::new(cfg.clone(), 5).unwrap();
            let bundle = model.rebuild_supports(None).unwrap();
            let out = model.predict(&window(&cfg, 5), &bundle).unwrap();
            assert_eq!(out.shape(), [cfg.window.horizon, 5]);
            assert!(out.all_finite());
        }
    }

    #[test]
    fn missing_geometry_is_reported() {
        let mut cfg = small_config();
        cfg.graph.use_incident = true;
        let model = Model::new(cfg, 5).unwrap();
        let err = model.rebuild_supports(None).unwrap_err();
        assert!(err.to_string().contains("no pairwise distances"));
    }

    #[test]
    fn from_parts_round_trips_and_validates() {
        let model = Model::new(small_config(), 4).unwrap();
        let params: Vec<(String, TensorF)> = model
            .store
            .iter()
            .map(|(n, e)| (n.to_string(), e.value.clone()))
            .collect();
        let back = Model::from_parts(small_config(), params.clone()).unwrap();
        for (name, entry) in model.store.iter() {
            assert!(entry.value.bits_eq(back.store.value(name).unwrap()));
        }

        let mut missing = params.clone();
        missing.retain(|(n, _)| n != "spatial.head.bias");
        assert!(matches!(
            Model::from_parts(small_config(), missing),
            Err(ModelError::MissingParam(n)) if n == "spatial.head.bias"
        ));

        let mut wrong = params;
        for (n, v) in wrong.iter_mut() {
            if n == "spatial.head.bias" {
                *v = TensorF::zeros(&[7]);
            }
        }
        assert!(matches!(
            Model::from_parts(small_config(), wrong),
            Err(ModelError::ParamShape { .. })
        ));
    }
}
