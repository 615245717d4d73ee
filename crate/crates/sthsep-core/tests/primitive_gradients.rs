//! Central-difference checks for every differentiable primitive, ten seeds
//! apiece. Each case registers the op inputs as parameters, projects the op
//! output to a scalar against a fixed random tensor, and compares tape
//! gradients with finite differences at epsilon = 1e-5.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthsep_core::{grad_check, GradCheckConfig, Graph, NodeId, ParamStore, TensorF};

const SEEDS: u64 = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sample(shape: &[usize], rng: &mut ChaCha8Rng) -> TensorF {
    TensorF::uniform(shape, -2.0, 2.0, rng)
}

/// Uniform in [-2, 2] but at least `band` away from zero, for kinked ops.
fn sample_off_kink(shape: &[usize], rng: &mut ChaCha8Rng, band: f64) -> TensorF {
    let mut t = sample(shape, rng);
    for v in t.data_mut() {
        while v.abs() < band {
            *v = rng.gen_range(-2.0..2.0);
        }
    }
    t
}

/// Runs the builder under grad_check for every listed param and asserts the
/// report stays under the tolerance.
fn assert_grads<F>(store: &ParamStore, names: &[&str], seed: u64, build: F)
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId, sthsep_core::CoreError>,
{
    let cfg = GradCheckConfig::default();
    let report = grad_check(store, names, &cfg, build).unwrap();
    assert!(
        report.passes(&cfg),
        "seed {seed}: max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

/// Projects `y` against a fixed tensor so the scalar loss sees every output.
fn project(g: &mut Graph<'_>, y: NodeId, proj: &TensorF) -> NodeId {
    let p = g.constant(proj.clone());
    let prod = g.mul(y, p).unwrap();
    g.mean_all(prod)
}

#[test]
fn matmul_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(100 + seed);
        let mut s = ParamStore::new();
        s.insert("a", sample(&[3, 4], &mut r)).unwrap();
        s.insert("b", sample(&[4, 2], &mut r)).unwrap();
        let proj = sample(&[3, 2], &mut r);
        assert_grads(&s, &["a", "b"], seed, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let y = g.matmul(a, b)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn add_sub_mul_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(200 + seed);
        let mut s = ParamStore::new();
        s.insert("a", sample(&[2, 5], &mut r)).unwrap();
        s.insert("b", sample(&[2, 5], &mut r)).unwrap();
        let proj = sample(&[2, 5], &mut r);
        assert_grads(&s, &["a", "b"], seed, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let sum = g.add(a, b)?;
            let diff = g.sub(sum, b)?;
            let y = g.mul(diff, b)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn bias_and_scalar_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[4, 3], &mut r)).unwrap();
        s.insert("b", sample(&[3], &mut r)).unwrap();
        s.insert("s", sample(&[1], &mut r)).unwrap();
        let proj = sample(&[4, 3], &mut r);
        assert_grads(&s, &["x", "b", "s"], seed, |g| {
            let x = g.param("x")?;
            let b = g.param("b")?;
            let sc = g.param("s")?;
            let y = g.add_bias_rows(x, b)?;
            let y = g.scalar_mul(y, 0.75);
            let y = g.scalar_add(y, -0.1);
            let y = g.mul_scalar_node(y, sc)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn tanh_sigmoid_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(400 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[3, 3], &mut r)).unwrap();
        let proj = sample(&[3, 3], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let t = g.tanh(x);
            let y = g.sigmoid(t);
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn relu_abs_gradients_off_kink() {
    let cfg = GradCheckConfig::default();
    for seed in 0..SEEDS {
        let mut r = rng(500 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample_off_kink(&[4, 4], &mut r, cfg.exclusion_band))
            .unwrap();
        let proj = sample(&[4, 4], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let rl = g.relu(x);
            let ab = g.abs_val(x);
            let y = g.add(rl, ab)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn pow_const_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(600 + seed);
        let mut s = ParamStore::new();
        // Positive domain, as used for inverse-sqrt degree scaling.
        let mut x = sample(&[5], &mut r);
        for v in x.data_mut() {
            *v = v.abs() + 1.0;
        }
        s.insert("x", x).unwrap();
        let proj = sample(&[5], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let y = g.pow_const(x, -0.5);
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn softmax_gradients_both_axes() {
    for seed in 0..SEEDS {
        let mut r = rng(700 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[4, 6], &mut r)).unwrap();
        let proj0 = sample(&[4, 6], &mut r);
        let proj1 = sample(&[4, 6], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let s0 = g.softmax(x, 0)?;
            let s1 = g.softmax(x, 1)?;
            let a = project(g, s0, &proj0);
            let b = project(g, s1, &proj1);
            g.add(a, b)
        });
    }
}

#[test]
fn layer_norm_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(800 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[3, 7], &mut r)).unwrap();
        let proj = sample(&[3, 7], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let y = g.layer_norm(x)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn reduction_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(900 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[3, 4, 2], &mut r)).unwrap();
        let proj0 = sample(&[4, 2], &mut r);
        let proj1 = sample(&[3, 2], &mut r);
        assert_grads(&s, &["x"], seed, |g| {
            let x = g.param("x")?;
            let m = g.mean_axis(x, 0)?;
            let t = g.sum_axis(x, 1)?;
            let a = project(g, m, &proj0);
            let b = project(g, t, &proj1);
            g.add(a, b)
        });
    }
}

#[test]
fn shape_op_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(1000 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[2, 3, 4], &mut r)).unwrap();
        s.insert("y", sample(&[3, 4], &mut r)).unwrap();
        let proj = sample(&[4, 3], &mut r);
        let proj2 = sample(&[2, 12], &mut r);
        let proj3 = sample(&[1, 3, 4], &mut r);
        assert_grads(&s, &["x", "y"], seed, |g| {
            let x = g.param("x")?;
            let y = g.param("y")?;
            let yt = g.transpose(y)?;
            let a = project(g, yt, &proj);
            let flat = g.reshape(x, &[2, 12])?;
            let b = project(g, flat, &proj2);
            let perm = g.permute(x, &[2, 0, 1])?; // [4, 2, 3]
            let back = g.permute(perm, &[1, 2, 0])?;
            let sl = g.slice_axis0(back, 1, 1)?;
            let c = project(g, sl, &proj3);
            let ab = g.add(a, b)?;
            g.add(ab, c)
        });
    }
}

#[test]
fn concat_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(1100 + seed);
        let mut s = ParamStore::new();
        s.insert("a", sample(&[2, 3], &mut r)).unwrap();
        s.insert("b", sample(&[4, 3], &mut r)).unwrap();
        s.insert("c", sample(&[2, 5], &mut r)).unwrap();
        let proj0 = sample(&[6, 3], &mut r);
        let proj1 = sample(&[2, 8], &mut r);
        assert_grads(&s, &["a", "b", "c"], seed, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let c = g.param("c")?;
            let cat0 = g.concat(&[a, b], 0)?;
            let cat1 = g.concat(&[a, c], 1)?;
            let l0 = project(g, cat0, &proj0);
            let l1 = project(g, cat1, &proj1);
            g.add(l0, l1)
        });
    }
}

#[test]
fn scale_row_col_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(1200 + seed);
        let mut s = ParamStore::new();
        s.insert("x", sample(&[4, 3], &mut r)).unwrap();
        s.insert("r", sample(&[4], &mut r)).unwrap();
        s.insert("c", sample(&[3], &mut r)).unwrap();
        let proj = sample(&[4, 3], &mut r);
        assert_grads(&s, &["x", "r", "c"], seed, |g| {
            let x = g.param("x")?;
            let rv = g.param("r")?;
            let cv = g.param("c")?;
            let y = g.scale_rows(x, rv)?;
            let y = g.scale_cols(y, cv)?;
            Ok(project(g, y, &proj))
        });
    }
}

#[test]
fn conv1d_gradients_across_dilations() {
    for seed in 0..SEEDS {
        for &dilation in &[1usize, 2, 4] {
            let mut r = rng(1300 + seed * 7 + dilation as u64);
            let mut s = ParamStore::new();
            s.insert("x", sample(&[9, 2, 3], &mut r)).unwrap();
            s.insert("w", sample(&[2, 3, 4], &mut r)).unwrap();
            s.insert("b", sample(&[4], &mut r)).unwrap();
            let proj = sample(&[9, 2, 4], &mut r);
            assert_grads(&s, &["x", "w", "b"], seed, |g| {
                let x = g.param("x")?;
                let w = g.param("w")?;
                let b = g.param("b")?;
                let y = g.conv1d_causal(x, w, b, dilation)?;
                Ok(project(g, y, &proj))
            });
        }
    }
}

#[test]
fn composite_chain_gradients() {
    // A deeper composite resembling one network block.
    for seed in 0..SEEDS {
        let mut r = rng(1400 + seed);
        let mut s = ParamStore::new();
        s.insert("w1", sample(&[5, 8], &mut r)).unwrap();
        s.insert("b1", sample(&[8], &mut r)).unwrap();
        s.insert("w2", sample(&[8, 5], &mut r)).unwrap();
        s.insert("x", sample(&[3, 5], &mut r)).unwrap();
        let proj = sample(&[3, 5], &mut r);
        assert_grads(&s, &["w1", "b1", "w2", "x"], seed, |g| {
            let x = g.param("x")?;
            let w1 = g.param("w1")?;
            let b1 = g.param("b1")?;
            let w2 = g.param("w2")?;
            let h = g.matmul(x, w1)?;
            let h = g.add_bias_rows(h, b1)?;
            let h = g.tanh(h);
            let y = g.matmul(h, w2)?;
            let y = g.layer_norm(y)?;
            let z = g.add(y, x)?;
            Ok(project(g, z, &proj))
        });
    }
}
