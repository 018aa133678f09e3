//! Every differentiable op against central differences on random shapes,
//! plus the optimizer and averaging invariants.

use lightxml_core::gradcheck::{grad_check, DEFAULT_STEP};
use lightxml_core::graph::{Graph, NodeId};
use lightxml_core::optim::{AdamW, SwaState};
use lightxml_core::params::{ParamId, ParamStore};
use lightxml_core::rng::rng_for;
use lightxml_core::{Result, Tensor};
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-4;

fn random_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], seed: u64) -> ParamId {
    let mut rng = rng_for(seed, name.len() as u64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    store.add(name, Tensor::new(shape, data).unwrap(), false)
}

/// A fixed random weighting so the loss is not a plain sum (which would
/// hide transposition mistakes).
fn weighted_sum(g: &mut Graph<'_, f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = rng_for(seed, 0xEE);
    let w = g.constant(Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn check<F>(store: &mut ParamStore<f64>, seed: u64, mut f: F) -> f64
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<NodeId>,
{
    grad_check(
        store,
        |g| {
            let out = f(g)?;
            if g.shape(out).iter().product::<usize>() == 1 && g.shape(out).len() <= 1 {
                Ok(out)
            } else {
                weighted_sum(g, out, seed)
            }
        },
        DEFAULT_STEP,
    )
    .unwrap()
    .max_rel_err
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_family(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut s = ParamStore::new();
        let a = random_param(&mut s, "a", &[m, k], seed);
        let b = random_param(&mut s, "bb", &[k, n], seed);
        let bt = random_param(&mut s, "btt", &[n, k], seed);
        let err = check(&mut s, seed, |g| {
            let (a, b, bt) = (g.param(a), g.param(b), g.param(bt));
            let x = g.matmul(a, b)?;
            let y = g.matmul_nt(a, bt)?;
            g.add(x, y)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn elementwise(m in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut s = ParamStore::new();
        let a = random_param(&mut s, "a", &[m, n], seed);
        let b = random_param(&mut s, "bb", &[m, n], seed);
        let bias = random_param(&mut s, "bias", &[n], seed);
        let err = check(&mut s, seed, |g| {
            let (a, b, bias) = (g.param(a), g.param(b), g.param(bias));
            let p = g.mul(a, b)?;
            let q = g.scale(p, 0.7)?;
            let r = g.add_row(q, bias)?;
            let s1 = g.sigmoid(r)?;
            let s2 = g.relu(a)?;
            let s3 = g.gelu(b)?;
            let t = g.add(s1, s2)?;
            g.add(t, s3)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn layer_norm(m in 1usize..=8, n in 2usize..=8, seed in any::<u64>()) {
        let mut s = ParamStore::new();
        let x = random_param(&mut s, "x", &[m, n], seed);
        let gamma = random_param(&mut s, "gamma", &[n], seed);
        let beta = random_param(&mut s, "beta", &[n], seed);
        let err = check(&mut s, seed, |g| {
            let (x, gm, bt) = (g.param(x), g.param(gamma), g.param(beta));
            g.layer_norm(x, gm, bt)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn gather_concat_rowdot(r in 1usize..=8, d in 1usize..=8, picks in prop::collection::vec(0usize..8, 1..8), seed in any::<u64>()) {
        let ids: Vec<usize> = picks.iter().map(|&i| i % r).collect();
        let mut s = ParamStore::new();
        let table = random_param(&mut s, "table", &[r, d], seed);
        let other = random_param(&mut s, "other", &[ids.len(), d], seed);
        let err = check(&mut s, seed, |g| {
            let (t, o) = (g.param(table), g.param(other));
            let rows = g.gather_rows(t, &ids)?;
            let dots = g.row_dot(rows, o)?;
            let wide = g.concat_cols(&[rows, o, rows])?;
            let a = weighted_sum(g, wide, seed ^ 1)?;
            let b = g.sum(dots)?;
            g.add(a, b)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn masked_attention(batch in 1usize..=3, seq in 1usize..=5, heads in 1usize..=2, dh in 1usize..=3, seed in any::<u64>()) {
        let width = heads * dh;
        let rows = batch * seq;
        let mut rng = rng_for(seed, 3);
        // Row starts always real, the rest random.
        let mask: Vec<bool> = (0..rows).map(|i| i % seq == 0 || rng.random_bool(0.7)).collect();
        let mut s = ParamStore::new();
        let q = random_param(&mut s, "q", &[rows, width], seed);
        let k = random_param(&mut s, "kk", &[rows, width], seed);
        let v = random_param(&mut s, "vvv", &[rows, width], seed);
        let err = check(&mut s, seed, |g| {
            let (q, k, v) = (g.param(q), g.param(k), g.param(v));
            g.attention(q, k, v, &mask, batch, seq, heads)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn bce(n in 1usize..=8, seed in any::<u64>()) {
        let mut s = ParamStore::new();
        let x = random_param(&mut s, "x", &[n], seed);
        let mut rng = rng_for(seed, 9);
        let target: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let err = check(&mut s, seed, |g| {
            let x = g.param(x);
            let p = g.sigmoid(x)?;
            g.bce_loss(p, &target, 0.5)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn bce_is_non_negative(p in prop::collection::vec(0.0f64..=1.0, 1..16), flips in any::<u64>()) {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let target: Vec<f64> = (0..p.len()).map(|i| ((flips >> (i % 64)) & 1) as f64).collect();
        let pn = g.constant(Tensor::new(&[p.len()], p.clone()).unwrap());
        let l = g.bce_loss(pn, &target, 1.0).unwrap();
        let v = g.value(l).item().unwrap();
        prop_assert!(v >= 0.0);
        if p.iter().zip(&target).all(|(a, b)| a == b) {
            prop_assert!(v <= 1e-9);
        }
    }

    #[test]
    fn backward_is_deterministic(m in 1usize..=6, n in 1usize..=6, seed in any::<u64>()) {
        let mut s = ParamStore::new();
        let a = random_param(&mut s, "a", &[m, n], seed);
        let gamma = random_param(&mut s, "gamma", &[n], seed);
        let beta = random_param(&mut s, "beta", &[n], seed);
        let run = || {
            let mut g = Graph::new(&s);
            let x = g.param(a);
            let (gm, bt) = (g.param(gamma), g.param(beta));
            let y = g.layer_norm(x, gm, bt).unwrap();
            let y = g.gelu(y).unwrap();
            let l = weighted_sum(&mut g, y, seed).unwrap();
            g.backward(l).unwrap().params()
        };
        let (first, second) = (run(), run());
        let bits = |v: &Vec<Option<Vec<f64>>>| -> Vec<u64> {
            v.iter().flatten().flatten().map(|x| x.to_bits()).collect()
        };
        prop_assert_eq!(bits(&first), bits(&second));
    }

    #[test]
    fn swa_matches_brute_force_mean(n in 1usize..8, len in 1usize..10, seed in any::<u64>()) {
        let mut rng = rng_for(seed, 1);
        let mut current = ParamStore::<f64>::new();
        let id = current.add("w", Tensor::zeros(&[len]), false);
        let mut swa: Option<SwaState<f64>> = None;
        let mut snaps: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n {
            for v in current.value_mut(id).data_mut() {
                *v = rng.random_range(-10.0..10.0);
            }
            snaps.push(current.value(id).data().to_vec());
            swa.get_or_insert_with(|| SwaState::new(&current, 1)).update(&current).unwrap();
        }
        let swa = swa.unwrap();
        prop_assert_eq!(swa.count, n as u64);
        for i in 0..len {
            let mean = snaps.iter().map(|s| s[i]).sum::<f64>() / n as f64;
            prop_assert!((swa.average.value(id).data()[i] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn adamw_with_zero_lr_is_identity(len in 1usize..10, seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = rng_for(seed, 2);
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new(&[len], (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(), false);
        let before = store.clone();
        let mut opt = AdamW::new(&store, 0.0, 0.0);
        for _ in 0..steps {
            let grads = vec![Some((0..len).map(|_| rng.random_range(-5.0..5.0)).collect())];
            opt.step(&mut store, &grads).unwrap();
        }
        prop_assert_eq!(store, before);
    }
}
