mod common;

use mgfuse::autodiff::{Array, Tape, Var};
use mgfuse::data::Scaler;
use mgfuse::forecaster::{evaluate, normalize_adjacency};
use mgfuse::graphs::{
    assemble_graph_set, build_functionality_graph, pearson, GraphKind, GraphMask, KernelConfig, NodeTable,
};
use proptest::prelude::*;

type Build = fn(&mut Tape, &[Var]) -> Var;

/// Checks every input gradient of `build` against central differences of
/// the scalar `sum(out * weights)`.
fn check_gradients(inputs: &[Array], build: Build) -> Result<(), TestCaseError> {
    let loss_of = |vals: &[Array]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = build(&mut tape, &vars);
        let len = tape.value(out).len();
        let w: Vec<f64> = (0..len).map(|k| 0.3 + ((k * 7919) % 13) as f64 / 10.0).collect();
        let w = tape.constant(Array::new(tape.shape(out).to_vec(), w).unwrap());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = loss_of(inputs);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-6;
    for (a, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap();
        for k in 0..inputs[a].len() {
            let eval = |d: f64| {
                let mut vals = inputs.to_vec();
                vals[a].data_mut()[k] += d;
                let (t, _, l) = loss_of(&vals);
                t.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = g.data()[k];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            prop_assert!(err < 1e-5, "input {a}[{k}]: analytic {analytic} numeric {numeric}");
        }
    }
    Ok(())
}

fn array(shape: Vec<usize>) -> impl Strategy<Value = Array> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, len).prop_map(move |d| Array::new(shape.clone(), d).unwrap())
}

/// Values bounded away from the kinks of relu and abs.
fn kink_free(shape: Vec<usize>) -> impl Strategy<Value = Array> {
    array(shape).prop_map(|a| a.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elementwise_gradients(a in array(vec![3, 4]), b in array(vec![3, 4]), c in array(vec![4])) {
        check_gradients(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap())?;
        check_gradients(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap())?;
        check_gradients(&[a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap())?;
        check_gradients(&[a, c], |t, v| t.mul(v[0], v[1]).unwrap())?;
    }

    #[test]
    fn activation_gradients(a in kink_free(vec![2, 5])) {
        check_gradients(&[a.clone()], |t, v| t.relu(v[0]))?;
        check_gradients(&[a.clone()], |t, v| t.sigmoid(v[0]))?;
        check_gradients(&[a.clone()], |t, v| t.abs(v[0]))?;
        check_gradients(&[a.map(|x| x.abs() + 0.5)], |t, v| t.powf(v[0], -0.5))?;
    }

    #[test]
    fn product_gradients(a in array(vec![3, 4]), b in array(vec![4, 2]), x in array(vec![2, 3, 4]), y in array(vec![2, 4, 3])) {
        check_gradients(&[a, b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap())?;
        check_gradients(&[x.clone(), y], |t, v| t.bmm(v[0], v[1]).unwrap())?;
        check_gradients(&[x, b], |t, v| t.bmm(v[0], v[1]).unwrap())?;
    }

    #[test]
    fn shape_gradients(x in array(vec![2, 3, 4]), y in array(vec![2, 3, 2])) {
        check_gradients(&[x.clone()], |t, v| t.permute(v[0], &[2, 0, 1]).unwrap())?;
        check_gradients(&[x.clone()], |t, v| t.reshape(v[0], &[6, 4]).unwrap())?;
        check_gradients(&[x.clone(), y], |t, v| t.concat(&[v[0], v[1]], 2).unwrap())?;
        check_gradients(&[x.clone()], |t, v| t.narrow(v[0], 1, 1, 2).unwrap())?;
        check_gradients(&[x.clone()], |t, v| t.sum_axis(v[0], 1).unwrap())?;
        check_gradients(&[x.clone()], |t, v| t.softmax(v[0], 2).unwrap())?;
        check_gradients(&[x], |t, v| t.softmax(v[0], 0).unwrap())?;
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 3..40),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
        seed in 0u64..1000,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| v * v + ((k as u64 * 31 + seed) % 7) as f64).collect();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r = pearson(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((pearson(&ax, &y).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn graph_matrices_keep_their_invariants(seed in 0u64..10_000) {
        let t = common::random_table(seed, 12);
        let cfg = KernelConfig { bins: 6, ..KernelConfig::default() };
        let set = assemble_graph_set(&t, &cfg, GraphMask::all()).unwrap();
        for m in set.matrices() {
            prop_assert!(m.is_symmetric() && m.has_zero_diagonal());
            let (lo, hi) = m.value_range();
            let bounds = match m.kind() {
                GraphKind::Functionality | GraphKind::Temporal => (-1.0, 1.0),
                _ => (0.0, 1.0),
            };
            prop_assert!(lo >= bounds.0 && hi <= bounds.1, "{:?} range {lo}..{hi}", m.kind());
            if m.kind() == GraphKind::Neighbor {
                prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn graphs_are_permutation_equivariant(seed in 0u64..10_000, rot in 1usize..12) {
        let t = common::random_table(seed, 12);
        let n = t.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let mut recs = t.records();
        recs = perm.iter().map(|&p| recs[p].clone()).collect();
        let pt = NodeTable::new(recs).unwrap();
        let cfg = KernelConfig { bins: 6, ..KernelConfig::default() };
        let a = assemble_graph_set(&t, &cfg, GraphMask::all()).unwrap();
        let b = assemble_graph_set(&pt, &cfg, GraphMask::all()).unwrap();
        for (ma, mb) in a.matrices().iter().zip(b.matrices()) {
            for i in 0..n {
                for j in 0..n {
                    let d = (mb.get(i, j) - ma.get(perm[i], perm[j])).abs();
                    prop_assert!(d < 1e-12, "{:?} ({i},{j}) off by {d}", ma.kind());
                }
            }
        }
    }

    #[test]
    fn functionality_graph_ignores_common_scale(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let t = common::random_table(seed, 10);
        let mut recs = t.records();
        for r in &mut recs {
            r.functions.iter_mut().for_each(|f| *f *= c);
        }
        let cfg = KernelConfig::default();
        let a = build_functionality_graph(&t, &cfg).unwrap();
        let b = build_functionality_graph(&NodeTable::new(recs).unwrap(), &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scaler_round_trips(data in prop::collection::vec(-50.0f64..50.0, 30), cut in 2usize..10) {
        let series = Array::new(vec![10, 3], data).unwrap();
        let s = Scaler::fit(&series, 0..cut).unwrap();
        let back = s.unscale(&s.scale(&series));
        prop_assert!(back.max_abs_diff(&series) < 1e-9);
        let scaled = s.scale(&series);
        for t in 0..cut {
            for j in 0..3 {
                if !s.constant[j] {
                    let v = scaled.get(&[t, j]);
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(errors in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        let len = errors.len();
        let m = evaluate(&Array::from_vec(errors), &Array::zeros(vec![len])).unwrap();
        prop_assert!(m.rmse >= m.mae);
    }

    #[test]
    fn normalised_adjacency_is_symmetric_and_bounded(w in array(vec![5, 5])) {
        let mut sym = w.clone();
        for i in 0..5 {
            for j in 0..5 {
                sym.set(&[i, j], w.get(&[i, j]) + w.get(&[j, i]));
            }
        }
        let mut tape = Tape::new();
        let v = tape.constant(sym);
        let a = normalize_adjacency(&mut tape, v).unwrap();
        let a = tape.value(a);
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!((a.get(&[i, j]) - a.get(&[j, i])).abs() < 1e-15);
                prop_assert!((0.0..=1.0).contains(&a.get(&[i, j])));
            }
        }
    }
}
