use hrshift_core::group::{group_test, reml_fit, reml_objective, GroupSample};
use hrshift_core::mt::{inheritance_reject, tree_selective_fdr, HypothesisTree, WeightScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const ALPHA: f64 = 0.05;

#[test]
fn reml_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let n = rng.random_range(5..40);
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..3.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.5)).collect();
        let s = GroupSample::new(gamma.clone(), v.clone()).unwrap();
        let fit = reml_fit(&s).unwrap();
        let mean = gamma.iter().sum::<f64>() / n as f64;
        let upper = 1e3 * gamma.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let (mut best, mut best_s) = (f64::INFINITY, 0.0);
        for k in 0..=200_000 {
            let s2 = upper * (k as f64 / 200_000.0).powi(3);
            let o = reml_objective(&s, s2);
            if o < best {
                best = o;
                best_s = s2;
            }
        }
        assert!(reml_objective(&s, fit.sigma_b2) <= best + 1e-9, "{} vs grid {}", fit.sigma_b2, best_s);

        // Test statistics from their definitions.
        let w: Vec<f64> = v.iter().map(|vi| 1.0 / (fit.sigma_b2 + vi)).collect();
        let sw: f64 = w.iter().sum();
        let eta = w.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>() / sw;
        let sr = w.iter().zip(&gamma).map(|(a, g)| a * (g - eta).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let r = group_test(&s).unwrap();
        assert!((r.eta - eta).abs() < 1e-12);
        assert!((r.t_wald - eta * sw.sqrt()).abs() < 1e-9);
        assert!((r.t_kh - eta / (sr / sw).sqrt()).abs() < 1e-9);
        let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0).unwrap();
        assert!((r.p_kh - 2.0 * (1.0 - t.cdf(r.t_kh.abs()))).abs() < 1e-9);
    }
}

/// One ROI with four change-point nodes (negative: one, positive: three),
/// each with the seven shape-parameter leaves.
fn roi_tree(leaf_p: &[[f64; 7]; 4], roi_p: f64) -> HypothesisTree {
    let mut t = HypothesisTree::new();
    let roi = t.add_root("roi", Some(roi_p));
    let neg = t.add_child(roi, "neg", Some(0.0)).unwrap();
    let pos = t.add_child(roi, "pos", Some(0.0)).unwrap();
    for (k, ps) in leaf_p.iter().enumerate() {
        let parent = if k == 0 { neg } else { pos };
        let cp = t.add_child(parent, format!("cp{k}"), Some(0.0)).unwrap();
        for (j, p) in ps.iter().enumerate() {
            t.add_child(cp, format!("s{j}"), Some(*p)).unwrap();
        }
    }
    t
}

#[test]
fn leaf_budgets_follow_rejections() {
    // Seven leaves under one change point: three fall at α/(56·7), after which the
    // others are compared at α/(56·4); one more then falls and the last
    // three sit at α/(56·3).
    let mut leaves = [[0.9; 7]; 4];
    leaves[1] = [0.00009, 0.14154, 0.01261, 0.0, 0.00022, 0.00001, 0.36263];
    let mut full = HypothesisTree::new();
    let mut ids = Vec::new();
    for r in 0..14 {
        let roi = full.add_root(format!("roi{r}"), Some(if r == 0 { 0.0 } else { 0.9 }));
        let neg = full.add_child(roi, "neg", Some(0.9)).unwrap();
        let pos = full.add_child(roi, "pos", Some(if r == 0 { 0.0 } else { 0.9 })).unwrap();
        for (k, ps) in leaves.iter().enumerate() {
            let parent = if k == 0 { neg } else { pos };
            let cp = full.add_child(parent, format!("cp{k}"), Some(if r == 0 && k == 1 { 0.0 } else { 0.9 })).unwrap();
            for (j, p) in ps.iter().enumerate() {
                let id = full.add_child(cp, format!("s{j}"), Some(if r == 0 { *p } else { 0.9 })).unwrap();
                if r == 0 && k == 1 {
                    ids.push(id);
                }
            }
        }
    }
    let out = inheritance_reject(&full, ALPHA, WeightScheme::LeafCount).unwrap();
    let c = |i: usize| out.node(ids[i]).critical.unwrap();
    let rej = |i: usize| out.node(ids[i]).rejected;
    for i in [0, 3, 5] {
        assert!(rej(i));
        assert!((c(i) - ALPHA / (56.0 * 7.0)).abs() < 1e-15);
    }
    assert!(rej(4));
    assert!((c(4) - ALPHA / (56.0 * 4.0)).abs() < 1e-15);
    for i in [1, 2, 6] {
        assert!(!rej(i));
        assert!((c(i) - ALPHA / (56.0 * 3.0)).abs() < 1e-15);
    }
}

#[test]
fn equal_scheme_splits_at_each_branching() {
    let t = roi_tree(&[[0.0; 7]; 4], 0.0);
    let out = inheritance_reject(&t, ALPHA, WeightScheme::Equal).unwrap();
    let neg = out.find("roi/neg").unwrap();
    let pos = out.find("roi/pos").unwrap();
    assert!((out.node(neg).critical.unwrap() - ALPHA / 2.0).abs() < 1e-15);
    assert!((out.node(pos).critical.unwrap() - ALPHA / 2.0).abs() < 1e-15);
    assert!(out.rejected_leaves().len() == 28);
}

#[test]
fn selective_fdr_levels_shrink_with_selection() {
    let mut t = HypothesisTree::new();
    let a = t.add_root("a", None);
    let b = t.add_root("b", None);
    t.add_child(a, "a1", Some(0.001)).unwrap();
    t.add_child(a, "a2", Some(0.02)).unwrap();
    t.add_child(b, "b1", Some(0.6)).unwrap();
    t.add_child(b, "b2", Some(0.7)).unwrap();
    let out = tree_selective_fdr(&t, ALPHA).unwrap();
    assert!(out.node(a).rejected && !out.node(b).rejected);
    // One of two roots selected: the family under `a` is tested at q/2.
    let a2 = out.find("a/a2").unwrap();
    assert!((out.node(a2).critical.unwrap() - ALPHA / 2.0).abs() < 1e-15);
    assert!(out.node(a2).rejected);
    assert!(out.node(out.find("b/b1").unwrap()).critical.is_none());
    let json = serde_json::to_string(&out.records()).unwrap();
    assert!(json.contains("\"path\":\"a/a1\""));
}
