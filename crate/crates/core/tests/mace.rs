mod common;

use weem_core::baselines::{mace_em_from, mace_fit, mace_posterior, majority_vote, AnnotationMatrix, MaceConfig};

use common::{brute_objective, brute_posterior, spammer_matrix};

#[test]
fn planted_spammer_gets_highest_spam_probability() {
    let model = mace_fit::<f64>(&spammer_matrix(), &MaceConfig::default()).unwrap();
    let (c, rest) = (model.spam[2], &model.spam[..2]);
    assert!(rest.iter().all(|&s| s < c), "{:?}", model.spam);
}

#[test]
fn posteriors_match_enumeration() {
    let m = spammer_matrix();
    let model = mace_fit::<f64>(&m, &MaceConfig::default()).unwrap();
    for i in 0..m.n_items() {
        let (want, _) = brute_posterior(m.annotations(i), &model.spam, &model.spam_labels, 2);
        for (a, b) in model.posteriors[i].iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "item {i}: {a} vs {b}");
        }
    }
    let obj = brute_objective(&m, &model.spam, &model.spam_labels, 0.5);
    assert!((obj - model.log_objective).abs() < 1e-9);
    assert_eq!(mace_posterior(&model, "i1").unwrap(), model.posteriors[1].as_slice());
    assert!(mace_posterior(&model, "zzz").is_err());
}

#[test]
fn fit_is_at_least_as_good_as_an_initialization_grid() {
    let m = spammer_matrix();
    let cfg = MaceConfig::default();
    let model = mace_fit::<f64>(&m, &cfg).unwrap();
    let levels = [0.2, 0.5, 0.8];
    let mut best = f64::NEG_INFINITY;
    for code in 0..27 * 8 {
        let spam: Vec<f64> = (0..3).map(|j| levels[code / 3usize.pow(j) % 3]).collect();
        let xi: Vec<Vec<f64>> = (0..3).map(|j| {
            let p = if (code / 27) >> j & 1 == 1 { 0.75 } else { 0.25 };
            vec![1.0 - p, p]
        }).collect();
        let fit = mace_em_from::<f64>(&m, spam, xi, &cfg).unwrap();
        best = best.max(fit.log_objective);
    }
    assert!(model.log_objective >= best - 1e-6, "{} < {best}", model.log_objective);

    // Direct search over the parameters themselves.
    let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let mut direct = f64::NEG_INFINITY;
    for &a in &grid {
        for &c in &grid {
            for &xc in &grid {
                let spam = [a, a, c];
                let xi = [vec![0.5, 0.5], vec![0.5, 0.5], vec![1.0 - xc, xc]];
                direct = direct.max(brute_objective(&m, &spam, &xi, 0.5));
            }
        }
    }
    assert!(model.log_objective >= direct - 1e-6);
}

#[test]
fn objective_never_decreases() {
    let m = spammer_matrix();
    let mut prev = f64::NEG_INFINITY;
    for iters in 0..30 {
        let cfg = MaceConfig { max_iterations: iters, tolerance: 0.0, ..MaceConfig::default() };
        let fit = mace_em_from::<f64>(&m, vec![0.5, 0.3, 0.6], vec![vec![0.4, 0.6]; 3], &cfg).unwrap();
        assert!(fit.log_objective >= prev - 1e-12);
        prev = fit.log_objective;
    }
}

#[test]
fn swapping_labels_swaps_posteriors() {
    let m = spammer_matrix();
    let swapped_items = (0..m.n_items()).map(|i| m.annotations(i).iter().map(|&(a, c)| (a, 1 - c)).collect()).collect();
    let s = AnnotationMatrix::new(m.item_ids().to_vec(), m.annotator_ids().to_vec(), 2, swapped_items).unwrap();
    let a = mace_fit::<f64>(&m, &MaceConfig::default()).unwrap();
    let b = mace_fit::<f64>(&s, &MaceConfig::default()).unwrap();
    assert!((a.log_objective - b.log_objective).abs() < 1e-6);
    for i in 0..m.n_items() {
        assert!((a.posteriors[i][0] - b.posteriors[i][1]).abs() < 1e-6);
        assert_eq!(a.hard_label(i), 1 - b.hard_label(i));
    }
}

#[test]
fn noiseless_annotators_recover_gold() {
    let gold: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 3 % 2).collect();
    let items = gold.iter().map(|&g| (0..5).map(|a| (a, g)).collect()).collect();
    let m = AnnotationMatrix::new(
        (0..20).map(|i| format!("i{i}")).collect(),
        (0..5).map(|a| format!("a{a}")).collect(),
        2,
        items,
    )
    .unwrap();
    let model = mace_fit::<f64>(&m, &MaceConfig::default()).unwrap();
    for (i, &g) in gold.iter().enumerate() {
        assert_eq!(model.hard_label(i), g);
        assert_eq!(majority_vote(&[g, g, g]).unwrap(), g);
    }
}

#[test]
fn unanimous_item_is_confident() {
    let m = AnnotationMatrix::new(vec!["i".into()], vec!["a".into(), "b".into(), "c".into()], 2, vec![vec![
        (0, 1),
        (1, 1),
        (2, 1),
    ]])
    .unwrap();
    let model = mace_fit::<f64>(&m, &MaceConfig::default()).unwrap();
    assert!(model.posteriors[0][1] > 0.9, "{:?}", model.posteriors[0]);
}

#[test]
fn matrix_validation() {
    let ids = vec!["i".to_string()];
    let anns = vec!["a".to_string()];
    assert!(AnnotationMatrix::new(ids.clone(), anns.clone(), 1, vec![vec![(0, 0)]]).is_err());
    assert!(AnnotationMatrix::new(ids.clone(), anns.clone(), 2, vec![vec![]]).is_err());
    assert!(AnnotationMatrix::new(ids, anns, 2, vec![vec![(1, 0)]]).is_err());
}
