#![allow(dead_code)]

use std::collections::BTreeMap;

use weem_core::baselines::AnnotationMatrix;
use weem_core::data::{AnnotationRecord, Dataset, LabelSchema, Qualification, TextUnit};

pub fn record(text: &str, annotator: &str, tp: u64, wt: f64, labels: &[(&str, i64)]) -> AnnotationRecord {
    AnnotationRecord {
        text_id: text.into(),
        annotator_id: annotator.into(),
        labels: labels.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        worktime_s: wt,
        annotator_throughput: tp,
        qualification: Qualification::Unknown,
    }
}

pub fn dataset(texts: &[(&str, &str)], records: Vec<AnnotationRecord>, target: &str, aux: &[&str]) -> Dataset {
    let texts = texts.iter().map(|&(id, t)| TextUnit { text_id: id.into(), text: t.into() }).collect();
    let schema = LabelSchema::new(target, aux.iter().map(|s| s.to_string()).collect());
    Dataset::new(texts, records, schema, BTreeMap::new()).unwrap()
}

/// Three texts, two auxiliary labels (`a`, `b`) and target `y`.
pub fn three_text_fixture() -> Dataset {
    let texts = [("t1", "the cat sat"), ("t2", "a much longer second text here"), ("t3", "short one")];
    let recs = vec![
        record("t1", "A", 10, 30.0, &[("a", 1), ("b", 0), ("y", 1)]),
        record("t1", "B", 50, 90.0, &[("a", 1), ("b", 1), ("y", 0)]),
        record("t2", "A", 10, 60.0, &[("a", 0), ("b", 0), ("y", 0)]),
        record("t2", "C", 100, 20.0, &[("a", 0), ("b", 1), ("y", 1)]),
        record("t2", "B", 50, 120.0, &[("a", 1), ("b", 1), ("y", 1)]),
        record("t3", "C", 100, 200.0, &[("a", 1), ("b", 1), ("y", 1)]),
        record("t3", "A", 10, 40.0, &[("a", 1), ("b", 0), ("y", 0)]),
    ];
    dataset(&texts, recs, "y", &["a", "b"])
}

/// Expected weights for [`three_text_fixture`], as exact fractions
/// `(numerator, denominator)` per text in the order TP1..TP4, WT1, WT2, PC1,
/// PC2, TL1, TL2, SP1, SP2, SP3; then PC3 per label.
pub const FIXTURE_EXPECTED: [([(u64, u64); 13], [(u64, u64); 2]); 3] = [
    (
        [(4, 9), (16, 81), (0, 1), (105232, 111537), (2, 5), (9, 64), (1, 1), (1, 1), (11, 30), (1, 2), (26, 81), (173, 640), (1, 1)],
        [(1, 1), (1, 2)],
    ),
    (
        [(26, 27), (488, 729), (0, 1), (8741200, 9034497), (7, 15), (19, 72), (8, 9), (0, 1), (1, 1), (1, 1), (595, 729), (263, 720), (4, 9)],
        [(2, 3), (2, 3)],
    ),
    (
        [(1, 1), (1, 1), (0, 1), (1, 1), (1, 1), (1, 1), (1, 1), (1, 1), (3, 10), (1, 3), (1, 1), (1, 1), (1, 1)],
        [(1, 1), (1, 2)],
    ),
];

/// Macro-F1 from per-class precision and recall over the classes present in
/// either list. An undefined precision or recall counts as 0.
pub fn macro_f1_oracle<L: PartialEq + Copy>(preds: &[L], golds: &[L]) -> f64 {
    let mut classes: Vec<L> = Vec::new();
    for &c in preds.iter().chain(golds) {
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    let f1s = classes.iter().map(|&c| {
        let pairs = || preds.iter().zip(golds);
        let predicted = pairs().filter(|(p, _)| **p == c).count() as f64;
        let actual = pairs().filter(|(_, g)| **g == c).count() as f64;
        let hit = pairs().filter(|(p, g)| **p == c && **g == c).count() as f64;
        let precision = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let recall = if actual > 0.0 { hit / actual } else { 0.0 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    });
    f1s.sum::<f64>() / classes.len() as f64
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with step `h`. Components where both are below `floor` count as
/// matching.
pub fn grad_check(params: &[f64], analytic: &[f64], h: f64, floor: f64, loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < floor {
            continue;
        }
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// (predictions, golds, hand-computed macro-F1)
pub fn macro_f1_fixtures() -> Vec<(Vec<i64>, Vec<i64>, f64)> {
    let mut imbalanced = vec![0; 90];
    imbalanced.extend([1; 10]);
    vec![
        (vec![1, 1, 0, 0], vec![1, 0, 1, 0], 0.5),
        (vec![0, 1, 1], vec![0, 1, 1], 1.0),
        (vec![1, 0], vec![0, 1], 0.0),
        (vec![0; 100], imbalanced, 9.0 / 19.0),
        (vec![0, 1, 2, 2, 1], vec![0, 1, 1, 2, 2], 2.0 / 3.0),
        (vec![0, 0, 2], vec![0, 0, 0], 0.4),
        (vec![1, 1, 1, 1], vec![1, 1, 1, 0], 3.0 / 7.0),
        (vec![5, 5], vec![5, 5], 1.0),
        (vec![0, 1, 0, 1, 1, 1], vec![0, 0, 0, 1, 1, 1], 29.0 / 35.0),
        (vec![2, 2, 2], vec![0, 1, 2], 1.0 / 6.0),
    ]
}

/// Annotators A and B agree on every item; C always answers 1.
pub fn spammer_matrix() -> AnnotationMatrix {
    let honest = [0, 1, 0, 1, 1, 0];
    let items = honest.iter().map(|&c| vec![(0, c), (1, c), (2, 1)]).collect();
    let ids = (0..6).map(|i| format!("i{i}")).collect();
    AnnotationMatrix::new(ids, vec!["A".into(), "B".into(), "C".into()], 2, items).unwrap()
}

/// Joint over (true label, spam indicators) summed out by enumeration.
pub fn brute_posterior(anns: &[(usize, usize)], spam: &[f64], spam_labels: &[Vec<f64>], k: usize) -> (Vec<f64>, f64) {
    let mut joint = vec![0.0; k];
    for (t, slot) in joint.iter_mut().enumerate() {
        for mask in 0..1u32 << anns.len() {
            let mut p = 1.0 / k as f64;
            for (j, &(m, a)) in anns.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    p *= spam[m] * spam_labels[m][a];
                } else {
                    p *= (1.0 - spam[m]) * if a == t { 1.0 } else { 0.0 };
                }
            }
            *slot += p;
        }
    }
    let z: f64 = joint.iter().sum();
    (joint.iter().map(|p| p / z).collect(), z)
}

/// Log likelihood by enumeration plus the smoothing prior.
pub fn brute_objective(m: &AnnotationMatrix, spam: &[f64], spam_labels: &[Vec<f64>], s: f64) -> f64 {
    let ll: f64 = (0..m.n_items()).map(|i| brute_posterior(m.annotations(i), spam, spam_labels, m.n_classes()).1.ln()).sum();
    let prior: f64 = spam
        .iter()
        .zip(spam_labels)
        .map(|(&th, xi)| s * (th.ln() + (1.0 - th).ln()) + xi.iter().map(|x| s * x.ln()).sum::<f64>())
        .sum();
    ll + prior
}
