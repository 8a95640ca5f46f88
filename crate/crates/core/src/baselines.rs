//! Label-aggregation baselines: majority vote and MACE.
//!
//! MACE's generative story: the true label `T_i` is uniform over `K` classes;
//! each annotation draws a spam indicator `S ~ Bernoulli(theta_m)`; a
//! non-spamming annotator reports `T_i`, a spamming one draws from `xi_m`.
//! Parameters are fitted by EM with additive pseudo-counts, which makes EM
//! ascend the log posterior (log likelihood plus the log prior implied by the
//! pseudo-counts).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::Scalar;

/// Modal label; ties resolve to the lowest label.
pub fn majority_vote<L: Ord + Copy>(labels: &[L]) -> Result<L> {
    let mut counts: BTreeMap<L, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending label order, so the first maximum wins.
    let mut best: Option<(L, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| Error::arg("majority vote of an empty label list"))
}

/// Sparse items x annotators matrix of class indices in `[0, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationMatrix {
    item_ids: Vec<String>,
    annotator_ids: Vec<String>,
    k: usize,
    /// Raw label value for each class index.
    class_values: Vec<i64>,
    items: Vec<Vec<(usize, usize)>>,
}

impl AnnotationMatrix {
    /// `items[i]` lists `(annotator index, class)` pairs for item `i`.
    pub fn new(
        item_ids: Vec<String>,
        annotator_ids: Vec<String>,
        k: usize,
        items: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::arg("MACE needs at least two label classes"));
        }
        if item_ids.len() != items.len() {
            return Err(Error::Shape { expected: item_ids.len(), got: items.len() });
        }
        for (i, anns) in items.iter().enumerate() {
            if anns.is_empty() {
                return Err(Error::arg(format!("item '{}' has no annotations", item_ids[i])));
            }
            for &(m, c) in anns {
                if m >= annotator_ids.len() || c >= k {
                    return Err(Error::arg(format!(
                        "item '{}' has annotation ({m}, {c}) outside {} annotators x {k} classes",
                        item_ids[i],
                        annotator_ids.len()
                    )));
                }
            }
        }
        Ok(AnnotationMatrix { item_ids, annotator_ids, k, class_values: (0..k as i64).collect(), items })
    }

    /// Builds the matrix for one label of a dataset. Texts without any vote on
    /// that label are left out.
    pub fn from_dataset(dataset: &Dataset, label: &str) -> Result<Self> {
        let mut values = BTreeSet::new();
        for r in dataset.records() {
            if let Some(&v) = r.labels.get(label) {
                values.insert(v);
            }
        }
        let mut class_values: Vec<i64> = values.into_iter().collect();
        while class_values.len() < 2 {
            let next = class_values.last().map_or(0, |v| v + 1);
            class_values.push(next);
        }
        let class_of: HashMap<i64, usize> = class_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut annotators: BTreeMap<String, usize> = BTreeMap::new();
        for r in dataset.records() {
            let n = annotators.len();
            annotators.entry(r.annotator_id.clone()).or_insert(n);
        }
        let mut annotator_ids = vec![String::new(); annotators.len()];
        for (id, &i) in &annotators {
            annotator_ids[i] = id.clone();
        }
        let mut item_ids = Vec::new();
        let mut items = Vec::new();
        for (ti, text) in dataset.texts().iter().enumerate() {
            let anns: Vec<(usize, usize)> = dataset
                .records_for(ti)
                .filter_map(|r| r.labels.get(label).map(|v| (annotators[&r.annotator_id], class_of[v])))
                .collect();
            if !anns.is_empty() {
                item_ids.push(text.text_id.clone());
                items.push(anns);
            }
        }
        let k = class_values.len();
        let mut m = AnnotationMatrix::new(item_ids, annotator_ids, k, items)?;
        m.class_values = class_values;
        Ok(m)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_annotators(&self) -> usize {
        self.annotator_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    pub fn class_values(&self) -> &[i64] {
        &self.class_values
    }

    pub fn annotations(&self, item: usize) -> &[(usize, usize)] {
        &self.items[item]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaceConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Additive pseudo-count applied to every spam and label count.
    pub smoothing: f64,
}

impl Default for MaceConfig {
    fn default() -> Self {
        MaceConfig { max_iterations: 1000, tolerance: 1e-12, restarts: 10, seed: 0, smoothing: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaceModel<T> {
    pub item_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    pub class_values: Vec<i64>,
    /// Per-annotator spamming probability.
    pub spam: Vec<T>,
    /// Per-annotator label distribution used while spamming.
    pub spam_labels: Vec<Vec<T>>,
    /// Per-item posterior over true classes at the fitted parameters.
    pub posteriors: Vec<Vec<T>>,
    pub log_likelihood: T,
    /// Log likelihood plus the log prior implied by the smoothing.
    pub log_objective: T,
    pub iterations: usize,
    pub smoothing: T,
}

impl<T: Scalar> MaceModel<T> {
    /// Class index with the highest posterior; ties go to the lower class.
    pub fn hard_label(&self, item: usize) -> usize {
        argmax_low(&self.posteriors[item])
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == item_id)
    }

    /// Writes `item_id,label,posterior` rows.
    pub fn write_posteriors<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item_id", "label", "posterior"])?;
        for (id, post) in self.item_ids.iter().zip(&self.posteriors) {
            for (c, p) in post.iter().enumerate() {
                w.write_record([id.clone(), self.class_values[c].to_string(), p.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn argmax_low<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Posterior of `item_id` over raw label values.
pub fn mace_posterior<'a, T: Scalar>(model: &'a MaceModel<T>, item_id: &str) -> Result<&'a [T]> {
    model
        .item_index(item_id)
        .map(|i| model.posteriors[i].as_slice())
        .ok_or_else(|| Error::Lookup(format!("item '{item_id}' is not in the model")))
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

struct EStep<T> {
    log_likelihood: T,
    posteriors: Vec<Vec<T>>,
    spam_counts: Vec<T>,
    spam_label_counts: Vec<Vec<T>>,
}

fn e_step<T: Scalar>(matrix: &AnnotationMatrix, spam: &[T], spam_labels: &[Vec<T>]) -> EStep<T> {
    let k = matrix.k;
    let ln_k = T::of_usize(k).ln();
    let mut log_likelihood = T::zero();
    let mut posteriors = Vec::with_capacity(matrix.n_items());
    let mut spam_counts = vec![T::zero(); matrix.n_annotators()];
    let mut spam_label_counts = vec![vec![T::zero(); k]; matrix.n_annotators()];
    let mut log_l = vec![T::zero(); k];
    for anns in &matrix.items {
        for (t, ll) in log_l.iter_mut().enumerate() {
            *ll = anns
                .iter()
                .map(|&(m, a)| annotation_prob(spam[m], spam_labels[m][a], a == t).ln())
                .sum();
        }
        let lse = log_sum_exp(&log_l);
        log_likelihood = log_likelihood + lse - ln_k;
        let post: Vec<T> = log_l.iter().map(|&x| (x - lse).exp()).collect();
        for &(m, a) in anns {
            let spammed = spam[m] * spam_labels[m][a];
            let p_spam: T = post
                .iter()
                .enumerate()
                .map(|(t, &pt)| pt * spammed / annotation_prob(spam[m], spam_labels[m][a], a == t))
                .sum();
            spam_counts[m] = spam_counts[m] + p_spam;
            spam_label_counts[m][a] = spam_label_counts[m][a] + p_spam;
        }
        posteriors.push(post);
    }
    EStep { log_likelihood, posteriors, spam_counts, spam_label_counts }
}

fn annotation_prob<T: Scalar>(spam: T, spam_label: T, matches: bool) -> T {
    let honest = if matches { T::one() - spam } else { T::zero() };
    honest + spam * spam_label
}

fn log_prior<T: Scalar>(spam: &[T], spam_labels: &[Vec<T>], s: T) -> T {
    spam.iter()
        .zip(spam_labels)
        .map(|(&th, xi)| s * (th.ln() + (T::one() - th).ln()) + xi.iter().map(|&x| s * x.ln()).sum::<T>())
        .sum()
}

fn annotations_per_annotator(matrix: &AnnotationMatrix) -> Vec<usize> {
    let mut n = vec![0usize; matrix.n_annotators()];
    for anns in &matrix.items {
        for &(m, _) in anns {
            n[m] += 1;
        }
    }
    n
}

/// Runs EM from the given starting parameters until the objective improves by
/// less than the tolerance.
pub fn mace_em_from<T: Scalar>(
    matrix: &AnnotationMatrix,
    mut spam: Vec<T>,
    mut spam_labels: Vec<Vec<T>>,
    config: &MaceConfig,
) -> Result<MaceModel<T>> {
    let k = matrix.k;
    let s = T::of(config.smoothing);
    if !(config.smoothing > 0.0) {
        return Err(Error::arg("MACE smoothing must be positive"));
    }
    if spam.len() != matrix.n_annotators() || spam_labels.len() != matrix.n_annotators() {
        return Err(Error::Shape { expected: matrix.n_annotators(), got: spam.len() });
    }
    let per_annotator = annotations_per_annotator(matrix);
    let tol = T::of(config.tolerance);
    let slack = T::of(1e-9).max(T::epsilon() * T::of(100.0));
    let mut prev: Option<T> = None;
    let mut iterations = 0;
    loop {
        let e = e_step(matrix, &spam, &spam_labels);
        let objective = e.log_likelihood + log_prior(&spam, &spam_labels, s);
        if !objective.is_finite() {
            return Err(Error::Internal(format!("MACE objective became {objective}")));
        }
        let converged = match prev {
            Some(p) => {
                if objective < p - slack * T::one().max(p.abs()) {
                    return Err(Error::Internal(format!(
                        "MACE objective decreased from {p} to {objective} at iteration {iterations}"
                    )));
                }
                objective - p < tol
            }
            None => false,
        };
        if converged || iterations >= config.max_iterations {
            return Ok(MaceModel {
                item_ids: matrix.item_ids.clone(),
                annotator_ids: matrix.annotator_ids.clone(),
                class_values: matrix.class_values.clone(),
                spam,
                spam_labels,
                posteriors: e.posteriors,
                log_likelihood: e.log_likelihood,
                log_objective: objective,
                iterations,
                smoothing: s,
            });
        }
        prev = Some(objective);
        iterations += 1;
        for m in 0..matrix.n_annotators() {
            let n = T::of_usize(per_annotator[m]);
            spam[m] = (e.spam_counts[m] + s) / (n + s + s);
            let denom = e.spam_counts[m] + s * T::of_usize(k);
            for c in 0..k {
                spam_labels[m][c] = (e.spam_label_counts[m][c] + s) / denom;
            }
        }
    }
}

/// Fits MACE by EM from `restarts` random initializations, keeping the one
/// with the highest objective.
pub fn mace_fit<T: Scalar>(matrix: &AnnotationMatrix, config: &MaceConfig) -> Result<MaceModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<MaceModel<T>> = None;
    for _ in 0..config.restarts.max(1) {
        let spam: Vec<T> = (0..matrix.n_annotators()).map(|_| T::of(rng.random_range(0.05..0.95))).collect();
        let spam_labels: Vec<Vec<T>> = (0..matrix.n_annotators())
            .map(|_| {
                let raw: Vec<f64> = (0..matrix.k).map(|_| rng.random_range(0.1..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|&x| T::of(x / z)).collect()
            })
            .collect();
        let fit = mace_em_from(matrix, spam, spam_labels, config)?;
        if best.as_ref().is_none_or(|b| fit.log_objective > b.log_objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
