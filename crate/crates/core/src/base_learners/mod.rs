//! Per-label binary classifiers producing positive-class probabilities, and
//! the import boundary for encodings computed elsewhere.

mod encodings;
mod features;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::optim::{self, balanced_class_weights, sigmoid, softplus, EarlyStopping, TrainConfig, ValScore};
use crate::Scalar;

pub use encodings::{import_external_encodings, write_encodings, EncodingTable};
pub use features::{
    augment_with_annotator_ids, featurize_text, hash_bucket, ngram_counts, ngrams, AnnotatorVocab, FeatureVector,
    FeaturizerConfig,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    #[default]
    Logistic,
    Mlp,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(LearnerKind::Logistic),
            "mlp" => Ok(LearnerKind::Mlp),
            _ => Err(Error::Config(format!("unknown learner kind '{s}', expected logistic or mlp"))),
        }
    }
}

/// Parameter layout of a base learner.
///
/// Logistic: `[w (input_dim), b]`. MLP: `[W1 (input_dim x hidden, row per
/// input), b1 (hidden), w2 (hidden), b2]` with a rectifier hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: LearnerKind,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Architecture {
    pub fn logistic(input_dim: usize) -> Self {
        Architecture { kind: LearnerKind::Logistic, input_dim, hidden: 0 }
    }

    pub fn mlp(input_dim: usize, hidden: usize) -> Self {
        Architecture { kind: LearnerKind::Mlp, input_dim, hidden }
    }

    pub fn n_params(&self) -> usize {
        match self.kind {
            LearnerKind::Logistic => self.input_dim + 1,
            LearnerKind::Mlp => self.input_dim * self.hidden + 2 * self.hidden + 1,
        }
    }

    /// Logistic starts at zero; the MLP uses Glorot-uniform weights.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut p = vec![T::zero(); self.n_params()];
        if self.kind == LearnerKind::Mlp {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = self.hidden;
            let a1 = (6.0 / (self.input_dim + h) as f64).sqrt();
            for w in &mut p[..self.input_dim * h] {
                *w = T::of(rng.random_range(-a1..a1));
            }
            let a2 = (6.0 / (h + 1) as f64).sqrt();
            let off = self.input_dim * h + h;
            for w in &mut p[off..off + h] {
                *w = T::of(rng.random_range(-a2..a2));
            }
        }
        p
    }

    fn check_dim<T: Scalar>(&self, x: &FeatureVector<T>) -> Result<()> {
        if x.dim() != self.input_dim {
            return Err(Error::Model(format!(
                "feature dimension {} does not match model input dimension {}",
                x.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Pre-sigmoid output for one example.
    pub fn logit<T: Scalar>(&self, params: &[T], x: &FeatureVector<T>) -> T {
        match self.kind {
            LearnerKind::Logistic => x.dot(params) + params[self.input_dim],
            LearnerKind::Mlp => {
                let h = self.hidden;
                let mut act = vec![T::zero(); h];
                self.hidden_pre(params, x, &mut act);
                let (w2, b2) = self.head(params);
                act.iter().zip(w2).fold(b2, |acc, (&a, &w)| acc + a.max(T::zero()) * w)
            }
        }
    }

    fn hidden_pre<T: Scalar>(&self, params: &[T], x: &FeatureVector<T>, out: &mut [T]) {
        let h = self.hidden;
        let b1 = &params[self.input_dim * h..self.input_dim * h + h];
        out.copy_from_slice(b1);
        for (d, v) in x.iter() {
            let row = &params[d * h..(d + 1) * h];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w * v;
            }
        }
    }

    fn head<'a, T: Scalar>(&self, params: &'a [T]) -> (&'a [T], T) {
        let off = self.input_dim * self.hidden + self.hidden;
        (&params[off..off + self.hidden], params[off + self.hidden])
    }

    /// Class- and sample-weighted binary cross-entropy over `batch`, divided by
    /// the batch's total sample weight. Writes the gradient into `grad`.
    pub fn loss_grad<T: Scalar>(
        &self,
        params: &[T],
        data: &TrainingSet<'_, T>,
        class_weights: [T; 2],
        batch: &[usize],
        grad: &mut [T],
    ) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let total = data.weight_sum(batch);
        let mut loss = T::zero();
        let h = self.hidden;
        let mut pre = vec![T::zero(); h];
        for &i in batch {
            let x = &data.features[i];
            let y = data.labels[i];
            let w = data.sample_weight(i) * class_weights[usize::from(y)] / total;
            let yt = if y { T::one() } else { T::zero() };
            match self.kind {
                LearnerKind::Logistic => {
                    let z = self.logit(params, x);
                    loss = loss + w * (softplus(z) - yt * z);
                    let dz = w * (sigmoid(z) - yt);
                    for (d, v) in x.iter() {
                        grad[d] = grad[d] + dz * v;
                    }
                    grad[self.input_dim] = grad[self.input_dim] + dz;
                }
                LearnerKind::Mlp => {
                    self.hidden_pre(params, x, &mut pre);
                    let (w2, b2) = self.head(params);
                    let z = pre.iter().zip(w2).fold(b2, |acc, (&a, &w)| acc + a.max(T::zero()) * w);
                    loss = loss + w * (softplus(z) - yt * z);
                    let dz = w * (sigmoid(z) - yt);
                    let off = self.input_dim * h + h;
                    for k in 0..h {
                        grad[off + k] = grad[off + k] + dz * pre[k].max(T::zero());
                    }
                    grad[off + h] = grad[off + h] + dz;
                    let b1_off = self.input_dim * h;
                    for k in 0..h {
                        if pre[k] > T::zero() {
                            let dpre = dz * w2[k];
                            grad[b1_off + k] = grad[b1_off + k] + dpre;
                            for (d, v) in x.iter() {
                                grad[d * h + k] = grad[d * h + k] + dpre * v;
                            }
                        }
                    }
                }
            }
        }
        loss
    }

    pub fn loss<T: Scalar>(&self, params: &[T], data: &TrainingSet<'_, T>, class_weights: [T; 2]) -> T {
        let all: Vec<usize> = (0..data.len()).collect();
        let total = data.weight_sum(&all);
        all.iter()
            .map(|&i| {
                let z = self.logit(params, &data.features[i]);
                let y = data.labels[i];
                let yt = if y { T::one() } else { T::zero() };
                data.sample_weight(i) * class_weights[usize::from(y)] * (softplus(z) - yt * z) / total
            })
            .sum()
    }
}

/// Borrowed training examples with optional per-example weights.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSet<'a, T> {
    pub features: &'a [FeatureVector<T>],
    pub labels: &'a [bool],
    pub sample_weights: Option<&'a [T]>,
}

impl<'a, T: Scalar> TrainingSet<'a, T> {
    pub fn new(features: &'a [FeatureVector<T>], labels: &'a [bool]) -> Self {
        TrainingSet { features, labels, sample_weights: None }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_weight(&self, i: usize) -> T {
        self.sample_weights.map_or(T::one(), |w| w[i])
    }

    fn weight_sum(&self, idx: &[usize]) -> T {
        idx.iter().map(|&i| self.sample_weight(i)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Hidden units of the MLP kind.
    pub hidden: usize,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
    /// Override the balanced class weights with `[negative, positive]`.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::Logistic,
            hidden: 64,
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
            class_weights: None,
        }
    }
}

impl LearnerConfig {
    /// Training schedule with the MLP's early-stopping rule filled in.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.kind == LearnerKind::Mlp && t.early_stopping.is_none() {
            t.early_stopping = Some(EarlyStopping::default());
        }
        t
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        match self.kind {
            LearnerKind::Logistic => Architecture::logistic(input_dim),
            LearnerKind::Mlp => Architecture::mlp(input_dim, self.hidden),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.featurizer.validate()?;
        if self.kind == LearnerKind::Mlp && self.hidden == 0 {
            return Err(Error::Config("mlp learner needs hidden > 0".into()));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A trained classifier for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseLearner<T> {
    pub label_name: String,
    pub arch: Architecture,
    pub featurizer: FeaturizerConfig,
    pub annotator_vocab: Option<AnnotatorVocab>,
    pub params: Vec<T>,
    pub train_config: TrainConfig,
    pub class_weights: [T; 2],
}

impl<T: Scalar> BaseLearner<T> {
    /// Learner with all-zero parameters.
    pub fn zeroed(label_name: impl Into<String>, arch: Architecture, featurizer: FeaturizerConfig) -> Self {
        BaseLearner {
            label_name: label_name.into(),
            arch,
            featurizer,
            annotator_vocab: None,
            params: vec![T::zero(); arch.n_params()],
            train_config: TrainConfig::default(),
            class_weights: [T::one(), T::one()],
        }
    }

    pub fn predict_proba_features(&self, x: &FeatureVector<T>) -> Result<T> {
        self.arch.check_dim(x)?;
        Ok(sigmoid(self.arch.logit(&self.params, x)))
    }

    pub fn predict_label_features(&self, x: &FeatureVector<T>) -> Result<bool> {
        Ok(self.predict_proba_features(x)? >= T::of(0.5))
    }
}

/// Positive-class probability for a raw text.
pub fn predict_proba<T: Scalar>(learner: &BaseLearner<T>, text: &str) -> Result<T> {
    let x = featurize_text(text, &learner.featurizer)?;
    let x = match &learner.annotator_vocab {
        Some(v) => augment_with_annotator_ids(&x, &[], v),
        None => x,
    };
    learner.predict_proba_features(&x)
}

pub fn predict_label<T: Scalar>(learner: &BaseLearner<T>, text: &str) -> Result<bool> {
    Ok(predict_proba(learner, text)? >= T::of(0.5))
}

/// Balanced class weights of `label` on a training split, as `[neg, pos]`.
pub fn class_weights<T: Scalar>(train: &Dataset, label: &str) -> Result<[T; 2]> {
    balanced_class_weights(&train.classes(label)?, label)
}

/// Trains on pre-featurized examples; keeps the parameters with the best
/// validation macro-F1.
pub fn train_on_features<T: Scalar>(
    label_name: &str,
    arch: Architecture,
    train: TrainingSet<'_, T>,
    val: TrainingSet<'_, T>,
    config: &LearnerConfig,
) -> Result<BaseLearner<T>> {
    config.validate()?;
    if let Some(x) = train.features.iter().chain(val.features).find(|x| x.dim() != arch.input_dim) {
        arch.check_dim(x)?;
    }
    let cw = match config.class_weights {
        Some([n, p]) => {
            balanced_class_weights::<T>(train.labels, label_name)?;
            [T::of(n), T::of(p)]
        }
        None => balanced_class_weights(train.labels, label_name)?,
    };
    let tcfg = config.effective_train();
    let params = arch.init_params::<T>(tcfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let validate = (!val.is_empty()).then_some(|p: &[T]| {
        let preds: Vec<bool> = val.features.iter().map(|x| arch.logit(p, x) >= T::zero()).collect();
        ValScore { loss: arch.loss(p, &val, cw), macro_f1: macro_f1(&preds, val.labels).unwrap_or(0.0) }
    });
    let out = optim::fit(params, train.len(), &tcfg, |b, p, g| arch.loss_grad(p, &train, cw, b, g), validate)?;
    Ok(BaseLearner {
        label_name: label_name.to_string(),
        arch,
        featurizer: config.featurizer.clone(),
        annotator_vocab: None,
        params: out.params,
        train_config: tcfg,
        class_weights: cw,
    })
}

/// Featurizes both splits and trains a learner for `label` (majority-vote
/// classes; the target resolves through gold values when present).
pub fn train_base_learner<T: Scalar>(
    train: &Dataset,
    val: &Dataset,
    label: &str,
    config: &LearnerConfig,
) -> Result<BaseLearner<T>> {
    config.validate()?;
    let feats = |ds: &Dataset| -> Result<Vec<FeatureVector<T>>> {
        ds.texts().iter().map(|t| featurize_text(&t.text, &config.featurizer)).collect()
    };
    let (xt, yt) = (feats(train)?, train.classes(label)?);
    let (xv, yv) = (feats(val)?, val.classes(label)?);
    let arch = config.architecture(config.featurizer.dim);
    train_on_features(label, arch, TrainingSet::new(&xt, &yt), TrainingSet::new(&xv, &yv), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_half() {
        let l: BaseLearner<f64> = BaseLearner::zeroed("x", Architecture::logistic(16), FeaturizerConfig {
            dim: 16,
            ..Default::default()
        });
        let p = predict_proba(&l, "anything at all").unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(p + (1.0 - p), 1.0);
        assert!(predict_label(&l, "x").unwrap());
    }

    #[test]
    fn dimension_mismatch_is_model_error() {
        let l: BaseLearner<f64> = BaseLearner::zeroed("x", Architecture::logistic(16), FeaturizerConfig::default());
        let x = FeatureVector::from_dense(&[1.0; 8]);
        assert!(matches!(l.predict_proba_features(&x), Err(Error::Model(_))));
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![FeatureVector::from_dense(&[1.0f64, 0.0]); 4];
        let y = vec![true; 4];
        let r = train_on_features(
            "gamemove",
            Architecture::logistic(2),
            TrainingSet::new(&x, &y),
            TrainingSet::new(&x, &y),
            &LearnerConfig::default(),
        );
        assert!(matches!(r, Err(Error::DegenerateLabel { .. })));
    }
}
