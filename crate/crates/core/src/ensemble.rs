//! Weighted encoding vectors and the perceptron head that maps them to the
//! target label.

use std::io::Write;

use num_traits::Num;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base_learners::{BaseLearner, EncodingTable, predict_proba};
use crate::baselines::argmax_low;
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::metafeatures::{VariantKind, WeightValue};
use crate::optim::{self, balanced_class_weights, EarlyStopping, TrainConfig, ValScore};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingStage {
    Raw,
    PriorWeighted,
    /// Meta-feature weights applied (prior weighting may or may not have been).
    MetaWeighted,
}

impl EncodingStage {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingStage::Raw => "raw",
            EncodingStage::PriorWeighted => "prior_weighted",
            EncodingStage::MetaWeighted => "meta_weighted",
        }
    }
}

/// One positive-class probability per auxiliary label, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingVector<T> {
    pub text_id: String,
    pub values: Vec<T>,
    pub stage: EncodingStage,
}

impl<T> EncodingVector<T> {
    pub fn raw(text_id: impl Into<String>, values: Vec<T>) -> Self {
        EncodingVector { text_id: text_id.into(), values, stage: EncodingStage::Raw }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Where raw encodings come from.
pub enum EncodingSource<'a, T> {
    /// Trained learners, one per auxiliary label in schema order.
    Learners(&'a [BaseLearner<T>]),
    /// Imported probabilities plus the auxiliary label order.
    Table(&'a EncodingTable<T>, &'a [String]),
}

pub fn build_encoding<T: Scalar>(source: &EncodingSource<'_, T>, text_id: &str, text: &str) -> Result<EncodingVector<T>> {
    let values = match source {
        EncodingSource::Learners(learners) => {
            learners.iter().map(|l| predict_proba(l, text)).collect::<Result<Vec<T>>>()?
        }
        EncodingSource::Table(table, labels) => {
            let missing: Vec<String> =
                labels.iter().filter(|l| table.get(text_id, l).is_none()).map(|l| format!("{text_id}/{l}")).collect();
            if !missing.is_empty() {
                return Err(Error::Completeness { missing });
            }
            labels.iter().map(|l| table.get(text_id, l).expect("checked above")).collect()
        }
    };
    Ok(EncodingVector::raw(text_id, values))
}

/// Multiplies each slot by the training-split prevalence of its label.
pub fn apply_prior_weighting<W>(encoding: &EncodingVector<W>, priors: &[W]) -> Result<EncodingVector<W>>
where
    W: Num + Copy + PartialOrd + std::fmt::Debug,
{
    if priors.len() != encoding.len() {
        return Err(Error::Shape { expected: encoding.len(), got: priors.len() });
    }
    if let Some(p) = priors.iter().find(|&&p| !(p > W::zero() && p <= W::one())) {
        return Err(Error::arg(format!("prior {p:?} outside (0,1]")));
    }
    let stage = match encoding.stage {
        EncodingStage::Raw => EncodingStage::PriorWeighted,
        EncodingStage::MetaWeighted => EncodingStage::MetaWeighted,
        EncodingStage::PriorWeighted => {
            return Err(Error::Contract("prior weighting applied twice".into()));
        }
    };
    let values = encoding.values.iter().zip(priors).map(|(&v, &p)| p * v).collect();
    Ok(EncodingVector { text_id: encoding.text_id.clone(), values, stage })
}

/// Multiplies the encoding by a scalar meta-feature weight, or slot-wise by a
/// per-label weight vector.
pub fn apply_meta_weighting<W>(encoding: &EncodingVector<W>, weight: &WeightValue<W>) -> Result<EncodingVector<W>>
where
    W: Num + Copy,
{
    if encoding.stage == EncodingStage::MetaWeighted {
        return Err(Error::Contract("meta-feature weighting applied twice".into()));
    }
    let values = match weight {
        WeightValue::Scalar(w) => encoding.values.iter().map(|&v| *w * v).collect(),
        WeightValue::PerLabel(ws) => {
            if ws.len() != encoding.len() {
                return Err(Error::Shape { expected: encoding.len(), got: ws.len() });
            }
            encoding.values.iter().zip(ws).map(|(&v, &w)| w * v).collect()
        }
    };
    Ok(EncodingVector { text_id: encoding.text_id.clone(), values, stage: EncodingStage::MetaWeighted })
}

/// Writes `text_id,stage,v_1..v_P`.
pub fn write_encoding_vectors<T: Scalar, W: Write>(encodings: &[EncodingVector<T>], writer: W) -> Result<()> {
    let p = encodings.first().map_or(0, EncodingVector::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["text_id".to_string(), "stage".to_string()];
    header.extend((1..=p).map(|j| format!("v_{j}")));
    w.write_record(&header)?;
    for e in encodings {
        if e.len() != p {
            return Err(Error::Shape { expected: p, got: e.len() });
        }
        let mut row = vec![e.text_id.clone(), e.stage.as_str().to_string()];
        row.extend(e.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fully connected network with rectifier hidden layers and a softmax
/// output. Parameters are stored layer by layer as `W (out x in)` then `b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNet {
    pub sizes: Vec<usize>,
}

impl DenseNet {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(DenseNet { sizes })
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    /// He-uniform weights, zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(self.n_params());
        for w in self.sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            p.extend((0..w[0] * w[1]).map(|_| T::of(rng.random_range(-bound..bound))));
            p.extend(std::iter::repeat_n(T::zero(), w[1]));
        }
        p
    }

    /// Returns the activations of every layer; the last entry holds logits.
    fn forward_all<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<Vec<T>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).fold(bias[o], |acc, (&wi, &xi)| acc + wi * xi)
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn logits<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        self.forward_all(params, x).pop().expect("output layer")
    }

    /// Class- and sample-weighted cross-entropy over `batch`, divided by the
    /// batch's total sample weight; writes the gradient into `grad`.
    pub fn loss_grad<T: Scalar>(
        &self,
        params: &[T],
        data: &DenseSet<'_, T>,
        class_weights: &[T],
        batch: &[usize],
        grad: &mut [T],
    ) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let total: T = batch.iter().map(|&i| data.weight(i)).sum();
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut loss = T::zero();
        for &i in batch {
            let y = data.targets[i];
            let acts = self.forward_all(params, &data.inputs[i]);
            let logits = &acts[n_layers];
            let probs = softmax(logits);
            let w = data.weight(i) * class_weights[y] / total;
            loss = loss - w * log_softmax(logits)[y];
            let mut delta: Vec<T> =
                probs.iter().enumerate().map(|(k, &p)| w * (p - if k == y { T::one() } else { T::zero() })).collect();
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let o = offsets[l];
                let input = &acts[l];
                for r in 0..n_out {
                    let d = delta[r];
                    if d == T::zero() {
                        continue;
                    }
                    let g_row = &mut grad[o + r * n_in..o + (r + 1) * n_in];
                    for (g, &xi) in g_row.iter_mut().zip(input) {
                        *g = *g + d * xi;
                    }
                    grad[o + n_in * n_out + r] = grad[o + n_in * n_out + r] + d;
                }
                if l > 0 {
                    let weights = &params[o..o + n_in * n_out];
                    let mut prev = vec![T::zero(); n_in];
                    for r in 0..n_out {
                        let d = delta[r];
                        for (c, p) in prev.iter_mut().enumerate() {
                            *p = *p + d * weights[r * n_in + c];
                        }
                    }
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= T::zero() {
                            *p = T::zero();
                        }
                    }
                    delta = prev;
                }
            }
        }
        loss
    }

    pub fn loss<T: Scalar>(&self, params: &[T], data: &DenseSet<'_, T>, class_weights: &[T]) -> T {
        let total: T = (0..data.len()).map(|i| data.weight(i)).sum();
        (0..data.len())
            .map(|i| {
                let y = data.targets[i];
                let lz = log_softmax(&self.logits(params, &data.inputs[i]));
                -data.weight(i) * class_weights[y] * lz[y] / total
            })
            .sum()
    }
}

/// Dense inputs with class-index targets and optional sample weights.
#[derive(Clone, Copy, Debug)]
pub struct DenseSet<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub targets: &'a [usize],
    pub sample_weights: Option<&'a [T]>,
}

impl<'a, T: Scalar> DenseSet<'a, T> {
    pub fn new(inputs: &'a [Vec<T>], targets: &'a [usize]) -> Self {
        DenseSet { inputs, targets, sample_weights: None }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn weight(&self, i: usize) -> T {
        self.sample_weights.map_or(T::one(), |w| w[i])
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    z.iter().map(|&v| v - lse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Sizes of the two hidden layers.
    pub hidden: [usize; 2],
    pub train: TrainConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            hidden: [16, 8],
            train: TrainConfig {
                epochs: 200,
                learning_rate: 1e-2,
                early_stopping: Some(EarlyStopping::default()),
                ..TrainConfig::default()
            },
        }
    }
}

/// Three-layer perceptron over encoding vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel<T> {
    pub net: DenseNet,
    pub params: Vec<T>,
    pub stage: EncodingStage,
    pub priors: Option<Vec<T>>,
    pub variant: Option<VariantKind>,
    pub class_weights: [T; 2],
    pub train_config: TrainConfig,
    pub best_epoch: usize,
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn n_inputs(&self) -> usize {
        self.net.sizes[0]
    }
}

fn check_encodings<T>(encs: &[EncodingVector<T>], targets: &[bool], p: usize, stage: EncodingStage) -> Result<()> {
    if encs.len() != targets.len() {
        return Err(Error::Shape { expected: encs.len(), got: targets.len() });
    }
    for e in encs {
        if e.len() != p {
            return Err(Error::Shape { expected: p, got: e.len() });
        }
        if e.stage != stage {
            return Err(Error::Contract(format!(
                "encoding '{}' is {} but the set is {}",
                e.text_id,
                e.stage.as_str(),
                stage.as_str()
            )));
        }
    }
    Ok(())
}

/// Trains the head on one stage of encodings, keeping the parameters with the
/// best validation macro-F1.
pub fn train_ensemble_mlp<T: Scalar>(
    train: (&[EncodingVector<T>], &[bool]),
    val: (&[EncodingVector<T>], &[bool]),
    config: &EnsembleConfig,
) -> Result<EnsembleModel<T>> {
    let (tx, ty) = train;
    let (vx, vy) = val;
    let first = tx.first().ok_or_else(|| Error::arg("no training encodings"))?;
    let (p, stage) = (first.len(), first.stage);
    check_encodings(tx, ty, p, stage)?;
    check_encodings(vx, vy, p, stage)?;
    if p == 0 {
        return Err(Error::arg("encodings have no slots"));
    }
    let cw = balanced_class_weights::<T>(ty, "target")?;
    let net = DenseNet::new(vec![p, config.hidden[0], config.hidden[1], 2])?;
    let inputs: Vec<Vec<T>> = tx.iter().map(|e| e.values.clone()).collect();
    let targets: Vec<usize> = ty.iter().map(|&y| usize::from(y)).collect();
    let vinputs: Vec<Vec<T>> = vx.iter().map(|e| e.values.clone()).collect();
    let vtargets: Vec<usize> = vy.iter().map(|&y| usize::from(y)).collect();
    let data = DenseSet::new(&inputs, &targets);
    let vdata = DenseSet::new(&vinputs, &vtargets);
    let params = net.init_params::<T>(config.train.seed ^ 0x51_7c_c1_b7_27_22_0a_95);
    let validate = (!vdata.is_empty()).then_some(|prm: &[T]| {
        let preds: Vec<usize> = vinputs.iter().map(|x| argmax_low(&net.logits(prm, x))).collect();
        ValScore { loss: net.loss(prm, &vdata, &cw), macro_f1: macro_f1(&preds, &vtargets).unwrap_or(0.0) }
    });
    let out = optim::fit(params, data.len(), &config.train, |b, prm, g| net.loss_grad(prm, &data, &cw, b, g), validate)?;
    Ok(EnsembleModel {
        net,
        params: out.params,
        stage,
        priors: None,
        variant: None,
        class_weights: cw,
        train_config: config.train.clone(),
        best_epoch: out.best_epoch,
    })
}

/// Predicted class (exact ties go to class 0) and the softmax distribution.
pub fn predict_target<T: Scalar>(model: &EnsembleModel<T>, encoding: &EncodingVector<T>) -> Result<(usize, Vec<T>)> {
    if encoding.stage != model.stage {
        return Err(Error::Contract(format!(
            "model expects {} encodings, got {}",
            model.stage.as_str(),
            encoding.stage.as_str()
        )));
    }
    if encoding.len() != model.n_inputs() {
        return Err(Error::Shape { expected: model.n_inputs(), got: encoding.len() });
    }
    let dist = softmax(&model.net.logits(&model.params, &encoding.values));
    Ok((argmax_low(&dist), dist))
}
