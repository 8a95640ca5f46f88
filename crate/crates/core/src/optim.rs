//! Mini-batch training with per-parameter squared-gradient scaling, shared by
//! the base learners and the ensemble head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    /// Minimum validation-loss improvement that resets patience.
    pub min_delta: f64,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping { min_delta: 0.001, patience: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decay of the running squared-gradient average.
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
            seed: 0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::Config("rho must lie in [0,1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

/// RMSprop state over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Rmsprop<T> {
    cache: Vec<T>,
    lr: T,
    rho: T,
    eps: T,
}

impl<T: Scalar> Rmsprop<T> {
    pub fn new(n_params: usize, config: &TrainConfig) -> Self {
        Rmsprop {
            cache: vec![T::zero(); n_params],
            lr: T::of(config.learning_rate),
            rho: T::of(config.rho),
            eps: T::of(config.epsilon),
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        let one_minus = T::one() - self.rho;
        for ((p, c), &g) in params.iter_mut().zip(self.cache.iter_mut()).zip(grad) {
            *c = self.rho * *c + one_minus * g * g;
            *p = *p - self.lr * g / (c.sqrt() + self.eps);
        }
    }
}

/// Validation summary for one parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct ValScore<T> {
    pub loss: T,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    pub params: Vec<T>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_f1: Option<f64>,
}

/// Trains `params` in place over `n_train` examples.
///
/// `loss_grad(batch, params, grad)` must overwrite `grad` and return the batch
/// loss. `validate(params)` scores the current parameters; pass `None` when
/// there is no validation data, in which case the final parameters are kept.
/// Otherwise the parameters with the best validation macro-F1 are returned
/// (earliest epoch on ties).
pub fn fit<T, G, V>(
    mut params: Vec<T>,
    n_train: usize,
    config: &TrainConfig,
    mut loss_grad: G,
    mut validate: Option<V>,
) -> Result<FitOutcome<T>>
where
    T: Scalar,
    G: FnMut(&[usize], &[T], &mut [T]) -> T,
    V: FnMut(&[T]) -> ValScore<T>,
{
    config.validate()?;
    if n_train == 0 {
        return Err(Error::arg("no training examples"));
    }
    let mut opt = Rmsprop::new(params.len(), config);
    let mut grad = vec![T::zero(); params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, T, usize, Vec<T>)> = None;
    let mut prev_val_loss: Option<T> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let loss = loss_grad(batch, &params, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training { epoch, message: format!("loss became {loss}") });
            }
            opt.step(&mut params, &grad);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, message: "parameters became non-finite".into() });
        }
        let Some(val) = validate.as_mut() else { continue };
        let score = val(&params);
        if !score.loss.is_finite() {
            return Err(Error::Training { epoch, message: format!("validation loss became {}", score.loss) });
        }
        // Equal F1 falls back to the lower validation loss.
        if best.as_ref().is_none_or(|(f1, loss, _, _)| {
            score.macro_f1 > *f1 || (score.macro_f1 == *f1 && score.loss < *loss)
        }) {
            best = Some((score.macro_f1, score.loss, epoch, params.clone()));
        }
        if let Some(es) = &config.early_stopping {
            if let Some(prev) = prev_val_loss {
                if prev - score.loss < T::of(es.min_delta) {
                    stale += 1;
                } else {
                    stale = 0;
                }
            }
            prev_val_loss = Some(score.loss);
            if stale >= es.patience {
                break;
            }
        }
    }
    Ok(match best {
        Some((f1, _, epoch, p)) => FitOutcome { params: p, best_epoch: epoch, epochs_run, best_val_f1: Some(f1) },
        None => FitOutcome { params, best_epoch: epochs_run, epochs_run, best_val_f1: None },
    })
}

/// Numerically stable `log(1 + e^z)`.
pub fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Balanced inverse-frequency weights `N / (2 N_c)`, returned as `[neg, pos]`.
pub fn balanced_class_weights<T: Scalar>(labels: &[bool], label_name: &str) -> Result<[T; 2]> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabel {
            label: label_name.to_string(),
            message: format!("training labels contain a single class ({pos} positive of {n})"),
        });
    }
    let two_n = T::of_usize(2);
    Ok([T::of_usize(n) / (two_n * T::of_usize(neg)), T::of_usize(n) / (two_n * T::of_usize(pos))])
}
