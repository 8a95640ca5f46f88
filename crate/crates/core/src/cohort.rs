//! Annotator cohort statistics: master versus non-master comparisons,
//! alignment with the rating consensus, and a logistic model of alignment.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::data::{mean, Dataset, MinMax, Qualification};
use crate::error::{Error, Result};
use crate::Scalar;

/// Largest absolute deviation of any rating from its item's mean rating.
pub fn max_abs_deviation<T: Scalar>(items: &[Vec<T>]) -> T {
    items
        .iter()
        .flat_map(|r| {
            let m = mean(r);
            r.iter().map(move |&v| (v - m).abs())
        })
        .fold(T::zero(), T::max)
}

/// `|r - item mean| / max_dev` for every rating.
pub fn alignment_scores<T: Scalar>(items: &[Vec<T>], max_dev: T) -> Result<Vec<Vec<T>>> {
    if let Some(i) = items.iter().position(|r| r.len() < 2) {
        return Err(Error::arg(format!("item {i} has fewer than two ratings")));
    }
    if !(max_dev > T::zero()) {
        return Err(Error::DegenerateStatistics {
            kind: "alignment".into(),
            message: "maximum rating deviation is zero".into(),
        });
    }
    Ok(items
        .iter()
        .map(|r| {
            let m = mean(r);
            r.iter().map(|&v| ((v - m).abs() / max_dev).min(T::one())).collect()
        })
        .collect())
}

/// Aligned when the score is at most `tau`.
pub fn aligned_flags<T: Scalar>(scores: &[T], tau: T) -> Vec<bool> {
    scores.iter().map(|&s| s <= tau).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::arg("each sample needs at least two values"));
    }
    let summary = |s: &[T]| {
        let v: Vec<f64> = s.iter().map(|x| x.as_f64()).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, var)
    };
    let (na, ma, va) = summary(a);
    let (nb, mb, vb) = summary(b);
    if !(va.is_finite() && vb.is_finite()) {
        return Err(Error::arg("sample variance is not finite"));
    }
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb == 0.0 {
        if ma == mb {
            return Ok(WelchTest { t: 0.0, df: na + nb - 2.0, p: 1.0 });
        }
        return Err(Error::DegenerateStatistics {
            kind: "welch".into(),
            message: "both samples have zero variance but different means".into(),
        });
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = if t == 0.0 { 1.0 } else { beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0) };
    Ok(WelchTest { t, df, p })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig { max_iterations: 100, tolerance: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit<T> {
    pub terms: Vec<String>,
    pub beta: Vec<T>,
    pub se: Vec<T>,
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub log_likelihood: T,
    /// Log-likelihood after each accepted step, starting at the zero vector.
    pub log_likelihood_trace: Vec<T>,
    pub gradient_norm: T,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl<T: Scalar> LogisticFit<T> {
    pub fn coefficient(&self, term: &str) -> Option<(T, T)> {
        self.terms.iter().position(|t| t == term).map(|i| (self.beta[i], self.se[i]))
    }
}

/// In-place Cholesky factor of a symmetric matrix; fails when a pivot is not
/// clearly positive relative to its original diagonal entry.
fn cholesky<T: Scalar>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let k = a.len();
    let mut l = vec![vec![T::zero(); k]; k];
    let rel = T::of(1e-10);
    for j in 0..k {
        let d = a[j][j] - (0..j).map(|m| l[j][m] * l[j][m]).sum::<T>();
        if !(d > rel * a[j][j].abs()) || !(d > T::zero()) {
            return None;
        }
        l[j][j] = d.sqrt();
        for i in j + 1..k {
            let s = a[i][j] - (0..j).map(|m| l[i][m] * l[j][m]).sum::<T>();
            l[i][j] = s / l[j][j];
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let k = l.len();
    let mut y = vec![T::zero(); k];
    for i in 0..k {
        y[i] = (b[i] - (0..i).map(|m| l[i][m] * y[m]).sum::<T>()) / l[i][i];
    }
    let mut x = vec![T::zero(); k];
    for i in (0..k).rev() {
        x[i] = (y[i] - (i + 1..k).map(|m| l[m][i] * x[m]).sum::<T>()) / l[i][i];
    }
    x
}

fn gram<T: Scalar>(x: &[Vec<T>], w: &[T]) -> Vec<Vec<T>> {
    let k = x[0].len();
    let mut h = vec![vec![T::zero(); k]; k];
    for (row, &wi) in x.iter().zip(w) {
        for a in 0..k {
            let ra = wi * row[a];
            for b in 0..=a {
                h[a][b] = h[a][b] + ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[b][a] = h[a][b];
        }
    }
    h
}

/// Bernoulli log-likelihood of `beta`.
pub fn logistic_log_likelihood<T: Scalar>(x: &[Vec<T>], y: &[bool], beta: &[T]) -> T {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: T = row.iter().zip(beta).map(|(&a, &b)| a * b).sum();
            // log sigma(eta) = -softplus(-eta)
            if yi {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Maximum-likelihood logistic regression by Newton-Raphson (IRLS) with step
/// halving. `x` must include any intercept column.
pub fn fit_logistic<T: Scalar>(x: &[Vec<T>], y: &[bool], terms: &[String], cfg: &IrlsConfig) -> Result<LogisticFit<T>> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Shape { expected: n, got: y.len() });
    }
    let k = terms.len();
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(Error::Shape { expected: k, got: row.len() });
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateLabel { label: "outcome".into(), message: "only one outcome class present".into() });
    }
    if cholesky(&gram(x, &vec![T::one(); n])).is_none() {
        return Err(Error::Design("design matrix is rank deficient".into()));
    }
    let mut beta = vec![T::zero(); k];
    let mut ll = logistic_log_likelihood(x, y, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut diagnostic = None;
    let mut iterations = 0;
    let tol = T::of(cfg.tolerance);
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let (grad, w) = score_and_weights(x, y, &beta);
        let Some(l) = cholesky(&gram(x, &w)) else {
            diagnostic = Some(format!("information matrix singular at iteration {it}; likely separation"));
            break;
        };
        let step = cholesky_solve(&l, &grad);
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + scale * s).collect();
            let cand_ll = logistic_log_likelihood(x, y, &cand);
            if cand_ll >= ll {
                accepted = Some((cand, cand_ll));
                break;
            }
            scale = scale * T::of(0.5);
        }
        let Some((cand, cand_ll)) = accepted else {
            converged = step.iter().all(|s| s.abs() < tol.sqrt());
            break;
        };
        let max_step = step.iter().fold(T::zero(), |m, s| m.max((scale * *s).abs()));
        beta = cand;
        ll = cand_ll;
        trace.push(ll);
        if max_step < tol {
            converged = true;
            break;
        }
    }
    let (grad, w) = score_and_weights(x, y, &beta);
    let gradient_norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
    let big = T::of(15.0);
    if converged && beta.iter().any(|b| b.abs() > big) {
        converged = false;
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(if beta.iter().any(|b| b.abs() > big) {
            "coefficients diverging; the outcome is (quasi-)separated by the covariates".to_string()
        } else {
            format!("no convergence within {} iterations", cfg.max_iterations)
        });
    }
    let se: Vec<T> = match cholesky(&gram(x, &w)) {
        Some(l) => (0..k)
            .map(|j| {
                let mut e = vec![T::zero(); k];
                e[j] = T::one();
                cholesky_solve(&l, &e)[j].sqrt()
            })
            .collect(),
        None => vec![T::infinity(); k],
    };
    let z: Vec<T> = beta.iter().zip(&se).map(|(&b, &s)| b / s).collect();
    let p: Vec<T> = z.iter().map(|zj| T::of(erfc(zj.as_f64().abs() / std::f64::consts::SQRT_2))).collect();
    if let Some(d) = &diagnostic {
        warn!("logistic fit: {d}");
    }
    Ok(LogisticFit {
        terms: terms.to_vec(),
        beta,
        se,
        z,
        p,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        gradient_norm,
        iterations,
        converged,
        diagnostic,
    })
}

fn score_and_weights<T: Scalar>(x: &[Vec<T>], y: &[bool], beta: &[T]) -> (Vec<T>, Vec<T>) {
    let k = beta.len();
    let mut grad = vec![T::zero(); k];
    let mut w = Vec::with_capacity(x.len());
    for (row, &yi) in x.iter().zip(y) {
        let eta: T = row.iter().zip(beta).map(|(&a, &b)| a * b).sum();
        let mu = sigmoid(eta);
        let r = if yi { T::one() - mu } else { -mu };
        for (g, &a) in grad.iter_mut().zip(row) {
            *g = *g + a * r;
        }
        w.push(mu * (T::one() - mu));
    }
    (grad, w)
}

/// One annotation's covariates for the alignment model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortObservation<T> {
    pub aligned: bool,
    /// Min-max normalized worktime.
    pub speed: T,
    /// Min-max normalized annotator throughput.
    pub throughput: T,
    pub master: bool,
}

pub const COHORT_TERMS: [&str; 6] =
    ["intercept", "speed", "throughput", "master", "master_x_speed", "master_x_throughput"];

pub fn cohort_design<T: Scalar>(obs: &[CohortObservation<T>]) -> (Vec<Vec<T>>, Vec<bool>) {
    let x = obs
        .iter()
        .map(|o| {
            let m = if o.master { T::one() } else { T::zero() };
            vec![T::one(), o.speed, o.throughput, m, m * o.speed, m * o.throughput]
        })
        .collect();
    (x, obs.iter().map(|o| o.aligned).collect())
}

/// Alignment ~ speed + throughput + master + master:speed + master:throughput.
pub fn fit_logistic_cohort<T: Scalar>(obs: &[CohortObservation<T>], cfg: &IrlsConfig) -> Result<LogisticFit<T>> {
    let (x, y) = cohort_design(obs);
    let terms: Vec<String> = COHORT_TERMS.iter().map(|s| s.to_string()).collect();
    fit_logistic(&x, &y, &terms, cfg)
}

/// Builds alignment observations from the ratings every annotator gave to
/// `label`. Items with fewer than two ratings and annotations with unknown
/// qualification are left out.
pub fn cohort_observations<T: Scalar>(ds: &Dataset, label: &str, tau: T) -> Result<Vec<CohortObservation<T>>> {
    let mut items = Vec::new();
    let mut owners = Vec::new();
    let mut skipped = 0usize;
    for t in 0..ds.len() {
        let recs: Vec<_> = ds.records_for(t).filter(|r| r.labels.contains_key(label)).collect();
        if recs.len() < 2 {
            skipped += 1;
            continue;
        }
        items.push(recs.iter().map(|r| T::of(r.labels[label] as f64)).collect::<Vec<T>>());
        owners.push(recs);
    }
    if skipped > 0 {
        warn!("{skipped} texts have fewer than two '{label}' ratings and are skipped");
    }
    let scores = alignment_scores(&items, max_abs_deviation(&items))?;
    let recs: Vec<_> = owners.into_iter().flatten().collect();
    let scores: Vec<T> = scores.into_iter().flatten().collect();
    let wt: Vec<T> = recs.iter().map(|r| T::of(r.worktime_s)).collect();
    let tp: Vec<T> = recs.iter().map(|r| T::of_usize(r.annotator_throughput as usize)).collect();
    let (wt_norm, tp_norm) = (MinMax::fit(&wt)?, MinMax::fit(&tp)?);
    Ok(recs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.qualification != Qualification::Unknown)
        .map(|(i, r)| CohortObservation {
            aligned: scores[i] <= tau,
            speed: wt_norm.apply(wt[i]),
            throughput: tp_norm.apply(tp[i]),
            master: r.qualification == Qualification::Master,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub worktime_mean: f64,
    pub worktime_var: f64,
    pub throughput_mean: f64,
    pub throughput_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub master: CohortSummary,
    pub other: CohortSummary,
    pub worktime_test: WelchTest,
    pub throughput_test: WelchTest,
}

fn summarize(wt: &[f64], tp: &[f64]) -> CohortSummary {
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    let (wm, tm) = (mean(wt), mean(tp));
    CohortSummary { n: wt.len(), worktime_mean: wm, worktime_var: var(wt, wm), throughput_mean: tm, throughput_var: var(tp, tm) }
}

/// Per-annotation worktime and throughput of master versus normal
/// annotators, with Welch tests between the cohorts.
pub fn cohort_stats(ds: &Dataset) -> Result<CohortStats> {
    let pick = |q: Qualification| {
        let recs: Vec<_> = ds.records().iter().filter(|r| r.qualification == q).collect();
        let wt: Vec<f64> = recs.iter().map(|r| r.worktime_s).collect();
        let tp: Vec<f64> = recs.iter().map(|r| r.annotator_throughput as f64).collect();
        (wt, tp)
    };
    let (mw, mt) = pick(Qualification::Master);
    let (ow, ot) = pick(Qualification::Normal);
    if mw.len() < 2 || ow.len() < 2 {
        return Err(Error::arg(format!(
            "cohort comparison needs two annotations per cohort (master {}, normal {})",
            mw.len(),
            ow.len()
        )));
    }
    Ok(CohortStats {
        master: summarize(&mw, &mt),
        other: summarize(&ow, &ot),
        worktime_test: welch_t_test(&mw, &ow)?,
        throughput_test: welch_t_test(&mt, &ot)?,
    })
}

/// Writes `term,beta,se,z,p`.
pub fn write_coefficients<T: Scalar, W: Write>(fit: &LogisticFit<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "beta", "se", "z", "p"])?;
    for j in 0..fit.terms.len() {
        w.write_record([
            fit.terms[j].clone(),
            fit.beta[j].to_string(),
            fit.se[j].to_string(),
            fit.z[j].to_string(),
            fit.p[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
