//! Per-observation annotation meta-features and the fourteen weighting
//! variants derived from them.
//!
//! Raw throughput and worktime are min-max normalized over the whole dataset,
//! aggregated per text (mean and population variance across that text's
//! annotators), and finally divided by the maximum aggregate observed on the
//! training split. Results are clamped into `[0, 1]`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{mean, population_variance, Dataset, MinMax};
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    TP1,
    TP2,
    TP3,
    TP4,
    WT1,
    WT2,
    PC1,
    PC2,
    PC3,
    TL1,
    TL2,
    SP1,
    SP2,
    SP3,
}

impl VariantKind {
    pub const ALL: [VariantKind; 14] = [
        VariantKind::TP1,
        VariantKind::TP2,
        VariantKind::TP3,
        VariantKind::TP4,
        VariantKind::WT1,
        VariantKind::WT2,
        VariantKind::PC1,
        VariantKind::PC2,
        VariantKind::PC3,
        VariantKind::TL1,
        VariantKind::TL2,
        VariantKind::SP1,
        VariantKind::SP2,
        VariantKind::SP3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::TP1 => "TP1",
            VariantKind::TP2 => "TP2",
            VariantKind::TP3 => "TP3",
            VariantKind::TP4 => "TP4",
            VariantKind::WT1 => "WT1",
            VariantKind::WT2 => "WT2",
            VariantKind::PC1 => "PC1",
            VariantKind::PC2 => "PC2",
            VariantKind::PC3 => "PC3",
            VariantKind::TL1 => "TL1",
            VariantKind::TL2 => "TL2",
            VariantKind::SP1 => "SP1",
            VariantKind::SP2 => "SP2",
            VariantKind::SP3 => "SP3",
        }
    }

    pub fn is_per_label(self) -> bool {
        self == VariantKind::PC3
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        VariantKind::ALL.into_iter().find(|k| k.name() == up).ok_or_else(|| {
            let valid: Vec<&str> = VariantKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown variant '{s}', expected one of {}", valid.join(", ")))
        })
    }
}

/// Meta-features of one text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta<T> {
    pub text_id: String,
    /// Normalized throughput of each annotator of this text.
    pub tp_values: Vec<T>,
    /// Normalized worktime of each annotation of this text.
    pub wt_values: Vec<T>,
    /// Percentage agreement per auxiliary label, in schema order.
    pub pc_values: Vec<T>,
    /// Per annotator: share of auxiliary labels on which they chose the modal label.
    pub pc_annotator_values: Vec<T>,
    pub n_words: usize,
    pub n_chars: usize,
}

impl<T: Scalar> ObservationMeta<T> {
    pub fn tp_mean(&self) -> T {
        mean(&self.tp_values)
    }
    pub fn tp_var(&self) -> T {
        population_variance(&self.tp_values)
    }
    pub fn wt_mean(&self) -> T {
        mean(&self.wt_values)
    }
    pub fn wt_var(&self) -> T {
        population_variance(&self.wt_values)
    }
    pub fn pc_mean(&self) -> T {
        mean(&self.pc_values)
    }
    pub fn pc_var(&self, axis: PcVarianceAxis) -> T {
        match axis {
            PcVarianceAxis::AcrossLabels => population_variance(&self.pc_values),
            PcVarianceAxis::AcrossAnnotators => population_variance(&self.pc_annotator_values),
        }
    }
}

/// Fraction of annotators whose label equals the modal label (ties resolve
/// to the lower label).
pub fn percentage_agreement<T: Scalar, L: Ord + Copy>(labels: &[L]) -> Result<T> {
    let modal = crate::baselines::majority_vote(labels)?;
    let hits = labels.iter().filter(|&&l| l == modal).count();
    Ok(T::of_usize(hits) / T::of_usize(labels.len()))
}

/// Whitespace-token count and character count (internal spaces included).
pub fn text_length(text: &str) -> Result<(usize, usize)> {
    if text.is_empty() {
        return Err(Error::arg("text length of an empty string"));
    }
    Ok((text.split_whitespace().count(), text.chars().count()))
}

/// Builds one [`ObservationMeta`] per text.
pub fn compute_observation_meta<T: Scalar>(dataset: &Dataset) -> Result<Vec<ObservationMeta<T>>> {
    let tps: Vec<T> = dataset.records().iter().map(|r| T::of(r.annotator_throughput as f64)).collect();
    let wts: Vec<T> = dataset.records().iter().map(|r| T::of(r.worktime_s)).collect();
    if tps.is_empty() {
        return Ok(Vec::new());
    }
    let tp_norm = MinMax::fit(&tps)?;
    let wt_norm = MinMax::fit(&wts)?;
    let aux = &dataset.schema().aux;
    let mut out = Vec::with_capacity(dataset.len());
    for (ti, text) in dataset.texts().iter().enumerate() {
        let recs: Vec<_> = dataset.records_for(ti).collect();
        if recs.is_empty() {
            log::warn!("text '{}' has no annotation records; skipped", text.text_id);
            continue;
        }
        let tp_values = recs.iter().map(|r| tp_norm.apply(T::of(r.annotator_throughput as f64))).collect();
        let wt_values = recs.iter().map(|r| wt_norm.apply(T::of(r.worktime_s))).collect();
        let mut pc_values = Vec::with_capacity(aux.len());
        let mut modal = Vec::with_capacity(aux.len());
        for label in aux {
            let votes = dataset.votes(ti, label);
            if votes.is_empty() {
                return Err(Error::Schema(format!(
                    "text '{}' has no votes for label '{label}'",
                    text.text_id
                )));
            }
            pc_values.push(percentage_agreement(&votes)?);
            modal.push(crate::baselines::majority_vote(&votes)?);
        }
        let pc_annotator_values = recs
            .iter()
            .map(|r| {
                let hits = aux
                    .iter()
                    .zip(&modal)
                    .filter(|(l, m)| r.labels.get(*l) == Some(m))
                    .count();
                T::of_usize(hits) / T::of_usize(aux.len())
            })
            .collect();
        let (n_words, n_chars) = text_length(&text.text)?;
        out.push(ObservationMeta {
            text_id: text.text_id.clone(),
            tp_values,
            wt_values,
            pc_values,
            pc_annotator_values,
            n_words,
            n_chars,
        });
    }
    Ok(out)
}

/// Coefficients of `f(x) = a x^2 + b x + c` applied to throughput variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCoefficients<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> QuadraticCoefficients<T> {
    pub fn negative_default() -> Self {
        QuadraticCoefficients { a: T::one(), b: T::zero(), c: -T::one() }
    }

    pub fn positive_default() -> Self {
        QuadraticCoefficients { a: T::one(), b: T::zero(), c: T::one() }
    }

    pub fn eval(&self, x: T) -> T {
        self.a * x * x + self.b * x + self.c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcVarianceAxis {
    #[default]
    AcrossLabels,
    AcrossAnnotators,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar"))]
pub struct VariantConfig<T: Scalar> {
    pub tp3: QuadraticCoefficients<T>,
    pub tp4: QuadraticCoefficients<T>,
    pub pc2_axis: PcVarianceAxis,
}

impl<T: Scalar> Default for VariantConfig<T> {
    fn default() -> Self {
        VariantConfig {
            tp3: QuadraticCoefficients::negative_default(),
            tp4: QuadraticCoefficients::positive_default(),
            pc2_axis: PcVarianceAxis::AcrossLabels,
        }
    }
}

impl<T: Scalar> VariantConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tp3.a == T::zero() || self.tp4.a == T::zero() {
            return Err(Error::Config("quadratic coefficient a must be non-zero".into()));
        }
        if !(self.tp3.c < T::zero()) {
            return Err(Error::Config(format!("TP3 requires c < 0, got {}", self.tp3.c)));
        }
        if !(self.tp4.c > T::zero()) {
            return Err(Error::Config(format!("TP4 requires c > 0, got {}", self.tp4.c)));
        }
        Ok(())
    }
}

/// Maxima of each aggregate over a reference (training) set of observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantStats<T> {
    pub tp_mean: T,
    pub tp_var: T,
    pub tp3_abs: T,
    pub tp4_abs: T,
    pub wt_mean: T,
    pub wt_var: T,
    pub pc_mean: T,
    pub pc_var: T,
    pub n_chars: T,
    pub n_words: T,
}

impl<T: Scalar> VariantStats<T> {
    pub fn fit<'a, I>(metas: I, config: &VariantConfig<T>) -> Self
    where
        I: IntoIterator<Item = &'a ObservationMeta<T>>,
    {
        let z = T::zero();
        let mut s = VariantStats {
            tp_mean: z,
            tp_var: z,
            tp3_abs: z,
            tp4_abs: z,
            wt_mean: z,
            wt_var: z,
            pc_mean: z,
            pc_var: z,
            n_chars: z,
            n_words: z,
        };
        for m in metas {
            let tv = m.tp_var();
            s.tp_mean = s.tp_mean.max(m.tp_mean());
            s.tp_var = s.tp_var.max(tv);
            s.tp3_abs = s.tp3_abs.max(config.tp3.eval(tv).abs());
            s.tp4_abs = s.tp4_abs.max(config.tp4.eval(tv).abs());
            s.wt_mean = s.wt_mean.max(m.wt_mean());
            s.wt_var = s.wt_var.max(m.wt_var());
            s.pc_mean = s.pc_mean.max(m.pc_mean());
            s.pc_var = s.pc_var.max(m.pc_var(config.pc2_axis));
            s.n_chars = s.n_chars.max(T::of_usize(m.n_chars));
            s.n_words = s.n_words.max(T::of_usize(m.n_words));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightValue<T> {
    Scalar(T),
    PerLabel(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantWeight<T> {
    pub text_id: String,
    pub kind: VariantKind,
    pub value: WeightValue<T>,
}

fn ratio<T: Scalar>(value: T, max: T, kind: VariantKind, what: &str) -> Result<T> {
    if !(max > T::zero()) {
        return Err(Error::DegenerateStatistics {
            kind: kind.name().to_string(),
            message: format!("maximum {what} is {max}"),
        });
    }
    Ok((value / max).max(T::zero()).min(T::one()))
}

fn scalar_weight<T: Scalar>(
    meta: &ObservationMeta<T>,
    kind: VariantKind,
    stats: &VariantStats<T>,
    config: &VariantConfig<T>,
) -> Result<T> {
    use VariantKind::*;
    let half = T::of(0.5);
    match kind {
        TP1 => ratio(meta.tp_mean(), stats.tp_mean, kind, "mean throughput"),
        TP2 => ratio(meta.tp_var(), stats.tp_var, kind, "throughput variance"),
        TP3 => ratio(config.tp3.eval(meta.tp_var()), stats.tp3_abs, kind, "|f(throughput variance)|"),
        TP4 => ratio(config.tp4.eval(meta.tp_var()), stats.tp4_abs, kind, "|f(throughput variance)|"),
        WT1 => ratio(meta.wt_mean(), stats.wt_mean, kind, "mean worktime"),
        WT2 => ratio(meta.wt_var(), stats.wt_var, kind, "worktime variance"),
        PC1 => ratio(meta.pc_mean(), stats.pc_mean, kind, "mean agreement"),
        PC2 => ratio(meta.pc_var(config.pc2_axis), stats.pc_var, kind, "agreement variance"),
        TL1 => ratio(T::of_usize(meta.n_chars), stats.n_chars, kind, "character count"),
        TL2 => ratio(T::of_usize(meta.n_words), stats.n_words, kind, "word count"),
        SP1 => Ok(half
            * (scalar_weight(meta, TP1, stats, config)? + scalar_weight(meta, TP2, stats, config)?)),
        SP2 => Ok(half
            * (scalar_weight(meta, WT1, stats, config)? + scalar_weight(meta, WT2, stats, config)?)),
        SP3 => Ok(half
            * (scalar_weight(meta, PC1, stats, config)? + scalar_weight(meta, PC2, stats, config)?)),
        PC3 => unreachable!("per-label kind"),
    }
}

pub fn compute_variant_weight<T: Scalar>(
    meta: &ObservationMeta<T>,
    kind: VariantKind,
    stats: &VariantStats<T>,
    config: &VariantConfig<T>,
) -> Result<VariantWeight<T>> {
    let value = if kind == VariantKind::PC3 {
        WeightValue::PerLabel(meta.pc_values.clone())
    } else {
        WeightValue::Scalar(scalar_weight(meta, kind, stats, config)?)
    };
    Ok(VariantWeight { text_id: meta.text_id.clone(), kind, value })
}

pub fn compute_variant_weights<T: Scalar>(
    metas: &[ObservationMeta<T>],
    kind: VariantKind,
    stats: &VariantStats<T>,
    config: &VariantConfig<T>,
) -> Result<Vec<VariantWeight<T>>> {
    metas.iter().map(|m| compute_variant_weight(m, kind, stats, config)).collect()
}

/// Writes `text_id,kind,value`; per-label values are joined with `|`.
pub fn write_variant_weights<T: Scalar, W: Write>(weights: &[VariantWeight<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["text_id", "kind", "value"])?;
    for vw in weights {
        let value = match &vw.value {
            WeightValue::Scalar(v) => v.to_string(),
            WeightValue::PerLabel(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("|"),
        };
        w.write_record([vw.text_id.as_str(), vw.kind.name(), value.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(tp: &[f64], wt: &[f64], pc: &[f64], words: usize, chars: usize) -> ObservationMeta<f64> {
        ObservationMeta {
            text_id: "t".into(),
            tp_values: tp.to_vec(),
            wt_values: wt.to_vec(),
            pc_values: pc.to_vec(),
            pc_annotator_values: vec![1.0; tp.len()],
            n_words: words,
            n_chars: chars,
        }
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(percentage_agreement::<f64, _>(&[1, 1, 1, 0]).unwrap(), 0.75);
        assert_eq!(percentage_agreement::<f64, _>(&[1, 1, 1, 1, 1]).unwrap(), 1.0);
        assert_eq!(percentage_agreement::<f64, _>(&[1, 0]).unwrap(), 0.5);
        assert_eq!(percentage_agreement::<f64, _>(&[1, 1, 1, 1, 0]).unwrap(), 0.8);
        assert!(percentage_agreement::<f64, i64>(&[]).is_err());
    }

    #[test]
    fn text_length_examples() {
        assert_eq!(text_length("a b c").unwrap(), (3, 5));
        assert_eq!(text_length("hello").unwrap(), (1, 5));
        assert!(text_length("").is_err());
    }

    #[test]
    fn tp1_ratio_fixture() {
        let metas: Vec<_> = [0.2, 0.4, 0.8].iter().map(|&m| meta(&[m], &[0.5], &[1.0], 1, 1)).collect();
        let cfg = VariantConfig::default();
        let stats = VariantStats::fit(&metas, &cfg);
        let w: Vec<f64> = compute_variant_weights(&metas, VariantKind::TP1, &stats, &cfg)
            .unwrap()
            .into_iter()
            .map(|w| match w.value {
                WeightValue::Scalar(v) => v,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(w, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn zero_maximum_names_kind() {
        let metas = vec![meta(&[0.3, 0.3], &[0.1, 0.2], &[1.0], 1, 1)];
        let cfg = VariantConfig::default();
        let stats = VariantStats::fit(&metas, &cfg);
        let err = compute_variant_weight(&metas[0], VariantKind::TP2, &stats, &cfg).unwrap_err();
        assert!(matches!(err, Error::DegenerateStatistics { kind, .. } if kind == "TP2"));
    }

    #[test]
    fn variant_names_round_trip() {
        for k in VariantKind::ALL {
            assert_eq!(k.name().parse::<VariantKind>().unwrap(), k);
        }
        let err = "TP9".parse::<VariantKind>().unwrap_err().to_string();
        assert!(err.contains("TP1") && err.contains("SP3"));
    }

    #[test]
    fn quadratic_sign_constraints() {
        let mut cfg = VariantConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.tp3.c = 0.5;
        assert!(cfg.validate().is_err());
    }
}
