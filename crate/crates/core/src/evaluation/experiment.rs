use std::collections::BTreeSet;
use std::hash::Hasher;
use std::io::Write;

use fnv::FnvHasher;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_learners::{
    featurize_text, train_on_features, BaseLearner, EncodingTable, FeatureVector, LearnerConfig, TrainingSet,
};
use crate::data::{stratified_split, stratified_subsample, Dataset, SplitSpec};
use crate::ensemble::{
    apply_meta_weighting, apply_prior_weighting, predict_target, train_ensemble_mlp, EncodingVector, EnsembleConfig,
    EnsembleModel,
};
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::metafeatures::{
    compute_observation_meta, compute_variant_weight, ObservationMeta, VariantConfig, VariantKind, VariantStats,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    pub split_ratios: [f64; 3],
    pub prior_weighting: bool,
    /// Also score a learner trained on the target label directly.
    pub direct: bool,
    pub learner: LearnerConfig,
    pub ensemble: EnsembleConfig,
    pub variant_config: VariantConfig<f64>,
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: VariantKind::ALL.to_vec(),
            seeds: (1..=5).collect(),
            split_ratios: SplitSpec::default().ratios,
            prior_weighting: true,
            direct: true,
            learner: LearnerConfig::default(),
            ensemble: EnsembleConfig::default(),
            variant_config: VariantConfig::default(),
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if distinct.len() < 2 {
            return Err(Error::Config("at least two seeds are required".into()));
        }
        let variants: BTreeSet<VariantKind> = self.variants.iter().copied().collect();
        if variants.len() != self.variants.len() {
            return Err(Error::Config("variants must be distinct".into()));
        }
        SplitSpec { ratios: self.split_ratios, seed: 0 }.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.learner.validate()?;
        self.ensemble.train.validate()?;
        self.variant_config.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    /// Seeds in ascending order; reports never depend on the order given.
    pub fn sorted_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s
    }
}

/// Test macro-F1 of one report row across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowScore {
    pub name: String,
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

impl RowScore {
    pub fn new(name: impl Into<String>, per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        RowScore { name: name.into(), mean, per_seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment_id: String,
    pub seeds: Vec<u64>,
    pub base: RowScore,
    pub direct: Option<RowScore>,
    pub variants: Vec<RowScore>,
    pub config_snapshot: String,
}

impl Report {
    pub fn variant(&self, kind: VariantKind) -> Option<&RowScore> {
        self.variants.iter().find(|r| r.name == kind.name())
    }

    /// Every row: variants in configured order, then base, then direct.
    pub fn rows(&self) -> impl Iterator<Item = &RowScore> {
        self.variants.iter().chain(std::iter::once(&self.base)).chain(self.direct.iter())
    }

    /// Writes `row,mean,n_seeds`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "mean_macro_f1", "n_seeds"])?;
        for r in self.rows() {
            w.write_record([r.name.clone(), r.mean.to_string(), r.per_seed.len().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `row,seed,macro_f1`.
    pub fn write_scores_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "seed", "macro_f1"])?;
        for r in self.rows() {
            for (s, v) in self.seeds.iter().zip(&r.per_seed) {
                w.write_record([r.name.clone(), s.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Test scores of one seed.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SeedScores {
    pub base: f64,
    pub direct: Option<f64>,
    pub variants: Vec<f64>,
}

fn experiment_id(snapshot: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(snapshot.as_bytes());
    format!("{:016x}", h.finish())
}

pub(crate) fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub(crate) fn assemble(config: &ExperimentConfig, seeds: &[u64], results: &[SeedScores]) -> Result<Report> {
    let canonical = ExperimentConfig { seeds: seeds.to_vec(), ..config.clone() };
    let snapshot = toml::to_string(&canonical).map_err(|e| Error::Internal(e.to_string()))?;
    let column = |f: &dyn Fn(&SeedScores) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    Ok(Report {
        experiment_id: experiment_id(&snapshot),
        seeds: seeds.to_vec(),
        base: RowScore::new("base", column(&|r| r.base)),
        direct: config.direct.then(|| RowScore::new("direct", column(&|r| r.direct.unwrap_or(f64::NAN)))),
        variants: config
            .variants
            .iter()
            .enumerate()
            .map(|(j, v)| RowScore::new(v.name(), column(&|r| r.variants[j])))
            .collect(),
        config_snapshot: snapshot,
    })
}

/// Splits, trains and scores every configured row for each seed, then
/// averages over seeds.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<Report> {
    run_experiment_inner(dataset, config, None)
}

/// As [`run_experiment`], with raw encodings read from an imported table
/// instead of trained base learners.
pub fn run_experiment_with_encodings(
    dataset: &Dataset,
    config: &ExperimentConfig,
    table: &EncodingTable<f64>,
) -> Result<Report> {
    run_experiment_inner(dataset, config, Some(table))
}

fn run_experiment_inner(dataset: &Dataset, config: &ExperimentConfig, table: Option<&EncodingTable<f64>>) -> Result<Report> {
    config.validate()?;
    let seeds = config.sorted_seeds();
    let prepared = Prepared::new(dataset, config, table)?;
    let results = with_pool(config.jobs, || {
        seeds.par_iter().map(|&s| prepared.run_seed(dataset, config, s)).collect::<Result<Vec<_>>>()
    })??;
    assemble(config, &seeds, &results)
}

/// Seed-independent inputs: features and meta-features for every text.
pub(crate) struct Prepared<'a> {
    features: Vec<FeatureVector<f64>>,
    metas: Vec<ObservationMeta<f64>>,
    table: Option<&'a EncodingTable<f64>>,
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(ds: &Dataset, config: &ExperimentConfig, table: Option<&'a EncodingTable<f64>>) -> Result<Self> {
        let features = featurize_dataset(ds, &config.learner).map_err(|e| e.in_stage("featurize"))?;
        let metas = compute_observation_meta::<f64>(ds).map_err(|e| e.in_stage("meta-features"))?;
        if metas.len() != ds.len() {
            return Err(Error::Internal("meta-features do not cover every text".into()).in_stage("meta-features"));
        }
        if let Some(t) = table {
            t.require_complete(ds.texts().iter().map(|t| t.text_id.as_str()), &ds.schema().aux)
                .map_err(|e| e.in_stage("encode"))?;
        }
        Ok(Prepared { features, metas, table })
    }

    pub(crate) fn run_seed(&self, ds: &Dataset, config: &ExperimentConfig, seed: u64) -> Result<SeedScores> {
        let split = stratified_split(ds, &SplitSpec { ratios: config.split_ratios, seed }, &ds.schema().target)
            .map_err(|e| e.in_stage("split"))?;
        for w in &split.warnings {
            warn!("seed {seed}: {w}");
        }
        let idx = &split.indices;
        let raw = match self.table {
            Some(table) => table_encodings(ds, table).map_err(|e| e.in_stage("encode"))?,
            None => {
                let learners = train_aux_learners(ds, idx, &self.features, &config.learner, seed)
                    .map_err(|e| e.in_stage("base-learners"))?;
                raw_encodings(&self.features, &learners).map_err(|e| e.in_stage("encode"))?
            }
        };
        let base = train_head(ds, idx, &raw, &self.metas, config, None, seed)
            .map_err(|e| e.in_stage("ensemble:base"))?
            .test_macro_f1;
        let variants = config
            .variants
            .par_iter()
            .map(|&kind| {
                train_head(ds, idx, &raw, &self.metas, config, Some(kind), seed)
                    .map(|h| h.test_macro_f1)
                    .map_err(|e| e.in_stage(format!("ensemble:{kind}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let direct = if config.direct {
            Some(direct_score(ds, idx, &self.features, &config.learner, seed).map_err(|e| e.in_stage("direct"))?)
        } else {
            None
        };
        Ok(SeedScores { base, direct, variants })
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Trains one base learner per auxiliary label on the training part of
/// `split` (text indices into `ds`), validating on the second part.
pub fn train_aux_learners(
    ds: &Dataset,
    split: &[Vec<usize>; 3],
    features: &[FeatureVector<f64>],
    config: &LearnerConfig,
    seed: u64,
) -> Result<Vec<BaseLearner<f64>>> {
    let mut cfg = config.clone();
    cfg.train.seed = seed;
    let (xt, xv) = (pick(features, &split[0]), pick(features, &split[1]));
    ds.schema()
        .aux
        .iter()
        .map(|label| {
            let classes = ds.classes(label)?;
            let (yt, yv) = (pick(&classes, &split[0]), pick(&classes, &split[1]));
            let arch = cfg.architecture(cfg.featurizer.dim);
            train_on_features(label, arch, TrainingSet::new(&xt, &yt), TrainingSet::new(&xv, &yv), &cfg)
        })
        .collect()
}

/// Positive-class probabilities of every learner for every text.
pub fn raw_encodings(features: &[FeatureVector<f64>], learners: &[BaseLearner<f64>]) -> Result<Vec<Vec<f64>>> {
    features.iter().map(|x| learners.iter().map(|l| l.predict_proba_features(x)).collect()).collect()
}

/// Imported probabilities for every text, in schema order.
pub fn table_encodings(ds: &Dataset, table: &EncodingTable<f64>) -> Result<Vec<Vec<f64>>> {
    let aux = &ds.schema().aux;
    table.require_complete(ds.texts().iter().map(|t| t.text_id.as_str()), aux)?;
    Ok(ds
        .texts()
        .iter()
        .map(|t| aux.iter().map(|l| table.get(&t.text_id, l).expect("completeness checked")).collect())
        .collect())
}

/// A trained head with the encodings it consumed and its test score.
#[derive(Clone, Debug)]
pub struct HeadOutcome {
    pub model: EnsembleModel<f64>,
    pub encodings: Vec<EncodingVector<f64>>,
    pub test_macro_f1: f64,
}

/// Weights the raw encodings (priors when enabled, then `variant` if given),
/// trains the perceptron head on the training part and scores the test part.
pub fn train_head(
    ds: &Dataset,
    split: &[Vec<usize>; 3],
    raw: &[Vec<f64>],
    metas: &[ObservationMeta<f64>],
    config: &ExperimentConfig,
    variant: Option<VariantKind>,
    seed: u64,
) -> Result<HeadOutcome> {
    let [tr, va, te] = split;
    let priors: Vec<f64> = ds
        .schema()
        .aux
        .iter()
        .map(|l| {
            let c = pick(&ds.classes(l)?, tr);
            Ok(c.iter().filter(|&&v| v).count() as f64 / c.len() as f64)
        })
        .collect::<Result<_>>()?;
    let stats = VariantStats::fit(tr.iter().map(|&i| &metas[i]), &config.variant_config);
    let encodings: Vec<EncodingVector<f64>> = (0..ds.len())
        .map(|i| {
            let mut e = EncodingVector::raw(ds.texts()[i].text_id.clone(), raw[i].clone());
            if config.prior_weighting {
                e = apply_prior_weighting(&e, &priors)?;
            }
            if let Some(kind) = variant {
                let w = compute_variant_weight(&metas[i], kind, &stats, &config.variant_config)?;
                e = apply_meta_weighting(&e, &w.value)?;
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let targets = ds.target_classes()?;
    let mut ens_cfg = config.ensemble.clone();
    ens_cfg.train.seed = seed;
    let (et, ev, ee) = (pick(&encodings, tr), pick(&encodings, va), pick(&encodings, te));
    let (yt, yv, ye) = (pick(&targets, tr), pick(&targets, va), pick(&targets, te));
    let mut model = train_ensemble_mlp((&et, &yt), (&ev, &yv), &ens_cfg)?;
    model.priors = config.prior_weighting.then_some(priors);
    model.variant = variant;
    let preds = ee.iter().map(|e| Ok(predict_target(&model, e)?.0 == 1)).collect::<Result<Vec<bool>>>()?;
    let test_macro_f1 = macro_f1(&preds, &ye)?;
    Ok(HeadOutcome { model, encodings, test_macro_f1 })
}

/// Test macro-F1 of a base learner trained on the target label itself.
pub fn direct_score(
    ds: &Dataset,
    split: &[Vec<usize>; 3],
    features: &[FeatureVector<f64>],
    config: &LearnerConfig,
    seed: u64,
) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.train.seed = seed;
    let targets = ds.target_classes()?;
    let [tr, va, te] = split;
    let (xt, xv, xe) = (pick(features, tr), pick(features, va), pick(features, te));
    let (yt, yv, ye) = (pick(&targets, tr), pick(&targets, va), pick(&targets, te));
    let arch = cfg.architecture(cfg.featurizer.dim);
    let l = train_on_features(&ds.schema().target, arch, TrainingSet::new(&xt, &yt), TrainingSet::new(&xv, &yv), &cfg)?;
    let preds = xe.iter().map(|x| l.predict_label_features(x)).collect::<Result<Vec<bool>>>()?;
    macro_f1(&preds, &ye)
}

/// Hashed n-gram features of every text.
pub fn featurize_dataset(ds: &Dataset, config: &LearnerConfig) -> Result<Vec<FeatureVector<f64>>> {
    ds.texts().iter().map(|t| featurize_text(&t.text, &config.featurizer)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub report: Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Writes `size,variant,score` with the seed-averaged macro-F1.
    pub fn write_curve_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["size", "variant", "score"])?;
        for row in &self.rows {
            for r in row.report.rows() {
                w.write_record([row.size.to_string(), r.name.clone(), r.mean.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Size with the best mean score for `row` (earliest on ties).
    pub fn best_size(&self, row: &str) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for r in &self.rows {
            if let Some(s) = r.report.rows().find(|s| s.name == row) {
                if best.is_none_or(|(b, _)| s.mean > b) {
                    best = Some((s.mean, r.size));
                }
            }
        }
        best.map(|(_, n)| n)
    }
}

/// Runs the experiment on stratified subsamples of increasing size. For a
/// given seed every row at a size sees the same subsample.
pub fn ablate_dataset_size(dataset: &Dataset, config: &ExperimentConfig, sizes: &[usize]) -> Result<AblationReport> {
    config.validate()?;
    if sizes.is_empty() {
        return Err(Error::arg("no sizes given"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!("sizes must be strictly increasing: {sizes:?}")));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n > dataset.len()) {
        return Err(Error::arg(format!("size {n} exceeds dataset size {}", dataset.len())));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 250) {
        warn!("size {n} is below 250 observations; scores may be unstable");
    }
    let seeds = config.sorted_seeds();
    let target = dataset.schema().target.clone();
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let results = with_pool(config.jobs, || {
            seeds
                .par_iter()
                .map(|&s| {
                    let sub = stratified_subsample(dataset, size, s, &target).map_err(|e| e.in_stage("subsample"))?;
                    Prepared::new(&sub, config, None)?.run_seed(&sub, config, s)
                })
                .collect::<Result<Vec<_>>>()
        })??;
        rows.push(AblationRow { size, report: assemble(config, &seeds, &results)? });
    }
    Ok(AblationReport { rows })
}
