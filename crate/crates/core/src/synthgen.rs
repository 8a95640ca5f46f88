//! Synthetic annotation campaigns with known ground truth and behavior-linked
//! annotator noise.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::CohortObservation;
use crate::data::{AnnotationRecord, Dataset, LabelSchema, Qualification, TextUnit};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub base_competence: f64,
    /// Competence lost per unit of task fraction completed.
    pub fatigue_rate: f64,
    /// Mean and standard deviation of log worktime (log seconds).
    pub speed_mean: f64,
    pub speed_sd: f64,
    pub speeding_threshold: f64,
    pub speeding_penalty: f64,
    pub qualification: Qualification,
}

impl AnnotatorProfile {
    pub fn effective_competence(&self, task_fraction: f64, worktime_s: f64) -> f64 {
        let speeding = if worktime_s < self.speeding_threshold { self.speeding_penalty } else { 0.0 };
        (self.base_competence - self.fatigue_rate * task_fraction - speeding).clamp(0.5, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_texts: usize,
    pub target: String,
    pub aux: Vec<String>,
    /// Positive-class rate of each auxiliary label.
    pub aux_prevalence: Vec<f64>,
    /// Target is positive iff `w . aux + b > 0`, then flipped with `label_noise`.
    pub link_weights: Vec<f64>,
    pub link_bias: f64,
    pub label_noise: f64,
    pub n_annotators: usize,
    pub annotators_per_text: usize,
    /// Range base competence is drawn from.
    pub competence_range: [f64; 2],
    pub fatigue_rate: f64,
    pub speeding_penalty: f64,
    pub speeding_threshold_s: f64,
    /// Range of per-annotator median worktime, seconds.
    pub median_worktime_range_s: [f64; 2],
    pub worktime_log_sd: f64,
    /// Added to log worktime for each positive gold auxiliary label.
    pub effort_per_positive: f64,
    pub master_fraction: f64,
    /// Chance that a text mentions each of its positive labels' keywords.
    pub keyword_rate: f64,
    /// Chance that a text mentions a keyword of a negative label.
    pub keyword_noise: f64,
    pub keywords_per_label: usize,
    pub filler_vocab: usize,
    pub filler_words: [usize; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_texts: 2000,
            target: "target".into(),
            aux: (1..=4).map(|j| format!("aux{j}")).collect(),
            aux_prevalence: vec![0.4; 4],
            link_weights: vec![1.0; 4],
            link_bias: -1.5,
            label_noise: 0.05,
            n_annotators: 5,
            annotators_per_text: 3,
            competence_range: [0.8, 0.95],
            fatigue_rate: 0.2,
            speeding_penalty: 0.25,
            speeding_threshold_s: 30.0,
            median_worktime_range_s: [30.0, 60.0],
            worktime_log_sd: 0.5,
            effort_per_positive: 0.2,
            master_fraction: 0.4,
            keyword_rate: 0.8,
            keyword_noise: 0.05,
            keywords_per_label: 5,
            filler_vocab: 300,
            filler_words: [8, 24],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.aux.len();
        let bad = |m: String| Err(Error::Config(m));
        if self.n_texts < 1 {
            return bad("n_texts must be >= 1".into());
        }
        if p == 0 {
            return bad("at least one auxiliary label is required".into());
        }
        if self.aux_prevalence.len() != p || self.link_weights.len() != p {
            return bad(format!("aux_prevalence and link_weights need {p} entries"));
        }
        if self.aux_prevalence.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("aux_prevalence entries must lie in [0,1]".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 0.5)".into());
        }
        if self.annotators_per_text < 1 || self.annotators_per_text > self.n_annotators {
            return bad("annotators_per_text must be in 1..=n_annotators".into());
        }
        let [lo, hi] = self.competence_range;
        if !(lo > 0.5 && lo <= hi && hi <= 1.0) {
            return bad("competence_range must satisfy 0.5 < lo <= hi <= 1".into());
        }
        if self.fatigue_rate < 0.0 || self.speeding_penalty < 0.0 {
            return bad("fatigue_rate and speeding_penalty must be >= 0".into());
        }
        let [wlo, whi] = self.median_worktime_range_s;
        if !(wlo > 0.0 && wlo <= whi) || !(self.worktime_log_sd >= 0.0) {
            return bad("invalid worktime parameters".into());
        }
        if !(0.0..=1.0).contains(&self.master_fraction)
            || !(0.0..=1.0).contains(&self.keyword_rate)
            || !(0.0..=1.0).contains(&self.keyword_noise)
        {
            return bad("rates must lie in [0,1]".into());
        }
        if self.keywords_per_label < 1 || self.filler_vocab < 1 || self.filler_words[0] > self.filler_words[1] {
            return bad("invalid text vocabulary parameters".into());
        }
        if self.aux.iter().any(|a| a == &self.target) {
            return bad("target name collides with an auxiliary label".into());
        }
        Ok(())
    }
}

/// Draws annotator profiles. Exactly `round(master_fraction * n)` of them
/// are masters, placed at random.
pub fn generate_annotators(cfg: &SynthConfig, seed: u64) -> Result<Vec<AnnotatorProfile>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_annotators;
    let width = n.to_string().len().max(2);
    let n_master = (cfg.master_fraction * n as f64).round() as usize;
    let masters = sample(&mut rng, n, n_master.min(n)).into_vec();
    let [lo, hi] = cfg.competence_range;
    let [wlo, whi] = cfg.median_worktime_range_s;
    Ok((0..n)
        .map(|a| AnnotatorProfile {
            annotator_id: format!("A{:0width$}", a + 1),
            base_competence: if lo == hi { lo } else { rng.random_range(lo..=hi) },
            fatigue_rate: cfg.fatigue_rate,
            speed_mean: if wlo == whi { wlo.ln() } else { rng.random_range(wlo.ln()..=whi.ln()) },
            speed_sd: cfg.worktime_log_sd,
            speeding_threshold: cfg.speeding_threshold_s,
            speeding_penalty: cfg.speeding_penalty,
            qualification: if masters.contains(&a) { Qualification::Master } else { Qualification::Normal },
        })
        .collect())
}

/// A generated campaign together with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthData {
    /// Annotations plus the gold target column.
    pub dataset: Dataset,
    /// Gold auxiliary labels per text, in schema order.
    pub gold_aux: Vec<Vec<bool>>,
    pub profiles: Vec<AnnotatorProfile>,
}

fn text_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_dataset(profiles: &[AnnotatorProfile], cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    cfg.validate()?;
    if profiles.len() < cfg.annotators_per_text {
        return Err(Error::Config(format!(
            "{} profiles cannot cover {} annotators per text",
            profiles.len(),
            cfg.annotators_per_text
        )));
    }
    let n = cfg.n_texts;
    let width = n.to_string().len().max(4);
    let mut assign_rng = text_rng(seed, 0);
    let assignments: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut a = sample(&mut assign_rng, profiles.len(), cfg.annotators_per_text).into_vec();
            a.sort_unstable();
            a
        })
        .collect();
    let mut totals = vec![0usize; profiles.len()];
    for a in assignments.iter().flatten() {
        totals[*a] += 1;
    }
    let mut done = vec![0usize; profiles.len()];
    let lognormals: Vec<LogNormal<f64>> = profiles
        .iter()
        .map(|p| LogNormal::new(0.0, p.speed_sd).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let schema = LabelSchema::new(cfg.target.clone(), cfg.aux.clone());
    let mut texts = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n * cfg.annotators_per_text);
    let mut gold = BTreeMap::new();
    let mut gold_aux = Vec::with_capacity(n);
    for (i, assigned) in assignments.iter().enumerate() {
        let mut rng = text_rng(seed, i as u64 + 1);
        let text_id = format!("t{:0width$}", i + 1);
        let aux: Vec<bool> = cfg.aux_prevalence.iter().map(|&q| rng.random_bool(q)).collect();
        let link: f64 = cfg.link_weights.iter().zip(&aux).filter(|(_, &a)| a).map(|(w, _)| w).sum::<f64>() + cfg.link_bias;
        let target = (link > 0.0) ^ rng.random_bool(cfg.label_noise);
        let text = synth_text(&mut rng, cfg, &aux);
        let n_pos = aux.iter().filter(|&&a| a).count() as f64;
        for &a in assigned {
            let prof = &profiles[a];
            let fraction = done[a] as f64 / totals[a] as f64;
            done[a] += 1;
            let raw = (prof.speed_mean + cfg.effort_per_positive * n_pos).exp() * lognormals[a].sample(&mut rng);
            let worktime = ((raw * 100.0).round() / 100.0).max(0.01);
            let competence = prof.effective_competence(fraction, worktime);
            let mut labels = BTreeMap::new();
            for (name, &g) in cfg.aux.iter().zip(&aux).chain(std::iter::once((&cfg.target, &target))) {
                let flip = rng.random_bool(1.0 - competence);
                labels.insert(name.clone(), i64::from(g ^ flip));
            }
            records.push(AnnotationRecord {
                text_id: text_id.clone(),
                annotator_id: prof.annotator_id.clone(),
                labels,
                worktime_s: worktime,
                annotator_throughput: totals[a] as u64,
                qualification: prof.qualification,
            });
        }
        gold.insert(text_id.clone(), i64::from(target));
        texts.push(TextUnit { text_id, text });
        gold_aux.push(aux);
    }
    let dataset = Dataset::new(texts, records, schema, gold)?;
    Ok(SynthData { dataset, gold_aux, profiles: profiles.to_vec() })
}

/// Profiles from `cfg.seed`, campaign from `cfg.seed + 1`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let profiles = generate_annotators(cfg, cfg.seed)?;
    generate_dataset(&profiles, cfg, cfg.seed.wrapping_add(1))
}

fn synth_text(rng: &mut ChaCha8Rng, cfg: &SynthConfig, aux: &[bool]) -> String {
    let [lo, hi] = cfg.filler_words;
    let len = rng.random_range(lo..=hi);
    let mut words: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..cfg.filler_vocab))).collect();
    for (j, &a) in aux.iter().enumerate() {
        let rate = if a { cfg.keyword_rate } else { cfg.keyword_noise };
        if rng.random_bool(rate) {
            let k = rng.random_range(0..cfg.keywords_per_label);
            let at = rng.random_range(0..=words.len());
            words.insert(at, format!("{}k{k}", cfg.aux[j]));
        }
    }
    if words.is_empty() {
        words.push("w0".into());
    }
    words.join(" ")
}

/// Writes the annotator profiles as JSON.
pub fn write_manifest<W: Write>(profiles: &[AnnotatorProfile], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, profiles)?;
    Ok(())
}

/// Alignment observations with a planted logistic model over the cohort
/// design (intercept, speed, throughput, master, master x speed,
/// master x throughput).
pub fn generate_alignment_data(n: usize, beta: &[f64; 6], master_rate: f64, seed: u64) -> Vec<CohortObservation<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let speed: f64 = rng.random();
            let throughput: f64 = rng.random();
            let master = rng.random_bool(master_rate);
            let m = f64::from(u8::from(master));
            let eta = beta[0] + beta[1] * speed + beta[2] * throughput + beta[3] * m + beta[4] * m * speed + beta[5] * m * throughput;
            let aligned = rng.random_bool(1.0 / (1.0 + (-eta).exp()));
            CohortObservation { aligned, speed, throughput, master }
        })
        .collect()
}
