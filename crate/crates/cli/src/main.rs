//! `weem` command-line driver.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use weem_core::base_learners::{write_encodings, EncodingTable};
use weem_core::cohort::{cohort_observations, cohort_stats, fit_logistic_cohort, write_coefficients, IrlsConfig};
use weem_core::config::{load_config, RunConfig};
use weem_core::data::{ingest_dataset, stratified_split, write_dataset_csv, Dataset, SchemaSpec, SplitSpec};
use weem_core::ensemble::write_encoding_vectors;
use weem_core::evaluation::{
    ablate_dataset_size, featurize_dataset, raw_encodings, run_experiment, run_experiment_with_encodings,
    table_encodings, train_aux_learners, train_head, Report,
};
use weem_core::metafeatures::{compute_observation_meta, compute_variant_weights, write_variant_weights, VariantKind, VariantStats};
use weem_core::synthgen::{generate_annotators, generate_dataset, write_manifest, SynthConfig};
use weem_core::{persist, VariantWeight};

#[derive(Parser)]
#[command(name = "weem", version, about = "Metadata-weighted encoding ensembles for crowdsourced annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; replaces the configured seeds with consecutive values.
    #[arg(long, env = "WEEM_SEED")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotation campaign from `[synth]`.
    Simulate(Common),
    /// Validate an annotation table and write it in canonical form.
    Ingest(Common),
    /// Compute meta-feature weights for every configured variant.
    Featurize(Common),
    /// Train one base learner per auxiliary label and dump their encodings.
    TrainBase(Common),
    /// Train the perceptron head on (optionally weighted) encodings.
    TrainEnsemble {
        #[command(flatten)]
        common: Common,
        /// Meta-feature variant to weight with; omit for the unweighted head.
        #[arg(long)]
        variant: Option<VariantKind>,
    },
    /// Run the full experiment over all seeds and variants.
    Evaluate(Common),
    /// Repeat the experiment on stratified subsamples of increasing size.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sizes; overrides `ablation_sizes`.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Cohort statistics and the alignment regression.
    Cohort(Common),
    /// Print the summary of a finished evaluation.
    Report {
        /// Directory holding `report.json`.
        #[arg(long)]
        input: PathBuf,
        /// Where to write `report.txt`; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = load_config(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.override_seed(seed);
        }
        if common.jobs.is_some() {
            cfg.jobs = common.jobs;
        }
        cfg.validate()?;
        let out = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("weem-out"));
        fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
        fs::write(out.join("config.toml"), cfg.to_toml()?)?;
        Ok(Ctx { cfg, out })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.out.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("cannot create {}", p.display()))?))
    }

    fn seed(&self) -> u64 {
        self.cfg.seeds[0]
    }

    fn split(&self, ds: &Dataset) -> Result<[Vec<usize>; 3]> {
        let spec = SplitSpec { ratios: self.cfg.split, seed: self.seed() };
        let split = stratified_split(ds, &spec, &ds.schema().target)?;
        for w in &split.warnings {
            warn!("{w}");
        }
        Ok(split.indices)
    }
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let synth = ctx.cfg.synth.clone().unwrap_or_else(SynthConfig::default);
    let profiles = generate_annotators(&synth, synth.seed)?;
    let data = generate_dataset(&profiles, &synth, synth.seed.wrapping_add(1))?;
    write_dataset_csv(&data.dataset, ctx.file("annotations.csv")?)?;
    write_manifest(&data.profiles, ctx.file("manifest.json")?)?;
    let mut w = csv::Writer::from_writer(ctx.file("gold_aux.csv")?);
    let mut header = vec!["text_id".to_string()];
    header.extend(synth.aux.iter().cloned());
    w.write_record(&header)?;
    for (t, gold) in data.dataset.texts().iter().zip(&data.gold_aux) {
        let mut row = vec![t.text_id.clone()];
        row.extend(gold.iter().map(|&g| u8::from(g).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("wrote {} texts, {} annotations to {}", data.dataset.len(), data.dataset.records().len(), ctx.out.display());
    Ok(())
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let Some(path) = &ctx.cfg.dataset else { bail!("ingest needs `dataset` in the config") };
    let spec = SchemaSpec { target: ctx.cfg.target_name().to_string(), aux: ctx.cfg.aux.clone() };
    let ing = ingest_dataset(path, &spec)?;
    for e in &ing.row_errors {
        warn!("{e}");
    }
    write_dataset_csv(&ing.dataset, ctx.file("dataset.csv")?)?;
    let summary = serde_json::json!({
        "rows_read": ing.rows_read,
        "texts": ing.dataset.len(),
        "records": ing.dataset.records().len(),
        "target": ing.dataset.schema().target,
        "aux": ing.dataset.schema().aux,
        "row_errors": ing.row_errors.iter().map(|e| serde_json::json!({"line": e.line, "message": e.message})).collect::<Vec<_>>(),
    });
    serde_json::to_writer_pretty(ctx.file("ingest.json")?, &summary)?;
    println!("{} rows read, {} texts, {} rejected rows", ing.rows_read, ing.dataset.len(), ing.row_errors.len());
    Ok(())
}

fn featurize(ctx: &Ctx) -> Result<()> {
    let ds = ctx.cfg.load_dataset()?;
    let metas = compute_observation_meta::<f64>(&ds)?;
    let [train, _, _] = ctx.split(&ds)?;
    let stats = VariantStats::fit(train.iter().map(|&i| &metas[i]), &ctx.cfg.metafeatures);
    let mut all: Vec<VariantWeight> = Vec::new();
    for &kind in &ctx.cfg.variants {
        all.extend(compute_variant_weights(&metas, kind, &stats, &ctx.cfg.metafeatures)?);
    }
    write_variant_weights(&all, ctx.file("metafeatures.csv")?)?;
    println!("wrote {} weights for {} texts", all.len(), metas.len());
    Ok(())
}

fn train_base(ctx: &Ctx) -> Result<()> {
    let ds = ctx.cfg.load_dataset()?;
    let split = ctx.split(&ds)?;
    let features = featurize_dataset(&ds, &ctx.cfg.learner)?;
    let learners = train_aux_learners(&ds, &split, &features, &ctx.cfg.learner, ctx.seed())?;
    for l in &learners {
        persist::save("base_learner", l, ctx.out.join(format!("base_{}.json", l.label_name)))?;
    }
    let raw = raw_encodings(&features, &learners)?;
    let mut table = EncodingTable::new();
    for (t, row) in ds.texts().iter().zip(&raw) {
        for (label, &p) in ds.schema().aux.iter().zip(row) {
            table.insert(&t.text_id, label, p)?;
        }
    }
    write_encodings(&table, ctx.file("encodings.csv")?)?;
    println!("trained {} base learners; encodings in {}", learners.len(), ctx.out.join("encodings.csv").display());
    Ok(())
}

fn train_ensemble(ctx: &Ctx, variant: Option<VariantKind>) -> Result<()> {
    let ds = ctx.cfg.load_dataset()?;
    let split = ctx.split(&ds)?;
    let raw = match ctx.cfg.load_encodings()? {
        Some(table) => table_encodings(&ds, &table)?,
        None => {
            let features = featurize_dataset(&ds, &ctx.cfg.learner)?;
            let learners = train_aux_learners(&ds, &split, &features, &ctx.cfg.learner, ctx.seed())?;
            raw_encodings(&features, &learners)?
        }
    };
    let metas = compute_observation_meta::<f64>(&ds)?;
    let head = train_head(&ds, &split, &raw, &metas, &ctx.cfg.experiment(), variant, ctx.seed())?;
    persist::save("ensemble", &head.model, ctx.out.join("ensemble.json"))?;
    write_encoding_vectors(&head.encodings, ctx.file("encoding_vectors.csv")?)?;
    let name = variant.map_or("base", VariantKind::name);
    let scores = serde_json::json!({ "row": name, "seed": ctx.seed(), "test_macro_f1": head.test_macro_f1 });
    serde_json::to_writer_pretty(ctx.file("ensemble_scores.json")?, &scores)?;
    println!("{name}: test macro-F1 {:.4}", head.test_macro_f1);
    Ok(())
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    let open = |n: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(n))?)) };
    report.write_json(open("report.json")?)?;
    report.write_summary_csv(open("summary.csv")?)?;
    report.write_scores_csv(open("scores.csv")?)?;
    Ok(())
}

fn evaluate(ctx: &Ctx) -> Result<()> {
    let ds = ctx.cfg.load_dataset()?;
    let exp = ctx.cfg.experiment();
    let mut report = match ctx.cfg.load_encodings()? {
        Some(table) => run_experiment_with_encodings(&ds, &exp, &table)?,
        None => run_experiment(&ds, &exp)?,
    };
    report.config_snapshot = ctx.cfg.to_toml()?;
    write_report(&ctx.out, &report)?;
    print!("{}", render(&report));
    Ok(())
}

fn ablate(ctx: &Ctx, sizes: Option<Vec<usize>>) -> Result<()> {
    let sizes = sizes.unwrap_or_else(|| ctx.cfg.ablation_sizes.clone());
    if sizes.is_empty() {
        bail!("no ablation sizes: pass --sizes or set `ablation_sizes`");
    }
    let ds = ctx.cfg.load_dataset()?;
    let mut ab = ablate_dataset_size(&ds, &ctx.cfg.experiment(), &sizes)?;
    let snapshot = ctx.cfg.to_toml()?;
    for row in &mut ab.rows {
        row.report.config_snapshot = snapshot.clone();
    }
    ab.write_curve_csv(ctx.file("ablation.csv")?)?;
    serde_json::to_writer_pretty(ctx.file("ablation.json")?, &ab)?;
    for row in &ab.rows {
        println!("size {}: base {:.4}", row.size, row.report.base.mean);
    }
    if let Some(n) = ab.best_size("base") {
        info!("best base size {n}");
    }
    Ok(())
}

fn cohort(ctx: &Ctx) -> Result<()> {
    let ds = ctx.cfg.load_dataset()?;
    let label = ctx.cfg.cohort.label.clone().unwrap_or_else(|| ds.schema().target.clone());
    let stats = cohort_stats(&ds)?;
    let obs = cohort_observations::<f64>(&ds, &label, ctx.cfg.cohort.tau)?;
    let fit = fit_logistic_cohort(&obs, &IrlsConfig::default())?;
    write_coefficients(&fit, ctx.file("coefficients.csv")?)?;
    let summary = serde_json::json!({ "label": label, "tau": ctx.cfg.cohort.tau, "stats": stats, "fit": fit });
    serde_json::to_writer_pretty(ctx.file("cohort.json")?, &summary)?;
    println!(
        "master worktime {:.2}s (n={}) vs other {:.2}s (n={}); Welch t={:.3} p={:.3e}",
        stats.master.worktime_mean,
        stats.master.n,
        stats.other.worktime_mean,
        stats.other.n,
        stats.worktime_test.t,
        stats.worktime_test.p
    );
    if !fit.converged {
        warn!("alignment regression did not converge: {}", fit.diagnostic.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn render(report: &Report) -> String {
    let mut s = format!("experiment {} over seeds {:?}\n", report.experiment_id, report.seeds);
    s.push_str(&format!("{:<8} {:>10}\n", "row", "macro_f1"));
    for r in report.rows() {
        s.push_str(&format!("{:<8} {:>10.4}\n", r.name, r.mean));
    }
    s
}

fn report(input: &Path, out: Option<&Path>) -> Result<()> {
    let path = input.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let report: Report = serde_json::from_str(&text)?;
    let rendered = render(&report);
    let dir = out.unwrap_or(input);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), &rendered)?;
    print!("{rendered}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => simulate(&Ctx::new(&c)?),
        Command::Ingest(c) => ingest(&Ctx::new(&c)?),
        Command::Featurize(c) => featurize(&Ctx::new(&c)?),
        Command::TrainBase(c) => train_base(&Ctx::new(&c)?),
        Command::TrainEnsemble { common, variant } => train_ensemble(&Ctx::new(&common)?, variant),
        Command::Evaluate(c) => evaluate(&Ctx::new(&c)?),
        Command::Ablate { common, sizes } => ablate(&Ctx::new(&common)?, sizes),
        Command::Cohort(c) => cohort(&Ctx::new(&c)?),
        Command::Report { input, out } => report(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
