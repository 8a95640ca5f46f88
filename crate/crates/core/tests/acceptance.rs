//! Acceptance criteria 1-11. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weem_core::base_learners::{Architecture, FeatureVector, TrainingSet};
use weem_core::baselines::{mace_em_from, mace_fit, MaceConfig};
use weem_core::cohort::{fit_logistic_cohort, IrlsConfig};
use weem_core::config::{load_config, RunConfig};
use weem_core::data::{pearson_correlation, split_sizes, stratified_split, SplitSpec};
use weem_core::ensemble::{apply_meta_weighting, DenseNet, DenseSet, EncodingVector};
use weem_core::evaluation::{ablate_dataset_size, macro_f1, run_experiment, Report};
use weem_core::metafeatures::{
    compute_observation_meta, compute_variant_weight, VariantConfig, VariantKind, VariantStats, WeightValue,
};
use weem_core::synthgen::generate_alignment_data;

type Outcome = Result<String, String>;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn within(limit: Duration, started: Instant, outcome: Outcome) -> Outcome {
    let took = started.elapsed();
    match outcome {
        Ok(msg) if took > limit => Err(format!("{msg}; took {took:.1?}, limit {limit:?}")),
        other => other,
    }
}

fn c1_walkthrough() -> Outcome {
    let e = EncodingVector::raw("t", vec![0.7, 0.2, 0.6, 0.9]);
    let out = apply_meta_weighting(&e, &WeightValue::PerLabel(vec![0.5, 0.3, 0.7, 0.6])).map_err(|e| e.to_string())?;
    let want: [f64; 4] = [0.35, 0.06, 0.42, 0.54];
    if out.values.iter().zip(want).all(|(a, b): (&f64, f64)| a.to_bits() == b.to_bits()) {
        Ok(format!("{:?}", out.values))
    } else {
        Err(format!("{:?} != {want:?}", out.values))
    }
}

fn c2_variants() -> Outcome {
    use VariantKind::*;
    let ds = common::three_text_fixture();
    let metas = compute_observation_meta::<f64>(&ds).map_err(|e| e.to_string())?;
    let cfg = VariantConfig::default();
    let stats = VariantStats::fit(&metas, &cfg);
    let order = [TP1, TP2, TP3, TP4, WT1, WT2, PC1, PC2, TL1, TL2, SP1, SP2, SP3];
    let w = |m, k| compute_variant_weight(m, k, &stats, &cfg).map(|v| v.value);
    let mut worst = 0.0f64;
    for (meta, (expected, pc3)) in metas.iter().zip(common::FIXTURE_EXPECTED) {
        for (kind, (n, d)) in order.iter().zip(expected) {
            let WeightValue::Scalar(v) = w(meta, *kind).map_err(|e| e.to_string())? else {
                return Err(format!("{kind} is not scalar"));
            };
            worst = worst.max((v - n as f64 / d as f64).abs());
        }
        let WeightValue::PerLabel(v) = w(meta, PC3).map_err(|e| e.to_string())? else {
            return Err("PC3 is not per label".into());
        };
        for (x, (n, d)) in v.iter().zip(pc3) {
            worst = worst.max((x - n as f64 / d as f64).abs());
        }
        let s = |k| match w(meta, k) {
            Ok(WeightValue::Scalar(v)) => v,
            _ => f64::NAN,
        };
        for (sp, a, b) in [(SP1, TP1, TP2), (SP2, WT1, WT2), (SP3, PC1, PC2)] {
            if s(sp) != 0.5 * (s(a) + s(b)) {
                return Err(format!("{sp} on {} is not the exact half-sum", meta.text_id));
            }
        }
    }
    if worst < 1e-12 {
        Ok(format!("14 kinds x 3 texts, max error {worst:.1e}"))
    } else {
        Err(format!("max error {worst:.3e}"))
    }
}

fn benchmark_report(cfg: &RunConfig) -> Result<Report, String> {
    let ds = cfg.load_dataset().map_err(|e| e.to_string())?;
    run_experiment(&ds, &cfg.experiment()).map_err(|e| e.to_string())
}

fn c3_enrichment(report: &Report) -> Outcome {
    let wt1 = report.variant(VariantKind::WT1).ok_or("no WT1 row")?;
    let gain = wt1.mean - report.base.mean;
    let msg = format!("WT1 {:.4} vs base {:.4}, gain {gain:+.4}", wt1.mean, report.base.mean);
    if gain >= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_mace() -> Outcome {
    let m = common::spammer_matrix();
    let cfg = MaceConfig::default();
    let model = mace_fit::<f64>(&m, &cfg).map_err(|e| e.to_string())?;
    if !(model.spam[2] > model.spam[0] && model.spam[2] > model.spam[1]) {
        return Err(format!("spam probabilities {:?}", model.spam));
    }
    let mut post_err = 0.0f64;
    for i in 0..m.n_items() {
        let (want, _) = common::brute_posterior(m.annotations(i), &model.spam, &model.spam_labels, 2);
        for (a, b) in model.posteriors[i].iter().zip(&want) {
            post_err = post_err.max((a - b).abs());
        }
    }
    if post_err >= 1e-9 {
        return Err(format!("posterior error {post_err:.2e}"));
    }
    let levels = [0.2, 0.5, 0.8];
    let mut best = f64::NEG_INFINITY;
    for code in 0..27 * 8 {
        let spam: Vec<f64> = (0..3).map(|j| levels[code / 3usize.pow(j) % 3]).collect();
        let xi: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                let p = if (code / 27) >> j & 1 == 1 { 0.75 } else { 0.25 };
                vec![1.0 - p, p]
            })
            .collect();
        best = best.max(mace_em_from::<f64>(&m, spam, xi, &cfg).map_err(|e| e.to_string())?.log_objective);
    }
    let gap = best - model.log_objective;
    let msg = format!("spam {:.3?}, posterior error {post_err:.1e}, grid gap {gap:.1e}", model.spam);
    if gap <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let dim = rng.random_range(2..7);
        let arch = if case % 2 == 0 { Architecture::logistic(dim) } else { Architecture::mlp(dim, rng.random_range(2..6)) };
        let n = rng.random_range(3..9);
        let xs: Vec<FeatureVector<f64>> = (0..n)
            .map(|_| FeatureVector::from_dense(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let ys: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let data = TrainingSet::new(&xs, &ys);
        let cw = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let params: Vec<f64> = (0..arch.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let mut grad = vec![0.0; arch.n_params()];
        arch.loss_grad(&params, &data, cw, &(0..n).collect::<Vec<_>>(), &mut grad);
        worst = worst.max(common::grad_check(&params, &grad, 1e-5, 1e-7, |p| arch.loss(p, &data, cw)));

        let p = rng.random_range(1..6);
        let net = DenseNet::new(vec![p, rng.random_range(2..7), rng.random_range(2..5), 2]).map_err(|e| e.to_string())?;
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let targets: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let set = DenseSet::new(&inputs, &targets);
        // Random biases too: the initializer's zero biases can put a
        // pre-activation exactly on the rectifier's kink.
        let params: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let mut grad = vec![0.0; net.n_params()];
        net.loss_grad(&params, &set, &cw, &(0..n).collect::<Vec<_>>(), &mut grad);
        worst = worst.max(common::grad_check(&params, &grad, 1e-5, 1e-7, |q| net.loss(q, &set, &cw)));
    }
    let msg = format!("20 learner + 20 head configurations, max relative error {worst:.1e}");
    if worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_split() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let n = rng.random_range(12..300);
        let q = rng.random_range(0.05..0.6);
        let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let recs = ids
            .iter()
            .map(|id| common::record(id, "A", 1, 10.0, &[("a", 0), ("y", i64::from(rng.random_bool(q)))]))
            .collect();
        let texts: Vec<(&str, &str)> = ids.iter().map(|id| (id.as_str(), "x")).collect();
        let ds = common::dataset(&texts, recs, "y", &["a"]);
        let spec = SplitSpec::with_seed(case);
        let split = stratified_split(&ds, &spec, "y").map_err(|e| e.to_string())?;
        let again = stratified_split(&ds, &spec, "y").map_err(|e| e.to_string())?;
        if again.indices != split.indices {
            return Err(format!("dataset {case}: not deterministic"));
        }
        let mut all: Vec<usize> = split.indices.iter().flatten().copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() {
            return Err(format!("dataset {case}: parts overlap or miss texts"));
        }
        let labels = ds.classes("y").map_err(|e| e.to_string())?;
        let sizes = split_sizes(n, &spec.ratios);
        for (part, &m) in split.indices.iter().zip(&sizes) {
            for class in [false, true] {
                let n_c = labels.iter().filter(|&&l| l == class).count() as f64;
                let got = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                worst = worst.max((got - n_c * m as f64 / n as f64).abs());
            }
        }
    }
    let msg = format!("50 datasets, max deviation {worst:.3} observations");
    if worst <= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_macro_f1() -> Outcome {
    let fixtures = common::macro_f1_fixtures();
    let mut worst = 0.0f64;
    for (p, g, want) in &fixtures {
        let got = macro_f1(p, g).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs()).max((got - common::macro_f1_oracle(p, g)).abs());
    }
    let half = macro_f1(&[1, 1, 0, 0], &[1, 0, 1, 0]).map_err(|e| e.to_string())?;
    let msg = format!("{} fixtures, max error {worst:.1e}, [1,1,0,0]/[1,0,1,0] -> {half}", fixtures.len());
    if fixtures.len() >= 10 && worst < 1e-12 && half == 0.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_ablation() -> Outcome {
    let cfg = load_config(config_path("benchmark_ablation.toml")).map_err(|e| e.to_string())?;
    let ds = cfg.load_dataset().map_err(|e| e.to_string())?;
    let abl = ablate_dataset_size(&ds, &cfg.experiment(), &cfg.ablation_sizes).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut detail = Vec::new();
    for row in &abl.rows {
        let wt1 = row.report.variant(VariantKind::WT1).ok_or("no WT1 row")?.mean;
        wins += usize::from(wt1 >= row.report.base.mean);
        detail.push(format!("{}: {:+.3}", row.size, wt1 - row.report.base.mean));
    }
    let msg = format!("WT1 >= base at {wins}/{} sizes [{}]", abl.rows.len(), detail.join(", "));
    if wins as f64 >= 0.75 * abl.rows.len() as f64 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_cohort() -> Outcome {
    let truth = -1.0;
    let beta = [0.2, 0.5, -0.3, 0.4, truth, 0.3];
    let mut hits = 0;
    for seed in 0..20 {
        let obs = generate_alignment_data(2000, &beta, 0.5, 1000 + seed);
        let fit = fit_logistic_cohort(&obs, &IrlsConfig::default()).map_err(|e| e.to_string())?;
        let (b, se) = fit.coefficient("master_x_speed").ok_or("missing interaction term")?;
        hits += usize::from(fit.converged && b < 0.0 && (b - truth).abs() <= 2.0 * se);
    }
    let msg = format!("interaction recovered in {hits}/20 seeds");
    if hits >= 18 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tables(report: &Report) -> Result<(Vec<u8>, Vec<u8>), String> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    report.write_summary_csv(&mut a).map_err(|e| e.to_string())?;
    report.write_scores_csv(&mut b).map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn c10_determinism(first: &Report, cfg: &RunConfig) -> Outcome {
    let second = benchmark_report(cfg)?;
    if tables(first)? == tables(&second)? {
        Ok("summary and per-seed tables byte-identical".into())
    } else {
        Err("report tables differ between runs".into())
    }
}

/// Runs only when `WEEM_CLAFF_CONFIG` names a run config for the
/// CLAff-Diplomacy export with per-annotation metadata.
fn c11_claff(path: &str) -> Outcome {
    let cfg = load_config(path).map_err(|e| e.to_string())?;
    let ds = cfg.load_dataset().map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    if ds.len() != 11_366 {
        problems.push(format!("N = {}", ds.len()));
    }
    let wt: Vec<f64> = ds.records().iter().map(|r| r.worktime_s).collect();
    let mean_wt = wt.iter().sum::<f64>() / wt.len() as f64;
    if (mean_wt / 297.4 - 1.0).abs() > 0.01 {
        problems.push(format!("mean WT {mean_wt:.1}"));
    }
    let metas = compute_observation_meta::<f64>(&ds).map_err(|e| e.to_string())?;
    let pc: Vec<f64> = metas.iter().map(|m| m.pc_mean()).collect();
    let tp: Vec<f64> = metas.iter().map(|m| m.tp_mean()).collect();
    let r = pearson_correlation(&pc, &tp).map_err(|e| e.to_string())?;
    if (r + 0.44).abs() > 0.05 {
        problems.push(format!("PC-TP r = {r:.3}"));
    }
    let mut exp = cfg.experiment();
    exp.variants = vec![VariantKind::PC1];
    let report = run_experiment(&ds, &exp).map_err(|e| e.to_string())?;
    let pc1 = report.variant(VariantKind::PC1).ok_or("no PC1 row")?.mean;
    if pc1 <= report.base.mean {
        problems.push(format!("PC1 {pc1:.3} <= base {:.3}", report.base.mean));
    }
    let msg = format!("N {}, mean WT {mean_wt:.1}, r {r:.3}, PC1 {pc1:.3} vs base {:.3}", ds.len(), report.base.mean);
    if problems.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; off: {}", problems.join(", ")))
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  C{id:<3} {name:<28} {secs:>7.2}s  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  C{id:<3} {name:<28} {secs:>7.2}s  {msg}");
            }
        }
    };
    let secs = Duration::from_secs;

    let t = Instant::now();
    report("1", "walkthrough exactness", t, within(secs(1), t, c1_walkthrough()));
    let t = Instant::now();
    report("2", "variant formula suite", t, within(secs(1), t, c2_variants()));

    let t = Instant::now();
    let bench_cfg = load_config(config_path("benchmark.toml"));
    let bench = bench_cfg.as_ref().map_err(|e| e.to_string()).and_then(benchmark_report);
    let c3 = bench.as_ref().map_err(Clone::clone).and_then(c3_enrichment);
    report("3", "enrichment benefit", t, within(secs(120), t, c3));

    let t = Instant::now();
    report("4", "MACE correctness", t, within(secs(10), t, c4_mace()));
    let t = Instant::now();
    report("5", "gradient checks", t, within(secs(10), t, c5_gradients()));
    let t = Instant::now();
    report("6", "stratified split", t, within(secs(5), t, c6_split()));
    let t = Instant::now();
    report("7", "macro-F1 oracle", t, within(secs(1), t, c7_macro_f1()));
    let t = Instant::now();
    report("8", "ablation trend", t, within(secs(300), t, c8_ablation()));
    let t = Instant::now();
    report("9", "cohort regression recovery", t, within(secs(30), t, c9_cohort()));

    let t = Instant::now();
    let c10 = match (&bench, &bench_cfg) {
        (Ok(first), Ok(cfg)) => c10_determinism(first, cfg),
        _ => Err("criterion 3 run unavailable".into()),
    };
    report("10", "determinism", t, c10);

    let t = Instant::now();
    match std::env::var("WEEM_CLAFF_CONFIG") {
        Ok(path) => report("11", "CLAff-Diplomacy (optional)", t, c11_claff(&path)),
        Err(_) => println!("SKIP  C11  CLAff-Diplomacy (optional)       set WEEM_CLAFF_CONFIG to run"),
    }

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
