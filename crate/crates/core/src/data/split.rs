//! Stratified partitioning with per-class counts held within one observation
//! of the proportional target.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: [0.8, 0.1, 0.1], seed: 0 }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::arg(format!("split ratios must lie in (0,1): {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Train/validation/test datasets plus the text indices (into the source
/// dataset) that make up each part.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: [Vec<usize>; 3],
    pub warnings: Vec<String>,
}

/// Largest-remainder rounding of `n * ratios`; ties go to the lower index.
pub fn split_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Integer matrix `[class][part]` whose rows sum to `class_counts`, columns sum
/// to `part_sizes`, and every cell is the floor or ceiling of
/// `class_count * part_size / total`.
pub fn allocate_stratified(class_counts: &[usize], part_sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let total: usize = class_counts.iter().sum();
    if part_sizes.iter().sum::<usize>() != total {
        return Err(Error::arg("part sizes do not sum to the number of observations"));
    }
    let (nc, np) = (class_counts.len(), part_sizes.len());
    if total == 0 {
        return Ok(vec![vec![0; np]; nc]);
    }
    let mut alloc = vec![vec![0usize; np]; nc];
    let mut fractional = vec![vec![false; np]; nc];
    for c in 0..nc {
        for p in 0..np {
            let num = class_counts[c] * part_sizes[p];
            alloc[c][p] = num / total;
            fractional[c][p] = num % total != 0;
        }
    }
    // Distribute the leftover units with a max-flow over the fractional cells.
    let src = 0;
    let sink = nc + np + 1;
    let n = nc + np + 2;
    let mut cap = vec![vec![0usize; n]; n];
    for c in 0..nc {
        cap[src][1 + c] = class_counts[c] - alloc[c].iter().sum::<usize>();
        for p in 0..np {
            if fractional[c][p] {
                cap[1 + c][1 + nc + p] = 1;
            }
        }
    }
    for p in 0..np {
        cap[1 + nc + p][sink] = part_sizes[p] - (0..nc).map(|c| alloc[c][p]).sum::<usize>();
    }
    let need: usize = (0..nc).map(|c| cap[src][1 + c]).sum();
    let mut flow = 0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[src] = src;
        let mut stack = vec![src];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 0 {
                    prev[v] = u;
                    stack.push(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            cap[u][v] -= 1;
            cap[v][u] += 1;
            v = u;
        }
        flow += 1;
    }
    if flow != need {
        return Err(Error::Internal("stratified allocation has no feasible rounding".into()));
    }
    for c in 0..nc {
        for p in 0..np {
            if fractional[c][p] && cap[1 + c][1 + nc + p] == 0 {
                alloc[c][p] += 1;
            }
        }
    }
    Ok(alloc)
}

/// Partitions observation indices into parts of the given sizes, stratified
/// by `labels`. Classes with fewer members than parts go wholly to part 0.
pub fn stratified_partition(
    labels: &[i64],
    part_sizes: &[usize],
    seed: u64,
) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    if part_sizes.iter().sum::<usize>() != labels.len() {
        return Err(Error::arg("part sizes do not sum to the number of observations"));
    }
    let np = part_sizes.len();
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); np];
    let mut sizes = part_sizes.to_vec();
    let mut strata: Vec<Vec<usize>> = Vec::new();
    for (class, members) in by_class {
        if members.len() < np {
            warnings.push(format!(
                "class {class} has {} member(s), fewer than {np} parts; placed in the first part",
                members.len()
            ));
            let take = members.len().min(sizes[0]);
            sizes[0] -= take;
            // Overflow beyond part 0's size is charged to the later parts.
            let mut extra = members.len() - take;
            for s in sizes.iter_mut().skip(1) {
                let d = extra.min(*s);
                *s -= d;
                extra -= d;
            }
            parts[0].extend(members);
        } else {
            strata.push(members);
        }
    }
    let counts: Vec<usize> = strata.iter().map(Vec::len).collect();
    let alloc = allocate_stratified(&counts, &sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (members, row) in strata.iter_mut().zip(&alloc) {
        members.shuffle(&mut rng);
        let mut it = members.iter().copied();
        for (p, &k) in row.iter().enumerate() {
            parts[p].extend(it.by_ref().take(k));
        }
    }
    for (p, part) in parts.iter_mut().enumerate() {
        part.sort_unstable();
        if part.is_empty() {
            warnings.push(format!("part {p} is empty"));
        }
    }
    Ok((parts, warnings))
}

fn strat_labels(dataset: &Dataset, strat_label: &str) -> Result<Vec<i64>> {
    if !dataset.schema().contains(strat_label) {
        return Err(Error::Schema(format!("stratification label '{strat_label}' not in schema")));
    }
    Ok(dataset.classes(strat_label)?.into_iter().map(i64::from).collect())
}

pub fn stratified_split(dataset: &Dataset, spec: &SplitSpec, strat_label: &str) -> Result<Split> {
    spec.validate()?;
    let labels = strat_labels(dataset, strat_label)?;
    let sizes = split_sizes(labels.len(), &spec.ratios);
    let (parts, warnings) = stratified_partition(&labels, &sizes, spec.seed)?;
    for w in &warnings {
        log::warn!("stratified split: {w}");
    }
    let [a, b, c]: [Vec<usize>; 3] = parts.try_into().expect("three parts");
    Ok(Split {
        train: dataset.subset(&a),
        val: dataset.subset(&b),
        test: dataset.subset(&c),
        indices: [a, b, c],
        warnings,
    })
}

/// Stratified sample of `n` texts; `n` equal to the dataset size returns the
/// dataset unchanged.
pub fn stratified_subsample(dataset: &Dataset, n: usize, seed: u64, strat_label: &str) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::arg(format!("sample size {n} exceeds dataset size {}", dataset.len())));
    }
    if n == dataset.len() {
        return Ok(dataset.clone());
    }
    let labels = strat_labels(dataset, strat_label)?;
    let (parts, _) = stratified_partition(&labels, &[n, dataset.len() - n], seed)?;
    Ok(dataset.subset(&parts[0]))
}
