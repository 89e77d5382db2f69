//! Gamma sweep: one model per (gamma, fold), test and validation metrics
//! collected into a long table.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::Dataset;
use crate::error::{CwhError, Result};
use crate::eval::{self, EvalConfig, EvalResult, Metric, SetLabel};
use crate::scalar::Scalar;
use crate::split::SplitBundle;
use crate::trainer::{self, TrainConfig};

pub const SWEEP_HEADER: &str = "gamma,set,metric,value,fold";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub gamma: f64,
    /// `warm`, `cold`, `unified` for test sets, `validation_*` for validation
    pub set: String,
    /// e.g. `HR@20`
    pub metric: String,
    pub value: f64,
    pub fold: usize,
}

pub fn metric_name(metric: Metric, k: usize) -> String {
    format!("{}@{k}", metric.as_str())
}

fn records(gamma: f64, fold: usize, prefix: &str, results: &[EvalResult]) -> Vec<SweepRecord> {
    results
        .iter()
        .map(|r| SweepRecord {
            gamma,
            set: format!("{prefix}{}", r.set.as_str()),
            metric: metric_name(r.metric, r.k),
            value: r.value,
            fold,
        })
        .collect()
}

/// Trains and evaluates one model per gamma on every fold. `ks` must
/// include 20, the selection metric.
pub fn run_sweep<T: Scalar>(
    base: &TrainConfig,
    dataset: &Dataset,
    folds: &[SplitBundle],
    gammas: &[f64],
    eval: &EvalConfig,
) -> Result<Vec<SweepRecord>> {
    if gammas.is_empty() {
        return Err(CwhError::Config("gamma grid is empty".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(CwhError::Config(format!("gamma {g} not in [0, 1]")));
    }
    if !eval.ks.contains(&20) {
        return Err(CwhError::Config("sweep needs K = 20 for gamma selection".into()));
    }
    let featurizer = trainer::featurizer_for(dataset, base)?;
    let features = featurizer.featurize_all(&dataset.content)?;
    let mut out = Vec::new();
    for (fold, split) in folds.iter().enumerate() {
        for &gamma in gammas {
            let config = TrainConfig { gamma, ..base.clone() };
            let mut t = trainer::Trainer::<T>::new(config, featurizer.clone(), split, &features)?;
            let (params, _) = t.run()?;
            let model = t.model(params);
            log::info!("fold {fold}, gamma {gamma}: trained");
            let test = eval::evaluate_split(&model, &features, split, eval)?;
            let val = eval::evaluate_validation(&model, &features, split, eval)?;
            out.extend(records(gamma, fold, "", &test));
            out.extend(records(gamma, fold, "validation_", &val));
        }
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(records: &[SweepRecord], mut w: W) -> Result<()> {
    let io = |e| CwhError::io("sweep table", e);
    writeln!(w, "{SWEEP_HEADER}").map_err(io)?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.gamma, r.set, r.metric, r.value, r.fold).map_err(io)?;
    }
    Ok(())
}

pub fn read_sweep(text: &str) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |m: String| CwhError::Parse {
            file: "sweep table".into(),
            line: n as u64 + 1,
            message: m,
        };
        if n == 0 {
            if line.trim() != SWEEP_HEADER {
                return Err(err(format!("expected header {SWEEP_HEADER}")));
            }
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(err(format!("expected 5 cells, got {}", c.len())));
        }
        out.push(SweepRecord {
            gamma: c[0].parse().map_err(|_| err(format!("bad gamma {:?}", c[0])))?,
            set: c[1].to_string(),
            metric: c[2].to_string(),
            value: c[3].parse().map_err(|_| err(format!("bad value {:?}", c[3])))?,
            fold: c[4].parse().map_err(|_| err(format!("bad fold {:?}", c[4])))?,
        });
    }
    Ok(out)
}

/// Mean over folds of `set`/`metric`, keyed by gamma in ascending order.
pub fn fold_means(records: &[SweepRecord], set: &str, metric: &str) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.set == set && r.metric == metric) {
        // ordered key for non-negative floats
        let e = acc.entry(r.gamma.to_bits()).or_insert((r.gamma, 0.0, 0));
        e.1 += r.value;
        e.2 += 1;
    }
    acc.into_values().map(|(g, s, n)| (g, s / n as f64)).collect()
}

/// The gamma with the best mean validation unified MRR@20; ties go to the
/// smallest gamma.
pub fn select_gamma(records: &[SweepRecord]) -> Result<f64> {
    let set = format!("validation_{}", SetLabel::Unified.as_str());
    let means = fold_means(records, &set, &metric_name(Metric::Mrr, 20));
    let mut best: Option<(f64, f64)> = None;
    for (g, v) in means {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((g, v));
        }
    }
    best.map(|(g, _)| g)
        .ok_or_else(|| CwhError::Data("sweep table has no validation unified MRR@20 rows".into()))
}
