use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cwh::data::{ingest_content, ingest_interactions, IngestOptions};
use cwh::eval::{self, EvalResult, Metric, SetLabel};
use cwh::report::{Plot, Series};
use cwh::split::{build_fold, read_manifest, write_manifest};
use cwh::sweep;
use cwh::synth::{self, SynthConfig};
use cwh::{checkpoint, trainer, CwhError, Dataset, Scalar, SplitBundle};

use crate::config::{Precision, RunConfig};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> cwh::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| CwhError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let opts = IngestOptions {
        rating_threshold: config.data.rating_threshold,
    };
    let log = ingest_interactions(&config.data.interactions, &opts)?;
    let dataset = match &config.data.content {
        Some(path) => Dataset::assemble(log, &ingest_content(path)?)?,
        None => Dataset::without_content(log),
    };
    log::info!(
        "loaded {} users, {} items, {} pairs",
        dataset.n_users(),
        dataset.n_items(),
        dataset.log.len()
    );
    Ok(dataset)
}

fn load_split(config: &RunConfig, dataset: &Dataset, offset: usize) -> Result<SplitBundle> {
    let path = config.manifest_path(offset);
    let file = File::open(&path).map_err(|_| {
        CwhError::Precondition(format!(
            "split manifest {} is missing; run `cwh split` first",
            path.display()
        ))
    })?;
    Ok(read_manifest(BufReader::new(file), &dataset.log)?)
}

pub fn split(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(config)?;
    let dir = config.output_dir.join("splits");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for &offset in &config.split.offsets {
        let s = &config.split;
        let bundle = build_fold(&dataset.log, s.min_items, s.seed, offset, s.cold_width)?;
        if bundle.relabeled > 0 {
            log::info!(
                "fold {offset}: {} held-out pairs moved to the cold sets",
                bundle.relabeled
            );
        }
        let path = config.manifest_path(offset);
        write_file(&path, |w| write_manifest(&bundle, w))?;
        log::info!(
            "fold {offset}: {} train pairs, {} warm / {} cold test pairs -> {}",
            bundle.train.len(),
            bundle.test_warm.len(),
            bundle.test_cold.len(),
            path.display()
        );
        written.push(path);
    }
    config.echo(&dir)?;
    Ok(written)
}

pub fn train(config: &RunConfig, offset: usize) -> Result<PathBuf> {
    match config.precision {
        Precision::F32 => train_as::<f32>(config, offset),
        Precision::F64 => train_as::<f64>(config, offset),
    }
}

fn train_as<T: Scalar>(config: &RunConfig, offset: usize) -> Result<PathBuf> {
    let dataset = load_dataset(config)?;
    let split = load_split(config, &dataset, offset)?;
    let (model, report) = trainer::train::<T>(&config.train, &dataset, &split)?;
    let dir = config.run_dir(offset);
    create_dir(&dir)?;
    checkpoint::save_model(&model, dir.join("model.ckpt"))?;
    write_file(&dir.join("training.csv"), |w| report.write_csv(w))?;
    config.echo(&dir)?;
    log::info!(
        "best epoch {} with validation unified MRR@20 {:.5}; outputs in {}",
        report.best_epoch,
        report.best_metric,
        dir.display()
    );
    Ok(dir)
}

/// Evaluates a trained run on the fold's test sets and the popularity
/// regimes; writes `results.csv` into the run directory.
pub fn evaluate(config: &RunConfig, offset: usize, warm_only: bool) -> Result<Vec<EvalResult>> {
    match config.precision {
        Precision::F32 => evaluate_as::<f32>(config, offset, warm_only),
        Precision::F64 => evaluate_as::<f64>(config, offset, warm_only),
    }
}

fn evaluate_as<T: Scalar>(config: &RunConfig, offset: usize, warm_only: bool) -> Result<Vec<EvalResult>> {
    let dataset = load_dataset(config)?;
    let mut split = load_split(config, &dataset, offset)?;
    let dir = config.run_dir(offset);
    let ckpt = dir.join("model.ckpt");
    if !ckpt.is_file() {
        return Err(CwhError::Precondition(format!(
            "no checkpoint at {}; run `cwh train` with the same settings first",
            ckpt.display()
        ))
        .into());
    }
    let model = checkpoint::load_model::<T>(&ckpt)?;
    if warm_only {
        split.test_cold.clear();
    } else if !model.kind.supports_cold() && !split.test_cold.is_empty() {
        return Err(CwhError::Unsupported(
            "a cf_only model is unable to support cold item recommendations; \
             rerun with --warm-only to evaluate warm items"
                .into(),
        )
        .into());
    }
    let features = model.featurizer.featurize_all(&dataset.content)?;
    let eval_config = config.eval.eval_config();
    let mut results = eval::evaluate_split(&model, &features, &split, &eval_config)?;
    if warm_only {
        results.retain(|r| r.set == SetLabel::Warm);
    }
    results.extend(eval::popularity_regime_eval(
        &model,
        &features,
        &split,
        &config.eval.regimes,
        20,
    )?);
    write_file(&dir.join("results.csv"), |w| eval::write_results(&results, w))?;
    Ok(results)
}

pub struct SweepOutcome {
    pub gamma_star: f64,
    pub dir: PathBuf,
}

pub fn sweep(config: &RunConfig) -> Result<SweepOutcome> {
    match config.precision {
        Precision::F32 => sweep_as::<f32>(config),
        Precision::F64 => sweep_as::<f64>(config),
    }
}

fn sweep_as<T: Scalar>(config: &RunConfig) -> Result<SweepOutcome> {
    let dataset = load_dataset(config)?;
    let folds = config
        .split
        .offsets
        .iter()
        .map(|&o| load_split(config, &dataset, o))
        .collect::<Result<Vec<_>>>()?;
    let mut eval_config = config.eval.eval_config();
    if !eval_config.ks.contains(&20) {
        eval_config.ks.push(20);
    }
    let records = sweep::run_sweep::<T>(&config.train, &dataset, &folds, &config.sweep.gammas, &eval_config)?;
    let gamma_star = sweep::select_gamma(&records)?;
    let dir = config.output_dir.join("sweep");
    create_dir(&dir)?;
    write_file(&dir.join("sweep.csv"), |w| sweep::write_sweep(&records, w))?;
    let hr = sweep::metric_name(Metric::HitRate, 20);
    let series = ["warm", "cold"]
        .iter()
        .map(|set| Series {
            name: set.to_string(),
            points: sweep::fold_means(&records, set, &hr),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    let plot = Plot {
        title: "HR@20 (x100) vs gamma".into(),
        x_label: "gamma".into(),
        y_label: "HR@20 (x100)".into(),
        y_scale: 100.0,
        series,
    };
    fs::write(dir.join("hr20_vs_gamma.svg"), plot.render()?).context("cannot write sweep plot")?;
    fs::write(dir.join("gamma_star.txt"), format!("{gamma_star}\n")).context("cannot write gamma_star.txt")?;
    config.echo(&dir)?;
    Ok(SweepOutcome {
        gamma_star,
        dir,
    })
}

/// Label of a results file: its stem, or its directory when the stem is the
/// generic `results`.
fn method_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "results" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

/// Collects results files (directories are searched for `results.csv`),
/// writes a summary table and the popularity-regime plot.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let f = p.join("results.csv");
            if f.is_file() {
                files.push(f);
            }
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(CwhError::Config(format!("{} does not exist", p.display())).into());
        }
    }
    if files.is_empty() {
        return Err(CwhError::Precondition("no results files found".into()).into());
    }
    create_dir(out)?;
    let mut summary = String::from("method,set,metric,K,r,value,pairs\n");
    let mut series = Vec::new();
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("cannot read {}", f.display()))?;
        let results = eval::read_results(&text)?;
        let label = method_label(f);
        for r in &results {
            summary.push_str(&format!(
                "{label},{},{},{},{},{},{}\n",
                r.set.as_str(),
                r.metric.as_str(),
                r.k,
                r.r.map(|r| r.to_string()).unwrap_or_default(),
                r.value,
                r.pairs
            ));
        }
        let points: Vec<(f64, f64)> = results
            .iter()
            .filter(|r| r.set == SetLabel::Tail && r.metric == Metric::Mrr && r.k == 20)
            .filter_map(|r| r.r.map(|rv| (rv as f64, r.value)))
            .collect();
        if !points.is_empty() {
            series.push(Series { name: label, points });
        }
    }
    fs::write(out.join("summary.csv"), summary).context("cannot write summary.csv")?;
    if series.is_empty() {
        log::warn!("no popularity-regime rows; regime plot skipped");
    } else {
        let plot = Plot {
            title: "MRR@20 (x100) on T_r".into(),
            x_label: "r (most popular items removed)".into(),
            y_label: "MRR@20 (x100)".into(),
            y_scale: 100.0,
            series,
        };
        fs::write(out.join("popularity_regimes.svg"), plot.render()?).context("cannot write regime plot")?;
    }
    Ok(out.to_path_buf())
}

pub fn synth(config: &SynthConfig, out: &Path) -> Result<()> {
    let data = synth::generate(config)?;
    data.write(out)?;
    let text = toml::to_string(config).context("cannot serialize synth config")?;
    fs::write(out.join("synth_config.toml"), text).context("cannot write synth_config.toml")?;
    Ok(())
}
