//! Multi-trial zero-shot evaluation and the continual-learning studies.
//!
//! Trial `i` uses seed `cfg.seed + i` for training (unless a checkpoint is
//! given) and for the test graphs' pseudo-support draws.
//!
//! Output files in `cfg.out_dir`:
//! - `metrics.csv`: `dataset,seed,auroc,auprc,pseudo_anomalous`, the last
//!   column counting labeled anomalies that landed in the pseudo-support
//! - `summary.md`: mean±std tables, datasets as columns plus an average
//! - `case_aux_merge.csv`: `n_aux,dataset,seed,entries,auroc,auprc`
//! - `case_aux_finetune.csv`: `n_aux,dataset,seed,auroc,auprc`
//! - `case_n_sup.csv`: `n_sup,dataset,seed,auroc,auprc`
//! - `scores/<dataset>_seed<s>.csv` and, for the aux merge study,
//!   `scores/aux<n>/<dataset>_seed<s>.csv`

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dictionary::PatternDictionary;
use crate::error::{Error, Result};
use crate::eval::{auxiliary_entry, metrics, training_entry, zero_shot_score, ZeroShotOptions, ZeroShotResult};
use crate::fsio;
use crate::graph::{load_graph_dir, GraphDataset};
use crate::training::{continue_fit, fit, load_checkpoint, Checkpoint, TrainConfig};

/// One (dataset, seed) evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub seed: u64,
    pub auroc: f64,
    pub auprc: f64,
    pub pseudo_anomalous: Option<usize>,
}

/// A metric row under one setting of a study (aux count or n_sup).
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub setting: usize,
    /// Dictionary entries averaged over.
    pub entries: usize,
    pub row: MetricRow,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub datasets: Vec<String>,
    pub metrics: Vec<MetricRow>,
    pub aux_merge: Vec<StudyRow>,
    pub aux_finetune: Vec<StudyRow>,
    pub n_sup: Vec<StudyRow>,
    pub written: Vec<PathBuf>,
}

fn load_all(dirs: &[PathBuf]) -> Result<Vec<GraphDataset>> {
    dirs.iter().map(|d| load_graph_dir(d)).collect()
}

fn require_labels(graphs: &[GraphDataset], role: &str) -> Result<()> {
    match graphs.iter().find(|g| g.labels().is_none()) {
        Some(g) => Err(Error::Config(format!("{role} graph {:?} has no labels", g.name))),
        None => Ok(()),
    }
}

fn metric_row(g: &GraphDataset, seed: u64, r: &ZeroShotResult) -> Result<MetricRow> {
    let labels = g.labels().expect("labels checked before compute");
    let m = metrics(&r.scores.scores, labels)?;
    Ok(MetricRow {
        dataset: g.name.clone(),
        seed,
        auroc: m.auroc,
        auprc: m.auprc,
        pseudo_anomalous: r.anomalous_in_support,
    })
}

/// Run the configured evaluation and write the report files.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let train = load_all(&cfg.train_dirs)?;
    let test = load_all(&cfg.test_dirs)?;
    let aux = load_all(&cfg.aux_dirs)?;
    if cfg.checkpoint.is_none() {
        require_labels(&train, "training")?;
    }
    require_labels(&test, "test")?;
    if cfg.case_aux_finetune {
        require_labels(&train, "training")?;
        require_labels(&aux, "auxiliary")?;
    }
    let fixed = cfg.checkpoint.as_deref().map(load_checkpoint).transpose()?;

    let mut report = ExperimentReport {
        datasets: test.iter().map(|g| g.name.clone()).collect(),
        ..ExperimentReport::default()
    };
    let mut score_files: Vec<(PathBuf, String)> = Vec::new();
    if !test.is_empty() {
        for trial in 0..cfg.trials {
            let seed = cfg.seed + trial as u64;
            let ckpt = match &fixed {
                Some(c) => c.clone(),
                None => {
                    log::info!("trial {trial}: training on {} graphs (seed {seed})", train.len());
                    fit(&train, &cfg.model_config(), &cfg.train_config(seed))?
                }
            };
            run_trial(cfg, &ckpt, seed, &train, &test, &aux, &mut report, &mut score_files)?;
        }
    }
    write_report(cfg, &mut report, &score_files)?;
    Ok(report)
}

fn options(cfg: &RunConfig, seed: u64) -> ZeroShotOptions {
    ZeroShotOptions {
        seed,
        strict_train_median: cfg.strict_train_median,
        ..ZeroShotOptions::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    seed: u64,
    train: &[GraphDataset],
    test: &[GraphDataset],
    aux: &[GraphDataset],
    report: &mut ExperimentReport,
    score_files: &mut Vec<(PathBuf, String)>,
) -> Result<()> {
    for g in test {
        let r = zero_shot_score(ckpt, g, &options(cfg, seed))?;
        report.metrics.push(metric_row(g, seed, &r)?);
        score_files.push((PathBuf::from(format!("scores/{}_seed{seed}.csv", g.name)), r.scores.to_csv()));
    }

    if cfg.case_aux_merge {
        let entries = aux
            .iter()
            .map(|a| auxiliary_entry(ckpt, a, ckpt.model.n_sup, seed))
            .collect::<Result<Vec<_>>>()?;
        for n_aux in 0..=aux.len() {
            for g in test {
                let opts = ZeroShotOptions {
                    extra_entries: entries[..n_aux].to_vec(),
                    ..options(cfg, seed)
                };
                let r = zero_shot_score(ckpt, g, &opts)?;
                report.aux_merge.push(StudyRow {
                    setting: n_aux,
                    entries: r.entries_used,
                    row: metric_row(g, seed, &r)?,
                });
                score_files.push((
                    PathBuf::from(format!("scores/aux{n_aux}/{}_seed{seed}.csv", g.name)),
                    r.scores.to_csv(),
                ));
            }
        }
    }

    if cfg.case_aux_finetune {
        let tc = TrainConfig {
            epochs: cfg.aux_epochs.unwrap_or(cfg.epochs),
            ..cfg.train_config(seed)
        };
        for n_aux in 0..=aux.len() {
            let model = if n_aux == 0 {
                ckpt.clone()
            } else {
                let graphs: Vec<GraphDataset> = train.iter().chain(&aux[..n_aux]).cloned().collect();
                log::info!("continued training on {} graphs (seed {seed})", graphs.len());
                continue_fit(ckpt, &graphs, &tc)?
            };
            for g in test {
                let r = zero_shot_score(&model, g, &options(cfg, seed))?;
                report.aux_finetune.push(StudyRow {
                    setting: n_aux,
                    entries: r.entries_used,
                    row: metric_row(g, seed, &r)?,
                });
            }
        }
    }

    if cfg.case_n_sup {
        for &n_sup in &cfg.n_sup_sweep {
            let entries = train
                .iter()
                .map(|g| training_entry(ckpt, g, n_sup, ckpt.train.seed))
                .collect::<Result<Vec<_>>>()?;
            let dict = PatternDictionary::from_entries(ckpt.params.emb_dim(), entries)?;
            for g in test {
                let opts = ZeroShotOptions {
                    n_sup: Some(n_sup),
                    dictionary: Some(dict.clone()),
                    ..options(cfg, seed)
                };
                let r = zero_shot_score(ckpt, g, &opts)?;
                report.n_sup.push(StudyRow {
                    setting: n_sup,
                    entries: r.entries_used,
                    row: metric_row(g, seed, &r)?,
                });
            }
        }
    }
    Ok(())
}

fn write_report(cfg: &RunConfig, report: &mut ExperimentReport, score_files: &[(PathBuf, String)]) -> Result<()> {
    let out = &cfg.out_dir;
    let mut files: Vec<(PathBuf, String)> = vec![
        (PathBuf::from("metrics.csv"), metrics_csv(&report.metrics)),
        (PathBuf::from("summary.md"), summary_markdown(cfg, report)),
    ];
    if cfg.case_aux_merge {
        files.push((
            PathBuf::from("case_aux_merge.csv"),
            study_csv("n_aux", &report.aux_merge, true),
        ));
    }
    if cfg.case_aux_finetune {
        files.push((
            PathBuf::from("case_aux_finetune.csv"),
            study_csv("n_aux", &report.aux_finetune, false),
        ));
    }
    if cfg.case_n_sup {
        files.push((PathBuf::from("case_n_sup.csv"), study_csv("n_sup", &report.n_sup, false)));
    }
    files.extend(score_files.iter().cloned());
    for (rel, text) in files {
        let path = out.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fsio::atomic_write(&path, text.as_bytes())?;
        report.written.push(path);
    }
    Ok(())
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("dataset,seed,auroc,auprc,pseudo_anomalous\n");
    for r in rows {
        let audit = r.pseudo_anomalous.map(|n| n.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{audit}", r.dataset, r.seed, r.auroc, r.auprc);
    }
    s
}

fn study_csv(setting: &str, rows: &[StudyRow], with_entries: bool) -> String {
    let mut s = format!("{setting},dataset,seed,");
    s.push_str(if with_entries { "entries,auroc,auprc\n" } else { "auroc,auprc\n" });
    for r in rows {
        let _ = write!(s, "{},{},{},", r.setting, r.row.dataset, r.row.seed);
        if with_entries {
            let _ = write!(s, "{},", r.entries);
        }
        let _ = writeln!(s, "{},{}", r.row.auroc, r.row.auprc);
    }
    s
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy)]
enum Metric {
    Auroc,
    Auprc,
}

impl Metric {
    fn of(self, r: &MetricRow) -> f64 {
        match self {
            Metric::Auroc => r.auroc,
            Metric::Auprc => r.auprc,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "AUROC",
            Metric::Auprc => "AUPRC",
        }
    }
}

fn cell(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s)
}

/// One table row: a cell per dataset plus the average column. The average
/// is taken per seed across datasets, then summarized over seeds.
fn table_row(label: &str, rows: &[&MetricRow], datasets: &[String], metric: Metric) -> String {
    let mut line = format!("| {label} |");
    for d in datasets {
        let v: Vec<f64> = rows.iter().filter(|r| &r.dataset == d).map(|r| metric.of(r)).collect();
        let _ = write!(line, " {} |", cell(&v));
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let averages: Vec<f64> = seeds
        .iter()
        .map(|s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.seed == *s).map(|r| metric.of(r)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let _ = writeln!(line, " {} |", cell(&averages));
    line
}

fn table_header(first: &str, datasets: &[String]) -> String {
    let mut s = format!("| {first} |");
    for d in datasets {
        let _ = write!(s, " {d} |");
    }
    s.push_str(" Average |\n|---|");
    for _ in datasets {
        s.push_str("---|");
    }
    s.push_str("---|\n");
    s
}

fn study_table(title: &str, label: impl Fn(usize) -> String, rows: &[StudyRow], datasets: &[String], metric: Metric) -> String {
    let mut s = format!("\n## {title}: {} (%)\n\n", metric.name());
    s.push_str(&table_header("Setting", datasets));
    let mut settings: Vec<usize> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting) {
            settings.push(r.setting);
        }
    }
    for setting in settings {
        let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.setting == setting).map(|r| &r.row).collect();
        s.push_str(&table_row(&label(setting), &sel, datasets, metric));
    }
    s
}

pub fn summary_markdown(cfg: &RunConfig, report: &ExperimentReport) -> String {
    let ds = &report.datasets;
    let mut s = format!(
        "# Zero-shot evaluation\n\n{} trial(s), seeds {}..{}, mean±std over trials.\n\n",
        cfg.trials,
        cfg.seed,
        cfg.seed + cfg.trials as u64
    );
    s.push_str(&table_header("Metric (%)", ds));
    if !ds.is_empty() {
        let all: Vec<&MetricRow> = report.metrics.iter().collect();
        for metric in [Metric::Auroc, Metric::Auprc] {
            s.push_str(&table_row(metric.name(), &all, ds, metric));
        }
    }
    let aux_label = |n: usize| format!("n_aux={n}");
    let nsup_label = |n: usize| format!("n_sup={n}");
    for metric in [Metric::Auprc, Metric::Auroc] {
        if cfg.case_aux_merge {
            s.push_str(&study_table("Aux patterns without retraining", aux_label, &report.aux_merge, ds, metric));
        }
        if cfg.case_aux_finetune {
            s.push_str(&study_table("Aux graphs with continued training", aux_label, &report.aux_finetune, ds, metric));
        }
        if cfg.case_n_sup {
            s.push_str(&study_table("Dictionary size", nsup_label, &report.n_sup, ds, metric));
        }
    }
    s
}

/// Relative location of a score file written by [`run_experiment`].
pub fn score_file(out_dir: &Path, dataset: &str, seed: u64, n_aux: Option<usize>) -> PathBuf {
    match n_aux {
        Some(n) => out_dir.join(format!("scores/aux{n}/{dataset}_seed{seed}.csv")),
        None => out_dir.join(format!("scores/{dataset}_seed{seed}.csv")),
    }
}
