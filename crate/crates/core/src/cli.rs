//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::align::{align_collection, Aggregation};
use crate::config::RunConfig;
use crate::dictionary::{load_dictionary, merge, save_dictionary};
use crate::error::{Error, Result};
use crate::eval::{
    auxiliary_entry, distance_diagnostic, stage_features, zero_shot_score, Stage, ZeroShotOptions,
};
use crate::experiment::run_experiment;
use crate::graph::{
    inject_anomalies, load_graph_dir, save_graph_dir, synthetic_suite, FeatureFormat, GraphDataset, SuiteSpec,
};
use crate::numerics::Rng;
use crate::reconstruction::{export_attention_maps, SimilarityChannel, Truncation};
use crate::training::{finetune, fit, load_checkpoint, save_checkpoint};
use crate::{fsio, par, streams};

#[derive(Parser, Debug)]
#[command(name = "owleye", version, about = "Zero-shot cross-domain graph anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Inject clique and contextual anomalies into a graph.
    Inject(InjectArgs),
    /// Project and normalize a collection of graphs; writes aligned graph
    /// directories and alignment.json.
    Align(AlignArgs),
    /// Train a model on labeled graphs and write a checkpoint.
    Train(TrainArgs),
    /// Write a checkpoint's pattern dictionary to a file.
    ExtractDict(ExtractDictArgs),
    /// Dictionary maintenance.
    Dict {
        #[command(subcommand)]
        command: DictCommand,
    },
    /// Zero-shot scoring of one graph; writes `node_id,score` CSV.
    Score(ScoreArgs),
    /// Few-shot adaptation on labeled nodes of a test graph.
    Finetune(FinetuneArgs),
    /// Run a configured multi-trial evaluation.
    Eval(EvalArgs),
    /// Pairwise-distance diagnostics per pipeline stage.
    Diag(DiagArgs),
    /// Export per-node attention maps.
    AttnExport(AttnExportArgs),
    /// Generate a labeled synthetic train/test/aux collection and a
    /// matching experiment config.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
pub enum DictCommand {
    /// Append pattern entries from new graphs without retraining.
    Add(DictAddArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Fmat,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::Fmat => FeatureFormat::Fmat,
        }
    }
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    /// Input graph directory.
    #[arg(long)]
    pub graph: PathBuf,
    /// Output graph directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub cliques: usize,
    #[arg(long, default_value_t = 4)]
    pub clique_size: usize,
    #[arg(long, default_value_t = 10)]
    pub contextual: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Graph directories to align together.
    #[arg(long = "graph", required = true, num_args = 1..)]
    pub graphs: Vec<PathBuf>,
    /// Output directory; one subdirectory per graph.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value = "median", value_parser = parse_aggregation)]
    pub aggregation: Aggregation,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training settings. Flags override values from `--config`.
#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Labeled training graph directories (else `train_dirs` from the config).
    #[arg(long = "graph", num_args = 1..)]
    pub graphs: Vec<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config supplying defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_a: Option<f64>,
    #[arg(long)]
    pub n_sup: Option<usize>,
    /// Truncation: integer count or fraction in [0, 1).
    #[arg(long, value_parser = parse_truncation)]
    pub k: Option<Truncation>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pairs_per_graph: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_similarity)]
    pub similarity_channel: Option<SimilarityChannel>,
    #[arg(long)]
    pub signed_sqrt: bool,
    #[arg(long)]
    pub tie_qk: bool,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractDictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DictAddArgs {
    /// Dictionary to extend.
    #[arg(long)]
    pub dict: PathBuf,
    /// Checkpoint whose encoders embed the new graphs (left untouched).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Graph directories to add, one entry each.
    #[arg(long = "graph", required = true, num_args = 1..)]
    pub graphs: Vec<PathBuf>,
    /// Write here instead of updating `--dict` in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Patterns per entry (default: the checkpoint's n_sup).
    #[arg(long)]
    pub n_sup: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Score CSV to write (default: `<graph name>_scores.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use this dictionary instead of the checkpoint's.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_sup: Option<usize>,
    #[arg(long, value_parser = parse_truncation)]
    pub k: Option<Truncation>,
    #[arg(long)]
    pub tau_a: Option<f64>,
    /// Normalize with training-graph statistics only.
    #[arg(long)]
    pub strict_train_median: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of `node_id,label` rows; else `--shots` nodes drawn from the
    /// graph's labels, half normal and half anomalous.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub shots: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StageArg {
    Raw,
    Projected,
    Aligned,
    All,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    /// Labeled graph directory.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    /// Align against this checkpoint's statistics instead of the graph alone.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Pair budget; all pairs are used when there are fewer.
    #[arg(long, default_value_t = 200_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AttnExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Comma-separated node ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub nodes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; graphs go to `train<i>`, `test<i>`, `aux<i>`, plus
    /// a starter `experiment.toml` for `eval`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub train: usize,
    #[arg(long, default_value_t = 1)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub aux: usize,
    #[arg(long, default_value_t = 300)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub anomaly_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub clique_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

fn parse_truncation(s: &str) -> std::result::Result<Truncation, String> {
    if let Ok(k) = s.parse::<usize>() {
        return Ok(Truncation::Count(k));
    }
    s.parse::<f64>()
        .map(Truncation::Fraction)
        .map_err(|_| format!("expected an integer count or a fraction, got {s:?}"))
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_similarity(s: &str) -> std::result::Result<SimilarityChannel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `argv` and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Apply `OWLEYE_THREADS` to the global worker pool.
pub fn init_threads_from_env() -> Result<()> {
    if let Ok(raw) = std::env::var("OWLEYE_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("OWLEYE_THREADS must be a positive integer, got {raw:?}")))?;
        par::init_thread_pool(n);
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Inject(a) => cmd_inject(a),
        Command::Align(a) => cmd_align(a),
        Command::Train(a) => cmd_train(a),
        Command::ExtractDict(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            save_dictionary(&ckpt.dictionary, &a.out)
        }
        Command::Dict {
            command: DictCommand::Add(a),
        } => cmd_dict_add(a),
        Command::Score(a) => cmd_score(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(out) = a.out_dir {
                cfg.out_dir = out;
            }
            let report = run_experiment(&cfg)?;
            println!("wrote {} files to {}", report.written.len(), cfg.out_dir.display());
            Ok(())
        }
        Command::Diag(a) => cmd_diag(a),
        Command::AttnExport(a) => cmd_attn_export(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    let g = load_graph_dir(&a.graph)?;
    let mut rng = Rng::new(a.seed).derive(streams::INJECT);
    let out = inject_anomalies(&g, a.cliques, a.clique_size, a.contextual, &mut rng)?;
    save_graph_dir(&out, &a.out, a.format.into())
}

fn cmd_align(a: AlignArgs) -> Result<()> {
    let graphs = a.graphs.iter().map(|p| load_graph_dir(p)).collect::<Result<Vec<_>>>()?;
    let root = Rng::new(a.seed).derive(streams::ALIGN);
    let (aligned, stats) = align_collection(&graphs, a.d, a.tau, a.aggregation, &root)?;
    for (g, x) in graphs.iter().zip(aligned) {
        let out = GraphDataset::new(
            g.name.clone(),
            g.domain.clone(),
            g.edges().to_vec(),
            x.features,
            g.labels().map(<[u8]>::to_vec),
        )?;
        save_graph_dir(&out, &a.out.join(&g.name), FeatureFormat::Fmat)?;
    }
    let json = serde_json::to_string_pretty(&stats).expect("alignment stats serialize");
    fsio::atomic_write(&a.out.join("alignment.json"), json.as_bytes())
}

/// Merge `--config` values and flag overrides.
pub fn train_settings(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
    }
    take!(d, layers, tau, tau_a, n_sup, k, lambda, beta, lr, epochs, pairs_per_graph, seed, similarity_channel);
    if a.patience.is_some() {
        c.patience = a.patience;
    }
    c.signed_sqrt |= a.signed_sqrt;
    c.tie_qk |= a.tie_qk;
    if !a.graphs.is_empty() {
        c.train_dirs = a.graphs.clone();
    }
    if c.train_dirs.is_empty() {
        return Err(Error::Config("no training graphs: pass --graph or train_dirs in --config".into()));
    }
    Ok(c)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let c = train_settings(&a)?;
    let model = c.model_config();
    let train = c.train_config(c.seed);
    model.validate()?;
    train.validate()?;
    let graphs = c.train_dirs.iter().map(|p| load_graph_dir(p)).collect::<Result<Vec<_>>>()?;
    let ckpt = fit(&graphs, &model, &train)?;
    if let Some(last) = ckpt.loss_history.last() {
        log::info!("trained {} epochs, final loss {last}", ckpt.epoch);
    }
    save_checkpoint(&ckpt, &a.out)
}

fn cmd_dict_add(a: DictAddArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let dict = load_dictionary(&a.dict)?;
    let n_sup = a.n_sup.unwrap_or(ckpt.model.n_sup);
    let entries = a
        .graphs
        .iter()
        .map(|p| auxiliary_entry(&ckpt, &load_graph_dir(p)?, n_sup, a.seed))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge(&dict, entries)?;
    save_dictionary(&merged, a.out.as_deref().unwrap_or(&a.dict))?;
    println!("dictionary now has {} entries", merged.len());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let g = load_graph_dir(&a.graph)?;
    let opts = ZeroShotOptions {
        seed: a.seed,
        n_sup: a.n_sup,
        truncation: a.k,
        tau_a: a.tau_a,
        strict_train_median: a.strict_train_median,
        dictionary: a.dict.as_deref().map(load_dictionary).transpose()?,
        ..ZeroShotOptions::default()
    };
    let r = zero_shot_score(&ckpt, &g, &opts)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{}_scores.csv", g.name)));
    fsio::atomic_write(&out, r.scores.to_csv().as_bytes())
}

/// Parse `node_id,label` rows.
fn read_labeled(path: &Path) -> Result<Vec<(usize, u8)>> {
    let text = fsio::read_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("node")) {
            continue;
        }
        let parsed = line.split_once(',').and_then(|(v, y)| Some((v.trim().parse().ok()?, y.trim().parse().ok()?)));
        match parsed {
            Some((v, y @ (0 | 1))) => out.push((v, y)),
            _ => return Err(Error::format_at_line(path.display().to_string(), i + 1, "expected node_id,label with label 0 or 1")),
        }
    }
    Ok(out)
}

/// `shots / 2` anomalies and the rest normals, drawn from the labels.
pub fn sample_labeled(labels: &[u8], shots: usize, rng: &mut Rng) -> Result<Vec<(usize, u8)>> {
    if shots < 2 {
        return Err(Error::invalid("need at least 2 shots (one per class)"));
    }
    let normals: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == 0).collect();
    let anomalies: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] != 0).collect();
    let n_anom = shots / 2;
    if anomalies.len() < n_anom || normals.len() < shots - n_anom {
        return Err(Error::invalid(format!(
            "graph has {} normals and {} anomalies, cannot draw {shots} shots",
            normals.len(),
            anomalies.len()
        )));
    }
    let mut out: Vec<(usize, u8)> = rng.choose_distinct(&normals, shots - n_anom).into_iter().map(|v| (v, 0)).collect();
    out.extend(rng.choose_distinct(&anomalies, n_anom).into_iter().map(|v| (v, 1)));
    Ok(out)
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let g = load_graph_dir(&a.graph)?;
    let labeled = match &a.labeled {
        Some(p) => read_labeled(p)?,
        None => {
            let labels = g
                .labels()
                .ok_or_else(|| Error::invalid("graph has no labels; pass --labeled"))?;
            let mut rng = Rng::new(a.seed).derive(streams::LABELED).derive_named(&g.name);
            sample_labeled(labels, a.shots, &mut rng)?
        }
    };
    let mut cfg = ckpt.train.clone();
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    let out = finetune(&ckpt, &g, &labeled, &cfg)?;
    save_checkpoint(&out, &a.out)
}

fn cmd_diag(a: DiagArgs) -> Result<()> {
    let g = load_graph_dir(&a.graph)?;
    let labels = g
        .labels()
        .ok_or_else(|| Error::invalid("diagnostics need a labeled graph"))?
        .to_vec();
    let ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let stages = match a.stage {
        StageArg::Raw => vec![Stage::Raw],
        StageArg::Projected => vec![Stage::Projected],
        StageArg::Aligned => vec![Stage::Aligned],
        StageArg::All => vec![Stage::Raw, Stage::Projected, Stage::Aligned],
    };
    let d = ckpt.as_ref().map_or(a.d, |c| c.model.d);
    for stage in stages {
        let x = stage_features(&g, stage, d, a.tau, ckpt.as_ref(), a.seed)?;
        let mut rng = Rng::new(a.seed).derive_named(&format!("diag/{}", stage.as_str()));
        let report = distance_diagnostic(&g, &x, stage, a.pairs, &mut rng)?;
        report.write(&labels, &a.out)?;
    }
    Ok(())
}

fn cmd_attn_export(a: AttnExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let g = load_graph_dir(&a.graph)?;
    let opts = ZeroShotOptions {
        seed: a.seed,
        dictionary: a.dict.as_deref().map(load_dictionary).transpose()?,
        ..ZeroShotOptions::default()
    };
    let r = zero_shot_score(&ckpt, &g, &opts)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    export_attention_maps(&r.reconstruction, &a.nodes, &a.out)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SuiteSpec {
        train: a.train,
        test: a.test,
        aux: a.aux,
        nodes: a.nodes,
        anomaly_rate: a.anomaly_rate,
        clique_size: a.clique_size,
    };
    let suite = synthetic_suite(&spec, &Rng::new(a.seed).derive(streams::SYNTH))?;
    for g in suite.train.iter().chain(&suite.test).chain(&suite.aux) {
        save_graph_dir(g, &a.out.join(&g.name), a.format.into())?;
    }
    let names = |gs: &[GraphDataset]| gs.iter().map(|g| PathBuf::from(&g.name)).collect::<Vec<_>>();
    let cfg = RunConfig {
        d: 32,
        n_sup: 64,
        seed: a.seed,
        train_dirs: names(&suite.train),
        test_dirs: names(&suite.test),
        aux_dirs: names(&suite.aux),
        case_aux_merge: !suite.aux.is_empty(),
        ..RunConfig::default()
    };
    fsio::atomic_write(&a.out.join("experiment.toml"), synth_config_toml(&cfg).as_bytes())
}

/// The keys a synthetic suite's starter config sets; everything else keeps
/// its default.
fn synth_config_toml(cfg: &RunConfig) -> String {
    let list = |v: &[PathBuf]| {
        let quoted: Vec<String> = v.iter().map(|p| format!("{:?}", p.display().to_string())).collect();
        format!("[{}]", quoted.join(", "))
    };
    format!(
        "# Written by `owleye synth`. Run with `owleye eval --config experiment.toml`.\n\
         d = {}\nn_sup = {}\nseed = {}\ntrials = {}\n\
         train_dirs = {}\ntest_dirs = {}\naux_dirs = {}\n\
         case_aux_merge = {}\nout_dir = \"report\"\n",
        cfg.d,
        cfg.n_sup,
        cfg.seed,
        cfg.trials,
        list(&cfg.train_dirs),
        list(&cfg.test_dirs),
        list(&cfg.aux_dirs),
        cfg.case_aux_merge,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_flag_parses_both_forms() {
        assert_eq!(parse_truncation("4").unwrap(), Truncation::Count(4));
        assert_eq!(parse_truncation("0.25").unwrap(), Truncation::Fraction(0.25));
        assert!(parse_truncation("half").is_err());
    }

    #[test]
    fn labeled_sampling_is_balanced() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 8 == 0)).collect();
        let mut rng = Rng::new(1);
        let s = sample_labeled(&labels, 10, &mut rng).unwrap();
        assert_eq!(s.iter().filter(|x| x.1 == 1).count(), 5);
        assert!(s.iter().all(|&(v, y)| labels[v] == y));
        assert!(sample_labeled(&labels, 20, &mut rng).is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "d = 16\nepochs = 7\ntrain_dirs = [\"g\"]\n").unwrap();
        let args = TrainArgs {
            config: Some(cfg),
            epochs: Some(3),
            ..TrainArgs::default()
        };
        let c = train_settings(&args).unwrap();
        assert_eq!((c.d, c.epochs), (16, 3));
        assert_eq!(c.train_dirs, vec![dir.path().join("g")]);
    }

    #[test]
    fn synth_config_parses_back() {
        let cfg = RunConfig {
            d: 32,
            train_dirs: vec!["train0".into(), "train1".into()],
            test_dirs: vec!["test0".into()],
            case_aux_merge: true,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&synth_config_toml(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn help_is_not_an_error_but_bad_flags_are() {
        let kind = |args: &[&str]| Cli::try_parse_from(args).unwrap_err();
        assert!(!kind(&["owleye", "--help"]).use_stderr());
        assert!(!kind(&["owleye", "dict", "add", "--help"]).use_stderr());
        assert!(kind(&["owleye", "score", "--bogus"]).use_stderr());
        assert!(kind(&["owleye"]).use_stderr());
        assert!(Cli::try_parse_from(["owleye", "score", "--checkpoint", "m", "--graph", "g", "--k", "0.25"]).is_ok());
    }
}
