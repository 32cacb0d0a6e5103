//! Anomaly scores, zero-shot inference, ranking metrics and the pairwise
//! distance diagnostic.

use std::path::Path;

use crate::align::{align_collection, align_new_graph, project_features};
use crate::dictionary::{entry_from_indices, merge, sample_support, DictEntry, PatternDictionary, PatternSource};
use crate::encoders::Embeddings;
use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::numerics::{pca_fit_transform, squared_distance, Matrix, Rng};
use crate::reconstruction::{reconstruct, AttentionConfig, Reconstruction, Truncation};
use crate::training::{embed_graph, Checkpoint};
use crate::{fsio, streams};

/// Per-node anomaly scores with their two components.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub graph_id: String,
    pub scores: Vec<f64>,
    /// `‖Ĥ_v − H_v‖²`.
    pub attr_term: Vec<f64>,
    /// `‖R̂_v − R_v‖²` before weighting by β.
    pub struct_term: Vec<f64>,
    pub beta: f64,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `node_id,score` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node_id,score\n");
        for (i, v) in self.scores.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

/// `S_v = ‖Ĥ_v − H_v‖² + β‖R̂_v − R_v‖²`.
pub fn anomaly_scores(graph_id: &str, emb: &Embeddings, rec: &Reconstruction, beta: f64) -> Result<ScoreVector> {
    if emb.h.shape() != rec.h_hat.shape() || emb.r.shape() != rec.r_hat.shape() {
        return Err(Error::invalid("embedding and reconstruction shapes differ"));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta must be >= 0"));
    }
    let n = emb.node_count();
    let attr_term: Vec<f64> = (0..n).map(|v| squared_distance(emb.h.row(v), rec.h_hat.row(v))).collect();
    let struct_term: Vec<f64> = (0..n).map(|v| squared_distance(emb.r.row(v), rec.r_hat.row(v))).collect();
    let scores = attr_term.iter().zip(&struct_term).map(|(a, s)| a + beta * s).collect();
    Ok(ScoreVector {
        graph_id: graph_id.to_string(),
        scores,
        attr_term,
        struct_term,
        beta,
    })
}

/// How the test graph's own dictionary entry is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PseudoSupport {
    /// Uniform over all nodes; labels are ignored.
    #[default]
    Random,
    /// Only true normal nodes. Requires labels; used as an upper-bound
    /// reference, not in the zero-shot setting.
    TrueNormals,
}

/// Knobs for [`zero_shot_score`]. `None` falls back to the checkpoint.
#[derive(Clone, Debug, Default)]
pub struct ZeroShotOptions {
    pub seed: u64,
    pub n_sup: Option<usize>,
    pub truncation: Option<Truncation>,
    pub tau_a: Option<f64>,
    pub pseudo: PseudoSupport,
    /// Pool only the training graphs' statistics when normalizing.
    pub strict_train_median: bool,
    /// Replaces the checkpoint's dictionary.
    pub dictionary: Option<PatternDictionary>,
    /// Appended before the test graph's own entry.
    pub extra_entries: Vec<DictEntry>,
}

#[derive(Clone, Debug)]
pub struct ZeroShotResult {
    pub scores: ScoreVector,
    pub reconstruction: Reconstruction,
    /// Entries averaged over, including the test graph's own.
    pub entries_used: usize,
    /// Pseudo-support nodes that are labeled anomalous (when labels exist).
    pub anomalous_in_support: Option<usize>,
    pub support: Vec<usize>,
}

fn attention_for(ckpt: &Checkpoint, opts: &ZeroShotOptions) -> AttentionConfig {
    let mut a = ckpt.model.attention;
    if let Some(t) = opts.truncation {
        a.truncation = t;
    }
    if let Some(t) = opts.tau_a {
        a.tau_a = t;
    }
    a
}

/// Score every node of an unseen graph without touching the checkpoint.
pub fn zero_shot_score(ckpt: &Checkpoint, g: &GraphDataset, opts: &ZeroShotOptions) -> Result<ZeroShotResult> {
    let (_, emb) = embed_graph(ckpt, g, !opts.strict_train_median)?;
    let n_sup = opts.n_sup.unwrap_or(ckpt.model.n_sup);
    let mut rng = Rng::new(opts.seed).derive(streams::PSEUDO).derive_named(&g.name);
    let eligible = match opts.pseudo {
        PseudoSupport::Random => None,
        PseudoSupport::TrueNormals => Some(
            g.labels()
                .ok_or_else(|| Error::invalid("true-normal support needs labels"))?,
        ),
    };
    let support = sample_support(g.node_count(), eligible, n_sup, &mut rng)?;
    let anomalous_in_support = g
        .labels()
        .map(|l| support.iter().filter(|&&v| l[v] != 0).count());
    let own = entry_from_indices(&g.name, &emb, support.clone(), PatternSource::TestPseudo);
    let base = opts.dictionary.as_ref().unwrap_or(&ckpt.dictionary);
    let mut added = opts.extra_entries.clone();
    added.push(own);
    let dict = merge(base, added)?;
    let rec = reconstruct(&emb, &dict, &ckpt.params, &attention_for(ckpt, opts))?;
    let scores = anomaly_scores(&g.name, &emb, &rec, ckpt.train.beta)?;
    Ok(ZeroShotResult {
        scores,
        reconstruction: rec,
        entries_used: dict.len(),
        anomalous_in_support,
        support,
    })
}

/// Dictionary entry for an auxiliary graph. Labeled graphs contribute normal
/// nodes only; unlabeled graphs contribute uniformly sampled nodes.
pub fn auxiliary_entry(ckpt: &Checkpoint, g: &GraphDataset, n_sup: usize, seed: u64) -> Result<DictEntry> {
    let (_, emb) = embed_graph(ckpt, g, true)?;
    let mut rng = Rng::new(seed).derive(streams::SUPPORT).derive_named(&g.name);
    let support = sample_support(g.node_count(), g.labels(), n_sup, &mut rng)?;
    Ok(entry_from_indices(&g.name, &emb, support, PatternSource::AuxNormal))
}

/// Entry for one of the checkpoint's own training graphs with `n_sup`
/// normal patterns. With the training `n_sup` and seed this reproduces the
/// stored entry exactly.
pub fn training_entry(ckpt: &Checkpoint, g: &GraphDataset, n_sup: usize, seed: u64) -> Result<DictEntry> {
    if ckpt.alignment.get(&g.name).is_none() {
        return Err(Error::invalid(format!("graph {:?} is not a training graph of this checkpoint", g.name)));
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::invalid(format!("training graph {:?} has no labels", g.name)))?;
    let (_, emb) = embed_graph(ckpt, g, false)?;
    let mut rng = Rng::new(seed).derive(streams::SUPPORT).derive_named(&g.name);
    let support = sample_support(g.node_count(), Some(labels), n_sup, &mut rng)?;
    Ok(entry_from_indices(&g.name, &emb, support, PatternSource::TrainNormal))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by score, ascending, then grouped into runs of equal score.
fn tie_groups(scores: &[f64], descending: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        (if descending { o.reverse() } else { o }).then(a.cmp(&b))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative; ties
/// count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUROC needs both positive and negative labels"));
    }
    // Twice the Mann–Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in tie_groups(scores, false) {
        let p = group.iter().filter(|&&i| labels[i] != 0).count() as u128;
        let q = group.len() as u128 - p;
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision with one threshold per distinct score: tied nodes enter
/// the ranking together.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    if pos == 0 {
        return Err(Error::invalid("AUPRC needs at least one positive label"));
    }
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    for group in tie_groups(scores, true) {
        let hits = group.iter().filter(|&&i| labels[i] != 0).count();
        tp += hits;
        seen += group.len();
        if hits > 0 {
            ap += (hits as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

pub fn metrics(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    let (positives, negatives) = class_counts(scores, labels)?;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid(format!(
            "degenerate labels: {positives} positives, {negatives} negatives"
        )));
    }
    Ok(MetricsReport {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        positives,
        negatives,
    })
}

/// Brute-force references for the ranking metrics.
#[doc(hidden)]
pub mod oracle {
    /// Pair counting over every positive/negative pair.
    pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u128;
        let (mut p, mut n) = (0u128, 0u128);
        for i in 0..scores.len() {
            if labels[i] == 0 {
                n += 1;
                continue;
            }
            p += 1;
            for j in 0..scores.len() {
                if labels[j] == 0 {
                    twice += if scores[i] > scores[j] {
                        2
                    } else if scores[i] == scores[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        twice as f64 / (2.0 * p as f64 * n as f64)
    }

    /// Threshold walk: for each distinct score from high to low, count
    /// everything at or above it from scratch.
    pub fn auprc_thresholds(scores: &[f64], labels: &[u8]) -> f64 {
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        let pos = labels.iter().filter(|&&l| l != 0).count();
        let mut ap = 0.0;
        let mut prev_tp = 0;
        for t in distinct {
            let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = above.iter().filter(|&&i| labels[i] != 0).count();
            if tp > prev_tp {
                ap += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / above.len() as f64);
            }
            prev_tp = tp;
        }
        ap
    }
}

/// Pipeline stage a diagnostic is taken at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Projected,
    Aligned,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "projected" => Ok(Self::Projected),
            "aligned" => Ok(Self::Aligned),
            other => Err(Error::invalid(format!("unknown stage {other:?}"))),
        }
    }
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Projected => "projected",
            Self::Aligned => "aligned",
        }
    }
}

pub const HISTOGRAM_BINS: usize = 50;

/// Distance summary for one pair class (NN, NA or AA).
#[derive(Clone, Debug, PartialEq)]
pub struct PairClassStats {
    pub class: &'static str,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Bin counts over `[0, DistanceReport::max_distance]`.
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    pub graph_id: String,
    pub stage: Stage,
    pub classes: Vec<PairClassStats>,
    pub max_distance: f64,
    /// Per node: first two principal components.
    pub scatter: Matrix,
}

fn median_of(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Features of `g` at a pipeline stage. The aligned stage uses `reference`
/// when given, else aligns the graph on its own.
pub fn stage_features(
    g: &GraphDataset,
    stage: Stage,
    d: usize,
    tau: f64,
    reference: Option<&Checkpoint>,
    seed: u64,
) -> Result<Matrix> {
    let root = Rng::new(seed).derive(streams::ALIGN);
    match stage {
        Stage::Raw => Ok(g.features().clone()),
        Stage::Projected => project_features(g, d, &mut root.derive_named(&format!("project/{}", g.name))),
        Stage::Aligned => match reference {
            Some(ckpt) => Ok(align_new_graph(g, &ckpt.alignment, ckpt.model.d, true, &Rng::new(ckpt.train.seed).derive(streams::ALIGN))?
                .0
                .features),
            None => Ok(align_collection(std::slice::from_ref(g), d, tau, Default::default(), &root)?
                .0
                .remove(0)
                .features),
        },
    }
}

/// Normal–normal, normal–anomaly and anomaly–anomaly distance statistics
/// over all unordered pairs, or `sample_pairs` uniformly drawn pairs when
/// there are more than that.
pub fn distance_diagnostic(
    g: &GraphDataset,
    x: &Matrix,
    stage: Stage,
    sample_pairs: usize,
    rng: &mut Rng,
) -> Result<DistanceReport> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::invalid("distance diagnostic needs labels"))?;
    let n = x.rows();
    if n != g.node_count() {
        return Err(Error::invalid("feature rows do not match node count"));
    }
    let total = n * n.saturating_sub(1) / 2;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if total <= sample_pairs {
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
    } else {
        while pairs.len() < sample_pairs {
            let (i, j) = (rng.below(n), rng.below(n));
            if i != j {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    let mut by_class: [Vec<f64>; 3] = Default::default();
    for (i, j) in pairs {
        let c = (labels[i] != 0) as usize + (labels[j] != 0) as usize;
        by_class[c].push(squared_distance(x.row(i), x.row(j)).sqrt());
    }
    let max_distance = by_class.iter().flatten().fold(0.0f64, |m, &d| m.max(d));
    let classes = ["NN", "NA", "AA"]
        .into_iter()
        .zip(by_class.iter_mut())
        .map(|(class, d)| {
            d.sort_by(f64::total_cmp);
            let mut histogram = vec![0; HISTOGRAM_BINS];
            for &v in d.iter() {
                let b = if max_distance > 0.0 {
                    ((v / max_distance) * HISTOGRAM_BINS as f64) as usize
                } else {
                    0
                };
                histogram[b.min(HISTOGRAM_BINS - 1)] += 1;
            }
            PairClassStats {
                class,
                count: d.len(),
                mean: (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64),
                median: median_of(d),
                histogram,
            }
        })
        .collect();
    let scatter = pca_fit_transform(x, 2, &mut Rng::new(0))?;
    Ok(DistanceReport {
        graph_id: g.name.clone(),
        stage,
        classes,
        max_distance,
        scatter,
    })
}

impl DistanceReport {
    /// `class,count,mean,median,bin_0..bin_49`; blank stats for empty classes.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("class,count,mean,median");
        for b in 0..HISTOGRAM_BINS {
            s.push_str(&format!(",bin_{b}"));
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for c in &self.classes {
            s.push_str(&format!("{},{},{},{}", c.class, c.count, opt(c.mean), opt(c.median)));
            for h in &c.histogram {
                s.push_str(&format!(",{h}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn scatter_csv(&self, labels: &[u8]) -> String {
        let mut s = String::from("node_id,pc1,pc2,label\n");
        for v in 0..self.scatter.rows() {
            let r = self.scatter.row(v);
            s.push_str(&format!("{v},{},{},{}\n", r[0], r[1], labels[v]));
        }
        s
    }

    /// Writes `<graph>_<stage>_distances.csv` and `<graph>_<stage>_scatter.csv`.
    pub fn write(&self, labels: &[u8], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("{}_{}", self.graph_id, self.stage.as_str());
        fsio::atomic_write(&dir.join(format!("{stem}_distances.csv")), self.summary_csv().as_bytes())?;
        fsio::atomic_write(&dir.join(format!("{stem}_scatter.csv")), self.scatter_csv(labels).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn worked_metric_case() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let y = [1, 0, 1, 0];
        assert_eq!(auroc(&s, &y).unwrap(), 0.75);
        assert!((auprc(&s, &y).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn metric_edge_cases() {
        assert_eq!(auroc(&[3.0, 2.0, 1.0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(auprc(&[3.0, 2.0, 1.0], &[1, 1, 0]).unwrap(), 1.0);
        assert!((auprc(&[4.0, 3.0, 2.0, 1.0], &[0, 0, 0, 1]).unwrap() - 0.25).abs() < 1e-15);
        assert!(auroc(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(auprc(&[1.0, 2.0], &[0, 0]).is_err());
        assert!(metrics(&[1.0, 2.0], &[0, 0]).is_err());
    }

    #[test]
    fn scores_decompose_exactly() {
        let mut rng = Rng::new(1);
        let m = |rng: &mut Rng| Matrix::from_fn(5, 3, |_, _| rng.normal());
        let emb = Embeddings { h: m(&mut rng), r: m(&mut rng) };
        let rec = Reconstruction {
            h_hat: m(&mut rng),
            r_hat: m(&mut rng),
            attention_h: vec![],
            attention_r: vec![],
            similarity: vec![],
            similarity_h: None,
        };
        let s = anomaly_scores("g", &emb, &rec, 0.01).unwrap();
        for v in 0..5 {
            let a: f64 = (0..3).map(|c| (emb.h.get(v, c) - rec.h_hat.get(v, c)).powi(2)).sum();
            let b: f64 = (0..3).map(|c| (emb.r.get(v, c) - rec.r_hat.get(v, c)).powi(2)).sum();
            assert!((s.scores[v] - (a + 0.01 * b)).abs() < 1e-12);
            assert!((s.scores[v] - (s.attr_term[v] + 0.01 * s.struct_term[v])).abs() < 1e-12);
            assert!(s.scores[v] >= 0.0);
        }
        let zero = anomaly_scores("g", &emb, &rec, 0.0).unwrap();
        assert_eq!(zero.scores, zero.attr_term);
        let perfect = Reconstruction {
            h_hat: emb.h.clone(),
            r_hat: emb.r.clone(),
            ..rec
        };
        assert!(anomaly_scores("g", &emb, &perfect, 0.01).unwrap().scores.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diagnostic_single_class_and_scaling() {
        let mut rng = Rng::new(2);
        let x = Matrix::from_fn(20, 4, |_, _| rng.normal());
        let g = GraphDataset::new("g", "", vec![(0, 1)], x.clone(), Some(vec![0; 20])).unwrap();
        let r = distance_diagnostic(&g, &x, Stage::Raw, 1000, &mut Rng::new(0)).unwrap();
        assert_eq!(r.classes[0].count, 190);
        assert_eq!(r.classes[1].count, 0);
        assert!(r.classes[2].median.is_none());
        assert!(r.summary_csv().contains("AA,0,,,"));

        let mut labels = vec![0u8; 20];
        labels[3] = 1;
        labels[7] = 1;
        let g = g.with_labels(Some(labels)).unwrap();
        let a = distance_diagnostic(&g, &x, Stage::Raw, 1000, &mut Rng::new(0)).unwrap();
        let b = distance_diagnostic(&g, &x.scale(3.7), Stage::Aligned, 1000, &mut Rng::new(0)).unwrap();
        let ratios: Vec<f64> = (0..3).map(|c| b.classes[c].median.unwrap() / a.classes[c].median.unwrap()).collect();
        assert!((ratios[0] - ratios[1]).abs() < 1e-9 && (ratios[1] - ratios[2]).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(raw in proptest::collection::vec((0u8..4, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 * 0.25).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), oracle::auroc_pairs(&scores, &labels));
            prop_assert_eq!(auprc(&scores, &labels).unwrap(), oracle::auprc_thresholds(&scores, &labels));
        }

        #[test]
        fn auroc_invariant_under_exp(raw in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&exp, &labels).unwrap());
        }
    }
}
