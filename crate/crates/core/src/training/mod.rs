//! Losses, the analytic gradient engine, Adam and the training loops.
//!
//! The objective for one graph is
//!
//! ```text
//! L = Σ_{v∈A} cos(H_v, Ĥ_v) − Σ_{v∈N} cos(H_v, Ĥ_v)
//!   + Σ_{(a,n)} [ max(‖Ĥ_a−H_a‖² − ‖Ĥ_a−Ĥ_n‖² + λ, 0)
//!               + β·max(‖R̂_a−R_a‖² − ‖R̂_a−R̂_n‖² + λ, 0) ]
//! ```
//!
//! summed over training graphs. Gradients are computed by hand through the
//! reconstruction, the similarity weights and both encoders. Dictionary
//! entries built from training graphs are re-gathered from the current
//! embeddings each step, so they carry gradient too.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::align::{align_collection, align_new_graph, Aggregation, AlignedGraph, AlignmentStats};
use crate::dictionary::{entry_from_indices, sample_support, DictEntry, PatternDictionary, PatternSource};
use crate::encoders::{backward_channel, encode, forward_channel, init_params_with, EncoderParams, Embeddings, ParamLayout};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, AdjacencyMode, GraphDataset, NormalizedAdjacency};
use crate::numerics::{dot, Matrix, Rng};
use crate::reconstruction::{self, AttentionConfig, PatternRef, Reconstruction, SimilarityChannel};
use crate::{par, streams};

/// Model shape and inference-time settings stored with every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Aligned feature width, also the encoder layer width.
    pub d: usize,
    pub layers: usize,
    /// Lower bound on the alignment scaling factor.
    pub tau: f64,
    pub aggregation: Aggregation,
    pub adjacency: AdjacencyMode,
    pub attention: AttentionConfig,
    /// Patterns sampled per graph for the dictionary.
    pub n_sup: usize,
    pub tie_qk: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            layers: 3,
            tau: 1.0,
            aggregation: Aggregation::Median,
            adjacency: AdjacencyMode::SymNorm,
            attention: AttentionConfig::default(),
            n_sup: 2000,
            tie_qk: false,
        }
    }
}

impl ModelConfig {
    pub fn emb_dim(&self) -> usize {
        (self.layers.max(1) - 1) * self.d
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            per_channel_similarity: self.attention.similarity == SimilarityChannel::PerChannel,
            tie_qk: self.tie_qk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if self.layers < 2 {
            return Err(Error::Config("layers must be >= 2".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be > 0".into()));
        }
        if !(self.attention.tau_a > 0.0) {
            return Err(Error::Config("tau_a must be > 0".into()));
        }
        if self.n_sup == 0 {
            return Err(Error::Config("n_sup must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Triplet margin.
    pub lambda: f64,
    /// Weight of the structure channel in the triplet loss and the score.
    pub beta: f64,
    /// Sampled (anomaly, normal) pairs per graph per epoch; 0 uses all pairs.
    pub pairs_per_graph: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many epochs without a new best loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            epochs: 100,
            lambda: 0.2,
            beta: 0.01,
            pairs_per_graph: 512,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: None,
        }
    }
}

impl TrainConfig {
    fn validate_common(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be finite and >= 0".into()));
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("lambda and beta must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Model parameters together with everything needed to score new graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: EncoderParams,
    /// Alignment statistics of the training graphs.
    pub alignment: AlignmentStats,
    /// Patterns from the training graphs under the final parameters.
    pub dictionary: PatternDictionary,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

fn cosine_parts(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot(a, b), na, nb))
}

fn check_indices(n: usize, idx: &[usize], what: &str) -> Result<()> {
    match idx.iter().find(|&&v| v >= n) {
        Some(v) => Err(Error::invalid(format!("{what} index {v} out of range for {n} rows"))),
        None => Ok(()),
    }
}

/// `Σ_{v∈A} cos(H_v, Ĥ_v) − Σ_{v∈N} cos(H_v, Ĥ_v)`. Rows where either side
/// has zero norm are skipped.
pub fn recon_loss(h: &Matrix, h_hat: &Matrix, normals: &[usize], anomalies: &[usize]) -> Result<f64> {
    if normals.is_empty() && anomalies.is_empty() {
        return Err(Error::invalid("recon loss needs at least one normal or anomalous node"));
    }
    if h.shape() != h_hat.shape() {
        return Err(Error::invalid("embedding and reconstruction shapes differ"));
    }
    check_indices(h.rows(), normals, "normal")?;
    check_indices(h.rows(), anomalies, "anomaly")?;
    let (loss, skipped) = recon_terms(h, h_hat, normals, anomalies, None);
    if skipped > 0 {
        log::warn!("recon loss skipped {skipped} zero-norm rows");
    }
    Ok(loss)
}

/// Loss value plus skipped-row count; adds gradients into `grads` if given.
fn recon_terms(
    h: &Matrix,
    h_hat: &Matrix,
    normals: &[usize],
    anomalies: &[usize],
    mut grads: Option<(&mut Matrix, &mut Matrix)>,
) -> (f64, usize) {
    let mut loss = 0.0;
    let mut skipped = 0;
    for (set, sign) in [(anomalies, 1.0), (normals, -1.0)] {
        for &v in set {
            let (a, b) = (h.row(v), h_hat.row(v));
            let Some((ab, na, nb)) = cosine_parts(a, b) else {
                skipped += 1;
                continue;
            };
            let cos = ab / (na * nb);
            loss += sign * cos;
            if let Some((dh, dh_hat)) = grads.as_mut() {
                let inv = 1.0 / (na * nb);
                let (ca, cb) = (cos / (na * na), cos / (nb * nb));
                for (c, g) in dh.row_mut(v).iter_mut().enumerate() {
                    *g += sign * (b[c] * inv - a[c] * ca);
                }
                for (c, g) in dh_hat.row_mut(v).iter_mut().enumerate() {
                    *g += sign * (a[c] * inv - b[c] * cb);
                }
            }
        }
    }
    (loss, skipped)
}

/// Sum of margin hinges over `(anomaly, normal)` pairs on both channels.
pub fn triplet_loss(
    h: &Matrix,
    h_hat: &Matrix,
    r: &Matrix,
    r_hat: &Matrix,
    pairs: &[(usize, usize)],
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    if h.shape() != h_hat.shape() || r.shape() != r_hat.shape() || h.rows() != r.rows() {
        return Err(Error::invalid("triplet loss shape mismatch"));
    }
    if pairs.is_empty() {
        log::warn!("triplet loss over an empty pair list");
        return Ok(0.0);
    }
    let n = h.rows();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::invalid(format!("pair ({a}, {b}) out of range for {n} nodes")));
    }
    Ok(triplet_channel(h, h_hat, pairs, lambda, 1.0, None) + triplet_channel(r, r_hat, pairs, lambda, beta, None))
}

fn triplet_channel(
    e: &Matrix,
    e_hat: &Matrix,
    pairs: &[(usize, usize)],
    lambda: f64,
    weight: f64,
    mut grads: Option<(&mut Matrix, &mut Matrix)>,
) -> f64 {
    let mut loss = 0.0;
    for &(a, b) in pairs {
        let (ea, ha, hb) = (e.row(a), e_hat.row(a), e_hat.row(b));
        let mut pos = 0.0;
        let mut neg = 0.0;
        for c in 0..ea.len() {
            pos += (ha[c] - ea[c]) * (ha[c] - ea[c]);
            neg += (ha[c] - hb[c]) * (ha[c] - hb[c]);
        }
        let arg = pos - neg + lambda;
        if arg <= 0.0 {
            continue;
        }
        loss += weight * arg;
        if let Some((de, de_hat)) = grads.as_mut() {
            let s = 2.0 * weight;
            for c in 0..ea.len() {
                let dp = ha[c] - ea[c];
                let dn = ha[c] - hb[c];
                de.row_mut(a)[c] -= s * dp;
                de_hat.row_mut(a)[c] += s * (dp - dn);
                de_hat.row_mut(b)[c] += s * dn;
            }
        }
    }
    loss
}

/// One graph as seen by the objective.
#[derive(Clone, Debug)]
pub struct TrainGraph {
    pub id: String,
    /// Aligned features, n × d.
    pub features: Matrix,
    pub adj: NormalizedAdjacency,
    pub normals: Vec<usize>,
    pub anomalies: Vec<usize>,
}

impl TrainGraph {
    /// Split labels into normal and anomalous node sets.
    pub fn from_labels(id: &str, features: Matrix, adj: NormalizedAdjacency, labels: &[u8]) -> Result<Self> {
        if labels.len() != features.rows() || adj.node_count() != features.rows() {
            return Err(Error::invalid(format!("graph {id:?}: labels, features and adjacency disagree on n")));
        }
        let normals = (0..labels.len()).filter(|&v| labels[v] == 0).collect();
        let anomalies = (0..labels.len()).filter(|&v| labels[v] != 0).collect();
        Self::new(id, features, adj, normals, anomalies)
    }

    pub fn new(
        id: &str,
        features: Matrix,
        adj: NormalizedAdjacency,
        normals: Vec<usize>,
        anomalies: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        check_indices(n, &normals, "normal")?;
        check_indices(n, &anomalies, "anomaly")?;
        if normals.is_empty() || anomalies.is_empty() {
            return Err(Error::invalid(format!(
                "graph {id:?} needs at least one normal and one anomalous node"
            )));
        }
        if normals.iter().any(|v| anomalies.contains(v)) {
            return Err(Error::invalid(format!("graph {id:?}: a node is both normal and anomalous")));
        }
        Ok(Self {
            id: id.to_string(),
            features,
            adj,
            normals,
            anomalies,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }
}

/// A dictionary entry as seen by the objective.
#[derive(Clone, Debug)]
pub enum EntrySpec {
    /// Rows `indices` of graph `graph`'s current embeddings.
    Live { graph: usize, indices: Vec<usize> },
    /// Stored patterns, treated as constants.
    Frozen(DictEntry),
}

/// Value and gradient of the objective for fixed pairs.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub per_graph: Vec<f64>,
    pub grads: Option<EncoderParams>,
}

/// The full differentiable pipeline over a set of graphs and entries.
#[derive(Clone, Debug)]
pub struct Objective {
    pub graphs: Vec<TrainGraph>,
    pub entries: Vec<EntrySpec>,
    pub attention: AttentionConfig,
    pub lambda: f64,
    pub beta: f64,
}

struct GraphForward {
    emb: Embeddings,
    trace_h: crate::encoders::ChannelTrace,
    trace_r: crate::encoders::ChannelTrace,
}

struct GraphBackward {
    loss: f64,
    grads: EncoderParams,
    d_h: Matrix,
    d_r: Matrix,
    d_patterns: Vec<(Matrix, Matrix)>,
}

impl Objective {
    fn validate(&self, params: &EncoderParams, pairs: &[Vec<(usize, usize)>]) -> Result<()> {
        params.check()?;
        if self.graphs.is_empty() || self.entries.is_empty() {
            return Err(Error::invalid("objective needs at least one graph and one entry"));
        }
        if pairs.len() != self.graphs.len() {
            return Err(Error::invalid("one pair list per graph required"));
        }
        for (g, p) in self.graphs.iter().zip(pairs) {
            if g.features.cols() != params.width {
                return Err(Error::invalid(format!("graph {:?} width does not match the model", g.id)));
            }
            let n = g.node_count();
            if p.iter().any(|&(a, b)| a >= n || b >= n) {
                return Err(Error::invalid(format!("pair out of range for graph {:?}", g.id)));
            }
        }
        for e in &self.entries {
            match e {
                EntrySpec::Live { graph, indices } => {
                    let g = self
                        .graphs
                        .get(*graph)
                        .ok_or_else(|| Error::invalid(format!("live entry references graph {graph}")))?;
                    check_indices(g.node_count(), indices, "pattern")?;
                    if indices.is_empty() {
                        return Err(Error::invalid("live entry has no patterns"));
                    }
                }
                EntrySpec::Frozen(d) => {
                    if d.emb_dim() != params.emb_dim() {
                        return Err(Error::invalid(format!("frozen entry {:?} has the wrong width", d.graph_id)));
                    }
                }
            }
        }
        Ok(())
    }

    fn forward_graphs(&self, params: &EncoderParams) -> Vec<GraphForward> {
        par::map_indexed(self.graphs.len(), |i| {
            let g = &self.graphs[i];
            let (h, trace_h) = forward_channel(&g.features, &g.adj, &params.w_attr);
            let ones = Matrix::filled(g.node_count(), params.width, 1.0);
            let (r, trace_r) = forward_channel(&ones, &g.adj, &params.w_struc);
            GraphForward {
                emb: Embeddings { h, r },
                trace_h,
                trace_r,
            }
        })
    }

    fn gather(&self, fwd: &[GraphForward]) -> Vec<Option<(Matrix, Matrix)>> {
        self.entries
            .iter()
            .map(|e| match e {
                EntrySpec::Live { graph, indices } => {
                    let emb = &fwd[*graph].emb;
                    Some((emb.h.select_rows(indices), emb.r.select_rows(indices)))
                }
                EntrySpec::Frozen(_) => None,
            })
            .collect()
    }

    fn pattern_refs<'a>(&'a self, gathered: &'a [Option<(Matrix, Matrix)>]) -> Vec<PatternRef<'a>> {
        self.entries
            .iter()
            .zip(gathered)
            .map(|(e, g)| match (e, g) {
                (EntrySpec::Frozen(d), _) => PatternRef {
                    h: &d.patterns_h,
                    r: &d.patterns_r,
                },
                (EntrySpec::Live { .. }, Some((h, r))) => PatternRef { h, r },
                (EntrySpec::Live { .. }, None) => unreachable!("live entries are always gathered"),
            })
            .collect()
    }

    fn graph_loss(&self, i: usize, emb: &Embeddings, rec: &Reconstruction, pairs: &[(usize, usize)]) -> f64 {
        let g = &self.graphs[i];
        let (recon, _) = recon_terms(&emb.h, &rec.h_hat, &g.normals, &g.anomalies, None);
        recon
            + triplet_channel(&emb.h, &rec.h_hat, pairs, self.lambda, 1.0, None)
            + triplet_channel(&emb.r, &rec.r_hat, pairs, self.lambda, self.beta, None)
    }

    /// Loss only.
    pub fn loss(&self, params: &EncoderParams, pairs: &[Vec<(usize, usize)>]) -> Result<Evaluation> {
        self.validate(params, pairs)?;
        let fwd = self.forward_graphs(params);
        let gathered = self.gather(&fwd);
        let refs = self.pattern_refs(&gathered);
        let per_graph = par::map_indexed(self.graphs.len(), |i| {
            let (rec, _) = reconstruction::forward(&fwd[i].emb, &refs, params, &self.attention)?;
            Ok(self.graph_loss(i, &fwd[i].emb, &rec, &pairs[i]))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        Ok(Evaluation {
            loss: per_graph.iter().sum(),
            per_graph,
            grads: None,
        })
    }

    /// Loss and exact gradient w.r.t. every parameter matrix.
    pub fn loss_and_grad(&self, params: &EncoderParams, pairs: &[Vec<(usize, usize)>]) -> Result<Evaluation> {
        self.validate(params, pairs)?;
        let fwd = self.forward_graphs(params);
        let gathered = self.gather(&fwd);
        let refs = self.pattern_refs(&gathered);

        let backs = par::map_indexed(self.graphs.len(), |i| -> Result<GraphBackward> {
            let g = &self.graphs[i];
            let emb = &fwd[i].emb;
            let (rec, trace) = reconstruction::forward(emb, &refs, params, &self.attention)?;
            let (n, e) = emb.h.shape();
            let mut d_h = Matrix::zeros(n, e);
            let mut d_r = Matrix::zeros(n, e);
            let mut d_h_hat = Matrix::zeros(n, e);
            let mut d_r_hat = Matrix::zeros(n, e);
            let (recon, _) = recon_terms(&emb.h, &rec.h_hat, &g.normals, &g.anomalies, Some((&mut d_h, &mut d_h_hat)));
            let trip_h = triplet_channel(&emb.h, &rec.h_hat, &pairs[i], self.lambda, 1.0, Some((&mut d_h, &mut d_h_hat)));
            let trip_r =
                triplet_channel(&emb.r, &rec.r_hat, &pairs[i], self.lambda, self.beta, Some((&mut d_r, &mut d_r_hat)));
            let mut grads = params.zeros_like();
            let rg = reconstruction::backward(&trace, emb, &refs, params, &self.attention, &d_h_hat, &d_r_hat, &mut grads);
            d_h.add_assign(&rg.d_query_h);
            d_r.add_assign(&rg.d_query_r);
            Ok(GraphBackward {
                loss: recon + trip_h + trip_r,
                grads,
                d_h,
                d_r,
                d_patterns: rg.d_patterns,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut grads = params.zeros_like();
        let mut d_emb: Vec<(Matrix, Matrix)> = fwd
            .iter()
            .map(|f| {
                let (n, e) = f.emb.h.shape();
                (Matrix::zeros(n, e), Matrix::zeros(n, e))
            })
            .collect();
        let mut per_graph = Vec::with_capacity(backs.len());
        for (i, b) in backs.into_iter().enumerate() {
            per_graph.push(b.loss);
            grads.axpy(1.0, &b.grads);
            d_emb[i].0.add_assign(&b.d_h);
            d_emb[i].1.add_assign(&b.d_r);
            for (entry, (dp_h, dp_r)) in self.entries.iter().zip(&b.d_patterns) {
                if let EntrySpec::Live { graph, indices } = entry {
                    let (dh, dr) = &mut d_emb[*graph];
                    for (row, &v) in indices.iter().enumerate() {
                        for (x, y) in dh.row_mut(v).iter_mut().zip(dp_h.row(row)) {
                            *x += y;
                        }
                        for (x, y) in dr.row_mut(v).iter_mut().zip(dp_r.row(row)) {
                            *x += y;
                        }
                    }
                }
            }
        }

        let channel_grads = par::map_indexed(self.graphs.len(), |i| {
            let g = &self.graphs[i];
            let mut d_attr: Vec<Matrix> = params.w_attr.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
            let mut d_struc = d_attr.clone();
            backward_channel(&fwd[i].trace_h, &g.adj, &params.w_attr, &d_emb[i].0, &mut d_attr);
            backward_channel(&fwd[i].trace_r, &g.adj, &params.w_struc, &d_emb[i].1, &mut d_struc);
            (d_attr, d_struc)
        });
        for (d_attr, d_struc) in channel_grads {
            for (w, d) in grads.w_attr.iter_mut().zip(&d_attr) {
                w.add_assign(d);
            }
            for (w, d) in grads.w_struc.iter_mut().zip(&d_struc) {
                w.add_assign(d);
            }
        }
        Ok(Evaluation {
            loss: per_graph.iter().sum(),
            per_graph,
            grads: Some(grads),
        })
    }
}

/// Draw `count` (anomaly, normal) pairs uniformly with replacement, or every
/// pair when `count` is 0.
pub fn sample_pairs(normals: &[usize], anomalies: &[usize], count: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    if normals.is_empty() || anomalies.is_empty() {
        return Vec::new();
    }
    if count == 0 {
        return anomalies
            .iter()
            .flat_map(|&a| normals.iter().map(move |&n| (a, n)))
            .collect();
    }
    (0..count)
        .map(|_| (anomalies[rng.below(anomalies.len())], normals[rng.below(normals.len())]))
        .collect()
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(param_count: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) -> Result<()> {
        let g = grads.flatten();
        let mut p = params.flatten();
        if g.len() != self.m.len() || p.len() != g.len() {
            return Err(Error::invalid("optimizer state does not match parameter count"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.assign_flat(&p)
    }
}

fn epoch_pairs(graphs: &[TrainGraph], cfg: &TrainConfig, root: &Rng, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    let stream = root.derive(streams::PAIRS).derive(epoch as u64);
    graphs
        .iter()
        .map(|g| sample_pairs(&g.normals, &g.anomalies, cfg.pairs_per_graph, &mut stream.derive_named(&g.id)))
        .collect()
}

/// Outcome of a training loop.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: EncoderParams,
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
}

/// Run Adam on `objective` for up to `cfg.epochs` epochs. Pair sampling is
/// keyed by `root`.
pub fn optimize(objective: &Objective, init: EncoderParams, cfg: &TrainConfig, root: &Rng) -> Result<TrainRun> {
    cfg.validate_common()?;
    let mut params = init;
    let mut adam = Adam::new(params.param_count(), cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let pairs = epoch_pairs(&objective.graphs, cfg, root, epoch);
        let eval = objective.loss_and_grad(&params, &pairs)?;
        if let Some(i) = eval.per_graph.iter().position(|l| !l.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {} on graph {:?}",
                epoch + 1,
                objective.graphs[i].id
            )));
        }
        let grads = eval.grads.expect("gradient requested");
        if !grads.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at epoch {}", epoch + 1)));
        }
        history.push(eval.loss);
        log::debug!("epoch {} loss {:.6}", epoch + 1, eval.loss);
        adam.step(&mut params, &grads, cfg.lr)?;
        if eval.loss < best {
            best = eval.loss;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            log::info!("stopping after epoch {}: no improvement in {since_best} epochs", epoch + 1);
            break;
        }
    }
    Ok(TrainRun {
        epochs_run: history.len(),
        loss_history: history,
        params,
    })
}

/// Training graphs prepared for fitting: aligned features, adjacency and
/// frozen dictionary indices.
#[derive(Clone, Debug)]
pub struct PreparedTraining {
    pub graphs: Vec<TrainGraph>,
    pub alignment: AlignmentStats,
    /// Per graph, the normal nodes sampled for its dictionary entry.
    pub support: Vec<Vec<usize>>,
}

/// Align labeled graphs and draw each graph's dictionary support.
pub fn prepare_training(graphs: &[GraphDataset], model: &ModelConfig, seed: u64) -> Result<PreparedTraining> {
    model.validate()?;
    if graphs.is_empty() {
        return Err(Error::invalid("no training graphs"));
    }
    let mut names: Vec<&str> = graphs.iter().map(|g| g.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate training graph name {:?}", w[0])));
    }
    let root = Rng::new(seed);
    let (aligned, alignment) = align_collection(
        graphs,
        model.d,
        model.tau,
        model.aggregation,
        &root.derive(streams::ALIGN),
    )?;
    let support_rng = root.derive(streams::SUPPORT);
    let mut train_graphs = Vec::with_capacity(graphs.len());
    let mut support = Vec::with_capacity(graphs.len());
    for (g, a) in graphs.iter().zip(aligned) {
        let labels = g
            .labels()
            .ok_or_else(|| Error::invalid(format!("training graph {:?} has no labels", g.name)))?;
        let adj = build_adjacency(g, model.adjacency);
        support.push(sample_support(
            g.node_count(),
            Some(labels),
            model.n_sup,
            &mut support_rng.derive_named(&g.name),
        )?);
        train_graphs.push(TrainGraph::from_labels(&g.name, a.features, adj, labels)?);
    }
    Ok(PreparedTraining {
        graphs: train_graphs,
        alignment,
        support,
    })
}

/// The objective `fit` optimizes for prepared graphs.
pub fn training_objective(prep: &PreparedTraining, model: &ModelConfig, cfg: &TrainConfig) -> Objective {
    Objective {
        entries: prep
            .support
            .iter()
            .enumerate()
            .map(|(graph, idx)| EntrySpec::Live {
                graph,
                indices: idx.clone(),
            })
            .collect(),
        graphs: prep.graphs.clone(),
        attention: model.attention,
        lambda: cfg.lambda,
        beta: cfg.beta,
    }
}

fn final_dictionary(prep: &PreparedTraining, params: &EncoderParams) -> Result<PatternDictionary> {
    let entries = prep
        .graphs
        .iter()
        .zip(&prep.support)
        .map(|(g, idx)| {
            let emb = encode(&g.features, &g.adj, params)?;
            Ok(entry_from_indices(&g.id, &emb, idx.clone(), PatternSource::TrainNormal))
        })
        .collect::<Result<Vec<_>>>()?;
    PatternDictionary::from_entries(params.emb_dim(), entries)
}

/// Train from scratch on labeled graphs.
pub fn fit(graphs: &[GraphDataset], model: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    model.validate()?;
    let root = Rng::new(cfg.seed);
    let init = init_params_with(model.layers, model.d, model.layout(), &mut root.derive(streams::INIT))?;
    fit_from(graphs, model, cfg, init, 0)
}

/// Keep training existing parameters on a (possibly larger) set of labeled
/// graphs. Alignment statistics and dictionary support are recomputed for
/// the new collection and the optimizer starts fresh.
pub fn continue_fit(ckpt: &Checkpoint, graphs: &[GraphDataset], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut out = fit_from(graphs, &ckpt.model, cfg, ckpt.params.clone(), ckpt.epoch)?;
    let mut history = ckpt.loss_history.clone();
    history.extend(&out.loss_history);
    out.loss_history = history;
    Ok(out)
}

fn fit_from(
    graphs: &[GraphDataset],
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: EncoderParams,
    start_epoch: usize,
) -> Result<Checkpoint> {
    let prep = prepare_training(graphs, model, cfg.seed)?;
    let objective = training_objective(&prep, model, cfg);
    let run = optimize(&objective, init, cfg, &Rng::new(cfg.seed).derive(start_epoch as u64))?;
    let dictionary = final_dictionary(&prep, &run.params)?;
    Ok(Checkpoint {
        model: model.clone(),
        train: cfg.clone(),
        params: run.params,
        alignment: prep.alignment,
        dictionary,
        epoch: start_epoch + run.epochs_run,
        loss_history: run.loss_history,
    })
}

/// Align a graph against a checkpoint and embed it.
pub fn embed_graph(ckpt: &Checkpoint, g: &GraphDataset, include_self: bool) -> Result<(AlignedGraph, Embeddings)> {
    let root = Rng::new(ckpt.train.seed).derive(streams::ALIGN);
    let (aligned, _) = align_new_graph(g, &ckpt.alignment, ckpt.model.d, include_self, &root)?;
    let adj = build_adjacency(g, ckpt.model.adjacency);
    let emb = encode(&aligned.features, &adj, &ckpt.params)?;
    Ok((aligned, emb))
}

/// Few-shot adaptation on a handful of labeled nodes of a test graph.
///
/// A pseudo entry sampled from all of the test graph's nodes is appended to
/// the dictionary. Stored training entries stay fixed; the pseudo entry
/// follows the parameters. Adam starts from fresh moments.
pub fn finetune(ckpt: &Checkpoint, g: &GraphDataset, labeled: &[(usize, u8)], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate_common()?;
    let n = g.node_count();
    let normals: Vec<usize> = labeled.iter().filter(|l| l.1 == 0).map(|l| l.0).collect();
    let anomalies: Vec<usize> = labeled.iter().filter(|l| l.1 != 0).map(|l| l.0).collect();
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::invalid("labeled set needs at least one normal and one anomalous node"));
    }
    check_indices(n, &normals, "labeled")?;
    check_indices(n, &anomalies, "labeled")?;

    let root = Rng::new(cfg.seed).derive(streams::FINETUNE);
    let (aligned, _) = embed_graph(ckpt, g, true)?;
    let adj = build_adjacency(g, ckpt.model.adjacency);
    let support = sample_support(n, None, ckpt.model.n_sup, &mut root.derive_named(&g.name))?;
    let graph = TrainGraph::new(&g.name, aligned.features, adj, normals, anomalies)?;

    let mut entries: Vec<EntrySpec> = ckpt.dictionary.entries().iter().cloned().map(EntrySpec::Frozen).collect();
    entries.push(EntrySpec::Live {
        graph: 0,
        indices: support.clone(),
    });
    let objective = Objective {
        graphs: vec![graph],
        entries,
        attention: ckpt.model.attention,
        lambda: cfg.lambda,
        beta: cfg.beta,
    };
    let run = optimize(&objective, ckpt.params.clone(), cfg, &root)?;
    let g0 = &objective.graphs[0];
    let emb = encode(&g0.features, &g0.adj, &run.params)?;
    let pseudo = entry_from_indices(&g.name, &emb, support, PatternSource::TestPseudo);
    let dictionary = crate::dictionary::merge(&ckpt.dictionary, vec![pseudo])?;
    let mut history = ckpt.loss_history.clone();
    history.extend(&run.loss_history);
    Ok(Checkpoint {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        params: run.params,
        alignment: ckpt.alignment.clone(),
        dictionary,
        epoch: ckpt.epoch + run.epochs_run,
        loss_history: history,
    })
}

/// Analytic vs central-difference gradient comparison for one matrix.
#[derive(Clone, Debug)]
pub struct MatrixGradCheck {
    pub name: String,
    /// `max_i |a_i − n_i| / max_i max(|a_i|, |n_i|)`.
    pub rel_error: f64,
    pub max_abs_grad: f64,
}

/// Compare [`Objective::loss_and_grad`] against central differences with
/// step `h` for every parameter matrix.
pub fn gradient_check(
    objective: &Objective,
    params: &EncoderParams,
    pairs: &[Vec<(usize, usize)>],
    h: f64,
) -> Result<Vec<MatrixGradCheck>> {
    let analytic = objective
        .loss_and_grad(params, pairs)?
        .grads
        .expect("gradient requested")
        .flatten();
    let mut probe = params.clone();
    let numeric = crate::numerics::finite_diff_grad(
        |theta| {
            probe.assign_flat(theta).expect("same length");
            objective.loss(&probe, pairs).map_or(f64::NAN, |e| e.loss)
        },
        &params.flatten(),
        h,
    )?;
    let mut offset = 0;
    let mut out = Vec::new();
    for (name, m) in params.named() {
        let len = m.data().len();
        let a = &analytic[offset..offset + len];
        let n = &numeric[offset..offset + len];
        offset += len;
        let scale = a.iter().chain(n).fold(0.0f64, |s, v| s.max(v.abs()));
        let diff = a.iter().zip(n).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        out.push(MatrixGradCheck {
            name,
            rel_error: if scale == 0.0 { 0.0 } else { diff / scale },
            max_abs_grad: scale,
        });
    }
    Ok(out)
}
