//! Truncated cross-attention onto dictionary patterns and similarity-weighted
//! reconstruction of both embedding channels.
//!
//! For every dictionary entry `j` and channel `E ∈ {H, R}`:
//!
//! ```text
//! logits_j = (E·W_Q)(P_j·W_K)ᵀ / √D          (k smallest per row masked)
//! α_j      = softmax(logits_j / τ_a)
//! Ê        = (1/M) Σ_j sim_j ⊙ (α_j · P_j)
//! ```
//!
//! `sim_j` is the per-node softmax-max similarity computed on the structure
//! channel. The sum over entries is exactly rounded, so the result does not
//! depend on entry order or duplication.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::{similarity_backward, similarity_forward, PatternDictionary, SimilarityTrace};
use crate::encoders::{EncoderParams, Embeddings};
use crate::error::{Error, Result};
use crate::numerics::{exact_sum_with, masked_softmax_row, Matrix};
use crate::{fsio, par};

/// How many of the lowest-scoring patterns each query row drops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truncation {
    /// Absolute count; must be below every entry's pattern count.
    Count(usize),
    /// Fraction of each entry's pattern count, rounded up and capped at
    /// `n_sup − 1`.
    Fraction(f64),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Fraction(0.5)
    }
}

impl Truncation {
    pub fn resolve(&self, n_sup: usize) -> Result<usize> {
        if n_sup == 0 {
            return Err(Error::invalid("cannot attend over an empty pattern set"));
        }
        match *self {
            Truncation::Count(k) if k < n_sup => Ok(k),
            Truncation::Count(k) => Err(Error::invalid(format!(
                "truncation k = {k} must be below the pattern count {n_sup}"
            ))),
            Truncation::Fraction(f) if (0.0..1.0).contains(&f) => {
                Ok(((f * n_sup as f64).ceil() as usize).min(n_sup - 1))
            }
            Truncation::Fraction(f) => Err(Error::invalid(format!("truncation fraction {f} outside [0, 1)"))),
        }
    }
}

/// Which channel(s) drive the per-entry similarity weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityChannel {
    /// Structure-channel similarity weights both reconstructions.
    #[default]
    Structure,
    /// Each channel is weighted by its own similarity.
    PerChannel,
}

impl std::str::FromStr for SimilarityChannel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" => Ok(Self::Structure),
            "per_channel" => Ok(Self::PerChannel),
            other => Err(Error::Config(format!("unknown similarity channel {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub truncation: Truncation,
    /// Softmax temperature τ_a.
    pub tau_a: f64,
    /// Apply `sign(x)·√|x|` to the scaled logits.
    pub signed_sqrt: bool,
    pub similarity: SimilarityChannel,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            truncation: Truncation::default(),
            tau_a: 0.001,
            signed_sqrt: false,
            similarity: SimilarityChannel::Structure,
        }
    }
}

/// Reconstructed embeddings plus the per-entry weights that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub h_hat: Matrix,
    pub r_hat: Matrix,
    /// Attribute-channel attention, one n × n_sup map per entry.
    pub attention_h: Vec<Matrix>,
    /// Structure-channel attention, one n × n_sup map per entry.
    pub attention_r: Vec<Matrix>,
    /// Similarity weight per entry per node (structure channel).
    pub similarity: Vec<Vec<f64>>,
    /// Attribute-channel similarity, per-channel mode only.
    pub similarity_h: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
struct AttentionTrace {
    /// Scaled logits before the optional signed square root.
    scaled: Matrix,
    weights: Matrix,
}

/// Per-row indices of the `k` smallest values; ties mask the lower index first.
fn truncation_mask(row: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; row.len()];
    if k == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    for &i in &order[..k] {
        mask[i] = true;
    }
    mask
}

fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

fn attention_forward(q_proj: &Matrix, k_proj: &Matrix, k: usize, cfg: &AttentionConfig) -> AttentionTrace {
    let inv_sqrt_d = 1.0 / (q_proj.cols() as f64).sqrt();
    let scaled = q_proj.matmul_nt(k_proj).map(|v| v * inv_sqrt_d);
    let logits = if cfg.signed_sqrt {
        scaled.map(signed_sqrt)
    } else {
        scaled.clone()
    };
    let mut weights = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let mask = truncation_mask(logits.row(r), k);
        masked_softmax_row(logits.row(r), &mask, cfg.tau_a, weights.row_mut(r))
            .expect("k < n_sup leaves an unmasked entry");
    }
    AttentionTrace { scaled, weights }
}

/// Gradient w.r.t. the unscaled `Q·Kᵀ` product given the gradient of the
/// attention weights.
fn attention_backward(trace: &AttentionTrace, d_weights: &Matrix, cfg: &AttentionConfig) -> Matrix {
    let (n, s) = trace.weights.shape();
    let mut d_logits = Matrix::zeros(n, s);
    for v in 0..n {
        let a = trace.weights.row(v);
        let da = d_weights.row(v);
        let inner: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        let out = d_logits.row_mut(v);
        for c in 0..s {
            out[c] = a[c] * (da[c] - inner) / cfg.tau_a;
        }
    }
    if cfg.signed_sqrt {
        for (g, x) in d_logits.data_mut().iter_mut().zip(trace.scaled.data()) {
            *g = if *x == 0.0 { 0.0 } else { *g / (2.0 * x.abs().sqrt()) };
        }
    }
    d_logits
}

/// Truncated attention of `query` rows onto `patterns`.
pub fn truncated_attention(
    query: &Matrix,
    patterns: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    let e = query.cols();
    if patterns.cols() != e || wq.shape() != (e, e) || wk.shape() != (e, e) {
        return Err(Error::invalid("attention shape mismatch"));
    }
    if !(cfg.tau_a > 0.0) {
        return Err(Error::invalid("tau_a must be > 0"));
    }
    let k = cfg.truncation.resolve(patterns.rows())?;
    Ok(attention_forward(&query.matmul(wq), &patterns.matmul(wk), k, cfg).weights)
}

/// `(1/M) Σ_j sim_j ⊙ (α_j · P_j)` with exactly rounded sums over entries.
pub fn combine_reconstruction(sims: &[&[f64]], attentions: &[&Matrix], patterns: &[&Matrix]) -> Matrix {
    let terms: Vec<Matrix> = attentions.iter().zip(patterns).map(|(a, p)| a.matmul(p)).collect();
    combine_terms(sims, &terms)
}

fn combine_terms(sims: &[&[f64]], terms: &[Matrix]) -> Matrix {
    let m = terms.len();
    let (n, e) = terms[0].shape();
    let mut out = Matrix::zeros(n, e);
    let inv_m = m as f64;
    par::for_each_row(out.data_mut(), e, e * m * 4, |v, row| {
        let mut buf = vec![0.0; m];
        let mut scratch = Vec::with_capacity(m);
        for (c, o) in row.iter_mut().enumerate() {
            for j in 0..m {
                buf[j] = sims[j][v] * terms[j].get(v, c);
            }
            *o = exact_sum_with(&buf, &mut scratch) / inv_m;
        }
    });
    out
}

/// Borrowed pattern matrices of one dictionary entry.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PatternRef<'a> {
    pub h: &'a Matrix,
    pub r: &'a Matrix,
}

struct EntryTrace {
    k_h: Matrix,
    k_r: Matrix,
    sim_r: SimilarityTrace,
    sim_h: Option<SimilarityTrace>,
    att_h: AttentionTrace,
    att_r: AttentionTrace,
    term_h: Matrix,
    term_r: Matrix,
}

/// Forward intermediates needed to differentiate a reconstruction.
pub(crate) struct ReconTrace {
    q_h: Matrix,
    q_r: Matrix,
    rw: Matrix,
    hw: Option<Matrix>,
    entries: Vec<EntryTrace>,
}

/// Gradients flowing out of a reconstruction.
pub(crate) struct ReconGrads {
    pub d_query_h: Matrix,
    pub d_query_r: Matrix,
    /// Per entry: gradients w.r.t. its attribute and structure patterns.
    pub d_patterns: Vec<(Matrix, Matrix)>,
}

fn check_shapes(query: &Embeddings, entries: &[PatternRef<'_>], params: &EncoderParams) -> Result<()> {
    let e = params.emb_dim();
    if query.h.cols() != e || query.r.cols() != e || query.r.rows() != query.h.rows() {
        return Err(Error::invalid(format!("query embeddings must have {e} columns")));
    }
    if entries.is_empty() {
        return Err(Error::invalid("dictionary is empty"));
    }
    for p in entries {
        if p.h.cols() != e || p.r.cols() != e || p.h.rows() != p.r.rows() {
            return Err(Error::invalid(format!("pattern width must be {e}")));
        }
    }
    Ok(())
}

pub(crate) fn forward(
    query: &Embeddings,
    entries: &[PatternRef<'_>],
    params: &EncoderParams,
    cfg: &AttentionConfig,
) -> Result<(Reconstruction, ReconTrace)> {
    check_shapes(query, entries, params)?;
    if !(cfg.tau_a > 0.0) {
        return Err(Error::invalid("tau_a must be > 0"));
    }
    let per_channel = cfg.similarity == SimilarityChannel::PerChannel;
    if per_channel && params.w_sim_attr.is_none() {
        return Err(Error::invalid("per-channel similarity needs an attribute similarity matrix"));
    }
    let ks = entries
        .iter()
        .map(|p| cfg.truncation.resolve(p.h.rows()))
        .collect::<Result<Vec<_>>>()?;
    let (wq_r, wk_r) = params.query_key_r();
    let q_h = query.h.matmul(&params.wq_h);
    let q_r = query.r.matmul(wq_r);
    let rw = query.r.matmul(&params.w_sim);
    let hw = if per_channel {
        params.w_sim_attr.as_ref().map(|w| query.h.matmul(w))
    } else {
        None
    };

    let traces: Vec<EntryTrace> = par::map_indexed(entries.len(), |j| {
        let p = entries[j];
        let k_h = p.h.matmul(&params.wk_h);
        let k_r = p.r.matmul(wk_r);
        let sim_r = similarity_forward(&rw, p.r);
        let sim_h = hw.as_ref().map(|hw| similarity_forward(hw, p.h));
        let att_h = attention_forward(&q_h, &k_h, ks[j], cfg);
        let att_r = attention_forward(&q_r, &k_r, ks[j], cfg);
        let term_h = att_h.weights.matmul(p.h);
        let term_r = att_r.weights.matmul(p.r);
        EntryTrace {
            k_h,
            k_r,
            sim_r,
            sim_h,
            att_h,
            att_r,
            term_h,
            term_r,
        }
    });

    let sims_r: Vec<&[f64]> = traces.iter().map(|t| t.sim_r.values.as_slice()).collect();
    let sims_h: Vec<&[f64]> = traces
        .iter()
        .map(|t| t.sim_h.as_ref().unwrap_or(&t.sim_r).values.as_slice())
        .collect();
    let terms_h: Vec<Matrix> = traces.iter().map(|t| t.term_h.clone()).collect();
    let terms_r: Vec<Matrix> = traces.iter().map(|t| t.term_r.clone()).collect();
    let h_hat = combine_terms(&sims_h, &terms_h);
    let r_hat = combine_terms(&sims_r, &terms_r);

    let rec = Reconstruction {
        h_hat,
        r_hat,
        attention_h: traces.iter().map(|t| t.att_h.weights.clone()).collect(),
        attention_r: traces.iter().map(|t| t.att_r.weights.clone()).collect(),
        similarity: traces.iter().map(|t| t.sim_r.values.clone()).collect(),
        similarity_h: per_channel.then(|| traces.iter().map(|t| t.sim_h.as_ref().unwrap().values.clone()).collect()),
    };
    Ok((
        rec,
        ReconTrace {
            q_h,
            q_r,
            rw,
            hw,
            entries: traces,
        },
    ))
}

struct EntryGrads {
    d_q_h: Matrix,
    d_q_r: Matrix,
    d_rw: Matrix,
    d_hw: Option<Matrix>,
    d_wk_h: Matrix,
    d_wk_r: Matrix,
    d_p_h: Matrix,
    d_p_r: Matrix,
}

fn scale_rows(m: &Matrix, s: &[f64], factor: f64) -> Matrix {
    let mut out = m.clone();
    for v in 0..out.rows() {
        let k = s[v] * factor;
        out.row_mut(v).iter_mut().for_each(|x| *x *= k);
    }
    out
}

fn row_dots(a: &Matrix, b: &Matrix, factor: f64) -> Vec<f64> {
    (0..a.rows())
        .map(|v| crate::numerics::dot(a.row(v), b.row(v)) * factor)
        .collect()
}

/// Backpropagate `d_h_hat`, `d_r_hat` through a traced reconstruction.
/// Parameter gradients are added to `grads`.
pub(crate) fn backward(
    trace: &ReconTrace,
    query: &Embeddings,
    entries: &[PatternRef<'_>],
    params: &EncoderParams,
    cfg: &AttentionConfig,
    d_h_hat: &Matrix,
    d_r_hat: &Matrix,
    grads: &mut EncoderParams,
) -> ReconGrads {
    let m = entries.len();
    let inv_m = 1.0 / m as f64;
    let inv_sqrt_d = 1.0 / (params.emb_dim() as f64).sqrt();
    let (wq_r, wk_r) = params.query_key_r();

    let per_entry: Vec<EntryGrads> = par::map_indexed(m, |j| {
        let t = &trace.entries[j];
        let p = entries[j];
        let sim_h = t.sim_h.as_ref().unwrap_or(&t.sim_r);

        // Ê = (1/M) Σ sim ⊙ term
        let d_term_h = scale_rows(d_h_hat, &sim_h.values, inv_m);
        let d_term_r = scale_rows(d_r_hat, &t.sim_r.values, inv_m);
        let d_sim_h = row_dots(d_h_hat, &t.term_h, inv_m);
        let mut d_sim_r = row_dots(d_r_hat, &t.term_r, inv_m);

        // term = α · P
        let mut d_p_h = t.att_h.weights.matmul_tn(&d_term_h);
        let mut d_p_r = t.att_r.weights.matmul_tn(&d_term_r);
        let d_att_h = d_term_h.matmul_nt(p.h);
        let d_att_r = d_term_r.matmul_nt(p.r);

        // α = softmax(Q Kᵀ / √D)
        let g_h = attention_backward(&t.att_h, &d_att_h, cfg);
        let g_r = attention_backward(&t.att_r, &d_att_r, cfg);
        let d_q_h = g_h.matmul(&t.k_h).scale(inv_sqrt_d);
        let d_q_r = g_r.matmul(&t.k_r).scale(inv_sqrt_d);
        let d_k_h = g_h.matmul_tn(&trace.q_h).scale(inv_sqrt_d);
        let d_k_r = g_r.matmul_tn(&trace.q_r).scale(inv_sqrt_d);
        d_p_h.add_assign(&d_k_h.matmul_nt(&params.wk_h));
        d_p_r.add_assign(&d_k_r.matmul_nt(wk_r));
        let d_wk_h = p.h.matmul_tn(&d_k_h);
        let d_wk_r = p.r.matmul_tn(&d_k_r);

        // sim = max softmax(E W1 Pᵀ)
        let d_hw = match (&t.sim_h, &trace.hw) {
            (Some(sh), Some(hw)) => {
                let dl = similarity_backward(sh, &d_sim_h);
                d_p_h.add_assign(&dl.matmul_tn(hw));
                Some(dl.matmul(p.h))
            }
            _ => {
                for (a, b) in d_sim_r.iter_mut().zip(&d_sim_h) {
                    *a += b;
                }
                None
            }
        };
        let dl_r = similarity_backward(&t.sim_r, &d_sim_r);
        d_p_r.add_assign(&dl_r.matmul_tn(&trace.rw));
        let d_rw = dl_r.matmul(p.r);

        EntryGrads {
            d_q_h,
            d_q_r,
            d_rw,
            d_hw,
            d_wk_h,
            d_wk_r,
            d_p_h,
            d_p_r,
        }
    });

    let e = params.emb_dim();
    let n = query.h.rows();
    let mut d_q_h = Matrix::zeros(n, e);
    let mut d_q_r = Matrix::zeros(n, e);
    let mut d_rw = Matrix::zeros(n, e);
    let mut d_hw = trace.hw.as_ref().map(|_| Matrix::zeros(n, e));
    let mut d_patterns = Vec::with_capacity(m);
    for g in per_entry {
        d_q_h.add_assign(&g.d_q_h);
        d_q_r.add_assign(&g.d_q_r);
        d_rw.add_assign(&g.d_rw);
        if let (Some(acc), Some(x)) = (&mut d_hw, &g.d_hw) {
            acc.add_assign(x);
        }
        grads.wk_h.add_assign(&g.d_wk_h);
        match &mut grads.wk_r {
            Some(w) => w.add_assign(&g.d_wk_r),
            None => grads.wk_h.add_assign(&g.d_wk_r),
        }
        d_patterns.push((g.d_p_h, g.d_p_r));
    }

    let mut d_query_h = d_q_h.matmul_nt(&params.wq_h);
    grads.wq_h.add_assign(&query.h.matmul_tn(&d_q_h));
    let mut d_query_r = d_q_r.matmul_nt(wq_r);
    let g_wq_r = query.r.matmul_tn(&d_q_r);
    match &mut grads.wq_r {
        Some(w) => w.add_assign(&g_wq_r),
        None => grads.wq_h.add_assign(&g_wq_r),
    }
    d_query_r.add_assign(&d_rw.matmul_nt(&params.w_sim));
    grads.w_sim.add_assign(&query.r.matmul_tn(&d_rw));
    if let (Some(dhw), Some(w), Some(gw)) = (&d_hw, &params.w_sim_attr, &mut grads.w_sim_attr) {
        d_query_h.add_assign(&dhw.matmul_nt(w));
        gw.add_assign(&query.h.matmul_tn(dhw));
    }
    ReconGrads {
        d_query_h,
        d_query_r,
        d_patterns,
    }
}

/// Reconstruct a graph's embeddings from every dictionary entry.
pub fn reconstruct(
    emb: &Embeddings,
    dict: &PatternDictionary,
    params: &EncoderParams,
    cfg: &AttentionConfig,
) -> Result<Reconstruction> {
    if dict.is_empty() {
        return Err(Error::invalid("dictionary is empty"));
    }
    if dict.emb_dim() != params.emb_dim() {
        return Err(Error::invalid(format!(
            "dictionary width {} does not match model width {}",
            dict.emb_dim(),
            params.emb_dim()
        )));
    }
    let entries: Vec<PatternRef<'_>> = dict
        .entries()
        .iter()
        .map(|e| PatternRef {
            h: &e.patterns_h,
            r: &e.patterns_r,
        })
        .collect();
    Ok(forward(emb, &entries, params, cfg)?.0)
}

/// Write per-node attention maps as CSV: rows are dictionary entries in
/// order, columns are patterns. Files are `node_<id>_attr.csv` and
/// `node_<id>_struc.csv` under `dir`.
pub fn export_attention_maps(rec: &Reconstruction, node_ids: &[usize], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let n = rec.h_hat.rows();
    let mut written = Vec::new();
    for &node in node_ids {
        if node >= n {
            return Err(Error::invalid(format!("node {node} out of range for {n} nodes")));
        }
        for (suffix, maps) in [("attr", &rec.attention_h), ("struc", &rec.attention_r)] {
            let mut s = String::new();
            for m in maps {
                let cells: Vec<String> = m.row(node).iter().map(|v| format!("{v}")).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            let path = dir.join(format!("node_{node}_{suffix}.csv"));
            fsio::atomic_write(&path, s.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
