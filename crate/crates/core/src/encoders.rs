//! Attribute- and structure-channel GCN encoders.
//!
//! Both channels run `L` propagation layers `H_t = ReLU(Â H_{t-1} W_t)` and
//! emit the residual blocks `[H_2 − H_1, …, H_L − H_1]`, so the embedding
//! width is `(L − 1)·d`. The attribute channel starts from the aligned
//! features, the structure channel from an all-ones matrix.

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{Matrix, Rng};

/// Optional parameter-sharing choices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    /// Allocate a second similarity matrix for the attribute channel.
    pub per_channel_similarity: bool,
    /// Share one query/key pair between both channels.
    pub tie_qk: bool,
}

/// Every learnable matrix of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: usize,
    pub width: usize,
    pub w_attr: Vec<Matrix>,
    pub w_struc: Vec<Matrix>,
    /// Similarity weight on the structure channel.
    pub w_sim: Matrix,
    /// Similarity weight on the attribute channel (per-channel mode only).
    pub w_sim_attr: Option<Matrix>,
    pub wq_h: Matrix,
    pub wk_h: Matrix,
    /// Structure-channel query/key; `None` when tied to the attribute pair.
    pub wq_r: Option<Matrix>,
    pub wk_r: Option<Matrix>,
}

/// Node embeddings of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// Attribute channel, n × (L−1)d.
    pub h: Matrix,
    /// Structure channel, n × (L−1)d.
    pub r: Matrix,
}

impl Embeddings {
    pub fn node_count(&self) -> usize {
        self.h.rows()
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-limit, limit))
}

/// Glorot-uniform initialization with the default layout.
pub fn init_params(layers: usize, width: usize, rng: &mut Rng) -> Result<EncoderParams> {
    init_params_with(layers, width, ParamLayout::default(), rng)
}

pub fn init_params_with(layers: usize, width: usize, layout: ParamLayout, rng: &mut Rng) -> Result<EncoderParams> {
    if layers < 2 {
        return Err(Error::invalid(format!("need at least 2 layers, got {layers}")));
    }
    if width == 0 {
        return Err(Error::invalid("layer width must be >= 1"));
    }
    let emb = (layers - 1) * width;
    let w_attr = (0..layers).map(|_| glorot(width, width, rng)).collect();
    let w_struc = (0..layers).map(|_| glorot(width, width, rng)).collect();
    let w_sim = glorot(emb, emb, rng);
    let w_sim_attr = layout.per_channel_similarity.then(|| glorot(emb, emb, rng));
    let wq_h = glorot(emb, emb, rng);
    let wk_h = glorot(emb, emb, rng);
    let (wq_r, wk_r) = if layout.tie_qk {
        (None, None)
    } else {
        (Some(glorot(emb, emb, rng)), Some(glorot(emb, emb, rng)))
    };
    Ok(EncoderParams {
        layers,
        width,
        w_attr,
        w_struc,
        w_sim,
        w_sim_attr,
        wq_h,
        wk_h,
        wq_r,
        wk_r,
    })
}

impl EncoderParams {
    pub fn emb_dim(&self) -> usize {
        (self.layers - 1) * self.width
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            per_channel_similarity: self.w_sim_attr.is_some(),
            tie_qk: self.wq_r.is_none(),
        }
    }

    pub fn query_key_r(&self) -> (&Matrix, &Matrix) {
        match (&self.wq_r, &self.wk_r) {
            (Some(q), Some(k)) => (q, k),
            _ => (&self.wq_h, &self.wk_h),
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> EncoderParams {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        EncoderParams {
            layers: self.layers,
            width: self.width,
            w_attr: self.w_attr.iter().map(z).collect(),
            w_struc: self.w_struc.iter().map(z).collect(),
            w_sim: z(&self.w_sim),
            w_sim_attr: self.w_sim_attr.as_ref().map(z),
            wq_h: z(&self.wq_h),
            wk_h: z(&self.wk_h),
            wq_r: self.wq_r.as_ref().map(z),
            wk_r: self.wk_r.as_ref().map(z),
        }
    }

    /// Named matrices in a fixed canonical order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, w) in self.w_attr.iter().enumerate() {
            out.push((format!("w_attr.{i}"), w));
        }
        for (i, w) in self.w_struc.iter().enumerate() {
            out.push((format!("w_struc.{i}"), w));
        }
        out.push(("w_sim".into(), &self.w_sim));
        if let Some(w) = &self.w_sim_attr {
            out.push(("w_sim_attr".into(), w));
        }
        out.push(("wq_h".into(), &self.wq_h));
        out.push(("wk_h".into(), &self.wk_h));
        if let Some(w) = &self.wq_r {
            out.push(("wq_r".into(), w));
        }
        if let Some(w) = &self.wk_r {
            out.push(("wk_r".into(), w));
        }
        out
    }

    /// Mutable matrices in the same order as [`named`](Self::named).
    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.w_attr.iter_mut());
        out.extend(self.w_struc.iter_mut());
        out.push(&mut self.w_sim);
        if let Some(w) = &mut self.w_sim_attr {
            out.push(w);
        }
        out.push(&mut self.wq_h);
        out.push(&mut self.wk_h);
        if let Some(w) = &mut self.wq_r {
            out.push(w);
        }
        if let Some(w) = &mut self.wk_r {
            out.push(w);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for (_, m) in self.named() {
            v.extend_from_slice(m.data());
        }
        v
    }

    /// Overwrite all values from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid("flat parameter length mismatch"));
        }
        let mut offset = 0;
        for m in self.matrices_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += alpha · other` matrix by matrix.
    pub fn axpy(&mut self, alpha: f64, other: &EncoderParams) {
        let others: Vec<&Matrix> = other.named().into_iter().map(|(_, m)| m).collect();
        for (m, o) in self.matrices_mut().into_iter().zip(others) {
            m.axpy(alpha, o);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.width;
        let e = self.emb_dim();
        let layer_ok = |ws: &[Matrix]| ws.len() == self.layers && ws.iter().all(|w| w.shape() == (d, d));
        if !layer_ok(&self.w_attr) || !layer_ok(&self.w_struc) {
            return Err(Error::invalid("layer weight shapes inconsistent with layers/width"));
        }
        for (name, m) in self.named() {
            if !name.starts_with("w_attr") && !name.starts_with("w_struc") && m.shape() != (e, e) {
                return Err(Error::invalid(format!("{name} must be {e}x{e}")));
            }
        }
        Ok(())
    }
}

/// Intermediate values of one channel kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ChannelTrace {
    /// `Â H_{t−1}` for t = 1..L.
    propagated: Vec<Matrix>,
    /// `H_t` for t = 1..L (post-ReLU).
    hidden: Vec<Matrix>,
}

pub(crate) fn forward_channel(
    input: &Matrix,
    adj: &NormalizedAdjacency,
    weights: &[Matrix],
) -> (Matrix, ChannelTrace) {
    let mut propagated = Vec::with_capacity(weights.len());
    let mut hidden: Vec<Matrix> = Vec::with_capacity(weights.len());
    for w in weights {
        let prev = hidden.last().unwrap_or(input);
        let p = adj.propagate(prev);
        let h = p.matmul(w).map(|v| v.max(0.0));
        propagated.push(p);
        hidden.push(h);
    }
    let first = &hidden[0];
    let blocks: Vec<Matrix> = hidden[1..].iter().map(|h| h.sub(first)).collect();
    (Matrix::hconcat(&blocks), ChannelTrace { propagated, hidden })
}

/// Accumulate weight gradients given the gradient of the channel output.
pub(crate) fn backward_channel(
    trace: &ChannelTrace,
    adj: &NormalizedAdjacency,
    weights: &[Matrix],
    d_out: &Matrix,
    d_weights: &mut [Matrix],
) {
    let layers = weights.len();
    let width = weights[0].cols();
    let mut d_hidden: Vec<Matrix> = trace.hidden.iter().map(|h| Matrix::zeros(h.rows(), h.cols())).collect();
    for t in 1..layers {
        let block = d_out.column_block((t - 1) * width, width);
        d_hidden[t].add_assign(&block);
        d_hidden[0].axpy(-1.0, &block);
    }
    for t in (0..layers).rev() {
        let mut dz = d_hidden[t].clone();
        for (g, h) in dz.data_mut().iter_mut().zip(trace.hidden[t].data()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        d_weights[t].add_assign(&trace.propagated[t].matmul_tn(&dz));
        if t > 0 {
            // Â is symmetric, so Âᵀ·G = Â·G.
            let back = adj.propagate(&dz.matmul_nt(&weights[t]));
            d_hidden[t - 1].add_assign(&back);
        }
    }
}

fn check_inputs(n: usize, cols: Option<usize>, adj: &NormalizedAdjacency, params: &EncoderParams) -> Result<()> {
    params.check()?;
    if adj.node_count() != n {
        return Err(Error::invalid(format!(
            "adjacency has {} nodes, input has {n}",
            adj.node_count()
        )));
    }
    if let Some(c) = cols {
        if c != params.width {
            return Err(Error::invalid(format!(
                "feature width {c} does not match layer width {}",
                params.width
            )));
        }
    }
    Ok(())
}

/// Attribute-channel embedding of aligned features.
pub fn encode_attribute(x: &Matrix, adj: &NormalizedAdjacency, params: &EncoderParams) -> Result<Matrix> {
    check_inputs(x.rows(), Some(x.cols()), adj, params)?;
    Ok(forward_channel(x, adj, &params.w_attr).0)
}

/// Structure-channel embedding from an all-ones input.
pub fn encode_structure(n: usize, adj: &NormalizedAdjacency, params: &EncoderParams) -> Result<Matrix> {
    check_inputs(n, None, adj, params)?;
    let ones = Matrix::filled(n, params.width, 1.0);
    Ok(forward_channel(&ones, adj, &params.w_struc).0)
}

/// Both channels.
pub fn encode(x: &Matrix, adj: &NormalizedAdjacency, params: &EncoderParams) -> Result<Embeddings> {
    Ok(Embeddings {
        h: encode_attribute(x, adj, params)?,
        r: encode_structure(x.rows(), adj, params)?,
    })
}
