//! Persistent multi-graph pattern dictionary.
//!
//! Each entry stores the attribute- and structure-channel embeddings of a
//! sampled set of presumed-normal nodes from one graph. Entries are appended
//! without touching model parameters, which is how new graphs are folded in
//! after training.
//!
//! File layout (little-endian): magic `OWLD`, u32 version, u32 emb_dim,
//! u32 entry_count, then per entry: u16 id length, id bytes (UTF-8), u8 source
//! code, u32 n_sup, n_sup × u32 node indices, then the attribute and
//! structure pattern blocks as row-major f64.

use std::path::Path;

use crate::encoders::Embeddings;
use crate::error::{Error, Result};
use crate::fsio::{self, ByteReader};
use crate::numerics::{Matrix, Rng};

pub const DICT_MAGIC: &[u8; 4] = b"OWLD";
pub const DICT_VERSION: u32 = 1;
/// Bytes before the first entry.
pub const DICT_HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternSource {
    TrainNormal,
    TestPseudo,
    AuxNormal,
}

impl PatternSource {
    fn code(self) -> u8 {
        match self {
            Self::TrainNormal => 0,
            Self::TestPseudo => 1,
            Self::AuxNormal => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::TrainNormal),
            1 => Some(Self::TestPseudo),
            2 => Some(Self::AuxNormal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrainNormal => "train_normal",
            Self::TestPseudo => "test_pseudo",
            Self::AuxNormal => "aux_normal",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictEntry {
    pub graph_id: String,
    pub source: PatternSource,
    /// Sampled node indices, unique, in draw order.
    pub indices: Vec<usize>,
    pub patterns_h: Matrix,
    pub patterns_r: Matrix,
}

impl DictEntry {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn emb_dim(&self) -> usize {
        self.patterns_h.cols()
    }

    pub fn with_source(mut self, source: PatternSource) -> Self {
        self.source = source;
        self
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        2 + self.graph_id.len() + 1 + 4 + 4 * self.len() + 2 * self.len() * self.emb_dim() * 8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternDictionary {
    emb_dim: usize,
    entries: Vec<DictEntry>,
}

impl PatternDictionary {
    pub fn new(emb_dim: usize) -> Self {
        Self {
            emb_dim,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(emb_dim: usize, entries: Vec<DictEntry>) -> Result<Self> {
        merge(&Self::new(emb_dim), entries)
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> u32 {
        DICT_VERSION
    }
}

/// Candidate nodes for sampling: label-0 nodes when labels exist, else all.
pub fn support_candidates(n: usize, labels: Option<&[u8]>) -> Vec<usize> {
    match labels {
        Some(l) => (0..n).filter(|&i| l[i] == 0).collect(),
        None => (0..n).collect(),
    }
}

/// Draw up to `n_sup` distinct support nodes.
pub fn sample_support(n: usize, labels: Option<&[u8]>, n_sup: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::invalid("label length does not match node count"));
        }
    }
    let candidates = support_candidates(n, labels);
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate nodes to sample patterns from"));
    }
    if n_sup == 0 {
        return Err(Error::invalid("n_sup must be >= 1"));
    }
    Ok(rng.choose_distinct(&candidates, n_sup))
}

/// Sample a pattern entry from a graph's embeddings.
///
/// With labels, only label-0 nodes are eligible and the entry is tagged as
/// training normals; without labels every node is eligible (pseudo-support).
pub fn extract_patterns(
    graph_id: &str,
    emb: &Embeddings,
    labels: Option<&[u8]>,
    n_sup: usize,
    rng: &mut Rng,
) -> Result<DictEntry> {
    let indices = sample_support(emb.node_count(), labels, n_sup, rng)?;
    Ok(entry_from_indices(
        graph_id,
        emb,
        indices,
        if labels.is_some() {
            PatternSource::TrainNormal
        } else {
            PatternSource::TestPseudo
        },
    ))
}

pub fn entry_from_indices(graph_id: &str, emb: &Embeddings, indices: Vec<usize>, source: PatternSource) -> DictEntry {
    DictEntry {
        graph_id: graph_id.to_string(),
        source,
        patterns_h: emb.h.select_rows(&indices),
        patterns_r: emb.r.select_rows(&indices),
        indices,
    }
}

/// Per-node softmax-max similarity between query rows and one pattern set.
#[derive(Clone, Debug)]
pub(crate) struct SimilarityTrace {
    /// Row-softmax over patterns, n × n_sup.
    pub probs: Matrix,
    /// Column of the per-row maximum (first on ties).
    pub argmax: Vec<usize>,
    /// Per-node similarity value.
    pub values: Vec<f64>,
}

/// `max_c softmax_c(query_w · patternsᵀ)` for every query row, where
/// `query_w = query · W1` has been precomputed.
pub(crate) fn similarity_forward(query_w: &Matrix, patterns: &Matrix) -> SimilarityTrace {
    let logits = query_w.matmul_nt(patterns);
    let s = logits.cols();
    let mut probs = Matrix::zeros(logits.rows(), s);
    let mut argmax = Vec::with_capacity(logits.rows());
    let mut values = Vec::with_capacity(logits.rows());
    let no_mask = vec![false; s];
    for r in 0..logits.rows() {
        let row = probs.row_mut(r);
        crate::numerics::masked_softmax_row(logits.row(r), &no_mask, 1.0, row)
            .expect("unmasked row with at least one pattern");
        let mut best = 0;
        for c in 1..s {
            if row[c] > row[best] {
                best = c;
            }
        }
        argmax.push(best);
        values.push(row[best]);
    }
    SimilarityTrace { probs, argmax, values }
}

/// Gradient of the pre-softmax logits given `d_values` (one per node).
pub(crate) fn similarity_backward(trace: &SimilarityTrace, d_values: &[f64]) -> Matrix {
    let (n, s) = trace.probs.shape();
    let mut d_logits = Matrix::zeros(n, s);
    for v in 0..n {
        let g = d_values[v];
        if g == 0.0 {
            continue;
        }
        let a = trace.argmax[v];
        let pa = trace.probs.get(v, a);
        let row = d_logits.row_mut(v);
        for (c, out) in row.iter_mut().enumerate() {
            let pc = trace.probs.get(v, c);
            let delta = if c == a { 1.0 } else { 0.0 };
            *out = pc * (delta - pa) * g;
        }
    }
    d_logits
}

/// Similarity weights broadcast to `emb_dim` columns.
pub fn similarity(query_r: &Matrix, patterns_r: &Matrix, w1: &Matrix) -> Result<Matrix> {
    if patterns_r.rows() == 0 {
        return Err(Error::invalid("pattern set is empty"));
    }
    let e = query_r.cols();
    if patterns_r.cols() != e || w1.shape() != (e, e) {
        return Err(Error::invalid("similarity shape mismatch"));
    }
    let trace = similarity_forward(&query_r.matmul(w1), patterns_r);
    Ok(Matrix::from_fn(query_r.rows(), e, |r, _| trace.values[r]))
}

/// Append entries; existing entries are untouched.
pub fn merge(dict: &PatternDictionary, new_entries: Vec<DictEntry>) -> Result<PatternDictionary> {
    for e in &new_entries {
        if e.patterns_h.cols() != dict.emb_dim || e.patterns_r.cols() != dict.emb_dim {
            return Err(Error::invalid(format!(
                "entry {:?} has width {}, dictionary expects {}",
                e.graph_id,
                e.patterns_h.cols(),
                dict.emb_dim
            )));
        }
        if e.patterns_h.rows() != e.len() || e.patterns_r.rows() != e.len() {
            return Err(Error::invalid(format!("entry {:?} has inconsistent row counts", e.graph_id)));
        }
        let mut sorted = e.indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("entry {:?} has duplicate indices", e.graph_id)));
        }
    }
    let mut out = dict.clone();
    out.entries.extend(new_entries);
    Ok(out)
}

pub fn encode_dictionary(dict: &PatternDictionary) -> Result<Vec<u8>> {
    let body: usize = dict.entries.iter().map(DictEntry::encoded_len).sum();
    let mut out = Vec::with_capacity(DICT_HEADER_LEN + body);
    out.extend_from_slice(DICT_MAGIC);
    fsio::put_u32(&mut out, DICT_VERSION);
    fsio::put_u32(&mut out, fsio::to_u32(dict.emb_dim, "emb_dim")?);
    fsio::put_u32(&mut out, fsio::to_u32(dict.entries.len(), "entry count")?);
    for e in &dict.entries {
        let id = e.graph_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::invalid("graph id longer than 65535 bytes"))?;
        fsio::put_u16(&mut out, id_len);
        out.extend_from_slice(id);
        out.push(e.source.code());
        fsio::put_u32(&mut out, fsio::to_u32(e.len(), "n_sup")?);
        for &i in &e.indices {
            fsio::put_u32(&mut out, fsio::to_u32(i, "node index")?);
        }
        fsio::put_f64s(&mut out, e.patterns_h.data());
        fsio::put_f64s(&mut out, e.patterns_r.data());
    }
    Ok(out)
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<PatternDictionary> {
    let mut r = ByteReader::new(bytes, "dictionary");
    let dict = read_dictionary(&mut r)?;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Ok(dict)
}

pub(crate) fn read_dictionary(r: &mut ByteReader<'_>) -> Result<PatternDictionary> {
    r.expect_magic(DICT_MAGIC)?;
    let version = r.u32()?;
    if version != DICT_VERSION {
        return r.fail(format!("unsupported dictionary version {version}"));
    }
    let emb_dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id_start = r.offset();
        let graph_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::format_at_offset("dictionary", id_start, "graph id is not UTF-8"))?;
        let code_at = r.offset();
        let source = PatternSource::from_code(r.u8()?)
            .ok_or_else(|| Error::format_at_offset("dictionary", code_at, "unknown source code"))?;
        let n_sup = r.u32()? as usize;
        let mut indices = Vec::with_capacity(n_sup.min(1 << 20));
        for _ in 0..n_sup {
            indices.push(r.u32()? as usize);
        }
        let block = n_sup
            .checked_mul(emb_dim)
            .ok_or_else(|| Error::format_at_offset("dictionary", r.offset(), "block size overflow"))?;
        let h = Matrix::from_vec(n_sup, emb_dim, r.f64s(block)?)?;
        let rr = Matrix::from_vec(n_sup, emb_dim, r.f64s(block)?)?;
        entries.push(DictEntry {
            graph_id,
            source,
            indices,
            patterns_h: h,
            patterns_r: rr,
        });
    }
    PatternDictionary::from_entries(emb_dim, entries)
}

pub fn save_dictionary(dict: &PatternDictionary, path: &Path) -> Result<()> {
    fsio::atomic_write(path, &encode_dictionary(dict)?)
}

pub fn load_dictionary(path: &Path) -> Result<PatternDictionary> {
    decode_dictionary(&fsio::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_entry(id: &str, n_sup: usize, e: usize, rng: &mut Rng) -> DictEntry {
        DictEntry {
            graph_id: id.into(),
            source: PatternSource::TrainNormal,
            indices: (0..n_sup).map(|i| i * 3).collect(),
            patterns_h: Matrix::from_fn(n_sup, e, |_, _| rng.normal()),
            patterns_r: Matrix::from_fn(n_sup, e, |_, _| rng.normal()),
        }
    }

    fn emb(n: usize, e: usize, rng: &mut Rng) -> Embeddings {
        Embeddings {
            h: Matrix::from_fn(n, e, |_, _| rng.normal()),
            r: Matrix::from_fn(n, e, |_, _| rng.normal()),
        }
    }

    #[test]
    fn exhausting_normals_takes_every_normal() {
        let mut rng = Rng::new(1);
        let e = emb(6, 2, &mut rng);
        let labels = [0, 1, 0, 0, 1, 0];
        let entry = extract_patterns("g", &e, Some(&labels), 100, &mut rng).unwrap();
        let mut idx = entry.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 2, 3, 5]);
        for (k, &i) in entry.indices.iter().enumerate() {
            assert_eq!(entry.patterns_h.row(k), e.h.row(i));
            assert_eq!(entry.patterns_r.row(k), e.r.row(i));
        }
        assert_eq!(entry.source, PatternSource::TrainNormal);
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_unique() {
        let e = emb(100, 2, &mut Rng::new(0));
        let a = extract_patterns("g", &e, None, 10, &mut Rng::new(5)).unwrap();
        let b = extract_patterns("g", &e, None, 10, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        let mut idx = a.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 10);
        assert_eq!(a.source, PatternSource::TestPseudo);
    }

    #[test]
    fn no_candidates_is_an_error() {
        let e = emb(2, 2, &mut Rng::new(0));
        assert!(extract_patterns("g", &e, Some(&[1, 1]), 4, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn zero_weight_gives_uniform_similarity() {
        let mut rng = Rng::new(2);
        let q = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let p = Matrix::from_fn(5, 4, |_, _| rng.normal());
        let s = similarity(&q, &p, &Matrix::zeros(4, 4)).unwrap();
        for v in s.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let s1 = similarity(&q, &p.select_rows(&[2]), &Matrix::identity(4)).unwrap();
        assert!(s1.data().iter().all(|&v| v == 1.0));
        assert!(similarity(&q, &Matrix::zeros(0, 4), &Matrix::identity(4)).is_err());
    }

    #[test]
    fn similarity_matches_softmax_then_max_oracle() {
        let mut rng = Rng::new(3);
        let q = Matrix::from_fn(3, 2, |_, _| rng.normal());
        let p = Matrix::from_fn(4, 2, |_, _| rng.normal());
        let w = Matrix::from_fn(2, 2, |_, _| rng.normal());
        let s = similarity(&q, &p, &w).unwrap();
        for v in 0..3 {
            let mut logits = [0.0; 4];
            for (c, l) in logits.iter_mut().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        *l += q.get(v, a) * w.get(a, b) * p.get(c, b);
                    }
                }
            }
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let want = logits.iter().map(|l| l.exp() / z).fold(0.0, f64::max);
            assert!((s.get(v, 0) - want).abs() < 1e-12);
            assert_eq!(s.get(v, 0), s.get(v, 1));
        }
    }

    #[test]
    fn merge_appends_and_checks_width() {
        let mut rng = Rng::new(4);
        let d = PatternDictionary::from_entries(3, vec![random_entry("a", 2, 3, &mut rng)]).unwrap();
        assert_eq!(merge(&d, vec![]).unwrap(), d);
        let m = merge(&d, vec![random_entry("b", 2, 3, &mut rng)]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries()[0], d.entries()[0]);
        assert!(merge(&d, vec![random_entry("c", 2, 4, &mut rng)]).is_err());
    }

    #[test]
    fn file_round_trip_and_size() {
        let mut rng = Rng::new(6);
        let entries = vec![random_entry("alpha", 5, 4, &mut rng), random_entry("β", 3, 4, &mut rng)];
        let d = PatternDictionary::from_entries(4, entries).unwrap();
        let bytes = encode_dictionary(&d).unwrap();
        let expected: usize = DICT_HEADER_LEN
            + d.entries()
                .iter()
                .map(|e| 2 + e.graph_id.len() + 1 + 4 + 4 * e.len() + 2 * e.len() * 4 * 8)
                .sum::<usize>();
        assert_eq!(bytes.len(), expected);
        assert_eq!(decode_dictionary(&bytes).unwrap(), d);
    }

    #[test]
    fn corrupt_files_are_rejected_with_offset() {
        let mut rng = Rng::new(7);
        let d = PatternDictionary::from_entries(2, vec![random_entry("a", 2, 2, &mut rng)]).unwrap();
        let mut bytes = encode_dictionary(&d).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dictionary(&bad).unwrap_err().to_string().contains("byte offset 0"));
        bytes.truncate(bytes.len() - 1);
        let err = decode_dictionary(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
