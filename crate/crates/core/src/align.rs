//! Cross-domain feature alignment.
//!
//! Every graph is projected to a common width with PCA, then rescaled by a
//! single positive factor chosen from its mean row norm and mean pairwise
//! distance relative to collection-level medians:
//!
//! ```text
//! X <- X / N · max(f, tau),   f = sqrt((dist_med · dist_N) / (dist · dist_med_N))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::numerics::{pca_fit_transform, squared_distance, Matrix, Rng};
use crate::par;

/// Graphs up to this size get exact all-pairs distance sums.
pub const EXACT_PAIR_LIMIT: usize = 20_000;
/// Ordered pairs sampled for larger graphs.
pub const SAMPLED_PAIRS: usize = 10_000_000;
const PAIR_SAMPLE_SEED: u64 = 0x0A11_6E5E_ED00_0001;

/// Per-graph statistics feeding the scaling factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Mean Euclidean row norm.
    pub norm: f64,
    /// Mean distance over all n² ordered pairs (self-pairs included).
    pub dist: f64,
    /// Same after dividing rows by `norm`; 0 when `norm` is 0.
    pub dist_norm: f64,
    /// `norm` was zero.
    pub degenerate: bool,
    /// `dist` was estimated from sampled pairs.
    pub approximate: bool,
}

/// How per-graph distances are pooled across the collection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Self::Median),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// One graph's entry in an alignment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphAlignment {
    pub graph_id: String,
    pub stats: GraphStats,
    /// Raw scaling factor `f` (1 when degenerate).
    pub factor: f64,
    /// Any of the ratio inputs was zero, so `f` fell back to 1.
    pub factor_degenerate: bool,
}

/// Statistics of a whole alignment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub graphs: Vec<GraphAlignment>,
    pub dist_med: f64,
    pub dist_med_norm: f64,
    pub tau: f64,
    pub aggregation: Aggregation,
}

impl AlignmentStats {
    pub fn get(&self, graph_id: &str) -> Option<&GraphAlignment> {
        self.graphs.iter().find(|g| g.graph_id == graph_id)
    }
}

/// A graph's features after projection and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedGraph {
    pub graph_id: String,
    pub features: Matrix,
}

impl AlignedGraph {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// PCA projection of a graph's raw features to width `d`.
pub fn project_features(g: &GraphDataset, d: usize, rng: &mut Rng) -> Result<Matrix> {
    pca_fit_transform(g.features(), d, rng)
}

fn row_distance_sum(x: &Matrix, j: usize) -> f64 {
    let xj = x.row(j);
    let mut s = 0.0;
    for k in j + 1..x.rows() {
        s += squared_distance(xj, x.row(k)).sqrt();
    }
    s
}

/// Mean pairwise distance of the rows of `x`.
fn mean_pairwise_distance(x: &Matrix) -> (f64, bool) {
    let n = x.rows();
    if n <= EXACT_PAIR_LIMIT {
        // Each unordered pair is counted for both orders; self-pairs add 0.
        let partial = par::map_indexed(n, |j| row_distance_sum(x, j));
        let total: f64 = partial.iter().sum();
        (2.0 * total / (n as f64 * n as f64), false)
    } else {
        let mut rng = Rng::new(PAIR_SAMPLE_SEED);
        let mut total = 0.0;
        for _ in 0..SAMPLED_PAIRS {
            let (a, b) = (rng.below(n), rng.below(n));
            total += squared_distance(x.row(a), x.row(b)).sqrt();
        }
        (total / SAMPLED_PAIRS as f64, true)
    }
}

/// Mean row norm, mean pairwise distance, and mean pairwise distance of the
/// norm-scaled rows.
pub fn graph_norm_stats(x: &Matrix) -> Result<GraphStats> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::invalid("graph has no nodes"));
    }
    let norm = x.iter_rows().map(crate::numerics::norm).sum::<f64>() / n as f64;
    let (dist, approximate) = mean_pairwise_distance(x);
    if norm == 0.0 {
        log::warn!("all-zero feature matrix: normalized distance set to 0");
        return Ok(GraphStats {
            norm,
            dist,
            dist_norm: 0.0,
            degenerate: true,
            approximate,
        });
    }
    let (dist_norm, _) = mean_pairwise_distance(&x.scale(1.0 / norm));
    Ok(GraphStats {
        norm,
        dist,
        dist_norm,
        degenerate: false,
        approximate,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    }
}

/// Componentwise median of `(dist, dist_norm)` pairs. Even counts average the
/// two middle values.
pub fn median_stats(per_graph: &[(f64, f64)]) -> Result<(f64, f64)> {
    aggregate_stats(per_graph, Aggregation::Median)
}

pub fn aggregate_stats(per_graph: &[(f64, f64)], how: Aggregation) -> Result<(f64, f64)> {
    if per_graph.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty collection"));
    }
    let mut d: Vec<f64> = per_graph.iter().map(|p| p.0).collect();
    let mut dn: Vec<f64> = per_graph.iter().map(|p| p.1).collect();
    Ok(match how {
        Aggregation::Median => (median(&mut d), median(&mut dn)),
        Aggregation::Mean => {
            let m = per_graph.len() as f64;
            (d.iter().sum::<f64>() / m, dn.iter().sum::<f64>() / m)
        }
    })
}

/// `f = sqrt((dist_med · dist_N) / (dist · dist_med_N))`, or `(1, true)` when a
/// ratio term is zero.
pub fn scaling_factor(stats: &GraphStats, dist_med: f64, dist_med_norm: f64) -> (f64, bool) {
    if stats.dist == 0.0 || dist_med == 0.0 || dist_med_norm == 0.0 {
        return (1.0, true);
    }
    let f = ((dist_med * stats.dist_norm) / (stats.dist * dist_med_norm)).sqrt();
    if f.is_finite() && f > 0.0 {
        (f, false)
    } else {
        (1.0, true)
    }
}

/// `(x / N) · max(f, tau)`.
pub fn apply_normalization(x: &Matrix, alignment: &GraphAlignment, tau: f64) -> Result<Matrix> {
    if !(alignment.stats.norm > 0.0) {
        return Err(Error::invalid(format!(
            "graph {:?} has all-zero features and cannot be normalized",
            alignment.graph_id
        )));
    }
    let s = alignment.factor.max(tau);
    let inv = 1.0 / alignment.stats.norm;
    Ok(x.map(|v| v * inv * s))
}

fn alignment_entry(graph_id: &str, stats: GraphStats, dist_med: f64, dist_med_norm: f64) -> GraphAlignment {
    let (factor, factor_degenerate) = scaling_factor(&stats, dist_med, dist_med_norm);
    if factor_degenerate {
        log::warn!("graph {graph_id:?}: degenerate distance statistics, scaling factor set to 1");
    }
    GraphAlignment {
        graph_id: graph_id.to_string(),
        stats,
        factor,
        factor_degenerate,
    }
}

/// Per-graph projection stream, keyed by name so results do not depend on
/// the order graphs are listed in.
fn projection_rng(rng: &Rng, graph_id: &str) -> Rng {
    rng.derive_named(&format!("project/{graph_id}"))
}

/// Project, measure, pool and normalize a collection of graphs.
pub fn align_collection(
    graphs: &[GraphDataset],
    d: usize,
    tau: f64,
    how: Aggregation,
    rng: &Rng,
) -> Result<(Vec<AlignedGraph>, AlignmentStats)> {
    if graphs.is_empty() {
        return Err(Error::invalid("alignment needs at least one graph"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be > 0"));
    }
    let projected = par::map_indexed(graphs.len(), |i| {
        let g = &graphs[i];
        let x = project_features(g, d, &mut projection_rng(rng, &g.name))?;
        let stats = graph_norm_stats(&x)?;
        Ok((x, stats))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(f64, f64)> = projected.iter().map(|(_, s)| (s.dist, s.dist_norm)).collect();
    let (dist_med, dist_med_norm) = aggregate_stats(&pairs, how)?;

    let mut aligned = Vec::with_capacity(graphs.len());
    let mut entries = Vec::with_capacity(graphs.len());
    for (g, (x, stats)) in graphs.iter().zip(projected) {
        let entry = alignment_entry(&g.name, stats, dist_med, dist_med_norm);
        aligned.push(AlignedGraph {
            graph_id: g.name.clone(),
            features: apply_normalization(&x, &entry, tau)?,
        });
        entries.push(entry);
    }
    Ok((
        aligned,
        AlignmentStats {
            graphs: entries,
            dist_med,
            dist_med_norm,
            tau,
            aggregation: how,
        },
    ))
}

/// Align one new graph against an existing run.
///
/// With `include_self` the pooled statistics cover the reference graphs plus
/// this one; otherwise only the reference graphs.
pub fn align_new_graph(
    g: &GraphDataset,
    reference: &AlignmentStats,
    d: usize,
    include_self: bool,
    rng: &Rng,
) -> Result<(AlignedGraph, GraphAlignment)> {
    let x = project_features(g, d, &mut projection_rng(rng, &g.name))?;
    let stats = graph_norm_stats(&x)?;
    let mut pairs: Vec<(f64, f64)> = reference
        .graphs
        .iter()
        .map(|e| (e.stats.dist, e.stats.dist_norm))
        .collect();
    if include_self || pairs.is_empty() {
        pairs.push((stats.dist, stats.dist_norm));
    }
    let (dist_med, dist_med_norm) = aggregate_stats(&pairs, reference.aggregation)?;
    let entry = alignment_entry(&g.name, stats, dist_med, dist_med_norm);
    let features = apply_normalization(&x, &entry, reference.tau)?;
    Ok((
        AlignedGraph {
            graph_id: g.name.clone(),
            features,
        },
        entry,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_of(rows: &[[f64; 2]]) -> GraphStats {
        graph_norm_stats(&Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn hand_computed_two_points() {
        let s = stats_of(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!((s.norm, s.dist, s.dist_norm), (2.5, 2.5, 1.0));
        let s = stats_of(&[[0.0, 0.0], [6.0, 8.0]]);
        assert_eq!((s.norm, s.dist, s.dist_norm), (5.0, 5.0, 1.0));
    }

    #[test]
    fn pair_sum_matches_brute_force() {
        let mut rng = Rng::new(12);
        let x = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let mut brute = 0.0;
        for j in 0..4 {
            for k in 0..4 {
                brute += squared_distance(x.row(j), x.row(k)).sqrt();
            }
        }
        let s = graph_norm_stats(&x).unwrap();
        assert!((s.dist - brute / 16.0).abs() < 1e-14);
    }

    #[test]
    fn zero_features_are_flagged() {
        let s = graph_norm_stats(&Matrix::zeros(3, 2)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.dist_norm, 0.0);
        let entry = alignment_entry("z", s, 1.0, 1.0);
        assert!(apply_normalization(&Matrix::zeros(3, 2), &entry, 1.0).is_err());
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median_stats(&[(4.0, 2.0)]).unwrap(), (4.0, 2.0));
        assert_eq!(median_stats(&[(1.0, 0.0), (3.0, 0.0), (2.0, 0.0)]).unwrap().0, 2.0);
        assert_eq!(
            median_stats(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]).unwrap().0,
            2.5
        );
        assert!(median_stats(&[]).is_err());
    }

    #[test]
    fn two_graph_factor_by_hand() {
        let g1 = GraphStats {
            norm: 2.0,
            dist: 2.0,
            dist_norm: 1.0,
            degenerate: false,
            approximate: false,
        };
        let (dm, dmn) = median_stats(&[(2.0, 1.0), (8.0, 2.0)]).unwrap();
        assert_eq!((dm, dmn), (5.0, 1.5));
        let (f, degenerate) = scaling_factor(&g1, dm, dmn);
        assert!(!degenerate);
        assert!((f - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((f - 1.2910).abs() < 1e-4);
        let x = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let entry = alignment_entry("g1", g1, dm, dmn);
        let y = apply_normalization(&x, &entry, 1.0).unwrap();
        assert!((y.get(0, 0) - f).abs() < 1e-15);
    }

    #[test]
    fn zero_ratio_term_falls_back_to_one() {
        let s = GraphStats {
            norm: 1.0,
            dist: 0.0,
            dist_norm: 0.0,
            degenerate: false,
            approximate: false,
        };
        assert_eq!(scaling_factor(&s, 1.0, 1.0), (1.0, true));
    }
}
