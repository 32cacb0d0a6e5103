use super::GraphDataset;
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Rng};

/// Candidates examined per contextual anomaly.
const CONTEXT_CANDIDATES: usize = 50;

/// Inject structural (clique) and contextual (far-feature swap) anomalies.
///
/// Node sets are disjoint. Each clique fully interconnects `clique_size`
/// random nodes. Each contextual node takes the original feature row of the
/// farthest node (Euclidean) among `CONTEXT_CANDIDATES` random candidates.
/// The result carries fresh labels: 1 for injected nodes, 0 elsewhere.
pub fn inject_anomalies(
    g: &GraphDataset,
    n_cliques: usize,
    clique_size: usize,
    n_contextual: usize,
    rng: &mut Rng,
) -> Result<GraphDataset> {
    let n = g.node_count();
    let structural = n_cliques
        .checked_mul(clique_size)
        .ok_or_else(|| Error::invalid("clique count overflow"))?;
    let total = structural + n_contextual;
    if total > n {
        return Err(Error::invalid(format!(
            "need {total} distinct nodes for injection but graph has {n}"
        )));
    }
    let chosen = rng.sample_without_replacement(n, total);
    let mut labels = vec![0u8; n];
    let mut edges = g.edges().to_vec();

    for clique in chosen[..structural].chunks(clique_size.max(1)) {
        for (i, &u) in clique.iter().enumerate() {
            labels[u] = 1;
            for &v in &clique[i + 1..] {
                edges.push((u, v));
            }
        }
    }

    let original = g.features();
    let mut features = original.clone();
    for &u in &chosen[structural..] {
        labels[u] = 1;
        let others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
        let candidates = rng.choose_distinct(&others, CONTEXT_CANDIDATES);
        let mut best: Option<(usize, f64)> = None;
        for v in candidates {
            let d = squared_distance(original.row(u), original.row(v));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((v, d));
            }
        }
        if let Some((v, _)) = best {
            features.row_mut(u).copy_from_slice(original.row(v));
        }
    }
    GraphDataset::new(g.name.clone(), g.domain.clone(), edges, features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, SynthSpec};

    fn base(n: usize) -> GraphDataset {
        generate_graph(&SynthSpec { nodes: n, ..SynthSpec::default() }, &mut Rng::new(8)).unwrap()
    }

    #[test]
    fn cliques_are_fully_connected() {
        let g = base(60);
        let out = inject_anomalies(&g, 2, 5, 0, &mut Rng::new(1)).unwrap();
        let labels = out.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&y| y == 1).count(), 10);
        let deg = out.degrees();
        for (i, &y) in labels.iter().enumerate() {
            if y == 1 {
                assert!(deg[i] >= 4);
            }
        }
        assert_eq!(out.features(), g.features());
    }

    #[test]
    fn nothing_injected_only_adds_zero_labels() {
        let g = base(30);
        let out = inject_anomalies(&g, 0, 5, 0, &mut Rng::new(1)).unwrap();
        assert_eq!(out.edges(), g.edges());
        assert_eq!(out.features(), g.features());
        assert!(out.labels().unwrap().iter().all(|&y| y == 0));
    }

    #[test]
    fn contextual_rows_come_from_original_rows() {
        let g = base(100);
        let out = inject_anomalies(&g, 0, 0, 3, &mut Rng::new(2)).unwrap();
        let labels = out.labels().unwrap();
        assert_eq!(labels.iter().map(|&y| y as usize).sum::<usize>(), 3);
        for (i, &y) in labels.iter().enumerate() {
            if y == 1 {
                let row = out.features().row(i);
                assert!(g.features().iter_rows().enumerate().any(|(j, r)| j != i && r == row));
            }
        }
    }

    #[test]
    fn too_many_anomalies_is_rejected() {
        let g = base(10);
        assert!(inject_anomalies(&g, 2, 5, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn seeded_injection_is_reproducible() {
        let g = base(80);
        let a = inject_anomalies(&g, 1, 6, 4, &mut Rng::new(9)).unwrap();
        let b = inject_anomalies(&g, 1, 6, 4, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
