use super::GraphDataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Parameters for a stochastic-block-model graph with community-clustered
/// Gaussian features.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub domain: String,
    pub nodes: usize,
    pub communities: usize,
    pub feature_dim: usize,
    /// Expected within-community degree.
    pub intra_degree: f64,
    /// Expected cross-community degree.
    pub inter_degree: f64,
    /// Distance scale of community centers relative to unit noise.
    pub separation: f64,
    /// Global multiplier and offset, to imitate domain-specific feature scales.
    pub feature_scale: f64,
    pub feature_offset: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            domain: "synthetic".into(),
            nodes: 300,
            communities: 4,
            feature_dim: 24,
            intra_degree: 8.0,
            inter_degree: 1.0,
            separation: 3.0,
            feature_scale: 1.0,
            feature_offset: 0.0,
        }
    }
}

/// Sample an unlabeled graph from `spec`.
pub fn generate_graph(spec: &SynthSpec, rng: &mut Rng) -> Result<GraphDataset> {
    if spec.nodes == 0 || spec.communities == 0 || spec.feature_dim == 0 {
        return Err(Error::invalid("synthetic graph needs nodes, communities and features"));
    }
    let n = spec.nodes;
    let k = spec.communities.min(n);
    let community: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let size = |c: usize| community.iter().filter(|&&x| x == c).count() as f64;
    let sizes: Vec<f64> = (0..k).map(size).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let (cu, cv) = (community[u], community[v]);
            let p = if cu == cv {
                spec.intra_degree / (sizes[cu] - 1.0).max(1.0)
            } else {
                spec.inter_degree / (n as f64 - sizes[cu]).max(1.0)
            };
            if rng.bernoulli(p.min(1.0)) {
                edges.push((u, v));
            }
        }
    }

    let centers = Matrix::from_fn(k, spec.feature_dim, |_, _| rng.normal() * spec.separation);
    let features = Matrix::from_fn(n, spec.feature_dim, |r, c| {
        let x = centers.get(community[r], c) + rng.normal();
        x * spec.feature_scale + spec.feature_offset
    });
    GraphDataset::new(spec.name.clone(), spec.domain.clone(), edges, features, None)
}

/// Counts and sizes for a benchmark-style collection of synthetic graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteSpec {
    pub train: usize,
    pub test: usize,
    pub aux: usize,
    pub nodes: usize,
    /// Fraction of nodes turned into anomalies, split roughly evenly between
    /// clique members and contextual outliers.
    pub anomaly_rate: f64,
    pub clique_size: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            train: 4,
            test: 1,
            aux: 3,
            nodes: 300,
            anomaly_rate: 0.05,
            clique_size: 4,
        }
    }
}

/// Labeled synthetic graphs grouped by role.
#[derive(Clone, Debug)]
pub struct SyntheticSuite {
    pub train: Vec<GraphDataset>,
    pub test: Vec<GraphDataset>,
    pub aux: Vec<GraphDataset>,
}

/// One "domain": feature width, scale, offset and community layout all vary
/// so that raw feature spaces are mutually incompatible.
fn domain_spec(name: String, nodes: usize, rng: &mut Rng) -> SynthSpec {
    SynthSpec {
        domain: name.clone(),
        name,
        nodes,
        communities: 3 + rng.below(4),
        feature_dim: 12 + rng.below(40),
        intra_degree: 6.0 + 6.0 * rng.uniform(),
        inter_degree: 0.5 + rng.uniform(),
        separation: 2.5 + 1.5 * rng.uniform(),
        feature_scale: 10f64.powf(rng.uniform_range(-1.0, 1.5)),
        feature_offset: rng.uniform_range(-5.0, 5.0),
    }
}

/// Generate a train/test/aux collection with injected anomalies. Each graph
/// draws from its own stream keyed by role and index.
pub fn synthetic_suite(spec: &SuiteSpec, rng: &Rng) -> Result<SyntheticSuite> {
    if spec.clique_size < 2 || !(0.0..0.5).contains(&spec.anomaly_rate) {
        return Err(Error::invalid("clique size must be >= 2 and anomaly rate in [0, 0.5)"));
    }
    let total = (spec.anomaly_rate * spec.nodes as f64).round() as usize;
    let n_cliques = (total / 2) / spec.clique_size;
    let n_contextual = total - n_cliques * spec.clique_size;
    let make = |role: &str, count: usize| -> Result<Vec<GraphDataset>> {
        (0..count)
            .map(|i| {
                let name = format!("{role}{i}");
                let mut r = rng.derive_named(&name);
                let g = generate_graph(&domain_spec(name, spec.nodes, &mut r), &mut r)?;
                super::inject_anomalies(&g, n_cliques, spec.clique_size, n_contextual, &mut r)
            })
            .collect()
    };
    Ok(SyntheticSuite {
        train: make("train", spec.train)?,
        test: make("test", spec.test)?,
        aux: make("aux", spec.aux)?,
    })
}

