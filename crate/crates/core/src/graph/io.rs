use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GraphDataset;
use crate::error::{Error, Result};
use crate::fsio::{self, ByteReader};
use crate::numerics::Matrix;

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const FMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Fmat,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Meta {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    domain: Option<String>,
}

pub fn write_fmat(m: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + m.data().len() * 8);
    out.extend_from_slice(FMAT_MAGIC);
    fsio::put_u32(&mut out, FMAT_VERSION);
    fsio::put_u32(&mut out, fsio::to_u32(m.rows(), "rows")?);
    fsio::put_u32(&mut out, fsio::to_u32(m.cols(), "cols")?);
    fsio::put_f64s(&mut out, m.data());
    Ok(out)
}

pub fn read_fmat(bytes: &[u8]) -> Result<Matrix> {
    let mut r = ByteReader::new(bytes, "features.fmat");
    r.expect_magic(FMAT_MAGIC)?;
    let version = r.u32()?;
    if version != FMAT_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f64s(rows * cols)?;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Matrix::from_vec(rows, cols, data)
}

fn parse_features_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format_at_line("features.csv", i + 1, e.to_string()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format_at_line(
                    "features.csv",
                    i + 1,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format_at_line("features.csv", i + 1, "non-finite value"));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn parse_pair_lines(text: &str, file: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parse = |t: Option<&str>| -> Result<usize> {
            t.ok_or_else(|| Error::format_at_line(file, i + 1, "expected two comma-separated fields"))?
                .parse::<usize>()
                .map_err(|e| Error::format_at_line(file, i + 1, e.to_string()))
        };
        let a = parse(parts.next())?;
        let b = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::format_at_line(file, i + 1, "too many fields"));
        }
        out.push((i + 1, a, b));
    }
    Ok(out)
}

/// Load a graph directory (`edges.csv`, `features.csv|features.fmat`,
/// optional `labels.csv`, `meta.json`).
pub fn load_graph_dir(path: &Path) -> Result<GraphDataset> {
    if !path.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", path.display())));
    }
    let fmat = path.join("features.fmat");
    let csv = path.join("features.csv");
    let features = if fmat.exists() {
        read_fmat(&fsio::read(&fmat)?)?
    } else if csv.exists() {
        parse_features_csv(&fsio::read_string(&csv)?)?
    } else {
        return Err(Error::invalid(format!(
            "{} has neither features.csv nor features.fmat",
            path.display()
        )));
    };
    let n = features.rows();

    let edge_lines = parse_pair_lines(&fsio::read_string(&path.join("edges.csv"))?, "edges.csv")?;
    let mut edges = Vec::with_capacity(edge_lines.len());
    for &(line, u, v) in &edge_lines {
        if u >= n || v >= n {
            return Err(Error::format_at_line(
                "edges.csv",
                line,
                format!("node index {} out of range for {n} feature rows", u.max(v)),
            ));
        }
        edges.push((u, v));
    }
    warn_if_directed(&edges);

    let labels_path = path.join("labels.csv");
    let labels = if labels_path.exists() {
        let mut labels = vec![0u8; n];
        for (line, node, label) in parse_pair_lines(&fsio::read_string(&labels_path)?, "labels.csv")? {
            if node >= n {
                return Err(Error::Consistency(format!(
                    "labels.csv line {line}: node {node} but features have {n} rows"
                )));
            }
            if label > 1 {
                return Err(Error::format_at_line("labels.csv", line, format!("label {label} is not 0/1")));
            }
            labels[node] = label as u8;
        }
        Some(labels)
    } else {
        None
    };

    let meta_path = path.join("meta.json");
    let meta: Meta = if meta_path.exists() {
        serde_json::from_str(&fsio::read_string(&meta_path)?)
            .map_err(|e| Error::format_at_line("meta.json", e.line(), e.to_string()))?
    } else {
        Meta::default()
    };
    let fallback = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into());
    GraphDataset::new(
        meta.name.unwrap_or(fallback),
        meta.domain.unwrap_or_default(),
        edges,
        features,
        labels,
    )
}

fn warn_if_directed(edges: &[(usize, usize)]) {
    let set: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let reciprocal = edges.iter().filter(|&&(u, v)| u != v && set.contains(&(v, u))).count();
    let one_way = edges.len() - reciprocal;
    if reciprocal > 0 && one_way > 0 {
        log::warn!("edge list mixes reciprocal and one-way edges; treating it as directed and symmetrizing");
    }
}

/// Write `g` to `path`. Feature values in CSV use 17 significant digits.
pub fn save_graph_dir(g: &GraphDataset, path: &Path, format: FeatureFormat) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let mut edges = String::new();
    for (u, v) in g.edges() {
        edges.push_str(&format!("{u},{v}\n"));
    }
    fsio::atomic_write(&path.join("edges.csv"), edges.as_bytes())?;

    match format {
        FeatureFormat::Fmat => {
            fsio::atomic_write(&path.join("features.fmat"), &write_fmat(g.features())?)?;
            remove_if_exists(&path.join("features.csv"))?;
        }
        FeatureFormat::Csv => {
            let mut s = String::new();
            for row in g.features().iter_rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            fsio::atomic_write(&path.join("features.csv"), s.as_bytes())?;
            remove_if_exists(&path.join("features.fmat"))?;
        }
    }

    if let Some(labels) = g.labels() {
        let mut s = String::new();
        for (i, y) in labels.iter().enumerate() {
            s.push_str(&format!("{i},{y}\n"));
        }
        fsio::atomic_write(&path.join("labels.csv"), s.as_bytes())?;
    } else {
        remove_if_exists(&path.join("labels.csv"))?;
    }
    let meta = Meta {
        name: Some(g.name.clone()),
        domain: Some(g.domain.clone()),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fsio::atomic_write(&path.join("meta.json"), json.as_bytes())
}

fn remove_if_exists(p: &Path) -> Result<()> {
    if p.exists() {
        std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, SynthSpec};
    use crate::numerics::Rng;

    #[test]
    fn loads_minimal_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("edges.csv"), "0,1\n").unwrap();
        std::fs::write(dir.path().join("features.csv"), "1,2,3\n4,5,6\n").unwrap();
        let g = load_graph_dir(dir.path()).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(g.labels().is_none());
    }

    #[test]
    fn labels_default_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("edges.csv"), "0,1\n1,2\n").unwrap();
        std::fs::write(dir.path().join("features.csv"), "1\n2\n3\n").unwrap();
        std::fs::write(dir.path().join("labels.csv"), "0,1\n").unwrap();
        let g = load_graph_dir(dir.path()).unwrap();
        assert_eq!(g.labels().unwrap(), &[1, 0, 0]);
    }

    #[test]
    fn out_of_range_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("edges.csv"), "0,1\n\n1,7\n").unwrap();
        std::fs::write(dir.path().join("features.csv"), "1\n2\n").unwrap();
        let err = load_graph_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn label_for_missing_row_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("edges.csv"), "0,1\n").unwrap();
        std::fs::write(dir.path().join("features.csv"), "1\n2\n").unwrap();
        std::fs::write(dir.path().join("labels.csv"), "4,1\n").unwrap();
        assert!(matches!(load_graph_dir(dir.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn round_trips_both_formats() {
        let g = generate_graph(&SynthSpec { nodes: 50, ..SynthSpec::default() }, &mut Rng::new(3)).unwrap();
        for format in [FeatureFormat::Fmat, FeatureFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            save_graph_dir(&g, dir.path(), format).unwrap();
            let back = load_graph_dir(dir.path()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn fmat_rejects_bad_magic_and_truncation() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = write_fmat(&m).unwrap();
        assert_eq!(read_fmat(&bytes).unwrap(), m);
        bytes.truncate(bytes.len() - 3);
        assert!(read_fmat(&bytes).unwrap_err().to_string().contains("byte offset 16"));
        bytes[0] = b'X';
        assert!(read_fmat(&bytes).is_err());
    }
}
