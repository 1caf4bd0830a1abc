//! On-disk graph bundles.
//!
//! A bundle is a directory holding four files:
//!   meta.txt      `n=<int>`, `d=<int>`, `classes=<int>`, one per line
//!   edges.txt     one `u v` pair per line, 0-indexed, u < v, no duplicates
//!   features.f32  raw little-endian f32, row-major n x d
//!   labels.txt    one integer per line, -1 for unlabeled
//!
//! Loaders report the offending file and 1-based line number on malformed
//! input. Feature values round-trip bit-exactly at f32 precision.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, HistogramMode, StructureMode};

pub fn save_bundle(graph: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, contents: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
    };

    let meta = format!(
        "n={}\nd={}\nclasses={}\n",
        graph.n(),
        graph.dim(),
        graph.n_classes
    );
    write("meta.txt", meta.as_bytes())?;

    let mut edges = graph.edges.clone();
    edges.sort_unstable();
    let mut edge_text = String::new();
    for (u, v) in edges {
        edge_text.push_str(&format!("{u} {v}\n"));
    }
    write("edges.txt", edge_text.as_bytes())?;

    let mut feats = Vec::with_capacity(graph.n() * graph.dim() * 4);
    for row in graph.features.rows() {
        for &x in row {
            feats.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    write("features.f32", &feats)?;

    let mut labels = String::new();
    for l in &graph.labels {
        match l {
            Some(c) => labels.push_str(&format!("{c}\n")),
            None => labels.push_str("-1\n"),
        }
    }
    write("labels.txt", labels.as_bytes())?;
    Ok(())
}

pub fn load_bundle(
    dir: &Path,
    structure_mode: StructureMode,
    histogram_mode: HistogramMode,
) -> Result<AttributedGraph> {
    let meta_path = dir.join("meta.txt");
    let meta = read_text(&meta_path)?;
    let (mut n, mut d, mut classes) = (None, None, None);
    for (i, line) in meta.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(meta_path.display().to_string(), line_no, "expected key=value")
        })?;
        let value: usize = value.trim().parse().map_err(|_| {
            Error::format(
                meta_path.display().to_string(),
                line_no,
                format!("invalid integer '{}'", value.trim()),
            )
        })?;
        match key.trim() {
            "n" => n = Some(value),
            "d" => d = Some(value),
            "classes" => classes = Some(value),
            other => {
                return Err(Error::format(
                    meta_path.display().to_string(),
                    line_no,
                    format!("unknown key '{other}'"),
                ))
            }
        }
    }
    let n = n.ok_or_else(|| Error::format(meta_path.display().to_string(), 0, "missing n="))?;
    let d = d.ok_or_else(|| Error::format(meta_path.display().to_string(), 0, "missing d="))?;
    let classes = classes
        .ok_or_else(|| Error::format(meta_path.display().to_string(), 0, "missing classes="))?;

    let edges_path = dir.join("edges.txt");
    let edge_text = read_text(&edges_path)?;
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in edge_text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| {
                Error::format(edges_path.display().to_string(), line_no, "expected 'u v'")
            })?
            .parse()
            .map_err(|_| {
                Error::format(
                    edges_path.display().to_string(),
                    line_no,
                    format!("invalid vertex id in '{line}'"),
                )
            })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::format(
                edges_path.display().to_string(),
                line_no,
                "expected exactly two vertex ids",
            ));
        }
        if u >= v {
            return Err(Error::format(
                edges_path.display().to_string(),
                line_no,
                format!("edge ({u}, {v}) must satisfy u < v"),
            ));
        }
        if v >= n {
            return Err(Error::format(
                edges_path.display().to_string(),
                line_no,
                format!("edge ({u}, {v}) references a vertex >= {n}"),
            ));
        }
        if !seen.insert((u, v)) {
            return Err(Error::format(
                edges_path.display().to_string(),
                line_no,
                format!("duplicate edge ({u}, {v})"),
            ));
        }
        edges.push((u, v));
    }

    let feat_path = dir.join("features.f32");
    let mut bytes = Vec::new();
    fs::File::open(&feat_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(feat_path.display().to_string(), e))?;
    if bytes.len() != n * d * 4 {
        return Err(Error::format(
            feat_path.display().to_string(),
            0,
            format!("expected {} bytes ({n} x {d} f32), found {}", n * d * 4, bytes.len()),
        ));
    }
    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let off = (i * d + j) * 4;
            let x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::format(
                    feat_path.display().to_string(),
                    0,
                    format!("non-finite feature at row {i}, column {j}"),
                ));
            }
            features[(i, j)] = x as f64;
        }
    }

    let labels_path = dir.join("labels.txt");
    let label_text = read_text(&labels_path)?;
    let mut labels = Vec::with_capacity(n);
    for (i, line) in label_text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: i64 = line.parse().map_err(|_| {
            Error::format(
                labels_path.display().to_string(),
                line_no,
                format!("invalid label '{line}'"),
            )
        })?;
        if value == -1 {
            labels.push(None);
        } else if value >= 0 && (value as usize) < classes {
            labels.push(Some(value as usize));
        } else {
            return Err(Error::format(
                labels_path.display().to_string(),
                line_no,
                format!("label {value} out of range for {classes} classes"),
            ));
        }
    }
    if labels.len() != n {
        return Err(Error::format(
            labels_path.display().to_string(),
            0,
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }

    AttributedGraph::new(features, edges, labels, classes, structure_mode, histogram_mode)
}

/// Writes `key = value` lines describing the effective parameters of a run.
pub fn write_resolved_config(dir: &Path, entries: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join("config.resolved.txt");
    let mut f =
        fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for (k, v) in entries {
        writeln!(f, "{k} = {v}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Raw little-endian f32 dump of a value sequence.
pub fn write_f32(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_graph() -> AttributedGraph {
        AttributedGraph::new(
            array![[0.5, -1.25], [3.0, 2.0], [-0.125, 4.5]],
            vec![(0, 1), (1, 2)],
            vec![Some(0), None, Some(1)],
            2,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap()
    }

    #[test]
    fn bundle_round_trip_preserves_graph() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_graph();
        save_bundle(&g, dir.path()).unwrap();
        let back = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap();
        assert_eq!(back.n(), 3);
        assert_eq!(back.dim(), 2);
        assert_eq!(back.n_classes, 2);
        assert_eq!(back.edges, g.edges);
        assert_eq!(back.labels, g.labels);
        // Sample values are f32-representable, so the trip is exact.
        assert_eq!(back.features, g.features);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_bundle(&sample_graph(), dir1.path()).unwrap();
        let back = load_bundle(dir1.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap();
        save_bundle(&back, dir2.path()).unwrap();
        for name in ["meta.txt", "edges.txt", "features.f32", "labels.txt"] {
            let a = fs::read(dir1.path().join(name)).unwrap();
            let b = fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn malformed_files_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_graph(), dir.path()).unwrap();

        fs::write(dir.path().join("edges.txt"), "0 1\n1 1\n").unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains("edges.txt:2"), "{err}");

        fs::write(dir.path().join("edges.txt"), "0 1\n0 1\n").unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        fs::write(dir.path().join("edges.txt"), "0 1\n0 7\n").unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains(">= 3"), "{err}");
    }

    #[test]
    fn wrong_feature_byte_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_graph(), dir.path()).unwrap();
        fs::write(dir.path().join("features.f32"), vec![0u8; 10]).unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains("expected 24 bytes"), "{err}");
    }

    #[test]
    fn label_out_of_range_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_graph(), dir.path()).unwrap();
        fs::write(dir.path().join("labels.txt"), "0\n5\n1\n").unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains("labels.txt:2"), "{err}");
    }

    #[test]
    fn unknown_meta_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_graph(), dir.path()).unwrap();
        fs::write(dir.path().join("meta.txt"), "n=3\nd=2\nclasses=2\nextra=1\n").unwrap();
        let err = load_bundle(dir.path(), StructureMode::Adjacency, HistogramMode::Uniform)
            .unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }
}
