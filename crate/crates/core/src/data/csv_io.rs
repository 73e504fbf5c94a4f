//! CSV layout:
//!
//! * values: header `feature:node` for every column, feature blocks of `n`
//!   columns each, one row per time step;
//! * coords: header `x,y`, one row per node;
//! * labels (optional): one header name per column, one row per node;
//! * edges (optional): header `src,dst`, one directed edge per row.
//!
//! Without an edges file the graph is the distance-threshold graph of the
//! coordinates. Floats are written in shortest round-trip form.

use std::path::{Path, PathBuf};

use super::{BundleMeta, DatasetBundle};
use crate::error::{Error, Result};
use crate::graph::{threshold_graph, FeatureSequence, SensorGraph};
use crate::tensor::Matrix;

/// File locations of a CSV dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvPaths {
    pub values: PathBuf,
    pub coords: PathBuf,
    pub labels: Option<PathBuf>,
    pub edges: Option<PathBuf>,
}

impl CsvPaths {
    /// Conventional file names inside `dir`; optional files are used only
    /// if present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        CsvPaths {
            values: dir.join("values.csv"),
            coords: dir.join("coords.csv"),
            labels: opt("labels.csv"),
            edges: opt("edges.csv"),
        }
    }
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Header and numeric rows of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => csv_err(path, format!("{other:?}")),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| csv_err(path, format!("row {}, column {}: non-numeric cell {cell:?}", line + 2, col + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(csv_err(path, format!("row {} has {} cells, header has {}", line + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset from CSV files. `delta` is the distance threshold used
/// when no edges file is given.
pub fn load_csv_dataset(paths: &CsvPaths, delta: f64) -> Result<DatasetBundle> {
    let (coord_header, coord_rows) = read_table(&paths.coords)?;
    if coord_header.len() != 2 {
        return Err(csv_err(&paths.coords, "expected columns x,y"));
    }
    let n = coord_rows.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("dataset has {n} nodes (need at least 4)")));
    }
    let coords: Vec<[f64; 2]> = coord_rows.iter().map(|r| [r[0], r[1]]).collect();

    let (header, rows) = read_table(&paths.values)?;
    if header.is_empty() || header.len() % n != 0 {
        return Err(csv_err(
            &paths.values,
            format!("{} columns is not a multiple of {n} nodes", header.len()),
        ));
    }
    let d = header.len() / n;
    let mut feature_names = Vec::with_capacity(d);
    for f in 0..d {
        let name = header[f * n].rsplit_once(':').map_or(header[f * n].as_str(), |(a, _)| a);
        feature_names.push(name.to_string());
    }
    let steps = rows.len();
    if steps == 0 {
        return Err(csv_err(&paths.values, "no rows"));
    }
    let mut features = FeatureSequence::zeros(steps, n, d);
    for (t, row) in rows.iter().enumerate() {
        for f in 0..d {
            for i in 0..n {
                features.set(t, i, f, row[f * n + i]);
            }
        }
    }

    let (labels, label_names) = match &paths.labels {
        Some(p) => {
            let (names, rows) = read_table(p)?;
            if rows.len() != n {
                return Err(csv_err(p, format!("{} label rows for {n} nodes", rows.len())));
            }
            (Matrix::from_rows(&rows), names)
        }
        None => (Matrix::ones(n, 1), vec!["ones".to_string()]),
    };

    let edges: Vec<(usize, usize)> = match &paths.edges {
        Some(p) => {
            let (_, rows) = read_table(p)?;
            rows.iter()
                .map(|r| {
                    let as_index = |v: f64| {
                        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
                            Ok(v as usize)
                        } else {
                            Err(csv_err(p, format!("bad node index {v}")))
                        }
                    };
                    Ok((as_index(r[0])?, as_index(r[1])?))
                })
                .collect::<Result<_>>()?
        }
        None => threshold_graph(&coords, delta)?.edges,
    };

    let graph = SensorGraph::new(n, edges, Some(coords), labels)?;
    let bundle = DatasetBundle {
        graph,
        features,
        feature_names,
        meta: BundleMeta {
            provenance: format!("csv: {}", paths.values.display()),
            seed: None,
            config: None,
            label_names,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `bundle` to `dir` as `values.csv`, `coords.csv`, `labels.csv`,
/// `edges.csv` and a `meta.json` sidecar.
pub fn write_csv_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<CsvPaths> {
    bundle.validate()?;
    std::fs::create_dir_all(dir)?;
    let g = &bundle.graph;
    let (n, d) = (g.n(), bundle.features.d());
    let coords = g
        .coords()
        .ok_or_else(|| Error::InvalidArgument("bundle has no coordinates".into()))?;

    let paths = CsvPaths {
        values: dir.join("values.csv"),
        coords: dir.join("coords.csv"),
        labels: Some(dir.join("labels.csv")),
        edges: Some(dir.join("edges.csv")),
    };

    let header: Vec<String> = (0..d)
        .flat_map(|f| (0..n).map(move |i| (f, i)))
        .map(|(f, i)| format!("{}:{i}", bundle.feature_names[f]))
        .collect();
    let seq = &bundle.features;
    write_table(
        &paths.values,
        &header,
        (0..seq.steps()).map(|t| (0..d).flat_map(|f| (0..n).map(move |i| seq.get(t, i, f))).collect()),
    )?;
    write_table(&paths.coords, &["x".into(), "y".into()], coords.iter().map(|c| c.to_vec()))?;

    let labels = g.labels();
    let label_names: Vec<String> = if bundle.meta.label_names.len() == labels.cols() {
        bundle.meta.label_names.clone()
    } else {
        (0..labels.cols()).map(|c| format!("label_{c}")).collect()
    };
    write_table(
        paths.labels.as_ref().expect("set above"),
        &label_names,
        (0..n).map(|i| labels.row(i).to_vec()),
    )?;
    write_table(
        paths.edges.as_ref().expect("set above"),
        &["src".into(), "dst".into()],
        g.edges().iter().map(|&(j, i)| vec![j as f64, i as f64]),
    )?;
    let meta = serde_json::to_string_pretty(&bundle.meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn toy(dir: &Path) -> CsvPaths {
        CsvPaths {
            values: write(dir, "values.csv", "speed:0,speed:1,speed:2,speed:3\n1,2,3,4\n5,6,7,8\n"),
            coords: write(dir, "coords.csv", "x,y\n0,0\n1,0\n5,5\n9,9\n"),
            labels: None,
            edges: None,
        }
    }

    #[test]
    fn threshold_edges_and_default_labels() {
        let dir = tempfile::tempdir().unwrap();
        let b = load_csv_dataset(&toy(dir.path()), 2.0).unwrap();
        assert_eq!(b.graph.edges(), &[(0, 1), (1, 0)]);
        assert_eq!(b.graph.labels(), &Matrix::ones(4, 1));
        assert_eq!(b.feature_names, vec!["speed"]);
        assert_eq!(b.features.get(1, 2, 0), 7.0);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = toy(dir.path());
        paths.values = write(dir.path(), "bad.csv", "a:0,a:1,a:2,a:3\n1,2,x,4\n");
        assert!(matches!(load_csv_dataset(&paths, 2.0), Err(Error::Parse(_))));
        paths.values = write(dir.path(), "bad2.csv", "a:0,a:1,a:2\n1,2,3\n");
        assert!(load_csv_dataset(&paths, 2.0).is_err());
        let mut paths = toy(dir.path());
        paths.coords = write(dir.path(), "c3.csv", "x,y\n0,0\n1,1\n2,2\n");
        assert!(load_csv_dataset(&paths, 2.0).is_err());
        let mut paths = toy(dir.path());
        paths.labels = Some(write(dir.path(), "l.csv", "a\n1\n2\n"));
        assert!(load_csv_dataset(&paths, 2.0).is_err());
        let mut paths = toy(dir.path());
        paths.values = dir.path().join("missing.csv");
        assert!(matches!(load_csv_dataset(&paths, 2.0), Err(Error::Io(_))));
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            n_nodes: 20,
            steps: 60,
            ..SyntheticConfig::default()
        };
        let b = generate_synthetic(&cfg).unwrap();
        let paths = write_csv_dataset(&b, dir.path()).unwrap();
        let back = load_csv_dataset(&paths, 1.0).unwrap();
        assert_eq!(back.features, b.features);
        assert_eq!(back.graph.edges(), b.graph.edges());
        assert_eq!(back.graph.labels(), b.graph.labels());
        assert_eq!(back.graph.coords(), b.graph.coords());
        assert_eq!(back.feature_names, b.feature_names);
        assert!(dir.path().join("meta.json").exists());
        assert_eq!(CsvPaths::in_dir(dir.path()), paths);
    }
}
