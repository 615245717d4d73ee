//! CSV dataset loading.
//!
//! Values file: header `timestamp,<node>,<node>,...`, one ISO-8601 timestamp
//! (`YYYY-MM-DDTHH:MM:SS`) plus one float per node per row, timestamps
//! strictly increasing. Node geometry is optional and comes either from a
//! coordinates file (`node_id,x,y`, Euclidean distances) or an edge list
//! (`src,dst,dist`, undirected, each pair listed once). Pairs absent from an
//! edge list are treated as infinitely far apart.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use sthsep_core::TensorF;

use crate::error::{DataError, DataResult};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone)]
pub struct SpatioTemporalDataset {
    /// `[T, N]` observation matrix.
    pub values: TensorF,
    pub timestamps: Vec<String>,
    pub node_ids: Vec<String>,
    /// `[N, N]` pairwise distances when geometry was supplied. Symmetric,
    /// zero diagonal; `f64::INFINITY` marks pairs with no known distance.
    pub distances: Option<TensorF>,
}

#[derive(Debug, Clone, Default)]
pub enum GeoSource {
    #[default]
    None,
    Coords(PathBuf),
    Edges(PathBuf),
}

impl SpatioTemporalDataset {
    pub fn new(
        values: TensorF,
        timestamps: Vec<String>,
        node_ids: Vec<String>,
        distances: Option<TensorF>,
    ) -> DataResult<Self> {
        if values.rank() != 2 {
            return Err(DataError::Invalid(format!(
                "values must be a [T, N] matrix, got shape {:?}",
                values.shape()
            )));
        }
        let (t, n) = (values.shape()[0], values.shape()[1]);
        if t < 2 {
            return Err(DataError::Invalid(format!("need at least 2 steps, got {t}")));
        }
        if n < 1 {
            return Err(DataError::Invalid("need at least 1 node".into()));
        }
        if timestamps.len() != t {
            return Err(DataError::Invalid(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                t
            )));
        }
        if node_ids.len() != n {
            return Err(DataError::Invalid(format!(
                "{} node ids for {} columns",
                node_ids.len(),
                n
            )));
        }
        let mut prev: Option<NaiveDateTime> = None;
        for (i, ts) in timestamps.iter().enumerate() {
            let parsed = NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).map_err(|e| {
                DataError::Invalid(format!("timestamp {i} `{ts}`: {e}"))
            })?;
            if let Some(p) = prev {
                if parsed <= p {
                    return Err(DataError::Invalid(format!(
                        "timestamps must be strictly increasing at index {i} (`{ts}`)"
                    )));
                }
            }
            prev = Some(parsed);
        }
        if let Some(d) = &distances {
            validate_distances(d, n)?;
        }
        Ok(Self {
            values,
            timestamps,
            node_ids,
            distances,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.values.shape()[1]
    }

    /// Contiguous row range as a new dataset sharing node metadata.
    pub fn slice_steps(&self, start: usize, len: usize) -> DataResult<Self> {
        let n = self.num_nodes();
        if start + len > self.num_steps() {
            return Err(DataError::Invalid(format!(
                "slice [{start}, {}) out of range for {} steps",
                start + len,
                self.num_steps()
            )));
        }
        let data = self.values.data()[start * n..(start + len) * n].to_vec();
        Ok(Self {
            values: TensorF::new(vec![len, n], data)?,
            timestamps: self.timestamps[start..start + len].to_vec(),
            node_ids: self.node_ids.clone(),
            distances: self.distances.clone(),
        })
    }
}

fn validate_distances(d: &TensorF, n: usize) -> DataResult<()> {
    if d.shape() != [n, n] {
        return Err(DataError::Invalid(format!(
            "distance matrix shape {:?} does not match {n} nodes",
            d.shape()
        )));
    }
    for i in 0..n {
        if d.get2(i, i) != 0.0 {
            return Err(DataError::Invalid(format!(
                "distance diagonal must be zero, got {} at node {i}",
                d.get2(i, i)
            )));
        }
        for j in 0..i {
            if d.get2(i, j) != d.get2(j, i) {
                return Err(DataError::Invalid(format!(
                    "distances must be symmetric, differ at ({i}, {j})"
                )));
            }
            if d.get2(i, j) < 0.0 {
                return Err(DataError::Invalid(format!(
                    "negative distance at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn read_file(path: &Path) -> DataResult<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn csv_line(e: &csv::Error, fallback: u64) -> u64 {
    e.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Loads a values CSV plus optional geometry.
pub fn load_dataset(values_path: &Path, geo: &GeoSource) -> DataResult<SpatioTemporalDataset> {
    let text = read_file(values_path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(values_path, csv_line(&e, 1), e.to_string()))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(parse_err(
            values_path,
            1,
            "header must be `timestamp` followed by node ids",
        ));
    }
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    {
        let mut seen = HashMap::new();
        for (i, id) in node_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(parse_err(values_path, 1, format!("empty node id in column {}", i + 2)));
            }
            if let Some(first) = seen.insert(id.clone(), i) {
                return Err(parse_err(
                    values_path,
                    1,
                    format!("duplicate node id `{id}` (columns {} and {})", first + 2, i + 2),
                ));
            }
        }
    }

    let n = node_ids.len();
    let mut timestamps = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut prev: Option<NaiveDateTime> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(values_path, csv_line(&e, 0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != n + 1 {
            return Err(parse_err(
                values_path,
                line,
                format!("expected {} fields, got {}", n + 1, rec.len()),
            ));
        }
        let ts = rec.get(0).unwrap();
        let parsed = NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT)
            .map_err(|e| parse_err(values_path, line, format!("bad timestamp `{ts}`: {e}")))?;
        if let Some(p) = prev {
            if parsed <= p {
                return Err(parse_err(
                    values_path,
                    line,
                    format!("timestamps must be strictly increasing, got `{ts}`"),
                ));
            }
        }
        prev = Some(parsed);
        timestamps.push(ts.to_string());
        for (col, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(
                    values_path,
                    line,
                    format!("bad value `{}` for node `{}`", field, node_ids[col - 1]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    values_path,
                    line,
                    format!("non-finite value for node `{}`", node_ids[col - 1]),
                ));
            }
            data.push(v);
        }
    }
    let t = timestamps.len();
    if t < 2 {
        return Err(parse_err(values_path, 1, format!("need at least 2 data rows, got {t}")));
    }
    let values = TensorF::new(vec![t, n], data)?;

    let distances = match geo {
        GeoSource::None => None,
        GeoSource::Coords(p) => Some(load_coords(p, &node_ids)?),
        GeoSource::Edges(p) => Some(load_edges(p, &node_ids)?),
    };

    SpatioTemporalDataset::new(values, timestamps, node_ids, distances)
}

fn load_coords(path: &Path, node_ids: &[String]) -> DataResult<TensorF> {
    let text = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, csv_line(&e, 1), e.to_string()))?;
    if headers.len() != 3 || headers.get(0) != Some("node_id") {
        return Err(parse_err(path, 1, "header must be `node_id,x,y`"));
    }
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut coords: Vec<Option<(f64, f64)>> = vec![None; node_ids.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, csv_line(&e, 0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let id = rec.get(0).unwrap();
        let &node = index
            .get(id)
            .ok_or_else(|| parse_err(path, line, format!("unknown node id `{id}`")))?;
        if coords[node].is_some() {
            return Err(parse_err(path, line, format!("duplicate coordinates for `{id}`")));
        }
        let x: f64 = rec.get(1).unwrap().parse().map_err(|_| {
            parse_err(path, line, format!("bad x `{}`", rec.get(1).unwrap()))
        })?;
        let y: f64 = rec.get(2).unwrap().parse().map_err(|_| {
            parse_err(path, line, format!("bad y `{}`", rec.get(2).unwrap()))
        })?;
        coords[node] = Some((x, y));
    }
    for (i, c) in coords.iter().enumerate() {
        if c.is_none() {
            return Err(parse_err(
                path,
                0,
                format!("no coordinates for node `{}`", node_ids[i]),
            ));
        }
    }
    let n = node_ids.len();
    let mut d = TensorF::zeros(&[n, n]);
    for i in 0..n {
        let (xi, yi) = coords[i].unwrap();
        for j in 0..n {
            let (xj, yj) = coords[j].unwrap();
            d.set2(i, j, ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt());
        }
    }
    Ok(d)
}

fn load_edges(path: &Path, node_ids: &[String]) -> DataResult<TensorF> {
    let text = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, csv_line(&e, 1), e.to_string()))?;
    if headers.len() != 3 || headers.get(0) != Some("src") {
        return Err(parse_err(path, 1, "header must be `src,dst,dist`"));
    }
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = node_ids.len();
    let mut d = TensorF::filled(&[n, n], f64::INFINITY);
    for i in 0..n {
        d.set2(i, i, 0.0);
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, csv_line(&e, 0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let src_id = rec.get(0).unwrap();
        let dst_id = rec.get(1).unwrap();
        let &src = index
            .get(src_id)
            .ok_or_else(|| parse_err(path, line, format!("unknown node id `{src_id}`")))?;
        let &dst = index
            .get(dst_id)
            .ok_or_else(|| parse_err(path, line, format!("unknown node id `{dst_id}`")))?;
        if src == dst {
            return Err(parse_err(path, line, format!("self edge on `{src_id}`")));
        }
        let dist: f64 = rec.get(2).unwrap().parse().map_err(|_| {
            parse_err(path, line, format!("bad distance `{}`", rec.get(2).unwrap()))
        })?;
        if !dist.is_finite() || dist < 0.0 {
            return Err(parse_err(path, line, format!("distance must be finite and >= 0, got {dist}")));
        }
        if d.get2(src, dst).is_finite() {
            return Err(parse_err(
                path,
                line,
                format!("duplicate edge ({src_id}, {dst_id}); each pair must be listed once"),
            ));
        }
        d.set2(src, dst, dist);
        d.set2(dst, src, dist);
    }
    Ok(d)
}
