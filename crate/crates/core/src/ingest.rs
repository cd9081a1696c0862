//! File readers/writers, normalization, HVG filtering and neighbor graphs.
//!
//! All files are comma-separated UTF-8 with a header row:
//!
//! * expression: `gene_id,<spot ids...>`, one gene per row;
//! * coordinates: `spot_id,x,y`;
//! * labels: `spot_id,label`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{first_duplicate, AdjacencyGraph, ExpressionMatrix, SpatialCoords};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: Option<usize>, column: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut out = Vec::new();
    for (k, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, Some(k + 1), None, e.to_string()))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(parse_err(path, None, None, "file is empty"));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, column: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, Some(line), Some(column), format!("`{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            Some(line),
            Some(column),
            format!("`{cell}` is not finite"),
        ));
    }
    Ok(v)
}

pub fn read_expression(path: impl AsRef<Path>) -> Result<ExpressionMatrix> {
    let path = path.as_ref();
    let rows = records(path)?;
    let header = &rows[0];
    if header.len() < 3 {
        return Err(parse_err(
            path,
            Some(1),
            None,
            "header needs a gene column and at least 2 spots",
        ));
    }
    let spot_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if let Some(dup) = first_duplicate(&spot_ids) {
        return Err(parse_err(path, Some(1), None, format!("duplicate spot id `{dup}`")));
    }
    let n = spot_ids.len();
    let mut gene_ids = Vec::with_capacity(rows.len() - 1);
    let mut data = Vec::with_capacity((rows.len() - 1) * n);
    for (k, rec) in rows.iter().enumerate().skip(1) {
        let line = k + 1;
        if rec.len() != n + 1 {
            return Err(parse_err(
                path,
                Some(line),
                None,
                format!("expected {} fields, found {}", n + 1, rec.len()),
            ));
        }
        gene_ids.push(rec[0].trim().to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            data.push(parse_f64(path, line, c + 1, cell)?);
        }
    }
    if let Some(dup) = first_duplicate(&gene_ids) {
        return Err(parse_err(path, None, Some(1), format!("duplicate gene id `{dup}`")));
    }
    let p = gene_ids.len();
    let values = DMatrix::from_row_slice(p, n, &data);
    ExpressionMatrix::new(values, gene_ids, spot_ids)
}

/// Write atomically: to a sibling temp file, then rename.
pub fn write_atomic(path: impl AsRef<Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_err(path)(e));
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Floats use Rust's shortest round-trip formatting, so reading back is exact.
pub fn write_expression(path: impl AsRef<Path>, x: &ExpressionMatrix) -> Result<()> {
    write_atomic(path, |w| {
        write!(w, "gene_id")?;
        for s in x.spot_ids() {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
        let v = x.values();
        for (j, g) in x.gene_ids().iter().enumerate() {
            write!(w, "{g}")?;
            for i in 0..x.n_spots() {
                write!(w, ",{}", v[(j, i)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Read a two-value-per-spot file and align it to `spot_ids`.
fn read_keyed<T>(
    path: &Path,
    spot_ids: &[String],
    width: usize,
    parse: impl Fn(&[&str], usize) -> Result<T>,
) -> Result<Vec<T>> {
    let rows = records(path)?;
    let mut by_id: HashMap<String, T> = HashMap::with_capacity(rows.len());
    for (k, rec) in rows.iter().enumerate().skip(1) {
        let line = k + 1;
        if rec.len() != width {
            return Err(parse_err(
                path,
                Some(line),
                None,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        let cells: Vec<&str> = rec.iter().skip(1).collect();
        let value = parse(&cells, line)?;
        if by_id.insert(id.clone(), value).is_some() {
            return Err(parse_err(
                path,
                Some(line),
                Some(1),
                format!("duplicate spot id `{id}`"),
            ));
        }
    }
    let missing: Vec<&str> = spot_ids
        .iter()
        .filter(|s| !by_id.contains_key(s.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(parse_err(
            path,
            None,
            None,
            format!("missing spot ids: {}", preview(&missing)),
        ));
    }
    let wanted: HashSet<&str> = spot_ids.iter().map(String::as_str).collect();
    let mut extra: Vec<&str> = by_id
        .keys()
        .map(String::as_str)
        .filter(|s| !wanted.contains(s))
        .collect();
    if !extra.is_empty() {
        extra.sort_unstable();
        return Err(parse_err(
            path,
            None,
            None,
            format!("unknown spot ids: {}", preview(&extra)),
        ));
    }
    Ok(spot_ids
        .iter()
        .map(|s| by_id.remove(s).expect("checked above"))
        .collect())
}

fn preview(ids: &[&str]) -> String {
    const SHOW: usize = 10;
    let mut s = ids.iter().take(SHOW).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        s.push_str(&format!(" and {} more", ids.len() - SHOW));
    }
    s
}

/// Coordinates joined to `spot_ids` by ID; row order in the file is irrelevant.
pub fn read_coords(path: impl AsRef<Path>, spot_ids: &[String]) -> Result<SpatialCoords> {
    let path = path.as_ref();
    let points = read_keyed(path, spot_ids, 3, |cells, line| {
        Ok([parse_f64(path, line, 2, cells[0])?, parse_f64(path, line, 3, cells[1])?])
    })?;
    SpatialCoords::new(points)
}

pub fn write_coords(path: impl AsRef<Path>, spot_ids: &[String], coords: &SpatialCoords) -> Result<()> {
    if spot_ids.len() != coords.len() {
        return Err(Error::InvalidInput("coordinate count differs from spot count".into()));
    }
    write_atomic(path, |w| {
        writeln!(w, "spot_id,x,y")?;
        for (s, [x, y]) in spot_ids.iter().zip(coords.points()) {
            writeln!(w, "{s},{x},{y}")?;
        }
        Ok(())
    })
}

/// Labels as strings, aligned to `spot_ids`.
pub fn read_labels(path: impl AsRef<Path>, spot_ids: &[String]) -> Result<Vec<String>> {
    read_keyed(path.as_ref(), spot_ids, 2, |cells, _| Ok(cells[0].trim().to_string()))
}

/// Labels in file order, with their spot IDs.
pub fn read_labels_unaligned(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<String>)> {
    let path = path.as_ref();
    let rows = records(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rows.iter().enumerate().skip(1) {
        if rec.len() != 2 {
            return Err(parse_err(
                path,
                Some(k + 1),
                None,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        ids.push(rec[0].trim().to_string());
        labels.push(rec[1].trim().to_string());
    }
    if let Some(dup) = first_duplicate(&ids) {
        return Err(parse_err(path, None, Some(1), format!("duplicate spot id `{dup}`")));
    }
    Ok((ids, labels))
}

pub fn write_labels<L: fmt::Display>(path: impl AsRef<Path>, spot_ids: &[String], labels: &[L]) -> Result<()> {
    if spot_ids.len() != labels.len() {
        return Err(Error::InvalidInput("label count differs from spot count".into()));
    }
    write_atomic(path, |w| {
        writeln!(w, "spot_id,label")?;
        for (s, l) in spot_ids.iter().zip(labels) {
            writeln!(w, "{s},{l}")?;
        }
        Ok(())
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-spot scale `median(s) / s_i`, with `s_i` the column sums.
pub fn size_factors(x: &ExpressionMatrix) -> Result<Vec<f64>> {
    let sums: Vec<f64> = x.values().column_iter().map(|c| c.sum()).collect();
    if let Some(i) = sums.iter().position(|&s| s == 0.0) {
        return Err(Error::InvalidInput(format!(
            "spot `{}` has zero total count",
            x.spot_ids()[i]
        )));
    }
    let med = median(&mut sums.clone());
    Ok(sums.iter().map(|s| med / s).collect())
}

/// `x' = ln(1 + x · median(s) / s_i)` with `s_i` the column sums.
pub fn log_normalize(x: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let v = x.values();
    if let Some(((j, i), val)) = v
        .iter()
        .enumerate()
        .map(|(k, val)| ((k % v.nrows(), k / v.nrows()), val))
        .find(|(_, &val)| val < 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "log-normalization needs non-negative counts; gene `{}` spot `{}` is {val}",
            x.gene_ids()[j],
            x.spot_ids()[i]
        )));
    }
    let factors = size_factors(x)?;
    let mut out = v.clone();
    for (mut col, f) in out.column_iter_mut().zip(factors) {
        col.apply(|e| *e = (*e * f).ln_1p());
    }
    ExpressionMatrix::new(out, x.gene_ids().to_vec(), x.spot_ids().to_vec())
}

/// Keep the `n_hvg` rows with the largest sample variance, in original order.
pub fn select_hvg(x: &ExpressionMatrix, n_hvg: usize) -> Result<ExpressionMatrix> {
    let p = x.n_genes();
    if n_hvg > p || n_hvg == 0 {
        return Err(Error::config(
            "ingest.n_hvg",
            format!("must be in 1..={p}, got {n_hvg}"),
        ));
    }
    let v = x.values();
    let n = x.n_spots() as f64;
    let var: Vec<f64> = v
        .row_iter()
        .map(|r| {
            let m = r.sum() / n;
            r.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    // Stable sort keeps earlier rows ahead on ties.
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]));
    let mut keep = order[..n_hvg].to_vec();
    keep.sort_unstable();
    let values = v.select_rows(keep.iter());
    let genes = keep.iter().map(|&j| x.gene_ids()[j].clone()).collect();
    ExpressionMatrix::new(values, genes, x.spot_ids().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NeighborRule {
    /// Rook adjacency on integer grid positions.
    Square4,
    /// Rook plus diagonals.
    Square8,
    /// Hexagonal neighborhood with odd rows (by `y`) shifted right by half a cell.
    Triangle6,
    /// Euclidean distance strictly below the threshold.
    Radius(f64),
    /// Mutual k-nearest neighbors; distance ties go to the smaller index.
    Knn(usize),
}

impl fmt::Display for NeighborRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborRule::Square4 => f.write_str("square4"),
            NeighborRule::Square8 => f.write_str("square8"),
            NeighborRule::Triangle6 => f.write_str("triangle6"),
            NeighborRule::Radius(c) => write!(f, "radius:{c}"),
            NeighborRule::Knn(k) => write!(f, "knn:{k}"),
        }
    }
}

impl FromStr for NeighborRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (kind, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a.trim(), Some(b.trim())));
        match (kind, arg) {
            ("square4", None) => Ok(NeighborRule::Square4),
            ("square8", None) => Ok(NeighborRule::Square8),
            ("triangle6", None) => Ok(NeighborRule::Triangle6),
            ("radius", Some(a)) => {
                let c: f64 = a.parse().map_err(|e| format!("bad radius `{a}`: {e}"))?;
                if !(c.is_finite() && c > 0.0) {
                    return Err(format!("radius must be > 0, got {c}"));
                }
                Ok(NeighborRule::Radius(c))
            }
            ("knn", Some(a)) => {
                let k: usize = a.parse().map_err(|e| format!("bad k `{a}`: {e}"))?;
                if k == 0 {
                    return Err("knn needs k >= 1".into());
                }
                Ok(NeighborRule::Knn(k))
            }
            _ => Err(format!(
                "unknown neighbor rule `{s}` (expected square4, square8, triangle6, radius:<c0> or knn:<k>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub normalize: bool,
    pub n_hvg: Option<usize>,
    pub neighbor_rule: NeighborRule,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            normalize: false,
            n_hvg: None,
            neighbor_rule: NeighborRule::Square4,
        }
    }
}

impl IngestConfig {
    /// Normalize and filter as configured.
    pub fn preprocess(&self, x: ExpressionMatrix) -> Result<ExpressionMatrix> {
        let x = if self.normalize { log_normalize(&x)? } else { x };
        match self.n_hvg {
            Some(k) if k < x.n_genes() => select_hvg(&x, k),
            Some(k) if k > x.n_genes() => Err(Error::config(
                "ingest.n_hvg",
                format!("{k} exceeds the {} genes available", x.n_genes()),
            )),
            _ => Ok(x),
        }
    }
}

fn grid_positions(coords: &SpatialCoords) -> Result<Vec<(i64, i64)>> {
    coords
        .points()
        .iter()
        .enumerate()
        .map(|(i, &[x, y])| {
            if x.fract() != 0.0 || y.fract() != 0.0 || x.abs() > 1e15 || y.abs() > 1e15 {
                Err(Error::InvalidInput(format!(
                    "lattice rules need integer coordinates; spot {} is at ({x}, {y})",
                    i + 1
                )))
            } else {
                Ok((x as i64, y as i64))
            }
        })
        .collect()
}

fn lattice_edges(coords: &SpatialCoords, offsets: impl Fn(i64) -> Vec<(i64, i64)>) -> Result<Vec<(usize, usize)>> {
    let pos = grid_positions(coords)?;
    let mut at: HashMap<(i64, i64), usize> = HashMap::with_capacity(pos.len());
    for (i, &p) in pos.iter().enumerate() {
        if at.insert(p, i).is_some() {
            return Err(Error::InvalidInput(format!("two spots share grid position {p:?}")));
        }
    }
    let mut edges = Vec::new();
    for (i, &(x, y)) in pos.iter().enumerate() {
        for (dx, dy) in offsets(y) {
            if let Some(&j) = at.get(&(x + dx, y + dy)) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    Ok(edges)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn build_graph(coords: &SpatialCoords, rule: NeighborRule) -> Result<AdjacencyGraph> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::InvalidInput("no coordinates".into()));
    }
    let pts = coords.points();
    let edges = match rule {
        NeighborRule::Square4 => lattice_edges(coords, |_| vec![(1, 0), (-1, 0), (0, 1), (0, -1)])?,
        NeighborRule::Square8 => lattice_edges(coords, |_| {
            let mut v = Vec::with_capacity(8);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if (dx, dy) != (0, 0) {
                        v.push((dx, dy));
                    }
                }
            }
            v
        })?,
        NeighborRule::Triangle6 => lattice_edges(coords, |y| {
            // Odd rows sit half a cell to the right of even rows.
            let s = if y.rem_euclid(2) == 1 { 0 } else { -1 };
            vec![(1, 0), (-1, 0), (s, 1), (s + 1, 1), (s, -1), (s + 1, -1)]
        })?,
        NeighborRule::Radius(c0) => {
            if !(c0.is_finite() && c0 > 0.0) {
                return Err(Error::config("ingest.neighbor_rule", "radius must be > 0"));
            }
            let c2 = c0 * c0;
            let mut e = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if dist2(pts[i], pts[j]) < c2 {
                        e.push((i, j));
                    }
                }
            }
            e
        }
        NeighborRule::Knn(k) => {
            if k == 0 {
                return Err(Error::config("ingest.neighbor_rule", "knn needs k >= 1"));
            }
            let near: Vec<HashSet<usize>> = (0..n)
                .map(|i| {
                    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                    others.sort_by(|&a, &b| dist2(pts[i], pts[a]).total_cmp(&dist2(pts[i], pts[b])).then(a.cmp(&b)));
                    others.truncate(k);
                    others.into_iter().collect()
                })
                .collect();
            let mut e = Vec::new();
            for i in 0..n {
                for &j in &near[i] {
                    if i < j && near[j].contains(&i) {
                        e.push((i, j));
                    }
                }
            }
            e
        }
    };
    AdjacencyGraph::new(n, edges)
}

/// Integer coordinates of an `m × m` square lattice, row-major.
pub fn square_lattice(m: usize) -> SpatialCoords {
    let pts = (0..m * m).map(|k| [(k % m) as f64, (k / m) as f64]).collect();
    SpatialCoords::new(pts).expect("finite lattice coordinates")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_small_matrix() {
        let f = file_with("gene,s1,s2\ng1,1,2\ng2,3,4\n");
        let x = read_expression(f.path()).unwrap();
        assert_eq!(x.values(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x.gene_ids(), ["g1", "g2"]);
        assert_eq!(x.spot_ids(), ["s1", "s2"]);
    }

    #[test]
    fn expression_errors_name_location() {
        let dup = read_expression(file_with("gene,s1,s1\ng1,1,2\n").path()).unwrap_err();
        assert!(dup.to_string().contains("s1"), "{dup}");
        let bad = read_expression(file_with("gene,s1,s2\ng1,1,x\n").path()).unwrap_err();
        assert!(bad.to_string().contains("line 2, column 3"), "{bad}");
        let ragged = read_expression(file_with("gene,s1,s2\ng1,1\n").path()).unwrap_err();
        assert!(ragged.to_string().contains("line 2"), "{ragged}");
        assert!(matches!(read_expression("/nonexistent/x.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn coords_join_by_id() {
        let ids = vec!["s1".to_string(), "s2".to_string()];
        let a = read_coords(file_with("spot_id,x,y\ns1,0,0\ns2,1,0\n").path(), &ids).unwrap();
        let b = read_coords(file_with("spot_id,x,y\ns2,1,0\ns1,0,0\n").path(), &ids).unwrap();
        assert_eq!(a.points(), &[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(a, b);
        let missing = read_coords(file_with("spot_id,x,y\ns1,0,0\n").path(), &ids).unwrap_err();
        assert!(missing.to_string().contains("s2"));
    }

    #[test]
    fn normalize_single_column_is_log1p() {
        let x = ExpressionMatrix::new(
            DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 3.0, 0.0, 1.0, 3.0]),
            vec!["a".into(), "b".into(), "c".into()],
            vec!["s".into(), "t".into()],
        )
        .unwrap();
        let y = log_normalize(&x).unwrap();
        assert_eq!(y.values()[(0, 0)], 0.0);
        assert_eq!(y.values()[(2, 1)], 3f64.ln_1p());
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let neg = ExpressionMatrix::with_generated_ids(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        assert!(log_normalize(&neg).is_err());
        let zero = ExpressionMatrix::with_generated_ids(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap();
        assert!(log_normalize(&zero).is_err());
    }

    #[test]
    fn hvg_keeps_top_rows_in_order() {
        // Row variances 0, 5-ish, 1-ish.
        let v = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 5.0, -5.0, 0.0, 1.0, -1.0]);
        let x = ExpressionMatrix::with_generated_ids(v).unwrap();
        let y = select_hvg(&x, 2).unwrap();
        assert_eq!(y.gene_ids(), ["g2", "g3"]);
        assert_eq!(select_hvg(&x, 3).unwrap(), x);
        assert!(select_hvg(&x, 4).is_err());
        let tie = ExpressionMatrix::with_generated_ids(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(select_hvg(&tie, 1).unwrap().gene_ids(), ["g1"]);
    }

    #[test]
    fn unit_square_graphs() {
        let c = square_lattice(2);
        assert_eq!(build_graph(&c, NeighborRule::Square4).unwrap().n_edges(), 4);
        assert_eq!(build_graph(&c, NeighborRule::Square8).unwrap().n_edges(), 6);
        assert_eq!(build_graph(&c, NeighborRule::Radius(1.5)).unwrap().n_edges(), 6);
        assert_eq!(build_graph(&c, NeighborRule::Radius(1.0)).unwrap().n_edges(), 0);
    }

    #[test]
    fn triangle_interior_degree_is_six() {
        let g = build_graph(&square_lattice(5), NeighborRule::Triangle6).unwrap();
        assert_eq!(g.degree(2 * 5 + 2), 6);
        assert_eq!(g.degree(5 + 2), 6);
    }

    #[test]
    fn lattice_rules_reject_fractional() {
        let c = SpatialCoords::new(vec![[0.5, 0.0], [1.0, 0.0]]).unwrap();
        assert!(build_graph(&c, NeighborRule::Square4).is_err());
    }

    #[test]
    fn rule_parsing_round_trips() {
        for r in ["square4", "square8", "triangle6", "radius:1.5", "knn:6"] {
            assert_eq!(r.parse::<NeighborRule>().unwrap().to_string(), r);
        }
        assert!("radius:0".parse::<NeighborRule>().is_err());
        assert!("knn:0".parse::<NeighborRule>().is_err());
        assert!("hex".parse::<NeighborRule>().is_err());
    }

    fn points() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((0.0..10.0f64, 0.0..10.0f64).prop_map(|(a, b)| [a, b]), 1..60)
    }

    proptest! {
        #[test]
        fn knn_graph_is_symmetric_and_loop_free(pts in points(), k in 1usize..8) {
            let c = SpatialCoords::new(pts).unwrap();
            let g = build_graph(&c, NeighborRule::Knn(k)).unwrap();
            for i in 0..g.n() {
                prop_assert!(!g.has_edge(i, i));
                prop_assert!(g.degree(i) <= k);
                for &j in g.neighbors(i) {
                    prop_assert!(g.has_edge(j, i));
                }
            }
        }

        #[test]
        fn radius_graph_matches_pair_scan(pts in points(), c0 in 0.1..4.0f64) {
            let c = SpatialCoords::new(pts.clone()).unwrap();
            let g = build_graph(&c, NeighborRule::Radius(c0)).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                    prop_assert_eq!(g.has_edge(i, j), i != j && d < c0);
                }
            }
        }

        #[test]
        fn size_factors_ignore_global_scale(cells in prop::collection::vec(0.0..20.0f64, 12), scale in 0.1..10.0f64) {
            let mut v = DMatrix::from_vec(3, 4, cells);
            v.row_mut(0).add_scalar_mut(1.0);
            let a = ExpressionMatrix::with_generated_ids(v.clone()).unwrap();
            let b = ExpressionMatrix::with_generated_ids(v * scale).unwrap();
            for (x, y) in size_factors(&a).unwrap().iter().zip(size_factors(&b).unwrap()) {
                prop_assert!((x - y).abs() <= 1e-12 * x);
            }
        }

        #[test]
        fn normalize_matches_scalar_loop(cells in prop::collection::vec(0.0..50.0f64, 50)) {
            let mut v = DMatrix::from_vec(10, 5, cells);
            v.row_mut(0).add_scalar_mut(1.0);
            let x = ExpressionMatrix::with_generated_ids(v.clone()).unwrap();
            let got = log_normalize(&x).unwrap();
            let mut sums = [0.0; 5];
            for i in 0..5 {
                for j in 0..10 {
                    sums[i] += v[(j, i)];
                }
            }
            let mut sorted = sums;
            sorted.sort_by(f64::total_cmp);
            let med = sorted[2];
            for i in 0..5 {
                for j in 0..10 {
                    let expect = (1.0 + v[(j, i)] * med / sums[i]).ln();
                    prop_assert!((got.values()[(j, i)] - expect).abs() <= 1e-12);
                }
            }
        }
    }
}
