use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{Domain, SeedStream};
use crate::Tensor;

/// Scale applied to the unit-norm class means of [`gen_blobs`].
pub const BLOB_RADIUS: f64 = 4.0;

/// Feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidDimension("dataset needs at least one feature".into()));
        }
        if class_count == 0 {
            return Err(Error::InvalidDimension("dataset needs at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Label { label: bad, classes: class_count });
        }
        Ok(Self { features, labels, class_count })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Writes a header row (`x0..x{d-1},label`) followed by one row per sample.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header: Vec<String> = (0..self.dims()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_io)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Class means are picked one at a time as the candidate farthest from the
/// means chosen so far.
const MEAN_CANDIDATES: usize = 32;

fn sphere_point(stream: &mut SeedStream, dims: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dims).map(|_| stream.rng_mut().sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x *= BLOB_RADIUS / norm);
    } else {
        v[0] = BLOB_RADIUS;
    }
    v
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Isotropic Gaussian clusters, one per class, with well-separated means on
/// the sphere of radius [`BLOB_RADIUS`]. Rows are grouped by class.
pub fn gen_blobs(class_count: usize, dims: usize, samples_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if class_count == 0 || dims == 0 || samples_per_class == 0 {
        return Err(Error::InvalidDimension("blob counts must be at least 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidDimension(format!("spread {spread} must be finite and non-negative")));
    }
    let mut means_stream = SeedStream::new(seed, Domain::Blobs, 0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..MEAN_CANDIDATES {
            let v = sphere_point(&mut means_stream, dims);
            let gap = means.iter().map(|m| sq_dist(m, &v)).fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, v));
            }
        }
        means.push(best.expect("at least one candidate").1);
    }

    let mut noise = SeedStream::new(seed, Domain::Blobs, 1);
    let n = class_count * samples_per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let z: f64 = noise.rng_mut().sample(StandardNormal);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::from_vec(n, dims, data)?, labels, class_count)
}

/// Reads a headered numeric CSV. `label_column` names the integer label
/// column; the remaining columns become features in file order. Row numbers
/// in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(csv_io)?;
    let headers = rdr.headers().map_err(csv_io)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Parse { row: 0, message: format!("no column named `{label_column}`") })?;
    let width = headers.len();
    if width < 2 {
        return Err(Error::Parse { row: 0, message: "need a label column and at least one feature".into() });
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if rec.len() != width {
            return Err(Error::Parse { row, message: format!("{} fields, header has {width}", rec.len()) });
        }
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                let y: usize = cell.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("label `{cell}` is not a non-negative integer"),
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("cell `{cell}` in column {} is not numeric", j + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, message: format!("cell `{cell}` is not finite") });
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { row: 0, message: "no data rows".into() });
    }
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Tensor::from_vec(labels.len(), width - 1, data)?, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn zero_spread_collapses_onto_means() {
        let ds = gen_blobs(3, 4, 5, 0.0, 1).unwrap();
        for c in 0..3 {
            let first = ds.features().row(c * 5).to_vec();
            let norm = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - BLOB_RADIUS).abs() < 1e-12);
            for i in 0..5 {
                assert_eq!(ds.features().row(c * 5 + i), &first[..]);
            }
        }
    }

    #[test]
    fn blobs_deterministic() {
        assert_eq!(gen_blobs(4, 8, 10, 1.0, 3).unwrap(), gen_blobs(4, 8, 10, 1.0, 3).unwrap());
        assert_ne!(gen_blobs(4, 8, 10, 1.0, 3).unwrap(), gen_blobs(4, 8, 10, 1.0, 4).unwrap());
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_basic() {
        let f = write("a,b,label\n1,2,0\n3,4,1\n5,6,1\n7.5,-8,0\n");
        let ds = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.class_count(), 2);
        assert_eq!(ds.features().row(3), &[7.5, -8.0]);
    }

    #[test]
    fn csv_label_column_in_middle() {
        let f = write("a,y,b\n1,2,3\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.features().row(0), &[1.0, 3.0]);
        assert_eq!(ds.labels(), &[2]);
        assert_eq!(ds.class_count(), 3);
    }

    #[test]
    fn csv_non_numeric_reports_row() {
        let f = write("a,b,label\n1,2,0\n3,4,1\n5,oops,1\n");
        match load_csv(f.path(), "label") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_reports_row() {
        let f = write("a,b,label\n1,2,0\n3,1\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_blobs(3, 5, 20, 0.7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let back = load_csv(&p, "label").unwrap();
        assert_eq!(back.labels(), ds.labels());
        let diff = back.features().max_abs_diff(ds.features()).unwrap();
        assert!(diff <= 1e-12);
    }
}
