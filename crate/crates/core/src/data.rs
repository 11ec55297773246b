//! Datasets: IDX and CSV loading, synthetic Gaussian classes,
//! standardization and deterministic mini-batching.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::Matrix;
use crate::seeds::splitmix64;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Per-feature standardization statistics taken from a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    /// Multiplier applied after centering; 0 for zero-variance features.
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("dataset has no samples".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label, classes });
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            normalization: None,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
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

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Widens the class count (e.g. to match a network's output layer).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::Parameter(format!(
                "cannot shrink {} classes to {classes}",
                self.classes
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    /// Sample counts per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }

    /// New dataset holding the listed samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut ds = Dataset::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
        )?;
        ds.normalization = self.normalization.clone();
        Ok(ds)
    }

    /// Features and labels of one mini-batch.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn truncated(path: &Path, offset: usize, what: &str) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message: format!("file truncated while reading {what}"),
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0).ok_or_else(|| truncated(path, bytes.len(), "magic number"))?;
    if magic != expected {
        return Err(Error::format(
            path,
            "byte 0",
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

/// Parses an IDX image file and its label file. Pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    check_magic(images_path, &images, IDX_IMAGES_MAGIC)?;
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *d = read_u32(&images, off).ok_or_else(|| truncated(images_path, images.len(), "dimensions"))? as usize;
    }
    let [count, rows, cols] = dims;
    let pixels_per_image = rows * cols;
    let pixel_bytes = count * pixels_per_image;
    let body = &images[16..];
    if body.len() < pixel_bytes {
        return Err(truncated(
            images_path,
            images.len(),
            &format!("{pixel_bytes} pixel bytes ({} present)", body.len()),
        ));
    }
    if body.len() > pixel_bytes {
        return Err(Error::format(
            images_path,
            format!("byte {}", 16 + pixel_bytes),
            format!("{} trailing bytes after pixel data", body.len() - pixel_bytes),
        ));
    }

    check_magic(labels_path, &labels, IDX_LABELS_MAGIC)?;
    let label_count =
        read_u32(&labels, 4).ok_or_else(|| truncated(labels_path, labels.len(), "label count"))? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{} has {count} images but {} has {label_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() < count {
        return Err(truncated(
            labels_path,
            labels.len(),
            &format!("{count} labels ({} present)", label_body.len()),
        ));
    }
    if label_body.len() > count {
        return Err(Error::format(
            labels_path,
            format!("byte {}", 8 + count),
            format!("{} trailing bytes after labels", label_body.len() - count),
        ));
    }
    if count == 0 {
        return Err(Error::EmptyInput(format!("{} holds no images", images_path.display())));
    }

    let features: Vec<f64> = body.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = label_body.iter().map(|&y| y as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::new(count, pixels_per_image, features)?, labels, classes)
}

/// Writes an IDX image/label pair. Features must already lie in bytes/255.
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.dims() {
        return Err(Error::Parameter(format!(
            "{rows}x{cols} images for {} features",
            dataset.dims()
        )));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.features.data().len());
    for v in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.features.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, n] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(dataset.labels.iter().map(|&y| y as u8));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, images).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| Error::io(lp, e))
}

/// Reads a comma-separated numeric table. The label column must hold
/// non-negative integers; all other columns become features. A first row
/// with any non-numeric cell is treated as a header.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(path, format!("row {row}"), e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|cell| cell.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::format(
                path,
                format!("row {row}"),
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        if label_column >= w {
            return Err(Error::format(
                path,
                format!("row {row}"),
                format!("label column {label_column} but only {w} fields"),
            ));
        }
        for (col, (value, cell)) in parsed.iter().zip(record.iter()).enumerate() {
            let value = value.filter(|v| v.is_finite()).ok_or_else(|| {
                Error::format(path, format!("row {row}, column {col}"), format!("non-numeric cell {cell:?}"))
            })?;
            if col == label_column {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::format(
                        path,
                        format!("row {row}, column {col}"),
                        format!("label {cell:?} is not a non-negative integer"),
                    ));
                }
                labels.push(value as usize);
            } else {
                features.push(value);
            }
        }
    }
    let Some(width) = width else {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::new(labels.len(), width - 1, features)?, labels, classes)
}

/// Writes a dataset as CSV with a header row, the label at `label_column`.
/// Values use shortest round-trip formatting.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, label_column: usize) -> Result<()> {
    let path = path.as_ref();
    let d = dataset.dims();
    if label_column > d {
        return Err(Error::Parameter(format!("label column {label_column} beyond {d} features")));
    }
    let mut out = String::new();
    let header: Vec<String> = (0..=d)
        .map(|c| match c.cmp(&label_column) {
            std::cmp::Ordering::Equal => "label".to_string(),
            std::cmp::Ordering::Less => format!("x{c}"),
            std::cmp::Ordering::Greater => format!("x{}", c - 1),
        })
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (r, &y) in dataset.labels.iter().enumerate() {
        let mut cells: Vec<String> = dataset.features.row(r).iter().map(|v| format!("{v:?}")).collect();
        cells.insert(label_column, y.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Spherical unit-variance Gaussian classes centered at `separation * u_c`.
///
/// The first `min(classes, dims)` directions are orthonormalized, so those
/// centers sit `separation * sqrt(2)` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClasses {
    centers: Vec<Vec<f64>>,
    seed: u64,
}

impl GaussianClasses {
    pub fn new(classes: usize, dims: usize, separation: f64, seed: u64) -> Result<Self> {
        if classes == 0 || dims == 0 {
            return Err(Error::Parameter("classes and dims must be at least 1".into()));
        }
        if !(separation > 0.0) || !separation.is_finite() {
            return Err(Error::Parameter(format!("separation must be positive, got {separation}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
        while dirs.len() < classes {
            let mut v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            if dirs.len() < dims {
                for u in &dirs {
                    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (x, a) in v.iter_mut().zip(u) {
                        *x -= dot * a;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            dirs.push(v.into_iter().map(|x| x / norm).collect());
        }
        let centers = dirs
            .into_iter()
            .map(|u| u.into_iter().map(|x| x * separation).collect())
            .collect();
        Ok(GaussianClasses { centers, seed })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Draws `total` samples from sample stream `stream`, spread as evenly
    /// as possible over classes (class `c` gets one extra while
    /// `c < total % classes`). Samples are grouped by class.
    pub fn sample(&self, total: usize, stream: u64) -> Result<Dataset> {
        let classes = self.centers.len();
        let dims = self.centers[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))));
        let mut features = Vec::with_capacity(total * dims);
        let mut labels = Vec::with_capacity(total);
        for (c, center) in self.centers.iter().enumerate() {
            let n = total / classes + usize::from(c < total % classes);
            for _ in 0..n {
                for &m in center {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push(m + noise);
                }
                labels.push(c);
            }
        }
        Dataset::new(Matrix::new(labels.len(), dims, features)?, labels, classes)
    }
}

/// `per_class` samples of each of `classes` Gaussian classes.
pub fn synthetic_gaussians(
    classes: usize,
    dims: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Parameter("per_class must be at least 1".into()));
    }
    GaussianClasses::new(classes, dims, separation, seed)?.sample(classes * per_class, 0)
}

/// Standardizes every split with statistics of `train`. Features whose
/// training variance is zero map to 0 everywhere.
pub fn normalize(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let n = train.len() as f64;
    let d = train.dims();
    let mut mean = vec![0.0; d];
    for r in 0..train.len() {
        for (m, v) in mean.iter_mut().zip(train.features.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for r in 0..train.len() {
        for ((s, v), m) in var.iter_mut().zip(train.features.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n).sqrt();
            if sd <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                1.0 / sd
            }
        })
        .collect();
    let stats = Normalization { mean, scale };
    let apply = |ds: &Dataset| -> Result<Dataset> {
        if ds.dims() != d {
            return Err(Error::InputShape {
                expected: d,
                got: ds.dims(),
            });
        }
        let mut out = ds.clone();
        for row in out.features.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.scale) {
                *v = if *s == 0.0 { 0.0 } else { (*v - m) * s };
            }
        }
        out.normalization = Some(stats.clone());
        Ok(out)
    };
    let train_out = apply(train)?;
    let others_out = others.iter().map(apply).collect::<Result<Vec<_>>>()?;
    Ok((train_out, others_out))
}

/// Index batches covering `len` samples once, in an order fixed by
/// `(shuffle_seed, epoch)`. The last batch may be short.
pub fn batches(len: usize, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(shuffle_seed ^ splitmix64(epoch)));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per class, keeps `round(fraction * count)` samples chosen by a seeded
/// shuffle; returns the kept indices in ascending order. `fraction == 1`
/// keeps everything.
pub fn stratified_indices(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok((0..dataset.len()).collect());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let keep = (fraction * members.len() as f64).round() as usize;
        if keep == 0 {
            return Err(Error::Consistency(format!(
                "fraction {fraction} leaves no samples of class {c} ({} available)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        kept.extend_from_slice(&members[..keep]);
    }
    kept.sort_unstable();
    Ok(kept)
}

pub fn stratified_subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if fraction == 1.0 {
        return Ok(dataset.clone());
    }
    dataset.subset(&stratified_indices(dataset, fraction, seed)?)
}

/// Stratified train/test split; `train_fraction` of each class goes to train.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let train_idx = stratified_indices(dataset, train_fraction, seed)?;
    let mut in_train = vec![false; dataset.len()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let test_idx: Vec<usize> = (0..dataset.len()).filter(|&i| !in_train[i]).collect();
    if test_idx.is_empty() {
        return Err(Error::EmptyInput("split leaves an empty test set".into()));
    }
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_two_images() {
        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(2, 2, 2, &[0, 255, 128, 64, 1, 2, 3, 4])).unwrap();
        fs::write(&lp, idx_labels(&[3, 1])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), 4);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(&ds.features().row(0)[..2], &[0.0, 1.0]);
        assert!((ds.features().row(0)[2] - 0.50196).abs() < 1e-5);
        assert!((ds.features().row(0)[3] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn idx_bad_magic() {
        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let mut bytes = idx_images(1, 1, 1, &[9]);
        bytes[3] = 0x02;
        fs::write(&ip, bytes).unwrap();
        fs::write(&lp, idx_labels(&[0])).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "byte 0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_with_header_and_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "y,a,b\n1,0.5,0.2\n0,1.5,2\n2,3,4\n").unwrap();
        let ds = load_csv(&p, 0).unwrap();
        assert_eq!((ds.len(), ds.dims(), ds.classes()), (3, 2, 3));
        assert_eq!(ds.features().row(0), &[0.5, 0.2]);

        fs::write(&p, "1,0.5,0.2\n0,1.5\n").unwrap();
        match load_csv(&p, 0) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "row 2"),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "1,0.5\n0,abc\n").unwrap();
        assert!(matches!(load_csv(&p, 0), Err(Error::Format { .. })));
        fs::write(&p, "1.5,0.5\n").unwrap();
        assert!(matches!(load_csv(&p, 0), Err(Error::Format { .. })));
        fs::write(&p, "").unwrap();
        assert!(matches!(load_csv(&p, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let ds = synthetic_gaussians(3, 4, 5, 2.0, 1).unwrap();
        write_csv(&ds, &p, 2).unwrap();
        let back = load_csv(&p, 2).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.features().data().iter().zip(ds.features().data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussians_are_deterministic_and_balanced() {
        let a = synthetic_gaussians(3, 5, 7, 4.0, 9).unwrap();
        let b = synthetic_gaussians(3, 5, 7, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_histogram(), vec![7, 7, 7]);
        let c = synthetic_gaussians(3, 5, 7, 4.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_centers_have_requested_norm() {
        let g = GaussianClasses::new(4, 3, 6.0, 2).unwrap();
        for c in g.centers() {
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_well_separated_classes_are_linearly_separable() {
        let ds = synthetic_gaussians(2, 2, 500, 10.0, 3).unwrap();
        // Perceptron oracle.
        let mut w = [0.0; 3];
        for _ in 0..50 {
            for r in 0..ds.len() {
                let x = ds.features().row(r);
                let y = if ds.labels()[r] == 1 { 1.0 } else { -1.0 };
                if y * (w[0] * x[0] + w[1] * x[1] + w[2]) <= 0.0 {
                    w[0] += y * x[0];
                    w[1] += y * x[1];
                    w[2] += y;
                }
            }
        }
        let correct = (0..ds.len())
            .filter(|&r| {
                let x = ds.features().row(r);
                let s = w[0] * x[0] + w[1] * x[1] + w[2];
                (s > 0.0) == (ds.labels()[r] == 1)
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 > 0.99);
    }

    #[test]
    fn normalize_uses_train_statistics() {
        let train = Dataset::new(
            Matrix::new(4, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]).unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let test = Dataset::new(Matrix::new(1, 2, vec![2.5, 7.0]).unwrap(), vec![0], 2).unwrap();
        let (tr, others) = normalize(&train, &[test]).unwrap();
        let col0: Vec<f64> = (0..4).map(|r| tr.features().row(r)[0]).collect();
        let mean = col0.iter().sum::<f64>() / 4.0;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        assert!((0..4).all(|r| tr.features().row(r)[1] == 0.0));
        // Test split centered by the train mean (2.5), not its own.
        assert_eq!(others[0].features().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let b = batches(10, 3, 4, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, batches(10, 3, 4, 0).unwrap());
        assert_ne!(b, batches(10, 3, 4, 1).unwrap());
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(batches(10, 0, 0, 0).is_err());
    }

    #[test]
    fn stratified_fraction_per_class() {
        let ds = synthetic_gaussians(3, 2, 50, 1.0, 0).unwrap();
        let sub = stratified_subsample(&ds, 0.4, 5).unwrap();
        for &count in &sub.class_histogram() {
            assert!((count as i64 - 20).abs() <= 1);
        }
        assert_eq!(stratified_subsample(&ds, 1.0, 5).unwrap(), ds);
        assert!(matches!(stratified_subsample(&ds, 0.005, 5), Err(Error::Consistency(_))));
    }

    #[test]
    fn split_partitions_samples() {
        let ds = synthetic_gaussians(2, 2, 10, 1.0, 0).unwrap();
        let (tr, te) = split(&ds, 0.8, 1).unwrap();
        assert_eq!(tr.len() + te.len(), 20);
        assert_eq!(tr.class_histogram(), vec![8, 8]);
    }
}
