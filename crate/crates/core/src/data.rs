//! Datasets: synthetic generators, IDX/CSV loaders, symmetric label noise
//! and unit-ball normalisation.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    /// Labels in {-1, +1}.
    Binary,
    /// Labels in `0..num_classes`.
    Multiclass { num_classes: usize },
}

impl LabelKind {
    pub fn num_classes(self) -> usize {
        match self {
            LabelKind::Binary => 2,
            LabelKind::Multiclass { num_classes } => num_classes,
        }
    }

    pub fn is_valid(self, label: i32) -> bool {
        match self {
            LabelKind::Binary => label == 1 || label == -1,
            LabelKind::Multiclass { num_classes } => label >= 0 && (label as usize) < num_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NormState {
    Raw,
    /// Rows were divided by `scale` (1 when already inside the ball).
    UnitBall {
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Gaussians {
        n_per_class: usize,
        d: usize,
        separation: f64,
        seed: u64,
        bayes_accuracy: f64,
    },
    OutlierGaussians {
        n_per_class: usize,
        d: usize,
        separation: f64,
        outlier_frac: f64,
        outlier_scale: f64,
        seed: u64,
        /// Bayes accuracy of the clean mixture (outliers excluded).
        bayes_accuracy: f64,
        outlier_indices: Vec<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
    InMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub rate: f64,
    pub num_classes: usize,
    pub seed: u64,
    /// Fraction of labels that actually differ from the clean ones.
    pub realized_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    /// Half-open row range when the dataset is a slice of `source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseRecord>,
}

impl Provenance {
    fn new(source: Source) -> Self {
        Provenance {
            source,
            rows: None,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<i32>,
    kind: LabelKind,
    clean_labels: Option<Vec<i32>>,
    norm_state: NormState,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<i32>, kind: LabelKind) -> Result<Self> {
        Self::with_source(features, labels, kind, Source::InMemory)
    }

    fn with_source(
        features: Array2<f64>,
        labels: Vec<i32>,
        kind: LabelKind,
        source: Source,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::domain(format!(
                "dataset must be non-empty, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{n} labels"), labels.len()));
        }
        if let LabelKind::Multiclass { num_classes } = kind {
            if num_classes < 2 {
                return Err(Error::domain("need at least two classes"));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| !kind.is_valid(y)) {
            return Err(Error::domain(format!(
                "label {y} at row {i} invalid for {kind:?}"
            )));
        }
        Ok(Dataset {
            features: features.as_standard_layout().into_owned(),
            labels,
            kind,
            clean_labels: None,
            norm_state: NormState::Raw,
            provenance: Provenance::new(source),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.kind.num_classes()
    }

    pub fn clean_labels(&self) -> Option<&[i32]> {
        self.clean_labels.as_deref()
    }

    pub fn norm_state(&self) -> NormState {
        self.norm_state
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Rows flagged as planted outliers, if the dataset has any.
    pub fn outlier_indices(&self) -> &[usize] {
        match &self.provenance.source {
            Source::OutlierGaussians {
                outlier_indices, ..
            } if self.provenance.rows.is_none() => outlier_indices,
            _ => &[],
        }
    }

    /// Fraction of labels differing from the retained clean labels.
    pub fn flipped_fraction(&self) -> f64 {
        match &self.clean_labels {
            None => 0.0,
            Some(clean) => {
                let flips = clean
                    .iter()
                    .zip(&self.labels)
                    .filter(|(a, b)| a != b)
                    .count();
                flips as f64 / self.len() as f64
            }
        }
    }

    /// Drops any injected noise, returning the labels to their clean values.
    pub fn restore_clean(&self) -> Dataset {
        let mut out = self.clone();
        if let Some(clean) = out.clean_labels.take() {
            out.labels = clean;
        }
        out.provenance.noise = None;
        out
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.len() {
            return Err(Error::domain(format!(
                "row range {start}..{end} invalid for {} rows",
                self.len()
            )));
        }
        let (base_start, _) = self.provenance.rows.unwrap_or((0, self.len()));
        Ok(Dataset {
            features: self.features.slice(ndarray::s![start..end, ..]).to_owned(),
            labels: self.labels[start..end].to_vec(),
            kind: self.kind,
            clean_labels: self.clean_labels.as_ref().map(|c| c[start..end].to_vec()),
            norm_state: self.norm_state,
            provenance: Provenance {
                rows: Some((base_start + start, base_start + end)),
                ..self.provenance.clone()
            },
        })
    }

    /// Keeps the rows whose index is not listed in `drop` (which must be sorted).
    pub fn without_rows(&self, drop: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|i| drop.binary_search(i).is_err())
            .collect();
        let features = self.features.select(Axis(0), &keep);
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            features,
            labels,
            kind: self.kind,
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i]).collect()),
            norm_state: self.norm_state,
            provenance: Provenance::new(Source::InMemory),
        }
    }

    pub fn without_outliers(&self) -> Dataset {
        let drop = self.outlier_indices().to_vec();
        self.without_rows(&drop)
    }
}

/// Bayes accuracy of two unit-variance isotropic Gaussians whose means are
/// `separation` apart: `Phi(separation / 2)`.
pub fn two_gaussian_bayes_accuracy(separation: f64) -> f64 {
    0.5 * libm::erfc(-separation / (2.0 * std::f64::consts::SQRT_2))
}

fn gaussian_rows(
    n_per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> (Array2<f64>, Vec<i32>) {
    let mut rng = rng::stream(seed, streams::DATA);
    let n = 2 * n_per_class;
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let y = if i < n_per_class { 1 } else { -1 };
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        row[0] += y as f64 * separation / 2.0;
        labels.push(y);
    }
    (x, labels)
}

/// Two isotropic unit-variance Gaussians centred at `±(separation/2) e_1`,
/// `n_per_class` points each; the first half is labelled +1.
pub fn gen_gaussians(n_per_class: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || d < 2 {
        return Err(Error::domain(
            "gen_gaussians needs n_per_class >= 1 and d >= 2",
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::domain("separation must be finite and >= 0"));
    }
    let (x, labels) = gaussian_rows(n_per_class, d, separation, seed);
    Dataset::with_source(
        x,
        labels,
        LabelKind::Binary,
        Source::Gaussians {
            n_per_class,
            d,
            separation,
            seed,
            bayes_accuracy: two_gaussian_bayes_accuracy(separation),
        },
    )
}

/// [`gen_gaussians`] plus `round(outlier_frac * N)` planted outliers.
///
/// An outlier keeps its noise offset but its class centre is pushed out to
/// `outlier_scale * separation / 2` on its own side, and its label is
/// flipped, so it sits deep on the wrong side of the Bayes boundary for the
/// label it carries.
pub fn gen_outlier_gaussians(
    n_per_class: usize,
    d: usize,
    separation: f64,
    outlier_frac: f64,
    outlier_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..0.5).contains(&outlier_frac) {
        return Err(Error::domain(format!(
            "outlier_frac {outlier_frac} not in [0, 0.5)"
        )));
    }
    if !(outlier_scale > 1.0 && outlier_scale.is_finite()) {
        return Err(Error::domain("outlier_scale must be > 1"));
    }
    let base = gen_gaussians(n_per_class, d, separation, seed)?;
    let n = base.len();
    let count = (outlier_frac * n as f64).round() as usize;
    let mut rng = rng::stream(seed, streams::OUTLIERS);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();

    let Dataset {
        mut features,
        mut labels,
        ..
    } = base;
    let half = separation / 2.0;
    for &i in &picked {
        let y = labels[i] as f64;
        features[[i, 0]] += y * (outlier_scale - 1.0) * half;
        labels[i] = -labels[i];
    }
    Dataset::with_source(
        features,
        labels,
        LabelKind::Binary,
        Source::OutlierGaussians {
            n_per_class,
            d,
            separation,
            outlier_frac,
            outlier_scale,
            seed,
            bayes_accuracy: two_gaussian_bayes_accuracy(separation),
            outlier_indices: picked,
        },
    )
}

/// Replaces each label, with probability `rate`, by a uniform draw from the
/// other `num_classes - 1` classes. The original labels are kept as
/// `clean_labels` (noise on an already noisy set keeps the first clean copy).
pub fn inject_symmetric_noise(
    ds: &Dataset,
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain(format!("noise rate {rate} not in [0, 1)")));
    }
    if num_classes != ds.num_classes() {
        return Err(Error::domain(format!(
            "dataset has {} classes, noise requested for {num_classes}",
            ds.num_classes()
        )));
    }
    let mut rng = rng::stream(seed, streams::NOISE);
    let mut out = ds.clone();
    for y in out.labels.iter_mut() {
        if rng.random::<f64>() >= rate {
            continue;
        }
        *y = match ds.kind {
            LabelKind::Binary => -*y,
            LabelKind::Multiclass { num_classes } => {
                let draw = rng.random_range(0..num_classes as i32 - 1);
                if draw >= *y {
                    draw + 1
                } else {
                    draw
                }
            }
        };
    }
    out.clean_labels = Some(ds.clean_labels.clone().unwrap_or_else(|| ds.labels.clone()));
    let realized_fraction = out.flipped_fraction();
    out.provenance.noise = Some(NoiseRecord {
        rate,
        num_classes,
        seed,
        realized_fraction,
    });
    Ok(out)
}

/// Divides every row by the largest row norm when it exceeds 1.
pub fn normalize_unit_ball(ds: &Dataset) -> Dataset {
    let max_norm = ds
        .features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    let mut out = ds.clone();
    let prior = match ds.norm_state {
        NormState::UnitBall { scale } => scale,
        NormState::Raw => 1.0,
    };
    let step = if max_norm > 1.0 { max_norm } else { 1.0 };
    if step > 1.0 {
        out.features.mapv_inplace(|v| v / step);
    }
    out.norm_state = NormState::UnitBall {
        scale: prior * step,
    };
    out
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

const IDX_UBYTE: u8 = 0x08;

/// Parses an unsigned-byte IDX file, returning its dimensions and payload.
fn read_idx(path: &Path, expected_dims: u8) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(parse_err(
            path,
            "byte 0",
            format!("expected 4 header bytes, file has {}", bytes.len()),
        ));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let expected_magic = ((IDX_UBYTE as u32) << 8) | expected_dims as u32;
    if magic != expected_magic {
        return Err(parse_err(
            path,
            "byte 0",
            format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        ));
    }
    let header_len = 4 + 4 * expected_dims as usize;
    if bytes.len() < header_len {
        return Err(parse_err(
            path,
            "byte 4",
            format!(
                "expected {header_len} header bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    let expected = header_len + payload;
    if bytes.len() != expected {
        let what = if bytes.len() < expected {
            "truncated"
        } else {
            "trailing data"
        };
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("{what}: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok((dims, bytes[header_len..].to_vec()))
}

/// Loads an IDX image file (magic `0x00000803`) and label file (`0x00000801`).
/// Pixels are scaled to `[0, 1]` and images flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (img_dims, pixels) = read_idx(images_path, 3)?;
    let (lbl_dims, raw_labels) = read_idx(labels_path, 1)?;
    let n = img_dims[0];
    if lbl_dims[0] != n {
        return Err(parse_err(
            labels_path,
            "byte 4",
            format!("{} labels for {n} images", lbl_dims[0]),
        ));
    }
    let d = img_dims[1] * img_dims[2];
    let features =
        Array2::from_shape_vec((n, d), pixels.iter().map(|&p| p as f64 / 255.0).collect())
            .map_err(|e| parse_err(images_path, "byte 16", e.to_string()))?;
    let labels: Vec<i32> = raw_labels.iter().map(|&l| l as i32).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0).max(1) as usize + 1;
    Dataset::with_source(
        features,
        labels,
        LabelKind::Multiclass { num_classes },
        Source::Idx {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
        },
    )
}

/// Loads a comma separated file with a mandatory header row and the integer
/// label in the last column. Labels drawn from {-1, +1} give a binary
/// dataset; non-negative labels give `max + 1` classes.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, "line 1", e.to_string()))?;
    let ncols = reader
        .headers()
        .map_err(|e| parse_err(path, "line 1", e.to_string()))?
        .len();
    if ncols < 2 {
        return Err(parse_err(
            path,
            "line 1",
            "need at least one feature column and a label",
        ));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j + 1 == ncols {
                let y: i32 = cell.parse().map_err(|_| {
                    parse_err(
                        path,
                        format!("line {line}"),
                        format!("label '{cell}' is not an integer"),
                    )
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(
                        path,
                        format!("line {line}"),
                        format!("column {} value '{cell}' is not numeric", j + 1),
                    )
                })?;
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(path, "line 2", "no data rows"));
    }
    let kind = if labels.iter().all(|&y| y == 1 || y == -1) && labels.contains(&-1) {
        LabelKind::Binary
    } else if let Some(&bad) = labels.iter().find(|&&y| y < 0) {
        return Err(parse_err(
            path,
            "label column",
            format!("negative class index {bad}"),
        ));
    } else {
        LabelKind::Multiclass {
            num_classes: (*labels.iter().max().expect("non-empty") as usize + 1).max(2),
        }
    };
    let features = Array2::from_shape_vec((labels.len(), ncols - 1), values)
        .map_err(|e| parse_err(path, "line 2", e.to_string()))?;
    Dataset::with_source(
        features,
        labels,
        kind,
        Source::Csv {
            path: path.to_path_buf(),
        },
    )
}
