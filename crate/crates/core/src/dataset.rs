//! Labelled feature matrices, train-statistics normalisation and the seeded
//! synthetic generators used for desk-scale experiments.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Test,
}

/// Per-column statistics used to standardise features.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Normalization {
    /// Maps a standardised row back to the original feature scale.
    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.means).zip(&self.stds).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    split: Split,
    normalization: Option<Normalization>,
    planted: Vec<Vec<usize>>,
}

impl Dataset {
    /// `features` is row-major with `n_features` columns. Every label must be
    /// below `n_classes`.
    pub fn new(n_features: usize, n_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::arg("a dataset needs at least one feature and one class"));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::shape("Dataset::new", labels.len() * n_features, features.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::arg(alloc::format!("label {bad} outside 0..{n_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            n_features,
            n_classes,
            features,
            labels,
            split: Split::All,
            normalization: None,
            planted: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Statistics this dataset was standardised with, if any.
    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Concepts planted by the sparse-AND generator (feature index sets).
    pub fn planted(&self) -> &[Vec<usize>] {
        &self.planted
    }

    pub fn with_planted(mut self, planted: Vec<Vec<usize>>) -> Self {
        self.planted = planted;
        self
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_features];
        for row in self.features.chunks_exact(self.n_features) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len().max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Population standard deviations.
    pub fn column_stds(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut var = vec![0.0; self.n_features];
        for row in self.features.chunks_exact(self.n_features) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let n = self.len().max(1) as f64;
        var.into_iter().map(|s| math::sqrt(s / n)).collect()
    }

    /// Column means and standard deviations of this dataset. Constant columns
    /// get a unit scale so they map to zero rather than NaN.
    pub fn fit_normalization(&self) -> Normalization {
        let stds = self
            .column_stds()
            .into_iter()
            .map(|s| if s > 1e-300 { s } else { 1.0 })
            .collect();
        Normalization {
            means: self.column_means(),
            stds,
        }
    }

    /// Applies `(x - mean) / std` column-wise.
    pub fn normalized_with(&self, norm: &Normalization) -> Result<Self> {
        if norm.means.len() != self.n_features || norm.stds.len() != self.n_features {
            return Err(Error::shape("normalized_with", self.n_features, norm.means.len()));
        }
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.n_features) {
            for ((v, m), s) in row.iter_mut().zip(&norm.means).zip(&norm.stds) {
                *v = (*v - m) / s;
            }
        }
        out.normalization = Some(norm.clone());
        Ok(out)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }

    /// Seeded shuffle split; the second part holds `round(test_fraction * len)` rows.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::arg("test fraction must lie in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng::shuffle(&mut rng::seeded(seed), &mut idx);
        let n_test = libm::round(test_fraction * self.len() as f64) as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((
            self.subset(train).with_split(Split::Train),
            self.subset(test).with_split(Split::Test),
        ))
    }

    /// Standardises `train` with its own statistics and `test` with the same
    /// (train) statistics.
    pub fn normalize_pair(train: &Self, test: &Self) -> Result<(Self, Self)> {
        let norm = train.fit_normalization();
        Ok((train.normalized_with(&norm)?, test.normalized_with(&norm)?))
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

/// Seeded generators for desk-scale tasks.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticSpec {
    /// Isotropic unit-variance Gaussian clusters. Class centres sit on
    /// distinct axes (or their negations) at distance `separation / 2` from
    /// the origin.
    GaussianBlobs {
        n_features: usize,
        n_classes: usize,
        n_samples: usize,
        separation: f64,
    },
    /// Standard-normal features rounded to multiples of `grid` (`grid = 0`
    /// keeps them continuous). The label is 1 exactly when every feature of
    /// at least one planted concept exceeds `grid / 2`.
    SparseAnd {
        n_features: usize,
        n_samples: usize,
        planted: Vec<Vec<usize>>,
        grid: f64,
    },
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let mut rng = rng::seeded(seed);
    match spec {
        &SyntheticSpec::GaussianBlobs {
            n_features,
            n_classes,
            n_samples,
            separation,
        } => {
            if n_features == 0 || n_features > 20 || n_classes < 2 || n_samples == 0 {
                return Err(Error::arg("blobs need 1..=20 features, >=2 classes, >=1 sample"));
            }
            if n_classes > 2 * n_features {
                return Err(Error::arg("blobs support at most 2 classes per feature axis"));
            }
            if !(separation.is_finite() && separation >= 0.0) {
                return Err(Error::arg("separation must be finite and non-negative"));
            }
            let mut features = Vec::with_capacity(n_samples * n_features);
            let mut labels = Vec::with_capacity(n_samples);
            for i in 0..n_samples {
                let class = i % n_classes;
                let axis = class / 2;
                let sign = if class % 2 == 0 { 1.0 } else { -1.0 };
                for f in 0..n_features {
                    let centre = if f == axis { sign * separation / 2.0 } else { 0.0 };
                    features.push(centre + rng::standard_normal(&mut rng));
                }
                labels.push(class);
            }
            Dataset::new(n_features, n_classes, features, labels)
        }
        SyntheticSpec::SparseAnd {
            n_features,
            n_samples,
            planted,
            grid,
        } => {
            let n_features = *n_features;
            let grid = *grid;
            if !(grid.is_finite() && grid >= 0.0) {
                return Err(Error::arg("grid must be finite and non-negative"));
            }
            if n_features == 0 || n_features > 20 || *n_samples == 0 {
                return Err(Error::arg("sparse-AND needs 1..=20 features and >=1 sample"));
            }
            if planted.is_empty() || planted.iter().any(|c| c.is_empty() || c.iter().any(|&i| i >= n_features)) {
                return Err(Error::arg("planted concepts must be non-empty feature index sets"));
            }
            let mut features = Vec::with_capacity(n_samples * n_features);
            let mut labels = Vec::with_capacity(*n_samples);
            let mut row = vec![0.0; n_features];
            for _ in 0..*n_samples {
                rng::fill_standard_normal(&mut rng, &mut row);
                if grid > 0.0 {
                    for v in row.iter_mut() {
                        *v = libm::round(*v / grid) * grid;
                    }
                }
                let on = sparse_and_label(planted, grid, &row);
                features.extend_from_slice(&row);
                labels.push(usize::from(on));
            }
            Ok(Dataset::new(n_features, 2, features, labels)?.with_planted(planted.clone()))
        }
    }
}

/// Label rule of the sparse-AND generator on a raw (unnormalised) row.
pub fn sparse_and_label(planted: &[Vec<usize>], grid: f64, row: &[f64]) -> bool {
    let threshold = grid / 2.0;
    planted.iter().any(|c| c.iter().all(|&i| row[i] > threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn and_spec() -> SyntheticSpec {
        SyntheticSpec::SparseAnd {
            n_features: 6,
            n_samples: 400,
            planted: vec![vec![1, 2]],
            grid: 0.0,
        }
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(generate_synthetic(&and_spec(), 5).unwrap(), generate_synthetic(&and_spec(), 5).unwrap());
        assert_ne!(generate_synthetic(&and_spec(), 5).unwrap(), generate_synthetic(&and_spec(), 6).unwrap());
    }

    #[test]
    fn sparse_and_labels_follow_planted_conjunction() {
        let d = generate_synthetic(&and_spec(), 1).unwrap();
        for i in 0..d.len() {
            let r = d.row(i);
            assert_eq!(d.label(i), usize::from(r[1] > 0.0 && r[2] > 0.0));
        }
        assert_eq!(d.planted(), &[vec![1, 2]]);
    }

    #[test]
    fn gridded_features_sit_on_the_lattice() {
        let spec = SyntheticSpec::SparseAnd {
            n_features: 4,
            n_samples: 200,
            planted: vec![vec![0, 3]],
            grid: 0.5,
        };
        let d = generate_synthetic(&spec, 3).unwrap();
        for i in 0..d.len() {
            let r = d.row(i);
            assert!(r.iter().all(|v| (v * 2.0 - libm::round(v * 2.0)).abs() < 1e-12));
            assert_eq!(d.label(i), usize::from(r[0] >= 0.5 && r[3] >= 0.5));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SyntheticSpec::SparseAnd {
            n_features: 4,
            n_samples: 10,
            planted: vec![vec![4]],
            grid: 0.0,
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let too_wide = SyntheticSpec::GaussianBlobs {
            n_features: 21,
            n_classes: 2,
            n_samples: 10,
            separation: 1.0,
        };
        assert!(generate_synthetic(&too_wide, 0).is_err());
    }

    #[test]
    fn normalisation_uses_train_statistics_only() {
        let d = generate_synthetic(&and_spec(), 2).unwrap();
        let (train, test) = d.train_test_split(0.25, 3).unwrap();
        assert_eq!(test.len(), 100);
        let (ntr, nte) = Dataset::normalize_pair(&train, &test).unwrap();
        for (m, s) in ntr.column_means().iter().zip(ntr.column_stds()) {
            assert!(m.abs() < 1e-9);
            assert!((s * s - 1.0).abs() < 1e-6);
        }
        let norm = train.fit_normalization();
        assert_eq!(nte.normalization(), Some(&norm));
        let want = (test.row(0)[0] - norm.means[0]) / norm.stds[0];
        assert_eq!(nte.row(0)[0], want);
    }

    #[test]
    fn label_bounds_checked() {
        assert!(Dataset::new(1, 2, vec![0.0], vec![2]).is_err());
        assert!(Dataset::new(2, 2, vec![0.0], vec![0]).is_err());
    }
}
