//! Labelled datasets, synthetic generation, and non-IID client partitioning.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Dense feature vectors with integer class labels, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * feature_dim,
                actual: features.len(),
                context: "dataset features",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidConfig(alloc::format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Dataset {
            features,
            labels,
            feature_dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
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

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.class_count];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// A new dataset holding the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            class_count: self.class_count,
        }
    }

    /// Mean feature vector of the samples with the given label.
    pub fn class_centroid(&self, class: usize) -> Option<Vec<f64>> {
        let mut centroid = vec![0.0; self.feature_dim];
        let mut count = 0usize;
        for i in 0..self.len() {
            if self.labels[i] == class {
                for (c, x) in centroid.iter_mut().zip(self.row(i)) {
                    *c += x;
                }
                count += 1;
            }
        }
        if count == 0 {
            return None;
        }
        centroid.iter_mut().for_each(|c| *c /= count as f64);
        Some(centroid)
    }
}

/// Shape of a synthetic classification problem: one axis-aligned Gaussian
/// cluster per class, class `k` centred at `separation * e_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub classes: usize,
    pub feature_dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.feature_dim < self.classes {
            return Err(Error::InvalidConfig(alloc::format!(
                "feature dim {} must be at least the class count {} to place one cluster per axis",
                self.feature_dim,
                self.classes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidConfig("per-class sample count must be positive".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise std must be positive".into()));
        }
        if !self.separation.is_finite() {
            return Err(Error::InvalidConfig("separation must be finite".into()));
        }
        Ok(())
    }
}

/// Draws a labelled dataset from the spec; deterministic per seed.
pub fn synth_dataset(spec: &DataSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let total = spec.classes * spec.per_class;
    let mut features = Vec::with_capacity(total * spec.feature_dim);
    let mut labels = Vec::with_capacity(total);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            for dim in 0..spec.feature_dim {
                let mean = if dim == class { spec.separation } else { 0.0 };
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(mean + spec.noise_std * noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, labels, spec.feature_dim, spec.classes)
}

/// Disjoint client shards covering a source dataset.
#[derive(Clone, Debug)]
pub struct ClientPartition {
    pub shards: Vec<Dataset>,
    /// For each shard, the indices of its rows in the source dataset.
    pub origins: Vec<Vec<usize>>,
}

/// Splits a dataset over `clients` shards with per-class Dirichlet
/// proportions of concentration `iota` (small `iota` = strongly non-IID).
///
/// Per class, proportions are drawn as normalised Gamma(iota, 1) variates
/// and converted to integer counts by largest-remainder rounding, so the
/// shards always form an exact set partition of the source.
pub fn dirichlet_partition(
    dataset: &Dataset,
    clients: usize,
    iota: f64,
    seed: u64,
) -> Result<ClientPartition> {
    if clients == 0 {
        return Err(Error::InvalidConfig("need at least one client".into()));
    }
    if !(iota > 0.0 && iota.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "dirichlet concentration must be positive, got {iota}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let gamma = Gamma::new(iota, 1.0)
        .map_err(|_| Error::InvalidConfig("invalid dirichlet concentration".into()))?;
    let mut origins: Vec<Vec<usize>> = vec![Vec::new(); clients];

    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);

        let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            // Degenerate draw (possible for very small iota): fall back to uniform.
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let counts = largest_remainder_counts(&weights, members.len());

        let mut at = 0;
        for (client, &count) in counts.iter().enumerate() {
            origins[client].extend_from_slice(&members[at..at + count]);
            at += count;
        }
    }

    let shards = origins.iter().map(|idx| dataset.select(idx)).collect();
    Ok(ClientPartition { shards, origins })
}

/// Integer counts proportional to `weights` summing exactly to `total`.
fn largest_remainder_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut counts = Vec::with_capacity(weights.len());
    let mut fractions = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for &w in weights {
        let target = w / sum * total as f64;
        let floor = crate::fmath::floor(target) as usize;
        counts.push(floor);
        fractions.push(target - floor as f64);
        assigned += floor;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        fractions[b]
            .partial_cmp(&fractions[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Splits off a held-out test set, stratified by class; deterministic.
pub fn stratified_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(alloc::format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        members.shuffle(&mut rng);
        let n_test = crate::fmath::round(test_fraction * members.len() as f64) as usize;
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.select(&train_idx), dataset.select(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, per_class: usize, seed: u64) -> DataSpec {
        DataSpec {
            classes,
            feature_dim: 6,
            per_class,
            separation: 4.0,
            noise_std: 1.0,
            seed,
        }
    }

    #[test]
    fn synth_size_and_histogram() {
        let data = synth_dataset(&spec(2, 100, 1)).unwrap();
        assert_eq!(data.len(), 200);
        assert_eq!(data.class_histogram(), vec![100, 100]);
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(synth_dataset(&spec(3, 40, 9)).unwrap(), synth_dataset(&spec(3, 40, 9)).unwrap());
    }

    #[test]
    fn synth_centroids_land_on_class_axes() {
        let data = synth_dataset(&DataSpec {
            classes: 2,
            feature_dim: 6,
            per_class: 1000,
            separation: 10.0,
            noise_std: 1.0,
            seed: 5,
        })
        .unwrap();
        for class in 0..2 {
            let centroid = data.class_centroid(class).unwrap();
            let target: Vec<f64> = (0..6).map(|d| if d == class { 10.0 } else { 0.0 }).collect();
            let dist: f64 = centroid
                .iter()
                .zip(&target)
                .map(|(c, t)| (c - t) * (c - t))
                .sum::<f64>()
                .sqrt();
            assert!(dist < 0.5, "class {class} centroid off by {dist}");
        }
    }

    #[test]
    fn single_client_partition_is_whole_dataset() {
        let data = synth_dataset(&spec(2, 50, 2)).unwrap();
        let part = dirichlet_partition(&data, 1, 0.9, 7).unwrap();
        assert_eq!(part.shards.len(), 1);
        assert_eq!(part.shards[0].len(), data.len());
        assert_eq!(part.shards[0].class_histogram(), data.class_histogram());
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let data = synth_dataset(&spec(3, 67, 3)).unwrap();
        let part = dirichlet_partition(&data, 7, 0.9, 11).unwrap();
        let total: usize = part.shards.iter().map(Dataset::len).sum();
        assert_eq!(total, data.len());
        let mut seen = vec![false; data.len()];
        for origin in &part.origins {
            for &i in origin {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn huge_concentration_is_nearly_uniform() {
        let data = synth_dataset(&DataSpec {
            classes: 2,
            feature_dim: 4,
            per_class: 1000,
            separation: 2.0,
            noise_std: 1.0,
            seed: 13,
        })
        .unwrap();
        let part = dirichlet_partition(&data, 10, 1e6, 21).unwrap();
        for shard in &part.shards {
            for &count in &shard.class_histogram() {
                assert!((count as f64 - 100.0).abs() <= 10.0, "count {count} not within 10% of uniform");
            }
        }
    }

    #[test]
    fn stratified_split_fractions() {
        let data = synth_dataset(&spec(2, 100, 4)).unwrap();
        let (train, test) = stratified_split(&data, 0.2, 3).unwrap();
        assert_eq!(test.class_histogram(), vec![20, 20]);
        assert_eq!(train.class_histogram(), vec![80, 80]);
        assert_eq!(train.len() + test.len(), data.len());
    }

    #[test]
    fn rejects_label_out_of_range() {
        assert!(Dataset::new(vec![1.0, 2.0], vec![2], 2, 2).is_err());
    }
}
