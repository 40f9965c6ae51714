//! Synthetic dataset generators, feature scaling, reproducible splits, noise
//! plans, and file I/O for the benchmark corpus.
//!
//! Every generator is a pure function of its parameters and seed. Scaling is
//! recorded next to the data so a kernel pipeline can map features into the
//! domain the encoding needs (phases into an arc of the circle, moduli into a
//! box) and invert the map exactly.

mod npz;

pub use npz::{load_breastmnist, BreastMnist};

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::fnv1a64;

/// A feature matrix with binary labels and the scaling applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub name: String,
    pub seed: u64,
    pub scaling: ScalingRecord,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Checks the structural invariants: matching lengths, finite values,
    /// both classes present.
    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(Error::InvalidParams("dataset must be non-empty".into()));
        }
        if self.labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: self.labels.len(),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite feature value".into()));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidParams("labels must be 0 or 1".into()));
        }
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        if ones == 0 || ones == self.n() {
            return Err(Error::InvalidParams("both classes must be present".into()));
        }
        Ok(())
    }

    /// Applies a scaling record fitted elsewhere, replacing the stored one.
    pub fn rescaled(&self, record: &ScalingRecord) -> Result<Dataset> {
        let features = record.apply(self.features.view())?;
        Ok(Dataset {
            features,
            labels: self.labels.clone(),
            name: self.name.clone(),
            seed: self.seed,
            scaling: record.clone(),
        })
    }

    /// 64-bit fingerprint of features and labels, used to tie trained models
    /// to their training data.
    pub fn fingerprint(&self) -> u64 {
        let mut words: Vec<u64> = Vec::with_capacity(self.features.len() + self.labels.len());
        for v in self.features.iter() {
            words.push(v.to_bits());
        }
        for &l in &self.labels {
            words.push(l as u64);
        }
        fnv1a64(&words)
    }
}

/// Affine per-feature scaling, stored as `scaled = (x - offset) * scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub mode: ScalingMode,
    pub per_feature_offsets: Vec<f64>,
    pub per_feature_scales: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingMode {
    /// Affine map into an arc of `[0, 2pi)`; phases of identical features
    /// coincide and all pairwise differences stay inside `(-2pi, 2pi)`.
    PhasePeriodic,
    /// Affine map into `[0, r_box]`.
    AmplitudeBox,
    /// Zero mean, unit variance per feature.
    ZScore,
    None,
}

/// Knobs for [`ScalingRecord::fit`].
#[derive(Clone, Copy, Debug)]
pub struct ScalingOptions {
    /// Target arc for [`ScalingMode::PhasePeriodic`]; kept strictly below
    /// `2pi` so extremes of a feature never alias onto each other.
    pub phase_arc: f64,
    /// Target box edge for [`ScalingMode::AmplitudeBox`].
    pub amplitude_box: f64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            phase_arc: std::f64::consts::PI,
            amplitude_box: 1.0,
        }
    }
}

impl ScalingOptions {
    /// Box edge respecting the compact-family state domain
    /// `sqrt(|lambda|/2) r < pi/2` with a small safety margin.
    pub fn amplitude_box_for_lambda(lambda: f64) -> f64 {
        0.999 * std::f64::consts::FRAC_PI_2 / (lambda.abs() / 2.0).sqrt()
    }
}

impl ScalingRecord {
    pub fn identity(d: usize) -> Self {
        Self {
            mode: ScalingMode::None,
            per_feature_offsets: vec![0.0; d],
            per_feature_scales: vec![1.0; d],
        }
    }

    /// Fits offsets and scales on the given rows (typically the training
    /// split only).
    pub fn fit(features: ArrayView2<'_, f64>, mode: ScalingMode, opts: &ScalingOptions) -> Result<Self> {
        let d = features.ncols();
        if features.nrows() == 0 || d == 0 {
            return Err(Error::InvalidParams("cannot fit scaling on empty data".into()));
        }
        let mut offsets = vec![0.0; d];
        let mut scales = vec![1.0; d];
        match mode {
            ScalingMode::None => {}
            ScalingMode::PhasePeriodic | ScalingMode::AmplitudeBox => {
                let target = match mode {
                    ScalingMode::PhasePeriodic => {
                        if !(opts.phase_arc > 0.0) {
                            return Err(Error::InvalidParams("phase arc must be > 0".into()));
                        }
                        opts.phase_arc.min(2.0 * std::f64::consts::PI * (1.0 - 1e-12))
                    }
                    _ => {
                        if !(opts.amplitude_box > 0.0) {
                            return Err(Error::InvalidParams("amplitude box must be > 0".into()));
                        }
                        opts.amplitude_box
                    }
                };
                for f in 0..d {
                    let col = features.column(f);
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for &v in col {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    offsets[f] = lo;
                    scales[f] = if hi > lo { target / (hi - lo) } else { 1.0 };
                }
            }
            ScalingMode::ZScore => {
                let n = features.nrows() as f64;
                for f in 0..d {
                    let col = features.column(f);
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    offsets[f] = mean;
                    scales[f] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
                }
            }
        }
        Ok(Self {
            mode,
            per_feature_offsets: offsets,
            per_feature_scales: scales,
        })
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(features.ncols())?;
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = (*v - self.per_feature_offsets[f]) * self.per_feature_scales[f];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(features.ncols())?;
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = *v / self.per_feature_scales[f] + self.per_feature_offsets[f];
            }
        }
        Ok(out)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.per_feature_offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.per_feature_offsets.len(),
                got: d,
            });
        }
        if self.per_feature_scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParams("scales must be positive".into()));
        }
        Ok(())
    }
}

fn balanced_counts(total: usize) -> (usize, usize) {
    (total.div_ceil(2), total / 2)
}

fn finish(
    name: &str,
    seed: u64,
    rng: &mut ChaCha8Rng,
    mut features: Vec<[f64; 2]>,
    mut labels: Vec<u8>,
) -> Dataset {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut flat = Vec::with_capacity(features.len() * 2);
    let mut shuffled_labels = Vec::with_capacity(labels.len());
    for &i in &order {
        flat.extend_from_slice(&features[i]);
        shuffled_labels.push(labels[i]);
    }
    features.clear();
    labels.clear();
    Dataset {
        features: Array2::from_shape_vec((order.len(), 2), flat).unwrap(),
        labels: shuffled_labels,
        name: name.to_string(),
        seed,
        scaling: ScalingRecord::identity(2),
    }
}

/// Two interleaving half-circles: class 0 on `(cos t, sin t)` and class 1 on
/// `(1 - cos t, 0.5 - sin t)` for `t` uniform in `[0, pi]`, plus isotropic
/// Gaussian noise.
pub fn make_moons(n_train: usize, n_test: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParams("train and test counts must be positive".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParams(format!("noise must be >= 0, got {noise}")));
    }
    let total = n_train + n_test;
    let (n0, n1) = balanced_counts(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for k in 0..total {
        let t: f64 = rng.gen_range(0.0..=std::f64::consts::PI);
        let (mut x, mut y) = if k < n0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x += noise * rng.sample::<f64, _>(StandardNormal);
        y += noise * rng.sample::<f64, _>(StandardNormal);
        features.push([x, y]);
        labels.push(u8::from(k >= n0));
    }
    debug_assert_eq!(labels.iter().filter(|&&l| l == 1).count(), n1);
    Ok(finish("moons", seed, &mut rng, features, labels))
}

/// Outer unit circle (class 0) and inner circle of radius `factor` (class 1)
/// with Gaussian noise.
pub fn make_circles(n_train: usize, n_test: usize, noise: f64, factor: f64, seed: u64) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParams("train and test counts must be positive".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParams(format!("noise must be >= 0, got {noise}")));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidParams(format!("factor must lie in (0, 1), got {factor}")));
    }
    let total = n_train + n_test;
    let (n0, _) = balanced_counts(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for k in 0..total {
        let t: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let radius = if k < n0 { 1.0 } else { factor };
        let x = radius * t.cos() + noise * rng.sample::<f64, _>(StandardNormal);
        let y = radius * t.sin() + noise * rng.sample::<f64, _>(StandardNormal);
        features.push([x, y]);
        labels.push(u8::from(k >= n0));
    }
    Ok(finish("circles", seed, &mut rng, features, labels))
}

/// Two Gaussian clusters centered on distinct vertices of an
/// `n_informative`-dimensional hypercube of side `class_sep`, padded with
/// pure-noise features, followed by exactly `n_flipped` label inversions.
pub fn make_hypercube(
    n_train: usize,
    n_test: usize,
    n_features: usize,
    n_informative: usize,
    class_sep: f64,
    n_flipped: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParams("train and test counts must be positive".into()));
    }
    if n_informative == 0 || n_informative > n_features {
        return Err(Error::InvalidParams(format!(
            "need 1 <= n_informative <= n_features, got {n_informative}/{n_features}"
        )));
    }
    let total = n_train + n_test;
    if n_flipped >= total {
        return Err(Error::InvalidParams(format!(
            "n_flipped = {n_flipped} must be < total = {total}"
        )));
    }
    // Separate streams so the flip pattern never perturbs the geometry.
    let mut geom_rng = ChaCha8Rng::seed_from_u64(fnv1a64(&[seed, 0x67656f6d]));
    let mut flip_rng = ChaCha8Rng::seed_from_u64(fnv1a64(&[seed, 0x666c6970]));

    let vertex0: Vec<bool> = (0..n_informative).map(|_| geom_rng.gen()).collect();
    let mut vertex1 = vertex0.clone();
    while vertex1 == vertex0 {
        vertex1 = (0..n_informative).map(|_| geom_rng.gen()).collect();
    }
    let center = |bits: &[bool], f: usize| {
        if bits[f] {
            class_sep / 2.0
        } else {
            -class_sep / 2.0
        }
    };

    let (n0, _) = balanced_counts(total);
    let mut flat = Vec::with_capacity(total * n_features);
    let mut labels = Vec::with_capacity(total);
    for k in 0..total {
        let bits = if k < n0 { &vertex0 } else { &vertex1 };
        for f in 0..n_features {
            let base = if f < n_informative { center(bits, f) } else { 0.0 };
            flat.push(base + geom_rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(u8::from(k >= n0));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut geom_rng);
    let mut features = Array2::zeros((total, n_features));
    let mut shuffled = Vec::with_capacity(total);
    for (row, &i) in order.iter().enumerate() {
        for f in 0..n_features {
            features[[row, f]] = flat[i * n_features + f];
        }
        shuffled.push(labels[i]);
    }
    // Exactly n_flipped inversions, uniform over positions.
    let mut positions: Vec<usize> = (0..total).collect();
    positions.shuffle(&mut flip_rng);
    for &pos in positions.iter().take(n_flipped) {
        shuffled[pos] ^= 1;
    }
    Ok(Dataset {
        features,
        labels: shuffled,
        name: "hypercube".into(),
        seed,
        scaling: ScalingRecord::identity(n_features),
    })
}

/// Concentric annuli with alternating labels: layer `k` holds
/// `layer_counts[k]` points at radius `radii[k]` with Gaussian radial jitter
/// and uniform angle.
pub fn make_disks(layer_counts: &[usize], radii: &[f64], jitter: f64, seed: u64) -> Result<Dataset> {
    if layer_counts.len() != radii.len() || layer_counts.len() < 2 {
        return Err(Error::InvalidParams(
            "need matching layer_counts and radii with at least two layers".into(),
        ));
    }
    if !radii.windows(2).all(|w| w[0] < w[1]) || radii[0] <= 0.0 {
        return Err(Error::InvalidParams("radii must be positive and strictly increasing".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParams(format!("jitter must be >= 0, got {jitter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = layer_counts.iter().sum();
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (k, (&count, &radius)) in layer_counts.iter().zip(radii).enumerate() {
        for _ in 0..count {
            let t: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let r = radius + jitter * rng.sample::<f64, _>(StandardNormal);
            features.push([r * t.cos(), r * t.sin()]);
            labels.push((k % 2) as u8);
        }
    }
    Ok(finish("disks", seed, &mut rng, features, labels))
}

/// Named disk configurations sized to the benchmark table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiskPreset {
    /// Two layers, 80 train / 15 test, heavy jitter.
    Double,
    /// Two layers, 105 train / 20 test.
    DoubleV2,
    /// Three layers, 306 train / 54 test.
    Triple,
    /// Four layers, 367 train / 65 test.
    Quadruple,
}

impl DiskPreset {
    pub fn train_test(&self) -> (usize, usize) {
        match self {
            DiskPreset::Double => (80, 15),
            DiskPreset::DoubleV2 => (105, 20),
            DiskPreset::Triple => (306, 54),
            DiskPreset::Quadruple => (367, 65),
        }
    }

    pub fn layer_counts(&self) -> Vec<usize> {
        let (tr, te) = self.train_test();
        let total = tr + te;
        let layers = self.radii().len();
        let base = total / layers;
        let extra = total % layers;
        (0..layers).map(|k| base + usize::from(k < extra)).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        match self {
            DiskPreset::Double | DiskPreset::DoubleV2 => vec![1.0, 2.0],
            DiskPreset::Triple => vec![1.0, 2.0, 3.0],
            DiskPreset::Quadruple => vec![1.0, 2.0, 3.0, 4.0],
        }
    }

    pub fn jitter(&self) -> f64 {
        match self {
            DiskPreset::Double => 0.25,
            _ => 0.08,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiskPreset::Double => "disks-v1",
            DiskPreset::DoubleV2 => "disks-v2",
            DiskPreset::Triple => "disks-triple",
            DiskPreset::Quadruple => "disks-quadruple",
        }
    }

    pub fn make(&self, seed: u64) -> Result<Dataset> {
        let mut ds = make_disks(&self.layer_counts(), &self.radii(), self.jitter(), seed)?;
        ds.name = self.name().into();
        Ok(ds)
    }
}

/// Where a noise plan injects its perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseTarget {
    /// Perturb the encoding-amplitude argument of each kernel evaluation.
    EncodingAmplitude,
    /// Perturb the feature matrix once, up front.
    RawFeatures,
}

/// Reproducible Gaussian noise applied per kernel evaluation.
///
/// Draws are keyed on `(seed, tag, i, j, feature)` with the training tag
/// symmetrized over the pair, so a Gram stays symmetric and two runs with the
/// same seed produce identical matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeNoise {
    pub level: f64,
    pub seed: u64,
}

impl AmplitudeNoise {
    pub const TAG_TRAIN: u64 = 0;
    pub const TAG_CROSS: u64 = 1;

    pub fn delta(&self, tag: u64, i: usize, j: usize, feature: usize) -> f64 {
        if self.level == 0.0 {
            return 0.0;
        }
        let (a, b) = if tag == Self::TAG_TRAIN {
            (i.min(j) as u64, i.max(j) as u64)
        } else {
            (i as u64, j as u64)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&[self.seed, tag, a, b, feature as u64]));
        self.level * rng.sample::<f64, _>(StandardNormal)
    }
}

/// A noise plan: level, target, and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub level: f64,
    pub target: NoiseTarget,
    pub seed: u64,
}

/// Validated constructor for [`NoisePlan`].
pub fn add_amplitude_noise(level: f64, target: NoiseTarget, seed: u64) -> Result<NoisePlan> {
    if !(level >= 0.0) {
        return Err(Error::InvalidParams(format!("noise level must be >= 0, got {level}")));
    }
    Ok(NoisePlan { level, target, seed })
}

impl NoisePlan {
    /// The per-evaluation perturbation source, when this plan targets the
    /// encoding amplitude.
    pub fn encoding(&self) -> Option<AmplitudeNoise> {
        match self.target {
            NoiseTarget::EncodingAmplitude if self.level > 0.0 => Some(AmplitudeNoise {
                level: self.level,
                seed: self.seed,
            }),
            _ => None,
        }
    }

    /// One-time feature perturbation, when this plan targets raw features.
    /// Returns the dataset unchanged otherwise.
    pub fn apply_raw(&self, dataset: &Dataset) -> Dataset {
        if self.target != NoiseTarget::RawFeatures || self.level == 0.0 {
            return dataset.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&[self.seed, 0x726177]));
        let mut out = dataset.clone();
        for v in out.features.iter_mut() {
            *v += self.level * rng.sample::<f64, _>(StandardNormal);
        }
        out
    }
}

/// Train/test index lists, optional CV folds over the training part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub cv_folds: Option<Vec<(Vec<usize>, Vec<usize>)>>,
    pub stratified: bool,
    pub seed: u64,
}

/// How to size the two sides of a split.
#[derive(Clone, Copy, Debug)]
pub enum SplitSpec {
    Counts { n_train: usize, n_test: usize },
    TestFraction(f64),
}

/// Builds a reproducible (optionally stratified) train/test split, with
/// optional stratified k-fold cross-validation folds over the training part.
pub fn split(
    dataset: &Dataset,
    spec: SplitSpec,
    k_folds: Option<usize>,
    stratified: bool,
    seed: u64,
) -> Result<SplitPlan> {
    let n = dataset.n();
    let (n_train, n_test) = match spec {
        SplitSpec::Counts { n_train, n_test } => (n_train, n_test),
        SplitSpec::TestFraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "test fraction must lie in (0, 1), got {f}"
                )));
            }
            let n_test = ((n as f64) * f).round() as usize;
            (n - n_test, n_test)
        }
    };
    if n_train == 0 || n_test == 0 || n_train + n_test > n {
        return Err(Error::InvalidParams(format!(
            "infeasible split: {n_train} train + {n_test} test from {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, test_idx) = if stratified {
        let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &l) in dataset.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        for c in by_class.iter_mut() {
            c.shuffle(&mut rng);
        }
        // Largest-remainder allocation keeps per-class counts within one
        // sample of the global ratio.
        let quota0 = n_train as f64 * by_class[0].len() as f64 / n as f64;
        let mut take0 = quota0.floor() as usize;
        if quota0 - quota0.floor() >= 0.5 {
            take0 += 1;
        }
        take0 = take0.min(by_class[0].len()).min(n_train);
        let take1 = (n_train - take0).min(by_class[1].len());
        let take0 = n_train - take1;
        let mut train: Vec<usize> = Vec::with_capacity(n_train);
        train.extend(&by_class[0][..take0]);
        train.extend(&by_class[1][..take1]);
        let mut test: Vec<usize> = Vec::with_capacity(n_test);
        let rem0 = &by_class[0][take0..];
        let rem1 = &by_class[1][take1..];
        let tquota0 = (n_test as f64 * rem0.len() as f64 / (rem0.len() + rem1.len()) as f64).round() as usize;
        let t0 = tquota0.min(rem0.len()).min(n_test);
        let t1 = (n_test - t0).min(rem1.len());
        let t0 = n_test - t1;
        test.extend(&rem0[..t0]);
        test.extend(&rem1[..t1]);
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut train: Vec<usize> = order[..n_train].to_vec();
        let mut test: Vec<usize> = order[n_train..n_train + n_test].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    };

    let cv_folds = match k_folds {
        None => None,
        Some(k) => {
            if k < 2 || k > train_idx.len() {
                return Err(Error::InvalidParams(format!(
                    "k = {k} folds infeasible over {} training points",
                    train_idx.len()
                )));
            }
            // Round-robin over per-class shuffles keeps folds stratified.
            let mut assignment = vec![0usize; train_idx.len()];
            let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (pos, &i) in train_idx.iter().enumerate() {
                by_class[dataset.labels[i] as usize].push(pos);
            }
            let mut fold = 0usize;
            for class in by_class.iter_mut() {
                class.shuffle(&mut rng);
                for &pos in class.iter() {
                    assignment[pos] = fold;
                    fold = (fold + 1) % k;
                }
            }
            let mut folds = Vec::with_capacity(k);
            for f in 0..k {
                let validate: Vec<usize> = train_idx
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| assignment[*pos] == f)
                    .map(|(_, &i)| i)
                    .collect();
                let fit: Vec<usize> = train_idx
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| assignment[*pos] != f)
                    .map(|(_, &i)| i)
                    .collect();
                folds.push((fit, validate));
            }
            Some(folds)
        }
    };

    Ok(SplitPlan {
        train_idx,
        test_idx,
        cv_folds,
        stratified,
        seed,
    })
}

/// Sidecar metadata stored next to a dataset CSV.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    name: String,
    seed: u64,
    scaling: ScalingRecord,
}

/// Writes `f0,...,f{d-1},label` rows (UTF-8, LF) plus a JSON sidecar with
/// name, seed, and scaling record.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    let mut header: Vec<String> = (0..dataset.d()).map(|f| format!("f{f}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        name: dataset.name.clone(),
        seed: dataset.seed,
        scaling: dataset.scaling.clone(),
    };
    let mut f = std::fs::File::create(path.with_extension("json"))?;
    f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

/// Reads a dataset CSV written by [`write_csv`]; the JSON sidecar is used
/// when present.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::DatasetUnavailable(path.display().to_string()));
    }
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 2 || headers.iter().last() != Some("label") {
        return Err(Error::InvalidParams(
            "dataset CSV must end with a 'label' column".into(),
        ));
    }
    let d = headers.len() - 1;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != d + 1 {
            return Err(Error::InvalidParams(format!(
                "row with {} fields, expected {}",
                rec.len(),
                d + 1
            )));
        }
        for v in rec.iter().take(d) {
            flat.push(v.parse::<f64>().map_err(|e| {
                Error::InvalidParams(format!("bad feature value {v:?}: {e}"))
            })?);
        }
        let label = rec
            .get(d)
            .unwrap()
            .parse::<u8>()
            .map_err(|e| Error::InvalidParams(format!("bad label: {e}")))?;
        labels.push(label);
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let sidecar_path = path.with_extension("json");
    let (name, seed, scaling) = if sidecar_path.exists() {
        let text = std::fs::read_to_string(&sidecar_path)?;
        let sc: Sidecar = serde_json::from_str(&text)?;
        (sc.name, sc.seed, sc.scaling)
    } else {
        (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            0,
            ScalingRecord::identity(d),
        )
    };
    let ds = Dataset {
        features,
        labels,
        name,
        seed,
        scaling,
    };
    ds.validate()?;
    Ok(ds)
}
