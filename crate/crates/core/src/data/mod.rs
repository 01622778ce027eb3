//! Dataset construction and ingestion: the inter-twinning moons generator,
//! IDX and CSV loaders, per-feature standardization, and seeded batching.

mod csv;
mod idx;

pub use csv::{load_csv, to_csv, CsvData};
pub use idx::{load_idx, to_idx_bytes, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Feature matrix with integer class labels in `[0, k)`.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub k: usize,
}

/// Feature matrix without labels.
#[derive(Clone, Debug)]
pub struct UnlabeledDataset {
    pub features: Tensor,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Data(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows vs {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, k });
        }
        Ok(LabeledDataset {
            features,
            labels,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn to_unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features.clone(),
        }
    }

    /// Rows and labels at `indices`, as a batch tensor plus label vector.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let t = gather_rows(&self.features, indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (t, labels)
    }

    /// A new dataset holding only the rows at `indices`.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let (features, labels) = self.gather(indices);
        LabeledDataset {
            features,
            labels,
            k: self.k,
        }
    }

    pub fn rotate(&self, angle_deg: f64) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            features: rotate_features(&self.features, angle_deg)?,
            labels: self.labels.clone(),
            k: self.k,
        })
    }
}

impl UnlabeledDataset {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Data(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        Ok(UnlabeledDataset { features })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        gather_rows(&self.features, indices)
    }

    pub fn rotate(&self, angle_deg: f64) -> Result<UnlabeledDataset> {
        Ok(UnlabeledDataset {
            features: rotate_features(&self.features, angle_deg)?,
        })
    }
}

pub(crate) fn gather_rows(features: &Tensor, indices: &[usize]) -> Tensor {
    let d = features.shape()[1];
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(&features.data()[i * d..(i + 1) * d]);
    }
    Tensor::matrix(indices.len(), d, data).expect("gathered rows conform")
}

/// Two interleaved half-circles with Gaussian noise.
///
/// Class 1 is the upper/outer moon `(cos t, sin t)`; class 0 is the
/// lower/inner moon `(1 - cos t, 0.5 - sin t)`, with `t` evenly spaced over
/// `[0, pi]`. Deterministic per seed.
pub fn make_moons(n_per_class: usize, noise_sd: f64, seed: u64) -> LabeledDataset {
    assert!(n_per_class >= 1, "need at least one sample per class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_per_class * 4);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    let t_at = |i: usize| {
        if n_per_class == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (n_per_class - 1) as f64
        }
    };
    // lower/inner moon, label 0
    for i in 0..n_per_class {
        let t = t_at(i);
        let (nx, ny) = gaussian_pair(&mut rng, noise_sd);
        data.push(1.0 - t.cos() + nx);
        data.push(0.5 - t.sin() + ny);
        labels.push(0);
    }
    // upper/outer moon, label 1
    for i in 0..n_per_class {
        let t = t_at(i);
        let (nx, ny) = gaussian_pair(&mut rng, noise_sd);
        data.push(t.cos() + nx);
        data.push(t.sin() + ny);
        labels.push(1);
    }
    LabeledDataset {
        features: Tensor::matrix(n_per_class * 2, 2, data).expect("moon rows conform"),
        labels,
        k: 2,
    }
}

/// One Box-Muller draw: two independent N(0, sd^2) samples.
fn gaussian_pair(rng: &mut ChaCha8Rng, sd: f64) -> (f64, f64) {
    if sd == 0.0 {
        // keep the rng stream aligned whether or not noise is enabled
        let _ = rng.random::<f64>();
        let _ = rng.random::<f64>();
        return (0.0, 0.0);
    }
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * u2;
    (sd * r * a.cos(), sd * r * a.sin())
}

/// Rotate 2-d points counter-clockwise about the dataset centroid.
pub(crate) fn rotate_features(features: &Tensor, angle_deg: f64) -> Result<Tensor> {
    let shape = features.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::DimensionError(if shape.len() == 2 {
            shape[1]
        } else {
            shape.len()
        }));
    }
    if angle_deg == 0.0 {
        return Ok(features.clone());
    }
    let n = shape[0];
    let v = features.data();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        cx += v[2 * i];
        cy += v[2 * i + 1];
    }
    cx /= n as f64;
    cy /= n as f64;
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let x = v[2 * i] - cx;
        let y = v[2 * i + 1] - cy;
        out.push(cx + cos * x - sin * y);
        out.push(cy + sin * x + cos * y);
    }
    Tensor::matrix(n, 2, out)
}

/// A seeded permutation of `0..n` split into consecutive batches.
/// `drop_last` discards a trailing batch shorter than `batch_size`.
pub fn batches(n: usize, batch_size: usize, seed: u64, drop_last: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let end = (i + batch_size).min(n);
        if end - i < batch_size && drop_last {
            break;
        }
        out.push(perm[i..end].to_vec());
        i = end;
    }
    out
}

/// Mix a base seed with a stream tag and an epoch counter.
pub fn derive_seed(base: u64, stream: u64, epoch: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-feature affine transform fit on a source split: zero mean, unit
/// variance. Constant features keep scale 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Tensor) -> Standardizer {
        let (n, d) = (features.shape()[0], features.shape()[1]);
        let v = features.data();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += v[i * d + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut sd = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let x = v[i * d + j] - mean[j];
                sd[j] += x * x;
            }
        }
        for s in sd.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Standardizer { mean, sd }
    }

    pub fn transform(&self, features: &Tensor) -> Result<Tensor> {
        let (n, d) = (features.shape()[0], features.shape()[1]);
        if d != self.mean.len() {
            return Err(Error::Data(format!(
                "standardizer fit on {} features, input has {d}",
                self.mean.len()
            )));
        }
        let v = features.data();
        let mut out = Vec::with_capacity(v.len());
        for i in 0..n {
            for j in 0..d {
                out.push((v[i * d + j] - self.mean[j]) / self.sd[j]);
            }
        }
        Tensor::matrix(n, d, out)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("dim = {}\nmean = {}\nsd = {}\n", self.mean.len(), join(&self.mean), join(&self.sd))
    }

    pub fn from_text(text: &str) -> Result<Standardizer> {
        let mut dim = None;
        let mut mean = None;
        let mut sd = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad standardizer line {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "dim" => {
                    dim = Some(value.parse::<usize>().map_err(|_| {
                        Error::Data(format!("bad standardizer dim {value:?}"))
                    })?)
                }
                "mean" => mean = Some(parse_f64_list(value)?),
                "sd" => sd = Some(parse_f64_list(value)?),
                other => return Err(Error::Data(format!("unknown standardizer key {other:?}"))),
            }
        }
        match (dim, mean, sd) {
            (Some(d), Some(mean), Some(sd)) if mean.len() == d && sd.len() == d => {
                Ok(Standardizer { mean, sd })
            }
            _ => Err(Error::Data("incomplete standardizer file".into())),
        }
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad number {tok:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_parameterization_endpoints() {
        let ds = make_moons(3, 0.0, 1);
        // t = 0: inner (0, 0.5), outer (1, 0)
        assert!((ds.features.data()[0] - 0.0).abs() < 1e-15);
        assert!((ds.features.data()[1] - 0.5).abs() < 1e-15);
        let outer0 = 2 * 3; // first outer row
        assert!((ds.features.data()[outer0] - 1.0).abs() < 1e-15);
        assert!((ds.features.data()[outer0 + 1] - 0.0).abs() < 1e-15);
        // t = pi/2 is the middle sample of three
        let inner_mid = 1;
        assert!((ds.features.data()[inner_mid * 2] - 1.0).abs() < 1e-12);
        assert!((ds.features.data()[inner_mid * 2 + 1] + 0.5).abs() < 1e-12);
        let outer_mid = 3 + 1;
        assert!((ds.features.data()[outer_mid * 2] - 0.0).abs() < 1e-12);
        assert!((ds.features.data()[outer_mid * 2 + 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moons_counts_and_labels() {
        let ds = make_moons(300, 0.1, 7);
        assert_eq!(ds.len(), 600);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 300);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 300);
    }

    #[test]
    fn noiseless_outer_moon_is_on_the_unit_circle() {
        let ds = make_moons(50, 0.0, 3);
        for i in 0..ds.len() {
            let x = ds.features.data()[2 * i];
            let y = ds.features.data()[2 * i + 1];
            if ds.labels[i] == 1 {
                assert!(((x * x + y * y).sqrt() - 1.0).abs() < 1e-9);
            } else {
                // inner moon is the reflected translate of the circle
                let (rx, ry) = (1.0 - x, 0.5 - y);
                assert!(((rx * rx + ry * ry).sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn moons_deterministic_per_seed() {
        let a = make_moons(20, 0.2, 9);
        let b = make_moons(20, 0.2, 9);
        let c = make_moons(20, 0.2, 10);
        assert_eq!(a.features.data(), b.features.data());
        assert_ne!(a.features.data(), c.features.data());
    }

    #[test]
    fn rotation_identity_and_full_turn() {
        let ds = make_moons(40, 0.05, 5);
        let r0 = ds.rotate(0.0).unwrap();
        assert_eq!(r0.features.data(), ds.features.data());
        let r360 = ds.rotate(360.0).unwrap();
        for (a, b) in r360.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_centroid_and_distances() {
        let ds = make_moons(30, 0.1, 11);
        let rot = ds.rotate(30.0).unwrap();
        let centroid = |t: &Tensor| {
            let n = t.shape()[0] as f64;
            let mut c = [0.0, 0.0];
            for i in 0..t.shape()[0] {
                c[0] += t.data()[2 * i];
                c[1] += t.data()[2 * i + 1];
            }
            [c[0] / n, c[1] / n]
        };
        let c0 = centroid(&ds.features);
        let c1 = centroid(&rot.features);
        assert!((c0[0] - c1[0]).abs() < 1e-9);
        assert!((c0[1] - c1[1]).abs() < 1e-9);
        // pairwise distances (isometry)
        let d = |t: &Tensor, i: usize, j: usize| {
            let dx = t.data()[2 * i] - t.data()[2 * j];
            let dy = t.data()[2 * i + 1] - t.data()[2 * j + 1];
            (dx * dx + dy * dy).sqrt()
        };
        for i in 0..10 {
            for j in (i + 1)..10 {
                assert!((d(&ds.features, i, j) - d(&rot.features, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_needs_two_dims() {
        let features = Tensor::matrix(3, 4, vec![0.0; 12]).unwrap();
        let ds = UnlabeledDataset::new(features).unwrap();
        assert!(matches!(ds.rotate(10.0), Err(Error::DimensionError(4))));
    }

    #[test]
    fn batches_partition_indices() {
        let bs = batches(10, 5, 1, false);
        assert_eq!(bs.len(), 2);
        let mut seen: Vec<usize> = bs.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn drop_last_discards_short_batch() {
        let bs = batches(10, 4, 1, true);
        assert_eq!(bs.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
        let full = batches(10, 4, 1, false);
        assert_eq!(full.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn batches_deterministic_per_seed() {
        assert_eq!(batches(64, 8, 3, true), batches(64, 8, 3, true));
        assert_ne!(batches(64, 8, 3, true), batches(64, 8, 4, true));
    }

    #[test]
    fn standardizer_round_trip_and_moments() {
        let ds = make_moons(100, 0.2, 2);
        let std = Standardizer::fit(&ds.features);
        let z = std.transform(&ds.features).unwrap();
        let (n, d) = (z.shape()[0], z.shape()[1]);
        for j in 0..d {
            let mut m = 0.0;
            let mut v = 0.0;
            for i in 0..n {
                m += z.data()[i * d + j];
            }
            m /= n as f64;
            for i in 0..n {
                let x = z.data()[i * d + j] - m;
                v += x * x;
            }
            v /= n as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-9);
        }
        let parsed = Standardizer::from_text(&std.to_text()).unwrap();
        assert_eq!(parsed, std);
    }
}
