//! Exact empirical verification of the domain-adaptation risk bound
//! `R_T(h) <= R_S(h) + d_hdh/2 + lambda` over an enumerable hypothesis class
//! of decision stumps, plus the network-pair disagreement proxy that connects
//! the trained classifiers to the same quantities.
//!
//! All distances are computed by full enumeration over the empirical samples:
//! `d_h` maximizes over single hypotheses, `d_hdh` over hypothesis pairs, and
//! `lambda` is the minimal joint risk. Stump predictions are cached as bit
//! vectors so the pair sweep is a popcount loop.

use crate::autograd::Tensor;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::mcd::predictions;
use crate::nn::Network;

pub const MAX_FEATURES: usize = 4;
pub const MAX_HYPOTHESES: usize = 5000;

/// Threshold classifier on one feature: predicts 1 iff
/// `polarity * (x[feature] - threshold) > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: i8,
}

impl Stump {
    pub fn predict(&self, row: &[f64]) -> usize {
        let v = f64::from(self.polarity) * (row[self.feature] - self.threshold);
        usize::from(v > 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct HypothesisSet {
    pub stumps: Vec<Stump>,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.stumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stumps.is_empty()
    }
}

/// Every behaviorally distinct stump on the pooled samples of `s` and `t`:
/// per feature, thresholds at midpoints of consecutive distinct values plus
/// one sentinel beyond the maximum (covering the constant classifiers), each
/// with both polarities.
pub fn enumerate_stumps(s: &LabeledDataset, t: &LabeledDataset) -> Result<HypothesisSet> {
    if s.dim() != t.dim() {
        return Err(Error::Data(format!(
            "feature dims differ: {} vs {}",
            s.dim(),
            t.dim()
        )));
    }
    let d = s.dim();
    if d > MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: MAX_FEATURES,
            found: d,
        });
    }

    let mut stumps = Vec::new();
    for j in 0..d {
        let mut values: Vec<f64> = s
            .features
            .data()
            .iter()
            .skip(j)
            .step_by(d)
            .chain(t.features.data().iter().skip(j).step_by(d))
            .copied()
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        values.dedup();

        let mut thresholds: Vec<f64> = values.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        thresholds.push(values[values.len() - 1] + 1.0);

        let count = stumps.len() + thresholds.len() * 2;
        if count > MAX_HYPOTHESES {
            return Err(Error::HypothesisCapExceeded {
                count,
                cap: MAX_HYPOTHESES,
            });
        }
        for &threshold in &thresholds {
            for polarity in [1i8, -1] {
                stumps.push(Stump {
                    feature: j,
                    threshold,
                    polarity,
                });
            }
        }
    }
    Ok(HypothesisSet { stumps })
}

/// Predictions of every stump over a feature matrix, packed as bit rows.
struct PredictionBits {
    words: Vec<Vec<u64>>,
    n: usize,
}

impl PredictionBits {
    fn compute(h: &HypothesisSet, features: &Tensor) -> Self {
        let n = features.shape()[0];
        let d = features.shape()[1];
        let n_words = n.div_ceil(64);
        let words = h
            .stumps
            .iter()
            .map(|stump| {
                let mut row = vec![0u64; n_words];
                for i in 0..n {
                    let sample = &features.data()[i * d..(i + 1) * d];
                    if stump.predict(sample) == 1 {
                        row[i / 64] |= 1u64 << (i % 64);
                    }
                }
                row
            })
            .collect();
        PredictionBits { words, n }
    }

    fn ones(&self, idx: usize) -> usize {
        self.words[idx].iter().map(|w| w.count_ones() as usize).sum()
    }

    fn xor_count(&self, a: usize, b: usize) -> usize {
        self.words[a]
            .iter()
            .zip(&self.words[b])
            .map(|(x, y)| (x ^ y).count_ones() as usize)
            .sum()
    }
}

fn label_bits(labels: &[usize]) -> Vec<u64> {
    let mut row = vec![0u64; labels.len().div_ceil(64)];
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            row[i / 64] |= 1u64 << (i % 64);
        }
    }
    row
}

fn risk(pred: &[u64], labels: &[u64], n: usize) -> f64 {
    let wrong: usize = pred
        .iter()
        .zip(labels)
        .map(|(p, l)| (p ^ l).count_ones() as usize)
        .sum();
    wrong as f64 / n as f64
}

/// `2 sup_{h,h'} | E_S I[h != h'] - E_T I[h != h'] |`, exact over the
/// empirical samples.
pub fn empirical_hdh(h: &HypothesisSet, s_features: &Tensor, t_features: &Tensor) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    let s_bits = PredictionBits::compute(h, s_features);
    let t_bits = PredictionBits::compute(h, t_features);
    let mut sup: f64 = 0.0;
    for a in 0..h.len() {
        for b in a..h.len() {
            let dis_s = s_bits.xor_count(a, b) as f64 / s_bits.n as f64;
            let dis_t = t_bits.xor_count(a, b) as f64 / t_bits.n as f64;
            sup = sup.max((dis_s - dis_t).abs());
        }
    }
    Ok(2.0 * sup)
}

/// `2 sup_h | E_S I[h != 1] - E_T I[h != 1] |`, exact over the empirical
/// samples.
pub fn empirical_h_distance(
    h: &HypothesisSet,
    s_features: &Tensor,
    t_features: &Tensor,
) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    let s_bits = PredictionBits::compute(h, s_features);
    let t_bits = PredictionBits::compute(h, t_features);
    let mut sup: f64 = 0.0;
    for idx in 0..h.len() {
        let not_one_s = (s_bits.n - s_bits.ones(idx)) as f64 / s_bits.n as f64;
        let not_one_t = (t_bits.n - t_bits.ones(idx)) as f64 / t_bits.n as f64;
        sup = sup.max((not_one_s - not_one_t).abs());
    }
    Ok(2.0 * sup)
}

/// Everything the bound verifier computes over one `(S, T)` pair.
#[derive(Clone, Debug)]
pub struct BoundReport {
    /// Per-hypothesis empirical source risk.
    pub r_s: Vec<f64>,
    /// Per-hypothesis empirical target risk.
    pub r_t: Vec<f64>,
    pub d_h: f64,
    pub d_hdh: f64,
    /// Minimal joint risk `min_h [R_S(h) + R_T(h)]`.
    pub lambda_ideal: f64,
    /// `min_h [R_S(h) + d_hdh/2 + lambda - R_T(h)]`; the bound holds for
    /// every hypothesis iff this is non-negative.
    pub bound_slack: f64,
    pub holds: bool,
}

impl BoundReport {
    /// Flat `key = value` serialization of the scalar fields.
    pub fn to_key_values(&self) -> String {
        format!(
            "n_hypotheses = {}\nd_h = {}\nd_hdh = {}\nlambda_ideal = {}\nbound_slack = {}\nholds = {}\n",
            self.r_s.len(),
            self.d_h,
            self.d_hdh,
            self.lambda_ideal,
            self.bound_slack,
            self.holds
        )
    }
}

/// Verify `R_T(h) <= R_S(h) + d_hdh/2 + lambda` for every hypothesis, with
/// every quantity computed exactly over the empirical distributions.
pub fn verify_bound(
    h: &HypothesisSet,
    s: &LabeledDataset,
    t: &LabeledDataset,
) -> Result<BoundReport> {
    if h.is_empty() {
        return Err(Error::EmptyHypothesisSet);
    }
    for ds in [s, t] {
        if let Some(&bad) = ds.labels.iter().find(|&&l| l > 1) {
            return Err(Error::NonBinaryLabels(bad));
        }
    }

    let s_bits = PredictionBits::compute(h, &s.features);
    let t_bits = PredictionBits::compute(h, &t.features);
    let s_labels = label_bits(&s.labels);
    let t_labels = label_bits(&t.labels);

    let r_s: Vec<f64> = (0..h.len())
        .map(|i| risk(&s_bits.words[i], &s_labels, s.len()))
        .collect();
    let r_t: Vec<f64> = (0..h.len())
        .map(|i| risk(&t_bits.words[i], &t_labels, t.len()))
        .collect();

    let d_h = empirical_h_distance(h, &s.features, &t.features)?;
    let d_hdh = empirical_hdh(h, &s.features, &t.features)?;
    let lambda_ideal = r_s
        .iter()
        .zip(&r_t)
        .map(|(a, b)| a + b)
        .fold(f64::INFINITY, f64::min);
    let bound_slack = r_s
        .iter()
        .zip(&r_t)
        .map(|(rs, rt)| rs + 0.5 * d_hdh + lambda_ideal - rt)
        .fold(f64::INFINITY, f64::min);

    Ok(BoundReport {
        r_s,
        r_t,
        d_h,
        d_hdh,
        lambda_ideal,
        bound_slack,
        holds: bound_slack >= -1e-12,
    })
}

/// Argmax disagreement of the current classifier pair on source and target
/// features, and `2 |dis_S - dis_T|` as the current-pair lower bound on the
/// pair distance.
pub fn network_pair_discrepancy_proxy(
    g: &Network,
    f1: &Network,
    f2: &Network,
    s_features: &Tensor,
    t_features: &Tensor,
) -> Result<(f64, f64, f64)> {
    let frac_diff = |features: &Tensor| -> Result<f64> {
        let p1 = predictions(g, f1, features)?;
        let p2 = predictions(g, f2, features)?;
        let differ = p1.iter().zip(&p2).filter(|(a, b)| a != b).count();
        Ok(differ as f64 / p1.len() as f64)
    };
    let dis_s = frac_diff(s_features)?;
    let dis_t = frac_diff(t_features)?;
    Ok((dis_s, dis_t, 2.0 * (dis_s - dis_t).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_moons;

    fn one_dim_dataset(values: &[f64], labels: &[usize]) -> LabeledDataset {
        LabeledDataset::new(
            Tensor::matrix(values.len(), 1, values.to_vec()).unwrap(),
            labels.to_vec(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn enumeration_counts_and_coverage() {
        // pooled values {0, 1, 2} on one feature: 2 midpoints + 1 sentinel,
        // both polarities = 6 stumps; includes the all-0 and all-1 behaviors
        let s = one_dim_dataset(&[0.0, 1.0], &[0, 1]);
        let t = one_dim_dataset(&[2.0], &[1]);
        let h = enumerate_stumps(&s, &t).unwrap();
        assert_eq!(h.len(), 6);
        let all = [0.0, 1.0, 2.0];
        let behaviors: std::collections::HashSet<Vec<usize>> = h
            .stumps
            .iter()
            .map(|st| all.iter().map(|&v| st.predict(&[v])).collect())
            .collect();
        assert!(behaviors.contains(&vec![0, 0, 0]));
        assert!(behaviors.contains(&vec![1, 1, 1]));
        assert!(behaviors.contains(&vec![0, 1, 1]));
        assert!(behaviors.contains(&vec![0, 0, 1]));
    }

    #[test]
    fn too_many_features_rejected() {
        let s = LabeledDataset::new(Tensor::matrix(2, 5, vec![0.0; 10]).unwrap(), vec![0, 1], 2)
            .unwrap();
        assert!(matches!(
            enumerate_stumps(&s, &s),
            Err(Error::TooManyFeatures { max: 4, found: 5 })
        ));
    }

    #[test]
    fn identical_domains_have_zero_distances() {
        let s = make_moons(40, 0.1, 3);
        let h = enumerate_stumps(&s, &s).unwrap();
        assert_eq!(empirical_hdh(&h, &s.features, &s.features).unwrap(), 0.0);
        assert_eq!(
            empirical_h_distance(&h, &s.features, &s.features).unwrap(),
            0.0
        );
    }

    #[test]
    fn distances_are_symmetric_and_bounded() {
        let s = make_moons(25, 0.1, 3);
        let t = make_moons(25, 0.1, 9).rotate(40.0).unwrap();
        let h = enumerate_stumps(&s, &t).unwrap();
        let ab = empirical_hdh(&h, &s.features, &t.features).unwrap();
        let ba = empirical_hdh(&h, &t.features, &s.features).unwrap();
        assert_eq!(ab, ba);
        let hab = empirical_h_distance(&h, &s.features, &t.features).unwrap();
        let hba = empirical_h_distance(&h, &t.features, &s.features).unwrap();
        assert_eq!(hab, hba);
        for v in [ab, hab] {
            assert!((0.0..=2.0).contains(&v));
        }
        assert!(ab > 0.0, "rotated moons must show a positive pair distance");
    }

    #[test]
    fn growing_the_class_never_shrinks_the_distances() {
        let s = make_moons(20, 0.1, 5);
        let t = make_moons(20, 0.1, 6).rotate(25.0).unwrap();
        let h = enumerate_stumps(&s, &t).unwrap();
        let half = HypothesisSet {
            stumps: h.stumps[..h.len() / 2].to_vec(),
        };
        assert!(
            empirical_hdh(&h, &s.features, &t.features).unwrap()
                >= empirical_hdh(&half, &s.features, &t.features).unwrap()
        );
        assert!(
            empirical_h_distance(&h, &s.features, &t.features).unwrap()
                >= empirical_h_distance(&half, &s.features, &t.features).unwrap()
        );
    }

    #[test]
    fn hand_checked_one_dimensional_bound() {
        // S = {0 -> 0, 2 -> 1}, T = {1 -> 0, 3 -> 1}.
        // By hand: d_h = 1, d_hdh = 1, lambda = 0, slack = 0 (tight at the
        // stump with threshold 0.5).
        let s = one_dim_dataset(&[0.0, 2.0], &[0, 1]);
        let t = one_dim_dataset(&[1.0, 3.0], &[0, 1]);
        let h = enumerate_stumps(&s, &t).unwrap();
        let report = verify_bound(&h, &s, &t).unwrap();
        assert!((report.d_h - 1.0).abs() < 1e-12);
        assert!((report.d_hdh - 1.0).abs() < 1e-12);
        assert!(report.lambda_ideal.abs() < 1e-12);
        assert!(report.bound_slack.abs() < 1e-12);
        assert!(report.holds);
    }

    #[test]
    fn identical_domains_bound_reduces_to_lambda() {
        let s = make_moons(30, 0.05, 8);
        let h = enumerate_stumps(&s, &s).unwrap();
        let report = verify_bound(&h, &s, &s).unwrap();
        assert_eq!(report.d_hdh, 0.0);
        let min_rs = report.r_s.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((report.lambda_ideal - 2.0 * min_rs).abs() < 1e-12);
        assert!(report.holds);
    }

    #[test]
    fn single_hypothesis_class() {
        let s = one_dim_dataset(&[0.0, 2.0], &[0, 1]);
        let t = one_dim_dataset(&[1.0, 3.0], &[1, 0]);
        let h = HypothesisSet {
            stumps: vec![Stump {
                feature: 0,
                threshold: 0.5,
                polarity: 1,
            }],
        };
        let report = verify_bound(&h, &s, &t).unwrap();
        // the only pair is (h, h): zero pair distance, and the bound
        // degenerates to R_T <= R_S + (R_S + R_T), always true
        assert_eq!(report.d_hdh, 0.0);
        assert!(report.holds);
    }

    #[test]
    fn non_binary_labels_rejected() {
        let s = LabeledDataset::new(
            Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap(),
            vec![0, 2],
            3,
        )
        .unwrap();
        assert!(matches!(
            verify_bound(&HypothesisSet { stumps: vec![] }, &s, &s),
            Err(Error::EmptyHypothesisSet)
        ));
        let h = enumerate_stumps(&s, &s).unwrap();
        assert!(matches!(
            verify_bound(&h, &s, &s),
            Err(Error::NonBinaryLabels(2))
        ));
    }

    #[test]
    fn complementary_pair_contributes_nothing() {
        // h and its negation disagree everywhere on both domains, so their
        // pair term is |1 - 1| = 0 and the two-element class has distance 0
        let s = one_dim_dataset(&[0.0, 2.0], &[0, 1]);
        let t = one_dim_dataset(&[5.0, 7.0], &[0, 1]);
        let pair = HypothesisSet {
            stumps: vec![
                Stump { feature: 0, threshold: 1.0, polarity: 1 },
                Stump { feature: 0, threshold: 1.0, polarity: -1 },
            ],
        };
        assert_eq!(empirical_hdh(&pair, &s.features, &t.features).unwrap(), 0.0);

        // adding a constant classifier exposes the mass shift across the
        // threshold: half of S sits below 1, none of T does -> sup = 1/2
        let mut with_const = pair.clone();
        with_const.stumps.push(Stump {
            feature: 0,
            threshold: 10.0,
            polarity: -1, // predicts 1 everywhere on these samples
        });
        let d = empirical_hdh(&with_const, &s.features, &t.features).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }
}
