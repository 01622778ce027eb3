//! Networks, parameter initialization, and optimizers.
//!
//! A [`Network`] is an ordered stack of fully-connected, batch-norm, and ReLU
//! layers over the autodiff record. The feature generator and the two
//! classifier heads of the adversarial trainer are each one `Network`.

mod checkpoint;
mod optim;

pub use checkpoint::{load_network, save_network, CHECKPOINT_MAGIC};
pub use optim::{Optimizer, OptimizerKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ComputationRecord, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// One layer of a [`NetworkSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Linear { input: usize, output: usize },
    BatchNorm1d { features: usize },
    Relu,
}

/// Ordered layer stack with conforming dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerKind>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerKind>) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut saw_linear = false;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerKind::Linear { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(Error::BadSpec(format!("layer {i}: zero-width linear")));
                    }
                    if let Some(w) = width {
                        if w != input {
                            return Err(Error::BadSpec(format!(
                                "layer {i}: expects {input} inputs but previous width is {w}"
                            )));
                        }
                    }
                    width = Some(output);
                    saw_linear = true;
                }
                LayerKind::BatchNorm1d { features } => match width {
                    Some(w) if w == features => {}
                    Some(w) => {
                        return Err(Error::BadSpec(format!(
                            "layer {i}: batch norm over {features} features but width is {w}"
                        )))
                    }
                    None => {
                        return Err(Error::BadSpec(format!(
                            "layer {i}: batch norm before any linear layer"
                        )))
                    }
                },
                LayerKind::Relu => {}
            }
        }
        if !saw_linear {
            return Err(Error::BadSpec("spec has no linear layer".into()));
        }
        Ok(NetworkSpec { layers })
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match *l {
                LayerKind::Linear { input, .. } => Some(input),
                _ => None,
            })
            .expect("spec has a linear layer")
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                LayerKind::Linear { output, .. } => Some(output),
                _ => None,
            })
            .expect("spec has a linear layer")
    }

    // ── architecture presets ────────────────────────────────────────────

    /// Two-moons generator: 2 -> 15 -> 15, ReLU activations, 15-d features.
    pub fn toy_generator() -> Self {
        NetworkSpec::new(vec![
            LayerKind::Linear { input: 2, output: 15 },
            LayerKind::Relu,
            LayerKind::Linear { input: 15, output: 15 },
            LayerKind::Relu,
        ])
        .expect("static spec")
    }

    /// Two-moons classifier head: 15 -> 15 -> 2 logits.
    pub fn toy_classifier() -> Self {
        NetworkSpec::new(vec![
            LayerKind::Linear { input: 15, output: 15 },
            LayerKind::Relu,
            LayerKind::Linear { input: 15, output: 2 },
        ])
        .expect("static spec")
    }

    /// Digit generator over 16x16 inputs: 256 -> 400 -> 400 with batch norm.
    pub fn digit_generator() -> Self {
        NetworkSpec::new(vec![
            LayerKind::Linear { input: 256, output: 400 },
            LayerKind::BatchNorm1d { features: 400 },
            LayerKind::Relu,
            LayerKind::Linear { input: 400, output: 400 },
            LayerKind::BatchNorm1d { features: 400 },
            LayerKind::Relu,
        ])
        .expect("static spec")
    }

    /// Digit classifier head: 400 -> 100 -> k logits with batch norm.
    pub fn digit_classifier(k: usize) -> Self {
        NetworkSpec::new(vec![
            LayerKind::Linear { input: 400, output: 100 },
            LayerKind::BatchNorm1d { features: 100 },
            LayerKind::Relu,
            LayerKind::Linear { input: 100, output: k },
        ])
        .expect("static spec")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter or buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

struct Binding {
    record: u64,
    nodes: Vec<usize>,
}

/// Parameterized network with train/eval modes and batch-norm running stats.
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Param>,
    buffers: Vec<Param>,
    mode: Mode,
    bound: Option<Binding>,
}

/// Initialize a network from a spec with a deterministic seed.
///
/// Linear weights are drawn uniformly from `(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// biases start at zero, batch-norm scale at one and shift at zero. The same
/// seed always yields the same parameters; different seeds yield different
/// classifiers.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerKind::Linear { input, output } => {
                let bound = (6.0 / input as f64).sqrt();
                let w: Vec<f64> = (0..input * output)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                    .collect();
                params.push(Param {
                    name: format!("layer{i}.weight"),
                    shape: vec![input, output],
                    data: w,
                });
                params.push(Param {
                    name: format!("layer{i}.bias"),
                    shape: vec![output],
                    data: vec![0.0; output],
                });
            }
            LayerKind::BatchNorm1d { features } => {
                params.push(Param {
                    name: format!("layer{i}.gamma"),
                    shape: vec![features],
                    data: vec![1.0; features],
                });
                params.push(Param {
                    name: format!("layer{i}.beta"),
                    shape: vec![features],
                    data: vec![0.0; features],
                });
                buffers.push(Param {
                    name: format!("layer{i}.running_mean"),
                    shape: vec![features],
                    data: vec![0.0; features],
                });
                buffers.push(Param {
                    name: format!("layer{i}.running_var"),
                    shape: vec![features],
                    data: vec![1.0; features],
                });
            }
            LayerKind::Relu => {}
        }
    }
    Network {
        spec: spec.clone(),
        params,
        buffers,
        mode: Mode::Train,
        bound: None,
    }
}

struct BnUpdate {
    buffer_idx: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    batch_rows: usize,
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn buffers(&self) -> &[Param] {
        &self.buffers
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [Param] {
        &mut self.buffers
    }

    /// Node ids of this network's parameters in the record it was last
    /// forwarded through, paired with the record id.
    pub(crate) fn binding(&self) -> Option<(u64, &[usize])> {
        self.bound.as_ref().map(|b| (b.record, b.nodes.as_slice()))
    }

    fn ensure_bound(&mut self, rec: &mut ComputationRecord) {
        let stale = match &self.bound {
            Some(b) => b.record != rec.id(),
            None => true,
        };
        if stale {
            let nodes = self
                .params
                .iter()
                .map(|p| {
                    let t = Tensor::new(p.shape.clone(), p.data.clone()).expect("param shapes");
                    rec.leaf(&t).node_id().expect("leaf is recorded")
                })
                .collect();
            self.bound = Some(Binding {
                record: rec.id(),
                nodes,
            });
        }
    }

    fn param_tensor(&self, rec_id: u64, name_idx: usize) -> Tensor {
        let b = self.bound.as_ref().expect("bound");
        debug_assert_eq!(b.record, rec_id);
        let p = &self.params[name_idx];
        Tensor::with_node(
            p.shape.clone(),
            p.data.clone(),
            crate::autograd::NodeRef {
                record: rec_id,
                id: b.nodes[name_idx],
            },
        )
    }

    /// Forward pass honoring the network mode. In train mode batch norm uses
    /// batch statistics and updates the running buffers; in eval mode it uses
    /// the running buffers and mutates nothing.
    pub fn forward(&mut self, rec: &mut ComputationRecord, batch: &Tensor) -> Result<Tensor> {
        self.ensure_bound(rec);
        let mut updates = Vec::new();
        let out = self.forward_impl(rec, batch, true, Some(&mut updates))?;
        for u in updates {
            let unbias = if u.batch_rows > 1 {
                u.batch_rows as f64 / (u.batch_rows as f64 - 1.0)
            } else {
                1.0
            };
            let mean_buf = &mut self.buffers[u.buffer_idx];
            for (rm, &m) in mean_buf.data.iter_mut().zip(&u.mean) {
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
            }
            let var_buf = &mut self.buffers[u.buffer_idx + 1];
            for (rv, &v) in var_buf.data.iter_mut().zip(&u.var) {
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * (v * unbias);
            }
        }
        Ok(out)
    }

    /// Pure evaluation forward: always uses running statistics, never
    /// mutates the network, and does not bind parameters for gradient lookup.
    pub fn forward_eval(&self, rec: &mut ComputationRecord, batch: &Tensor) -> Result<Tensor> {
        self.forward_impl(rec, batch, false, None)
    }

    fn forward_impl(
        &self,
        rec: &mut ComputationRecord,
        batch: &Tensor,
        bound_params: bool,
        mut bn_updates: Option<&mut Vec<BnUpdate>>,
    ) -> Result<Tensor> {
        if batch.rank() != 2 || batch.shape()[1] != self.spec.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "batch shape {:?}, network expects [*, {}]",
                    batch.shape(),
                    self.spec.input_dim()
                ),
            });
        }
        let rows = batch.shape()[0];
        let leaf_param = |rec: &mut ComputationRecord, this: &Self, idx: usize| -> Tensor {
            if bound_params {
                this.param_tensor(rec.id(), idx)
            } else {
                let p = &this.params[idx];
                rec.leaf(&Tensor::new(p.shape.clone(), p.data.clone()).expect("param shapes"))
            }
        };

        let mut x = if batch.node_id().is_some() {
            batch.clone()
        } else {
            rec.leaf(batch)
        };
        let mut param_idx = 0usize;
        let mut buffer_idx = 0usize;
        let train = bn_updates.is_some() && self.mode == Mode::Train;

        for layer in &self.spec.layers {
            match *layer {
                LayerKind::Linear { .. } => {
                    let w = leaf_param(rec, self, param_idx);
                    let b = leaf_param(rec, self, param_idx + 1);
                    param_idx += 2;
                    let h = rec.matmul(&x, &w)?;
                    x = rec.add_bias(&h, &b)?;
                }
                LayerKind::BatchNorm1d { features } => {
                    let gamma_idx = param_idx;
                    let beta_idx = param_idx + 1;
                    param_idx += 2;
                    if train {
                        let gamma = leaf_param(rec, self, gamma_idx);
                        let beta = leaf_param(rec, self, beta_idx);
                        let out = rec.batch_norm_train(&x, &gamma, &beta, BN_EPS, BN_MOMENTUM)?;
                        let (mean, var) = rec.bn_batch_stats(&out)?;
                        if let Some(updates) = bn_updates.as_deref_mut() {
                            updates.push(BnUpdate {
                                buffer_idx,
                                mean: mean.to_vec(),
                                var: var.to_vec(),
                                batch_rows: rows,
                            });
                        }
                        x = out;
                    } else {
                        // running-stat affine: x * scale + shift, composed from
                        // elementwise primitives against constant leaves
                        let rm = &self.buffers[buffer_idx].data;
                        let rv = &self.buffers[buffer_idx + 1].data;
                        let gamma = &self.params[gamma_idx].data;
                        let beta = &self.params[beta_idx].data;
                        let mut scale = vec![0.0; features];
                        let mut shift = vec![0.0; features];
                        for c in 0..features {
                            scale[c] = gamma[c] / (rv[c] + BN_EPS).sqrt();
                            shift[c] = beta[c] - rm[c] * scale[c];
                        }
                        let mut tiled = vec![0.0; rows * features];
                        for r in 0..rows {
                            tiled[r * features..(r + 1) * features].copy_from_slice(&scale);
                        }
                        let scale_t = rec.leaf(&Tensor::matrix(rows, features, tiled)?);
                        let shift_t = rec.leaf(&Tensor::vector(shift));
                        let scaled = rec.mul(&x, &scale_t)?;
                        x = rec.add_bias(&scaled, &shift_t)?;
                    }
                    buffer_idx += 2;
                }
                LayerKind::Relu => {
                    x = rec.relu(&x)?;
                }
            }
        }
        Ok(x)
    }

    /// Per-parameter gradient vectors from a backward pass over the record
    /// this network was last forwarded through.
    pub fn gradient_vectors(
        &self,
        grads: &crate::autograd::Gradients,
    ) -> Result<Vec<(String, Vec<f64>)>> {
        let (record, nodes) = self
            .binding()
            .ok_or_else(|| Error::MissingGrad("network was never forwarded".into()))?;
        if record != grads.record_id() {
            return Err(Error::MissingGrad(
                "gradients come from a different record".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.params.len());
        for (p, &node) in self.params.iter().zip(nodes) {
            let g = grads
                .by_node(node)
                .ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
            out.push((p.name.clone(), g.to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::toy_generator();
        let a = init_network(&spec, 7);
        let b = init_network(&spec, 7);
        let c = init_network(&spec, 8);
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.data, pb.data);
        }
        let differs = a
            .params()
            .iter()
            .zip(c.params())
            .any(|(pa, pc)| pa.data != pc.data);
        assert!(differs, "different seeds must give different parameters");
    }

    #[test]
    fn linear_shapes() {
        let spec = NetworkSpec::new(vec![LayerKind::Linear { input: 2, output: 15 }]).unwrap();
        let net = init_network(&spec, 1);
        assert_eq!(net.params()[0].shape, vec![2, 15]);
        assert_eq!(net.params()[1].shape, vec![15]);
        assert!(net.params()[1].data.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn bad_spec_rejected() {
        assert!(NetworkSpec::new(vec![
            LayerKind::Linear { input: 2, output: 3 },
            LayerKind::Linear { input: 4, output: 5 },
        ])
        .is_err());
        assert!(NetworkSpec::new(vec![LayerKind::BatchNorm1d { features: 3 }]).is_err());
        assert!(NetworkSpec::new(vec![
            LayerKind::Linear { input: 2, output: 3 },
            LayerKind::BatchNorm1d { features: 4 },
        ])
        .is_err());
    }

    #[test]
    fn zero_weight_network_outputs_zero() {
        let spec = NetworkSpec::new(vec![LayerKind::Linear { input: 3, output: 2 }]).unwrap();
        let mut net = init_network(&spec, 1);
        for p in net.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rec = ComputationRecord::new();
        let x = Tensor::matrix(4, 3, vec![1.0; 12]).unwrap();
        let y = net.forward(&mut rec, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_pure_and_repeatable() {
        let spec = NetworkSpec::digit_classifier(3);
        let mut net = init_network(&spec, 5);
        net.set_mode(Mode::Eval);
        let x = Tensor::matrix(2, 400, (0..800).map(|i| (i as f64 * 0.01).sin()).collect())
            .unwrap();
        let buffers_before: Vec<Vec<f64>> = net.buffers().iter().map(|b| b.data.clone()).collect();
        let mut rec1 = ComputationRecord::new();
        let y1 = net.forward_eval(&mut rec1, &x).unwrap();
        let mut rec2 = ComputationRecord::new();
        let y2 = net.forward_eval(&mut rec2, &x).unwrap();
        assert_eq!(y1.data(), y2.data());
        let buffers_after: Vec<Vec<f64>> = net.buffers().iter().map(|b| b.data.clone()).collect();
        assert_eq!(buffers_before, buffers_after);
    }

    #[test]
    fn toy_stack_output_shape() {
        // paper-scale toy batch: 200 points through G then F
        let mut g = init_network(&NetworkSpec::toy_generator(), 1);
        let mut f = init_network(&NetworkSpec::toy_classifier(), 2);
        let mut rec = ComputationRecord::new();
        let x = Tensor::matrix(200, 2, (0..400).map(|i| (i as f64 * 0.03).cos()).collect())
            .unwrap();
        let feat = g.forward(&mut rec, &x).unwrap();
        let logits = f.forward(&mut rec, &feat).unwrap();
        assert_eq!(logits.shape(), &[200, 2]);
    }

    #[test]
    fn train_mode_bn_updates_running_stats_monotonically() {
        let spec = NetworkSpec::new(vec![
            LayerKind::Linear { input: 2, output: 2 },
            LayerKind::BatchNorm1d { features: 2 },
        ])
        .unwrap();
        let mut net = init_network(&spec, 3);
        // make the linear layer the identity so batch stats are those of x
        net.params_mut()[0].data = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor::matrix(4, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let batch_mean = [2.5, 25.0];
        let mut last_err = f64::INFINITY;
        for _ in 0..20 {
            let mut rec = ComputationRecord::new();
            net.forward(&mut rec, &x).unwrap();
            let rm = &net.buffers()[0].data;
            let err = (rm[0] - batch_mean[0]).abs() + (rm[1] - batch_mean[1]).abs();
            assert!(err < last_err, "running mean must approach batch mean");
            last_err = err;
        }
    }
}
