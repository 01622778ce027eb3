//! Adam and momentum-SGD parameter updates.

use crate::autograd::Gradients;
use crate::error::{Error, Result};

use super::Network;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    MomentumSgd {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
}

/// Optimizer state for one parameter group (one network).
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    /// first moment (Adam) or velocity (momentum SGD), per parameter
    m: Vec<Vec<f64>>,
    /// second moment, Adam only
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Adam with the usual `(beta1, beta2, eps) = (0.9, 0.999, 1e-8)`.
    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn momentum_sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::MomentumSgd {
            lr,
            momentum,
            weight_decay,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter of `net`, using the gradients of
    /// the record the network was last forwarded through.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let (record, nodes) = net
            .binding()
            .ok_or_else(|| Error::MissingGrad("network was never forwarded".into()))?;
        if record != grads.record_id() {
            return Err(Error::MissingGrad(
                "gradients come from a different record than the last forward".into(),
            ));
        }
        let nodes = nodes.to_vec();

        if self.m.is_empty() {
            self.m = net.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.v = self.m.clone();
            }
        }

        self.step += 1;
        let t = self.step as i32;

        for (i, node) in nodes.iter().enumerate() {
            let name_missing = || Error::MissingGrad(net.params()[i].name.clone());
            let g = grads.by_node(*node).ok_or_else(name_missing)?.to_vec();
            let theta = &mut net.params_mut()[i].data;
            match self.kind {
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for j in 0..theta.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::MomentumSgd {
                    lr,
                    momentum,
                    weight_decay,
                } => {
                    let vel = &mut self.m[i];
                    for j in 0..theta.len() {
                        let g_eff = g[j] + weight_decay * theta[j];
                        vel[j] = momentum * vel[j] + g_eff;
                        theta[j] -= lr * vel[j];
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{ComputationRecord, Tensor};
    use crate::nn::{init_network, LayerKind, NetworkSpec};

    fn one_param_net(value: f64) -> Network {
        let spec = NetworkSpec::new(vec![LayerKind::Linear { input: 1, output: 1 }]).unwrap();
        let mut net = init_network(&spec, 0);
        net.params_mut()[0].data = vec![value];
        net
    }

    /// Forward `x=1` through the 1x1 net and backward `loss = mean(w*x + b)`,
    /// so grad(w) = 1 * upstream. `scale` tunes the gradient value.
    fn grads_for(net: &mut Network, scale: f64) -> Gradients {
        let mut rec = ComputationRecord::new();
        let x = Tensor::matrix(1, 1, vec![scale]).unwrap();
        let y = net.forward(&mut rec, &x).unwrap();
        let loss = rec.mean_all(&y).unwrap();
        rec.backward(&loss).unwrap()
    }

    #[test]
    fn plain_sgd_arithmetic() {
        // lr=0.1, momentum 0, theta=1.0, g=0.5 -> theta = 0.95
        let mut net = one_param_net(1.0);
        let mut opt = Optimizer::momentum_sgd(0.1, 0.0, 0.0);
        let grads = grads_for(&mut net, 0.5);
        opt.step(&mut net, &grads).unwrap();
        assert!((net.params()[0].data[0] - 0.95).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters_under_sgd() {
        let mut net = one_param_net(0.7);
        let mut opt = Optimizer::momentum_sgd(0.1, 0.9, 0.0);
        let grads = grads_for(&mut net, 0.0);
        opt.step(&mut net, &grads).unwrap();
        assert_eq!(net.params()[0].data[0], 0.7);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // g=1, lr=2e-4: bias correction makes m_hat/sqrt(v_hat) = 1, so the
        // update is -lr/(1 + lr-scaled eps); hand value -1.9999999800000002e-4
        let mut net = one_param_net(0.0);
        let mut opt = Optimizer::adam(2e-4);
        let grads = grads_for(&mut net, 1.0);
        opt.step(&mut net, &grads).unwrap();
        let delta = net.params()[0].data[0];
        assert!((delta - (-1.999_999_980_000_001_8e-4)).abs() < 1e-12);
    }

    #[test]
    fn missing_binding_is_an_error() {
        let spec = NetworkSpec::new(vec![LayerKind::Linear { input: 1, output: 1 }]).unwrap();
        let mut fresh = init_network(&spec, 0);
        let mut other = one_param_net(1.0);
        let grads = grads_for(&mut other, 1.0);
        let mut opt = Optimizer::adam(1e-3);
        assert!(matches!(
            opt.step(&mut fresh, &grads),
            Err(Error::MissingGrad(_))
        ));
    }
}
