//! Classification and discrepancy losses, all differentiable through the
//! record.

use crate::autograd::{ComputationRecord, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped here before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// A `[B, K]` batch of per-row probability vectors.
#[derive(Clone, Debug)]
pub struct ProbBatch {
    tensor: Tensor,
}

impl ProbBatch {
    /// Validate row sums (within 1e-6) and non-negativity.
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "ProbBatch",
                detail: format!("expected [B, K], got {:?}", tensor.shape()),
            });
        }
        let (rows, cols) = (tensor.shape()[0], tensor.shape()[1]);
        for r in 0..rows {
            let row = &tensor.data()[r * cols..(r + 1) * cols];
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::DomainError {
                    op: "ProbBatch",
                    detail: format!("row {r} has a negative entry"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::DomainError {
                    op: "ProbBatch",
                    detail: format!("row {r} sums to {sum}"),
                });
            }
        }
        Ok(ProbBatch { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn batch_size(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.tensor.shape()[1]
    }

    /// Per-row argmax.
    pub fn argmax(&self) -> Vec<usize> {
        let (rows, cols) = (self.tensor.shape()[0], self.tensor.shape()[1]);
        (0..rows)
            .map(|r| {
                let row = &self.tensor.data()[r * cols..(r + 1) * cols];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                    .map(|(i, _)| i)
                    .expect("non-empty row")
            })
            .collect()
    }
}

/// Row softmax of logits as a [`ProbBatch`].
pub fn softmax_probs(rec: &mut ComputationRecord, logits: &Tensor) -> Result<ProbBatch> {
    let t = rec.softmax(logits, 1)?;
    Ok(ProbBatch { tensor: t })
}

/// Mean softmax cross entropy: `-(1/B) sum_b log p(y_b | x_b)`.
pub fn cross_entropy_loss(
    rec: &mut ComputationRecord,
    logits: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("expected [B, K] logits, got {:?}", logits.shape()),
        });
    }
    let (rows, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("{rows} logit rows vs {} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, k });
    }
    let p = rec.softmax(logits, 1)?;
    let idx = rec.leaf(&Tensor::from_labels(labels));
    let picked = rec.index_gather(&p, &idx)?;
    let clamped = rec.clamp_min(&picked, PROB_CLAMP)?;
    let lp = rec.log(&clamped)?;
    let mean = rec.mean_all(&lp)?;
    rec.neg(&mean)
}

/// Mean absolute difference of two probability batches:
/// `(1/B) sum_b (1/K) sum_k |p1 - p2|`.
pub fn discrepancy_l1(
    rec: &mut ComputationRecord,
    p1: &ProbBatch,
    p2: &ProbBatch,
) -> Result<Tensor> {
    check_same_shape(p1, p2)?;
    let d = rec.sub(p1.tensor(), p2.tensor())?;
    let a = rec.abs(&d)?;
    rec.mean_all(&a)
}

/// Mean squared difference variant, kept for the ablation where the squared
/// distance underperforms the absolute one.
pub fn discrepancy_l2(
    rec: &mut ComputationRecord,
    p1: &ProbBatch,
    p2: &ProbBatch,
) -> Result<Tensor> {
    check_same_shape(p1, p2)?;
    let d = rec.sub(p1.tensor(), p2.tensor())?;
    let sq = rec.mul(&d, &d)?;
    rec.mean_all(&sq)
}

fn check_same_shape(p1: &ProbBatch, p2: &ProbBatch) -> Result<()> {
    if p1.tensor().shape() != p2.tensor().shape() {
        return Err(Error::ShapeMismatch {
            op: "discrepancy",
            detail: format!("{:?} vs {:?}", p1.tensor().shape(), p2.tensor().shape()),
        });
    }
    Ok(())
}

/// `-(1/B) sum_b sum_k log p[b,k]`: minimized, this pushes every row toward
/// the uniform distribution, discouraging degenerate target assignments.
pub fn class_balance_loss(rec: &mut ComputationRecord, p: &ProbBatch) -> Result<Tensor> {
    let k = p.classes() as f64;
    let clamped = rec.clamp_min(p.tensor(), PROB_CLAMP)?;
    let lp = rec.log(&clamped)?;
    let mean = rec.mean_all(&lp)?; // (1/(B*K)) sum sum
    let scaled = rec.scale(&mean, k)?; // (1/B) sum sum
    rec.neg(&scaled)
}
