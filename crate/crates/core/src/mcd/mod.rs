//! Adversarial training by classifier discrepancy.
//!
//! One generator `G` feeds two classifier heads `F1`, `F2`. Training cycles
//! three phases: (A) fit all networks to labeled source batches, (B) update
//! only the heads to *increase* their output discrepancy on target batches
//! while staying accurate on source, and (C) update only the generator to
//! *decrease* that discrepancy, `n` times per cycle. A gradient-reversal
//! variant folds B and C into one combined update with the same gradients.

mod losses;
mod metrics;

pub use losses::{
    class_balance_loss, cross_entropy_loss, discrepancy_l1, discrepancy_l2, softmax_probs,
    ProbBatch, PROB_CLAMP,
};
pub use metrics::{pearson, MetricsLog, MetricsRow, METRICS_CSV_HEADER};

use crate::autograd::{ComputationRecord, Gradients, Tensor};
use crate::data::{batches, derive_seed, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{init_network, Mode, Network, NetworkSpec, Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscrepancyKind {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// The full A/B/C cycle.
    ThreeStep,
    /// One combined update through a gradient-reversal boundary.
    Grl,
    /// Step A only: the non-adapted baseline.
    SourceOnly,
    /// Steps A and B only: heads maximize discrepancy, generator never
    /// answers.
    NoStepC,
}

/// All hyperparameters of one training run.
#[derive(Clone, Debug)]
pub struct TrainingConfig {
    /// Generator updates (step C repeats) per cycle.
    pub n: usize,
    /// Class count.
    pub k: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Class-balance weight; 0 disables the term.
    pub lambda_cb: f64,
    pub discrepancy: DiscrepancyKind,
    pub variant: Variant,
    pub max_iters: usize,
    pub eval_every: usize,
    pub g_seed: u64,
    pub f1_seed: u64,
    pub f2_seed: u64,
    pub data_seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lambda_cb < 0.0 {
            return Err(Error::Config("lambda_cb must be non-negative".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// Generator/classifier architecture pair.
#[derive(Clone, Debug)]
pub struct McdArch {
    pub generator: NetworkSpec,
    pub classifier: NetworkSpec,
}

impl McdArch {
    pub fn toy() -> Self {
        McdArch {
            generator: NetworkSpec::toy_generator(),
            classifier: NetworkSpec::toy_classifier(),
        }
    }

    pub fn digits(k: usize) -> Self {
        McdArch {
            generator: NetworkSpec::digit_generator(),
            classifier: NetworkSpec::digit_classifier(k),
        }
    }
}

pub struct StepALosses {
    pub ce_f1: f64,
    pub ce_f2: f64,
}

pub struct StepBLosses {
    pub ce_f1: f64,
    pub ce_f2: f64,
    pub discrepancy: f64,
}

pub struct GrlLosses {
    pub ce_f1: f64,
    pub ce_f2: f64,
    pub discrepancy: f64,
}

fn discrepancy_of(
    rec: &mut ComputationRecord,
    kind: DiscrepancyKind,
    p1: &ProbBatch,
    p2: &ProbBatch,
) -> Result<Tensor> {
    match kind {
        DiscrepancyKind::L1 => discrepancy_l1(rec, p1, p2),
        DiscrepancyKind::L2 => discrepancy_l2(rec, p1, p2),
    }
}

/// Step A: one update of `G`, `F1`, `F2` minimizing the summed source cross
/// entropy of both heads.
pub fn step_a(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    source_batch: &Tensor,
    labels: &[usize],
    g_opt: &mut Optimizer,
    f1_opt: &mut Optimizer,
    f2_opt: &mut Optimizer,
) -> Result<StepALosses> {
    let mut rec = ComputationRecord::new();
    let feat = g.forward(&mut rec, source_batch)?;
    let logits1 = f1.forward(&mut rec, &feat)?;
    let logits2 = f2.forward(&mut rec, &feat)?;
    let ce1 = cross_entropy_loss(&mut rec, &logits1, labels)?;
    let ce2 = cross_entropy_loss(&mut rec, &logits2, labels)?;
    let loss = rec.add(&ce1, &ce2)?;
    let grads = rec.backward(&loss)?;
    g_opt.step(g, &grads)?;
    f1_opt.step(f1, &grads)?;
    f2_opt.step(f2, &grads)?;
    Ok(StepALosses {
        ce_f1: ce1.item()?,
        ce_f2: ce2.item()?,
    })
}

/// Step B: one update of the heads only, minimizing source cross entropy
/// minus target discrepancy (so discrepancy is pushed up). `G` is bitwise
/// untouched.
pub fn step_b(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    source_batch: &Tensor,
    labels: &[usize],
    target_batch: &Tensor,
    f1_opt: &mut Optimizer,
    f2_opt: &mut Optimizer,
    config: &TrainingConfig,
) -> Result<StepBLosses> {
    if source_batch.shape()[0] != target_batch.shape()[0] {
        return Err(Error::BatchSizeMismatch {
            source_rows: source_batch.shape()[0],
            target_rows: target_batch.shape()[0],
        });
    }
    let mut rec = ComputationRecord::new();
    let feat_s = g.forward(&mut rec, source_batch)?;
    let logits1 = f1.forward(&mut rec, &feat_s)?;
    let logits2 = f2.forward(&mut rec, &feat_s)?;
    let ce1 = cross_entropy_loss(&mut rec, &logits1, labels)?;
    let ce2 = cross_entropy_loss(&mut rec, &logits2, labels)?;
    let cls = rec.add(&ce1, &ce2)?;

    let feat_t = g.forward(&mut rec, target_batch)?;
    let t_logits1 = f1.forward(&mut rec, &feat_t)?;
    let t_logits2 = f2.forward(&mut rec, &feat_t)?;
    let p1 = softmax_probs(&mut rec, &t_logits1)?;
    let p2 = softmax_probs(&mut rec, &t_logits2)?;
    let adv = discrepancy_of(&mut rec, config.discrepancy, &p1, &p2)?;

    let mut objective = rec.sub(&cls, &adv)?;
    if config.lambda_cb > 0.0 {
        let balance = balance_term(&mut rec, &p1, &p2, config.lambda_cb)?;
        objective = rec.add(&objective, &balance)?;
    }

    let grads = rec.backward(&objective)?;
    f1_opt.step(f1, &grads)?;
    f2_opt.step(f2, &grads)?;
    Ok(StepBLosses {
        ce_f1: ce1.item()?,
        ce_f2: ce2.item()?,
        discrepancy: adv.item()?,
    })
}

/// Step C: `n` generator updates, each minimizing the target discrepancy for
/// fixed heads. Returns the discrepancy measured at the final forward pass.
pub fn step_c(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    target_batch: &Tensor,
    g_opt: &mut Optimizer,
    config: &TrainingConfig,
) -> Result<f64> {
    let mut last = 0.0;
    for _ in 0..config.n {
        let mut rec = ComputationRecord::new();
        let feat_t = g.forward(&mut rec, target_batch)?;
        let t_logits1 = f1.forward(&mut rec, &feat_t)?;
        let t_logits2 = f2.forward(&mut rec, &feat_t)?;
        let p1 = softmax_probs(&mut rec, &t_logits1)?;
        let p2 = softmax_probs(&mut rec, &t_logits2)?;
        let adv = discrepancy_of(&mut rec, config.discrepancy, &p1, &p2)?;
        last = adv.item()?;
        let mut objective = adv;
        if config.lambda_cb > 0.0 {
            let balance = balance_term(&mut rec, &p1, &p2, config.lambda_cb)?;
            objective = rec.add(&objective, &balance)?;
        }
        let grads = rec.backward(&objective)?;
        g_opt.step(g, &grads)?;
    }
    Ok(last)
}

/// `lambda * (balance(p1) + balance(p2))`.
fn balance_term(
    rec: &mut ComputationRecord,
    p1: &ProbBatch,
    p2: &ProbBatch,
    lambda: f64,
) -> Result<Tensor> {
    let b1 = class_balance_loss(rec, p1)?;
    let b2 = class_balance_loss(rec, p2)?;
    let sum = rec.add(&b1, &b2)?;
    rec.scale(&sum, lambda)
}

fn grl_backward(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    source_batch: &Tensor,
    labels: &[usize],
    target_batch: &Tensor,
    config: &TrainingConfig,
) -> Result<(Gradients, GrlLosses)> {
    if source_batch.shape()[0] != target_batch.shape()[0] {
        return Err(Error::BatchSizeMismatch {
            source_rows: source_batch.shape()[0],
            target_rows: target_batch.shape()[0],
        });
    }
    let mut rec = ComputationRecord::new();
    let feat_s = g.forward(&mut rec, source_batch)?;
    let logits1 = f1.forward(&mut rec, &feat_s)?;
    let logits2 = f2.forward(&mut rec, &feat_s)?;
    let ce1 = cross_entropy_loss(&mut rec, &logits1, labels)?;
    let ce2 = cross_entropy_loss(&mut rec, &logits2, labels)?;
    let cls = rec.add(&ce1, &ce2)?;

    // the reversal sits between the generator and the heads: the heads see
    // `-adv` (maximize discrepancy), the generator sees `+adv` (minimize it)
    let feat_t = g.forward(&mut rec, target_batch)?;
    let reversed = rec.grad_reverse(&feat_t)?;
    let t_logits1 = f1.forward(&mut rec, &reversed)?;
    let t_logits2 = f2.forward(&mut rec, &reversed)?;
    let p1 = softmax_probs(&mut rec, &t_logits1)?;
    let p2 = softmax_probs(&mut rec, &t_logits2)?;
    let adv = discrepancy_of(&mut rec, config.discrepancy, &p1, &p2)?;

    let mut objective = rec.sub(&cls, &adv)?;
    if config.lambda_cb > 0.0 {
        // the balance term enters both sub-objectives with a positive sign,
        // so it must not cross the reversal: recompute through a plain path
        let b_logits1 = f1.forward(&mut rec, &feat_t)?;
        let b_logits2 = f2.forward(&mut rec, &feat_t)?;
        let q1 = softmax_probs(&mut rec, &b_logits1)?;
        let q2 = softmax_probs(&mut rec, &b_logits2)?;
        let balance = balance_term(&mut rec, &q1, &q2, config.lambda_cb)?;
        objective = rec.add(&objective, &balance)?;
    }

    let losses = GrlLosses {
        ce_f1: ce1.item()?,
        ce_f2: ce2.item()?,
        discrepancy: adv.item()?,
    };
    Ok((rec.backward(&objective)?, losses))
}

/// One combined adversarial update through the gradient-reversal boundary.
///
/// Gradient contract: head parameters receive `d(L_cls - L_adv)`, generator
/// parameters receive `d(L_cls + L_adv)`; one optimizer step is applied to
/// all parameter groups.
#[allow(clippy::too_many_arguments)]
pub fn grl_step(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    source_batch: &Tensor,
    labels: &[usize],
    target_batch: &Tensor,
    g_opt: &mut Optimizer,
    f1_opt: &mut Optimizer,
    f2_opt: &mut Optimizer,
    config: &TrainingConfig,
) -> Result<GrlLosses> {
    let (grads, losses) = grl_backward(g, f1, f2, source_batch, labels, target_batch, config)?;
    g_opt.step(g, &grads)?;
    f1_opt.step(f1, &grads)?;
    f2_opt.step(f2, &grads)?;
    Ok(losses)
}

/// Per-parameter gradients of the combined reversal pass, without applying
/// any update. Used to verify the equivalence with the separate two-pass
/// objectives.
pub type NamedGradients = Vec<(String, Vec<f64>)>;

pub fn grl_gradients(
    g: &mut Network,
    f1: &mut Network,
    f2: &mut Network,
    source_batch: &Tensor,
    labels: &[usize],
    target_batch: &Tensor,
    config: &TrainingConfig,
) -> Result<(NamedGradients, NamedGradients, NamedGradients)> {
    let (grads, _) = grl_backward(g, f1, f2, source_batch, labels, target_batch, config)?;
    Ok((
        g.gradient_vectors(&grads)?,
        f1.gradient_vectors(&grads)?,
        f2.gradient_vectors(&grads)?,
    ))
}

// ── evaluation helpers (eval-mode, pure) ───────────────────────────────

const EVAL_BATCH: usize = 512;

/// Argmax predictions of `F . G` over a feature matrix.
pub fn predictions(g: &Network, f: &Network, features: &Tensor) -> Result<Vec<usize>> {
    let n = features.shape()[0];
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = crate::data::gather_rows(features, &idx);
        let mut rec = ComputationRecord::new();
        let feat = g.forward_eval(&mut rec, &batch)?;
        let logits = f.forward_eval(&mut rec, &feat)?;
        let p = softmax_probs(&mut rec, &logits)?;
        out.extend(p.argmax());
        start = end;
    }
    Ok(out)
}

/// Fraction of correct F1-style predictions on a labeled dataset.
pub fn evaluate_accuracy(g: &Network, f: &Network, ds: &LabeledDataset) -> Result<f64> {
    let preds = predictions(g, f, &ds.features)?;
    let correct = preds
        .iter()
        .zip(&ds.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Fraction of samples where the two heads' argmax predictions differ.
pub fn head_disagreement(
    g: &Network,
    f1: &Network,
    f2: &Network,
    features: &Tensor,
) -> Result<f64> {
    let p1 = predictions(g, f1, features)?;
    let p2 = predictions(g, f2, features)?;
    let differ = p1.iter().zip(&p2).filter(|(a, b)| a != b).count();
    Ok(differ as f64 / p1.len() as f64)
}

/// Summed cross entropy of both heads over a labeled dataset, eval mode.
pub fn eval_classification_loss(
    g: &Network,
    f1: &Network,
    f2: &Network,
    ds: &LabeledDataset,
) -> Result<f64> {
    let n = ds.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (batch, labels) = ds.gather(&idx);
        let mut rec = ComputationRecord::new();
        let feat = g.forward_eval(&mut rec, &batch)?;
        let logits1 = f1.forward_eval(&mut rec, &feat)?;
        let logits2 = f2.forward_eval(&mut rec, &feat)?;
        let ce1 = cross_entropy_loss(&mut rec, &logits1, &labels)?;
        let ce2 = cross_entropy_loss(&mut rec, &logits2, &labels)?;
        total += (ce1.item()? + ce2.item()?) * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Mean discrepancy of the two heads over a feature matrix, eval mode.
pub fn eval_discrepancy(
    g: &Network,
    f1: &Network,
    f2: &Network,
    features: &Tensor,
    kind: DiscrepancyKind,
) -> Result<f64> {
    let n = features.shape()[0];
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = crate::data::gather_rows(features, &idx);
        let mut rec = ComputationRecord::new();
        let feat = g.forward_eval(&mut rec, &batch)?;
        let logits1 = f1.forward_eval(&mut rec, &feat)?;
        let logits2 = f2.forward_eval(&mut rec, &feat)?;
        let p1 = softmax_probs(&mut rec, &logits1)?;
        let p2 = softmax_probs(&mut rec, &logits2)?;
        let adv = discrepancy_of(&mut rec, kind, &p1, &p2)?;
        total += adv.item()? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

// ── the training loop ──────────────────────────────────────────────────

pub struct TrainOutput {
    pub g: Network,
    pub f1: Network,
    pub f2: Network,
    pub metrics: MetricsLog,
}

struct BatchStream {
    n: usize,
    batch_size: usize,
    base_seed: u64,
    stream_tag: u64,
    epoch: u64,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl BatchStream {
    fn new(n: usize, batch_size: usize, base_seed: u64, stream_tag: u64) -> Self {
        BatchStream {
            n,
            batch_size,
            base_seed,
            stream_tag,
            epoch: 0,
            queue: std::collections::VecDeque::new(),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        loop {
            if let Some(b) = self.queue.pop_front() {
                return b;
            }
            let seed = derive_seed(self.base_seed, self.stream_tag, self.epoch);
            self.epoch += 1;
            self.queue = batches(self.n, self.batch_size, seed, true).into();
        }
    }
}

const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

/// Run the full adversarial loop for `max_iters` mini-batch cycles,
/// logging metrics every `eval_every` iterations (and at the last one).
/// Deterministic given the config seeds; reported accuracy uses `F1`.
pub fn train(
    config: &TrainingConfig,
    arch: &McdArch,
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    target_eval: &LabeledDataset,
) -> Result<TrainOutput> {
    config.validate()?;
    if arch.generator.output_dim() != arch.classifier.input_dim() {
        return Err(Error::Config(format!(
            "generator outputs {} features, classifier expects {}",
            arch.generator.output_dim(),
            arch.classifier.input_dim()
        )));
    }
    if arch.classifier.output_dim() != config.k {
        return Err(Error::Config(format!(
            "classifier has {} outputs, config.k is {}",
            arch.classifier.output_dim(),
            config.k
        )));
    }
    let d = arch.generator.input_dim();
    for (name, dim) in [
        ("source", source.dim()),
        ("target", target.dim()),
        ("target_eval", target_eval.dim()),
    ] {
        if dim != d {
            return Err(Error::Data(format!(
                "{name} features have {dim} dimensions, networks expect {d}"
            )));
        }
    }
    if let Some(&bad) = source.labels.iter().find(|&&l| l >= config.k) {
        return Err(Error::Data(format!(
            "source label {bad} out of range for k={}",
            config.k
        )));
    }
    if config.batch_size > source.len() || config.batch_size > target.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size (source {}, target {})",
            config.batch_size,
            source.len(),
            target.len()
        )));
    }

    let mut g = init_network(&arch.generator, config.g_seed);
    let mut f1 = init_network(&arch.classifier, config.f1_seed);
    let mut f2 = init_network(&arch.classifier, config.f2_seed);
    let mut g_opt = Optimizer::new(config.optimizer);
    let mut f1_opt = Optimizer::new(config.optimizer);
    let mut f2_opt = Optimizer::new(config.optimizer);

    let mut source_stream = BatchStream::new(
        source.len(),
        config.batch_size,
        config.data_seed,
        SOURCE_STREAM,
    );
    let mut target_stream = BatchStream::new(
        target.len(),
        config.batch_size,
        config.data_seed,
        TARGET_STREAM,
    );

    let mut metrics = MetricsLog::new();
    for iter in 1..=config.max_iters {
        let src_idx = source_stream.next();
        let tgt_idx = target_stream.next();
        let (src_batch, labels) = source.gather(&src_idx);
        let tgt_batch = target.gather(&tgt_idx);

        match config.variant {
            Variant::SourceOnly => {
                step_a(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &mut g_opt, &mut f1_opt,
                    &mut f2_opt,
                )?;
            }
            Variant::NoStepC => {
                step_a(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &mut g_opt, &mut f1_opt,
                    &mut f2_opt,
                )?;
                step_b(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &tgt_batch, &mut f1_opt,
                    &mut f2_opt, config,
                )?;
            }
            Variant::ThreeStep => {
                step_a(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &mut g_opt, &mut f1_opt,
                    &mut f2_opt,
                )?;
                step_b(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &tgt_batch, &mut f1_opt,
                    &mut f2_opt, config,
                )?;
                step_c(&mut g, &mut f1, &mut f2, &tgt_batch, &mut g_opt, config)?;
            }
            Variant::Grl => {
                grl_step(
                    &mut g, &mut f1, &mut f2, &src_batch, &labels, &tgt_batch, &mut g_opt,
                    &mut f1_opt, &mut f2_opt, config,
                )?;
            }
        }

        if iter % config.eval_every == 0 || iter == config.max_iters {
            metrics.push(MetricsRow {
                iter,
                loss_cls: eval_classification_loss(&g, &f1, &f2, source)?,
                loss_adv: eval_discrepancy(&g, &f1, &f2, &target.features, config.discrepancy)?,
                acc_src_f1: evaluate_accuracy(&g, &f1, source)?,
                acc_tgt_f1: evaluate_accuracy(&g, &f1, target_eval)?,
                acc_tgt_f2: evaluate_accuracy(&g, &f2, target_eval)?,
            });
        }
    }

    g.set_mode(Mode::Eval);
    f1.set_mode(Mode::Eval);
    f2.set_mode(Mode::Eval);
    Ok(TrainOutput { g, f1, f2, metrics })
}
