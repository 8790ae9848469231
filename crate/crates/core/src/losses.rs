//! Training objectives.
//!
//! Each loss is written once as tape operations (`*_on`) so a single backward
//! pass differentiates any combination of them. The value-only entry points
//! evaluate the same graph on a throwaway tape.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{BoundModel, Model, Tape, Tensor, Var};

/// Floor applied to every probability before a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the consistency term.
    pub mu: f64,
    /// Weight of the similarity-distribution regularizer.
    pub gamma: f64,
    pub tau_c: f64,
    pub tau_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu: 12.0,
            gamma: 1.0,
            tau_c: 0.2,
            tau_d: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0 && self.tau_d > 0.0) {
            return Err(Error::invalid("temperatures tau_c and tau_d must be positive"));
        }
        if !(self.mu >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::invalid("loss weights mu and gamma must be nonnegative"));
        }
        Ok(())
    }
}

fn check_simplex(rows: &Tensor) -> Result<()> {
    for r in 0..rows.rows() {
        let row = rows.row(r);
        let sum: f64 = row.iter().sum();
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        if (sum - 1.0).abs() > SIMPLEX_TOL || min < -SIMPLEX_TOL || !sum.is_finite() {
            return Err(Error::NotOnSimplex { row: r, sum, min });
        }
    }
    Ok(())
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (r, &l) in labels.iter().enumerate() {
        t.row_mut(r)[l] = 1.0;
    }
    t
}

// ---------------------------------------------------------------- cross-entropy

pub fn cross_entropy_on(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let t = tape.value(logits);
    if t.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "cross_entropy labels",
            expected: vec![t.rows()],
            actual: vec![labels.len()],
        });
    }
    let classes = t.cols();
    check_labels(labels, classes)?;
    let logp = tape.log_softmax_rows(logits);
    let mask = tape.constant(one_hot(labels, classes));
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / labels.len() as f64))
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = cross_entropy_on(&mut tape, l, labels)?;
    Ok(tape.value(loss).item())
}

// ---------------------------------------------------------------- KL divergence

/// `Σ p·ln(p/q)` with both arguments floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_divergence",
            expected: vec![p.len()],
            actual: vec![q.len()],
        });
    }
    check_simplex(&Tensor::matrix(1, p.len(), p.to_vec())?)?;
    check_simplex(&Tensor::matrix(1, q.len(), q.to_vec())?)?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum()
}

/// Row-wise `Σ_j p·(ln p − ln q)`, summed over rows. `p` may be a constant.
fn kl_rows_on(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let log_p = tape.log_floor(p, PROB_FLOOR);
    let log_q = tape.log_floor(q, PROB_FLOOR);
    let diff = tape.sub(log_p, log_q)?;
    let weighted = tape.mul(p, diff)?;
    Ok(tape.sum(weighted))
}

// ---------------------------------------------------------------- JSD consistency

/// Generalized Jensen-Shannon divergence of three probability batches around
/// their mean, averaged over the batch. Inputs are `[B, C]` softmax rows.
pub fn jsd_on(tape: &mut Tape, p0: Var, p1: Var, p2: Var) -> Result<Var> {
    let batch = tape.value(p0).rows();
    // p0 + (p1 - p0)/3 + (p2 - p0)/3 reproduces p0 bitwise when all three
    // agree, keeping the fixed point at exactly zero.
    let d1 = tape.sub(p1, p0)?;
    let d2 = tape.sub(p2, p0)?;
    let d = tape.add(d1, d2)?;
    let shift = tape.scale(d, 1.0 / 3.0);
    let mixture = tape.add(p0, shift)?;
    let k0 = kl_rows_on(tape, p0, mixture)?;
    let k1 = kl_rows_on(tape, p1, mixture)?;
    let k2 = kl_rows_on(tape, p2, mixture)?;
    let total = tape.add(k0, k1)?;
    let total = tape.add(total, k2)?;
    Ok(tape.scale(total, 1.0 / (3.0 * batch as f64)))
}

pub fn jsd_consistency(phi: &Tensor, phi1: &Tensor, phi2: &Tensor) -> Result<f64> {
    for t in [phi, phi1, phi2] {
        check_simplex(t)?;
    }
    let mut tape = Tape::new();
    let a = tape.constant(phi.clone());
    let b = tape.constant(phi1.clone());
    let c = tape.constant(phi2.clone());
    let v = jsd_on(&mut tape, a, b, c)?;
    Ok(tape.value(v).item())
}

// ---------------------------------------------------------------- contrastive

/// Feature views of one batch. Rows are L2-normalized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    original: Tensor,
    simple: Tensor,
    complex: Tensor,
    labels: Vec<usize>,
}

fn normalized(t: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(t.clone());
    let n = tape.normalize_rows(v);
    tape.value(n).clone()
}

impl ContrastiveBatch {
    pub fn new(original: &Tensor, simple: &Tensor, complex: &Tensor, labels: Vec<usize>) -> Result<Self> {
        let b = labels.len();
        for t in [original, simple, complex] {
            if t.rows() != b || t.cols() != original.cols() {
                return Err(Error::DimensionMismatch {
                    context: "contrastive batch",
                    expected: vec![b, original.cols()],
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            original: normalized(original),
            simple: normalized(simple),
            complex: normalized(complex),
            labels,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn original(&self) -> &Tensor {
        &self.original
    }

    pub fn simple(&self) -> &Tensor {
        &self.simple
    }

    pub fn complex(&self) -> &Tensor {
        &self.complex
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The multiview batch: originals then simple views, `2B` rows.
    pub fn multiview(&self) -> Tensor {
        let mut data = self.original.data().to_vec();
        data.extend_from_slice(self.simple.data());
        Tensor::matrix(2 * self.batch_size(), self.original.cols(), data).expect("consistent widths")
    }
}

/// Supervised contrastive loss over the multiview batch `[view_a; view_b]`
/// (both `[B, d]`, raw features, normalized here), summed over all `2B`
/// anchors. Row `i` and row `B + i` share label `labels[i]`.
pub fn supcon_on(tape: &mut Tape, view_a: Var, view_b: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let b = labels.len();
    let n = 2 * b;
    let za = tape.normalize_rows(view_a);
    let zb = tape.normalize_rows(view_b);
    let z = tape.concat_rows(&[za, zb])?;
    let sim = tape.matmul_nt(z, z)?;
    let logits = tape.scale(sim, 1.0 / tau);

    let label_of = |i: usize| labels[i % b];
    let mut support = vec![true; n * n];
    let mut positives = vec![0.0; n * n];
    for i in 0..n {
        support[i * n + i] = false;
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && label_of(j) == label_of(i)).collect();
        if pos.is_empty() {
            return Err(Error::NoPositive(i));
        }
        let w = 1.0 / pos.len() as f64;
        for j in pos {
            positives[i * n + j] = w;
        }
    }
    let log_prob = tape.masked_log_softmax_rows(logits, Rc::new(support))?;
    let pos = tape.constant(Tensor::matrix(n, n, positives)?);
    let picked = tape.mul(log_prob, pos)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0))
}

pub fn supcon_loss(batch: &ContrastiveBatch, tau_c: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(batch.original.clone());
    let b = tape.constant(batch.simple.clone());
    let v = supcon_on(&mut tape, a, b, &batch.labels, tau_c)?;
    Ok(tape.value(v).item())
}

/// Support mask for anchor rows `0..B` against the `2B` multiview rows:
/// row `i` excludes column `B + i` (the simple view of sample `i`).
fn simple_view_support(b: usize) -> Rc<Vec<bool>> {
    let n = 2 * b;
    let mut mask = vec![true; b * n];
    for i in 0..b {
        mask[i * n + b + i] = false;
    }
    Rc::new(mask)
}

/// Similarity distribution of the `anchor`-th anchor over the multiview batch
/// minus that sample's simple view. `anchor_feature` is the (normalized)
/// anchor row: the simple view itself, or the complex view of the same sample.
pub fn similarity_distribution(
    anchor_feature: &[f64],
    batch: &ContrastiveBatch,
    anchor_index: usize,
    tau_d: f64,
) -> Result<Vec<f64>> {
    let b = batch.batch_size();
    if anchor_index >= b {
        return Err(Error::invalid(format!("anchor index {anchor_index} outside batch of {b}")));
    }
    let anchor = normalized(&Tensor::matrix(1, anchor_feature.len(), anchor_feature.to_vec())?);
    let members = batch.multiview();
    let sims = anchor.matmul_nt(&members)?;
    let excluded = b + anchor_index;
    let mut row: Vec<f64> = sims.data().iter().map(|s| s / tau_d).collect();
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != excluded)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if j == excluded { 0.0 } else { (*v - max).exp() };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
    Ok(row)
}

/// Sum over anchors of `KL(p(·|simpleᵢ) ‖ p(·|complexᵢ))`. The multiview
/// batch and the simple-view distribution enter as constants; only the
/// complex features carry gradient.
pub fn dcl_on(tape: &mut Tape, original: Var, simple: Var, complex: Var, tau: f64) -> Result<Var> {
    let b = tape.value(original).rows();
    let zo = tape.normalize_rows(original);
    let zs = tape.normalize_rows(simple);
    let zc = tape.normalize_rows(complex);
    let z = tape.concat_rows(&[zo, zs])?;
    let z = tape.detach(z);
    let zs = tape.detach(zs);
    let support = simple_view_support(b);

    let sim_s = tape.matmul_nt(zs, z)?;
    let sim_s = tape.scale(sim_s, 1.0 / tau);
    let log_ps = tape.masked_log_softmax_rows(sim_s, support.clone())?;
    let ps = tape.exp(log_ps);
    // excluded entries come out of exp() as 1; zero them so they carry no weight
    let keep = Tensor::matrix(b, 2 * b, support.iter().map(|&k| f64::from(u8::from(k))).collect())?;
    let keep = tape.constant(keep);
    let ps = tape.mul(ps, keep)?;
    let ps = tape.detach(ps);

    let sim_c = tape.matmul_nt(zc, z)?;
    let sim_c = tape.scale(sim_c, 1.0 / tau);
    let log_pc = tape.masked_log_softmax_rows(sim_c, support)?;
    let pc = tape.exp(log_pc);
    kl_rows_on(tape, ps, pc)
}

pub fn dcl_regularizer(batch: &ContrastiveBatch, tau_d: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let o = tape.constant(batch.original.clone());
    let s = tape.constant(batch.simple.clone());
    let c = tape.constant(batch.complex.clone());
    let v = dcl_on(&mut tape, o, s, c, tau_d)?;
    Ok(tape.value(v).item())
}

// ---------------------------------------------------------------- collaboration

/// `Σᵢ weightᵢ · KL(targetᵢ ‖ softmax(learner_logits))`, each KL averaged over
/// the public batch. Targets are constants.
pub fn collaborative_on(tape: &mut Tape, learner_logits: Var, targets: &[(&Tensor, f64)]) -> Result<Var> {
    let n = tape.value(learner_logits).rows() as f64;
    let q = tape.softmax_rows(learner_logits);
    let mut total: Option<Var> = None;
    for &(target, weight) in targets {
        if target.shape() != tape.value(learner_logits).shape() {
            return Err(Error::DimensionMismatch {
                context: "collaborative target",
                expected: tape.value(learner_logits).shape().to_vec(),
                actual: target.shape().to_vec(),
            });
        }
        let p = tape.constant(target.clone());
        let kl = kl_rows_on(tape, p, q)?;
        let term = tape.scale(kl, weight / n);
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

/// Distillation loss of client `k` given every client's softmax outputs on
/// the public set and client `k`'s row of the transfer matrix.
pub fn collaborative_loss(k: usize, public_outputs: &[Tensor], matrix_row: &[u8]) -> Result<f64> {
    if matrix_row.len() != public_outputs.len() {
        return Err(Error::DimensionMismatch {
            context: "transfer matrix row",
            expected: vec![public_outputs.len()],
            actual: vec![matrix_row.len()],
        });
    }
    let learner = public_outputs
        .get(k)
        .ok_or_else(|| Error::invalid(format!("client {k} out of range")))?;
    let mut total = 0.0;
    for (i, (&m, target)) in matrix_row.iter().zip(public_outputs).enumerate() {
        if m == 0 || i == k {
            continue;
        }
        check_simplex(target)?;
        let mut acc = 0.0;
        for r in 0..target.rows() {
            acc += kl_unchecked(target.row(r), learner.row(r));
        }
        total += f64::from(m) * acc / target.rows() as f64;
    }
    Ok(total)
}

// ---------------------------------------------------------------- composite

/// Which contrastive objective the local update uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    Off,
    /// Supervised contrastive over original + simple views plus the
    /// similarity-distribution regularizer on the complex view.
    Dcl,
    /// Ablation: complex views substituted directly into the contrastive batch.
    Supcon,
}

/// Input batches for one local step, all `[B, input_dim]`.
#[derive(Clone, Debug)]
pub struct LocalViews {
    pub original: Tensor,
    pub complex: Option<(Tensor, Tensor)>,
    pub simple: Option<Tensor>,
}

/// Per-term values of one composite evaluation (already weighted terms are
/// not stored; these are the raw, normalized component losses).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub jsd: f64,
    pub supcon: f64,
    pub dcl: f64,
}

pub struct LocalLoss {
    pub total: Var,
    pub parts: LossParts,
}

/// Records `ce + μ·jsd + supcon/|I| + γ·dcl/|I|` on `tape` for `model`.
///
/// The consistency term needs `views.complex`; the contrastive terms need
/// `views.simple` (and `views.complex` for the regularizer or the supcon
/// ablation). Missing views drop the corresponding terms.
pub fn local_loss_on(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundModel,
    views: &LocalViews,
    labels: &[usize],
    weights: &LossWeights,
    contrastive: ContrastiveMode,
) -> Result<LocalLoss> {
    weights.validate()?;
    let b = labels.len();
    let x = tape.constant(views.original.clone());
    let out = model.forward_on(tape, bound, x)?;
    let ce = cross_entropy_on(tape, out.logits, labels)?;
    let mut parts = LossParts {
        ce: tape.value(ce).item(),
        ..LossParts::default()
    };
    let mut total = ce;

    let complex_out = match &views.complex {
        Some((c1, c2)) => {
            let v1 = tape.constant(c1.clone());
            let v2 = tape.constant(c2.clone());
            Some((model.forward_on(tape, bound, v1)?, model.forward_on(tape, bound, v2)?))
        }
        None => None,
    };

    if let Some((o1, o2)) = &complex_out {
        if weights.mu > 0.0 {
            let p0 = tape.softmax_rows(out.logits);
            let p1 = tape.softmax_rows(o1.logits);
            let p2 = tape.softmax_rows(o2.logits);
            let jsd = jsd_on(tape, p0, p1, p2)?;
            parts.jsd = tape.value(jsd).item();
            let weighted = tape.scale(jsd, weights.mu);
            total = tape.add(total, weighted)?;
        }
    }

    match contrastive {
        ContrastiveMode::Off => {}
        ContrastiveMode::Dcl => {
            let simple = views
                .simple
                .as_ref()
                .ok_or_else(|| Error::invalid("contrastive mode needs simple views"))?;
            let s = tape.constant(simple.clone());
            let s_out = model.forward_on(tape, bound, s)?;
            let sc = supcon_on(tape, out.features, s_out.features, labels, weights.tau_c)?;
            parts.supcon = tape.value(sc).item() / (2 * b) as f64;
            let sc = tape.scale(sc, 1.0 / (2 * b) as f64);
            total = tape.add(total, sc)?;
            if let Some((o1, _)) = &complex_out {
                if weights.gamma > 0.0 {
                    let d = dcl_on(tape, out.features, s_out.features, o1.features, weights.tau_d)?;
                    parts.dcl = tape.value(d).item() / (2 * b) as f64;
                    let d = tape.scale(d, weights.gamma / (2 * b) as f64);
                    total = tape.add(total, d)?;
                }
            }
        }
        ContrastiveMode::Supcon => {
            let (o1, _) = complex_out
                .as_ref()
                .ok_or_else(|| Error::invalid("supcon ablation needs complex views"))?;
            let sc = supcon_on(tape, out.features, o1.features, labels, weights.tau_c)?;
            parts.supcon = tape.value(sc).item() / (2 * b) as f64;
            let sc = tape.scale(sc, 1.0 / (2 * b) as f64);
            total = tape.add(total, sc)?;
        }
    }

    Ok(LocalLoss { total, parts })
}
