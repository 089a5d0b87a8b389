//! Autoregressive LSTM policy sampler.
//!
//! The controller emits `3n` decisions: for each slot an operation, a
//! magnitude level and a weight level, each drawn from a softmax head on top
//! of a single-layer LSTM. The input at step 0 is a learned start token; at
//! every later step it is the embedding of the previous decision.
//!
//! All parameters live in one flat `Vec<f64>` so the optimizer, the gradient
//! check and checkpoints can treat them uniformly. Forward and backward passes
//! run a whole batch of sequences in lockstep.

mod checkpoint;
mod ppo;

use std::ops::Range;

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagexform::{MagnitudeLevel, TransformOp};
use crate::policy::{Policy, Slot, WeightLevel, POLICY_SLOTS};

pub use checkpoint::Checkpoint;
pub use ppo::{
    gradient_check, ppo_objective, ppo_update, AdamState, GradientCheck, GradientCheckOptions, PpoConfig, PpoStats,
    Trainer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerShape {
    pub hidden: usize,
    pub embed: usize,
    pub slots: usize,
    /// Operation head size; index `i` selects `TransformOp::ALL[i]`.
    pub ops: usize,
    pub magnitudes: usize,
    pub weights: usize,
}

impl Default for ControllerShape {
    fn default() -> Self {
        Self {
            hidden: 256,
            embed: 32,
            slots: POLICY_SLOTS,
            ops: TransformOp::COUNT,
            magnitudes: MagnitudeLevel::COUNT,
            weights: WeightLevel::COUNT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecisionKind {
    Op,
    Magnitude,
    Weight,
}

impl DecisionKind {
    pub fn at_step(step: usize) -> Self {
        match step % 3 {
            0 => DecisionKind::Op,
            1 => DecisionKind::Magnitude,
            _ => DecisionKind::Weight,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    embedding: Range<usize>,
    gate_weights: Range<usize>,
    gate_bias: Range<usize>,
    heads: [(Range<usize>, Range<usize>); 3],
    total: usize,
}

impl ControllerShape {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.slots == 0 {
            return Err(Error::Parameter("controller sizes must be positive".into()));
        }
        if !(1..=TransformOp::COUNT).contains(&self.ops)
            || !(1..=MagnitudeLevel::COUNT).contains(&self.magnitudes)
            || !(1..=WeightLevel::COUNT).contains(&self.weights)
        {
            return Err(Error::Parameter(format!("invalid head sizes {self:?}")));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        3 * self.slots
    }

    pub fn head_size(&self, kind: DecisionKind) -> usize {
        match kind {
            DecisionKind::Op => self.ops,
            DecisionKind::Magnitude => self.magnitudes,
            DecisionKind::Weight => self.weights,
        }
    }

    /// Embedding rows: one per decision value of each kind, plus the start token.
    pub fn vocab(&self) -> usize {
        self.ops + self.magnitudes + self.weights + 1
    }

    fn start_token(&self) -> usize {
        self.vocab() - 1
    }

    fn token(&self, kind: DecisionKind, value: usize) -> usize {
        match kind {
            DecisionKind::Op => value,
            DecisionKind::Magnitude => self.ops + value,
            DecisionKind::Weight => self.ops + self.magnitudes + value,
        }
    }

    fn input_width(&self) -> usize {
        self.embed + self.hidden
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut block = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let embedding = block(self.vocab() * self.embed);
        let gate_weights = block(4 * self.hidden * self.input_width());
        let gate_bias = block(4 * self.hidden);
        let heads = [DecisionKind::Op, DecisionKind::Magnitude, DecisionKind::Weight].map(|k| {
            let n = self.head_size(k);
            (block(n * self.hidden), block(n))
        });
        Layout {
            embedding,
            gate_weights,
            gate_bias,
            heads,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

fn head_index(kind: DecisionKind) -> usize {
    match kind {
        DecisionKind::Op => 0,
        DecisionKind::Magnitude => 1,
        DecisionKind::Weight => 2,
    }
}

/// All controller weights in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    shape: ControllerShape,
    layout: Layout,
    values: Vec<f64>,
}

impl ControllerParams {
    /// Gate weights uniform in `+-1/sqrt(hidden)`, forget-gate bias 1,
    /// embeddings uniform in `+-1`, heads zero (uniform initial sampling).
    pub fn init<R: Rng + ?Sized>(shape: ControllerShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        let mut values = vec![0.0; layout.total];
        for v in &mut values[layout.embedding.clone()] {
            *v = rng.gen_range(-1.0..1.0);
        }
        let bound = 1.0 / (shape.hidden as f64).sqrt();
        for v in &mut values[layout.gate_weights.clone()] {
            *v = rng.gen_range(-bound..bound);
        }
        let h = shape.hidden;
        let bias = layout.gate_bias.start;
        values[bias + h..bias + 2 * h].fill(1.0);
        Ok(Self {
            shape,
            layout,
            values,
        })
    }

    pub fn from_values(shape: ControllerShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        if values.len() != layout.total {
            return Err(Error::Shape {
                expected: layout.total,
                actual: values.len(),
            });
        }
        Ok(Self {
            shape,
            layout,
            values,
        })
    }

    pub fn shape(&self) -> &ControllerShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds uniform noise in `+-scale` to the output heads. Used to give the
    /// heads non-trivial values in tests.
    pub fn perturb_heads<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for (w, b) in self.layout.heads.clone() {
            for v in &mut self.values[w.start..b.end] {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }

    fn gate_weights(&self) -> ArrayView2<'_, f64> {
        let s = &self.shape;
        ArrayView2::from_shape((4 * s.hidden, s.input_width()), &self.values[self.layout.gate_weights.clone()])
            .expect("layout")
    }

    fn head(&self, kind: DecisionKind) -> (ArrayView2<'_, f64>, &[f64]) {
        let (w, b) = &self.layout.heads[head_index(kind)];
        let n = self.shape.head_size(kind);
        (
            ArrayView2::from_shape((n, self.shape.hidden), &self.values[w.clone()]).expect("layout"),
            &self.values[b.clone()],
        )
    }

    fn embedding_row(&self, token: usize) -> &[f64] {
        let e = self.shape.embed;
        let start = self.layout.embedding.start + token * e;
        &self.values[start..start + e]
    }
}

/// One sampled decision sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    /// Step `3j` is an op index, `3j + 1` a magnitude index, `3j + 2` a
    /// weight index (all zero-based).
    pub decisions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward: Option<f64>,
}

/// Maps zero-based decisions onto a policy.
pub fn decisions_to_policy(shape: &ControllerShape, decisions: &[usize]) -> Result<Policy> {
    check_decisions(shape, decisions)?;
    let slots = decisions
        .chunks_exact(3)
        .map(|d| {
            let op = TransformOp::from_index(d[0]).expect("checked");
            Slot::new(op, d[1] as u8 + 1, d[2] as u8 + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Policy::new(slots)
}

/// Inverse of [`decisions_to_policy`].
pub fn policy_to_decisions(shape: &ControllerShape, policy: &Policy) -> Result<Vec<usize>> {
    let decisions: Vec<usize> = policy
        .slots()
        .iter()
        .flat_map(|s| {
            [
                s.op.index(),
                usize::from(s.magnitude.get()) - 1,
                usize::from(s.weight.get()) - 1,
            ]
        })
        .collect();
    check_decisions(shape, &decisions)?;
    Ok(decisions)
}

fn check_decisions(shape: &ControllerShape, decisions: &[usize]) -> Result<()> {
    if decisions.len() != shape.steps() {
        return Err(Error::Shape {
            expected: shape.steps(),
            actual: decisions.len(),
        });
    }
    for (t, &d) in decisions.iter().enumerate() {
        let n = shape.head_size(DecisionKind::at_step(t));
        if d >= n {
            return Err(Error::OutOfRange(format!(
                "decision {d} at step {t} exceeds head size {n}"
            )));
        }
    }
    Ok(())
}

/// Samples one policy.
pub fn sample_policy<R: Rng + ?Sized>(params: &ControllerParams, rng: &mut R) -> Result<(Policy, SampleTrace)> {
    let mut batch = sample_batch(params, 1, rng)?;
    Ok(batch.pop().expect("one sample"))
}

/// Samples `count` policies in lockstep. Random numbers are drawn step by
/// step, trace by trace within a step.
pub fn sample_batch<R: Rng + ?Sized>(
    params: &ControllerParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(Policy, SampleTrace)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let tape = forward(params, Teacher::Sample(rng, count))?;
    tape.decisions
        .iter()
        .enumerate()
        .map(|(b, decisions)| {
            let trace = SampleTrace {
                decisions: decisions.clone(),
                log_probs: tape.chosen_log_probs(b),
                reward: None,
            };
            Ok((decisions_to_policy(&params.shape, decisions)?, trace))
        })
        .collect()
}

/// Per-step log-probabilities of a given decision sequence.
pub fn log_prob(params: &ControllerParams, decisions: &[usize]) -> Result<Vec<f64>> {
    let tape = forward::<rand_chacha::ChaCha8Rng>(params, Teacher::Given(std::slice::from_ref(&decisions.to_vec())))?;
    Ok(tape.chosen_log_probs(0))
}

/// Monte Carlo estimate of the probability that a sampled policy contains
/// `op` in at least one slot.
pub fn op_presence_probability<R: Rng + ?Sized>(
    params: &ControllerParams,
    op: TransformOp,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut left = samples;
    while left > 0 {
        let n = left.min(64);
        hits += sample_batch(params, n, rng)?
            .iter()
            .filter(|(p, _)| p.slots().iter().any(|s| s.op == op))
            .count();
        left -= n;
    }
    Ok(hits as f64 / samples.max(1) as f64)
}

pub(crate) enum Teacher<'a, R: ?Sized> {
    Sample(&'a mut R, usize),
    Given(&'a [Vec<usize>]),
}

struct StepTape {
    kind: DecisionKind,
    z: Array2<f64>,
    input_gate: Array2<f64>,
    forget_gate: Array2<f64>,
    candidate: Array2<f64>,
    output_gate: Array2<f64>,
    cell: Array2<f64>,
    cell_tanh: Array2<f64>,
    hidden: Array2<f64>,
    log_probs: Array2<f64>,
}

/// Activations of one batched forward pass, kept for the backward pass.
pub(crate) struct Tape {
    steps: Vec<StepTape>,
    /// `decisions[b][t]`.
    decisions: Vec<Vec<usize>>,
    /// Input token of each step, `tokens[b][t]`.
    tokens: Vec<Vec<usize>>,
}

impl Tape {
    pub(crate) fn batch(&self) -> usize {
        self.decisions.len()
    }

    pub(crate) fn chosen_log_probs(&self, b: usize) -> Vec<f64> {
        self.steps
            .iter()
            .zip(&self.decisions[b])
            .map(|(st, &d)| st.log_probs[[b, d]])
            .collect()
    }

    /// Log-probability rows of step `t`, shape `batch x head`.
    pub(crate) fn step_log_probs(&self, t: usize) -> &Array2<f64> {
        &self.steps[t].log_probs
    }

    pub(crate) fn decision(&self, b: usize, t: usize) -> usize {
        self.decisions[b][t]
    }

    pub(crate) fn len(&self) -> usize {
        self.steps.len()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

fn sample_index<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

pub(crate) fn forward<R: Rng + ?Sized>(params: &ControllerParams, mut teacher: Teacher<'_, R>) -> Result<Tape> {
    let shape = params.shape;
    let batch = match &teacher {
        Teacher::Sample(_, n) => *n,
        Teacher::Given(d) => {
            for seq in d.iter() {
                check_decisions(&shape, seq)?;
            }
            d.len()
        }
    };
    let (h, e) = (shape.hidden, shape.embed);
    let w = params.gate_weights();
    let bias = Array1::from(params.values[params.layout.gate_bias.clone()].to_vec());

    let mut decisions = vec![Vec::with_capacity(shape.steps()); batch];
    let mut tokens = vec![Vec::with_capacity(shape.steps()); batch];
    let mut steps = Vec::with_capacity(shape.steps());
    let mut hidden = Array2::<f64>::zeros((batch, h));
    let mut cell = Array2::<f64>::zeros((batch, h));

    for t in 0..shape.steps() {
        let kind = DecisionKind::at_step(t);
        let mut z = Array2::<f64>::zeros((batch, shape.input_width()));
        for b in 0..batch {
            let token = if t == 0 {
                shape.start_token()
            } else {
                shape.token(DecisionKind::at_step(t - 1), decisions[b][t - 1])
            };
            tokens[b].push(token);
            let mut row = z.row_mut(b);
            row.slice_mut(s![..e])
                .iter_mut()
                .zip(params.embedding_row(token))
                .for_each(|(d, v)| *d = *v);
            row.slice_mut(s![e..]).assign(&hidden.row(b));
        }

        let mut pre = z.dot(&w.t());
        pre += &bias;
        let input_gate = pre.slice(s![.., ..h]).mapv(sigmoid);
        let forget_gate = pre.slice(s![.., h..2 * h]).mapv(sigmoid);
        let candidate = pre.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
        let output_gate = pre.slice(s![.., 3 * h..]).mapv(sigmoid);
        cell = &forget_gate * &cell + &input_gate * &candidate;
        let cell_tanh = cell.mapv(f64::tanh);
        hidden = &output_gate * &cell_tanh;

        let (hw, hb) = params.head(kind);
        let mut log_probs = hidden.dot(&hw.t());
        log_probs += &ArrayView2::from_shape((1, hb.len()), hb).expect("bias row").row(0);
        log_softmax_rows(&mut log_probs);

        for b in 0..batch {
            let d = match &mut teacher {
                Teacher::Sample(rng, _) => sample_index(log_probs.row(b).as_slice().expect("row"), *rng),
                Teacher::Given(given) => given[b][t],
            };
            decisions[b].push(d);
        }

        steps.push(StepTape {
            kind,
            z,
            input_gate,
            forget_gate,
            candidate,
            output_gate,
            cell: cell.clone(),
            cell_tanh,
            hidden: hidden.clone(),
            log_probs,
        });
    }

    Ok(Tape {
        steps,
        decisions,
        tokens,
    })
}

/// Reverse-mode pass. `dlogits[t]` is the gradient of the objective with
/// respect to the logits of step `t` (`batch x head`). Returns the gradient
/// for every parameter in flat layout.
pub(crate) fn backward(params: &ControllerParams, tape: &Tape, dlogits: &[Array2<f64>], corrupt: bool) -> Vec<f64> {
    let shape = params.shape;
    let layout = &params.layout;
    let (h, e) = (shape.hidden, shape.embed);
    let batch = tape.batch();
    let w = params.gate_weights();
    let mut grad = vec![0.0; layout.total];

    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));
    let mut dw = Array2::<f64>::zeros((4 * h, shape.input_width()));
    let mut dpre = Array2::<f64>::zeros((batch, 4 * h));

    for t in (0..tape.len()).rev() {
        let st = &tape.steps[t];
        let dl = &dlogits[t];

        let (hw, _) = params.head(st.kind);
        let (hw_range, hb_range) = layout.heads[head_index(st.kind)].clone();
        {
            let mut dhw = ArrayViewMut2::from_shape(hw.raw_dim(), &mut grad[hw_range]).expect("layout");
            general_mat_mul(1.0, &dl.t(), &st.hidden, 1.0, &mut dhw);
        }
        for (g, s) in grad[hb_range].iter_mut().zip(dl.sum_axis(Axis(0))) {
            *g += s;
        }

        let mut dh = dl.dot(&hw);
        dh += &dh_next;

        let zero_cell;
        let cell_prev = if t == 0 {
            zero_cell = Array2::<f64>::zeros((batch, h));
            &zero_cell
        } else {
            &tape.steps[t - 1].cell
        };

        let mut dc = Array2::<f64>::zeros((batch, h));
        Zip::from(&mut dc)
            .and(&dh)
            .and(&st.output_gate)
            .and(&st.cell_tanh)
            .and(&dc_next)
            .for_each(|dc, &dh, &o, &tc, &dcn| *dc = dh * o * (1.0 - tc * tc) + dcn);

        {
            let (mut d_i, rest) = dpre.view_mut().split_at(Axis(1), h);
            let (mut d_f, rest) = rest.split_at(Axis(1), h);
            let (mut d_g, mut d_o) = rest.split_at(Axis(1), h);
            Zip::from(&mut d_i)
                .and(&dc)
                .and(&st.candidate)
                .and(&st.input_gate)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            Zip::from(&mut d_f)
                .and(&dc)
                .and(cell_prev)
                .and(&st.forget_gate)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            Zip::from(&mut d_g)
                .and(&dc)
                .and(&st.input_gate)
                .and(&st.candidate)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(&mut d_o)
                .and(&dh)
                .and(&st.cell_tanh)
                .and(&st.output_gate)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
        }

        dc_next = if corrupt {
            Array2::zeros((batch, h))
        } else {
            &dc * &st.forget_gate
        };

        general_mat_mul(1.0, &dpre.t(), &st.z, 1.0, &mut dw);
        for (g, s) in grad[layout.gate_bias.clone()].iter_mut().zip(dpre.sum_axis(Axis(0))) {
            *g += s;
        }
        let dz = dpre.dot(&w);
        for b in 0..batch {
            let start = layout.embedding.start + tape.tokens[b][t] * e;
            for (g, v) in grad[start..start + e].iter_mut().zip(dz.slice(s![b, ..e])) {
                *g += v;
            }
        }
        dh_next = dz.slice(s![.., e..]).to_owned();
    }

    grad[layout.gate_weights.clone()].copy_from_slice(dw.as_slice().expect("contiguous"));
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn small_shape() -> ControllerShape {
        ControllerShape {
            hidden: 8,
            embed: 4,
            ..ControllerShape::default()
        }
    }

    #[test]
    fn default_shape_sizes() {
        let s = ControllerShape::default();
        assert_eq!(s.steps(), 24);
        assert_eq!(s.vocab(), 38);
        let expected = 38 * 32 + 1024 * 288 + 1024 + (17 + 10 + 10) * 257;
        assert_eq!(s.param_count(), expected);
    }

    #[test]
    fn zero_heads_give_uniform_log_probs() {
        let params = ControllerParams::init(ControllerShape::default(), &mut seeded_rng(0)).unwrap();
        let (_, trace) = sample_policy(&params, &mut seeded_rng(1)).unwrap();
        for (t, lp) in trace.log_probs.iter().enumerate() {
            let n = params.shape().head_size(DecisionKind::at_step(t)) as f64;
            assert!((lp + n.ln()).abs() < 1e-12);
        }
        assert!((trace.log_probs[0] + 2.8332).abs() < 1e-4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = ControllerParams::init(small_shape(), &mut seeded_rng(3)).unwrap();
        let a = sample_policy(&params, &mut seeded_rng(9)).unwrap();
        let b = sample_policy(&params, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut params = ControllerParams::init(small_shape(), &mut seeded_rng(4)).unwrap();
        params.perturb_heads(&mut seeded_rng(5), 2.0);
        let tape = forward(&params, Teacher::Sample(&mut seeded_rng(6), 5)).unwrap();
        for t in 0..tape.len() {
            for row in tape.step_log_probs(t).rows() {
                let total: f64 = row.iter().map(|v| v.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_prob_matches_trace() {
        let mut params = ControllerParams::init(small_shape(), &mut seeded_rng(7)).unwrap();
        params.perturb_heads(&mut seeded_rng(8), 1.0);
        let mut rng = seeded_rng(10);
        for (_, trace) in sample_batch(&params, 6, &mut rng).unwrap() {
            let again = log_prob(&params, &trace.decisions).unwrap();
            for (a, b) in again.iter().zip(&trace.log_probs) {
                assert!((a - b).abs() < 1e-12);
                assert!(*b <= 0.0);
            }
        }
    }

    #[test]
    fn decisions_round_trip_and_validation() {
        let shape = ControllerShape::default();
        let decisions: Vec<usize> = (0..24).map(|t| (t * 7) % if t % 3 == 0 { 17 } else { 10 }).collect();
        let policy = decisions_to_policy(&shape, &decisions).unwrap();
        assert_eq!(policy_to_decisions(&shape, &policy).unwrap(), decisions);
        let params = ControllerParams::init(small_shape(), &mut seeded_rng(0)).unwrap();
        let mut bad = decisions.clone();
        bad[1] = 10;
        assert!(log_prob(&params, &bad).is_err());
        assert!(log_prob(&params, &decisions[..23]).is_err());
    }

    #[test]
    fn uniform_presence_probability() {
        // With uniform heads P(op in >= 1 of 8 slots) = 1 - (16/17)^8 ~ 0.384.
        let params = ControllerParams::init(ControllerShape { hidden: 4, embed: 2, ..Default::default() }, &mut seeded_rng(0)).unwrap();
        let p = op_presence_probability(&params, TransformOp::Rotate, 4000, &mut seeded_rng(1)).unwrap();
        assert!((p - (1.0 - (16.0f64 / 17.0).powi(8))).abs() < 0.03, "{p}");
    }
}
