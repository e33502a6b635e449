//! Dueling Q-network with an auxiliary similarity head.
//!
//! All parameters live in one flat `Vec<f64>`, laid out layer by layer in
//! declaration order (hidden layers, value head, advantage head, auxiliary
//! head), each as a row-major `out x in` weight block followed by its bias.
//! Gradients share the same layout, which keeps the optimizer, target sync,
//! checkpoints and finite-difference checks trivial.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>) -> Result<Self> {
        if input == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::config("network needs a non-empty input and hidden layers"));
        }
        Ok(Architecture { input, hidden })
    }

    /// `(in, out)` of every layer in declaration order.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.hidden.len() + 3);
        let mut prev = self.input;
        for &h in &self.hidden {
            out.push((prev, h));
            prev = h;
        }
        out.push((prev, 1));
        out.push((prev, NUM_ACTIONS));
        out.push((prev, 1));
        out
    }

    /// Flat layer-size descriptor: input, hidden widths, then the three head
    /// widths.
    pub fn descriptor(&self) -> Vec<usize> {
        let mut d = vec![self.input];
        d.extend(&self.hidden);
        d.extend([1, NUM_ACTIONS, 1]);
        d
    }

    pub fn from_descriptor(d: &[usize]) -> Result<Self> {
        if d.len() < 5 || d[d.len() - 3..] != [1, NUM_ACTIONS, 1] {
            return Err(Error::format("unrecognized architecture descriptor"));
        }
        Architecture::new(d[0], d[1..d.len() - 3].to_vec()).map_err(|e| Error::format(e.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerSlot {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.outputs
    }
}

fn slots(arch: &Architecture) -> Vec<LayerSlot> {
    let mut offset = 0;
    arch.layers()
        .into_iter()
        .map(|(inputs, outputs)| {
            let slot = LayerSlot {
                inputs,
                outputs,
                offset,
            };
            offset = slot.end();
            slot
        })
        .collect()
}

/// Per-sample outputs of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub q: [f64; NUM_ACTIONS],
    pub value: f64,
    pub advantage: [f64; NUM_ACTIONS],
    /// Predicted similarity, squashed to `(-1, 1)`.
    pub score: f64,
}

/// Activations kept for backpropagation.
pub struct ForwardCache {
    /// Layer inputs: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
    pub q: Array2<f64>,
    pub value: Array1<f64>,
    pub advantage: Array2<f64>,
    pub score: Array1<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.q.nrows()
    }

    pub fn output(&self, row: usize) -> Output {
        let mut q = [0.0; NUM_ACTIONS];
        let mut advantage = [0.0; NUM_ACTIONS];
        for a in 0..NUM_ACTIONS {
            q[a] = self.q[[row, a]];
            advantage[a] = self.advantage[[row, a]];
        }
        Output {
            q,
            value: self.value[row],
            advantage,
            score: self.score[row],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    params: Vec<f64>,
}

impl QNetwork {
    /// He-uniform trunk; heads start at a tenth of the Xavier range so
    /// initial Q-values stay small.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = slots(&arch);
        let mut params = vec![0.0; arch.param_count()];
        let n_hidden = arch.hidden.len();
        for (l, slot) in layout.iter().enumerate() {
            let limit = if l < n_hidden {
                (6.0 / slot.inputs as f64).sqrt()
            } else {
                0.1 * (6.0 / (slot.inputs + slot.outputs) as f64).sqrt()
            };
            for w in &mut params[slot.offset..slot.bias_offset()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        QNetwork { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::ShapeMismatch {
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(QNetwork { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_len(&self) -> usize {
        self.arch.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter ranges `(weights, bias)` per layer, in declaration order.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        slots(&self.arch)
            .iter()
            .map(|s| (s.offset..s.bias_offset(), s.bias_offset()..s.end()))
            .collect()
    }

    /// Zeroes the value, advantage and auxiliary heads.
    pub fn zero_heads(&mut self) {
        let layout = slots(&self.arch);
        let start = layout[self.arch.hidden.len()].offset;
        self.params[start..].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Overwrites every parameter with `other`'s.
    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.arch, other.arch, "architectures differ");
        self.params.copy_from_slice(&other.params);
    }

    fn weights(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (slot.outputs, slot.inputs),
            &self.params[slot.offset..slot.bias_offset()],
        )
        .expect("layer slice matches its shape")
    }

    fn bias(&self, slot: &LayerSlot) -> ndarray::ArrayView1<'_, f64> {
        ndarray::ArrayView1::from(&self.params[slot.bias_offset()..slot.end()])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Output> {
        let batch = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        Ok(self.forward_batch(batch)?.output(0))
    }

    /// Forward pass over a `batch x input` matrix.
    pub fn forward_batch(&self, batch: Array2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.arch.input {
            return Err(Error::ShapeMismatch {
                expected: self.arch.input,
                got: batch.ncols(),
            });
        }
        let layout = slots(&self.arch);
        let n_hidden = self.arch.hidden.len();
        let mut inputs = vec![batch];
        let mut pre = Vec::with_capacity(n_hidden);
        for slot in &layout[..n_hidden] {
            let x = inputs.last().expect("at least the batch");
            let z = x.dot(&self.weights(slot).t()) + &self.bias(slot);
            let h = z.mapv(|v| v.max(0.0));
            pre.push(z);
            inputs.push(h);
        }
        let h = inputs.last().expect("hidden output");
        let head = |slot: &LayerSlot| h.dot(&self.weights(slot).t()) + &self.bias(slot);
        let value = head(&layout[n_hidden]).column(0).to_owned();
        let advantage = head(&layout[n_hidden + 1]);
        let raw = head(&layout[n_hidden + 2]).column(0).to_owned();

        let mean_adv = advantage.mean_axis(Axis(1)).expect("six actions");
        let mut q = advantage.clone();
        for (mut row, (v, m)) in q.rows_mut().into_iter().zip(value.iter().zip(&mean_adv)) {
            row.mapv_inplace(|a| v + a - m);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            q,
            value,
            advantage,
            score: raw.mapv(f64::tanh),
        })
    }

    /// Accumulates parameter gradients into `grad` given the loss gradient
    /// with respect to every Q-value and every predicted score.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_q: &Array2<f64>,
        d_score: &Array1<f64>,
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.params.len());
        let layout = slots(&self.arch);
        let n_hidden = self.arch.hidden.len();

        // Q = V + A - mean(A)
        let d_value = d_q.sum_axis(Axis(1));
        let d_mean = d_q.mean_axis(Axis(1)).expect("six actions");
        let mut d_adv = d_q.clone();
        for (mut row, m) in d_adv.rows_mut().into_iter().zip(&d_mean) {
            row.mapv_inplace(|g| g - m);
        }
        let d_raw = d_score * &cache.score.mapv(|s| 1.0 - s * s);

        let h = &cache.inputs[n_hidden];
        let heads = [
            (&layout[n_hidden], d_value.insert_axis(Axis(1))),
            (&layout[n_hidden + 1], d_adv),
            (&layout[n_hidden + 2], d_raw.insert_axis(Axis(1))),
        ];
        let mut d_h = Array2::<f64>::zeros(h.raw_dim());
        for (slot, d_out) in &heads {
            accumulate_layer(grad, slot, d_out, h);
            d_h = d_h + d_out.dot(&self.weights(slot));
        }

        for l in (0..n_hidden).rev() {
            let slot = &layout[l];
            let d_z = d_h * &cache.pre[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let x = &cache.inputs[l];
            accumulate_layer(grad, slot, &d_z, x);
            if l > 0 {
                d_h = d_z.dot(&self.weights(slot));
            } else {
                break;
            }
        }
    }
}

fn accumulate_layer(grad: &mut [f64], slot: &LayerSlot, d_out: &Array2<f64>, x: &Array2<f64>) {
    let d_w = d_out.t().dot(x);
    let d_b = d_out.sum_axis(Axis(0));
    let gw = &mut grad[slot.offset..slot.bias_offset()];
    for (g, d) in gw.iter_mut().zip(d_w.iter()) {
        *g += d;
    }
    let gb = &mut grad[slot.bias_offset()..slot.end()];
    for (g, d) in gb.iter_mut().zip(d_b.iter()) {
        *g += d;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row `row` of a batch cache's Q matrix as a fixed array.
pub(crate) fn q_row(q: &Array2<f64>, row: usize) -> [f64; NUM_ACTIONS] {
    let mut out = [0.0; NUM_ACTIONS];
    for (o, v) in out.iter_mut().zip(q.slice(s![row, ..])) {
        *o = *v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> QNetwork {
        QNetwork::new(Architecture::new(5, vec![4, 3]).unwrap(), 7)
    }

    #[test]
    fn descriptor_round_trip() {
        let arch = Architecture::new(12, vec![8, 4]).unwrap();
        assert_eq!(arch.descriptor(), vec![12, 8, 4, 1, 6, 1]);
        assert_eq!(Architecture::from_descriptor(&arch.descriptor()).unwrap(), arch);
        assert!(Architecture::from_descriptor(&[12, 8, 1, 5, 1]).is_err());
        assert_eq!(arch.param_count(), 12 * 8 + 8 + 8 * 4 + 4 + 5 + 30 + 5);
    }

    #[test]
    fn dueling_identity_with_hand_set_heads() {
        let mut net = tiny();
        net.zero_heads();
        let ranges = net.layer_ranges();
        let (_, vb) = ranges[2].clone();
        let (_, ab) = ranges[3].clone();
        net.params_mut()[vb.start] = 1.0;
        for (k, a) in [2.0, 0.0, -2.0, 0.0, 0.0, 0.0].iter().enumerate() {
            net.params_mut()[ab.start + k] = *a;
        }
        let out = net.forward(&[0.3, -0.2, 0.5, 0.1, 0.9]).unwrap();
        assert_eq!(out.q, [3.0, 1.0, -1.0, 1.0, 1.0, 1.0]);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn constant_advantage_gives_value() {
        let mut net = tiny();
        net.zero_heads();
        let ranges = net.layer_ranges();
        net.params_mut()[ranges[2].1.start] = -0.75;
        for i in ranges[3].1.clone() {
            net.params_mut()[i] = 4.0;
        }
        let out = net.forward(&[1.0; 5]).unwrap();
        assert!(out.q.iter().all(|&q| q == -0.75));
    }

    #[test]
    fn zero_heads_give_zero_outputs() {
        let mut net = tiny();
        net.zero_heads();
        let out = net.forward(&[0.4; 5]).unwrap();
        assert_eq!(out.q, [0.0; 6]);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            tiny().forward(&[0.0; 4]),
            Err(Error::ShapeMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let net = tiny();
        let rows = [[0.1, 0.2, 0.3, 0.4, 0.5], [-1.0, 0.5, 0.0, 2.0, 1.0]];
        let batch = Array2::from_shape_vec((2, 5), rows.concat()).unwrap();
        let cache = net.forward_batch(batch).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let single = net.forward(row).unwrap();
            let batched = cache.output(r);
            for a in 0..6 {
                assert!((single.q[a] - batched.q[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0, 5.0, 0.0, 0.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[1.0; 6]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(tiny(), tiny());
        let other = QNetwork::new(Architecture::new(5, vec![4, 3]).unwrap(), 8);
        assert_ne!(tiny(), other);
    }
}
