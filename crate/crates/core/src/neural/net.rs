use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Scalar};
use super::NeuralError;

/// Layer widths of `input → FC+ReLU → GRU → FC+ReLU → linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub fc1: usize,
    pub gru: usize,
    pub fc2: usize,
    pub outputs: usize,
}

impl NetShape {
    /// 64-unit hidden layers.
    pub fn new(input: usize, outputs: usize) -> Self {
        Self {
            input,
            fc1: 64,
            gru: 64,
            fc2: 64,
            outputs,
        }
    }

    /// Named parameter slices in storage order: `(name, rows, cols)`.
    /// Weight matrices are stored `fan_in × fan_out`, row-major; GRU gate
    /// columns are ordered reset, update, candidate.
    pub fn slices(&self) -> [(&'static str, usize, usize); 10] {
        let g3 = 3 * self.gru;
        [
            ("fc1.w", self.input, self.fc1),
            ("fc1.b", 1, self.fc1),
            ("gru.w_ih", self.fc1, g3),
            ("gru.b_ih", 1, g3),
            ("gru.w_hh", self.gru, g3),
            ("gru.b_hh", 1, g3),
            ("fc2.w", self.gru, self.fc2),
            ("fc2.b", 1, self.fc2),
            ("out.w", self.fc2, self.outputs),
            ("out.b", 1, self.outputs),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|(_, r, c)| r * c).sum()
    }

    pub fn slice_range(&self, name: &str) -> Option<Range<usize>> {
        let mut off = 0;
        for (n, r, c) in self.slices() {
            if n == name {
                return Some(off..off + r * c);
            }
            off += r * c;
        }
        None
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut next = |len: usize| {
            let r = off..off + len;
            off += len;
            r
        };
        let g3 = 3 * self.gru;
        Layout {
            fc1_w: next(self.input * self.fc1),
            fc1_b: next(self.fc1),
            w_ih: next(self.fc1 * g3),
            b_ih: next(g3),
            w_hh: next(self.gru * g3),
            b_hh: next(g3),
            fc2_w: next(self.gru * self.fc2),
            fc2_b: next(self.fc2),
            out_w: next(self.fc2 * self.outputs),
            out_b: next(self.outputs),
        }
    }
}

struct Layout {
    fc1_w: Range<usize>,
    fc1_b: Range<usize>,
    w_ih: Range<usize>,
    b_ih: Range<usize>,
    w_hh: Range<usize>,
    b_hh: Range<usize>,
    fc2_w: Range<usize>,
    fc2_b: Range<usize>,
    out_w: Range<usize>,
    out_b: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    #[default]
    FanInUniform,
    Zeros,
}

impl InitScheme {
    /// Variance of a weight entry with the given fan-in.
    pub fn weight_variance(&self, fan_in: usize) -> f64 {
        match self {
            InitScheme::FanInUniform => 1.0 / (3.0 * fan_in as f64),
            InitScheme::Zeros => 0.0,
        }
    }
}

/// Flat parameter vector plus its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub shape: NetShape,
    pub data: Vec<T>,
}

/// Per-agent recurrent state, `gru` values per row.
pub type HiddenState<T> = Vec<T>;

impl<T: Scalar> NetParams<T> {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            data: vec![T::zero(); shape.param_count()],
            shape,
        }
    }

    pub fn init<R: Rng + ?Sized>(shape: NetShape, scheme: InitScheme, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        if scheme == InitScheme::Zeros {
            return p;
        }
        let mut off = 0;
        for (name, rows, cols) in shape.slices() {
            let len = rows * cols;
            if name.contains(".w") {
                let bound = 1.0 / (rows as f64).sqrt();
                for v in &mut p.data[off..off + len] {
                    *v = T::of(rng.random_range(-bound..bound));
                }
            }
            off += len;
        }
        p
    }

    pub fn slice(&self, name: &str) -> Option<&[T]> {
        self.shape.slice_range(name).map(|r| &self.data[r])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.shape.slice_range(name).map(move |r| &mut self.data[r])
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn zero_hidden(&self, batch: usize) -> HiddenState<T> {
        vec![T::zero(); batch * self.shape.gru]
    }

    fn check_input(&self, x: &[T], rows: usize) -> Result<(), NeuralError> {
        let want = rows * self.shape.input;
        if x.len() != want {
            return Err(NeuralError::Shape {
                what: "input",
                expected: want,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// One recurrent step for `batch` independent rows. Returns the
    /// `batch × outputs` q-values and advances `hidden` in place.
    pub fn step(&self, x: &[T], batch: usize, hidden: &mut [T]) -> Result<Vec<T>, NeuralError> {
        self.check_input(x, batch)?;
        if hidden.len() != batch * self.shape.gru {
            return Err(NeuralError::Shape {
                what: "hidden",
                expected: batch * self.shape.gru,
                got: hidden.len(),
            });
        }
        let cache = self.forward_from(x, 1, batch, hidden)?;
        hidden.copy_from_slice(cache.hidden_at(1));
        Ok(cache.q)
    }

    /// Forward pass over `steps × batch` time-major rows (row `t·batch + b`)
    /// starting from a zero hidden state.
    pub fn forward_seq(&self, x: &[T], steps: usize, batch: usize) -> Result<SeqCache<T>, NeuralError> {
        let h0 = self.zero_hidden(batch);
        self.forward_from(x, steps, batch, &h0)
    }

    fn forward_from(&self, x: &[T], steps: usize, batch: usize, h0: &[T]) -> Result<SeqCache<T>, NeuralError> {
        let s = self.shape;
        let l = s.layout();
        let p = &self.data;
        let rows = steps * batch;
        self.check_input(x, rows)?;
        let g = s.gru;
        let g3 = 3 * g;

        let mut a1 = affine(x, rows, s.input, &p[l.fc1_w.clone()], &p[l.fc1_b.clone()], s.fc1);
        relu(&mut a1);
        let gi = affine(&a1, rows, s.fc1, &p[l.w_ih.clone()], &p[l.b_ih.clone()], g3);

        let mut r = vec![T::zero(); rows * g];
        let mut z = vec![T::zero(); rows * g];
        let mut n = vec![T::zero(); rows * g];
        let mut ghn = vec![T::zero(); rows * g];
        let mut h = vec![T::zero(); (steps + 1) * batch * g];
        h[..batch * g].copy_from_slice(h0);
        let w_hh = &p[l.w_hh.clone()];
        let b_hh = &p[l.b_hh.clone()];
        let mut gh = vec![T::zero(); batch * g3];
        for t in 0..steps {
            let (h_done, h_next) = h.split_at_mut((t + 1) * batch * g);
            let h_prev = &h_done[t * batch * g..];
            fill_rows(&mut gh, b_hh);
            gemm(false, false, batch, g3, g, h_prev, w_hh, T::one(), &mut gh);
            let span = t * batch * g..(t + 1) * batch * g;
            for b in 0..batch {
                let row = t * batch + b;
                let gi_row = &gi[row * g3..(row + 1) * g3];
                let gh_row = &gh[b * g3..(b + 1) * g3];
                for j in 0..g {
                    let k = row * g + j;
                    r[k] = gi_row[j] + gh_row[j];
                    z[k] = gi_row[g + j] + gh_row[g + j];
                    ghn[k] = gh_row[2 * g + j];
                }
            }
            T::sigmoid_slice(&mut r[span.clone()]);
            T::sigmoid_slice(&mut z[span.clone()]);
            for b in 0..batch {
                let row = t * batch + b;
                let gi_row = &gi[row * g3..(row + 1) * g3];
                for j in 0..g {
                    let k = row * g + j;
                    n[k] = gi_row[2 * g + j] + r[k] * ghn[k];
                }
            }
            T::tanh_slice(&mut n[span.clone()]);
            for (k, hn) in span.zip(h_next[..batch * g].iter_mut()) {
                let hp = h_prev[k - t * batch * g];
                *hn = (T::one() - z[k]) * n[k] + z[k] * hp;
            }
        }

        let mut a2 = affine(&h[batch * g..], rows, g, &p[l.fc2_w.clone()], &p[l.fc2_b.clone()], s.fc2);
        relu(&mut a2);
        let q = affine(&a2, rows, s.fc2, &p[l.out_w.clone()], &p[l.out_b.clone()], s.outputs);
        Ok(SeqCache {
            steps,
            batch,
            x: x.to_vec(),
            a1,
            r,
            z,
            n,
            ghn,
            h,
            a2,
            q,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// gradient with respect to the cached q-values is `dq`.
    pub fn backward_seq(&self, cache: &SeqCache<T>, dq: &[T], grad: &mut [T]) {
        let s = self.shape;
        let l = s.layout();
        let p = &self.data;
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        let g = s.gru;
        let g3 = 3 * g;
        assert_eq!(dq.len(), rows * s.outputs, "dq has wrong size");
        assert_eq!(grad.len(), p.len(), "gradient has wrong size");

        // Output head.
        gemm(true, false, s.fc2, s.outputs, rows, &cache.a2, dq, T::one(), &mut grad[l.out_w.clone()]);
        col_sum_into(dq, s.outputs, &mut grad[l.out_b.clone()]);
        let mut da2 = vec![T::zero(); rows * s.fc2];
        gemm(false, true, rows, s.fc2, s.outputs, dq, &p[l.out_w.clone()], T::zero(), &mut da2);
        relu_backward(&mut da2, &cache.a2);

        // Second dense layer.
        let h_out = &cache.h[batch * g..];
        gemm(true, false, g, s.fc2, rows, h_out, &da2, T::one(), &mut grad[l.fc2_w.clone()]);
        col_sum_into(&da2, s.fc2, &mut grad[l.fc2_b.clone()]);
        let mut dh_out = vec![T::zero(); rows * g];
        gemm(false, true, rows, g, s.fc2, &da2, &p[l.fc2_w.clone()], T::zero(), &mut dh_out);

        // Recurrence, newest step first.
        let w_hh = &p[l.w_hh.clone()];
        let mut dgi = vec![T::zero(); rows * g3];
        let mut dgh = vec![T::zero(); batch * g3];
        let mut carry = vec![T::zero(); batch * g];
        let mut dh = vec![T::zero(); batch * g];
        for t in (0..steps).rev() {
            let h_prev = &cache.h[t * batch * g..(t + 1) * batch * g];
            for b in 0..batch {
                let row = t * batch + b;
                for j in 0..g {
                    let k = row * g + j;
                    let d = dh_out[k] + carry[b * g + j];
                    let (rj, zj, nj, hn) = (cache.r[k], cache.z[k], cache.n[k], cache.ghn[k]);
                    let hp = h_prev[b * g + j];
                    let dn = d * (T::one() - zj) * (T::one() - nj * nj);
                    let dz = d * (hp - nj) * zj * (T::one() - zj);
                    let dr = dn * hn * rj * (T::one() - rj);
                    dh[b * g + j] = d * zj;
                    let gi_row = &mut dgi[row * g3..(row + 1) * g3];
                    gi_row[j] = dr;
                    gi_row[g + j] = dz;
                    gi_row[2 * g + j] = dn;
                    let gh_row = &mut dgh[b * g3..(b + 1) * g3];
                    gh_row[j] = dr;
                    gh_row[g + j] = dz;
                    gh_row[2 * g + j] = dn * rj;
                }
            }
            gemm(true, false, g, g3, batch, h_prev, &dgh, T::one(), &mut grad[l.w_hh.clone()]);
            col_sum_into(&dgh, g3, &mut grad[l.b_hh.clone()]);
            if t > 0 {
                carry.copy_from_slice(&dh);
                gemm(false, true, batch, g, g3, &dgh, w_hh, T::one(), &mut carry);
            }
        }

        // Input-side gate weights and first dense layer.
        gemm(true, false, s.fc1, g3, rows, &cache.a1, &dgi, T::one(), &mut grad[l.w_ih.clone()]);
        col_sum_into(&dgi, g3, &mut grad[l.b_ih.clone()]);
        let mut da1 = vec![T::zero(); rows * s.fc1];
        gemm(false, true, rows, s.fc1, g3, &dgi, &p[l.w_ih.clone()], T::zero(), &mut da1);
        relu_backward(&mut da1, &cache.a1);
        gemm(true, false, s.input, s.fc1, rows, &cache.x, &da1, T::one(), &mut grad[l.fc1_w.clone()]);
        col_sum_into(&da1, s.fc1, &mut grad[l.fc1_b.clone()]);
    }

    /// `Σ (y − Q[a])²` over rows with a target, and its gradient.
    /// `picks[row] = Some((action, target))`.
    pub fn squared_error(
        &self,
        x: &[T],
        steps: usize,
        batch: usize,
        picks: &[Option<(usize, T)>],
    ) -> Result<(f64, Vec<T>), NeuralError> {
        let cache = self.forward_seq(x, steps, batch)?;
        let o = self.shape.outputs;
        if picks.len() != steps * batch {
            return Err(NeuralError::Shape {
                what: "targets",
                expected: steps * batch,
                got: picks.len(),
            });
        }
        let mut dq = vec![T::zero(); cache.q.len()];
        let mut loss = 0.0;
        for (row, pick) in picks.iter().enumerate() {
            if let Some((a, y)) = *pick {
                let err = y - cache.q[row * o + a];
                loss += err.as_f64() * err.as_f64();
                dq[row * o + a] = -T::of(2.0) * err;
            }
        }
        let mut grad = vec![T::zero(); self.data.len()];
        self.backward_seq(&cache, &dq, &mut grad);
        Ok((loss, grad))
    }
}

/// Activations kept from a sequence forward pass.
#[derive(Debug, Clone)]
pub struct SeqCache<T> {
    pub steps: usize,
    pub batch: usize,
    x: Vec<T>,
    a1: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    ghn: Vec<T>,
    /// Hidden states `h_0..h_T`, each `batch × gru`.
    h: Vec<T>,
    a2: Vec<T>,
    /// `steps·batch × outputs`, time-major.
    pub q: Vec<T>,
}

impl<T: Scalar> SeqCache<T> {
    pub fn hidden_at(&self, t: usize) -> &[T] {
        let w = self.h.len() / (self.steps + 1);
        &self.h[t * w..(t + 1) * w]
    }

    pub fn q_row(&self, t: usize, b: usize) -> &[T] {
        let o = self.q.len() / (self.steps * self.batch);
        let row = t * self.batch + b;
        &self.q[row * o..(row + 1) * o]
    }
}

fn fill_rows<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn affine<T: Scalar>(x: &[T], rows: usize, inp: usize, w: &[T], b: &[T], out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * out];
    fill_rows(&mut y, b);
    gemm(false, false, rows, out, inp, x, w, T::one(), &mut y);
    y
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn relu_backward<T: Scalar>(d: &mut [T], activated: &[T]) {
    for (g, &a) in d.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

fn col_sum_into<T: Scalar>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetShape {
        NetShape {
            input: 4,
            fc1: 5,
            gru: 3,
            fc2: 4,
            outputs: 7,
        }
    }

    fn random_params(shape: NetShape, seed: u64) -> NetParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = NetParams::<f64>::init(shape, InitScheme::FanInUniform, &mut rng);
        for v in p.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn slice_names_cover_the_vector() {
        let s = NetShape::new(20, 7);
        let total: usize = s.slices().iter().map(|(_, r, c)| r * c).sum();
        assert_eq!(total, s.param_count());
        assert_eq!(s.slice_range("gru.w_ih").unwrap().len(), 64 * 192);
        assert_eq!(s.slice_range("out.b").unwrap().end, s.param_count());
        assert!(s.slice_range("nope").is_none());
    }

    #[test]
    fn zero_weights_give_zero_q() {
        let p = NetParams::<f32>::zeros(NetShape::new(6, 7));
        let mut h = p.zero_hidden(2);
        let q = p.step(&[1.0, -2.0, 3.0, 0.5, 9.0, -4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 2, &mut h).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = NetParams::<f32>::zeros(NetShape::new(6, 7));
        let mut h = p.zero_hidden(1);
        assert!(p.step(&[0.0; 5], 1, &mut h).is_err());
        let mut h_bad = vec![0.0; 3];
        assert!(p.step(&[0.0; 6], 1, &mut h_bad).is_err());
    }

    #[test]
    fn hidden_state_carries_history() {
        let p = random_params(small(), 1);
        let last = [0.3, -0.2, 0.5, 0.1];
        let run = |first: [f64; 4]| {
            let mut h = p.zero_hidden(1);
            p.step(&first, 1, &mut h).unwrap();
            p.step(&last, 1, &mut h).unwrap()
        };
        let a = run([1.0, 0.0, 0.0, 0.0]);
        let b = run([0.0, 0.0, -1.0, 2.0]);
        assert_ne!(a, b);
    }

    #[test]
    fn step_matches_sequence_forward() {
        let p = random_params(small(), 2);
        let x: Vec<f64> = (0..3 * 2 * 4).map(|i| (i as f64 * 0.13).sin()).collect();
        let cache = p.forward_seq(&x, 3, 2).unwrap();
        let mut h = p.zero_hidden(2);
        for t in 0..3 {
            let q = p.step(&x[t * 8..(t + 1) * 8], 2, &mut h).unwrap();
            for b in 0..2 {
                let want = cache.q_row(t, b);
                for (u, v) in q[b * 7..(b + 1) * 7].iter().zip(want) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let p = random_params(small(), 3).cast::<f32>();
        let x: Vec<f32> = (0..8).map(|i| i as f32 * 0.1).collect();
        let a = p.forward_seq(&x, 2, 1).unwrap().q;
        let b = p.forward_seq(&x, 2, 1).unwrap().q;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let p = random_params(small(), 4);
        let x: Vec<f64> = (0..2 * 4).map(|i| i as f64 * 0.2 - 0.5).collect();
        let cache = p.forward_seq(&x, 2, 1).unwrap();
        let picks: Vec<_> = (0..2).map(|row| Some((3, cache.q[row * 7 + 3]))).collect();
        let (loss, grad) = p.squared_error(&x, 2, 1, &picks).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_additive_over_episodes() {
        let p = random_params(small(), 5);
        let x1: Vec<f64> = (0..3 * 4).map(|i| (i as f64).cos()).collect();
        let x2: Vec<f64> = (0..3 * 4).map(|i| (i as f64 * 0.5).sin()).collect();
        let p1 = vec![Some((1, 0.5)), None, Some((6, -1.0))];
        let p2 = vec![Some((0, 2.0)), Some((2, 0.1)), None];
        let (l1, g1) = p.squared_error(&x1, 3, 1, &p1).unwrap();
        let (l2, g2) = p.squared_error(&x2, 3, 1, &p2).unwrap();
        // Both episodes as a batch of two time-major sequences.
        let mut x = Vec::new();
        let mut picks = Vec::new();
        for t in 0..3 {
            x.extend_from_slice(&x1[t * 4..(t + 1) * 4]);
            x.extend_from_slice(&x2[t * 4..(t + 1) * 4]);
            picks.push(p1[t]);
            picks.push(p2[t]);
        }
        let (l, g) = p.squared_error(&x, 3, 2, &picks).unwrap();
        assert!((l - l1 - l2).abs() < 1e-12);
        for ((a, b), c) in g.iter().zip(&g1).zip(&g2) {
            assert!((a - b - c).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = random_params(small(), 6);
        let (steps, batch) = (4, 2);
        let x: Vec<f64> = (0..steps * batch * 4).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.2).collect();
        let picks: Vec<_> = (0..steps * batch).map(|r| Some((r % 7, (r as f64) * 0.1 - 0.3))).collect();
        let (_, grad) = p.squared_error(&x, steps, batch, &picks).unwrap();
        let eps = 1e-5;
        for i in 0..p.data.len() {
            let mut hi = p.clone();
            hi.data[i] += eps;
            let mut lo = p.clone();
            lo.data[i] -= eps;
            let fd = (hi.squared_error(&x, steps, batch, &picks).unwrap().0
                - lo.squared_error(&x, steps, batch, &picks).unwrap().0)
                / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let s = NetShape::new(10, 7);
        let a = NetParams::<f32>::init(s, InitScheme::FanInUniform, &mut ChaCha8Rng::seed_from_u64(1));
        let b = NetParams::<f32>::init(s, InitScheme::FanInUniform, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        for (name, _, _) in s.slices() {
            if name.ends_with(".b") || name.contains(".b_") {
                assert!(a.slice(name).unwrap().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }
}
