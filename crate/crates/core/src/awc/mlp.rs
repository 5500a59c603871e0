//! Residual MLP regressor with hand-written backpropagation and AdamW.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const N_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for MlpDims {
    fn default() -> Self {
        MlpDims {
            input: N_FEATURES,
            hidden: 64,
            blocks: 2,
        }
    }
}

impl MlpDims {
    pub fn n_params(&self) -> usize {
        let (i, h) = (self.input, self.hidden);
        h * i + h + self.blocks * 2 * (h * h + h) + h + 1
    }
}

// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_in: usize,
    b_in: usize,
    block0: usize,
    w_out: usize,
    b_out: usize,
}

impl Layout {
    fn new(d: MlpDims) -> Self {
        let h = d.hidden;
        let w_in = 0;
        let b_in = w_in + h * d.input;
        let block0 = b_in + h;
        let w_out = block0 + d.blocks * 2 * (h * h + h);
        Layout {
            w_in,
            b_in,
            block0,
            w_out,
            b_out: w_out + h,
        }
    }

    // (w1, b1, w2, b2) offsets of block k.
    fn block(&self, d: MlpDims, k: usize) -> (usize, usize, usize, usize) {
        let h = d.hidden;
        let w1 = self.block0 + k * 2 * (h * h + h);
        let b1 = w1 + h * h;
        let w2 = b1 + h;
        (w1, b1, w2, w2 + h * h)
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn silu<T: Scalar>(z: T) -> T {
    z * sigmoid(z)
}

fn silu_grad<T: Scalar>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

// out = W x + b, W row-major (rows x cols).
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        *o = acc;
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Hidden state entering each block, plus the final one.
    hs: Vec<Vec<T>>,
    /// Pre-activation inside each block.
    zs: Vec<Vec<T>>,
    /// Post-activation inside each block.
    acts: Vec<Vec<T>>,
    pub output: T,
}

/// Input projection, `blocks` residual blocks `h + W2 silu(W1 h + b1) + b2`,
/// then a scalar head. All weights live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMlp<T: Scalar> {
    dims: MlpDims,
    params: Vec<T>,
}

impl<T: Scalar> ResidualMlp<T> {
    pub fn from_params(dims: MlpDims, params: Vec<T>) -> Option<Self> {
        (params.len() == dims.n_params()).then_some(ResidualMlp { dims, params })
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation; head bias set to
    /// `output_bias`.
    pub fn init(dims: MlpDims, rng: &mut impl Rng, output_bias: T) -> Self {
        let l = Layout::new(dims);
        let mut params = vec![T::zero(); dims.n_params()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        };
        let h = dims.hidden;
        fill(l.w_in..l.b_in + h, dims.input);
        for k in 0..dims.blocks {
            let (w1, _, _, b2) = l.block(dims, k);
            fill(w1..b2 + h, h);
        }
        fill(l.w_out..l.b_out, h);
        params[l.b_out] = output_bias;
        ResidualMlp { dims, params }
    }

    pub fn dims(&self) -> MlpDims {
        self.dims
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, x: &[T]) -> T {
        self.forward_trace(x).output
    }

    pub fn forward_trace(&self, x: &[T]) -> Trace<T> {
        assert_eq!(x.len(), self.dims.input, "input width");
        let d = self.dims;
        let l = Layout::new(d);
        let p = &self.params;
        let h = d.hidden;
        let mut cur = vec![T::zero(); h];
        affine(&p[l.w_in..l.b_in], &p[l.b_in..l.b_in + h], x, &mut cur);
        let mut hs = Vec::with_capacity(d.blocks + 1);
        let mut zs = Vec::with_capacity(d.blocks);
        let mut acts = Vec::with_capacity(d.blocks);
        for k in 0..d.blocks {
            let (w1, b1, w2, b2) = l.block(d, k);
            let mut z = vec![T::zero(); h];
            affine(&p[w1..b1], &p[b1..b1 + h], &cur, &mut z);
            let a: Vec<T> = z.iter().map(|v| silu(*v)).collect();
            let mut y = vec![T::zero(); h];
            affine(&p[w2..b2], &p[b2..b2 + h], &a, &mut y);
            let next: Vec<T> = cur.iter().zip(&y).map(|(c, v)| *c + *v).collect();
            hs.push(std::mem::replace(&mut cur, next));
            zs.push(z);
            acts.push(a);
        }
        let mut output = p[l.b_out];
        for (w, v) in p[l.w_out..l.b_out].iter().zip(&cur) {
            output += *w * *v;
        }
        hs.push(cur);
        Trace {
            hs,
            zs,
            acts,
            output,
        }
    }

    /// Accumulates `d_output * d(output)/d(params)` into `grad`.
    pub fn backward(&self, x: &[T], trace: &Trace<T>, d_output: T, grad: &mut [T]) {
        let d = self.dims;
        let l = Layout::new(d);
        let p = &self.params;
        let h = d.hidden;
        let last = &trace.hs[d.blocks];
        grad[l.b_out] += d_output;
        let mut dh = vec![T::zero(); h];
        for j in 0..h {
            grad[l.w_out + j] += d_output * last[j];
            dh[j] = d_output * p[l.w_out + j];
        }
        for k in (0..d.blocks).rev() {
            let (w1, b1, w2, b2) = l.block(d, k);
            let (h_in, z, a) = (&trace.hs[k], &trace.zs[k], &trace.acts[k]);
            // second linear
            let mut da = vec![T::zero(); h];
            for r in 0..h {
                let g = dh[r];
                grad[b2 + r] += g;
                let row = w2 + r * h;
                for c in 0..h {
                    grad[row + c] += g * a[c];
                    da[c] += g * p[row + c];
                }
            }
            // activation
            let dz: Vec<T> = da.iter().zip(z).map(|(g, zv)| *g * silu_grad(*zv)).collect();
            // first linear; the skip path keeps dh as is
            for r in 0..h {
                let g = dz[r];
                grad[b1 + r] += g;
                let row = w1 + r * h;
                for c in 0..h {
                    grad[row + c] += g * h_in[c];
                    dh[c] += g * p[row + c];
                }
            }
        }
        for r in 0..h {
            grad[l.b_in + r] += dh[r];
            let row = l.w_in + r * d.input;
            for c in 0..d.input {
                grad[row + c] += dh[r] * x[c];
            }
        }
    }

    /// Mean absolute error over a batch and its gradient.
    pub fn l1_loss_grad(&self, xs: &[&[T]], ys: &[T], grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let n = T::of(xs.len() as f64);
        let mut loss = T::zero();
        for (x, y) in xs.iter().zip(ys) {
            let t = self.forward_trace(x);
            let r = t.output - *y;
            loss += r.abs();
            let s = if r > T::zero() {
                T::one()
            } else if r < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            self.backward(x, &t, s / n, grad);
        }
        loss / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        AdamW {
            cfg,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.lr);
        let decay = T::one() - lr * T::of(c.weight_decay);
        let bc1 = T::one() - b1.powi(self.t);
        let bc2 = T::one() - b2.powi(self.t);
        let eps = T::of(c.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{RngStream, StreamId};

    #[test]
    fn parameter_count() {
        let d = MlpDims::default();
        assert_eq!(d.n_params(), 64 * 5 + 64 + 2 * 2 * (64 * 64 + 64) + 64 + 1);
        let mut rng = RngStream::new(1, StreamId::WeightInit);
        let m = ResidualMlp::<f64>::init(d, &mut rng, 3.0);
        assert_eq!(m.params().len(), d.n_params());
        assert!(m.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).is_finite());
        assert_eq!(m.forward_trace(&[0.0; 5]).hs.last().unwrap().len(), 64);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::<f64>::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            2,
        );
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default(), 1);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]);
        assert_eq!(p[0], 2.0 * (1.0 - 1e-3 * 1e-2));
    }

    #[test]
    fn works_in_f32() {
        let mut rng = RngStream::new(2, StreamId::WeightInit);
        let m = ResidualMlp::<f32>::init(MlpDims::default(), &mut rng, 1.0);
        assert!(m.forward(&[0.5f32; 5]).is_finite());
    }
}
