//! Residual MLP with batch normalization.
//!
//! `stem: Linear(d_in → h)`, then `n_blocks` blocks of
//! `x + Dropout(ReLU(BN(Linear(x))))`, then `head: Linear(h → d_out)`. The
//! embedding is the activation entering the head. All trainable parameters
//! live in one flat vector so that the optimizer, checkpoints and gradient
//! checks can treat them uniformly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

pub const EMBED_DIM: usize = 128;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub dropout: f64,
    pub params: Vec<f64>,
    pub running_mean: Vec<Array1<f64>>,
    pub running_var: Vec<Array1<f64>>,
}

/// Offsets of one block's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
}

struct BlockCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// ReLU derivative times dropout scale.
    gate: Array2<f64>,
    relu_on: Vec<bool>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    pub mode: Mode,
    pub input: Array2<f64>,
    pub embeddings: Array2<f64>,
    pub outputs: Array2<f64>,
    blocks: Vec<BlockCache>,
}

impl ForwardCache {
    /// ReLU on/off pattern of every unit; used to detect kinks in gradient
    /// checks.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.relu_on.iter().copied()).collect()
    }
}

pub fn parameter_count(d_in: usize, d_out: usize, hidden: usize, n_blocks: usize) -> usize {
    d_in * hidden + hidden + n_blocks * (hidden * hidden + 3 * hidden) + hidden * d_out + d_out
}

/// Builds a network with the standard 128-wide embedding.
pub fn build_network(d_in: usize, d_out: usize, n_blocks: usize, seed: u64) -> Result<Network> {
    Network::new(d_in, d_out, EMBED_DIM, n_blocks, DEFAULT_DROPOUT, seed)
}

impl Network {
    pub fn new(
        d_in: usize,
        d_out: usize,
        hidden: usize,
        n_blocks: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        ensure!(d_in >= 1, "network input width must be >= 1");
        ensure!(d_out >= 1, "network output width must be >= 1");
        ensure!(hidden >= 1, "hidden width must be >= 1");
        ensure!(n_blocks >= 1, "network needs at least one block");
        ensure!((0.0..1.0).contains(&dropout), "dropout must lie in [0, 1)");
        let mut net = Self {
            d_in,
            d_out,
            hidden,
            n_blocks,
            dropout,
            params: vec![0.0; parameter_count(d_in, d_out, hidden, n_blocks)],
            running_mean: vec![Array1::zeros(hidden); n_blocks],
            running_var: vec![Array1::ones(hidden); n_blocks],
        };
        let mut rng = Rng::new(seed);
        let mut init = |params: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params {
                *p = rng.uniform_range(-bound, bound);
            }
        };
        let h = hidden;
        let stem_end = d_in * h + h;
        init(&mut net.params[..stem_end], d_in);
        for b in 0..n_blocks {
            let o = net.block_offsets(b);
            init(&mut net.params[o.w..o.gamma], h);
            net.params[o.gamma..o.beta].fill(1.0);
        }
        let head = net.head_w_offset();
        init(&mut net.params[head..], h);
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn block_offsets(&self, b: usize) -> BlockOffsets {
        let h = self.hidden;
        let w = self.d_in * h + h + b * (h * h + 3 * h);
        BlockOffsets {
            w,
            b: w + h * h,
            gamma: w + h * h + h,
            beta: w + h * h + 2 * h,
        }
    }

    fn head_w_offset(&self) -> usize {
        self.block_offsets(self.n_blocks).w
    }

    fn mat(&self, off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((r, c), &self.params[off..off + r * c]).expect("layout")
    }

    fn vec(&self, off: usize, n: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + n])
    }

    /// Head weights as an `hidden × d_out` matrix; column `k` belongs to
    /// output `k`.
    pub fn head_weights(&self) -> ArrayView2<'_, f64> {
        self.mat(self.head_w_offset(), self.hidden, self.d_out)
    }

    pub fn head_weights_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let off = self.head_w_offset();
        let (h, o) = (self.hidden, self.d_out);
        ArrayViewMut2::from_shape((h, o), &mut self.params[off..off + h * o]).expect("layout")
    }

    /// Range of the head weight matrix inside the flat parameter vector.
    pub fn head_weight_range(&self) -> std::ops::Range<usize> {
        let off = self.head_w_offset();
        off..off + self.hidden * self.d_out
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<ForwardCache> {
        ensure!(
            x.ncols() == self.d_in,
            "network expects width {}, got {}",
            self.d_in,
            x.ncols()
        );
        ensure!(x.nrows() >= 1, "empty batch");
        if mode == Mode::Train {
            ensure!(x.nrows() >= 2, "train-mode batch norm needs at least 2 rows");
        }
        let h = self.hidden;
        let mut rng = rng;
        let mut act = x.dot(&self.mat(0, self.d_in, h)) + &self.vec(self.d_in * h, h);
        check_finite(&act, "stem")?;
        let mut blocks = Vec::with_capacity(self.n_blocks);
        for b in 0..self.n_blocks {
            let o = self.block_offsets(b);
            let z = act.dot(&self.mat(o.w, h, h)) + &self.vec(o.b, h);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = z.mean_axis(Axis(0)).expect("rows");
                    let var = z.var_axis(Axis(0), 0.0);
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[b].clone(), self.running_var[b].clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let bn = &xhat * &self.vec(o.gamma, h) + &self.vec(o.beta, h);
            let relu_on: Vec<bool> = bn.iter().map(|&v| v > 0.0).collect();
            let mut gate = Array2::from_shape_fn(bn.dim(), |(i, j)| {
                if relu_on[i * h + j] {
                    1.0
                } else {
                    0.0
                }
            });
            if mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let r = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::Contract("train-mode dropout needs an rng".into()))?;
                gate.mapv_inplace(|g| if r.uniform() < keep { g / keep } else { 0.0 });
            }
            // gate is zero where the ReLU is off, so this is Dropout(ReLU(bn))
            let next = &act + &(&bn * &gate);
            check_finite(&next, &format!("block {b}"))?;
            blocks.push(BlockCache {
                input: act,
                xhat,
                inv_std,
                gate,
                relu_on,
                batch_mean: mean,
                batch_var: var,
            });
            act = next;
        }
        let ho = self.head_w_offset();
        let outputs = act.dot(&self.mat(ho, h, self.d_out)) + &self.vec(ho + h * self.d_out, self.d_out);
        check_finite(&outputs, "head")?;
        Ok(ForwardCache {
            mode,
            input: x.to_owned(),
            embeddings: act,
            outputs,
            blocks,
        })
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradients flowing into the outputs and (optionally) the embeddings.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: Option<&Array2<f64>>,
        d_emb: Option<&Array2<f64>>,
    ) -> Vec<f64> {
        let h = self.hidden;
        let n = cache.input.nrows();
        let mut grad = vec![0.0; self.params.len()];
        let mut g = match d_emb {
            Some(d) => d.clone(),
            None => Array2::zeros((n, h)),
        };
        let ho = self.head_w_offset();
        if let Some(d) = d_out {
            let gw = cache.embeddings.t().dot(d);
            add_into(&mut grad[ho..ho + h * self.d_out], gw.iter());
            add_into(&mut grad[ho + h * self.d_out..], d.sum_axis(Axis(0)).iter());
            g = g + d.dot(&self.mat(ho, h, self.d_out).t());
        }
        for b in (0..self.n_blocks).rev() {
            let o = self.block_offsets(b);
            let c = &cache.blocks[b];
            let d_bn = &g * &c.gate;
            add_into(&mut grad[o.gamma..o.beta], (&d_bn * &c.xhat).sum_axis(Axis(0)).iter());
            add_into(&mut grad[o.beta..o.beta + h], d_bn.sum_axis(Axis(0)).iter());
            let dxhat = &d_bn * &self.vec(o.gamma, h);
            let dz = match cache.mode {
                Mode::Train => {
                    let nf = n as f64;
                    let s1 = dxhat.sum_axis(Axis(0));
                    let s2 = (&dxhat * &c.xhat).sum_axis(Axis(0));
                    let inner = &dxhat * nf - &s1 - &(&c.xhat * &s2);
                    inner * &(&c.inv_std / nf)
                }
                Mode::Eval => &dxhat * &c.inv_std,
            };
            add_into(&mut grad[o.w..o.b], c.input.t().dot(&dz).iter());
            add_into(&mut grad[o.b..o.gamma], dz.sum_axis(Axis(0)).iter());
            g = g + dz.dot(&self.mat(o.w, h, h).t());
        }
        add_into(&mut grad[..self.d_in * h], cache.input.t().dot(&g).iter());
        add_into(
            &mut grad[self.d_in * h..self.d_in * h + h],
            g.sum_axis(Axis(0)).iter(),
        );
        grad
    }

    /// Moves running batch-norm statistics toward the batch statistics of a
    /// train-mode pass.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.input.nrows() as f64;
        let unbias = n / (n - 1.0);
        for (b, c) in cache.blocks.iter().enumerate() {
            self.running_mean[b] =
                &self.running_mean[b] * (1.0 - BN_MOMENTUM) + &c.batch_mean * BN_MOMENTUM;
            self.running_var[b] =
                &self.running_var[b] * (1.0 - BN_MOMENTUM) + &(&c.batch_var * unbias) * BN_MOMENTUM;
        }
    }

    /// Eval-mode embeddings.
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval, None)?.embeddings)
    }

    /// Parameters and running statistics as little-endian bytes.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (self.params.len() + 2 * self.n_blocks * self.hidden));
        for v in self
            .params
            .iter()
            .chain(self.running_mean.iter().flat_map(|a| a.iter()))
            .chain(self.running_var.iter().flat_map(|a| a.iter()))
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

fn add_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in {layer}")))
    }
}
