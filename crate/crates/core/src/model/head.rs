//! MLP projection heads: `[Linear → LayerNorm → ReLU → Dropout] × n → Linear`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense layer, `y = W x + b` with `W` stored `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Kaiming-uniform (fan-in, ReLU gain) weights, zero bias.
    pub fn kaiming(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let bound = libm::sqrt(6.0 / in_dim as f64);
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    fn weight_row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.out_dim);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for (o, yo) in yi.iter_mut().enumerate() {
                *yo = dot(self.weight_row(o), xi) + self.bias[o];
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        let mut dx = Matrix::zeros(x.rows(), self.in_dim);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let dyi = dy.row(i);
            let dxi = dx.row_mut(i);
            for (o, &g) in dyi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                axpy(
                    g,
                    xi,
                    &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim],
                );
                axpy(g, self.weight_row(o), dxi);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn identity(dim: usize, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps,
        }
    }

    pub fn zeros(dim: usize, eps: f64) -> Self {
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
            eps,
        }
    }
}

/// Per-row standardization `(x - mean) / sqrt(var + eps)` (population variance).
pub fn standardize(row: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / libm::sqrt(var + eps);
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub linear: Linear,
    pub norm: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub blocks: Vec<Block>,
    pub output: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
struct BlockTape {
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// Post-affine, pre-ReLU activations.
    affine: Matrix,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); `None` when inactive.
    mask: Option<Vec<f64>>,
}

/// Activations cached by a forward pass for [`ProjectionHead::backward`].
#[derive(Debug, Clone)]
pub struct HeadTape {
    /// Input of every linear layer: the head input, then each block output.
    inputs: Vec<Matrix>,
    blocks: Vec<BlockTape>,
    out_dim: usize,
}

impl HeadTape {
    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }

    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

impl ProjectionHead {
    pub fn new(
        in_dim: usize,
        hidden_layers: usize,
        hidden_dim: usize,
        out_dim: usize,
        dropout: f64,
        eps: f64,
        rng: &mut RngState,
    ) -> Self {
        let mut blocks = Vec::with_capacity(hidden_layers);
        let mut d = in_dim;
        for _ in 0..hidden_layers {
            blocks.push(Block {
                linear: Linear::kaiming(d, hidden_dim, rng),
                norm: LayerNormParams::identity(hidden_dim, eps),
            });
            d = hidden_dim;
        }
        let output = Linear::kaiming(d, out_dim, rng);
        Self {
            blocks,
            output,
            dropout,
        }
    }

    /// Same architecture, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    linear: Linear::zeros(b.linear.in_dim, b.linear.out_dim),
                    norm: LayerNormParams::zeros(b.norm.gamma.len(), b.norm.eps),
                })
                .collect(),
            output: Linear::zeros(self.output.in_dim, self.output.out_dim),
            dropout: self.dropout,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.blocks
            .first()
            .map_or(self.output.in_dim, |b| b.linear.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    /// Forward pass that keeps a tape for backpropagation.
    pub fn forward(&self, x: &Matrix, mode: Mode, rng: &mut RngState) -> Result<(Matrix, HeadTape)> {
        self.check_input(x)?;
        let mut tape = HeadTape {
            inputs: Vec::with_capacity(self.blocks.len() + 1),
            blocks: Vec::with_capacity(self.blocks.len()),
            out_dim: self.out_dim(),
        };
        let mut cur = x.clone();
        for block in &self.blocks {
            let (next, bt) = self.block_forward(block, &cur, mode, rng);
            tape.inputs.push(cur);
            tape.blocks.push(bt);
            cur = next;
        }
        let out = self.output.forward(&cur);
        tape.inputs.push(cur);
        Ok((out, tape))
    }

    /// Eval-mode forward without a tape.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        // eval mode never touches the rng
        let mut rng = RngState::new(0);
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = self.block_forward(block, &cur, Mode::Eval, &mut rng).0;
        }
        Ok(self.output.forward(&cur))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} input columns, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn block_forward(
        &self,
        block: &Block,
        x: &Matrix,
        mode: Mode,
        rng: &mut RngState,
    ) -> (Matrix, BlockTape) {
        let z = block.linear.forward(x);
        let (b, d) = z.shape();
        let mut xhat = Matrix::zeros(b, d);
        let mut inv_std = Vec::with_capacity(b);
        let mut affine = Matrix::zeros(b, d);
        let mut out = Matrix::zeros(b, d);
        let p = self.dropout;
        let drop = mode == Mode::Train && p > 0.0;
        let mut mask = if drop { Some(vec![0.0; b * d]) } else { None };
        let keep_scale = 1.0 / (1.0 - p);
        for i in 0..b {
            inv_std.push(standardize(z.row(i), block.norm.eps, xhat.row_mut(i)));
            let xh = xhat.row(i);
            let ar = affine.row_mut(i);
            for j in 0..d {
                ar[j] = block.norm.gamma[j] * xh[j] + block.norm.beta[j];
            }
            let ar = affine.row(i);
            let or = out.row_mut(i);
            for j in 0..d {
                let r = if ar[j] > 0.0 { ar[j] } else { 0.0 };
                or[j] = match mask.as_mut() {
                    Some(m) => {
                        let keep = if rng.uniform() < p { 0.0 } else { keep_scale };
                        m[i * d + j] = keep;
                        r * keep
                    }
                    None => r,
                };
            }
        }
        (
            out,
            BlockTape {
                xhat,
                inv_std,
                affine,
                mask,
            },
        )
    }

    /// Backpropagates `d_out` through the head, accumulating parameter
    /// gradients into `grad`, and returns the gradient w.r.t. the input.
    pub fn backward(&self, tape: &HeadTape, d_out: &Matrix, grad: &mut ProjectionHead) -> Result<Matrix> {
        if tape.blocks.len() != self.blocks.len()
            || tape.inputs.len() != self.blocks.len() + 1
            || tape.input().cols() != self.in_dim()
            || tape.out_dim != self.out_dim()
        {
            return Err(Error::TapeMismatch("tape was recorded by a different head".into()));
        }
        if d_out.shape() != (tape.batch(), self.out_dim()) {
            return Err(Error::TapeMismatch(format!(
                "upstream gradient {:?} vs head output ({}, {})",
                d_out.shape(),
                tape.batch(),
                self.out_dim()
            )));
        }
        let last = tape.inputs.last().expect("tape has inputs");
        let mut d = self.output.backward(last, d_out, &mut grad.output);
        for k in (0..self.blocks.len()).rev() {
            let block = &self.blocks[k];
            let bt = &tape.blocks[k];
            let gb = &mut grad.blocks[k];
            let (b, dim) = d.shape();
            let mut dz = Matrix::zeros(b, dim);
            let mut dxhat = vec![0.0; dim];
            for i in 0..b {
                let di = d.row(i);
                let ar = bt.affine.row(i);
                let xh = bt.xhat.row(i);
                for j in 0..dim {
                    let mut g = di[j];
                    if let Some(m) = &bt.mask {
                        g *= m[i * dim + j];
                    }
                    if ar[j] <= 0.0 {
                        g = 0.0;
                    }
                    gb.norm.gamma[j] += g * xh[j];
                    gb.norm.beta[j] += g;
                    dxhat[j] = g * block.norm.gamma[j];
                }
                let n = dim as f64;
                let mean_d = dxhat.iter().sum::<f64>() / n;
                let mean_dx = dot(&dxhat, xh) / n;
                let s = bt.inv_std[i];
                let dzr = dz.row_mut(i);
                for j in 0..dim {
                    dzr[j] = s * (dxhat[j] - mean_d - xh[j] * mean_dx);
                }
            }
            d = block.linear.backward(&tape.inputs[k], &dz, &mut gb.linear);
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = RngState::new(3);
        let head = ProjectionHead::new(8, 2, 16, 4, 0.2, 1e-5, &mut rng);
        let mut z = head.zeros_like();
        for b in &mut z.blocks {
            b.norm = LayerNormParams::identity(b.norm.gamma.len(), 1e-5);
        }
        let x = random_matrix(5, 8, &mut rng);
        let y = z.infer(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let mut rng = RngState::new(11);
        let head = ProjectionHead::new(6, 2, 10, 3, 0.0, 1e-5, &mut rng);
        let x = random_matrix(4, 6, &mut rng);
        let (train, _) = head.forward(&x, Mode::Train, &mut RngState::new(1)).unwrap();
        let eval = head.infer(&x).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let mut rng = RngState::new(5);
        let head = ProjectionHead::new(4, 1, 2000, 1, 0.5, 1e-5, &mut rng);
        let x = random_matrix(1, 4, &mut rng);
        let (_, tape) = head.forward(&x, Mode::Train, &mut rng).unwrap();
        let mask = tape.blocks[0].mask.as_ref().unwrap();
        let zeros = mask.iter().filter(|&&m| m == 0.0).count();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!((800..1200).contains(&zeros), "{zeros} dropped of 2000");
    }

    #[test]
    fn layernorm_rows_standardized() {
        let mut rng = RngState::new(9);
        for _ in 0..50 {
            let row: Vec<f64> = (0..37).map(|_| 3.0 * rng.normal() + 1.5).collect();
            let mut out = vec![0.0; row.len()];
            standardize(&row, 1e-12, &mut out);
            let n = out.len() as f64;
            let mean = out.iter().sum::<f64>() / n;
            let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = RngState::new(1);
        let head = ProjectionHead::new(6, 1, 4, 2, 0.0, 1e-5, &mut rng);
        let x = Matrix::zeros(2, 5);
        assert!(matches!(head.infer(&x), Err(Error::ShapeMismatch(_))));
    }

    /// Straightforward per-sample re-implementation of the eval forward.
    fn naive_forward(head: &ProjectionHead, x: &[f64]) -> Vec<f64> {
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            (0..l.out_dim)
                .map(|o| {
                    let mut s = l.bias[o];
                    for k in 0..l.in_dim {
                        s += l.weight[o * l.in_dim + k] * v[k];
                    }
                    s
                })
                .collect()
        };
        let mut v = x.to_vec();
        for b in &head.blocks {
            let z = lin(&b.linear, &v);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            v = z
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    let y = b.norm.gamma[j] * (a - mean) / (var + b.norm.eps).sqrt() + b.norm.beta[j];
                    y.max(0.0)
                })
                .collect();
        }
        lin(&head.output, &v)
    }

    #[test]
    fn matches_naive_reimplementation() {
        let mut rng = RngState::new(21);
        let mut head = ProjectionHead::new(8, 1, 12, 5, 0.3, 1e-5, &mut rng);
        for b in &mut head.blocks {
            for g in &mut b.norm.gamma {
                *g = 1.0 + 0.3 * rng.normal();
            }
            for v in &mut b.norm.beta {
                *v = 0.1 * rng.normal();
            }
            for v in &mut b.linear.bias {
                *v = 0.1 * rng.normal();
            }
        }
        let x = random_matrix(4, 8, &mut rng);
        let y = head.infer(&x).unwrap();
        for i in 0..4 {
            let naive = naive_forward(&head, x.row(i));
            for (a, b) in y.row(i).iter().zip(&naive) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_linear_squared_norm_gradient_closed_form() {
        // L = |W x + b - y|², dL/dW = 2 (Wx + b - y) xᵀ, dL/db = 2 (Wx + b - y)
        let mut rng = RngState::new(4);
        let head = ProjectionHead::new(3, 0, 0, 2, 0.0, 1e-5, &mut rng);
        let x = random_matrix(1, 3, &mut rng);
        let target = [0.5, -1.0];
        let (out, tape) = head.forward(&x, Mode::Train, &mut rng).unwrap();
        let resid: Vec<f64> = out.row(0).iter().zip(&target).map(|(o, t)| o - t).collect();
        let d_out = Matrix::from_vec(1, 2, resid.iter().map(|r| 2.0 * r).collect()).unwrap();
        let mut grad = head.zeros_like();
        head.backward(&tape, &d_out, &mut grad).unwrap();
        for o in 0..2 {
            assert!((grad.output.bias[o] - 2.0 * resid[o]).abs() < 1e-12);
            for k in 0..3 {
                let expect = 2.0 * resid[o] * x.get(0, k);
                assert!((grad.output.weight[o * 3 + k] - expect).abs() < 1e-12);
            }
        }
    }
}
