//! Conditional RBM parameters, energies and the two conditional distributions.
//!
//! Visible units are the I alternatives (one-hot), hidden units are J binary
//! latent variables, and the K explanatory variables act as clamped context:
//! they shift both conditionals but are never reconstructed.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numeric::{sigmoid, softmax_in_place, softplus};

/// Number of free parameters: weights I·J + K·I + K·J plus biases J + I.
pub const fn param_count(i: usize, j: usize, k: usize) -> usize {
    i * j + k * i + k * j + j + i
}

/// Every estimated quantity of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmParams {
    /// Choice–latent weights, I×J.
    pub choice_hidden: Array2<f64>,
    /// Choice–context weights, I×K.
    pub choice_context: Array2<f64>,
    /// Latent–context weights, J×K.
    pub hidden_context: Array2<f64>,
    /// Visible (alternative) biases, length I.
    pub choice_bias: Array1<f64>,
    /// Hidden biases, length J.
    pub hidden_bias: Array1<f64>,
}

/// The five parameter blocks, in the order used for flattening and display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    ChoiceContext,
    ChoiceHidden,
    ChoiceBias,
    HiddenContext,
    HiddenBias,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::ChoiceContext,
        Block::ChoiceHidden,
        Block::ChoiceBias,
        Block::HiddenContext,
        Block::HiddenBias,
    ];

    /// Conventional single-letter symbol.
    pub fn symbol(self) -> &'static str {
        match self {
            Block::ChoiceContext => "B",
            Block::ChoiceHidden => "D",
            Block::ChoiceBias => "c",
            Block::HiddenContext => "A",
            Block::HiddenBias => "d",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.symbol() == s)
    }
}

impl CrbmParams {
    pub fn zeros(n_alternatives: usize, n_hidden: usize, n_features: usize) -> Self {
        CrbmParams {
            choice_hidden: Array2::zeros((n_alternatives, n_hidden)),
            choice_context: Array2::zeros((n_alternatives, n_features)),
            hidden_context: Array2::zeros((n_hidden, n_features)),
            choice_bias: Array1::zeros(n_alternatives),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    pub fn n_alternatives(&self) -> usize {
        self.choice_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn n_features(&self) -> usize {
        self.choice_context.ncols()
    }

    pub fn param_count(&self) -> usize {
        param_count(self.n_alternatives(), self.n_hidden(), self.n_features())
    }

    /// Checks block shapes against each other and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (i, j, k) = (self.n_alternatives(), self.n_hidden(), self.n_features());
        if i < 2 {
            return Err(Error::invalid("a choice model needs at least two alternatives"));
        }
        check_dim("D rows", i, self.choice_hidden.nrows())?;
        check_dim("D columns", j, self.choice_hidden.ncols())?;
        check_dim("B rows", i, self.choice_context.nrows())?;
        check_dim("A rows", j, self.hidden_context.nrows())?;
        check_dim("A columns", k, self.hidden_context.ncols())?;
        if let Some(b) = self.first_non_finite() {
            return Err(Error::invalid(format!("non-finite entry in block {}", b.symbol())));
        }
        Ok(())
    }

    pub(crate) fn first_non_finite(&self) -> Option<Block> {
        Block::ALL
            .into_iter()
            .find(|&b| !self.block_values(b).iter().all(|v| v.is_finite()))
    }

    /// Block contents as a row-major matrix (vectors become single columns).
    pub fn block_matrix(&self, block: Block) -> Array2<f64> {
        match block {
            Block::ChoiceContext => self.choice_context.clone(),
            Block::ChoiceHidden => self.choice_hidden.clone(),
            Block::HiddenContext => self.hidden_context.clone(),
            Block::ChoiceBias => self.choice_bias.clone().insert_axis(ndarray::Axis(1)),
            Block::HiddenBias => self.hidden_bias.clone().insert_axis(ndarray::Axis(1)),
        }
    }

    pub(crate) fn block_values(&self, block: Block) -> &[f64] {
        let s = match block {
            Block::ChoiceContext => self.choice_context.as_slice(),
            Block::ChoiceHidden => self.choice_hidden.as_slice(),
            Block::HiddenContext => self.hidden_context.as_slice(),
            Block::ChoiceBias => self.choice_bias.as_slice(),
            Block::HiddenBias => self.hidden_bias.as_slice(),
        };
        s.expect("parameter blocks are contiguous")
    }

    pub(crate) fn block_values_mut(&mut self, block: Block) -> &mut [f64] {
        let s = match block {
            Block::ChoiceContext => self.choice_context.as_slice_mut(),
            Block::ChoiceHidden => self.choice_hidden.as_slice_mut(),
            Block::HiddenContext => self.hidden_context.as_slice_mut(),
            Block::ChoiceBias => self.choice_bias.as_slice_mut(),
            Block::HiddenBias => self.hidden_bias.as_slice_mut(),
        };
        s.expect("parameter blocks are contiguous")
    }

    /// All entries in [`Block::ALL`] order, each block row-major.
    pub fn flatten(&self) -> Vec<f64> {
        Block::ALL
            .into_iter()
            .flat_map(|b| self.block_values(b).iter().copied())
            .collect()
    }

    /// Overwrites every entry from a vector laid out as by [`CrbmParams::flatten`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.param_count(), values.len())?;
        let mut offset = 0;
        for b in Block::ALL {
            let dst = self.block_values_mut(b);
            dst.copy_from_slice(&values[offset..offset + dst.len()]);
            offset += dst.len();
        }
        Ok(())
    }

    /// Offset of each block inside the flat layout.
    pub fn block_offset(&self, block: Block) -> usize {
        Block::ALL
            .into_iter()
            .take_while(|&b| b != block)
            .map(|b| self.block_values(b).len())
            .sum()
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &CrbmParams, scale: f64) {
        for b in Block::ALL {
            for (a, &o) in self.block_values_mut(b).iter_mut().zip(other.block_values(b)) {
                *a += scale * o;
            }
        }
    }

    /// Largest absolute entry over all blocks.
    pub fn max_abs(&self) -> f64 {
        Block::ALL
            .into_iter()
            .flat_map(|b| self.block_values(b).iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_choice(&self, choice: usize) -> Result<()> {
        if choice < self.n_alternatives() {
            Ok(())
        } else {
            Err(Error::Dimension {
                context: "choice index",
                expected: self.n_alternatives(),
                actual: choice,
            })
        }
    }

    /// `−c_y − h·d − Σ_j h_j D_yj` for the one-hot visible vector at `choice`.
    pub fn energy(&self, choice: usize, h: &[f64]) -> Result<f64> {
        self.check_choice(choice)?;
        check_dim("hidden state", self.n_hidden(), h.len())?;
        let mut e = -self.choice_bias[choice];
        for (j, &hj) in h.iter().enumerate() {
            e -= hj * self.hidden_bias[j];
            e -= hj * self.choice_hidden[[choice, j]];
        }
        Ok(e)
    }

    /// `−c_y − Σ_j softplus(D_yj + d_j)`: the energy with hidden units summed out.
    pub fn free_energy(&self, choice: usize) -> Result<f64> {
        self.check_choice(choice)?;
        let mut f = -self.choice_bias[choice];
        for j in 0..self.n_hidden() {
            f -= softplus(self.choice_hidden[[choice, j]] + self.hidden_bias[j]);
        }
        Ok(f)
    }

    /// Free energy with the context `x` clamped: adds `−(Bx)_y` and shifts every
    /// hidden unit's input by `(Ax)_j`.
    pub fn conditional_free_energy(&self, choice: usize, x: &[f64]) -> Result<f64> {
        self.check_choice(choice)?;
        let ctx = RowContext::new(self, x)?;
        let mut f = -ctx.choice_base[choice];
        for j in 0..self.n_hidden() {
            f -= softplus(ctx.hidden_base[j] + self.choice_hidden[[choice, j]]);
        }
        Ok(f)
    }

    /// `p(h_j = 1 | y, x) = σ(d_j + D_yj + (Ax)_j)` for every hidden unit.
    pub fn p_h_given_yx(&self, choice: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_choice(choice)?;
        let ctx = RowContext::new(self, x)?;
        let mut out = vec![0.0; self.n_hidden()];
        ctx.hidden_probs(self, choice, &mut out);
        Ok(out)
    }

    /// `p(y | h, x)`: softmax over `c + Bx + Dh`.
    pub fn p_y_given_hx(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim("hidden state", self.n_hidden(), h.len())?;
        let ctx = RowContext::new(self, x)?;
        let mut out = vec![0.0; self.n_alternatives()];
        ctx.choice_probs(self, h, &mut out);
        Ok(out)
    }

    /// One Bernoulli draw per hidden unit.
    pub fn sample_h<R: Rng + ?Sized>(&self, choice: usize, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut h = self.p_h_given_yx(choice, x)?;
        bernoulli_in_place(&mut h, rng);
        Ok(h)
    }

    /// One categorical draw of the alternative index.
    pub fn sample_y<R: Rng + ?Sized>(&self, h: &[f64], x: &[f64], rng: &mut R) -> Result<usize> {
        let p = self.p_y_given_hx(h, x)?;
        Ok(categorical(&p, rng))
    }
}

/// Context-dependent parts of both conditionals for one row: `c + Bx` and `d + Ax`.
#[derive(Debug, Clone)]
pub(crate) struct RowContext {
    pub choice_base: Vec<f64>,
    pub hidden_base: Vec<f64>,
}

impl RowContext {
    pub fn new(p: &CrbmParams, x: &[f64]) -> Result<Self> {
        check_dim("context vector", p.n_features(), x.len())?;
        Ok(Self::new_unchecked(p, x))
    }

    pub fn new_unchecked(p: &CrbmParams, x: &[f64]) -> Self {
        let affine = |bias: &Array1<f64>, w: &Array2<f64>| -> Vec<f64> {
            w.outer_iter()
                .zip(bias.iter())
                .map(|(row, &b)| {
                    let mut s = b;
                    for (wk, xk) in row.iter().zip(x) {
                        s += wk * xk;
                    }
                    s
                })
                .collect()
        };
        RowContext {
            choice_base: affine(&p.choice_bias, &p.choice_context),
            hidden_base: affine(&p.hidden_bias, &p.hidden_context),
        }
    }

    pub fn hidden_probs(&self, p: &CrbmParams, choice: usize, out: &mut [f64]) {
        let d_row = p.choice_hidden.row(choice);
        for ((o, &base), &w) in out.iter_mut().zip(&self.hidden_base).zip(d_row.iter()) {
            *o = sigmoid(base + w);
        }
    }

    pub fn choice_probs(&self, p: &CrbmParams, h: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.choice_base[i];
            for (&w, &hj) in p.choice_hidden.row(i).iter().zip(h) {
                s += w * hj;
            }
            *o = s;
        }
        softmax_in_place(out);
    }

    /// Mean-field hidden activation with the choice unknown: `σ(d + Ax)`.
    pub fn mean_field_hidden(&self) -> Vec<f64> {
        self.hidden_base.iter().map(|&z| sigmoid(z)).collect()
    }
}

pub(crate) fn bernoulli_in_place<R: Rng + ?Sized>(probs: &mut [f64], rng: &mut R) {
    for p in probs.iter_mut() {
        *p = if rng.random::<f64>() < *p { 1.0 } else { 0.0 };
    }
}

pub(crate) fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1; take the last alternative with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
