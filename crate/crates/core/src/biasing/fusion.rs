//! Forward pass of the multi-head attention biasing layer.
//!
//! Each hotword becomes one context vector (mean of its token embeddings);
//! a learned "no bias" vector is always prepended so the encoder can attend
//! away from every phrase. Encoder frames attend over the context set and
//! the projected result is added back residually.

use serde::{Deserialize, Serialize};

use super::{BiasError, HotwordList, Result};
use crate::num::Real;
use crate::rng::SeededRng;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BiasError::ShapeMismatch(format!(
                "{} values for {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(BiasError::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Uniform in `[-bound, bound]` with Glorot bound `sqrt(6 / (rows + cols))`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| S::lit((2.0 * rng.unit() - 1.0) * bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(BiasError::ShapeMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }
}

/// Weights of the biasing layer.
///
/// `embed`: vocab x d_c token embeddings of the context encoder;
/// `w_query`: d x d, `w_key`/`w_value`: d_c x d, `w_out`: d x d;
/// `no_bias`: the d_c-dimensional "no hotword" context entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextFusionParams<S> {
    pub embed: Matrix<S>,
    pub w_query: Matrix<S>,
    pub w_key: Matrix<S>,
    pub w_value: Matrix<S>,
    pub w_out: Matrix<S>,
    pub no_bias: Vec<S>,
    pub n_heads: usize,
}

impl<S: Real> ContextFusionParams<S> {
    /// Glorot-initialized parameters, deterministic in `seed`.
    pub fn random(vocab: usize, context_dim: usize, model_dim: usize, n_heads: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let params = Self {
            embed: Matrix::glorot(vocab, context_dim, &mut rng),
            w_query: Matrix::glorot(model_dim, model_dim, &mut rng),
            w_key: Matrix::glorot(context_dim, model_dim, &mut rng),
            w_value: Matrix::glorot(context_dim, model_dim, &mut rng),
            w_out: Matrix::glorot(model_dim, model_dim, &mut rng),
            no_bias: Matrix::glorot(1, context_dim, &mut rng).data,
            n_heads,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn model_dim(&self) -> usize {
        self.w_query.rows
    }

    pub fn context_dim(&self) -> usize {
        self.embed.cols
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        let dc = self.context_dim();
        let check = |name: &str, m: &Matrix<S>, r: usize, c: usize| {
            if m.rows == r && m.cols == c {
                Ok(())
            } else {
                Err(BiasError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.rows, m.cols
                )))
            }
        };
        check("w_query", &self.w_query, d, d)?;
        check("w_key", &self.w_key, dc, d)?;
        check("w_value", &self.w_value, dc, d)?;
        check("w_out", &self.w_out, d, d)?;
        if self.no_bias.len() != dc {
            return Err(BiasError::ShapeMismatch(format!("no_bias has {} entries, expected {dc}", self.no_bias.len())));
        }
        if self.n_heads == 0 || d % self.n_heads != 0 {
            return Err(BiasError::ShapeMismatch(format!("model dim {d} not divisible by {} heads", self.n_heads)));
        }
        Ok(())
    }

    /// Context matrix: no-bias row followed by one mean-pooled row per phrase.
    pub fn context_matrix(&self, list: &HotwordList) -> Result<Matrix<S>> {
        let dc = self.context_dim();
        let mut data = self.no_bias.clone();
        for phrase in list.phrases() {
            let mut pooled = vec![S::zero(); dc];
            for &tok in &phrase.tokens {
                if tok as usize >= self.embed.rows {
                    return Err(BiasError::TokenOutOfRange { token: tok, vocab: self.embed.rows });
                }
                for (p, &e) in pooled.iter_mut().zip(self.embed.row(tok as usize)) {
                    *p += e;
                }
            }
            let n = S::lit(phrase.tokens.len() as f64);
            data.extend(pooled.into_iter().map(|x| x / n));
        }
        Matrix::from_vec(list.len() + 1, dc, data)
    }
}

struct Forward<S> {
    output: Matrix<S>,
    weights: Vec<Matrix<S>>,
}

fn forward<S: Real>(hidden: &Matrix<S>, list: &HotwordList, params: &ContextFusionParams<S>) -> Result<Forward<S>> {
    params.validate()?;
    let d = params.model_dim();
    if hidden.cols != d {
        return Err(BiasError::ShapeMismatch(format!("hidden width {} != model dim {d}", hidden.cols)));
    }
    let context = params.context_matrix(list)?;
    let q = hidden.matmul(&params.w_query)?;
    let k = context.matmul(&params.w_key)?;
    let v = context.matmul(&params.w_value)?;
    let frames = hidden.rows;
    let n_ctx = context.rows;
    let dh = d / params.n_heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();

    let mut attended = Matrix::zeros(frames, d);
    let mut weights = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut a = Matrix::zeros(frames, n_ctx);
        for t in 0..frames {
            let qt = &q.row(t)[cols.clone()];
            let scores: Vec<S> = (0..n_ctx)
                .map(|j| {
                    let kj = &k.row(j)[cols.clone()];
                    qt.iter().zip(kj).fold(S::zero(), |acc, (&x, &y)| acc + x * y) * scale
                })
                .collect();
            let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
            let z = exps.iter().fold(S::zero(), |acc, &e| acc + e);
            for (j, e) in exps.into_iter().enumerate() {
                let w = e / z;
                a.data[t * n_ctx + j] = w;
                let vj = &v.row(j)[cols.clone()];
                let dst = &mut attended.data[t * d + h * dh..t * d + (h + 1) * dh];
                for (o, &x) in dst.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
        weights.push(a);
    }
    let projected = attended.matmul(&params.w_out)?;
    let mut output = hidden.clone();
    for (o, &p) in output.data.iter_mut().zip(&projected.data) {
        *o += p;
    }
    Ok(Forward { output, weights })
}

/// `hidden + MHA(hidden W_q, C W_k, C W_v) W_o`. An empty hotword list
/// returns `hidden` unchanged.
pub fn context_fuse<S: Real>(hidden: &Matrix<S>, list: &HotwordList, params: &ContextFusionParams<S>) -> Result<Matrix<S>> {
    if list.is_empty() {
        params.validate()?;
        if hidden.cols != params.model_dim() {
            return Err(BiasError::ShapeMismatch(format!(
                "hidden width {} != model dim {}",
                hidden.cols,
                params.model_dim()
            )));
        }
        return Ok(hidden.clone());
    }
    Ok(forward(hidden, list, params)?.output)
}

/// Per-head attention matrices (frames x (1 + phrases)).
pub fn attention_weights<S: Real>(hidden: &Matrix<S>, list: &HotwordList, params: &ContextFusionParams<S>) -> Result<Vec<Matrix<S>>> {
    Ok(forward(hidden, list, params)?.weights)
}
