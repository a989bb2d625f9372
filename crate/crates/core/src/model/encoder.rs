//! Embedding + position embedding + one multi-head self-attention layer with
//! a residual connection, with its exact backward pass.

use super::tensor::{dot, Matrix};
use super::{EncoderParams, ModelError, ModelParams, TokenVectors, UNK};

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub ids: Vec<usize>,
    pub input: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// One `N × N` row-stochastic matrix per head.
    pub attention: Vec<Matrix>,
    pub mixed: Matrix,
    pub output: TokenVectors,
}

/// Encodes token ids. Ids outside the vocabulary read the unknown-token row.
pub fn encode(ids: &[usize], params: &ModelParams) -> Result<TokenVectors, ModelError> {
    Ok(forward(ids, params)?.output)
}

pub(crate) fn forward(ids: &[usize], params: &ModelParams) -> Result<EncoderCache, ModelError> {
    let cfg = &params.config;
    let enc = &params.encoder;
    if ids.len() > cfg.window {
        return Err(ModelError::SentenceTooLong { len: ids.len(), window: cfg.window });
    }
    let n = ids.len();
    let d = cfg.dim;
    let ids: Vec<usize> = ids.iter().map(|&i| if i < cfg.vocab_size { i } else { UNK }).collect();

    let mut input = Matrix::zeros(n, d);
    for (i, &id) in ids.iter().enumerate() {
        let (e, p) = (enc.embeddings.row(id), enc.positions.row(i));
        for ((x, a), b) in input.row_mut(i).iter_mut().zip(e).zip(p) {
            *x = a + b;
        }
    }
    let query = input.matmul(&enc.query);
    let key = input.matmul(&enc.key);
    let value = input.matmul(&enc.value);

    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut mixed = Matrix::zeros(n, d);
    let mut attention = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let cols = h * hd..(h + 1) * hd;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            let q = &query.row(i)[cols.clone()];
            let row = a.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = scale * dot(q, &key.row(j)[cols.clone()]);
            }
            softmax_in_place(row);
        }
        for i in 0..n {
            for j in 0..n {
                let w = a.get(i, j);
                let v = &value.row(j)[cols.clone()];
                for (m, x) in mixed.row_mut(i)[cols.clone()].iter_mut().zip(v) {
                    *m += w * x;
                }
            }
        }
        attention.push(a);
    }
    let mut output = mixed.matmul(&enc.output);
    output.add_scaled(&input, 1.0);

    Ok(EncoderCache {
        ids,
        input,
        query,
        key,
        value,
        attention,
        mixed,
        output: TokenVectors(output),
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Accumulates encoder parameter gradients for an upstream gradient `d_out`
/// on the token vectors.
pub(crate) fn backward(cache: &EncoderCache, d_out: &Matrix, params: &ModelParams, grad: &mut EncoderParams) {
    let cfg = &params.config;
    let enc = &params.encoder;
    let n = cache.ids.len();
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    // residual path
    let mut d_input = d_out.clone();

    grad.output.add_t_matmul(&cache.mixed, d_out);
    let d_mixed = d_out.matmul_t(&enc.output);

    let mut d_query = Matrix::zeros(n, cfg.dim);
    let mut d_key = Matrix::zeros(n, cfg.dim);
    let mut d_value = Matrix::zeros(n, cfg.dim);
    for (h, a) in cache.attention.iter().enumerate() {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let dm = &d_mixed.row(i)[cols.clone()];
            let mut d_att = vec![0.0; n];
            for (j, da) in d_att.iter_mut().enumerate() {
                *da = dot(dm, &cache.value.row(j)[cols.clone()]);
                let w = a.get(i, j);
                for (dv, g) in d_value.row_mut(j)[cols.clone()].iter_mut().zip(dm) {
                    *dv += w * g;
                }
            }
            let weighted: f64 = (0..n).map(|j| a.get(i, j) * d_att[j]).sum();
            for j in 0..n {
                let ds = scale * a.get(i, j) * (d_att[j] - weighted);
                if ds == 0.0 {
                    continue;
                }
                let k = &cache.key.row(j)[cols.clone()];
                for (dq, kx) in d_query.row_mut(i)[cols.clone()].iter_mut().zip(k) {
                    *dq += ds * kx;
                }
                let q = &cache.query.row(i)[cols.clone()];
                for (dk, qx) in d_key.row_mut(j)[cols.clone()].iter_mut().zip(q) {
                    *dk += ds * qx;
                }
            }
        }
    }

    grad.query.add_t_matmul(&cache.input, &d_query);
    grad.key.add_t_matmul(&cache.input, &d_key);
    grad.value.add_t_matmul(&cache.input, &d_value);
    d_input.add_scaled(&d_query.matmul_t(&enc.query), 1.0);
    d_input.add_scaled(&d_key.matmul_t(&enc.key), 1.0);
    d_input.add_scaled(&d_value.matmul_t(&enc.value), 1.0);

    for (i, &id) in cache.ids.iter().enumerate() {
        let g = d_input.row(i);
        for (e, x) in grad.embeddings.row_mut(id).iter_mut().zip(g) {
            *e += x;
        }
        for (p, x) in grad.positions.row_mut(i).iter_mut().zip(g) {
            *p += x;
        }
    }
}
