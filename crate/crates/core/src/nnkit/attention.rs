use rand::Rng;

use super::{gemm, glorot_uniform, Layer, LayerSpec, Mode, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Result};

/// Multi-head scaled dot-product self-attention over `(N, L, D)`.
///
/// Each of the `N` sequences attends only within itself. With `causal`
/// set, position `i` sees positions `j <= i`.
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub(crate) wq: Tensor,
    pub(crate) bq: Tensor,
    pub(crate) wk: Tensor,
    pub(crate) bk: Tensor,
    pub(crate) wv: Tensor,
    pub(crate) bv: Tensor,
    pub(crate) wo: Tensor,
    pub(crate) bo: Tensor,
    heads: usize,
    causal: bool,
    stamp: Stamp,
}

pub struct AttentionCache {
    input: Tensor,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights `(N, heads, L, L)`, zero above the diagonal when causal.
    attn: Vec<f64>,
    mixed: Vec<f64>,
    token: StampToken,
}

fn project(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(rows, din, dout, 1.0, x, false, w.data(), false, 1.0, &mut out);
    out
}

fn col_sums(g: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for row in g.chunks_exact(d) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

impl MultiHeadSelfAttention {
    pub fn new(dim: usize, heads: usize, causal: bool, rng: &mut impl Rng) -> Result<Self> {
        LayerSpec::MultiHeadSelfAttention { dim, heads, causal }.validate()?;
        let mut w = || glorot_uniform(rng, &[dim, dim], dim, dim);
        let (wq, wk, wv, wo) = (w(), w(), w(), w());
        let b = || Tensor::zeros(&[dim]);
        Ok(Self {
            wq,
            bq: b(),
            wk,
            bk: b(),
            wv,
            bv: b(),
            wo,
            bo: b(),
            heads,
            causal,
            stamp: Stamp::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    fn visible(&self, i: usize, len: usize) -> usize {
        if self.causal {
            i + 1
        } else {
            len
        }
    }
}

impl Parameterized for MultiHeadSelfAttention {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["query", "query_bias", "key", "key_bias", "value", "value_bias", "output", "output_bias"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::MultiHeadSelfAttention {
            dim: self.dim(),
            heads: self.heads,
            causal: self.causal,
        }
    }
}

impl Layer for MultiHeadSelfAttention {
    type Cache = AttentionCache;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, AttentionCache)> {
        let d = self.dim();
        let shape = input.shape();
        if shape.len() != 3 || shape[2] != d {
            return Err(shape_err(format!("attention expects (N, L, {d}), got {shape:?}")));
        }
        let (n, len) = (shape[0], shape[1]);
        let rows = n * len;
        let x = input.data();
        let q = project(x, rows, &self.wq, &self.bq);
        let k = project(x, rows, &self.wk, &self.bk);
        let v = project(x, rows, &self.wv, &self.bv);
        let (h, dh) = (self.heads, d / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; n * h * len * len];
        let mut mixed = vec![0.0; rows * d];
        let mut scores = vec![0.0; len];
        for s in 0..n {
            for head in 0..h {
                let off = head * dh;
                for i in 0..len {
                    let qi = &q[(s * len + i) * d + off..][..dh];
                    let vis = self.visible(i, len);
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores[..vis].iter_mut().enumerate() {
                        let kj = &k[(s * len + j) * d + off..][..dh];
                        *sc = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*sc);
                    }
                    let mut z = 0.0;
                    for sc in &mut scores[..vis] {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let arow = &mut attn[((s * h + head) * len + i) * len..][..len];
                    let out = &mut mixed[(s * len + i) * d + off..][..dh];
                    for j in 0..vis {
                        let a = scores[j] / z;
                        arow[j] = a;
                        let vj = &v[(s * len + j) * d + off..][..dh];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += a * vv;
                        }
                    }
                }
            }
        }
        let y = project(&mixed, rows, &self.wo, &self.bo);
        Ok((
            Tensor::new(shape.to_vec(), y)?,
            AttentionCache {
                input: input.clone(),
                q,
                k,
                v,
                attn,
                mixed,
                token: self.stamp.token(),
            },
        ))
    }

    fn backward(&self, grad_out: &Tensor, c: &AttentionCache) -> Result<(Tensor, Vec<Tensor>)> {
        self.stamp.check(c.token)?;
        let shape = c.input.shape();
        if grad_out.shape() != shape {
            return Err(shape_err(format!("attention gradient {:?} for input {shape:?}", grad_out.shape())));
        }
        let d = self.dim();
        let (n, len) = (shape[0], shape[1]);
        let rows = n * len;
        let (h, dh) = (self.heads, d / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let gy = grad_out.data();

        let mut gwo = vec![0.0; d * d];
        gemm(d, rows, d, 1.0, &c.mixed, true, gy, false, 0.0, &mut gwo);
        let gbo = col_sums(gy, d);
        let mut gmix = vec![0.0; rows * d];
        gemm(rows, d, d, 1.0, gy, false, self.wo.data(), true, 0.0, &mut gmix);

        let mut gq = vec![0.0; rows * d];
        let mut gk = vec![0.0; rows * d];
        let mut gv = vec![0.0; rows * d];
        let mut ga = vec![0.0; len];
        for s in 0..n {
            for head in 0..h {
                let off = head * dh;
                for i in 0..len {
                    let vis = self.visible(i, len);
                    let arow = &c.attn[((s * h + head) * len + i) * len..][..len];
                    let go = &gmix[(s * len + i) * d + off..][..dh];
                    let mut dot = 0.0;
                    for j in 0..vis {
                        let vj = &c.v[(s * len + j) * d + off..][..dh];
                        ga[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dot += arow[j] * ga[j];
                        let gvj = &mut gv[(s * len + j) * d + off..][..dh];
                        for (g, o) in gvj.iter_mut().zip(go) {
                            *g += arow[j] * o;
                        }
                    }
                    let qi = (s * len + i) * d + off;
                    for j in 0..vis {
                        let gs = arow[j] * (ga[j] - dot) * scale;
                        if gs == 0.0 {
                            continue;
                        }
                        let kj = (s * len + j) * d + off;
                        for e in 0..dh {
                            gq[qi + e] += gs * c.k[kj + e];
                            gk[kj + e] += gs * c.q[qi + e];
                        }
                    }
                }
            }
        }

        let x = c.input.data();
        let mut gx = vec![0.0; rows * d];
        let mut grads = Vec::with_capacity(8);
        for (g, w) in [(&gq, &self.wq), (&gk, &self.wk), (&gv, &self.wv)] {
            gemm(rows, d, d, 1.0, g, false, w.data(), true, 1.0, &mut gx);
            let mut gw = vec![0.0; d * d];
            gemm(d, rows, d, 1.0, x, true, g, false, 0.0, &mut gw);
            grads.push(Tensor::new(vec![d, d], gw)?);
            grads.push(Tensor::new(vec![d], col_sums(g, d))?);
        }
        grads.push(Tensor::new(vec![d, d], gwo)?);
        grads.push(Tensor::new(vec![d], gbo)?);
        Ok((Tensor::new(shape.to_vec(), gx)?, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{check_layer, probe_values};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn causal_prefix_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let att = MultiHeadSelfAttention::new(8, 2, true, &mut rng).unwrap();
        let (len, d) = (6, 8);
        let a = Tensor::new(vec![2, len, d], probe_values(2 * len * d, 1)).unwrap();
        for t in 0..len - 1 {
            let mut b = a.clone();
            for e in 0..d {
                b.data_mut()[(len + t + 1) * d + e] += 0.7;
            }
            let (ya, _) = att.forward(&a, Mode::Infer).unwrap();
            let (yb, _) = att.forward(&b, Mode::Infer).unwrap();
            assert_eq!(&ya.data()[..(len + t + 1) * d], &yb.data()[..(len + t + 1) * d]);
            assert_ne!(&ya.data()[(len + t + 1) * d..], &yb.data()[(len + t + 1) * d..]);
        }
    }

    #[test]
    fn noncausal_sees_the_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let att = MultiHeadSelfAttention::new(4, 1, false, &mut rng).unwrap();
        let a = Tensor::new(vec![1, 3, 4], probe_values(12, 2)).unwrap();
        let mut b = a.clone();
        b.data_mut()[11] += 1.0;
        let (ya, _) = att.forward(&a, Mode::Infer).unwrap();
        let (yb, _) = att.forward(&b, Mode::Infer).unwrap();
        assert_ne!(&ya.data()[..4], &yb.data()[..4]);
    }

    #[test]
    fn finite_differences() {
        for causal in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut att = MultiHeadSelfAttention::new(6, 3, causal, &mut rng).unwrap();
            for t in att.params_mut() {
                if t.shape().len() == 1 {
                    for (i, v) in t.data_mut().iter_mut().enumerate() {
                        *v = 0.05 * (i as f64).cos();
                    }
                }
            }
            let x = Tensor::new(vec![2, 4, 6], probe_values(48, 3)).unwrap();
            assert!(check_layer(&mut att, &x, Mode::Infer, 1e-5) < 1e-4);
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadSelfAttention::new(6, 4, true, &mut rng).is_err());
    }
}
