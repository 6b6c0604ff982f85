use rand::Rng;

use super::{gemm, glorot_uniform, logistic, orthogonal, Layer, LayerSpec, Mode, Parameterized, Stamp, StampToken, Tensor};
use crate::error::{shape_err, Result};

/// Gated recurrent unit over time-major input `(T, B, in)`, producing `(T, B, hidden)`.
///
/// Gates are packed `[update | reset | candidate]` along the last axis:
///
/// ```text
/// z = σ(x Wz + bxz + h Uz + bhz)
/// r = σ(x Wr + bxr + h Ur + bhr)
/// n = tanh(x Wn + bxn + r ⊙ (h Un + bhn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
///
/// The initial state is zero.
#[derive(Clone, Debug)]
pub struct Gru {
    pub(crate) w: Tensor,
    pub(crate) u: Tensor,
    pub(crate) bx: Tensor,
    pub(crate) bh: Tensor,
    stamp: Stamp,
}

pub struct GruCache {
    input: Tensor,
    /// States `h_0 .. h_T`, each `(B, H)`.
    states: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `h Un + bhn` for every step.
    hn: Vec<f64>,
    steps: usize,
    batch: usize,
    token: StampToken,
}

impl Gru {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(rng, &[input, 3 * hidden], input, 3 * hidden);
        // one orthogonal block per gate, laid side by side
        let blocks: Vec<Vec<f64>> = (0..3).map(|_| orthogonal(rng, hidden)).collect();
        let mut u = vec![0.0; hidden * 3 * hidden];
        for i in 0..hidden {
            for (g, block) in blocks.iter().enumerate() {
                u[i * 3 * hidden + g * hidden..i * 3 * hidden + (g + 1) * hidden]
                    .copy_from_slice(&block[i * hidden..(i + 1) * hidden]);
            }
        }
        Self {
            w,
            u: Tensor::new(vec![hidden, 3 * hidden], u).unwrap(),
            bx: Tensor::zeros(&[3 * hidden]),
            bh: Tensor::zeros(&[3 * hidden]),
            stamp: Stamp::new(),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, 3 * hidden]),
            u: Tensor::zeros(&[hidden, 3 * hidden]),
            bx: Tensor::zeros(&[3 * hidden]),
            bh: Tensor::zeros(&[3 * hidden]),
            stamp: Stamp::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[0]
    }
}

impl Parameterized for Gru {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.u, &self.bx, &self.bh]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp.bump();
        vec![&mut self.w, &mut self.u, &mut self.bx, &mut self.bh]
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["input_kernel", "recurrent_kernel", "input_bias", "recurrent_bias"]
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Gru {
            input: self.input_dim(),
            hidden: self.hidden(),
        }
    }
}

impl Layer for Gru {
    type Cache = GruCache;

    fn forward(&self, input: &Tensor, _mode: Mode) -> Result<(Tensor, GruCache)> {
        let (din, h) = (self.input_dim(), self.hidden());
        let shape = input.shape();
        if shape.len() != 3 || shape[2] != din {
            return Err(shape_err(format!("GRU expects (T, B, {din}), got {shape:?}")));
        }
        let (steps, batch) = (shape[0], shape[1]);
        let h3 = 3 * h;
        let rows = steps * batch;

        let mut gx = Vec::with_capacity(rows * h3);
        for _ in 0..rows {
            gx.extend_from_slice(self.bx.data());
        }
        gemm(rows, din, h3, 1.0, input.data(), false, self.w.data(), false, 1.0, &mut gx);

        let mut states = vec![0.0; (steps + 1) * batch * h];
        let mut z = vec![0.0; rows * h];
        let mut r = vec![0.0; rows * h];
        let mut n = vec![0.0; rows * h];
        let mut hn = vec![0.0; rows * h];
        let mut gh = vec![0.0; batch * h3];
        let bh = self.bh.data();
        for t in 0..steps {
            let (prev, next) = states.split_at_mut((t + 1) * batch * h);
            let prev = &prev[t * batch * h..];
            let next = &mut next[..batch * h];
            for row in gh.chunks_exact_mut(h3) {
                row.copy_from_slice(bh);
            }
            gemm(batch, h, h3, 1.0, prev, false, self.u.data(), false, 1.0, &mut gh);
            for b in 0..batch {
                let gxr = &gx[(t * batch + b) * h3..(t * batch + b + 1) * h3];
                let ghr = &gh[b * h3..(b + 1) * h3];
                let o = (t * batch + b) * h;
                for j in 0..h {
                    let zj = logistic(gxr[j] + ghr[j]);
                    let rj = logistic(gxr[h + j] + ghr[h + j]);
                    let nj = (gxr[2 * h + j] + rj * ghr[2 * h + j]).tanh();
                    z[o + j] = zj;
                    r[o + j] = rj;
                    n[o + j] = nj;
                    hn[o + j] = ghr[2 * h + j];
                    next[b * h + j] = (1.0 - zj) * nj + zj * prev[b * h + j];
                }
            }
        }
        let out = Tensor::new(vec![steps, batch, h], states[batch * h..].to_vec())?;
        Ok((
            out,
            GruCache {
                input: input.clone(),
                states,
                z,
                r,
                n,
                hn,
                steps,
                batch,
                token: self.stamp.token(),
            },
        ))
    }

    fn backward(&self, grad_out: &Tensor, c: &GruCache) -> Result<(Tensor, Vec<Tensor>)> {
        self.stamp.check(c.token)?;
        let (din, h) = (self.input_dim(), self.hidden());
        let (steps, batch) = (c.steps, c.batch);
        let h3 = 3 * h;
        if grad_out.len() != steps * batch * h {
            return Err(shape_err(format!("GRU gradient {:?} for ({steps}, {batch}, {h})", grad_out.shape())));
        }
        let g = grad_out.data();
        let mut dgx = vec![0.0; steps * batch * h3];
        let mut du = vec![0.0; h * h3];
        let mut dbh = vec![0.0; h3];
        let mut dh_next = vec![0.0; batch * h];
        let mut dgh = vec![0.0; batch * h3];
        let mut dh = vec![0.0; batch * h];
        for t in (0..steps).rev() {
            let prev = &c.states[t * batch * h..(t + 1) * batch * h];
            for b in 0..batch {
                let o = (t * batch + b) * h;
                for j in 0..h {
                    let d = g[o + j] + dh_next[b * h + j];
                    let (zj, rj, nj) = (c.z[o + j], c.r[o + j], c.n[o + j]);
                    let dz = d * (prev[b * h + j] - nj);
                    let dn = d * (1.0 - zj);
                    let dan = dn * (1.0 - nj * nj);
                    let dr = dan * c.hn[o + j];
                    let daz = dz * zj * (1.0 - zj);
                    let dar = dr * rj * (1.0 - rj);
                    let gxo = (t * batch + b) * h3;
                    dgx[gxo + j] = daz;
                    dgx[gxo + h + j] = dar;
                    dgx[gxo + 2 * h + j] = dan;
                    dgh[b * h3 + j] = daz;
                    dgh[b * h3 + h + j] = dar;
                    dgh[b * h3 + 2 * h + j] = dan * rj;
                    dh[b * h + j] = d * zj;
                }
            }
            gemm(h, batch, h3, 1.0, prev, true, &dgh, false, 1.0, &mut du);
            for row in dgh.chunks_exact(h3) {
                for (a, v) in dbh.iter_mut().zip(row) {
                    *a += v;
                }
            }
            gemm(batch, h3, h, 1.0, &dgh, false, self.u.data(), true, 1.0, &mut dh);
            std::mem::swap(&mut dh_next, &mut dh);
        }
        let rows = steps * batch;
        let mut dx = vec![0.0; rows * din];
        gemm(rows, h3, din, 1.0, &dgx, false, self.w.data(), true, 0.0, &mut dx);
        let mut dw = vec![0.0; din * h3];
        gemm(din, rows, h3, 1.0, c.input.data(), true, &dgx, false, 0.0, &mut dw);
        let mut dbx = vec![0.0; h3];
        for row in dgx.chunks_exact(h3) {
            for (a, v) in dbx.iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok((
            Tensor::new(c.input.shape().to_vec(), dx)?,
            vec![
                Tensor::new(vec![din, h3], dw)?,
                Tensor::new(vec![h, h3], du)?,
                Tensor::new(vec![h3], dbx)?,
                Tensor::new(vec![h3], dbh)?,
            ],
        ))
    }
}
