use rand::Rng;

use super::{check_len, gemm, glorot_uniform, sigmoid, Grads, NumericsError, Parameters, Tensor};

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(Wz·[x; h] + bz)
/// r  = σ(Wr·[x; h] + br)
/// h̃ = tanh(Wc·[x; r∘h] + bc)
/// h' = (1 − z)∘h + z∘h̃
/// ```
///
/// Gate matrices are `[hidden, input + hidden]`. A hidden size of zero is
/// allowed and yields an empty state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    input_dim: usize,
    hidden_dim: usize,
    wz: Tensor,
    bz: Tensor,
    wr: Tensor,
    br: Tensor,
    wc: Tensor,
    bc: Tensor,
}

/// Values saved by [`GruCell::step_batch`] for [`GruCell::backward_step`].
#[derive(Debug, Clone)]
pub struct GruCache {
    batch: usize,
    xh: Vec<f64>,
    xrh: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    h_new: Vec<f64>,
}

impl GruCache {
    pub fn hidden(&self) -> &[f64] {
        &self.h_new
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let cols = input_dim + hidden_dim;
        let mut gate = || glorot_uniform(vec![hidden_dim, cols], cols, hidden_dim, rng);
        let (wz, wr, wc) = (gate(), gate(), gate());
        Self {
            input_dim,
            hidden_dim,
            wz,
            bz: Tensor::zeros(vec![hidden_dim]),
            wr,
            br: Tensor::zeros(vec![hidden_dim]),
            wc,
            bc: Tensor::zeros(vec![hidden_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// One recurrence step for a single sample.
    pub fn step(&self, input: &[f64], hidden: &[f64]) -> Result<Vec<f64>, NumericsError> {
        Ok(self.step_batch(input, hidden, 1)?.h_new)
    }

    pub fn step_batch(
        &self,
        inputs: &[f64],
        hidden: &[f64],
        batch: usize,
    ) -> Result<GruCache, NumericsError> {
        let (ni, nh) = (self.input_dim, self.hidden_dim);
        let cols = ni + nh;
        check_len("gru input", batch * ni, inputs.len())?;
        check_len("gru hidden", batch * nh, hidden.len())?;

        let mut xh = vec![0.0; batch * cols];
        for b in 0..batch {
            xh[b * cols..b * cols + ni].copy_from_slice(&inputs[b * ni..(b + 1) * ni]);
            xh[b * cols + ni..(b + 1) * cols].copy_from_slice(&hidden[b * nh..(b + 1) * nh]);
        }

        let z = self.gate(&xh, batch, &self.wz, &self.bz, sigmoid);
        let r = self.gate(&xh, batch, &self.wr, &self.br, sigmoid);

        let mut xrh = xh.clone();
        for b in 0..batch {
            for j in 0..nh {
                xrh[b * cols + ni + j] *= r[b * nh + j];
            }
        }
        let c = self.gate(&xrh, batch, &self.wc, &self.bc, f64::tanh);

        let h_new: Vec<f64> = (0..batch * nh)
            .map(|k| (1.0 - z[k]) * hidden[k] + z[k] * c[k])
            .collect();
        if h_new.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                context: "gru step",
            });
        }
        Ok(GruCache {
            batch,
            xh,
            xrh,
            h_prev: hidden.to_vec(),
            z,
            r,
            c,
            h_new,
        })
    }

    fn gate(
        &self,
        x: &[f64],
        batch: usize,
        w: &Tensor,
        b: &Tensor,
        f: impl Fn(f64) -> f64,
    ) -> Vec<f64> {
        let nh = self.hidden_dim;
        let mut out = vec![0.0; batch * nh];
        if nh > 0 {
            for row in out.chunks_exact_mut(nh) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(
            batch,
            self.input_dim + nh,
            nh,
            1.0,
            x,
            false,
            w.data(),
            true,
            1.0,
            &mut out,
        );
        out.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Backpropagates `dh_new` through one cached step. Parameter gradients
    /// accumulate into `grads`; returns `(d input, d previous hidden)`.
    pub fn backward_step(
        &self,
        cache: &GruCache,
        dh_new: &[f64],
        grads: &mut Grads,
    ) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        let (ni, nh, batch) = (self.input_dim, self.hidden_dim, cache.batch);
        let cols = ni + nh;
        check_len("gru upstream gradient", batch * nh, dh_new.len())?;
        check_len("gru gradient buffers", 6, grads.tensors.len())?;

        let n = batch * nh;
        let mut dh_prev = vec![0.0; n];
        let mut da_z = vec![0.0; n];
        let mut da_c = vec![0.0; n];
        for k in 0..n {
            let (z, c, h) = (cache.z[k], cache.c[k], cache.h_prev[k]);
            let g = dh_new[k];
            dh_prev[k] = g * (1.0 - z);
            da_z[k] = g * (c - h) * z * (1.0 - z);
            da_c[k] = g * z * (1.0 - c * c);
        }

        let mut dxrh = vec![0.0; batch * cols];
        accumulate_gate(&mut grads.tensors[4..6], &da_c, &cache.xrh, batch, nh, cols);
        gemm(
            batch,
            nh,
            cols,
            1.0,
            &da_c,
            false,
            self.wc.data(),
            false,
            0.0,
            &mut dxrh,
        );

        let mut da_r = vec![0.0; n];
        let mut dx = vec![0.0; batch * ni];
        for b in 0..batch {
            dx[b * ni..(b + 1) * ni].copy_from_slice(&dxrh[b * cols..b * cols + ni]);
            for j in 0..nh {
                let k = b * nh + j;
                let d_rh = dxrh[b * cols + ni + j];
                let r = cache.r[k];
                da_r[k] = d_rh * cache.h_prev[k] * r * (1.0 - r);
                dh_prev[k] += d_rh * r;
            }
        }

        let mut dxh = vec![0.0; batch * cols];
        accumulate_gate(&mut grads.tensors[0..2], &da_z, &cache.xh, batch, nh, cols);
        gemm(
            batch,
            nh,
            cols,
            1.0,
            &da_z,
            false,
            self.wz.data(),
            false,
            0.0,
            &mut dxh,
        );
        accumulate_gate(&mut grads.tensors[2..4], &da_r, &cache.xh, batch, nh, cols);
        gemm(
            batch,
            nh,
            cols,
            1.0,
            &da_r,
            false,
            self.wr.data(),
            false,
            1.0,
            &mut dxh,
        );

        for b in 0..batch {
            for i in 0..ni {
                dx[b * ni + i] += dxh[b * cols + i];
            }
            for j in 0..nh {
                dh_prev[b * nh + j] += dxh[b * cols + ni + j];
            }
        }
        Ok((dx, dh_prev))
    }
}

fn accumulate_gate(
    pair: &mut [Tensor],
    da: &[f64],
    x: &[f64],
    batch: usize,
    nh: usize,
    cols: usize,
) {
    let (w, b) = pair.split_at_mut(1);
    gemm(
        nh,
        batch,
        cols,
        1.0,
        da,
        true,
        x,
        false,
        1.0,
        w[0].data_mut(),
    );
    if nh == 0 {
        return;
    }
    let db = b[0].data_mut();
    for row in da.chunks_exact(nh) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

impl Parameters for GruCell {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.wz, &self.bz, &self.wr, &self.br, &self.wc, &self.bc]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.wz,
            &mut self.bz,
            &mut self.wr,
            &mut self.br,
            &mut self.wc,
            &mut self.bc,
        ]
    }
}
