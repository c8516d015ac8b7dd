use rand::Rng;

use crate::numeric::Matrix;

/// Variance floor inside BatchNorm normalisation.
pub const BN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    /// `output x input`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self {
            input,
            output,
            weight: (0..input * output).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; output],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub width: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Relu { width: usize },
}

/// Where BatchNorm takes its statistics from: stored buffers, the current
/// batch, or `(1 - w)·running + w·batch`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StatSource {
    Running,
    Batch,
    Blend(f64),
}

impl StatSource {
    fn batch_weight(self) -> f64 {
        match self {
            Self::Running => 0.0,
            Self::Batch => 1.0,
            Self::Blend(w) => w,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Dense { input: Matrix },
    BatchNorm {
        input: Matrix,
        x_hat: Vec<f64>,
        batch_mean: Vec<f64>,
        used_mean: Vec<f64>,
        inv_std: Vec<f64>,
        batch_weight: f64,
    },
    Relu { input: Matrix },
}

type StatUpdate = Option<(Vec<f64>, Vec<f64>)>;

impl Layer {
    /// `(input width, output width)`.
    pub fn extents(&self) -> (usize, usize) {
        match self {
            Layer::Dense(d) => (d.input, d.output),
            Layer::BatchNorm(bn) => (bn.width, bn.width),
            Layer::Relu { width } => (*width, *width),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::BatchNorm(bn) => 2 * bn.width,
            Layer::Relu { .. } => 0,
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Dense(d) => {
                out.extend_from_slice(&d.weight);
                out.extend_from_slice(&d.bias);
            }
            Layer::BatchNorm(bn) => {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
            Layer::Relu { .. } => {}
        }
    }

    /// Copies parameters from the front of `src`; returns how many were read.
    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        match self {
            Layer::Dense(d) => {
                let nw = d.weight.len();
                let nb = d.bias.len();
                d.weight.copy_from_slice(&src[..nw]);
                d.bias.copy_from_slice(&src[nw..nw + nb]);
                nw + nb
            }
            Layer::BatchNorm(bn) => {
                let w = bn.width;
                bn.gamma.copy_from_slice(&src[..w]);
                bn.beta.copy_from_slice(&src[w..2 * w]);
                2 * w
            }
            Layer::Relu { .. } => 0,
        }
    }

    pub(crate) fn forward(
        &self,
        x: &Matrix,
        source: StatSource,
        update: Option<f64>,
    ) -> (Matrix, LayerCache, StatUpdate) {
        let rows = x.rows();
        match self {
            Layer::Dense(d) => {
                let mut out = Vec::with_capacity(rows * d.output);
                for row in x.row_iter() {
                    for o in 0..d.output {
                        let w = &d.weight[o * d.input..(o + 1) * d.input];
                        let dot: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum();
                        out.push(dot + d.bias[o]);
                    }
                }
                (
                    Matrix::from_raw(rows, d.output, out),
                    LayerCache::Dense { input: x.clone() },
                    None,
                )
            }
            Layer::Relu { width } => {
                let out = x.data().iter().map(|&v| v.max(0.0)).collect();
                (
                    Matrix::from_raw(rows, *width, out),
                    LayerCache::Relu { input: x.clone() },
                    None,
                )
            }
            Layer::BatchNorm(bn) => {
                let n = bn.width;
                let b = rows as f64;
                let mut batch_mean = vec![0.0; n];
                for row in x.row_iter() {
                    for (m, v) in batch_mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                batch_mean.iter_mut().for_each(|m| *m /= b);
                let mut batch_var = vec![0.0; n];
                for row in x.row_iter() {
                    for j in 0..n {
                        let d = row[j] - batch_mean[j];
                        batch_var[j] += d * d;
                    }
                }
                batch_var.iter_mut().for_each(|v| *v /= b);

                let w = source.batch_weight();
                let used_mean: Vec<f64> = (0..n)
                    .map(|j| (1.0 - w) * bn.running_mean[j] + w * batch_mean[j])
                    .collect();
                let used_var: Vec<f64> = (0..n)
                    .map(|j| (1.0 - w) * bn.running_var[j] + w * batch_var[j])
                    .collect();
                let inv_std: Vec<f64> = used_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

                let mut x_hat = Vec::with_capacity(rows * n);
                let mut out = Vec::with_capacity(rows * n);
                for row in x.row_iter() {
                    for j in 0..n {
                        let h = (row[j] - used_mean[j]) * inv_std[j];
                        x_hat.push(h);
                        out.push(bn.gamma[j] * h + bn.beta[j]);
                    }
                }

                let upd = update.map(|m| {
                    let mean = (0..n)
                        .map(|j| (1.0 - m) * bn.running_mean[j] + m * batch_mean[j])
                        .collect();
                    let var = (0..n)
                        .map(|j| (1.0 - m) * bn.running_var[j] + m * batch_var[j])
                        .collect();
                    (mean, var)
                });

                (
                    Matrix::from_raw(rows, n, out),
                    LayerCache::BatchNorm {
                        input: x.clone(),
                        x_hat,
                        batch_mean,
                        used_mean,
                        inv_std,
                        batch_weight: w,
                    },
                    upd,
                )
            }
        }
    }

    /// Returns `(d loss / d input, d loss / d params)`.
    pub(crate) fn backward(&self, cache: &LayerCache, g: &Matrix) -> (Matrix, Vec<f64>) {
        let rows = g.rows();
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                let mut gw = vec![0.0; d.weight.len()];
                let mut gb = vec![0.0; d.output];
                let mut gx = vec![0.0; rows * d.input];
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = input.row(r);
                    let gxr = &mut gx[r * d.input..(r + 1) * d.input];
                    for o in 0..d.output {
                        let go = gr[o];
                        gb[o] += go;
                        let w = &d.weight[o * d.input..(o + 1) * d.input];
                        let gwo = &mut gw[o * d.input..(o + 1) * d.input];
                        for i in 0..d.input {
                            gwo[i] += go * xr[i];
                            gxr[i] += go * w[i];
                        }
                    }
                }
                gw.extend(gb);
                (Matrix::from_raw(rows, d.input, gx), gw)
            }
            (Layer::Relu { width }, LayerCache::Relu { input }) => {
                let gx = g
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                (Matrix::from_raw(rows, *width, gx), Vec::new())
            }
            (
                Layer::BatchNorm(bn),
                LayerCache::BatchNorm {
                    input,
                    x_hat,
                    batch_mean,
                    used_mean,
                    inv_std,
                    batch_weight,
                },
            ) => {
                let n = bn.width;
                let b = rows as f64;
                let w = *batch_weight;
                let mut g_gamma = vec![0.0; n];
                let mut g_beta = vec![0.0; n];
                // sums over the batch of dL/dx_hat and dL/dx_hat * (x - used_mean)
                let mut s_dxhat = vec![0.0; n];
                let mut s_dxhat_xc = vec![0.0; n];
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = input.row(r);
                    for j in 0..n {
                        g_gamma[j] += gr[j] * x_hat[r * n + j];
                        g_beta[j] += gr[j];
                        let dxh = gr[j] * bn.gamma[j];
                        s_dxhat[j] += dxh;
                        s_dxhat_xc[j] += dxh * (xr[j] - used_mean[j]);
                    }
                }
                let d_mean: Vec<f64> = (0..n).map(|j| -inv_std[j] * s_dxhat[j]).collect();
                let d_var: Vec<f64> = (0..n)
                    .map(|j| -0.5 * s_dxhat_xc[j] * inv_std[j].powi(3))
                    .collect();
                let mut gx = Vec::with_capacity(rows * n);
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = input.row(r);
                    for j in 0..n {
                        let dxh = gr[j] * bn.gamma[j];
                        gx.push(
                            dxh * inv_std[j]
                                + d_mean[j] * w / b
                                + d_var[j] * w * 2.0 * (xr[j] - batch_mean[j]) / b,
                        );
                    }
                }
                g_gamma.extend(g_beta);
                (Matrix::from_raw(rows, n, gx), g_gamma)
            }
            _ => unreachable!("layer/cache kinds always match"),
        }
    }
}
