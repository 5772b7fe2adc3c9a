//! Batched LSTM forward pass with caches, and its exact reverse pass.
//!
//! All per-time-step tensors are stored time-major: row `t·B + b` holds time
//! step `t` of batch item `b`, so the rows of one time step are contiguous.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttitudeCondition, DriverWeights, Mode, NormStats, Tensors};
use crate::error::{check_dim, Error, Result};

/// Inverted-dropout mask: each entry is `1/(1−p)` with probability `1−p`, else 0.
pub fn dropout_mask(rng: &mut ChaCha8Rng, dim: (usize, usize), p: f64) -> Array2<f64> {
    let keep_scale = 1.0 / (1.0 - p);
    Array2::from_shape_fn(dim, |_| {
        if rng.random::<f64>() >= p {
            keep_scale
        } else {
            0.0
        }
    })
}

/// Equal-length sequences stacked time-major.
#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub t_len: usize,
    pub size: usize,
    /// `T·B × input_dim`
    pub x: Array2<f64>,
    /// `B × attitude_dim`, present when the model is attitude-conditioned.
    pub attitude: Option<Array2<f64>>,
}

impl Batch {
    pub fn single(features: &Array2<f64>, attitude: Option<&AttitudeCondition>) -> Self {
        Batch {
            t_len: features.nrows(),
            size: 1,
            x: features.clone(),
            attitude: attitude
                .map(|a| Array2::from_shape_vec((1, a.categories()), a.one_hot()).unwrap()),
        }
    }

    pub fn from_sequences(
        seqs: &[ArrayView2<'_, f64>],
        attitudes: &[Option<AttitudeCondition>],
    ) -> Result<Self> {
        let size = seqs.len();
        if size == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        check_dim("batch attitude count", size, attitudes.len())?;
        let t_len = seqs[0].nrows();
        let dim = seqs[0].ncols();
        let mut x = Array2::zeros((t_len * size, dim));
        for (b, seq) in seqs.iter().enumerate() {
            check_dim("batch sequence length", t_len, seq.nrows())?;
            check_dim("batch feature width", dim, seq.ncols())?;
            for t in 0..t_len {
                x.row_mut(t * size + b).assign(&seq.row(t));
            }
        }
        let attitude = match attitudes[0] {
            None => {
                if attitudes.iter().any(|a| a.is_some()) {
                    return Err(Error::InvalidArgument("mixed attitude conditioning".into()));
                }
                None
            }
            Some(first) => {
                let mut a = Array2::zeros((size, first.categories()));
                for (b, att) in attitudes.iter().enumerate() {
                    let att = att.ok_or_else(|| {
                        Error::InvalidArgument("mixed attitude conditioning".into())
                    })?;
                    check_dim("attitude categories", first.categories(), att.categories())?;
                    a[[b, att.index()]] = 1.0;
                }
                Some(a)
            }
        };
        Ok(Batch {
            t_len,
            size,
            x,
            attitude,
        })
    }

    fn rows(&self, t: usize) -> std::ops::Range<usize> {
        t * self.size..(t + 1) * self.size
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    pub t_len: usize,
    pub size: usize,
    pub stats: NormStats,
    x_hat: Array2<f64>,
    layer_inputs: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    gates: Vec<Array2<f64>>,
    cells: Vec<Array2<f64>>,
    hiddens: Vec<Array2<f64>>,
    /// `T·B × 73`
    pub residuals: Array2<f64>,
}

impl ForwardPass {
    /// Residuals of batch item `b` as a `T × 73` matrix.
    pub fn residuals_of(&self, b: usize) -> Array2<f64> {
        let rows: Vec<usize> = (0..self.t_len).map(|t| t * self.size + b).collect();
        self.residuals.select(Axis(0), &rows)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn forward_batch(
    weights: &DriverWeights,
    batch: &Batch,
    mode: Mode,
) -> Result<ForwardPass> {
    let cfg = &weights.config;
    check_dim("driver input width", cfg.input_dim, batch.x.ncols())?;
    match &batch.attitude {
        Some(a) => check_dim("attitude categories", cfg.attitude_dim, a.ncols())?,
        None => check_dim("attitude categories", cfg.attitude_dim, 0)?,
    }
    let (t_len, size, h) = (batch.t_len, batch.size, cfg.hidden_dim);
    let n_rows = t_len * size;
    let p = &weights.params;

    let stats = match mode {
        Mode::Train { .. } => NormStats::from_rows(&batch.x)?,
        Mode::Infer => NormStats::running(weights),
    };
    let inv_std = stats.inv_std();
    let mut x_hat = batch.x.clone();
    for mut row in x_hat.rows_mut() {
        for j in 0..row.len() {
            row[j] = (row[j] - stats.mean[j]) * inv_std[j];
        }
    }

    let mut input0 = Array2::zeros((n_rows, cfg.layer_input_dim(0)));
    for r in 0..n_rows {
        for j in 0..cfg.input_dim {
            input0[[r, j]] = x_hat[[r, j]] * p.norm_scale[j] + p.norm_shift[j];
        }
        if let Some(a) = &batch.attitude {
            let b = r % size;
            for k in 0..cfg.attitude_dim {
                input0[[r, cfg.input_dim + k]] = a[[b, k]];
            }
        }
    }

    let mut rng = match mode {
        Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        Mode::Infer => None,
    };

    let mut layer_inputs = Vec::with_capacity(cfg.num_layers);
    let mut masks = Vec::with_capacity(cfg.num_layers);
    let mut gates = Vec::with_capacity(cfg.num_layers);
    let mut cells = Vec::with_capacity(cfg.num_layers);
    let mut hiddens: Vec<Array2<f64>> = Vec::with_capacity(cfg.num_layers);

    for (l, layer) in p.layers.iter().enumerate() {
        let (input, mask) = if l == 0 {
            (input0.clone(), None)
        } else {
            let prev = &hiddens[l - 1];
            match rng.as_mut() {
                Some(rng) if cfg.dropout > 0.0 => {
                    let mask = dropout_mask(rng, prev.dim(), cfg.dropout);
                    (prev * &mask, Some(mask))
                }
                _ => (prev.clone(), None),
            }
        };

        let mut z_in = input.dot(&layer.w_ih.t());
        z_in += &layer.bias;
        let mut g_all = Array2::zeros((n_rows, 4 * h));
        let mut c_all = Array2::zeros((n_rows, h));
        let mut h_all = Array2::zeros((n_rows, h));
        let mut z = Array2::zeros((size, 4 * h));
        for t in 0..t_len {
            let rows = batch.rows(t);
            z.assign(&z_in.slice(s![rows.clone(), ..]));
            if t > 0 {
                let prev_rows = batch.rows(t - 1);
                general_mat_mul(
                    1.0,
                    &h_all.slice(s![prev_rows, ..]),
                    &layer.w_hh.t(),
                    1.0,
                    &mut z,
                );
            }
            for b in 0..size {
                let r = rows.start + b;
                for j in 0..h {
                    let i_g = sigmoid(z[[b, j]]);
                    let f_g = sigmoid(z[[b, h + j]]);
                    let c_g = z[[b, 2 * h + j]].tanh();
                    let o_g = sigmoid(z[[b, 3 * h + j]]);
                    let c_prev = if t > 0 { c_all[[r - size, j]] } else { 0.0 };
                    let c = f_g * c_prev + i_g * c_g;
                    g_all[[r, j]] = i_g;
                    g_all[[r, h + j]] = f_g;
                    g_all[[r, 2 * h + j]] = c_g;
                    g_all[[r, 3 * h + j]] = o_g;
                    c_all[[r, j]] = c;
                    h_all[[r, j]] = o_g * c.tanh();
                }
            }
        }
        layer_inputs.push(input);
        masks.push(mask);
        gates.push(g_all);
        cells.push(c_all);
        hiddens.push(h_all);
    }

    let mut residuals = hiddens[cfg.num_layers - 1].dot(&p.out_w.t());
    residuals += &p.out_b;
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup("driver forward"));
    }
    Ok(ForwardPass {
        t_len,
        size,
        stats,
        x_hat,
        layer_inputs,
        masks,
        gates,
        cells,
        hiddens,
        residuals,
    })
}

/// Gradients of a scalar loss with respect to all trainable tensors, given
/// `d_residuals = ∂loss/∂residuals` (`T·B × 73`, time-major).
pub(crate) fn backward(
    weights: &DriverWeights,
    pass: &ForwardPass,
    d_residuals: &Array2<f64>,
) -> Result<Tensors> {
    let cfg = &weights.config;
    let p = &weights.params;
    let (t_len, size, h) = (pass.t_len, pass.size, cfg.hidden_dim);
    let n_rows = t_len * size;
    check_dim("residual gradient rows", n_rows, d_residuals.nrows())?;
    check_dim(
        "residual gradient width",
        cfg.output_dim,
        d_residuals.ncols(),
    )?;

    let mut grads = Tensors::zeros(cfg);
    let top = &pass.hiddens[cfg.num_layers - 1];
    grads.out_w = d_residuals.t().dot(top);
    grads.out_b = d_residuals.sum_axis(Axis(0));
    let mut dh_all = d_residuals.dot(&p.out_w);

    for l in (0..cfg.num_layers).rev() {
        let layer = &p.layers[l];
        let gates = &pass.gates[l];
        let cells = &pass.cells[l];
        let mut dz_all = Array2::<f64>::zeros((n_rows, 4 * h));
        let mut dh_next = Array2::<f64>::zeros((size, h));
        let mut dc_next = Array2::<f64>::zeros((size, h));
        for t in (0..t_len).rev() {
            let r0 = t * size;
            for b in 0..size {
                let r = r0 + b;
                for j in 0..h {
                    let i_g = gates[[r, j]];
                    let f_g = gates[[r, h + j]];
                    let c_g = gates[[r, 2 * h + j]];
                    let o_g = gates[[r, 3 * h + j]];
                    let c = cells[[r, j]];
                    let c_prev = if t > 0 { cells[[r - size, j]] } else { 0.0 };
                    let tanh_c = c.tanh();
                    let dh = dh_all[[r, j]] + dh_next[[b, j]];
                    let d_o = dh * tanh_c;
                    let dc = dh * o_g * (1.0 - tanh_c * tanh_c) + dc_next[[b, j]];
                    dc_next[[b, j]] = dc * f_g;
                    dz_all[[r, j]] = dc * c_g * i_g * (1.0 - i_g);
                    dz_all[[r, h + j]] = dc * c_prev * f_g * (1.0 - f_g);
                    dz_all[[r, 2 * h + j]] = dc * i_g * (1.0 - c_g * c_g);
                    dz_all[[r, 3 * h + j]] = d_o * o_g * (1.0 - o_g);
                }
            }
            if t > 0 {
                general_mat_mul(
                    1.0,
                    &dz_all.slice(s![r0..r0 + size, ..]),
                    &layer.w_hh,
                    0.0,
                    &mut dh_next,
                );
            }
        }

        let g = &mut grads.layers[l];
        g.w_ih = dz_all.t().dot(&pass.layer_inputs[l]);
        if t_len > 1 {
            g.w_hh = dz_all
                .slice(s![size.., ..])
                .t()
                .dot(&pass.hiddens[l].slice(s![..n_rows - size, ..]));
        }
        g.bias = dz_all.sum_axis(Axis(0));
        let d_input = dz_all.dot(&layer.w_ih);

        if l > 0 {
            dh_all = match &pass.masks[l] {
                Some(mask) => d_input * mask,
                None => d_input,
            };
        } else {
            let mut d_scale = Array1::zeros(cfg.input_dim);
            let mut d_shift = Array1::zeros(cfg.input_dim);
            for r in 0..n_rows {
                for j in 0..cfg.input_dim {
                    let dy = d_input[[r, j]];
                    d_scale[j] += dy * pass.x_hat[[r, j]];
                    d_shift[j] += dy;
                }
            }
            grads.norm_scale = d_scale;
            grads.norm_shift = d_shift;
        }
    }
    if !grads.all_finite() {
        return Err(Error::NumericalBlowup("driver backward"));
    }
    Ok(grads)
}
