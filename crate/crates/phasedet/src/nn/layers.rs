use super::tensor::{Tensor2, Tensor3};
use super::NnError;
use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity whose derivative can be recovered from the layer
/// output alone, which is all the backward pass keeps around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output `a = act(x)`.
    ///
    /// ReLU uses the subgradient 0 at the kink, so `a == 0.0` maps to 0.
    #[inline]
    pub fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Valid (no padding) 1-D cross-correlation.
///
/// `input` is `[len, in_channels]`, `kernel` is `[taps, in_channels,
/// filters]`, `bias` has one entry per filter. The output is
/// `[len - taps + 1, filters]`:
///
/// `out[t][f] = bias[f] + sum_{j, ch} input[t + j][ch] * kernel[j][ch][f]`
pub fn conv1d_forward(
    input: &Tensor2,
    kernel: &Tensor3,
    bias: &[f64],
) -> Result<Tensor2, NnError> {
    let (len, in_ch) = input.shape();
    let [taps, k_ch, filters] = kernel.dims();
    if in_ch != k_ch {
        return Err(NnError::ShapeMismatch {
            context: "conv1d_forward",
            expected: format!("{k_ch} input channels"),
            got: format!("{in_ch}"),
        });
    }
    if bias.len() != filters {
        return Err(NnError::ShapeMismatch {
            context: "conv1d_forward",
            expected: format!("{filters} bias entries"),
            got: format!("{}", bias.len()),
        });
    }
    if len < taps || taps == 0 {
        return Err(NnError::ShapeMismatch {
            context: "conv1d_forward",
            expected: format!("input length >= kernel taps ({taps}), taps >= 1"),
            got: format!("length {len}"),
        });
    }

    let out_len = len - taps + 1;
    let mut out = Tensor2::zeros(out_len, filters);
    for t in 0..out_len {
        for f in 0..filters {
            let mut acc = bias[f];
            for j in 0..taps {
                for ch in 0..in_ch {
                    acc += input.get(t + j, ch) * kernel.get(j, ch, f);
                }
            }
            out.set(t, f, acc);
        }
    }
    Ok(out)
}

/// Gradients produced by [`conv1d_backward`].
#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    pub d_input: Tensor2,
    pub d_kernel: Tensor3,
    pub d_bias: Vec<f64>,
}

/// Backward pass for [`conv1d_forward`]. `grad_out` is the loss gradient
/// with respect to the convolution output, shaped `[out_len, filters]`.
pub fn conv1d_backward(
    input: &Tensor2,
    kernel: &Tensor3,
    grad_out: &Tensor2,
) -> Result<Conv1dGrads, NnError> {
    let (len, in_ch) = input.shape();
    let [taps, k_ch, filters] = kernel.dims();
    let out_len = len - taps + 1;
    if in_ch != k_ch || grad_out.shape() != (out_len, filters) {
        return Err(NnError::ShapeMismatch {
            context: "conv1d_backward",
            expected: format!("grad_out {out_len}x{filters}, {k_ch} channels"),
            got: format!("grad_out {:?}, {in_ch} channels", grad_out.shape()),
        });
    }

    let mut d_input = Tensor2::zeros(len, in_ch);
    let mut d_kernel = Tensor3::zeros([taps, in_ch, filters]);
    let mut d_bias = vec![0.0; filters];
    for t in 0..out_len {
        for f in 0..filters {
            let g = grad_out.get(t, f);
            d_bias[f] += g;
            for j in 0..taps {
                for ch in 0..in_ch {
                    d_kernel.set(j, ch, f, d_kernel.get(j, ch, f) + g * input.get(t + j, ch));
                    d_input.set(t + j, ch, d_input.get(t + j, ch) + g * kernel.get(j, ch, f));
                }
            }
        }
    }
    Ok(Conv1dGrads {
        d_input,
        d_kernel,
        d_bias,
    })
}

/// Non-overlapping max pooling along the time axis with window `pool`.
///
/// Trailing rows that do not fill a window are dropped. Returns the pooled
/// tensor and, for each output cell in row-major order, the input row index
/// the maximum was taken from (ties resolve to the earliest row).
pub fn maxpool1d_forward(input: &Tensor2, pool: usize) -> Result<(Tensor2, Vec<usize>), NnError> {
    let (rows, cols) = input.shape();
    if pool == 0 {
        return Err(NnError::ShapeMismatch {
            context: "maxpool1d_forward",
            expected: "pool >= 1".to_string(),
            got: "0".to_string(),
        });
    }
    if rows < pool {
        return Err(NnError::PoolTooLarge { pool, rows });
    }

    let out_rows = rows / pool;
    let mut out = Tensor2::zeros(out_rows, cols);
    let mut argmax = vec![0usize; out_rows * cols];
    for r in 0..out_rows {
        for c in 0..cols {
            let mut best_row = r * pool;
            let mut best = input.get(best_row, c);
            for i in 1..pool {
                let row = r * pool + i;
                let v = input.get(row, c);
                if v > best {
                    best = v;
                    best_row = row;
                }
            }
            out.set(r, c, best);
            argmax[r * cols + c] = best_row;
        }
    }
    Ok((out, argmax))
}

/// Backward pass for [`maxpool1d_forward`]: routes each output gradient to
/// the input row recorded in `argmax`; every other input row gets zero.
pub fn maxpool1d_backward(
    grad_out: &Tensor2,
    argmax: &[usize],
    input_rows: usize,
) -> Result<Tensor2, NnError> {
    let (out_rows, cols) = grad_out.shape();
    if argmax.len() != out_rows * cols {
        return Err(NnError::ShapeMismatch {
            context: "maxpool1d_backward",
            expected: format!("{} argmax entries", out_rows * cols),
            got: format!("{}", argmax.len()),
        });
    }
    let mut d_input = Tensor2::zeros(input_rows, cols);
    for r in 0..out_rows {
        for c in 0..cols {
            let src = argmax[r * cols + c];
            d_input.set(src, c, d_input.get(src, c) + grad_out.get(r, c));
        }
    }
    Ok(d_input)
}

/// Fully connected layer: `out = act(weights^T . input + bias)`.
///
/// `weights` is `[in_dim, out_dim]` so column `o` holds the weights feeding
/// output unit `o`.
pub fn dense_forward(
    input: &[f64],
    weights: &Tensor2,
    bias: &[f64],
    activation: Activation,
) -> Result<Vec<f64>, NnError> {
    let (in_dim, out_dim) = weights.shape();
    if input.len() != in_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_forward",
            expected: format!("{in_dim} inputs"),
            got: format!("{}", input.len()),
        });
    }
    if bias.len() != out_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_forward",
            expected: format!("{out_dim} bias entries"),
            got: format!("{}", bias.len()),
        });
    }
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let mut z = bias[o];
        for (i, x) in input.iter().enumerate() {
            z += x * weights.get(i, o);
        }
        out.push(activation.apply(z));
    }
    Ok(out)
}

/// Gradients produced by [`dense_backward`].
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub d_input: Vec<f64>,
    pub d_weights: Tensor2,
    pub d_bias: Vec<f64>,
}

/// Backward pass for [`dense_forward`]. `output` is the forward activation
/// and `grad_out` the loss gradient with respect to it; the pre-activation
/// gradient is reconstructed via [`Activation::grad_from_output`].
pub fn dense_backward(
    input: &[f64],
    weights: &Tensor2,
    output: &[f64],
    grad_out: &[f64],
    activation: Activation,
) -> Result<DenseGrads, NnError> {
    let (in_dim, out_dim) = weights.shape();
    if input.len() != in_dim || output.len() != out_dim || grad_out.len() != out_dim {
        return Err(NnError::ShapeMismatch {
            context: "dense_backward",
            expected: format!("input {in_dim}, output/grad {out_dim}"),
            got: format!(
                "input {}, output {}, grad {}",
                input.len(),
                output.len(),
                grad_out.len()
            ),
        });
    }

    let dz: Vec<f64> = (0..out_dim)
        .map(|o| grad_out[o] * activation.grad_from_output(output[o]))
        .collect();

    let mut d_input = vec![0.0; in_dim];
    let mut d_weights = Tensor2::zeros(in_dim, out_dim);
    for i in 0..in_dim {
        let mut acc = 0.0;
        for o in 0..out_dim {
            acc += weights.get(i, o) * dz[o];
            d_weights.set(i, o, input[i] * dz[o]);
        }
        d_input[i] = acc;
    }
    Ok(DenseGrads {
        d_input,
        d_weights,
        d_bias: dz,
    })
}
