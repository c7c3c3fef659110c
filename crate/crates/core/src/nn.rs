//! Minimal dense feed-forward network with exact manual backpropagation.
//!
//! Only what the learned Gaussian proposal needs: relu hidden layers, a
//! linear or softplus output, Glorot-uniform initialization, and a
//! vector-Jacobian product returning gradients in both the flattened
//! parameters and the input. The relu subgradient at 0 is taken to be 0.

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Softplus,
}

/// Network shape: `layer_sizes = [input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, output_activation: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "an MLP needs at least input and output layers",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(MlpSpec {
            layer_sizes,
            hidden_activation: HiddenActivation::Relu,
            output_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total flat length: sum of `n_in * n_out + n_out` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flattened weights: per layer, the row-major `n_out x n_in` weight matrix
/// followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub flat: Vec<f64>,
    pub spec: MlpSpec,
}

/// Glorot-uniform weights (`±sqrt(6 / (n_in + n_out))`), zero biases;
/// deterministic in `seed`.
pub fn mlp_init(spec: MlpSpec, seed: u64) -> MlpParams {
    let mut rng = RngState::from_seed(seed);
    let mut flat = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_in * n_out {
            flat.push(limit * (2.0 * rng.uniform() - 1.0));
        }
        flat.resize(flat.len() + n_out, 0.0);
    }
    MlpParams { flat, spec }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass keeping per-layer pre-activations for the reverse pass.
fn forward_tape(params: &MlpParams, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    let spec = &params.spec;
    if input.len() != spec.input_dim() {
        return Err(Error::invalid(format!(
            "input has length {}, network expects {}",
            input.len(),
            spec.input_dim()
        )));
    }
    let n_layers = spec.layer_sizes.len() - 1;
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut act = input.to_vec();
    let mut off = 0;
    for (l, w) in spec.layer_sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params.flat[off..off + n_in * n_out];
        let biases = &params.flat[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;

        let mut z = vec![0.0; n_out];
        for i in 0..n_out {
            let row = &weights[i * n_in..(i + 1) * n_in];
            let mut acc = biases[i];
            for j in 0..n_in {
                acc += row[j] * act[j];
            }
            z[i] = acc;
        }
        act = if l + 1 < n_layers {
            z.iter().map(|&v| v.max(0.0)).collect()
        } else {
            match spec.output_activation {
                OutputActivation::Linear => z.clone(),
                OutputActivation::Softplus => z.iter().map(|&v| softplus(v)).collect(),
            }
        };
        pre.push(z);
    }
    pre.push(act); // final activations appended for convenience
    Ok(pre)
}

/// Deterministic forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    let mut tape = forward_tape(params, input)?;
    Ok(tape.pop().unwrap())
}

/// Exact reverse pass: returns the parameter cotangent
/// `(d output / d params)^T v` and the input cotangent
/// `(d output / d input)^T v`.
pub fn mlp_vjp(
    params: &MlpParams,
    input: &[f64],
    output_cotangent: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = &params.spec;
    if output_cotangent.len() != spec.output_dim() {
        return Err(Error::invalid(format!(
            "cotangent has length {}, network emits {}",
            output_cotangent.len(),
            spec.output_dim()
        )));
    }
    let mut tape = forward_tape(params, input)?;
    tape.pop(); // final activations are not needed
    let n_layers = spec.layer_sizes.len() - 1;

    // delta at the output layer, through the output activation
    let top = &tape[n_layers - 1];
    let mut delta: Vec<f64> = match spec.output_activation {
        OutputActivation::Linear => output_cotangent.to_vec(),
        OutputActivation::Softplus => output_cotangent
            .iter()
            .zip(top)
            .map(|(&c, &z)| c * sigmoid(z))
            .collect(),
    };

    let mut grad_params = vec![0.0; spec.param_count()];
    let layer_offsets: Vec<usize> = {
        let mut offs = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in spec.layer_sizes.windows(2) {
            offs.push(off);
            off += w[0] * w[1] + w[1];
        }
        offs
    };

    let mut grad_input = vec![0.0; spec.input_dim()];
    for l in (0..n_layers).rev() {
        let n_in = spec.layer_sizes[l];
        let n_out = spec.layer_sizes[l + 1];
        let off = layer_offsets[l];
        // activations feeding this layer
        let below: Vec<f64> = if l == 0 {
            input.to_vec()
        } else {
            tape[l - 1].iter().map(|&z| z.max(0.0)).collect()
        };

        for i in 0..n_out {
            let d = delta[i];
            let w_row = off + i * n_in;
            for j in 0..n_in {
                grad_params[w_row + j] = d * below[j];
            }
            grad_params[off + n_in * n_out + i] = d;
        }

        // propagate: W^T delta, gated by relu'(z) below (0 at the kink)
        let weights = &params.flat[off..off + n_in * n_out];
        let mut prev = vec![0.0; n_in];
        for j in 0..n_in {
            let mut acc = 0.0;
            for i in 0..n_out {
                acc += weights[i * n_in + j] * delta[i];
            }
            prev[j] = acc;
        }
        if l == 0 {
            grad_input = prev;
        } else {
            delta = prev
                .iter()
                .zip(&tape[l - 1])
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
        }
    }
    Ok((grad_params, grad_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(sizes: &[usize], out: OutputActivation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), out).unwrap()
    }

    #[test]
    #[allow(clippy::identity_op)]
    fn param_count_shape_arithmetic() {
        let s = spec(&[2, 3, 1], OutputActivation::Linear);
        assert_eq!(s.param_count(), 2 * 3 + 3 + 3 * 1 + 1);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let s = spec(&[2, 3, 1], OutputActivation::Linear);
        let a = mlp_init(s.clone(), 5);
        let b = mlp_init(s.clone(), 5);
        let c = mlp_init(s, 6);
        assert_eq!(a.flat, b.flat);
        assert_ne!(a.flat, c.flat);
        assert_eq!(a.flat.len(), 13);
    }

    #[test]
    fn zero_network_outputs() {
        let s = spec(&[2, 3, 2], OutputActivation::Linear);
        let mut p = mlp_init(s, 0);
        p.flat.iter_mut().for_each(|v| *v = 0.0);
        let out = mlp_forward(&p, &[0.4, -1.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);

        let s = spec(&[2, 3, 2], OutputActivation::Softplus);
        let mut p = mlp_init(s, 0);
        p.flat.iter_mut().for_each(|v| *v = 0.0);
        let out = mlp_forward(&p, &[0.4, -1.0]).unwrap();
        for v in out {
            assert_relative_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_affine_layer() {
        // one layer [1,1]: w = 2, b = 1, input 3 -> 7
        let s = spec(&[1, 1], OutputActivation::Linear);
        let p = MlpParams {
            flat: vec![2.0, 1.0],
            spec: s,
        };
        assert_relative_eq!(mlp_forward(&p, &[3.0]).unwrap()[0], 7.0);

        // gradient of the output w.r.t. the weight is the input value
        let (gp, gi) = mlp_vjp(&p, &[3.0], &[1.0]).unwrap();
        assert_relative_eq!(gp[0], 3.0);
        assert_relative_eq!(gp[1], 1.0);
        assert_relative_eq!(gi[0], 2.0);
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let s = spec(&[2, 3, 2], OutputActivation::Softplus);
        let p = mlp_init(s, 9);
        let (gp, gi) = mlp_vjp(&p, &[0.3, -0.7], &[0.0, 0.0]).unwrap();
        assert!(gp.iter().all(|&g| g == 0.0));
        assert!(gi.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_a_first_layer_row_doubles_its_preactivation() {
        let s = spec(&[2, 3, 1], OutputActivation::Linear);
        let mut p = mlp_init(s, 21);
        // zero the first hidden unit's bias, then double its weight row
        p.flat[6] = 0.0;
        let input = [0.7, 0.4];
        let z_before = p.flat[0] * input[0] + p.flat[1] * input[1];
        p.flat[0] *= 2.0;
        p.flat[1] *= 2.0;
        let z_after = p.flat[0] * input[0] + p.flat[1] * input[1];
        assert_relative_eq!(z_after, 2.0 * z_before, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = spec(&[2, 3, 1], OutputActivation::Linear);
        let p = mlp_init(s, 0);
        assert!(mlp_forward(&p, &[1.0]).is_err());
        assert!(mlp_vjp(&p, &[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    /// Central finite differences, the gradient oracle for the VJP.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let dn = f(&xp);
            xp[i] = x[i];
            g.push((up - dn) / (2.0 * h));
        }
        g
    }

    fn relu_kink_free(p: &MlpParams, input: &[f64], margin: f64) -> bool {
        let tape = forward_tape(p, input).unwrap();
        let hidden_layers = p.spec.layer_sizes.len() - 2;
        tape[..hidden_layers]
            .iter()
            .all(|z| z.iter().all(|&v| v.abs() > margin))
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = RngState::from_seed(123);
        let mut checked = 0;
        let mut attempt = 0;
        while checked < 6 {
            attempt += 1;
            let s = spec(&[2, 3, 2], OutputActivation::Softplus);
            let p = mlp_init(s, 1000 + attempt);
            let input = [rng.normal(), rng.normal()];
            if !relu_kink_free(&p, &input, 1e-3) {
                continue;
            }
            let cot = [rng.normal(), rng.normal()];
            let (gp, gi) = mlp_vjp(&p, &input, &cot).unwrap();

            let f_params = |flat: &[f64]| {
                let q = MlpParams {
                    flat: flat.to_vec(),
                    spec: p.spec.clone(),
                };
                mlp_forward(&q, &input)
                    .unwrap()
                    .iter()
                    .zip(&cot)
                    .map(|(o, c)| o * c)
                    .sum::<f64>()
            };
            let fd_p = fd_grad(f_params, &p.flat, 1e-5);
            for (a, b) in gp.iter().zip(&fd_p) {
                let scale = a.abs().max(b.abs()).max(1e-8);
                assert!((a - b).abs() / scale < 1e-6, "param grad {a} vs fd {b}");
            }

            let f_input = |x: &[f64]| {
                mlp_forward(&p, x)
                    .unwrap()
                    .iter()
                    .zip(&cot)
                    .map(|(o, c)| o * c)
                    .sum::<f64>()
            };
            let fd_i = fd_grad(f_input, &input, 1e-5);
            for (a, b) in gi.iter().zip(&fd_i) {
                let scale = a.abs().max(b.abs()).max(1e-8);
                assert!((a - b).abs() / scale < 1e-6, "input grad {a} vs fd {b}");
            }
            checked += 1;
        }
    }
}
