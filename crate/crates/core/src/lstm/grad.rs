//! Loss and exact gradients by backpropagation through the unrolled rollout.

use serde::{Deserialize, Serialize};

use super::{LstmNetwork, PackedLayer};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// What the network consumes during the forecast phase of a training rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Feed back its own predictions, and backpropagate through that feedback.
    #[default]
    Recursive,
    /// Feed back the true previous target value.
    TeacherForcing,
}

/// Forward activations kept for the backward pass, indexed by `(step, layer)`.
struct Tape<T> {
    layers: usize,
    hidden: usize,
    x0: Vec<T>,
    gates: Vec<T>,
    cell: Vec<T>,
    tanh_cell: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> Tape<T> {
    #[inline]
    fn at(&self, s: usize, l: usize) -> usize {
        (s * self.layers + l) * self.hidden
    }

    #[inline]
    fn h(&self, s: usize, l: usize) -> &[T] {
        let a = self.at(s, l);
        &self.out[a..a + self.hidden]
    }
}

/// Mean squared error of the scaled forecast against the scaled `target`
/// (both given in mg/dL), and its gradient with respect to every parameter in
/// flat order. The forecast phase feeds back predictions or targets per `mode`;
/// in recursive mode the gradient includes every feedback path.
pub fn loss_and_gradients<T: Real>(net: &LstmNetwork<T>, input: &[T], target: &[T], mode: LossMode) -> Result<(T, Vec<T>)> {
    net.validate()?;
    if input.is_empty() || target.is_empty() {
        return Err(Error::InsufficientData("training example needs input and target values".into()));
    }
    let n_layers = net.layers.len();
    let h = net.hidden_size();
    let n = input.len();
    let horizon = target.len();
    let steps = n + horizon - 1;
    let scaled_target: Vec<T> = target.iter().map(|v| net.scaler.scale(*v)).collect();

    let mut tape = Tape {
        layers: n_layers,
        hidden: h,
        x0: vec![T::zero(); steps],
        gates: vec![T::zero(); steps * n_layers * 4 * h],
        cell: vec![T::zero(); steps * n_layers * h],
        tanh_cell: vec![T::zero(); steps * n_layers * h],
        out: vec![T::zero(); steps * n_layers * h],
    };
    let zeros = vec![T::zero(); h];
    let packed: Vec<PackedLayer<T>> = net.layers.iter().map(PackedLayer::new).collect();
    let mut y = vec![T::zero(); horizon];

    for s in 0..steps {
        tape.x0[s] = if s < n {
            net.scaler.scale(input[s])
        } else {
            match mode {
                LossMode::Recursive => y[s - n],
                LossMode::TeacherForcing => scaled_target[s - n],
            }
        };
        for l in 0..n_layers {
            let a = tape.at(s, l);
            let mut gates = std::mem::take(&mut tape.gates);
            {
                let x0 = [tape.x0[s]];
                let x: &[T] = if l == 0 { &x0 } else { tape.h(s, l - 1) };
                let h_prev = if s > 0 { tape.h(s - 1, l) } else { &zeros };
                packed[l].gates(x, h_prev, &mut gates[4 * a..4 * a + 4 * h]);
            }
            let g = &gates[4 * a..4 * a + 4 * h];
            for k in 0..h {
                let c_prev = if s > 0 { tape.cell[tape.at(s - 1, l) + k] } else { T::zero() };
                let c = g[h + k] * c_prev + g[k] * g[2 * h + k];
                let tc = c.tanh_exp();
                tape.cell[a + k] = c;
                tape.tanh_cell[a + k] = tc;
                tape.out[a + k] = g[3 * h + k] * tc;
            }
            tape.gates = gates;
        }
        if s + 1 >= n {
            y[s + 1 - n] = net.head(tape.h(s, n_layers - 1));
        }
    }

    let mut loss = T::zero();
    for (p, t) in y.iter().zip(&scaled_target) {
        loss += (*p - *t) * (*p - *t);
    }
    let hz = T::of_usize(horizon);
    loss /= hz;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }

    let offsets = net.offsets();
    let head_off = offsets[n_layers];
    let mut grad = vec![T::zero(); net.param_count()];
    let mut dh_next = vec![T::zero(); n_layers * h];
    let mut dc_next = vec![T::zero(); n_layers * h];
    let mut dh_above = vec![T::zero(); h];
    let mut dx = vec![T::zero(); h.max(1)];
    let mut da = vec![T::zero(); 4 * h];
    let two = T::of(2.0);
    let one = T::one();
    let mut feedback = T::zero();

    for s in (0..steps).rev() {
        dh_above.iter_mut().for_each(|v| *v = T::zero());
        if s + 1 >= n {
            let k = s + 1 - n;
            let dy = two * (y[k] - scaled_target[k]) / hz + feedback;
            let top = tape.h(s, n_layers - 1);
            for j in 0..h {
                grad[head_off + j] += dy * top[j];
                dh_above[j] = dy * net.head_weights[j];
            }
            grad[head_off + h] += dy;
        }
        for l in (0..n_layers).rev() {
            let layer = &net.layers[l];
            let d = layer.input_size;
            let a = tape.at(s, l);
            let g = &tape.gates[4 * a..4 * a + 4 * h];
            let dhn = &mut dh_next[l * h..(l + 1) * h];
            let dcn = &mut dc_next[l * h..(l + 1) * h];
            for k in 0..h {
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = tape.tanh_cell[a + k];
                let c_prev = if s > 0 { tape.cell[tape.at(s - 1, l) + k] } else { T::zero() };
                let dh = dh_above[k] + dhn[k];
                let d_o = dh * tc;
                let dc = dh * o * (one - tc * tc) + dcn[k];
                da[k] = dc * gg * i * (one - i);
                da[h + k] = dc * c_prev * f * (one - f);
                da[2 * h + k] = dc * i * (one - gg * gg);
                da[3 * h + k] = d_o * o * (one - o);
                dcn[k] = dc * f;
            }

            let x0 = [tape.x0[s]];
            let x: &[T] = if l == 0 { &x0 } else { tape.h(s, l - 1) };
            let h_prev = if s > 0 { tape.h(s - 1, l) } else { &zeros };
            let wi_off = offsets[l];
            let wh_off = wi_off + 4 * h * d;
            let bi_off = wh_off + 4 * h * h;
            let bh_off = bi_off + 4 * h;
            dhn.iter_mut().for_each(|v| *v = T::zero());
            dx[..d].iter_mut().for_each(|v| *v = T::zero());
            // both biases receive the same gradient
            for (r, dar) in da.iter().enumerate() {
                grad[bi_off + r] += *dar;
                grad[bh_off + r] += *dar;
            }
            let x = &x[..d];
            let h_prev = &h_prev[..h];
            let dx = &mut dx[..d];
            for r in 0..4 * h {
                let dar = da[r];
                let gw = &mut grad[wi_off + r * d..wi_off + (r + 1) * d];
                let w = &layer.w_input[r * d..(r + 1) * d];
                for j in 0..d {
                    gw[j] += dar * x[j];
                    dx[j] += w[j] * dar;
                }
                let gw = &mut grad[wh_off + r * h..wh_off + (r + 1) * h];
                let w = &layer.w_hidden[r * h..(r + 1) * h];
                for j in 0..h {
                    gw[j] += dar * h_prev[j];
                    dhn[j] += w[j] * dar;
                }
            }
            if l > 0 {
                dh_above.copy_from_slice(&dx[..h]);
            }
        }
        feedback = if mode == LossMode::Recursive && s >= n { dx[0] } else { T::zero() };
    }

    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

/// Largest relative difference between the analytic gradient and central
/// finite differences with step `eps`, over every parameter. The denominator
/// is floored at `1e-6` so parameters with near-zero gradient are compared
/// absolutely rather than amplified.
pub fn gradient_check(net: &LstmNetwork<f64>, input: &[f64], target: &[f64], mode: LossMode, eps: f64) -> Result<f64> {
    let (_, grad) = loss_and_gradients(net, input, target, mode)?;
    let p = net.params();
    let mut probe = net.clone();
    let mut loss_at = |params: &[f64]| -> Result<f64> {
        probe.set_params(params)?;
        Ok(loss_and_gradients(&probe, input, target, mode)?.0)
    };
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for k in 0..p.len() {
        q[k] = p[k] + eps;
        let up = loss_at(&q)?;
        q[k] = p[k] - eps;
        let down = loss_at(&q)?;
        q[k] = p[k];
        let fd = (up - down) / (2.0 * eps);
        let denom = grad[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((grad[k] - fd).abs() / denom);
    }
    Ok(worst)
}
