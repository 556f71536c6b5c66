//! Stacked LSTM forecaster.
//!
//! The cell is the standard formulation with separate input-side and
//! hidden-side biases:
//!
//! ```text
//! i = σ(W_ii x + b_ii + W_hi h + b_hi)      f = σ(W_if x + b_if + W_hf h + b_hf)
//! g = tanh(W_ig x + b_ig + W_hg h + b_hg)   o = σ(W_io x + b_io + W_ho h + b_ho)
//! c' = f ⊙ c + i ⊙ g                        h' = o ⊙ tanh(c')
//! ```
//!
//! Gate rows are stored as four consecutive blocks in the order (i, f, g, o).
//! A network is a stack of such layers fed one scaled glucose value per step,
//! with a linear head on the top hidden state. Forecasts are recursive: after
//! the observed window, each prediction is fed back as the next input.
//!
//! Parameters are laid out flat, in this fixed order, wherever a single vector
//! is needed (gradients, optimizer state, model files): for each layer
//! `W_input (4h×d, row-major)`, `W_hidden (4h×h)`, `b_input (4h)`,
//! `b_hidden (4h)`; then the head weights `(h)` and the head bias.

mod grad;
mod io;
mod train;

pub use grad::{gradient_check, loss_and_gradients, LossMode};
pub use io::{load_model, read_model, save_model, write_model, ModelHeader, LSTM_MAGIC, LSTM_VERSION};
pub use train::{train, AdamState, Checkpoint, EpochStats, TrainOptions, TrainingRun};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::scalar::Real;

/// Fixed affine map between mg/dL and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T = f64> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Default for Scaler<T> {
    fn default() -> Self {
        Self {
            lo: T::of(20.0),
            hi: T::of(600.0),
        }
    }
}

impl<T: Real> Scaler<T> {
    #[inline]
    pub fn scale(&self, mgdl: T) -> T {
        (mgdl - self.lo) / (self.hi - self.lo)
    }

    #[inline]
    pub fn unscale(&self, unit: T) -> T {
        unit * (self.hi - self.lo) + self.lo
    }

    pub fn span(&self) -> T {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T = f64> {
    pub input_size: usize,
    pub hidden_size: usize,
    /// 4h × d, row-major, gate blocks (i, f, g, o).
    pub w_input: Vec<T>,
    /// 4h × h, row-major.
    pub w_hidden: Vec<T>,
    pub b_input: Vec<T>,
    pub b_hidden: Vec<T>,
}

/// Post-activation gate values of one cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates<T> {
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
}

impl<T: Real> LstmLayer<T> {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let h4 = 4 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w_input: vec![T::zero(); h4 * input_size],
            w_hidden: vec![T::zero(); h4 * hidden_size],
            b_input: vec![T::zero(); h4],
            b_hidden: vec![T::zero(); h4],
        }
    }

    pub fn param_count(&self) -> usize {
        layer_param_count(self.input_size, self.hidden_size)
    }

    fn check_shapes(&self) -> Result<()> {
        let (d, h) = (self.input_size, self.hidden_size);
        if self.w_input.len() != 4 * h * d
            || self.w_hidden.len() != 4 * h * h
            || self.b_input.len() != 4 * h
            || self.b_hidden.len() != 4 * h
        {
            return Err(Error::Shape(format!("layer tensors do not match d={d}, h={h}")));
        }
        Ok(())
    }

    /// Writes the four gate activations for one step into `gates` (length 4h).
    #[inline]
    pub(crate) fn gates_into(&self, x: &[T], h_prev: &[T], gates: &mut [T]) {
        let (d, h) = (self.input_size, self.hidden_size);
        for r in 0..4 * h {
            let mut a = self.b_input[r] + self.b_hidden[r];
            let wi = &self.w_input[r * d..(r + 1) * d];
            for j in 0..d {
                a += wi[j] * x[j];
            }
            let wh = &self.w_hidden[r * h..(r + 1) * h];
            for j in 0..h {
                a += wh[j] * h_prev[j];
            }
            gates[r] = if (2 * h..3 * h).contains(&r) { a.tanh_exp() } else { a.sigmoid() };
        }
    }

    /// One cell step: returns `(h, c, gates)`.
    pub fn cell_forward(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>, Gates<T>)> {
        self.check_shapes()?;
        let h = self.hidden_size;
        if x.len() != self.input_size || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::Shape(format!(
                "cell expects x[{}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
                self.input_size,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let mut gates = vec![T::zero(); 4 * h];
        self.gates_into(x, h_prev, &mut gates);
        let mut c = vec![T::zero(); h];
        let mut out = vec![T::zero(); h];
        for k in 0..h {
            c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            out[k] = gates[3 * h + k] * c[k].tanh_exp();
        }
        let g = Gates {
            i: gates[..h].to_vec(),
            f: gates[h..2 * h].to_vec(),
            g: gates[2 * h..3 * h].to_vec(),
            o: gates[3 * h..].to_vec(),
        };
        Ok((out, c, g))
    }
}

/// Column-major copies of a layer's weights with the two biases summed, so
/// the gate pre-activations are built as a sequence of contiguous `axpy`s.
/// Each pre-activation still accumulates its terms in the same order as
/// [`LstmLayer::gates_into`], so both paths produce identical values.
pub(crate) struct PackedLayer<T> {
    pub(crate) d: usize,
    pub(crate) h: usize,
    /// d columns of length 4h.
    w_input_t: Vec<T>,
    /// h columns of length 4h.
    w_hidden_t: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> PackedLayer<T> {
    pub(crate) fn new(l: &LstmLayer<T>) -> Self {
        let (d, h) = (l.input_size, l.hidden_size);
        let h4 = 4 * h;
        let mut w_input_t = vec![T::zero(); d * h4];
        let mut w_hidden_t = vec![T::zero(); h * h4];
        for r in 0..h4 {
            for j in 0..d {
                w_input_t[j * h4 + r] = l.w_input[r * d + j];
            }
            for j in 0..h {
                w_hidden_t[j * h4 + r] = l.w_hidden[r * h + j];
            }
        }
        let bias = l.b_input.iter().zip(&l.b_hidden).map(|(a, b)| *a + *b).collect();
        Self {
            d,
            h,
            w_input_t,
            w_hidden_t,
            bias,
        }
    }

    /// Gate activations (i, f, g, o) for one step, written into `gates`.
    #[inline]
    pub(crate) fn gates(&self, x: &[T], h_prev: &[T], gates: &mut [T]) {
        let h4 = 4 * self.h;
        let gates = &mut gates[..h4];
        gates.copy_from_slice(&self.bias);
        for (j, xj) in x[..self.d].iter().enumerate() {
            let col = &self.w_input_t[j * h4..(j + 1) * h4];
            for r in 0..h4 {
                gates[r] += col[r] * *xj;
            }
        }
        for (j, hj) in h_prev[..self.h].iter().enumerate() {
            let col = &self.w_hidden_t[j * h4..(j + 1) * h4];
            for r in 0..h4 {
                gates[r] += col[r] * *hj;
            }
        }
        let h = self.h;
        for a in &mut gates[..2 * h] {
            *a = a.sigmoid();
        }
        for a in &mut gates[2 * h..3 * h] {
            *a = a.tanh_exp();
        }
        for a in &mut gates[3 * h..] {
            *a = a.sigmoid();
        }
    }
}

/// `4h·d + 4h² + 8h`.
pub fn layer_param_count(input_size: usize, hidden_size: usize) -> usize {
    4 * hidden_size * input_size + 4 * hidden_size * hidden_size + 8 * hidden_size
}

/// Trainable parameters of a stack of `layers` LSTM layers with a scalar head.
pub fn param_count_for(input_size: usize, hidden_size: usize, layers: usize) -> usize {
    (0..layers)
        .map(|l| layer_param_count(if l == 0 { input_size } else { hidden_size }, hidden_size))
        .sum::<usize>()
        + hidden_size
        + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork<T = f64> {
    pub layers: Vec<LstmLayer<T>>,
    pub head_weights: Vec<T>,
    pub head_bias: T,
    pub scaler: Scaler<T>,
    pub seed: u64,
}

/// Hidden and cell vectors of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T = f64> {
    pub hidden: Vec<Vec<T>>,
    pub cell: Vec<Vec<T>>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(layers: usize, hidden_size: usize) -> Self {
        Self {
            hidden: vec![vec![T::zero(); hidden_size]; layers],
            cell: vec![vec![T::zero(); hidden_size]; layers],
        }
    }
}

impl<T: Real> LstmNetwork<T> {
    /// All-zero network with scalar input.
    pub fn zeros(hidden_size: usize, layers: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|l| LstmLayer::zeros(if l == 0 { 1 } else { hidden_size }, hidden_size))
                .collect(),
            head_weights: vec![T::zero(); hidden_size],
            head_bias: T::zero(),
            scaler: Scaler::default(),
            seed: 0,
        }
    }

    /// Uniform `±1/√h` initialization of every parameter, seeded.
    pub fn new(hidden_size: usize, layers: usize, seed: u64) -> Self {
        let mut net = Self::zeros(hidden_size, layers);
        net.seed = seed;
        let bound = 1.0 / (hidden_size.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = net.params();
        for v in p.iter_mut() {
            *v = T::of(rng.gen_range(-bound..=bound));
        }
        net.set_params(&p).expect("length matches by construction");
        net
    }

    pub fn hidden_size(&self) -> usize {
        self.head_weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmLayer::param_count).sum::<usize>() + self.head_weights.len() + 1
    }

    /// Flat parameter vector in file order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w_input);
            out.extend_from_slice(&l.w_hidden);
            out.extend_from_slice(&l.b_input);
            out.extend_from_slice(&l.b_hidden);
        }
        out.extend_from_slice(&self.head_weights);
        out.push(self.head_bias);
        out
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, network needs {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        let mut fill = |dst: &mut [T]| {
            dst.copy_from_slice(&p[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for l in &mut self.layers {
            fill(&mut l.w_input);
            fill(&mut l.w_hidden);
            fill(&mut l.b_input);
            fill(&mut l.b_hidden);
        }
        fill(&mut self.head_weights);
        self.head_bias = p[p.len() - 1];
        Ok(())
    }

    /// Offset of each layer's block in the flat parameter vector, plus the head offset last.
    pub(crate) fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let mut pos = 0;
        for l in &self.layers {
            out.push(pos);
            pos += l.param_count();
        }
        out.push(pos);
        out
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no LSTM layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            l.check_shapes()?;
            let d = if k == 0 { 1 } else { h };
            if l.hidden_size != h || l.input_size != d {
                return Err(Error::Shape(format!(
                    "layer {k} is {}→{}, expected {d}→{h}",
                    l.input_size, l.hidden_size
                )));
            }
        }
        if !(self.scaler.hi > self.scaler.lo) {
            return Err(Error::InvalidValue("scaler needs lo < hi".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn head(&self, h_top: &[T]) -> T {
        let mut y = self.head_bias;
        for (w, h) in self.head_weights.iter().zip(h_top) {
            y += *w * *h;
        }
        y
    }

    /// Advances every layer by one step on scaled input `x`, optionally
    /// recording the forget gates, and returns the head output.
    fn step(&self, packed: &[PackedLayer<T>], state: &mut LstmState<T>, x: T, gates: &mut [T], forget: Option<&mut Vec<T>>) -> T {
        let h = self.hidden_size();
        let mut forget = forget;
        let input = [x];
        for (l, layer) in packed.iter().enumerate() {
            let (below, rest) = state.hidden.split_at_mut(l);
            let x_in: &[T] = if l == 0 { &input } else { &below[l - 1] };
            layer.gates(x_in, &rest[0], gates);
            let c = &mut state.cell[l];
            let hid = &mut rest[0];
            for k in 0..h {
                c[k] = gates[h + k] * c[k] + gates[k] * gates[2 * h + k];
                hid[k] = gates[3 * h + k] * c[k].tanh_exp();
            }
            if let Some(f) = forget.as_deref_mut() {
                f.extend_from_slice(&gates[h..2 * h]);
            }
        }
        self.head(&state.hidden[self.layers.len() - 1])
    }

    /// Recursive forecast of `horizon` values (mg/dL) from an observed window
    /// (mg/dL). With `trace`, forget-gate activations of every processed step
    /// (`input.len() + horizon − 1` of them) are recorded.
    pub fn rollout(&self, input: &[T], horizon: usize, trace: bool) -> Result<(Vec<T>, Option<ForgetTrace<T>>)> {
        self.validate()?;
        if input.is_empty() {
            return Err(Error::InsufficientData("rollout needs at least one input value".into()));
        }
        let h = self.hidden_size();
        let n_layers = self.layers.len();
        let mut state = LstmState::zeros(n_layers, h);
        let packed: Vec<PackedLayer<T>> = self.layers.iter().map(PackedLayer::new).collect();
        let mut gates = vec![T::zero(); 4 * h];
        let steps = input.len() + horizon.saturating_sub(1);
        // step-major while recording; transposed to layer-major at the end
        let mut forget: Option<Vec<T>> = trace.then(|| Vec::with_capacity(steps * n_layers * h));
        let mut phases = Vec::with_capacity(if trace { steps } else { 0 });
        let mut out = Vec::with_capacity(horizon);

        let check = |y: T, step: usize, state: &LstmState<T>| -> Result<()> {
            if !y.is_finite() || state.cell.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activation at step {step}")));
            }
            Ok(())
        };

        let mut y = T::zero();
        for (t, v) in input.iter().enumerate() {
            let x = self.scaler.scale(*v);
            if !x.is_finite() {
                return Err(Error::InvalidValue(format!("non-finite input at step {t}")));
            }
            y = self.step(&packed, &mut state, x, &mut gates, forget.as_mut());
            check(y, t, &state)?;
            if trace {
                phases.push(Phase::Observed);
            }
        }
        let unscale = |y: T, step: usize| -> Result<T> {
            let v = self.scaler.unscale(y);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!("forecast overflows at step {step}")))
            }
        };
        if horizon > 0 {
            out.push(unscale(y, input.len() - 1)?);
        }
        for k in 1..horizon {
            y = self.step(&packed, &mut state, y, &mut gates, forget.as_mut());
            check(y, input.len() - 1 + k, &state)?;
            if trace {
                phases.push(Phase::Recursive);
            }
            out.push(unscale(y, input.len() - 1 + k)?);
        }

        let trace = forget.map(|f| {
            let mut values = vec![T::zero(); f.len()];
            for s in 0..phases.len() {
                for l in 0..n_layers {
                    let src = (s * n_layers + l) * h;
                    let dst = (l * phases.len() + s) * h;
                    values[dst..dst + h].copy_from_slice(&f[src..src + h]);
                }
            }
            ForgetTrace {
                layers: n_layers,
                hidden_size: h,
                phases,
                values,
            }
        });
        Ok((out, trace))
    }
}

/// Whether a processed step consumed an observed reading or a fed-back prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Observed,
    Recursive,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Observed => "observed",
            Phase::Recursive => "recursive",
        }
    }
}

/// Forget-gate activations of one rollout, layers × steps × units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetTrace<T = f64> {
    pub layers: usize,
    pub hidden_size: usize,
    pub phases: Vec<Phase>,
    /// Layer-major: `values[(layer * steps + step) * hidden_size + unit]`.
    pub values: Vec<T>,
}

impl<T: Real> ForgetTrace<T> {
    pub fn steps(&self) -> usize {
        self.phases.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers, self.steps(), self.hidden_size)
    }

    pub fn get(&self, layer: usize, step: usize) -> &[T] {
        let h = self.hidden_size;
        let at = (layer * self.steps() + step) * h;
        &self.values[at..at + h]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,timestep,phase");
        for u in 0..self.hidden_size {
            let _ = write!(s, ",unit{u}");
        }
        s.push('\n');
        for l in 0..self.layers {
            for t in 0..self.steps() {
                let _ = write!(s, "{l},{t},{}", self.phases[t].as_str());
                for v in self.get(l, t) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Network plus the number of steps it forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmForecaster<T = f64> {
    pub net: LstmNetwork<T>,
    pub horizon: usize,
}

impl<T: Real> Forecaster<T> for LstmForecaster<T> {
    fn name(&self) -> &str {
        "lstm"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.net.rollout(input, self.horizon, false)?.0)
    }
}
