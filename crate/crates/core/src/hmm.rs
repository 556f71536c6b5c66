//! Discrete hidden Markov model forecaster.
//!
//! Glucose is quantized into `M` uniform bins, a model is trained with
//! log-space Baum-Welch, the last state of an input window is found with
//! Viterbi, and the forecast greedily follows the most likely transitions,
//! decoding each state's most likely symbol back to its bin midpoint.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::scalar::{argmax, log_sum_exp, Real};

/// Uniform bins over `[lo, hi]`; values outside are clamped to the end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer<T = f64> {
    pub n_symbols: usize,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Quantizer<T> {
    pub fn new(n_symbols: usize, lo: T, hi: T) -> Result<Self> {
        if n_symbols == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidValue(format!(
                "quantizer needs n_symbols >= 1 and finite lo < hi, got {n_symbols}, [{lo}, {hi}]"
            )));
        }
        Ok(Self { n_symbols, lo, hi })
    }

    /// Bins spanning the observed range of `values`.
    pub fn fit(n_symbols: usize, values: impl IntoIterator<Item = T>) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Err(Error::InsufficientData("quantizer fit on no values".into()));
        }
        let hi = if hi > lo { hi } else { lo + T::one() };
        Self::new(n_symbols, lo, hi)
    }

    pub fn width(&self) -> T {
        (self.hi - self.lo) / T::of_usize(self.n_symbols)
    }

    pub fn edges(&self) -> Vec<T> {
        (0..=self.n_symbols)
            .map(|i| self.lo + self.width() * T::of_usize(i))
            .collect()
    }

    pub fn encode(&self, v: T) -> usize {
        let bin = ((v - self.lo) / self.width()).floor();
        if !(bin > T::zero()) {
            0
        } else {
            bin.to_usize().unwrap_or(usize::MAX).min(self.n_symbols - 1)
        }
    }

    pub fn decode(&self, s: usize) -> T {
        self.lo + self.width() * (T::of_usize(s.min(self.n_symbols - 1)) + T::of(0.5))
    }
}

/// Parameters are held as natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel<T = f64> {
    pub n_states: usize,
    pub n_symbols: usize,
    pub log_initial: Vec<T>,
    /// Row-major N×N.
    pub log_transition: Vec<T>,
    /// Row-major N×M.
    pub log_emission: Vec<T>,
    pub trained_iterations: usize,
    pub final_log_likelihood: T,
    /// Total log-likelihood at each E-step of training.
    pub log_likelihood_trace: Vec<T>,
}

fn normalize_rows_with_floor<T: Real>(m: &mut [T], cols: usize, floor: T) {
    for row in m.chunks_mut(cols) {
        let s: T = row.iter().copied().sum();
        if s > T::zero() {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = T::one() / T::of_usize(cols));
        }
        if floor > T::zero() && row.iter().any(|v| *v < floor) {
            row.iter_mut().for_each(|v| *v = v.max(floor));
            let s: T = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

impl<T: Real> HmmModel<T> {
    /// Builds a model from probability (not log) matrices; rows are validated.
    pub fn from_probabilities(initial: &[T], transition: &[T], emission: &[T], n_symbols: usize) -> Result<Self> {
        let n = initial.len();
        if n == 0 || n_symbols == 0 || transition.len() != n * n || emission.len() != n * n_symbols {
            return Err(Error::Shape(format!(
                "HMM with {n} states and {n_symbols} symbols: got pi {}, A {}, B {}",
                initial.len(),
                transition.len(),
                emission.len()
            )));
        }
        let tol = T::of(1e-9);
        let check = |xs: &[T], cols: usize, what: &str| -> Result<()> {
            for (r, row) in xs.chunks(cols).enumerate() {
                let s: T = row.iter().copied().sum();
                if row.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) || (s - T::one()).abs() > tol {
                    return Err(Error::InvalidValue(format!("{what} row {r} is not a probability vector")));
                }
            }
            Ok(())
        };
        check(initial, n, "initial")?;
        check(transition, n, "transition")?;
        check(emission, n_symbols, "emission")?;
        Ok(Self {
            n_states: n,
            n_symbols,
            log_initial: initial.iter().map(|p| p.ln()).collect(),
            log_transition: transition.iter().map(|p| p.ln()).collect(),
            log_emission: emission.iter().map(|p| p.ln()).collect(),
            trained_iterations: 0,
            final_log_likelihood: T::nan(),
            log_likelihood_trace: Vec::new(),
        })
    }

    fn random(n: usize, m: usize, rng: &mut ChaCha8Rng, floor: T) -> Self {
        let mut draw = |len: usize, cols: usize| -> Vec<T> {
            let mut v: Vec<T> = (0..len).map(|_| T::of(rng.gen_range(0.05..1.0))).collect();
            normalize_rows_with_floor(&mut v, cols, floor);
            v.iter().map(|p| p.ln()).collect()
        };
        let log_initial = draw(n, n);
        let log_transition = draw(n * n, n);
        let log_emission = draw(n * m, m);
        Self {
            n_states: n,
            n_symbols: m,
            log_initial,
            log_transition,
            log_emission,
            trained_iterations: 0,
            final_log_likelihood: T::nan(),
            log_likelihood_trace: Vec::new(),
        }
    }

    #[inline]
    fn a(&self, i: usize, j: usize) -> T {
        self.log_transition[i * self.n_states + j]
    }

    #[inline]
    fn b(&self, i: usize, s: usize) -> T {
        self.log_emission[i * self.n_symbols + s]
    }

    pub fn initial(&self) -> Vec<T> {
        self.log_initial.iter().map(|v| v.exp()).collect()
    }

    pub fn transition(&self) -> Vec<T> {
        self.log_transition.iter().map(|v| v.exp()).collect()
    }

    pub fn emission(&self) -> Vec<T> {
        self.log_emission.iter().map(|v| v.exp()).collect()
    }

    fn check_symbols(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::InsufficientData("empty observation sequence".into()));
        }
        if let Some(s) = obs.iter().find(|&&s| s >= self.n_symbols) {
            return Err(Error::InvalidValue(format!("symbol {s} >= {} symbols", self.n_symbols)));
        }
        Ok(())
    }

    /// Log forward variables (T×N, row-major) and the sequence log-likelihood.
    pub fn forward(&self, obs: &[usize]) -> Result<(Vec<T>, T)> {
        self.check_symbols(obs)?;
        let n = self.n_states;
        let mut alpha = vec![T::zero(); obs.len() * n];
        for i in 0..n {
            alpha[i] = self.log_initial[i] + self.b(i, obs[0]);
        }
        let mut tmp = vec![T::zero(); n];
        for t in 1..obs.len() {
            for j in 0..n {
                for (i, v) in tmp.iter_mut().enumerate() {
                    *v = alpha[(t - 1) * n + i] + self.a(i, j);
                }
                alpha[t * n + j] = log_sum_exp(&tmp) + self.b(j, obs[t]);
            }
        }
        let ll = log_sum_exp(&alpha[(obs.len() - 1) * n..]);
        Ok((alpha, ll))
    }

    /// Log backward variables (T×N) and the log-likelihood recovered from them.
    pub fn backward(&self, obs: &[usize]) -> Result<(Vec<T>, T)> {
        self.check_symbols(obs)?;
        let n = self.n_states;
        let len = obs.len();
        let mut beta = vec![T::zero(); len * n];
        let mut tmp = vec![T::zero(); n];
        for t in (0..len - 1).rev() {
            for i in 0..n {
                for (j, v) in tmp.iter_mut().enumerate() {
                    *v = self.a(i, j) + self.b(j, obs[t + 1]) + beta[(t + 1) * n + j];
                }
                beta[t * n + i] = log_sum_exp(&tmp);
            }
        }
        for (i, v) in tmp.iter_mut().enumerate() {
            *v = self.log_initial[i] + self.b(i, obs[0]) + beta[i];
        }
        Ok((beta, log_sum_exp(&tmp)))
    }

    pub fn log_likelihood(&self, obs: &[usize]) -> Result<T> {
        Ok(self.forward(obs)?.1)
    }
}

struct Counts<T> {
    initial: Vec<T>,
    transition: Vec<T>,
    emission: Vec<T>,
    ll: T,
}

impl<T: Real> Counts<T> {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            initial: vec![T::zero(); n],
            transition: vec![T::zero(); n * n],
            emission: vec![T::zero(); n * m],
            ll: T::zero(),
        }
    }

    fn add(&mut self, other: &Self) {
        let acc = |a: &mut [T], b: &[T]| a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        acc(&mut self.initial, &other.initial);
        acc(&mut self.transition, &other.transition);
        acc(&mut self.emission, &other.emission);
        self.ll += other.ll;
    }
}

fn expected_counts<T: Real>(model: &HmmModel<T>, obs: &[usize], into: &mut Counts<T>) -> Result<()> {
    let (n, len) = (model.n_states, obs.len());
    let (alpha, ll) = model.forward(obs)?;
    let (beta, _) = model.backward(obs)?;
    if !ll.is_finite() {
        return Err(Error::Numeric("sequence has zero likelihood".into()));
    }
    for t in 0..len {
        for i in 0..n {
            let g = (alpha[t * n + i] + beta[t * n + i] - ll).exp();
            if t == 0 {
                into.initial[i] += g;
            }
            into.emission[i * model.n_symbols + obs[t]] += g;
        }
    }
    for t in 0..len.saturating_sub(1) {
        let o = obs[t + 1];
        for j in 0..n {
            let right = model.b(j, o) + beta[(t + 1) * n + j] - ll;
            for i in 0..n {
                into.transition[i * n + j] += (alpha[t * n + i] + model.a(i, j) + right).exp();
            }
        }
    }
    into.ll += ll;
    Ok(())
}

/// Sequences per reduction chunk; fixed so the summation order does not depend
/// on the number of worker threads.
const CHUNK: usize = 32;

fn e_step<T: Real>(model: &HmmModel<T>, seqs: &[Vec<usize>]) -> Result<Counts<T>> {
    let (n, m) = (model.n_states, model.n_symbols);
    let partial: Vec<Counts<T>> = seqs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = Counts::zeros(n, m);
            for s in chunk {
                expected_counts(model, s, &mut c)?;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = Counts::zeros(n, m);
    for c in &partial {
        total.add(c);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Minimum probability after each M-step, rows renormalized.
    pub floor: f64,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-6,
            seed: 42,
            floor: 1e-10,
        }
    }
}

/// Unsupervised EM training from a seeded random row-stochastic start.
/// Stops after `max_iter` M-steps or when the log-likelihood gain drops below `tol`.
pub fn baum_welch<T: Real>(seqs: &[Vec<usize>], n_states: usize, n_symbols: usize, opts: &BaumWelchOptions) -> Result<HmmModel<T>> {
    if seqs.is_empty() || seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::InsufficientData("Baum-Welch needs at least one non-empty sequence".into()));
    }
    if n_states == 0 || n_symbols == 0 {
        return Err(Error::Config("HMM needs at least one state and one symbol".into()));
    }
    let seqs: Vec<Vec<usize>> = seqs.iter().filter(|s| !s.is_empty()).cloned().collect();
    if let Some(s) = seqs.iter().flatten().find(|&&s| s >= n_symbols) {
        return Err(Error::InvalidValue(format!("symbol {s} >= {n_symbols} symbols")));
    }
    let floor = T::of(opts.floor);
    let tol = T::of(opts.tol);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = HmmModel::<T>::random(n_states, n_symbols, &mut rng, floor);
    let mut trace: Vec<T> = Vec::new();
    let mut iterations = 0;

    loop {
        let counts = e_step(&model, &seqs)?;
        let gain_ok = trace.last().is_none_or(|prev| counts.ll - *prev >= tol);
        trace.push(counts.ll);
        if !gain_ok || iterations >= opts.max_iter {
            break;
        }
        let mut initial = counts.initial;
        let mut transition = counts.transition;
        let mut emission = counts.emission;
        normalize_rows_with_floor(&mut initial, n_states, floor);
        normalize_rows_with_floor(&mut transition, n_states, floor);
        normalize_rows_with_floor(&mut emission, n_symbols, floor);
        model.log_initial = initial.iter().map(|p| p.ln()).collect();
        model.log_transition = transition.iter().map(|p| p.ln()).collect();
        model.log_emission = emission.iter().map(|p| p.ln()).collect();
        iterations += 1;
    }
    model.trained_iterations = iterations;
    model.final_log_likelihood = *trace.last().unwrap();
    model.log_likelihood_trace = trace;
    Ok(model)
}

/// Most likely state path and its joint log-probability. Ties resolve to the
/// lowest state index.
pub fn viterbi<T: Real>(model: &HmmModel<T>, obs: &[usize]) -> Result<(Vec<usize>, T)> {
    model.check_symbols(obs)?;
    let n = model.n_states;
    let len = obs.len();
    let mut score: Vec<T> = (0..n).map(|i| model.log_initial[i] + model.b(i, obs[0])).collect();
    let mut back = vec![0usize; len * n];
    let mut next = vec![T::zero(); n];
    for t in 1..len {
        for j in 0..n {
            let mut best = 0;
            let mut best_v = score[0] + model.a(0, j);
            for i in 1..n {
                let v = score[i] + model.a(i, j);
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            back[t * n + j] = best;
            next[j] = best_v + model.b(j, obs[t]);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let last = argmax(&score);
    let log_prob = score[last];
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * n + path[t]];
    }
    Ok((path, log_prob))
}

/// Greedy recursive forecast: Viterbi end state, then `horizon` argmax
/// transitions, each decoded through its argmax emission.
pub fn hmm_forecast<T: Real>(model: &HmmModel<T>, quantizer: &Quantizer<T>, input: &[T], horizon: usize) -> Result<Vec<T>> {
    if model.n_symbols != quantizer.n_symbols {
        return Err(Error::Shape(format!(
            "model has {} symbols, quantizer {}",
            model.n_symbols, quantizer.n_symbols
        )));
    }
    let symbols: Vec<usize> = input.iter().map(|v| quantizer.encode(*v)).collect();
    let (path, _) = viterbi(model, &symbols)?;
    let mut state = *path.last().unwrap();
    let n = model.n_states;
    let m = model.n_symbols;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        state = argmax(&model.log_transition[state * n..(state + 1) * n]);
        let symbol = argmax(&model.log_emission[state * m..(state + 1) * m]);
        out.push(quantizer.decode(symbol));
    }
    Ok(out)
}

/// Trained model plus the quantizer it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmForecaster<T = f64> {
    pub model: HmmModel<T>,
    pub quantizer: Quantizer<T>,
    pub horizon: usize,
}

impl<T: Real> Forecaster<T> for HmmForecaster<T> {
    fn name(&self) -> &str {
        "hmm"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, input: &[T]) -> Result<Vec<T>> {
        hmm_forecast(&self.model, &self.quantizer, input, self.horizon)
    }
}

#[derive(Serialize, Deserialize)]
struct HmmFile {
    format: String,
    version: u32,
    n_states: usize,
    n_symbols: usize,
    horizon: usize,
    quantizer: Quantizer<f64>,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
    trained_iterations: usize,
    final_log_likelihood: Option<f64>,
}

const HMM_FORMAT: &str = "glyco-hmm";

impl<T: Real> HmmForecaster<T> {
    pub fn to_json(&self) -> Result<String> {
        let f = |xs: &[T]| xs.iter().map(|v| v.exp().as_f64()).collect::<Vec<_>>();
        let m = &self.model;
        let ll = m.final_log_likelihood.as_f64();
        let file = HmmFile {
            format: HMM_FORMAT.into(),
            version: 1,
            n_states: m.n_states,
            n_symbols: m.n_symbols,
            horizon: self.horizon,
            quantizer: Quantizer {
                n_symbols: self.quantizer.n_symbols,
                lo: self.quantizer.lo.as_f64(),
                hi: self.quantizer.hi.as_f64(),
            },
            initial: f(&m.log_initial),
            transition: m.log_transition.chunks(m.n_states).map(f).collect(),
            emission: m.log_emission.chunks(m.n_symbols).map(f).collect(),
            trained_iterations: m.trained_iterations,
            final_log_likelihood: ll.is_finite().then_some(ll),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HmmFile = serde_json::from_str(text)?;
        if file.format != HMM_FORMAT || file.version != 1 {
            return Err(Error::Format(format!("not a {HMM_FORMAT} v1 file")));
        }
        if file.transition.len() != file.n_states
            || file.emission.len() != file.n_states
            || file.transition.iter().any(|r| r.len() != file.n_states)
            || file.emission.iter().any(|r| r.len() != file.n_symbols)
        {
            return Err(Error::Shape("HMM matrices do not match declared sizes".into()));
        }
        let conv = |xs: &[f64]| xs.iter().map(|v| T::of(*v)).collect::<Vec<T>>();
        let transition: Vec<f64> = file.transition.concat();
        let emission: Vec<f64> = file.emission.concat();
        let mut model = HmmModel::from_probabilities(&conv(&file.initial), &conv(&transition), &conv(&emission), file.n_symbols)?;
        model.trained_iterations = file.trained_iterations;
        model.final_log_likelihood = file.final_log_likelihood.map_or(T::nan(), T::of);
        let q = file.quantizer;
        Ok(Self {
            model,
            quantizer: Quantizer::new(q.n_symbols, T::of(q.lo), T::of(q.hi))?,
            horizon: file.horizon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
