use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, LossMode, LstmNetwork};
use crate::error::{Error, Result};
use crate::pipeline::Example;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Size of the fixed random test sample scored after every epoch.
    pub heuristic_test_n: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
    pub mode: LossMode,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 128,
            lr: 0.001,
            heuristic_test_n: 1000,
            seed: 42,
            clip: Some(5.0),
            mode: LossMode::Recursive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize, lr: T) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }

    /// One bias-corrected update of `params` against `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t as i32);
        let c2 = one - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (one - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (one - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-example MSE over the epoch, in scaled units.
    pub train_loss: f64,
    /// `sqrt(train_loss)` mapped back to mg/dL.
    pub train_rmse_mgdl: f64,
    /// RMSE (mg/dL) on the fixed test sample after the epoch; `None` without test data.
    pub heuristic_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub stats: EpochStats,
    pub net: LstmNetwork<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun<T = f64> {
    pub checkpoints: Vec<Checkpoint<T>>,
    /// Index into `checkpoints` of the lowest heuristic RMSE (earliest on ties);
    /// the last epoch when there was no test data.
    pub best: usize,
    /// Test examples making up the heuristic sample, ascending.
    pub heuristic_sample: Vec<usize>,
}

impl<T: Real> TrainingRun<T> {
    pub fn best_net(&self) -> &LstmNetwork<T> {
        &self.checkpoints[self.best].net
    }

    pub fn curve(&self) -> Vec<EpochStats> {
        self.checkpoints.iter().map(|c| c.stats).collect()
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_rmse_mgdl,heuristic_rmse\n");
        for c in self.curve() {
            let h = c.heuristic_rmse.map_or(String::new(), |v| v.to_string());
            s.push_str(&format!("{},{},{},{}\n", c.epoch, c.train_loss, c.train_rmse_mgdl, h));
        }
        s
    }
}

/// Examples per work unit in the gradient reduction. Fixed, so the summation
/// order (and therefore every bit of the result) is independent of the
/// number of threads.
const GRAD_CHUNK: usize = 8;

fn to_t<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|v| T::of(*v)).collect()
}

fn batch_gradient<T: Real>(net: &LstmNetwork<T>, batch: &[&Example], mode: LossMode) -> Result<(T, Vec<T>)> {
    let p = net.param_count();
    let partial: Vec<(T, Vec<T>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut loss = T::zero();
            let mut grad = vec![T::zero(); p];
            for e in chunk {
                let (l, g) = loss_and_gradients(net, &to_t::<T>(&e.input), &to_t::<T>(&e.target), mode)?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); p];
    for (l, g) in &partial {
        loss += *l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
    }
    Ok((loss, grad))
}

/// Root mean squared error (mg/dL) of recursive forecasts over `examples`.
pub(crate) fn forecast_rmse<T: Real>(net: &LstmNetwork<T>, examples: &[&Example]) -> Result<f64> {
    let sums: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|e| {
            let (pred, _) = net.rollout(&to_t::<T>(&e.input), e.target.len(), false)?;
            let sq: f64 = pred.iter().zip(&e.target).map(|(p, t)| (p.as_f64() - t).powi(2)).sum();
            Ok((sq, e.target.len()))
        })
        .collect::<Result<_>>()?;
    let (sq, n) = sums.iter().fold((0.0, 0), |(a, b), (s, k)| (a + s, b + k));
    if n == 0 {
        return Err(Error::InsufficientData("no forecast points".into()));
    }
    Ok((sq / n as f64).sqrt())
}

/// Mini-batch Adam training with a checkpoint after every epoch.
///
/// Each epoch shuffles the training examples with a generator derived from
/// `opts.seed` and the epoch number, averages gradients over each batch,
/// optionally clips the global norm, and applies one Adam step per batch.
pub fn train<T: Real>(mut net: LstmNetwork<T>, train_set: &[Example], test_set: &[Example], opts: &TrainOptions) -> Result<TrainingRun<T>> {
    if train_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if opts.batch == 0 || opts.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    if !(opts.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", opts.lr)));
    }
    net.validate()?;

    let mut sample_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    sample_rng.set_stream(1);
    let mut heuristic_sample = if test_set.len() <= opts.heuristic_test_n {
        (0..test_set.len()).collect::<Vec<_>>()
    } else {
        sample(&mut sample_rng, test_set.len(), opts.heuristic_test_n).into_vec()
    };
    heuristic_sample.sort_unstable();
    let heuristic: Vec<&Example> = heuristic_sample.iter().map(|&i| &test_set[i]).collect();

    let mut adam = AdamState::new(net.param_count(), T::of(opts.lr));
    let mut params = net.params();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut checkpoints = Vec::with_capacity(opts.epochs);
    let span = net.scaler.span().as_f64();

    for epoch in 1..=opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(1000 + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for idx in order.chunks(opts.batch) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grad) = batch_gradient(&net, &batch, opts.mode)?;
            epoch_loss += loss.as_f64();
            let scale = T::one() / T::of_usize(batch.len());
            grad.iter_mut().for_each(|g| *g *= scale);
            if let Some(clip) = opts.clip {
                let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
                let clip = T::of(clip);
                if norm > clip {
                    let k = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameter during epoch {epoch}")));
            }
            net.set_params(&params)?;
        }

        let train_loss = epoch_loss / train_set.len() as f64;
        let heuristic_rmse = if heuristic.is_empty() {
            None
        } else {
            Some(forecast_rmse(&net, &heuristic)?)
        };
        checkpoints.push(Checkpoint {
            stats: EpochStats {
                epoch,
                train_loss,
                train_rmse_mgdl: train_loss.sqrt() * span,
                heuristic_rmse,
            },
            net: net.clone(),
        });
    }

    let best = if heuristic.is_empty() {
        checkpoints.len() - 1
    } else {
        let mut best = 0;
        for (i, c) in checkpoints.iter().enumerate() {
            if c.stats.heuristic_rmse < checkpoints[best].stats.heuristic_rmse {
                best = i;
            }
        }
        best
    };
    Ok(TrainingRun {
        checkpoints,
        best,
        heuristic_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoid_examples(n: usize, seed: u64) -> Vec<Example> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp: f64 = rng.gen_range(30.0..80.0);
                let v = |t: usize| 180.0 + amp * (phase + t as f64 * 0.3).sin();
                Example {
                    input: (0..24).map(v).collect(),
                    target: (24..27).map(v).collect(),
                    source_sequence_id: k,
                    offset: 0,
                }
            })
            .collect()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = AdamState::<f64>::new(3, 0.001);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut p, &[2.0, -0.5, 0.0]);
        assert!((p[0] - 0.999).abs() < 1e-9);
        assert!((p[1] - 1.001).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
        assert!(adam.v.iter().all(|v| *v >= 0.0));
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = AdamState::<f64>::new(2, 0.05);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn loss_decreases_on_sinusoids() {
        let data = sinusoid_examples(200, 1);
        let test = sinusoid_examples(40, 2);
        let opts = TrainOptions {
            epochs: 5,
            batch: 16,
            lr: 0.01,
            heuristic_test_n: 20,
            ..Default::default()
        };
        let run = train(LstmNetwork::<f64>::new(4, 1, 3), &data, &test, &opts).unwrap();
        let curve = run.curve();
        assert_eq!(curve.len(), 5);
        assert!(curve[4].train_loss < curve[0].train_loss, "{curve:?}");
        assert_eq!(run.heuristic_sample.len(), 20);
        let best = run.checkpoints[run.best].stats.heuristic_rmse.unwrap();
        assert!(curve.iter().all(|c| c.heuristic_rmse.unwrap() >= best));
        assert!(curve[..run.best].iter().all(|c| c.heuristic_rmse.unwrap() > best));
        assert!(run.curve_csv().starts_with("epoch,train_loss,train_rmse_mgdl,heuristic_rmse\n1,"));
    }

    #[test]
    fn training_is_deterministic() {
        let data = sinusoid_examples(50, 4);
        let opts = TrainOptions {
            epochs: 2,
            batch: 8,
            heuristic_test_n: 10,
            ..Default::default()
        };
        let a = train(LstmNetwork::<f64>::new(3, 2, 1), &data, &data, &opts).unwrap();
        let b = train(LstmNetwork::<f64>::new(3, 2, 1), &data, &data, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let net = LstmNetwork::<f64>::new(3, 1, 1);
        assert!(train(net.clone(), &[], &[], &TrainOptions::default()).is_err());
        let data = sinusoid_examples(4, 4);
        let bad = TrainOptions { batch: 0, ..Default::default() };
        assert!(train(net.clone(), &data, &[], &bad).is_err());
        let run = train(net, &data, &[], &TrainOptions { epochs: 2, ..Default::default() }).unwrap();
        assert_eq!(run.best, 1);
        assert!(run.checkpoints[0].stats.heuristic_rmse.is_none());
    }
}
