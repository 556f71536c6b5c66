//! Patient feature statistics and Gaussian-mixture cohort clustering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, log_sum_exp, Real};
use crate::units::PatientRecord;

/// Patients × features, row-major, no missing entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix<T = f64> {
    pub patient_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<T>,
    pub normalized: bool,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(patient_ids: Vec<String>, feature_names: Vec<String>, values: Vec<T>) -> Result<Self> {
        if values.len() != patient_ids.len() * feature_names.len() {
            return Err(Error::Shape(format!(
                "{} values for {} patients x {} features",
                values.len(),
                patient_ids.len(),
                feature_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite feature value".into()));
        }
        Ok(Self {
            patient_ids,
            feature_names,
            values,
            normalized: false,
        })
    }

    /// Builds the matrix from the selected features. Patients missing any of them
    /// are left out; the second return value counts them.
    pub fn from_patients(patients: &[PatientRecord], features: &[&str]) -> Result<(Self, usize)> {
        for f in features {
            if !PatientRecord::FEATURES.contains(f) {
                return Err(Error::Config(format!("unknown patient feature {f:?}")));
            }
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut excluded = 0;
        for p in patients {
            let row: Option<Vec<f64>> = features.iter().map(|f| p.feature(f)).collect();
            match row {
                Some(r) => {
                    ids.push(p.patient_id.clone());
                    values.extend(r.into_iter().map(T::of));
                }
                None => excluded += 1,
            }
        }
        let m = Self::new(ids, features.iter().map(|s| s.to_string()).collect(), values)?;
        Ok((m, excluded))
    }

    pub fn rows(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column_means(&self) -> Vec<T> {
        let (n, d) = (self.rows(), self.cols());
        let mut m = vec![T::zero(); d];
        for i in 0..n {
            for (j, v) in self.row(i).iter().enumerate() {
                m[j] += *v;
            }
        }
        m.iter().map(|&s| s / T::of_usize(n.max(1))).collect()
    }

    /// Population variance of each column.
    pub fn column_variances(&self) -> Vec<T> {
        let (n, d) = (self.rows(), self.cols());
        let mean = self.column_means();
        let mut var = vec![T::zero(); d];
        for i in 0..n {
            for (j, v) in self.row(i).iter().enumerate() {
                var[j] += (*v - mean[j]).powi(2);
            }
        }
        var.iter().map(|&s| s / T::of_usize(n.max(1))).collect()
    }

    /// z-score each column (population s.d.).
    pub fn normalize(&self) -> Result<Self> {
        if self.rows() < 2 {
            return Err(Error::InsufficientData("normalization needs at least 2 rows".into()));
        }
        let mean = self.column_means();
        let sd: Vec<T> = self.column_variances().iter().map(|v| v.sqrt()).collect();
        if let Some(j) = sd.iter().position(|s| *s <= T::zero()) {
            return Err(Error::InvalidValue(format!(
                "feature {:?} has zero variance",
                self.feature_names[j]
            )));
        }
        let d = self.cols();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| (*v - mean[k % d]) / sd[k % d])
            .collect();
        Ok(Self {
            values,
            normalized: true,
            ..self.clone()
        })
    }
}

/// d×d population covariance of the columns (row-major).
pub fn covariance_matrix<T: Real>(m: &FeatureMatrix<T>) -> Result<Vec<T>> {
    let (n, d) = (m.rows(), m.cols());
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mean = m.column_means();
    let mut cov = vec![T::zero(); d * d];
    for i in 0..n {
        let r = m.row(i);
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let nn = T::of_usize(n);
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= nn;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    Ok(cov)
}

/// Pearson product-moment correlation matrix.
pub fn correlation_matrix<T: Real>(m: &FeatureMatrix<T>) -> Result<Vec<T>> {
    let d = m.cols();
    let cov = covariance_matrix(m)?;
    let sd: Vec<T> = (0..d).map(|j| cov[j * d + j].sqrt()).collect();
    if let Some(j) = sd.iter().position(|s| *s <= T::zero()) {
        return Err(Error::InvalidValue(format!(
            "feature {:?} has zero variance, correlation undefined",
            m.feature_names[j]
        )));
    }
    let mut corr = vec![T::zero(); d * d];
    for a in 0..d {
        for b in 0..d {
            corr[a * d + b] = if a == b {
                T::one()
            } else {
                (cov[a * d + b] / (sd[a] * sd[b])).max(-T::one()).min(T::one())
            };
        }
    }
    Ok(corr)
}

/// Names of features whose (population) variance exceeds `tau`, in column order.
pub fn variance_threshold<T: Real>(m: &FeatureMatrix<T>, tau: T) -> Vec<String> {
    m.column_variances()
        .iter()
        .zip(&m.feature_names)
        .filter(|(v, _)| **v > tau)
        .map(|(_, n)| n.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Added to every covariance diagonal after each M-step.
    pub reg_covar: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            k: 3,
            n_init: 20,
            max_iter: 200,
            tol: 1e-6,
            seed: 42,
            reg_covar: 1e-6,
        }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel<T = f64> {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    /// One row-major d×d matrix per component.
    pub covariances: Vec<Vec<T>>,
    /// Total log-likelihood of the fitted data.
    pub final_log_likelihood: T,
    /// `final_log_likelihood / n`.
    pub mean_log_likelihood: T,
    pub n_iter: usize,
    pub converged: bool,
    /// Index of the winning initialization.
    pub best_init: usize,
    /// Log-likelihood before every M-step of the winning run, then after the last.
    pub log_likelihood_trace: Vec<T>,
    pub seed: u64,
    #[serde(skip)]
    chol: Vec<Vec<T>>,
}

/// Lower Cholesky factor of a symmetric positive definite matrix, `None` otherwise.
pub fn cholesky<T: Real>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn gaussian_log_pdf<T: Real>(x: &[T], mean: &[T], chol: &[T]) -> T {
    let d = x.len();
    let mut z = vec![T::zero(); d];
    let mut log_det = T::zero();
    for i in 0..d {
        let mut s = x[i] - mean[i];
        for k in 0..i {
            s -= chol[i * d + k] * z[k];
        }
        z[i] = s / chol[i * d + i];
        log_det += chol[i * d + i].ln();
    }
    let maha: T = z.iter().map(|v| *v * *v).sum();
    let two_pi = T::of(2.0 * std::f64::consts::PI);
    -(T::of_usize(d) * two_pi.ln() + maha) / T::of(2.0) - log_det
}

struct EmRun<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    covs: Vec<Vec<T>>,
    chol: Vec<Vec<T>>,
    trace: Vec<T>,
    converged: bool,
}

/// Per-point joint log densities `log w_j + log N(x | mu_j, S_j)`.
fn joint_log<T: Real>(x: &[T], weights: &[T], means: &[Vec<T>], chol: &[Vec<T>]) -> Vec<T> {
    (0..weights.len())
        .map(|j| weights[j].ln() + gaussian_log_pdf(x, &means[j], &chol[j]))
        .collect()
}

fn run_em<T: Real>(data: &[T], n: usize, d: usize, init_means: Vec<Vec<T>>, base_cov: &[T], opts: &GmmOptions) -> Option<EmRun<T>> {
    let k = opts.k;
    let reg = T::of(opts.reg_covar);
    let mut weights = vec![T::one() / T::of_usize(k); k];
    let mut means = init_means;
    let mut covs = vec![base_cov.to_vec(); k];
    let mut chol: Vec<Vec<T>> = covs.iter().map(|c| cholesky(c, d)).collect::<Option<_>>()?;
    let mut trace = Vec::new();
    let mut resp = vec![T::zero(); n * k];
    let mut converged = false;
    let tol = T::of(opts.tol);

    for _ in 0..opts.max_iter {
        // E-step
        let mut ll = T::zero();
        for i in 0..n {
            let lj = joint_log(&data[i * d..(i + 1) * d], &weights, &means, &chol);
            let norm = log_sum_exp(&lj);
            ll += norm;
            for j in 0..k {
                resp[i * k + j] = (lj[j] - norm).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        if let Some(prev) = trace.last() {
            if ll - *prev < tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        // M-step
        for j in 0..k {
            let nj: T = (0..n).map(|i| resp[i * k + j]).sum();
            if !(nj > T::of(1e-10)) {
                return None;
            }
            weights[j] = nj / T::of_usize(n);
            let mut mu = vec![T::zero(); d];
            for i in 0..n {
                let r = resp[i * k + j];
                for a in 0..d {
                    mu[a] += r * data[i * d + a];
                }
            }
            for v in mu.iter_mut() {
                *v /= nj;
            }
            let mut cov = vec![T::zero(); d * d];
            for i in 0..n {
                let r = resp[i * k + j];
                let x = &data[i * d..(i + 1) * d];
                for a in 0..d {
                    let da = x[a] - mu[a];
                    for b in a..d {
                        cov[a * d + b] += r * da * (x[b] - mu[b]);
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    cov[a * d + b] /= nj;
                    cov[b * d + a] = cov[a * d + b];
                }
                cov[a * d + a] += reg;
            }
            chol[j] = cholesky(&cov, d)?;
            means[j] = mu;
            covs[j] = cov;
        }
    }
    if !converged {
        let ll: T = (0..n)
            .map(|i| log_sum_exp(&joint_log(&data[i * d..(i + 1) * d], &weights, &means, &chol)))
            .sum();
        trace.push(ll);
    }
    Some(EmRun {
        weights,
        means,
        covs,
        chol,
        trace,
        converged,
    })
}

/// Fits a `k`-component mixture by EM from `n_init` seeded starts and keeps the
/// run with the highest final log-likelihood (ties: lowest init index).
///
/// Each start takes `k` distinct data points as means, the data covariance for
/// every component and uniform weights. A start whose component collapses is
/// redrawn up to three times before it counts as failed.
pub fn gmm_fit<T: Real>(m: &FeatureMatrix<T>, opts: &GmmOptions) -> Result<GmmModel<T>> {
    let (n, d, k) = (m.rows(), m.cols(), opts.k);
    if k == 0 || d == 0 || opts.n_init == 0 {
        return Err(Error::Config("gmm needs k >= 1, d >= 1, n_init >= 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} rows for {k} components")));
    }
    let mut base_cov = if n >= 2 {
        covariance_matrix(m)?
    } else {
        vec![T::zero(); d * d]
    };
    for a in 0..d {
        base_cov[a * d + a] += T::of(opts.reg_covar);
    }
    let data = &m.values;

    let runs: Vec<Option<EmRun<T>>> = (0..opts.n_init)
        .into_par_iter()
        .map(|init| {
            (0..4u64).find_map(|attempt| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(init as u64 * 4 + attempt);
                let picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
                let means = picks.iter().map(|&i| m.row(i).to_vec()).collect();
                run_em(data, n, d, means, &base_cov, opts)
            })
        })
        .collect();

    let (best_init, best) = runs
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .fold(None::<(usize, EmRun<T>)>, |acc, (i, r)| match acc {
            Some((bi, br)) if *br.trace.last().unwrap() >= *r.trace.last().unwrap() => Some((bi, br)),
            _ => Some((i, r)),
        })
        .ok_or_else(|| Error::Numeric(format!("all {} GMM initializations degenerated", opts.n_init)))?;

    let ll = *best.trace.last().unwrap();
    Ok(GmmModel {
        k,
        dim: d,
        weights: best.weights,
        means: best.means,
        covariances: best.covs,
        final_log_likelihood: ll,
        mean_log_likelihood: ll / T::of_usize(n),
        n_iter: best.trace.len() - 1,
        converged: best.converged,
        best_init,
        log_likelihood_trace: best.trace,
        seed: opts.seed,
        chol: best.chol,
    })
}

impl<T: Real> GmmModel<T> {
    fn factors(&self) -> Result<Vec<Vec<T>>> {
        if self.chol.len() == self.k {
            return Ok(self.chol.clone());
        }
        self.covariances
            .iter()
            .map(|c| cholesky(c, self.dim))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Numeric("covariance not positive definite".into()))
    }

    /// Posterior responsibilities per row, each summing to 1.
    pub fn responsibilities(&self, m: &FeatureMatrix<T>) -> Result<Vec<Vec<T>>> {
        if m.cols() != self.dim {
            return Err(Error::Shape(format!("model has {} dims, data has {}", self.dim, m.cols())));
        }
        let chol = self.factors()?;
        Ok((0..m.rows())
            .map(|i| {
                let lj = joint_log(m.row(i), &self.weights, &self.means, &chol);
                let norm = log_sum_exp(&lj);
                lj.iter().map(|l| (*l - norm).exp()).collect()
            })
            .collect())
    }
}

/// Most probable component per row; ties go to the lowest component index.
pub fn gmm_assign<T: Real>(model: &GmmModel<T>, m: &FeatureMatrix<T>) -> Result<Vec<usize>> {
    if m.cols() != model.dim {
        return Err(Error::Shape(format!("model has {} dims, data has {}", model.dim, m.cols())));
    }
    let chol = model.factors()?;
    Ok((0..m.rows())
        .map(|i| argmax(&joint_log(m.row(i), &model.weights, &model.means, &chol)))
        .collect())
}
