//! Heuristic forecasters: copy-last and an OLS line through the recent inputs.

use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::scalar::Real;

pub fn copy_last<T: Real>(input: &[T], horizon: usize) -> Result<Vec<T>> {
    let last = *input
        .last()
        .ok_or_else(|| Error::InsufficientData("copy_last needs a non-empty input".into()))?;
    Ok(vec![last; horizon])
}

/// Closed-form least squares `v = intercept + slope * index` over the last
/// `fit_window` inputs, with indices counted from the start of `input`.
pub fn ols_line<T: Real>(input: &[T], fit_window: usize) -> Result<(T, T)> {
    if fit_window < 2 || fit_window > input.len() {
        return Err(Error::InvalidValue(format!(
            "fit window {fit_window} must be in [2, {}]",
            input.len()
        )));
    }
    let start = input.len() - fit_window;
    let n = T::of_usize(fit_window);
    let xs = || (start..input.len()).map(T::of_usize);
    let x_mean = xs().sum::<T>() / n;
    let y_mean = input[start..].iter().copied().sum::<T>() / n;
    let sxx: T = xs().map(|x| (x - x_mean).powi(2)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::Numeric("degenerate regression: all indices identical".into()));
    }
    let sxy: T = xs().zip(&input[start..]).map(|(x, &y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    Ok((y_mean - slope * x_mean, slope))
}

pub fn linreg_forecast<T: Real>(input: &[T], fit_window: usize, horizon: usize) -> Result<Vec<T>> {
    let (intercept, slope) = ols_line(input, fit_window)?;
    let n = input.len();
    Ok((n..n + horizon).map(|i| intercept + slope * T::of_usize(i)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct CopyLast {
    pub horizon: usize,
}

impl<T: Real> Forecaster<T> for CopyLast {
    fn name(&self) -> &str {
        "copy_last"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, input: &[T]) -> Result<Vec<T>> {
        copy_last(input, self.horizon)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearRegression {
    pub fit_window: usize,
    pub horizon: usize,
}

impl<T: Real> Forecaster<T> for LinearRegression {
    fn name(&self) -> &str {
        "linreg"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, input: &[T]) -> Result<Vec<T>> {
        linreg_forecast(input, self.fit_window.min(input.len()), self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn copy_last_examples() {
        let mut input = vec![120.0_f64; 131];
        input.push(150.0);
        assert_eq!(copy_last(&input, 12).unwrap(), vec![150.0; 12]);
        assert_eq!(copy_last(&[100.0_f64; 132], 12).unwrap(), vec![100.0; 12]);
        assert!(copy_last::<f64>(&[], 12).is_err());
    }

    #[test]
    fn linreg_continues_exact_line() {
        let input: Vec<f64> = (0..132).map(|t| 2.0 * t as f64 + 5.0).collect();
        let out = linreg_forecast(&input, 132, 12).unwrap();
        for (k, v) in out.iter().enumerate() {
            let expected = 2.0 * (132 + k) as f64 + 5.0;
            assert!((v - expected).abs() < 1e-9);
        }
        assert_eq!(linreg_forecast(&[180.0_f64; 132], 132, 12).unwrap(), vec![180.0; 12]);
    }

    /// Independent OLS via the normal equations in raw sums.
    fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        ((sy - slope * sx) / n, slope)
    }

    #[test]
    fn linreg_matches_closed_form_oracle() {
        let mut input: Vec<f64> = (0..132).map(|t| t as f64).collect();
        input[131] += 1.0;
        let xs: Vec<f64> = (0..132).map(|t| t as f64).collect();
        let (b0, b1) = normal_equations(&xs, &input);
        let (a0, a1) = ols_line(&input, 132).unwrap();
        assert!((a0 - b0).abs() < 1e-9);
        assert!((a1 - b1).abs() < 1e-9);
        // exact rational: slope = 1 + 65.5 / 191653, intercept = 65.5 + 1/132 - 65.5 * slope
        assert!((a1 - 1.000_341_763_499_658_3).abs() < 1e-12, "{a1}");
        assert!((a0 + 0.014_809_751_651_856_915).abs() < 1e-9, "{a0}");
    }

    #[test]
    fn linreg_window_bounds() {
        let input = [1.0_f64, 2.0, 3.0];
        assert!(linreg_forecast(&input, 1, 2).is_err());
        assert!(linreg_forecast(&input, 4, 2).is_err());
        let out = linreg_forecast(&[9.0, 9.0, 1.0, 2.0], 2, 2).unwrap();
        assert_eq!(out, vec![3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn copy_last_ignores_history_order(mut xs in proptest::collection::vec(40.0_f64..400.0, 2..50)) {
            let a = copy_last(&xs, 12).unwrap();
            let n = xs.len();
            xs[..n - 1].reverse();
            prop_assert_eq!(a, copy_last(&xs, 12).unwrap());
        }

        #[test]
        fn linreg_is_affine_equivariant(
            xs in proptest::collection::vec(40.0_f64..400.0, 132),
            a in -3.0_f64..3.0,
            b in -100.0_f64..100.0,
        ) {
            let base = linreg_forecast(&xs, 132, 12).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let out = linreg_forecast(&moved, 132, 12).unwrap();
            for (p, q) in base.iter().zip(&out) {
                prop_assert!((a * p + b - q).abs() < 1e-7);
            }
        }

        #[test]
        fn baseline_second_differences_vanish(xs in proptest::collection::vec(40.0_f64..400.0, 132)) {
            for out in [copy_last(&xs, 12).unwrap(), linreg_forecast(&xs, 132, 12).unwrap()] {
                for w in out.windows(3) {
                    prop_assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-9);
                }
            }
        }
    }
}
