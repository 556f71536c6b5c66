use crate::error::Result;
use crate::scalar::Real;

/// A recursive multi-step glucose forecaster: input window in, `horizon` values out (mg/dL).
pub trait Forecaster<T: Real>: Sync {
    fn name(&self) -> &str;

    fn horizon(&self) -> usize;

    fn forecast(&self, input: &[T]) -> Result<Vec<T>>;
}
