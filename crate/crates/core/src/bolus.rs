//! Standard bolus calculator.
//!
//! Generic over any exact or floating numeric type, so the dose can be computed
//! in rationals when the inputs are exact.

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolusInputs<T> {
    /// Carbohydrate intake, g.
    pub cho: T,
    /// Carbohydrate-to-insulin ratio, g/U.
    pub cr: T,
    /// Measured glucose, mg/dL.
    pub g_c: T,
    /// Target glucose, mg/dL.
    pub g_t: T,
    /// Correction factor, mg/dL per U.
    pub cf: T,
    /// Physiological state multiplier (< 1 with raised insulin sensitivity).
    pub ps: T,
    /// Insulin on board, U.
    pub iob: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bolus<T> {
    /// Insulin units. Negative values are returned as computed.
    pub units: T,
    /// Set when the computed dose is negative.
    pub no_bolus_needed: bool,
}

/// `cho / cr + (g_c - g_t) / cf - ps * iob`.
pub fn bolus<T: Num + Copy + PartialOrd>(x: &BolusInputs<T>) -> Result<Bolus<T>> {
    let zero = T::zero();
    if !(x.cr > zero) || !(x.cf > zero) || !(x.ps > zero) {
        return Err(Error::Domain("cr, cf and ps must be positive".into()));
    }
    if !(x.cho >= zero) || !(x.iob >= zero) {
        return Err(Error::Domain("cho and iob must be non-negative".into()));
    }
    let units = x.cho / x.cr + (x.g_c - x.g_t) / x.cf - x.ps * x.iob;
    Ok(Bolus {
        units,
        no_bolus_needed: units < zero,
    })
}
