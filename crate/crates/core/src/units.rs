//! Shared domain types and glucose unit conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// mg/dL per mmol/L.
pub const MGDL_PER_MMOLL: f64 = 18.0;
/// Nominal sensor sampling interval in seconds.
pub const NOMINAL_STEP_S: i64 = 300;
/// Largest raw gap (seconds) still treated as one contiguous step.
pub const MAX_GAP_S: i64 = 900;
/// Upper physiological-plus-sensor bound for a single reading.
pub const MAX_READING_MGDL: f64 = 1000.0;

pub fn mgdl_to_mmoll<T: Real>(v: T) -> Result<T> {
    if !v.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite glucose {v}")));
    }
    Ok(v / T::of(MGDL_PER_MMOLL))
}

pub fn mmoll_to_mgdl<T: Real>(v: T) -> Result<T> {
    if !v.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite glucose {v}")));
    }
    Ok(v * T::of(MGDL_PER_MMOLL))
}

fn check_glucose(value: f64) -> Result<()> {
    if !(value > 0.0 && value <= MAX_READING_MGDL) {
        return Err(Error::InvalidValue(format!(
            "glucose {value} mg/dL outside (0, {MAX_READING_MGDL}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseReading {
    pub patient_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    /// mg/dL.
    pub value: f64,
}

impl GlucoseReading {
    pub fn new(patient_id: impl Into<String>, timestamp: i64, value: f64) -> Result<Self> {
        check_glucose(value)?;
        if timestamp <= 0 {
            return Err(Error::InvalidValue(format!("timestamp {timestamp} must be positive")));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            timestamp,
            value,
        })
    }
}

/// A gap-free run of readings for one patient, treated as uniform 5-minute steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContiguousSequence {
    pub patient_id: String,
    pub start_timestamp: i64,
    pub values: Vec<f64>,
}

impl ContiguousSequence {
    /// Builds a sequence from readings of one patient whose consecutive gaps are all
    /// positive and at most `max_gap` seconds.
    pub fn from_readings(readings: &[GlucoseReading], max_gap: i64) -> Result<Self> {
        let first = readings
            .first()
            .ok_or_else(|| Error::InsufficientData("empty sequence".into()))?;
        for pair in readings.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.patient_id != b.patient_id {
                return Err(Error::InvalidValue(format!(
                    "sequence mixes patients {} and {}",
                    a.patient_id, b.patient_id
                )));
            }
            let gap = b.timestamp - a.timestamp;
            if gap <= 0 || gap > max_gap {
                return Err(Error::InvalidValue(format!(
                    "gap of {gap} s at t={} outside (0, {max_gap}]",
                    b.timestamp
                )));
            }
        }
        for r in readings {
            check_glucose(r.value)?;
        }
        Ok(Self {
            patient_id: first.patient_id.clone(),
            start_timestamp: first.timestamp,
            values: readings.iter().map(|r| r.value).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Other,
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Sex::Female),
            "m" | "male" => Ok(Sex::Male),
            "o" | "other" => Ok(Sex::Other),
            other => Err(Error::Parse(format!("unknown sex {other:?}"))),
        }
    }
}

/// HbA1c with whatever unit label the source declared. Treated as dimensionless
/// in statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hba1c {
    pub value: f64,
    pub unit: String,
}

/// Static patient attributes. Missing fields stay `None`; nothing is imputed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: Option<f64>,
    pub weight_kg: Option<f64>,
    pub height_cm: Option<f64>,
    pub hba1c: Option<Hba1c>,
    pub annual_income_usd: Option<f64>,
    pub education_level: Option<i64>,
    pub sex: Option<Sex>,
}

impl PatientRecord {
    /// kg/m², when both weight and height are present.
    pub fn bmi(&self) -> Option<f64> {
        let (w, h) = (self.weight_kg?, self.height_cm?);
        let m = h / 100.0;
        Some(w / (m * m))
    }

    /// Numeric value of a named feature, `None` when missing or unknown.
    pub fn feature(&self, name: &str) -> Option<f64> {
        match name {
            "age" => self.age,
            "weight_kg" => self.weight_kg,
            "height_cm" => self.height_cm,
            "bmi" => self.bmi(),
            "hba1c" => self.hba1c.as_ref().map(|h| h.value),
            "annual_income_usd" => self.annual_income_usd,
            "education_level" => self.education_level.map(|e| e as f64),
            "sex" => self.sex.map(|s| match s {
                Sex::Female => 0.0,
                Sex::Male => 1.0,
                Sex::Other => 2.0,
            }),
            _ => None,
        }
    }

    pub const FEATURES: [&'static str; 8] = [
        "age",
        "weight_kg",
        "height_cm",
        "bmi",
        "hba1c",
        "annual_income_usd",
        "education_level",
        "sex",
    ];
}

/// A forecast and the readings it should have matched, in mg/dL.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPair<T = f64> {
    pub predicted: Vec<T>,
    pub reference: Vec<T>,
}

impl<T: Real> ForecastPair<T> {
    pub fn new(predicted: Vec<T>, reference: Vec<T>) -> Result<Self> {
        if predicted.len() != reference.len() {
            return Err(Error::Shape(format!(
                "predicted length {} != reference length {}",
                predicted.len(),
                reference.len()
            )));
        }
        if predicted.is_empty() {
            return Err(Error::Shape("empty forecast pair".into()));
        }
        Ok(Self {
            predicted,
            reference,
        })
    }

    pub fn with_horizon(predicted: Vec<T>, reference: Vec<T>, horizon: usize) -> Result<Self> {
        let pair = Self::new(predicted, reference)?;
        if pair.horizon() != horizon {
            return Err(Error::Shape(format!(
                "forecast length {} != horizon {horizon}",
                pair.horizon()
            )));
        }
        Ok(pair)
    }

    pub fn horizon(&self) -> usize {
        self.predicted.len()
    }
}
