use glyco::bolus::{bolus as compute, BolusInputs};
use glyco::units::mmoll_to_mgdl;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, clap::Args)]
pub struct BolusArgs {
    /// Carbohydrate intake, g.
    #[arg(long)]
    pub cho: f64,
    /// Carbohydrate-to-insulin ratio, g per unit.
    #[arg(long)]
    pub cr: f64,
    /// Measured glucose.
    #[arg(long)]
    pub gc: f64,
    /// Target glucose.
    #[arg(long)]
    pub gt: f64,
    /// Correction factor, glucose drop per unit.
    #[arg(long)]
    pub cf: f64,
    /// Physiological state multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub ps: f64,
    /// Insulin on board, units.
    #[arg(long, default_value_t = 0.0)]
    pub iob: f64,
    /// Glucose values and correction factor are in mmol/L instead of mg/dL.
    #[arg(long)]
    pub mmol: bool,
}

#[derive(Serialize)]
struct BolusLine {
    units: f64,
    no_bolus_needed: bool,
    advisory: &'static str,
}

/// Computes the dose and returns the JSON line printed on stdout.
pub fn bolus(args: &BolusArgs) -> CliResult<String> {
    let conv = |v: f64| if args.mmol { mmoll_to_mgdl(v) } else { Ok(v) };
    let inputs = BolusInputs {
        cho: args.cho,
        cr: args.cr,
        g_c: conv(args.gc)?,
        g_t: conv(args.gt)?,
        cf: conv(args.cf)?,
        ps: args.ps,
        iob: args.iob,
    };
    let b = compute(&inputs)?;
    let line = BolusLine {
        units: b.units,
        no_bolus_needed: b.no_bolus_needed,
        advisory: if b.no_bolus_needed {
            "computed dose is negative: no bolus needed"
        } else {
            "ok"
        },
    };
    Ok(serde_json::to_string(&line)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(ps: f64, mmol: bool) -> BolusArgs {
        BolusArgs {
            cho: 60.0,
            cr: 10.0,
            gc: 180.0,
            gt: 120.0,
            cf: 30.0,
            ps,
            iob: 2.0,
            mmol,
        }
    }

    #[test]
    fn worked_examples() {
        let v: serde_json::Value = serde_json::from_str(&bolus(&args(1.0, false)).unwrap()).unwrap();
        assert_eq!(v["units"], 6.0);
        assert_eq!(v["no_bolus_needed"], false);
        let v: serde_json::Value = serde_json::from_str(&bolus(&args(0.5, false)).unwrap()).unwrap();
        assert_eq!(v["units"], 7.0);
    }

    #[test]
    fn mmol_inputs_match_mgdl() {
        let mut a = args(1.0, true);
        a.gc = 10.0;
        a.gt = 6.0;
        a.cf = 2.0;
        let v: serde_json::Value = serde_json::from_str(&bolus(&a).unwrap()).unwrap();
        // (10 - 6) / 2 = 2 units of correction, independent of the unit system
        assert!((v["units"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn negative_dose_and_domain_errors() {
        let mut a = args(1.0, false);
        a.cho = 0.0;
        a.gc = 100.0;
        let v: serde_json::Value = serde_json::from_str(&bolus(&a).unwrap()).unwrap();
        assert_eq!(v["no_bolus_needed"], true);
        a.cr = 0.0;
        assert_eq!(bolus(&a).unwrap_err().exit_code(), 2);
    }
}
