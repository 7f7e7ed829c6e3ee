//! The SL-REQ sleep-grant controller.
//!
//! Every function here is pure. A granter feeds the crisp inputs it has about
//! one hop (its own session views plus the requester's counters) through
//! [`evaluate`] and gets back a [`SleepDecision`]; [`trace`] returns the same
//! result together with every intermediate value.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::SlreqError;

const UNIT_TOLERANCE: f64 = 1e-12;

/// Four-level ordinal fuzzy grade. `A4` is the highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FuzzyGrade {
    A1,
    A2,
    A3,
    A4,
}

impl FuzzyGrade {
    pub const ALL: [FuzzyGrade; 4] = [FuzzyGrade::A1, FuzzyGrade::A2, FuzzyGrade::A3, FuzzyGrade::A4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<FuzzyGrade> {
        Self::ALL.get(idx).copied()
    }

    /// Centre of the grade's crisp range on [0, 1].
    pub fn mid(self) -> f64 {
        match self {
            FuzzyGrade::A1 => 0.125,
            FuzzyGrade::A2 => 0.375,
            FuzzyGrade::A3 => 0.625,
            FuzzyGrade::A4 => 0.875,
        }
    }

    pub fn grants_sleep(self) -> bool {
        self >= FuzzyGrade::A3
    }
}

impl fmt::Display for FuzzyGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.index() + 1)
    }
}

impl std::str::FromStr for FuzzyGrade {
    type Err = SlreqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A1" | "a1" => Ok(FuzzyGrade::A1),
            "A2" | "a2" => Ok(FuzzyGrade::A2),
            "A3" | "a3" => Ok(FuzzyGrade::A3),
            "A4" | "a4" => Ok(FuzzyGrade::A4),
            other => Err(SlreqError::UnknownGrade(other.to_string())),
        }
    }
}

/// Range of the comparative-load ratio over the current uplink set:
/// `(min / mean, max / mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClBounds {
    pub low: f64,
    pub high: f64,
}

impl ClBounds {
    pub fn new(low: f64, high: f64) -> Result<Self, SlreqError> {
        if !low.is_finite() || !high.is_finite() || low < 0.0 || low > high {
            return Err(SlreqError::InvalidBounds { low, high });
        }
        Ok(Self { low, high })
    }

    pub fn is_degenerate(&self) -> bool {
        self.low >= self.high
    }

    /// The three class boundaries splitting `[low, high]` into quartiles.
    pub fn thresholds(&self) -> [f64; 3] {
        let (l, h) = (self.low, self.high);
        [0.25 * (3.0 * l + h), 0.5 * (l + h), 0.25 * (l + 3.0 * h)]
    }
}

/// Counters kept for one (uplink, router) pair.
///
/// `s` packets were handed to the router for forwarding, `r` of them went out
/// again, and the router asked for sleep `sl` times before this evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhRecord {
    pub s: u64,
    pub r: u64,
    pub sl: u64,
}

/// One live session crossing the evaluated hop.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HopSessionView {
    /// Packets already pushed through the hop.
    pub alpha1: u64,
    /// Packets still to come.
    pub alpha2: u64,
    /// Performance grades of the cached alternatives that avoid the router.
    #[serde(default)]
    pub alt_grades: Vec<FuzzyGrade>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhVariant {
    AsPrinted,
    #[default]
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcsVariant {
    AsPrinted,
    #[default]
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table3Orientation {
    /// Printed rows indexed by the cl grade, columns by temp.
    #[default]
    TempDominant,
    /// Printed rows indexed by temp, columns by the cl grade.
    AsPrintedRows,
}

/// Switches between the literal formulas and their normalised readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormulaVariant {
    #[serde(default)]
    pub ph: PhVariant,
    #[serde(default)]
    pub ccs: CcsVariant,
    #[serde(default)]
    pub table3: Table3Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SleepDecision {
    Deny,
    Grant { duration_ms: f64 },
}

impl SleepDecision {
    pub fn is_grant(&self) -> bool {
        matches!(self, SleepDecision::Grant { .. })
    }

    pub fn duration_ms(&self) -> Option<f64> {
        match *self {
            SleepDecision::Grant { duration_ms } => Some(duration_ms),
            SleepDecision::Deny => None,
        }
    }
}

use FuzzyGrade::{A1, A2, A3, A4};

/// ph (rows) x ccs (columns) -> temp.
const TEMP_TABLE: [[FuzzyGrade; 4]; 4] = [
    [A1, A1, A1, A2],
    [A1, A1, A2, A2],
    [A1, A2, A3, A3],
    [A2, A2, A3, A4],
];

/// The printed temp/cl -> SLPR table, cell for cell.
const SLPR_TABLE: [[FuzzyGrade; 4]; 4] = [
    [A1, A1, A2, A3],
    [A1, A1, A2, A3],
    [A1, A2, A3, A4],
    [A1, A2, A4, A4],
];

pub fn fuzzify_unit(x: f64) -> Result<FuzzyGrade, SlreqError> {
    if !x.is_finite() || x < -UNIT_TOLERANCE || x > 1.0 + UNIT_TOLERANCE {
        return Err(SlreqError::OutOfUnitRange(x));
    }
    let x = x.clamp(0.0, 1.0);
    Ok(if x < 0.25 {
        A1
    } else if x < 0.5 {
        A2
    } else if x < 0.75 {
        A3
    } else {
        A4
    })
}

/// Classifies `cl` into the quartile of `[low, high]` it falls in. Values
/// outside the bounds clamp to the end classes; degenerate bounds map to A4.
pub fn fuzzify_cl(cl: f64, bounds: ClBounds) -> Result<FuzzyGrade, SlreqError> {
    if !cl.is_finite() {
        return Err(SlreqError::NonFinite("cl"));
    }
    if bounds.is_degenerate() {
        return Ok(A4);
    }
    // cl and the thresholds carry rounding from the division by the mean;
    // a value that sits on a boundary belongs to the upper class.
    let slack = 1e-12 * bounds.high.max(1.0);
    let [t1, t2, t3] = bounds.thresholds().map(|t| t - slack);
    Ok(if cl < t1 {
        A1
    } else if cl < t2 {
        A2
    } else if cl < t3 {
        A3
    } else {
        A4
    })
}

/// Comparative load of one uplink against the whole uplink set.
pub fn compute_cl(tau_ab: f64, uplink_taus: &[f64]) -> Result<(f64, ClBounds), SlreqError> {
    if uplink_taus.is_empty() {
        return Err(SlreqError::EmptyUplinkSet);
    }
    if !tau_ab.is_finite() || tau_ab < 0.0 {
        return Err(SlreqError::NonFinite("tau_ab"));
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &tau in uplink_taus {
        if !tau.is_finite() || tau < 0.0 {
            return Err(SlreqError::NonFinite("uplink rate"));
        }
        sum += tau;
        min = min.min(tau);
        max = max.max(tau);
    }
    let mean = sum / uplink_taus.len() as f64;
    if mean <= 0.0 {
        return Ok((0.0, ClBounds { low: 0.0, high: 0.0 }));
    }
    Ok((tau_ab / mean, ClBounds { low: min / mean, high: max / mean }))
}

/// Historical forwarding performance of the router as seen by one uplink.
pub fn compute_ph(rec: PhRecord, variant: PhVariant) -> Result<f64, SlreqError> {
    if rec.r > rec.s {
        return Err(SlreqError::ForwardedExceedsSent { r: rec.r, s: rec.s });
    }
    if rec.s == 0 {
        return Ok(1.0);
    }
    let ratio = rec.r as f64 / rec.s as f64;
    Ok(match variant {
        PhVariant::Semantic => (ratio - 1.0).exp() / (1.0 + rec.sl as f64),
        PhVariant::AsPrinted => {
            let sl = rec.sl.max(1) as f64;
            ((1.0 - 1.0 / sl) * (1.0 - ratio).exp()).clamp(0.0, 1.0)
        }
    })
}

/// Share of a session already pushed through the hop: `alpha1 / (alpha1 + alpha2)`.
pub fn compute_f1(alpha1: u64, alpha2: u64) -> f64 {
    let total = alpha1 + alpha2;
    if total == 0 {
        1.0
    } else {
        alpha1 as f64 / total as f64
    }
}

/// Mean of the grade mid-points of the available alternatives; 0 with none.
pub fn compute_f2(alt_grades: &[FuzzyGrade]) -> f64 {
    if alt_grades.is_empty() {
        return 0.0;
    }
    alt_grades.iter().map(|g| g.mid()).sum::<f64>() / alt_grades.len() as f64
}

/// Current communication scenario of the hop. No live sessions gives 1.
pub fn compute_ccs(views: &[HopSessionView], variant: CcsVariant) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let sum: f64 = views
        .iter()
        .map(|v| {
            let f1 = compute_f1(v.alpha1, v.alpha2);
            let f2 = compute_f2(&v.alt_grades);
            match variant {
                CcsVariant::Semantic => f1 * (f2 - 1.0).exp(),
                CcsVariant::AsPrinted => f1 * (1.0 - f2).exp(),
            }
        })
        .sum();
    let mean = sum / views.len() as f64;
    match variant {
        CcsVariant::Semantic => mean,
        CcsVariant::AsPrinted => mean.clamp(0.0, 1.0),
    }
}

pub fn combine_temp(ph: FuzzyGrade, ccs: FuzzyGrade) -> FuzzyGrade {
    TEMP_TABLE[ph.index()][ccs.index()]
}

pub fn combine_slpr(temp: FuzzyGrade, cl: FuzzyGrade, orientation: Table3Orientation) -> FuzzyGrade {
    match orientation {
        Table3Orientation::TempDominant => SLPR_TABLE[cl.index()][temp.index()],
        Table3Orientation::AsPrintedRows => SLPR_TABLE[temp.index()][cl.index()],
    }
}

/// Nap length for a final grade: the full `max_ms` for A4, the A3/A4 mid-point
/// ratio of it for A3, nothing below.
pub fn sleep_duration(slpr: FuzzyGrade, max_ms: f64) -> Option<f64> {
    match slpr {
        A4 => Some(max_ms),
        A3 => Some(max_ms * (A3.mid() / A4.mid())),
        A1 | A2 => None,
    }
}

/// Enable inputs of the controller: `(energy_exhausted, overloaded)`.
///
/// `ts` is the mean inter-service time and `tr` the mean inter-arrival time;
/// a zero `tr` means no arrivals were observed yet.
pub fn enable_flags(residual: f64, capacity: f64, ts: f64, tr: f64) -> Result<(bool, bool), SlreqError> {
    if !(capacity > 0.0) {
        return Err(SlreqError::NonPositiveCapacity(capacity));
    }
    let e = residual / capacity < 0.4;
    let ol = tr > 0.0 && ts / tr > 1.0;
    Ok((e, ol))
}

/// Everything the granter knows about the hop when a request arrives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlReqInput {
    pub record: PhRecord,
    #[serde(default)]
    pub views: Vec<HopSessionView>,
    pub tau_ab: f64,
    pub uplink_taus: Vec<f64>,
    pub max_sleep_ms: f64,
    #[serde(default)]
    pub variant: FormulaVariant,
}

/// Intermediate values of one controller evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlReqTrace {
    pub cl: f64,
    pub cl_bounds: ClBounds,
    pub cl_grade: FuzzyGrade,
    pub ph: f64,
    pub ph_grade: FuzzyGrade,
    pub ccs: f64,
    pub ccs_grade: FuzzyGrade,
    pub temp: FuzzyGrade,
    pub slpr: FuzzyGrade,
    pub decision: SleepDecision,
}

pub fn trace(input: &SlReqInput) -> Result<SlReqTrace, SlreqError> {
    if !(input.max_sleep_ms > 0.0) {
        return Err(SlreqError::NonPositiveSleep(input.max_sleep_ms));
    }
    let (cl, cl_bounds) = compute_cl(input.tau_ab, &input.uplink_taus)?;
    let cl_grade = fuzzify_cl(cl, cl_bounds)?;
    let ph = compute_ph(input.record, input.variant.ph)?;
    let ph_grade = fuzzify_unit(ph)?;
    let ccs = compute_ccs(&input.views, input.variant.ccs);
    let ccs_grade = fuzzify_unit(ccs)?;
    let temp = combine_temp(ph_grade, ccs_grade);
    let slpr = combine_slpr(temp, cl_grade, input.variant.table3);
    let decision = match sleep_duration(slpr, input.max_sleep_ms) {
        Some(duration_ms) => SleepDecision::Grant { duration_ms },
        None => SleepDecision::Deny,
    };
    Ok(SlReqTrace { cl, cl_bounds, cl_grade, ph, ph_grade, ccs, ccs_grade, temp, slpr, decision })
}

pub fn evaluate(input: &SlReqInput) -> Result<SleepDecision, SlreqError> {
    trace(input).map(|t| t.decision)
}

impl fmt::Display for SlReqTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "cl   = {:.6}  bounds [{:.6}, {:.6}]  -> {}",
            self.cl, self.cl_bounds.low, self.cl_bounds.high, self.cl_grade
        )?;
        writeln!(f, "ph   = {:.6}  -> {}", self.ph, self.ph_grade)?;
        writeln!(f, "ccs  = {:.6}  -> {}", self.ccs, self.ccs_grade)?;
        writeln!(f, "temp = {}", self.temp)?;
        writeln!(f, "SLPR = {}", self.slpr)?;
        match self.decision {
            SleepDecision::Grant { duration_ms } => write!(f, "decision: Grant {duration_ms:.3} ms"),
            SleepDecision::Deny => write!(f, "decision: Deny"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn unit_fuzzification_examples() {
        assert_eq!(fuzzify_unit(0.10).unwrap(), A1);
        assert_eq!(fuzzify_unit(0.25).unwrap(), A2);
        assert_eq!(fuzzify_unit(0.875).unwrap(), A4);
        assert_eq!(fuzzify_unit(1.0).unwrap(), A4);
        assert_eq!(fuzzify_unit(0.0).unwrap(), A1);
        assert_eq!(fuzzify_unit(1.0 + 1e-13).unwrap(), A4);
        assert!(fuzzify_unit(1.01).is_err());
        assert!(fuzzify_unit(-0.1).is_err());
        assert!(fuzzify_unit(f64::NAN).is_err());
    }

    #[test]
    fn mid_round_trips_through_fuzzify() {
        for g in FuzzyGrade::ALL {
            assert_eq!(fuzzify_unit(g.mid()).unwrap(), g);
        }
    }

    #[test]
    fn cl_examples() {
        let b = ClBounds::new(0.5, 1.5).unwrap();
        assert_eq!(fuzzify_cl(1.1, b).unwrap(), A3);
        assert_eq!(fuzzify_cl(0.76, b).unwrap(), A2);
        assert_eq!(fuzzify_cl(0.5, b).unwrap(), A1);
        assert_eq!(fuzzify_cl(0.1, b).unwrap(), A1);
        assert_eq!(fuzzify_cl(9.0, b).unwrap(), A4);
        assert_eq!(fuzzify_cl(1.0, ClBounds::new(1.0, 1.0).unwrap()).unwrap(), A4);
        assert!(fuzzify_cl(f64::INFINITY, b).is_err());

        let (cl, bounds) = compute_cl(6.0, &[2.0, 4.0, 6.0]).unwrap();
        assert!(close(cl, 1.5));
        assert!(close(bounds.low, 0.5) && close(bounds.high, 1.5));
        let (cl, bounds) = compute_cl(4.0, &[4.0]).unwrap();
        assert!(close(cl, 1.0) && close(bounds.low, 1.0) && close(bounds.high, 1.0));
        let (cl, _) = compute_cl(2.0, &[2.0, 4.0, 6.0]).unwrap();
        assert!(close(cl, 0.5));
        let (cl, bounds) = compute_cl(0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(cl, 0.0);
        assert_eq!(fuzzify_cl(cl, bounds).unwrap(), A4);
        assert!(compute_cl(1.0, &[]).is_err());
    }

    #[test]
    fn cl_on_a_boundary_rounds_up() {
        // the middle of three evenly spaced rates sits exactly on the A2/A3 line
        let (cl, bounds) = compute_cl(2.8, &[0.2, 2.8, 5.4]).unwrap();
        assert!(cl < bounds.thresholds()[1]);
        assert_eq!(fuzzify_cl(cl, bounds).unwrap(), A3);
        let (cl, bounds) = compute_cl(0.6, &[0.2, 0.6, 1.4]).unwrap();
        assert_eq!(fuzzify_cl(cl, bounds).unwrap(), A2);
    }

    #[test]
    fn ph_examples() {
        let perfect = PhRecord { s: 100, r: 100, sl: 0 };
        assert!(close(compute_ph(perfect, PhVariant::Semantic).unwrap(), 1.0));
        let silent = PhRecord { s: 100, r: 0, sl: 0 };
        assert!(close(compute_ph(silent, PhVariant::Semantic).unwrap(), (-1.0f64).exp()));
        let printed = PhRecord { s: 100, r: 100, sl: 2 };
        assert!(close(compute_ph(printed, PhVariant::AsPrinted).unwrap(), 0.5));
        assert_eq!(compute_ph(PhRecord { s: 0, r: 0, sl: 5 }, PhVariant::Semantic).unwrap(), 1.0);
        assert!(compute_ph(PhRecord { s: 1, r: 2, sl: 0 }, PhVariant::Semantic).is_err());
        // sl = 0 is read as 1 for the printed form, which zeroes the first factor.
        assert_eq!(compute_ph(PhRecord { s: 10, r: 0, sl: 0 }, PhVariant::AsPrinted).unwrap(), 0.0);
    }

    #[test]
    fn f1_f2_ccs_examples() {
        assert!(close(compute_f1(75, 25), 0.75));
        assert_eq!(compute_f1(0, 10), 0.0);
        assert_eq!(compute_f1(0, 0), 1.0);
        assert!(close(compute_f2(&[A2]), 0.375));
        assert!(close(compute_f2(&[A3, A3]), 0.625));
        assert_eq!(compute_f2(&[]), 0.0);

        let one = HopSessionView { alpha1: 10, alpha2: 0, alt_grades: vec![A4] };
        assert!(close(compute_ccs(&[one], CcsVariant::Semantic), (0.875f64 - 1.0).exp()));
        assert_eq!(compute_ccs(&[], CcsVariant::Semantic), 1.0);
        let half = HopSessionView { alpha1: 5, alpha2: 5, alt_grades: vec![] };
        assert!(close(compute_ccs(&[half.clone()], CcsVariant::Semantic), 0.5 * (-1.0f64).exp()));
        assert_eq!(compute_ccs(&[half], CcsVariant::AsPrinted), 1.0);
    }

    #[test]
    fn table_cells() {
        assert_eq!(combine_temp(A3, A3), A3);
        assert_eq!(combine_temp(A1, A4), A2);
        assert_eq!(combine_temp(A4, A1), A2);
        let td = Table3Orientation::TempDominant;
        assert_eq!(combine_slpr(A4, A1, td), A3);
        assert_eq!(combine_slpr(A1, A4, td), A1);
        assert_eq!(combine_slpr(A3, A3, td), A3);
        let pr = Table3Orientation::AsPrintedRows;
        assert_eq!(combine_slpr(A4, A1, pr), A1);
        assert_eq!(combine_slpr(A1, A4, pr), A3);
    }

    #[test]
    fn sleep_durations() {
        assert_eq!(sleep_duration(A4, 50.0), Some(50.0));
        let a3 = sleep_duration(A3, 50.0).unwrap();
        assert!((a3 - 50.0 * 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(format!("{a3:.3}"), "35.714");
        assert_eq!(sleep_duration(A2, 50.0), None);
        assert_eq!(sleep_duration(A1, 50.0), None);
    }

    #[test]
    fn enable_flag_examples() {
        assert_eq!(enable_flags(39.0, 100.0, 1.0, 1.0).unwrap(), (true, false));
        assert_eq!(enable_flags(41.0, 100.0, 2.0, 1.0).unwrap(), (false, true));
        assert_eq!(enable_flags(100.0, 100.0, 1.0, 2.0).unwrap(), (false, false));
        assert_eq!(enable_flags(100.0, 100.0, 5.0, 0.0).unwrap(), (false, false));
        assert!(enable_flags(1.0, 0.0, 1.0, 1.0).is_err());
    }

    fn input(record: PhRecord, views: Vec<HopSessionView>, tau_ab: f64, uplinks: Vec<f64>) -> SlReqInput {
        SlReqInput {
            record,
            views,
            tau_ab,
            uplink_taus: uplinks,
            max_sleep_ms: 50.0,
            variant: FormulaVariant::default(),
        }
    }

    #[test]
    fn end_to_end_examples() {
        let t = trace(&input(PhRecord { s: 50, r: 50, sl: 0 }, vec![], 6.0, vec![2.0, 4.0, 6.0])).unwrap();
        assert_eq!((t.ph_grade, t.ccs_grade, t.temp, t.cl_grade, t.slpr), (A4, A4, A4, A4, A4));
        assert_eq!(t.decision, SleepDecision::Grant { duration_ms: 50.0 });

        let stalled = HopSessionView { alpha1: 0, alpha2: 10, alt_grades: vec![] };
        let t = trace(&input(PhRecord { s: 100, r: 0, sl: 0 }, vec![stalled], 2.0, vec![2.0, 4.0, 6.0])).unwrap();
        assert_eq!((t.ph_grade, t.ccs_grade, t.temp, t.cl_grade), (A2, A1, A1, A1));
        assert_eq!(t.decision, SleepDecision::Deny);

        // ph ~0.67 (A3), ccs ~0.55 (A3), cl 1.1 of (0.5, 1.5) (A3).
        let mid = HopSessionView { alpha1: 3, alpha2: 1, alt_grades: vec![A3] };
        let t = trace(&input(PhRecord { s: 10, r: 6, sl: 0 }, vec![mid], 4.4, vec![2.0, 4.4, 5.6])).unwrap();
        assert_eq!((t.ph_grade, t.ccs_grade, t.cl_grade, t.temp, t.slpr), (A3, A3, A3, A3, A3));
        let d = t.decision.duration_ms().unwrap();
        assert!((d - 50.0 * 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn trace_rejects_bad_sleep_limit() {
        let mut i = input(PhRecord::default(), vec![], 1.0, vec![1.0]);
        i.max_sleep_ms = 0.0;
        assert!(trace(&i).is_err());
    }
}
