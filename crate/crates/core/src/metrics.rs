//! Transient-response metrics of servo runs and keypoint accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::camera::Pixel;
use crate::error::{domain, Result};
use crate::tracker::KeypointStatus;

/// Initial error magnitudes at or below this are treated as already at the goal.
pub const ZERO_ERROR: f64 = 1e-9;

/// One executed tick of a servo run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    /// Ground-truth feature error norm in pixels.
    pub err_norm: f64,
    /// Ground-truth per-feature errors `(u₁, v₁, …)`.
    pub errors: Vec<f64>,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub status: Vec<KeypointStatus>,
    /// Window residual `‖Q̇Ĵᵀ − Ṗ‖_F` after this tick's update.
    pub jac_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RunOutcome {
    Converged,
    BudgetExhausted,
    AdaptationDivergence(String),
    FilterDivergence(String),
}

impl RunOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RunOutcome::Converged)
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Converged => "converged",
            RunOutcome::BudgetExhausted => "budget_exhausted",
            RunOutcome::AdaptationDivergence(_) => "adaptation_divergence",
            RunOutcome::FilterDivergence(_) => "filter_divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub dt: f64,
    /// Index of the first control-phase row; earlier rows are excitation.
    pub control_start: usize,
    pub rows: Vec<TrajectoryRow>,
    pub outcome: RunOutcome,
    /// Ticks on which the speed clamp scaled the command.
    pub clamped_ticks: usize,
}

impl TrajectoryRecord {
    /// Control-phase error norm, time measured from the start of control.
    /// With `keypoints`, the norm is taken over those keypoints only.
    pub fn control_signal(&self, keypoints: Option<&[usize]>) -> Signal {
        let rows = &self.rows[self.control_start.min(self.rows.len())..];
        let t0 = rows.first().map_or(0.0, |r| r.t);
        let v = rows
            .iter()
            .map(|r| match keypoints {
                None => r.err_norm,
                Some(ks) => ks
                    .iter()
                    .flat_map(|&k| [r.errors[2 * k], r.errors[2 * k + 1]])
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt(),
            })
            .collect();
        Signal {
            t: rows.iter().map(|r| r.t - t0).collect(),
            v,
        }
    }

    /// Control-phase per-feature errors, one series per feature.
    pub fn control_feature_errors(&self, keypoints: Option<&[usize]>) -> Vec<Vec<f64>> {
        let rows = &self.rows[self.control_start.min(self.rows.len())..];
        let dim = rows.first().map_or(0, |r| r.errors.len());
        let features: Vec<usize> = match keypoints {
            None => (0..dim).collect(),
            Some(ks) => ks.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect(),
        };
        features
            .iter()
            .map(|&f| rows.iter().map(|r| r.errors[f]).collect())
            .collect()
    }
}

/// A sampled scalar time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Signal {
    pub fn sampled(dt: f64, v: Vec<f64>) -> Self {
        Self {
            t: (0..v.len()).map(|i| i as f64 * dt).collect(),
            v,
        }
    }
}

/// First time the signal reaches `level` or below, linearly interpolated
/// between samples.
fn first_crossing(signal: &Signal, level: f64) -> Option<f64> {
    let i = signal.v.iter().position(|&v| v <= level)?;
    if i == 0 {
        return Some(signal.t[0]);
    }
    let (v0, v1) = (signal.v[i - 1], signal.v[i]);
    let (t0, t1) = (signal.t[i - 1], signal.t[i]);
    if v1 == level || v0 == v1 {
        return Some(t1);
    }
    Some(t0 + (v0 - level) / (v0 - v1) * (t1 - t0))
}

/// Time from the first crossing of `high·e₀` to the first crossing of
/// `low·e₀`. `None` when the signal never gets that low.
pub fn rise_time(signal: &Signal, low: f64, high: f64) -> Option<f64> {
    let e0 = *signal.v.first()?;
    if e0 <= ZERO_ERROR {
        return Some(0.0);
    }
    let start = first_crossing(signal, high * e0)?;
    let end = first_crossing(signal, low * e0)?;
    Some(end - start)
}

/// Earliest sample time after which the signal stays within
/// `band_fraction·e₀` of zero. `None` when the last sample is outside.
pub fn settling_time(signal: &Signal, band_fraction: f64) -> Option<f64> {
    let e0 = *signal.v.first()?;
    if e0 <= ZERO_ERROR {
        return Some(0.0);
    }
    let band = band_fraction * e0;
    let outside = signal.v.iter().rposition(|v| v.abs() > band);
    match outside {
        None => Some(signal.t[0]),
        Some(i) if i + 1 < signal.v.len() => Some(signal.t[i + 1]),
        Some(_) => None,
    }
}

/// Percent overshoot over signed per-feature error series: the largest
/// excursion past zero opposite to a feature's initial sign, relative to
/// `max(|e_i(0)|, floor_fraction·‖e₀‖)`. A fraction of 1 (the default)
/// divides every excursion by `‖e₀‖`; 0 divides by each feature's own
/// initial error, which lets a coordinate that starts on target and bulges
/// along a curved image path dominate through a tiny denominator.
pub fn overshoot(features: &[Vec<f64>], floor_fraction: f64) -> f64 {
    let e0_norm = features
        .iter()
        .filter_map(|f| f.first())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if e0_norm <= ZERO_ERROR {
        return 0.0;
    }
    let floor = floor_fraction * e0_norm;
    features
        .iter()
        .filter_map(|f| {
            let &start = f.first()?;
            let sign = if start > 0.0 {
                1.0
            } else if start < 0.0 {
                -1.0
            } else {
                return None;
            };
            let beyond = f.iter().map(|&x| -sign * x).fold(0.0, f64::max);
            Some(beyond / start.abs().max(floor) * 100.0)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientConfig {
    pub rise_low: f64,
    pub rise_high: f64,
    pub settle_band: f64,
    /// Overshoot denominator floor as a fraction of `‖e₀‖`, see [`overshoot`].
    pub overshoot_floor: f64,
    /// Restrict the metrics to these keypoints, e.g. the end effector.
    pub keypoints: Option<Vec<usize>>,
}

impl Default for TransientConfig {
    fn default() -> Self {
        Self {
            rise_low: 0.1,
            rise_high: 0.9,
            settle_band: 0.05,
            overshoot_floor: 1.0,
            keypoints: None,
        }
    }
}

impl TransientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.rise_low && self.rise_low < self.rise_high && self.rise_high < 1.0) {
            return Err(domain("need 0 < rise_low < rise_high < 1"));
        }
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(domain("settle_band must be in (0, 1)"));
        }
        if !(self.overshoot_floor >= 0.0) {
            return Err(domain("overshoot_floor must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientMetrics {
    pub rise_time: Option<f64>,
    pub settling_time: Option<f64>,
    pub overshoot: f64,
}

impl TransientMetrics {
    pub fn of(record: &TrajectoryRecord, cfg: &TransientConfig) -> Self {
        let ks = cfg.keypoints.as_deref();
        let signal = record.control_signal(ks);
        Self {
            rise_time: rise_time(&signal, cfg.rise_low, cfg.rise_high),
            settling_time: settling_time(&signal, cfg.settle_band),
            overshoot: overshoot(&record.control_feature_errors(ks), cfg.overshoot_floor),
        }
    }
}

/// Mean and sample standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| {
            if n < 2 {
                0.0
            } else {
                (defined.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        });
        Self {
            mean,
            std,
            defined: n,
            undefined,
        }
    }

    /// `mean ± std`, with the undefined count appended when non-zero.
    pub fn cell(&self) -> String {
        let mut s = match (self.mean, self.std) {
            (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
            _ => "n/a".to_string(),
        };
        if self.undefined > 0 {
            s.push_str(&format!(" ({} undefined)", self.undefined));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientReport {
    pub runs: Vec<TransientMetrics>,
    pub rise_time: Aggregate,
    pub settling_time: Aggregate,
    pub overshoot: Aggregate,
    pub converged: usize,
}

impl TransientReport {
    pub fn from_records(records: &[TrajectoryRecord], cfg: &TransientConfig) -> Self {
        let runs: Vec<TransientMetrics> =
            records.iter().map(|r| TransientMetrics::of(r, cfg)).collect();
        Self {
            rise_time: Aggregate::of(runs.iter().map(|m| m.rise_time)),
            settling_time: Aggregate::of(runs.iter().map(|m| m.settling_time)),
            overshoot: Aggregate::of(runs.iter().map(|m| Some(m.overshoot))),
            converged: records.iter().filter(|r| r.outcome.is_success()).count(),
            runs,
        }
    }
}

type Column<T> = (&'static str, fn(&TransientReport) -> T);

/// Summary with metric rows and one column per scenario, as aligned text
/// and as CSV.
pub fn summary_table(columns: &[(String, TransientReport)]) -> (String, String) {
    let rows: [Column<String>; 4] = [
        ("Rise time (s)", |r| r.rise_time.cell()),
        ("Settling time (s)", |r| r.settling_time.cell()),
        ("Overshoot (%)", |r| r.overshoot.cell()),
        ("Converged runs", |r| format!("{}/{}", r.converged, r.runs.len())),
    ];
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, f)| columns.iter().map(|(_, r)| f(r)).collect())
        .collect();
    let widths: Vec<usize> = (0..columns.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .chain([columns[c].0.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut text = format!("{:label_width$}", "Metric");
    for ((name, _), w) in columns.iter().zip(&widths) {
        text.push_str(&format!(" | {name:>w$}"));
    }
    text.push('\n');
    for ((label, _), row) in rows.iter().zip(&cells) {
        text.push_str(&format!("{label:label_width$}"));
        for (cell, w) in row.iter().zip(&widths) {
            text.push_str(&format!(" | {cell:>w$}"));
        }
        text.push('\n');
    }

    let mut csv = String::from("metric");
    for (name, _) in columns {
        csv.push_str(&format!(",{name}_mean,{name}_std,{name}_undefined"));
    }
    csv.push('\n');
    let aggs: [Column<Aggregate>; 3] = [
        ("rise_time_s", |r| r.rise_time),
        ("settling_time_s", |r| r.settling_time),
        ("overshoot_pct", |r| r.overshoot),
    ];
    for (label, f) in aggs {
        csv.push_str(label);
        for (_, r) in columns {
            let a = f(r);
            csv.push_str(&format!(
                ",{},{},{}",
                a.mean.map(sig9).unwrap_or_default(),
                a.std.map(sig9).unwrap_or_default(),
                a.undefined
            ));
        }
        csv.push('\n');
    }
    (text, csv)
}

/// Decimal with 9 significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let digits = 8 - x.abs().log10().floor() as i32;
    let s = if digits > 0 {
        format!("{:.*}", digits as usize, x)
    } else {
        let scale = 10f64.powi(-digits);
        format!("{}", (x / scale).round() * scale)
    };
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" { "0".into() } else { t.to_string() }
    } else {
        s
    }
}

/// Share of keypoints within each threshold (percent) and the mean error.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionAccuracy {
    pub within: Vec<(f64, f64)>,
    pub mean_error: f64,
}

fn errors(pred: &[Pixel], gt: &[Pixel]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(domain(format!(
            "{} predictions against {} ground-truth keypoints",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(domain("no keypoints to compare"));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).collect())
}

pub fn detection_accuracy(pred: &[Pixel], gt: &[Pixel], thresholds: &[f64]) -> Result<DetectionAccuracy> {
    let errs = errors(pred, gt)?;
    let n = errs.len() as f64;
    Ok(DetectionAccuracy {
        within: thresholds
            .iter()
            .map(|&t| (t, errs.iter().filter(|&&e| e <= t).count() as f64 / n * 100.0))
            .collect(),
        mean_error: errs.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterEval {
    pub mean_error: f64,
    pub rmse: f64,
    /// Percent of keypoints with error above the failure threshold.
    pub failure_rate: f64,
}

pub const FAILURE_THRESHOLD_PX: f64 = 10.0;

pub fn filter_eval(pred: &[Pixel], gt: &[Pixel]) -> Result<FilterEval> {
    let errs = errors(pred, gt)?;
    let n = errs.len() as f64;
    Ok(FilterEval {
        mean_error: errs.iter().sum::<f64>() / n,
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        failure_rate: errs.iter().filter(|&&e| e > FAILURE_THRESHOLD_PX).count() as f64 / n * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_decay() -> Signal {
        let t: Vec<f64> = (0..=100).map(|i| f64::from(i) * 0.1).collect();
        let v = t.iter().map(|t| 100.0 * (1.0 - t / 10.0)).collect();
        Signal { t, v }
    }

    #[test]
    fn rise_time_examples() {
        assert!((rise_time(&linear_decay(), 0.1, 0.9).unwrap() - 8.0).abs() < 1e-9);
        assert_eq!(rise_time(&Signal::sampled(0.1, vec![0.0, 0.0]), 0.1, 0.9), Some(0.0));
        assert_eq!(rise_time(&Signal::sampled(0.1, vec![10.0, 9.0, 5.0, 2.0]), 0.1, 0.9), None);
    }

    #[test]
    fn settling_time_examples() {
        let v: Vec<f64> = (0..60).map(|i| if i < 30 { 100.0 - f64::from(i) * 3.2 } else { 1.0 }).collect();
        assert!((settling_time(&Signal::sampled(0.1, v), 0.05).unwrap() - 3.0).abs() < 1e-12);

        // in band from t=4.8, out again on [7, 9), back for good at t=9
        let osc: Vec<f64> = (0..100)
            .map(|i| match i {
                0..=49 => 100.0 - f64::from(i) * 2.0,
                50..=69 => 1.0,
                70..=89 => -8.0,
                _ => 0.5,
            })
            .collect();
        assert!((settling_time(&Signal::sampled(0.1, osc), 0.05).unwrap() - 9.0).abs() < 1e-12);

        let never = Signal::sampled(0.1, vec![100.0, 60.0, 80.0, 70.0]);
        assert_eq!(settling_time(&never, 0.05), None);
    }

    #[test]
    fn overshoot_examples() {
        let mono = vec![(0..50).map(|i| 100.0 - f64::from(i) * 2.0).collect::<Vec<f64>>()];
        assert_eq!(overshoot(&mono, 0.1), 0.0);
        let past = vec![vec![100.0, 50.0, 0.0, -5.0, -1.0, 0.0]];
        assert!((overshoot(&past, 0.1) - 5.0).abs() < 1e-12);
        let mixed = vec![vec![-40.0, -10.0, 2.0, 0.0], vec![30.0, 10.0, 0.0, 0.0]];
        assert!((overshoot(&mixed, 0.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn overshoot_of_underdamped_step_response() {
        let zeta: f64 = 0.5;
        let wn = 1.0;
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let phi = (1.0 - zeta * zeta).sqrt().atan2(zeta);
        // error of the unit step response: e(t) = 1 − y(t)
        let e: Vec<f64> = (0..4000)
            .map(|i| {
                let t = f64::from(i) * 0.01;
                (-zeta * wn * t).exp() * (wd * t + phi).sin() / (1.0 - zeta * zeta).sqrt()
            })
            .collect();
        let expected = (-std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt()).exp() * 100.0;
        assert!((expected - 16.3).abs() < 0.05);
        assert!((overshoot(&[e], 0.1) - expected).abs() < 0.5);
    }

    #[test]
    fn accuracy_and_filter_examples() {
        let gt: Vec<Pixel> = (0..5).map(|i| Pixel::new(f64::from(i) * 10.0, 0.0)).collect();
        let mut pred = gt.clone();
        let acc = detection_accuracy(&pred, &gt, &[5.0, 10.0]).unwrap();
        assert_eq!(acc.within, vec![(5.0, 100.0), (10.0, 100.0)]);
        assert_eq!(acc.mean_error, 0.0);
        pred[2].x += 7.0;
        let acc = detection_accuracy(&pred, &gt, &[5.0, 10.0]).unwrap();
        assert_eq!(acc.within, vec![(5.0, 80.0), (10.0, 100.0)]);
        assert!((acc.mean_error - 1.4).abs() < 1e-12);
        assert!(detection_accuracy(&pred[..4], &gt, &[5.0]).is_err());

        let g2 = vec![Pixel::origin(), Pixel::origin()];
        let zero = filter_eval(&g2, &g2).unwrap();
        assert_eq!((zero.mean_error, zero.rmse, zero.failure_rate), (0.0, 0.0, 0.0));
        let f = filter_eval(&[Pixel::new(6.0, 0.0), Pixel::new(0.0, 8.0)], &g2).unwrap();
        assert!((f.mean_error - 7.0).abs() < 1e-12 && (f.rmse - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(f.failure_rate, 0.0);
        let f = filter_eval(&[Pixel::origin(), Pixel::new(20.0, 0.0)], &g2).unwrap();
        assert!((f.mean_error - 10.0).abs() < 1e-12 && (f.rmse - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(f.failure_rate, 50.0);
        assert!(filter_eval(&[], &[]).is_err());
    }

    #[test]
    fn aggregates_count_undefined() {
        let a = Aggregate::of([Some(1.0), None, Some(3.0)]);
        assert_eq!((a.mean, a.defined, a.undefined), (Some(2.0), 2, 1));
        assert!((a.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Aggregate::of([None]).mean, None);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(0.1), "0.1");
        assert_eq!(sig9(123.456789012), "123.456789");
        assert_eq!(sig9(-2.5e-7), "-0.00000025");
        assert_eq!(sig9(1234567890123.0), "1234567890000");
    }

    proptest! {
        #[test]
        fn accuracy_properties(errs in prop::collection::vec(0.0f64..40.0, 1..30), c in 1.0f64..5.0) {
            let gt: Vec<Pixel> = errs.iter().map(|_| Pixel::origin()).collect();
            let pred: Vec<Pixel> = errs.iter().map(|&e| Pixel::new(e, 0.0)).collect();
            let acc = detection_accuracy(&pred, &gt, &[5.0, 10.0]).unwrap();
            prop_assert!(acc.within[1].1 >= acc.within[0].1);
            let f = filter_eval(&pred, &gt).unwrap();
            prop_assert!(f.rmse >= f.mean_error - 1e-12);
            let scaled: Vec<Pixel> = errs.iter().map(|&e| Pixel::new(e * c, 0.0)).collect();
            prop_assert!(filter_eval(&scaled, &gt).unwrap().failure_rate >= f.failure_rate);
        }

        #[test]
        fn monotone_features_never_overshoot(
            starts in prop::collection::vec(-200.0f64..200.0, 1..6),
            rates in prop::collection::vec(0.0f64..0.5, 6),
        ) {
            let features: Vec<Vec<f64>> = starts
                .iter()
                .zip(&rates)
                .map(|(&s, &r)| (0..40).map(|i| s * (1.0 - r).powi(i)).collect())
                .collect();
            prop_assert_eq!(overshoot(&features, 0.1), 0.0);
        }
    }
}
