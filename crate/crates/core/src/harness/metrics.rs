use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Snr;
use crate::error::{Error, Result};
use crate::models::SCORE_CLAMP;

/// Decision counts over one set of examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_wake: usize,
    pub n_non_wake: usize,
    /// Wake examples rejected.
    pub n_fr: usize,
    /// Non-wake examples accepted.
    pub n_fa: usize,
}

impl EvalCounts {
    pub fn record(&mut self, label: u8, decision: u8) {
        if label == 1 {
            self.n_wake += 1;
            self.n_fr += usize::from(decision == 0);
        } else {
            self.n_non_wake += 1;
            self.n_fa += usize::from(decision == 1);
        }
    }

    /// `None` when there are no wake examples.
    pub fn frr(&self) -> Option<f64> {
        (self.n_wake > 0).then(|| self.n_fr as f64 / self.n_wake as f64)
    }

    /// `None` when there are no non-wake examples.
    pub fn far(&self) -> Option<f64> {
        (self.n_non_wake > 0).then(|| self.n_fa as f64 / self.n_non_wake as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.n_wake + self.n_non_wake == 0
    }
}

/// Counts over a whole split and per SNR stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: EvalCounts,
    pub strata: Vec<(Snr, EvalCounts)>,
}

impl EvalReport {
    pub fn stratum(&self, snr: Snr) -> Option<&EvalCounts> {
        self.strata.iter().find(|(s, _)| *s == snr).map(|(_, c)| c)
    }

    pub const CSV_HEADER: &'static str = "stratum,threshold,n_wake,n_non_wake,n_fr,n_fa,frr,far";

    /// One `all` row, then one row per stratum; undefined rates are blank.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let rows = std::iter::once(("all".to_string(), &self.overall))
            .chain(self.strata.iter().map(|(s, c)| (s.to_string(), c)));
        for (name, c) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{}",
                self.threshold,
                c.n_wake,
                c.n_non_wake,
                c.n_fr,
                c.n_fa,
                rate_cell(c.frr()),
                rate_cell(c.far())
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Format("evaluation CSV header mismatch".into()));
        }
        let mut overall = None;
        let mut threshold = f64::NAN;
        let mut strata = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(Error::Format(format!("evaluation CSV row {line:?}")));
            }
            let num = |i: usize| -> Result<usize> {
                cols[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("evaluation CSV count {:?}", cols[i])))
            };
            threshold = cols[1]
                .parse()
                .map_err(|_| Error::Format(format!("evaluation CSV threshold {:?}", cols[1])))?;
            let c = EvalCounts {
                n_wake: num(2)?,
                n_non_wake: num(3)?,
                n_fr: num(4)?,
                n_fa: num(5)?,
            };
            if cols[0] == "all" {
                overall = Some(c);
            } else {
                strata.push((cols[0].parse()?, c));
            }
        }
        let overall =
            overall.ok_or_else(|| Error::Format("evaluation CSV lacks the all row".into()))?;
        Ok(EvalReport {
            threshold,
            overall,
            strata,
        })
    }
}

fn rate_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Thresholds `scores` and counts errors overall and per stratum. Every SNR
/// in `strata` is reported, empty ones with undefined rates.
pub fn evaluate(
    scores: &[f64],
    labels: &[u8],
    snrs: &[Snr],
    strata: &[Snr],
    threshold: f64,
) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    if scores.len() != labels.len() || scores.len() != snrs.len() {
        return Err(Error::contract(format!(
            "{} scores, {} labels and {} SNR tags",
            scores.len(),
            labels.len(),
            snrs.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::contract(format!("label {l} is not 0 or 1")));
    }
    let mut overall = EvalCounts::default();
    let mut per: Vec<(Snr, EvalCounts)> =
        strata.iter().map(|&s| (s, EvalCounts::default())).collect();
    for ((&s, &y), &snr) in scores.iter().zip(labels).zip(snrs) {
        let d = crate::models::decide(s, threshold);
        overall.record(y, d);
        if let Some((_, c)) = per.iter_mut().find(|(k, _)| *k == snr) {
            c.record(y, d);
        }
    }
    Ok(EvalReport {
        threshold,
        overall,
        strata: per,
    })
}

/// Largest threshold at which at least `ceil(target * n)` of the positive
/// scores are accepted. A target of 0 yields `1 - SCORE_CLAMP`.
pub fn calibrate_threshold(positive_scores: &[f64], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Calibration(format!(
            "target 1-FRR {target} is unreachable"
        )));
    }
    if positive_scores.is_empty() {
        return Err(Error::Calibration(
            "no positive examples to calibrate on".into(),
        ));
    }
    if positive_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("non-finite positive score".into()));
    }
    let n = positive_scores.len();
    let need = ((target * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let ceiling = 1.0 - SCORE_CLAMP;
    if need == 0 {
        return Ok(ceiling);
    }
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let accepted = |t: f64| n - sorted.partition_point(|&s| s < t);
    let cut = sorted.partition_point(|&t| accepted(t) >= need);
    let threshold = sorted[cut - 1].min(ceiling);
    if threshold <= 0.0 {
        return Err(Error::Calibration(format!(
            "target 1-FRR {target} needs a threshold of {threshold}, outside (0, 1)"
        )));
    }
    Ok(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores_give_zero_error() {
        let r = evaluate(
            &[1.0, 0.0, 1.0, 0.0],
            &[1, 0, 1, 0],
            &[Snr::Db(0); 4],
            &[Snr::Db(0)],
            0.5,
        )
        .unwrap();
        assert_eq!(r.overall.frr(), Some(0.0));
        assert_eq!(r.overall.far(), Some(0.0));
    }

    #[test]
    fn two_rejections_in_a_hundred() {
        let mut scores = vec![0.9; 100];
        scores[3] = 0.1;
        scores[70] = 0.2;
        let r = evaluate(&scores, &[1; 100], &[Snr::Clean; 100], &[], 0.5).unwrap();
        assert_eq!(r.overall.frr(), Some(0.02));
        assert_eq!(r.overall.far(), None);
    }

    #[test]
    fn empty_stratum_is_undefined() {
        let r = evaluate(&[0.7], &[1], &[Snr::Db(5)], &[Snr::Db(-5), Snr::Db(5)], 0.5).unwrap();
        let empty = r.stratum(Snr::Db(-5)).unwrap();
        assert!(empty.is_empty() && empty.frr().is_none() && empty.far().is_none());
        assert!(r.to_csv().contains("\n-5,0.5,0,0,0,0,,\n"));
    }

    #[test]
    fn threshold_must_be_open_interval() {
        for t in [0.0, 1.0, f64::NAN] {
            assert!(evaluate(&[0.5], &[1], &[Snr::Clean], &[], t).is_err());
        }
    }

    #[test]
    fn csv_round_trips() {
        let r = evaluate(
            &[0.6, 0.4, 0.9],
            &[1, 1, 0],
            &[Snr::Db(-5), Snr::Db(0), Snr::Db(0)],
            &[Snr::Db(-5), Snr::Db(0)],
            0.5,
        )
        .unwrap();
        assert_eq!(EvalReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn two_of_three_positives() {
        assert_eq!(
            calibrate_threshold(&[0.9, 0.8, 0.7], 2.0 / 3.0).unwrap(),
            0.8
        );
    }

    #[test]
    fn zero_target_sits_at_the_clamp() {
        assert_eq!(
            calibrate_threshold(&[0.2, 0.4], 0.0).unwrap(),
            1.0 - SCORE_CLAMP
        );
    }

    #[test]
    fn calibration_failures() {
        assert!(matches!(
            calibrate_threshold(&[], 0.5),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            calibrate_threshold(&[0.5], 1.5),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            calibrate_threshold(&[0.0, 0.5], 1.0),
            Err(Error::Calibration(_))
        ));
    }
}
