//! Exact binomial tail tests and contest aggregation.
//!
//! Under the null hypothesis a subject's choice is a fair coin flip, so the
//! number of correct guesses `X` among `n = s * c` trials is `Binomial(n, 1/2)`
//! and the one-sided p-value for `g` observed correct guesses is
//!
//! ```text
//! Pr[X >= g] = sum_{i=g..n} C(n, i) / 2^n
//! ```
//!
//! The sum is carried out over arbitrary-precision integers and divided by
//! `2^n` only at the very end, so no normal approximation is involved.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("number of trials must be at least 1")]
    NoTrials,
    #[error("correct count {correct} exceeds trials {trials}")]
    CorrectExceedsTrials { correct: u64, trials: u64 },
    #[error("no subject records to summarize")]
    NoRecords,
    #[error("subject {subject} was assigned {assigned} charts, contest uses {expected}")]
    AssignedMismatch {
        subject: String,
        assigned: u32,
        expected: u32,
    },
    #[error("subject {0} has inconsistent counts (need correct <= answered <= assigned)")]
    InconsistentRecord(String),
}

/// `Pr[X >= g]` kept as the exact numerator over `2^n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TailProbability {
    numerator: BigUint,
    trials: u64,
}

impl TailProbability {
    pub fn numerator(&self) -> &BigUint {
        &self.numerator
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Nearest double to `numerator / 2^n`.
    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.numerator, self.trials)
    }
}

/// `num / 2^exp` as an `f64`, without overflowing the intermediate values.
pub(crate) fn ratio_to_f64(num: &BigUint, exp: u64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    // keep 128 leading bits; the dropped tail is below 2^-127 relative
    let drop = num.bits().saturating_sub(128);
    let mantissa = (num >> drop).to_f64().unwrap_or(f64::INFINITY);
    scale_by_pow2(mantissa, drop as i64 - exp as i64)
}

fn scale_by_pow2(mut x: f64, mut exp: i64) -> f64 {
    while exp > 0 {
        let step = exp.min(1000);
        x *= 2f64.powi(step as i32);
        exp -= step;
    }
    while exp < 0 {
        let step = (-exp).min(1000);
        x *= 2f64.powi(-(step as i32));
        exp += step;
    }
    x
}

/// Exact upper tail `Pr[X >= g]` for `X ~ Binomial(n, 1/2)`.
pub fn upper_tail(n: u64, g: u64) -> Result<TailProbability, StatsError> {
    if n == 0 {
        return Err(StatsError::NoTrials);
    }
    if g > n {
        return Err(StatsError::CorrectExceedsTrials {
            correct: g,
            trials: n,
        });
    }
    // walk i = n, n-1, ..., g using C(n, i-1) = C(n, i) * i / (n - i + 1)
    let mut term = BigUint::one();
    let mut sum = BigUint::one();
    let mut i = n;
    while i > g {
        term = term * BigUint::from(i) / BigUint::from(n - i + 1);
        sum += &term;
        i -= 1;
    }
    Ok(TailProbability {
        numerator: sum,
        trials: n,
    })
}

/// The p-value `Pr[X >= g]` as a double.
pub fn binomial_tail(n: u64, g: u64) -> Result<f64, StatsError> {
    upper_tail(n, g).map(|t| t.to_f64())
}

/// `Pr[X >= g]` for every `g` in `0..=n`, sharing one pass over the row.
pub fn upper_tails(n: u64) -> Result<Vec<f64>, StatsError> {
    if n == 0 {
        return Err(StatsError::NoTrials);
    }
    let mut tails = vec![0.0; n as usize + 1];
    let mut term = BigUint::one();
    let mut sum = BigUint::zero();
    for i in (0..=n).rev() {
        if i < n {
            term = term * BigUint::from(i + 1) / BigUint::from(n - i);
        }
        sum += &term;
        tails[i as usize] = ratio_to_f64(&sum, n);
    }
    Ok(tails)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profession {
    Finance,
    Other,
    #[default]
    Undeclared,
}

/// Per-subject tallies for one contest. Unanswered trials are already
/// counted in `assigned` but not in `answered` or `correct`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    #[serde(default)]
    pub profession: Profession,
    pub correct: u32,
    pub answered: u32,
    pub assigned: u32,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, correct: u32, answered: u32, assigned: u32) -> Self {
        Self {
            subject_id: subject_id.into(),
            profession: Profession::Undeclared,
            correct,
            answered,
            assigned,
        }
    }

    pub fn with_profession(mut self, profession: Profession) -> Self {
        self.profession = profession;
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.correct <= self.answered && self.answered <= self.assigned
    }

    pub fn response_rate(&self) -> f64 {
        if self.assigned == 0 {
            0.0
        } else {
            f64::from(self.answered) / f64::from(self.assigned)
        }
    }
}

/// Aggregate outcome of one contest: `s` subjects, `c` charts each, `g`
/// correct out of `n = s * c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestResult {
    pub subjects: u32,
    pub charts_per_subject: u32,
    pub correct_guesses: u64,
    pub trials: u64,
    /// correct count -> number of subjects with that count
    pub histogram: BTreeMap<u32, u32>,
    pub p_value: f64,
}

impl ContestResult {
    pub fn accuracy(&self) -> f64 {
        self.correct_guesses as f64 / self.trials as f64
    }
}

impl fmt::Display for ContestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subjects            {}", self.subjects)?;
        writeln!(f, "charts per subject  {}", self.charts_per_subject)?;
        writeln!(f, "trials              {}", self.trials)?;
        writeln!(
            f,
            "correct guesses     {} ({})",
            self.correct_guesses,
            format_percent(self.accuracy())
        )?;
        writeln!(f, "p-value             {}", format_p_value(self.p_value))?;
        write!(f, "histogram          ")?;
        for (correct, subjects) in &self.histogram {
            write!(f, " {correct}:{subjects}")?;
        }
        Ok(())
    }
}

/// Five significant digits, e.g. `0.00040423`; plain decimals keep the
/// value readable next to reported figures.
pub fn format_p_value(p: f64) -> String {
    if p == 0.0 {
        return "0".into();
    }
    if p >= 1e-6 {
        let digits = (4 - p.log10().floor() as i32).max(0) as usize;
        format!("{p:.digits$}")
    } else {
        format!("{p:.4e}")
    }
}

/// A fraction in `[0, 1]` as a percentage with one decimal place.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

/// Aggregates per-subject records into a [`ContestResult`].
pub fn summarize_contest(
    records: &[SubjectRecord],
    charts_per_subject: u32,
) -> Result<ContestResult, StatsError> {
    if records.is_empty() {
        return Err(StatsError::NoRecords);
    }
    let mut histogram = BTreeMap::new();
    let mut correct = 0u64;
    for r in records {
        if !r.is_consistent() {
            return Err(StatsError::InconsistentRecord(r.subject_id.clone()));
        }
        if r.assigned != charts_per_subject {
            return Err(StatsError::AssignedMismatch {
                subject: r.subject_id.clone(),
                assigned: r.assigned,
                expected: charts_per_subject,
            });
        }
        *histogram.entry(r.correct).or_insert(0) += 1;
        correct += u64::from(r.correct);
    }
    let subjects = records.len() as u32;
    let trials = u64::from(subjects) * u64::from(charts_per_subject);
    let p_value = binomial_tail(trials, correct)?;
    Ok(ContestResult {
        subjects,
        charts_per_subject,
        correct_guesses: correct,
        trials,
        histogram,
        p_value,
    })
}

/// Drops subjects who answered too few of their trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionPolicy {
    /// Subjects with `answered / assigned` strictly below this are excluded.
    pub min_response_rate: f64,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        Self {
            min_response_rate: 0.5,
        }
    }
}

impl ExclusionPolicy {
    pub fn disabled() -> Self {
        Self {
            min_response_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestSummary {
    pub result: ContestResult,
    pub excluded: Vec<String>,
}

/// [`summarize_contest`] after applying `policy`. Every exclusion is logged
/// and listed in the summary.
pub fn summarize_with_policy(
    records: &[SubjectRecord],
    charts_per_subject: u32,
    policy: &ExclusionPolicy,
) -> Result<ContestSummary, StatsError> {
    let (kept, dropped): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| r.response_rate() >= policy.min_response_rate);
    for r in &dropped {
        tracing::warn!(
            subject = %r.subject_id,
            answered = r.answered,
            assigned = r.assigned,
            threshold = policy.min_response_rate,
            "excluding subject below response-rate threshold"
        );
    }
    Ok(ContestSummary {
        result: summarize_contest(&kept, charts_per_subject)?,
        excluded: dropped.into_iter().map(|r| r.subject_id).collect(),
    })
}

/// Accuracy of finance professionals versus everyone else (undeclared
/// counts as other). `None` marks a group with no assigned trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAccuracy {
    pub finance: Option<f64>,
    pub other: Option<f64>,
}

impl fmt::Display for SubgroupAccuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), format_percent);
        write!(
            f,
            "finance {} vs other {}",
            show(self.finance),
            show(self.other)
        )
    }
}

pub fn subgroup_accuracy(records: &[SubjectRecord]) -> SubgroupAccuracy {
    let mut finance = (0u64, 0u64);
    let mut other = (0u64, 0u64);
    for r in records {
        let bucket = match r.profession {
            Profession::Finance => &mut finance,
            Profession::Other | Profession::Undeclared => &mut other,
        };
        bucket.0 += u64::from(r.correct);
        bucket.1 += u64::from(r.assigned);
    }
    let rate = |(c, a): (u64, u64)| (a > 0).then(|| c as f64 / a as f64);
    SubgroupAccuracy {
        finance: rate(finance),
        other: rate(other),
    }
}
