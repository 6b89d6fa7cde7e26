//! Price paths, returns and permutation surrogates.
//!
//! Returns are **arithmetic price differences**, `r_t = p_t - p_{t-1}`, not
//! log returns. A surrogate path starts at the same price as the source and
//! cumulates the same returns in a uniformly permuted order:
//!
//! ```text
//! p*_0 = p_0
//! p*_t = p_0 + r_{π(1)} + r_{π(2)} + ... + r_{π(t)}
//! ```
//!
//! A permutation keeps the multiset of returns, so the surrogate shares the
//! mean, variance and higher moments of the source increments and ends at the
//! same final price. Only the temporal ordering is destroyed.

use std::ops::Range;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used by every floating-point invariant in this module.
pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("price path needs at least 2 prices, got {0}")]
    TooShort(usize),
    #[error("price at index {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("permutation length must be at least 1")]
    EmptyPermutation,
    #[error("mapping is not a bijection on 0..{0}")]
    NotABijection(usize),
    #[error("permutation has length {perm} but the return sequence has length {returns}")]
    LengthMismatch { perm: usize, returns: usize },
    #[error(
        "need {needed} returns for {count} segments of {points} points, have {available} (max feasible count {max_feasible})"
    )]
    Capacity {
        needed: usize,
        available: usize,
        count: usize,
        points: usize,
        max_feasible: usize,
    },
    #[error("points_per_chart must be positive")]
    ZeroPoints,
    #[error("return sequence is empty")]
    EmptyReturns,
    #[error("points_per_screen ({screen}) exceeds points_per_chart ({chart})")]
    ScreenExceedsChart { screen: usize, chart: usize },
}

/// Observed prices `p_0..p_T` for one instrument segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    prices: Vec<f64>,
    origin_index: usize,
}

impl PricePath {
    pub fn new(prices: Vec<f64>) -> Result<Self, SeriesError> {
        Self::with_origin(prices, 0)
    }

    /// `origin_index` is the offset of `prices[0]` in the source dataset.
    pub fn with_origin(prices: Vec<f64>, origin_index: usize) -> Result<Self, SeriesError> {
        if prices.len() < 2 {
            return Err(SeriesError::TooShort(prices.len()));
        }
        if let Some((index, &value)) = prices.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(SeriesError::NonFinite { index, value });
        }
        Ok(Self {
            prices,
            origin_index,
        })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn origin_index(&self) -> usize {
        self.origin_index
    }

    /// Number of returns, `T`.
    pub fn horizon(&self) -> usize {
        self.prices.len() - 1
    }

    pub fn final_price(&self) -> f64 {
        self.prices[self.prices.len() - 1]
    }
}

/// Returns `r_1..r_T` together with the base price `p_0` they start from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSequence {
    returns: Vec<f64>,
    base_price: f64,
    /// Index of `returns[0]` in the source dataset (0-based, so the return
    /// from `p_0` to `p_1` has offset 0).
    offset: usize,
}

impl ReturnSequence {
    pub fn new(returns: Vec<f64>, base_price: f64) -> Self {
        Self::with_offset(returns, base_price, 0)
    }

    pub fn with_offset(returns: Vec<f64>, base_price: f64, offset: usize) -> Self {
        Self {
            returns,
            base_price,
            offset,
        }
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn base_price(&self) -> f64 {
        self.base_price
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Source-dataset index range covered by these returns.
    pub fn index_range(&self) -> Range<usize> {
        self.offset..self.offset + self.returns.len()
    }

    /// Rebuilds prices by cumulating the returns from the base price.
    pub fn cumulate(&self) -> Vec<f64> {
        cumulate(self.base_price, self.returns.iter().copied())
    }

    /// Prices as a [`PricePath`]; fails only for an empty sequence.
    pub fn to_path(&self) -> Result<PricePath, SeriesError> {
        PricePath::with_origin(self.cumulate(), self.offset)
    }

    /// A segment is degenerate when every return is identical: any
    /// permutation then reproduces the source exactly and a trial built on it
    /// cannot be decided.
    pub fn is_degenerate(&self) -> bool {
        match self.returns.split_first() {
            None => true,
            Some((first, rest)) => rest.iter().all(|r| r == first),
        }
    }

    /// Contiguous sub-sequence `range` (indices into `returns`) with the
    /// matching base price.
    pub fn slice(&self, range: Range<usize>) -> ReturnSequence {
        let base = self.base_price + self.returns[..range.start].iter().sum::<f64>();
        ReturnSequence {
            returns: self.returns[range.clone()].to_vec(),
            base_price: base,
            offset: self.offset + range.start,
        }
    }
}

fn cumulate(base: f64, returns: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut prices = Vec::with_capacity(returns.size_hint().0 + 1);
    let mut level = base;
    prices.push(level);
    for r in returns {
        level += r;
        prices.push(level);
    }
    prices
}

/// A bijection on `0..T`, stored 0-based, plus the seed it was drawn with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
    seed: u64,
}

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Self {
            mapping: (0..len).collect(),
            seed: 0,
        }
    }

    /// Builds a permutation from a 0-based mapping, checking bijectivity.
    pub fn from_mapping(mapping: Vec<usize>, seed: u64) -> Result<Self, SeriesError> {
        let n = mapping.len();
        if n == 0 {
            return Err(SeriesError::EmptyPermutation);
        }
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(SeriesError::NotABijection(n));
            }
        }
        Ok(Self { mapping, seed })
    }

    /// Same as [`from_mapping`](Self::from_mapping) but takes the 1-based
    /// notation `π(k) ∈ {1..T}`.
    pub fn from_one_based(mapping: &[usize]) -> Result<Self, SeriesError> {
        let n = mapping.len();
        let zero_based = mapping
            .iter()
            .map(|&m| m.checked_sub(1).ok_or(SeriesError::NotABijection(n)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_mapping(zero_based, 0)
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Draws a uniform permutation of `0..length` with a ChaCha8 stream seeded
/// from `seed`. The same `(length, seed)` always yields the same mapping.
pub fn sample_permutation(length: usize, seed: u64) -> Result<Permutation, SeriesError> {
    if length == 0 {
        return Err(SeriesError::EmptyPermutation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping: Vec<usize> = (0..length).collect();
    mapping.shuffle(&mut rng);
    Ok(Permutation { mapping, seed })
}

/// Price path cumulated from permuted returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePath {
    prices: Vec<f64>,
    permutation: Permutation,
    /// Dataset offset of the source return sequence.
    source_offset: usize,
}

impl SurrogatePath {
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn source_offset(&self) -> usize {
        self.source_offset
    }

    pub fn final_price(&self) -> f64 {
        self.prices[self.prices.len() - 1]
    }

    /// Consecutive price differences of the surrogate.
    pub fn increments(&self) -> Vec<f64> {
        self.prices.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `r_t = p_t - p_{t-1}` for `t = 1..T`, with `base_price = p_0`.
pub fn compute_returns(path: &PricePath) -> ReturnSequence {
    let returns = path.prices.windows(2).map(|w| w[1] - w[0]).collect();
    ReturnSequence::with_offset(returns, path.prices[0], path.origin_index)
}

/// Cumulates `source` in the order given by `perm`.
pub fn build_surrogate(
    source: &ReturnSequence,
    perm: &Permutation,
) -> Result<SurrogatePath, SeriesError> {
    if perm.len() != source.len() {
        return Err(SeriesError::LengthMismatch {
            perm: perm.len(),
            returns: source.len(),
        });
    }
    let prices = cumulate(
        source.base_price,
        perm.mapping.iter().map(|&k| source.returns[k]),
    );
    Ok(SurrogatePath {
        prices,
        permutation: perm.clone(),
        source_offset: source.offset,
    })
}

/// Splits the front of `source` into `count` consecutive, non-overlapping
/// segments of `points_per_chart` returns each.
pub fn segment_disjoint(
    source: &ReturnSequence,
    count: usize,
    points_per_chart: usize,
) -> Result<Vec<ReturnSequence>, SeriesError> {
    if points_per_chart == 0 {
        return Err(SeriesError::ZeroPoints);
    }
    let needed = count * points_per_chart;
    if needed > source.len() {
        return Err(SeriesError::Capacity {
            needed,
            available: source.len(),
            count,
            points: points_per_chart,
            max_feasible: source.len() / points_per_chart,
        });
    }
    Ok((0..count)
        .map(|i| source.slice(i * points_per_chart..(i + 1) * points_per_chart))
        .collect())
}

/// Circularly rotates the returns left by `offset`, so `(1, 2, 3)` rotated
/// by 2 becomes `(3, 1, 2)`. The base price is kept.
pub fn rotate(source: &ReturnSequence, offset: usize) -> ReturnSequence {
    let mut returns = source.returns.clone();
    if !returns.is_empty() {
        returns.rotate_left(offset % source.len());
    }
    ReturnSequence {
        returns,
        base_price: source.base_price,
        offset: source.offset,
    }
}

/// Rotation by an offset drawn uniformly from `0..T`.
pub fn random_shift<R: Rng + ?Sized>(
    source: &ReturnSequence,
    rng: &mut R,
) -> Result<(ReturnSequence, usize), SeriesError> {
    if source.is_empty() {
        return Err(SeriesError::EmptyReturns);
    }
    let offset = rng.random_range(0..source.len());
    Ok((rotate(source, offset), offset))
}

/// How much of a trial is revealed and how fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartWindow {
    pub points_per_chart: usize,
    pub points_per_screen: usize,
    #[serde(rename = "tick_interval_ms", with = "crate::duration_ms")]
    pub tick_interval: Duration,
}

impl ChartWindow {
    pub fn new(points_per_chart: usize, points_per_screen: usize) -> Result<Self, SeriesError> {
        let window = Self {
            points_per_chart,
            points_per_screen,
            tick_interval: Duration::from_secs(1),
        };
        window.validate()?;
        Ok(window)
    }

    pub fn with_tick_interval(mut self, tick_interval: Duration) -> Self {
        self.tick_interval = tick_interval;
        self
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        if self.points_per_chart == 0 || self.points_per_screen == 0 {
            return Err(SeriesError::ZeroPoints);
        }
        if self.points_per_screen > self.points_per_chart {
            return Err(SeriesError::ScreenExceedsChart {
                screen: self.points_per_screen,
                chart: self.points_per_chart,
            });
        }
        Ok(())
    }

    /// Time to stream every point of one chart.
    pub fn stream_duration(&self) -> Duration {
        self.tick_interval * self.points_per_chart as u32
    }
}

/// `|a - b| <= REL_TOL * max(|a|, |b|, 1)`.
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(prices: &[f64]) -> PricePath {
        PricePath::new(prices.to_vec()).unwrap()
    }

    #[test]
    fn returns_are_differences() {
        let r = compute_returns(&path(&[100.0, 101.0, 99.0]));
        assert_eq!(r.returns(), &[1.0, -2.0]);
        assert_eq!(r.base_price(), 100.0);

        let flat = compute_returns(&path(&[5.0, 5.0, 5.0, 5.0]));
        assert_eq!(flat.returns(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn triangular_prices_resum() {
        let p = path(&[0.0, 1.0, 3.0, 6.0, 10.0]);
        let r = compute_returns(&p);
        assert_eq!(r.returns(), &[1.0, 2.0, 3.0, 4.0]);
        // cumulative re-sum reproduces the input
        let mut acc = r.base_price();
        let mut resum = vec![acc];
        for x in r.returns() {
            acc += x;
            resum.push(acc);
        }
        assert_eq!(resum, p.prices());
    }

    #[test]
    fn short_or_nonfinite_paths_rejected() {
        assert_eq!(PricePath::new(vec![1.0]), Err(SeriesError::TooShort(1)));
        assert!(matches!(
            PricePath::new(vec![1.0, f64::NAN]),
            Err(SeriesError::NonFinite { index: 1, .. })
        ));
        assert!(PricePath::new(vec![f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn length_one_permutation_is_identity() {
        let p = sample_permutation(1, 99).unwrap();
        assert_eq!(p.mapping(), &[0]);
        assert_eq!(sample_permutation(0, 1), Err(SeriesError::EmptyPermutation));
    }

    #[test]
    fn permutation_is_deterministic_per_seed() {
        let a = sample_permutation(50, 1234).unwrap();
        let b = sample_permutation(50, 1234).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed(), 1234);
        let c = sample_permutation(50, 1235).unwrap();
        assert_ne!(a.mapping(), c.mapping());
    }

    #[test]
    fn bijection_checked() {
        assert!(Permutation::from_mapping(vec![0, 0], 0).is_err());
        assert!(Permutation::from_mapping(vec![0, 2], 0).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
        assert!(Permutation::from_one_based(&[2, 1]).is_ok());
    }

    #[test]
    fn surrogate_by_hand() {
        let r = ReturnSequence::new(vec![1.0, -2.0, 3.0], 10.0);
        let perm = Permutation::from_one_based(&[3, 1, 2]).unwrap();
        let s = build_surrogate(&r, &perm).unwrap();
        assert_eq!(s.prices(), &[10.0, 13.0, 14.0, 12.0]);
    }

    #[test]
    fn identity_surrogate_is_the_source() {
        let p = path(&[3.0, 4.5, 4.0, 7.25, 6.0]);
        let r = compute_returns(&p);
        let s = build_surrogate(&r, &Permutation::identity(r.len())).unwrap();
        assert_eq!(s.prices(), p.prices());
    }

    #[test]
    fn every_permutation_of_three_ends_at_twelve() {
        let r = ReturnSequence::new(vec![1.0, -2.0, 3.0], 10.0);
        let orders = [
            [1, 2, 3],
            [1, 3, 2],
            [2, 1, 3],
            [2, 3, 1],
            [3, 1, 2],
            [3, 2, 1],
        ];
        for order in orders {
            let perm = Permutation::from_one_based(&order).unwrap();
            let s = build_surrogate(&r, &perm).unwrap();
            assert_eq!(s.final_price(), 12.0, "order {order:?}");
        }
    }

    #[test]
    fn surrogate_length_mismatch() {
        let r = ReturnSequence::new(vec![1.0, 2.0], 0.0);
        let err = build_surrogate(&r, &Permutation::identity(3)).unwrap_err();
        assert_eq!(err, SeriesError::LengthMismatch { perm: 3, returns: 2 });
    }

    #[test]
    fn disjoint_segments_cover_prefix() {
        let source = ReturnSequence::new((1..=100).map(f64::from).collect(), 0.0);
        let segs = segment_disjoint(&source, 2, 40).unwrap();
        assert_eq!(segs.len(), 2);
        // 1-based indices 1..=40 and 41..=80
        assert_eq!(segs[0].index_range(), 0..40);
        assert_eq!(segs[1].index_range(), 40..80);
        assert_eq!(segs[0].returns()[0], 1.0);
        assert_eq!(segs[1].returns()[0], 41.0);
        // base of the second segment is the price at its start
        assert_eq!(segs[1].base_price(), (1..=40).sum::<i32>() as f64);

        let joined: Vec<f64> = segs.iter().flat_map(|s| s.returns().to_vec()).collect();
        assert_eq!(joined, source.returns()[..80]);
    }

    #[test]
    fn disjoint_capacity_error() {
        let source = ReturnSequence::new(vec![0.5; 70], 0.0);
        match segment_disjoint(&source, 2, 40) {
            Err(SeriesError::Capacity { max_feasible, .. }) => assert_eq!(max_feasible, 1),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn rotation_by_hand() {
        let r = ReturnSequence::new(vec![1.0, 2.0, 3.0], 0.0);
        assert_eq!(rotate(&r, 0).returns(), r.returns());
        assert_eq!(rotate(&r, 2).returns(), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn random_shift_keeps_multiset() {
        let source = ReturnSequence::new(vec![0.3, -1.0, 2.5, 0.0, 7.0, -3.25], 1.0);
        let mut sorted_source = source.returns().to_vec();
        sorted_source.sort_by(f64::total_cmp);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (shifted, offset) = random_shift(&source, &mut rng).unwrap();
            assert!(offset < source.len());
            let mut sorted = shifted.returns().to_vec();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted, sorted_source);
        }
        let empty = ReturnSequence::new(vec![], 1.0);
        assert!(random_shift(&empty, &mut rng).is_err());
    }

    #[test]
    fn degenerate_detection() {
        assert!(ReturnSequence::new(vec![0.0; 5], 1.0).is_degenerate());
        assert!(ReturnSequence::new(vec![0.25; 5], 1.0).is_degenerate());
        assert!(!ReturnSequence::new(vec![0.0, 0.0, 1.0], 1.0).is_degenerate());
    }

    #[test]
    fn chart_window_invariants() {
        assert!(ChartWindow::new(80, 40).is_ok());
        assert!(ChartWindow::new(40, 80).is_err());
        assert!(ChartWindow::new(0, 0).is_err());
        let w = ChartWindow::new(80, 40).unwrap();
        assert_eq!(w.stream_duration(), Duration::from_secs(80));
    }
}
