//! Real-versus-permuted chart experiments.
//!
//! Subjects watch two live price charts. One replays actual returns in their
//! original order; the other cumulates a uniform random permutation of the
//! same returns. After each pair the subject picks the chart they believe is
//! real and is told at once whether they were right. The number of correct
//! guesses is tested against the fair-coin null with an exact binomial tail.
//!
//! * [`series`]: returns, permutations, surrogate paths, segmenting.
//! * [`stats`]: exact binomial tails, contest aggregation, subgroups.
//! * [`engine`]: contests, sessions and the trial state machine.
//! * [`store`]: CSV ingestion, the codename registry, the JSONL event log.
//! * [`protocol`]: wire messages and the transcript validator.
//! * [`bots`]: coin-flipping and feedback-learning subjects.
//! * [`synth`]: synthetic return generators.
//!
//! ```
//! use realchart::series::{build_surrogate, compute_returns, sample_permutation, PricePath};
//!
//! let path = PricePath::new(vec![100.0, 101.0, 99.5, 102.0, 101.0])?;
//! let returns = compute_returns(&path);
//! let perm = sample_permutation(returns.len(), 42)?;
//! let surrogate = build_surrogate(&returns, &perm)?;
//! assert_eq!(surrogate.prices()[0], 100.0);
//! assert!((surrogate.final_price() - 101.0).abs() < 1e-12);
//! # Ok::<(), realchart::series::SeriesError>(())
//! ```

pub mod bots;
pub mod engine;
pub mod protocol;
pub mod series;
pub mod stats;
pub mod store;
pub mod synth;

/// UTC milliseconds since the Unix epoch.
pub type Millis = u64;

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
            match d {
                Some(d) => s.serialize_some(&(d.as_millis() as u64)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
            Option::<u64>::deserialize(d).map(|o| o.map(Duration::from_millis))
        }
    }
}
