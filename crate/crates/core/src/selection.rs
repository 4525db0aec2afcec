//! Batch selection: pick the `b` training samples out of a scored pool.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Stream;
use crate::scoring::{Direction, ScoredPool};

/// Number of smallest-margin selected samples averaged by the telemetry.
pub const TELEMETRY_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Uniform,
    Mms,
    Hnm,
    Entropy,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Uniform, Strategy::Mms, Strategy::Hnm, Strategy::Entropy];

    /// `None` for uniform sampling, which ignores scores.
    pub fn direction(self) -> Option<Direction> {
        match self {
            Strategy::Uniform => None,
            Strategy::Mms => Some(Direction::Smallest),
            Strategy::Hnm | Strategy::Entropy => Some(Direction::Largest),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Mms => "mms",
            Strategy::Hnm => "hnm",
            Strategy::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::config(
                "strategy",
                format!("unknown strategy {s:?} (expected uniform, mms, hnm or entropy)"),
            )
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Pool positions, strictly increasing.
    pub indices: Vec<usize>,
    /// Mean MMS of the selection; filled in for the MMS strategy, and by the
    /// trainer via [`mean_mms_telemetry`] for the others.
    pub mean_mms_10: Option<f64>,
}

/// Orders pool positions so that the preferred samples come first; equal
/// scores fall back to the lower position.
fn preference(scores: &[f64], direction: Direction) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        let by_score = match direction {
            Direction::Smallest => scores[a].total_cmp(&scores[b]),
            Direction::Largest => scores[b].total_cmp(&scores[a]),
        };
        by_score.then(a.cmp(&b))
    }
}

/// Indices of the `b` most extreme scores in `direction`, ascending.
pub fn extreme_indices(scores: &[f64], direction: Direction, b: usize) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    if b < n {
        order.select_nth_unstable_by(b, preference(scores, direction));
        order.truncate(b);
    }
    order.sort_unstable();
    order
}

/// Every pool position ranked by preference (most preferred first).
pub fn ranked_indices(scores: &[f64], direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(preference(scores, direction));
    order
}

pub fn select(
    pool: &ScoredPool,
    strategy: Strategy,
    b: usize,
    stream: &mut Stream,
) -> Result<SelectionResult> {
    if b == 0 {
        return Err(Error::config("b", "batch size must be at least 1"));
    }
    if pool.is_empty() {
        return Err(Error::Empty("cannot select from an empty pool"));
    }
    let n = pool.len();
    let indices = match strategy.direction() {
        None if b >= n => (0..n).collect(),
        None => {
            let mut drawn = stream.sample_indices(n, b);
            drawn.sort_unstable();
            drawn
        }
        Some(direction) => {
            if pool.direction != direction {
                return Err(Error::config(
                    "strategy",
                    format!(
                        "{strategy} selects the {direction:?} scores but the pool is ranked {:?}",
                        pool.direction
                    ),
                ));
            }
            extreme_indices(&pool.scores, direction, b)
        }
    };
    let mut result = SelectionResult {
        indices,
        mean_mms_10: None,
    };
    if strategy == Strategy::Mms {
        result.mean_mms_10 = Some(mean_mms_telemetry(pool, &result)?);
    }
    Ok(result)
}

/// Mean MMS of the (up to) ten smallest-margin samples in the selection.
/// `mms` must hold MMS scores for the same pool the selection came from.
pub fn mean_mms_telemetry(mms: &ScoredPool, result: &SelectionResult) -> Result<f64> {
    if result.indices.is_empty() {
        return Err(Error::Empty("telemetry over an empty selection"));
    }
    if let Some(&bad) = result.indices.iter().find(|&&i| i >= mms.len()) {
        return Err(Error::shape(
            "mean_mms_telemetry",
            format!("selected index {bad} outside a pool of {}", mms.len()),
        ));
    }
    let mut selected: Vec<f64> = result.indices.iter().map(|&i| mms.scores[i]).collect();
    selected.sort_by(f64::total_cmp);
    let window = &selected[..selected.len().min(TELEMETRY_WINDOW)];
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Vector;

    fn pool(scores: &[f64], direction: Direction) -> ScoredPool {
        ScoredPool {
            scores: Vector::from(scores.to_vec()),
            predicted: vec![0; scores.len()],
            top2: vec![(0, 1); scores.len()],
            direction,
        }
    }

    fn by_indices(indices: &[usize]) -> SelectionResult {
        SelectionResult {
            indices: indices.to_vec(),
            mean_mms_10: None,
        }
    }

    #[test]
    fn smallest_with_index_tie_break() {
        let p = pool(&[0.3, 0.1, 0.5, 0.1], Direction::Smallest);
        let r = select(&p, Strategy::Mms, 2, &mut Stream::new(0)).unwrap();
        assert_eq!(r.indices, vec![1, 3]);
        assert_eq!(r.mean_mms_10, Some(0.1));

        let r = select(&p, Strategy::Mms, 1, &mut Stream::new(0)).unwrap();
        assert_eq!(r.indices, vec![1]);
    }

    #[test]
    fn largest_with_index_tie_break() {
        let p = pool(&[2.0, 5.0, 5.0, 1.0, 5.0], Direction::Largest);
        let r = select(&p, Strategy::Hnm, 2, &mut Stream::new(0)).unwrap();
        assert_eq!(r.indices, vec![1, 2]);
        assert_eq!(r.mean_mms_10, None);
    }

    #[test]
    fn oversized_batch_takes_everything() {
        let p = pool(&[0.4, 0.2, 0.9], Direction::Smallest);
        for strategy in [Strategy::Mms, Strategy::Uniform] {
            let r = select(&p, strategy, 5, &mut Stream::new(0)).unwrap();
            assert_eq!(r.indices, vec![0, 1, 2]);
        }
    }

    #[test]
    fn infinite_sentinels_come_last() {
        let p = pool(&[f64::INFINITY, 3.0, f64::INFINITY, 7.0], Direction::Smallest);
        let r = select(&p, Strategy::Mms, 3, &mut Stream::new(0)).unwrap();
        assert_eq!(r.indices, vec![0, 1, 3]);
    }

    #[test]
    fn rejects_zero_batch_and_empty_pool() {
        let p = pool(&[1.0], Direction::Smallest);
        assert!(select(&p, Strategy::Mms, 0, &mut Stream::new(0)).is_err());
        let empty = pool(&[], Direction::Smallest);
        assert!(select(&empty, Strategy::Uniform, 1, &mut Stream::new(0)).is_err());
    }

    #[test]
    fn rejects_direction_mismatch() {
        let p = pool(&[1.0, 2.0], Direction::Largest);
        assert_eq!(
            select(&p, Strategy::Mms, 1, &mut Stream::new(0))
                .unwrap_err()
                .kind(),
            "config"
        );
    }

    #[test]
    fn uniform_is_reproducible_and_unique() {
        let p = pool(&vec![0.0; 100], Direction::Smallest);
        let a = select(&p, Strategy::Uniform, 10, &mut Stream::new(5)).unwrap();
        let b = select(&p, Strategy::Uniform, 10, &mut Stream::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a.indices.iter().all(|&i| i < 100));
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut s = Stream::new(61);
        let scores: Vec<f64> = (0..1000).map(|_| s.uniform()).collect();
        let p = pool(&scores, Direction::Smallest);
        let r = select(&p, Strategy::Mms, 64, &mut s).unwrap();
        let mut got: Vec<f64> = r.indices.iter().map(|&i| scores[i]).collect();
        got.sort_by(f64::total_cmp);
        let mut all = scores.clone();
        all.sort_by(f64::total_cmp);
        assert_eq!(got, all[..64].to_vec());
    }

    #[test]
    fn telemetry_cases() {
        let p = pool(&[0.5; 12], Direction::Smallest);
        let r = by_indices(&(0..10).collect::<Vec<_>>());
        assert_eq!(mean_mms_telemetry(&p, &r).unwrap(), 0.5);

        let p = pool(&[4.0, 1.0, 3.0, 2.0, 0.0], Direction::Smallest);
        assert_eq!(mean_mms_telemetry(&p, &by_indices(&[0, 1, 2, 3])).unwrap(), 2.5);

        assert!(mean_mms_telemetry(&p, &by_indices(&[])).is_err());
        assert!(mean_mms_telemetry(&p, &by_indices(&[9])).is_err());
    }

    #[test]
    fn telemetry_matches_sort_and_average() {
        let mut s = Stream::new(67);
        let scores: Vec<f64> = (0..640).map(|_| s.uniform()).collect();
        let p = pool(&scores, Direction::Smallest);
        let r = select(&p, Strategy::Uniform, 64, &mut s).unwrap();
        let mut sel: Vec<f64> = r.indices.iter().map(|&i| scores[i]).collect();
        sel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = sel[..10].iter().sum::<f64>() / 10.0;
        assert!((mean_mms_telemetry(&p, &r).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("random".parse::<Strategy>().is_err());
    }
}
