use std::ops::Range;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RoarError};
use crate::fieldsim::{Episode, Frame};

/// Default anomalous fraction after rebalancing.
pub const REBALANCE_TARGET: f64 = 0.3;

/// A contiguous run of frames inside one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn frames<'a>(&self, episodes: &'a [Episode]) -> &'a [Frame] {
        &episodes[self.episode].frames[self.range()]
    }

    /// Anomalous iff any frame has an imminent failure.
    pub fn is_anomalous(&self, episodes: &[Episode]) -> bool {
        self.frames(episodes).iter().any(Frame::is_anomalous)
    }
}

/// Non-overlapping windows over the first `lengths[i]` frames of each
/// episode; fragments shorter than `seq_len` are dropped.
pub fn windows_for_lengths(lengths: &[usize], seq_len: usize) -> Result<Vec<Window>> {
    if seq_len == 0 {
        return Err(RoarError::invalid("seq_len must be at least 1"));
    }
    Ok(lengths
        .iter()
        .enumerate()
        .flat_map(|(episode, &n)| {
            (0..n / seq_len).map(move |k| Window {
                episode,
                start: k * seq_len,
                len: seq_len,
            })
        })
        .collect())
}

/// Windows over whole episodes.
pub fn make_training_sequences(episodes: &[Episode], seq_len: usize) -> Result<Vec<Window>> {
    windows_for_lengths(&episodes.iter().map(Episode::len).collect::<Vec<_>>(), seq_len)
}

/// Windows over each episode minus its final `T-1` frames, whose failure
/// targets run past the recording.
pub fn make_trimmed_sequences(episodes: &[Episode], seq_len: usize) -> Result<Vec<Window>> {
    windows_for_lengths(&episodes.iter().map(Episode::tail_start).collect::<Vec<_>>(), seq_len)
}

fn draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count / pool.len() {
        out.extend_from_slice(pool);
    }
    out.extend(pool.choose_multiple(rng, count % pool.len()).copied());
    out
}

/// Resamples window indices so that the anomalous fraction reaches `target`.
///
/// The output has as many entries as the input. Anomalous windows are
/// duplicated and normal ones dropped; when the fraction already meets the
/// target the result is a permutation. The output order is shuffled.
pub fn rebalance(anomalous: &[bool], target: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&target) {
        return Err(RoarError::invalid(format!("rebalance target {target} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = anomalous.len();
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| anomalous[i]);
    let want = (target * n as f64).round() as usize;
    let mut out = if pos.is_empty() {
        warn!("rebalance: no anomalous windows among {n}; keeping original indices");
        (0..n).collect()
    } else if pos.len() >= want || neg.is_empty() {
        (0..n).collect()
    } else {
        let mut v = draw(&pos, want, &mut rng);
        v.extend(draw(&neg, n - want, &mut rng));
        v
    };
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_division_drops_tail() {
        let w = windows_for_lengths(&[17, 8, 3], 8).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].range(), 8..16);
        assert_eq!(
            w[2],
            Window {
                episode: 1,
                start: 0,
                len: 8
            }
        );
    }

    #[test]
    fn at_target_is_permutation() {
        let flags: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let mut out = rebalance(&flags, 0.3, 4).unwrap();
        out.sort_unstable();
        assert_eq!(out, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn no_anomalies_keeps_indices() {
        let mut out = rebalance(&[false; 5], 0.3, 0).unwrap();
        out.sort_unstable();
        assert_eq!(out, vec![0, 1, 2, 3, 4]);
    }
}
