//! High-activity training windows.
//!
//! Each day is scanned for fixed-length windows whose endpoint mid-price
//! difference is largest; a greedy pass keeps the best non-overlapping ones.
//! The pooled candidates are then subsampled uniformly without replacement.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{TradingDay, PRICE_SCALE};

pub const DEFAULT_LENGTH: usize = 10_000;
pub const DEFAULT_PER_DAY: usize = 5;
pub const DEFAULT_TOTAL: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub day_id: String,
    pub start_tick: usize,
    pub length: usize,
    /// |mid(end) - mid(start)| in dollars.
    pub score: f64,
}

impl Window {
    pub fn end_tick(&self) -> usize {
        self.start_tick + self.length
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.day_id == other.day_id
            && self.start_tick < other.end_tick()
            && other.start_tick < self.end_tick()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayWindows {
    pub windows: Vec<Window>,
    /// Set when fewer than the requested number of disjoint windows fit.
    pub short: bool,
}

/// Endpoint score of every window start, in doubled-mid price units.
fn endpoint_scores(mids2: &[i64], length: usize) -> Vec<i64> {
    (0..=mids2.len() - length)
        .map(|s| (mids2[s + length - 1] - mids2[s]).abs())
        .collect()
}

/// Picks up to `per_day` pairwise-disjoint windows by descending score,
/// breaking ties by earliest start.
pub fn score_day_windows(day: &TradingDay, length: usize, per_day: usize) -> Result<DayWindows> {
    if length == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if day.len() < length {
        return Err(Error::TooShort {
            rows: day.len(),
            required: length,
        });
    }
    let scores = endpoint_scores(&day.doubled_mids(), length);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));

    let mut picked: Vec<usize> = Vec::with_capacity(per_day);
    for start in order {
        if picked.len() == per_day {
            break;
        }
        if picked
            .iter()
            .all(|&p| start + length <= p || p + length <= start)
        {
            picked.push(start);
        }
    }
    let short = picked.len() < per_day;
    let windows = picked
        .into_iter()
        .map(|start| Window {
            day_id: day.day_id.clone(),
            start_tick: start,
            length,
            score: scores[start] as f64 / (2 * PRICE_SCALE) as f64,
        })
        .collect();
    Ok(DayWindows { windows, short })
}

/// Uniform subsample of `total` windows without replacement, returned in
/// their original order.
pub fn select_training_windows(all: &[Window], total: usize, seed: u64) -> Result<Vec<Window>> {
    if total > all.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {total} windows but only {} are available",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, all.len(), total).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all[i].clone()).collect())
}

/// True when no two windows from the same day overlap.
pub fn windows_disjoint(windows: &[Window]) -> bool {
    windows
        .iter()
        .enumerate()
        .all(|(i, a)| windows[i + 1..].iter().all(|b| !a.overlaps(b)))
}
