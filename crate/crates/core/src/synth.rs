//! Reproducible synthetic trading days.
//!
//! The best bid follows a lazy random walk: with probability 0.1 per tick it
//! moves one tick up or down (reflected inside `[base/2, 2·base]`) and the
//! spread is redrawn; otherwise only volumes change. Level volumes are
//! independent geometric draws with mean `vol_scale`. There is no order-flow
//! persistence, which is unrealistic but enough to exercise the pipeline.
//!
//! With [`Signal::Momentum`] the generator plants a learnable pattern. At
//! randomly injected trigger ticks the top level is made heavily bid-side
//! imbalanced, and the mid is then lifted by one tick `strength` times at
//! evenly spaced offsets within the next [`MOMENTUM_HORIZON`] ticks.
//! Natural (non-injected) ticks have their top bid volume capped so that the
//! imbalance never exceeds the trigger threshold, so every tick whose
//! imbalance exceeds it is a logged trigger.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{mid_price, top_imbalance, BookLevel, BookSnapshot, InstrumentSpec, TradingDay};

/// Probability per tick that the random walk moves.
pub const MOVE_PROBABILITY: f64 = 0.1;
/// Ticks after a trigger within which the planted rise completes.
pub const MOMENTUM_HORIZON: usize = 50;

fn default_trigger_rate() -> f64 {
    0.004
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    None,
    Momentum {
        /// Ticks the mid rises after a trigger.
        strength: u32,
        /// Top-level imbalance above which a tick counts as a trigger.
        trigger_imbalance: f64,
        /// Per-tick probability of injecting a trigger when none is pending.
        #[serde(default = "default_trigger_rate")]
        trigger_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_ticks: usize,
    /// Starting best bid, dollars.
    pub base_price: f64,
    /// Mean level volume, shares.
    pub vol_scale: f64,
    pub signal: Signal,
    /// Probabilities of a 1, 2 and 3 tick spread (normalized internally).
    pub spread_distribution: [f64; 3],
    #[serde(default)]
    pub instrument: InstrumentSpec,
    #[serde(default)]
    pub day_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_ticks: 10_000,
            base_price: 50.0,
            vol_scale: 100.0,
            signal: Signal::None,
            spread_distribution: [0.6, 0.3, 0.1],
            instrument: InstrumentSpec::default(),
            day_id: String::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.instrument.validate()?;
        if self.n_ticks == 0 {
            return Err(Error::InvalidConfig("n_ticks must be positive".into()));
        }
        if !(self.vol_scale >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "vol_scale must be at least 1 share, got {}",
                self.vol_scale
            )));
        }
        if !(self.base_price > 0.0) {
            return Err(Error::InvalidConfig("base_price must be positive".into()));
        }
        let total: f64 = self.spread_distribution.iter().sum();
        if self.spread_distribution.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidConfig(
                "spread_distribution must be non-negative with positive mass".into(),
            ));
        }
        if let Signal::Momentum {
            strength,
            trigger_imbalance,
            trigger_rate,
        } = self.signal
        {
            if strength == 0 || strength as usize > MOMENTUM_HORIZON {
                return Err(Error::InvalidConfig(format!(
                    "momentum strength must be in 1..={MOMENTUM_HORIZON}"
                )));
            }
            if !(trigger_imbalance > 0.0 && trigger_imbalance < 1.0) {
                return Err(Error::InvalidConfig(
                    "trigger_imbalance must lie in (0, 1)".into(),
                ));
            }
            if !(0.0..=1.0).contains(&trigger_rate) {
                return Err(Error::InvalidConfig("trigger_rate must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// What the generator knows about the day it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Mid-price per tick, dollars.
    pub mids: Vec<f64>,
    /// Ticks at which a momentum trigger was planted.
    pub trigger_ticks: Vec<usize>,
}

struct Walk {
    bid: i64,
    spread: i64,
    lo: i64,
    hi: i64,
    cdf: [f64; 3],
}

impl Walk {
    fn draw_spread(&self, rng: &mut ChaCha8Rng) -> i64 {
        let u: f64 = rng.random();
        self.cdf.iter().position(|c| u < *c).unwrap_or(2) as i64 + 1
    }

    fn random_move(&mut self, rng: &mut ChaCha8Rng) {
        let step = if rng.random::<bool>() { 1 } else { -1 };
        let next = self.bid + step;
        self.bid = if next < self.lo || next > self.hi {
            self.bid - step
        } else {
            next
        };
        self.spread = self.draw_spread(rng);
    }
}

pub fn generate_day(cfg: &SynthConfig) -> Result<(TradingDay, GroundTruth)> {
    cfg.validate()?;
    let spec = cfg.instrument;
    let depth = spec.depth as i64;
    let tick = spec.tick_units();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let volume = Geometric::new(1.0 / cfg.vol_scale)
        .map_err(|e| Error::InvalidConfig(format!("vol_scale: {e}")))?;

    let total: f64 = cfg.spread_distribution.iter().sum();
    let mut cdf = [0.0; 3];
    let mut acc = 0.0;
    for (c, p) in cdf.iter_mut().zip(cfg.spread_distribution) {
        acc += p / total;
        *c = acc;
    }
    cdf[2] = f64::INFINITY;

    let base_ticks = libm::round(cfg.base_price / spec.tick_size) as i64;
    let mut walk = Walk {
        bid: base_ticks,
        spread: 1,
        lo: (base_ticks / 2).max(depth + 1),
        hi: base_ticks * 2,
        cdf,
    };
    walk.spread = walk.draw_spread(&mut rng);

    let mut snapshots = Vec::with_capacity(cfg.n_ticks);
    let mut mids = Vec::with_capacity(cfg.n_ticks);
    let mut trigger_ticks = Vec::new();
    // Ticks at which a planted +1 move is due, ascending.
    let mut scheduled: Vec<usize> = Vec::new();
    let mut next_due = 0usize;
    let mut quiet_after = 0usize;

    for t in 0..cfg.n_ticks {
        if t > 0 {
            if next_due < scheduled.len() && scheduled[next_due] == t {
                next_due += 1;
                walk.bid += 1;
            } else if rng.random::<f64>() < MOVE_PROBABILITY {
                walk.random_move(&mut rng);
            }
        }

        let mut vols = vec![0u64; 2 * spec.depth];
        for v in vols.iter_mut() {
            *v = volume.sample(&mut rng) + 1;
        }

        if let Signal::Momentum {
            strength,
            trigger_imbalance,
            trigger_rate,
        } = cfg.signal
        {
            let can_trigger = t >= quiet_after && t + MOMENTUM_HORIZON < cfg.n_ticks;
            if can_trigger && rng.random::<f64>() < trigger_rate {
                let ask1 = libm::round(cfg.vol_scale * 0.1).max(1.0) as u64;
                let ratio = (1.0 + trigger_imbalance) / (1.0 - trigger_imbalance);
                let floor = libm::ceil(ask1 as f64 * ratio) as u64 + 1;
                vols[0] = ask1;
                vols[spec.depth] = floor.max(libm::round(3.0 * cfg.vol_scale) as u64);
                while imbalance(vols[0], vols[spec.depth]) <= trigger_imbalance {
                    vols[spec.depth] += 1;
                }
                let s = strength as usize;
                scheduled.extend((0..s).map(|i| t + (i + 1) * MOMENTUM_HORIZON / s));
                quiet_after = t + MOMENTUM_HORIZON + 1;
                trigger_ticks.push(t);
            } else {
                cap_imbalance(&mut vols, spec.depth, trigger_imbalance);
            }
        }

        let ask1 = (walk.bid + walk.spread) * tick;
        let bid1 = walk.bid * tick;
        let asks = (0..spec.depth)
            .map(|i| BookLevel {
                price: ask1 + i as i64 * tick,
                volume: vols[i],
            })
            .collect();
        let bids = (0..spec.depth)
            .map(|i| BookLevel {
                price: bid1 - i as i64 * tick,
                volume: vols[spec.depth + i],
            })
            .collect();
        let snap = BookSnapshot {
            asks,
            bids,
            tick_index: t as u64,
            wall_time: 34_200.0 + t as f64 * 0.1,
        };
        mids.push(mid_price(&snap));
        snapshots.push(snap);
    }

    let day_id = if cfg.day_id.is_empty() {
        format!("synthetic-{}", cfg.seed)
    } else {
        cfg.day_id.clone()
    };
    Ok((
        TradingDay { day_id, snapshots },
        GroundTruth {
            mids,
            trigger_ticks,
        },
    ))
}

// Same arithmetic as `top_imbalance`, so capping and scanning agree exactly.
fn imbalance(ask: u64, bid: u64) -> f64 {
    (bid as f64 - ask as f64) / (bid as f64 + ask as f64)
}

fn cap_imbalance(vols: &mut [u64], depth: usize, threshold: f64) {
    let ask = vols[0];
    if imbalance(ask, vols[depth]) > threshold {
        let ratio = (1.0 + threshold) / (1.0 - threshold);
        vols[depth] = libm::floor(ask as f64 * ratio) as u64;
        while vols[depth] > 0 && imbalance(ask, vols[depth]) > threshold {
            vols[depth] -= 1;
        }
    }
}

/// Every tick whose top-level imbalance exceeds `threshold`, found by
/// scanning the emitted snapshots.
pub fn scan_triggers(day: &TradingDay, threshold: f64) -> Vec<usize> {
    day.snapshots
        .iter()
        .enumerate()
        .filter(|(_, s)| top_imbalance(s) > threshold)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::spread;

    fn momentum(seed: u64, n: usize) -> SynthConfig {
        SynthConfig {
            seed,
            n_ticks: n,
            signal: Signal::Momentum {
                strength: 5,
                trigger_imbalance: 0.8,
                trigger_rate: default_trigger_rate(),
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let cfg = SynthConfig {
            seed: 7,
            n_ticks: 2_000,
            ..SynthConfig::default()
        };
        let a = generate_day(&cfg).unwrap();
        let b = generate_day(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_day(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn books_are_valid_and_spreads_come_from_the_distribution() {
        let cfg = SynthConfig {
            seed: 3,
            n_ticks: 20_000,
            spread_distribution: [0.0, 0.5, 0.5],
            ..SynthConfig::default()
        };
        let (day, truth) = generate_day(&cfg).unwrap();
        for (i, s) in day.snapshots.iter().enumerate() {
            s.validate(i).unwrap();
            let sp = spread(s, &cfg.instrument).unwrap();
            assert!(sp == 2 || sp == 3, "spread {sp}");
            assert_eq!(truth.mids[i].to_bits(), mid_price(s).to_bits());
        }
    }

    #[test]
    fn unsignalled_mid_changes_are_uncorrelated() {
        let cfg = SynthConfig {
            seed: 11,
            n_ticks: 100_000,
            ..SynthConfig::default()
        };
        let (day, _) = generate_day(&cfg).unwrap();
        let mids = day.doubled_mids();
        let d: Vec<f64> = mids.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        let cov = d
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>();
        let rho = cov / var;
        assert!(rho.abs() < 0.05, "lag-1 autocorrelation {rho}");
        // Mostly volume-only updates.
        let moved = d.iter().filter(|x| **x != 0.0).count() as f64 / d.len() as f64;
        assert!(moved < 0.2, "fraction of mid moves {moved}");
    }

    #[test]
    fn momentum_triggers_are_exactly_the_imbalanced_ticks() {
        let cfg = momentum(5, 30_000);
        let (day, truth) = generate_day(&cfg).unwrap();
        assert!(truth.trigger_ticks.len() > 20);
        assert_eq!(scan_triggers(&day, 0.8), truth.trigger_ticks);
    }

    #[test]
    fn momentum_lifts_the_mid_by_strength() {
        let cfg = momentum(21, 100_000);
        let (day, truth) = generate_day(&cfg).unwrap();
        let mids = day.doubled_mids();
        let tick2 = 2.0 * cfg.instrument.tick_units() as f64;
        let changes: Vec<f64> = truth
            .trigger_ticks
            .iter()
            .map(|&t| (mids[t + MOMENTUM_HORIZON] - mids[t]) as f64 / tick2)
            .collect();
        let n = changes.len() as f64;
        let mean = changes.iter().sum::<f64>() / n;
        let sd = libm::sqrt(changes.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0));
        // Random-walk noise averages out; 4 standard errors of slack.
        assert!((mean - 5.0).abs() < 4.0 * sd / libm::sqrt(n), "mean {mean}, sd {sd}, n {n}");
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SynthConfig {
            n_ticks: 0,
            ..SynthConfig::default()
        };
        assert!(generate_day(&bad).is_err());
        let bad = SynthConfig {
            vol_scale: 0.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = momentum(0, 10);
        bad.signal = Signal::Momentum {
            strength: 5,
            trigger_imbalance: 1.0,
            trigger_rate: 0.1,
        };
        assert!(bad.validate().is_err());
    }
}
