//! Single-unit trading MDP over a window of book snapshots.
//!
//! The agent is neutral, long or short one unit. Positions open and close by
//! crossing the spread (buy at the best ask, sell at the best bid), so every
//! reward is a whole number of ticks. A daily stop-loss closes the open
//! position and disables trading for the rest of the episode when the
//! realized P&L is negative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{BookSnapshot, InstrumentSpec};

/// Snapshots visible to the agent: the current one and the nine before it.
pub const HISTORY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Volume history and position.
    C201,
    /// Adds the mark-to-market of the open position.
    C202,
    /// Adds the bid-ask spread.
    C203,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::C201, Scenario::C202, Scenario::C203];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::C201 => "c201",
            Scenario::C202 => "c202",
            Scenario::C203 => "c203",
        }
    }

    fn extra_features(self) -> usize {
        match self {
            Scenario::C201 => 0,
            Scenario::C202 => 1,
            Scenario::C203 => 2,
        }
    }

    /// Observation length for a book of `depth` levels per side.
    pub fn observation_dim(self, depth: usize) -> usize {
        HISTORY * 2 * depth + 3 + self.extra_features()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c201" => Ok(Scenario::C201),
            "c202" => Ok(Scenario::C202),
            "c203" => Ok(Scenario::C203),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Sell = 0,
    Stay = 1,
    Buy = 2,
    DailyStopLoss = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Sell, Action::Stay, Action::Buy, Action::DailyStopLoss];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenPosition {
    pub side: Side,
    /// Best ask at entry, price units.
    pub entry_ask: i64,
    /// Best bid at entry, price units.
    pub entry_bid: i64,
    pub open_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Neutral,
    Open(OpenPosition),
}

impl Position {
    pub fn side(&self) -> Option<Side> {
        match self {
            Position::Neutral => None,
            Position::Open(p) => Some(p.side),
        }
    }

    fn one_hot(&self) -> [f64; 3] {
        match self.side() {
            None => [1.0, 0.0, 0.0],
            Some(Side::Long) => [0.0, 1.0, 0.0],
            Some(Side::Short) => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseCause {
    AgentClose,
    StopLoss,
    EpisodeEnd,
}

impl CloseCause {
    pub fn as_str(self) -> &'static str {
        match self {
            CloseCause::AgentClose => "agent_close",
            CloseCause::StopLoss => "stop_loss",
            CloseCause::EpisodeEnd => "episode_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub side: Side,
    pub open_tick: u64,
    pub close_tick: u64,
    /// Net profit in ticks, spread crossing included.
    pub profit: i64,
    pub cause: CloseCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub scenario: Scenario,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub scenario: Scenario,
    pub instrument: InstrumentSpec,
    /// Divisor applied to every level volume in the observation.
    pub volume_norm: f64,
}

impl EnvConfig {
    pub fn observation_dim(&self) -> usize {
        self.scenario.observation_dim(self.instrument.depth)
    }
}

/// Profit in ticks of closing `side` at `close` after opening at `open`:
/// a long buys the ask and sells the bid, a short sells the bid and buys
/// the ask.
pub fn trade_profit(side: Side, open: &BookSnapshot, close: &BookSnapshot, spec: &InstrumentSpec) -> i64 {
    let units = match side {
        Side::Long => close.best_bid().price - open.best_ask().price,
        Side::Short => open.best_bid().price - close.best_ask().price,
    };
    units / spec.tick_units()
}

/// Mean level volume over a set of snapshots; the usual volume divisor.
pub fn mean_level_volume<'a, I>(snapshots: I) -> f64
where
    I: IntoIterator<Item = &'a BookSnapshot>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in snapshots {
        for level in s.asks.iter().chain(&s.bids) {
            sum += level.volume as f64;
            count += 1;
        }
    }
    if count == 0 || sum == 0.0 {
        1.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub reward: i64,
    pub done: bool,
    pub trade: Option<TradeRecord>,
}

/// One episode over a window. The agent acts on ticks `0..len-1`; after the
/// action on tick `len-2` the cursor reaches the last tick, any open
/// position is closed there and the episode ends.
#[derive(Debug, Clone)]
pub struct TradingEnv<'a> {
    cfg: EnvConfig,
    book: &'a [BookSnapshot],
    cursor: usize,
    position: Position,
    day_pnl: i64,
    trading_disabled: bool,
    done: bool,
}

impl<'a> TradingEnv<'a> {
    pub fn new(book: &'a [BookSnapshot], cfg: EnvConfig) -> Result<Self> {
        cfg.instrument.validate()?;
        if book.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an episode needs at least 2 ticks, got {}",
                book.len()
            )));
        }
        if !(cfg.volume_norm > 0.0) || !cfg.volume_norm.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "volume_norm must be positive, got {}",
                cfg.volume_norm
            )));
        }
        let tick = cfg.instrument.tick_units();
        for (i, s) in book.iter().enumerate() {
            if s.depth() != cfg.instrument.depth || s.bids.len() != cfg.instrument.depth {
                return Err(Error::DimensionMismatch {
                    expected: cfg.instrument.depth,
                    got: s.depth(),
                });
            }
            if s.best_ask().price % tick != 0 || s.best_bid().price % tick != 0 {
                return Err(Error::DataIntegrity {
                    row: i,
                    msg: format!("best prices are off the {tick}-unit tick grid"),
                });
            }
        }
        Ok(TradingEnv {
            cfg,
            book,
            cursor: 0,
            position: Position::Neutral,
            day_pnl: 0,
            trading_disabled: false,
            done: false,
        })
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
        self.position = Position::Neutral;
        self.day_pnl = 0;
        self.trading_disabled = false;
        self.done = false;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.book.len()
    }

    pub fn is_empty(&self) -> bool {
        self.book.is_empty()
    }

    pub fn position(&self) -> Position {
        self.position
    }

    /// Realized P&L so far, ticks.
    pub fn day_pnl(&self) -> i64 {
        self.day_pnl
    }

    pub fn trading_disabled(&self) -> bool {
        self.trading_disabled
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn current(&self) -> &'a BookSnapshot {
        &self.book[self.cursor]
    }

    /// Number of real (non-padded) snapshots in the observation history.
    pub fn history_len(&self) -> usize {
        (self.cursor + 1).min(HISTORY)
    }

    /// Profit of closing the open position right now, ticks; zero when neutral.
    pub fn mark_to_market(&self) -> i64 {
        match self.position {
            Position::Neutral => 0,
            Position::Open(p) => {
                let now = self.current();
                let units = match p.side {
                    Side::Long => now.best_bid().price - p.entry_ask,
                    Side::Short => p.entry_bid - now.best_ask().price,
                };
                units / self.cfg.instrument.tick_units()
            }
        }
    }

    pub fn observe(&self) -> Observation {
        let mut features = vec![0.0; self.cfg.observation_dim()];
        self.observe_into(&mut features);
        Observation {
            scenario: self.cfg.scenario,
            features,
        }
    }

    /// Writes the observation into `out`, oldest history block first. Ticks
    /// before the start of the window are zero blocks.
    pub fn observe_into(&self, out: &mut [f64]) {
        let depth = self.cfg.instrument.depth;
        let block = 2 * depth;
        debug_assert_eq!(out.len(), self.cfg.observation_dim());
        let norm = self.cfg.volume_norm;
        for h in 0..HISTORY {
            let slot = &mut out[h * block..(h + 1) * block];
            let back = HISTORY - 1 - h;
            if back > self.cursor {
                slot.fill(0.0);
                continue;
            }
            let snap = &self.book[self.cursor - back];
            for (i, level) in snap.asks.iter().enumerate() {
                slot[i] = level.volume as f64 / norm;
            }
            for (i, level) in snap.bids.iter().enumerate() {
                slot[depth + i] = level.volume as f64 / norm;
            }
        }
        let mut k = HISTORY * block;
        out[k..k + 3].copy_from_slice(&self.position.one_hot());
        k += 3;
        if matches!(self.cfg.scenario, Scenario::C202 | Scenario::C203) {
            out[k] = self.mark_to_market() as f64;
            k += 1;
        }
        if self.cfg.scenario == Scenario::C203 {
            let now = self.current();
            out[k] = ((now.best_ask().price - now.best_bid().price)
                / self.cfg.instrument.tick_units()) as f64;
        }
    }

    fn open(&mut self, side: Side) {
        let now = self.current();
        self.position = Position::Open(OpenPosition {
            side,
            entry_ask: now.best_ask().price,
            entry_bid: now.best_bid().price,
            open_tick: now.tick_index,
        });
    }

    fn close(&mut self, cause: CloseCause) -> Option<TradeRecord> {
        let Position::Open(p) = self.position else {
            return None;
        };
        let profit = self.mark_to_market();
        self.position = Position::Neutral;
        self.day_pnl += profit;
        Some(TradeRecord {
            side: p.side,
            open_tick: p.open_tick,
            close_tick: self.current().tick_index,
            profit,
            cause,
        })
    }

    pub fn step(&mut self, action: Action) -> Result<Step> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let side = self.position.side();
        let mut trade = if self.trading_disabled {
            None
        } else {
            match (side, action) {
                (_, Action::Stay) => None,
                (None, Action::Sell) => {
                    self.open(Side::Short);
                    None
                }
                (None, Action::Buy) => {
                    self.open(Side::Long);
                    None
                }
                (Some(Side::Short), Action::Sell) | (Some(Side::Long), Action::Buy) => None,
                (Some(Side::Long), Action::Sell) | (Some(Side::Short), Action::Buy) => {
                    self.close(CloseCause::AgentClose)
                }
                (_, Action::DailyStopLoss) => {
                    if self.day_pnl < 0 {
                        let t = self.close(CloseCause::StopLoss);
                        self.trading_disabled = true;
                        t
                    } else {
                        None
                    }
                }
            }
        };

        self.cursor += 1;
        if self.cursor == self.book.len() - 1 {
            self.done = true;
            if let Some(t) = self.close(CloseCause::EpisodeEnd) {
                debug_assert!(trade.is_none());
                trade = Some(t);
            }
        }
        Ok(Step {
            reward: trade.map_or(0, |t| t.profit),
            done: self.done,
            trade,
        })
    }
}
