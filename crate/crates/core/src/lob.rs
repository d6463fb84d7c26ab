//! Depth-N limit order book snapshots in the LOBSTER "orderbook" layout.
//!
//! Prices are kept as integers in 10⁻⁴ dollar units, exactly as LOBSTER
//! stores them. Conversion to dollars happens only at reporting boundaries.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price units per dollar (LOBSTER stores prices × 10⁴).
pub const PRICE_SCALE: i64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    /// Dollars per tick.
    pub tick_size: f64,
    /// Levels per side.
    pub depth: usize,
}

impl Default for InstrumentSpec {
    fn default() -> Self {
        InstrumentSpec {
            tick_size: 0.01,
            depth: 10,
        }
    }
}

impl InstrumentSpec {
    pub fn new(tick_size: f64, depth: usize) -> Result<Self> {
        let spec = InstrumentSpec { tick_size, depth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_size > 0.0) || !self.tick_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tick_size must be positive, got {}",
                self.tick_size
            )));
        }
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        let units = self.tick_size * PRICE_SCALE as f64;
        if libm::fabs(units - libm::round(units)) > 1e-9 || units < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "tick_size {} is not a whole number of 1e-4 price units",
                self.tick_size
            )));
        }
        Ok(())
    }

    /// Tick size in integer price units (100 for a one-cent tick).
    pub fn tick_units(&self) -> i64 {
        libm::round(self.tick_size * PRICE_SCALE as f64) as i64
    }

    /// Number of integer columns in one orderbook row.
    pub fn columns(&self) -> usize {
        4 * self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookLevel {
    /// Price in 10⁻⁴ dollars.
    pub price: i64,
    /// Resting shares.
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    /// Ascending by price; `asks[0]` is the best ask.
    pub asks: Vec<BookLevel>,
    /// Descending by price; `bids[0]` is the best bid.
    pub bids: Vec<BookLevel>,
    pub tick_index: u64,
    /// Seconds after midnight. Orderbook files carry no timestamps, so rows
    /// parsed from them get 0.0.
    pub wall_time: f64,
}

impl BookSnapshot {
    pub fn best_ask(&self) -> BookLevel {
        self.asks[0]
    }

    pub fn best_bid(&self) -> BookLevel {
        self.bids[0]
    }

    pub fn depth(&self) -> usize {
        self.asks.len()
    }

    /// Checks ordering and the uncrossed-book invariant. `row` is only used
    /// for error reporting.
    pub fn validate(&self, row: usize) -> Result<()> {
        if self.asks.is_empty() || self.asks.len() != self.bids.len() {
            return Err(Error::DataIntegrity {
                row,
                msg: format!(
                    "unbalanced book: {} asks, {} bids",
                    self.asks.len(),
                    self.bids.len()
                ),
            });
        }
        for level in self.asks.iter().chain(self.bids.iter()) {
            if level.price <= 0 {
                return Err(Error::DataIntegrity {
                    row,
                    msg: format!("non-positive price {}", level.price),
                });
            }
        }
        if self.asks.windows(2).any(|w| w[1].price <= w[0].price) {
            return Err(Error::DataIntegrity {
                row,
                msg: "ask prices not strictly ascending".into(),
            });
        }
        if self.bids.windows(2).any(|w| w[1].price >= w[0].price) {
            return Err(Error::DataIntegrity {
                row,
                msg: "bid prices not strictly descending".into(),
            });
        }
        let (ask, bid) = (self.best_ask().price, self.best_bid().price);
        if ask <= bid {
            return Err(Error::DataIntegrity {
                row,
                msg: format!("crossed or locked book: ask {ask} <= bid {bid}"),
            });
        }
        Ok(())
    }
}

/// One trading day of snapshots in tick time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingDay {
    /// Calendar date, `YYYY-MM-DD`.
    pub day_id: String,
    pub snapshots: Vec<BookSnapshot>,
}

impl TradingDay {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Sum of best ask and best bid per tick, in price units. This is twice
    /// the mid-price and stays an exact integer.
    pub fn doubled_mids(&self) -> Vec<i64> {
        self.snapshots.iter().map(doubled_mid).collect()
    }
}

/// Parses one orderbook row: `ask_price_1, ask_size_1, bid_price_1,
/// bid_size_1, ...` repeated `depth` times. `row` becomes the snapshot's
/// tick index and is reported in errors.
pub fn parse_orderbook_row(line: &str, spec: &InstrumentSpec, row: usize) -> Result<BookSnapshot> {
    let line = line.trim_end_matches(['\r', '\n']);
    let expected = spec.columns();
    let mut asks = Vec::with_capacity(spec.depth);
    let mut bids = Vec::with_capacity(spec.depth);
    let mut fields = line.split(',');
    let mut seen = 0usize;
    let mut next_int = |what: &str| -> Result<i64> {
        let raw = fields.next().ok_or_else(|| Error::Parse {
            row,
            msg: format!("expected {expected} fields, found {seen}"),
        })?;
        seen += 1;
        raw.trim().parse::<i64>().map_err(|_| Error::Parse {
            row,
            msg: format!("field {seen} ({what}) is not an integer: {raw:?}"),
        })
    };
    for _ in 0..spec.depth {
        let ask_price = next_int("ask price")?;
        let ask_size = next_int("ask size")?;
        let bid_price = next_int("bid price")?;
        let bid_size = next_int("bid size")?;
        if ask_size < 0 || bid_size < 0 {
            return Err(Error::DataIntegrity {
                row,
                msg: "negative volume".into(),
            });
        }
        asks.push(BookLevel {
            price: ask_price,
            volume: ask_size as u64,
        });
        bids.push(BookLevel {
            price: bid_price,
            volume: bid_size as u64,
        });
    }
    let extra = line.split(',').count();
    if extra != expected {
        return Err(Error::Parse {
            row,
            msg: format!("expected {expected} fields, found {extra}"),
        });
    }
    let snapshot = BookSnapshot {
        asks,
        bids,
        tick_index: row as u64,
        wall_time: 0.0,
    };
    snapshot.validate(row)?;
    Ok(snapshot)
}

/// Writes a snapshot back in the orderbook-row layout (no trailing newline).
pub fn serialize_row(snapshot: &BookSnapshot) -> String {
    let mut out = String::with_capacity(snapshot.depth() * 32);
    for (i, (ask, bid)) in snapshot.asks.iter().zip(&snapshot.bids).enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{},{},{},{}",
            ask.price, ask.volume, bid.price, bid.volume
        );
    }
    out
}

/// Parses the rows of one day file, dropping `trim` rows from each end and
/// renumbering the remaining ticks from zero. Blank lines are ignored.
pub fn parse_day<'a, I>(lines: I, day_id: &str, spec: &InstrumentSpec, trim: usize) -> Result<TradingDay>
where
    I: IntoIterator<Item = &'a str>,
{
    let rows: Vec<&str> = lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() <= 2 * trim {
        return Err(Error::TooShort {
            rows: rows.len(),
            required: 2 * trim,
        });
    }
    let kept = &rows[trim..rows.len() - trim];
    let mut snapshots = Vec::with_capacity(kept.len());
    for (i, line) in kept.iter().enumerate() {
        let mut snap = parse_orderbook_row(line, spec, trim + i)?;
        snap.tick_index = i as u64;
        snapshots.push(snap);
    }
    Ok(TradingDay {
        day_id: day_id.into(),
        snapshots,
    })
}

fn doubled_mid(s: &BookSnapshot) -> i64 {
    s.best_ask().price + s.best_bid().price
}

/// Mid-price in dollars.
pub fn mid_price(s: &BookSnapshot) -> f64 {
    doubled_mid(s) as f64 / (2 * PRICE_SCALE) as f64
}

/// Bid-ask spread in whole ticks.
pub fn spread(s: &BookSnapshot, spec: &InstrumentSpec) -> Result<i64> {
    let diff = s.best_ask().price - s.best_bid().price;
    let tick = spec.tick_units();
    if diff % tick != 0 {
        return Err(Error::DataIntegrity {
            row: s.tick_index as usize,
            msg: format!("spread of {diff} price units is not a multiple of the tick ({tick})"),
        });
    }
    Ok(diff / tick)
}

/// Top-of-book volume imbalance `(bidV - askV) / (bidV + askV)`; zero for an
/// empty top level.
pub fn top_imbalance(s: &BookSnapshot) -> f64 {
    let a = s.best_ask().volume as f64;
    let b = s.best_bid().volume as f64;
    if a + b == 0.0 {
        0.0
    } else {
        (b - a) / (b + a)
    }
}
