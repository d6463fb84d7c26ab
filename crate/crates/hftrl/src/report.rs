//! Plot-ready report files and the trade ledger.

use std::path::{Path, PathBuf};

use hftrl_core::backtest::{EnsembleReport, Summary, TradeEntry};
use hftrl_core::env::{CloseCause, Scenario, Side, TradeRecord};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRow {
    pub day_id: String,
    pub member_id: usize,
    pub side: Side,
    pub open_tick: u64,
    pub close_tick: u64,
    pub profit_ticks: i64,
    pub cause: CloseCause,
}

impl From<&TradeEntry> for TradeRow {
    fn from(e: &TradeEntry) -> Self {
        TradeRow {
            day_id: e.day_id.clone(),
            member_id: e.member_id,
            side: e.trade.side,
            open_tick: e.trade.open_tick,
            close_tick: e.trade.close_tick,
            profit_ticks: e.trade.profit,
            cause: e.trade.cause,
        }
    }
}

impl TradeRow {
    pub fn record(&self) -> TradeRecord {
        TradeRecord {
            side: self.side,
            open_tick: self.open_tick,
            close_tick: self.close_tick,
            profit: self.profit_ticks,
            cause: self.cause,
        }
    }
}

/// Paths of one exported report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub cumulative_mean: PathBuf,
    pub daily_stats: PathBuf,
    pub histogram: PathBuf,
    pub trades: PathBuf,
    pub summary: PathBuf,
}

impl ReportFiles {
    pub fn all(&self) -> [&Path; 5] {
        [
            &self.cumulative_mean,
            &self.daily_stats,
            &self.histogram,
            &self.trades,
            &self.summary,
        ]
    }
}

/// `<scenario>_<hash>_<first day>_<last day>`.
pub fn report_stem(report: &EnsembleReport, checkpoint_hash: &str) -> String {
    format!(
        "{}_{}_{}_{}",
        report.scenario.tag(),
        checkpoint_hash,
        report.first_day().unwrap_or("none"),
        report.last_day().unwrap_or("none")
    )
}

fn csv_bytes<F>(header: &[&str], fill: F) -> AppResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let run = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
        w.write_record(header)?;
        fill(w)?;
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| AppError::Usage(format!("csv encoding: {e}")))?;
    w.into_inner().map_err(|e| AppError::Usage(format!("csv encoding: {e}")))
}

pub fn export_report(report: &EnsembleReport, out_dir: &Path, checkpoint_hash: &str) -> AppResult<ReportFiles> {
    io::ensure_dir(out_dir)?;
    let stem = report_stem(report, checkpoint_hash);
    let path = |kind: &str, ext: &str| out_dir.join(format!("{stem}_{kind}.{ext}"));
    let files = ReportFiles {
        cumulative_mean: path("cumulative_mean", "csv"),
        daily_stats: path("daily_stats", "csv"),
        histogram: path("histogram", "csv"),
        trades: path("trades", "csv"),
        summary: path("summary", "json"),
    };

    let cumulative = csv_bytes(&["day_id", "tick", "cumulative_mean_pnl_ticks"], |w| {
        let mut offset = 0;
        for d in &report.days {
            for t in 0..d.mean.len() {
                w.write_record([d.day_id.clone(), t.to_string(), report.cumulative_mean[offset + t].to_string()])?;
            }
            offset += d.mean.len();
        }
        Ok(())
    })?;
    io::write_atomic(&files.cumulative_mean, &cumulative)?;

    let daily = csv_bytes(&["day_id", "tick", "members", "mean_pnl_ticks", "std_pnl_ticks"], |w| {
        for d in &report.days {
            for t in 0..d.mean.len() {
                w.write_record([
                    d.day_id.clone(),
                    t.to_string(),
                    d.members.to_string(),
                    d.mean[t].to_string(),
                    d.std[t].to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    io::write_atomic(&files.daily_stats, &daily)?;

    let hist = csv_bytes(&["profit_ticks", "count"], |w| {
        for (bin, count) in &report.histogram {
            w.write_record([bin.to_string(), count.to_string()])?;
        }
        Ok(())
    })?;
    io::write_atomic(&files.histogram, &hist)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let encode = |e: csv::Error| AppError::Usage(format!("csv encoding: {e}"));
    w.write_record(["day_id", "member_id", "side", "open_tick", "close_tick", "profit_ticks", "cause"])
        .map_err(encode)?;
    for e in &report.trades {
        let r = TradeRow::from(e);
        w.write_record([
            r.day_id,
            r.member_id.to_string(),
            r.side.as_str().to_string(),
            r.open_tick.to_string(),
            r.close_tick.to_string(),
            r.profit_ticks.to_string(),
            r.cause.as_str().to_string(),
        ])
        .map_err(encode)?;
    }
    let trades = w.into_inner().map_err(|e| AppError::Usage(format!("csv encoding: {e}")))?;
    io::write_atomic(&files.trades, &trades)?;

    io::write_json(&files.summary, &report.summary)?;
    Ok(files)
}

pub fn read_trades_csv(path: &Path) -> AppResult<Vec<TradeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::format(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| AppError::format(path, e)))
        .collect()
}

/// Recomputes the summary from a trade ledger. Members and days are taken
/// from the distinct ids present, so idle members are not counted.
pub fn summary_from_trades(scenario: Scenario, rows: &[TradeRow]) -> Summary {
    let mut members: Vec<usize> = rows.iter().map(|r| r.member_id).collect();
    members.sort_unstable();
    members.dedup();
    let mut days: Vec<&str> = rows.iter().map(|r| r.day_id.as_str()).collect();
    days.sort_unstable();
    days.dedup();
    let records: Vec<TradeRecord> = rows.iter().map(TradeRow::record).collect();
    Summary::from_trades(scenario, members.len(), days.len(), &records)
}
