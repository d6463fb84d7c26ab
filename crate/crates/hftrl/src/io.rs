//! Orderbook files on disk and small filesystem helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hftrl_core::lob::{parse_day, serialize_row, InstrumentSpec, TradingDay};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub const DEFAULT_PATTERN: &str = "*_orderbook_10.csv";

/// The `YYYY-MM-DD` component of `<TICKER>_<YYYY-MM-DD>_orderbook_10.csv`,
/// or the file stem when no date is present.
pub fn day_id_from_path(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.split('_')
        .find(|part| NaiveDate::parse_from_str(part, "%Y-%m-%d").is_ok())
        .unwrap_or(stem)
        .to_string()
}

pub fn load_day(path: &Path, spec: &InstrumentSpec, trim: usize) -> AppResult<TradingDay> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_day(text.lines(), &day_id_from_path(path), spec, trim).map_err(|e| match e {
        e if e.is_data_error() => AppError::format(path, e),
        e => e.into(),
    })
}

/// Files matching a glob pattern, sorted by path.
pub fn find_day_files(pattern: &str) -> AppResult<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| AppError::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| AppError::io(e.path(), std::io::Error::other(e.to_string())))?;
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn day_to_csv(day: &TradingDay) -> String {
    let mut out = String::with_capacity(day.len() * 200);
    for s in &day.snapshots {
        out.push_str(&serialize_row(s));
        out.push('\n');
    }
    out
}

pub fn ensure_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| AppError::io(&tmp, e))?;
    f.sync_all().map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn read_to_string(path: &Path) -> AppResult<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> AppResult<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| AppError::format(path, e))
}
