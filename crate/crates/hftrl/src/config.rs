//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use hftrl_core::backtest::EvalMode;
use hftrl_core::env::Scenario;
use hftrl_core::lob::InstrumentSpec;
use hftrl_core::policy::{Activation, DEFAULT_HIDDEN};
use hftrl_core::ppo::PpoConfig;
use hftrl_core::seed::derive_seed;
use hftrl_core::smbo::{SearchSpace, DEFAULT_BUDGET};
use hftrl_core::synth::{Signal, SynthConfig};
use hftrl_core::window::{DEFAULT_LENGTH, DEFAULT_PER_DAY, DEFAULT_TOTAL};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io;

pub const DEFAULT_TRIM: usize = 200_000;
pub const DEFAULT_ENSEMBLE: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub ensemble_size: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub budget: usize,
    pub eval: EvalMode,
    pub data: DataConfig,
    pub windows: WindowConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub search: SearchSpace,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::C202,
            seed: 0,
            out_dir: PathBuf::from("out"),
            ensemble_size: DEFAULT_ENSEMBLE,
            jobs: 0,
            budget: DEFAULT_BUDGET,
            eval: EvalMode::Greedy,
            data: DataConfig::default(),
            windows: WindowConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            search: SearchSpace::default(),
        }
    }
}

/// Exactly one of the two sources must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub files: Option<FileData>,
    pub synthetic: Option<SyntheticData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    /// Glob patterns, one per split.
    pub train: String,
    pub validation: String,
    pub test: String,
    #[serde(default = "default_trim")]
    pub trim: usize,
    #[serde(default)]
    pub instrument: InstrumentSpec,
}

fn default_trim() -> usize {
    DEFAULT_TRIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub seed: u64,
    pub n_ticks: usize,
    pub base_price: f64,
    pub vol_scale: f64,
    pub signal: Signal,
    pub spread_distribution: [f64; 3],
    pub instrument: InstrumentSpec,
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
    /// First trading date; later days skip weekends.
    pub start_date: String,
    pub trim: usize,
}

impl Default for SyntheticData {
    fn default() -> Self {
        let base = SynthConfig::default();
        SyntheticData {
            seed: 0,
            n_ticks: base.n_ticks,
            base_price: base.base_price,
            vol_scale: base.vol_scale,
            signal: base.signal,
            spread_distribution: base.spread_distribution,
            instrument: base.instrument,
            train_days: 3,
            validation_days: 1,
            test_days: 2,
            start_date: "2019-06-03".into(),
            trim: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub length: usize,
    pub per_day: usize,
    pub total: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: DEFAULT_LENGTH,
            per_day: DEFAULT_PER_DAY,
            total: DEFAULT_TOTAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: DEFAULT_HIDDEN,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One day to load: a file, or a generator config.
#[derive(Debug, Clone, PartialEq)]
pub enum DaySource {
    File(PathBuf),
    Synthetic(SynthConfig),
}

/// CLI flags that override config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::from_toml(&io::read_to_string(path)?).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.scenario {
            self.scenario = s;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.ensemble_size == 0 {
            return Err(AppError::Config("ensemble_size must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(AppError::Config("budget must be at least 1".into()));
        }
        if self.windows.length < 2 || self.windows.per_day == 0 || self.windows.total == 0 {
            return Err(AppError::Config("window length must be at least 2 and counts positive".into()));
        }
        if self.policy.hidden == 0 {
            return Err(AppError::Config("policy.hidden must be positive".into()));
        }
        self.ppo.validate()?;
        self.search.validate()?;
        match (&self.data.files, &self.data.synthetic) {
            (Some(f), None) => f.instrument.validate()?,
            (None, Some(s)) => {
                s.instrument.validate()?;
                NaiveDate::parse_from_str(&s.start_date, "%Y-%m-%d")
                    .map_err(|e| AppError::Config(format!("start_date: {e}")))?;
            }
            _ => {
                return Err(AppError::Config(
                    "exactly one of [data.files] and [data.synthetic] must be given".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn instrument(&self) -> InstrumentSpec {
        match (&self.data.files, &self.data.synthetic) {
            (Some(f), _) => f.instrument,
            (_, Some(s)) => s.instrument,
            _ => InstrumentSpec::default(),
        }
    }

    pub fn trim(&self) -> usize {
        match (&self.data.files, &self.data.synthetic) {
            (Some(f), _) => f.trim,
            (_, Some(s)) => s.trim,
            _ => 0,
        }
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        io::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn day_sources(&self, split: Split) -> AppResult<Vec<DaySource>> {
        if let Some(f) = &self.data.files {
            let pattern = match split {
                Split::Train => &f.train,
                Split::Validation => &f.validation,
                Split::Test => &f.test,
            };
            let files = io::find_day_files(pattern)?;
            if files.is_empty() {
                return Err(AppError::Usage(format!(
                    "no {} files match {pattern:?}",
                    split.as_str()
                )));
            }
            return Ok(files.into_iter().map(DaySource::File).collect());
        }
        let s = self
            .data
            .synthetic
            .as_ref()
            .ok_or_else(|| AppError::Config("no data source configured".into()))?;
        let (skip, count) = match split {
            Split::Train => (0, s.train_days),
            Split::Validation => (s.train_days, s.validation_days),
            Split::Test => (s.train_days + s.validation_days, s.test_days),
        };
        let dates = trading_dates(&s.start_date, skip + count)?;
        Ok((skip..skip + count)
            .map(|i| DaySource::Synthetic(s.day_config(i, &dates[i])))
            .collect())
    }
}

impl SyntheticData {
    pub fn total_days(&self) -> usize {
        self.train_days + self.validation_days + self.test_days
    }

    /// Generator config of the `index`-th synthetic day.
    pub fn day_config(&self, index: usize, day_id: &str) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "synthetic-day", index as u64),
            n_ticks: self.n_ticks,
            base_price: self.base_price,
            vol_scale: self.vol_scale,
            signal: self.signal,
            spread_distribution: self.spread_distribution,
            instrument: self.instrument,
            day_id: day_id.into(),
        }
    }
}

/// `count` consecutive weekdays starting at `start` (moved forward if it
/// falls on a weekend).
pub fn trading_dates(start: &str, count: usize) -> AppResult<Vec<String>> {
    let mut d = NaiveDate::parse_from_str(start, "%Y-%m-%d")
        .map_err(|e| AppError::Config(format!("start_date {start:?}: {e}")))?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.format("%Y-%m-%d").to_string());
        }
        d = d
            .checked_add_days(Days::new(1))
            .ok_or_else(|| AppError::Config("date range overflows the calendar".into()))?;
    }
    Ok(out)
}
