//! The pipeline stages behind each subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hftrl_core::backtest::{aggregate, run_day, EnsembleReport, Summary};
use hftrl_core::env::{mean_level_volume, EnvConfig, Scenario};
use hftrl_core::lob::TradingDay;
use hftrl_core::policy::{NetShape, PolicyParams};
use hftrl_core::ppo::{train_continual, EpisodeSource, PpoConfig, TrainingLog};
use hftrl_core::seed::{derive_rng, derive_seed};
use hftrl_core::smbo::{tune as smbo_tune, TuneResult};
use hftrl_core::synth::generate_day;
use hftrl_core::window::{score_day_windows, select_training_windows, windows_disjoint, Window};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DaySource, RunConfig, Split};
use crate::error::{AppError, AppResult};
use crate::io;
use crate::manifest::{RunRecord, WindowManifest, MANIFEST_FORMAT};
use crate::report::{export_report, read_trades_csv, summary_from_trades, ReportFiles};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_DIR: &str = "logs";
pub const TUNING_DIR: &str = "tuning";
pub const REPORT_DIR: &str = "report";
pub const BEST_FILE: &str = "best.json";
pub const TRIALS_FILE: &str = "trials.csv";

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(MANIFEST_FILE)
}

pub fn checkpoint_path(cfg: &RunConfig, member: usize) -> PathBuf {
    cfg.out_dir.join(CHECKPOINT_DIR).join(format!("member_{member:03}.json"))
}

pub fn best_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(TUNING_DIR).join(BEST_FILE)
}

pub fn member_seed(cfg: &RunConfig, member: usize) -> u64 {
    derive_seed(cfg.seed, "member", member as u64)
}

fn thread_pool(jobs: usize) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AppError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

fn write_run_record(cfg: &RunConfig, record: &RunRecord) -> AppResult<()> {
    io::write_json(&cfg.out_dir.join(format!("run_{}.json", record.command)), record)
}

fn load_source(src: &DaySource, cfg: &RunConfig) -> AppResult<TradingDay> {
    match src {
        DaySource::File(p) => io::load_day(p, &cfg.instrument(), cfg.trim()),
        DaySource::Synthetic(sc) => {
            let (mut day, _) = generate_day(sc)?;
            let trim = cfg.trim();
            if day.len() <= 2 * trim {
                return Err(hftrl_core::Error::TooShort {
                    rows: day.len(),
                    required: 2 * trim,
                }
                .into());
            }
            day.snapshots.truncate(day.len() - trim);
            day.snapshots.drain(..trim);
            for (i, s) in day.snapshots.iter_mut().enumerate() {
                s.tick_index = i as u64;
            }
            Ok(day)
        }
    }
}

/// Loads the days of one split in calendar order.
pub fn load_days(cfg: &RunConfig, split: Split) -> AppResult<Vec<TradingDay>> {
    let sources = cfg.day_sources(split)?;
    let mut days = thread_pool(cfg.jobs)?.install(|| {
        sources
            .par_iter()
            .map(|s| load_source(s, cfg))
            .collect::<AppResult<Vec<_>>>()
    })?;
    days.sort_by(|a, b| a.day_id.cmp(&b.day_id));
    if let Some(w) = days.windows(2).find(|w| w[0].day_id == w[1].day_id) {
        return Err(AppError::Usage(format!("day {} appears twice in the {} split", w[0].day_id, split.as_str())));
    }
    Ok(days)
}

fn env_config(cfg: &RunConfig, volume_norm: f64) -> EnvConfig {
    EnvConfig {
        scenario: cfg.scenario,
        instrument: cfg.instrument(),
        volume_norm,
    }
}

/// Scores and subsamples training windows, then writes the manifest.
pub fn sample(cfg: &RunConfig) -> AppResult<WindowManifest> {
    let days = load_days(cfg, Split::Train)?;
    sample_from_days(cfg, &days)
}

pub fn sample_from_days(cfg: &RunConfig, days: &[TradingDay]) -> AppResult<WindowManifest> {
    let wc = cfg.windows;
    let mut pool: Vec<Window> = Vec::new();
    let mut short_days = Vec::new();
    for day in days {
        if day.len() < wc.length {
            warn!("day {} has {} ticks, shorter than one window; skipped", day.day_id, day.len());
            short_days.push(day.day_id.clone());
            continue;
        }
        let scored = score_day_windows(day, wc.length, wc.per_day)?;
        if scored.short {
            warn!(
                "day {} fits only {} disjoint windows of {} requested",
                day.day_id,
                scored.windows.len(),
                wc.per_day
            );
            short_days.push(day.day_id.clone());
        }
        pool.extend(scored.windows);
    }
    if pool.is_empty() {
        return Err(AppError::Core(hftrl_core::Error::TooShort {
            rows: days.iter().map(TradingDay::len).max().unwrap_or(0),
            required: wc.length,
        }));
    }
    let total = if wc.total > pool.len() {
        warn!("only {} candidate windows; using all of them instead of {}", pool.len(), wc.total);
        pool.len()
    } else {
        wc.total
    };
    let selection_seed = derive_seed(cfg.seed, "sample", 0);
    let windows = select_training_windows(&pool, total, selection_seed)?;
    debug_assert!(windows_disjoint(&windows));
    let by_id: std::collections::HashMap<&str, &TradingDay> = days.iter().map(|d| (d.day_id.as_str(), d)).collect();
    let volume_norm = mean_level_volume(
        windows
            .iter()
            .flat_map(|w| by_id[w.day_id.as_str()].snapshots[w.start_tick..w.end_tick()].iter()),
    );
    let manifest = WindowManifest {
        format: MANIFEST_FORMAT,
        selection_seed,
        volume_norm,
        window: wc,
        candidates: pool.len(),
        short_days,
        windows,
    };
    io::ensure_dir(&cfg.out_dir)?;
    io::write_json(&manifest_path(cfg), &manifest)?;
    let mut record = RunRecord::new("sample", cfg);
    record.seeds.push(("sample".into(), selection_seed));
    record.outputs.push(manifest_path(cfg).display().to_string());
    write_run_record(cfg, &record)?;
    info!("selected {} of {} candidate windows", manifest.windows.len(), manifest.candidates);
    Ok(manifest)
}

pub fn load_manifest(cfg: &RunConfig) -> AppResult<WindowManifest> {
    let path = manifest_path(cfg);
    if !path.exists() {
        return Err(AppError::Usage(format!(
            "{} not found; run `sample` first",
            path.display()
        )));
    }
    io::read_json(&path)
}

/// Learning rate and entropy coefficient chosen by `tune`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub trial_id: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub validation_profit_ticks: f64,
}

fn init_params(cfg: &RunConfig, env_cfg: &EnvConfig, seed: u64) -> PolicyParams {
    let shape = NetShape {
        input: env_cfg.observation_dim(),
        hidden: cfg.policy.hidden,
    };
    PolicyParams::init(shape, cfg.policy.activation, &mut derive_rng(seed, "init", 0))
}

fn write_log(path: &Path, log: &TrainingLog) -> AppResult<()> {
    let mut buf = Vec::new();
    for u in &log.updates {
        serde_json::to_writer(&mut buf, u).map_err(|e| AppError::format(path, e))?;
        buf.push(b'\n');
    }
    io::write_atomic(path, &buf)
}

fn write_epoch_log(path: &Path, log: &TrainingLog) -> AppResult<()> {
    let mut buf = Vec::new();
    for e in &log.epochs {
        serde_json::to_writer(&mut buf, e).map_err(|e| AppError::format(path, e))?;
        buf.push(b'\n');
    }
    io::write_atomic(path, &buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    /// Members found complete on disk and left untouched.
    pub resumed: Vec<usize>,
    pub trained: Vec<usize>,
}

/// Trains every ensemble member that lacks a final checkpoint.
pub fn train(cfg: &RunConfig, tuned: Option<BestPoint>) -> AppResult<TrainOutcome> {
    let manifest = load_manifest(cfg)?;
    let days = load_days(cfg, Split::Train)?;
    let slices = manifest.slices(&days, &manifest_path(cfg))?;
    let env_cfg = env_config(cfg, manifest.volume_norm);
    let mut ppo = cfg.ppo;
    if let Some(b) = tuned {
        ppo.learning_rate = b.learning_rate;
        ppo.entropy_coef = b.entropy_coef;
    }
    let ids: Vec<String> = manifest
        .windows
        .iter()
        .map(|w| format!("{}@{}", w.day_id, w.start_tick))
        .collect();
    let sources: Vec<EpisodeSource> = slices
        .iter()
        .zip(&ids)
        .map(|(s, id)| EpisodeSource { id, snapshots: s })
        .collect();

    let mut resumed = Vec::new();
    let mut todo = Vec::new();
    for m in 0..cfg.ensemble_size {
        let path = checkpoint_path(cfg, m);
        match path.exists().then(|| Checkpoint::load(&path)) {
            Some(Ok(ck)) if ck.scenario == cfg.scenario && ck.seed == member_seed(cfg, m) => resumed.push(m),
            Some(Ok(_)) => {
                return Err(AppError::Usage(format!(
                    "{} belongs to a different run; use another output directory",
                    path.display()
                )))
            }
            Some(Err(e)) => return Err(e),
            None => todo.push(m),
        }
    }
    if !resumed.is_empty() {
        info!("members {resumed:?} already trained; skipping");
    }

    let depth = cfg.instrument().depth;
    thread_pool(cfg.jobs)?.install(|| {
        todo.par_iter()
            .map(|&m| train_member(cfg, m, &sources, env_cfg, ppo, manifest.volume_norm, depth))
            .collect::<AppResult<Vec<()>>>()
    })?;

    let checkpoints: Vec<PathBuf> = (0..cfg.ensemble_size).map(|m| checkpoint_path(cfg, m)).collect();
    let mut record = RunRecord::new("train", cfg);
    record.seeds = (0..cfg.ensemble_size)
        .map(|m| (format!("member_{m:03}"), member_seed(cfg, m)))
        .collect();
    record.outputs = checkpoints.iter().map(|p| p.display().to_string()).collect();
    write_run_record(cfg, &record)?;
    Ok(TrainOutcome {
        checkpoints,
        resumed,
        trained: todo,
    })
}

fn train_member(
    cfg: &RunConfig,
    member: usize,
    sources: &[EpisodeSource<'_>],
    env_cfg: EnvConfig,
    ppo: PpoConfig,
    volume_norm: f64,
    depth: usize,
) -> AppResult<()> {
    let seed = member_seed(cfg, member);
    let started = Instant::now();
    let params = init_params(cfg, &env_cfg, seed);
    let partial = cfg
        .out_dir
        .join(CHECKPOINT_DIR)
        .join("partial")
        .join(format!("member_{member:03}.json"));
    let mut save_error = None;
    let (params, log) = train_continual(params, sources, env_cfg, ppo, derive_seed(seed, "train", 0), |i, p| {
        let ck = Checkpoint::from_params(p, cfg.scenario, volume_norm, depth, member, seed);
        if let Err(e) = ck.save(&partial) {
            save_error.get_or_insert(e);
        }
        info!("member {member}: window {}/{} done", i + 1, sources.len());
    })?;
    if let Some(e) = save_error {
        return Err(e);
    }
    let logs = cfg.out_dir.join(LOG_DIR);
    write_log(&logs.join(format!("member_{member:03}.jsonl")), &log)?;
    write_epoch_log(&logs.join(format!("member_{member:03}_epochs.jsonl")), &log)?;
    let clipped: usize = log.updates.iter().map(|u| u.grad_clipped).sum();
    if clipped > 0 {
        info!("member {member}: gradient norm clipped in {clipped} minibatch steps");
    }
    // The final checkpoint is written last: its presence marks the member done.
    Checkpoint::from_params(&params, cfg.scenario, volume_norm, depth, member, seed).save(&checkpoint_path(cfg, member))?;
    let _ = fs::remove_file(&partial);
    info!("member {member} trained in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Cumulative profit of one policy over the given days.
fn validation_profit(cfg: &RunConfig, params: &PolicyParams, days: &[TradingDay], env_cfg: EnvConfig) -> AppResult<i64> {
    let results = days
        .par_iter()
        .map(|d| run_day(params, d, env_cfg, 0, cfg.eval))
        .collect::<hftrl_core::Result<Vec<_>>>()?;
    Ok(results.iter().map(|r| r.final_pnl()).sum())
}

/// Bayesian optimization of learning rate and entropy coefficient against
/// cumulative validation profit.
pub fn tune(cfg: &RunConfig) -> AppResult<(TuneResult, BestPoint)> {
    let manifest = load_manifest(cfg)?;
    let train_days = load_days(cfg, Split::Train)?;
    let val_days = load_days(cfg, Split::Validation)?;
    let slices = manifest.slices(&train_days, &manifest_path(cfg))?;
    let env_cfg = env_config(cfg, manifest.volume_norm);
    let sources: Vec<EpisodeSource> = slices
        .iter()
        .zip(&manifest.windows)
        .map(|(s, w)| EpisodeSource { id: &w.day_id, snapshots: s })
        .collect();
    let pool = thread_pool(cfg.jobs)?;
    let tune_seed = derive_seed(cfg.seed, "tune", 0);
    let mut wall_times = Vec::new();
    let result = smbo_tune(&cfg.search, cfg.budget, tune_seed, |trial| {
        let started = Instant::now();
        let ppo = PpoConfig {
            learning_rate: trial.learning_rate,
            entropy_coef: trial.entropy_coef,
            ..cfg.ppo
        };
        let seed = derive_seed(cfg.seed, "trial", trial.trial_id as u64);
        if trial.fallback {
            warn!("trial {}: expected improvement vanished; drew a random point", trial.trial_id);
        }
        let outcome = (|| -> AppResult<f64> {
            let params = init_params(cfg, &env_cfg, seed);
            let (params, _) = train_continual(params, &sources, env_cfg, ppo, derive_seed(seed, "train", 0), |_, _| {})?;
            let profit = pool.install(|| validation_profit(cfg, &params, &val_days, env_cfg))?;
            Ok(profit as f64)
        })();
        wall_times.push(started.elapsed().as_secs_f64());
        match outcome {
            Ok(v) => {
                info!(
                    "trial {}: lr {:.3e} entropy {:.3e} -> {v} ticks",
                    trial.trial_id, trial.learning_rate, trial.entropy_coef
                );
                Ok(v)
            }
            Err(e) => {
                warn!("trial {} failed: {e}", trial.trial_id);
                Err(hftrl_core::Error::Numerical(e.to_string()))
            }
        }
    })?;

    let dir = cfg.out_dir.join(TUNING_DIR);
    io::ensure_dir(&dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| AppError::Usage(format!("csv encoding: {e}"));
    w.write_record(["trial_id", "learning_rate", "entropy_coef", "validation_profit_ticks", "wall_time"])
        .map_err(enc)?;
    for (t, wall) in result.trials.iter().zip(&wall_times) {
        w.write_record([
            t.trial_id.to_string(),
            t.learning_rate.to_string(),
            t.entropy_coef.to_string(),
            t.value.to_string(),
            format!("{wall:.3}"),
        ])
        .map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Usage(format!("csv encoding: {e}")))?;
    io::write_atomic(&dir.join(TRIALS_FILE), &bytes)?;
    let best = BestPoint {
        trial_id: result.best.trial_id,
        learning_rate: result.best.learning_rate,
        entropy_coef: result.best.entropy_coef,
        validation_profit_ticks: result.best.value,
    };
    io::write_json(&best_path(cfg), &best)?;
    let mut record = RunRecord::new("tune", cfg);
    record.seeds.push(("tune".into(), tune_seed));
    record.seeds.extend(
        (0..cfg.budget).map(|t| (format!("trial_{t:03}"), derive_seed(cfg.seed, "trial", t as u64))),
    );
    record.outputs = vec![
        dir.join(TRIALS_FILE).display().to_string(),
        best_path(cfg).display().to_string(),
    ];
    write_run_record(cfg, &record)?;
    Ok((result, best))
}

pub fn load_best(cfg: &RunConfig) -> AppResult<BestPoint> {
    let path = best_path(cfg);
    if !path.exists() {
        return Err(AppError::Usage(format!("{} not found; run `tune` first", path.display())));
    }
    io::read_json(&path)
}

/// Final member checkpoints present in the output directory, in member order.
pub fn find_checkpoints(cfg: &RunConfig) -> AppResult<Vec<PathBuf>> {
    let dir = cfg.out_dir.join(CHECKPOINT_DIR);
    let mut out = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).map_err(|e| AppError::io(&dir, e))? {
            let p = entry.map_err(|e| AppError::io(&dir, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.starts_with("member_") && name.ends_with(".json") && p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Evaluates checkpoints over the test days and exports the report.
pub fn test(cfg: &RunConfig, checkpoints: &[PathBuf]) -> AppResult<(EnsembleReport, ReportFiles)> {
    if checkpoints.is_empty() {
        return Err(AppError::Usage("no checkpoints to evaluate".into()));
    }
    let mut members = Vec::with_capacity(checkpoints.len());
    let mut hasher_input = Vec::new();
    let mut volume_norm = None;
    for p in checkpoints {
        let ck = Checkpoint::load(p)?;
        if ck.scenario != cfg.scenario {
            return Err(AppError::format(
                p,
                format!("checkpoint is for scenario {}, run is {}", ck.scenario, cfg.scenario),
            ));
        }
        match volume_norm {
            None => volume_norm = Some(ck.volume_norm),
            Some(v) if v == ck.volume_norm => {}
            Some(_) => return Err(AppError::format(p, "checkpoints disagree on volume_norm")),
        }
        hasher_input.extend_from_slice(&fs::read(p).map_err(|e| AppError::io(p, e))?);
        members.push((ck.member_id, ck.to_params()?));
    }
    let env_cfg = env_config(cfg, volume_norm.expect("at least one checkpoint"));
    let days = load_days(cfg, Split::Test)?;
    let pairs: Vec<(usize, usize)> = (0..members.len())
        .flat_map(|m| (0..days.len()).map(move |d| (m, d)))
        .collect();
    let results = thread_pool(cfg.jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|&(m, d)| run_day(&members[m].1, &days[d], env_cfg, members[m].0, cfg.eval))
            .collect::<hftrl_core::Result<Vec<_>>>()
    })?;
    let report = aggregate(cfg.scenario, &results)?;
    let hash = io::sha256_hex(&hasher_input)[..8].to_string();
    let files = export_report(&report, &cfg.out_dir.join(REPORT_DIR), &hash)?;
    let mut record = RunRecord::new("test", cfg);
    if let hftrl_core::backtest::EvalMode::Sampled { seed } = cfg.eval {
        record.seeds.push(("eval".into(), seed));
    }
    record.outputs = files.all().iter().map(|p| p.display().to_string()).collect();
    write_run_record(cfg, &record)?;
    Ok((report, files))
}

/// Writes every configured synthetic day as an orderbook CSV under `dir`.
pub fn synth(cfg: &RunConfig, dir: &Path) -> AppResult<Vec<PathBuf>> {
    let s = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| AppError::Usage("`synth` needs a [data.synthetic] section".into()))?;
    let mut configs = Vec::new();
    for split in [Split::Train, Split::Validation, Split::Test] {
        for src in cfg.day_sources(split)? {
            if let DaySource::Synthetic(c) = src {
                configs.push((split, c));
            }
        }
    }
    let depth = s.instrument.depth;
    let paths = thread_pool(cfg.jobs)?.install(|| {
        configs
            .par_iter()
            .map(|(split, c)| -> AppResult<PathBuf> {
                let (day, _) = generate_day(c)?;
                let path = dir
                    .join(split.as_str())
                    .join(format!("SYN_{}_orderbook_{depth}.csv", day.day_id));
                io::write_atomic(&path, io::day_to_csv(&day).as_bytes())?;
                Ok(path)
            })
            .collect::<AppResult<Vec<_>>>()
    })?;
    let mut record = RunRecord::new("synth", cfg);
    record.seeds = configs.iter().map(|(_, c)| (c.day_id.clone(), c.seed)).collect();
    record.outputs = paths.iter().map(|p| p.display().to_string()).collect();
    io::ensure_dir(&cfg.out_dir)?;
    write_run_record(cfg, &record)?;
    Ok(paths)
}

/// Locates the trade ledger given either the file or a report directory.
pub fn find_trades_csv(path: &Path) -> AppResult<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let entries = fs::read_dir(path).map_err(|e| AppError::io(path, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with("_trades.csv"))
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(AppError::Usage(format!("no *_trades.csv in {}", path.display()))),
        n => Err(AppError::Usage(format!(
            "{n} trade ledgers in {}; pass one explicitly",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCheck {
    pub trades_csv: PathBuf,
    pub recomputed: Summary,
    /// Whether the exported summary agrees with the ledger, when one exists.
    pub matches_export: Option<bool>,
}

/// Recomputes the summary statistics from a trade ledger and compares them
/// with the exported summary next to it.
pub fn report(path: &Path, fallback_scenario: Scenario) -> AppResult<ReportCheck> {
    let trades_csv = find_trades_csv(path)?;
    let name = trades_csv.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let scenario = name
        .split('_')
        .next()
        .and_then(|t| t.parse::<Scenario>().ok())
        .unwrap_or(fallback_scenario);
    let rows = read_trades_csv(&trades_csv)?;
    let mut recomputed = summary_from_trades(scenario, &rows);
    let summary_path = trades_csv.with_file_name(name.replace("_trades.csv", "_summary.json"));
    let matches_export = if summary_path.is_file() {
        let exported: Summary = io::read_json(&summary_path)?;
        // Idle members and days leave no rows; take those counts from the export.
        recomputed.members = exported.members;
        recomputed.days = exported.days;
        recomputed.mean_member_pnl = if exported.members == 0 {
            0.0
        } else {
            recomputed.total_pnl as f64 / exported.members as f64
        };
        Some(exported == recomputed)
    } else {
        None
    };
    Ok(ReportCheck {
        trades_csv,
        recomputed,
        matches_export,
    })
}

pub fn print_json<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}
