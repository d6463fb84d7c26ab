//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any hard criterion fails. The scenario-ordering check
//! is soft: its outcome is printed but never fails the run.

// `ensure!` negates its condition so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hftrl::config::RunConfig;
use hftrl::pipeline;
use hftrl_core::backtest::{run_day, run_day_with, EvalMode, Policy};
use hftrl_core::env::{
    mean_level_volume, trade_profit, Action, CloseCause, EnvConfig, Position, Scenario, Side, TradingEnv,
};
use hftrl_core::lob::{mid_price, spread, BookLevel, BookSnapshot, InstrumentSpec, TradingDay};
use hftrl_core::policy::{forward, log_prob_entropy, Activation, NetShape, PolicyParams};
use hftrl_core::ppo::{
    clipped_surrogate, compute_gae, ppo_loss, ppo_loss_grad, train_continual, EpisodeSource, PpoConfig, RolloutBuffer,
};
use hftrl_core::seed::{derive_rng, derive_seed};
use hftrl_core::smbo::{expected_improvement, normal_pdf, GpModel, SeKernel};
use hftrl_core::synth::{generate_day, Signal, SynthConfig};
use hftrl_core::window::score_day_windows;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Check = (&'static str, bool, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("clipped surrogate hand cases", false, surrogate_cases),
        ("PPO loss gradient vs finite differences", false, gradient_audit),
        ("position x action transition table", false, transition_table),
        ("P&L conservation and round-trip cost", false, pnl_conservation),
        ("stop-loss freezes trading", false, stop_loss_safety),
        ("GAE vs brute-force sums", false, gae_oracle),
        ("GP posterior and EI oracles", false, gp_oracle),
        ("learning smoke test on momentum data", false, learning_smoke),
        ("c202 ensemble >= c201 ensemble (soft)", true, scenario_ordering),
        ("window sampler vs exhaustive scan", false, window_oracle),
        ("end-to-end determinism", false, end_to_end),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, soft, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.iter().any(|o| o == &id.to_string()) {
            continue;
        }
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) if *soft => println!("PASS {id:>2} {name}: not met, logged only: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn surrogate_cases() -> Outcome {
    let cases = [(1.0, 1.0, 1.0), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8)];
    let mut worst: f64 = 0.0;
    for (r, a, want) in cases {
        let got = clipped_surrogate(r, a, 0.2);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "r={r} A={a}: got {got}, want {want}");
    }
    Ok(format!("max abs error {worst:.1e}"))
}

/// Batch whose old log-probs come from a perturbed copy of the network so
/// ratios spread across both sides of the clip range.
fn audit_batch(params: &PolicyParams, rng: &mut ChaCha8Rng, n: usize) -> RolloutBuffer {
    let mut old = params.clone();
    for v in old.data.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let dim = params.shape.input;
    let mut buf = RolloutBuffer::new(dim);
    for _ in 0..n {
        let obs: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rng.random_range(0..4);
        let (lp, _) = log_prob_entropy(&forward(&old, &obs).unwrap().logits, a);
        buf.push(&obs, a, lp, 0.0, 0.0);
        buf.advantages.push(rng.random_range(-2.0..2.0));
        buf.returns.push(rng.random_range(-1.0..1.0));
    }
    buf
}

fn gradient_audit() -> Outcome {
    let shape = NetShape { input: 6, hidden: 4 };
    let cfg = PpoConfig {
        entropy_coef: 0.05,
        ..PpoConfig::default()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut clipped_seen = 0.0;
    for batch in 0..20u64 {
        let mut rng = derive_rng(11, "audit", batch);
        let params = PolicyParams::init(shape, Activation::Tanh, &mut rng);
        let buf = audit_batch(&params, &mut rng, 16);
        let idx: Vec<usize> = (0..buf.len()).collect();
        let mut grad = vec![0.0; params.len()];
        let stats = ppo_loss_grad(&params, &buf, &idx, &cfg, &mut grad).map_err(|e| e.to_string())?;
        clipped_seen += stats.clip_fraction;
        for _ in 0..100 {
            let k = rng.random_range(0..params.len());
            let mut p = params.clone();
            p.data[k] += h;
            let up = ppo_loss(&p, &buf, &idx, &cfg).unwrap().loss;
            p.data[k] -= 2.0 * h;
            let down = ppo_loss(&p, &buf, &idx, &cfg).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            ensure!(rel < 1e-4, "batch {batch} coord {k}: analytic {} vs numeric {fd}", grad[k]);
        }
    }
    ensure!(clipped_seen > 0.0, "no batch exercised the clipped branch");
    Ok(format!("2000 coordinates, max relative error {worst:.1e}, mean clip fraction {:.2}", clipped_seen / 20.0))
}

fn one_level_book(quotes: &[(i64, i64)]) -> Vec<BookSnapshot> {
    quotes
        .iter()
        .enumerate()
        .map(|(i, &(ask, bid))| BookSnapshot {
            asks: vec![BookLevel { price: ask * 100, volume: 100 }],
            bids: vec![BookLevel { price: bid * 100, volume: 100 }],
            tick_index: i as u64,
            wall_time: 0.0,
        })
        .collect()
}

fn one_level_cfg() -> EnvConfig {
    EnvConfig {
        scenario: Scenario::C202,
        instrument: InstrumentSpec::new(0.01, 1).unwrap(),
        volume_norm: 100.0,
    }
}

fn transition_table() -> Outcome {
    // Quotes rise one cent per tick with a one-cent spread.
    let quotes: Vec<(i64, i64)> = (0..12).map(|i| (5001 + i, 5000 + i)).collect();
    let book = one_level_book(&quotes);
    let mut checked = 0;
    for losing_day in [false, true] {
        for pos in [None, Some(Side::Long), Some(Side::Short)] {
            for action in Action::ALL {
                let mut env = TradingEnv::new(&book, one_level_cfg()).unwrap();
                // A short against rising quotes makes the day a loser.
                let mut prefix = if losing_day { vec![Action::Sell, Action::Buy] } else { vec![Action::Stay, Action::Stay] };
                match pos {
                    Some(Side::Long) => prefix.push(Action::Buy),
                    Some(Side::Short) => prefix.push(Action::Sell),
                    None => prefix.push(Action::Stay),
                }
                prefix.push(Action::Stay);
                for a in &prefix {
                    env.step(*a).unwrap();
                }
                let pnl_before = env.day_pnl();
                ensure!((pnl_before < 0) == losing_day, "setup failed: day P&L {pnl_before}");
                ensure!(env.position().side() == pos, "setup failed: position {:?}", env.position());
                let entry = match env.position() {
                    Position::Open(p) => Some(p),
                    Position::Neutral => None,
                };
                let now = env.current().clone();
                let step = env.step(action).unwrap();
                let after = env.position().side();
                let stop = action == Action::DailyStopLoss && losing_day;

                let closes = match (pos, action) {
                    (Some(Side::Long), Action::Sell) | (Some(Side::Short), Action::Buy) => true,
                    (Some(_), Action::DailyStopLoss) => stop,
                    _ => false,
                };
                let want_pos = match (pos, action) {
                    (None, Action::Buy) => Some(Side::Long),
                    (None, Action::Sell) => Some(Side::Short),
                    _ if closes => None,
                    _ => pos,
                };
                let tag = format!("losing={losing_day} {pos:?} x {action:?}");
                ensure!(after == want_pos, "{tag}: position {after:?}, want {want_pos:?}");
                ensure!(env.trading_disabled() == stop, "{tag}: trading_disabled {}", env.trading_disabled());
                if closes {
                    let t = step.trade.ok_or_else(|| format!("{tag}: no trade recorded"))?;
                    let e = entry.unwrap();
                    let want = match e.side {
                        Side::Long => (now.best_bid().price - e.entry_ask) / 100,
                        Side::Short => (e.entry_bid - now.best_ask().price) / 100,
                    };
                    let cause = if stop { CloseCause::StopLoss } else { CloseCause::AgentClose };
                    ensure!(t.profit == want && step.reward == want, "{tag}: reward {} want {want}", step.reward);
                    ensure!(t.cause == cause, "{tag}: cause {:?}", t.cause);
                    ensure!(env.day_pnl() == pnl_before + want, "{tag}: day P&L not updated");
                } else {
                    ensure!(step.trade.is_none() && step.reward == 0, "{tag}: unexpected trade {:?}", step.trade);
                    ensure!(env.day_pnl() == pnl_before, "{tag}: day P&L moved");
                }
                if let (None, Position::Open(p)) = (pos, env.position()) {
                    ensure!(p.entry_ask == now.best_ask().price && p.entry_bid == now.best_bid().price, "{tag}: wrong entry quotes");
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} cases (12 pairs, stop-loss on winning and losing days)"))
}

fn momentum_day(seed: u64, n_ticks: usize, spread_one: bool) -> TradingDay {
    generate_day(&SynthConfig {
        seed,
        n_ticks,
        spread_distribution: if spread_one { [1.0, 0.0, 0.0] } else { [0.6, 0.3, 0.1] },
        signal: Signal::Momentum {
            strength: 5,
            trigger_imbalance: 0.8,
            trigger_rate: 0.02,
        },
        day_id: format!("d{seed}"),
        ..SynthConfig::default()
    })
    .unwrap()
    .0
}

fn env_cfg(day: &TradingDay, scenario: Scenario) -> EnvConfig {
    EnvConfig {
        scenario,
        instrument: InstrumentSpec::default(),
        volume_norm: mean_level_volume(&day.snapshots),
    }
}

fn pnl_conservation() -> Outcome {
    let days: Vec<TradingDay> = (0..10).map(|i| momentum_day(derive_seed(4, "pnl-day", i), 400, false)).collect();
    let mut trades = 0usize;
    for ep in 0..1000u64 {
        let day = &days[ep as usize % days.len()];
        let mut rng = derive_rng(4, "pnl-actions", ep);
        let mut env = TradingEnv::new(&day.snapshots, env_cfg(day, Scenario::C202)).unwrap();
        let (mut rewards, mut profits) = (0i64, 0i64);
        while !env.is_done() {
            // Stop-loss is rare so most episodes keep trading.
            let a = if rng.random_bool(0.02) { Action::DailyStopLoss } else { Action::ALL[rng.random_range(0..3)] };
            let s = env.step(a).unwrap();
            rewards += s.reward;
            if let Some(t) = s.trade {
                profits += t.profit;
                trades += 1;
            }
        }
        ensure!(rewards == profits && profits == env.day_pnl(), "episode {ep}: rewards {rewards}, trades {profits}");
    }
    // Immediate round trips on unchanged quotes cost exactly the spread.
    let spec = InstrumentSpec::default();
    let mut round_trips = 0;
    for day in &days {
        for (t, s) in day.snapshots.iter().enumerate() {
            let sp = spread(s, &spec).unwrap();
            for side in [Side::Long, Side::Short] {
                ensure!(trade_profit(side, s, s, &spec) == -sp, "tick {t}: round trip != -spread");
            }
            if t + 2 < day.len() && day.snapshots[t + 1].best_ask().price == s.best_ask().price && day.snapshots[t + 1].best_bid().price == s.best_bid().price {
                for (open, close) in [(Action::Buy, Action::Sell), (Action::Sell, Action::Buy)] {
                    let mut env = TradingEnv::new(&day.snapshots[t..t + 3], env_cfg(day, Scenario::C201)).unwrap();
                    ensure!(env.step(open).unwrap().reward == 0, "open paid a reward");
                    let r = env.step(close).unwrap().reward;
                    ensure!(r == -sp, "tick {t}: round trip {r}, spread {sp}");
                    round_trips += 1;
                }
            }
        }
    }
    Ok(format!("1000 episodes, {trades} trades; {round_trips} env round trips equal -spread"))
}

fn stop_loss_safety() -> Outcome {
    let days: Vec<TradingDay> = (0..10).map(|i| momentum_day(derive_seed(5, "stop-day", i), 400, false)).collect();
    let mut triggered = 0;
    for ep in 0..1000u64 {
        let day = &days[ep as usize % days.len()];
        let mut rng = derive_rng(5, "stop-actions", ep);
        let mut env = TradingEnv::new(&day.snapshots, env_cfg(day, Scenario::C202)).unwrap();
        let mut frozen = false;
        while !env.is_done() {
            let a = if rng.random_bool(0.05) { Action::DailyStopLoss } else { Action::ALL[rng.random_range(0..3)] };
            let s = env.step(a).unwrap();
            if frozen {
                ensure!(s.trade.is_none() && s.reward == 0, "episode {ep}: trade after stop-loss");
                ensure!(env.position() == Position::Neutral, "episode {ep}: position changed after stop-loss");
            }
            if env.trading_disabled() && !frozen {
                frozen = true;
                triggered += 1;
                ensure!(env.position() == Position::Neutral, "episode {ep}: stop-loss left a position open");
            }
        }
    }
    ensure!(triggered >= 100, "only {triggered} streams triggered the stop-loss");
    Ok(format!("1000 streams, {triggered} triggered, no position change afterwards"))
}

fn gae_oracle() -> Outcome {
    let mut rng = derive_rng(6, "gae", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gamma: f64 = rng.random_range(0.0..=1.0);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let boot: f64 = rng.random_range(-5.0..5.0);
        let (adv, ret) = compute_gae(&r, &v, boot, gamma, lambda).map_err(|e| e.to_string())?;
        let next = |t: usize| if t + 1 < 10 { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..10).map(|t| r[t] + gamma * next(t) - v[t]).collect();
        for t in 0..10 {
            let want: f64 = (t..10).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
            worst = worst.max((adv[t] - want).abs()).max((ret[t] - (want + v[t])).abs());
        }
    }
    ensure!(worst <= 1e-12, "max abs error {worst:e}");
    Ok(format!("1000 sequences, max abs error {worst:.1e}"))
}

/// Gauss-Jordan inverse with partial pivoting.
fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot = m[c].clone();
                m[r].iter_mut().zip(pivot).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn gp_oracle() -> Outcome {
    let mut rng = derive_rng(7, "gp", 0);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = case % 5 + 1;
        let dim = 2;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kernel = SeKernel {
            signal_var: rng.random_range(0.25..2.0),
            length_scales: (0..dim).map(|_| rng.random_range(0.2..2.0)).collect(),
        };
        let noise = [1e-4, 1e-2, 1e-1][case % 3];
        let k = |a: &[f64], b: &[f64]| {
            let r2: f64 = a.iter().zip(b).zip(&kernel.length_scales).map(|((p, q), l)| (p - q).powi(2) / (l * l)).sum();
            kernel.signal_var * (-0.5 * r2).exp()
        };
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| k(&x[i], &x[j]) + if i == j { noise } else { 0.0 }).collect())
            .collect();
        let inv = dense_inverse(&gram);
        let model = GpModel::new(x.clone(), y.clone(), kernel.clone(), noise).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let ks: Vec<f64> = x.iter().map(|p| k(p, &q)).collect();
            let inv_k: Vec<f64> = inv.iter().map(|row| row.iter().zip(&ks).map(|(a, b)| a * b).sum()).collect();
            let inv_y: Vec<f64> = inv.iter().map(|row| row.iter().zip(&y).map(|(a, b)| a * b).sum()).collect();
            let mu: f64 = ks.iter().zip(&inv_y).map(|(a, b)| a * b).sum();
            let var = kernel.signal_var - ks.iter().zip(&inv_k).map(|(a, b)| a * b).sum::<f64>();
            let (m, s) = model.posterior(&q).map_err(|e| e.to_string())?;
            worst = worst.max((m - mu).abs()).max((s * s - var.max(0.0)).abs());
        }
    }
    ensure!(worst <= 1e-8, "posterior differs from the dense inverse by {worst:e}");

    let degenerate = [
        (expected_improvement(1.5, 0.0, 1.0, 0.1), 0.4),
        (expected_improvement(1.0, 0.0, 1.0, 0.0), 0.0),
        (expected_improvement(0.2, 0.0, 1.0, 0.01), 0.0),
    ];
    for (got, want) in degenerate {
        ensure!(got == want, "sigma=0 EI {got}, want {want}");
    }
    let ei = expected_improvement(0.7, 1.0, 0.7, 0.0);
    let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    ensure!((ei - phi0).abs() <= 1e-6 && (normal_pdf(0.0) - phi0).abs() <= 1e-15, "EI(best, 1) = {ei}");
    Ok(format!("1000 posterior queries, max error {worst:.1e}; EI degenerate cases exact, EI(best,1) = {ei:.9}"))
}

struct RandomPolicy(ChaCha8Rng);

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &[f64]) -> hftrl_core::Result<Action> {
        Ok(Action::ALL[self.0.random_range(0..Action::COUNT)])
    }
}

const SMOKE_WINDOWS: u64 = 10;
const SMOKE_WINDOW_TICKS: usize = 1_000;
const SMOKE_TEST_DAYS: u64 = 5;
const SMOKE_TEST_TICKS: usize = 5_000;
/// One-sided 95% quantile of Student's t with 19 degrees of freedom.
const T_CRIT_19: f64 = 1.729;

fn smoke_ppo() -> PpoConfig {
    PpoConfig {
        learning_rate: 1e-3,
        entropy_coef: 0.01,
        gamma: 0.999,
        env_epochs: 30,
        steps_per_update: 500,
        minibatch_size: 100,
        ..PpoConfig::default()
    }
}

struct Dataset {
    train: Vec<TradingDay>,
    test: Vec<TradingDay>,
    volume_norm: f64,
}

fn smoke_dataset(seed: u64) -> Dataset {
    let train: Vec<TradingDay> =
        (0..SMOKE_WINDOWS).map(|i| momentum_day(derive_seed(seed, "train", i), SMOKE_WINDOW_TICKS, true)).collect();
    let test = (0..SMOKE_TEST_DAYS).map(|i| momentum_day(derive_seed(seed, "test", i), SMOKE_TEST_TICKS, true)).collect();
    let volume_norm = mean_level_volume(train.iter().flat_map(|d| d.snapshots.iter()));
    Dataset { train, test, volume_norm }
}

fn train_member(data: &Dataset, scenario: Scenario, seed: u64) -> (PolicyParams, EnvConfig) {
    let ec = EnvConfig {
        scenario,
        instrument: InstrumentSpec::default(),
        volume_norm: data.volume_norm,
    };
    let init = PolicyParams::init(NetShape::new(ec.observation_dim()), Activation::Tanh, &mut derive_rng(seed, "init", 0));
    let sources: Vec<EpisodeSource> =
        data.train.iter().map(|d| EpisodeSource { id: &d.day_id, snapshots: &d.snapshots }).collect();
    let (params, _) = train_continual(init, &sources, ec, smoke_ppo(), seed, |_, _| {}).unwrap();
    (params, ec)
}

fn mean_test_pnl(params: &PolicyParams, data: &Dataset, ec: EnvConfig) -> f64 {
    let total: i64 = data.test.iter().map(|d| run_day(params, d, ec, 0, EvalMode::Greedy).unwrap().final_pnl()).sum();
    total as f64 / data.test.len() as f64
}

fn learning_smoke() -> Outcome {
    let t0 = Instant::now();
    let rows: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let data = smoke_dataset(s);
            let (params, ec) = train_member(&data, Scenario::C202, s);
            let random: i64 = data
                .test
                .iter()
                .enumerate()
                .map(|(i, d)| run_day_with(&mut RandomPolicy(derive_rng(s, "random", i as u64)), d, ec, 0).unwrap().final_pnl())
                .sum();
            (mean_test_pnl(&params, &data, ec), random as f64 / data.test.len() as f64)
        })
        .collect();
    let elapsed = t0.elapsed();
    let n = rows.len() as f64;
    let trained = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let random = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let md = diff.iter().sum::<f64>() / n;
    let sd = (diff.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = md / (sd / n.sqrt());
    let detail = format!(
        "mean P&L trained {trained:.2} vs random {random:.2} ticks/day, paired t = {t:.2} (need > {T_CRIT_19}), {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure!(trained > 0.0, "trained agent not profitable: {detail}");
    ensure!(t > T_CRIT_19, "not better than random at 95%: {detail}");
    ensure!(elapsed < Duration::from_secs(15 * 60), "too slow: {detail}");
    Ok(detail)
}

fn scenario_ordering() -> Outcome {
    let data = smoke_dataset(derive_seed(9, "ordering", 0));
    let ensemble_mean = |scenario: Scenario| -> f64 {
        let pnl: Vec<f64> = (0..10u64)
            .into_par_iter()
            .map(|m| {
                let (p, ec) = train_member(&data, scenario, derive_seed(9, "member", m));
                mean_test_pnl(&p, &data, ec)
            })
            .collect();
        pnl.iter().sum::<f64>() / pnl.len() as f64
    };
    let c201 = ensemble_mean(Scenario::C201);
    let c202 = ensemble_mean(Scenario::C202);
    let detail = format!("ensemble mean P&L c202 {c202:.2} vs c201 {c201:.2} ticks/day");
    ensure!(c202 >= c201, "{detail}");
    Ok(detail)
}

fn window_oracle() -> Outcome {
    let length = 200;
    let mut windows_total = 0;
    for i in 0..50u64 {
        let day = momentum_day(derive_seed(10, "window-day", i), 2_000, false);
        let mids: Vec<f64> = day.snapshots.iter().map(mid_price).collect();
        let (mut best_start, mut best) = (0, -1.0);
        for s in 0..=mids.len() - length {
            let score = (mids[s + length - 1] - mids[s]).abs();
            if score > best + 1e-9 {
                best = score;
                best_start = s;
            }
        }
        let top = score_day_windows(&day, length, 1).map_err(|e| e.to_string())?;
        let w = &top.windows[0];
        ensure!(
            w.start_tick == best_start && (w.score - best).abs() < 1e-9,
            "day {i}: sampler picked {} ({}) but the scan found {best_start} ({best})",
            w.start_tick,
            w.score
        );
        let five = score_day_windows(&day, length, 5).map_err(|e| e.to_string())?;
        for (a, x) in five.windows.iter().enumerate() {
            for y in &five.windows[a + 1..] {
                let (lo, hi) = if x.start_tick < y.start_tick { (x, y) } else { (y, x) };
                ensure!(lo.start_tick + lo.length <= hi.start_tick, "day {i}: windows at {} and {} overlap", lo.start_tick, hi.start_tick);
            }
        }
        windows_total += five.windows.len();
    }
    Ok(format!("50 days match the exhaustive optimum; {windows_total} top-5 windows pairwise disjoint"))
}

const E2E_CONFIG: &str = r#"
scenario = "c202"
seed = 2024
ensemble_size = 2

[data.synthetic]
seed = 17
n_ticks = 3000
train_days = 3
validation_days = 1
test_days = 2

[data.synthetic.signal]
kind = "momentum"
strength = 5
trigger_imbalance = 0.8
trigger_rate = 0.02

[windows]
length = 1000
per_day = 2
total = 5

[ppo]
env_epochs = 3
steps_per_update = 500
minibatch_size = 100
"#;

fn pipeline_run(dir: &Path, jobs: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut cfg = RunConfig::from_toml(E2E_CONFIG).map_err(|e| e.to_string())?;
    cfg.out_dir = dir.to_path_buf();
    cfg.jobs = jobs;
    pipeline::sample(&cfg).map_err(|e| e.to_string())?;
    let trained = pipeline::train(&cfg, None).map_err(|e| e.to_string())?;
    let (_, files) = pipeline::test(&cfg, &trained.checkpoints).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for p in files.all() {
        out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).map_err(|e| e.to_string())?));
    }
    out.sort();
    Ok(out)
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_run(a.path(), 1)?;
    let second = pipeline_run(b.path(), 2)?;
    let elapsed = t0.elapsed();
    ensure!(first.len() == 5, "expected 5 report files, got {}", first.len());
    for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
        ensure!(na == nb, "report names differ: {na} vs {nb}");
        ensure!(ba == bb, "{na} differs between runs");
    }
    ensure!(elapsed < Duration::from_secs(10 * 60), "took {:.0}s", elapsed.as_secs_f64());
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} identical report files ({bytes} bytes), {}", first.len(), first[0].0))
}
