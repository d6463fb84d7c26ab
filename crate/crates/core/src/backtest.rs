//! Out-of-sample evaluation of frozen policies over whole test days, and
//! the ensemble statistics built from them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, Scenario, TradeRecord, TradingEnv};
use crate::error::{Error, Result};
use crate::lob::TradingDay;
use crate::policy::{argmax, forward_with, sample_action, Activations, PolicyParams};
use crate::seed::derive_rng;

/// Anything that maps an observation to an action.
pub trait Policy {
    fn act(&mut self, obs: &[f64]) -> Result<Action>;
}

/// Argmax of the actor logits.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    params: &'a PolicyParams,
    act: Activations,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        GreedyPolicy {
            params,
            act: Activations::default(),
        }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<Action> {
        let out = forward_with(self.params, obs, &mut self.act)?;
        Ok(Action::from_index(argmax(&out.logits)).expect("argmax in range"))
    }
}

/// Samples from the actor's softmax.
#[derive(Debug, Clone)]
pub struct SampledPolicy<'a> {
    params: &'a PolicyParams,
    act: Activations,
    rng: ChaCha8Rng,
}

impl<'a> SampledPolicy<'a> {
    pub fn new(params: &'a PolicyParams, rng: ChaCha8Rng) -> Self {
        SampledPolicy {
            params,
            act: Activations::default(),
            rng,
        }
    }
}

impl Policy for SampledPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<Action> {
        let out = forward_with(self.params, obs, &mut self.act)?;
        Ok(Action::from_index(sample_action(&out.logits, &mut self.rng)).expect("sample in range"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Greedy,
    Sampled {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyResult {
    pub day_id: String,
    pub member_id: usize,
    /// Realized P&L in ticks after each tick of the day; entry 0 is 0.
    pub pnl_trajectory: Vec<i64>,
    pub trades: Vec<TradeRecord>,
    pub stopped: bool,
}

impl DailyResult {
    pub fn final_pnl(&self) -> i64 {
        self.pnl_trajectory.last().copied().unwrap_or(0)
    }
}

/// Runs `policy` over the whole day.
pub fn run_day_with<P: Policy + ?Sized>(
    policy: &mut P,
    day: &TradingDay,
    env_cfg: EnvConfig,
    member_id: usize,
) -> Result<DailyResult> {
    let mut env = TradingEnv::new(&day.snapshots, env_cfg)?;
    let mut obs = vec![0.0; env_cfg.observation_dim()];
    let mut pnl = Vec::with_capacity(day.len());
    let mut trades = Vec::new();
    let mut total = 0i64;
    pnl.push(0);
    while !env.is_done() {
        env.observe_into(&mut obs);
        let step = env.step(policy.act(&obs)?)?;
        total += step.reward;
        pnl.push(total);
        trades.extend(step.trade);
    }
    Ok(DailyResult {
        day_id: day.day_id.clone(),
        member_id,
        pnl_trajectory: pnl,
        trades,
        stopped: env.trading_disabled(),
    })
}

/// Evaluates a checkpoint; its input width must match the scenario.
pub fn run_day(
    params: &PolicyParams,
    day: &TradingDay,
    env_cfg: EnvConfig,
    member_id: usize,
    mode: EvalMode,
) -> Result<DailyResult> {
    let dim = env_cfg.observation_dim();
    if params.shape.input != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: params.shape.input,
        });
    }
    match mode {
        EvalMode::Greedy => run_day_with(&mut GreedyPolicy::new(params), day, env_cfg, member_id),
        EvalMode::Sampled { seed } => {
            let rng = derive_rng(seed, &format!("eval/{}", day.day_id), member_id as u64);
            run_day_with(&mut SampledPolicy::new(params, rng), day, env_cfg, member_id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub day_id: String,
    pub members: usize,
    /// Per-tick mean of cumulative P&L across members.
    pub mean: Vec<f64>,
    /// Per-tick population standard deviation across members.
    pub std: Vec<f64>,
    pub trades: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEntry {
    pub day_id: String,
    pub member_id: usize,
    pub trade: TradeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub members: usize,
    pub days: usize,
    /// Sum of every trade profit across members and days, in ticks.
    pub total_pnl: i64,
    pub mean_member_pnl: f64,
    pub trade_count: usize,
    pub win_rate: f64,
    pub mean_trade_return: f64,
}

impl Summary {
    pub fn from_trades<'a, I>(scenario: Scenario, members: usize, days: usize, trades: I) -> Self
    where
        I: IntoIterator<Item = &'a TradeRecord>,
    {
        let mut total = 0i64;
        let mut count = 0usize;
        let mut wins = 0usize;
        for t in trades {
            total += t.profit;
            count += 1;
            wins += usize::from(t.profit > 0);
        }
        let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        Summary {
            scenario,
            members,
            days,
            total_pnl: total,
            mean_member_pnl: ratio(total as f64, members),
            trade_count: count,
            win_rate: ratio(wins as f64, count),
            mean_trade_return: ratio(total as f64, count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub scenario: Scenario,
    /// Days in calendar order.
    pub days: Vec<DayStats>,
    /// Mean cumulative P&L with days concatenated; same layout as the
    /// per-day `mean` vectors laid end to end.
    pub cumulative_mean: Vec<f64>,
    /// Trade profit (ticks) to count, unit-width bins.
    pub histogram: BTreeMap<i64, u64>,
    pub trades: Vec<TradeEntry>,
    pub summary: Summary,
}

impl EnsembleReport {
    pub fn empty(scenario: Scenario) -> Self {
        EnsembleReport {
            scenario,
            days: Vec::new(),
            cumulative_mean: Vec::new(),
            histogram: BTreeMap::new(),
            trades: Vec::new(),
            summary: Summary::from_trades(scenario, 0, 0, []),
        }
    }

    pub fn first_day(&self) -> Option<&str> {
        self.days.first().map(|d| d.day_id.as_str())
    }

    pub fn last_day(&self) -> Option<&str> {
        self.days.last().map(|d| d.day_id.as_str())
    }
}

/// Reduces per-(member, day) results into ensemble statistics. Day ids are
/// ordered lexicographically, which is calendar order for ISO dates.
pub fn aggregate(scenario: Scenario, results: &[DailyResult]) -> Result<EnsembleReport> {
    if results.is_empty() {
        return Ok(EnsembleReport::empty(scenario));
    }
    let mut by_day: BTreeMap<&str, Vec<&DailyResult>> = BTreeMap::new();
    for r in results {
        by_day.entry(r.day_id.as_str()).or_default().push(r);
    }
    let mut members: Vec<usize> = results.iter().map(|r| r.member_id).collect();
    members.sort_unstable();
    members.dedup();

    let mut days = Vec::with_capacity(by_day.len());
    let mut cumulative_mean = Vec::new();
    let mut histogram = BTreeMap::new();
    let mut trades = Vec::new();
    let mut offset = 0.0;
    for (day_id, mut rs) in by_day {
        rs.sort_by_key(|r| r.member_id);
        if rs.windows(2).any(|w| w[0].member_id == w[1].member_id) {
            return Err(Error::Usage(format!("duplicate member result for day {day_id}")));
        }
        let n = rs[0].pnl_trajectory.len();
        if let Some(bad) = rs.iter().find(|r| r.pnl_trajectory.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.pnl_trajectory.len(),
            });
        }
        let m = rs.len() as f64;
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for t in 0..n {
            let mu = rs.iter().map(|r| r.pnl_trajectory[t] as f64).sum::<f64>() / m;
            let var = rs
                .iter()
                .map(|r| {
                    let d = r.pnl_trajectory[t] as f64 - mu;
                    d * d
                })
                .sum::<f64>()
                / m;
            mean[t] = mu;
            std[t] = libm::sqrt(var);
        }
        cumulative_mean.extend(mean.iter().map(|v| v + offset));
        offset += mean.last().copied().unwrap_or(0.0);
        let mut count = 0;
        for r in &rs {
            for t in &r.trades {
                *histogram.entry(t.profit).or_insert(0u64) += 1;
                trades.push(TradeEntry {
                    day_id: day_id.into(),
                    member_id: r.member_id,
                    trade: *t,
                });
                count += 1;
            }
        }
        days.push(DayStats {
            day_id: day_id.into(),
            members: rs.len(),
            mean,
            std,
            trades: count,
        });
    }
    let summary = Summary::from_trades(scenario, members.len(), days.len(), trades.iter().map(|t| &t.trade));
    Ok(EnsembleReport {
        scenario,
        days,
        cumulative_mean,
        histogram,
        trades,
        summary,
    })
}

/// Evaluates every (member, day) pair sequentially and aggregates.
pub fn run_ensemble(
    members: &[PolicyParams],
    days: &[TradingDay],
    env_cfg: EnvConfig,
    mode: EvalMode,
) -> Result<EnsembleReport> {
    if members.is_empty() || days.is_empty() {
        return Err(Error::Usage("an ensemble run needs at least one checkpoint and one day".into()));
    }
    let mut results = Vec::with_capacity(members.len() * days.len());
    for (i, p) in members.iter().enumerate() {
        for d in days {
            results.push(run_day(p, d, env_cfg, i, mode)?);
        }
    }
    aggregate(env_cfg.scenario, &results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CloseCause, Side};
    use crate::lob::{BookLevel, BookSnapshot, InstrumentSpec};
    use crate::policy::{Activation, NetShape};
    use crate::synth::{generate_day, SynthConfig};
    use rand::{Rng, SeedableRng};

    struct Scripted(Vec<Action>, usize);

    impl Policy for Scripted {
        fn act(&mut self, _obs: &[f64]) -> Result<Action> {
            let a = self.0.get(self.1).copied().unwrap_or(Action::Stay);
            self.1 += 1;
            Ok(a)
        }
    }

    struct Random(ChaCha8Rng);

    impl Policy for Random {
        fn act(&mut self, _obs: &[f64]) -> Result<Action> {
            Ok(Action::ALL[self.0.random_range(0..4)])
        }
    }

    fn cfg(depth: usize) -> EnvConfig {
        EnvConfig {
            scenario: Scenario::C202,
            instrument: InstrumentSpec::new(0.01, depth).unwrap(),
            volume_norm: 100.0,
        }
    }

    fn static_day(spread: i64, n: usize) -> TradingDay {
        let snapshots = (0..n)
            .map(|i| BookSnapshot {
                asks: vec![BookLevel { price: (5000 + spread) * 100, volume: 10 }],
                bids: vec![BookLevel { price: 5000 * 100, volume: 10 }],
                tick_index: i as u64,
                wall_time: 0.0,
            })
            .collect();
        TradingDay {
            day_id: "2019-06-03".into(),
            snapshots,
        }
    }

    fn synth(seed: u64, n: usize) -> TradingDay {
        let mut d = generate_day(&SynthConfig {
            seed,
            n_ticks: n,
            ..SynthConfig::default()
        })
        .unwrap()
        .0;
        d.day_id = format!("2019-06-{:02}", 3 + seed);
        d
    }

    #[test]
    fn staying_gives_flat_zero() {
        let day = static_day(1, 50);
        let r = run_day_with(&mut Scripted(vec![], 0), &day, cfg(1), 0).unwrap();
        assert!(r.trades.is_empty());
        assert_eq!(r.pnl_trajectory, vec![0; 50]);
        let params = PolicyParams::zeros(NetShape::new(cfg(1).observation_dim()), Activation::Tanh);
        // Zero logits tie; argmax picks the first action (sell), then holds it.
        let r = run_day(&params, &day, cfg(1), 0, EvalMode::Greedy).unwrap();
        assert_eq!(r.trades.len(), 1);
        assert_eq!(r.trades[0].cause, CloseCause::EpisodeEnd);
    }

    #[test]
    fn scripted_round_trip_costs_the_spread() {
        for s in 1..4 {
            let day = static_day(s, 10);
            let r = run_day_with(&mut Scripted(vec![Action::Buy, Action::Sell], 0), &day, cfg(1), 0).unwrap();
            assert_eq!(r.trades.len(), 1);
            assert_eq!(r.trades[0].side, Side::Long);
            assert_eq!(r.trades[0].profit, -s);
            assert_eq!(r.final_pnl(), -s);
            assert_eq!(r.pnl_trajectory[1], 0);
            assert_eq!(r.pnl_trajectory[2], -s);
        }
    }

    #[test]
    fn trajectory_is_conserved_and_piecewise_constant() {
        let day = synth(1, 2_000);
        for seed in 0..30 {
            let mut p = Random(ChaCha8Rng::seed_from_u64(seed));
            let r = run_day_with(&mut p, &day, cfg(10), 0).unwrap();
            assert_eq!(r.pnl_trajectory.len(), day.len());
            assert_eq!(r.final_pnl(), r.trades.iter().map(|t| t.profit).sum::<i64>());
            let jumps = r.pnl_trajectory.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(jumps <= r.trades.len());
            // A stop-loss close, if any, is the day's last trade.
            if let Some(i) = r.trades.iter().position(|t| t.cause == CloseCause::StopLoss) {
                assert!(r.stopped);
                assert_eq!(i, r.trades.len() - 1);
            }
        }
    }

    #[test]
    fn evaluation_is_pure_and_checks_dimensions() {
        let day = synth(2, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::init(NetShape::new(cfg(10).observation_dim()), Activation::Tanh, &mut rng);
        let a = run_day(&p, &day, cfg(10), 0, EvalMode::Greedy).unwrap();
        let b = run_day(&p, &day, cfg(10), 0, EvalMode::Greedy).unwrap();
        assert_eq!(a, b);
        let s1 = run_day(&p, &day, cfg(10), 4, EvalMode::Sampled { seed: 9 }).unwrap();
        let s2 = run_day(&p, &day, cfg(10), 4, EvalMode::Sampled { seed: 9 }).unwrap();
        assert_eq!(s1, s2);
        let c201 = EnvConfig {
            scenario: Scenario::C201,
            ..cfg(10)
        };
        assert!(matches!(
            run_day(&p, &day, c201, 0, EvalMode::Greedy),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn result(day: &str, member: usize, traj: Vec<i64>, profits: &[i64]) -> DailyResult {
        DailyResult {
            day_id: day.into(),
            member_id: member,
            pnl_trajectory: traj,
            trades: profits
                .iter()
                .map(|&p| TradeRecord {
                    side: Side::Long,
                    open_tick: 0,
                    close_tick: 1,
                    profit: p,
                    cause: CloseCause::AgentClose,
                })
                .collect(),
            stopped: false,
        }
    }

    #[test]
    fn single_member_has_zero_std() {
        let r = aggregate(Scenario::C201, &[result("d1", 0, vec![0, 2, 2, -1], &[2, -3])]).unwrap();
        assert!(r.days[0].std.iter().all(|s| *s == 0.0));
        assert_eq!(r.days[0].mean, vec![0.0, 2.0, 2.0, -1.0]);
    }

    #[test]
    fn symmetric_members_have_zero_mean() {
        let traj: Vec<i64> = vec![0, 3, -2, 5];
        let neg: Vec<i64> = traj.iter().map(|v| -v).collect();
        let r = aggregate(
            Scenario::C202,
            &[result("d", 0, traj.clone(), &[]), result("d", 1, neg, &[])],
        )
        .unwrap();
        for t in 0..4 {
            assert_eq!(r.days[0].mean[t], 0.0);
            assert_eq!(r.days[0].std[t], traj[t].abs() as f64);
        }
    }

    #[test]
    fn cross_day_concatenation_and_histogram() {
        let rs = [
            result("2019-06-04", 0, vec![0, 1, 3], &[1, 2]),
            result("2019-06-03", 0, vec![0, -1], &[-1]),
            result("2019-06-04", 1, vec![0, 0, 1], &[1]),
            result("2019-06-03", 1, vec![0, 3], &[3]),
        ];
        let r = aggregate(Scenario::C203, &rs).unwrap();
        assert_eq!(r.first_day(), Some("2019-06-03"));
        assert_eq!(r.last_day(), Some("2019-06-04"));
        assert_eq!(r.cumulative_mean, vec![0.0, 1.0, 1.0, 1.5, 3.0]);
        let total: u64 = r.histogram.values().sum();
        assert_eq!(total as usize, r.days.iter().map(|d| d.trades).sum::<usize>());
        assert_eq!(total, 5);
        assert_eq!(r.histogram.get(&1), Some(&2));
        assert_eq!(r.summary.trade_count, 5);
        assert_eq!(r.summary.total_pnl, 6);
        assert_eq!(r.summary.mean_member_pnl, 3.0);
        assert!((r.summary.win_rate - 0.8).abs() < 1e-12);

        let mut reversed = rs.clone();
        reversed.reverse();
        assert_eq!(aggregate(Scenario::C203, &reversed).unwrap(), r);
        let bad = [result("d", 0, vec![0, 1], &[]), result("d", 1, vec![0], &[])];
        assert!(aggregate(Scenario::C201, &bad).is_err());
    }

    #[test]
    fn empty_report_has_zero_summary() {
        let r = EnsembleReport::empty(Scenario::C201);
        assert_eq!(r.summary.trade_count, 0);
        assert_eq!(r.summary.win_rate, 0.0);
        assert_eq!(aggregate(Scenario::C201, &[]).unwrap(), r);
    }

    #[test]
    fn ensemble_runs_every_pair() {
        let days = [synth(4, 300), synth(5, 400)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = NetShape::new(cfg(10).observation_dim());
        let members: Vec<PolicyParams> = (0..3).map(|_| PolicyParams::init(shape, Activation::Tanh, &mut rng)).collect();
        let r = run_ensemble(&members, &days, cfg(10), EvalMode::Greedy).unwrap();
        assert_eq!(r.days.len(), 2);
        assert!(r.days.iter().all(|d| d.members == 3));
        assert_eq!(r.cumulative_mean.len(), 700);
        assert!(run_ensemble(&[], &days, cfg(10), EvalMode::Greedy).is_err());
        assert!(run_ensemble(&members, &[], cfg(10), EvalMode::Greedy).is_err());
    }
}
