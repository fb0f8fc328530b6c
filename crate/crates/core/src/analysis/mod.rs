//! Analyses over discovered strategies: value/simplicity frontiers, an
//! exhaustive sweep of reward-accumreating variants, and temperature
//! fitting on the forced-sampling task.

pub mod fsm;
pub mod reference;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_expr, Grammar, GrammarConfig, Strategy, MAX_LITERAL};
use crate::interp::{init_strategy, step_strategy, ActionDistribution, Memory, StepContext};
use crate::mcmc::{posterior_score, ScoredStrategy};
use crate::seeds;
use crate::tasks::{HorizonCondition, TaskSpec};
use crate::value::{episode_trace, exact_value, RolloutSet, ValueMethod, ValueSeeds};

/// One strategy placed on the value/simplicity plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub normalized_value: f64,
    pub log_prior: f64,
    pub m1: String,
    pub q1: String,
    pub f: String,
    pub g: String,
    pub on_frontier: bool,
}

/// Collapses scored strategies onto the value/simplicity plane and marks
/// the maximal ones. Invalid entries are dropped, duplicate programs keep
/// their highest value estimate, and a point is on the frontier when no
/// other point matches or beats it on both axes while beating it on one.
/// Output order depends only on the set of points, not their input order.
pub fn pareto(points: &[ScoredStrategy]) -> Vec<ParetoPoint> {
    let mut best: HashMap<String, &ScoredStrategy> = HashMap::new();
    for p in points {
        if !p.normalized_value.is_finite() || !p.log_prior.is_finite() {
            continue;
        }
        let key = format!("{};{};{};{}", p.m1, p.q1, p.f, p.g);
        match best.entry(key) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(p);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let held = e.get();
                if (p.normalized_value, p.log_prior) > (held.normalized_value, held.log_prior) {
                    e.insert(p);
                }
            }
        }
    }
    let mut pts: Vec<ParetoPoint> = best
        .into_values()
        .map(|p| ParetoPoint {
            normalized_value: p.normalized_value,
            log_prior: p.log_prior,
            m1: p.m1.clone(),
            q1: p.q1.clone(),
            f: p.f.clone(),
            g: p.g.clone(),
            on_frontier: false,
        })
        .collect();
    pts.sort_by(|a, b| {
        b.normalized_value
            .total_cmp(&a.normalized_value)
            .then(b.log_prior.total_cmp(&a.log_prior))
            .then_with(|| key_of(a).cmp(&key_of(b)))
    });
    // One sweep down the value ordering: within an equal-value group the
    // simplest points win, and only if they beat everything more valuable.
    let mut best_prior_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        while j < pts.len() && pts[j].normalized_value == pts[i].normalized_value {
            j += 1;
        }
        let group_max = pts[i].log_prior; // sorted descending within the group
        for p in &mut pts[i..j] {
            p.on_frontier = p.log_prior == group_max && group_max > best_prior_above;
        }
        best_prior_above = best_prior_above.max(group_max);
        i = j;
    }
    pts
}

fn key_of(p: &ParetoPoint) -> String {
    format!("{};{};{};{}", p.m1, p.q1, p.f, p.g)
}

/// True when two strategies induce identical choice behavior on every
/// reachable history of a binary-reward task over `horizon` trials:
/// matching action distributions (within `tol` in max norm) at the start
/// and after every realizable action/outcome sequence. Strategies that go
/// invalid are only equivalent to ones failing on the same histories.
pub fn behaviorally_equivalent(
    a: &Strategy,
    b: &Strategy,
    num_actions: usize,
    horizon: usize,
    tol: f64,
) -> bool {
    let (Ok((ma, da)), Ok((mb, db))) = (init_strategy(a, num_actions), init_strategy(b, num_actions))
    else {
        return init_strategy(a, num_actions).is_err() && init_strategy(b, num_actions).is_err();
    };
    if !close(&da, &db, tol) {
        return false;
    }
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut frontier: Vec<(Memory, Memory, usize, f64)> = Vec::new();
    let push = |frontier: &mut Vec<_>, seen: &mut HashSet<_>, ma: Memory, mb: Memory, dist: &ActionDistribution| {
        for action in 0..num_actions {
            if dist.prob(action) <= tol {
                continue;
            }
            for reward in [0.0f64, 1.0] {
                let mut key: Vec<u64> = Vec::with_capacity(2 * ma.len() + 2);
                key.extend(ma.iter().chain(mb.iter()).map(|v| v.to_bits()));
                key.push(action as u64);
                key.push(reward.to_bits());
                if seen.insert(key) {
                    frontier.push((ma, mb, action, reward));
                }
            }
        }
    };
    push(&mut frontier, &mut seen, ma, mb, &da);
    for _ in 1..horizon {
        let mut next = Vec::new();
        for (ma, mb, action, reward) in frontier {
            let ctx = |state| StepContext {
                state,
                prev_action: action,
                reward,
                prev_forced: false,
                num_actions,
            };
            match (step_strategy(a, &ctx(ma)), step_strategy(b, &ctx(mb))) {
                (Ok((ma, da)), Ok((mb, db))) => {
                    if !close(&da, &db, tol) {
                        return false;
                    }
                    push(&mut next, &mut seen, ma, mb, &da);
                }
                (Err(_), Err(_)) => {}
                _ => return false,
            }
        }
        frontier = next;
    }
    true
}

fn close(a: &ActionDistribution, b: &ActionDistribution, tol: f64) -> bool {
    a.len() == b.len() && a.max_distance(b) <= tol
}

/// True when a deterministic two-armed strategy repeats its choice after
/// every win and switches after every loss, on all histories reachable
/// within `horizon` trials. The first choice is unconstrained, so this
/// captures win-stay/lose-shift behavior regardless of starting arm.
pub fn follows_win_stay_lose_shift(s: &Strategy, horizon: usize) -> bool {
    if !s.is_deterministic() {
        return false;
    }
    let Ok((m, d)) = init_strategy(s, 2) else {
        return false;
    };
    let key = |m: Memory, a: usize| -> [u64; 5] {
        [m[0].to_bits(), m[1].to_bits(), m[2].to_bits(), m[3].to_bits(), a as u64]
    };
    let first = d.as_point_mass().expect("deterministic policies are point masses");
    let mut seen = HashSet::from([key(m, first)]);
    let mut frontier = vec![(m, first)];
    for _ in 1..horizon {
        let mut next = Vec::new();
        for (m, prev) in frontier {
            for reward in [0.0f64, 1.0] {
                let ctx = StepContext {
                    state: m,
                    prev_action: prev,
                    reward,
                    prev_forced: false,
                    num_actions: 2,
                };
                let Ok((m, d)) = step_strategy(s, &ctx) else {
                    return false;
                };
                let a = d.as_point_mass().expect("deterministic policies are point masses");
                if a != if reward == 1.0 { prev } else { 1 - prev } {
                    return false;
                }
                if seen.insert(key(m, a)) {
                    next.push((m, a));
                }
            }
        }
        frontier = next;
    }
    true
}

/// One cell of the accumulator sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Quantity added to the played arm's score each trial.
    pub target: String,
    /// Initial score for each arm.
    pub init_arm0: u8,
    pub init_arm1: u8,
    pub q1: String,
    pub g: String,
    pub deterministic: bool,
    pub raw_value: f64,
    pub normalized_value: f64,
    pub stderr: f64,
    pub method: ValueMethod,
    /// Highest raw value among rows sharing this row's target.
    pub best_for_target: bool,
}

impl SweepRow {
    pub fn strategy(&self) -> Strategy {
        assemble(
            &format!("vec_2({},{})", self.init_arm0, self.init_arm1),
            &self.q1,
            &format!("add_assign(state,prev_action,{})", self.target),
            &self.g,
        )
    }
}

/// The sweep as written out: the grid that generated it plus every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub task: String,
    pub rollouts: usize,
    /// Accumulation targets: the payout itself, and the payout's shortfall
    /// from one (so losses carry the signal).
    pub targets: Vec<String>,
    /// Values tried for each arm's initial score.
    pub init_values: Vec<u8>,
    /// Softmax sharpness values tried, alongside the argmax variants.
    pub temperatures: Vec<u8>,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_ROLLOUTS: usize = 10_000;

/// Evaluates every accumulator variant on the stationary two-armed task:
/// both accumulation targets, every pair of initial arm scores in
/// `{0,1,2}`, and both deterministic start arms under argmax plus ten
/// softmax sharpness levels behind an even coin flip. Deterministic cells
/// are valued exactly; stochastic cells share one set of common random
/// rollouts so their comparisons are paired.
pub fn accumulator_sweep(rollouts: usize, seeds_: &ValueSeeds) -> SweepTable {
    let spec = TaskSpec::bernoulli2();
    let mut bank = RolloutSet::new(&spec, rollouts, seeds_);
    let targets = ["reward".to_string(), "+(-(1),reward)".to_string()];
    let init_values: Vec<u8> = vec![0, 1, 2];
    let temperatures: Vec<u8> = (1..=10).collect();
    let mut rows = Vec::new();
    for target in &targets {
        let group_start = rows.len();
        for &i in &init_values {
            for &j in &init_values {
                let m1 = format!("vec_2({i},{j})");
                let f = format!("add_assign(state,prev_action,{target})");
                for q1 in ["action(0)", "action(1)"] {
                    let s = assemble(&m1, q1, &f, "argmax(state)");
                    let est = exact_value(&s, &spec).expect("sweep strategies are deterministic");
                    rows.push(SweepRow {
                        target: target.clone(),
                        init_arm0: i,
                        init_arm1: j,
                        q1: q1.to_string(),
                        g: "argmax(state)".to_string(),
                        deterministic: true,
                        raw_value: est.raw,
                        normalized_value: est.normalized,
                        stderr: est.stderr,
                        method: est.method,
                        best_for_target: false,
                    });
                }
                for &w in &temperatures {
                    let g = format!("softmax({w},state)");
                    let s = assemble(&m1, "logit(0)", &f, &g);
                    let est = bank.evaluate(&s);
                    rows.push(SweepRow {
                        target: target.clone(),
                        init_arm0: i,
                        init_arm1: j,
                        q1: "logit(0)".to_string(),
                        g,
                        deterministic: false,
                        raw_value: est.raw,
                        normalized_value: est.normalized,
                        stderr: est.stderr,
                        method: est.method,
                        best_for_target: false,
                    });
                }
            }
        }
        let best = rows[group_start..]
            .iter()
            .map(|r| r.raw_value)
            .fold(f64::NEG_INFINITY, f64::max);
        for r in &mut rows[group_start..] {
            r.best_for_target = r.raw_value == best;
        }
    }
    SweepTable {
        task: spec.name().to_string(),
        rollouts,
        targets: targets.to_vec(),
        init_values,
        temperatures,
        rows,
    }
}

fn assemble(m1: &str, q1: &str, f: &str, g: &str) -> Strategy {
    Strategy::new(
        parse_expr(m1).expect("sweep program parses"),
        parse_expr(q1).expect("sweep program parses"),
        parse_expr(f).expect("sweep program parses"),
        parse_expr(g).expect("sweep program parses"),
    )
    .expect("sweep program satisfies role constraints")
}

/// Settings for fitting the accumulator's softmax sharpness on the
/// forced-sampling task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonFitConfig {
    /// Value weight in the fitted score.
    pub beta: f64,
    /// Rollouts per grid point, shared within a condition.
    pub rollouts: usize,
    /// Episodes simulated for the choice diagnostics at the fitted value.
    pub diag_episodes: usize,
    pub seed: u64,
}

impl HorizonFitConfig {
    pub fn new(seed: u64) -> Self {
        HorizonFitConfig {
            beta: 300.0,
            rollouts: 10_000,
            diag_episodes: 50_000,
            seed,
        }
    }
}

/// One grid point of the sharpness fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScore {
    pub w: u8,
    pub raw_value: f64,
    pub normalized_value: f64,
    pub stderr: f64,
    pub log_prior: f64,
    pub score: f64,
}

/// Choice quality on one free trial: how often the fitted strategy picks
/// the arm with the higher true mean, overall and restricted to episodes
/// where both arms had been chosen equally often before the trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostic {
    /// 1-based trial index within the episode, matching episode traces.
    pub trial: usize,
    pub p_better: f64,
    pub episodes: usize,
    /// Absent on trials no episode reaches with balanced pull counts.
    pub p_better_equal_counts: Option<f64>,
    pub equal_count_episodes: usize,
}

/// Fit result for one horizon condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub condition: HorizonCondition,
    pub beta: f64,
    pub fitted_w: u8,
    pub grid: Vec<TemperatureScore>,
    pub by_trial: Vec<TrialDiagnostic>,
}

/// Fits the sharpness of the tempered accumulator separately to the short
/// and long horizon conditions by grid search over the literal range,
/// scoring each candidate by `beta * value + log prior` on a rollout bank
/// shared across the grid. Returns the short fit first.
pub fn fit_horizon_temperature(cfg: &HorizonFitConfig) -> Vec<TemperatureFit> {
    let grammar = Grammar::new(GrammarConfig {
        num_actions: 2,
        deterministic: false,
        prev_forced: true,
        max_literal: MAX_LITERAL,
    });
    [HorizonCondition::Short, HorizonCondition::Long]
        .into_iter()
        .enumerate()
        .map(|(idx, condition)| {
            let spec = TaskSpec::horizon(condition);
            // Conditions get disjoint streams; diagnostics draw fresh
            // episodes so they are not scored on the fitting bank.
            let fit_seeds = ValueSeeds::from_chain(seeds::derive(cfg.seed, 10 + idx as u64));
            let diag_seeds = ValueSeeds::from_chain(seeds::derive(cfg.seed, 20 + idx as u64));
            let mut bank = RolloutSet::new(&spec, cfg.rollouts, &fit_seeds);
            let mut grid = Vec::with_capacity(MAX_LITERAL as usize);
            for w in 1..=MAX_LITERAL {
                let s = reference::tempered_accumulator(w);
                let est = bank.evaluate(&s);
                let log_prior = grammar.log_prior(&s);
                grid.push(TemperatureScore {
                    w,
                    raw_value: est.raw,
                    normalized_value: est.normalized,
                    stderr: est.stderr,
                    log_prior,
                    score: posterior_score(cfg.beta, est.raw, log_prior),
                });
            }
            let fitted_w = grid
                .iter()
                .max_by(|a, b| a.score.total_cmp(&b.score))
                .expect("grid is nonempty")
                .w;
            let by_trial = choice_diagnostics(
                &reference::tempered_accumulator(fitted_w),
                &spec,
                cfg.diag_episodes,
                &diag_seeds,
            );
            TemperatureFit {
                condition,
                beta: cfg.beta,
                fitted_w,
                grid,
                by_trial,
            }
        })
        .collect()
}

/// Simulates fresh episodes and scores each free trial's choice against
/// the arm with the higher true mean, read off the forced trials.
fn choice_diagnostics(
    s: &Strategy,
    spec: &TaskSpec,
    episodes: usize,
    seeds_: &ValueSeeds,
) -> Vec<TrialDiagnostic> {
    let free = spec.trials() - 4;
    let mut hits = vec![0usize; free];
    let mut eq_hits = vec![0usize; free];
    let mut eq_total = vec![0usize; free];
    for i in 0..episodes {
        let trace = episode_trace(
            s,
            spec,
            seeds::derive(seeds_.env, i as u64),
            seeds::derive(seeds_.agent, i as u64),
        )
        .expect("the tempered accumulator never goes invalid");
        let mut arm_mean = [f64::NAN; 2];
        for rec in trace.iter().take(4) {
            arm_mean[rec.action] = rec.expected_reward;
        }
        let better = usize::from(arm_mean[1] > arm_mean[0]);
        let mut counts = [0usize; 2];
        for rec in &trace {
            if rec.forced {
                counts[rec.action] += 1;
                continue;
            }
            let k = rec.t - 5; // records are 1-based; free trials start at 5
            let hit = usize::from(rec.action == better);
            hits[k] += hit;
            if counts[0] == counts[1] {
                eq_hits[k] += hit;
                eq_total[k] += 1;
            }
            counts[rec.action] += 1;
        }
    }
    (0..free)
        .map(|k| TrialDiagnostic {
            trial: 5 + k,
            p_better: hits[k] as f64 / episodes as f64,
            episodes,
            p_better_equal_counts: (eq_total[k] > 0)
                .then(|| eq_hits[k] as f64 / eq_total[k] as f64),
            equal_count_episodes: eq_total[k],
        })
        .collect()
}
