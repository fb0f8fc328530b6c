//! The three bandit environments strategies are evaluated on.
//!
//! Each environment draws all of its randomness in a fixed, action
//! independent order (parameters at reset, then one reward variate per
//! trial, plus drift variates where applicable). Two strategies evaluated
//! from the same seed therefore face identical reward realizations, which
//! is what makes seed-matched value comparisons tight.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::seeds;

/// How many free-choice trials follow the four forced ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonCondition {
    Short,
    Long,
}

impl HorizonCondition {
    pub fn free_trials(&self) -> usize {
        match self {
            HorizonCondition::Short => 1,
            HorizonCondition::Long => 6,
        }
    }
}

/// Arm means in the forced-sampling task are drawn from N(50, 10) and
/// observations carry N(0, 8) noise; rewards are rescaled so they sit near
/// the unit range the other tasks use.
pub const HORIZON_MEAN: f64 = 50.0;
pub const HORIZON_MEAN_SD: f64 = 10.0;
pub const HORIZON_NOISE_SD: f64 = 8.0;
pub const HORIZON_REWARD_SCALE: f64 = 0.01;

const RESTLESS_LEVELS: u8 = 9;
const RESTLESS_DRIFT_PROB: f64 = 0.10;

/// A task instance: the environment family plus its fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Two arms, each paying 1 with a probability drawn uniformly on [0, 1]
    /// and fixed for the episode.
    Bernoulli2 { horizon: usize },
    /// Two Gaussian arms, four forced trials (each arm twice, shuffled),
    /// then one or six free choices. Rewards are scaled by `reward_scale`.
    Horizon {
        condition: HorizonCondition,
        reward_scale: f64,
    },
    /// Three Bernoulli arms whose success probabilities random-walk on
    /// {0.1, ..., 0.9}, drifting by 0.1 with 10% chance per arm per trial.
    Restless3 { horizon: usize },
}

impl TaskSpec {
    pub fn bernoulli2() -> Self {
        TaskSpec::Bernoulli2 { horizon: 20 }
    }

    pub fn horizon(condition: HorizonCondition) -> Self {
        TaskSpec::Horizon {
            condition,
            reward_scale: HORIZON_REWARD_SCALE,
        }
    }

    pub fn restless3() -> Self {
        TaskSpec::Restless3 { horizon: 500 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Bernoulli2 { .. } => "bernoulli2",
            TaskSpec::Horizon { .. } => "horizon",
            TaskSpec::Restless3 { .. } => "restless3",
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            TaskSpec::Bernoulli2 { .. } | TaskSpec::Horizon { .. } => 2,
            TaskSpec::Restless3 { .. } => 3,
        }
    }

    /// Total trials in an episode, forced ones included.
    pub fn trials(&self) -> usize {
        match self {
            TaskSpec::Bernoulli2 { horizon } => *horizon,
            TaskSpec::Horizon { condition, .. } => 4 + condition.free_trials(),
            TaskSpec::Restless3 { horizon } => *horizon,
        }
    }

    pub fn has_forced_trials(&self) -> bool {
        matches!(self, TaskSpec::Horizon { .. })
    }

    /// Expected episode value of uniformly random play.
    pub fn chance_value(&self) -> f64 {
        match self {
            TaskSpec::Bernoulli2 { horizon } => *horizon as f64 * 0.5,
            TaskSpec::Horizon { reward_scale, .. } => HORIZON_MEAN * reward_scale,
            TaskSpec::Restless3 { horizon } => *horizon as f64 * 0.5,
        }
    }

    /// Expected episode value with the arm parameters revealed: always play
    /// the momentarily best arm.
    pub fn oracle_value(&self) -> f64 {
        match self {
            // E[max(p0, p1)] for independent uniforms is 2/3.
            TaskSpec::Bernoulli2 { horizon } => *horizon as f64 * 2.0 / 3.0,
            // E[max of two iid normals] = mean + sd / sqrt(pi).
            TaskSpec::Horizon { reward_scale, .. } => {
                (HORIZON_MEAN + HORIZON_MEAN_SD / std::f64::consts::PI.sqrt()) * reward_scale
            }
            // Each arm's level is uniform on the 9-point grid at every
            // trial, so E[max of 3] = 13/18 per trial.
            TaskSpec::Restless3 { horizon } => *horizon as f64 * 13.0 / 18.0,
        }
    }

    /// Rollout counts used when none is given: the long-horizon restless
    /// task gets fewer.
    pub fn default_rollouts(&self) -> usize {
        match self {
            TaskSpec::Restless3 { .. } => 2_000,
            _ => 10_000,
        }
    }

    /// Default inverse-temperature ladder for discovery runs.
    pub fn default_betas(&self) -> Vec<f64> {
        match self {
            TaskSpec::Horizon { .. } => vec![100.0, 300.0, 1000.0, 3000.0, 10000.0, 30000.0],
            _ => vec![10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0],
        }
    }
}

/// What one trial produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    /// 1-based trial number.
    pub t: usize,
    /// Action actually taken (the schedule's, on forced trials).
    pub action: usize,
    /// Reward the agent observes.
    pub reward: f64,
    /// Mean reward of the taken action, used for value accounting.
    pub expected_reward: f64,
    pub forced: bool,
}

enum EnvKind {
    Bernoulli2 {
        probs: [f64; 2],
        reward_u: Vec<f64>,
    },
    Horizon {
        means: [f64; 2],
        schedule: [usize; 4],
        noise: Vec<f64>,
        scale: f64,
    },
    Restless3 {
        /// Level path: `levels[t]` holds each arm's level going into trial t.
        levels: Vec<[u8; 3]>,
        reward_u: Vec<f64>,
    },
}

/// A running episode. Every draw happens at reset, in a fixed order that
/// never depends on the agent's behavior; stepping just reads the tape.
/// Episodes are therefore replayable: [`restart`](Self::restart) rewinds to
/// trial one with identical draws, which valuation reuses heavily.
pub struct EnvState {
    kind: EnvKind,
    trials: usize,
    t: usize,
}

impl EnvState {
    pub fn reset(spec: &TaskSpec, seed: u64) -> Self {
        let mut rng = seeds::rng(seed);
        let trials = spec.trials();
        let kind = match spec {
            TaskSpec::Bernoulli2 { .. } => {
                let probs = [rng.gen::<f64>(), rng.gen::<f64>()];
                let reward_u = (0..trials).map(|_| rng.gen::<f64>()).collect();
                EnvKind::Bernoulli2 { probs, reward_u }
            }
            TaskSpec::Horizon { reward_scale, .. } => {
                let normal = Normal::new(HORIZON_MEAN, HORIZON_MEAN_SD).unwrap();
                let means = [normal.sample(&mut rng), normal.sample(&mut rng)];
                let mut schedule = [0usize, 1, 0, 1];
                schedule.shuffle(&mut rng);
                let noise_dist = Normal::new(0.0, HORIZON_NOISE_SD).unwrap();
                let noise = (0..trials).map(|_| noise_dist.sample(&mut rng)).collect();
                EnvKind::Horizon {
                    means,
                    schedule,
                    noise,
                    scale: *reward_scale,
                }
            }
            TaskSpec::Restless3 { .. } => {
                let mut current = [0u8; 3];
                for l in &mut current {
                    *l = rng.gen_range(1..=RESTLESS_LEVELS);
                }
                let mut levels = Vec::with_capacity(trials);
                let mut reward_u = Vec::with_capacity(trials);
                for _ in 0..trials {
                    levels.push(current);
                    reward_u.push(rng.gen::<f64>());
                    for l in current.iter_mut() {
                        let d: f64 = rng.gen();
                        // Half the drift mass moves up, half down; steps off
                        // the grid are cancelled.
                        if d < RESTLESS_DRIFT_PROB / 2.0 {
                            if *l < RESTLESS_LEVELS {
                                *l += 1;
                            }
                        } else if d < RESTLESS_DRIFT_PROB && *l > 1 {
                            *l -= 1;
                        }
                    }
                }
                EnvKind::Restless3 { levels, reward_u }
            }
        };
        EnvState { kind, trials, t: 0 }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.trials
    }

    /// Rewinds to the first trial. The episode replays identically.
    pub fn restart(&mut self) {
        self.t = 0;
    }

    /// Runs one trial. `chosen` is the agent's sampled action; on a forced
    /// trial the schedule overrides it and the record says so.
    pub fn step(&mut self, chosen: usize) -> TrialRecord {
        debug_assert!(!self.is_done(), "episode is over");
        let t = self.t;
        self.t += 1;
        match &self.kind {
            EnvKind::Bernoulli2 { probs, reward_u } => {
                let p = probs[chosen];
                TrialRecord {
                    t: t + 1,
                    action: chosen,
                    reward: (reward_u[t] < p) as u8 as f64,
                    expected_reward: p,
                    forced: false,
                }
            }
            EnvKind::Horizon {
                means,
                schedule,
                noise,
                scale,
            } => {
                let forced = t < schedule.len();
                let action = if forced { schedule[t] } else { chosen };
                TrialRecord {
                    t: t + 1,
                    action,
                    reward: (means[action] + noise[t]) * scale,
                    expected_reward: means[action] * scale,
                    forced,
                }
            }
            EnvKind::Restless3 { levels, reward_u } => {
                let p = levels[t][chosen] as f64 / 10.0;
                TrialRecord {
                    t: t + 1,
                    action: chosen,
                    reward: (reward_u[t] < p) as u8 as f64,
                    expected_reward: p,
                    forced: false,
                }
            }
        }
    }
}
