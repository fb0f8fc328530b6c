//! Hand-written strategies used as baselines, sweep anchors, and state
//! machine fixtures.

use crate::dsl::{parse_expr, Strategy};

fn build(m1: &str, q1: &str, f: &str, g: &str) -> Strategy {
    Strategy::new(
        parse_expr(m1).expect("reference program parses"),
        parse_expr(q1).expect("reference program parses"),
        parse_expr(f).expect("reference program parses"),
        parse_expr(g).expect("reference program parses"),
    )
    .expect("reference program satisfies role constraints")
}

/// Win-stay/lose-shift: remember one score per arm, overwrite the played
/// arm's score with its payout, take the best. Starts on arm 0.
pub fn wsls() -> Strategy {
    build(
        "vec_2(0,1)",
        "action(0)",
        "state",
        "argmax(assign(state,prev_action,reward))",
    )
}

/// Full evidence accumulator: every trial bumps the arm the outcome speaks
/// for, wins favoring the played arm and losses the other one.
pub fn accumulator() -> Strategy {
    build(
        "vec_full(0)",
        "action(1)",
        "add_assign(state,if(==(reward,prev_action),1,0),1)",
        "argmax(state)",
    )
}

/// Accumulates only payouts on the played arm and picks the running best;
/// losses teach it nothing.
pub fn deterministic_partial_accumulator() -> Strategy {
    build(
        "vec_full(0)",
        "action(1)",
        "add_assign(state,prev_action,reward)",
        "argmax(state)",
    )
}

/// The same partial accumulator read through a unit-temperature softmax.
pub fn stochastic_partial_accumulator() -> Strategy {
    build(
        "vec_1(0)",
        "logit(0)",
        "add_assign(state,prev_action,reward)",
        "softmax(1,state)",
    )
}

/// Partial accumulator with a free inverse temperature, the template the
/// forced-sampling fit searches over.
pub fn tempered_accumulator(w: u8) -> Strategy {
    build(
        "vec_1(0)",
        "logit(0)",
        "add_assign(state,prev_action,reward)",
        &format!("softmax({w},state)"),
    )
}

/// Win-stay with uniform resampling on a loss: a win pins the next choice
/// to the same arm, a loss zeroes the temperature and choice goes uniform.
pub fn wsls_uniform_loss() -> Strategy {
    build(
        "vec_full(0)",
        "softmax(0,vec_full(0))",
        "state",
        "softmax(reward,assign(state,prev_action,7))",
    )
}

/// Counts consecutive losses in memory slot zero (a win resets the count to
/// one) and needs several losses before it stops favoring the current arm;
/// once exploring, it avoids the arm it just left.
pub fn loss_counting_explorer() -> Strategy {
    build(
        "vec_1(4)",
        "softmax(0,vec_1(0))",
        "vec_1(+(1,state[reward]))",
        "softmax(6,assign(vec_full(state[reward]),prev_action,4))",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{init_strategy, step_strategy, StepContext};

    #[test]
    fn references_are_valid_and_typed() {
        for s in [
            wsls(),
            accumulator(),
            deterministic_partial_accumulator(),
            stochastic_partial_accumulator(),
            tempered_accumulator(7),
            wsls_uniform_loss(),
            loss_counting_explorer(),
        ] {
            let n = 3;
            assert!(init_strategy(&s, n).is_ok(), "{}", s.to_text());
        }
        assert!(wsls().is_deterministic());
        assert!(accumulator().is_deterministic());
        assert!(!stochastic_partial_accumulator().is_deterministic());
    }

    #[test]
    fn accumulator_credits_the_arm_the_outcome_favors() {
        // From memory [2,1,0,0], a win on arm 1 bumps arm 1; the running
        // best is then a tie broken toward arm 0.
        let s = accumulator();
        let ctx = StepContext {
            state: [2.0, 1.0, 0.0, 0.0],
            prev_action: 1,
            reward: 1.0,
            prev_forced: false,
            num_actions: 2,
        };
        let (m, d) = step_strategy(&s, &ctx).unwrap();
        assert_eq!(m, [2.0, 2.0, 0.0, 0.0]);
        assert_eq!(d.as_point_mass(), Some(0));
        // A loss on arm 1 credits arm 0 instead.
        let ctx = StepContext {
            reward: 0.0,
            ..ctx
        };
        let (m, d) = step_strategy(&s, &ctx).unwrap();
        assert_eq!(m, [3.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.as_point_mass(), Some(0));
    }

    #[test]
    fn uniform_loss_wsls_explores_after_losses_and_exploits_wins() {
        let s = wsls_uniform_loss();
        let n = 3;
        let (m, first) = init_strategy(&s, n).unwrap();
        for a in 0..n {
            assert!((first.prob(a) - 1.0 / 3.0).abs() < 1e-12);
        }
        let win = StepContext {
            state: m,
            prev_action: 1,
            reward: 1.0,
            prev_forced: false,
            num_actions: n,
        };
        let (_, d) = step_strategy(&s, &win).unwrap();
        assert!(d.prob(1) > 0.99, "win should pin the same arm");
        let loss = StepContext {
            reward: 0.0,
            ..win
        };
        let (_, d) = step_strategy(&s, &loss).unwrap();
        for a in 0..n {
            assert!((d.prob(a) - 1.0 / 3.0).abs() < 1e-12, "loss should go uniform");
        }
    }

    #[test]
    fn loss_counter_needs_consecutive_losses_to_leave_its_arm() {
        let s = loss_counting_explorer();
        let n = 3;
        let mut state = [1.0, 0.0, 0.0, 0.0]; // just won on arm 2
        let mut loss_streak = Vec::new();
        for _ in 0..5 {
            let ctx = StepContext {
                state,
                prev_action: 2,
                reward: 0.0,
                prev_forced: false,
                num_actions: n,
            };
            let (m, d) = step_strategy(&s, &ctx).unwrap();
            state = m;
            loss_streak.push(d.prob(2));
        }
        // Stays for the first couple of losses, goes uniform, then avoids.
        assert!(loss_streak[0] > 0.99, "first loss keeps exploiting");
        assert!(loss_streak[1] > 0.99, "second loss keeps exploiting");
        assert!((loss_streak[2] - 1.0 / 3.0).abs() < 1e-9, "third loss goes uniform");
        assert!(loss_streak[3] < 0.01, "fourth loss avoids the arm");
        // A win anywhere resets the streak and pins that arm.
        let ctx = StepContext {
            state,
            prev_action: 0,
            reward: 1.0,
            prev_forced: false,
            num_actions: n,
        };
        let (m, d) = step_strategy(&s, &ctx).unwrap();
        assert_eq!(m[0], 1.0);
        assert!(d.prob(0) > 0.99);
    }
}
