//! Expression evaluation and the per-trial strategy semantics.
//!
//! All numbers are doubles. Actions and vector indices must be integral to
//! within [`INTEGRAL_TOL`] and in range, division by zero is an error, and
//! every failure short-circuits evaluation eagerly (including through `if`,
//! whose branches are both evaluated). Strategies that fail in any reachable
//! spot are worthless to the search, so there is no recovery path.

use crate::dsl::{Expr, Prim, Strategy, MEMORY_LEN};

/// How far from an integer an action or index may sit.
pub const INTEGRAL_TOL: f64 = 1e-9;

/// The agent's memory between trials.
pub type Memory = [f64; MEMORY_LEN];

/// Inputs visible to the update and policy programs on one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub state: Memory,
    pub prev_action: usize,
    pub reward: f64,
    pub prev_forced: bool,
    pub num_actions: usize,
}

impl StepContext {
    /// Context for initialization programs, which reference no inputs.
    pub fn initial(num_actions: usize) -> Self {
        StepContext {
            state: [0.0; MEMORY_LEN],
            prev_action: 0,
            reward: 0.0,
            prev_forced: false,
            num_actions,
        }
    }
}

/// Why evaluation rejected a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Invalid {
    #[error("non-integral action or index")]
    NonIntegral,
    #[error("action or index out of bounds")]
    OutOfBounds,
    #[error("division by zero")]
    DivisionByZero,
}

/// A distribution over the task's actions. Stored inline; at most four
/// actions exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    probs: [f64; MEMORY_LEN],
    len: usize,
}

impl ActionDistribution {
    pub fn point_mass(action: usize, num_actions: usize) -> Self {
        debug_assert!(action < num_actions && num_actions <= MEMORY_LEN);
        let mut probs = [0.0; MEMORY_LEN];
        probs[action] = 1.0;
        ActionDistribution {
            probs,
            len: num_actions,
        }
    }

    pub fn uniform(num_actions: usize) -> Self {
        let mut probs = [0.0; MEMORY_LEN];
        for p in probs.iter_mut().take(num_actions) {
            *p = 1.0 / num_actions as f64;
        }
        ActionDistribution {
            probs,
            len: num_actions,
        }
    }

    pub fn from_probs(probs: &[f64]) -> Self {
        debug_assert!(probs.len() <= MEMORY_LEN);
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut inline = [0.0; MEMORY_LEN];
        inline[..probs.len()].copy_from_slice(probs);
        ActionDistribution {
            probs: inline,
            len: probs.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs[..self.len]
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    /// Inverse-CDF draw from a uniform variate, so coupled runs that share
    /// the variate pick comparable actions.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut cum = 0.0;
        for (a, p) in self.probs().iter().enumerate() {
            cum += p;
            if u < cum {
                return a;
            }
        }
        self.len - 1
    }

    /// Largest absolute probability difference.
    pub fn max_distance(&self, other: &ActionDistribution) -> f64 {
        debug_assert_eq!(self.len, other.len);
        self.probs()
            .iter()
            .zip(other.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// The action holding all the mass, if any does.
    pub fn as_point_mass(&self) -> Option<usize> {
        self.probs().iter().position(|&p| p == 1.0)
    }
}

/// Result of evaluating one expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Scalar(f64),
    Bool(bool),
    Vector(Memory),
    Dist(ActionDistribution),
}

impl Value {
    fn scalar(self) -> f64 {
        match self {
            Value::Scalar(x) => x,
            _ => unreachable!("type checker admits only scalars here"),
        }
    }

    fn boolean(self) -> bool {
        match self {
            Value::Bool(b) => b,
            _ => unreachable!("type checker admits only booleans here"),
        }
    }

    fn vector(self) -> Memory {
        match self {
            Value::Vector(v) => v,
            _ => unreachable!("type checker admits only vectors here"),
        }
    }

    fn dist(self) -> ActionDistribution {
        match self {
            Value::Dist(d) => d,
            _ => unreachable!("type checker admits only distributions here"),
        }
    }
}

/// Arithmetic that leaves the representable range counts as a numeric
/// failure, same as dividing by zero.
fn finite(x: f64) -> Result<f64, Invalid> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Invalid::DivisionByZero)
    }
}

/// Rounds to a nearby integer in [0, bound), or rejects.
fn checked_index(x: f64, bound: usize) -> Result<usize, Invalid> {
    let rounded = x.round();
    if (x - rounded).abs() > INTEGRAL_TOL {
        return Err(Invalid::NonIntegral);
    }
    if rounded < 0.0 || rounded >= bound as f64 {
        return Err(Invalid::OutOfBounds);
    }
    Ok(rounded as usize)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluates `e` in `ctx`. The tree's types are trusted; only runtime
/// failures (integrality, bounds, numeric range) are checked.
pub fn eval_expr(e: &Expr, ctx: &StepContext) -> Result<Value, Invalid> {
    let args = e.args();
    let v = match e.head() {
        Prim::Lit(k) => Value::Scalar(k as f64),
        Prim::Add => {
            let a = eval_expr(&args[0], ctx)?.scalar();
            let b = eval_expr(&args[1], ctx)?.scalar();
            Value::Scalar(finite(a + b)?)
        }
        Prim::Mul => {
            let a = eval_expr(&args[0], ctx)?.scalar();
            let b = eval_expr(&args[1], ctx)?.scalar();
            Value::Scalar(finite(a * b)?)
        }
        Prim::Neg => Value::Scalar(-eval_expr(&args[0], ctx)?.scalar()),
        Prim::Inv => {
            let x = eval_expr(&args[0], ctx)?.scalar();
            if x == 0.0 {
                return Err(Invalid::DivisionByZero);
            }
            Value::Scalar(finite(1.0 / x)?)
        }
        Prim::Lt => {
            let a = eval_expr(&args[0], ctx)?.scalar();
            let b = eval_expr(&args[1], ctx)?.scalar();
            Value::Bool(a < b)
        }
        Prim::Eq => {
            let a = eval_expr(&args[0], ctx)?.scalar();
            let b = eval_expr(&args[1], ctx)?.scalar();
            Value::Bool(a == b)
        }
        Prim::And => {
            let a = eval_expr(&args[0], ctx)?.boolean();
            let b = eval_expr(&args[1], ctx)?.boolean();
            Value::Bool(a && b)
        }
        Prim::Or => {
            let a = eval_expr(&args[0], ctx)?.boolean();
            let b = eval_expr(&args[1], ctx)?.boolean();
            Value::Bool(a || b)
        }
        Prim::Not => Value::Bool(!eval_expr(&args[0], ctx)?.boolean()),
        Prim::If => {
            let c = eval_expr(&args[0], ctx)?.boolean();
            let t = eval_expr(&args[1], ctx)?;
            let f = eval_expr(&args[2], ctx)?;
            if c {
                t
            } else {
                f
            }
        }
        Prim::VecFull => {
            let x = eval_expr(&args[0], ctx)?.scalar();
            Value::Vector([x; MEMORY_LEN])
        }
        Prim::Vec1 | Prim::Vec2 | Prim::Vec3 | Prim::Vec4 => {
            let mut v = [0.0; MEMORY_LEN];
            for (slot, arg) in v.iter_mut().zip(args) {
                *slot = eval_expr(arg, ctx)?.scalar();
            }
            Value::Vector(v)
        }
        Prim::Idx => {
            let v = eval_expr(&args[0], ctx)?.vector();
            let i = checked_index(eval_expr(&args[1], ctx)?.scalar(), MEMORY_LEN)?;
            Value::Scalar(v[i])
        }
        Prim::Assign => {
            let mut v = eval_expr(&args[0], ctx)?.vector();
            let i = checked_index(eval_expr(&args[1], ctx)?.scalar(), MEMORY_LEN)?;
            let x = eval_expr(&args[2], ctx)?.scalar();
            v[i] = x;
            Value::Vector(v)
        }
        Prim::AddAssign => {
            let mut v = eval_expr(&args[0], ctx)?.vector();
            let i = checked_index(eval_expr(&args[1], ctx)?.scalar(), MEMORY_LEN)?;
            let x = eval_expr(&args[2], ctx)?.scalar();
            v[i] = finite(v[i] + x)?;
            Value::Vector(v)
        }
        Prim::PrevAction => Value::Scalar(ctx.prev_action as f64),
        Prim::Reward => Value::Scalar(ctx.reward),
        Prim::State => Value::Vector(ctx.state),
        Prim::PrevForced => Value::Bool(ctx.prev_forced),
        Prim::Logit => {
            // The argument is the log-odds of action 0 over action 1.
            let x = eval_expr(&args[0], ctx)?.scalar();
            let p0 = stable_sigmoid(x);
            let mut probs = [0.0; MEMORY_LEN];
            probs[0] = p0;
            probs[1] = 1.0 - p0;
            Value::Dist(ActionDistribution {
                probs,
                len: ctx.num_actions,
            })
        }
        Prim::Softmax => {
            let w = eval_expr(&args[0], ctx)?.scalar();
            let v = eval_expr(&args[1], ctx)?.vector();
            let n = ctx.num_actions;
            let mut scores = [0.0; MEMORY_LEN];
            for i in 0..n {
                scores[i] = finite(w * v[i])?;
            }
            let max = scores[..n].iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
            let mut probs = [0.0; MEMORY_LEN];
            let mut sum = 0.0;
            for i in 0..n {
                probs[i] = (scores[i] - max).exp();
                sum += probs[i];
            }
            for p in probs.iter_mut().take(n) {
                *p /= sum;
            }
            Value::Dist(ActionDistribution { probs, len: n })
        }
        Prim::Action => {
            let a = checked_index(eval_expr(&args[0], ctx)?.scalar(), ctx.num_actions)?;
            Value::Dist(ActionDistribution::point_mass(a, ctx.num_actions))
        }
        Prim::Argmax => {
            let v = eval_expr(&args[0], ctx)?.vector();
            let mut best = 0;
            for i in 1..ctx.num_actions {
                if v[i] > v[best] {
                    best = i;
                }
            }
            Value::Dist(ActionDistribution::point_mass(best, ctx.num_actions))
        }
    };
    Ok(v)
}

/// Runs the two initialization programs: the memory before the first trial
/// and the distribution the first action is drawn from.
pub fn init_strategy(
    s: &Strategy,
    num_actions: usize,
) -> Result<(Memory, ActionDistribution), Invalid> {
    let ctx = StepContext::initial(num_actions);
    let m = eval_expr(&s.m1, &ctx)?.vector();
    let q = eval_expr(&s.q1, &ctx)?.dist();
    Ok((m, q))
}

/// Runs one trial's update and policy: the new memory from `f`, then the
/// next action distribution from `g` seen with that new memory in place.
pub fn step_strategy(
    s: &Strategy,
    ctx: &StepContext,
) -> Result<(Memory, ActionDistribution), Invalid> {
    let m = eval_expr(&s.f, ctx)?.vector();
    let g_ctx = StepContext { state: m, ..*ctx };
    let d = eval_expr(&s.g, &g_ctx)?.dist();
    Ok((m, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_expr;

    fn ctx2() -> StepContext {
        StepContext::initial(2)
    }

    fn eval(src: &str, ctx: &StepContext) -> Result<Value, Invalid> {
        eval_expr(&parse_expr(src).unwrap(), ctx)
    }

    fn scalar(src: &str, ctx: &StepContext) -> f64 {
        match eval(src, ctx).unwrap() {
            Value::Scalar(x) => x,
            v => panic!("{src} gave {v:?}"),
        }
    }

    fn dist(src: &str, ctx: &StepContext) -> ActionDistribution {
        match eval(src, ctx).unwrap() {
            Value::Dist(d) => d,
            v => panic!("{src} gave {v:?}"),
        }
    }

    fn wsls() -> Strategy {
        Strategy::new(
            parse_expr("vec_2(0,1)").unwrap(),
            parse_expr("action(0)").unwrap(),
            parse_expr("state").unwrap(),
            parse_expr("argmax(assign(state,prev_action,reward))").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn win_stay_lose_shift_walkthrough() {
        let s = wsls();
        let (m1, q1) = init_strategy(&s, 2).unwrap();
        assert_eq!(m1, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(q1.as_point_mass(), Some(0));

        // Memory never moves; the policy overwrites the previous action's
        // slot with its reward and takes the argmax.
        for (prev_action, reward, expect) in [
            (0usize, 1.0, 0usize), // win on 0: [1,1] -> stay (ties break low)
            (0, 0.0, 1),           // loss on 0: [0,1] -> shift
            (1, 1.0, 1),           // win on 1: [0,1] -> stay
            (1, 0.0, 0),           // loss on 1: [0,0] -> shift
        ] {
            let ctx = StepContext {
                state: m1,
                prev_action,
                reward,
                prev_forced: false,
                num_actions: 2,
            };
            let (m, d) = step_strategy(&s, &ctx).unwrap();
            assert_eq!(m, m1, "update is the identity");
            assert_eq!(
                d.as_point_mass(),
                Some(expect),
                "prev {prev_action}, reward {reward}"
            );
        }
    }

    #[test]
    fn arithmetic_and_vector_primitives() {
        let c = ctx2();
        assert_eq!(scalar("+(2,3)", &c), 5.0);
        assert_eq!(scalar("*(4,5)", &c), 20.0);
        assert_eq!(scalar("-(7)", &c), -7.0);
        assert_eq!(scalar("1/(4)", &c), 0.25);
        assert_eq!(scalar("+(-(1),3)", &c), 2.0);

        assert_eq!(eval("vec_full(3)", &c).unwrap(), Value::Vector([3.0; 4]));
        assert_eq!(
            eval("vec_2(5,6)", &c).unwrap(),
            Value::Vector([5.0, 6.0, 0.0, 0.0])
        );
        assert_eq!(
            eval("vec_4(1,2,3,4)", &c).unwrap(),
            Value::Vector([1.0, 2.0, 3.0, 4.0])
        );
        assert_eq!(scalar("vec_3(9,8,7)[2]", &c), 7.0);
        assert_eq!(
            eval("assign(vec_full(1),2,9)", &c).unwrap(),
            Value::Vector([1.0, 1.0, 9.0, 1.0])
        );
        assert_eq!(
            eval("add_assign(vec_full(1),0,41)", &c).unwrap(),
            Value::Vector([42.0, 1.0, 1.0, 1.0])
        );
    }

    #[test]
    fn booleans_and_conditionals() {
        let c = ctx2();
        assert_eq!(eval("<(1,2)", &c).unwrap(), Value::Bool(true));
        assert_eq!(eval("==(3,3)", &c).unwrap(), Value::Bool(true));
        assert_eq!(eval("&&(<(1,2),<(2,1))", &c).unwrap(), Value::Bool(false));
        assert_eq!(eval("||(<(1,2),<(2,1))", &c).unwrap(), Value::Bool(true));
        assert_eq!(eval("!(<(1,2))", &c).unwrap(), Value::Bool(false));
        assert_eq!(scalar("if(<(1,2),10,20)", &c), 10.0);
        assert_eq!(scalar("if(<(2,1),10,20)", &c), 20.0);
    }

    #[test]
    fn inputs_come_from_the_context() {
        let ctx = StepContext {
            state: [3.0, 1.0, 4.0, 1.0],
            prev_action: 2,
            reward: 0.5,
            prev_forced: true,
            num_actions: 3,
        };
        assert_eq!(scalar("prev_action", &ctx), 2.0);
        assert_eq!(scalar("reward", &ctx), 0.5);
        assert_eq!(eval("state", &ctx).unwrap(), Value::Vector(ctx.state));
        assert_eq!(eval("prev_forced", &ctx).unwrap(), Value::Bool(true));
        assert_eq!(scalar("state[prev_action]", &ctx), 4.0);
    }

    #[test]
    fn invalid_reasons_are_precise() {
        let c = ctx2();
        assert_eq!(eval("1/(0)", &c).unwrap_err(), Invalid::DivisionByZero);
        assert_eq!(eval("1/(+(1,-(1)))", &c).unwrap_err(), Invalid::DivisionByZero);
        assert_eq!(eval("action(1/(2))", &c).unwrap_err(), Invalid::NonIntegral);
        assert_eq!(eval("action(2)", &c).unwrap_err(), Invalid::OutOfBounds);
        assert_eq!(eval("action(-(1))", &c).unwrap_err(), Invalid::OutOfBounds);
        assert_eq!(eval("state[1/(3)]", &c).unwrap_err(), Invalid::NonIntegral);
        assert_eq!(eval("state[4]", &c).unwrap_err(), Invalid::OutOfBounds);
        assert_eq!(eval("assign(state,7,0)", &c).unwrap_err(), Invalid::OutOfBounds);
    }

    #[test]
    fn integral_tolerance_is_tight_but_forgiving() {
        let c = ctx2();
        // 3 * (1/3) lands one ulp under 1 and still counts as action 1.
        let d = dist("action(*(3,1/(3)))", &c);
        assert_eq!(d.as_point_mass(), Some(1));
        // A quarter off an integer does not.
        assert_eq!(eval("action(+(1,1/(4)))", &c).unwrap_err(), Invalid::NonIntegral);
    }

    #[test]
    fn conditionals_evaluate_eagerly() {
        let c = ctx2();
        assert_eq!(
            eval("if(<(1,2),5,1/(0))", &c).unwrap_err(),
            Invalid::DivisionByZero
        );
        assert_eq!(
            eval("if(<(2,1),1/(0),5)", &c).unwrap_err(),
            Invalid::DivisionByZero
        );
    }

    #[test]
    fn overflow_counts_as_numeric_failure() {
        let c = ctx2();
        // Repeated squaring pushes 49 past the largest double.
        let mut src = String::from("49");
        for _ in 0..8 {
            src = format!("*({src},{src})");
        }
        assert_eq!(eval(&src, &c).unwrap_err(), Invalid::DivisionByZero);
    }

    #[test]
    fn point_mass_policies() {
        let c = ctx2();
        assert_eq!(dist("action(0)", &c).probs(), &[1.0, 0.0]);
        assert_eq!(dist("action(1)", &c).probs(), &[0.0, 1.0]);
        assert_eq!(dist("argmax(vec_2(3,5))", &c).as_point_mass(), Some(1));
        // Ties break toward the earliest index.
        assert_eq!(dist("argmax(vec_full(2))", &c).as_point_mass(), Some(0));
        let c3 = StepContext::initial(3);
        assert_eq!(dist("argmax(vec_3(1,5,5))", &c3).as_point_mass(), Some(1));
        // Entries beyond the action count are ignored.
        assert_eq!(dist("argmax(vec_4(0,1,0,9))", &c3).as_point_mass(), Some(1));
    }

    #[test]
    fn logit_is_the_two_action_sigmoid() {
        let c = ctx2();
        let d = dist("logit(0)", &c);
        assert_eq!(d.probs(), &[0.5, 0.5]);
        // The argument is log(p0/p1), so positive values favor action 0.
        let d = dist("logit(2)", &c);
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((d.prob(0) - p0).abs() < 1e-15);
        assert!((d.prob(1) - (1.0 - p0)).abs() < 1e-15);
        let d = dist("logit(-(40))", &c);
        assert!(d.prob(0) < 1e-15);
    }

    #[test]
    fn softmax_normalizes_over_the_action_count() {
        let c3 = StepContext::initial(3);
        let d = dist("softmax(1,vec_3(0,0,7))", &c3);
        let e7 = 7.0f64.exp();
        assert!((d.prob(2) - e7 / (e7 + 2.0)).abs() < 1e-12);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.len(), 3);

        // The fourth entry exists but gets no mass on a three-action task.
        let d = dist("softmax(1,vec_4(0,0,0,49))", &c3);
        assert!((d.prob(0) - 1.0 / 3.0).abs() < 1e-12);

        let uniform = dist("softmax(0,vec_3(1,30,2))", &c3);
        for p in uniform.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_exactly_shift_invariant_on_integer_scores() {
        let c = ctx2();
        let a = dist("softmax(3,vec_2(5,9))", &c);
        let b = dist("softmax(3,vec_2(6,10))", &c);
        assert_eq!(a.probs(), b.probs());
        let a = dist("softmax(2,vec_2(0,40))", &c);
        let b = dist("softmax(2,vec_2(7,47))", &c);
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn softmax_with_extreme_weights_stays_normalized() {
        let c = ctx2();
        let d = dist("softmax(49,vec_2(0,49))", &c);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.prob(1) > 0.999999);
        let d = dist("softmax(-(49),vec_2(0,49))", &c);
        assert!(d.prob(0) > 0.999999);
    }

    #[test]
    fn vectors_copy_rather_than_alias() {
        let ctx = StepContext {
            state: [1.0, 2.0, 3.0, 4.0],
            ..ctx2()
        };
        assert_eq!(
            eval("add_assign(assign(state,0,5),0,1)", &ctx).unwrap(),
            Value::Vector([6.0, 2.0, 3.0, 4.0])
        );
        // The context's state is untouched by nested writes.
        assert_eq!(eval("state", &ctx).unwrap(), Value::Vector(ctx.state));
    }

    #[test]
    fn sampling_uses_the_inverse_cdf() {
        let d = ActionDistribution::from_probs(&[0.25, 0.5, 0.25]);
        assert_eq!(d.sample_with(0.0), 0);
        assert_eq!(d.sample_with(0.2499), 0);
        assert_eq!(d.sample_with(0.25), 1);
        assert_eq!(d.sample_with(0.74), 1);
        assert_eq!(d.sample_with(0.75), 2);
        assert_eq!(d.sample_with(0.999999), 2);
    }

    #[test]
    fn step_strategy_feeds_the_policy_the_new_memory() {
        let s = Strategy::new(
            parse_expr("vec_full(0)").unwrap(),
            parse_expr("action(1)").unwrap(),
            parse_expr("add_assign(state,prev_action,reward)").unwrap(),
            parse_expr("argmax(state)").unwrap(),
        )
        .unwrap();
        let ctx = StepContext {
            state: [0.0, 0.5, 0.0, 0.0],
            prev_action: 0,
            reward: 1.0,
            prev_forced: false,
            num_actions: 2,
        };
        let (m, d) = step_strategy(&s, &ctx).unwrap();
        assert_eq!(m, [1.0, 0.5, 0.0, 0.0]);
        assert_eq!(d.as_point_mass(), Some(0), "policy saw the updated memory");
    }
}
