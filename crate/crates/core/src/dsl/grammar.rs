//! Probabilistic grammar over expressions: the description-length prior.
//!
//! Each (role class, type) pair has a weighted production list. Terminals
//! carry weight 8 and non-terminals weight 1, so programs stay short under
//! the prior. A single production covers all integer literals, with mass
//! proportional to 0.5^k over 0..=49. Initialization programs draw from a
//! reduced table with no inputs, conditionals, or indexing.

use super::{Expr, Prim, ProgramRole, Strategy, ValueType};
use rand::Rng;

/// Depth cap applied when sampling. Trees that exceed it are resampled from
/// scratch, so the sampler realizes the grammar conditioned on fitting the
/// cap; [`Grammar::sample_log_prob`] is that conditioned density. The cap is
/// not cosmetic: booleans have no terminal productions, so an unbounded
/// boolean subtree fails to close with appreciable probability. The prior
/// used for scoring stays the unconditioned mass.
pub const MAX_DEPTH: usize = 32;

const TERMINAL_WEIGHT: f64 = 8.0;
const NONTERMINAL_WEIGHT: f64 = 1.0;

/// Head of a production. One production stands for the whole literal family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductionHead {
    Literal,
    Prim(Prim),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Production {
    pub head: ProductionHead,
    pub weight: f64,
}

impl Production {
    fn terminal(head: ProductionHead) -> Self {
        Production {
            head,
            weight: TERMINAL_WEIGHT,
        }
    }

    fn nonterminal(prim: Prim) -> Self {
        Production {
            head: ProductionHead::Prim(prim),
            weight: NONTERMINAL_WEIGHT,
        }
    }

    /// Argument types when this production rewrites a node of type `ty`.
    pub fn arg_types(&self, ty: ValueType) -> &'static [ValueType] {
        match self.head {
            ProductionHead::Literal => &[],
            ProductionHead::Prim(p) => p.arg_types(ty),
        }
    }
}

/// Settings the production tables depend on.
#[derive(Debug, Clone, Copy)]
pub struct GrammarConfig {
    pub num_actions: usize,
    /// Restrict policies to point-mass action constructs.
    pub deterministic: bool,
    /// Expose the `prev_forced` input (tasks with forced trials).
    pub prev_forced: bool,
    pub max_literal: u8,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            num_actions: 2,
            deterministic: false,
            prev_forced: false,
            max_literal: super::MAX_LITERAL,
        }
    }
}

fn type_index(ty: ValueType) -> usize {
    match ty {
        ValueType::Scalar => 0,
        ValueType::Boolean => 1,
        ValueType::Vector => 2,
        ValueType::ActionDist => 3,
    }
}

const TYPE_BY_INDEX: [ValueType; 4] = [
    ValueType::Scalar,
    ValueType::Boolean,
    ValueType::Vector,
    ValueType::ActionDist,
];

/// P(a draw closes within MAX_DEPTH levels), per class and type, by
/// iterating the depth recursion of the branching process.
fn finite_mass(tables: &[[Vec<Production>; 4]; 2], totals: &[[f64; 4]; 2]) -> [[f64; 4]; 2] {
    let mut z = [[0.0f64; 4]; 2];
    for _ in 0..MAX_DEPTH {
        let mut next = [[0.0f64; 4]; 2];
        for class in 0..2 {
            for ti in 0..4 {
                let prods = &tables[class][ti];
                if prods.is_empty() {
                    continue;
                }
                let ty = TYPE_BY_INDEX[ti];
                let mut mass = 0.0;
                for p in prods {
                    let closes: f64 = p
                        .arg_types(ty)
                        .iter()
                        .map(|&aty| z[class][type_index(aty)])
                        .product();
                    mass += p.weight / totals[class][ti] * closes;
                }
                next[class][ti] = mass;
            }
        }
        z = next;
    }
    z.map(|row| row.map(f64::ln))
}

/// The prior over programs, per role class and type.
#[derive(Debug, Clone)]
pub struct Grammar {
    num_actions: usize,
    max_literal: u8,
    /// ln of the literal normalizer, sum of 0.5^k for k in 0..=max_literal.
    lit_log_norm: f64,
    /// Production lists indexed by [init?][type].
    tables: [[Vec<Production>; 4]; 2],
    totals: [[f64; 4]; 2],
    /// ln P(depth <= MAX_DEPTH) per [init?][type]: the sampler's acceptance
    /// mass.
    log_norms: [[f64; 4]; 2],
}

impl Grammar {
    pub fn new(cfg: GrammarConfig) -> Self {
        assert!(
            (2..=4).contains(&cfg.num_actions),
            "supported tasks have 2 to 4 actions"
        );
        use Prim::*;
        use ProductionHead::Literal;

        let mut scalar_step = vec![
            Production::terminal(Literal),
            Production::terminal(ProductionHead::Prim(PrevAction)),
            Production::terminal(ProductionHead::Prim(Reward)),
            Production::nonterminal(Add),
            Production::nonterminal(Mul),
            Production::nonterminal(Neg),
            Production::nonterminal(Inv),
            Production::nonterminal(Idx),
        ];
        let scalar_init = vec![
            Production::terminal(Literal),
            Production::nonterminal(Add),
            Production::nonterminal(Mul),
            Production::nonterminal(Neg),
            Production::nonterminal(Inv),
        ];

        let mut bool_step = Vec::new();
        if cfg.prev_forced {
            bool_step.push(Production::terminal(ProductionHead::Prim(PrevForced)));
        }
        bool_step.extend([
            Production::nonterminal(Lt),
            Production::nonterminal(Eq),
            Production::nonterminal(And),
            Production::nonterminal(Or),
            Production::nonterminal(Not),
        ]);
        let bool_init = vec![
            Production::nonterminal(Lt),
            Production::nonterminal(Eq),
            Production::nonterminal(And),
            Production::nonterminal(Or),
            Production::nonterminal(Not),
        ];

        let mut vector_step = vec![
            Production::terminal(ProductionHead::Prim(State)),
            Production::nonterminal(VecFull),
            Production::nonterminal(Vec1),
            Production::nonterminal(Vec2),
            Production::nonterminal(Vec3),
            Production::nonterminal(Vec4),
            Production::nonterminal(Assign),
            Production::nonterminal(AddAssign),
        ];
        let vector_init = vec![
            Production::nonterminal(VecFull),
            Production::nonterminal(Vec1),
            Production::nonterminal(Vec2),
            Production::nonterminal(Vec3),
            Production::nonterminal(Vec4),
            Production::nonterminal(Assign),
            Production::nonterminal(AddAssign),
        ];

        let mut dist = Vec::new();
        if !cfg.deterministic {
            if cfg.num_actions == 2 {
                dist.push(Production::nonterminal(Logit));
            }
            dist.push(Production::nonterminal(Softmax));
        }
        dist.push(Production::nonterminal(Action));
        dist.push(Production::nonterminal(Argmax));

        // Conditionals appear in every data type's step table, never in
        // initialization and never at action distributions.
        scalar_step.push(Production::nonterminal(If));
        bool_step.push(Production::nonterminal(If));
        vector_step.push(Production::nonterminal(If));

        Self::custom(
            cfg.num_actions,
            cfg.max_literal,
            [scalar_init, bool_init, vector_init, dist.clone()],
            [scalar_step, bool_step, vector_step, dist],
        )
    }

    /// Builds a grammar from explicit production tables, indexed by
    /// [scalar, boolean, vector, action distribution]. Exists so tests can
    /// work with small enumerable spaces.
    pub fn custom(
        num_actions: usize,
        max_literal: u8,
        init: [Vec<Production>; 4],
        step: [Vec<Production>; 4],
    ) -> Self {
        assert!(max_literal <= super::MAX_LITERAL);
        let totals_of = |t: &[Vec<Production>; 4]| {
            let mut totals = [0.0; 4];
            for (i, prods) in t.iter().enumerate() {
                totals[i] = prods.iter().map(|p| p.weight).sum();
            }
            totals
        };
        let totals = [totals_of(&init), totals_of(&step)];
        let lit_norm: f64 = (0..=max_literal).map(|k| 0.5f64.powi(k as i32)).sum();
        let tables = [init, step];
        let log_norms = finite_mass(&tables, &totals);
        Grammar {
            num_actions,
            max_literal,
            lit_log_norm: lit_norm.ln(),
            tables,
            totals,
            log_norms,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn max_literal(&self) -> u8 {
        self.max_literal
    }

    fn class_index(role: ProgramRole) -> usize {
        if role.is_init() {
            0
        } else {
            1
        }
    }

    pub fn productions(&self, role: ProgramRole, ty: ValueType) -> &[Production] {
        &self.tables[Self::class_index(role)][type_index(ty)]
    }

    fn total_weight(&self, role: ProgramRole, ty: ValueType) -> f64 {
        self.totals[Self::class_index(role)][type_index(ty)]
    }

    /// ln p(k) under the truncated geometric literal law.
    pub fn literal_log_prob(&self, k: u8) -> f64 {
        assert!(k <= self.max_literal);
        (k as f64) * 0.5f64.ln() - self.lit_log_norm
    }

    fn production_log_prob(&self, role: ProgramRole, ty: ValueType, head: ProductionHead) -> Option<f64> {
        let total = self.total_weight(role, ty);
        self.productions(role, ty)
            .iter()
            .find(|p| p.head == head)
            .map(|p| (p.weight / total).ln())
    }

    fn sample_literal<R: Rng>(&self, rng: &mut R) -> u8 {
        let norm = (-self.lit_log_norm).exp();
        let mut u: f64 = rng.gen::<f64>();
        for k in 0..=self.max_literal {
            let p = 0.5f64.powi(k as i32) * norm;
            if u < p {
                return k;
            }
            u -= p;
        }
        self.max_literal
    }

    /// Draws an expression of type `ty` for `role`. Trees that would exceed
    /// the depth cap are discarded and redrawn whole.
    pub fn sample_expr<R: Rng>(&self, role: ProgramRole, ty: ValueType, rng: &mut R) -> Expr {
        loop {
            if let Some((e, _)) = self.try_sample(role, ty, 1, rng) {
                return e;
            }
        }
    }

    /// As [`sample_expr`](Self::sample_expr), but also returns the log
    /// density of the draw. Matches [`sample_log_prob`](Self::sample_log_prob)
    /// exactly, which the tests rely on.
    pub fn sample_expr_with_log_prob<R: Rng>(
        &self,
        role: ProgramRole,
        ty: ValueType,
        rng: &mut R,
    ) -> (Expr, f64) {
        loop {
            if let Some((e, lp)) = self.try_sample(role, ty, 1, rng) {
                return (e, lp - self.sample_log_norm(role, ty));
            }
        }
    }

    /// ln P(a fresh draw for this role and type fits the depth cap).
    pub fn sample_log_norm(&self, role: ProgramRole, ty: ValueType) -> f64 {
        self.log_norms[Self::class_index(role)][type_index(ty)]
    }

    /// ln of the density the sampler realizes for `e`: grammar mass
    /// conditioned on the depth cap. Minus infinity when the sampler cannot
    /// emit `e` at all.
    pub fn sample_log_prob(&self, role: ProgramRole, ty: ValueType, e: &Expr) -> f64 {
        debug_assert_eq!(e.value_type(), ty);
        if e.depth() > MAX_DEPTH {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior_typed(role, e, ty);
        if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp - self.sample_log_norm(role, ty)
        }
    }

    fn try_sample<R: Rng>(
        &self,
        role: ProgramRole,
        ty: ValueType,
        depth: usize,
        rng: &mut R,
    ) -> Option<(Expr, f64)> {
        if depth > MAX_DEPTH {
            return None;
        }
        let prods = self.productions(role, ty);
        let total = self.total_weight(role, ty);
        assert!(total > 0.0, "no productions for {ty} in this role");
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = prods[prods.len() - 1];
        for p in prods {
            if pick < p.weight {
                chosen = *p;
                break;
            }
            pick -= p.weight;
        }
        let mut log_prob = (chosen.weight / total).ln();
        let e = match chosen.head {
            ProductionHead::Literal => {
                let k = self.sample_literal(rng);
                log_prob += self.literal_log_prob(k);
                Expr::lit(k)
            }
            ProductionHead::Prim(p) => {
                let mut args = Vec::with_capacity(p.arg_types(ty).len());
                for &aty in p.arg_types(ty) {
                    let (arg, lp) = self.try_sample(role, aty, depth + 1, rng)?;
                    log_prob += lp;
                    args.push(arg);
                }
                Expr::new(p, args).expect("grammar productions are well typed")
            }
        };
        Some((e, log_prob))
    }

    /// ln of the grammar's mass on `e` in `role`; minus infinity when the
    /// tree uses a production the role does not offer.
    pub fn log_prior_expr(&self, role: ProgramRole, e: &Expr) -> f64 {
        self.log_prior_typed(role, e, e.value_type())
    }

    fn log_prior_typed(&self, role: ProgramRole, e: &Expr, ty: ValueType) -> f64 {
        let head = match e.head() {
            Prim::Lit(k) => {
                if k > self.max_literal {
                    return f64::NEG_INFINITY;
                }
                ProductionHead::Literal
            }
            p => ProductionHead::Prim(p),
        };
        let Some(mut log_prob) = self.production_log_prob(role, ty, head) else {
            return f64::NEG_INFINITY;
        };
        if let Prim::Lit(k) = e.head() {
            log_prob += self.literal_log_prob(k);
        }
        if let ProductionHead::Prim(p) = head {
            for (arg, &aty) in e.args().iter().zip(p.arg_types(ty)) {
                log_prob += self.log_prior_typed(role, arg, aty);
                if log_prob == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
            }
        }
        log_prob
    }

    /// Joint log prior of a strategy's four programs.
    pub fn log_prior(&self, s: &Strategy) -> f64 {
        ProgramRole::ALL
            .iter()
            .map(|&role| self.log_prior_expr(role, s.program(role)))
            .sum()
    }

    /// True when every program lies inside this grammar.
    pub fn admits(&self, s: &Strategy) -> bool {
        self.log_prior(s).is_finite()
    }

    /// Every expression of type `ty` for `role` with depth at most
    /// `max_depth`. Only feasible on small custom grammars.
    pub fn enumerate_exprs(&self, role: ProgramRole, ty: ValueType, max_depth: usize) -> Vec<Expr> {
        let mut out = Vec::new();
        if max_depth == 0 {
            return out;
        }
        for prod in self.productions(role, ty) {
            match prod.head {
                ProductionHead::Literal => {
                    for k in 0..=self.max_literal {
                        out.push(Expr::lit(k));
                    }
                }
                ProductionHead::Prim(p) => {
                    let arg_types = p.arg_types(ty);
                    if arg_types.is_empty() {
                        out.push(Expr::nullary(p));
                        continue;
                    }
                    if max_depth == 1 {
                        continue;
                    }
                    let choices: Vec<Vec<Expr>> = arg_types
                        .iter()
                        .map(|&aty| self.enumerate_exprs(role, aty, max_depth - 1))
                        .collect();
                    let mut stack: Vec<Vec<Expr>> = vec![Vec::new()];
                    for slot in &choices {
                        let mut next = Vec::with_capacity(stack.len() * slot.len());
                        for partial in &stack {
                            for choice in slot {
                                let mut args = partial.clone();
                                args.push(choice.clone());
                                next.push(args);
                            }
                        }
                        stack = next;
                    }
                    for args in stack {
                        out.push(Expr::new(p, args).expect("enumerated args are well typed"));
                    }
                }
            }
        }
        out
    }
}
