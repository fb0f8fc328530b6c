//! The typed expression language strategies are written in.
//!
//! Expressions are trees of primitives. Every expression has one of four
//! types: scalars, booleans, length-4 vectors, and action distributions.
//! Programs print to a canonical text form (`name(arg,arg)`, literals bare)
//! and parse back; `v[i]` is accepted as sugar for `idx(v,i)`.

mod grammar;
mod parser;

pub use grammar::{Grammar, GrammarConfig, Production, ProductionHead, MAX_DEPTH};
pub use parser::{parse_expr, ParseError};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Fixed length of the agent's memory vector.
pub const MEMORY_LEN: usize = 4;

/// Largest integer literal the language admits.
pub const MAX_LITERAL: u8 = 49;

/// The four value types of the language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Scalar,
    Boolean,
    Vector,
    ActionDist,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Scalar => "scalar",
            ValueType::Boolean => "boolean",
            ValueType::Vector => "vector",
            ValueType::ActionDist => "action distribution",
        };
        f.write_str(s)
    }
}

/// Primitive operations. `Lit` carries its integer value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prim {
    Lit(u8),
    Add,
    Mul,
    Neg,
    Inv,
    Lt,
    Eq,
    And,
    Or,
    Not,
    If,
    VecFull,
    Vec1,
    Vec2,
    Vec3,
    Vec4,
    Idx,
    Assign,
    AddAssign,
    PrevAction,
    Reward,
    State,
    PrevForced,
    Logit,
    Softmax,
    Action,
    Argmax,
}

impl Prim {
    /// Canonical head name as it appears in program text. Literals print
    /// bare, without a head name.
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Lit(_) => "",
            Prim::Add => "+",
            Prim::Mul => "*",
            Prim::Neg => "-",
            Prim::Inv => "1/",
            Prim::Lt => "<",
            Prim::Eq => "==",
            Prim::And => "&&",
            Prim::Or => "||",
            Prim::Not => "!",
            Prim::If => "if",
            Prim::VecFull => "vec_full",
            Prim::Vec1 => "vec_1",
            Prim::Vec2 => "vec_2",
            Prim::Vec3 => "vec_3",
            Prim::Vec4 => "vec_4",
            Prim::Idx => "idx",
            Prim::Assign => "assign",
            Prim::AddAssign => "add_assign",
            Prim::PrevAction => "prev_action",
            Prim::Reward => "reward",
            Prim::State => "state",
            Prim::PrevForced => "prev_forced",
            Prim::Logit => "logit",
            Prim::Softmax => "softmax",
            Prim::Action => "action",
            Prim::Argmax => "argmax",
        }
    }

    pub fn arity(&self) -> usize {
        self.arg_types(ValueType::Scalar).len()
    }

    /// Result type. `If` takes its result type from its branches, so it can
    /// produce any of the three data types; everything else is fixed.
    pub fn result_type(&self, branch: ValueType) -> ValueType {
        match self {
            Prim::Lit(_)
            | Prim::Add
            | Prim::Mul
            | Prim::Neg
            | Prim::Inv
            | Prim::Idx
            | Prim::PrevAction
            | Prim::Reward => ValueType::Scalar,
            Prim::Lt | Prim::Eq | Prim::And | Prim::Or | Prim::Not | Prim::PrevForced => {
                ValueType::Boolean
            }
            Prim::VecFull
            | Prim::Vec1
            | Prim::Vec2
            | Prim::Vec3
            | Prim::Vec4
            | Prim::Assign
            | Prim::AddAssign
            | Prim::State => ValueType::Vector,
            Prim::Logit | Prim::Softmax | Prim::Action | Prim::Argmax => ValueType::ActionDist,
            Prim::If => branch,
        }
    }

    /// Argument types for this head when producing `result`. For every head
    /// but `If` the signature is independent of `result`.
    pub fn arg_types(&self, result: ValueType) -> &'static [ValueType] {
        use ValueType::*;
        match self {
            Prim::Lit(_) | Prim::PrevAction | Prim::Reward | Prim::State | Prim::PrevForced => &[],
            Prim::Add | Prim::Mul => &[Scalar, Scalar],
            Prim::Neg | Prim::Inv => &[Scalar],
            Prim::Lt | Prim::Eq => &[Scalar, Scalar],
            Prim::And | Prim::Or => &[Boolean, Boolean],
            Prim::Not => &[Boolean],
            Prim::If => match result {
                Scalar => &[Boolean, Scalar, Scalar],
                Boolean => &[Boolean, Boolean, Boolean],
                Vector => &[Boolean, Vector, Vector],
                ActionDist => &[Boolean, ActionDist, ActionDist],
            },
            Prim::VecFull | Prim::Vec1 => &[Scalar],
            Prim::Vec2 => &[Scalar, Scalar],
            Prim::Vec3 => &[Scalar, Scalar, Scalar],
            Prim::Vec4 => &[Scalar, Scalar, Scalar, Scalar],
            Prim::Idx => &[Vector, Scalar],
            Prim::Assign | Prim::AddAssign => &[Vector, Scalar, Scalar],
            Prim::Logit | Prim::Action => &[Scalar],
            Prim::Softmax => &[Scalar, Vector],
            Prim::Argmax => &[Vector],
        }
    }
}

/// Type errors raised when assembling expressions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("{prim} takes {expected} arguments, got {actual}")]
    Arity {
        prim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("argument {index} of {prim} must be a {expected}, got a {actual}")]
    ArgType {
        prim: &'static str,
        index: usize,
        expected: ValueType,
        actual: ValueType,
    },
    #[error("if branches disagree: {then_ty} vs {else_ty}")]
    BranchMismatch { then_ty: ValueType, else_ty: ValueType },
    #[error("if cannot produce an action distribution")]
    BranchActionDist,
    #[error("literal {0} is out of range")]
    LiteralRange(i64),
}

/// A well-typed expression tree.
///
/// Construction goes through [`Expr::new`], which checks arity and argument
/// types, so any `Expr` in hand is well typed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Expr {
    head: Prim,
    args: Vec<Expr>,
}

impl Expr {
    pub fn new(head: Prim, args: Vec<Expr>) -> Result<Self, TypeError> {
        if head == Prim::If {
            if args.len() != 3 {
                return Err(TypeError::Arity {
                    prim: "if",
                    expected: 3,
                    actual: args.len(),
                });
            }
            if args[0].value_type() != ValueType::Boolean {
                return Err(TypeError::ArgType {
                    prim: "if",
                    index: 0,
                    expected: ValueType::Boolean,
                    actual: args[0].value_type(),
                });
            }
            let then_ty = args[1].value_type();
            let else_ty = args[2].value_type();
            if then_ty != else_ty {
                return Err(TypeError::BranchMismatch { then_ty, else_ty });
            }
            if then_ty == ValueType::ActionDist {
                return Err(TypeError::BranchActionDist);
            }
            return Ok(Expr { head, args });
        }
        if let Prim::Lit(k) = head {
            if k > MAX_LITERAL {
                return Err(TypeError::LiteralRange(k as i64));
            }
        }
        let expected = head.arg_types(ValueType::Scalar);
        if args.len() != expected.len() {
            return Err(TypeError::Arity {
                prim: head.name(),
                expected: expected.len(),
                actual: args.len(),
            });
        }
        for (i, (arg, want)) in args.iter().zip(expected).enumerate() {
            if arg.value_type() != *want {
                return Err(TypeError::ArgType {
                    prim: head.name(),
                    index: i,
                    expected: *want,
                    actual: arg.value_type(),
                });
            }
        }
        Ok(Expr { head, args })
    }

    pub fn lit(k: u8) -> Self {
        assert!(k <= MAX_LITERAL);
        Expr {
            head: Prim::Lit(k),
            args: Vec::new(),
        }
    }

    pub fn nullary(head: Prim) -> Self {
        assert!(head.arity() == 0 && !matches!(head, Prim::Lit(_)));
        Expr {
            head,
            args: Vec::new(),
        }
    }

    pub fn head(&self) -> Prim {
        self.head
    }

    pub fn args(&self) -> &[Expr] {
        &self.args
    }

    /// The expression's type, determined by its head (and for `if`, by its
    /// branches).
    pub fn value_type(&self) -> ValueType {
        match self.head {
            Prim::If => self.args[1].value_type(),
            h => h.result_type(ValueType::Scalar),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.args.iter().map(Expr::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.args.iter().map(Expr::depth).max().unwrap_or(0)
    }

    /// Subtree at preorder position `i` (0 is the root).
    pub fn node(&self, i: usize) -> &Expr {
        self.visit_node(i).expect("node index out of range")
    }

    fn visit_node(&self, i: usize) -> Option<&Expr> {
        if i == 0 {
            return Some(self);
        }
        let mut rest = i - 1;
        for arg in &self.args {
            let sz = arg.size();
            if rest < sz {
                return arg.visit_node(rest);
            }
            rest -= sz;
        }
        None
    }

    /// New tree with the subtree at preorder position `i` replaced.
    /// The replacement must have the same type as the node it replaces.
    pub fn replace_node(&self, i: usize, replacement: Expr) -> Expr {
        assert_eq!(
            self.node(i).value_type(),
            replacement.value_type(),
            "replacement changes node type"
        );
        self.replace_inner(i, &replacement)
    }

    fn replace_inner(&self, i: usize, replacement: &Expr) -> Expr {
        if i == 0 {
            return replacement.clone();
        }
        let mut rest = i - 1;
        let mut args = Vec::with_capacity(self.args.len());
        let mut done = false;
        for arg in &self.args {
            let sz = arg.size();
            if !done && rest < sz {
                args.push(arg.replace_inner(rest, replacement));
                done = true;
            } else {
                if !done {
                    rest -= sz;
                }
                args.push(arg.clone());
            }
        }
        Expr {
            head: self.head,
            args,
        }
    }

    /// Preorder list of every node's type.
    pub fn node_types(&self) -> Vec<ValueType> {
        let mut out = Vec::with_capacity(self.size());
        self.push_node_types(&mut out);
        out
    }

    fn push_node_types(&self, out: &mut Vec<ValueType>) {
        out.push(self.value_type());
        for arg in &self.args {
            arg.push_node_types(out);
        }
    }

    /// True if any node's head satisfies the predicate.
    pub fn contains<F: Fn(Prim) -> bool + Copy>(&self, pred: F) -> bool {
        pred(self.head) || self.args.iter().any(|a| a.contains(pred))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.head {
            Prim::Lit(k) => write!(f, "{k}"),
            h if self.args.is_empty() => f.write_str(h.name()),
            h => {
                f.write_str(h.name())?;
                f.write_str("(")?;
                for (i, arg) in self.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    arg.fmt(f)?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Which of the four strategy slots a program fills. Initialization programs
/// run once before the first trial and draw on a restricted grammar with no
/// inputs, conditionals, or indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProgramRole {
    InitMemory,
    InitPolicy,
    Update,
    Policy,
}

impl ProgramRole {
    pub fn root_type(&self) -> ValueType {
        match self {
            ProgramRole::InitMemory | ProgramRole::Update => ValueType::Vector,
            ProgramRole::InitPolicy | ProgramRole::Policy => ValueType::ActionDist,
        }
    }

    pub fn is_init(&self) -> bool {
        matches!(self, ProgramRole::InitMemory | ProgramRole::InitPolicy)
    }

    pub const ALL: [ProgramRole; 4] = [
        ProgramRole::InitMemory,
        ProgramRole::InitPolicy,
        ProgramRole::Update,
        ProgramRole::Policy,
    ];
}

impl fmt::Display for ProgramRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProgramRole::InitMemory => "m1",
            ProgramRole::InitPolicy => "q1",
            ProgramRole::Update => "f",
            ProgramRole::Policy => "g",
        };
        f.write_str(s)
    }
}

/// Errors raised when assembling a strategy from four programs.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error("{role} must produce a {expected}, got a {actual}")]
    RootType {
        role: ProgramRole,
        expected: ValueType,
        actual: ValueType,
    },
    #[error("{role} is an initialization program and may not use {prim}")]
    ForbiddenInInit { role: ProgramRole, prim: &'static str },
}

/// A complete strategy: initial memory, initial action distribution, memory
/// update, and policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub m1: Expr,
    pub q1: Expr,
    pub f: Expr,
    pub g: Expr,
}

impl Strategy {
    pub fn new(m1: Expr, q1: Expr, f: Expr, g: Expr) -> Result<Self, StrategyError> {
        for (role, e) in [
            (ProgramRole::InitMemory, &m1),
            (ProgramRole::InitPolicy, &q1),
            (ProgramRole::Update, &f),
            (ProgramRole::Policy, &g),
        ] {
            let actual = e.value_type();
            if actual != role.root_type() {
                return Err(StrategyError::RootType {
                    role,
                    expected: role.root_type(),
                    actual,
                });
            }
            if role.is_init() {
                if let Some(prim) = init_forbidden(e) {
                    return Err(StrategyError::ForbiddenInInit {
                        role,
                        prim: prim.name(),
                    });
                }
            }
        }
        Ok(Strategy { m1, q1, f, g })
    }

    pub fn program(&self, role: ProgramRole) -> &Expr {
        match role {
            ProgramRole::InitMemory => &self.m1,
            ProgramRole::InitPolicy => &self.q1,
            ProgramRole::Update => &self.f,
            ProgramRole::Policy => &self.g,
        }
    }

    pub fn with_program(&self, role: ProgramRole, e: Expr) -> Result<Self, StrategyError> {
        let mut s = self.clone();
        match role {
            ProgramRole::InitMemory => s.m1 = e,
            ProgramRole::InitPolicy => s.q1 = e,
            ProgramRole::Update => s.f = e,
            ProgramRole::Policy => s.g = e,
        }
        Strategy::new(s.m1, s.q1, s.f, s.g)
    }

    /// Both action-producing programs emit point masses, so every episode is
    /// a deterministic function of the task's draws.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.q1.head(), Prim::Action | Prim::Argmax)
            && matches!(self.g.head(), Prim::Action | Prim::Argmax)
    }

    /// Canonical four-line text form.
    pub fn to_text(&self) -> String {
        format!(
            "m1 = {}\nq1 = {}\nf = {}\ng = {}",
            self.m1, self.q1, self.f, self.g
        )
    }

    /// Canonical single-line key, used for deduplication and memoization.
    pub fn key(&self) -> String {
        format!("{};{};{};{}", self.m1, self.q1, self.f, self.g)
    }
}

fn init_forbidden(e: &Expr) -> Option<Prim> {
    let bad = matches!(
        e.head,
        Prim::If
            | Prim::Idx
            | Prim::PrevAction
            | Prim::Reward
            | Prim::State
            | Prim::PrevForced
    );
    if bad {
        return Some(e.head);
    }
    e.args.iter().find_map(init_forbidden)
}
