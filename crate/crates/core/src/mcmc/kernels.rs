//! Proposal kernels over expression trees.
//!
//! Each kernel proposes a replacement for one program and reports the log
//! density of the sampled forward path together with the log density of the
//! unique reverse path that undoes it (regeneration, head resampling, and
//! argument swaps undo themselves; insert and delete undo each other). The
//! acceptance rule balances each path pair individually, so these must be
//! exact. Every fresh subtree is drawn from the grammar's depth-capped
//! sampler, and its density is the capped one; reverse paths that would need
//! an over-deep draw get density zero and the move is simply never accepted.

use rand::Rng;

use crate::dsl::{Expr, Grammar, Prim, ProductionHead, ProgramRole, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    /// Redraw the subtree at a random node from the grammar.
    Regenerate,
    /// Swap one node's head for another with the same argument signature.
    ResamplePrimitive,
    /// Swap two same-typed arguments of one node.
    SwapArgs,
    /// Wrap a random node in a fresh production, keeping it as one argument.
    Insert,
    /// Replace a node by one of its same-typed arguments.
    Delete,
}

impl Kernel {
    pub const ALL: [Kernel; 5] = [
        Kernel::Regenerate,
        Kernel::ResamplePrimitive,
        Kernel::SwapArgs,
        Kernel::Insert,
        Kernel::Delete,
    ];

    /// The kernel whose paths undo this one's.
    pub fn reverse(self) -> Kernel {
        match self {
            Kernel::Insert => Kernel::Delete,
            Kernel::Delete => Kernel::Insert,
            k => k,
        }
    }
}

/// A proposed replacement program. `log_fwd` is the density of the path that
/// produced it, including the choice of node; `log_bwd` is the density of
/// the reverse path through [`Kernel::reverse`]. Neither includes the choice
/// of kernel, which the caller accounts for.
#[derive(Debug, Clone)]
pub struct ExprProposal {
    pub expr: Expr,
    pub log_fwd: f64,
    pub log_bwd: f64,
}

/// Concrete heads that could replace `current` at a node of type `ty`
/// without touching its arguments. The literal production stands for every
/// literal value, so literals trade against each other and against other
/// nullary scalars.
fn alternative_heads(g: &Grammar, role: ProgramRole, ty: ValueType, current: Prim) -> Vec<Prim> {
    let sig = current.arg_types(ty);
    let mut out = Vec::new();
    for prod in g.productions(role, ty) {
        match prod.head {
            ProductionHead::Literal => {
                if sig.is_empty() {
                    for k in 0..=g.max_literal() {
                        if Prim::Lit(k) != current {
                            out.push(Prim::Lit(k));
                        }
                    }
                }
            }
            ProductionHead::Prim(p) => {
                if p != current && p.arg_types(ty) == sig {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Unordered argument pairs of matching type, in a fixed order.
fn same_typed_pairs(node: &Expr) -> Vec<(usize, usize)> {
    let args = node.args();
    let mut out = Vec::new();
    for a in 0..args.len() {
        for b in a + 1..args.len() {
            if args[a].value_type() == args[b].value_type() {
                out.push((a, b));
            }
        }
    }
    out
}

/// Productions that can wrap a node of type `ty`: concrete heads with at
/// least one argument slot of that same type.
fn wrappers(g: &Grammar, role: ProgramRole, ty: ValueType) -> Vec<Prim> {
    g.productions(role, ty)
        .iter()
        .filter_map(|prod| match prod.head {
            ProductionHead::Prim(p) if p.arg_types(ty).contains(&ty) => Some(p),
            _ => None,
        })
        .collect()
}

/// Indices of `head`'s argument slots typed `ty` when producing `ty`.
fn typed_slots(head: Prim, ty: ValueType) -> Vec<usize> {
    head.arg_types(ty)
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| (a == ty).then_some(i))
        .collect()
}

fn node_eligible(kernel: Kernel, g: &Grammar, role: ProgramRole, node: &Expr) -> bool {
    match kernel {
        Kernel::Regenerate => true,
        Kernel::ResamplePrimitive => {
            !alternative_heads(g, role, node.value_type(), node.head()).is_empty()
        }
        Kernel::SwapArgs => !same_typed_pairs(node).is_empty(),
        Kernel::Insert => !wrappers(g, role, node.value_type()).is_empty(),
        Kernel::Delete => node
            .args()
            .iter()
            .any(|a| a.value_type() == node.value_type()),
    }
}

/// Preorder indices of the nodes this kernel could act on.
fn eligible_nodes(kernel: Kernel, g: &Grammar, role: ProgramRole, e: &Expr) -> Vec<usize> {
    (0..e.size())
        .filter(|&i| node_eligible(kernel, g, role, e.node(i)))
        .collect()
}

/// True when the kernel has at least one move available on `e`.
pub fn applicable(kernel: Kernel, g: &Grammar, role: ProgramRole, e: &Expr) -> bool {
    (0..e.size()).any(|i| node_eligible(kernel, g, role, e.node(i)))
}

/// Every kernel with a move available on `e`, in [`Kernel::ALL`] order.
pub fn applicable_kernels(g: &Grammar, role: ProgramRole, e: &Expr) -> Vec<Kernel> {
    Kernel::ALL
        .into_iter()
        .filter(|&k| applicable(k, g, role, e))
        .collect()
}

fn ln_count(v: &[usize]) -> f64 {
    (v.len() as f64).ln()
}

/// Runs one kernel on `e`. Returns `None` when the kernel has no move here;
/// callers normally pick among [`applicable_kernels`] first.
pub fn propose<R: Rng>(
    kernel: Kernel,
    g: &Grammar,
    role: ProgramRole,
    e: &Expr,
    rng: &mut R,
) -> Option<ExprProposal> {
    let nodes = eligible_nodes(kernel, g, role, e);
    if nodes.is_empty() {
        return None;
    }
    let i = nodes[rng.gen_range(0..nodes.len())];
    let node = e.node(i);
    let ty = node.value_type();
    match kernel {
        Kernel::Regenerate => {
            let (fresh, lp_new) = g.sample_expr_with_log_prob(role, ty, rng);
            let lp_old = g.sample_log_prob(role, ty, node);
            let expr = e.replace_node(i, fresh);
            let bwd_nodes = expr.size() as f64;
            Some(ExprProposal {
                log_fwd: -(nodes.len() as f64).ln() + lp_new,
                log_bwd: -bwd_nodes.ln() + lp_old,
                expr,
            })
        }
        Kernel::ResamplePrimitive => {
            let alts = alternative_heads(g, role, ty, node.head());
            let pick = alts[rng.gen_range(0..alts.len())];
            let swapped =
                Expr::new(pick, node.args().to_vec()).expect("alternatives share the signature");
            let expr = e.replace_node(i, swapped);
            let bwd_nodes = eligible_nodes(kernel, g, role, &expr);
            let bwd_alts = alternative_heads(g, role, ty, expr.node(i).head());
            Some(ExprProposal {
                log_fwd: -ln_count(&nodes) - (alts.len() as f64).ln(),
                log_bwd: -ln_count(&bwd_nodes) - (bwd_alts.len() as f64).ln(),
                expr,
            })
        }
        Kernel::SwapArgs => {
            let pairs = same_typed_pairs(node);
            let (a, b) = pairs[rng.gen_range(0..pairs.len())];
            let mut args = node.args().to_vec();
            args.swap(a, b);
            let swapped = Expr::new(node.head(), args).expect("swap preserves the signature");
            let expr = e.replace_node(i, swapped);
            let bwd_nodes = eligible_nodes(kernel, g, role, &expr);
            let bwd_pairs = same_typed_pairs(expr.node(i));
            Some(ExprProposal {
                log_fwd: -ln_count(&nodes) - (pairs.len() as f64).ln(),
                log_bwd: -ln_count(&bwd_nodes) - (bwd_pairs.len() as f64).ln(),
                expr,
            })
        }
        Kernel::Insert => {
            let ws = wrappers(g, role, ty);
            let head = ws[rng.gen_range(0..ws.len())];
            let slots = typed_slots(head, ty);
            let keep = slots[rng.gen_range(0..slots.len())];
            let mut lp_fresh = 0.0;
            let mut args = Vec::with_capacity(head.arity());
            for (j, &aty) in head.arg_types(ty).iter().enumerate() {
                if j == keep {
                    args.push(node.clone());
                } else {
                    let (arg, lp) = g.sample_expr_with_log_prob(role, aty, rng);
                    lp_fresh += lp;
                    args.push(arg);
                }
            }
            let wrapped = Expr::new(head, args).expect("wrappers are well typed");
            let expr = e.replace_node(i, wrapped);
            let bwd_nodes = eligible_nodes(Kernel::Delete, g, role, &expr);
            let slot_term = (slots.len() as f64).ln();
            Some(ExprProposal {
                log_fwd: -ln_count(&nodes) - (ws.len() as f64).ln() - slot_term + lp_fresh,
                log_bwd: -ln_count(&bwd_nodes) - slot_term,
                expr,
            })
        }
        Kernel::Delete => {
            let slots: Vec<usize> = node
                .args()
                .iter()
                .enumerate()
                .filter_map(|(j, a)| (a.value_type() == ty).then_some(j))
                .collect();
            let keep = slots[rng.gen_range(0..slots.len())];
            let expr = e.replace_node(i, node.args()[keep].clone());
            // The reverse insert re-wraps with this head and redraws every
            // discarded sibling exactly as it was.
            let mut lp_fresh = 0.0;
            for (j, arg) in node.args().iter().enumerate() {
                if j != keep {
                    lp_fresh += g.sample_log_prob(role, arg.value_type(), arg);
                }
            }
            let bwd_nodes = eligible_nodes(Kernel::Insert, g, role, &expr);
            let ws = wrappers(g, role, ty);
            debug_assert!(ws.contains(&node.head()));
            let slot_term = (slots.len() as f64).ln();
            Some(ExprProposal {
                log_fwd: -ln_count(&nodes) - slot_term,
                log_bwd: -ln_count(&bwd_nodes) - (ws.len() as f64).ln() - slot_term + lp_fresh,
                expr,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expr, GrammarConfig};
    use crate::seeds;

    fn grammar() -> Grammar {
        Grammar::new(GrammarConfig::default())
    }

    #[test]
    fn kernels_preserve_type_and_grammar_membership() {
        let g = grammar();
        let mut rng = seeds::rng(7);
        for role in ProgramRole::ALL {
            let mut e = g.sample_expr(role, role.root_type(), &mut rng);
            for step in 0..200 {
                let kernels = applicable_kernels(&g, role, &e);
                assert!(kernels.contains(&Kernel::Regenerate));
                let k = kernels[step % kernels.len()];
                let prop = propose(k, &g, role, &e, &mut rng).unwrap();
                assert_eq!(prop.expr.value_type(), role.root_type(), "{k:?}");
                assert!(
                    g.log_prior_expr(role, &prop.expr).is_finite(),
                    "{k:?} left the grammar: {}",
                    prop.expr
                );
                assert!(prop.log_fwd.is_finite(), "{k:?}");
                e = prop.expr;
            }
        }
    }

    #[test]
    fn reverse_kernels_stay_applicable_on_the_proposal() {
        let g = grammar();
        let mut rng = seeds::rng(8);
        let role = ProgramRole::Policy;
        for _ in 0..200 {
            let e = g.sample_expr(role, ValueType::ActionDist, &mut rng);
            for k in Kernel::ALL {
                if let Some(prop) = propose(k, &g, role, &e, &mut rng) {
                    assert!(
                        applicable(k.reverse(), &g, role, &prop.expr),
                        "{k:?} proposal lost its reverse"
                    );
                }
            }
        }
    }

    #[test]
    fn resample_keeps_shape_and_swaps_one_head() {
        let g = grammar();
        let mut rng = seeds::rng(9);
        let e = parse_expr("softmax(+(reward,2),assign(state,prev_action,reward))").unwrap();
        for _ in 0..100 {
            let prop = propose(Kernel::ResamplePrimitive, &g, ProgramRole::Policy, &e, &mut rng)
                .unwrap();
            assert_eq!(prop.expr.size(), e.size());
            let changed: Vec<usize> = (0..e.size())
                .filter(|&i| e.node(i).head() != prop.expr.node(i).head())
                .collect();
            assert_eq!(changed.len(), 1, "{} -> {}", e, prop.expr);
            // Same class in both directions, so the path densities match.
            assert!((prop.log_fwd - prop.log_bwd).abs() < 1e-12);
        }
    }

    #[test]
    fn swaps_permute_arguments_in_place() {
        let g = grammar();
        let mut rng = seeds::rng(10);
        let e = parse_expr("if(<(reward,1),+(0,2),*(3,4))").unwrap();
        let mut seen_branch_swap = false;
        for _ in 0..200 {
            let prop = propose(Kernel::SwapArgs, &g, ProgramRole::Update, &e, &mut rng).unwrap();
            assert_eq!(prop.expr.size(), e.size());
            // A conditional's branches are its one same-typed pair; swapping
            // them flips which arm runs on true.
            if prop.expr.to_string() == "if(<(reward,1),*(3,4),+(0,2))" {
                seen_branch_swap = true;
            }
            assert!((prop.log_fwd - prop.log_bwd).abs() < 1e-12);
        }
        assert!(seen_branch_swap, "if branches never swapped");
    }

    #[test]
    fn inserts_grow_and_deletes_shrink() {
        let g = grammar();
        let mut rng = seeds::rng(11);
        let e = parse_expr("argmax(assign(state,prev_action,reward))").unwrap();
        for _ in 0..200 {
            let ins = propose(Kernel::Insert, &g, ProgramRole::Policy, &e, &mut rng).unwrap();
            assert!(ins.expr.size() > e.size());
            // Some delete on the grown tree restores the original exactly.
            let mut restored = false;
            for i in 0..ins.expr.size() {
                let n = ins.expr.node(i);
                for (j, a) in n.args().iter().enumerate() {
                    if a.value_type() == n.value_type()
                        && ins.expr.replace_node(i, n.args()[j].clone()) == e
                    {
                        restored = true;
                    }
                }
            }
            assert!(restored, "{} cannot shrink back to {}", ins.expr, e);

            if let Some(del) = propose(Kernel::Delete, &g, ProgramRole::Policy, &e, &mut rng) {
                assert!(del.expr.size() < e.size());
                assert!(del.log_fwd.is_finite());
                assert!(del.log_bwd.is_finite());
            }
        }
    }

    #[test]
    fn action_distributions_only_grow_below_the_root() {
        // No production wraps an action distribution, so the policy root is
        // never inserted above and never deleted; its arguments still move.
        let g = grammar();
        let e = parse_expr("action(0)").unwrap();
        assert!(!node_eligible(Kernel::Insert, &g, ProgramRole::Policy, &e));
        assert!(!node_eligible(Kernel::Delete, &g, ProgramRole::Policy, &e));
        assert!(applicable(Kernel::Insert, &g, ProgramRole::Policy, &e));
        let wrappers_dist = wrappers(&g, ProgramRole::Policy, ValueType::ActionDist);
        assert!(wrappers_dist.is_empty());
    }

    #[test]
    fn literals_trade_against_other_nullary_scalars() {
        let g = grammar();
        let alts = alternative_heads(&g, ProgramRole::Update, ValueType::Scalar, Prim::Lit(3));
        assert_eq!(alts.len(), 49 + 2, "49 other literals plus two inputs");
        assert!(alts.contains(&Prim::Reward));
        assert!(alts.contains(&Prim::PrevAction));
        assert!(!alts.contains(&Prim::Lit(3)));
        // Init programs see no inputs, so literals only trade values.
        let init = alternative_heads(&g, ProgramRole::InitMemory, ValueType::Scalar, Prim::Lit(3));
        assert_eq!(init.len(), 49);
        // Binary scalar operators trade with each other.
        let ops = alternative_heads(&g, ProgramRole::Update, ValueType::Scalar, Prim::Add);
        assert_eq!(ops, vec![Prim::Mul]);
    }

    #[test]
    fn regeneration_densities_are_the_capped_sampling_law() {
        let g = grammar();
        let mut rng = seeds::rng(12);
        let e = parse_expr("action(reward)").unwrap();
        let role = ProgramRole::Policy;
        for _ in 0..50 {
            let prop = propose(Kernel::Regenerate, &g, role, &e, &mut rng).unwrap();
            // Forward: uniform over this tree's two nodes times the draw's
            // capped density. The draw hit either the root or the scalar, so
            // the reported density must match one of those two paths.
            let half = 0.5f64.ln();
            let via_root =
                half + g.sample_log_prob(role, ValueType::ActionDist, &prop.expr);
            let mut paths = vec![via_root];
            if prop.expr.node(0).head() == Prim::Action {
                paths.push(
                    half + g.sample_log_prob(role, ValueType::Scalar, prop.expr.node(1)),
                );
            }
            assert!(
                paths.iter().any(|p| (prop.log_fwd - p).abs() < 1e-9),
                "log_fwd {} not among path densities {paths:?} for {}",
                prop.log_fwd,
                prop.expr
            );
            // Backward: uniform over the proposal's nodes times the density
            // of redrawing what was lost.
            let n_bwd = prop.expr.size() as f64;
            let bwd_root = -n_bwd.ln() + g.sample_log_prob(role, ValueType::ActionDist, &e);
            let bwd_leaf =
                -n_bwd.ln() + g.sample_log_prob(role, ValueType::Scalar, e.node(1));
            assert!(
                (prop.log_bwd - bwd_root).abs() < 1e-9 || (prop.log_bwd - bwd_leaf).abs() < 1e-9
            );
            assert!(prop.log_fwd.is_finite());
        }
    }
}
