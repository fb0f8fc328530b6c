//! Extracts the finite state machine a strategy's choice behavior follows
//! on binary-outcome tasks.
//!
//! A configuration is a (memory, action distribution) pair the strategy can
//! reach. Configurations are enumerated breadth first from the start of an
//! episode, following every action above the pruning threshold and both
//! outcomes. States are configurations grouped by quantized action
//! distribution; an optional second pass merges states whose distributions
//! are close and whose outgoing transitions land in the same merged states.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dsl::Strategy;
use crate::interp::{init_strategy, step_strategy, ActionDistribution, Invalid, Memory, StepContext};
use crate::tasks::TaskSpec;

/// Extraction settings. `max_depth` counts trials, so the default machine
/// covers everything reachable within one episode of the task at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmOptions {
    /// Trials explored; the initial configuration is trial one.
    pub max_depth: usize,
    /// Hard cap on enumerated configurations. Hitting it flags the machine
    /// as truncated.
    pub max_configs: usize,
    /// Configurations whose distributions differ by at most this much in
    /// max norm share a state.
    pub quantize_tol: f64,
    /// Distance under which states are candidates for the merge pass.
    pub collapse_tol: f64,
    /// Actions below this probability are neither followed nor reported.
    pub prune_threshold: f64,
    /// Run the merge pass.
    pub collapse: bool,
    /// Replaces the memory produced by the initialization program.
    pub init_memory: Option<Memory>,
    /// Replaces the first action distribution.
    pub init_policy: Option<Vec<f64>>,
}

impl FsmOptions {
    pub fn new(max_depth: usize) -> Self {
        FsmOptions {
            max_depth,
            max_configs: 100_000,
            quantize_tol: 1e-6,
            collapse_tol: 0.05,
            prune_threshold: 0.01,
            collapse: true,
            init_memory: None,
            init_policy: None,
        }
    }

    pub fn for_task(spec: &TaskSpec) -> Self {
        FsmOptions::new(spec.trials())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Loss,
    Win,
}

impl Outcome {
    fn reward(self) -> f64 {
        match self {
            Outcome::Loss => 0.0,
            Outcome::Win => 1.0,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Loss => "loss",
            Outcome::Win => "win",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub id: usize,
    /// Choice probabilities in this state, one per action.
    pub action_probs: Vec<f64>,
    /// Number of underlying configurations.
    pub configs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineEdge {
    pub from: usize,
    pub to: usize,
    pub action: usize,
    pub outcome: Outcome,
    /// Probability of taking `action` in the source state, averaged over
    /// that state's configurations. Outcome probabilities belong to the
    /// environment and are not modeled, so the two outcome edges of one
    /// action carry the same value.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMachine {
    pub num_actions: usize,
    /// State 0 is the initial state.
    pub initial: usize,
    pub states: Vec<MachineState>,
    /// Sorted by (from, action, outcome, to).
    pub edges: Vec<MachineEdge>,
    /// The configuration budget ran out before exploration finished.
    pub truncated: bool,
    /// Some explored branch made the strategy's programs fail.
    pub saw_invalid: bool,
}

impl StateMachine {
    /// GraphViz rendering: one node per state labeled with its choice
    /// probabilities, loss edges dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph policy {\n  rankdir=LR;\n");
        for st in &self.states {
            let probs: Vec<String> = st.action_probs.iter().map(|p| format!("{p:.2}")).collect();
            let shape = if st.id == self.initial { " peripheries=2" } else { "" };
            out.push_str(&format!(
                "  s{} [label=\"s{}\\n[{}]\"{}];\n",
                st.id,
                st.id,
                probs.join(" "),
                shape
            ));
        }
        for e in &self.edges {
            let style = if e.outcome == Outcome::Loss { " style=dashed" } else { "" };
            out.push_str(&format!(
                "  s{} -> s{} [label=\"a{} {} {:.2}\"{}];\n",
                e.from, e.to, e.action, e.outcome, e.probability, style
            ));
        }
        out.push_str("}\n");
        out
    }
}

struct Config {
    mem: Memory,
    dist: ActionDistribution,
    state: usize,
    expanded: bool,
}

struct Explorer<'a> {
    opts: &'a FsmOptions,
    configs: Vec<Config>,
    index: HashMap<Vec<u64>, usize>,
    /// Representative distribution per state, in creation order.
    reps: Vec<ActionDistribution>,
}

impl<'a> Explorer<'a> {
    fn intern(&mut self, mem: Memory, dist: ActionDistribution) -> (usize, bool) {
        let mut key: Vec<u64> = mem.iter().map(|v| v.to_bits()).collect();
        key.extend(dist.probs().iter().map(|p| p.to_bits()));
        if let Some(&i) = self.index.get(&key) {
            return (i, false);
        }
        let state = match self
            .reps
            .iter()
            .position(|r| r.max_distance(&dist) <= self.opts.quantize_tol)
        {
            Some(s) => s,
            None => {
                self.reps.push(dist);
                self.reps.len() - 1
            }
        };
        let i = self.configs.len();
        self.index.insert(key, i);
        self.configs.push(Config {
            mem,
            dist,
            state,
            expanded: false,
        });
        (i, true)
    }
}

/// Enumerates the strategy's reachable configurations on a binary-outcome
/// task with `num_actions` arms and folds them into a state machine. Fails
/// only if the initialization programs do, and then with their error.
pub fn extract_state_machine(
    s: &Strategy,
    num_actions: usize,
    opts: &FsmOptions,
) -> Result<StateMachine, Invalid> {
    assert!(opts.max_depth >= 1);
    let (mut m0, mut d0) = init_strategy(s, num_actions)?;
    if let Some(m) = opts.init_memory {
        m0 = m;
    }
    if let Some(p) = &opts.init_policy {
        assert_eq!(p.len(), num_actions, "initial policy override length");
        d0 = ActionDistribution::from_probs(p);
    }
    let mut ex = Explorer {
        opts,
        configs: Vec::new(),
        index: HashMap::new(),
        reps: Vec::new(),
    };
    let (first, _) = ex.intern(m0, d0);
    let mut frontier = vec![first];
    let mut transitions: Vec<(usize, usize, Outcome, usize)> = Vec::new();
    let mut truncated = false;
    let mut saw_invalid = false;
    for _ in 1..opts.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for ci in frontier {
            ex.configs[ci].expanded = true;
            let mem = ex.configs[ci].mem;
            for action in 0..num_actions {
                if ex.configs[ci].dist.prob(action) < opts.prune_threshold {
                    continue;
                }
                for outcome in [Outcome::Loss, Outcome::Win] {
                    let ctx = StepContext {
                        state: mem,
                        prev_action: action,
                        reward: outcome.reward(),
                        prev_forced: false,
                        num_actions,
                    };
                    match step_strategy(s, &ctx) {
                        Err(_) => saw_invalid = true,
                        Ok((m2, d2)) => {
                            if ex.index.len() >= opts.max_configs
                                && !ex.index.contains_key(&config_key(&m2, &d2))
                            {
                                truncated = true;
                                continue;
                            }
                            let (cj, fresh) = ex.intern(m2, d2);
                            transitions.push((ci, action, outcome, cj));
                            if fresh {
                                next.push(cj);
                            }
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    let machine = assemble(&ex, &transitions, num_actions, opts, truncated, saw_invalid);
    Ok(machine)
}

fn config_key(mem: &Memory, dist: &ActionDistribution) -> Vec<u64> {
    let mut key: Vec<u64> = mem.iter().map(|v| v.to_bits()).collect();
    key.extend(dist.probs().iter().map(|p| p.to_bits()));
    key
}

/// Per-state aggregate: distributions averaged over member configurations,
/// edge mass averaged over the members that were actually expanded.
fn assemble(
    ex: &Explorer,
    transitions: &[(usize, usize, Outcome, usize)],
    num_actions: usize,
    opts: &FsmOptions,
    truncated: bool,
    saw_invalid: bool,
) -> StateMachine {
    let n = ex.reps.len();
    let mut member_count = vec![0usize; n];
    let mut expanded_count = vec![0usize; n];
    let mut mean_probs = vec![vec![0.0f64; num_actions]; n];
    for c in &ex.configs {
        member_count[c.state] += 1;
        if c.expanded {
            expanded_count[c.state] += 1;
        }
        for (a, p) in mean_probs[c.state].iter_mut().enumerate() {
            *p += c.dist.prob(a);
        }
    }
    for (row, &m) in mean_probs.iter_mut().zip(&member_count) {
        for p in row {
            *p /= m as f64;
        }
    }
    // Edge mass between raw states.
    let mut mass: HashMap<(usize, usize, Outcome, usize), f64> = HashMap::new();
    for &(ci, action, outcome, cj) in transitions {
        let key = (ex.configs[ci].state, action, outcome, ex.configs[cj].state);
        *mass.entry(key).or_insert(0.0) += ex.configs[ci].dist.prob(action);
    }
    let mut raw_edges: Vec<(usize, usize, Outcome, usize, f64)> = mass
        .into_iter()
        .filter_map(|((from, action, outcome, to), sum)| {
            let p = sum / expanded_count[from] as f64;
            (p >= opts.prune_threshold).then_some((from, action, outcome, to, p))
        })
        .collect();
    raw_edges.sort_by_key(|e| (e.0, e.1, e.2, e.3));

    let cluster = if opts.collapse {
        collapse(&ex.reps, &raw_edges, opts.collapse_tol)
    } else {
        (0..n).collect()
    };
    // Renumber clusters by their smallest raw state, which puts the
    // cluster holding raw state 0 (the initial configuration) first.
    let mut order: Vec<usize> = Vec::new();
    let mut id_of = vec![usize::MAX; n];
    for raw in 0..n {
        let c = cluster[raw];
        if !order.contains(&c) {
            order.push(c);
        }
        id_of[raw] = order.iter().position(|&x| x == cluster[raw]).unwrap();
    }
    let k = order.len();
    let mut states: Vec<MachineState> = (0..k)
        .map(|id| MachineState {
            id,
            action_probs: vec![0.0; num_actions],
            configs: 0,
        })
        .collect();
    for raw in 0..n {
        let st = &mut states[id_of[raw]];
        st.configs += member_count[raw];
        for (a, p) in st.action_probs.iter_mut().enumerate() {
            *p += mean_probs[raw][a] * member_count[raw] as f64;
        }
    }
    for st in &mut states {
        for p in &mut st.action_probs {
            *p /= st.configs as f64;
        }
    }
    let mut edge_mass: HashMap<(usize, usize, Outcome, usize), f64> = HashMap::new();
    let mut from_weight = vec![0.0f64; k];
    for raw in 0..n {
        from_weight[id_of[raw]] += expanded_count[raw] as f64;
    }
    for &(from, action, outcome, to, p) in &raw_edges {
        let key = (id_of[from], action, outcome, id_of[to]);
        *edge_mass.entry(key).or_insert(0.0) += p * expanded_count[from] as f64;
    }
    let mut edges: Vec<MachineEdge> = edge_mass
        .into_iter()
        .map(|((from, action, outcome, to), num)| MachineEdge {
            from,
            to,
            action,
            outcome,
            probability: num / from_weight[from],
        })
        .collect();
    edges.sort_by(|a, b| {
        (a.from, a.action, a.outcome, a.to).cmp(&(b.from, b.action, b.outcome, b.to))
    });
    StateMachine {
        num_actions,
        initial: 0,
        states,
        edges,
        truncated,
        saw_invalid,
    }
}

/// Merge pass: single-linkage clusters on distribution distance, then
/// split any cluster whose members disagree on where their (action,
/// outcome) edges lead at the cluster level, until stable.
fn collapse(
    reps: &[ActionDistribution],
    raw_edges: &[(usize, usize, Outcome, usize, f64)],
    tol: f64,
) -> Vec<usize> {
    let n = reps.len();
    let mut cluster: Vec<usize> = (0..n).collect();
    fn root(cluster: &mut [usize], mut i: usize) -> usize {
        while cluster[i] != i {
            cluster[i] = cluster[cluster[i]];
            i = cluster[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if reps[i].max_distance(&reps[j]) <= tol {
                let (a, b) = (root(&mut cluster, i), root(&mut cluster, j));
                cluster[a.max(b)] = a.min(b);
            }
        }
    }
    for i in 0..n {
        let r = root(&mut cluster, i);
        cluster[i] = r;
    }
    loop {
        // Signature: the cluster-level targets of every outgoing edge.
        let mut sig: Vec<Vec<(usize, Outcome, usize)>> = vec![Vec::new(); n];
        for &(from, action, outcome, to, _) in raw_edges {
            sig[from].push((action, outcome, cluster[to]));
        }
        for s in &mut sig {
            s.sort_unstable();
            s.dedup();
        }
        type Signature<'a> = (usize, &'a [(usize, Outcome, usize)]);
        let mut next = vec![0usize; n];
        let mut seen: HashMap<Signature, usize> = HashMap::new();
        for i in 0..n {
            let id = seen.len();
            next[i] = *seen.entry((cluster[i], sig[i].as_slice())).or_insert(id);
        }
        if next == cluster {
            return cluster;
        }
        cluster = next;
    }
}
