// scratch profile: where does discovery time go at beta=1000? (deleted before commit)
use std::cell::Cell;
use std::collections::HashMap;
use std::time::Instant;

use bandit_programs::dsl::{Grammar, GrammarConfig};
use bandit_programs::mcmc::Chain;
use bandit_programs::seeds;
use bandit_programs::tasks::TaskSpec;
use bandit_programs::value::{RolloutSet, ValueSeeds};

fn main() {
    let spec = TaskSpec::bernoulli2();
    let grammar = Grammar::new(GrammarConfig {
        num_actions: 2,
        deterministic: false,
        prev_forced: false,
        max_literal: 49,
    });
    for beta in [30.0f64, 1000.0] {
        let chain_seed = seeds::chain_seed(0, 0, 0);
        let mut set = RolloutSet::new(&spec, 1000, &ValueSeeds::from_chain(chain_seed));
        let mut cache: HashMap<String, f64> = HashMap::new();
        let evals = Cell::new(0u64);
        let eval_time = Cell::new(0.0f64);
        let sum_len = Cell::new(0u64);
        let evals_r = &evals;
        let eval_time_r = &eval_time;
        let sum_len_r = &sum_len;
        let value_fn = move |s: &bandit_programs::dsl::Strategy| -> f64 {
            let key = s.key();
            if let Some(&v) = cache.get(&key) {
                return v;
            }
            sum_len_r.set(sum_len_r.get() + key.len() as u64);
            let t = Instant::now();
            let v = set.evaluate(s).raw;
            eval_time_r.set(eval_time_r.get() + t.elapsed().as_secs_f64());
            evals_r.set(evals_r.get() + 1);
            cache.insert(key, v);
            v
        };
        let mut chain = Chain::new(grammar.clone(), beta, chain_seed, value_fn);
        let n = 3000u64;
        let t0 = Instant::now();
        chain.run(n);
        let total = t0.elapsed().as_secs_f64();
        let distinct = chain.distinct_valid();
        let accepted = chain.accepted();
        let cur_len = chain.current().to_text().len();
        drop(chain);
        println!(
            "beta {beta}: {n} steps {total:.1}s | evals {} eval_time {:.1}s avg_prog_chars {} | distinct {distinct} accepted {accepted} cur_len {cur_len}",
            evals.get(),
            eval_time.get(),
            if evals.get() > 0 { sum_len.get() / evals.get() } else { 0 },
        );
    }
}
