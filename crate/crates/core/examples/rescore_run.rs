// scratch: re-score a results.jsonl the way the rediscovery check does (deleted before commit)
use bandit_programs::mcmc::ScoredStrategy;
use bandit_programs::tasks::TaskSpec;
use bandit_programs::value::{exact_value, RolloutSet, ValueSeeds};

fn main() {
    let path = std::env::args().nth(1).expect("usage: rescore_run <results.jsonl>");
    let spec = TaskSpec::bernoulli2();
    let mut bank = RolloutSet::new(&spec, 10_000, &ValueSeeds::from_chain(6));
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<ScoredStrategy> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for beta in [30.0, 1000.0] {
        for chain in 0..5usize {
            let mut best = f64::NEG_INFINITY;
            let mut det = 0;
            let mut n = 0;
            for row in rows.iter().filter(|r| r.beta == beta && r.chain == chain) {
                let s = row.strategy();
                let v = if s.is_deterministic() {
                    det += 1;
                    exact_value(&s, &spec).unwrap().normalized
                } else {
                    bank.evaluate(&s).normalized
                };
                n += 1;
                best = best.max(v);
            }
            println!("beta {beta:>6} chain {chain}: {n} rows ({det} det), re-scored best {best:.4}");
        }
    }
}
