//! Rounds and loads of the multi-round plans for lines, cycles,
//! Loomis-Whitney, cliques and covering-atom queries.

use mpcjoin::algorithms::{run_algorithm, AlgorithmKind};
use mpcjoin::datagen::{gen_matching, gen_single_heavy};
use mpcjoin::mpc::{oracle_join, ClusterConfig};
use mpcjoin::query::{canonical_query, Family};

fn main() {
    let cases = [
        (Family::L, 4, AlgorithmKind::Line),
        (Family::L, 5, AlgorithmKind::Line),
        (Family::C, 4, AlgorithmKind::Cycle),
        (Family::C, 5, AlgorithmKind::Cycle),
        (Family::LW, 4, AlgorithmKind::Lw),
        (Family::K, 4, AlgorithmKind::Clique),
        (Family::W, 3, AlgorithmKind::CoveringAtom),
    ];
    for (f, k, kind) in cases {
        let q = canonical_query(f, k).unwrap();
        for db in [gen_matching(&q, 2000, 3), gen_single_heavy(&q, 2000, 0, 3)] {
            let r = run_algorithm(kind, &db, &ClusterConfig::new(64, 3)).unwrap();
            let ok = oracle_join(&db).map(|o| r.output.matches(&o)).unwrap_or(false);
            println!(
                "{:<5} {:<13} {:<13} rounds {} max load {:>5} output {:>6} correct {}",
                q.name,
                kind.to_string(),
                db.generator,
                r.rounds,
                r.load.max_tuples,
                r.output.emitted,
                ok
            );
        }
    }
}
