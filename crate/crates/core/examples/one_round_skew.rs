//! HyperCube against the skew-aware one-round algorithm on a skewed triangle.

use mpcjoin::algorithms::{run_algorithm, AlgorithmKind};
use mpcjoin::datagen::{gen_matching, gen_single_heavy};
use mpcjoin::mpc::{oracle_join, ClusterConfig};
use mpcjoin::query::{canonical_query, Family};

fn main() {
    let q = canonical_query(Family::C, 3).unwrap();
    let (m, p) = (30_000, 64);
    for db in [gen_matching(&q, m, 1), gen_single_heavy(&q, m, 0, 1)] {
        let oracle = oracle_join(&db).unwrap();
        for kind in [AlgorithmKind::Hc, AlgorithmKind::OneRoundSkew] {
            let r = run_algorithm(kind, &db, &ClusterConfig::new(p, 1)).unwrap();
            println!(
                "{:<13} {:<15} max load {:>6} tuples, bound {:>8.0}, correct {}",
                db.generator,
                kind.to_string(),
                r.load.max_tuples,
                r.bound(&db).tuples,
                r.output.matches(&oracle)
            );
        }
    }
}
