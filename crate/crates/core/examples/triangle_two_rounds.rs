//! The two-round triangle plan on a heavy-hitter instance, with its plan.

use mpcjoin::algorithms::{run_algorithm, AlgorithmKind};
use mpcjoin::datagen::gen_single_heavy;
use mpcjoin::mpc::{oracle_join, ClusterConfig};
use mpcjoin::query::{canonical_query, Family};

fn main() {
    let q = canonical_query(Family::C, 3).unwrap();
    let db = gen_single_heavy(&q, 30_000, 0, 1);
    let cfg = ClusterConfig::new(64, 1);
    let two = run_algorithm(AlgorithmKind::Triangle, &db, &cfg).unwrap();
    let one = run_algorithm(AlgorithmKind::OneRoundSkew, &db, &cfg).unwrap();
    print!("{}", two.plan);
    println!("rounds {}  max load {}  (one round: {})", two.rounds, two.load.max_tuples, one.load.max_tuples);
    println!("matches reference join: {}", two.output.matches(&oracle_join(&db).unwrap()));
    println!("per-round max load: {:?}", two.load.round_max_tuples);
}
