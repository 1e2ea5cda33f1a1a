//! Generates each instance family for the triangle and reports its shape.

use mpcjoin::datagen::{gen_agm_worst, gen_coin_flip, gen_lowerbound_matching, gen_matching, gen_single_heavy};
use mpcjoin::mpc::oracle_join;
use mpcjoin::query::{canonical_query, Family};

fn main() {
    let q = canonical_query(Family::C, 3).unwrap();
    let m = 10_000;
    let dbs = [
        gen_matching(&q, m, 1),
        gen_single_heavy(&q, m, 0, 1),
        gen_agm_worst(&q, m, 1),
        gen_coin_flip(&q, m, 1),
        gen_lowerbound_matching(&q, &[m, m, m], 0b001, 1),
    ];
    for db in &dbs {
        let sizes: Vec<usize> = db.relations.iter().map(|r| r.len()).collect();
        let freq: Vec<usize> = db.relations.iter().map(|r| r.max_frequency(0)).collect();
        let out = oracle_join(db).map(|o| o.len() / 3).unwrap_or(0);
        println!("{:<24} sizes {:?} max first-column degree {:?} output {}", db.generator, sizes, freq, out);
    }
    let dir = std::env::temp_dir().join("mpcjoin-example-matching");
    dbs[0].write_dir(&dir).expect("writable temp dir");
    println!("wrote {}", dir.display());
}
