//! Runs the triangle plan in external memory over a range of memory sizes.

use mpcjoin::algorithms::AlgorithmKind;
use mpcjoin::datagen::gen_agm_worst;
use mpcjoin::em::{run_em, EMConfig};
use mpcjoin::mpc::oracle_join;
use mpcjoin::query::{canonical_query, Family};

fn main() {
    let q = canonical_query(Family::C, 3).unwrap();
    let m = 10_000u64;
    let db = gen_agm_worst(&q, m, 1);
    let oracle = oracle_join(&db).unwrap();
    let b = 20;
    for w in [500u64, 1_000, 2_000, 4_000, 8_000] {
        let em = EMConfig::new(w, b).unwrap();
        match run_em(AlgorithmKind::Triangle, &db, &em, 1) {
            Ok(run) => {
                let reference = (m as f64).powf(1.5) / (b as f64 * (w as f64).sqrt());
                println!(
                    "W={w:<5} p_o={:<4} io_blocks={:<7} ratio {:.2} peak {} correct {}",
                    run.report.p_o,
                    run.report.io_blocks,
                    run.report.io_blocks as f64 / reference,
                    run.report.peak_memory,
                    run.output.matches(&oracle)
                );
            }
            Err(e) => println!("W={w:<5} {e}"),
        }
    }
}
