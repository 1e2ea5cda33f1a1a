//! Prints τ*, ρ* and ψ* for the standard query families.

use mpcjoin::analyzer::{psi_star, rho_star, tau_star};
use mpcjoin::query::{canonical_query, Family};
use mpcjoin::rational::render;

fn main() {
    println!("{:<8} {:>2} {:>8} {:>8} {:>8}", "family", "k", "tau*", "rho*", "psi*");
    for f in Family::ALL {
        for k in f.min_k().max(2)..=6 {
            let q = canonical_query(f, k).expect("valid family size");
            println!(
                "{:<8} {:>2} {:>8} {:>8} {:>8}",
                f.name(),
                k,
                render(&tau_star(&q).0),
                render(&rho_star(&q).0),
                render(&psi_star(&q).0)
            );
        }
    }
}
