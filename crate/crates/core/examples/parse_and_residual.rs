//! Parses a query, prints its residual queries and the share LP for each.

use mpcjoin::analyzer::{psi_star, share_lp, tau_star, Sizes};
use mpcjoin::query::parse_query;
use mpcjoin::rational::render;

fn main() {
    let text = std::env::args().nth(1).unwrap_or_else(|| "q(x,y,z) :- R(x,y), S(y,z), T(z,x)".to_string());
    let q = match parse_query(&text) {
        Ok(q) => q,
        Err(e) => {
            eprintln!("parse error: {e}");
            std::process::exit(2);
        }
    };
    println!("{q}");
    let (psi, w) = psi_star(&q);
    println!("psi* = {} (residual over {{{}}})", render(&psi), w.residual_witness.unwrap_or_default().join(","));
    let sizes = Sizes::uniform(q.l(), 1 << 20);
    for mask in 0..q.all_vars_mask() {
        let Some(r) = q.residual_mask(mask) else { continue };
        let alloc = share_lp(&q, &sizes, 64, mask);
        println!(
            "X={{{}}}: {r}  tau* = {}  shares {}",
            q.mask_to_names(mask).join(","),
            render(&tau_star(&r).0),
            alloc.render()
        );
    }
}
