mod common;

use common::{brute_force_join, psi_oracle, random_db, rho_oracle, tau_oracle};
use mpcjoin::algorithms::{hc_one_round, run_algorithm, AlgorithmKind};
use mpcjoin::analyzer::{psi_star, psi_star_recursive, rho_star, round_shares, share_lp, tau_star, Sizes};
use mpcjoin::datagen::{gen_coin_flip, gen_matching, random_query};
use mpcjoin::em::{run_em, EMConfig};
use mpcjoin::mpc::{oracle_join, ClusterConfig};
use mpcjoin::query::{parse_query, Query};
use mpcjoin::rational::{floor_pow, frac, to_f64};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_numbers_match_vertex_enumeration(seed in any::<u64>()) {
        let q = random_query(seed, 5, 6, 3);
        let (tau, tw) = tau_star(&q);
        let (rho, rw) = rho_star(&q);
        let (psi, pw) = psi_star(&q);
        prop_assert!(close(to_f64(&tau), tau_oracle(&q)), "{q}: tau {tau}");
        prop_assert!(close(to_f64(&rho), rho_oracle(&q)), "{q}: rho {rho}");
        prop_assert!(close(to_f64(&psi), psi_oracle(&q)), "{q}: psi {psi}");
        prop_assert!(tw.is_valid_for(&q) && rw.is_valid_for(&q) && pw.is_valid_for(&q));
        prop_assert_eq!(tw.total(), tau.clone());
        prop_assert_eq!(pw.total(), psi.clone());
    }

    #[test]
    fn quasi_packing_dominates(seed in any::<u64>()) {
        let q = random_query(seed, 6, 8, 3);
        let psi = psi_star(&q).0;
        prop_assert!(psi >= tau_star(&q).0 && psi >= rho_star(&q).0);
        prop_assert_eq!(psi_star_recursive(&q), psi);
    }

    #[test]
    fn rounded_shares_fit(num in 0i64..12, p in 1u64..5000) {
        let e = frac(num, 12);
        let rest = frac(12 - num, 12);
        let s = round_shares(&[e.clone(), rest], p);
        prop_assert!(s.iter().all(|&x| x >= 1));
        prop_assert!(s.iter().product::<u64>() <= p);
        let f = floor_pow(p, &e);
        // largest integer whose 12th power does not exceed p^num
        let pow = |x: u64| (x as u128).checked_pow(12);
        let target = (p as u128).checked_pow(num as u32);
        if let (Some(a), Some(t)) = (pow(f), target) {
            prop_assert!(a <= t);
            if let Some(b) = pow(f + 1) { prop_assert!(b > t); }
        }
    }

    #[test]
    fn share_lp_uses_at_most_p(seed in any::<u64>(), p in 2u64..2000) {
        let q = random_query(seed, 5, 5, 3);
        let sizes = Sizes::uniform(q.l(), 10_000);
        let alloc = share_lp(&q, &sizes, p, 0);
        prop_assert!(alloc.product() <= p);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), m in 1u64..300) {
        let q = parse_query("q(a,b,c) :- R(a,b), S(b,c)").unwrap();
        prop_assert_eq!(gen_matching(&q, m, seed).relations, gen_matching(&q, m, seed).relations);
        prop_assert_eq!(gen_coin_flip(&q, m, seed).relations, gen_coin_flip(&q, m, seed).relations);
        let db = gen_matching(&q, m, seed);
        for r in &db.relations {
            for c in 0..2 {
                let mut col: Vec<u64> = r.tuples().map(|t| t[c]).collect();
                col.sort_unstable();
                prop_assert_eq!(col, (1..=m).collect::<Vec<_>>());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_matches_brute_force(seed in any::<u64>()) {
        let q = random_query(seed, 4, 4, 3);
        let db = random_db(&q, 20, 4, seed);
        prop_assert_eq!(oracle_join(&db).unwrap(), brute_force_join(&db));
    }

    #[test]
    fn one_round_algorithms_are_exact(seed in any::<u64>(), p in 1usize..40) {
        let q = random_query(seed, 4, 4, 3);
        let db = random_db(&q, 60, 6, seed);
        let expected = brute_force_join(&db);
        let cfg = ClusterConfig::new(p, seed);
        let hc = hc_one_round(&db, &cfg, 0).unwrap();
        prop_assert!(hc.output.matches(&expected));
        prop_assert_eq!(hc.output.duplicates(), Some(0));
        let skew = run_algorithm(AlgorithmKind::OneRoundSkew, &db, &cfg).unwrap();
        prop_assert!(skew.output.matches(&expected));
        prop_assert_eq!(skew.output.duplicates(), Some(0));
        prop_assert_eq!(skew.rounds, 1);
    }

    #[test]
    fn multi_round_plans_are_exact(seed in any::<u64>(), p in 2usize..70, fam in 0usize..4) {
        let (text, kind) = [
            ("q(a,b,c) :- R(a,b), S(b,c), T(c,a)", AlgorithmKind::Triangle),
            ("q(a,b,c,d,e) :- R(a,b), S(b,c), T(c,d), U(d,e)", AlgorithmKind::Line),
            ("q(a,b,c,d) :- R(a,b), S(b,c), T(c,d), U(d,a)", AlgorithmKind::Cycle),
            ("q(a,b,c,d) :- R(a,b,c), S(b,c,d), T(a,c,d), U(a,b,d)", AlgorithmKind::Lw),
        ][fam];
        let q: Query = parse_query(text).unwrap();
        let db = random_db(&q, 80, 7, seed);
        let expected = brute_force_join(&db);
        let r = run_algorithm(kind, &db, &ClusterConfig::new(p, seed)).unwrap();
        prop_assert!(r.output.matches(&expected), "{}", r.plan);
        prop_assert_eq!(r.output.duplicates(), Some(0));
    }

    #[test]
    fn external_memory_replays_the_cluster(seed in any::<u64>(), w in 60u64..400, b in 1u64..8) {
        let q = parse_query("q(a,b,c) :- R(a,b), S(b,c), T(c,a)").unwrap();
        let db = random_db(&q, 40, 8, seed);
        let em = EMConfig::new(w, b).unwrap();
        match run_em(AlgorithmKind::Triangle, &db, &em, seed) {
            Ok(run) => {
                prop_assert!(run.output.matches(&brute_force_join(&db)));
                prop_assert!(run.report.peak_memory <= w);
                prop_assert_eq!(run.report.phases.iter().map(|(_, n)| n).sum::<u64>(), run.report.io_blocks);
                let mpc = run_algorithm(AlgorithmKind::Triangle, &db, &ClusterConfig::new(run.report.p_o, seed)).unwrap();
                prop_assert_eq!(run.output.tuples, mpc.output.tuples);
            }
            Err(e) => {
                let s = e.to_string();
                prop_assert!(s.contains("W too small") || s.contains("fan-out"), "{}", s);
            }
        }
    }
}
