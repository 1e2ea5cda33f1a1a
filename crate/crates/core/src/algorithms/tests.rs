use super::*;
use crate::datagen::{gen_agm_worst, gen_coin_flip, gen_matching, gen_single_heavy};
use crate::datagen::RelationInstance;
use crate::mpc::{oracle_join, oracle_join_guarded};
use crate::query::{canonical_query, parse_query, Family, Query};
use crate::rng::Stream;

/// Random relations where a quarter of the values come from a few hot values.
fn skewed(q: &Query, m: u64, seed: u64) -> DatabaseInstance {
    let rels = q
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let mut s = Stream::new(seed, j as u64, 0);
            let mut data = Vec::new();
            for _ in 0..m {
                for _ in 0..a.arity() {
                    data.push(if s.below(4) == 0 { s.below(4) + 1 } else { s.below(m) + 1 });
                }
            }
            RelationInstance::from_flat(&a.relation, a.arity(), data)
        })
        .collect();
    DatabaseInstance::new(q.clone(), rels, seed, "skewed", m)
}

/// Matching with variable `a` fixed to 1 and `b` fixed to 2 in every atom.
fn two_heavy(q: &Query, m: u64, a: usize, b: usize) -> DatabaseInstance {
    let mut db = gen_matching(q, m, 9);
    for (atom, r) in db.query.atoms.iter().zip(db.relations.iter_mut()) {
        let mut data = r.data.clone();
        for t in data.chunks_exact_mut(r.arity) {
            for (c, &v) in atom.vars.iter().enumerate() {
                if v == a {
                    t[c] = 1;
                } else if v == b {
                    t[c] = 2;
                }
            }
        }
        *r = RelationInstance::from_flat(&r.relation, r.arity, data);
    }
    db
}

fn check(kind: AlgorithmKind, db: &DatabaseInstance, p: usize) -> AlgorithmResult {
    let res = run_algorithm(kind, db, &ClusterConfig::new(p, 11)).unwrap_or_else(|e| panic!("{kind} on {}: {e}", db.query));
    let oracle = oracle_join(db).unwrap();
    assert!(res.output.matches(&oracle), "{kind} on {} ({}) p={p}\n{}", db.query, db.generator, res.plan);
    assert_eq!(res.output.duplicates(), Some(0), "{kind} emitted duplicates");
    res
}

fn instances(f: Family, k: usize, m: u64) -> Vec<DatabaseInstance> {
    let q = canonical_query(f, k).unwrap();
    let mut v = vec![gen_matching(&q, m, 1), gen_coin_flip(&q, m, 2), skewed(&q, m, 3), skewed(&q, m, 4)];
    for var in 0..q.k().min(3) {
        v.push(gen_single_heavy(&q, m, var, 5 + var as u64));
    }
    v.retain(|db| oracle_join_guarded(db, 200_000).is_ok());
    v
}

#[test]
fn heavy_hitter_map() {
    let q = canonical_query(Family::C, 3).unwrap();
    let db = gen_matching(&q, 100, 1);
    assert_eq!(heavy_hitters(&db.relations[0], 2).count(), 0);
    let db = gen_single_heavy(&q, 640, 0, 1);
    let s1 = &db.relations[0];
    let hh = heavy_hitters(s1, 640 / 64);
    let col = db.query.atoms[0].vars.iter().position(|&v| v == 0).unwrap();
    assert_eq!(hh.on(&[col]).unwrap().len(), 1);
    assert_eq!(hh.on(&[1 - col]).unwrap().len(), 0);
}

#[test]
fn one_round_variants_match_oracle() {
    for db in instances(Family::C, 3, 400) {
        check(AlgorithmKind::OneRoundSkew, &db, 27);
    }
    for db in instances(Family::L, 3, 300) {
        check(AlgorithmKind::OneRoundSkew, &db, 8);
    }
    let q = canonical_query(Family::C, 3).unwrap();
    let r = check(AlgorithmKind::Hc, &gen_matching(&q, 500, 4), 64);
    assert_eq!(r.rounds, 1);
}

#[test]
fn two_atom_joins() {
    let q = parse_query("q(x,y,z) :- S1(x,z), S2(z,y)").unwrap();
    let m = gen_matching(&q, 500, 1);
    check(AlgorithmKind::JoinOneSided, &m, 16);
    // heavy on z only in S2 would violate nothing; heavy in S1 is rejected
    let h = gen_single_heavy(&q, 500, 2, 1);
    assert!(matches!(run_algorithm(AlgorithmKind::JoinOneSided, &h, &ClusterConfig::new(16, 1)), Err(PlanError::Precondition(_))));
    let sq = parse_query("q(x,y) :- R(x), S(x,y)").unwrap();
    for db in [gen_matching(&sq, 300, 1), gen_single_heavy(&sq, 300, 0, 2), gen_coin_flip(&sq, 300, 3)] {
        check(AlgorithmKind::SemiJoin, &db, 8);
    }
}

#[test]
fn triangle_and_cycles() {
    for db in instances(Family::C, 3, 500) {
        let r = check(AlgorithmKind::Triangle, &db, 27);
        assert!(r.rounds <= 2);
    }
    for k in 4..=6 {
        let q = canonical_query(Family::C, k).unwrap();
        let mut dbs = instances(Family::C, k, 300);
        dbs.extend((1..k).map(|b| two_heavy(&q, 300, 0, b)));
        dbs.retain(|db| oracle_join_guarded(db, 200_000).is_ok());
        for db in dbs {
            let r = check(AlgorithmKind::Cycle, &db, 64);
            assert!(r.rounds <= k.div_ceil(2), "C{k} used {} rounds", r.rounds);
        }
    }
}

#[test]
fn lines() {
    for k in 2..=6 {
        let q = canonical_query(Family::L, k).unwrap();
        let mut dbs = instances(Family::L, k, 300);
        dbs.extend([two_heavy(&q, 300, 1, 3), two_heavy(&q, 300, 1, 2)]);
        dbs.retain(|db| oracle_join_guarded(db, 200_000).is_ok());
        for db in dbs {
            let r = check(AlgorithmKind::Line, &db, 64);
            assert!(r.rounds <= k / 2, "L{k} used {} rounds", r.rounds);
        }
    }
}

#[test]
fn lw_clique_covering() {
    for k in 3..=4 {
        for db in instances(Family::LW, k, 300) {
            check(AlgorithmKind::Lw, &db, 27);
        }
        let q = canonical_query(Family::K, k).unwrap();
        let mut dbs = instances(Family::K, k, 200);
        dbs.push(two_heavy(&q, 200, 0, 1));
        for db in dbs {
            let r = check(AlgorithmKind::Clique, &db, 27);
            assert!(r.rounds < k);
        }
        for db in instances(Family::W, k, 300) {
            let r = check(AlgorithmKind::CoveringAtom, &db, 8);
            assert_eq!(r.rounds, 2);
        }
    }
    let q = parse_query("q(x,y) :- R(x,y)").unwrap();
    let r = check(AlgorithmKind::CoveringAtom, &gen_matching(&q, 100, 1), 8);
    assert_eq!(r.load.max_tuples, 0);
    let c = canonical_query(Family::C, 4).unwrap();
    assert!(matches!(build_plan(AlgorithmKind::CoveringAtom, &gen_matching(&c, 10, 1), 4, 1), Err(PlanError::NoCoveringAtom)));
}

#[test]
fn agm_worst_triangle() {
    let q = canonical_query(Family::C, 3).unwrap();
    let db = gen_agm_worst(&q, 400, 1);
    check(AlgorithmKind::Triangle, &db, 27);
    check(AlgorithmKind::OneRoundSkew, &db, 27);
}


#[test]
fn even_cycle_pair_branches() {
    // adjacent pair in C4, pair at distance three in C6
    for (k, b) in [(4, 1), (6, 3), (6, 1)] {
        let q = canonical_query(Family::C, k).unwrap();
        let db = two_heavy(&q, 200, 0, b);
        let r = check(AlgorithmKind::Cycle, &db, 64);
        assert!(r.plan.contains(&format!("with [(0, 1), ({b}, 2)] (classified)")), "{}", r.plan);
        assert!(r.rounds <= k / 2);
    }
}


#[test]
fn clique_with_heavy_apex() {
    // the oracle must not expand the three atoms at the heavy variable first
    let q = canonical_query(Family::K, 4).unwrap();
    let db = gen_single_heavy(&q, 2000, 0, 3);
    let oracle = oracle_join_guarded(&db, 200_000).unwrap();
    assert_eq!(oracle.len(), 4);
    check(AlgorithmKind::Clique, &db, 64);
}
