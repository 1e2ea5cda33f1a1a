#![allow(dead_code)]

use mpcjoin::datagen::{sort_dedup, DatabaseInstance, RelationInstance};
use mpcjoin::query::{Family, Query};
use mpcjoin::rational::{frac, int, Rational};
use mpcjoin::rng::Stream;

/// Solves `n×n` systems by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-9 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `max c·x` subject to `A x ≤ b`, `x ≥ 0`, by trying every basis: the
/// optimum of a bounded LP over a pointed polyhedron sits at a vertex.
pub fn vertex_lp_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for i in 0..n {
        let mut r = vec![0.0; n];
        r[i] = -1.0;
        rows.push((r, 0.0));
    }
    let mut best = f64::NEG_INFINITY;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let sys: Vec<Vec<f64>> = pick.iter().map(|&i| rows[i].0.clone()).collect();
        let rhs: Vec<f64> = pick.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve(sys, rhs) {
            let feasible = rows.iter().all(|(r, bb)| r.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= bb + 1e-9);
            if feasible {
                best = best.max(c.iter().zip(&x).map(|(p, q)| p * q).sum());
            }
        }
        if !next_combination(&mut pick, rows.len()) {
            break;
        }
    }
    best
}

fn incidence(q: &Query, x_mask: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let atoms: Vec<usize> = (0..q.l()).filter(|&j| q.atom_mask(j) & !x_mask != 0).collect();
    let rows = (0..q.k())
        .filter(|v| x_mask >> v & 1 == 0)
        .map(|v| atoms.iter().map(|&j| if q.atoms[j].vars.contains(&v) { 1.0 } else { 0.0 }).collect())
        .collect();
    (atoms, rows)
}

/// Fractional edge packing number of the residual at `x_mask`: atoms inside
/// X are dropped, vertex constraints only for variables outside X.
pub fn tau_oracle_x(q: &Query, x_mask: u64) -> f64 {
    let (atoms, rows) = incidence(q, x_mask);
    if atoms.is_empty() {
        return 0.0;
    }
    let b = vec![1.0; rows.len()];
    vertex_lp_max(&vec![1.0; atoms.len()], &rows, &b)
}

pub fn tau_oracle(q: &Query) -> f64 {
    tau_oracle_x(q, 0)
}

/// Fractional edge cover number: `min Σu` with every variable covered.
pub fn rho_oracle(q: &Query) -> f64 {
    let (atoms, rows) = incidence(q, 0);
    let neg: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    -vertex_lp_max(&vec![-1.0; atoms.len()], &neg, &vec![-1.0; neg.len()])
}

pub fn psi_oracle(q: &Query) -> f64 {
    (0..1u64 << q.k()).map(|x| tau_oracle_x(q, x)).fold(0.0, f64::max)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

/// The closed forms of the published table: `(τ*, ρ*, ψ*)`.
pub fn table1(f: Family, k: usize) -> (Rational, Rational, Rational) {
    let k = k as i64;
    let c = |a: i64, b: i64| int(ceil_div(a, b));
    match f {
        Family::T => (int(1), int(k), int(k)),
        Family::SP => (int(k), int(k + 1), int(k + 1)),
        Family::K => (frac(k, 2), frac(k, 2), int(k - 1)),
        Family::W => (int(k), int(1), int(k)),
        Family::L => (c(k, 2), c(k + 1, 2), c(2 * k, 3)),
        Family::Lstar => (c(k, 2), c(k + 1, 2), c(2 * k + 1, 3)),
        Family::Ldagger => (c(k + 1, 2), c(k + 1, 2), c(2 * k + 2, 3)),
        Family::C => (frac(k, 2), frac(k, 2), c(2 * (k - 1), 3)),
        Family::LW => (frac(k, k - 1), frac(k, k - 1), int(2)),
    }
}

/// `size` random tuples per relation over `1..=domain`, deduplicated.
pub fn random_db(q: &Query, size: u64, domain: u64, seed: u64) -> DatabaseInstance {
    let relations = q
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let mut s = Stream::new(seed, j as u64, 99);
            let data: Vec<u64> = (0..size * a.arity() as u64).map(|_| 1 + s.below(domain)).collect();
            RelationInstance::from_flat(&a.relation, a.arity(), sort_dedup(data, a.arity()))
        })
        .collect();
    DatabaseInstance::new(q.clone(), relations, seed, "random", domain)
}

/// Every assignment of `1..=domain` to the variables that satisfies all
/// atoms, in lexicographic order. Independent of the join code.
pub fn brute_force_join(db: &DatabaseInstance) -> Vec<u64> {
    let q = &db.query;
    let k = q.k();
    let sets: Vec<std::collections::HashSet<Vec<u64>>> = db.relations.iter().map(|r| r.tuples().map(<[u64]>::to_vec).collect()).collect();
    let mut out = Vec::new();
    let mut t = vec![1u64; k];
    loop {
        if q.atoms.iter().zip(&sets).all(|(a, s)| s.contains(&a.vars.iter().map(|&v| t[v]).collect::<Vec<_>>())) {
            out.extend_from_slice(&t);
        }
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if t[i] < db.n {
                t[i] += 1;
                break;
            }
            t[i] = 1;
        }
    }
}
