//! Exact hypergraph quantities: fractional edge packings (τ*), covers (ρ*),
//! quasi-packings (ψ*), HyperCube share exponents and the packing load bound.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};

use crate::lp::{LinearProgram, Relation, Sense};
use crate::query::{Family, Query};
use crate::rational::{floor_pow, log_ratio, render, render_with_decimal, to_f64, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingKind {
    Packing,
    Cover,
    QuasiPacking,
}

/// One weight per atom of the query it was computed for (atom order).
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalWeighting {
    pub kind: WeightingKind,
    pub weights: Vec<(String, Rational)>,
    pub residual_witness: Option<Vec<String>>,
}

impl FractionalWeighting {
    pub fn total(&self) -> Rational {
        self.weights.iter().map(|(_, w)| w.clone()).sum()
    }

    pub fn weight(&self, relation: &str) -> Option<&Rational> {
        self.weights.iter().find(|(r, _)| r == relation).map(|(_, w)| w)
    }

    /// Re-checks the constraint system of `kind` against `q` exactly.
    pub fn is_valid_for(&self, q: &Query) -> bool {
        if self.weights.len() != q.l() || self.weights.iter().any(|(_, w)| w.is_negative()) {
            return false;
        }
        let x_mask = match (&self.kind, &self.residual_witness) {
            (WeightingKind::QuasiPacking, Some(x)) => match q.names_to_mask(x) {
                Ok(m) => m,
                Err(_) => return false,
            },
            (WeightingKind::QuasiPacking, None) => 0,
            _ => 0,
        };
        for (j, (rel, w)) in self.weights.iter().enumerate() {
            if q.atoms[j].relation != *rel {
                return false;
            }
            if self.kind == WeightingKind::QuasiPacking && q.atom_mask(j) & !x_mask == 0 && !w.is_zero() {
                return false;
            }
        }
        for v in 0..q.k() {
            if x_mask >> v & 1 == 1 {
                continue;
            }
            let s: Rational = q.atoms_of(v).into_iter().map(|j| self.weights[j].1.clone()).sum();
            let ok = match self.kind {
                WeightingKind::Packing | WeightingKind::QuasiPacking => s <= Rational::one(),
                WeightingKind::Cover => s >= Rational::one(),
            };
            if !ok {
                return false;
            }
        }
        true
    }

    pub fn render(&self) -> String {
        let parts: Vec<String> = self.weights.iter().map(|(r, w)| format!("{r}={}", render(w))).collect();
        parts.join(",")
    }
}

fn incidence_lp(q: &Query, sense: Sense, relation: Relation) -> LinearProgram {
    let mut lp = LinearProgram::new(sense, vec![Rational::one(); q.l()]);
    for v in 0..q.k() {
        let row = (0..q.l())
            .map(|j| if q.atoms[j].vars.contains(&v) { Rational::one() } else { Rational::zero() })
            .collect();
        lp.constrain(row, relation, Rational::one());
    }
    lp
}

fn weighting(q: &Query, kind: WeightingKind, x: Vec<Rational>) -> FractionalWeighting {
    FractionalWeighting {
        kind,
        weights: q.atoms.iter().map(|a| a.relation.clone()).zip(x).collect(),
        residual_witness: None,
    }
}

/// Maximum fractional edge packing.
pub fn tau_star(q: &Query) -> (Rational, FractionalWeighting) {
    let s = incidence_lp(q, Sense::Maximize, Relation::Le).solve_lexmin().expect("packing LP is bounded and feasible");
    (s.value, weighting(q, WeightingKind::Packing, s.x))
}

/// Minimum fractional edge cover.
pub fn rho_star(q: &Query) -> (Rational, FractionalWeighting) {
    let s = incidence_lp(q, Sense::Minimize, Relation::Ge).solve_lexmin().expect("full queries always have a cover");
    (s.value, weighting(q, WeightingKind::Cover, s.x))
}

fn hypergraph_key(q: &Query) -> Vec<u64> {
    let mut e: Vec<u64> = (0..q.l()).map(|j| q.atom_mask(j)).collect();
    e.sort_unstable();
    e
}

/// Edge quasi-packing number: max over `X ⊊ vars(q)` of τ*(q_X). Ties go to
/// the numerically smallest variable bitmask, so `X = ∅` wins whenever τ*
/// is already optimal.
pub fn psi_star(q: &Query) -> (Rational, FractionalWeighting) {
    assert!(q.k() <= 24, "subset enumeration over {} variables", q.k());
    let mut memo: HashMap<Vec<u64>, Rational> = HashMap::new();
    let mut best: Option<(Rational, u64)> = None;
    for mask in 0..q.all_vars_mask() {
        let r = q.residual_mask(mask).expect("mask is a strict subset");
        let t = memo.entry(hypergraph_key(&r)).or_insert_with(|| tau_star(&r).0).clone();
        if best.as_ref().is_none_or(|(b, _)| t > *b) {
            best = Some((t, mask));
        }
    }
    let (value, mask) = best.expect("k >= 1");
    let residual = q.residual_mask(mask).expect("strict subset");
    let (_, inner) = tau_star(&residual);
    let weights = q
        .atoms
        .iter()
        .map(|a| (a.relation.clone(), inner.weight(&a.relation).cloned().unwrap_or_else(Rational::zero)))
        .collect();
    let w = FractionalWeighting {
        kind: WeightingKind::QuasiPacking,
        weights,
        residual_witness: Some(q.mask_to_names(mask)),
    };
    (value, w)
}

/// ψ* via the recursion ψ*(q) = max(τ*(q), max_x ψ*(q_{x})), memoized on the
/// removed-variable set. Used to cross-check [`psi_star`].
pub fn psi_star_recursive(q: &Query) -> Rational {
    fn go(q: &Query, mask: u64, memo: &mut HashMap<u64, Rational>) -> Rational {
        if let Some(v) = memo.get(&mask) {
            return v.clone();
        }
        let r = q.residual_mask(mask).expect("strict subset");
        let mut best = tau_star(&r).0;
        for v in 0..q.k() {
            let bit = 1u64 << v;
            if mask & bit == 0 && (mask | bit) != q.all_vars_mask() {
                let sub = go(q, mask | bit, memo);
                if sub > best {
                    best = sub;
                }
            }
        }
        memo.insert(mask, best.clone());
        best
    }
    go(q, 0, &mut HashMap::new())
}

/// Relation sizes in bits plus the bit width of one tuple of each relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sizes {
    pub bits: Vec<u64>,
    pub tuple_bits: Vec<u64>,
}

impl Sizes {
    /// Every relation has `m` bits and unit-width tuples.
    pub fn uniform(l: usize, m: u64) -> Sizes {
        Sizes { bits: vec![m; l], tuple_bits: vec![1; l] }
    }

    pub fn new(bits: Vec<u64>, tuple_bits: Vec<u64>) -> Sizes {
        assert_eq!(bits.len(), tuple_bits.len());
        Sizes { bits, tuple_bits }
    }

    /// Sizes for the atoms of `r` (a residual of `q`), matched by relation name.
    pub fn restrict(&self, q: &Query, r: &Query) -> Sizes {
        let idx: Vec<usize> = r.atoms.iter().map(|a| q.atom_index(&a.relation).expect("residual atom")).collect();
        Sizes {
            bits: idx.iter().map(|&j| self.bits[j]).collect(),
            tuple_bits: idx.iter().map(|&j| self.tuple_bits[j]).collect(),
        }
    }
}

/// `μ_j = log_p M_j`, exact when possible. The flag is set if any entry had to
/// be approximated.
pub fn log_sizes(bits: &[u64], p: u64) -> (Vec<Rational>, bool) {
    let mut approx = false;
    let mu = bits
        .iter()
        .map(|&m| {
            let (r, a) = log_ratio(m.max(1), p);
            approx |= a;
            r
        })
        .collect();
    (mu, approx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareAllocation {
    pub vars: Vec<String>,
    pub exponents: Vec<Rational>,
    pub shares: Vec<u64>,
    pub lambda: Rational,
    pub p: u64,
    pub approximated: bool,
}

impl ShareAllocation {
    pub fn product(&self) -> u64 {
        self.shares.iter().product()
    }

    pub fn render(&self) -> String {
        let parts: Vec<String> = self.vars.iter().zip(&self.shares).map(|(v, s)| format!("{v}={s}")).collect();
        parts.join(";")
    }

    pub fn render_exponents(&self) -> String {
        let parts: Vec<String> =
            self.vars.iter().zip(&self.exponents).map(|(v, e)| format!("{v}={}", render(e))).collect();
        parts.join(";")
    }
}

/// HyperCube share exponents for the residual query `q_X`: minimize λ subject
/// to `Σ e_i ≤ 1` and `Σ_{i ∈ S_j \ X} e_i + λ ≥ μ_j` for every atom that keeps
/// a variable. Among optimal λ, the total exponent is maximized and the rest of
/// the tie is broken lexicographically. Exponents are then rounded to integer
/// shares with product at most `p`.
pub fn share_lp(q: &Query, sizes: &Sizes, p: u64, x_mask: u64) -> ShareAllocation {
    assert!(p >= 1);
    assert_eq!(sizes.bits.len(), q.l());
    let k = q.k();
    if p == 1 {
        return ShareAllocation {
            vars: q.vars.clone(),
            exponents: vec![Rational::zero(); k],
            shares: vec![1; k],
            lambda: Rational::zero(),
            p,
            approximated: false,
        };
    }
    let (mu, approximated) = log_sizes(&sizes.bits, p);
    let free: Vec<usize> = (0..k).filter(|i| x_mask >> i & 1 == 0).collect();
    let n = free.len() + 1; // last column is λ
    let col = |v: usize| free.iter().position(|&f| f == v);
    let mut base = LinearProgram::new(Sense::Minimize, {
        let mut c = vec![Rational::zero(); n];
        c[n - 1] = Rational::one();
        c
    });
    let mut row = vec![Rational::one(); n];
    row[n - 1] = Rational::zero();
    base.constrain(row, Relation::Le, Rational::one());
    for (j, a) in q.atoms.iter().enumerate() {
        let cols: Vec<usize> = a.vars.iter().filter_map(|&v| col(v)).collect();
        if cols.is_empty() {
            continue;
        }
        let mut row = vec![Rational::zero(); n];
        for c in cols {
            row[c] = Rational::one();
        }
        row[n - 1] = Rational::one();
        base.constrain(row, Relation::Ge, mu[j].clone());
    }
    let lambda = base.solve().expect("share LP is feasible and bounded").value;
    let mut lp2 = base.clone();
    let mut fix = vec![Rational::zero(); n];
    fix[n - 1] = Rational::one();
    lp2.constrain(fix, Relation::Eq, lambda.clone());
    lp2.sense = Sense::Maximize;
    lp2.objective = {
        let mut c = vec![Rational::one(); n];
        c[n - 1] = Rational::zero();
        c
    };
    let sol = lp2.solve_lexmin().expect("restricted share LP is feasible");
    let mut exponents = vec![Rational::zero(); k];
    for (c, &v) in free.iter().enumerate() {
        exponents[v] = sol.x[c].clone();
    }
    let shares = round_shares(&exponents, p);
    ShareAllocation { vars: q.vars.clone(), exponents, shares, lambda, p, approximated }
}

/// Floors each `p^{e_i}` and then hands out unit increments, largest
/// `p^{e_i} / p_i` first, while the product stays within `p`.
pub fn round_shares(exponents: &[Rational], p: u64) -> Vec<u64> {
    let mut shares: Vec<u64> = exponents.iter().map(|e| floor_pow(p, e).max(1)).collect();
    let targets: Vec<f64> = exponents.iter().map(|e| (p as f64).powf(to_f64(e))).collect();
    loop {
        let prod: u128 = shares.iter().map(|&s| s as u128).product();
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..shares.len() {
            if exponents[i].is_zero() {
                continue;
            }
            if prod / shares[i] as u128 * (shares[i] as u128 + 1) > p as u128 {
                continue;
            }
            let deficit = targets[i] / shares[i] as f64;
            if pick.is_none_or(|(_, d)| deficit > d) {
                pick = Some((i, deficit));
            }
        }
        match pick {
            Some((i, _)) => shares[i] += 1,
            None => return shares,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadBound {
    /// `log_p` of the load in bits.
    pub exponent: Rational,
    pub bits: f64,
    pub tuples: f64,
    /// Width in bits of one tuple of the governing relation.
    pub tuple_bits: u64,
    pub witness: FractionalWeighting,
    pub approximated: bool,
}

impl LoadBound {
    pub fn render(&self) -> String {
        format!(
            "p^{} = {:.3} bits ({:.3} tuples; witness {})",
            render(&self.exponent),
            self.bits,
            self.tuples,
            self.witness.render()
        )
    }
}

/// `L^{(q)}(M,p) = max_u (Π M_j^{u_j} / p)^{1/Σu}` over nonzero packings `u`.
/// With `v = u/Σu` and `t = 1/Σu` the exponent `log_p L` becomes the linear
/// objective `Σ v_j μ_j − t` subject to `Σ v_j = 1` and `Σ_{j∋x} v_j ≤ t`.
pub fn load_bound_packing(q: &Query, sizes: &Sizes, p: u64) -> LoadBound {
    assert!(p >= 2, "load bound needs p >= 2");
    assert_eq!(sizes.bits.len(), q.l());
    let l = q.l();
    let (mu, approximated) = log_sizes(&sizes.bits, p);
    let mut obj: Vec<Rational> = mu.clone();
    obj.push(-Rational::one());
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    let mut sum = vec![Rational::one(); l + 1];
    sum[l] = Rational::zero();
    lp.constrain(sum, Relation::Eq, Rational::one());
    for v in 0..q.k() {
        let mut row: Vec<Rational> =
            (0..l).map(|j| if q.atoms[j].vars.contains(&v) { Rational::one() } else { Rational::zero() }).collect();
        row.push(-Rational::one());
        lp.constrain(row, Relation::Le, Rational::zero());
    }
    let s = lp.solve_lexmin().expect("normalized packing LP is bounded");
    let t = s.x[l].clone();
    assert!(t.is_positive(), "every atom has a variable");
    let u: Vec<Rational> = s.x[..l].iter().map(|v| v / &t).collect();
    let governing = (0..l).max_by(|&a, &b| u[a].cmp(&u[b]).then(b.cmp(&a))).expect("l >= 1");
    let bits = (p as f64).powf(to_f64(&s.value));
    let tuple_bits = sizes.tuple_bits[governing].max(1);
    LoadBound {
        exponent: s.value,
        bits,
        tuples: bits / tuple_bits as f64,
        tuple_bits,
        witness: weighting(q, WeightingKind::Packing, u),
        approximated,
    }
}

/// `max_X L^{(q_X)}(M,p)`; the witness is a quasi-packing on `q` carrying `X`.
pub fn load_bound_worstcase(q: &Query, sizes: &Sizes, p: u64) -> LoadBound {
    let mut best: Option<(LoadBound, u64)> = None;
    for mask in 0..q.all_vars_mask() {
        let r = q.residual_mask(mask).expect("strict subset");
        let b = load_bound_packing(&r, &sizes.restrict(q, &r), p);
        if best.as_ref().is_none_or(|(cur, _)| b.exponent > cur.exponent) {
            best = Some((b, mask));
        }
    }
    let (mut b, mask) = best.expect("k >= 1");
    b.witness = FractionalWeighting {
        kind: WeightingKind::QuasiPacking,
        weights: q
            .atoms
            .iter()
            .map(|a| (a.relation.clone(), b.witness.weight(&a.relation).cloned().unwrap_or_else(Rational::zero)))
            .collect(),
        residual_witness: Some(q.mask_to_names(mask)),
    };
    b
}

/// Everything the `analyze` command prints for one query.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub query: Query,
    pub family: Option<(Family, usize)>,
    pub tau: (Rational, FractionalWeighting),
    pub rho: (Rational, FractionalWeighting),
    pub psi: (Rational, FractionalWeighting),
    pub p: u64,
    pub shares: ShareAllocation,
    pub bound: Option<LoadBound>,
}

pub fn analyze(q: &Query, family: Option<(Family, usize)>, sizes: &Sizes, p: u64) -> AnalysisReport {
    AnalysisReport {
        query: q.clone(),
        family,
        tau: tau_star(q),
        rho: rho_star(q),
        psi: psi_star(q),
        p,
        shares: share_lp(q, sizes, p, 0),
        bound: (p >= 2).then(|| load_bound_worstcase(q, sizes, p)),
    }
}

impl AnalysisReport {
    pub fn witness_x(&self) -> String {
        self.psi.1.residual_witness.clone().unwrap_or_default().join(";")
    }

    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query: {}", self.query);
        if let Some((f, k)) = self.family {
            let _ = writeln!(s, "family: {f}\nk: {k}");
        }
        let _ = writeln!(s, "vars: {}\natoms: {}", self.query.k(), self.query.l());
        let _ = writeln!(s, "tau_star: {}", render_with_decimal(&self.tau.0));
        let _ = writeln!(s, "tau_witness: {}", self.tau.1.render());
        let _ = writeln!(s, "rho_star: {}", render_with_decimal(&self.rho.0));
        let _ = writeln!(s, "rho_witness: {}", self.rho.1.render());
        let _ = writeln!(s, "psi_star: {}", render_with_decimal(&self.psi.0));
        let _ = writeln!(s, "psi_witness_X: {{{}}}", self.witness_x().replace(';', ","));
        let _ = writeln!(s, "psi_witness: {}", self.psi.1.render());
        let _ = writeln!(s, "p: {}", self.p);
        let _ = writeln!(s, "share_exponents: {}", self.shares.render_exponents());
        let _ = writeln!(s, "shares: {}", self.shares.render());
        if let Some(b) = &self.bound {
            let _ = writeln!(s, "worstcase_load: {}", b.render());
            let _ = writeln!(s, "worstcase_X: {{{}}}", b.witness.residual_witness.clone().unwrap_or_default().join(","));
            if b.approximated {
                let _ = writeln!(s, "note: log_p(M_j) approximated to denominator <= 10^6");
            }
        }
        s
    }

    pub const CSV_HEADER: &'static str = "query,family,k,tau,rho,psi,witness_x,shares";

    pub fn csv_row(&self) -> String {
        let (fam, k) = match self.family {
            Some((f, k)) => (f.to_string(), k.to_string()),
            None => (String::new(), self.query.k().to_string()),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.query.name,
            fam,
            k,
            render(&self.tau.0),
            render(&self.rho.0),
            render(&self.psi.0),
            self.witness_x(),
            self.shares.render()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{canonical_query, parse_query};
    use crate::rational::{frac, int};

    fn c3() -> Query {
        canonical_query(Family::C, 3).unwrap()
    }

    #[test]
    fn small_quantities() {
        assert_eq!(tau_star(&c3()).0, frac(3, 2));
        assert_eq!(tau_star(&canonical_query(Family::T, 4).unwrap()).0, int(1));
        assert_eq!(tau_star(&parse_query("q(x) :- S(x)").unwrap()).0, int(1));
        assert_eq!(rho_star(&canonical_query(Family::W, 3).unwrap()).0, int(1));
        assert_eq!(rho_star(&canonical_query(Family::K, 4).unwrap()).0, int(2));
        assert_eq!(rho_star(&canonical_query(Family::L, 5).unwrap()).0, int(3));
        let (psi, w) = psi_star(&c3());
        assert_eq!(psi, int(2));
        assert_eq!(w.residual_witness.as_ref().unwrap().len(), 1);
        assert!(w.is_valid_for(&c3()));
        assert_eq!(psi_star(&canonical_query(Family::L, 5).unwrap()).0, int(4));
        assert_eq!(psi_star(&canonical_query(Family::LW, 4).unwrap()).0, int(2));
    }

    #[test]
    fn triangle_shares() {
        let q = c3();
        let sizes = Sizes::uniform(3, 1 << 20);
        let s = share_lp(&q, &sizes, 64, 0);
        assert_eq!(s.exponents, vec![frac(1, 3); 3]);
        assert_eq!(s.shares, vec![4, 4, 4]);
        let s = share_lp(&q, &sizes, 64, 0b001);
        assert_eq!(s.exponents, vec![int(0), frac(1, 2), frac(1, 2)]);
        assert_eq!(s.shares, vec![1, 8, 8]);
        let s = share_lp(&q, &sizes, 64, 0b011);
        assert_eq!(s.exponents, vec![int(0), int(0), int(1)]);
        assert_eq!(s.shares, vec![1, 1, 64]);
        assert_eq!(share_lp(&q, &sizes, 1, 0).shares, vec![1, 1, 1]);
    }

    #[test]
    fn rounding_fills_leftover() {
        // 100^{1/3} ≈ 4.64: floors to 4,4,4 (64), then 5,4,4 (80), then 5,5,4 (100)
        let s = round_shares(&[frac(1, 3), frac(1, 3), frac(1, 3)], 100);
        assert_eq!(s, vec![5, 5, 4]);
    }

    #[test]
    fn load_bounds_equal_sizes() {
        let q = c3();
        let p = 64u64;
        let m = p * p; // μ = 2
        let sizes = Sizes::uniform(3, m);
        let b = load_bound_packing(&q, &sizes, p);
        assert_eq!(b.exponent, int(2) - frac(2, 3));
        let w = load_bound_worstcase(&q, &sizes, p);
        assert_eq!(w.exponent, int(2) - frac(1, 2));
        let single = parse_query("q(x) :- S(x)").unwrap();
        assert_eq!(load_bound_packing(&single, &Sizes::uniform(1, m), p).exponent, int(1));
    }
}
