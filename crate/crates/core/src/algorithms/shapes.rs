//! Recognizers for the query shapes handled by the multi-round algorithms.

use std::collections::HashSet;

use crate::plan::VarId;
use crate::query::Query;

fn all_binary(q: &Query) -> bool {
    q.atoms.iter().all(|a| a.arity() == 2)
}

/// For a path `S_1(v_0,v_1), ..., S_l(v_{l-1},v_l)`: the variables in path
/// order (starting at the lowest-numbered end) and the atoms along it.
pub fn line_order(q: &Query) -> Option<(Vec<VarId>, Vec<usize>)> {
    if !all_binary(q) || q.k() != q.l() + 1 {
        return None;
    }
    let start = (0..q.k()).find(|&v| q.atoms_of(v).len() == 1)?;
    walk(q, start, false)
}

/// For a cycle `S_1(v_0,v_1), ..., S_k(v_{k-1},v_0)`, `k ≥ 3`.
pub fn cycle_order(q: &Query) -> Option<(Vec<VarId>, Vec<usize>)> {
    if !all_binary(q) || q.k() != q.l() || q.k() < 3 || (0..q.k()).any(|v| q.atoms_of(v).len() != 2) {
        return None;
    }
    walk(q, 0, true)
}

fn walk(q: &Query, start: VarId, cyclic: bool) -> Option<(Vec<VarId>, Vec<usize>)> {
    let mut vars = vec![start];
    let mut atoms = Vec::new();
    let mut used = HashSet::new();
    let mut cur = start;
    while let Some(j) = q.atoms_of(cur).into_iter().find(|j| !used.contains(j)) {
        used.insert(j);
        atoms.push(j);
        let a = &q.atoms[j].vars;
        cur = if a[0] == cur { a[1] } else { a[0] };
        if cyclic && cur == start {
            break;
        }
        vars.push(cur);
    }
    let distinct: HashSet<VarId> = vars.iter().copied().collect();
    (atoms.len() == q.l() && distinct.len() == q.k() && vars.len() == q.k()).then_some((vars, atoms))
}

/// Loomis-Whitney: `k ≥ 3` atoms, atom `i` holding every variable but one,
/// each variable missed exactly once. Returns the variables and, for each,
/// the atom that misses it.
pub fn lw_order(q: &Query) -> Option<(Vec<VarId>, Vec<usize>)> {
    let k = q.k();
    if k < 3 || q.l() != k || q.atoms.iter().any(|a| a.arity() != k - 1) {
        return None;
    }
    let mut by_missing = vec![None; k];
    for (j, a) in q.atoms.iter().enumerate() {
        let missing = (0..k).find(|v| !a.vars.contains(v))?;
        if by_missing[missing].replace(j).is_some() {
            return None;
        }
    }
    Some(((0..k).collect(), by_missing.into_iter().collect::<Option<Vec<_>>>()?))
}

pub fn is_clique(q: &Query) -> bool {
    let k = q.k();
    if k < 3 || !all_binary(q) || q.l() != k * (k - 1) / 2 {
        return false;
    }
    let pairs: HashSet<(VarId, VarId)> =
        q.atoms.iter().map(|a| (a.vars[0].min(a.vars[1]), a.vars[0].max(a.vars[1]))).collect();
    pairs.len() == q.l()
}

/// First atom that contains every variable.
pub fn covering_atom(q: &Query) -> Option<usize> {
    q.atoms.iter().position(|a| a.arity() == q.k())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{canonical_query, Family};

    #[test]
    fn recognizes_families() {
        let c = canonical_query(Family::C, 5).unwrap();
        let (vars, atoms) = cycle_order(&c).unwrap();
        assert_eq!(vars.len(), 5);
        assert_eq!(atoms, vec![0, 1, 2, 3, 4]);
        assert!(line_order(&c).is_none());
        let l = canonical_query(Family::L, 4).unwrap();
        let (vars, atoms) = line_order(&l).unwrap();
        assert_eq!(vars, vec![0, 1, 2, 3, 4]);
        assert_eq!(atoms, vec![0, 1, 2, 3]);
        assert!(lw_order(&canonical_query(Family::LW, 4).unwrap()).is_some());
        assert!(lw_order(&c).is_none());
        assert!(is_clique(&canonical_query(Family::K, 4).unwrap()));
        assert!(!is_clique(&canonical_query(Family::C, 4).unwrap()));
        assert_eq!(covering_atom(&canonical_query(Family::W, 3).unwrap()), Some(0));
        assert_eq!(covering_atom(&c), None);
        // the triangle is a 3-cycle, a 3-clique and LW_3
        let t = canonical_query(Family::C, 3).unwrap();
        assert!(is_clique(&t) && lw_order(&t).is_some());
    }
}
