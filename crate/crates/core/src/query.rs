//! Full conjunctive queries without self-joins, viewed as hypergraphs.
//!
//! Text form: `NAME(x,y,...) :- R(x,y), S(y,z), ...`. Variable and atom order
//! follow the source text and drive every downstream index (shares, hash
//! coordinates, relation ids).

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("query is not full: {0}")]
    NotFull(String),
    #[error("self-join: relation {0} appears more than once")]
    SelfJoin(String),
    #[error("repeated variable {var} in atom {relation}")]
    RepeatedVariable { relation: String, var: String },
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("invalid k={k} for family {family}")]
    InvalidK { family: String, k: usize },
    #[error("query must have at least one variable and one atom")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub relation: String,
    /// indices into `Query::vars`
    pub vars: Vec<usize>,
}

impl Atom {
    pub fn arity(&self) -> usize {
        self.vars.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub name: String,
    pub vars: Vec<String>,
    pub atoms: Vec<Atom>,
    /// Relations whose every variable was removed by residual construction.
    pub dropped: BTreeSet<String>,
}

impl Query {
    /// Builds and validates a query from variable names and `(relation, vars)` atoms.
    pub fn new(name: &str, vars: &[&str], atoms: &[(&str, &[&str])]) -> Result<Query, QueryError> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let mut built = Vec::with_capacity(atoms.len());
        for (rel, avars) in atoms {
            let mut idx = Vec::with_capacity(avars.len());
            for v in avars.iter() {
                match vars.iter().position(|x| x == v) {
                    Some(i) => idx.push(i),
                    None => return Err(QueryError::NotFull(format!("body variable {v} missing from head"))),
                }
            }
            built.push(Atom { relation: rel.to_string(), vars: idx });
        }
        let q = Query { name: name.to_string(), vars, atoms: built, dropped: BTreeSet::new() };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<(), QueryError> {
        if self.vars.is_empty() || self.atoms.is_empty() {
            return Err(QueryError::Empty);
        }
        let mut seen_vars = BTreeSet::new();
        for v in &self.vars {
            if !seen_vars.insert(v) {
                return Err(QueryError::Syntax { pos: 0, msg: format!("head variable {v} listed twice") });
            }
        }
        let mut rels = BTreeSet::new();
        let mut covered = vec![false; self.vars.len()];
        for a in &self.atoms {
            if !rels.insert(&a.relation) {
                return Err(QueryError::SelfJoin(a.relation.clone()));
            }
            let mut in_atom = BTreeSet::new();
            for &v in &a.vars {
                if !in_atom.insert(v) {
                    return Err(QueryError::RepeatedVariable {
                        relation: a.relation.clone(),
                        var: self.vars[v].clone(),
                    });
                }
                covered[v] = true;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(QueryError::NotFull(format!("head variable {} appears in no atom", self.vars[i])));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.vars.len()
    }

    pub fn l(&self) -> usize {
        self.atoms.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn atom_index(&self, relation: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.relation == relation)
    }

    /// Bitmask of the variables of atom `j`.
    pub fn atom_mask(&self, j: usize) -> u64 {
        self.atoms[j].vars.iter().fold(0u64, |m, &v| m | (1 << v))
    }

    pub fn all_vars_mask(&self) -> u64 {
        if self.k() == 64 {
            u64::MAX
        } else {
            (1u64 << self.k()) - 1
        }
    }

    /// Atoms (indices) containing variable `v`.
    pub fn atoms_of(&self, v: usize) -> Vec<usize> {
        (0..self.l()).filter(|&j| self.atoms[j].vars.contains(&v)).collect()
    }

    pub fn mask_to_names(&self, mask: u64) -> Vec<String> {
        (0..self.k()).filter(|i| mask >> i & 1 == 1).map(|i| self.vars[i].clone()).collect()
    }

    pub fn names_to_mask(&self, names: &[String]) -> Result<u64, QueryError> {
        let mut m = 0u64;
        for n in names {
            let i = self.var_index(n).ok_or_else(|| QueryError::UnknownVariable(n.clone()))?;
            m |= 1 << i;
        }
        Ok(m)
    }

    /// Residual query `q_X`: variables in `x` are removed from every atom and
    /// atoms left without variables are dropped (and remembered in `dropped`).
    /// `Ok(None)` signals the empty query, which happens exactly when `x`
    /// covers every variable.
    pub fn residual(&self, x: &[String]) -> Result<Option<Query>, QueryError> {
        let mask = self.names_to_mask(x)?;
        Ok(self.residual_mask(mask))
    }

    pub fn residual_mask(&self, mask: u64) -> Option<Query> {
        let keep: Vec<usize> = (0..self.k()).filter(|i| mask >> i & 1 == 0).collect();
        if keep.is_empty() {
            return None;
        }
        let mut remap = vec![usize::MAX; self.k()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut atoms = Vec::new();
        let mut dropped = self.dropped.clone();
        for a in &self.atoms {
            let vars: Vec<usize> = a.vars.iter().filter(|&&v| remap[v] != usize::MAX).map(|&v| remap[v]).collect();
            if vars.is_empty() {
                dropped.insert(a.relation.clone());
            } else {
                atoms.push(Atom { relation: a.relation.clone(), vars });
            }
        }
        Some(Query {
            name: self.name.clone(),
            vars: keep.iter().map(|&i| self.vars[i].clone()).collect(),
            atoms,
            dropped,
        })
    }

    /// Same hypergraph up to renaming of variables and atoms.
    pub fn is_isomorphic(&self, other: &Query) -> bool {
        if self.k() != other.k() || self.l() != other.l() {
            return false;
        }
        assert!(self.k() <= 10, "isomorphism check enumerates k! permutations");
        let target = other.edge_multiset();
        let mut perm: Vec<usize> = (0..self.k()).collect();
        loop {
            let mut edges: Vec<u64> = self
                .atoms
                .iter()
                .map(|a| a.vars.iter().fold(0u64, |m, &v| m | (1 << perm[v])))
                .collect();
            edges.sort_unstable();
            if edges == target {
                return true;
            }
            if !next_permutation(&mut perm) {
                return false;
            }
        }
    }

    fn edge_multiset(&self) -> Vec<u64> {
        let mut e: Vec<u64> = (0..self.l()).map(|j| self.atom_mask(j)).collect();
        e.sort_unstable();
        e
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}) :- ", self.name, self.vars.join(","))?;
        for (j, a) in self.atoms.iter().enumerate() {
            if j > 0 {
                write!(f, ", ")?;
            }
            let names: Vec<&str> = a.vars.iter().map(|&v| self.vars[v].as_str()).collect();
            write!(f, "{}({})", a.relation, names.join(","))?;
        }
        Ok(())
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn error(&self, msg: impl Into<String>) -> QueryError {
        QueryError::Syntax { pos: self.pos, msg: msg.into() }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        self.skip_ws();
        let start = self.pos;
        match self.src.get(self.pos) {
            Some(c) if c.is_ascii_alphabetic() => self.pos += 1,
            _ => return Err(self.error("expected identifier")),
        }
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn expect(&mut self, tok: &str) -> Result<(), QueryError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok.as_bytes()) {
            self.pos += tok.len();
            Ok(())
        } else {
            Err(self.error(format!("expected '{tok}'")))
        }
    }

    fn peek(&mut self, tok: u8) -> bool {
        self.skip_ws();
        self.src.get(self.pos) == Some(&tok)
    }

    fn var_list(&mut self) -> Result<Vec<(String, usize)>, QueryError> {
        self.expect("(")?;
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            let at = self.pos;
            out.push((self.ident()?, at));
            if self.peek(b',') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(")")?;
        Ok(out)
    }
}

/// Parses `NAME(vars) :- atom, atom, ...`.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut lx = Lexer { src: text.as_bytes(), pos: 0 };
    let name = lx.ident()?;
    let head = lx.var_list()?;
    lx.expect(":-")?;
    let mut body: Vec<(String, Vec<(String, usize)>)> = Vec::new();
    loop {
        let rel = lx.ident()?;
        let vars = lx.var_list()?;
        body.push((rel, vars));
        if lx.peek(b',') {
            lx.pos += 1;
        } else {
            break;
        }
    }
    lx.skip_ws();
    if lx.pos != text.len() {
        return Err(lx.error("trailing input"));
    }

    let mut vars: Vec<String> = Vec::new();
    for (v, pos) in head {
        if vars.contains(&v) {
            return Err(QueryError::Syntax { pos, msg: format!("head variable {v} listed twice") });
        }
        vars.push(v);
    }
    let mut atoms = Vec::new();
    for (rel, avars) in body {
        let mut idx = Vec::new();
        for (v, _) in avars {
            match vars.iter().position(|x| *x == v) {
                Some(i) => idx.push(i),
                None => return Err(QueryError::NotFull(format!("body variable {v} missing from head"))),
            }
        }
        atoms.push(Atom { relation: rel, vars: idx });
    }
    let q = Query { name, vars, atoms, dropped: BTreeSet::new() };
    q.validate()?;
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    T,
    SP,
    K,
    W,
    L,
    Lstar,
    Ldagger,
    C,
    LW,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::T,
        Family::SP,
        Family::K,
        Family::W,
        Family::L,
        Family::Lstar,
        Family::Ldagger,
        Family::C,
        Family::LW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::T => "T",
            Family::SP => "SP",
            Family::K => "K",
            Family::W => "W",
            Family::L => "L",
            Family::Lstar => "Lstar",
            Family::Ldagger => "Ldagger",
            Family::C => "C",
            Family::LW => "LW",
        }
    }

    pub fn min_k(self) -> usize {
        match self {
            Family::C | Family::LW => 3,
            Family::K => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown family {s}; expected one of T, SP, K, W, L, Lstar, Ldagger, C, LW"))
    }
}

/// The standard query families. Naming scheme:
///
/// * `T_k`: `S_j(z, x_j)`
/// * `SP_k`: `R_i(z, x_i), S_i(x_i, y_i)`
/// * `K_k`: `S{i}_{j}(x_i, x_j)` for `i < j`
/// * `W_k`: `R(x_1..x_k), S_j(x_j)`
/// * `L_k`: `S_j(x_{j-1}, x_j)` over `x_0..x_k`; `Lstar` adds `R(x_0)`,
///   `Ldagger` adds `R(x_0)` and `S(x_k)`
/// * `C_k`: `S_j(x_j, x_{(j mod k)+1})`
/// * `LW_k`: `S_j` over every variable except `x_j`
///
/// The query name is the family name followed by `k`, e.g. `C3`.
pub fn canonical_query(family: Family, k: usize) -> Result<Query, QueryError> {
    if k < family.min_k() || k > 30 {
        return Err(QueryError::InvalidK { family: family.name().into(), k });
    }
    let x = |i: usize| format!("x{i}");
    let mut vars: Vec<String> = Vec::new();
    let mut atoms: Vec<(String, Vec<String>)> = Vec::new();
    match family {
        Family::T => {
            vars.push("z".into());
            vars.extend((1..=k).map(x));
            for j in 1..=k {
                atoms.push((format!("S{j}"), vec!["z".into(), x(j)]));
            }
        }
        Family::SP => {
            vars.push("z".into());
            vars.extend((1..=k).map(x));
            vars.extend((1..=k).map(|i| format!("y{i}")));
            for i in 1..=k {
                atoms.push((format!("R{i}"), vec!["z".into(), x(i)]));
                atoms.push((format!("S{i}"), vec![x(i), format!("y{i}")]));
            }
        }
        Family::K => {
            vars.extend((1..=k).map(x));
            for i in 1..=k {
                for j in i + 1..=k {
                    atoms.push((format!("S{i}_{j}"), vec![x(i), x(j)]));
                }
            }
        }
        Family::W => {
            vars.extend((1..=k).map(x));
            atoms.push(("R".into(), (1..=k).map(x).collect()));
            for j in 1..=k {
                atoms.push((format!("S{j}"), vec![x(j)]));
            }
        }
        Family::L | Family::Lstar | Family::Ldagger => {
            vars.extend((0..=k).map(x));
            if family != Family::L {
                atoms.push(("R".into(), vec![x(0)]));
            }
            for j in 1..=k {
                atoms.push((format!("S{j}"), vec![x(j - 1), x(j)]));
            }
            if family == Family::Ldagger {
                atoms.push(("S".into(), vec![x(k)]));
            }
        }
        Family::C => {
            vars.extend((1..=k).map(x));
            for j in 1..=k {
                atoms.push((format!("S{j}"), vec![x(j), x(j % k + 1)]));
            }
        }
        Family::LW => {
            vars.extend((1..=k).map(x));
            for j in 1..=k {
                atoms.push((format!("S{j}"), (1..=k).filter(|&i| i != j).map(x).collect()));
            }
        }
    }
    let name = format!("{}{}", family.name(), k);
    let var_refs: Vec<&str> = vars.iter().map(String::as_str).collect();
    let atom_vars: Vec<Vec<&str>> = atoms.iter().map(|(_, v)| v.iter().map(String::as_str).collect()).collect();
    let atom_refs: Vec<(&str, &[&str])> =
        atoms.iter().zip(&atom_vars).map(|((r, _), v)| (r.as_str(), v.as_slice())).collect();
    Query::new(&name, &var_refs, &atom_refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_triangle() {
        let q = parse_query("C3(x,y,z) :- R(x,y), S(y,z), T(z,x)").unwrap();
        assert_eq!(q.k(), 3);
        assert_eq!(q.l(), 3);
        assert_eq!(q.to_string(), "C3(x,y,z) :- R(x,y), S(y,z), T(z,x)");
        let spaced = parse_query("  C3 ( x , y,z ):-R(x,y),\n S(y, z) ,T(z,x)  ").unwrap();
        assert_eq!(spaced, q);
    }

    #[test]
    fn rejects_bad_queries() {
        assert!(matches!(parse_query("q(x) :- S(x,y)"), Err(QueryError::NotFull(_))));
        assert!(matches!(parse_query("q(x,y) :- S(x)"), Err(QueryError::NotFull(_))));
        assert!(matches!(parse_query("q(x,y,z) :- S(x,y), S(y,z)"), Err(QueryError::SelfJoin(_))));
        assert!(matches!(parse_query("q(x) :- S(x,x)"), Err(QueryError::RepeatedVariable { .. })));
        assert!(matches!(parse_query("q(x) S(x)"), Err(QueryError::Syntax { pos: 5, .. })));
        assert!(matches!(parse_query("q(x) :- S(x),"), Err(QueryError::Syntax { .. })));
        assert!(matches!(parse_query("q(1x) :- S(x)"), Err(QueryError::Syntax { pos: 2, .. })));
        assert!(matches!(parse_query("q(x) :- S(x) extra"), Err(QueryError::Syntax { .. })));
    }

    #[test]
    fn residuals_of_triangle() {
        let q = parse_query("C3(x,y,z) :- R(x,y), S(y,z), T(z,x)").unwrap();
        let qx = q.residual(&names(&["x"])).unwrap().unwrap();
        assert_eq!(qx.to_string(), "C3(y,z) :- R(y), S(y,z), T(z)");
        assert_eq!(q.residual(&[]).unwrap().unwrap(), q);
        let qxy = q.residual(&names(&["x", "y"])).unwrap().unwrap();
        assert_eq!(qxy.to_string(), "C3(z) :- S(z), T(z)");
        assert!(qxy.dropped.contains("R"));
        assert_eq!(q.residual(&names(&["x", "y", "z"])).unwrap(), None);
        assert!(matches!(q.residual(&names(&["w"])), Err(QueryError::UnknownVariable(_))));
    }

    #[test]
    fn canonical_families() {
        let c3 = canonical_query(Family::C, 3).unwrap();
        assert_eq!(c3.to_string(), "C3(x1,x2,x3) :- S1(x1,x2), S2(x2,x3), S3(x3,x1)");
        let k3 = canonical_query(Family::K, 3).unwrap();
        let lw3 = canonical_query(Family::LW, 3).unwrap();
        assert_eq!(lw3.to_string(), "LW3(x1,x2,x3) :- S1(x2,x3), S2(x1,x3), S3(x1,x2)");
        assert!(c3.is_isomorphic(&k3));
        assert!(c3.is_isomorphic(&lw3));
        assert!(!c3.is_isomorphic(&canonical_query(Family::L, 2).unwrap()));
        assert_eq!(
            canonical_query(Family::Ldagger, 2).unwrap().to_string(),
            "Ldagger2(x0,x1,x2) :- R(x0), S1(x0,x1), S2(x1,x2), S(x2)"
        );
        assert!(matches!(canonical_query(Family::C, 2), Err(QueryError::InvalidK { .. })));
        assert!(matches!(canonical_query(Family::T, 0), Err(QueryError::InvalidK { .. })));
        for f in Family::ALL {
            for k in f.min_k()..=6 {
                let q = canonical_query(f, k).unwrap();
                assert_eq!(parse_query(&q.to_string()).unwrap(), q);
            }
        }
    }
}
