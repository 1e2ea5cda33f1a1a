//! Seeded instance generators and the TSV/manifest on-disk format.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use log::warn;
use num_traits::Zero;

use crate::analyzer::Sizes;
use crate::lp::{LinearProgram, Relation, Sense};
use crate::query::{parse_query, Query};
use crate::rational::{floor_pow, Rational};
use crate::rng::Stream;

/// Tuples of one relation, stored row-major in a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    pub relation: String,
    pub arity: usize,
    pub data: Vec<u64>,
}

impl RelationInstance {
    /// Sorts lexicographically and removes duplicate tuples.
    pub fn from_flat(relation: &str, arity: usize, data: Vec<u64>) -> RelationInstance {
        RelationInstance { relation: relation.to_string(), arity, data: sort_dedup(data, arity) }
    }

    pub fn len(&self) -> usize {
        if self.arity == 0 {
            0
        } else {
            self.data.len() / self.arity
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tuple(&self, i: usize) -> &[u64] {
        &self.data[i * self.arity..(i + 1) * self.arity]
    }

    pub fn tuples(&self) -> impl Iterator<Item = &[u64]> + '_ {
        self.data.chunks_exact(self.arity.max(1))
    }

    /// Occurrences of the most frequent value in column `col`.
    pub fn max_frequency(&self, col: usize) -> usize {
        let mut v: Vec<u64> = self.tuples().map(|t| t[col]).collect();
        v.sort_unstable();
        let mut best = 0;
        let mut i = 0;
        while i < v.len() {
            let j = v[i..].partition_point(|&x| x == v[i]) + i;
            best = best.max(j - i);
            i = j;
        }
        best
    }
}

pub fn sort_dedup(data: Vec<u64>, arity: usize) -> Vec<u64> {
    if arity == 0 || data.is_empty() {
        return data;
    }
    let mut rows: Vec<&[u64]> = data.chunks_exact(arity).collect();
    rows.sort_unstable();
    rows.dedup();
    rows.concat()
}

/// `⌈log2 n⌉`, at least 1.
pub fn value_bits(n: u64) -> u64 {
    if n <= 2 {
        1
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseInstance {
    pub query: Query,
    /// One relation per atom, in atom order.
    pub relations: Vec<RelationInstance>,
    pub seed: u64,
    pub generator: String,
    /// Domain size: all values lie in `1..=n`.
    pub n: u64,
    /// Per-variable domain sizes when the generator fixes them.
    pub domains: Option<Vec<u64>>,
    pub warnings: Vec<String>,
}

impl DatabaseInstance {
    pub fn new(query: Query, relations: Vec<RelationInstance>, seed: u64, generator: &str, n: u64) -> Self {
        assert_eq!(query.l(), relations.len());
        for (a, r) in query.atoms.iter().zip(&relations) {
            assert_eq!(a.relation, r.relation);
            assert_eq!(a.arity(), r.arity);
        }
        DatabaseInstance { query, relations, seed, generator: generator.to_string(), n, domains: None, warnings: vec![] }
    }

    pub fn value_bits(&self) -> u64 {
        value_bits(self.n)
    }

    /// Tuple width of relation `j` in bits: `a_j ⌈log2 n⌉`.
    pub fn tuple_bits(&self, j: usize) -> u64 {
        self.relations[j].arity as u64 * self.value_bits()
    }

    /// `M_j = a_j m_j ⌈log2 n⌉`.
    pub fn bits(&self, j: usize) -> u64 {
        self.tuple_bits(j) * self.relations[j].len() as u64
    }

    pub fn sizes(&self) -> Sizes {
        let l = self.relations.len();
        Sizes::new((0..l).map(|j| self.bits(j).max(1)).collect(), (0..l).map(|j| self.tuple_bits(j)).collect())
    }

    pub fn total_tuples(&self) -> usize {
        self.relations.iter().map(|r| r.len()).sum()
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query\t{}", self.query);
        let _ = writeln!(s, "generator\t{}", self.generator);
        let _ = writeln!(s, "seed\t{}", self.seed);
        let _ = writeln!(s, "n\t{}", self.n);
        if let Some(d) = &self.domains {
            for (v, n) in self.query.vars.iter().zip(d) {
                let _ = writeln!(s, "domain.{v}\t{n}");
            }
        }
        for (j, r) in self.relations.iter().enumerate() {
            let _ = writeln!(s, "relation.{}.file\t{}.tsv", r.relation, r.relation);
            let _ = writeln!(s, "relation.{}.m\t{}", r.relation, r.len());
            let _ = writeln!(s, "relation.{}.M\t{}", r.relation, self.bits(j));
        }
        s
    }

    /// Writes `<relation>.tsv` per atom plus `manifest.txt`.
    pub fn write_dir(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &self.relations {
            let path = dir.join(format!("{}.tsv", r.relation));
            let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?);
            for t in r.tuples() {
                let line: Vec<String> = t.iter().map(u64::to_string).collect();
                writeln!(w, "{}", line.join("\t"))?;
            }
            w.flush()?;
        }
        fs::write(dir.join("manifest.txt"), self.manifest())?;
        Ok(())
    }

    /// Reads a directory written by [`DatabaseInstance::write_dir`].
    pub fn read_dir(dir: &Path) -> anyhow::Result<DatabaseInstance> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))
            .with_context(|| format!("reading {}/manifest.txt", dir.display()))?;
        let mut query = None;
        let (mut seed, mut n, mut generator) = (0u64, 0u64, String::from("file"));
        for line in manifest.lines() {
            let Some((k, v)) = line.split_once('\t') else { continue };
            match k {
                "query" => query = Some(parse_query(v)?),
                "seed" => seed = v.parse()?,
                "n" => n = v.parse()?,
                "generator" => generator = v.to_string(),
                _ => {}
            }
        }
        let Some(query) = query else { bail!("manifest has no query line") };
        let mut relations = Vec::new();
        for a in &query.atoms {
            let path = dir.join(format!("{}.tsv", a.relation));
            let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let mut data = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Vec<u64> = line
                    .split('\t')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?;
                if vals.len() != a.arity() {
                    bail!("{}:{}: expected {} values, found {}", path.display(), i + 1, a.arity(), vals.len());
                }
                n = n.max(*vals.iter().max().unwrap_or(&0));
                data.extend(vals);
            }
            relations.push(RelationInstance::from_flat(&a.relation, a.arity(), data));
        }
        Ok(DatabaseInstance::new(query, relations, seed, &generator, n.max(1)))
    }
}

/// Every attribute of every relation is a random permutation of `1..=m`.
pub fn gen_matching(q: &Query, m: u64, seed: u64) -> DatabaseInstance {
    assert!(m >= 1);
    let relations = q
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let cols: Vec<Vec<u64>> =
                (0..a.arity()).map(|c| Stream::new(seed, j as u64, c as u64).permutation(m)).collect();
            RelationInstance::from_flat(&a.relation, a.arity(), interleave(&cols, m as usize))
        })
        .collect();
    DatabaseInstance::new(q.clone(), relations, seed, "matching", m)
}

fn interleave(cols: &[Vec<u64>], rows: usize) -> Vec<u64> {
    let mut data = Vec::with_capacity(rows * cols.len());
    for i in 0..rows {
        for c in cols {
            data.push(c[i]);
        }
    }
    data
}

/// Atoms containing `heavy_var` carry the constant 1 at that position; every
/// other attribute is a random permutation of `1..=m`.
pub fn gen_single_heavy(q: &Query, m: u64, heavy_var: usize, seed: u64) -> DatabaseInstance {
    assert!(m >= 1 && heavy_var < q.k());
    let mut warnings = Vec::new();
    if q.atoms_of(heavy_var).len() < 2 {
        let w = format!("heavy variable {} appears in fewer than 2 atoms", q.vars[heavy_var]);
        warn!("{w}");
        warnings.push(w);
    }
    let relations = q
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let cols: Vec<Vec<u64>> = a
                .vars
                .iter()
                .enumerate()
                .map(|(c, &v)| {
                    if v == heavy_var {
                        vec![1; m as usize]
                    } else {
                        Stream::new(seed, j as u64, c as u64).permutation(m)
                    }
                })
                .collect();
            RelationInstance::from_flat(&a.relation, a.arity(), interleave(&cols, m as usize))
        })
        .collect();
    let mut db = DatabaseInstance::new(q.clone(), relations, seed, "single_heavy", m);
    db.warnings = warnings;
    db
}

/// Per-variable domain sizes `n_i` with `Π_{x_i ∈ S_j} n_i ≤ m` for every atom,
/// taken from an optimal fractional vertex packing `y` (the dual of the edge
/// cover LP) as `n_i = ⌊m^{y_i}⌋` and then greedily enlarged while every atom
/// stays within `m`.
pub fn agm_domains(q: &Query, m: u64) -> Vec<u64> {
    let k = q.k();
    let mut lp = LinearProgram::new(Sense::Maximize, vec![Rational::from_integer(1.into()); k]);
    for a in &q.atoms {
        let mut row = vec![Rational::zero(); k];
        for &v in &a.vars {
            row[v] = Rational::from_integer(1.into());
        }
        lp.constrain(row, Relation::Le, Rational::from_integer(1.into()));
    }
    let y = lp.solve_lexmin().expect("vertex packing LP is bounded").x;
    let mut n: Vec<u64> = y.iter().map(|e| floor_pow(m, e).max(1)).collect();
    let fits = |n: &[u64]| {
        q.atoms.iter().all(|a| a.vars.iter().map(|&v| n[v] as u128).product::<u128>() <= m as u128)
    };
    loop {
        let mut grew = false;
        // smallest domain first so the rebalance stays close to the LP ratios
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| (n[i], i));
        for i in order {
            n[i] += 1;
            if fits(&n) {
                grew = true;
                break;
            }
            n[i] -= 1;
        }
        if !grew {
            return n;
        }
    }
}

fn cartesian(domains: &[u64], mut keep: impl FnMut() -> bool) -> Vec<u64> {
    let arity = domains.len();
    let mut data = Vec::new();
    let mut cur: Vec<u64> = vec![1; arity];
    if domains.contains(&0) {
        return data;
    }
    loop {
        if keep() {
            data.extend_from_slice(&cur);
        }
        let mut c = arity;
        loop {
            if c == 0 {
                return data;
            }
            c -= 1;
            if cur[c] < domains[c] {
                cur[c] += 1;
                break;
            }
            cur[c] = 1;
        }
    }
}

/// Each relation is the full cartesian product of its variables' domains
/// (see [`agm_domains`]). Deterministic; `seed` is only recorded.
pub fn gen_agm_worst(q: &Query, m: u64, seed: u64) -> DatabaseInstance {
    let domains = agm_domains(q, m);
    let relations = q
        .atoms
        .iter()
        .map(|a| {
            let d: Vec<u64> = a.vars.iter().map(|&v| domains[v]).collect();
            RelationInstance::from_flat(&a.relation, a.arity(), cartesian(&d, || true))
        })
        .collect();
    let n = domains.iter().copied().max().unwrap_or(1);
    let mut db = DatabaseInstance::new(q.clone(), relations, seed, "agm_worst", n);
    db.domains = Some(domains);
    db
}

/// Stream attribute slot used for coin flips (never a real column index).
const COIN_ATTRIBUTE: u64 = 0xFFFF_FFFE;

/// Same domains as [`gen_agm_worst`]; each candidate tuple is kept with
/// probability 1/2.
pub fn gen_coin_flip(q: &Query, m: u64, seed: u64) -> DatabaseInstance {
    let domains = agm_domains(q, m);
    let relations = q
        .atoms
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let d: Vec<u64> = a.vars.iter().map(|&v| domains[v]).collect();
            let mut s = Stream::new(seed, j as u64, COIN_ATTRIBUTE);
            RelationInstance::from_flat(&a.relation, a.arity(), cartesian(&d, || s.coin()))
        })
        .collect();
    let n = domains.iter().copied().max().unwrap_or(1);
    let mut db = DatabaseInstance::new(q.clone(), relations, seed, "coin_flip", n);
    db.domains = Some(domains);
    db
}

/// Lower-bound family: variables in `x_mask` are fixed to 1 and each relation
/// is a random matching of `m[j]` tuples over its remaining attributes, with
/// values drawn from `1..=max_j m_j^2`. A relation whose attributes all lie in
/// `X` keeps its single all-ones tuple and is padded to `m[j]` tuples made of
/// fresh values (above the matching domain) that join with nothing.
pub fn gen_lowerbound_matching(q: &Query, m: &[u64], x_mask: u64, seed: u64) -> DatabaseInstance {
    assert_eq!(m.len(), q.l());
    let max_m = m.iter().copied().max().unwrap_or(1).max(1);
    let base = max_m.checked_mul(max_m).expect("domain overflow");
    let mut fresh = base;
    let mut relations = Vec::with_capacity(q.l());
    for (j, a) in q.atoms.iter().enumerate() {
        let mj = m[j].max(1);
        let free: Vec<bool> = a.vars.iter().map(|&v| x_mask >> v & 1 == 0).collect();
        if free.iter().any(|&f| f) {
            let cols: Vec<Vec<u64>> = free
                .iter()
                .enumerate()
                .map(|(c, &f)| {
                    if f {
                        Stream::new(seed, j as u64, c as u64).sample_distinct(base, mj)
                    } else {
                        vec![1; mj as usize]
                    }
                })
                .collect();
            relations.push(RelationInstance::from_flat(&a.relation, a.arity(), interleave(&cols, mj as usize)));
        } else {
            let mut data = vec![1; a.arity()];
            for _ in 1..mj {
                for _ in 0..a.arity() {
                    fresh += 1;
                    data.push(fresh);
                }
            }
            relations.push(RelationInstance::from_flat(&a.relation, a.arity(), data));
        }
    }
    DatabaseInstance::new(q.clone(), relations, seed, "lowerbound_matching", fresh)
}

/// A random hypergraph with at most `max_k` variables and `max_l` atoms of
/// arity `1..=max_arity`. Variables that end up in no atom are dropped.
pub fn random_query(seed: u64, max_k: usize, max_l: usize, max_arity: usize) -> Query {
    assert!(max_k >= 1 && max_l >= 1 && max_arity >= 1);
    let mut rng = Stream::new(seed, 0x51, 0);
    let k = 1 + rng.below(max_k as u64) as usize;
    let l = 1 + rng.below(max_l as u64) as usize;
    let mut atoms: Vec<Vec<usize>> = Vec::with_capacity(l);
    for _ in 0..l {
        let a = 1 + rng.below(max_arity.min(k) as u64) as usize;
        let mut vars: Vec<usize> = rng.sample_distinct(k as u64, a as u64).into_iter().map(|v| v as usize - 1).collect();
        vars.sort_unstable();
        atoms.push(vars);
    }
    let mut used: Vec<usize> = atoms.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let names: Vec<String> = (1..=used.len()).map(|i| format!("x{i}")).collect();
    let rels: Vec<String> = (1..=l).map(|j| format!("R{j}")).collect();
    let atom_vars: Vec<Vec<&str>> = atoms
        .iter()
        .map(|a| a.iter().map(|v| names[used.binary_search(v).expect("used")].as_str()).collect())
        .collect();
    let atoms: Vec<(&str, &[&str])> = rels.iter().zip(&atom_vars).map(|(r, a)| (r.as_str(), a.as_slice())).collect();
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    Query::new(&format!("rand{seed}"), &vars, &atoms).expect("random queries are full and self-join free")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{canonical_query, Family};

    #[test]
    fn matching_frequencies() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_matching(&q, 4, 1);
        for r in &db.relations {
            assert_eq!(r.len(), 4);
            for c in 0..2 {
                assert_eq!(r.max_frequency(c), 1);
            }
        }
        assert_eq!(gen_matching(&q, 1, 9).relations[0].len(), 1);
    }

    #[test]
    fn single_heavy_shape() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_single_heavy(&q, 50, 0, 3);
        // S1(x1,x2) and S3(x3,x1) are constant at x1
        assert_eq!(db.relations[0].max_frequency(0), 50);
        assert_eq!(db.relations[2].max_frequency(1), 50);
        assert_eq!(db.relations[1].max_frequency(0), 1);
        assert!(db.warnings.is_empty());
        let l = canonical_query(Family::L, 2).unwrap();
        assert_eq!(gen_single_heavy(&l, 5, 0, 3).warnings.len(), 1);
    }

    #[test]
    fn agm_domains_triangle() {
        let q = canonical_query(Family::C, 3).unwrap();
        assert_eq!(agm_domains(&q, 100), vec![10, 10, 10]);
        let db = gen_agm_worst(&q, 100, 0);
        assert!(db.relations.iter().all(|r| r.len() == 100));
        let single = parse_query("q(x) :- S(x)").unwrap();
        assert_eq!(gen_agm_worst(&single, 17, 0).relations[0].data, (1..=17).collect::<Vec<_>>());
        // non-square: products still within m
        let d = agm_domains(&q, 1000);
        assert!(d[0] * d[1] <= 1000 && d[1] * d[2] <= 1000 && d[0] * d[2] <= 1000);
    }

    #[test]
    fn value_bits_rounding() {
        assert_eq!(value_bits(1), 1);
        assert_eq!(value_bits(2), 1);
        assert_eq!(value_bits(3), 2);
        assert_eq!(value_bits(1024), 10);
        assert_eq!(value_bits(1025), 11);
    }

    #[test]
    fn round_trip_dir() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_matching(&q, 20, 5);
        let dir = std::env::temp_dir().join(format!("mpcjoin-datagen-{}", std::process::id()));
        db.write_dir(&dir).unwrap();
        let back = DatabaseInstance::read_dir(&dir).unwrap();
        assert_eq!(back.relations, db.relations);
        assert_eq!(back.n, db.n);
        assert_eq!(back.seed, db.seed);
        let _ = fs::remove_dir_all(&dir);
    }
}
