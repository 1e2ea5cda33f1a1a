//! One-round building blocks: HyperCube jobs, the skew-aware one-round
//! algorithm, keyed joins with heavy-key server ranges, semi-joins and
//! intersections.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use num_traits::Zero;

use super::{tuple_degrees, Ctx, Rel};
use crate::analyzer::{round_shares, share_lp, Sizes};
use crate::plan::{proportional, Input, JobId, PlanError, Pred, ServerSet, Sink, Source, Strategy, VarId};
use crate::query::Query;
use crate::rational::{frac, Rational};

pub(crate) fn union_vars(rels: &[Rel]) -> Vec<VarId> {
    let mut v: Vec<VarId> = rels.iter().flat_map(|r| r.vars().iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub(crate) fn ready(rels: &[Rel], round: usize) -> usize {
    rels.iter().map(|r| r.ready).max().unwrap_or(1).max(round)
}

/// `p^{1/k}`-style thresholds: `m / p^e`.
pub(crate) fn threshold(m: usize, p: usize, e: f64) -> f64 {
    m as f64 / (p as f64).powf(e)
}

/// Values of `v` whose degree in some relation is at least `thr`. Values of
/// frequency one are never heavy.
pub(crate) fn heavy_values(rels: &[Rel], v: VarId, thr: f64) -> HashMap<u64, u64> {
    let mut out: HashMap<u64, u64> = HashMap::new();
    for r in rels.iter().filter(|r| r.has(v)) {
        for (h, d) in r.degrees(v) {
            if d >= 2 && d as f64 >= thr {
                let e = out.entry(h).or_insert(0);
                *e = (*e).max(d);
            }
        }
    }
    out
}

pub(crate) fn key_set(m: &HashMap<u64, u64>) -> Arc<HashSet<u64>> {
    Arc::new(m.keys().copied().collect())
}

/// Heavy values sorted by value, for deterministic plans.
pub(crate) fn sorted(m: &HashMap<u64, u64>) -> Vec<(u64, u64)> {
    let mut v: Vec<(u64, u64)> = m.iter().map(|(&h, &d)| (h, d)).collect();
    v.sort_unstable();
    v
}

impl Ctx {
    pub(crate) fn name(&self, v: VarId) -> &str {
        &self.plan.query.vars[v]
    }

    fn sub_query(&self, rels: &[Rel]) -> (Query, Vec<VarId>) {
        let vars = union_vars(rels);
        let names: Vec<&str> = vars.iter().map(|&v| self.plan.query.vars[v].as_str()).collect();
        let rel_names: Vec<String> = (0..rels.len()).map(|i| format!("R{i}")).collect();
        let atom_vars: Vec<Vec<&str>> =
            rels.iter().map(|r| r.vars().iter().map(|&v| self.plan.query.vars[v].as_str()).collect()).collect();
        let atoms: Vec<(&str, &[&str])> =
            rel_names.iter().zip(&atom_vars).map(|(n, a)| (n.as_str(), a.as_slice())).collect();
        (Query::new("sub", &names, &atoms).expect("sub-plans are full queries"), vars)
    }

    fn sizes(&self, rels: &[Rel]) -> Sizes {
        Sizes::new(
            rels.iter().map(|r| (r.len() as u64 * r.arity() as u64 * self.vbits).max(1)).collect(),
            rels.iter().map(|r| r.arity() as u64 * self.vbits).collect(),
        )
    }

    pub(crate) fn inputs(rels: &[Rel]) -> Vec<Input> {
        rels.iter().map(|r| r.input.clone()).collect()
    }

    /// Result of `job` as a dataset for later rounds. `stats` are rows over
    /// the job's output variables.
    pub(crate) fn held(&self, job: JobId, name: String, stats: Vec<u64>, exact: bool) -> Rel {
        let j = &self.plan.jobs[job];
        Rel {
            name,
            input: Input {
                source: Source::Job(job),
                filters: Vec::new(),
                keep: (0..j.out_vars.len()).collect(),
                vars: j.out_vars.clone(),
            },
            stats: Arc::new(stats),
            ready: j.round + 1,
            exact,
        }
    }

    pub(crate) fn hc_job(
        &mut self,
        rels: &[Rel],
        servers: &ServerSet,
        round: usize,
        shares: Vec<u64>,
        sink: &Sink,
        label: String,
    ) -> JobId {
        let vars = union_vars(rels);
        let r = ready(rels, round);
        self.plan.add_job(r, label, servers.clone(), Strategy::Hc { vars, shares }, Self::inputs(rels), sink.clone())
    }

    /// HyperCube with equal exponents on every variable.
    pub(crate) fn uniform_hc(&mut self, rels: &[Rel], servers: &ServerSet, round: usize, sink: &Sink, label: String) -> JobId {
        let k = union_vars(rels).len();
        let shares = round_shares(&vec![frac(1, k as i64); k], servers.len() as u64);
        self.hc_job(rels, servers, round, shares, sink, label)
    }

    /// HyperCube with shares from the share LP of the residual query that
    /// drops the variables in `x_mask` (indices into the query variables).
    pub(crate) fn hc_share_lp(
        &mut self,
        rels: &[Rel],
        servers: &ServerSet,
        round: usize,
        x_mask: u64,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        let (q, vars) = self.sub_query(rels);
        let sub_mask = vars.iter().enumerate().filter(|(_, &v)| x_mask >> v & 1 == 1).fold(0u64, |m, (i, _)| m | 1 << i);
        let alloc = share_lp(&q, &self.sizes(rels), servers.len() as u64, sub_mask);
        let label = format!("hc[{}]", alloc.render());
        self.hc_job(rels, servers, round, alloc.shares, sink, label);
        Ok(())
    }

    /// Runs, for every set X of variables, HyperCube with the X-residual shares
    /// on the tuples that are heavy exactly at X. A value is heavy at `v` if
    /// its degree in some relation `R` reaches `|R|/p`.
    pub(crate) fn one_round_skew(
        &mut self,
        rels: &[Rel],
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
        label: &str,
    ) -> Result<(), PlanError> {
        let (q, vars) = self.sub_query(rels);
        let p = servers.len();
        let sizes = self.sizes(rels);
        let heavy: Vec<Arc<HashSet<u64>>> = vars
            .iter()
            .map(|&v| {
                let mut set = HashSet::new();
                for r in rels.iter().filter(|r| r.has(v)) {
                    let thr = r.len() as f64 / p as f64;
                    set.extend(r.degrees(v).into_iter().filter(|&(_, d)| d >= 2 && d as f64 >= thr).map(|(h, _)| h));
                }
                Arc::new(set)
            })
            .collect();
        for mask in 0u64..1 << vars.len() {
            if (0..vars.len()).any(|i| mask >> i & 1 == 1 && heavy[i].is_empty()) {
                continue;
            }
            let filtered: Vec<Rel> = rels
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    for (i, &v) in vars.iter().enumerate() {
                        if mask >> i & 1 == 1 {
                            r = r.filter(v, &Pred::In(heavy[i].clone()));
                        } else {
                            r = r.not_in(v, &heavy[i]);
                        }
                    }
                    r
                })
                .collect();
            if filtered.iter().any(Rel::is_empty) {
                continue;
            }
            let alloc = share_lp(&q, &sizes, p as u64, mask);
            let x: Vec<&str> = (0..vars.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.name(vars[i])).collect();
            let l = format!("{label}[X={{{}}}; {}]", x.join(","), alloc.render());
            self.hc_job(&filtered, servers, round, alloc.shares, sink, l);
        }
        Ok(())
    }

    /// Hash join on `key`. Key values whose degree in a spread input reaches
    /// `m/n` get a server range proportional to that degree; spread inputs are
    /// hashed on the whole tuple inside it and the others are broadcast to it.
    pub(crate) fn keyed_join(
        &mut self,
        key: Vec<VarId>,
        inputs: &[(Rel, bool)],
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
        label: String,
    ) -> Result<JobId, PlanError> {
        let n = servers.len();
        let m = inputs.iter().map(|(r, _)| r.len()).max().unwrap_or(0);
        let thr = m as f64 / n as f64;
        let mut heavy: HashMap<Vec<u64>, u64> = HashMap::new();
        if n > 1 {
            for (r, _) in inputs.iter().filter(|(_, s)| *s) {
                let cols: Vec<usize> = key.iter().map(|&v| r.col(v)).collect();
                for (kv, d) in tuple_degrees(&r.stats, r.arity(), &cols) {
                    if d >= 2 && d as f64 >= thr {
                        let e = heavy.entry(kv).or_insert(0);
                        *e = (*e).max(d);
                    }
                }
            }
        }
        let mut keys: Vec<(Vec<u64>, u64)> = heavy.into_iter().collect();
        keys.sort_unstable();
        let parts = proportional(n, &keys.iter().map(|(_, d)| *d as f64).collect::<Vec<_>>(), &label)?;
        let mut ranges = HashMap::new();
        let mut off = 0u32;
        for ((kv, _), c) in keys.into_iter().zip(parts) {
            ranges.insert(kv, (off, c as u32));
            off += c as u32;
        }
        let rels: Vec<Rel> = inputs.iter().map(|(r, _)| r.clone()).collect();
        let r = ready(&rels, round);
        let strategy = Strategy::Keyed { key, heavy: Arc::new(ranges), spread: inputs.iter().map(|(_, s)| *s).collect() };
        Ok(self.plan.add_job(r, label, servers.clone(), strategy, Self::inputs(&rels), sink.clone()))
    }

    /// Join of `s1` and `s2` on their shared variables, where no key value is
    /// frequent in `s1`; frequent keys of `s2` get their own server ranges.
    pub(crate) fn join_one_sided(
        &mut self,
        s1: &Rel,
        s2: &Rel,
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
        check: bool,
    ) -> Result<JobId, PlanError> {
        let key: Vec<VarId> = s1.vars().iter().copied().filter(|&v| s2.has(v)).collect();
        if key.is_empty() {
            return Err(PlanError::Precondition(format!("{} and {} share no variable", s1.name, s2.name)));
        }
        if check {
            let m = s1.len().max(s2.len());
            let limit = (m as f64 / servers.len() as f64).max(1.0);
            let cols: Vec<usize> = key.iter().map(|&v| s1.col(v)).collect();
            if let Some(d) = tuple_degrees(&s1.stats, s1.arity(), &cols).values().copied().max() {
                if d as f64 > limit {
                    return Err(PlanError::Precondition(format!(
                        "{} has a join value of degree {d} above m/p = {limit:.2}",
                        s1.name
                    )));
                }
            }
        }
        let label = format!("join {} with {}", s1.name, s2.name);
        self.keyed_join(key, &[(s1.clone(), false), (s2.clone(), true)], servers, round, sink, label)
    }

    /// `s ⋉ r` where `vars(r) ⊆ vars(s)`: the key tuples of `r` are distinct,
    /// so `r` plays the light side of a one-sided join.
    pub(crate) fn semi_join(&mut self, r: &Rel, s: &Rel, servers: &ServerSet, round: usize, sink: &Sink) -> Result<JobId, PlanError> {
        let key: Vec<VarId> = r.vars().to_vec();
        let label = format!("{} semijoin {}", s.name, r.name);
        self.keyed_join(key, &[(r.clone(), false), (s.clone(), true)], servers, round, sink, label)
    }

    /// Runs `s ⋉ r` and keeps the result for later rounds.
    pub(crate) fn semi_join_held(&mut self, r: &Rel, s: &Rel, servers: &ServerSet, round: usize) -> Result<Rel, PlanError> {
        let job = self.semi_join(r, s, servers, round, &Sink::Hold)?;
        let keys: HashSet<Vec<u64>> = r.stats.chunks_exact(r.arity()).map(|t| t.to_vec()).collect();
        let cols: Vec<usize> = r.vars().iter().map(|&v| s.col(v)).collect();
        let out_vars = self.plan.jobs[job].out_vars.clone();
        let order: Vec<usize> = out_vars.iter().map(|&v| s.col(v)).collect();
        let mut stats = Vec::new();
        for t in s.stats.chunks_exact(s.arity()) {
            if keys.contains(&cols.iter().map(|&c| t[c]).collect::<Vec<_>>()) {
                stats.extend(order.iter().map(|&c| t[c]));
            }
        }
        let name = format!("{}⋉{}", s.name, r.name);
        Ok(self.held(job, name, stats, s.exact && r.exact))
    }

    /// Intersection of datasets over the same variables.
    pub(crate) fn intersect(&mut self, rels: &[Rel], servers: &ServerSet, round: usize, sink: &Sink) -> JobId {
        let names: Vec<&str> = rels.iter().map(|r| r.name.as_str()).collect();
        let label = match names.len() {
            1 => format!("distribute {}", names[0]),
            _ => format!("intersect {}", names.join(" ∩ ")),
        };
        let r = ready(rels, round);
        self.plan.add_job(r, label, servers.clone(), Strategy::HashAll, Self::inputs(rels), sink.clone())
    }

    /// Rounded grid sides for exponents relative to `p`.
    pub(crate) fn grid_shares(exps: &[Rational], p: usize) -> Vec<u64> {
        if exps.iter().all(Zero::is_zero) {
            return vec![1; exps.len()];
        }
        round_shares(exps, p as u64)
    }
}
