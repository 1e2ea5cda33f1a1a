//! Join algorithms expressed as [`Plan`]s: HyperCube, the one-round
//! skew-aware algorithm, skew-resilient join primitives and the multi-round
//! algorithms for lines, cycles, Loomis-Whitney queries, cliques and queries
//! with a covering atom.

mod multiround;
mod primitives;
mod shapes;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::analyzer::{load_bound_worstcase, LoadBound};
use crate::datagen::{sort_dedup, DatabaseInstance, RelationInstance};
use crate::mpc::{run_cluster, ClusterConfig, LoadReport, Output};
use crate::plan::{Input, Plan, PlanError, PlanExecutor, Pred, Sink, Source, VarId};

pub use shapes::{covering_atom, cycle_order, is_clique, line_order, lw_order};

/// Frequencies of value tuples on attribute subsets of one relation, keeping
/// only entries at or above the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeavyHitterMap {
    pub relation: String,
    pub threshold: u64,
    pub entries: BTreeMap<Vec<usize>, HashMap<Vec<u64>, u64>>,
}

impl HeavyHitterMap {
    pub fn on(&self, cols: &[usize]) -> Option<&HashMap<Vec<u64>, u64>> {
        self.entries.get(cols)
    }

    pub fn count(&self) -> usize {
        self.entries.values().map(HashMap::len).sum()
    }
}

/// Heavy hitters of `r` on every single attribute.
pub fn heavy_hitters(r: &RelationInstance, threshold: u64) -> HeavyHitterMap {
    let subsets: Vec<Vec<usize>> = (0..r.arity).map(|c| vec![c]).collect();
    heavy_hitters_on(r, threshold, &subsets)
}

pub fn heavy_hitters_on(r: &RelationInstance, threshold: u64, subsets: &[Vec<usize>]) -> HeavyHitterMap {
    assert!(threshold >= 1, "heavy hitter threshold must be at least 1");
    let entries = subsets
        .iter()
        .map(|cols| {
            let mut freq = tuple_degrees(&r.data, r.arity, cols);
            freq.retain(|_, f| *f >= threshold);
            (cols.clone(), freq)
        })
        .collect();
    HeavyHitterMap { relation: r.relation.clone(), threshold, entries }
}

pub(crate) fn tuple_degrees(rows: &[u64], arity: usize, cols: &[usize]) -> HashMap<Vec<u64>, u64> {
    let mut freq: HashMap<Vec<u64>, u64> = HashMap::new();
    for t in rows.chunks_exact(arity) {
        *freq.entry(cols.iter().map(|&c| t[c]).collect()).or_insert(0) += 1;
    }
    freq
}

pub(crate) fn value_degrees(rows: &[u64], arity: usize, col: usize) -> HashMap<u64, u64> {
    let mut freq: HashMap<u64, u64> = HashMap::new();
    for t in rows.chunks_exact(arity) {
        *freq.entry(t[col]).or_insert(0) += 1;
    }
    freq
}

/// A dataset available to a sub-plan: how to read it, statistics over its
/// variables (exact for base data, a superset for intermediate results) and
/// the first round in which it can be consumed.
#[derive(Clone)]
pub(crate) struct Rel {
    pub name: String,
    pub input: Input,
    pub stats: Arc<Vec<u64>>,
    pub ready: usize,
    pub exact: bool,
}

impl Rel {
    pub fn base(db: &DatabaseInstance, j: usize) -> Rel {
        let a = &db.query.atoms[j];
        Rel {
            name: a.relation.clone(),
            input: Input { source: Source::Base(j), filters: Vec::new(), keep: (0..a.arity()).collect(), vars: a.vars.clone() },
            stats: Arc::new(db.relations[j].data.clone()),
            ready: 1,
            exact: true,
        }
    }

    pub fn vars(&self) -> &[VarId] {
        &self.input.vars
    }

    pub fn arity(&self) -> usize {
        self.input.vars.len()
    }

    pub fn len(&self) -> usize {
        self.stats.len() / self.arity()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn has(&self, v: VarId) -> bool {
        self.input.vars.contains(&v)
    }

    pub fn col(&self, v: VarId) -> usize {
        self.input.vars.iter().position(|&x| x == v).unwrap_or_else(|| panic!("{} has no variable {v}", self.name))
    }

    pub fn degrees(&self, v: VarId) -> HashMap<u64, u64> {
        value_degrees(&self.stats, self.arity(), self.col(v))
    }

    /// Restricts `v` by `pred`; relations without `v` are returned unchanged.
    pub fn filter(&self, v: VarId, pred: &Pred) -> Rel {
        if !self.has(v) {
            return self.clone();
        }
        let c = self.col(v);
        let mut r = self.clone();
        r.input.filters.push((self.input.keep[c], pred.clone()));
        let a = self.arity();
        r.stats = Arc::new(self.stats.chunks_exact(a).filter(|t| pred.test(t[c])).flatten().copied().collect());
        r
    }

    pub fn not_in(&self, v: VarId, set: &Arc<HashSet<u64>>) -> Rel {
        if set.is_empty() {
            return self.clone();
        }
        self.filter(v, &Pred::NotIn(set.clone()))
    }

    /// Tuples with `v = h`, projected away from `v`.
    pub fn fix(&self, v: VarId, h: u64) -> Rel {
        let r = self.filter(v, &Pred::Eq(h));
        r.drop_var(v)
    }

    pub fn drop_var(&self, v: VarId) -> Rel {
        let c = self.col(v);
        let a = self.arity();
        assert!(a > 1, "cannot drop the last variable of {}", self.name);
        let mut r = self.clone();
        r.input.keep.remove(c);
        r.input.vars.remove(c);
        let data: Vec<u64> = self
            .stats
            .chunks_exact(a)
            .flat_map(|t| t.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, &x)| x))
            .collect();
        r.stats = Arc::new(sort_dedup(data, a - 1));
        r.name = format!("{}'", self.name);
        r
    }
}

/// Plan under construction plus the value width used for bit sizes.
pub(crate) struct Ctx {
    pub plan: Plan,
    pub vbits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    Hc,
    OneRoundSkew,
    JoinOneSided,
    SemiJoin,
    Triangle,
    Line,
    Cycle,
    Lw,
    Clique,
    CoveringAtom,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 10] = [
        AlgorithmKind::Hc,
        AlgorithmKind::OneRoundSkew,
        AlgorithmKind::JoinOneSided,
        AlgorithmKind::SemiJoin,
        AlgorithmKind::Triangle,
        AlgorithmKind::Line,
        AlgorithmKind::Cycle,
        AlgorithmKind::Lw,
        AlgorithmKind::Clique,
        AlgorithmKind::CoveringAtom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Hc => "hc",
            AlgorithmKind::OneRoundSkew => "one-round-skew",
            AlgorithmKind::JoinOneSided => "join-one-sided",
            AlgorithmKind::SemiJoin => "semi-join",
            AlgorithmKind::Triangle => "triangle-2round",
            AlgorithmKind::Line => "line",
            AlgorithmKind::Cycle => "cycle",
            AlgorithmKind::Lw => "lw",
            AlgorithmKind::Clique => "clique",
            AlgorithmKind::CoveringAtom => "covering-atom",
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmKind::ALL.iter().copied().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = AlgorithmKind::ALL.iter().map(|a| a.name()).collect();
            format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: AlgorithmKind,
    pub query: String,
    pub p: usize,
    pub output: Output,
    pub load: LoadReport,
    pub rounds: usize,
    pub plan: String,
}

impl AlgorithmResult {
    pub const CSV_HEADER: &'static str = "algorithm,query,p,rounds,max_load_tuples,max_load_bits,output_tuples,checksum";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:016x}",
            self.algorithm,
            self.query,
            self.p,
            self.rounds,
            self.load.max_tuples,
            self.load.max_bits,
            self.output.emitted,
            self.output.checksum
        )
    }

    /// Worst-case one-round bound for the instance sizes, in tuples.
    pub fn bound(&self, db: &DatabaseInstance) -> LoadBound {
        load_bound_worstcase(&db.query, &db.sizes(), self.p.max(2) as u64)
    }
}

/// Builds the plan of `kind` for `db` on `p` servers.
pub fn build_plan(kind: AlgorithmKind, db: &DatabaseInstance, p: usize, seed: u64) -> Result<Plan, PlanError> {
    assert!(p >= 1);
    let mut ctx = Ctx { plan: Plan::new(&db.query, p, seed), vbits: db.value_bits() };
    let rels: Vec<Rel> = (0..db.query.l()).map(|j| Rel::base(db, j)).collect();
    let root = ctx.plan.root();
    let sink = Sink::emit();
    match kind {
        AlgorithmKind::Hc => ctx.hc_share_lp(&rels, &root, 1, 0, &sink)?,
        AlgorithmKind::OneRoundSkew => ctx.one_round_skew(&rels, &root, 1, &sink, "skew")?,
        AlgorithmKind::JoinOneSided => {
            if rels.len() != 2 {
                return Err(unsupported(kind, "needs exactly two atoms"));
            }
            ctx.join_one_sided(&rels[0], &rels[1], &root, 1, &sink, true)?;
        }
        AlgorithmKind::SemiJoin => {
            if rels.len() != 2 {
                return Err(unsupported(kind, "needs exactly two atoms"));
            }
            let (r, s) = if rels[0].vars().iter().all(|v| rels[1].has(*v)) {
                (&rels[0], &rels[1])
            } else if rels[1].vars().iter().all(|v| rels[0].has(*v)) {
                (&rels[1], &rels[0])
            } else {
                return Err(unsupported(kind, "one atom's variables must contain the other's"));
            };
            ctx.semi_join(r, s, &root, 1, &sink)?;
        }
        AlgorithmKind::Triangle => {
            let order = cycle_order(&db.query).filter(|(v, _)| v.len() == 3);
            let (vars, atoms) = order.ok_or_else(|| unsupported(kind, "query is not a triangle"))?;
            let rs = atoms.iter().map(|&j| rels[j].clone()).collect();
            ctx.odd_cycle(&vars, rs, &root, 1, &sink)?;
        }
        AlgorithmKind::Line => {
            let (vars, atoms) = line_order(&db.query).ok_or_else(|| unsupported(kind, "query is not a line"))?;
            let rs = atoms.iter().map(|&j| rels[j].clone()).collect();
            ctx.line(&vars, rs, &root, 1, &sink)?;
        }
        AlgorithmKind::Cycle => {
            let (vars, atoms) = cycle_order(&db.query).ok_or_else(|| unsupported(kind, "query is not a cycle"))?;
            let rs: Vec<Rel> = atoms.iter().map(|&j| rels[j].clone()).collect();
            if vars.len() % 2 == 1 {
                ctx.odd_cycle(&vars, rs, &root, 1, &sink)?;
            } else {
                ctx.even_cycle(&vars, rs, &root, &sink)?;
            }
        }
        AlgorithmKind::Lw => {
            let (vars, atoms) = lw_order(&db.query).ok_or_else(|| unsupported(kind, "query is not Loomis-Whitney"))?;
            let rs = atoms.iter().map(|&j| rels[j].clone()).collect();
            ctx.loomis_whitney(&vars, rs, &root, &sink)?;
        }
        AlgorithmKind::Clique => {
            if !is_clique(&db.query) {
                return Err(unsupported(kind, "query is not a clique"));
            }
            let vars: Vec<VarId> = (0..db.query.k()).collect();
            ctx.clique(&vars, rels, &root, 1, &sink)?;
        }
        AlgorithmKind::CoveringAtom => {
            let j = covering_atom(&db.query).ok_or(PlanError::NoCoveringAtom)?;
            ctx.covering(j, rels, &root, &sink)?;
        }
    }
    Ok(ctx.plan)
}

fn unsupported(kind: AlgorithmKind, reason: &str) -> PlanError {
    PlanError::Unsupported { algorithm: kind.name().to_string(), reason: reason.to_string() }
}

/// Plans and runs `kind` on `db`.
pub fn run_algorithm(kind: AlgorithmKind, db: &DatabaseInstance, cfg: &ClusterConfig) -> Result<AlgorithmResult, PlanError> {
    let plan = build_plan(kind, db, cfg.p, cfg.seed)?;
    execute(kind, &plan, db, cfg)
}

/// HyperCube with shares for the residual query that drops `x_mask`.
pub fn hc_one_round(db: &DatabaseInstance, cfg: &ClusterConfig, x_mask: u64) -> Result<AlgorithmResult, PlanError> {
    let mut ctx = Ctx { plan: Plan::new(&db.query, cfg.p, cfg.seed), vbits: db.value_bits() };
    let rels: Vec<Rel> = (0..db.query.l()).map(|j| Rel::base(db, j)).collect();
    let root = ctx.plan.root();
    ctx.hc_share_lp(&rels, &root, 1, x_mask, &Sink::emit())?;
    execute(AlgorithmKind::Hc, &ctx.plan, db, cfg)
}

pub fn execute(kind: AlgorithmKind, plan: &Plan, db: &DatabaseInstance, cfg: &ClusterConfig) -> Result<AlgorithmResult, PlanError> {
    let ex = PlanExecutor::new(plan)?;
    let run = run_cluster(&ex, db, cfg);
    Ok(AlgorithmResult {
        algorithm: kind,
        query: db.query.name.clone(),
        p: cfg.p,
        rounds: run.load.rounds,
        output: run.output,
        load: run.load,
        plan: plan.describe(),
    })
}

#[cfg(test)]
mod tests;
