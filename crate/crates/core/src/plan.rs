//! Round plans: jobs that route filtered/projected inputs to a set of
//! (virtual) servers and join them locally, plus local products that combine
//! outputs of jobs laid out on a server grid.
//!
//! All variables are indices into the query's variable list. A plan executes
//! through [`PlanExecutor`], which is a [`TupleAlgorithm`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::mpc::{
    hash_values, local_join, ComputeOut, HcGrid, Holdings, Inbox, LabelId, LabelInfo, Outbox, ServerId, TupleAlgorithm,
};
use crate::query::Query;
use crate::rng::mix64;

pub type VarId = usize;
pub type JobId = usize;
pub type ProductId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("insufficient servers for {context}: need {needed}, have {available}")]
    InsufficientServers { context: String, needed: usize, available: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no covering atom: no atom contains every variable")]
    NoCoveringAtom,
    #[error("query shape not supported by {algorithm}: {reason}")]
    Unsupported { algorithm: String, reason: String },
    #[error("invalid plan: {0}")]
    Invalid(String),
}

/// Virtual servers `0..len()`, each backed by a group of physical servers.
/// Every group lists its members in the same replica order; `tags[r]`
/// identifies replica `r`. Replicated execution arises from grids: the rows
/// of a grid run one sub-plan, replicated once per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerSet {
    groups: Vec<Vec<ServerId>>,
    tags: Vec<Vec<u32>>,
}

impl ServerSet {
    pub fn root(p: usize) -> ServerSet {
        ServerSet { groups: (0..p as ServerId).map(|s| vec![s]).collect(), tags: vec![Vec::new()] }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn replicas(&self) -> usize {
        self.tags.len()
    }

    pub fn group(&self, d: usize) -> &[ServerId] {
        &self.groups[d]
    }

    pub fn is_root(&self) -> bool {
        self.tags.len() == 1 && self.tags[0].is_empty() && self.groups.iter().enumerate().all(|(i, g)| g == &[i as ServerId])
    }

    pub fn slice(&self, offset: usize, count: usize) -> ServerSet {
        assert!(offset + count <= self.len() && count > 0, "slice {offset}+{count} of {}", self.len());
        ServerSet { groups: self.groups[offset..offset + count].to_vec(), tags: self.tags.clone() }
    }

    /// Splits the first `rows * cols` virtual servers into a grid. The first
    /// set has `rows` virtual servers (each replicated across the columns), the
    /// second has `cols` (each replicated across the rows).
    pub fn grid(&self, rows: usize, cols: usize) -> (ServerSet, ServerSet) {
        assert!(rows >= 1 && cols >= 1 && rows * cols <= self.len(), "grid {rows}x{cols} of {}", self.len());
        let cell = |i: usize, j: usize| &self.groups[i * cols + j];
        let extend = |n: usize| -> Vec<Vec<u32>> {
            (0..n as u32)
                .flat_map(|x| {
                    self.tags.iter().map(move |t| {
                        let mut t = t.clone();
                        t.push(x);
                        t
                    })
                })
                .collect()
        };
        let a = ServerSet {
            groups: (0..rows).map(|i| (0..cols).flat_map(|j| cell(i, j).iter().copied()).collect()).collect(),
            tags: extend(cols),
        };
        let b = ServerSet {
            groups: (0..cols).map(|j| (0..rows).flat_map(|i| cell(i, j).iter().copied()).collect()).collect(),
            tags: extend(rows),
        };
        (a, b)
    }

    pub fn physical(&self) -> BTreeSet<ServerId> {
        self.groups.iter().flatten().copied().collect()
    }

    fn describe(&self) -> String {
        if self.is_root() {
            return format!("all {} servers", self.len());
        }
        let phys = self.physical();
        let lo = phys.iter().next().copied().unwrap_or(0);
        let hi = phys.iter().next_back().copied().unwrap_or(0);
        if self.replicas() == 1 {
            format!("{} servers [{lo}..{hi}]", self.len())
        } else {
            format!("{} virtual x {} replicas over [{lo}..{hi}]", self.len(), self.replicas())
        }
    }
}

/// Hands out disjoint slices of a server set and fails loudly on over-commit.
#[derive(Debug, Clone)]
pub struct Allocator {
    set: ServerSet,
    next: usize,
}

impl Allocator {
    pub fn new(set: ServerSet) -> Allocator {
        Allocator { set, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.set.len() - self.next
    }

    pub fn take(&mut self, n: usize, context: &str) -> Result<ServerSet, PlanError> {
        if n == 0 || n > self.remaining() {
            return Err(PlanError::InsufficientServers {
                context: context.to_string(),
                needed: n,
                available: self.remaining(),
            });
        }
        let s = self.set.slice(self.next, n);
        self.next += n;
        Ok(s)
    }
}

/// Splits `total` servers into integer parts proportional to `weights`
/// (floor of each exact share, at least 1). Errors if the floors plus the
/// minimum of one server each do not fit.
pub fn proportional(total: usize, weights: &[f64], context: &str) -> Result<Vec<usize>, PlanError> {
    let sum: f64 = weights.iter().sum();
    let parts: Vec<usize> =
        weights.iter().map(|w| if sum > 0.0 { ((total as f64) * w / sum).floor() as usize } else { 0 }.max(1)).collect();
    let needed: usize = parts.iter().sum();
    if needed > total {
        return Err(PlanError::InsufficientServers { context: context.to_string(), needed, available: total });
    }
    Ok(parts)
}

#[derive(Clone)]
pub enum Pred {
    Eq(u64),
    In(Arc<HashSet<u64>>),
    NotIn(Arc<HashSet<u64>>),
}

impl Pred {
    #[inline]
    pub fn test(&self, v: u64) -> bool {
        match self {
            Pred::Eq(x) => v == *x,
            Pred::In(s) => s.contains(&v),
            Pred::NotIn(s) => !s.contains(&v),
        }
    }
}

impl fmt::Debug for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pred::Eq(x) => write!(f, "={x}"),
            Pred::In(s) => write!(f, " in H({})", s.len()),
            Pred::NotIn(s) => write!(f, " notin H({})", s.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Base(usize),
    Job(JobId),
}

/// A dataset fed into a job: the source tuples that pass every filter,
/// projected onto `keep` (source columns) and named by `vars`.
#[derive(Debug, Clone)]
pub struct Input {
    pub source: Source,
    pub filters: Vec<(usize, Pred)>,
    pub keep: Vec<usize>,
    pub vars: Vec<VarId>,
}

#[derive(Clone)]
pub enum Strategy {
    /// HyperCube over `vars` with the given shares (product at most the job's
    /// server count).
    Hc { vars: Vec<VarId>, shares: Vec<u64> },
    /// Hash join on `key`. Key values listed in `heavy` own the server range
    /// `(offset, count)`; inputs flagged in `spread` are hashed on the whole
    /// tuple inside that range, the others are broadcast to all of it.
    Keyed { key: Vec<VarId>, heavy: Arc<HashMap<Vec<u64>, (u32, u32)>>, spread: Vec<bool> },
    /// Hash of all output variables; every input must carry all of them.
    HashAll,
    /// Tuples stay on the server that holds them (root server set only).
    Local,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Hc { vars, shares } => write!(f, "Hc{{vars: {vars:?}, shares: {shares:?}}}"),
            Strategy::Keyed { key, heavy, spread } => {
                write!(f, "Keyed{{key: {key:?}, heavy: {}, spread: {spread:?}}}", heavy.len())
            }
            Strategy::HashAll => write!(f, "HashAll"),
            Strategy::Local => write!(f, "Local"),
        }
    }
}

pub type Classifier = Arc<dyn Fn(&[u64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum Sink {
    /// Emit as query output, adding constant columns; `classifier` (applied to
    /// the full output tuple) decides which outputs this branch owns.
    Emit { consts: Vec<(VarId, u64)>, classifier: Option<Classifier> },
    /// Keep on the producing server for later rounds.
    Hold,
    /// Keep locally as one side of a product.
    Side { product: ProductId, side: usize, consts: Vec<(VarId, u64)> },
}

impl Sink {
    pub fn emit() -> Sink {
        Sink::Emit { consts: Vec::new(), classifier: None }
    }

    /// Same target with extra constant columns.
    pub fn with_consts(&self, extra: &[(VarId, u64)]) -> Sink {
        match self {
            Sink::Emit { consts, classifier } => {
                let mut c = consts.clone();
                c.extend_from_slice(extra);
                Sink::Emit { consts: c, classifier: classifier.clone() }
            }
            Sink::Side { product, side, consts } => {
                let mut c = consts.clone();
                c.extend_from_slice(extra);
                Sink::Side { product: *product, side: *side, consts: c }
            }
            Sink::Hold => {
                assert!(extra.is_empty(), "held outputs carry no constants");
                Sink::Hold
            }
        }
    }

    pub fn with_classifier(&self, f: Classifier) -> Sink {
        match self {
            Sink::Emit { consts, classifier: None } => Sink::Emit { consts: consts.clone(), classifier: Some(f) },
            Sink::Emit { consts, classifier: Some(g) } => {
                let g = g.clone();
                Sink::Emit { consts: consts.clone(), classifier: Some(Arc::new(move |t: &[u64]| g(t) && f(t))) }
            }
            other => other.clone(),
        }
    }

    fn consts(&self) -> &[(VarId, u64)] {
        match self {
            Sink::Emit { consts, .. } | Sink::Side { consts, .. } => consts,
            Sink::Hold => &[],
        }
    }
}

impl fmt::Debug for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sink::Emit { consts, classifier } => {
                write!(f, "emit")?;
                if !consts.is_empty() {
                    write!(f, " with {consts:?}")?;
                }
                if classifier.is_some() {
                    write!(f, " (classified)")?;
                }
                Ok(())
            }
            Sink::Hold => write!(f, "hold"),
            Sink::Side { product, side, consts } => {
                write!(f, "product P{product} side {side}")?;
                if !consts.is_empty() {
                    write!(f, " with {consts:?}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub round: usize,
    pub label: String,
    pub servers: ServerSet,
    pub strategy: Strategy,
    pub inputs: Vec<Input>,
    /// Sorted union of the input variables.
    pub out_vars: Vec<VarId>,
    pub sink: Sink,
}

#[derive(Debug, Clone)]
pub struct Product {
    pub label: String,
    pub sides: Vec<Vec<VarId>>,
    pub out_vars: Vec<VarId>,
    pub sink: Sink,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub query: Query,
    pub p: usize,
    pub seed: u64,
    pub jobs: Vec<Job>,
    pub products: Vec<Product>,
    pub notes: Vec<String>,
}

impl Plan {
    pub fn new(query: &Query, p: usize, seed: u64) -> Plan {
        Plan { query: query.clone(), p, seed, jobs: Vec::new(), products: Vec::new(), notes: Vec::new() }
    }

    pub fn root(&self) -> ServerSet {
        ServerSet::root(self.p)
    }

    pub fn rounds(&self) -> usize {
        self.jobs.iter().map(|j| j.round).max().unwrap_or(0)
    }

    pub fn out_vars_of(&self, source: Source) -> Vec<VarId> {
        match source {
            Source::Base(j) => self.query.atoms[j].vars.clone(),
            Source::Job(id) => self.jobs[id].out_vars.clone(),
        }
    }

    pub fn add_job(
        &mut self,
        round: usize,
        label: impl Into<String>,
        servers: ServerSet,
        strategy: Strategy,
        inputs: Vec<Input>,
        sink: Sink,
    ) -> JobId {
        assert!(round >= 1);
        let mut vars: Vec<VarId> = inputs.iter().flat_map(|i| i.vars.iter().copied()).collect();
        vars.sort_unstable();
        vars.dedup();
        self.jobs.push(Job { round, label: label.into(), servers, strategy, inputs, out_vars: vars, sink });
        self.jobs.len() - 1
    }

    pub fn add_product(&mut self, label: impl Into<String>, sides: Vec<Vec<VarId>>, sink: Sink) -> ProductId {
        let mut vars: Vec<VarId> = sides.iter().flatten().copied().collect();
        vars.sort_unstable();
        vars.dedup();
        self.products.push(Product { label: label.into(), sides, out_vars: vars, sink });
        self.products.len() - 1
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let k = self.query.k();
        let bad = |m: String| Err(PlanError::Invalid(m));
        for (id, j) in self.jobs.iter().enumerate() {
            if j.inputs.is_empty() {
                return bad(format!("job {id} has no inputs"));
            }
            for inp in &j.inputs {
                if inp.vars.is_empty() || inp.vars.len() != inp.keep.len() {
                    return bad(format!("job {id}: malformed input"));
                }
                if let Source::Job(p) = inp.source {
                    if p >= id || self.jobs[p].round >= j.round || !matches!(self.jobs[p].sink, Sink::Hold) {
                        return bad(format!("job {id} consumes job {p} out of order"));
                    }
                }
            }
            match &j.strategy {
                Strategy::Hc { vars, shares } => {
                    if vars.len() != shares.len() || shares.iter().product::<u64>() > j.servers.len() as u64 {
                        return bad(format!("job {id}: shares {shares:?} exceed {} servers", j.servers.len()));
                    }
                }
                Strategy::Keyed { key, heavy, spread } => {
                    if spread.len() != j.inputs.len() || j.inputs.iter().any(|i| key.iter().any(|v| !i.vars.contains(v))) {
                        return bad(format!("job {id}: keyed inputs must carry the key"));
                    }
                    if heavy.values().any(|&(o, c)| c == 0 || (o + c) as usize > j.servers.len()) {
                        return bad(format!("job {id}: heavy range out of bounds"));
                    }
                }
                Strategy::HashAll => {
                    if j.inputs.iter().any(|i| i.vars.len() != j.out_vars.len()) {
                        return bad(format!("job {id}: hash-all inputs must carry every variable"));
                    }
                }
                Strategy::Local => {
                    if !j.servers.is_root() || j.inputs.iter().any(|i| matches!(i.source, Source::Job(_))) {
                        return bad(format!("job {id}: local jobs read base data on the root set"));
                    }
                }
            }
            self.check_sink(&j.sink, &j.out_vars, &format!("job {id}"))?;
        }
        for (id, pr) in self.products.iter().enumerate() {
            self.check_sink(&pr.sink, &pr.out_vars, &format!("product {id}"))?;
            if let Sink::Side { product, .. } = pr.sink {
                if product >= id {
                    return bad(format!("product {id} feeds product {product}: parents must be created first"));
                }
            }
        }
        let _ = k;
        Ok(())
    }

    fn check_sink(&self, sink: &Sink, vars: &[VarId], what: &str) -> Result<(), PlanError> {
        let mut all: Vec<VarId> = vars.to_vec();
        all.extend(sink.consts().iter().map(|c| c.0));
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        if all.len() != n {
            return Err(PlanError::Invalid(format!("{what}: constant overlaps a variable")));
        }
        match sink {
            Sink::Emit { .. } => {
                if all != (0..self.query.k()).collect::<Vec<_>>() {
                    return Err(PlanError::Invalid(format!("{what}: emitted tuples miss variables")));
                }
            }
            Sink::Side { product, side, .. } => {
                let mut want = self.products.get(*product).map(|p| p.sides[*side].clone()).unwrap_or_default();
                want.sort_unstable();
                if all != want {
                    return Err(PlanError::Invalid(format!("{what}: side variables differ")));
                }
            }
            Sink::Hold => {}
        }
        Ok(())
    }

    fn var_name(&self, v: VarId) -> &str {
        &self.query.vars[v]
    }

    fn describe_input(&self, inp: &Input) -> String {
        let (name, cols): (String, Vec<VarId>) = match inp.source {
            Source::Base(j) => (self.query.atoms[j].relation.clone(), self.query.atoms[j].vars.clone()),
            Source::Job(id) => (format!("J{id}"), self.jobs[id].out_vars.clone()),
        };
        let vars: Vec<&str> = inp.vars.iter().map(|&v| self.var_name(v)).collect();
        let mut s = format!("{name}({})", vars.join(","));
        if !inp.filters.is_empty() {
            let f: Vec<String> =
                inp.filters.iter().map(|(c, p)| format!("{}{:?}", self.var_name(cols[*c]), p)).collect();
            let _ = write!(s, "[{}]", f.join(", "));
        }
        if inp.keep.len() < cols.len() {
            s.insert(0, 'π');
        }
        s
    }

    /// Round-by-round description of the plan.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "plan for {} on p={} ({} jobs, {} products)", self.query, self.p, self.jobs.len(), self.products.len());
        for r in 1..=self.rounds() {
            let _ = writeln!(s, "round {r}:");
            for (id, j) in self.jobs.iter().enumerate().filter(|(_, j)| j.round == r) {
                let ins: Vec<String> = j.inputs.iter().map(|i| self.describe_input(i)).collect();
                let strat = match &j.strategy {
                    Strategy::Hc { vars, shares } => {
                        let parts: Vec<String> =
                            vars.iter().zip(shares).map(|(v, s)| format!("{}={s}", self.var_name(*v))).collect();
                        format!("hypercube [{}]", parts.join(","))
                    }
                    Strategy::Keyed { key, heavy, .. } => {
                        let names: Vec<&str> = key.iter().map(|&v| self.var_name(v)).collect();
                        format!("hash on ({}) with {} heavy ranges", names.join(","), heavy.len())
                    }
                    Strategy::HashAll => "hash on all variables".to_string(),
                    Strategy::Local => "local".to_string(),
                };
                let _ = writeln!(
                    s,
                    "  J{id} {} on {}: {strat}; inputs {}; {:?}",
                    j.label,
                    j.servers.describe(),
                    ins.join(" "),
                    j.sink
                );
            }
        }
        for (id, pr) in self.products.iter().enumerate() {
            let sides: Vec<String> = pr
                .sides
                .iter()
                .map(|sv| sv.iter().map(|&v| self.var_name(v).to_string()).collect::<Vec<_>>().join(","))
                .collect();
            let _ = writeln!(s, "  P{id} {}: local join of ({}) at the end; {:?}", pr.label, sides.join(") x ("), pr.sink);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

struct ConsumerSet {
    general: Vec<(JobId, usize)>,
    /// (source column, value -> consumers) for inputs with an equality filter
    by_eq: Vec<(usize, HashMap<u64, Vec<(JobId, usize)>>)>,
}

/// Runs a [`Plan`] as a tuple-based MPC algorithm.
pub struct PlanExecutor<'a> {
    plan: &'a Plan,
    labels: Vec<LabelInfo>,
    in_label: Vec<Vec<LabelId>>,
    held_label: Vec<Option<LabelId>>,
    side_label: Vec<Vec<LabelId>>,
    local: Vec<bool>,
    consumers: HashMap<(usize, LabelId), ConsumerSet>,
    grids: Vec<Option<HcGrid>>,
    seeds: Vec<u64>,
    /// physical server -> replica index, per job
    member_tag: Vec<HashMap<ServerId, usize>>,
    /// per (job, slot) fed by another job: producer replica -> consumer replica positions
    tag_routes: Vec<Vec<Vec<Vec<usize>>>>,
    /// per round, per physical server: jobs computed there
    schedule: Vec<Vec<Vec<JobId>>>,
    rounds: usize,
}

impl<'a> PlanExecutor<'a> {
    pub fn new(plan: &'a Plan) -> Result<PlanExecutor<'a>, PlanError> {
        plan.validate()?;
        let q = &plan.query;
        let mut labels: Vec<LabelInfo> =
            q.atoms.iter().map(|a| LabelInfo { name: a.relation.clone(), arity: a.arity() }).collect();
        let mut local = vec![false; labels.len()];
        let add = |labels: &mut Vec<LabelInfo>, local: &mut Vec<bool>, name: String, arity: usize, is_local: bool| {
            labels.push(LabelInfo { name, arity });
            local.push(is_local);
            (labels.len() - 1) as LabelId
        };
        let mut in_label = Vec::new();
        let mut held_label = Vec::new();
        for (id, j) in plan.jobs.iter().enumerate() {
            let slots = j
                .inputs
                .iter()
                .map(|inp| {
                    let src = match inp.source {
                        Source::Base(a) => q.atoms[a].relation.clone(),
                        Source::Job(p) => format!("J{p}"),
                    };
                    add(&mut labels, &mut local, format!("J{id}:{}<-{src}", j.label), inp.vars.len(), false)
                })
                .collect();
            in_label.push(slots);
            held_label.push(match j.sink {
                Sink::Hold => Some(add(&mut labels, &mut local, format!("J{id}:{}", j.label), j.out_vars.len(), false)),
                _ => None,
            });
        }
        let side_label = plan
            .products
            .iter()
            .enumerate()
            .map(|(id, p)| {
                p.sides
                    .iter()
                    .enumerate()
                    .map(|(s, v)| add(&mut labels, &mut local, format!("P{id}.{s}"), v.len(), true))
                    .collect()
            })
            .collect();

        let rounds = plan.rounds();
        let mut consumers: HashMap<(usize, LabelId), ConsumerSet> = HashMap::new();
        for (id, j) in plan.jobs.iter().enumerate() {
            for (slot, inp) in j.inputs.iter().enumerate() {
                let src_label = match inp.source {
                    Source::Base(a) => a as LabelId,
                    Source::Job(p) => held_label[p].expect("validated"),
                };
                let entry = consumers
                    .entry((j.round, src_label))
                    .or_insert_with(|| ConsumerSet { general: Vec::new(), by_eq: Vec::new() });
                match inp.filters.iter().find_map(|(c, p)| if let Pred::Eq(v) = p { Some((*c, *v)) } else { None }) {
                    Some((col, v)) => {
                        let pos = match entry.by_eq.iter().position(|(c, _)| *c == col) {
                            Some(i) => i,
                            None => {
                                entry.by_eq.push((col, HashMap::new()));
                                entry.by_eq.len() - 1
                            }
                        };
                        entry.by_eq[pos].1.entry(v).or_default().push((id, slot));
                    }
                    None => entry.general.push((id, slot)),
                }
            }
        }
        let seeds: Vec<u64> = (0..plan.jobs.len()).map(|id| mix64(plan.seed ^ mix64(id as u64 + 1))).collect();
        let grids = plan
            .jobs
            .iter()
            .zip(&seeds)
            .map(|(j, &seed)| match &j.strategy {
                Strategy::Hc { shares, .. } => Some(HcGrid::new(shares.clone(), seed)),
                _ => None,
            })
            .collect();
        let member_tag: Vec<HashMap<ServerId, usize>> = plan
            .jobs
            .iter()
            .map(|j| {
                let mut m = HashMap::new();
                for d in 0..j.servers.len() {
                    for (r, &s) in j.servers.group(d).iter().enumerate() {
                        if m.insert(s, r).is_some() {
                            panic!("job {} uses server {s} twice", j.label);
                        }
                    }
                }
                m
            })
            .collect();
        let mut tag_routes = Vec::new();
        for j in &plan.jobs {
            let mut per_slot = Vec::new();
            for inp in &j.inputs {
                per_slot.push(match inp.source {
                    Source::Base(_) => Vec::new(),
                    Source::Job(p) => {
                        let prod = &plan.jobs[p].servers.tags;
                        let cons = &j.servers.tags;
                        prod.iter()
                            .map(|pt| {
                                let pos: Vec<usize> =
                                    (0..cons.len()).filter(|&c| cons[c].starts_with(pt)).collect();
                                if pos.is_empty() || cons.iter().any(|c| c.len() < pt.len() && pt.starts_with(c)) {
                                    return Err(PlanError::Invalid(format!(
                                        "job {} cannot consume a more replicated producer",
                                        j.label
                                    )));
                                }
                                Ok(pos)
                            })
                            .collect::<Result<Vec<_>, _>>()?
                    }
                });
            }
            tag_routes.push(per_slot);
        }
        let mut schedule = vec![vec![Vec::new(); plan.p]; rounds + 1];
        for (id, j) in plan.jobs.iter().enumerate() {
            for s in j.servers.physical() {
                schedule[j.round][s as usize].push(id);
            }
        }
        Ok(PlanExecutor {
            plan,
            labels,
            in_label,
            held_label,
            side_label,
            local,
            consumers,
            grids,
            seeds,
            member_tag,
            tag_routes,
            schedule,
            rounds,
        })
    }

    fn route_one(&self, job: JobId, slot: usize, holder: ServerId, tuple: &[u64], out: &mut Outbox) {
        let j = &self.plan.jobs[job];
        let inp = &j.inputs[slot];
        if !inp.filters.iter().all(|(c, p)| p.test(tuple[*c])) {
            return;
        }
        let projected: Vec<u64> = inp.keep.iter().map(|&c| tuple[c]).collect();
        let mut dests: Vec<u64> = Vec::new();
        match &j.strategy {
            Strategy::Hc { vars, .. } => {
                let fixed: Vec<(usize, u64)> = vars
                    .iter()
                    .enumerate()
                    .filter_map(|(coord, v)| inp.vars.iter().position(|x| x == v).map(|c| (coord, projected[c])))
                    .collect();
                self.grids[job].as_ref().expect("hc grid").route(&fixed, &mut dests);
            }
            Strategy::Keyed { key, heavy, spread } => {
                let kv: Vec<u64> = key
                    .iter()
                    .map(|v| projected[inp.vars.iter().position(|x| x == v).expect("validated")])
                    .collect();
                match heavy.get(&kv) {
                    Some(&(off, cnt)) => {
                        if spread[slot] {
                            dests.push(off as u64 + hash_values(self.seeds[job] ^ 0xA5A5, &projected, cnt as u64));
                        } else {
                            dests.extend((off..off + cnt).map(u64::from));
                        }
                    }
                    None => dests.push(hash_values(self.seeds[job], &kv, j.servers.len() as u64)),
                }
            }
            Strategy::HashAll => {
                let ordered: Vec<u64> = j
                    .out_vars
                    .iter()
                    .map(|v| projected[inp.vars.iter().position(|x| x == v).expect("validated")])
                    .collect();
                dests.push(hash_values(self.seeds[job], &ordered, j.servers.len() as u64));
            }
            Strategy::Local => {
                out.send(holder, self.in_label[job][slot], &projected);
                return;
            }
        }
        let label = self.in_label[job][slot];
        match inp.source {
            Source::Base(_) => {
                for d in dests {
                    for &s in j.servers.group(d as usize) {
                        out.send(s, label, &projected);
                    }
                }
            }
            Source::Job(p) => {
                let tag = *self.member_tag[p].get(&holder).expect("holder belongs to producer");
                let positions = &self.tag_routes[job][slot][tag];
                for d in dests {
                    let g = j.servers.group(d as usize);
                    for &pos in positions {
                        out.send(g[pos], label, &projected);
                    }
                }
            }
        }
    }

    fn deliver(&self, sink: &Sink, vars: &[VarId], rows: Vec<u64>, out: &mut ComputeOut, held_label: Option<LabelId>) {
        if rows.is_empty() {
            return;
        }
        let a = vars.len();
        match sink {
            Sink::Hold => out.held.push((held_label.expect("hold label"), rows)),
            Sink::Emit { consts, classifier } => {
                let k = self.plan.query.k();
                let mut t = vec![0u64; k];
                for &(v, c) in consts {
                    t[v] = c;
                }
                let mut emitted = Vec::with_capacity(rows.len() / a * k);
                for r in rows.chunks_exact(a) {
                    for (i, &v) in vars.iter().enumerate() {
                        t[v] = r[i];
                    }
                    if classifier.as_ref().is_none_or(|f| f(&t)) {
                        emitted.extend_from_slice(&t);
                    }
                }
                out.emitted.extend(emitted);
            }
            Sink::Side { product, side, consts } => {
                let target = &self.plan.products[*product].sides[*side];
                let src: Vec<Result<usize, u64>> = target
                    .iter()
                    .map(|v| match vars.iter().position(|x| x == v) {
                        Some(i) => Ok(i),
                        None => Err(consts.iter().find(|c| c.0 == *v).expect("validated").1),
                    })
                    .collect();
                let mut data = Vec::with_capacity(rows.len() / a * target.len());
                for r in rows.chunks_exact(a) {
                    for s in &src {
                        data.push(match s {
                            Ok(i) => r[*i],
                            Err(c) => *c,
                        });
                    }
                }
                out.held.push((self.side_label[*product][*side], data));
            }
        }
    }
}

impl TupleAlgorithm for PlanExecutor<'_> {
    fn rounds(&self) -> usize {
        self.rounds
    }

    fn labels(&self) -> &[LabelInfo] {
        &self.labels
    }

    fn num_base(&self) -> usize {
        self.plan.query.l()
    }

    fn output_arity(&self) -> usize {
        self.plan.query.k()
    }

    fn is_local(&self, label: LabelId) -> bool {
        self.local[label as usize]
    }

    fn route(&self, round: usize, label: LabelId, holder: ServerId, tuple: &[u64], out: &mut Outbox) {
        let Some(cs) = self.consumers.get(&(round, label)) else { return };
        for &(job, slot) in &cs.general {
            self.route_one(job, slot, holder, tuple, out);
        }
        for (col, map) in &cs.by_eq {
            if let Some(list) = map.get(&tuple[*col]) {
                for &(job, slot) in list {
                    self.route_one(job, slot, holder, tuple, out);
                }
            }
        }
    }

    fn compute(&self, round: usize, server: ServerId, inbox: &Inbox, held: &Holdings, out: &mut ComputeOut) {
        for &id in &self.schedule[round][server as usize] {
            let j = &self.plan.jobs[id];
            let inputs: Vec<(&[usize], &[u64])> = j
                .inputs
                .iter()
                .enumerate()
                .map(|(slot, inp)| (inp.vars.as_slice(), inbox.get(self.in_label[id][slot])))
                .collect();
            if inputs.iter().any(|(_, rows)| rows.is_empty()) {
                continue;
            }
            let mut rows = Vec::new();
            local_join(&inputs, &j.out_vars, &mut |t| rows.extend_from_slice(t));
            self.deliver(&j.sink, &j.out_vars, rows, out, self.held_label[id]);
        }
        if round != self.rounds {
            return;
        }
        for pid in (0..self.plan.products.len()).rev() {
            let pr = &self.plan.products[pid];
            let mut sides: Vec<Vec<u64>> = Vec::with_capacity(pr.sides.len());
            for &l in &self.side_label[pid] {
                let mut data: Vec<u64> = held.rows(l).flat_map(|r| r.iter().copied()).collect();
                for (hl, rows) in &out.held {
                    if *hl == l {
                        data.extend_from_slice(rows);
                    }
                }
                sides.push(data);
            }
            if sides.iter().any(Vec::is_empty) {
                continue;
            }
            let inputs: Vec<(&[usize], &[u64])> =
                pr.sides.iter().zip(&sides).map(|(v, d)| (v.as_slice(), d.as_slice())).collect();
            let mut rows = Vec::new();
            local_join(&inputs, &pr.out_vars, &mut |t| rows.extend_from_slice(t));
            self.deliver(&pr.sink, &pr.out_vars, rows, out, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_groups_and_tags() {
        let root = ServerSet::root(6);
        let (a, b) = root.grid(2, 3);
        assert_eq!(a.len(), 2);
        assert_eq!(a.group(0), &[0, 1, 2]);
        assert_eq!(a.group(1), &[3, 4, 5]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.group(2), &[2, 5]);
        assert_eq!(a.replicas(), 3);
        let (aa, _) = a.grid(1, 2);
        assert_eq!(aa.group(0), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(aa.replicas(), 6);
    }

    #[test]
    fn allocator_fails_loudly() {
        let mut al = Allocator::new(ServerSet::root(8));
        assert_eq!(al.take(5, "a").unwrap().len(), 5);
        assert!(matches!(al.take(4, "b"), Err(PlanError::InsufficientServers { needed: 4, available: 3, .. })));
        assert_eq!(proportional(10, &[1.0, 1.0, 2.0], "w").unwrap(), vec![2, 2, 5]);
        assert!(proportional(2, &[1.0, 1.0, 1.0], "w").is_err());
    }

    use crate::datagen::gen_single_heavy;
    use crate::mpc::{oracle_join, run_cluster, ClusterConfig};
    use crate::query::{canonical_query, Family};

    fn base(j: usize, vars: &[VarId]) -> Input {
        Input { source: Source::Base(j), filters: Vec::new(), keep: (0..vars.len()).collect(), vars: vars.to_vec() }
    }

    #[test]
    fn hypercube_job_matches_oracle() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_single_heavy(&q, 300, 0, 5);
        let mut plan = Plan::new(&q, 27, 9);
        let inputs = q.atoms.iter().enumerate().map(|(j, a)| base(j, &a.vars)).collect();
        plan.add_job(1, "hc", plan.root(), Strategy::Hc { vars: vec![0, 1, 2], shares: vec![3, 3, 3] }, inputs, Sink::emit());
        let ex = PlanExecutor::new(&plan).unwrap();
        let res = run_cluster(&ex, &db, &ClusterConfig::new(27, 9));
        assert!(res.output.matches(&oracle_join(&db).unwrap()));
        assert_eq!(res.load.rounds, 1);
    }

    #[test]
    fn held_results_feed_later_rounds() {
        // R(x,y) joined with S(y,z) on y, then with T(z,x) on (x,z)
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_single_heavy(&q, 200, 1, 3);
        let mut plan = Plan::new(&q, 16, 1);
        let none = Arc::new(HashMap::new());
        let j = plan.add_job(
            1,
            "rs",
            plan.root(),
            Strategy::Keyed { key: vec![1], heavy: none, spread: vec![true, true] },
            vec![base(0, &[0, 1]), base(1, &[1, 2])],
            Sink::Hold,
        );
        let held = Input { source: Source::Job(j), filters: Vec::new(), keep: vec![0, 1, 2], vars: vec![0, 1, 2] };
        let t = q.atoms[2].vars.clone();
        let keyed = Strategy::Keyed { key: vec![0, 2], heavy: Arc::new(HashMap::new()), spread: vec![true, true] };
        plan.add_job(2, "close", plan.root(), keyed, vec![held, base(2, &t)], Sink::emit());
        let ex = PlanExecutor::new(&plan).unwrap();
        let res = run_cluster(&ex, &db, &ClusterConfig::new(16, 1));
        assert!(res.output.matches(&oracle_join(&db).unwrap()));
        assert!(plan.describe().contains("round 2:"));
    }
}
