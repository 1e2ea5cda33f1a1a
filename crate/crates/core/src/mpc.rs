//! MPC simulation: hashing, HyperCube routing, local and oracle joins, and a
//! round-synchronous cluster that runs any [`TupleAlgorithm`] with exact load
//! accounting.
//!
//! Messages produced while routing a round are buffered per destination and
//! only become visible to `compute` after every server finished routing (the
//! round barrier). A message whose destination is the server already holding
//! the tuple is delivered but not counted as load.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{value_bits, DatabaseInstance};
use crate::query::Query;
use crate::rng::mix64;

pub type ServerId = u32;
pub type LabelId = u32;

/// Multiply-add-shift hash `h(v) = ((a·v + b) mod 2^64) >> 32` scaled to
/// `[0, buckets)`, with `a` (odd) and `b` derived from `(seed, coordinate)`
/// through the SplitMix64 finalizer. Buckets are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFn {
    a: u64,
    b: u64,
}

impl HashFn {
    pub fn new(seed: u64, coordinate: u64) -> HashFn {
        let a = mix64(seed ^ mix64(coordinate.wrapping_mul(2).wrapping_add(1))) | 1;
        let b = mix64(a ^ seed.rotate_left(17));
        HashFn { a, b }
    }

    #[inline]
    pub fn bucket(&self, v: u64, buckets: u64) -> u64 {
        if buckets <= 1 {
            return 0;
        }
        let h = self.a.wrapping_mul(v).wrapping_add(self.b) >> 32;
        (h * buckets) >> 32
    }
}

/// Hash of a whole value sequence, scaled to `[0, buckets)`.
#[inline]
pub fn hash_values(seed: u64, values: &[u64], buckets: u64) -> u64 {
    if buckets <= 1 {
        return 0;
    }
    let mut h = seed;
    for &v in values {
        h = mix64(h ^ v.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    ((h as u128 * buckets as u128) >> 64) as u64
}

/// A HyperCube grid over `shares.len()` coordinates, indexed in mixed radix
/// (first coordinate most significant).
#[derive(Debug, Clone)]
pub struct HcGrid {
    pub shares: Vec<u64>,
    pub hashes: Vec<HashFn>,
    strides: Vec<u64>,
}

impl HcGrid {
    pub fn new(shares: Vec<u64>, seed: u64) -> HcGrid {
        let n = shares.len();
        let mut strides = vec![1u64; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shares[i + 1];
        }
        let hashes = (0..n).map(|i| HashFn::new(seed, i as u64)).collect();
        HcGrid { shares, hashes, strides }
    }

    pub fn size(&self) -> u64 {
        self.shares.iter().product()
    }

    /// All grid cells consistent with `fixed` (coordinate, value) pairs: the
    /// destination subcube. Its size is the product of the shares of the
    /// coordinates not in `fixed`.
    pub fn route(&self, fixed: &[(usize, u64)], out: &mut Vec<u64>) {
        out.clear();
        let mut base = 0u64;
        let mut bound = vec![false; self.shares.len()];
        for &(c, v) in fixed {
            base += self.hashes[c].bucket(v, self.shares[c]) * self.strides[c];
            bound[c] = true;
        }
        out.push(base);
        for c in 0..self.shares.len() {
            if bound[c] || self.shares[c] == 1 {
                continue;
            }
            let len = out.len();
            for step in 1..self.shares[c] {
                for i in 0..len {
                    let v = out[i] + step * self.strides[c];
                    out.push(v);
                }
            }
        }
    }
}

/// Spec-level HyperCube routing of a tuple of atom `j` of `q` under per-variable
/// `shares`: returns the destination subcube.
pub fn hc_route(q: &Query, j: usize, tuple: &[u64], shares: &[u64], seed: u64) -> Vec<u64> {
    let grid = HcGrid::new(shares.to_vec(), seed);
    let fixed: Vec<(usize, u64)> = q.atoms[j].vars.iter().copied().zip(tuple.iter().copied()).collect();
    let mut out = Vec::new();
    grid.route(&fixed, &mut out);
    out
}

/// Natural join of `inputs` (each a variable list plus flat rows) producing
/// tuples over `out_vars`. Every variable of every input must be in
/// `out_vars` and every input must have at least one variable. Inputs are
/// deduplicated, so the output has no duplicates.
pub fn local_join(inputs: &[(&[usize], &[u64])], out_vars: &[usize], emit: &mut dyn FnMut(&[u64])) {
    let depth = out_vars.len();
    let pos = |v: usize| out_vars.iter().position(|&o| o == v).expect("input variable missing from output");
    let mut prepared: Vec<Prepared> = Vec::with_capacity(inputs.len());
    for &(vars, rows) in inputs {
        let arity = vars.len();
        assert!(arity > 0, "nullary join input");
        if rows.is_empty() {
            return;
        }
        let mut order: Vec<usize> = (0..arity).collect();
        order.sort_by_key(|&c| pos(vars[c]));
        let mut data: Vec<u64> = Vec::with_capacity(rows.len());
        if order.iter().enumerate().all(|(i, &c)| i == c) {
            data.extend_from_slice(rows);
        } else {
            for t in rows.chunks_exact(arity) {
                data.extend(order.iter().map(|&c| t[c]));
            }
        }
        let data = crate::datagen::sort_dedup(data, arity);
        prepared.push(Prepared { levels: order.iter().map(|&c| pos(vars[c])).collect(), data, arity });
    }
    if depth == 0 {
        return;
    }
    // participants[d] = (input index, column) binding out_vars[d]
    let mut participants: Vec<Vec<(usize, usize)>> = vec![Vec::new(); depth];
    for (i, inp) in prepared.iter().enumerate() {
        for (c, &d) in inp.levels.iter().enumerate() {
            participants[d].push((i, c));
        }
    }
    assert!(participants.iter().all(|p| !p.is_empty()), "output variable bound by no input");
    let mut ranges: Vec<(usize, usize)> = prepared.iter().map(|inp| (0, inp.data.len() / inp.arity)).collect();
    let mut tuple = vec![0u64; depth];
    join_level(&prepared, &participants, 0, &mut ranges, &mut tuple, emit);
}

struct Prepared {
    levels: Vec<usize>,
    data: Vec<u64>,
    arity: usize,
}

impl Prepared {
    #[inline]
    fn at(&self, row: usize, col: usize) -> u64 {
        self.data[row * self.arity + col]
    }
}

fn join_level(
    inputs: &[Prepared],
    participants: &[Vec<(usize, usize)>],
    d: usize,
    ranges: &mut [(usize, usize)],
    tuple: &mut [u64],
    emit: &mut dyn FnMut(&[u64]),
) {
    if d == participants.len() {
        emit(tuple);
        return;
    }
    let parts = &participants[d];
    // drive from the participant with the smallest range
    let &(lead, lead_col) = parts.iter().min_by_key(|&&(i, _)| ranges[i].1 - ranges[i].0).expect("non-empty");
    let saved: Vec<(usize, usize)> = parts.iter().map(|&(i, _)| ranges[i]).collect();
    let (mut row, end) = ranges[lead];
    let li = &inputs[lead];
    'values: while row < end {
        let v = li.at(row, lead_col);
        let next_row = row + partition_point(row, end, |r| li.at(r, lead_col) <= v);
        for (n, &(i, c)) in parts.iter().enumerate() {
            if i == lead {
                ranges[i] = (row, next_row);
                continue;
            }
            let (lo, hi) = saved[n];
            let inp = &inputs[i];
            let a = lo + partition_point(lo, hi, |r| inp.at(r, c) < v);
            let b = a + partition_point(a, hi, |r| inp.at(r, c) <= v);
            if a == b {
                row = next_row;
                continue 'values;
            }
            ranges[i] = (a, b);
        }
        tuple[d] = v;
        join_level(inputs, participants, d + 1, ranges, tuple, emit);
        row = next_row;
    }
    for (n, &(i, _)) in parts.iter().enumerate() {
        ranges[i] = saved[n];
    }
}

/// Number of rows `r` in `[lo, hi)` satisfying a monotone `pred` (true then false).
fn partition_point(lo: usize, hi: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let mid = a + (b - a) / 2;
        if pred(mid) {
            a = mid + 1;
        } else {
            b = mid;
        }
    }
    a - lo
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("instance too large for oracle: intermediate result exceeds {0} tuples")]
    TooLarge(usize),
}

pub const ORACLE_GUARD: usize = 10_000_000;

/// Reference evaluation by left-deep hash joins in atom order. Returns the
/// sorted, duplicate-free output over the query variables.
pub fn oracle_join(db: &DatabaseInstance) -> Result<Vec<u64>, OracleError> {
    oracle_join_guarded(db, ORACLE_GUARD)
}

pub fn oracle_join_guarded(db: &DatabaseInstance, guard: usize) -> Result<Vec<u64>, OracleError> {
    let q = &db.query;
    let k = q.k();
    // partial tuples over all k variables; `bound` marks assigned variables
    let mut bound = vec![false; k];
    let mut partial: Vec<Vec<u64>> = vec![vec![0; k]];
    let mut left: Vec<usize> = (0..q.l()).collect();
    while !left.is_empty() {
        // extend by the atom that yields the fewest partial tuples
        let mut best: Option<(usize, usize, HashMap<Vec<u64>, Vec<usize>>, Vec<(usize, usize)>)> = None;
        for (i, &j) in left.iter().enumerate() {
            let a = &q.atoms[j];
            let shared: Vec<(usize, usize)> =
                a.vars.iter().enumerate().filter(|(_, &v)| bound[v]).map(|(c, &v)| (c, v)).collect();
            let mut index: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
            for (r, t) in db.relations[j].tuples().enumerate() {
                index.entry(shared.iter().map(|&(c, _)| t[c]).collect()).or_default().push(r);
            }
            let mut size = 0usize;
            for pt in &partial {
                let key: Vec<u64> = shared.iter().map(|&(_, v)| pt[v]).collect();
                size = size.saturating_add(index.get(&key).map_or(0, Vec::len));
            }
            if best.as_ref().is_none_or(|b| size < b.1) {
                best = Some((i, size, index, shared));
            }
        }
        let (i, size, index, shared) = best.expect("atoms left");
        if size > guard {
            return Err(OracleError::TooLarge(guard));
        }
        let j = left.remove(i);
        let a = &q.atoms[j];
        let rel = &db.relations[j];
        let mut next = Vec::with_capacity(size);
        for pt in &partial {
            let key: Vec<u64> = shared.iter().map(|&(_, v)| pt[v]).collect();
            if let Some(rows) = index.get(&key) {
                for &r in rows {
                    let t = rel.tuple(r);
                    let mut nt = pt.clone();
                    for (c, &v) in a.vars.iter().enumerate() {
                        nt[v] = t[c];
                    }
                    next.push(nt);
                }
            }
        }
        for &v in &a.vars {
            bound[v] = true;
        }
        partial = next;
    }
    partial.sort_unstable();
    partial.dedup();
    Ok(partial.concat())
}

/// Order-independent checksum of a set of tuples.
pub fn tuple_checksum(t: &[u64]) -> u64 {
    let mut h = 0x5151_5151_u64;
    for &v in t {
        h = mix64(h ^ v);
    }
    h
}

pub fn set_checksum(rows: &[u64], arity: usize) -> u64 {
    rows.chunks_exact(arity.max(1)).fold(0u64, |acc, t| acc.wrapping_add(tuple_checksum(t)))
}

#[derive(Debug, Clone)]
pub struct LabelInfo {
    pub name: String,
    pub arity: usize,
}

/// Messages sent by one holder during routing, grouped by `(dest, label)`.
#[derive(Debug, Default)]
pub struct Outbox {
    pub buckets: HashMap<(ServerId, LabelId), Vec<u64>>,
}

impl Outbox {
    #[inline]
    pub fn send(&mut self, dest: ServerId, label: LabelId, tuple: &[u64]) {
        self.buckets.entry((dest, label)).or_default().extend_from_slice(tuple);
    }
}

/// Tuples received by one server in the current round, per label.
#[derive(Debug, Default, Clone)]
pub struct Inbox {
    pub data: BTreeMap<LabelId, Vec<u64>>,
}

impl Inbox {
    pub fn get(&self, label: LabelId) -> &[u64] {
        self.data.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn words(&self, labels: &[LabelInfo]) -> usize {
        self.data.iter().map(|(l, v)| v.len() / labels[*l as usize].arity.max(1)).sum()
    }
}

/// Data kept by a server between rounds.
#[derive(Debug, Default, Clone)]
pub struct Holdings {
    pub data: Vec<(LabelId, Vec<u64>)>,
}

impl Holdings {
    pub fn rows(&self, label: LabelId) -> impl Iterator<Item = &[u64]> + '_ {
        self.data.iter().filter(move |(l, _)| *l == label).map(|(_, v)| v.as_slice())
    }

    pub fn push(&mut self, label: LabelId, rows: Vec<u64>) {
        if !rows.is_empty() {
            self.data.push((label, rows));
        }
    }
}

/// What `compute` produced on one server.
#[derive(Debug, Default)]
pub struct ComputeOut {
    pub held: Vec<(LabelId, Vec<u64>)>,
    pub emitted: Vec<u64>,
}

/// A tuple-based MPC algorithm: every routing decision is a function of the
/// tuple, its dataset label, the round, its holder and statistics fixed
/// before execution.
pub trait TupleAlgorithm: Sync {
    fn rounds(&self) -> usize;
    /// Labels `0..num_base()` are the input relations in atom order.
    fn labels(&self) -> &[LabelInfo];
    fn num_base(&self) -> usize;
    /// Arity of emitted output tuples.
    fn output_arity(&self) -> usize;
    fn route(&self, round: usize, label: LabelId, holder: ServerId, tuple: &[u64], out: &mut Outbox);
    fn compute(&self, round: usize, server: ServerId, inbox: &Inbox, held: &Holdings, out: &mut ComputeOut);
    /// Labels that are only ever read locally (never routed).
    fn is_local(&self, _label: LabelId) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    pub p: usize,
    pub seed: u64,
    pub collect_output: bool,
}

impl ClusterConfig {
    pub fn new(p: usize, seed: u64) -> ClusterConfig {
        assert!(p >= 1, "p must be at least 1");
        ClusterConfig { p, seed, collect_output: true }
    }
}

/// Received-data counters of one round, keyed by `(server, label)`.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    pub round: usize,
    pub received: BTreeMap<(ServerId, LabelId), (u64, u64)>,
    /// Tuples arriving per server including self-deliveries.
    pub arrived: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub p: usize,
    pub rounds: usize,
    pub labels: Vec<String>,
    pub traces: Vec<RoundTrace>,
    pub round_max_tuples: Vec<u64>,
    pub round_max_bits: Vec<u64>,
    pub max_tuples: u64,
    pub max_bits: u64,
    pub server_total_tuples: Vec<u64>,
    pub server_total_bits: Vec<u64>,
    /// Largest number of tuples a server stores over the whole run (every
    /// arrival including self-deliveries plus locally produced data).
    pub max_resident: u64,
    /// Total messages per round including self-deliveries.
    pub messages: Vec<u64>,
}

impl LoadReport {
    fn new(p: usize, labels: Vec<String>, traces: Vec<RoundTrace>, resident: Vec<u64>) -> LoadReport {
        let rounds = traces.len();
        let mut round_max_tuples = Vec::new();
        let mut round_max_bits = Vec::new();
        let mut server_total_tuples = vec![0u64; p];
        let mut server_total_bits = vec![0u64; p];
        let mut messages = Vec::new();
        for tr in &traces {
            let mut per_t = vec![0u64; p];
            let mut per_b = vec![0u64; p];
            for (&(s, _), &(t, b)) in &tr.received {
                per_t[s as usize] += t;
                per_b[s as usize] += b;
            }
            for s in 0..p {
                server_total_tuples[s] += per_t[s];
                server_total_bits[s] += per_b[s];
            }
            round_max_tuples.push(per_t.iter().copied().max().unwrap_or(0));
            round_max_bits.push(per_b.iter().copied().max().unwrap_or(0));
            messages.push(tr.arrived.iter().sum());
        }
        LoadReport {
            p,
            rounds,
            labels,
            max_tuples: round_max_tuples.iter().copied().max().unwrap_or(0),
            max_bits: round_max_bits.iter().copied().max().unwrap_or(0),
            round_max_tuples,
            round_max_bits,
            server_total_tuples,
            server_total_bits,
            max_resident: resident.into_iter().max().unwrap_or(0),
            messages,
            traces,
        }
    }

    /// Long-form CSV: `round,server,relation,tuples,bits` plus a summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,server,relation,tuples,bits\n");
        for tr in &self.traces {
            for (&(srv, l), &(t, b)) in &tr.received {
                let _ = writeln!(s, "{},{},{},{},{}", tr.round, srv, self.labels[l as usize], t, b);
            }
        }
        let _ = writeln!(s, "max,,,{},{}", self.max_tuples, self.max_bits);
        s
    }

    /// Total tuples received (excluding self-deliveries) for `label` over all rounds.
    pub fn label_total(&self, label: &str) -> u64 {
        self.traces
            .iter()
            .flat_map(|t| t.received.iter())
            .filter(|(&(_, l), _)| self.labels[l as usize] == label)
            .map(|(_, &(t, _))| t)
            .sum()
    }
}

/// Emitted output: either the full sorted set or a count with checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub arity: usize,
    /// Emission count including duplicates.
    pub emitted: u64,
    /// Sorted distinct tuples (collect mode only).
    pub tuples: Option<Vec<u64>>,
    /// Sum of per-tuple checksums over emissions.
    pub checksum: u64,
}

impl Output {
    pub fn distinct(&self) -> Option<usize> {
        self.tuples.as_ref().map(|t| t.len() / self.arity.max(1))
    }

    pub fn duplicates(&self) -> Option<u64> {
        self.distinct().map(|d| self.emitted - d as u64)
    }

    /// Same set as `oracle` (sorted flat rows).
    pub fn matches(&self, oracle: &[u64]) -> bool {
        match &self.tuples {
            Some(t) => t == oracle,
            None => {
                self.emitted as usize * self.arity == oracle.len() && self.checksum == set_checksum(oracle, self.arity)
            }
        }
    }
}

pub(crate) struct OutputCollector {
    arity: usize,
    collect: bool,
    emitted: u64,
    checksum: u64,
    tuples: Vec<u64>,
}

impl OutputCollector {
    pub(crate) fn new(arity: usize, collect: bool) -> Self {
        OutputCollector { arity, collect, emitted: 0, checksum: 0, tuples: Vec::new() }
    }

    pub(crate) fn absorb(&mut self, rows: Vec<u64>) {
        let a = self.arity.max(1);
        self.emitted += (rows.len() / a) as u64;
        self.checksum = self.checksum.wrapping_add(set_checksum(&rows, a));
        if self.collect {
            if self.tuples.is_empty() {
                self.tuples = rows;
            } else {
                self.tuples.extend_from_slice(&rows);
            }
        }
    }

    pub(crate) fn finish(self) -> Output {
        let tuples = self.collect.then(|| crate::datagen::sort_dedup(self.tuples, self.arity));
        Output { arity: self.arity, emitted: self.emitted, tuples, checksum: self.checksum }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: Output,
    pub load: LoadReport,
}

/// Round-robin placement of the input: tuple `i` of relation `j` lives on
/// server `(offset_j + i) mod p`, where `offset_j` is the number of tuples in
/// relations before `j`.
pub fn initial_holdings(db: &DatabaseInstance, p: usize) -> Vec<Holdings> {
    let mut holdings: Vec<Holdings> = vec![Holdings::default(); p];
    let mut offset = 0usize;
    for (j, r) in db.relations.iter().enumerate() {
        let mut parts: Vec<Vec<u64>> = vec![Vec::new(); p];
        for (i, t) in r.tuples().enumerate() {
            parts[(offset + i) % p].extend_from_slice(t);
        }
        offset += r.len();
        for (s, rows) in parts.into_iter().enumerate() {
            holdings[s].push(j as LabelId, rows);
        }
    }
    holdings
}

/// Runs `alg` on `db` with `cfg.p` servers.
pub fn run_cluster<A: TupleAlgorithm + ?Sized>(alg: &A, db: &DatabaseInstance, cfg: &ClusterConfig) -> RunResult {
    let p = cfg.p;
    let labels = alg.labels();
    let vbits = value_bits(db.n);
    let mut holdings = initial_holdings(db, p);
    let mut resident: Vec<u64> = vec![0; p];
    let mut traces = Vec::new();
    let mut collector = OutputCollector::new(alg.output_arity(), cfg.collect_output);
    for round in 1..=alg.rounds() {
        let outboxes: Vec<Outbox> = holdings
            .par_iter()
            .enumerate()
            .map(|(holder, h)| {
                let mut out = Outbox::default();
                for (label, rows) in &h.data {
                    if alg.is_local(*label) {
                        continue;
                    }
                    let a = labels[*label as usize].arity.max(1);
                    for t in rows.chunks_exact(a) {
                        alg.route(round, *label, holder as ServerId, t, &mut out);
                    }
                }
                out
            })
            .collect();
        let mut trace = RoundTrace { round, received: BTreeMap::new(), arrived: vec![0; p] };
        let mut inboxes: Vec<Inbox> = vec![Inbox::default(); p];
        for (holder, mut ob) in outboxes.into_iter().enumerate() {
            let mut keys: Vec<(ServerId, LabelId)> = ob.buckets.keys().copied().collect();
            keys.sort_unstable();
            for key in keys {
                let rows = ob.buckets.remove(&key).expect("key present");
                let (dest, label) = key;
                let arity = labels[label as usize].arity.max(1);
                let n = (rows.len() / arity) as u64;
                trace.arrived[dest as usize] += n;
                if dest as usize != holder {
                    let e = trace.received.entry((dest, label)).or_insert((0, 0));
                    e.0 += n;
                    e.1 += n * arity as u64 * vbits;
                }
                inboxes[dest as usize].data.entry(label).or_default().extend_from_slice(&rows);
            }
        }
        let outs: Vec<ComputeOut> = inboxes
            .par_iter()
            .zip(holdings.par_iter())
            .enumerate()
            .map(|(s, (inbox, held))| {
                let mut out = ComputeOut::default();
                alg.compute(round, s as ServerId, inbox, held, &mut out);
                out
            })
            .collect();
        for (s, out) in outs.into_iter().enumerate() {
            resident[s] += trace.arrived[s];
            for (label, rows) in out.held {
                resident[s] += (rows.len() / labels[label as usize].arity.max(1)) as u64;
                holdings[s].push(label, rows);
            }
            if !out.emitted.is_empty() {
                collector.absorb(out.emitted);
            }
        }
        traces.push(trace);
    }
    let names = labels.iter().map(|l| l.name.clone()).collect();
    RunResult { output: collector.finish(), load: LoadReport::new(p, names, traces, resident) }
}

/// Routes every input tuple with `route` in one round and reports the trace.
/// Received tuples are kept under their original label.
pub struct FnRound<'a> {
    pub labels: Vec<LabelInfo>,
    pub route: &'a (dyn Fn(LabelId, ServerId, &[u64], &mut Vec<ServerId>) + Sync),
}

impl TupleAlgorithm for FnRound<'_> {
    fn rounds(&self) -> usize {
        1
    }
    fn labels(&self) -> &[LabelInfo] {
        &self.labels
    }
    fn num_base(&self) -> usize {
        self.labels.len()
    }
    fn output_arity(&self) -> usize {
        0
    }
    fn route(&self, _round: usize, label: LabelId, holder: ServerId, tuple: &[u64], out: &mut Outbox) {
        let mut dests = Vec::new();
        (self.route)(label, holder, tuple, &mut dests);
        for d in dests {
            out.send(d, label, tuple);
        }
    }
    fn compute(&self, _round: usize, _server: ServerId, _inbox: &Inbox, _held: &Holdings, _out: &mut ComputeOut) {}
}

/// One round of an arbitrary per-tuple routing function over the base relations.
pub fn run_round(
    db: &DatabaseInstance,
    p: usize,
    route: &(dyn Fn(LabelId, ServerId, &[u64], &mut Vec<ServerId>) + Sync),
) -> LoadReport {
    let labels = db.query.atoms.iter().map(|a| LabelInfo { name: a.relation.clone(), arity: a.arity() }).collect();
    let alg = FnRound { labels, route };
    run_cluster(&alg, db, &ClusterConfig::new(p, 0)).load
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_agm_worst, gen_matching, gen_single_heavy};
    use crate::query::{canonical_query, Family};

    #[test]
    fn hash_basics() {
        let h = HashFn::new(3, 0);
        assert_eq!(h.bucket(12345, 1), 0);
        assert_eq!(h.bucket(77, 10), HashFn::new(3, 0).bucket(77, 10));
        assert!((0..1000).all(|v| h.bucket(v, 7) < 7));
    }

    #[test]
    fn subcube_sizes() {
        let q = canonical_query(Family::C, 3).unwrap();
        assert_eq!(hc_route(&q, 0, &[5, 9], &[2, 2, 2], 1).len(), 2);
        assert_eq!(hc_route(&q, 0, &[5, 9], &[1, 1, 1], 1), vec![0]);
        let cells = hc_route(&q, 1, &[5, 9], &[3, 4, 5], 1);
        assert_eq!(cells.len(), 3);
        let mut s = cells.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 3);
        assert!(cells.iter().all(|&c| c < 60));
    }

    #[test]
    fn local_join_basic() {
        // R(x,y) ⋈ S(y,z)
        let r = [1u64, 2, 1, 3, 2, 3];
        let s = [2u64, 7, 3, 8, 3, 9];
        let mut out = Vec::new();
        local_join(&[(&[0, 1], &r), (&[1, 2], &s)], &[0, 1, 2], &mut |t| out.extend_from_slice(t));
        assert_eq!(out, vec![1, 2, 7, 1, 3, 8, 1, 3, 9, 2, 3, 8, 2, 3, 9]);
        let mut n = 0;
        local_join(&[(&[0, 1], &r), (&[1, 2], &[])], &[0, 1, 2], &mut |_| n += 1);
        assert_eq!(n, 0);
        // column order differs from output order
        let t = [7u64, 2];
        let mut out = Vec::new();
        local_join(&[(&[0, 1], &r), (&[2, 1], &t)], &[0, 1, 2], &mut |t| out.extend_from_slice(t));
        assert_eq!(out, vec![1, 2, 7]);
    }

    #[test]
    fn oracle_sizes() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_single_heavy(&q, 200, 0, 1);
        assert_eq!(oracle_join(&db).unwrap().len() / 3, 200);
        let db = gen_agm_worst(&q, 400, 1);
        assert_eq!(oracle_join(&db).unwrap().len() / 3, 8000);
        assert_eq!(oracle_join_guarded(&db, 100), Err(OracleError::TooLarge(100)));
    }

    #[test]
    fn identity_and_broadcast_rounds() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_matching(&q, 90, 2);
        let stay = run_round(&db, 8, &|_, holder, _, out| out.push(holder));
        assert_eq!(stay.max_tuples, 0);
        let all = run_round(&db, 8, &|_, _, _, out| out.extend(0..8));
        // everything except each server's own share
        let own = (0..8).map(|s| (270 + 7 - s) / 8).min().unwrap() as u64;
        assert_eq!(all.max_tuples, 270 - own);
        assert!(all.to_csv().ends_with(&format!("max,,,{},{}\n", all.max_tuples, all.max_bits)));
    }
}
