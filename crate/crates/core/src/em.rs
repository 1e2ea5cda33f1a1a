//! External-memory execution of tuple-based MPC algorithms.
//!
//! One machine with `W` words of internal memory and a disk of `B`-word
//! blocks plays all `p_o` servers in turn. A word holds one (tagged) tuple.
//! Every round partitions the pending messages by destination, loads each
//! server's messages and state, replays its local computation and writes
//! the messages it sends. Output of the final round is emitted directly.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::algorithms::{build_plan, AlgorithmKind};
use crate::datagen::DatabaseInstance;
use crate::mpc::{initial_holdings, ComputeOut, Holdings, Inbox, LabelId, Outbox, Output, OutputCollector, ServerId, TupleAlgorithm};
use crate::plan::{PlanError, PlanExecutor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EMConfig {
    /// Internal memory in words.
    pub w: u64,
    /// Block size in words.
    pub b: u64,
}

impl EMConfig {
    pub fn new(w: u64, b: u64) -> Result<EMConfig, EmError> {
        if b == 0 || b > w {
            return Err(EmError::Config(format!("need 1 <= B <= W, got W={w} B={b}")));
        }
        Ok(EMConfig { w, b })
    }
}

#[derive(Debug, Error)]
pub enum EmError {
    #[error("invalid EM configuration: {0}")]
    Config(String),
    #[error("W too small: p_o > W (W = {w}, smallest feasible p is above {tried})")]
    WTooSmall { w: u64, tried: u64 },
    #[error("partition fan-out does not fit: p_o·B = {p_o}·{b} > W = {w}")]
    FanOut { p_o: u64, b: u64, w: u64 },
    #[error("memory overflow: server {server} holds {words} words in round {round}, W = {w}")]
    MemoryOverflow { server: usize, round: usize, words: u64, w: u64 },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IOReport {
    pub io_blocks: u64,
    /// `(phase, blocks)` in execution order: `init`, then `partition r`,
    /// `load r`, `write r` per round.
    pub phases: Vec<(String, u64)>,
    pub p_o: usize,
    pub r: usize,
    pub w: u64,
    pub b: u64,
    /// Largest number of words resident for one server.
    pub peak_memory: u64,
    /// Largest number of tuples delivered to one server in one round.
    pub max_round_load: u64,
}

impl IOReport {
    pub const CSV_HEADER: &'static str = "phase,blocks";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (phase, blocks) in &self.phases {
            let _ = writeln!(s, "{phase},{blocks}");
        }
        let _ = writeln!(s, "total,{}", self.io_blocks);
        s
    }

    /// `|I|/B + r·p_o·W/B`.
    pub fn reference_cost(&self, input_words: u64) -> f64 {
        (input_words as f64 + (self.r * self.p_o) as f64 * self.w as f64) / self.b as f64
    }
}

fn blocks(words: u64, b: u64) -> u64 {
    words.div_ceil(b)
}

fn words(rows: &[u64], arity: usize) -> u64 {
    (rows.len() / arity.max(1)) as u64
}

pub fn input_words(db: &DatabaseInstance) -> u64 {
    db.relations.iter().map(|r| r.len() as u64).sum()
}

/// Pending messages grouped by destination.
#[derive(Default)]
struct Messages {
    by_dest: Vec<HashMap<LabelId, Vec<u64>>>,
    count: Vec<u64>,
}

impl Messages {
    fn new(p: usize) -> Messages {
        Messages { by_dest: vec![HashMap::new(); p], count: vec![0; p] }
    }

    fn absorb(&mut self, out: Outbox, arities: &[usize]) -> u64 {
        let mut total = 0;
        let mut keys: Vec<(ServerId, LabelId)> = out.buckets.keys().copied().collect();
        keys.sort_unstable();
        let mut out = out;
        for key in keys {
            let rows = out.buckets.remove(&key).expect("key present");
            let (dest, label) = key;
            let n = words(&rows, arities[label as usize]);
            self.count[dest as usize] += n;
            total += n;
            self.by_dest[dest as usize].entry(label).or_default().extend_from_slice(&rows);
        }
        total
    }
}

struct Phases {
    list: Vec<(String, u64)>,
}

impl Phases {
    fn add(&mut self, name: String, n: u64) {
        self.list.push((name, n));
    }
}

/// Runs `alg` on `p_o` simulated servers. With `limit = None` the memory
/// check is skipped (dry runs).
fn run_engine<A: TupleAlgorithm + ?Sized>(
    alg: &A,
    db: &DatabaseInstance,
    p_o: usize,
    b: u64,
    limit: Option<u64>,
    collect: bool,
) -> Result<(Output, IOReport), EmError> {
    let labels = alg.labels();
    let arities: Vec<usize> = labels.iter().map(|l| l.arity).collect();
    let rounds = alg.rounds();
    let mut phases = Phases { list: Vec::new() };
    let mut collector = OutputCollector::new(alg.output_arity(), collect);
    let mut peak = 0u64;
    let mut max_round_load = 0u64;

    // init: scan the input, place it round-robin and route round 1
    let mut state: Vec<Holdings> = initial_holdings(db, p_o);
    let mut state_words: Vec<u64> = state
        .iter()
        .map(|h| h.data.iter().map(|(l, rows)| words(rows, arities[*l as usize])).sum())
        .collect();
    let mut msgs = Messages::new(p_o);
    let mut sent = 0;
    for (s, h) in state.iter().enumerate() {
        let mut out = Outbox::default();
        route_all(alg, 1, s, h, &arities, &mut out);
        sent += msgs.absorb(out, &arities);
    }
    let mut init = blocks(input_words(db), b) + blocks(sent, b);
    if rounds > 1 {
        init += state_words.iter().map(|&w| blocks(w, b)).sum::<u64>();
    } else {
        state_words.iter_mut().for_each(|w| *w = 0);
    }
    phases.add("init".into(), init);

    for round in 1..=rounds {
        let last = round == rounds;
        let total: u64 = msgs.count.iter().sum();
        let partition = blocks(total, b) + msgs.count.iter().map(|&c| blocks(c, b)).sum::<u64>();
        phases.add(format!("partition {round}"), partition);
        let mut load = 0u64;
        let mut write = 0u64;
        let mut next = Messages::new(p_o);
        let mut next_sent = 0;
        let inboxes = std::mem::take(&mut msgs.by_dest);
        for (s, data) in inboxes.into_iter().enumerate() {
            let received = msgs.count[s];
            max_round_load = max_round_load.max(received);
            load += blocks(received, b) + blocks(state_words[s], b);
            let inbox = Inbox { data: data.into_iter().collect() };
            let mut out = ComputeOut::default();
            alg.compute(round, s as ServerId, &inbox, &state[s], &mut out);
            drop(inbox);
            let held: u64 = out.held.iter().map(|(l, rows)| words(rows, arities[*l as usize])).sum();
            let resident = state_words[s] + received + held;
            peak = peak.max(resident);
            if let Some(w) = limit {
                if resident > w {
                    return Err(EmError::MemoryOverflow { server: s, round, words: resident, w });
                }
            }
            if !out.emitted.is_empty() {
                collector.absorb(out.emitted);
            }
            if last {
                continue;
            }
            for (l, rows) in out.held {
                state[s].push(l, rows);
            }
            write += blocks(held, b);
            state_words[s] += held;
            let mut ob = Outbox::default();
            route_all(alg, round + 1, s, &state[s], &arities, &mut ob);
            next_sent += next.absorb(ob, &arities);
        }
        phases.add(format!("load {round}"), load);
        write += blocks(next_sent, b);
        phases.add(format!("write {round}"), write);
        msgs = next;
    }

    let io_blocks = phases.list.iter().map(|(_, n)| n).sum();
    let report = IOReport {
        io_blocks,
        phases: phases.list,
        p_o,
        r: rounds,
        w: limit.unwrap_or(u64::MAX),
        b,
        peak_memory: peak,
        max_round_load,
    };
    Ok((collector.finish(), report))
}

fn route_all<A: TupleAlgorithm + ?Sized>(alg: &A, round: usize, s: usize, h: &Holdings, arities: &[usize], out: &mut Outbox) {
    for (label, rows) in &h.data {
        if alg.is_local(*label) {
            continue;
        }
        for t in rows.chunks_exact(arities[*label as usize].max(1)) {
            alg.route(round, *label, s as ServerId, t, out);
        }
    }
}

/// Simulates `alg` (built for `p_o` servers) in external memory.
pub fn simulate_em<A: TupleAlgorithm + ?Sized>(
    alg: &A,
    db: &DatabaseInstance,
    p_o: usize,
    em: &EMConfig,
) -> Result<(Output, IOReport), EmError> {
    if p_o as u64 > em.w {
        return Err(EmError::WTooSmall { w: em.w, tried: p_o as u64 });
    }
    if p_o as u64 * em.b > em.w {
        return Err(EmError::FanOut { p_o: p_o as u64, b: em.b, w: em.w });
    }
    run_engine(alg, db, p_o, em.b, Some(em.w), true)
}

/// Outcome of the dry run at one candidate `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub p: usize,
    pub rounds: usize,
    pub max_round_load: u64,
    pub peak_memory: u64,
}

impl Probe {
    pub fn fits(&self, w: u64) -> bool {
        self.rounds as u64 * self.max_round_load <= w && self.peak_memory <= w
    }
}

/// Dry-runs `kind` at `p` and reports its loads.
pub fn probe(kind: AlgorithmKind, db: &DatabaseInstance, p: usize, seed: u64) -> Result<Probe, EmError> {
    let plan = build_plan(kind, db, p, seed)?;
    let ex = PlanExecutor::new(&plan)?;
    let (_, rep) = run_engine(&ex, db, p, 1, None, false)?;
    Ok(Probe { p, rounds: rep.r, max_round_load: rep.max_round_load, peak_memory: rep.peak_memory })
}

/// Smallest power of two `p` whose dry run satisfies `r·L(I,p) ≤ W` and keeps
/// every server within `W` words. Candidates whose round-robin input share
/// alone exceeds `W` are skipped without running.
pub fn choose_po(kind: AlgorithmKind, db: &DatabaseInstance, em: &EMConfig, seed: u64) -> Result<(usize, Vec<Probe>), EmError> {
    let n = input_words(db);
    let mut probes = Vec::new();
    let mut p = 1u64;
    while p <= em.w {
        if n.div_ceil(p) <= em.w {
            let pr = probe(kind, db, p as usize, seed)?;
            log::debug!("p={p}: rounds={} L={} peak={}", pr.rounds, pr.max_round_load, pr.peak_memory);
            let ok = pr.fits(em.w);
            probes.push(pr);
            if ok {
                return Ok((p as usize, probes));
            }
        }
        p *= 2;
    }
    Err(EmError::WTooSmall { w: em.w, tried: p / 2 })
}

#[derive(Debug, Clone)]
pub struct EmRun {
    pub output: Output,
    pub report: IOReport,
    pub probes: Vec<Probe>,
}

/// Picks `p_o`, rejects fan-outs that do not fit and runs the simulation.
pub fn run_em(kind: AlgorithmKind, db: &DatabaseInstance, em: &EMConfig, seed: u64) -> Result<EmRun, EmError> {
    let (p_o, probes) = choose_po(kind, db, em, seed)?;
    let plan = build_plan(kind, db, p_o, seed)?;
    let ex = PlanExecutor::new(&plan)?;
    let (output, report) = simulate_em(&ex, db, p_o, em)?;
    Ok(EmRun { output, report, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::run_algorithm;
    use crate::datagen::{gen_agm_worst, gen_matching, gen_single_heavy};
    use crate::mpc::{oracle_join, ClusterConfig};
    use crate::query::{canonical_query, Family};

    #[test]
    fn config_checks() {
        assert!(EMConfig::new(10, 0).is_err());
        assert!(EMConfig::new(10, 11).is_err());
        assert!(EMConfig::new(10, 10).is_ok());
    }

    #[test]
    fn everything_fits_in_one_server() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_matching(&q, 100, 3);
        let em = EMConfig::new(1000, 10).unwrap();
        let run = run_em(AlgorithmKind::Triangle, &db, &em, 1).unwrap();
        assert_eq!(run.report.p_o, 1);
        assert!(run.output.matches(&oracle_join(&db).unwrap()));
        // scan in, route, partition, load
        assert_eq!(run.report.io_blocks, 30 + 30 + 60 + 30);
        assert!(run.report.peak_memory <= 1000);
    }

    #[test]
    fn matches_mpc_output_and_counts_add_up() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_single_heavy(&q, 600, 0, 5);
        let em = EMConfig::new(400, 8).unwrap();
        let run = run_em(AlgorithmKind::Triangle, &db, &em, 2).unwrap();
        assert!(run.report.p_o > 1);
        let mpc = run_algorithm(AlgorithmKind::Triangle, &db, &ClusterConfig::new(run.report.p_o, 2)).unwrap();
        assert_eq!(run.output.tuples, mpc.output.tuples);
        assert!(run.output.matches(&oracle_join(&db).unwrap()));
        let sum: u64 = run.report.phases.iter().map(|(_, n)| n).sum();
        assert_eq!(sum, run.report.io_blocks);
        assert_eq!(run.report.phases.len(), 1 + 3 * run.report.r);
        assert!(run.report.to_csv().starts_with("phase,blocks\ninit,"));
    }

    #[test]
    fn overflow_and_small_memory_are_reported() {
        let q = canonical_query(Family::C, 3).unwrap();
        let db = gen_agm_worst(&q, 900, 1);
        let plan = build_plan(AlgorithmKind::Hc, &db, 1, 0).unwrap();
        let ex = PlanExecutor::new(&plan).unwrap();
        let err = simulate_em(&ex, &db, 1, &EMConfig::new(100, 10).unwrap()).unwrap_err();
        assert!(matches!(err, EmError::MemoryOverflow { .. }));
        let err = run_em(AlgorithmKind::Triangle, &db, &EMConfig::new(20, 2).unwrap(), 0).unwrap_err();
        assert!(err.to_string().contains("W too small"));
        let err = simulate_em(&ex, &db, 8, &EMConfig::new(100, 20).unwrap()).unwrap_err();
        assert!(matches!(err, EmError::FanOut { .. }));
    }
}

