//! Multi-round plans for lines, cycles, Loomis-Whitney queries, cliques and
//! queries with a covering atom.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::primitives::{heavy_values, key_set, ready, sorted, threshold, union_vars};
use super::{Ctx, Rel};
use crate::plan::{proportional, PlanError, ServerSet, Sink, Strategy, VarId};
use crate::rational::{floor_pow, frac, Rational};

fn side(product: usize, side: usize) -> Sink {
    Sink::Side { product, side, consts: Vec::new() }
}

fn max_len(rels: &[Rel]) -> usize {
    rels.iter().map(Rel::len).max().unwrap_or(0)
}

/// Number of heavy-hitter bands used for even cycles.
const BANDS: usize = 4;

impl Ctx {
    /// `S_1(v_0,v_1), ..., S_k(v_{k-1},v_k)` with `rels[t]` over
    /// `{vars[t], vars[t+1]}`.
    pub(crate) fn line(
        &mut self,
        vars: &[VarId],
        rels: Vec<Rel>,
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        let k = rels.len();
        assert_eq!(vars.len(), k + 1);
        if k == 1 {
            self.intersect(&rels, servers, round, sink);
            return Ok(());
        }
        if k <= 4 {
            return self.one_round_skew(&rels, servers, round, sink, &format!("L{k}"));
        }
        let p = servers.len();
        if k.is_multiple_of(2) {
            let n = (k / 2) as i64;
            let g = Self::grid_shares(&[frac(n, n + 1), frac(1, n + 1)], p);
            let (a, b) = servers.grid(g[0] as usize, g[1] as usize);
            let label = format!("L{k} = L{} x {}", k - 1, rels[k - 1].name);
            let pid = self.plan.add_product(label, vec![vars[..k].to_vec(), vars[k - 1..].to_vec()], sink.clone());
            self.line(&vars[..k], rels[..k - 1].to_vec(), &a, round, &side(pid, 0))?;
            self.intersect(&rels[k - 1..], &b, round, &side(pid, 1));
            return Ok(());
        }
        let n = k.div_ceil(2) as i64;
        let v1 = vars[1];
        let heavy = heavy_values(&rels[..1], v1, threshold(max_len(&rels), p, 1.0 / n as f64));
        let hs = key_set(&heavy);
        let s1 = rels[0].not_in(v1, &hs);
        let s2 = rels[1].not_in(v1, &hs);
        if !s1.is_empty() && !s2.is_empty() {
            let g = Self::grid_shares(&[frac(n - 1, n), frac(1, n)], p);
            let (a, b) = servers.grid(g[0] as usize, g[1] as usize);
            let label = format!("L{k} light {}", self.name(v1));
            let pid = self.plan.add_product(label, vec![vars[2..].to_vec(), vars[..3].to_vec()], sink.clone());
            self.line(&vars[2..], rels[2..].to_vec(), &a, round, &side(pid, 0))?;
            self.join_one_sided(&s1, &s2, &b, round, &side(pid, 1), false)?;
        }
        let hv = sorted(&heavy);
        if hv.is_empty() {
            return Ok(());
        }
        let weights: Vec<f64> = hv.iter().map(|&(_, d)| d as f64).collect();
        let parts = proportional(p, &weights, &format!("heavy {} in L{k}", self.name(v1)))?;
        let target_cols = floor_pow(p as u64, &frac(n - 1, n)).max(1) as usize;
        let mut off = 0;
        for (&(h, _), ph) in hv.iter().zip(parts) {
            let slice = servers.slice(off, ph);
            off += ph;
            let u0 = rels[0].fix(v1, h);
            let u2 = rels[1].fix(v1, h);
            if u0.is_empty() || u2.is_empty() {
                continue;
            }
            let cols = target_cols.min(ph);
            let (a, b) = slice.grid((ph / cols).max(1), cols);
            let label = format!("L{k}[{}={h}]", self.name(v1));
            let hsink = sink.with_consts(&[(v1, h)]);
            let pid = self.plan.add_product(label, vec![vec![vars[0]], vars[2..].to_vec()], hsink);
            self.intersect(&[u0], &a, round, &side(pid, 0));
            self.arc(&vars[2..], rels[2..].to_vec(), Some(u2), None, &b, round, &side(pid, 1))?;
        }
        Ok(())
    }

    /// A line whose end variables are further restricted by unary relations:
    /// semi-joins at the ends in the first round, then the line.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn arc(
        &mut self,
        vars: &[VarId],
        mut chain: Vec<Rel>,
        start: Option<Rel>,
        end: Option<Rel>,
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        if chain.len() == 1 {
            let c = chain.pop().expect("one relation");
            match (start, end) {
                (None, None) => {
                    self.intersect(&[c], servers, round, sink);
                }
                (Some(u), None) | (None, Some(u)) => {
                    self.semi_join(&u, &c, servers, round, sink)?;
                }
                (Some(u), Some(w)) => {
                    let x = self.semi_join_held(&u, &c, servers, round)?;
                    let y = self.semi_join_held(&w, &c, servers, round)?;
                    self.intersect(&[x, y], servers, round, sink);
                }
            }
            return Ok(());
        }
        if let Some(u) = start {
            chain[0] = self.semi_join_held(&u, &chain[0], servers, round)?;
        }
        if let Some(w) = end {
            let last = chain.len() - 1;
            chain[last] = self.semi_join_held(&w, &chain[last], servers, round)?;
        }
        self.line(vars, chain, servers, round, sink)
    }

    /// Odd cycle with `rels[t]` over `{vars[t], vars[t+1 mod k]}`. Values of
    /// degree at least `m/p^{1/k}` are heavy. Light tuples go through
    /// HyperCube with equal shares; each heavy value gets its own servers,
    /// semi-joins its neighbors into the rest of the cycle and finishes the
    /// remaining line.
    pub(crate) fn odd_cycle(
        &mut self,
        vars: &[VarId],
        rels: Vec<Rel>,
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        let k = vars.len();
        let p = servers.len();
        let thr = threshold(max_len(&rels), p, 1.0 / k as f64);
        let heavy: Vec<HashMap<u64, u64>> = vars.iter().map(|&v| heavy_values(&rels, v, thr)).collect();
        let sets: Vec<Arc<HashSet<u64>>> = heavy.iter().map(key_set).collect();
        let light: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, k)).collect();
        if !light.iter().any(Rel::is_empty) {
            self.uniform_hc(&light, servers, round, sink, format!("C{k} light"));
        }
        let branches: Vec<(usize, u64, u64)> =
            (0..k).flat_map(|t| sorted(&heavy[t]).into_iter().map(move |(h, d)| (t, h, d))).collect();
        if branches.is_empty() {
            return Ok(());
        }
        let weights: Vec<f64> = branches.iter().map(|b| b.2 as f64).collect();
        let parts = proportional(p, &weights, &format!("heavy values of C{k}"))?;
        let mut off = 0;
        for (&(t, h, _), ph) in branches.iter().zip(parts) {
            let slice = servers.slice(off, ph);
            off += ph;
            let rs: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, t)).collect();
            let start = rs[t].fix(vars[t], h);
            let end = rs[(t + k - 1) % k].fix(vars[t], h);
            let chain_vars: Vec<VarId> = (1..k).map(|i| vars[(t + i) % k]).collect();
            let chain: Vec<Rel> = (1..k - 1).map(|i| rs[(t + i) % k].clone()).collect();
            if start.is_empty() || end.is_empty() || chain.iter().any(Rel::is_empty) {
                continue;
            }
            let hsink = sink.with_consts(&[(vars[t], h)]);
            self.arc(&chain_vars, chain, Some(start), Some(end), &slice, round, &hsink)?;
        }
        Ok(())
    }

    /// Even cycle on base relations. Output tuples holding a pair of values at
    /// odd distance whose degrees multiply to at least `m²/p^{2/k}` go to a
    /// branch for that pair (the first such pair in a fixed order). The rest
    /// are split into bands by the largest degree on the heavier parity and
    /// run through HyperCube with shares matched to the band.
    pub(crate) fn even_cycle(&mut self, vars: &[VarId], rels: Vec<Rel>, servers: &ServerSet, sink: &Sink) -> Result<(), PlanError> {
        assert!(rels.iter().all(|r| r.exact), "even cycles need exact statistics");
        let k = vars.len();
        let p = servers.len();
        let pf = p as f64;
        let m = max_len(&rels) as f64;
        let lo = m / pf.powf(2.0 / k as f64);
        let pair_thr = m * m / pf.powf(2.0 / k as f64);
        let deg: Vec<HashMap<u64, u64>> = (0..k)
            .map(|t| {
                let mut d: HashMap<u64, u64> = HashMap::new();
                for r in [&rels[(t + k - 1) % k], &rels[t]] {
                    for (h, c) in r.degrees(vars[t]) {
                        if c as f64 >= lo {
                            let e = d.entry(h).or_insert(0);
                            *e = (*e).max(c);
                        }
                    }
                }
                d
            })
            .collect();
        let pairs: Vec<(usize, usize)> =
            (0..k).flat_map(|t| (t + 1..k).filter(move |t2| (t2 - t) % 2 == 1).map(move |t2| (t, t2))).collect();
        let cls = Arc::new(EvenCycleClasses { vars: vars.to_vec(), deg: deg.clone(), pairs: pairs.clone(), pair_thr, m, p: pf, lo });

        let mut branches = Vec::new();
        for &(t, t2) in &pairs {
            for (h, d) in sorted(&deg[t]) {
                for (h2, d2) in sorted(&deg[t2]) {
                    if d as f64 * d2 as f64 >= pair_thr {
                        branches.push((t, t2, h, h2, d as f64 * d2 as f64));
                    }
                }
            }
        }
        if !branches.is_empty() {
            let weights: Vec<f64> = branches.iter().map(|b| b.4).collect();
            let parts = proportional(p, &weights, &format!("heavy pairs of C{k}"))?;
            let mut off = 0;
            for (&(t, t2, h, h2, _), ph) in branches.iter().zip(parts) {
                let slice = servers.slice(off, ph);
                off += ph;
                let c = cls.clone();
                let bsink = sink
                    .with_consts(&[(vars[t], h), (vars[t2], h2)])
                    .with_classifier(Arc::new(move |tu: &[u64]| c.pair(tu) == Some((t, t2))));
                self.heavy_pair(vars, &rels, (t, h), (t2, h2), &slice, &bsink)?;
            }
        }

        // every output tuple outside the pair branches falls in one class
        let set_above = |t: usize, x: f64| -> Arc<HashSet<u64>> {
            Arc::new(deg[t].iter().filter(|(_, &d)| d as f64 > x).map(|(&h, _)| h).collect())
        };
        let mut classes: Vec<(usize, Vec<Arc<HashSet<u64>>>, Vec<Rational>)> = Vec::new();
        let uniform: Vec<Arc<HashSet<u64>>> = (0..k).map(|t| set_above(t, lo)).collect();
        classes.push((EvenCycleClasses::UNIFORM, uniform, vec![frac(1, k as i64); k]));
        let kc = (k * BANDS) as i64;
        for parity in 0..2 {
            for c in 0..BANDS {
                let (hi_thr, lo_thr) = (cls.band_threshold(c), cls.band_threshold(c + 1));
                let occupied = (0..k)
                    .filter(|t| t % 2 == parity)
                    .any(|t| deg[t].values().any(|&d| d as f64 > lo_thr && d as f64 <= hi_thr));
                if !occupied {
                    continue;
                }
                let other = m / pf.powf(2.0 / k as f64 - 2.0 * (c + 1) as f64 / kc as f64);
                let sets = (0..k).map(|t| if t % 2 == parity { set_above(t, hi_thr) } else { set_above(t, other) }).collect();
                let exps = (0..k)
                    .map(|t| {
                        if t % 2 == parity {
                            frac(2 * c as i64, kc)
                        } else {
                            frac(2 * (BANDS - c - 1) as i64, kc)
                        }
                    })
                    .collect();
                classes.push((parity * BANDS + c, sets, exps));
            }
        }
        for (code, sets, exps) in classes {
            let filtered: Vec<Rel> = rels
                .iter()
                .map(|r| (0..k).fold(r.clone(), |r, t| r.not_in(vars[t], &sets[t])))
                .collect();
            if filtered.iter().any(Rel::is_empty) {
                continue;
            }
            let order = union_vars(&filtered);
            let by_var: Vec<Rational> =
                order.iter().map(|v| exps[vars.iter().position(|x| x == v).expect("cycle variable")].clone()).collect();
            let shares = Self::grid_shares(&by_var, p);
            let c = cls.clone();
            let csink = sink.with_classifier(Arc::new(move |tu: &[u64]| c.pair(tu).is_none() && c.class(tu) == code));
            let label = format!("C{k} {}", EvenCycleClasses::describe(code));
            self.hc_job(&filtered, servers, 1, shares, &csink, label);
        }
        Ok(())
    }

    /// Residual of an even cycle once `vars[t] = h` and `vars[t2] = h2`.
    fn heavy_pair(
        &mut self,
        vars: &[VarId],
        rels: &[Rel],
        (t, h): (usize, u64),
        (t2, h2): (usize, u64),
        servers: &ServerSet,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        let k = vars.len();
        let at = |i: usize| i % k;
        if t2 == t + 1 || (t == 0 && t2 == k - 1) {
            // adjacent: the shared relation must hold (h, h2)
            let (a, ha, hb) = if t2 == t + 1 { (t, h, h2) } else { (k - 1, h2, h) };
            let r = &rels[a];
            let (ca, cb) = (r.col(vars[a]), r.col(vars[at(a + 1)]));
            if !r.stats.chunks_exact(r.arity()).any(|x| x[ca] == ha && x[cb] == hb) {
                return Ok(());
            }
            let start = rels[at(a + 1)].fix(vars[at(a + 1)], hb);
            let end = rels[at(a + k - 1)].fix(vars[a], ha);
            let chain_vars: Vec<VarId> = (2..k).map(|i| vars[at(a + i)]).collect();
            let chain: Vec<Rel> = (2..k - 1).map(|i| rels[at(a + i)].clone()).collect();
            if start.is_empty() || end.is_empty() || chain.iter().any(Rel::is_empty) {
                return Ok(());
            }
            return self.arc(&chain_vars, chain, Some(start), Some(end), servers, 1, sink);
        }
        let d = t2 - t;
        let arc_a = (
            (t + 1..t2).map(|i| vars[i]).collect::<Vec<_>>(),
            (t + 1..t2 - 1).map(|i| rels[i].clone()).collect::<Vec<_>>(),
            rels[t].fix(vars[t], h),
            rels[t2 - 1].fix(vars[t2], h2),
        );
        let arc_b = (
            (1..k - d).map(|i| vars[at(t2 + i)]).collect::<Vec<_>>(),
            (1..k - d - 1).map(|i| rels[at(t2 + i)].clone()).collect::<Vec<_>>(),
            rels[t2].fix(vars[t2], h2),
            rels[at(t + k - 1)].fix(vars[t], h),
        );
        for (_, chain, s, e) in [&arc_a, &arc_b] {
            if s.is_empty() || e.is_empty() || chain.iter().any(Rel::is_empty) {
                return Ok(());
            }
        }
        let (alpha, beta) = (arc_a.1.len() as i64, arc_b.1.len() as i64);
        let g = Self::grid_shares(&[frac(alpha + 1, alpha + beta + 2), frac(beta + 1, alpha + beta + 2)], servers.len());
        let (ga, gb) = servers.grid(g[0] as usize, g[1] as usize);
        let label = format!("C{k}[{}={h},{}={h2}]", self.name(vars[t]), self.name(vars[t2]));
        let pid = self.plan.add_product(label, vec![arc_a.0.clone(), arc_b.0.clone()], sink.clone());
        let (va, ca, sa, ea) = arc_a;
        self.arc(&va, ca, Some(sa), Some(ea), &ga, 1, &side(pid, 0))?;
        let (vb, cb, sb, eb) = arc_b;
        self.arc(&vb, cb, Some(sb), Some(eb), &gb, 1, &side(pid, 1))
    }

    /// Loomis-Whitney query with `rels[i]` missing `vars[i]`.
    pub(crate) fn loomis_whitney(&mut self, vars: &[VarId], rels: Vec<Rel>, servers: &ServerSet, sink: &Sink) -> Result<(), PlanError> {
        let k = vars.len();
        let p = servers.len();
        let thr = threshold(max_len(&rels), p, 1.0 / k as f64);
        let heavy: Vec<HashMap<u64, u64>> = vars.iter().map(|&v| heavy_values(&rels, v, thr)).collect();
        let sets: Vec<Arc<HashSet<u64>>> = heavy.iter().map(key_set).collect();
        let light: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, k)).collect();
        if !light.iter().any(Rel::is_empty) {
            self.uniform_hc(&light, servers, 1, sink, format!("LW{k} light"));
        }
        let branches: Vec<(usize, u64, u64)> =
            (0..k).flat_map(|i| sorted(&heavy[i]).into_iter().map(move |(h, d)| (i, h, d))).collect();
        if branches.is_empty() {
            return Ok(());
        }
        let weights: Vec<f64> = branches.iter().map(|b| b.2 as f64).collect();
        let parts = proportional(p, &weights, &format!("heavy values of LW{k}"))?;
        let mut off = 0;
        'branch: for (&(i, h, _), ph) in branches.iter().zip(parts) {
            let slice = servers.slice(off, ph);
            off += ph;
            let rs: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, i)).collect();
            let base = &rs[i];
            let mut parts = Vec::new();
            for (j, r) in rs.iter().enumerate().filter(|&(j, _)| j != i) {
                let s = r.fix(vars[i], h);
                if s.is_empty() || base.is_empty() {
                    continue 'branch;
                }
                parts.push((j, s));
            }
            let mut semis = Vec::new();
            for (_, s) in &parts {
                semis.push(self.semi_join_held(s, base, &slice, 1)?);
            }
            self.intersect(&semis, &slice, 2, &sink.with_consts(&[(vars[i], h)]));
        }
        Ok(())
    }

    /// Clique over `vars` with one binary relation per pair.
    pub(crate) fn clique(
        &mut self,
        vars: &[VarId],
        rels: Vec<Rel>,
        servers: &ServerSet,
        round: usize,
        sink: &Sink,
    ) -> Result<(), PlanError> {
        let k = vars.len();
        let edge = |rels: &[Rel], a: VarId, b: VarId| {
            rels.iter().position(|r| r.has(a) && r.has(b)).expect("clique has every edge")
        };
        if k == 3 {
            let (a, b, c) = (vars[0], vars[1], vars[2]);
            let rs = vec![rels[edge(&rels, a, b)].clone(), rels[edge(&rels, b, c)].clone(), rels[edge(&rels, c, a)].clone()];
            return self.odd_cycle(vars, rs, servers, round, sink);
        }
        let p = servers.len();
        let thr = threshold(max_len(&rels), p, 1.0 / k as f64);
        let heavy: Vec<HashMap<u64, u64>> = vars.iter().map(|&v| heavy_values(&rels, v, thr)).collect();
        let sets: Vec<Arc<HashSet<u64>>> = heavy.iter().map(key_set).collect();
        let light: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, k)).collect();
        if !light.iter().any(Rel::is_empty) {
            self.uniform_hc(&light, servers, round, sink, format!("K{k} light"));
        }
        let branches: Vec<(usize, u64, u64)> =
            (0..k).flat_map(|i| sorted(&heavy[i]).into_iter().map(move |(h, d)| (i, h, d))).collect();
        if branches.is_empty() {
            return Ok(());
        }
        let weights: Vec<f64> = branches.iter().map(|b| b.2 as f64).collect();
        let parts = proportional(p, &weights, &format!("heavy values of K{k}"))?;
        let mut off = 0;
        'branch: for (&(i, h, _), ph) in branches.iter().zip(parts) {
            let slice = servers.slice(off, ph);
            off += ph;
            let x = vars[i];
            let rs: Vec<Rel> = rels.iter().map(|r| restrict_all(r, vars, &sets, i)).collect();
            let others: Vec<VarId> = vars.iter().copied().filter(|&v| v != x).collect();
            let mut unary = Vec::new();
            for &a in &others {
                let u = rs[edge(&rs, x, a)].fix(x, h);
                if u.is_empty() {
                    continue 'branch;
                }
                unary.push(u);
            }
            let mut sub: Vec<Rel> = rs.iter().filter(|r| !r.has(x)).cloned().collect();
            if sub.iter().any(Rel::is_empty) {
                continue;
            }
            let start = ready(&sub, round);
            for (t, u) in unary.iter().enumerate() {
                let (a, b) = (others[t], others[(t + 1) % others.len()]);
                let e = edge(&sub, a, b);
                sub[e] = self.semi_join_held(u, &sub[e], &slice, start)?;
            }
            self.clique(&others, sub, &slice, start + 1, &sink.with_consts(&[(x, h)]))?;
        }
        Ok(())
    }

    /// Semi-joins of the covering atom with every other atom, then their
    /// intersection.
    pub(crate) fn covering(&mut self, j: usize, rels: Vec<Rel>, servers: &ServerSet, sink: &Sink) -> Result<(), PlanError> {
        let r = rels[j].clone();
        if rels.len() == 1 {
            self.plan.add_job(1, format!("{} stays local", r.name), servers.clone(), Strategy::Local, vec![r.input], sink.clone());
            return Ok(());
        }
        let mut semis = Vec::new();
        for (_, s) in rels.iter().enumerate().filter(|&(i, _)| i != j) {
            semis.push(self.semi_join_held(s, &r, servers, 1)?);
        }
        self.intersect(&semis, servers, 2, sink);
        Ok(())
    }
}

/// `r` with the heavy values of the first `upto` positions removed.
fn restrict_all(r: &Rel, vars: &[VarId], sets: &[Arc<HashSet<u64>>], upto: usize) -> Rel {
    (0..upto).fold(r.clone(), |r, t| r.not_in(vars[t], &sets[t]))
}

/// Output-level classification for even cycles.
struct EvenCycleClasses {
    vars: Vec<VarId>,
    deg: Vec<HashMap<u64, u64>>,
    pairs: Vec<(usize, usize)>,
    pair_thr: f64,
    m: f64,
    p: f64,
    lo: f64,
}

impl EvenCycleClasses {
    const UNIFORM: usize = 2 * BANDS;

    fn d(&self, tu: &[u64], t: usize) -> f64 {
        self.deg[t].get(&tu[self.vars[t]]).copied().unwrap_or(0) as f64
    }

    /// First pair of positions at odd distance whose degrees multiply to the
    /// pair threshold.
    fn pair(&self, tu: &[u64]) -> Option<(usize, usize)> {
        self.pairs.iter().copied().find(|&(a, b)| self.d(tu, a) * self.d(tu, b) >= self.pair_thr)
    }

    /// `m / p^{δ_c}` with `δ_c = c (2/k) / BANDS`.
    fn band_threshold(&self, c: usize) -> f64 {
        let k = self.vars.len() as f64;
        self.m / self.p.powf(2.0 / k * c as f64 / BANDS as f64)
    }

    fn class(&self, tu: &[u64]) -> usize {
        let k = self.vars.len();
        let top = |par: usize| (0..k).filter(|t| t % 2 == par).map(|t| self.d(tu, t)).fold(0.0, f64::max);
        let (d0, d1) = (top(0), top(1));
        let (parity, d) = if d0 >= d1 { (0, d0) } else { (1, d1) };
        if d <= self.lo {
            return Self::UNIFORM;
        }
        let c = (0..BANDS).rev().find(|&c| d <= self.band_threshold(c)).unwrap_or(0);
        parity * BANDS + c
    }

    fn describe(code: usize) -> String {
        if code == Self::UNIFORM {
            "uniform".to_string()
        } else {
            format!("parity {} band {}", code / BANDS, code % BANDS)
        }
    }
}
