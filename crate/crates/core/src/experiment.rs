//! Command-line experiments: `analyze`, `generate`, `run` and `sweep`.
//!
//! Every command echoes its flags as a `# flags:` header line so that a
//! report can be reproduced from its first line. Exit codes: 0 success,
//! 1 correctness or bound violation, 2 input error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::algorithms::{run_algorithm, AlgorithmKind};
use crate::analyzer::{analyze, rho_star, psi_star, Sizes};
use crate::datagen::{gen_agm_worst, gen_coin_flip, gen_matching, gen_single_heavy, DatabaseInstance};
use crate::em::{input_words, run_em, EMConfig};
use crate::mpc::{oracle_join_guarded, ClusterConfig};
use crate::query::{canonical_query, parse_query, Family, Query};
use crate::rational::{render_with_decimal, to_f64, Rational};

/// Largest output the `run` command checks against the reference join.
pub const ORACLE_GUARD: usize = 2_000_000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Violation(String),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "mpcjoin", version, about = "Parallel join analysis, simulation and external-memory experiments")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fractional cover/packing numbers, shares and worst-case load of a query.
    Analyze(AnalyzeArgs),
    /// Write a generated instance as TSV files plus a manifest.
    Generate(GenerateArgs),
    /// Run one algorithm on the simulated cluster and check it against the reference join.
    Run(RunArgs),
    /// Loads over a list of p (or I/O cost over a list of W).
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    /// Query text, e.g. 'q(x,y,z) :- R(x,y), S(y,z), T(z,x)'.
    #[arg(long, conflicts_with = "family")]
    pub query: Option<String>,
    /// Query family: T, SP, K, W, L, Lstar, Ldagger, C, LW.
    #[arg(long, requires = "k")]
    pub family: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Generator: matching, single-heavy, agm-worst, coin-flip.
    #[arg(long = "gen", default_value = "matching")]
    pub generator: String,
    /// Relation size.
    #[arg(long, default_value_t = 1000)]
    pub m: u64,
    #[arg(long, env = "MPCJOIN_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Variable made heavy by single-heavy (default: the first).
    #[arg(long)]
    pub heavy_var: Option<String>,
    /// Read the instance from a directory written by `generate` instead.
    #[arg(long, conflicts_with = "generator")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub q: QueryArgs,
    #[arg(long, default_value_t = 64)]
    pub p: u64,
    /// Relation size used for shares and the load bound.
    #[arg(long, default_value_t = 1000)]
    pub m: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub q: QueryArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub q: QueryArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub p: usize,
    #[arg(long, default_value = "hc")]
    pub alg: String,
    /// Run the external-memory simulation with this much memory (words).
    #[arg(long = "W")]
    pub w: Option<u64>,
    /// Block size in words.
    #[arg(long = "B", default_value_t = 100)]
    pub b: u64,
    /// Write the CSV report here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the output tuples as TSV.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub q: QueryArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated server counts.
    #[arg(long)]
    pub p: Option<String>,
    /// Comma-separated algorithms.
    #[arg(long, default_value = "hc")]
    pub alg: String,
    /// Comma-separated memory sizes; switches to the external-memory sweep.
    #[arg(long = "W")]
    pub w: Option<String>,
    #[arg(long = "B", default_value_t = 100)]
    pub b: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl QueryArgs {
    pub fn resolve(&self) -> Result<(Query, Option<(Family, usize)>), CliError> {
        match (&self.query, &self.family, self.k) {
            (Some(text), _, _) => Ok((parse_query(text).map_err(|e| usage(format!("query: {e}")))?, None)),
            (None, Some(f), Some(k)) => {
                let family: Family = f.parse().map_err(usage)?;
                let q = canonical_query(family, k).map_err(|e| usage(e.to_string()))?;
                Ok((q, Some((family, k))))
            }
            _ => Err(usage("give --query or --family with --k")),
        }
    }

    fn flags(&self) -> String {
        match (&self.query, &self.family, self.k) {
            (Some(t), _, _) => format!("--query '{t}'"),
            (None, Some(f), Some(k)) => format!("--family {f} --k {k}"),
            _ => String::new(),
        }
    }
}

impl DataArgs {
    pub fn instance(&self, q: &Query) -> Result<DatabaseInstance, CliError> {
        if let Some(dir) = &self.data {
            let db = DatabaseInstance::read_dir(dir)?;
            if !db.query.is_isomorphic(q) {
                return Err(usage(format!("{} holds {}, not {q}", dir.display(), db.query)));
            }
            return Ok(db);
        }
        if self.m == 0 {
            return Err(usage("--m must be positive"));
        }
        Ok(match self.generator.as_str() {
            "matching" => gen_matching(q, self.m, self.seed),
            "single-heavy" => {
                let v = match &self.heavy_var {
                    Some(name) => q.var_index(name).ok_or_else(|| usage(format!("no variable {name} in {q}")))?,
                    None => 0,
                };
                gen_single_heavy(q, self.m, v, self.seed)
            }
            "agm-worst" => gen_agm_worst(q, self.m, self.seed),
            "coin-flip" => gen_coin_flip(q, self.m, self.seed),
            g => return Err(usage(format!("unknown generator {g}; expected matching, single-heavy, agm-worst, coin-flip"))),
        })
    }

    fn flags(&self) -> String {
        if let Some(d) = &self.data {
            return format!("--data {}", d.display());
        }
        let mut s = format!("--gen {} --m {} --seed {}", self.generator, self.m, self.seed);
        if let Some(v) = &self.heavy_var {
            let _ = write!(s, " --heavy-var {v}");
        }
        s
    }
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(usage(format!("{flag}: sweep list is empty")));
    }
    items.iter().map(|s| s.parse().map_err(|_| usage(format!("{flag}: cannot parse {s:?}")))).collect()
}

fn header(cmd: &str, flags: &[String]) -> String {
    let flags: Vec<&str> = flags.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
    format!("# flags: mpcjoin {cmd} {}\n", flags.join(" "))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String, CliError> {
    let (q, family) = a.q.resolve()?;
    if a.p == 0 || a.m == 0 {
        return Err(usage("--p and --m must be positive"));
    }
    let vbits = crate::datagen::value_bits(a.m);
    let sizes = Sizes::new(
        q.atoms.iter().map(|at| a.m * at.arity() as u64 * vbits).collect(),
        q.atoms.iter().map(|at| at.arity() as u64 * vbits).collect(),
    );
    let report = analyze(&q, family, &sizes, a.p);
    let mut s = header("analyze", &[a.q.flags(), format!("--p {} --m {}", a.p, a.m)]);
    s.push_str(&report.key_values());
    Ok(s)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<String, CliError> {
    let (q, _) = a.q.resolve()?;
    let db = a.data.instance(&q)?;
    db.write_dir(&a.out)?;
    let mut s = header("generate", &[a.q.flags(), a.data.flags(), format!("--out {}", a.out.display())]);
    for w in &db.warnings {
        let _ = writeln!(s, "# warning: {w}");
    }
    s.push_str(&db.manifest());
    Ok(s)
}

fn kind(name: &str) -> Result<AlgorithmKind, CliError> {
    name.parse().map_err(usage)
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
        }
        fs::write(p, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
    }
    Ok(())
}

fn dump(path: &Path, rows: &[u64], arity: usize) -> Result<(), CliError> {
    let mut s = String::new();
    for t in rows.chunks_exact(arity.max(1)) {
        let line: Vec<String> = t.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "{}", line.join("\t"));
    }
    write_out(&Some(path.to_path_buf()), &s)
}

fn render_row(t: &[u64]) -> String {
    format!("({})", t.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
}

/// Up to five tuples of `a` missing from `b`.
fn missing(a: &[u64], b: &[u64], arity: usize) -> Vec<String> {
    let bs: std::collections::HashSet<&[u64]> = b.chunks_exact(arity).collect();
    a.chunks_exact(arity).filter(|t| !bs.contains(t)).take(5).map(render_row).collect()
}

fn check_output(db: &DatabaseInstance, got: &crate::mpc::Output) -> Result<String, CliError> {
    let oracle = match oracle_join_guarded(db, ORACLE_GUARD) {
        Ok(o) => o,
        Err(e) => return Ok(format!("# oracle: skipped ({e})\n")),
    };
    let tuples = got.tuples.as_deref().unwrap_or(&[]);
    if got.matches(&oracle) && got.duplicates() == Some(0) {
        return Ok(format!("# oracle: match ({} tuples)\n", oracle.len() / got.arity.max(1)));
    }
    let a = got.arity.max(1);
    let mut msg = format!(
        "output differs from the reference join: {} distinct tuples ({} emitted) vs {}",
        tuples.len() / a,
        got.emitted,
        oracle.len() / a
    );
    let lost = missing(&oracle, tuples, a);
    if !lost.is_empty() {
        let _ = write!(msg, "\n  missing: {}", lost.join(" "));
    }
    let extra = missing(tuples, &oracle, a);
    if !extra.is_empty() {
        let _ = write!(msg, "\n  unexpected: {}", extra.join(" "));
    }
    Err(CliError::Violation(msg))
}

pub fn cmd_run(a: &RunArgs) -> Result<String, CliError> {
    let (q, _) = a.q.resolve()?;
    let alg = kind(&a.alg)?;
    if a.p == 0 {
        return Err(usage("--p must be positive"));
    }
    let db = a.data.instance(&q)?;
    let mut flags = vec![a.q.flags(), a.data.flags(), format!("--alg {alg}")];
    if let Some(w) = a.w {
        flags.push(format!("--W {w} --B {}", a.b));
        let em = EMConfig::new(w, a.b).map_err(|e| usage(e.to_string()))?;
        let run = run_em(alg, &db, &em, a.data.seed).map_err(|e| match e {
            crate::em::EmError::Plan(p) => usage(p.to_string()),
            e => CliError::Violation(e.to_string()),
        })?;
        let mut s = header("run", &flags);
        let _ = writeln!(s, "# p_o: {} rounds: {} peak_memory: {}", run.report.p_o, run.report.r, run.report.peak_memory);
        s.push_str(&check_output(&db, &run.output)?);
        s.push_str(&run.report.to_csv());
        write_out(&a.out, &s)?;
        if let (Some(path), Some(t)) = (&a.dump, &run.output.tuples) {
            dump(path, t, run.output.arity)?;
        }
        return Ok(s);
    }
    flags.push(format!("--p {}", a.p));
    let res = run_algorithm(alg, &db, &ClusterConfig::new(a.p, a.data.seed)).map_err(|e| usage(e.to_string()))?;
    let mut s = header("run", &flags);
    for line in res.plan.lines() {
        let _ = writeln!(s, "# {line}");
    }
    let verdict = check_output(&db, &res.output);
    if let (Some(path), Some(t)) = (&a.dump, &res.output.tuples) {
        dump(path, t, res.output.arity)?;
    }
    s.push_str(&verdict?);
    let _ = writeln!(s, "{}", crate::algorithms::AlgorithmResult::CSV_HEADER);
    let _ = writeln!(s, "{}", res.csv_row());
    write_out(&a.out, &s)?;
    Ok(s)
}

pub const SWEEP_HEADER: &str = "p,algorithm,max_load_tuples,max_load_bits,bound,ratio";
pub const EM_SWEEP_HEADER: &str = "W,B,algorithm,p_o,rounds,io_blocks,reference,ratio";

/// `log_{m/W}` of the number of simulated servers an algorithm needs:
/// `ρ*` for the multi-round plans, `ψ*` for the one-round ones.
pub fn em_exponent(alg: AlgorithmKind, q: &Query) -> Rational {
    match alg {
        AlgorithmKind::Hc | AlgorithmKind::OneRoundSkew => psi_star(q).0,
        _ => rho_star(q).0,
    }
}

/// `(m/W)^e · W/B`.
pub fn em_reference(m: u64, w: u64, b: u64, e: &Rational) -> f64 {
    (m as f64 / w as f64).max(1.0).powf(to_f64(e)) * w as f64 / b as f64
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String, CliError> {
    let (q, _) = a.q.resolve()?;
    let algs: Vec<AlgorithmKind> = parse_list::<String>("--alg", &a.alg)?.iter().map(|s| kind(s)).collect::<Result<_, _>>()?;
    let db = a.data.instance(&q)?;
    let mut flags = vec![a.q.flags(), a.data.flags(), format!("--alg {}", a.alg)];
    let m = db.relations.iter().map(|r| r.len() as u64).max().unwrap_or(0);
    let mut violations = Vec::new();
    let mut s;
    if let Some(ws) = &a.w {
        let ws: Vec<u64> = parse_list("--W", ws)?;
        flags.push(format!("--W {} --B {}", ws.iter().map(u64::to_string).collect::<Vec<_>>().join(","), a.b));
        s = header("sweep", &flags);
        let _ = writeln!(s, "# input_words: {}", input_words(&db));
        let _ = writeln!(s, "{EM_SWEEP_HEADER}");
        for &alg in &algs {
            let e = em_exponent(alg, &q);
            for &w in &ws {
                let em = EMConfig::new(w, a.b).map_err(|e| usage(e.to_string()))?;
                match run_em(alg, &db, &em, a.data.seed) {
                    Ok(run) => {
                        let reference = em_reference(m, w, a.b, &e);
                        let r = &run.report;
                        let _ = writeln!(
                            s,
                            "{w},{},{alg},{},{},{},{reference:.3},{:.4}",
                            a.b,
                            r.p_o,
                            r.r,
                            r.io_blocks,
                            r.io_blocks as f64 / reference
                        );
                    }
                    Err(err) => {
                        let _ = writeln!(s, "# W={w}: {err}");
                        let _ = writeln!(s, "{w},{},{alg},,,,,", a.b);
                    }
                }
            }
        }
        let _ = writeln!(s, "# reference: (m/W)^e*W/B with m={m}");
    } else {
        let ps: Vec<usize> = parse_list("--p", a.p.as_deref().ok_or_else(|| usage("sweep needs --p or --W"))?)?;
        if ps.contains(&0) {
            return Err(usage("--p values must be positive"));
        }
        flags.push(format!("--p {}", ps.iter().map(usize::to_string).collect::<Vec<_>>().join(",")));
        s = header("sweep", &flags);
        let _ = writeln!(s, "{SWEEP_HEADER}");
        for &alg in &algs {
            for &p in &ps {
                let res = run_algorithm(alg, &db, &ClusterConfig::new(p, a.data.seed)).map_err(|e| usage(e.to_string()))?;
                if let Err(CliError::Violation(v)) = check_output(&db, &res.output) {
                    violations.push(format!("{alg} at p={p}: {v}"));
                }
                let bound = res.bound(&db);
                let _ = writeln!(
                    s,
                    "{p},{alg},{},{},{:.3},{:.4}",
                    res.load.max_tuples,
                    res.load.max_bits,
                    bound.tuples,
                    res.load.max_tuples as f64 / bound.tuples
                );
            }
        }
        let _ = writeln!(s, "# bound: worst-case one-round load in tuples (exponent {})", {
            let b = crate::analyzer::load_bound_worstcase(&q, &db.sizes(), ps[0].max(2) as u64);
            render_with_decimal(&b.exponent)
        });
    }
    write_out(&a.out, &s)?;
    if !violations.is_empty() {
        return Err(CliError::Violation(violations.join("\n")));
    }
    Ok(s)
}

pub fn dispatch(cli: &Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the exit code together with stdout and stderr text.
pub fn run_cli<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            return (code, if code == 0 { e.to_string() } else { String::new() }, if code == 0 { String::new() } else { e.to_string() });
        }
    };
    match dispatch(&cli) {
        Ok(out) => (0, out, String::new()),
        Err(e) => (e.exit_code(), String::new(), format!("error: {e}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> (i32, String, String) {
        run_cli(std::iter::once("mpcjoin").chain(args.iter().copied()))
    }

    #[test]
    fn analyze_reports() {
        let (code, out, _) = cli(&["analyze", "--family", "C", "--k", "3"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("# flags: mpcjoin analyze --family C --k 3"));
        assert!(out.contains("tau_star: 3/2") && out.contains("rho_star: 3/2") && out.contains("psi_star: 2 "));
        let (code, out, _) = cli(&["analyze", "--query", "q(x):-S(x)"]);
        assert_eq!(code, 0);
        assert!(out.contains("tau_star: 1 ") && out.contains("psi_star: 1 "));
        let (code, _, err) = cli(&["analyze", "--query", "q(x):-S(x"]);
        assert_eq!(code, 2, "{err}");
        assert_eq!(cli(&["analyze"]).0, 2);
    }

    #[test]
    fn run_and_sweep() {
        let (code, out, err) =
            cli(&["run", "--family", "C", "--k", "3", "--gen", "single-heavy", "--m", "2000", "--p", "64", "--alg", "triangle-2round"]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("# oracle: match"));
        let row = out.lines().last().unwrap();
        assert!(row.starts_with("triangle-2round,C3,64,2,"), "{row}");
        let (code, out, err) = cli(&["sweep", "--family", "C", "--k", "3", "--m", "500", "--p", "8,27", "--alg", "hc,one-round-skew"]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 5);
        assert_eq!(cli(&["sweep", "--family", "C", "--k", "3", "--p", ""]).0, 2);
        assert_eq!(cli(&["sweep", "--family", "C", "--k", "3"]).0, 2);
        assert_eq!(cli(&["run", "--family", "C", "--k", "3", "--alg", "nope"]).0, 2);
    }

    #[test]
    fn em_run() {
        let (code, out, err) = cli(&["run", "--family", "C", "--k", "3", "--m", "300", "--alg", "triangle-2round", "--W", "400", "--B", "10"]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("phase,blocks") && out.contains("# oracle: match"));
        let (code, _, err) = cli(&["run", "--family", "C", "--k", "3", "--m", "3000", "--alg", "hc", "--W", "20", "--B", "10"]);
        assert_eq!(code, 1);
        assert!(err.contains("W too small") || err.contains("fan-out"), "{err}");
    }
}
