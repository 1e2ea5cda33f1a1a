//! Long-form CSV of loads over p, through the same code path as `mpcjoin sweep`.

use mpcjoin::experiment::run_cli;

fn main() {
    let args = [
        "mpcjoin", "sweep", "--family", "C", "--k", "3", "--gen", "single-heavy", "--m", "20000", "--p", "8,27,64,125", "--alg",
        "hc,one-round-skew,triangle-2round",
    ];
    let (code, out, err) = run_cli(args);
    print!("{out}");
    eprint!("{err}");
    std::process::exit(code);
}
