use std::io::Write;

fn main() {
    env_logger::init();
    let (code, out, err) = mpcjoin::experiment::run_cli(std::env::args_os());
    print!("{out}");
    eprint!("{err}");
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
