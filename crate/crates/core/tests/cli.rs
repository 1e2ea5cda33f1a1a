use std::process::Command;

fn mpcjoin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mpcjoin")).args(args).env_remove("MPCJOIN_SEED").output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn analyze_families() {
    let (code, out, _) = mpcjoin(&["analyze", "--family", "C", "--k", "3"]);
    assert_eq!(code, 0);
    assert!(out.contains("psi_star: 2 ") && out.contains("tau_star: 3/2 ") && out.contains("rho_star: 3/2 "), "{out}");
    let (code, out, _) = mpcjoin(&["analyze", "--family", "LW", "--k", "4"]);
    assert_eq!(code, 0);
    assert!(out.contains("psi_star: 2 "), "{out}");
    let (code, out, _) = mpcjoin(&["analyze", "--query", "q(x):-S(x)"]);
    assert_eq!(code, 0);
    for key in ["tau_star: 1 ", "rho_star: 1 ", "psi_star: 1 "] {
        assert!(out.contains(key), "{out}");
    }
}

#[test]
fn input_errors_exit_2() {
    assert_eq!(mpcjoin(&["analyze", "--query", "q(x) :- "]).0, 2);
    assert_eq!(mpcjoin(&["analyze", "--family", "Q", "--k", "3"]).0, 2);
    assert_eq!(mpcjoin(&["sweep", "--family", "C", "--k", "3", "--p", ","]).0, 2);
    assert_eq!(mpcjoin(&["run", "--family", "C", "--k", "3", "--gen", "zipf"]).0, 2);
    assert_eq!(mpcjoin(&["frobnicate"]).0, 2);
}

#[test]
fn generate_is_reproducible() {
    let dir = std::env::temp_dir().join(format!("mpcjoin-cli-{}", std::process::id()));
    let (a, b) = (dir.join("a"), dir.join("b"));
    for d in [&a, &b] {
        let (code, out, err) =
            mpcjoin(&["generate", "--family", "C", "--k", "3", "--gen", "matching", "--m", "1000", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert!(out.starts_with("# flags: mpcjoin generate --family C --k 3 --gen matching --m 1000 --seed 7"));
    }
    for r in ["S1", "S2", "S3"] {
        let x = std::fs::read(a.join(format!("{r}.tsv"))).unwrap();
        assert_eq!(x.iter().filter(|&&c| c == b'\n').count(), 1000);
        assert_eq!(x, std::fs::read(b.join(format!("{r}.tsv"))).unwrap());
    }
    let (code, out, _) = mpcjoin(&["generate", "--family", "C", "--k", "3", "--gen", "agm-worst", "--m", "10000", "--out", dir.join("c").to_str().unwrap()]);
    assert_eq!(code, 0);
    for v in ["x1", "x2", "x3"] {
        assert!(out.contains(&format!("domain.{v}\t100\n")), "{out}");
    }
    // an instance read back from disk runs like the generated one
    let (code, out, err) = mpcjoin(&["run", "--family", "C", "--k", "3", "--data", a.to_str().unwrap(), "--p", "8", "--alg", "hc"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("# oracle: match"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn run_round_counts() {
    let (code, out, err) =
        mpcjoin(&["run", "--family", "C", "--k", "3", "--gen", "single-heavy", "--m", "5000", "--p", "64", "--alg", "triangle-2round"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().last().unwrap().starts_with("triangle-2round,C3,64,2,"), "{out}");
    let (code, out, _) = mpcjoin(&["run", "--family", "C", "--k", "3", "--gen", "matching", "--m", "5000", "--p", "64", "--alg", "one-round-skew"]);
    assert_eq!(code, 0);
    assert!(out.lines().last().unwrap().starts_with("one-round-skew,C3,64,1,"), "{out}");
}

#[test]
fn seed_from_environment() {
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mpcjoin"));
        c.args(["run", "--family", "C", "--k", "3", "--m", "500", "--p", "8"]);
        match seed {
            Some(s) => c.env("MPCJOIN_SEED", s),
            None => c.env_remove("MPCJOIN_SEED"),
        };
        String::from_utf8(c.output().unwrap().stdout).unwrap()
    };
    assert!(run(Some("42")).starts_with("# flags: mpcjoin run --family C --k 3 --gen matching --m 500 --seed 42"));
    assert!(run(None).contains("--seed 1 "));
}

#[test]
fn sweeps() {
    let (code, out, err) = mpcjoin(&["sweep", "--family", "C", "--k", "3", "--m", "2000", "--p", "8,27,64,125", "--alg", "triangle-2round"]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "p,algorithm,max_load_tuples,max_load_bits,bound,ratio");
    assert_eq!(rows.len(), 5);
    let (code, out, err) = mpcjoin(&["sweep", "--family", "C", "--k", "3", "--gen", "agm-worst", "--m", "2000", "--alg", "triangle-2round", "--W", "400,800", "--B", "10"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("W,B,algorithm,p_o,rounds,io_blocks,reference,ratio"));
}
