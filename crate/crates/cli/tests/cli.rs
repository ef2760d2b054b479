use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ntail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntail")).args(args).output().expect("spawn ntail")
}

fn ok(args: &[&str]) -> String {
    let out = ntail(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stages_chain_through_files() {
    let d = scratch("chain");
    let cfg = d.join("config.json");
    fs::write(
        &cfg,
        r#"{"trial":"T3","steps":[1,2],"n_nt":200,"batch_size":20,"fit_max_n":200,
            "learning":{"kind":"pnt","n_rc":4,"shots":200,"n_d":3}}"#,
    )
    .unwrap();
    let noise = d.join("noise.json");
    let pnt = d.join("pnt");
    let plan = d.join("plan.json");
    let run = d.join("run");

    ok(&["gen-noise", "--config", s(&cfg), "--mean-error", "0.01", "--seed", "4", "-o", s(&noise)]);
    let out = ok(&["pnt", "--config", s(&cfg), "--model", s(&noise), "-o", s(&pnt)]);
    assert!(out.contains("process fidelity"));
    for f in ["learned_model.json", "tomography.json", "signals.csv"] {
        assert!(pnt.join(f).exists(), "{f}");
    }

    let learned = pnt.join("learned_model.json");
    let out = ok(&["plan", "--config", s(&cfg), "--learned", s(&learned), "-o", s(&plan)]);
    assert!(out.contains("sigma"));

    ok(&[
        "run", "--config", s(&cfg), "--device", s(&noise), "--learned", s(&learned), "--plan", s(&plan), "-o", s(&run),
    ]);
    for f in ["config.json", "expectations.csv", "circuits.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let out = ok(&["report", s(&run), "--batch-size", "50"]);
    let grid = out.lines().find(|l| l.contains("curve N:")).expect("grid line");
    let ns: Vec<usize> = grid.split(':').nth(1).unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!(!ns.is_empty() && ns.iter().all(|n| n % 50 == 0 && *n <= 200));
    assert!(run.join("report.json").exists() && run.join("report_curve.csv").exists());

    // a rerun from the same artifacts reproduces the run
    let again = d.join("again");
    ok(&[
        "run", "--config", s(&cfg), "--device", s(&noise), "--learned", s(&learned), "--plan", s(&plan), "-o", s(&again),
    ]);
    assert_eq!(
        fs::read(run.join("expectations.csv")).unwrap(),
        fs::read(again.join("expectations.csv")).unwrap()
    );
}

#[test]
fn noiseless_learned_model_needs_no_overhead() {
    let d = scratch("noiseless");
    let cfg = d.join("config.json");
    fs::write(&cfg, r#"{"steps":[1,2]}"#).unwrap();
    let model = d.join("model.json");
    fs::write(&model, ntail::simulator::NoiseModel::noiseless(3).to_json().unwrap()).unwrap();
    let out = ok(&["plan", "--config", s(&cfg), "--learned", s(&model), "-o", s(&d.join("plan.json"))]);
    assert!(out.contains("F_NEC = 1.000000, sigma = 1.0000"), "{out}");
}

#[test]
fn bad_input_exits_nonzero() {
    let d = scratch("bad");
    let missing = d.join("missing.json");
    let out = ntail(&["plan", "--learned", s(&missing), "-o", s(&d.join("p.json"))]);
    assert_eq!(out.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = d.join("config.json");
    fs::write(&cfg, r#"{"steps":[2,1]}"#).unwrap();
    let out = ntail(&["pnt", "--config", s(&cfg), "-o", s(&d.join("pnt"))]);
    assert_eq!(out.status.code(), Some(11));

    let out = ntail(&["report", s(&d.join("nothing"))]);
    assert_eq!(out.status.code(), Some(14));
}
