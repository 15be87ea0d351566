use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn peg(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peg"));
    c.args(args).env_remove("PEG_SEED");
    if let Some(s) = env_seed {
        c.env("PEG_SEED", s);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn simulate(cfg: &Path, out: &Path, extra: &[&str], env_seed: Option<&str>) -> Output {
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    peg(&args, env_seed)
}

const CSV_FILES: [&str; 5] = ["payments.csv", "policies.csv", "votes.csv", "regret.csv", "convergence.csv"];

#[test]
fn default_config_writes_all_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{}");
    let out = tmp.path().join("out");
    let o = simulate(&cfg, &out, &[], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut want: Vec<String> = CSV_FILES.iter().map(|s| s.to_string()).collect();
    want.push("summary.json".into());
    want.sort();
    assert_eq!(names, want);

    let header = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().next().unwrap().to_string();
    let first = header("payments.csv");
    assert!(first.starts_with("# config_hash=") && first.ends_with(" seed=0"), "{first}");
    for f in CSV_FILES {
        assert_eq!(header(f), first);
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["header"].as_str().unwrap(), &first[2..]);

    // 3 discriminators x 10 rounds, then T + 1 snapshots of 4 agents
    let lines = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().count() - 2;
    assert_eq!(lines("payments.csv"), 30);
    assert_eq!(lines("policies.csv"), 44);
    assert_eq!(lines("votes.csv"), 80);
    assert_eq!(lines("regret.csv"), 40);
}

#[test]
fn replications_are_indexed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"replications": 4, "iterations": 3}"#);
    let out = tmp.path().join("out");
    assert!(simulate(&cfg, &out, &[], None).status.success());
    let text = std::fs::read_to_string(out.join("payments.csv")).unwrap();
    let mut reps: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    reps.dedup();
    assert_eq!(reps, ["0", "1", "2", "3"]);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replications"].as_array().unwrap().len(), 4);
}

#[test]
fn seed_flag_beats_env_which_beats_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"seed": 3, "iterations": 2}"#);
    let run = |name: &str, extra: &[&str], env: Option<&str>| {
        let out = tmp.path().join(name);
        assert!(simulate(&cfg, &out, extra, env).status.success());
        std::fs::read_to_string(out.join("payments.csv")).unwrap()
    };
    let config_only = run("a", &[], None);
    let env = run("b", &[], Some("9"));
    let flag = run("c", &["--seed", "11"], Some("9"));
    let flag_only = run("d", &["--seed", "11"], None);
    assert!(config_only.starts_with("# config_hash=") && config_only.lines().next().unwrap().ends_with("seed=3"));
    assert!(env.lines().next().unwrap().ends_with("seed=9"));
    assert_eq!(flag, flag_only);
    assert_ne!(config_only, env);

    let o = simulate(&cfg, &tmp.path().join("e"), &[], Some("not-a-number"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("k.json", r#"{"batch_size": 3}"#),
        ("p.json", r#"{"schedule": {"kind": "power_decay", "base_rate": 0.1, "exponent": 1.2}}"#),
        ("bad.json", "{not json"),
        ("unknown.json", r#"{"speed": 1}"#),
    ] {
        let cfg = write_config(tmp.path(), name, text);
        let o = simulate(&cfg, &tmp.path().join("out"), &[], None);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(!o.stderr.is_empty());
    }
    let missing = tmp.path().join("missing.json");
    assert_eq!(simulate(&missing, &tmp.path().join("out"), &[], None).status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());

    let cfg = write_config(tmp.path(), "sweep.json", r#"{"sweep": {"k_values": [2, 8]}}"#);
    let o = peg(&["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(tmp.path(), "nolearn.json", "{}");
    let o = peg(&["regret", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"iterations": 1}"#);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = simulate(&cfg, &blocker.join("out"), &[], None);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn verify_passes_skips_and_fails_on_mutation() {
    let tmp = tempfile::tempdir().unwrap();
    let fast = r#""verify": {"gradient_samples": 2000, "dominance_worlds": 2, "gradient_worlds": 1, "grid_step": 0.1}"#;
    let run = |name: &str, world: &str, extra: &[&str]| {
        let cfg = write_config(tmp.path(), &format!("{name}.json"), &format!("{{{world}{fast}}}"));
        let out = tmp.path().join(name);
        let mut args = vec!["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = peg(&args, None);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
        (o.status.code(), report)
    };
    let status = |r: &serde_json::Value, name: &str| {
        r["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .map(|c| c["status"].as_str().unwrap().to_string())
            .unwrap()
    };

    let (code, r) = run("ok", "", &[]);
    assert_eq!(code, Some(0));
    for c in r["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "PASS", "{c}");
    }

    let (code, r) = run("uninformative", r#""world": {"accuracies": [0.9, 0.5, 0.8]},"#, &[]);
    assert_eq!(code, Some(0));
    assert_eq!(status(&r, "dominance"), "SKIPPED");
    let reason = r["checks"][3]["reason"].as_str().unwrap();
    assert!(reason.starts_with("UninformativePeer"), "{reason}");

    let (code, r) = run("mutated", "", &["--mutate", "payment-sign-flip"]);
    assert_eq!(code, Some(1));
    assert_eq!(status(&r, "dominance"), "FAIL");
    assert_eq!(r["passed"], false);
}

#[test]
fn sweep_single_k_gives_r_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"iterations": 3, "replications": 2, "sweep": {"k_values": [6]}}"#);
    let out = tmp.path().join("s");
    let o = peg(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "K,replication,vote_accuracy,mean_payment,final_distance");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("6,0,") && lines[3].starts_with("6,1,"));
}

#[test]
fn regret_output_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"iterations": 64, "schedule": {"kind": "power_decay", "base_rate": 0.5, "exponent": 0.6}}"#,
    );
    let out = tmp.path().join("r");
    let o = peg(&["regret", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("regret.csv")).unwrap();
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "replication,t,realized,baseline,regret,surrogate_bound,surrogate_bound_kt"
    );
    assert_eq!(text.lines().count(), 66);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["replications"][0]["regret_slope"].is_number());
    assert!((summary["negative_control_slope"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn output_dir_from_config_and_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let from_cfg = tmp.path().join("cfg-out");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &format!(r#"{{"iterations": 1, "output_dir": {:?}}}"#, from_cfg.to_str().unwrap()),
    );
    let o = peg(&["simulate", "--config", cfg.to_str().unwrap()], None);
    assert!(o.status.success());
    assert!(from_cfg.join("summary.json").exists());
    let flag = tmp.path().join("flag-out");
    assert!(simulate(&cfg, &flag, &[], None).status.success());
    // the output directory does not enter the config hash
    let a = std::fs::read_to_string(from_cfg.join("votes.csv")).unwrap();
    let b = std::fs::read_to_string(flag.join("votes.csv")).unwrap();
    assert_eq!(a, b);
}
