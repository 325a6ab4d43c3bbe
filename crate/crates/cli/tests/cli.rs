use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cssbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cssbo")).args(args).env_remove("CSSBO_WORKERS").env_remove("CSSBO_OUT_ROOT").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const RS: &str = "seed = 3\n[channel]\np = 0.05\n[evaluation]\nshots = 100\n[search]\nell = 6\nm = 3\n[optimizer]\nmethod = \"rs\"\nbudget = 6\n";

#[test]
fn construct_writes_a_code_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[code]\nfamily = \"hgp\"\nrepetition = [4, 4]\n");
    let out_dir = tmp.path().join("out");
    let out = cssbo(&["construct", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[[32, 2]]"));
    let text = fs::read_to_string(out_dir.join("code.txt")).unwrap();
    assert!(text.starts_with("cssbo-code v1"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    // Missing --config and an unknown key are configuration errors.
    assert_eq!(code(&cssbo(&["construct", "--out", out])), 2);
    let bad = write_config(tmp.path(), "bad.toml", "[code]\nfamily = \"hgp\"\nrepetition = [3, 3]\ncolour = 1\n");
    assert_eq!(code(&cssbo(&["construct", "--config", &bad, "--out", out])), 2);
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&cssbo(&["construct", "--config", missing.to_str().unwrap(), "--out", out])), 2);
    // The zero polynomial pair gives no code at all.
    let invalid = write_config(tmp.path(), "zero.toml", "[code]\nfamily = \"bb\"\nell = 6\nm = 3\nbits = \"0000000000000000\"\n");
    let o = cssbo(&["construct", "--config", &invalid, "--out", out]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn sweep_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.toml",
        "seed = 2\n[code]\nfamily = \"hgp\"\nrepetition = [3, 3]\n[sweep]\np = [0.0, 0.02, 0.1]\nshots = 300\n",
    );
    let dir = tmp.path().join("sweep");
    let out = cssbo(&["sweep", "--config", &cfg, "--out", dir.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("label,n,k,rate,p,p_l,std_error,p_pq,t_hat,t_hat_over_n,objective"));
    assert_eq!(fs::read_to_string(dir.join("sweep.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn optimize_refuses_overwrite_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rs.toml", RS);
    let dir = tmp.path().join("run");
    let dir_s = dir.to_str().unwrap();
    assert_eq!(code(&cssbo(&["optimize", "--config", &cfg, "--out", dir_s])), 0);
    let full = fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    assert_eq!(full.lines().count(), 6);
    assert!(dir.join("best_code.txt").exists());

    assert_eq!(code(&cssbo(&["optimize", "--config", &cfg, "--out", dir_s])), 2);
    assert_eq!(code(&cssbo(&["optimize", "--config", &cfg, "--out", dir_s, "--resume", "--seed", "4"])), 2);

    // Drop the tail and resume from the manifest alone.
    let head: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("trace.jsonl"), head).unwrap();
    let o = cssbo(&["optimize", "--out", dir_s, "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("resumed after 2"));
    let strip = |t: &str| -> Vec<serde_json::Value> {
        t.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("elapsed_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip(&fs::read_to_string(dir.join("trace.jsonl")).unwrap()), strip(&full));
}

#[test]
fn report_aggregates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rs.toml", RS);
    let mut dirs = Vec::new();
    for seed in ["3", "4"] {
        let d = tmp.path().join(format!("rs-{seed}"));
        assert_eq!(code(&cssbo(&["optimize", "--config", &cfg, "--seed", seed, "--out", d.to_str().unwrap()])), 0);
        dirs.push(d.to_str().unwrap().to_string());
    }
    let rep = tmp.path().join("report");
    let out = cssbo(&["report", &dirs[0], &dirs[1], "--out", rep.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(rep.join("best_so_far.csv")).unwrap().lines().count(), 13);
    let summary = fs::read_to_string(rep.join("best_so_far_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(summary.lines().skip(1).all(|l| l.starts_with("rs,") && l.split(',').nth(2) == Some("2")));
    assert!(fs::read_to_string(rep.join("hamming_frontier.csv")).unwrap().contains("36,0,0.0,1.0"));
    assert!(rep.join("operating_points.csv").exists());
    // A directory without a run is a configuration error.
    assert_eq!(code(&cssbo(&["report", tmp.path().to_str().unwrap(), "--out", rep.to_str().unwrap()])), 2);
}
