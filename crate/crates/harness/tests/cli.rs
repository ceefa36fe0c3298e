use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hrshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrshift")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CONFIG: &str = r#"{
  "schema": "hrshift-config/1",
  "seed": 5,
  "known_cp": {"n_subjects": 3},
  "unknown_cp": {"n_subjects": 2, "pool_size": 10}
}"#;

#[test]
fn simulated_known_subject_can_be_fitted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let sim = dir.path().join("known");
    let out = hrshift(&["simulate", "--config", p(&cfg), "--scenario", "known", "--out", p(&sim), "--row", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&sim.join("manifest.json"));
    assert_eq!(manifest["subjects"].as_array().unwrap().len(), 3);
    let dt = manifest["basis_dt"].as_f64().unwrap().to_string();

    let fit = dir.path().join("fit.json");
    let out = hrshift(&[
        "fit-subject",
        "--series",
        p(&sim.join("subject000.csv")),
        "--meta",
        p(&sim.join("subject000.json")),
        "--onsets",
        p(&sim.join("subject000_onsets.csv")),
        "--basis",
        p(&sim.join("basis.csv")),
        "--dt",
        &dt,
        "--cps",
        p(&sim.join("subject000_cps.json")),
        "--mc-iters",
        "200",
        "--out",
        p(&fit),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&fit);
    // Two conditions, each split once.
    assert_eq!(report["blocks"].as_array().unwrap().len(), 4);
}

#[test]
fn simulated_unknown_subject_selection_and_posi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let sim = dir.path().join("unknown");
    let out = hrshift(&["simulate", "--config", p(&cfg), "--scenario", "unknown", "--out", p(&sim), "--row", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&sim.join("manifest.json"));
    let sigma2 = manifest["subjects"][0]["sigma2"].as_f64().unwrap().to_string();
    let series = |extra: &[&str], out: &Path| {
        let mut args = vec![
            "--series".to_string(),
            p(&sim.join("subject000.csv")).into(),
            "--meta".into(),
            p(&sim.join("subject000.json")).into(),
            "--onsets".into(),
            p(&sim.join("onsets.csv")).into(),
            "--candidates".into(),
            p(&sim.join("subject000_candidates.json")).into(),
            "--rho".into(),
            "0.2".into(),
            "--sigma2".into(),
            sigma2.clone(),
            "--out".into(),
            p(out).into(),
        ];
        args.splice(0..0, extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        hrshift(&refs)
    };
    let sel = dir.path().join("select.json");
    let out = series(&["select-cp"], &sel);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&sel);
    let logliks = report["logliks"].as_array().unwrap();
    let best = report["selected"].as_u64().unwrap() as usize;
    assert!(logliks.iter().all(|l| l.as_f64().unwrap() <= logliks[best].as_f64().unwrap()));

    let posi = dir.path().join("posi.json");
    let out = series(&["posi", "--condition", "c1", "--d", "200", "--seed", "3"], &posi);
    let report = json(&posi);
    match code(&out) {
        0 => assert!(report["variance"].as_f64().unwrap() > 0.0),
        4 => assert!(report["failure"].is_string()),
        c => panic!("exit {c}: {}", String::from_utf8_lossy(&out.stderr)),
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema": "hrshift-config/0", "seed": 1}"#).unwrap();
    let out = hrshift(&["pipeline-known", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));

    let missing = dir.path().join("missing.csv");
    let out = hrshift(&["group-test", "--input", p(&missing)]);
    assert_eq!(code(&out), 3);

    let ragged = dir.path().join("group.csv");
    std::fs::write(&ragged, "gamma,v\n1.0,-0.5\n2.0,0.1\n").unwrap();
    let out = hrshift(&["group-test", "--input", p(&ragged)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn group_mt_and_blc_commands() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("group.csv");
    std::fs::write(&g, "gamma,v\n0.9,0.1\n1.2,0.2\n0.7,0.15\n1.1,0.1\n1.4,0.3\n").unwrap();
    let res = dir.path().join("group.json");
    assert_eq!(code(&hrshift(&["group-test", "--input", p(&g), "--out", p(&res)])), 0);
    let r = json(&res);
    assert!(r["p_kh"].as_f64().unwrap() < 0.05 && r["eta"].as_f64().unwrap() > 0.8);

    let leaves = dir.path().join("leaves.json");
    std::fs::write(
        &leaves,
        r#"[{"path": "a/x", "p": 0.001}, {"path": "a/y", "p": 0.4}, {"path": "b/x", "p": 0.6}, {"path": "b/y", "p": 0.9}]"#,
    )
    .unwrap();
    let adj = dir.path().join("adj.json");
    assert_eq!(code(&hrshift(&["mt-adjust", "--input", p(&leaves), "--procedure", "inheritance", "--out", p(&adj)])), 0);
    let text = std::fs::read_to_string(&adj).unwrap();
    assert!(text.contains("a/x"));

    let trials = dir.path().join("trials.csv");
    let mut csv = String::from("subject,trial,answer,feedback\n");
    for t in 1..=40 {
        csv.push_str(&format!("s1,{t},{},{}\n", u8::from(t % 3 == 0), u8::from(t > 5)));
    }
    std::fs::write(&trials, csv).unwrap();
    let curve = dir.path().join("curve.csv");
    assert_eq!(code(&hrshift(&["blc", "--input", p(&trials), "--out", p(&curve)])), 0);
    assert!(std::fs::read_to_string(&curve).unwrap().lines().count() > 2);
}
