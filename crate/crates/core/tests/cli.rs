use std::fs;
use std::path::Path;
use std::process::Command;

use gpcausal::cli::run;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn gp(args: &[&str]) -> i32 {
    let mut v = vec!["gpcausal"];
    v.extend_from_slice(args);
    run(v)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let mut out = vec![rd.headers().unwrap().iter().map(String::from).collect()];
    for r in rd.records() {
        out.push(r.unwrap().iter().map(String::from).collect());
    }
    out
}

fn check_manifest(dir: &Path, command: &str) {
    let m = read_json(&dir.join("manifest.json"));
    assert_eq!(m["command"], command);
    assert_eq!(m["cell_order"], "unit-major");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let arts = m["artifacts"].as_array().unwrap();
    assert!(!arts.is_empty());
    for a in arts {
        let bytes = fs::read(dir.join(a["path"].as_str().unwrap())).unwrap();
        let h: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(a["sha256"], h.as_str());
    }
}

#[test]
fn simulate_fit_att_weights_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();

    assert_eq!(gp(&["simulate", "--preset", "pipeline", "--seed", "3", "--out", &p("sim")]), 0);
    check_manifest(&root.join("sim"), "simulate");
    let panel = p("sim/panel_rbf_offsets.csv");
    assert!(Path::new(&panel).exists());
    assert!(root.join("sim/truth_rbf_offsets.csv").exists());

    // Identical seeds give identical files.
    assert_eq!(gp(&["simulate", "--preset", "pipeline", "--seed", "3", "--out", &p("sim2")]), 0);
    assert_eq!(fs::read(&panel).unwrap(), fs::read(root.join("sim2/panel_rbf_offsets.csv")).unwrap());

    let cfg = r#"{"kernel": "gneiting", "likelihood": "poisson", "priors": "simulation",
                  "sampler": {"chains": 2, "iters": 60, "burn_in": 30, "seed": 5}, "pretreatment": true}"#;
    fs::write(root.join("fit.json"), cfg).unwrap();
    assert_eq!(gp(&["fit", "--panel", &panel, "--config", &p("fit.json"), "--unit-fixed-effects", "--out", &p("fit")]), 0);
    check_manifest(&root.join("fit"), "fit");
    let rh = read_json(&root.join("fit/rhat.json"));
    assert!(rh.as_array().unwrap().iter().any(|e| e["name"] == "delta[2]"));
    let draws = csv_rows(&root.join("fit/draws.csv"));
    assert_eq!(draws[0], ["chain", "iter", "name", "value"]);
    // The report adds the mean counterfactual to the sampled parameters.
    assert_eq!(draws.len(), 1 + 2 * 30 * (rh.as_array().unwrap().len() - 1));

    assert_eq!(gp(&["att", "--fit", &p("fit"), "--rate-scale", "--out", &p("att")]), 0);
    check_manifest(&root.join("att"), "att");
    let att = read_json(&root.join("att/att.json"));
    for k in ["median", "lo", "hi"] {
        assert!(att["att"][k].is_number());
    }
    assert_eq!(att["rate_scale"], true);
    let rows = att["att_by_time"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r["period"] == "pre").count(), 9);
    assert!(att["pretreatment"]["periods_covering_zero"].is_number());
    assert_eq!(csv_rows(&root.join("att/att_by_time.csv"))[0], ["time", "period", "n_cells", "median", "lo", "hi"]);

    assert_eq!(gp(&["weights", "--fit", &p("fit"), "--out", &p("w")]), 0);
    check_manifest(&root.join("w"), "weights");
    let w = csv_rows(&root.join("w/weights.csv"));
    assert_eq!(w[0], ["target_unit", "target_time", "donor_unit", "donor_time", "weight"]);
    // 8 treated cells at T = 10 against 242 donors.
    assert_eq!(w.len() - 1, 8 * 242);

    assert_eq!(gp(&["diagnose", "--fit", &p("fit"), "--draw-curves", "10", "--out", &p("diag")]), 0);
    check_manifest(&root.join("diag"), "diagnose");
    let v = read_json(&root.join("diag/verdict.json"));
    assert!(v["verdict"] == "near-separable" || v["verdict"] == "nonseparable");
    assert_eq!(v["threshold"], 0.05);
    let near = v["eta"]["median"].as_f64().unwrap() < 0.05;
    assert_eq!(near, v["verdict"] == "near-separable");
    assert_eq!(csv_rows(&root.join("diag/boxplot_band.csv"))[0], ["u", "median", "lo50", "hi50"]);
    assert_eq!(csv_rows(&root.join("diag/boxplot_curves.csv"))[0], ["curve_id", "h", "u", "value", "is_outlier"]);
}

#[test]
fn explicit_kernel_weights_and_separable_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    assert_eq!(gp(&["simulate", "--preset", "desk", "--out", &p("sim")]), 0);
    fs::write(root.join("k.json"), r#"{"kernel": "rbf_rbf", "tau2": 1.0, "l_s": 0.3, "l_t": 0.9}"#).unwrap();
    let panel = csv_rows(&root.join("sim/panel_rbf.csv"));
    let header = &panel[0];
    let ti = header.iter().position(|h| h == "treated").unwrap();
    let ui = header.iter().position(|h| h == "unit_id").unwrap();
    let treated: Vec<&String> = panel[1..].iter().filter(|r| r[ti] == "1").map(|r| &r[ui]).collect();
    let target = treated[0].clone();
    let control = (1..=25).map(|u| u.to_string()).find(|u| !treated.contains(&u)).unwrap();
    let code = gp(&[
        "weights", "--panel", &p("sim/panel_rbf.csv"), "--kernel", &p("k.json"), "--sigma2", "0.05", "--target-unit", &control,
        "--out", &p("w"),
    ]);
    assert_eq!(code, 2, "control units have no counterfactual cells");
    let code = gp(&[
        "weights", "--panel", &p("sim/panel_rbf.csv"), "--kernel", &p("k.json"), "--sigma2", "0.05", "--target-unit", &target,
        "--out", &p("w"),
    ]);
    assert_eq!(code, 0);
    let sep = read_json(&root.join("w/separable_weights.json"));
    assert!(sep["max_abs_deviation"].is_number());
    assert_eq!(sep["full"].as_array().unwrap().len(), 25);
    let unit_map = csv_rows(&root.join(format!("w/unit_map_u{target}.csv")));
    assert_eq!(unit_map.len(), 26);
    assert!(root.join(format!("w/time_map_u{target}_t12.csv")).exists());
}

#[test]
fn usage_and_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x").to_string_lossy().into_owned();
    assert_eq!(gp(&["fit", "--panel", "missing.csv", "--kernel", "matern", "--out", &out]), 2);
    assert_eq!(gp(&["bogus"]), 2);
    assert_eq!(gp(&["simulate", "--preset", "nope", "--out", &out]), 2);
    assert_eq!(gp(&["att", "--fit", &out, "--out", &out]), 2);
    assert_eq!(gp(&["simulate", "--jobs", "0", "--out", &out]), 2);

    let bin = env!("CARGO_BIN_EXE_gpcausal");
    let status = Command::new(bin).args(["fit", "--panel", "p.csv", "--kernel", "matern"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(bin).arg("--help").status().unwrap();
    assert_eq!(status.code(), Some(0));
}
