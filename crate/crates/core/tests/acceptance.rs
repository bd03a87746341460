//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! cargo test --release --test acceptance
//! ACCEPTANCE_ONLY=1,2,3 cargo test --release --test acceptance

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{max_abs_diff, normal, random_gneiting, random_kernel, random_panel, rng};
use gpcausal::causal::{pretreatment_fit, CounterfactualDraws};
use gpcausal::diagnostics::{modified_band_depth, modified_band_depth_brute, separability_function};
use gpcausal::gp::{condition_normal, Likelihood};
use gpcausal::kernels::{
    assemble, ensure_psd, gneiting_at, k_time_rbf, k_unit_rbf, Geometry, Gneiting, KernelFamily, KernelParams, KernelTable,
    RbfRbf,
};
use gpcausal::linalg::{asymmetry, kron, min_eigenvalue, KroneckerEigen};
use gpcausal::mcmc::{rhat, run_mcmc, FitSpec, HyperMove, PriorSpec, SamplerConfig};
use gpcausal::panel::Cell;
use gpcausal::simlab::{
    generate, pipeline_dgp, run_study, study_config, DgpLikelihood, DgpSpec, StudyResult, DESK, DGP_SIGMA2,
};
use gpcausal::weights::{donor_weights, kriging_predict};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::Value;

type Outcome = (bool, String);

const FAMILIES: [KernelFamily; 3] = [KernelFamily::IcmRbf, KernelFamily::RbfRbf, KernelFamily::Gneiting];

fn desk_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig { chains: 4, iters: 400, burn_in: 200, seed, ..SamplerConfig::default() }
}

// ---------------------------------------------------------------- 1

struct Blocks {
    y: DVector<f64>,
    k_o: DMatrix<f64>,
    k_mo: DMatrix<f64>,
    k_m: DMatrix<f64>,
    s2: f64,
}

fn blocks(seed: u64, family: KernelFamily) -> Blocks {
    let mut r = rng(seed);
    let n = 2 + (seed % 3) as usize;
    let t_n = 2 + (seed % 2) as usize;
    let panel = random_panel(&mut r, n, t_n, 1, t_n);
    let params = random_kernel(&mut r, family, n);
    let table = KernelTable::new(&Geometry::from_panel(&panel), &params).unwrap();
    let part = panel.partition();
    Blocks {
        y: DVector::from_iterator(part.obs.len(), part.obs.iter().map(|&c| panel.y_at(c))),
        k_o: table.square(&part.obs),
        k_mo: table.block(&part.mis, &part.obs),
        k_m: table.square(&part.mis),
        s2: 0.05 + (seed % 7) as f64 * 0.1,
    }
}

fn exact_algebra() -> Outcome {
    let start = Instant::now();
    let (mut cond, mut krig, mut wy) = (0f64, 0f64, 0f64);
    for seed in 0..20 {
        let b = blocks(seed, FAMILIES[seed as usize % 3]);
        assert!(b.k_o.nrows() + b.k_m.nrows() <= 12);
        let post = condition_normal(&b.y, &b.k_o, &b.k_mo, &b.k_m, b.s2).unwrap();
        let inv = (&b.k_o + DMatrix::identity(b.k_o.nrows(), b.k_o.nrows()) * b.s2).try_inverse().unwrap();
        let mu = &b.k_mo * &inv * &b.y;
        let sigma = &b.k_m - &b.k_mo * &inv * b.k_mo.transpose();
        cond = cond.max((&post.mu - &mu).amax()).max(max_abs_diff(&post.sigma, &sigma));
        let k = kriging_predict(&b.k_mo, &b.k_o, b.s2, &b.y).unwrap();
        krig = krig.max((&post.mu - &k).amax());
        let w = donor_weights(&b.k_mo, &b.k_o, b.s2).unwrap();
        wy = wy.max((&w * &b.y - &k).amax());
    }

    let mut kronecker = 0f64;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let (n, t_n) = (2 + (seed % 5) as usize, 2 + (seed % 6) as usize);
        let panel = random_panel(&mut r, n, t_n, 1, t_n);
        let params = random_kernel(&mut r, KernelFamily::RbfRbf, n);
        let KernelTable::Separable { unit, time } = KernelTable::new(&Geometry::from_panel(&panel), &params).unwrap() else {
            unreachable!()
        };
        let s2 = 0.01 + r.random::<f64>();
        let eig = KroneckerEigen::new(&unit, &time).unwrap();
        let x = DVector::from_fn(n * t_n, |_, _| normal(&mut r));
        let dense = kron(&unit, &time) + DMatrix::identity(n * t_n, n * t_n) * s2;
        let chol = dense.cholesky().unwrap();
        let ld: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        kronecker = kronecker
            .max((eig.solve(s2, &x).unwrap() - chol.solve(&x)).amax())
            .max((eig.log_det(s2) - ld).abs() / ld.abs().max(1.0));
    }

    let mut sep = 0f64;
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let g = Gneiting { eta: 0.0, ..random_gneiting(&mut r) };
        let panel = random_panel(&mut r, 4, 5, 1, 5);
        let cells: Vec<Cell> = (0..20).map(|k| panel.cell(k)).collect();
        let k = KernelTable::new(&Geometry::from_panel(&panel), &KernelParams::Gneiting(g)).unwrap().square(&cells);
        for a in &cells {
            for b in &cells {
                let d = panel.distance(a.unit, b.unit);
                let want = g.tau2 * (-(d * d).powf(g.gamma) / g.l_s).exp();
                sep = sep.max((k[(panel.index(*a), panel.index(*b))] - want).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = cond < 1e-10 && krig < 1e-10 && wy < 1e-8 && kronecker < 1e-8 && sep < 1e-12 && secs < 10.0;
    (
        ok,
        format!(
            "condition_normal {cond:.1e} (<1e-10), kriging {krig:.1e} (<1e-10), W·y {wy:.1e} (<1e-8), \
             kronecker {kronecker:.1e} (<1e-8), eta=0 {sep:.1e} (<1e-12), {secs:.1}s (<10s)"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn kernel_properties() -> Outcome {
    let start = Instant::now();
    let (mut asym, mut min_eig) = (0f64, f64::INFINITY);
    for family in FAMILIES {
        let mut r = rng(family as u64 + 300);
        for draw in 0..50 {
            let n = r.random_range(2..=20);
            let t_n = r.random_range(2..=(200 / n).min(10));
            let panel = random_panel(&mut r, n, t_n, 1, t_n);
            let params = random_kernel(&mut r, family, n);
            let cells: Vec<Cell> = (0..n * t_n).filter(|k| draw % 2 == 0 || k % 3 != 1).map(|k| panel.cell(k)).collect();
            let dense = ensure_psd(assemble(&panel, &params, &cells).unwrap()).unwrap().to_dense();
            asym = asym.max(asymmetry(&dense));
            min_eig = min_eig.min(min_eigenvalue(&dense));
        }
    }

    let mut decay = true;
    let p = RbfRbf { tau2: 1.3, l_s: 0.4, l_t: 2.0 };
    let space: Vec<f64> = (0..50).map(|s| p.tau2 * k_unit_rbf([0.0, 0.0], [s as f64 * 0.05, 0.0], p.l_s)).collect();
    let time: Vec<f64> = (0..20).map(|u| k_time_rbf(0.0, u as f64, p.l_t)).collect();
    decay &= space.windows(2).all(|w| w[1] < w[0]) && time.windows(2).all(|w| w[1] < w[0]);
    let mut r = rng(7);
    for _ in 0..50 {
        let g = random_gneiting(&mut r);
        for u in 0..10 {
            let v: Vec<f64> = (0..40).map(|s| gneiting_at(&g, (s as f64 * 0.05).powi(2), u as f64)).collect();
            decay &= v.windows(2).all(|w| w[1] < w[0] || (w[1] == 0.0 && w[0] == 0.0));
        }
        if g.eta > 0.0 {
            let v: Vec<f64> = (0..20).map(|u| gneiting_at(&g, 0.0, u as f64)).collect();
            decay &= v.windows(2).all(|w| w[1] < w[0]);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = asym == 0.0 && min_eig >= -1e-8 && decay && secs < 30.0;
    (
        ok,
        format!("max asymmetry {asym:.1e} (=0), min eigenvalue {min_eig:.2e} (>=-1e-8), decay {decay}, {secs:.1}s (<30s)"),
    )
}

// ---------------------------------------------------------------- 3

fn separability() -> Outcome {
    let h: Vec<f64> = (1..=10).map(|k| k as f64 * 0.15).collect();
    let u: Vec<f64> = (1..=14).map(f64::from).collect();
    let mut r = rng(31);
    let (mut zero, mut inv) = (0f64, true);
    for _ in 0..20 {
        let g = random_gneiting(&mut r);
        let flat = separability_function(&Gneiting { eta: 0.0, ..g }, &h, &u).unwrap();
        zero = zero.max(flat.curves.iter().flatten().fold(0.0, |m, v| m.max(v.abs())));
        let a = separability_function(&g, &h, &u).unwrap();
        let b = separability_function(&Gneiting { tau2: g.tau2 * 41.0, ..g }, &h, &u).unwrap();
        inv &= a.curves == b.curves;
    }
    let mut mbd = 0f64;
    for seed in 0..10 {
        let mut r = rng(400 + seed);
        let (n, m) = (r.random_range(3..25), r.random_range(1..15));
        let curves: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let v: f64 = r.random_range(-1.0..1.0);
                        if seed % 2 == 1 { (3.0 * v).round() } else { v }
                    })
                    .collect()
            })
            .collect();
        let fast = modified_band_depth(&curves).unwrap();
        let slow = modified_band_depth_brute(&curves).unwrap();
        mbd = fast.iter().zip(&slow).fold(mbd, |m, (a, b)| m.max((a - b).abs()));
    }
    let ok = zero < 1e-14 && mbd < 1e-12 && inv;
    (ok, format!("eta=0 max |f_h(u)| {zero:.1e} (<1e-14), MBD fast vs brute {mbd:.1e} (<1e-12), tau2 invariance exact {inv}"))
}

// ---------------------------------------------------------------- 4, 5

fn mse(res: &StudyResult, dgp: &str, k: KernelFamily) -> f64 {
    res.get(dgp, k).map_or(f64::NAN, |a| a.mse)
}

fn normal_study() -> Outcome {
    let start = Instant::now();
    let cfg = study_config(DESK, DgpLikelihood::Normal { sigma2: DGP_SIGMA2 }, 20, desk_sampler(4_000));
    let res = run_study(&cfg).unwrap();
    for a in res.aggregate() {
        println!(
            "    normal  dgp {:8} fit {:8} bias {:7.2}% mse {:8.4} cover {:.3} ok {}",
            a.dgp,
            a.fit_kernel.label(),
            a.percent_bias,
            a.mse,
            a.coverage,
            a.n_ok
        );
    }
    let g = KernelFamily::Gneiting;
    let (mse_g, mse_icm) = (mse(&res, "Gneiting", g), mse(&res, "Gneiting", KernelFamily::IcmRbf));
    let per_rep = res.replicates("Gneiting", g);
    let per_icm = res.replicates("Gneiting", KernelFamily::IcmRbf);
    let wins = per_rep
        .iter()
        .zip(&per_icm)
        .filter(|(a, b)| matches!((a, b), (Some(a), Some(b)) if a.mse < b.mse))
        .count();
    let win_share = wins as f64 / per_rep.len() as f64;
    let bias_g = res.get("RBF", g).map_or(f64::NAN, |a| a.percent_bias);
    let bias_rbf = res.get("RBF", KernelFamily::RbfRbf).map_or(f64::NAN, |a| a.percent_bias);
    let cover: Vec<f64> = [("ICM", KernelFamily::IcmRbf), ("RBF", KernelFamily::RbfRbf), ("Gneiting", g)]
        .iter()
        .map(|(d, k)| res.get(d, *k).map_or(f64::NAN, |a| a.coverage))
        .collect();
    let ok = mse_g < mse_icm && win_share >= 0.70 && bias_g <= bias_rbf + 2.0 && cover.iter().all(|&c| c >= 0.90);
    (
        ok,
        format!(
            "Gneiting DGP mse {mse_g:.4} < ICM {mse_icm:.4}, wins {wins}/20 (>=70%); RBF DGP bias Gneiting {bias_g:.2} \
             <= RBF {bias_rbf:.2} + 2; correct-kernel coverage {:.3}/{:.3}/{:.3} (>=0.90); {:.0}s",
            cover[0],
            cover[1],
            cover[2],
            start.elapsed().as_secs_f64()
        ),
    )
}

fn poisson_study() -> Outcome {
    let start = Instant::now();
    let mut cfg = study_config(DESK, DgpLikelihood::Poisson, 20, desk_sampler(5_000));
    // Only the ordering under the Gneiting DGP is checked.
    cfg.dgps.retain(|d| d.name == "Gneiting");
    let res = run_study(&cfg).unwrap();
    for a in res.aggregate() {
        println!(
            "    poisson dgp {:8} fit {:8} bias {:7.2}% mse {:10.2} cover {:.3} ok {}",
            a.dgp,
            a.fit_kernel.label(),
            a.percent_bias,
            a.mse,
            a.coverage,
            a.n_ok
        );
    }
    let m: Vec<f64> = FAMILIES.iter().map(|&k| mse(&res, "Gneiting", k)).collect();
    let ok = m[2] < m[0] && m[2] < m[1];
    (
        ok,
        format!(
            "Gneiting DGP mse: Gneiting {:.2} < RBF {:.2} and ICM {:.2}; {:.0}s",
            m[2],
            m[1],
            m[0],
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn toy(seed: u64) -> DgpSpec {
    DgpSpec {
        n_x: 3,
        n_y: 3,
        n_times: 8,
        n_treated: 2,
        t_star: 6,
        treated: None,
        kernel: KernelParams::RbfRbf(RbfRbf { tau2: 1.0, l_s: 0.5, l_t: 1.5 }),
        likelihood: DgpLikelihood::Normal { sigma2: 0.1 },
        mu0: 1.0,
        seed,
        offsets: None,
        unit_effect_sd: 0.0,
    }
}

fn mcmc_diagnostics() -> Outcome {
    let mut r = rng(61);
    let iid: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| normal(&mut r)).collect()).collect();
    let iid_rhat = rhat(&iid).unwrap();

    let mut converged = 0;
    let mut determinism = true;
    for s in 0..20u64 {
        let data = generate(&toy(600 + s)).unwrap();
        let sampler = SamplerConfig {
            iters: 1000,
            burn_in: 500,
            seed: 700 + s,
            hyper_move: HyperMove::Slice,
            ..SamplerConfig::default()
        };
        let spec = FitSpec::new(KernelFamily::RbfRbf, Likelihood::Normal { sigma2: 1.0 }, sampler);
        let fit = run_mcmc(&data.panel, &spec).unwrap();
        let worst = fit.rhat_report().unwrap().iter().map(|e| e.rhat).fold(0.0, f64::max);
        converged += usize::from(worst < 1.05);
        if s == 0 {
            determinism &= run_mcmc(&data.panel, &spec).unwrap() == fit;
        }
    }
    // Non-Gaussian and ICM paths replay too.
    for family in FAMILIES {
        let d = generate(&DgpSpec { likelihood: DgpLikelihood::Poisson, ..toy(9) }).unwrap();
        let spec = FitSpec::new(family, Likelihood::Poisson, SamplerConfig { chains: 2, iters: 60, burn_in: 30, seed: 3, ..SamplerConfig::default() });
        determinism &= run_mcmc(&d.panel, &spec).unwrap() == run_mcmc(&d.panel, &spec).unwrap();
    }
    let ok = (0.99..=1.01).contains(&iid_rhat) && converged >= 18 && determinism;
    (
        ok,
        format!("iid R-hat {iid_rhat:.4} (in [0.99, 1.01]); toy fits with max R-hat < 1.05: {converged}/20 (>=18); bit-exact replay {determinism}"),
    )
}

// ---------------------------------------------------------------- 7, 8

fn pipeline() -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    let mut counts = Vec::new();
    for s in 0..10u64 {
        let data = generate(&pipeline_dgp(s)).unwrap();
        let mut spec = FitSpec::new(KernelFamily::Gneiting, Likelihood::Poisson, desk_sampler(500 + s));
        spec.priors = PriorSpec::simulation();
        spec.pretreatment = true;
        let fit = run_mcmc(&data.panel, &spec).unwrap();
        let pre = pretreatment_fit(&data.panel, &CounterfactualDraws::pretreatment_from_chains(&fit).unwrap(), true).unwrap();
        counts.push(pre.periods_covering_zero);
        good += usize::from(pre.periods_covering_zero >= 8);
    }
    let cli = cli_pipeline(Path::new(&std::env::temp_dir()).join(format!("gpcausal-acceptance-{}", std::process::id())).as_path());
    let ok = good >= 8 && cli.is_ok();
    (
        ok,
        format!(
            "pre periods covering 0 per seed {counts:?}; seeds with >=8/9: {good}/10 (>=8); CLI simulate->fit->att->diagnose {}; {:.0}s",
            cli.as_ref().map_or_else(|e| format!("failed: {e}"), |_| "ok".into()),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn gp(args: &[&str]) -> i32 {
    let mut v = vec!["gpcausal"];
    v.extend_from_slice(args);
    gpcausal::cli::run(v)
}

fn cli_pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let cfg = r#"{"kernel": "gneiting", "likelihood": "poisson", "priors": "simulation",
                  "sampler": {"chains": 2, "iters": 200, "burn_in": 100, "seed": 1}, "pretreatment": true}"#;
    fs::write(root.join("fit.json"), cfg).map_err(|e| e.to_string())?;
    let steps: [(&str, Vec<String>); 4] = [
        ("simulate", vec!["simulate".into(), "--preset".into(), "pipeline".into(), "--seed".into(), "1".into(), "--out".into(), p("sim")]),
        (
            "fit",
            ["fit", "--panel", &p("sim/panel_rbf_offsets.csv"), "--config", &p("fit.json"), "--unit-fixed-effects", "--out", &p("fit")]
                .map(String::from)
                .to_vec(),
        ),
        ("att", ["att", "--fit", &p("fit"), "--rate-scale", "--out", &p("att")].map(String::from).to_vec()),
        ("diagnose", ["diagnose", "--fit", &p("fit"), "--out", &p("diag")].map(String::from).to_vec()),
    ];
    for (name, args) in &steps {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let code = gp(&a);
        if code != 0 {
            return Err(format!("{name} exited {code}"));
        }
    }
    let out = schema(root);
    let _ = fs::remove_dir_all(root);
    out
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn header(path: &Path) -> Result<Vec<String>, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    Ok(rd.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect())
}

fn schema(root: &Path) -> Result<(), String> {
    let expect = |cond: bool, what: &str| if cond { Ok(()) } else { Err(format!("schema: {what}")) };
    let att = read_json(&root.join("att/att.json"))?;
    for k in ["median", "lo", "hi"] {
        expect(att["att"][k].is_number(), "att.json att interval")?;
    }
    expect(att["att_by_time"].as_array().is_some_and(|a| a.len() == 10), "att.json att_by_time rows")?;
    expect(att["pretreatment"]["periods_covering_zero"].is_number(), "att.json pretreatment")?;
    expect(header(&root.join("att/att_by_time.csv"))? == ["time", "period", "n_cells", "median", "lo", "hi"], "att_by_time.csv")?;
    expect(header(&root.join("fit/draws.csv"))? == ["chain", "iter", "name", "value"], "draws.csv")?;
    expect(read_json(&root.join("fit/rhat.json"))?.as_array().is_some_and(|a| !a.is_empty()), "rhat.json")?;
    let v = read_json(&root.join("diag/verdict.json"))?;
    expect(v["verdict"] == "near-separable" || v["verdict"] == "nonseparable", "verdict.json")?;
    expect(header(&root.join("diag/boxplot_band.csv"))? == ["u", "median", "lo50", "hi50"], "boxplot_band.csv")?;
    for dir in ["sim", "fit", "att", "diag"] {
        let m = read_json(&root.join(dir).join("manifest.json"))?;
        expect(m["cell_order"] == "unit-major" && m["artifacts"].as_array().is_some_and(|a| !a.is_empty()), "manifest")?;
    }
    Ok(())
}

fn application_schema() -> Outcome {
    // The application data are not public; the CLI artifacts produced in
    // criterion 7 carry the same report schema, rerun here standalone.
    let root = std::env::temp_dir().join(format!("gpcausal-schema-{}", std::process::id()));
    match cli_pipeline(&root) {
        Ok(()) => (true, "att.json, att_by_time.csv, draws.csv, rhat.json, verdict.json, boxplot_band.csv, manifests".into()),
        Err(e) => (false, e),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "exact algebra", exact_algebra),
        (2, "kernel properties", kernel_properties),
        (3, "separability diagnostics", separability),
        (4, "desk Normal study", normal_study),
        (5, "desk Poisson study", poisson_study),
        (6, "MCMC diagnostics", mcmc_diagnostics),
        (7, "end-to-end pipeline", pipeline),
        (8, "report schema", application_schema),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let (ok, detail) = f();
        failed += usize::from(!ok);
        println!("criterion {n} {name}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
