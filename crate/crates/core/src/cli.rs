//! Command-line interface: `simulate`, `study`, `fit`, `att`, `weights` and
//! `diagnose`, handing off through files in an output directory.
//!
//! Every run writes `manifest.json` with the config hash, seed and the
//! SHA-256 of each artifact. Files are written to a temporary name and
//! renamed into place.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::{att_draws, pretreatment_fit, AttReport, CounterfactualDraws};
use crate::diagnostics::{self, default_grids, estimate_fhat, functional_boxplot, posterior_curves};
use crate::error::{Error, Result};
use crate::gp::Likelihood;
use crate::kernels::{Geometry, Gneiting, KernelFamily, KernelParams, KernelTable, RbfRbf};
use crate::mcmc::{run_mcmc, ChainSet, FitSpec, PriorSpec, SamplerConfig};
use crate::panel::{load_panel, write_panel, Cell, PanelData, PanelSchema};
use crate::simlab::{self, StudyConfig};
use crate::weights::{donor_weights_separable, panel_donor_weights, weight_summaries};

#[derive(Parser, Debug)]
#[command(name = "gpcausal", version, about = "Gaussian-process counterfactuals for panel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for chains and replicates.
    #[arg(long)]
    jobs: Option<usize>,
    /// Named built-in configuration.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one panel per DGP with its counterfactual truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replicate index to emit (1-based).
        #[arg(long, default_value_t = 1)]
        replicate: usize,
    },
    /// Run a full simulation study.
    Study {
        #[command(flatten)]
        common: Common,
        /// Override the number of replicates.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Fit a GP model to a panel CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: PathBuf,
        /// Kernel family: icm, rbf or gneiting.
        #[arg(long)]
        kernel: Option<String>,
        /// Likelihood: normal, poisson or bernoulli.
        #[arg(long)]
        likelihood: Option<String>,
        /// Include unit fixed effects in the mean.
        #[arg(long)]
        unit_fixed_effects: bool,
    },
    /// ATT summaries from a fit directory.
    Att {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
        /// Report effects per 100,000 exposure.
        #[arg(long)]
        rate_scale: bool,
    },
    /// Donor weights from a fit directory or an explicit kernel.
    Weights {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Panel CSV (needed with --kernel).
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Kernel parameter JSON.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        sigma2: f64,
        /// Target unit for the summary maps (1-based; default first treated).
        #[arg(long)]
        target_unit: Option<usize>,
    },
    /// Separability diagnostics from a Gneiting fit.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
        /// Also use the curves of every n-th draw as boxplot observations.
        #[arg(long)]
        draw_curves: Option<usize>,
    },
}

/// Fit configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub kernel: KernelFamily,
    pub likelihood: String,
    /// `"simulation"`, `"application"`, or a full prior object.
    pub priors: serde_json::Value,
    pub sampler: SamplerConfig,
    pub rank_j: Option<usize>,
    pub pretreatment: bool,
    pub schema: PanelSchema,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kernel: KernelFamily::Gneiting,
            likelihood: "normal".into(),
            priors: serde_json::Value::String("simulation".into()),
            sampler: SamplerConfig::default(),
            rank_j: None,
            pretreatment: true,
            schema: PanelSchema::default(),
        }
    }
}

impl FitConfig {
    fn prior_spec(&self) -> Result<PriorSpec> {
        match &self.priors {
            serde_json::Value::String(s) if s == "simulation" => Ok(PriorSpec::simulation()),
            serde_json::Value::String(s) if s == "application" => Ok(PriorSpec::application(self.kernel)),
            serde_json::Value::String(s) => Err(Error::Config(format!("unknown prior set \"{s}\""))),
            v => Ok(serde_json::from_value(v.clone())?),
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let jobs = match &cli.command {
        Command::Simulate { common, .. }
        | Command::Study { common, .. }
        | Command::Fit { common, .. }
        | Command::Att { common, .. }
        | Command::Weights { common, .. }
        | Command::Diagnose { common, .. } => common.jobs,
    };
    match jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| execute(cli.command))
        }
        None => execute(cli.command),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { common, replicate } => cmd_simulate(&common, replicate),
        Command::Study { common, replicates } => cmd_study(&common, replicates),
        Command::Fit {
            common,
            panel,
            kernel,
            likelihood,
            unit_fixed_effects,
        } => cmd_fit(&common, &panel, kernel.as_deref(), likelihood.as_deref(), unit_fixed_effects),
        Command::Att { common, fit, rate_scale } => cmd_att(&common, &fit, rate_scale),
        Command::Weights {
            common,
            fit,
            panel,
            kernel,
            sigma2,
            target_unit,
        } => cmd_weights(&common, fit.as_deref(), panel.as_deref(), kernel.as_deref(), sigma2, target_unit),
        Command::Diagnose { common, fit, draw_curves } => cmd_diagnose(&common, &fit, draw_curves),
    }
}

/// Collects artifacts and writes them atomically, then the manifest.
struct Output {
    dir: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        self.artifacts.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn with<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&mut self, name: &str, f: F) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn finish(mut self, command: &str, config: &serde_json::Value, seed: Option<u64>) -> Result<()> {
        let config_bytes = serde_json::to_vec(config)?;
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": hex(&Sha256::digest(&config_bytes)),
            "config": config,
            "seed": seed,
            "cell_order": "unit-major",
            "artifacts": self.artifacts.iter().map(|(n, h)| serde_json::json!({"path": n, "sha256": h})).collect::<Vec<_>>(),
        });
        let s = serde_json::to_string_pretty(&manifest)? + "\n";
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, s)?;
        fs::rename(tmp, self.dir.join("manifest.json"))?;
        self.artifacts.clear();
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_str(&text)?)
}

fn study_config(common: &Common) -> Result<StudyConfig> {
    let mut cfg = match (&common.preset, &common.config) {
        (Some(_), Some(_)) => return Err(Error::Config("use either --preset or --config, not both".into())),
        (Some(p), None) => simlab::preset(p)?,
        (None, Some(path)) => read_json(path)?,
        (None, None) => simlab::preset("desk")?,
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(common: &Common, replicate: usize) -> Result<()> {
    let cfg = study_config(common)?;
    if replicate == 0 || replicate > cfg.replicates {
        return Err(Error::Config(format!("replicate must lie in 1..={}", cfg.replicates)));
    }
    let mut out = Output::new(&common.out)?;
    for (d, dgp) in cfg.dgps.iter().enumerate() {
        let data = cfg.dataset(d, replicate - 1)?;
        let stem = slug(&dgp.name);
        out.with(&format!("panel_{stem}.csv"), |b| write_panel(&data.panel, None, b))?;
        out.with(&format!("truth_{stem}.csv"), |b| data.write_truth_csv(b))?;
        let mut spec = dgp.spec.clone();
        spec.seed = cfg.data_seed(d, replicate - 1);
        spec.kernel = data.kernel.clone();
        out.json(&format!("dgp_{stem}.json"), &spec)?;
    }
    out.finish("simulate", &serde_json::to_value(&cfg)?, Some(cfg.master_seed))
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn cmd_study(common: &Common, replicates: Option<usize>) -> Result<()> {
    let mut cfg = study_config(common)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
        cfg.validate()?;
    }
    let result = simlab::run_study(&cfg)?;
    let mut out = Output::new(&common.out)?;
    out.with("study.csv", |b| result.write_csv(b))?;
    out.with("table.csv", |b| result.write_table_csv(b))?;
    out.json("aggregate.json", &result.aggregate())?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} fits failed; see study.csv", result.rows.len());
    }
    out.finish("study", &serde_json::to_value(&cfg)?, Some(cfg.master_seed))
}

fn fit_config(common: &Common) -> Result<FitConfig> {
    if common.preset.is_some() {
        return Err(Error::Config("fit does not take --preset".into()));
    }
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(FitConfig::default()),
    }
}

fn cmd_fit(
    common: &Common,
    panel_path: &Path,
    kernel: Option<&str>,
    likelihood: Option<&str>,
    unit_fe: bool,
) -> Result<()> {
    let mut cfg = fit_config(common)?;
    if let Some(k) = kernel {
        cfg.kernel = k.parse()?;
    }
    if let Some(l) = likelihood {
        cfg.likelihood = l.to_string();
    }
    if unit_fe {
        cfg.schema.unit_fixed_effects = true;
    }
    if let Some(s) = common.seed {
        cfg.sampler.seed = s;
    }
    let lik: Likelihood = cfg.likelihood.parse()?;
    let (panel, labels) = load_panel(panel_path, &cfg.schema)?;
    let spec = FitSpec {
        family: cfg.kernel,
        likelihood: lik,
        priors: cfg.prior_spec()?,
        sampler: cfg.sampler.clone(),
        rank_j: cfg.rank_j,
        pretreatment: cfg.pretreatment && panel.t0() > 0,
    };
    let fit = run_mcmc(&panel, &spec)?;
    let report = fit.rhat_report()?;
    for e in report.iter().filter(|e| !e.converged) {
        eprintln!("warning: R-hat for {} is {:.3} (gate 1.05)", e.name, e.rhat);
    }
    let mut out = Output::new(&common.out)?;
    out.with("panel.csv", |b| write_panel(&panel, Some(&labels), b))?;
    out.json("fit.json", &fit)?;
    out.with("draws.csv", |b| fit.write_draws_csv(b))?;
    out.json("rhat.json", &report)?;
    out.json("fit_config.json", &cfg)?;
    out.finish("fit", &serde_json::to_value(&cfg)?, Some(cfg.sampler.seed))
}

/// Panel and chains saved by `fit`.
fn load_fit(dir: &Path) -> Result<(PanelData, ChainSet, FitConfig)> {
    for f in ["panel.csv", "fit.json", "fit_config.json"] {
        if !dir.join(f).exists() {
            return Err(Error::Config(format!(
                "{} is missing {f}; run `gpcausal fit` first",
                dir.display()
            )));
        }
    }
    let cfg: FitConfig = read_json(&dir.join("fit_config.json"))?;
    // The saved panel carries the original labels and time stamps.
    let schema = PanelSchema {
        raw_time_stamps: cfg.schema.raw_time_stamps,
        unit_fixed_effects: cfg.schema.unit_fixed_effects,
        ..PanelSchema::default()
    };
    let (panel, _) = load_panel(dir.join("panel.csv"), &schema)?;
    let fit: ChainSet = read_json(&dir.join("fit.json"))?;
    Ok((panel, fit, cfg))
}

fn cmd_att(common: &Common, dir: &Path, rate_scale: bool) -> Result<()> {
    let (panel, fit, cfg) = load_fit(dir)?;
    let cf = CounterfactualDraws::from_chains(&fit)?;
    let att = att_draws(&panel, &cf, rate_scale)?;
    let pre = if fit.pre_cells.is_empty() {
        None
    } else {
        Some(pretreatment_fit(&panel, &CounterfactualDraws::pretreatment_from_chains(&fit)?, rate_scale)?)
    };
    let report = AttReport::new(&att, pre);
    let mut out = Output::new(&common.out)?;
    out.json("att.json", &report)?;
    out.with("att_by_time.csv", |b| report.write_csv(b))?;
    let config = serde_json::json!({"fit": dir, "rate_scale": rate_scale, "fit_config": cfg});
    out.finish("att", &config, Some(fit.master_seed))
}

/// Posterior-median kernel and noise variance of a fit.
fn median_kernel(fit: &ChainSet) -> Result<(KernelParams, f64)> {
    let m = |name: &str| {
        fit.posterior_median(name)
            .ok_or_else(|| Error::Config(format!("fit has no draws of {name}")))
    };
    let kernel = match fit.family {
        KernelFamily::RbfRbf => KernelParams::RbfRbf(RbfRbf {
            tau2: m("tau2")?,
            l_s: m("l_s")?,
            l_t: m("l_t")?,
        }),
        KernelFamily::Gneiting => KernelParams::Gneiting(Gneiting {
            tau2: m("tau2")?,
            l_s: m("l_s")?,
            l_t: m("l_t")?,
            alpha: m("alpha")?,
            gamma: m("gamma")?,
            eta: m("eta")?,
        }),
        KernelFamily::IcmRbf => {
            return Err(Error::Config(
                "ICM fits do not store factor draws; pass --kernel with fixed phi instead".into(),
            ))
        }
    };
    let sigma2 = if fit.likelihood.is_normal() { m("sigma2")? } else { 0.0 };
    Ok((kernel, sigma2))
}

fn cmd_weights(
    common: &Common,
    fit_dir: Option<&Path>,
    panel_path: Option<&Path>,
    kernel_path: Option<&Path>,
    sigma2_flag: f64,
    target_unit: Option<usize>,
) -> Result<()> {
    let (panel, kernel, sigma2) = match (fit_dir, kernel_path) {
        (Some(dir), None) => {
            let (panel, fit, _) = load_fit(dir)?;
            let (k, s2) = median_kernel(&fit)?;
            (panel, k, s2)
        }
        (None, Some(kp)) => {
            let panel_path = panel_path.ok_or_else(|| Error::Config("--kernel needs --panel".into()))?;
            let (panel, _) = load_panel(panel_path, &PanelSchema::default())?;
            let k = KernelParams::from_json(&fs::read_to_string(kp)?)?;
            (panel, k, sigma2_flag)
        }
        _ => return Err(Error::Config("give exactly one of --fit or --kernel".into())),
    };
    let w = panel_donor_weights(&panel, &kernel, sigma2)?;
    let unit = match target_unit {
        Some(u) if u >= 1 && u <= panel.n_units() => u - 1,
        Some(u) => return Err(Error::Config(format!("target unit {u} is outside 1..={}", panel.n_units()))),
        None => w.targets[0].unit,
    };
    let maps = weight_summaries(&w, &panel, unit)?;
    let mut out = Output::new(&common.out)?;
    out.with("weights.csv", |b| w.write_csv(b))?;
    out.with(&format!("unit_map_u{}.csv", unit + 1), |b| maps.write_unit_csv(&panel, b))?;
    for (t, _) in &maps.time_maps {
        out.with(&format!("time_map_u{}_t{t}.csv", unit + 1), |b| maps.write_time_csv(*t, b))?;
    }
    if kernel.is_separable() {
        let table = KernelTable::new(&Geometry::from_panel(&panel), &kernel)?;
        if let KernelTable::Separable { unit: ku, time: kt } = table {
            let target = *w.targets.iter().find(|c| c.unit == unit).unwrap_or(&Cell::new(unit, panel.n_times() - 1));
            let sep = donor_weights_separable(&ku, &kt, sigma2, target)?;
            out.json("separable_weights.json", &sep)?;
        }
    }
    let config = serde_json::json!({"kernel": kernel, "sigma2": sigma2, "target_unit": unit + 1});
    out.finish("weights", &config, common.seed)
}

fn cmd_diagnose(common: &Common, dir: &Path, draw_curves: Option<usize>) -> Result<()> {
    let (panel, fit, _) = load_fit(dir)?;
    let geom = Geometry::from_panel(&panel);
    let (h, u) = default_grids(geom.max_distance(), panel.n_times());
    let est = estimate_fhat(&fit, &h, &u)?;
    let mut curves = est.curves.clone();
    if let Some(thin) = draw_curves {
        let extra = posterior_curves(&fit, &h, &u, thin)?;
        curves.h_grid.extend(extra.h_grid);
        curves.curves.extend(extra.curves);
    }
    let bp = functional_boxplot(&curves)?;
    let verdict = diagnostics::verdict(&est);
    for w in &verdict.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = Output::new(&common.out)?;
    out.json("fhat.json", &est)?;
    out.with("boxplot_band.csv", |b| bp.write_band_csv(&u, b))?;
    out.with("boxplot_curves.csv", |b| bp.write_curves_csv(&curves, b))?;
    out.json("verdict.json", &verdict)?;
    let config = serde_json::json!({"fit": dir, "draw_curves": draw_curves});
    out.finish("diagnose", &config, Some(fit.master_seed))
}
