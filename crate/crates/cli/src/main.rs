//! `semiscat`: configuration-driven experiment runner for the barrier-top
//! scattering engine. Each subcommand reads one JSON experiment config,
//! writes its artifacts atomically into `--out`, and records every output
//! in `manifest.json`.
//!
//! Exit codes: 0 success, 2 schema/config violation, 3 numerical hard
//! error, 4 partial results (per-row failures listed in the manifest).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use semiscat::amplitude::{
    scattering_relation_table, semiclassical_leading_amplitude, BranchSearch, RowStatus,
};
use semiscat::assumptions::{linearization, validate_assumptions};
use semiscat::flow::{flow_trajectory, flow_with_variational, FlowOpts, PhasePoint};
use semiscat::manifold::{g_vector, sample_manifold, ManifoldSide};
use semiscat::potential::{ModelConfig, PotentialModel};
use semiscat::quantum::husimi::{husimi_wavefront, PhaseSpaceWindow};
use semiscat::quantum::numerov::{barrier_top_transmission, numerov_scattering_1d};
use semiscat::quantum::partialwave::partial_wave_amplitude;
use semiscat::quantum::splitstep::{
    coherent_state, propagate, write_snapshot, GridSpec, PropagateOpts,
};
use semiscat::symplectic::{clean_intersection_excess, lagrangian_defect};

#[derive(Parser)]
#[command(name = "semiscat", version, about = "Barrier-top scattering experiment runner")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// RNG seed recorded in the manifest (all pipelines are deterministic).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parameter-grid fan-out.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Multiplier applied to the integrator tolerances.
    #[arg(long = "tol-scale", global = true, default_value_t = 1.0)]
    tol_scale: f64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Cmd {
    /// Integrate Hamiltonian trajectories; one CSV per initial condition.
    Flow,
    /// Sample a stable/unstable manifold patch.
    Manifold,
    /// Tabulate the scattering relation over an impact grid.
    Scatter,
    /// Leading-order semiclassical amplitude (optionally vs partial waves).
    Amplitude,
    /// 1D Numerov transmission vs the barrier-top logistic law.
    Oracle1d,
    /// 2D partial-wave amplitudes.
    Oracle2d,
    /// Propagate a coherent state and sample its Husimi wavefront.
    Husimi,
    /// Symplectic/Lagrangian/clean-intersection audit.
    Verify,
    /// Assumption battery for the configured model.
    ValidateModel,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Flow => "flow",
            Cmd::Manifold => "manifold",
            Cmd::Scatter => "scatter",
            Cmd::Amplitude => "amplitude",
            Cmd::Oracle1d => "oracle1d",
            Cmd::Oracle2d => "oracle2d",
            Cmd::Husimi => "husimi",
            Cmd::Verify => "verify",
            Cmd::ValidateModel => "validate-model",
        }
    }
}

/// Run-level failure classification, mapped onto the exit codes.
enum RunError {
    /// Config/schema violation: exit 2, no outputs.
    Schema(String),
    /// Numerical hard error: exit 3.
    Numerical(String),
}

impl RunError {
    fn message(&self) -> &str {
        match self {
            RunError::Schema(m) | RunError::Numerical(m) => m,
        }
    }
    fn code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

fn schema<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Schema(e.to_string())
}

fn numerical<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numerical(e.to_string())
}

// ---------------------------------------------------------------------------
// Experiment config

#[derive(Deserialize)]
struct ExperimentConfig {
    schema_version: u32,
    model: Value,
    #[serde(default)]
    flow: Option<FlowCfg>,
    #[serde(default)]
    manifold: Option<ManifoldCfg>,
    #[serde(default)]
    scatter: Option<ScatterCfg>,
    #[serde(default)]
    amplitude: Option<AmplitudeCfg>,
    #[serde(default)]
    oracle1d: Option<Oracle1dCfg>,
    #[serde(default)]
    oracle2d: Option<Oracle2dCfg>,
    #[serde(default)]
    husimi: Option<HusimiCfg>,
    #[serde(default)]
    verify: Option<VerifyCfg>,
    #[serde(default)]
    validate_model: Option<ValidateModelCfg>,
}

#[derive(Deserialize)]
struct FlowCfg {
    /// Initial conditions, each `{ "x": [...], "xi": [...] }`.
    initial: Vec<InitialCondition>,
    /// Integration time (signed).
    t: f64,
    /// Also transport variational matrices and report the symplectic defect.
    #[serde(default)]
    variational: bool,
}

#[derive(Deserialize)]
struct InitialCondition {
    x: Vec<f64>,
    xi: Vec<f64>,
}

#[derive(Deserialize)]
struct ManifoldCfg {
    /// "unstable" (Lambda+) or "stable" (Lambda-).
    side: String,
    directions: usize,
    radii: Vec<f64>,
}

#[derive(Deserialize)]
struct ScatterCfg {
    energy: f64,
    omega: Vec<f64>,
    /// Impact vectors in the plane orthogonal to omega (n-1 coordinates
    /// in the impact basis).
    impacts: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct AmplitudeCfg {
    energy: f64,
    h: f64,
    omega: Vec<f64>,
    theta: Vec<f64>,
    /// Branch-search impact radius.
    #[serde(default = "default_r_impact")]
    r_impact: f64,
    /// Compare against the partial-wave solver (2D radial models only).
    #[serde(default)]
    oracle: bool,
}

fn default_r_impact() -> f64 {
    4.0
}

#[derive(Deserialize)]
struct Oracle1dCfg {
    h: f64,
    /// Energy offsets `E1`; each run solves at `E = E0 + h E1`.
    e1_values: Vec<f64>,
}

#[derive(Deserialize)]
struct Oracle2dCfg {
    energy: f64,
    h: f64,
    thetas: Vec<f64>,
}

#[derive(Deserialize)]
struct HusimiCfg {
    h: f64,
    grid_lo: Vec<f64>,
    grid_hi: Vec<f64>,
    grid_points: Vec<usize>,
    x0: Vec<f64>,
    xi0: Vec<f64>,
    t: f64,
    dt: f64,
    #[serde(default)]
    absorber_width: Option<f64>,
    window_x_lo: Vec<f64>,
    window_x_hi: Vec<f64>,
    window_x_points: Vec<usize>,
    window_xi_lo: Vec<f64>,
    window_xi_hi: Vec<f64>,
    window_xi_points: Vec<usize>,
    /// Also write the final wavefunction as a binary snapshot.
    #[serde(default)]
    snapshot: bool,
}

#[derive(Deserialize)]
struct VerifyCfg {
    /// Base points per clean-intersection configuration.
    #[serde(default = "default_verify_points")]
    base_points: usize,
    /// Manifold patch size for the Lagrangian-defect audit.
    #[serde(default = "default_verify_dirs")]
    directions: usize,
    #[serde(default = "default_verify_radii")]
    radii: Vec<f64>,
}

fn default_verify_points() -> usize {
    5
}
fn default_verify_dirs() -> usize {
    8
}
fn default_verify_radii() -> Vec<f64> {
    vec![0.5, 1.0, 1.5]
}

#[derive(Deserialize)]
struct ValidateModelCfg {
    /// Energy-shell probes for the trapped-set check.
    #[serde(default = "default_probes")]
    probes: usize,
}

fn default_probes() -> usize {
    64
}

// ---------------------------------------------------------------------------
// Artifact bookkeeping

struct Artifacts {
    out_dir: PathBuf,
    entries: Vec<Value>,
    /// Per-row soft failures (drive exit code 4).
    failures: Vec<String>,
}

impl Artifacts {
    fn new(out_dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(out_dir).map_err(schema)?;
        Ok(Artifacts {
            out_dir: out_dir.to_path_buf(),
            entries: Vec::new(),
            failures: Vec::new(),
        })
    }

    /// Atomic write: temp file in the same directory, then rename.
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let tmp = self.out_dir.join(format!("{name}.tmp"));
        let path = self.out_dir.join(name);
        fs::write(&tmp, bytes).map_err(numerical)?;
        fs::rename(&tmp, &path).map_err(numerical)?;
        self.entries.push(json!({
            "name": name,
            "bytes": bytes.len(),
        }));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(numerical)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn main() {
    let cli = Cli::parse();
    let started = Instant::now();

    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config PATH is required");
            std::process::exit(2);
        }
    };
    let config_text = match fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            std::process::exit(2);
        }
    };

    match run(&cli, &config_text, started) {
        Ok(0) => {}
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

/// Parse the config, dispatch the subcommand, write the manifest. Returns
/// the exit code (0 or 4); hard errors come back as `Err`.
fn run(cli: &Cli, config_text: &str, started: Instant) -> Result<i32, RunError> {
    if !(cli.tol_scale > 0.0) {
        return Err(RunError::Schema("--tol-scale must be positive".into()));
    }
    if cli.jobs == 0 {
        return Err(RunError::Schema("--jobs must be at least 1".into()));
    }
    let config: ExperimentConfig = serde_json::from_str(config_text).map_err(schema)?;
    if config.schema_version != 1 {
        return Err(RunError::Schema(format!(
            "unsupported schema_version {}",
            config.schema_version
        )));
    }
    let model_cfg: ModelConfig =
        ModelConfig::from_json(&serde_json::to_string(&config.model).map_err(schema)?)
            .map_err(schema)?;
    let model = model_cfg.build().map_err(schema)?;

    let mut opts = FlowOpts::default();
    opts.abs_tol *= cli.tol_scale;
    opts.rel_tol *= cli.tol_scale;
    opts.energy_drift_tol *= cli.tol_scale;
    opts.symplectic_tol *= cli.tol_scale;

    let mut artifacts = Artifacts::new(&cli.out)?;

    match cli.cmd {
        Cmd::Flow => run_flow(&config, &model, &opts, &mut artifacts)?,
        Cmd::Manifold => run_manifold(&config, &model, &opts, &mut artifacts)?,
        Cmd::Scatter => run_scatter(&config, &model, &opts, cli.jobs, &mut artifacts)?,
        Cmd::Amplitude => run_amplitude(&config, &model, &opts, &mut artifacts)?,
        Cmd::Oracle1d => run_oracle1d(&config, &model, &mut artifacts)?,
        Cmd::Oracle2d => run_oracle2d(&config, &model, &mut artifacts)?,
        Cmd::Husimi => run_husimi(&config, &model, &mut artifacts)?,
        Cmd::Verify => run_verify(&config, &model, &opts, &mut artifacts)?,
        Cmd::ValidateModel => run_validate_model(&config, &model, &opts, &mut artifacts)?,
    }

    let partial = !artifacts.failures.is_empty();
    let manifest = json!({
        "command": cli.cmd.name(),
        "config_sha256": hex_digest(config_text.as_bytes()),
        "package_version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "jobs": cli.jobs,
        "tol_scale": cli.tol_scale,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": artifacts.entries,
        "failures": artifacts.failures,
        "status": if partial { "partial" } else { "ok" },
    });
    // The manifest itself is written atomically but not listed in itself.
    let mut text = serde_json::to_string_pretty(&manifest).map_err(numerical)?;
    text.push('\n');
    let tmp = artifacts.out_dir.join("manifest.json.tmp");
    fs::write(&tmp, text).map_err(numerical)?;
    fs::rename(&tmp, artifacts.out_dir.join("manifest.json")).map_err(numerical)?;

    Ok(if partial { 4 } else { 0 })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, RunError> {
    section
        .as_ref()
        .ok_or_else(|| RunError::Schema(format!("config is missing the \"{name}\" section")))
}

fn vecd(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn csv_num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Order-preserving parameter fan-out over `jobs` threads.
fn fan_out<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut results: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<R>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                **slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    drop(slots);
    results.into_iter().map(|r| r.unwrap()).collect()
}

// ---------------------------------------------------------------------------
// Subcommands

fn run_flow(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.flow, "flow")?;
    if cfg.initial.is_empty() {
        return Err(RunError::Schema("flow.initial must be non-empty".into()));
    }
    let n = model.dimension();
    let mut summaries = Vec::new();
    for (i, ic) in cfg.initial.iter().enumerate() {
        if ic.x.len() != n || ic.xi.len() != n {
            return Err(RunError::Schema(format!(
                "flow.initial[{i}] has dimension {}/{} but the model is {n}D",
                ic.x.len(),
                ic.xi.len()
            )));
        }
        let p0 = PhasePoint::from_slices(&ic.x, &ic.xi);
        let traj =
            flow_trajectory(model, &p0, cfg.t, cfg.variational, opts).map_err(numerical)?;
        let mut csv = Vec::new();
        traj.write_csv(model, &mut csv).map_err(numerical)?;
        let name = format!("flow_{i:03}.csv");
        artifacts.write(&name, &csv)?;
        summaries.push(json!({
            "file": name,
            "t": cfg.t,
            "energy": traj.energy,
            "max_energy_drift": traj.max_energy_drift(model),
            "max_symplectic_defect": traj.max_symplectic_defect(),
            "steps": traj.meta.steps,
            "rejected": traj.meta.rejected,
        }));
    }
    artifacts.write_json("flow_summary.json", &json!({ "trajectories": summaries }))
}

fn parse_side(name: &str) -> Result<ManifoldSide, RunError> {
    match name {
        "unstable" | "plus" | "lambda+" => Ok(ManifoldSide::Unstable),
        "stable" | "minus" | "lambda-" => Ok(ManifoldSide::Stable),
        other => Err(RunError::Schema(format!(
            "manifold side must be \"unstable\" or \"stable\", got {other:?}"
        ))),
    }
}

fn run_manifold(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.manifold, "manifold")?;
    let side = parse_side(&cfg.side)?;
    if cfg.directions == 0 || cfg.radii.is_empty() {
        return Err(RunError::Schema(
            "manifold.directions and manifold.radii must be non-empty".into(),
        ));
    }
    let lin = linearization(model).map_err(numerical)?;
    let patch =
        sample_manifold(model, &lin, side, cfg.directions, &cfg.radii, opts).map_err(numerical)?;

    let n = model.dimension();
    let mut csv = String::from("u_index");
    for j in 1..=n {
        csv.push_str(&format!(",x{j}"));
    }
    for j in 1..=n {
        csv.push_str(&format!(",xi{j}"));
    }
    csv.push_str(",t,lagrangian_defect\n");
    let mut max_defect = 0.0f64;
    for (i, mp) in patch.points.iter().enumerate() {
        let defect = lagrangian_defect(&mp.tangent);
        max_defect = max_defect.max(defect);
        csv.push_str(&format!("{}", i / cfg.radii.len()));
        for v in mp.point.x.iter().chain(mp.point.xi.iter()) {
            csv.push(',');
            csv.push_str(&csv_num(*v));
        }
        csv.push_str(&format!(",{},{}\n", csv_num(mp.t), csv_num(defect)));
    }
    artifacts.write("manifold_points.csv", csv.as_bytes())?;

    // Convergence direction of the first sampled trajectory.
    let gdata = g_vector(model, &lin, side, &patch.points[0], opts).map_err(numerical)?;
    artifacts.write_json(
        "manifold_summary.json",
        &json!({
            "side": side.label(),
            "energy": patch.energy,
            "points": patch.points.len(),
            "max_lagrangian_defect": max_defect,
            "g_vector": gdata.g.iter().copied().collect::<Vec<f64>>(),
            "g_fit_residual": gdata.fit_residual,
            "lambdas": lin.lambdas,
        }),
    )
}

fn run_scatter(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    jobs: usize,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.scatter, "scatter")?;
    let n = model.dimension();
    if cfg.omega.len() != n {
        return Err(RunError::Schema(format!(
            "scatter.omega has {} entries but the model is {n}D",
            cfg.omega.len()
        )));
    }
    let omega = vecd(&cfg.omega).normalize();
    let basis = semiscat::amplitude::impact_basis(&omega);
    let grid: Vec<(DVector<f64>, DVector<f64>)> = cfg
        .impacts
        .iter()
        .enumerate()
        .map(|(i, z)| {
            if z.len() != n - 1 {
                return Err(RunError::Schema(format!(
                    "scatter.impacts[{i}] needs {} impact coordinates",
                    n - 1
                )));
            }
            let mut zv = DVector::zeros(n);
            for (j, &c) in z.iter().enumerate() {
                zv += c * basis.column(j);
            }
            Ok((omega.clone(), zv))
        })
        .collect::<Result<_, RunError>>()?;

    let chunks: Vec<Vec<(DVector<f64>, DVector<f64>)>> = grid
        .chunks(grid.len().div_ceil(jobs.max(1)))
        .map(|c| c.to_vec())
        .collect();
    let rows: Vec<_> = fan_out(&chunks, jobs, |chunk| {
        scattering_relation_table(model, cfg.energy, chunk, opts)
    })
    .into_iter()
    .flatten()
    .collect();

    let mut csv = String::from("row");
    for j in 1..=n {
        csv.push_str(&format!(",omega{j}"));
    }
    for j in 1..=n {
        csv.push_str(&format!(",z_minus{j}"));
    }
    for j in 1..=n {
        csv.push_str(&format!(",theta{j}"));
    }
    for j in 1..=n {
        csv.push_str(&format!(",z_plus{j}"));
    }
    csv.push_str(",status\n");
    for (i, row) in rows.iter().enumerate() {
        csv.push_str(&format!("{i}"));
        for v in row.omega.iter().chain(row.z_minus.iter()) {
            csv.push(',');
            csv.push_str(&csv_num(*v));
        }
        let nanrow = vec![f64::NAN; n];
        let theta = row.theta.as_ref().map(|v| v.as_slice().to_vec());
        let zplus = row.z_plus.as_ref().map(|v| v.as_slice().to_vec());
        for v in theta
            .as_deref()
            .unwrap_or(&nanrow)
            .iter()
            .chain(zplus.as_deref().unwrap_or(&nanrow))
        {
            csv.push(',');
            csv.push_str(&csv_num(*v));
        }
        let status = match &row.status {
            RowStatus::Ok => "ok".to_string(),
            RowStatus::Captured => "captured".to_string(),
            RowStatus::Failed(m) => {
                artifacts
                    .failures
                    .push(format!("scatter row {i}: {m}"));
                "failed".to_string()
            }
        };
        csv.push_str(&format!(",{status}\n"));
    }
    artifacts.write("scatter_table.csv", csv.as_bytes())
}

fn run_amplitude(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.amplitude, "amplitude")?;
    let n = model.dimension();
    if cfg.omega.len() != n || cfg.theta.len() != n {
        return Err(RunError::Schema(format!(
            "amplitude.omega/theta need {n} entries"
        )));
    }
    let omega = vecd(&cfg.omega).normalize();
    let theta = vecd(&cfg.theta).normalize();
    let search = BranchSearch::new(cfg.r_impact);
    let result = semiclassical_leading_amplitude(
        model, &omega, &theta, cfg.energy, cfg.h, &search, opts,
    )
    .map_err(numerical)?;
    let mut report = result.to_json();

    if cfg.oracle {
        if n != 2 {
            return Err(RunError::Schema(
                "amplitude.oracle requires a 2D radial model".into(),
            ));
        }
        let angle = theta[1].atan2(theta[0]) - omega[1].atan2(omega[0]);
        let qw = partial_wave_amplitude(model, cfg.energy, cfg.h, &[angle])
            .map_err(numerical)?;
        let f_q = qw.amplitudes[0].norm();
        // |f| = sqrt(2E) |sum sigma_hat^{-1/2} e^{i(S/h - mu pi/2)}|.
        let f_sc = (2.0 * cfg.energy).sqrt() * result.branch_sum().norm();
        let rel = if f_q > 0.0 {
            (f_sc - f_q).abs() / f_q
        } else {
            f64::NAN
        };
        report["oracle"] = json!({
            "partial_wave_abs_f": f_q,
            "semiclassical_abs_f": f_sc,
            "relative_error": rel,
        });
    }
    artifacts.write_json("amplitude.json", &report)
}

fn run_oracle1d(
    config: &ExperimentConfig,
    model: &PotentialModel,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.oracle1d, "oracle1d")?;
    if model.dimension() != 1 {
        return Err(RunError::Schema("oracle1d requires a 1D model".into()));
    }
    let e0 = model.barrier_energy();
    let lambda = model.lambdas()[0];
    let mut csv = String::from("e1,energy,t2,logistic,rel_error\n");
    for &e1 in &cfg.e1_values {
        let e = e0 + cfg.h * e1;
        match numerov_scattering_1d(model, e, cfg.h) {
            Ok(sc) => {
                let t2 = sc.transmission.norm_sqr();
                let target = barrier_top_transmission(e1, lambda);
                let rel = (t2 - target).abs() / target;
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    csv_num(e1),
                    csv_num(e),
                    csv_num(t2),
                    csv_num(target),
                    csv_num(rel)
                ));
            }
            Err(e) => {
                artifacts.failures.push(format!("oracle1d E1 = {e1}: {e}"));
                csv.push_str(&format!("{},{},nan,nan,nan\n", csv_num(e1), csv_num(e0)));
            }
        }
    }
    artifacts.write("oracle1d.csv", csv.as_bytes())
}

fn run_oracle2d(
    config: &ExperimentConfig,
    model: &PotentialModel,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.oracle2d, "oracle2d")?;
    let qw = partial_wave_amplitude(model, cfg.energy, cfg.h, &cfg.thetas)
        .map_err(numerical)?;
    let mut csv = String::from("theta,re_f,im_f,abs_f\n");
    for (t, f) in qw.thetas.iter().zip(&qw.amplitudes) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            csv_num(*t),
            csv_num(f.re),
            csv_num(f.im),
            csv_num(f.norm())
        ));
    }
    artifacts.write("oracle2d.csv", csv.as_bytes())?;
    artifacts.write_json(
        "oracle2d_summary.json",
        &json!({
            "energy": cfg.energy,
            "h": cfg.h,
            "k": qw.k,
            "channels": qw.m_used,
            "total_cross_section": qw.total_cross_section,
        }),
    )
}

fn run_husimi(
    config: &ExperimentConfig,
    model: &PotentialModel,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = require(&config.husimi, "husimi")?;
    let spec = GridSpec::new(
        cfg.grid_lo.clone(),
        cfg.grid_hi.clone(),
        cfg.grid_points.clone(),
    )
    .map_err(schema)?;
    let state = coherent_state(&cfg.x0, &cfg.xi0, cfg.h, &spec).map_err(schema)?;
    let popts = PropagateOpts {
        dt: cfg.dt,
        absorber_width: cfg.absorber_width,
    };
    let run = propagate(&state, model, cfg.t, &popts).map_err(numerical)?;

    if cfg.snapshot {
        let mut bytes = Vec::new();
        write_snapshot(&run.state, &mut bytes).map_err(numerical)?;
        artifacts.write("state_final.bin", &bytes)?;
    }

    let window = PhaseSpaceWindow {
        x_lo: cfg.window_x_lo.clone(),
        x_hi: cfg.window_x_hi.clone(),
        x_points: cfg.window_x_points.clone(),
        xi_lo: cfg.window_xi_lo.clone(),
        xi_hi: cfg.window_xi_hi.clone(),
        xi_points: cfg.window_xi_points.clone(),
    };
    let field = husimi_wavefront(&run.state, &window).map_err(numerical)?;
    let dim = state.dim();
    let mut csv = String::new();
    for j in 1..=dim {
        csv.push_str(&format!("x{j},"));
    }
    for j in 1..=dim {
        csv.push_str(&format!("xi{j},"));
    }
    csv.push_str("husimi\n");
    for (i, &v) in field.values.iter().enumerate() {
        let coords = field.sample_coords(i);
        for c in &coords {
            csv.push_str(&csv_num(*c));
            csv.push(',');
        }
        csv.push_str(&csv_num(v));
        csv.push('\n');
    }
    artifacts.write("husimi.csv", csv.as_bytes())?;
    artifacts.write_json(
        "husimi_summary.json",
        &json!({
            "h": cfg.h,
            "t": cfg.t,
            "steps": run.steps,
            "norm_drift": run.norm_drift,
            "absorbed_mass": run.absorbed_mass,
            "total_window_mass": field.total_mass(),
            "position_mean": run.state.position_mean(),
        }),
    )
}

fn run_verify(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let cfg = match &config.verify {
        Some(c) => c,
        None => &VerifyCfg {
            base_points: default_verify_points(),
            directions: default_verify_dirs(),
            radii: default_verify_radii(),
        },
    };
    let lin = linearization(model).map_err(numerical)?;
    let n = model.dimension();

    // 1. Lagrangian defect of the transported patch frames, both sides.
    let mut defects = Vec::new();
    for side in [ManifoldSide::Unstable, ManifoldSide::Stable] {
        let patch = sample_manifold(model, &lin, side, cfg.directions, &cfg.radii, opts)
            .map_err(numerical)?;
        let max = patch
            .points
            .iter()
            .map(|mp| lagrangian_defect(&mp.tangent))
            .fold(0.0f64, f64::max);
        defects.push(json!({ "side": side.label(), "max_lagrangian_defect": max }));
    }

    // 2. Clean-intersection excess at sampled base points: the flow-graph
    // composition (expected excess 0) and the energy-shell composition
    // (expected excess 1).
    let mut excess_a = Vec::new();
    let mut excess_b = Vec::new();
    let z_planes = composition_planes(n);
    for k in 0..cfg.base_points {
        let r = 0.9 + 0.07 * k as f64;
        let plus = semiscat::manifold::grow_to_radius(
            model,
            &lin,
            ManifoldSide::Unstable,
            &angle_dir(n, 0.23 + 0.41 * k as f64),
            r,
            opts,
        )
        .map_err(numerical)?;
        let minus = semiscat::manifold::grow_to_radius(
            model,
            &lin,
            ManifoldSide::Stable,
            &angle_dir(n, 0.11 + 0.37 * k as f64),
            r,
            opts,
        )
        .map_err(numerical)?;
        let t = 0.5 + 0.1 * k as f64;
        let (_, m_plus) =
            flow_with_variational(model, &plus.point, t, opts).map_err(numerical)?;

        let y_a = graph_product_frame(n, &m_plus, &plus.tangent);
        match clean_intersection_excess(8 * n, &y_a, &z_planes) {
            Ok(e) => excess_a.push(e),
            Err(e) => artifacts.failures.push(format!("verify A{k}: {e}")),
        }

        let (image, m_minus) =
            flow_with_variational(model, &minus.point, t, opts).map_err(numerical)?;
        let y_b = shell_product_frame(
            model,
            n,
            &plus.tangent,
            &minus.tangent,
            &minus.point,
            &image,
            &m_minus,
        );
        match clean_intersection_excess(8 * n, &y_b, &z_planes) {
            Ok(e) => excess_b.push(e),
            Err(e) => artifacts.failures.push(format!("verify B{k}: {e}")),
        }
    }

    artifacts.write_json(
        "verify.json",
        &json!({
            "lagrangian": defects,
            "graph_composition_excess": excess_a,
            "energy_shell_excess": excess_b,
            "expected": { "graph_composition": 0, "energy_shell": 1 },
        }),
    )
}

fn angle_dir(n: usize, phi: f64) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[0] = phi.cos();
    if n > 1 {
        v[1] = phi.sin();
    } else {
        v[0] = 1.0;
    }
    v.normalize()
}

fn unit_col(mut v: DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

/// Frame of (graph of the time-t flow) x Lambda+ x Lambda- tangents in the
/// ambient R^{8n} = (rho, tau1, tau2, sigma) coordinates.
fn graph_product_frame(n: usize, m: &DMatrix<f64>, tangent: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(8 * n, 2 * n + 2 * n);
    let mut col = 0;
    for j in 0..2 * n {
        let mut e_j = DVector::zeros(2 * n);
        e_j[j] = 1.0;
        let mv = m * &e_j;
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(0, 2 * n).copy_from(&mv);
        c.rows_mut(2 * n, 2 * n).copy_from(&e_j);
        y.set_column(col, &unit_col(c));
        col += 1;
    }
    for j in 0..n {
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(4 * n, 2 * n).copy_from(&tangent.column(j));
        y.set_column(col, &unit_col(c));
        col += 1;
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(6 * n, 2 * n).copy_from(&tangent.column(j));
        y.set_column(col, &unit_col(c));
        col += 1;
    }
    y
}

/// Frame of (Lambda+ x Lambda-) x Lambda(E0) tangents: manifold tangents in
/// the first two slots; Lambda(E0) is the flow-out of the energy shell
/// based at (rho, Phi_t rho), with tangent {(v, Mv) : v in T(shell)}
/// + R (0, H_p(Phi_t rho)).
fn shell_product_frame(
    model: &PotentialModel,
    n: usize,
    plus_tangent: &DMatrix<f64>,
    minus_tangent: &DMatrix<f64>,
    rho: &PhasePoint,
    image: &PhasePoint,
    m: &DMatrix<f64>,
) -> DMatrix<f64> {
    // Energy-shell tangent basis at rho: nullspace of dp = (grad V, xi).
    let mut dp = DVector::zeros(2 * n);
    dp.rows_mut(0, n).copy_from(&model.gradient(&rho.x));
    dp.rows_mut(n, n).copy_from(&rho.xi);
    let mut cand = DMatrix::zeros(2 * n, 2 * n);
    cand.set_column(0, &dp.normalize());
    for j in 0..2 * n - 1 {
        let mut e_j = DVector::zeros(2 * n);
        e_j[j] = 1.0;
        cand.set_column(j + 1, &e_j);
    }
    let qr = cand.qr().q();
    let shell = qr.columns(1, 2 * n - 1).into_owned();
    let hp = unit_col(semiscat::flow::vector_field(model, image));

    let mut y = DMatrix::zeros(8 * n, 2 * n + 2 * n);
    let mut col = 0;
    for j in 0..n {
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(0, 2 * n).copy_from(&plus_tangent.column(j));
        y.set_column(col, &unit_col(c));
        col += 1;
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(2 * n, 2 * n).copy_from(&minus_tangent.column(j));
        y.set_column(col, &unit_col(c));
        col += 1;
    }
    for j in 0..2 * n - 1 {
        let v = shell.column(j).into_owned();
        let mv = m * &v;
        let mut c = DVector::zeros(8 * n);
        c.rows_mut(4 * n, 2 * n).copy_from(&v);
        c.rows_mut(6 * n, 2 * n).copy_from(&mv);
        y.set_column(col, &unit_col(c));
        col += 1;
    }
    let mut c = DVector::zeros(8 * n);
    c.rows_mut(6 * n, 2 * n).copy_from(&hp);
    y.set_column(col, &unit_col(c));
    y
}

/// The T* x diag x T* coordinate planes the compositions are tested
/// against.
fn composition_planes(n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(8 * n, 6 * n);
    let mut col = 0;
    for j in 0..2 * n {
        let mut c = DVector::zeros(8 * n);
        c[j] = 1.0;
        z.set_column(col, &c);
        col += 1;
    }
    for j in 0..2 * n {
        let mut c = DVector::zeros(8 * n);
        c[2 * n + j] = std::f64::consts::FRAC_1_SQRT_2;
        c[4 * n + j] = std::f64::consts::FRAC_1_SQRT_2;
        z.set_column(col, &c);
        col += 1;
    }
    for j in 0..2 * n {
        let mut c = DVector::zeros(8 * n);
        c[6 * n + j] = 1.0;
        z.set_column(col, &c);
        col += 1;
    }
    z
}

fn run_validate_model(
    config: &ExperimentConfig,
    model: &PotentialModel,
    opts: &FlowOpts,
    artifacts: &mut Artifacts,
) -> Result<(), RunError> {
    let probes = config
        .validate_model
        .as_ref()
        .map(|c| c.probes)
        .unwrap_or_else(default_probes);
    let report = validate_assumptions(model, probes, opts).map_err(numerical)?;
    let lin = linearization(model).map_err(numerical)?;
    artifacts.write_json(
        "validate_model.json",
        &json!({
            "lambdas": report.lambdas,
            "linearization_lambdas": lin.lambdas,
            "barrier_energy": model.barrier_energy(),
            "unique_maximum": report.unique_maximum,
            "short_range": report.short_range,
            "trapped_set_trivial": report.trapped_set_trivial,
            "probes": report.probes,
            "undecided": report.undecided,
            "competing_maximum": report.competing_maximum.as_ref().map(|(x, v)| json!({
                "x": x, "value": v,
            })),
            "all_ok": report.all_ok(),
        }),
    )
}
