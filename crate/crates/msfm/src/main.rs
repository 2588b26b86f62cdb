use std::fs;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use msfm::config::{fmt_sig15, parse_config, parse_kv, FilterKind, RunConfig, Subcommand};
use msfm::experiments::{
    build_model, filter_convergence_study, histogram_with_normal_overlay, run_mc_study, McConfig,
};
use msfm::filters::{kalman_bucy, particle_filter, wonham_filter};
use msfm::inference::{fisher_information, mle, reduced_log_likelihood, theoretical_stderr};
use msfm::model::{reduce, ModelSpec};
use msfm::simulate::{derive_seed, simulate_multiscale, Path};

/// Simulation, filtering, and likelihood estimation for partially observed
/// slow-fast systems.
#[derive(Parser)]
#[command(name = "msfm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Simulate the full multiscale system and write `t,Y,U,X`.
    Simulate(CommonArgs),
    /// Run a filter on observations and write the posterior path.
    Filter(CommonArgs),
    /// Maximize the reduced likelihood; print the estimate as JSON.
    Estimate(CommonArgs),
    /// Print the Fisher information at `theta` as JSON.
    Fisher(CommonArgs),
    /// Monte Carlo estimation study; write `table.csv`.
    McTable(CommonArgs),
    /// Filter-convergence study over a list of scale parameters.
    Converge(CommonArgs),
    /// Histogram of Monte Carlo estimates with fitted normal overlay.
    Hist(CommonArgs),
}

impl Command {
    fn split(&self) -> (Subcommand, &CommonArgs) {
        match self {
            Command::Simulate(a) => (Subcommand::Simulate, a),
            Command::Filter(a) => (Subcommand::Filter, a),
            Command::Estimate(a) => (Subcommand::Estimate, a),
            Command::Fisher(a) => (Subcommand::Fisher, a),
            Command::McTable(a) => (Subcommand::McTable, a),
            Command::Converge(a) => (Subcommand::Converge, a),
            Command::Hist(a) => (Subcommand::Hist, a),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Line-oriented `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// example1 | example2 | example3
    #[arg(long)]
    example: Option<String>,
    /// True (data-generating) parameter.
    #[arg(long)]
    alpha: Option<f64>,
    /// Filter parameter (defaults to alpha).
    #[arg(long)]
    theta: Option<f64>,
    /// Time horizon.
    #[arg(long = "T")]
    t_total: Option<f64>,
    /// Scale-separation parameter of the fast process.
    #[arg(long)]
    delta: Option<f64>,
    /// Observation/filter grid step.
    #[arg(long)]
    dt: Option<f64>,
    /// Observation noise intensity.
    #[arg(long = "Sigma")]
    sigma_obs: Option<f64>,
    /// Fast-process noise intensity.
    #[arg(long = "sigma")]
    sigma_fast: Option<f64>,
    /// Root seed (falls back to MSFM_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_replicates: Option<usize>,
    #[arg(long)]
    n_particles: Option<usize>,
    #[arg(long)]
    n_bins: Option<usize>,
    /// Lower parameter bound.
    #[arg(long)]
    theta_lo: Option<f64>,
    /// Upper parameter bound.
    #[arg(long)]
    theta_hi: Option<f64>,
    /// Comma-separated scale parameters for `converge`.
    #[arg(long)]
    deltas: Option<String>,
    /// Comma-separated true parameters for `mc-table`.
    #[arg(long)]
    alphas: Option<String>,
    /// kalman | wonham | particle
    #[arg(long)]
    filter: Option<String>,
    /// Output file (or directory for `hist`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Read observations from an existing `simulate` CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Cap on worker threads for Monte Carlo studies.
    #[arg(long)]
    jobs: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("example", self.example.clone());
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("theta", self.theta.map(|v| v.to_string()));
        push("T", self.t_total.map(|v| v.to_string()));
        push("delta", self.delta.map(|v| v.to_string()));
        push("dt", self.dt.map(|v| v.to_string()));
        push("Sigma", self.sigma_obs.map(|v| v.to_string()));
        push("sigma", self.sigma_fast.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("n_replicates", self.n_replicates.map(|v| v.to_string()));
        push("n_particles", self.n_particles.map(|v| v.to_string()));
        push("n_bins", self.n_bins.map(|v| v.to_string()));
        push("theta_lo", self.theta_lo.map(|v| v.to_string()));
        push("theta_hi", self.theta_hi.map(|v| v.to_string()));
        push("deltas", self.deltas.clone());
        push("alphas", self.alphas.clone());
        push("filter", self.filter.clone());
        push("output", self.output.as_ref().map(|p| p.display().to_string()));
        push("input", self.input.as_ref().map(|p| p.display().to_string()));
        out
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        process::exit(1);
    }
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let (sub, args) = cli.command.split();
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .ok();
    }
    let file_pairs = match &args.config {
        Some(p) => parse_kv(&fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let cfg = parse_config(sub, &file_pairs, &args.overrides())?;
    dispatch(&cfg)
}

fn model_of(cfg: &RunConfig) -> Result<ModelSpec, Box<dyn std::error::Error>> {
    Ok(build_model(
        cfg.example,
        cfg.delta,
        cfg.sigma_obs,
        cfg.sigma_fast,
        (cfg.theta_lo, cfg.theta_hi),
    )?)
}

/// CSV writer enforcing `,` delimiters, `\n` endings, and 15 significant
/// digits for floats.
fn write_csv(
    path: &FsPath,
    header: &str,
    rows: impl Iterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    let mut buf = String::new();
    buf.push_str(header);
    buf.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_sig15(v)).collect();
        buf.push_str(&cells.join(","));
        buf.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(buf.as_bytes())
}

fn observations(cfg: &RunConfig) -> Result<Path, Box<dyn std::error::Error>> {
    match &cfg.input {
        Some(p) => read_path_csv(p, cfg.delta),
        None => {
            let model = model_of(cfg)?;
            Ok(simulate_multiscale(
                &model, cfg.alpha, cfg.t_total, cfg.dt, cfg.seed,
            )?)
        }
    }
}

/// Reads a `simulate`-format CSV (`t` column plus named channels) back into
/// a path on a uniform grid.
fn read_path_csv(p: &FsPath, delta: f64) -> Result<Path, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(p)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    let names: Vec<&str> = header.split(',').collect();
    if names.first() != Some(&"t") {
        return Err(format!("{}: first CSV column must be `t`", p.display()).into());
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(format!("{}: row {} has {} cells", p.display(), i + 2, cells.len()).into());
        }
        for (c, cell) in cells.iter().enumerate() {
            cols[c].push(cell.trim().parse()?);
        }
    }
    let t = &cols[0];
    if t.len() < 2 {
        return Err("need at least two grid points".into());
    }
    let dt = t[1] - t[0];
    let mut path = Path::new(t[0], dt, t.len() - 1, delta, 0);
    for (k, name) in names.iter().enumerate().skip(1) {
        path.push_channel(name, cols[k].clone())?;
    }
    Ok(path)
}

fn out_path(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cfg: &RunConfig) -> Result<(), Box<dyn std::error::Error>> {
    match cfg.subcommand {
        Subcommand::Simulate => {
            let model = model_of(cfg)?;
            let path = simulate_multiscale(&model, cfg.alpha, cfg.t_total, cfg.dt, cfg.seed)?;
            let times = path.times();
            let y = path.channel("Y").unwrap();
            let u = path.channel("U").unwrap();
            let x = path.channel("X").unwrap();
            let rows = (0..times.len()).map(|k| vec![times[k], y[k], u[k], x[k]]);
            write_csv(&out_path(cfg, "simulate.csv"), "t,Y,U,X", rows)?;
        }
        Subcommand::Filter => {
            let obs = observations(cfg)?;
            let times = obs.times();
            let out = out_path(cfg, "filter.csv");
            match cfg.filter {
                FilterKind::Kalman => {
                    let red = reduce(&model_of(cfg)?)?;
                    let fp = kalman_bucy(&red, cfg.theta, &obs)?;
                    let sh = fp.sigma_hat.as_ref().ok_or("missing conditional variance")?;
                    let rows = (0..times.len()).map(|k| vec![times[k], fp.pi_h[k], sh[k]]);
                    write_csv(&out, "t,pi_h,sigma_hat", rows)?;
                }
                FilterKind::Wonham => {
                    let fp = wonham_filter(cfg.theta, cfg.sigma_obs, &obs)?;
                    // Conditional variance of the occupation indicator.
                    let rows = (0..times.len()).map(|k| {
                        let p = fp.pi_h[k];
                        vec![times[k], p, p * (1.0 - p)]
                    });
                    write_csv(&out, "t,pi_h,sigma_hat", rows)?;
                }
                FilterKind::Particle => {
                    let model = model_of(cfg)?;
                    let (fp, _) = particle_filter(
                        &model,
                        cfg.theta,
                        &obs,
                        cfg.n_particles,
                        derive_seed(cfg.seed, 1),
                    )?;
                    let ess = fp.ess.as_ref().ok_or("missing ESS trace")?;
                    let rows = (0..times.len()).map(|k| vec![times[k], fp.pi_h[k], ess[k]]);
                    write_csv(&out, "t,pi_h,ess", rows)?;
                }
            }
        }
        Subcommand::Estimate => {
            let model = model_of(cfg)?;
            let obs = observations(cfg)?;
            let result = mle(&model, &obs)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            if let Some(profile) = &cfg.output {
                let n = 101;
                let (lo, hi) = (cfg.theta_lo, cfg.theta_hi);
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    let th = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                    rows.push(vec![th, reduced_log_likelihood(&model, th, &obs)?]);
                }
                write_csv(profile, "theta,loglik", rows.into_iter())?;
            }
        }
        Subcommand::Fisher => {
            let model = model_of(cfg)?;
            let fisher = fisher_information(&model, cfg.theta)?;
            let stderr = theoretical_stderr(fisher, cfg.t_total)?;
            println!(
                "{}",
                serde_json::json!({
                    "theta": cfg.theta,
                    "fisher": fisher,
                    "theoretical_stderr": stderr,
                })
            );
        }
        Subcommand::McTable => {
            let mut rows = Vec::new();
            for (i, &alpha) in cfg.alphas.iter().enumerate() {
                let mc = McConfig {
                    tag: cfg.example,
                    true_alpha: alpha,
                    n_replicates: cfg.n_replicates,
                    t_total: cfg.t_total,
                    delta: cfg.delta,
                    dt: cfg.dt,
                    sigma_obs: cfg.sigma_obs,
                    sigma_fast: cfg.sigma_fast,
                    theta_bounds: (cfg.theta_lo, cfg.theta_hi),
                    root_seed: derive_seed(cfg.seed, i as u64),
                    n_bins: cfg.n_bins,
                };
                let res = run_mc_study(&mc)?;
                eprintln!(
                    "alpha={alpha}: mean={:.4} emp={:.4} theo={:.4} ({} ok, {} failed)",
                    res.mean_estimate, res.empirical_stderr, res.theoretical_stderr, res.n_ok,
                    res.n_fail
                );
                rows.push(vec![
                    alpha,
                    res.mean_estimate,
                    res.empirical_stderr,
                    res.theoretical_stderr,
                    res.n_ok as f64,
                    res.n_fail as f64,
                ]);
            }
            write_csv(
                &out_path(cfg, "table.csv"),
                "alpha,mean_estimate,empirical_stderr,theoretical_stderr,n_ok,n_fail",
                rows.into_iter(),
            )?;
        }
        Subcommand::Converge => {
            let rows = filter_convergence_study(
                cfg.example,
                cfg.alpha,
                &cfg.deltas,
                cfg.n_particles,
                cfg.n_replicates,
                cfg.t_total,
                cfg.dt,
                cfg.sigma_obs,
                cfg.sigma_fast,
                (cfg.theta_lo, cfg.theta_hi),
                cfg.seed,
            )?;
            write_csv(
                &out_path(cfg, "converge.csv"),
                "delta,mse,stderr",
                rows.iter().map(|r| vec![r.delta, r.mse, r.stderr]),
            )?;
        }
        Subcommand::Hist => {
            let mc = McConfig {
                tag: cfg.example,
                true_alpha: cfg.alpha,
                n_replicates: cfg.n_replicates,
                t_total: cfg.t_total,
                delta: cfg.delta,
                dt: cfg.dt,
                sigma_obs: cfg.sigma_obs,
                sigma_fast: cfg.sigma_fast,
                theta_bounds: (cfg.theta_lo, cfg.theta_hi),
                root_seed: cfg.seed,
                n_bins: cfg.n_bins,
            };
            let res = run_mc_study(&mc)?;
            let hist = histogram_with_normal_overlay(
                &res.estimates,
                cfg.alpha,
                res.theoretical_stderr,
                cfg.n_bins,
            )?;
            let dir = out_path(cfg, ".");
            fs::create_dir_all(&dir)?;
            write_csv(
                &dir.join("hist.csv"),
                "bin_left,bin_right,density",
                hist.bins.iter().map(|&(l, r, d)| vec![l, r, d]),
            )?;
            write_csv(
                &dir.join("overlay.csv"),
                "x,pdf",
                hist.overlay.iter().map(|&(x, p)| vec![x, p]),
            )?;
        }
    }
    Ok(())
}
