//! critrec: simulate the critical affine recursion, build its invariant
//! measure, verify the tail asymptotics and cross-validate the constant.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use critrec::config::RunConfig;
use critrec::crossval::cplus_crosscheck;
use critrec::error::{Error, Result};
use critrec::invariant::{estimate_nu, read_cloud, write_cloud, NuParams, PointCloudMeasure};
use critrec::model::{validate_spec, validation_report};
use critrec::potential::{certify_f, potential_a_diag, psi_r, psi_rshift, GridFn, PotentialParams, PsiSpec};
use critrec::tail::{angular_measure, bound_diagnostics, estimate_cplus, exp_grid};
use critrec::walk::{duality_check, StepLaw, DUALITY_MAX_DEPTH};

#[derive(Parser)]
#[command(name = "critrec", version, about = "critical affine recursion toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set run.seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the model admissibility conditions and print the report.
    Validate(Common),
    /// Build the invariant-measure point cloud and write nu_cloud.nupc.
    Simulate(Common),
    /// Annulus masses, C_+ estimate, angular measure and bound diagnostics.
    Tail(Common),
    /// Evaluate the recurrent potential A psi on a grid.
    Potential(Common),
    /// Cross-validate C_+ against the potential-theory constant.
    Crossval(Common),
    /// Exact enumeration of the duality identity (lattice families).
    Duality {
        #[command(flatten)]
        common: Common,
        /// Geometric weight s in (0,1).
        #[arg(long, default_value_t = 0.5)]
        s: f64,
        /// Enumeration depth (exact tail bound s^depth/(1-s)).
        #[arg(long, default_value_t = 20)]
        depth: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate(c) => with_config(&c, cmd_validate),
        Cmd::Simulate(c) => with_config(&c, cmd_simulate),
        Cmd::Tail(c) => with_config(&c, cmd_tail),
        Cmd::Potential(c) => with_config(&c, cmd_potential),
        Cmd::Crossval(c) => with_config(&c, cmd_crossval),
        Cmd::Duality { common, s, depth } => {
            with_config(&common, |cfg| cmd_duality(cfg, s, depth))
        }
    }
}

fn with_config(common: &Common, f: impl FnOnce(&RunConfig) -> Result<()>) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.output)?;
    f(&cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let report = validation_report(&cfg.model);
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    println!("lattice_span = {}", report.lattice_span);
    println!("sigma2 = {}", report.sigma2);
    write_json(&cfg.output.join("model.json"), &report)?;
    validate_spec(&cfg.model).map(|_| ())
}

fn cloud_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("nu_cloud.nupc")
}

fn build_cloud(cfg: &RunConfig) -> Result<PointCloudMeasure> {
    validate_spec(&cfg.model)?;
    let params = NuParams {
        m_excursions: cfg.run.m_excursions,
        n_max: cfg.run.n_max,
        nul_tol: cfg.run.tol,
        ..Default::default()
    };
    estimate_nu(&cfg.model, &params, cfg.run.seed)
}

/// Load the cloud written by `simulate`, or build it fresh.
fn load_or_build_cloud(cfg: &RunConfig) -> Result<PointCloudMeasure> {
    let path = cloud_path(cfg);
    if path.exists() {
        let cloud = read_cloud(&path)?;
        if cloud.meta.spec_hash == critrec::invariant::spec_hash(&cfg.model)
            && cloud.meta.seed == cfg.run.seed
            && cloud.meta.m_excursions == cfg.run.m_excursions
        {
            return Ok(cloud);
        }
    }
    build_cloud(cfg)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let cloud = build_cloud(cfg)?;
    write_json(&cfg.output.join("model.json"), &validation_report(&cfg.model))?;
    write_cloud(&cloud_path(cfg), &cloud)?;
    println!(
        "cloud: {} points / {} excursions, total mass {:.6e}, truncated fraction {:.3e}",
        cloud.n_points(),
        cloud.n_excursions(),
        cloud.total_mass(),
        cloud.meta.truncated_fraction
    );
    Ok(())
}

fn cmd_tail(cfg: &RunConfig) -> Result<()> {
    let cloud = load_or_build_cloud(cfg)?;
    let grid = exp_grid(cfg.tail.z_lo, cfg.tail.z_hi);
    let p = cfg.model.lattice_span();
    let report = estimate_cplus(&cloud, &grid, p)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("annuli.csv"))?);
    writeln!(f, "z,alpha,beta,mass,stderr,n_excursions,c_estimate,reliable")?;
    for r in &report.annulus_table {
        writeln!(
            f,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e},{}",
            r.z, r.alpha, r.beta, r.mass, r.stderr, r.n_excursions, r.c_estimate, r.reliable
        )?;
    }
    drop(f);
    println!(
        "C_+ = {:.5} +- {:.5} (chi2 p = {:.4}, {} annuli)",
        report.c_plus,
        report.c_plus_stderr,
        report.chi2_pvalue,
        report.annulus_table.len()
    );

    // angular measure -> sigma.csv
    let z_min = grid[0];
    match angular_measure(&cloud, z_min, cfg.tail.bins) {
        Ok(h) => {
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(cfg.output.join("sigma.csv"))?);
            writeln!(f, "bin_center,weight,stderr")?;
            for i in 0..h.weights.len() {
                writeln!(
                    f,
                    "{:.17e},{:.17e},{:.17e}",
                    h.bin_centers[i], h.weights[i], h.weights_stderr[i]
                )?;
            }
        }
        Err(Error::InsufficientSupport(msg)) => {
            eprintln!("sigma.csv skipped: {msg}");
        }
        Err(e) => return Err(e),
    }

    // bound diagnostics -> bounds.csv (skipped without a covered half-space)
    match bound_diagnostics(&cfg.model, &cloud, &grid) {
        Ok(d) => {
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(cfg.output.join("bounds.csv"))?);
            writeln!(f, "name,value")?;
            for (name, value) in d.rows() {
                writeln!(f, "{name},{value:.17e}")?;
            }
        }
        Err(Error::ConfigNotCoveredByG) => {
            eprintln!(
                "bounds.csv skipped: half-space diagnostics need d = 1 or a positive-orthant B"
            );
        }
        Err(e) => return Err(e),
    }
    write_json(&cfg.output.join("tail.json"), &report)?;
    Ok(())
}

fn parse_psi(spec: &str) -> Result<PsiSpec> {
    if spec == "r" {
        return Ok(psi_r());
    }
    if let Some(c) = spec.strip_prefix("rshift:") {
        let c: f64 = c
            .parse()
            .map_err(|_| Error::Config(format!("bad rshift offset '{c}'")))?;
        return Ok(psi_rshift(c));
    }
    // tabulated psi from CSV (x,value) on a uniform grid
    let text = std::fs::read_to_string(spec)?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("bad psi row '{line}'")))?;
        xs.push(a.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string()))?);
        vs.push(b.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string()))?);
    }
    if xs.len() < 3 {
        return Err(Error::Config("tabulated psi needs at least 3 rows".into()));
    }
    let dx = xs[1] - xs[0];
    for w in xs.windows(2) {
        if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx.abs() {
            return Err(Error::Config("tabulated psi grid is not uniform".into()));
        }
    }
    Ok(PsiSpec::Grid(GridFn { x0: xs[0], dx, values: vs, j_tag: None, k_tag: None }))
}

fn cmd_potential(cfg: &RunConfig) -> Result<()> {
    validate_spec(&cfg.model)?;
    let psi = parse_psi(&cfg.potential.psi)?;
    let cert = certify_f(&cfg.model, &psi)?;
    let params = PotentialParams { tol: cfg.potential.tol, max_panels: 60_000 };
    let (apsi, diag) =
        potential_a_diag(&cfg.model, &cert, cfg.potential.xmax, cfg.potential.dx, &params)?;
    let header = serde_json::json!({
        "psi": cfg.potential.psi,
        "J": cert.j,
        "K": cert.k,
        "sigma2": cfg.model.sigma2(),
        "tol": cfg.potential.tol,
        "lambda_order": diag.order,
        "extrapolation_err": diag.max_extrapolation_err,
    });
    apsi.write_csv(&cfg.output.join("potential_apsi.csv"), &header.to_string())?;
    println!(
        "A psi on [-{0}, {0}]: J = {1:.6}, K = {2:.6}, edge values {3:.6} / {4:.6}",
        cfg.potential.xmax,
        cert.j,
        cert.k,
        apsi.values[0],
        apsi.values[apsi.len() - 1]
    );
    Ok(())
}

fn cmd_crossval(cfg: &RunConfig) -> Result<()> {
    let cloud = load_or_build_cloud(cfg)?;
    let out = cplus_crosscheck(&cfg.model, &cloud, cfg.potential.gamma, cfg.run.seed)?;
    out.f_phi.write_csv(
        &cfg.output.join("f_phi.csv"),
        &format!("f_phi, gamma={}", cfg.potential.gamma),
    )?;
    out.psi_phi.write_csv(
        &cfg.output.join("psi_phi.csv"),
        &format!("psi_phi, gamma={}", cfg.potential.gamma),
    )?;
    write_json(&cfg.output.join("crossval.json"), &out.report)?;
    println!(
        "C_+ potential route = {:.5} +- {:.5}; C_+ annulus route = {:.5} +- {:.5} (gap {:.1}%)",
        out.report.cplus_pot,
        out.report.cplus_pot_stderr,
        out.report.cplus_mc,
        out.report.cplus_mc_stderr,
        100.0 * out.report.rel_gap_cplus
    );
    Ok(())
}

fn cmd_duality(cfg: &RunConfig, s: f64, depth: usize) -> Result<()> {
    if depth > DUALITY_MAX_DEPTH {
        return Err(Error::DepthOverflow { depth, max: DUALITY_MAX_DEPTH });
    }
    let law = StepLaw::from_spec(&cfg.model)?;
    let d = duality_check(&law, s, depth)?;
    let text = format!(
        "s = {s}, depth = {depth}\n\
         lhs  (E sum s^i, i < L)        = {:.6}\n\
         rhs  (weak ascending ladders)  = {:.6}\n\
         rhs' (strict ascending ladders)= {:.6}\n\
         truncation bound per side      = {:.3e}\n",
        d.lhs, d.rhs_weak, d.rhs_strict, d.bound
    );
    print!("{text}");
    std::fs::write(cfg.output.join("duality.txt"), text)?;
    Ok(())
}
