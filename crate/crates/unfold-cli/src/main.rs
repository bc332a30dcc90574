//! Command-line driver: forward folding checks, full unfolding runs and
//! self-contained toy demos.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use unfold::folding::{compute_k, fold, CompositeOperator};
use unfold::histo::{Histogram, Kind};
use unfold::oracle::{make_toy, SpectralDecomposition, ToyKind, ORACLE_SIZE_CAP};
use unfold::unfolder::run;

use unfold_cli::io::{parse_config, read_histogram, read_response, write_histogram, write_response};
use unfold_cli::io::{CliError, CliResult, Config};
use unfold_cli::report::{build_report, plot_csv, report_json};

#[derive(Parser)]
#[command(
    name = "unfold",
    about = "Linear iterative unfolding of binned distributions",
    long_about = "Linear iterative unfolding of binned distributions.\n\
                  UNFOLD_THREADS caps internal parallelism; results are\n\
                  independent of its value."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fold a truth histogram through a response (forward check).
    Fold {
        /// Response matrix CSV.
        response: PathBuf,
        /// Truth density histogram CSV.
        truth: PathBuf,
        /// Output path for the folded histogram CSV.
        out: PathBuf,
        /// Also unfold the folded spectrum and report the closure residuals.
        #[arg(long)]
        closure: bool,
    },
    /// Unfold a measured counts histogram and write the JSON report.
    Unfold {
        /// Response matrix CSV.
        response: PathBuf,
        /// Measured counts histogram CSV.
        measured: PathBuf,
        /// Flat key/value configuration file.
        config: PathBuf,
        /// Output path for the JSON report; the plot CSV lands next to it.
        out_report: PathBuf,
    },
    /// Generate a toy dataset, run the full pipeline and print diagnostics.
    Demo {
        /// Toy family.
        #[arg(value_enum)]
        kind: DemoKind,
        /// Output directory for the generated files.
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of bins (default depends on the toy).
        #[arg(long)]
        bins: Option<usize>,
        /// Gaussian width in bin units (convolution toys).
        #[arg(long)]
        sigma_bins: Option<f64>,
        /// Contraction factor (scaled-identity toy).
        #[arg(long, default_value_t = 0.5)]
        c: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoKind {
    GaussConvCyclic,
    GaussConvTruncated,
    RankDeficient,
    ScaledIdentity,
}

fn main() -> ExitCode {
    // Accepted for interface stability; the numerical core is serial, so
    // results never depend on the value.
    let _ = std::env::var("UNFOLD_THREADS");
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fold {
            response,
            truth,
            out,
            closure,
        } => cmd_fold(&response, &truth, &out, closure),
        Command::Unfold {
            response,
            measured,
            config,
            out_report,
        } => cmd_unfold(&response, &measured, &config, &out_report),
        Command::Demo {
            kind,
            out_dir,
            seed,
            bins,
            sigma_bins,
            c,
        } => cmd_demo(kind, &out_dir, seed, bins, sigma_bins, c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_fold(response: &Path, truth: &Path, out: &Path, closure: bool) -> CliResult<()> {
    let r = read_response(response)?;
    let f = read_histogram(truth, Kind::Density)?;
    if f.grid() != r.truth_grid() {
        return Err(CliError::Lib(unfold::UnfoldError::GridMismatch(
            "truth histogram edges do not match the response truth edges".into(),
        )));
    }
    let g = fold(&r, &f)?;
    write_histogram(out, &g)?;
    println!(
        "folded {} bins -> {} bins, output mass {:.6}",
        f.n_bins(),
        g.n_bins(),
        g.total_mass()
    );
    if closure {
        let n = 200;
        let trace = run(&r, &g, n, None)?;
        let f_n = trace.f(n)?;
        let refolded = fold(&r, f_n)?;
        let truth_resid = f.grid().l2_norm(
            &f.values()
                .iter()
                .zip(f_n.values())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        let folded_resid = g.grid().l2_norm(
            &g.values()
                .iter()
                .zip(refolded.values())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        println!("closure: ||f_true - f_{n}|| = {truth_resid:.6e}");
        println!("closure: ||g - fold(f_{n})|| = {folded_resid:.6e}");
        println!(
            "warning: agreement after folding does not certify the unfolded \
             result; folding can lose discrimination power on pdfs, so distinct \
             unfolded candidates may fold to the same spectrum."
        );
    }
    Ok(())
}

fn cmd_unfold(
    response: &Path,
    measured: &Path,
    config: &Path,
    out_report: &Path,
) -> CliResult<()> {
    let r = read_response(response)?;
    let g_counts = read_histogram(measured, Kind::Counts)?;
    let cfg = parse_config(config)?;
    let config_dir = config.parent().unwrap_or(Path::new("."));
    let report = build_report(&r, &g_counts, &cfg, config_dir)?;
    let json = report_json(&report)?;
    std::fs::write(out_report, &json)
        .map_err(|e| CliError::Write(format!("cannot write {}: {e}", out_report.display())))?;
    let plot_path = out_report.with_extension("plot.csv");
    std::fs::write(&plot_path, plot_csv(&report))
        .map_err(|e| CliError::Write(format!("cannot write {}: {e}", plot_path.display())))?;
    println!(
        "unfolded {} bins, N_opt = {}, K = {:.6}; report: {}, plot data: {}",
        report.unfolded.len(),
        report.n_opt,
        report.k,
        out_report.display(),
        plot_path.display()
    );
    Ok(())
}

fn cmd_demo(
    kind: DemoKind,
    out_dir: &Path,
    seed: u64,
    bins: Option<usize>,
    sigma_bins: Option<f64>,
    c: f64,
) -> CliResult<()> {
    let toy = match kind {
        DemoKind::GaussConvCyclic => ToyKind::GaussConvCyclic {
            bins: bins.unwrap_or(64),
            sigma_bins: sigma_bins.unwrap_or(2.0),
        },
        DemoKind::GaussConvTruncated => ToyKind::GaussConvTruncated {
            bins: bins.unwrap_or(10),
            sigma_bins: sigma_bins.unwrap_or(1.2),
        },
        DemoKind::RankDeficient => ToyKind::RankDeficient {
            bins: bins.unwrap_or(6),
        },
        DemoKind::ScaledIdentity => ToyKind::ScaledIdentity {
            bins: bins.unwrap_or(6),
            c,
        },
    };
    let (r, f_true) = make_toy(&toy, seed)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Write(format!("cannot create {}: {e}", out_dir.display())))?;

    // Noiseless pseudo-data: expected counts for 10^4 events.
    let total = 1e4;
    let folded = fold(&r, &f_true.scale(total))?;
    let wy = r.measured_grid().widths().to_vec();
    let counts: Vec<f64> = folded
        .values()
        .iter()
        .zip(&wy)
        .map(|(v, w)| (v * w).max(0.0))
        .collect();
    let g_counts = Histogram::new(r.measured_grid().clone(), counts, Kind::Counts)?;

    write_response(&out_dir.join("response.csv"), &r)?;
    write_histogram(&out_dir.join("truth.csv"), &f_true)?;
    write_histogram(&out_dir.join("measured.csv"), &g_counts)?;

    let cfg = Config {
        n_max: 200,
        seed,
        ..Config::default()
    };
    let report = build_report(&r, &g_counts, &cfg, out_dir)?;
    let json = report_json(&report)?;
    std::fs::write(out_dir.join("report.json"), &json)
        .map_err(|e| CliError::Write(format!("cannot write report.json: {e}")))?;
    std::fs::write(out_dir.join("report.plot.csv"), plot_csv(&report))
        .map_err(|e| CliError::Write(format!("cannot write report.plot.csv: {e}")))?;

    let k = compute_k(&r)?;
    println!("K = {k:.6}");
    if r.truth_grid().n_bins() <= ORACLE_SIZE_CAP {
        let op = CompositeOperator::from_response(&r)?;
        let dec = SpectralDecomposition::decompose(&op)?;
        let spectrum = dec.spectrum();
        println!(
            "spectrum of A: [{:.6}, {:.6}], kernel dimension {}",
            spectrum.first().unwrap(),
            spectrum.last().unwrap(),
            dec.kernel_dim()
        );
    }
    let probe = &report.injectivity_probe;
    if probe.decayed {
        println!(
            "kernel probe: decays to {:.3e} after {} orders (no kernel detected)",
            probe.final_value, probe.orders
        );
    } else {
        println!(
            "kernel probe: plateau at {:.3e} after {} orders (non-trivial kernel)",
            probe.final_value, probe.orders
        );
    }
    println!("N_opt = {}", report.n_opt);

    if let ToyKind::ScaledIdentity { c, .. } = toy {
        // The residual contracts geometrically for this operator.
        let g = g_counts.counts_to_density()?.scale(1.0 / total);
        let trace = run(&r, &g, 6, None)?;
        let fnorm = f_true.l2_norm();
        println!("residual law check (expected c^(N+1) * ||f||):");
        for n in 0..=5usize {
            let resid = f_true.grid().l2_norm(
                &f_true
                    .values()
                    .iter()
                    .zip(trace.f(n)?.values())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            println!(
                "  N = {n}: ||f - f_N|| = {resid:.9e}, c^{}*||f|| = {:.9e}",
                n + 1,
                c.powi(n as i32 + 1) * fnorm
            );
        }
    }
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}
