use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tm3_core::theory::{quadrature_expectation, DistributionSpec};
use tm3_core::{mc_estimate, TrackerConfig};
use tm3_eval::error::{EvalError, Result};
use tm3_eval::output::curves_svg;
use tm3_eval::{
    evaluate, load_sequence, parse_synth_spec, parse_tracker_config, read_results_csv, run_tracker, synth_sequence,
    write_metrics_csv, write_results_csv, write_theory_csv,
};

#[derive(Parser)]
#[command(name = "tm3", version, about = "Template matching tracker with memory-filtered templates")]
struct Cli {
    /// Overrides the seed of the tracker, generator or Monte Carlo run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence directory (`img/` + `groundtruth_rect.txt`).
    Track {
        seq_dir: PathBuf,
        /// key = value tracker settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Score a results file against a sequence's groundtruth.
    Eval {
        results: PathBuf,
        seq_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Render a synthetic sequence from a key = value spec.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo and quadrature check of the similarity variance results.
    VerifyTheory {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma1: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track { seq_dir, config, out } => {
            let mut cfg = match &config {
                Some(p) => parse_tracker_config(&read_text(p)?, &file_label(p))?,
                None => TrackerConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let seq = load_sequence(&seq_dir)?;
            let images = seq.load_images()?;
            let rows = run_tracker(&cfg, &images, seq.groundtruth[0])?;
            write_results_csv(&out, &rows)?;
            let report = evaluate(&rows, &seq.groundtruth)?;
            eprintln!("{}: {} frames, auc {:.4}, precision@20 {:.4}", seq.name, rows.len(), report.auc, report.precision_at_20);
        }
        Command::Eval { results, seq_dir, out, plot } => {
            let seq = load_sequence(&seq_dir)?;
            let rows = read_results_csv(&results)?;
            let report = evaluate(&rows, &seq.groundtruth)?;
            write_metrics_csv(&out, &report)?;
            if let Some(p) = plot {
                fs::write(&p, curves_svg(&report, &seq.name)).map_err(|source| EvalError::Io { path: p, source })?;
            }
            println!("auc {:.6}\nprecision_at_20 {:.6}", report.auc, report.precision_at_20);
        }
        Command::Synth { spec, out } => {
            let mut s = parse_synth_spec(&read_text(&spec)?, &file_label(&spec))?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let seq = synth_sequence(&s)?;
            seq.write(&out)?;
            eprintln!("wrote {} frames to {}", seq.images.len(), out.display());
        }
        Command::VerifyTheory { trials, n, m, sigma1, out } => {
            let g = DistributionSpec::standard_normal();
            let report = mc_estimate(&g, &g, n, m, sigma1, trials, cli.seed.unwrap_or(0))?;
            let quad = quadrature_expectation(&g, &g, n, m, sigma1)?;
            write_theory_csv(&out, &report, &quad)?;
            println!(
                "surrogate margin {:.6e} ± {:.2e} ({}); variance identity gap {:.2e} ({})",
                report.lemma3_margin.value,
                report.lemma3_margin.std_error,
                if report.lemma3_holds { "positive" } else { "not significant" },
                report.theorem1_identity_gap,
                if report.theorem1_holds { "holds" } else { "fails" },
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
