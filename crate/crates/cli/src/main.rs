use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nalu_core::dataset::{Operation, Range};
use nalu_core::experiment::{run_seed, ModelPreset};
use nalu_core::sequence::{run_sequence_study, SequenceConfig};
use nalu_lab::exports::{
    gate_histograms, gating_rows, landscape_rows, nacmul_moment_rows, nmu_moment_rows, weight_moment_rows, write_csv,
};
use nalu_lab::manifest::{Manifest, Seeds};
use nalu_lab::records::{config_hash, read_records, summarize_records, write_summary_csv, ResultRecord};
use nalu_lab::runner::{run_manifest, run_suite, SweepParam};

#[derive(Parser)]
#[command(name = "nalu-lab", version, about = "Neural arithmetic unit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment settings; each overrides the manifest key of the same name.
#[derive(Args, Clone, Debug, Default)]
struct ExperimentFlags {
    /// Base manifest; flags override its keys.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelPreset>,
    #[arg(long)]
    operation: Option<Operation>,
    #[arg(long)]
    static10: bool,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    subset_ratio: Option<f64>,
    #[arg(long)]
    overlap_ratio: Option<f64>,
    #[arg(long)]
    interpolation_range: Option<Range>,
    #[arg(long)]
    extrapolation_range: Option<Range>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_iterations: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Sparsity regularizer strength λ̂.
    #[arg(long)]
    regularizer: Option<f64>,
    /// Multiplier on the regularizer ramp points.
    #[arg(long)]
    regularizer_scaling: Option<f64>,
    #[arg(long)]
    nmu_init_variance: Option<f64>,
    #[arg(long)]
    threshold_eps: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ExperimentFlags {
    fn manifest(&self) -> Result<Manifest> {
        let base = match &self.manifest {
            Some(p) => Manifest::load(p)?,
            None => Manifest::default(),
        };
        let flags = Manifest {
            model: self.model,
            operation: self.operation,
            static10: self.static10.then_some(true),
            hidden_size: self.hidden_size,
            input_size: self.input_size,
            subset_ratio: self.subset_ratio,
            overlap_ratio: self.overlap_ratio,
            interpolation_range: self.interpolation_range.clone(),
            extrapolation_range: self.extrapolation_range.clone(),
            batch_size: self.batch_size,
            max_iterations: self.max_iterations,
            eval_every: self.eval_every,
            learning_rate: self.learning_rate,
            regularizer: self.regularizer,
            regularizer_scaling: self.regularizer_scaling,
            nmu_init_variance: self.nmu_init_variance,
            threshold_eps: self.threshold_eps,
            workers: self.workers,
            output: self.output.clone(),
            ..Manifest::default()
        };
        let m = base.overlay(&flags);
        m.config()?;
        Ok(m)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed and print its result record.
    Train {
        #[command(flatten)]
        flags: ExperimentFlags,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the evaluation snapshots as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every seed of a manifest, skipping completed ones.
    Run {
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a manifest once per value of one parameter.
    Sweep {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid; defaults to the standard grid of the parameter.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize a results file per (model, operation, config).
    Summarize {
        results: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Monte-Carlo moments against closed forms, as CSV.
    Moments {
        #[command(subcommand)]
        which: MomentsKind,
        #[arg(long, global = true, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, global = true, default_value_t = 0)]
        seed: u64,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
    /// Loss landscape of the tied two-weight model, as CSV.
    Landscape {
        #[arg(long, value_delimiter = ',', default_values_t = [1e-7, 0.1, 1.0])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 2.0)]
        hi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gate values of the gated models per seed, as CSV.
    Gates {
        #[command(flatten)]
        flags: ExperimentFlags,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recurrent digit-sequence task with the exact-cell baseline.
    Sequence {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        baseline_seeds: u64,
        #[arg(long)]
        max_iterations: Option<u64>,
        #[arg(long)]
        glyph_noise: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MomentsKind {
    /// NMU output with `W ~ U[0,1]`, `z ~ N(0,1)`.
    Nmu {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        hidden: Vec<usize>,
    },
    /// NAC weight `tanh(Ŵ)σ(M̂)` with `Ŵ, M̂ ~ U[-r, r]`.
    Weight {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
        r: Vec<f64>,
    },
    /// Exp-log layer output with NAC weights and `z ~ N(e_z, sd_z²)`.
    NacMul {
        #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.5])]
        r: Vec<f64>,
        #[arg(long, default_value_t = 1.5)]
        e_z: f64,
        #[arg(long, default_value_t = 1e-3)]
        sd_z: f64,
        #[arg(long, default_value_t = 2)]
        hidden: usize,
    },
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_report(r: &nalu_lab::runner::SuiteReport) {
    let s = &r.summary;
    println!(
        "{} {} [{}]: {} new, {} skipped; success {} ({}/{}), median solved {:?}, sparsity {:?}",
        s.model,
        s.op,
        &r.config_hash[..12],
        r.new_records,
        r.skipped,
        s.success_text,
        s.successes,
        s.trials,
        s.solved_at_median,
        s.sparsity_mean
    );
    println!("summary: {}", r.summary_path.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { flags, seed, trace } => {
            let m = flags.manifest()?;
            let cfg = m.config()?;
            let run = run_seed(&cfg, seed)?;
            let rec = ResultRecord::new(&cfg, &config_hash(&cfg), &run);
            println!("{}", serde_json::to_string_pretty(&rec)?);
            if let Some(p) = trace {
                std::fs::write(&p, serde_json::to_string_pretty(&run.trace.records)?)?;
            }
        }
        Command::Run { manifest, workers, output } => {
            let m = Manifest::load(&manifest)?.overlay(&Manifest {
                workers,
                output,
                ..Manifest::default()
            });
            print_report(&run_manifest(&m)?);
        }
        Command::Sweep {
            manifest,
            param,
            values,
            workers,
            output,
        } => {
            let m = Manifest::load(&manifest)?.overlay(&Manifest {
                workers,
                output,
                ..Manifest::default()
            });
            let values = if values.is_empty() { param.default_values() } else { values };
            for point in param.expand(&m, &values)? {
                let r = run_suite(
                    &point.config()?,
                    &point.seeds(),
                    &point.output(),
                    point.workers(),
                    point.confidence_level(),
                )?;
                print_report(&r);
            }
        }
        Command::Summarize { results, level, csv } => {
            let rows = summarize_records(&read_records(&results)?, level)?;
            for r in &rows {
                println!(
                    "{:<14} {:<6} {}  success {:<16} median solved {:>10}  sparsity {}",
                    r.model.name(),
                    r.op.name(),
                    &r.config_hash[..12],
                    r.success_text,
                    r.solved_at_median.map_or("-".into(), |v| format!("{v:.0}")),
                    r.sparsity_mean.map_or("-".into(), |v| format!("{v:.3e}")),
                );
            }
            if let Some(p) = csv {
                write_summary_csv(&rows, &p)?;
            }
        }
        Command::Moments { which, samples, seed, out } => {
            let rows = match which {
                MomentsKind::Nmu { hidden } => nmu_moment_rows(&hidden, samples, seed)?,
                MomentsKind::Weight { r } => weight_moment_rows(&r, samples, seed)?,
                MomentsKind::NacMul { r, e_z, sd_z, hidden } => nacmul_moment_rows(&r, e_z, sd_z, hidden, samples, seed)?,
            };
            write_csv(&rows, sink(&out)?)?;
        }
        Command::Landscape {
            eps,
            resolution,
            lo,
            hi,
            out,
        } => write_csv(&landscape_rows(&eps, lo, hi, resolution)?, sink(&out)?)?,
        Command::Gates { flags, seeds, bins, out } => {
            let m = flags.manifest()?;
            let cfg = m.config()?;
            let seeds = Seeds::Count(seeds).to_vec();
            let rows = gating_rows(&cfg, cfg.dataset.operation, &seeds, m.workers())?;
            for (model, h) in gate_histograms(&rows, bins)? {
                let ok = rows.iter().filter(|r| r.model == model && r.success).count();
                eprintln!("{model}: {ok}/{} solved, gate histogram {:?} (+{} missing)", seeds.len(), h.counts, h.missing);
            }
            write_csv(&rows, sink(&out)?)?;
        }
        Command::Sequence {
            seeds,
            baseline_seeds,
            max_iterations,
            glyph_noise,
            out,
        } => {
            let mut cfg = SequenceConfig::default();
            if let Some(n) = max_iterations {
                cfg.max_iterations = n;
            }
            if let Some(g) = glyph_noise {
                cfg.glyph_noise = g;
            }
            let seeds: Vec<u64> = (0..seeds).collect();
            let baseline: Vec<u64> = (0..baseline_seeds).map(|s| s + 1_000_000).collect();
            let study = run_sequence_study(&cfg, &seeds, &baseline)?;
            eprintln!(
                "exact weights {}/{}, below threshold {:.4e}: {}/{}",
                study.exact_count(),
                seeds.len(),
                study.threshold,
                study.success_count(),
                seeds.len()
            );
            writeln!(sink(&out)?, "{}", serde_json::to_string_pretty(&study)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
