//! Command-line drivers: training runs, the four experiments, and ad hoc
//! SVCCA comparisons between activation dumps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gan_introspect::config::ConfigFile;
use gan_introspect::dataio::{normalize_per_domain, read_amat, synth_dataset};
use gan_introspect::error::{Error, Result};
use gan_introspect::experiments::{
    default_depth_sweep, emit_csv, exp1_similarity_vs_init, exp2_transfer, exp3_frozen,
    exp4_depth_sweep, paper_freeze_variants, Exp4Sweep,
};
use gan_introspect::net::{load_checkpoint, save_checkpoint, NetworkCheckpoint};
use gan_introspect::svcca::{cca, center_rows, svd_reduce};
use gan_introspect::trainer::{train, InitFrom};

#[derive(Parser)]
#[command(
    name = "gan-introspect",
    about = "Multi-domain voice-conversion GAN workbench with SVCCA similarity analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training run and write checkpoints plus the loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Similarity of every checkpoint to the random initialization.
    Exp1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Transfer learning: similarity to the pre-transfer network.
    Exp2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Base checkpoint; overrides the config, which otherwise trains the
        /// base run itself.
        #[arg(long)]
        base_ckpt: Option<PathBuf>,
    },
    /// Frozen repeat-layer variants compared against the unfrozen optimum.
    Exp3 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Force the A = {R2,R3}, B = {R4,R5}, C = {R6,R7,R8} variants.
        #[arg(long)]
        paper_variants: bool,
    },
    /// Depth sweep over the repeat-block count.
    Exp4 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated repeat depths, e.g. 3,5,7,9,11,13,15.
        #[arg(long)]
        depths: Option<String>,
    },
    /// SVCCA similarity between two activation-matrix files.
    Svcca {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        threshold: f64,
        #[arg(long, default_value_t = 1e-10)]
        ridge: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::DivergenceError { iteration, what }) => {
            eprintln!("error: training diverged at iteration {}: {}", iteration, what);
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(2)
        }
    }
}

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out } => {
            let cfg = ConfigFile::load(&config)?;
            ensure_out(&out)?;
            let (mut ds, stats) = synth_dataset(&cfg.dataset)?;
            normalize_per_domain(&mut ds, &stats)?;
            let init_ckpt = match &cfg.train.init_from {
                Some(path) => Some(load_checkpoint(path)?),
                None => None,
            };
            let init = match &init_ckpt {
                Some(c) => InitFrom::Transfer(c),
                None => InitFrom::Fresh,
            };
            let outcome = train(&cfg.generator, &cfg.train, &ds, init)?;
            for ckpt in &outcome.checkpoints {
                save_checkpoint(ckpt, &out.join(format!("ckpt_{:06}.gick", ckpt.iteration)))?;
            }
            std::fs::write(out.join("trainlog.csv"), outcome.log.to_csv_string())?;
            if let Some(it) = outcome.log.diverged_at {
                return Err(Error::DivergenceError {
                    iteration: it,
                    what: "non-finite loss".into(),
                });
            }
            println!(
                "trained {} iterations in {:.1}s, {} checkpoints -> {}",
                cfg.train.total_iterations,
                outcome.log.wall_time_secs,
                outcome.checkpoints.len(),
                out.display()
            );
            Ok(())
        }
        Command::Exp1 { config, out } => {
            let cfg = ConfigFile::load(&config)?;
            ensure_out(&out)?;
            let ecfg = cfg.experiment_config();
            for &seed in &cfg.seeds {
                let result = exp1_similarity_vs_init(&ecfg, seed)?;
                emit_csv(&result.report, &out.join(format!("exp1_seed{}.csv", seed)))?;
                save_checkpoint(
                    &result.outcome.final_checkpoint,
                    &out.join(format!("exp1_seed{}_final.gick", seed)),
                )?;
                std::fs::write(
                    out.join(format!("exp1_seed{}_trainlog.csv", seed)),
                    result.outcome.log.to_csv_string(),
                )?;
                println!("exp1 seed {} done ({} rows)", seed, result.report.rows.len());
            }
            Ok(())
        }
        Command::Exp2 {
            config,
            out,
            base_ckpt,
        } => {
            let cfg = ConfigFile::load(&config)?;
            ensure_out(&out)?;
            let ecfg = cfg.experiment_config();
            let base_path = base_ckpt.or(cfg.base_checkpoint.clone());
            let base: NetworkCheckpoint = match base_path {
                Some(p) => load_checkpoint(&p)?,
                None => {
                    println!("no base checkpoint given; training the base run first");
                    let base_run = exp1_similarity_vs_init(&ecfg, cfg.seeds[0])?;
                    let ckpt = base_run.outcome.final_checkpoint.clone();
                    save_checkpoint(&ckpt, &out.join("exp2_base.gick"))?;
                    ckpt
                }
            };
            for &seed in &cfg.seeds {
                let result = exp2_transfer(&ecfg, &base, seed)?;
                emit_csv(&result.report, &out.join(format!("exp2_seed{}.csv", seed)))?;
                emit_csv(
                    &result.baseline_report,
                    &out.join(format!("exp2_seed{}_baseline.csv", seed)),
                )?;
                println!("exp2 seed {} done", seed);
            }
            Ok(())
        }
        Command::Exp3 {
            config,
            out,
            paper_variants,
        } => {
            let cfg = ConfigFile::load(&config)?;
            ensure_out(&out)?;
            let ecfg = cfg.experiment_config();
            let variants = if paper_variants {
                paper_freeze_variants()
            } else {
                cfg.variants.clone().unwrap_or_else(paper_freeze_variants)
            };
            let result = exp3_frozen(&ecfg, &variants, cfg.seeds[0])?;
            for v in &result.variants {
                emit_csv(&v.report, &out.join(format!("exp3_variant{}.csv", v.label)))?;
                if !v.frozen_bit_equal {
                    return Err(Error::ContractViolation(format!(
                        "variant {} frozen layers changed during training",
                        v.label
                    )));
                }
                println!(
                    "exp3 variant {} (frozen {:?}): frozen params bit-identical to init",
                    v.label, v.frozen
                );
            }
            Ok(())
        }
        Command::Exp4 {
            config,
            out,
            depths,
        } => {
            let cfg = ConfigFile::load(&config)?;
            ensure_out(&out)?;
            let ecfg = cfg.experiment_config();
            let depth_list: Vec<usize> = match depths {
                Some(text) => text
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::ConfigError(format!("bad depth {:?}", s)))
                    })
                    .collect::<Result<_>>()?,
                None => cfg.depths.clone().unwrap_or_else(default_depth_sweep),
            };
            let sweep = exp4_depth_sweep(&ecfg, &depth_list, cfg.seeds[0])?;
            write_exp4(&sweep, &out)?;
            println!("exp4 swept {} depths -> {}", sweep.rows.len(), out.display());
            Ok(())
        }
        Command::Svcca {
            a,
            b,
            threshold,
            ridge,
        } => {
            let ma = read_amat(&a)?;
            let mb = read_amat(&b)?;
            let ra = svd_reduce(&center_rows(&ma)?, threshold)?;
            let rb = svd_reduce(&center_rows(&mb)?, threshold)?;
            let result = cca(&ra, &rb, ridge)?;
            println!(
                "layers {} vs {}: retained {} / {} directions",
                ma.layer_name, mb.layer_name, result.retained_x, result.retained_y
            );
            for (i, c) in result.correlations.iter().enumerate() {
                println!("  rho_{:<2} = {:.6}", i + 1, c);
            }
            println!("mean similarity = {:.6}", result.mean());
            Ok(())
        }
    }
}

fn write_exp4(sweep: &Exp4Sweep, out: &Path) -> Result<()> {
    let mut s = String::from(
        "seed,depth,final_total_g,final_cyc,min_repeat_grad_norm,converged,mode_collapse_index\n",
    );
    for r in &sweep.rows {
        s.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{:.16e}\n",
            sweep.seed,
            r.depth,
            r.final_total_g,
            r.final_cyc,
            r.min_repeat_grad_norm,
            r.converged,
            r.mode_collapse_index
        ));
    }
    std::fs::write(out.join("exp4_sweep.csv"), s)?;

    let mut g = String::from("seed,depth,checkpoint,layer,mean_grad_norm\n");
    for (depth, ckpt, layer, norm) in &sweep.grad_norm_rows {
        g.push_str(&format!(
            "{},{},{},{},{:.16e}\n",
            sweep.seed, depth, ckpt, layer, norm
        ));
    }
    std::fs::write(out.join("exp4_gradnorms.csv"), g)?;
    Ok(())
}
