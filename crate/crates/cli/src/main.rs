use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use wyimvc::data::{apply_missing, load_dataset, read_dataset_raw, synthesize, write_dataset, MultiviewDataset};
use wyimvc::dca::solve;
use wyimvc::eval::{clustering_accuracy, render_csv, run_experiment, ExperimentConfig};
use wyimvc::pipeline::WyimvcModel;
use wyimvc::JointPmf;

#[derive(Parser, Debug)]
#[command(name = "wyimvc", version, about = "Common-information solvers and clustering for multiview data with missing views")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Random seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML, one table per module).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the exact fixed-point solver on a joint pmf file and print its trace.
    SolveDiscrete {
        #[arg(long, value_name = "FILE")]
        pmf: PathBuf,
        /// Total bipartition weight, split evenly across the bipartitions.
        #[arg(long)]
        kappa: Option<f64>,
        /// Cardinality of the common variable.
        #[arg(long)]
        z_card: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Mask views of a fraction of the samples of a dataset directory.
    Mask {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        /// Output directory (defaults to rewriting the input's mask).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Fit a model on a dataset directory and write a checkpoint.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset directory.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Write `sample,label,p_0,...` rows here.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        /// Write `sample,view,features...` rows for every masked view here.
        #[arg(long, value_name = "FILE")]
        imputations: Option<PathBuf>,
    },
    /// Sweep missing rates and seeds and write the accuracy CSV.
    Run {
        /// Overrides the output path of the config.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn solve_discrete(
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    pmf: &Path,
    kappa: Option<f64>,
    z_card: Option<usize>,
    max_iters: Option<usize>,
    tol: Option<f64>,
) -> Result<()> {
    let text = fs::read_to_string(pmf).with_context(|| format!("reading {}", pmf.display()))?;
    let joint = JointPmf::from_text(&text)?;
    let mut section = cfg.solver.clone();
    if let Some(k) = kappa {
        section.kappa_total = k;
    }
    if let Some(s) = seed {
        section.seed = s;
    }
    if let Some(m) = max_iters {
        section.max_iters = m;
    }
    if let Some(t) = tol {
        section.tol = t;
    }
    let weights = section.kappa(joint.views())?;
    let z = z_card
        .or(section.z_cardinality)
        .unwrap_or_else(|| joint.cardinalities().iter().copied().max().unwrap_or(2));
    let solution = solve(&joint, &weights, z, &section.solver_config())?;
    print!("{}", solution.trace.render(weights.splits()));
    println!(
        "# converged={} iterations={}",
        solution.converged, solution.iterations
    );
    Ok(())
}

fn read_complete(dir: &Path) -> Result<MultiviewDataset> {
    let ds = read_dataset_raw(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    if ds.is_complete() {
        return Ok(ds);
    }
    let meta = ds.meta().clone();
    MultiviewDataset::new(ds.views().to_vec(), ds.labels().to_vec(), None, meta)
        .context("masked entries must hold finite values to re-mask a dataset")
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.global.config.as_deref())?;
    let seed = cli.global.seed;
    match cli.command {
        Command::SolveDiscrete {
            pmf,
            kappa,
            z_card,
            max_iters,
            tol,
        } => solve_discrete(&cfg, seed, &pmf, kappa, z_card, max_iters, tol)?,
        Command::Synth {
            out,
            clusters,
            views,
            dim,
            separation,
            noise,
            samples,
        } => {
            let mut spec = cfg.synthetic.spec();
            spec.clusters = clusters.unwrap_or(spec.clusters);
            spec.views = views.unwrap_or(spec.views);
            spec.dim = dim.unwrap_or(spec.dim);
            spec.separation = separation.unwrap_or(spec.separation);
            spec.noise = noise.unwrap_or(spec.noise);
            spec.samples = samples.unwrap_or(spec.samples);
            let ds = synthesize(&spec, seed.unwrap_or(cfg.synthetic.seed))?;
            write_dataset(&ds, &out)?;
            eprintln!("wrote {} samples x {} views to {}", ds.len(), ds.num_views(), out.display());
        }
        Command::Mask { data, rate, out } => {
            let ds = read_complete(&data)?;
            let masked = apply_missing(&ds, rate, seed.unwrap_or(0))?;
            let out = out.unwrap_or(data);
            write_dataset(&masked, &out)?;
            eprintln!(
                "masked {} of {} samples into {}",
                masked.incomplete_count(),
                masked.len(),
                out.display()
            );
        }
        Command::Train { data, out, epochs } => {
            let ds = load_dataset(&data).with_context(|| format!("reading dataset {}", data.display()))?;
            let mut model_cfg = cfg.model_config(ds.num_clusters());
            if let Some(e) = epochs {
                model_cfg.epochs = e;
            }
            let seed = seed.or_else(|| cfg.experiment.seeds.first().copied()).unwrap_or(0);
            let (model, history) = WyimvcModel::train(model_cfg, &ds, seed)?;
            for r in &history {
                eprintln!("epoch {}\ttau {:.4}\tloss {:.6}", r.epoch, r.tau, r.loss.total);
            }
            model.save(&out)?;
            eprintln!("checkpoint written to {}", out.display());
        }
        Command::Evaluate {
            data,
            checkpoint,
            predictions,
            imputations,
        } => {
            let ds = load_dataset(&data).with_context(|| format!("reading dataset {}", data.display()))?;
            let model = WyimvcModel::load(&checkpoint)
                .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
            let preds = model.predict(&ds)?;
            let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
            let k = model.config().clusters.max(ds.num_clusters());
            let acc = clustering_accuracy(&labels, ds.labels(), k)?;
            println!("accuracy\t{acc}");
            if let Some(path) = predictions {
                let mut s = String::from("sample,label");
                for z in 0..model.config().clusters {
                    s.push_str(&format!(",p_{z}"));
                }
                s.push('\n');
                for p in &preds {
                    s.push_str(&format!("{},{}", p.sample, p.label));
                    for q in &p.probabilities {
                        s.push_str(&format!(",{q}"));
                    }
                    s.push('\n');
                }
                fs::write(&path, s)?;
            }
            if let Some(path) = imputations {
                let mut s = String::new();
                for imp in model.impute(&ds)? {
                    s.push_str(&format!("{},{}", imp.sample, imp.view + 1));
                    for f in &imp.features {
                        s.push_str(&format!(",{f}"));
                    }
                    s.push('\n');
                }
                fs::write(&path, s)?;
            }
        }
        Command::Run { output } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.experiment.seeds = vec![s];
            }
            if let Some(o) = output {
                cfg.experiment.output = o;
            }
            let records = run_experiment(&cfg)?;
            print!("{}", render_csv(&records));
            eprintln!("results written to {}", cfg.experiment.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if matches!(cli.command, Command::Run { .. }) && cli.global.config.is_none() {
        eprintln!("error: `run` requires --config <FILE>");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
