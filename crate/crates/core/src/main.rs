use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spectral_damp::data::BatchSampler;
use spectral_damp::harness::{self, Config, ExperimentData, RunMetrics};
use spectral_damp::model::Batch;
use spectral_damp::random::derive_seed;
use spectral_damp::rmt::{esd_ks_distance, monte_carlo_overlap, sample_fluctuation};
use spectral_damp::shrinkage::estimate_hessian_variance;
use spectral_damp::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Damping, shrinkage and curvature experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every grid cell and write per-epoch metrics.
    Train(Common),
    /// Train the (damping, eta) grid and write error-change tables.
    Heatmap(Common),
    /// Monte-Carlo check of spiked-ensemble overlaps and the bulk law.
    RmtValidate(Common),
    /// Estimate the batch Hessian variance at the initial point.
    EstimateDamping(Common),
    /// Sweep learning rates on a synthetic quadratic.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dataset: Option<String>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = Config::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(cfg)
    }
}

fn run_grid(cfg: &Config) -> Result<Vec<RunMetrics>> {
    let spec = cfg.experiment_spec()?;
    let data = ExperimentData::load(&spec.data)?;
    log::info!(
        "{}: {} cells x {} seeds, {} train / {} test",
        spec.name,
        spec.cells().len(),
        spec.seeds.len(),
        data.train.len(),
        data.test.len()
    );
    let runs = harness::run_experiment(&spec, &data)?;
    for r in &runs {
        let last = r.last().expect("runs record the initial point");
        println!(
            "{}  epoch {}  train_err {:.4}  test_err {:.4}  delta {:.3e}{}",
            r.run_id,
            last.epoch,
            last.train_err,
            last.test_err,
            last.delta,
            if r.diverged { "  DIVERGED" } else { "" }
        );
    }
    Ok(runs)
}

fn write_curves(runs: &[RunMetrics], out: &Path) -> Result<()> {
    harness::emit_csv(runs, out.join("metrics.csv"))?;
    harness::emit_plot_script(runs, "metrics.csv", out.join("curves.gp"))
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let runs = run_grid(&cfg)?;
    write_curves(&runs, &c.out)
}

fn heatmap(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let runs = run_grid(&cfg)?;
    write_curves(&runs, &c.out)?;
    let cells = harness::heatmap_deltas(&runs)?;
    for h in &cells {
        println!(
            "delta {:<8} eta {:<4} d_train {:.4} d_test {:.4}",
            h.delta, h.eta, h.d_train, h.d_test
        );
    }
    harness::emit_heatmap_csv(&cells, c.out.join("heatmap.csv"))?;
    harness::emit_heatmap_matrix(&cells, c.out.join("heatmap.dat"))?;
    harness::emit_heatmap_script("heatmap.dat", c.out.join("heatmap.gp"))
}

fn rmt_validate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let spec = cfg.rmt_spec()?;
    let rows = monte_carlo_overlap(&spec, cfg.rmt_seeds, cfg.seeds[0])?;
    println!(
        "s = {:.4}, bulk edge = {:.4}",
        spec.scale(),
        2.0 * spec.scale()
    );
    for r in &rows {
        println!(
            "nu/s {:>5.2}  predicted {:.4}  measured {:.4} +- {:.4}",
            r.nu / r.s,
            r.predicted,
            r.measured_mean,
            r.measured_std
        );
    }
    harness::emit_rmt_csv(&rows, c.out.join("rmt.csv"))?;
    let bulk = spectral_damp::rmt::SpikedEnsembleSpec {
        spikes: vec![],
        ..spec.clone()
    };
    let h = sample_fluctuation(&bulk, cfg.seeds[0])?;
    let eigs = spectral_damp::linalg::dense_eigvalsh(&h)?;
    println!(
        "semicircle KS distance {:.4}",
        esd_ks_distance(&eigs, &bulk.law())?
    );
    Ok(())
}

fn estimate_damping(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let spec = cfg.experiment_spec()?;
    let data = ExperimentData::load(&spec.data)?;
    let seed = cfg.seeds[0];
    let model = spec
        .model
        .build(data.train.input_dim(), data.train.classes());
    let w = model.init_params(spec.init, seed);
    let n = data.train.len();
    let mut sampler = BatchSampler::new(
        n,
        cfg.auto_damp_batch_size.min(n),
        derive_seed(seed, 2),
        false,
    )?;
    let batches: Vec<Batch> = (0..cfg.auto_damp_batches)
        .map(|_| Batch::from_dataset(&data.train, &sampler.next_batch()))
        .collect();
    let form = cfg.variance_form()?;
    let est = estimate_hessian_variance(&model, &w, &batches, cfg.auto_damp_probes, seed, form)?;
    let raw = est.per_probe.iter().sum::<f64>() / est.per_probe.len() as f64;
    let suggested = est.sigma2.max(spec.optimizer.damping);
    println!("sigma2_raw,delta_suggested");
    println!("{raw},{suggested}");
    harness::emit_probe_csv(&est.per_probe, c.out.join("probes.csv"))
}

fn stability(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let result = cfg.stability_spec()?.run()?;
    let mut text = String::from("lr,outcome\n");
    for (lr, o) in &result.outcomes {
        println!("lr {lr:<10} {o:?}");
        text.push_str(&format!("{lr},{o:?}\n"));
    }
    match result.largest_stable {
        Some(lr) => println!("largest stable learning rate: {lr}"),
        None => println!("no stable learning rate in the grid"),
    }
    let path = c.out.join("stability.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(c) => train(c),
        Command::Heatmap(c) => heatmap(c),
        Command::RmtValidate(c) => rmt_validate(c),
        Command::EstimateDamping(c) => estimate_damping(c),
        Command::Stability(c) => stability(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
