use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use yoso::engine::{forward, gradient_check, initial_measurements, Activation, GradCheckShape, Propagation, Trainer};
use yoso::graph::{normalized_laplacian, Graph};
use yoso::io::run::{build_task, heatmap_csv, heatmap_sweep, load_bundle, HEATMAP_FILE};
use yoso::io::{
    generate_synthetic, run, save_dataset, write_atomic, GraphModel, ModelSnapshot, RunConfig, SyntheticSpec,
};
use yoso::numerics::{random_orthonormal, Purpose, RngStream};
use yoso::oracle::{check_error_bound, full_participation_forward};
use yoso::recovery::{exhaustive_recover, ista_recover_debiased, significant_rows, RecoveryProblem, EXHAUSTIVE_LIMIT};
use yoso::sampler::{estimate_rip, random_row_sparse, SamplerConfig, SamplingOperator};
use yoso::{Error, Result};

#[derive(Parser)]
#[command(
    name = "yoso",
    version,
    about = "One-shot compressed-sensing sampling for GNN training"
)]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample once, train, evaluate on the test split and write artifacts.
    Train,
    /// Re-evaluate a saved model on its dataset's test split.
    Eval {
        /// Defaults to model.json in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Recover a planted row-sparse signal from its measurements.
    Recover(RecoverArgs),
    /// Diagnostics on the sampling operator and the gradients.
    #[command(subcommand)]
    Check(Check),
    /// Train once per M and write the |H_ref − UĤ| heatmaps.
    Heatmap {
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
        ms: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum Check {
    /// Numerical rank of Φ.
    Rank,
    /// Empirical restricted-isometry constant of Φ against a random orthonormal basis.
    Rip {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Analytic gradients against central finite differences.
    Grad {
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Trains, then compares ‖H̃ − H_ref‖ with the propagated error bound.
    Bound {
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        trials: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Sbm,
    ErdosRenyi,
    BarabasiAlbert,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Falls back to the config's `synthetic` spec when omitted.
    #[arg(long, value_enum)]
    kind: Option<GenKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [200, 200])]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    attach: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Fraction of edges held out for link prediction.
    #[arg(long)]
    link_holdout: Option<f64>,
}

#[derive(clap::Args)]
struct RecoverArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// λ as a fraction of the smallest λ that zeroes the solution.
    #[arg(long, default_value_t = 1e-4)]
    lambda_scale: f64,
    #[arg(long, default_value_t = 2_000_000)]
    max_iters: usize,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn train(cfg: &RunConfig) -> Result<Value> {
    let summary = run(cfg)?;
    info!("wrote artifacts to {}", cfg.output_dir.display());
    Ok(json!({ "test": summary.test, "timing": summary.timing, "output_dir": cfg.output_dir }))
}

fn eval(cfg: &RunConfig, model: Option<PathBuf>) -> Result<Value> {
    let path = model.unwrap_or_else(|| cfg.output_dir.join("model.json"));
    let snapshot = ModelSnapshot::load(&path)?;
    Ok(serde_json::to_value(yoso::io::run::evaluate_snapshot(&snapshot)?)?)
}

fn gen(cfg: &RunConfig, args: &GenArgs) -> Result<Value> {
    let spec = match args.kind {
        None => cfg
            .synthetic
            .clone()
            .ok_or_else(|| Error::InvalidParams("gen needs --kind or a config with `synthetic`".into()))?,
        Some(kind) => {
            let model = match kind {
                GenKind::Sbm => GraphModel::Sbm {
                    block_sizes: args.blocks.clone(),
                    p_in: args.p_in,
                    p_out: args.p_out,
                },
                GenKind::ErdosRenyi => GraphModel::ErdosRenyi { n: args.n, p: args.p },
                GenKind::BarabasiAlbert => GraphModel::BarabasiAlbert {
                    n: args.n,
                    attach: args.attach,
                },
            };
            SyntheticSpec {
                feature_dim: args.feature_dim,
                separation: args.separation,
                link_holdout: args.link_holdout,
                ..SyntheticSpec::new(model)
            }
        }
    };
    let bundle = generate_synthetic(&spec, cfg.seed)?;
    save_dataset(&bundle, &cfg.output_dir)?;
    Ok(json!({
        "output_dir": cfg.output_dir,
        "nodes": bundle.graph.num_nodes(),
        "edges": bundle.graph.num_edges(),
        "feature_dim": bundle.features.ncols(),
    }))
}

fn recover(cfg: &RunConfig, args: &RecoverArgs) -> Result<Value> {
    let n = args.n;
    if n < 3 || args.k > n {
        return Err(Error::InvalidParams(format!(
            "need 3 ≤ n and k ≤ n, got n={n}, k={}",
            args.k
        )));
    }
    let mut rng = RngStream::new(cfg.seed, Purpose::Data);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n {
        edges.push((rng.below(n), rng.below(n)));
    }
    let g = Graph::build(&edges, n)?;
    let op = SamplingOperator::construct(&g, &normalized_laplacian(&g), &SamplerConfig::new(args.m), cfg.seed)?;
    let u = random_orthonormal(n, &mut rng);
    let a = op.phi.mul_dense(&u)?;
    let mut pool: Vec<usize> = (0..n).collect();
    let planted = random_row_sparse(n, args.d, args.k, &mut pool, &mut rng);
    let t = &a * &planted;
    let correlations = a.transpose() * &t;
    let lambda_max = (0..n).map(|i| correlations.row(i).norm()).fold(0.0, f64::max);
    let mut problem = RecoveryProblem::new(&t, &a, args.lambda_scale * lambda_max);
    problem.max_iters = args.max_iters;
    problem.tol = 1e-15;
    let ista = ista_recover_debiased(&problem, 1e-2)?;
    let exhaustive = match exhaustive_recover(&t, &a, args.k) {
        Ok(ex) => Some(ex),
        Err(Error::TooLarge { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(json!({
        "n": n, "m": args.m, "k": args.k, "d": args.d,
        "lambda": problem.lambda,
        "iterations": ista.ista.iterations_used,
        "planted_support": significant_rows(&planted, 1e-12),
        "recovered_support": ista.support,
        "relative_error": (&ista.h - &planted).norm() / planted.norm(),
        "exhaustive_support": exhaustive.as_ref().map(|e| e.support.clone()),
        "exhaustive_limit": EXHAUSTIVE_LIMIT.to_string(),
    }))
}

fn operator(cfg: &RunConfig) -> Result<SamplingOperator> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    SamplingOperator::construct(
        &bundle.graph,
        &normalized_laplacian(&bundle.graph),
        &cfg.sampler(),
        cfg.seed,
    )
}

fn check(cfg: &RunConfig, what: &Check) -> Result<Value> {
    match what {
        Check::Rank => {
            let op = operator(cfg)?;
            Ok(json!({
                "m": op.m(), "n": op.n(), "rank": op.rank,
                "full_rank": op.rank == op.m(), "sigma_retries": op.sigma_retries,
            }))
        }
        Check::Rip { k, trials } => {
            let op = operator(cfg)?;
            let mut rng = RngStream::new(cfg.seed, Purpose::Data).derive(1);
            let u = random_orthonormal(op.n(), &mut rng);
            let est = estimate_rip(
                &op.phi,
                &u,
                k.unwrap_or(cfg.rip_k),
                trials.unwrap_or(cfg.rip_trials),
                &mut rng,
            )?;
            Ok(serde_json::to_value(est)?)
        }
        Check::Grad { instances } => {
            let shape = GradCheckShape::default();
            let mut out = serde_json::Map::new();
            for (name, act) in [("identity", Activation::Identity), ("relu", Activation::Relu)] {
                let rep = gradient_check(&shape, *instances, act, cfg.seed)?;
                out.insert(name.into(), json!({ "report": rep, "pass": rep.worst() <= 1e-4 }));
            }
            Ok(Value::Object(out))
        }
        Check::Bound { k, trials } => bound(cfg, *k, *trials),
    }
}

fn bound(cfg: &RunConfig, k: usize, trials: usize) -> Result<Value> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    let task = build_task(cfg, &bundle)?;
    let mut trainer = Trainer::new(cfg.hyperparams(), cfg.sampler(), cfg.seed)?;
    let out = trainer.train(&bundle.graph, &bundle.features, &task)?;
    let phi = &out.operator.phi;
    let prop = Propagation::new(phi, &out.a_hat)?;
    let z = forward(
        &prop.phi_a,
        &out.params,
        &initial_measurements(phi, &bundle.features)?,
        cfg.activation,
    )?
    .z;
    let mut rng = RngStream::new(cfg.seed, Purpose::Data).derive(2);
    let rip = estimate_rip(phi, &out.basis.u, k, trials, &mut rng)?;
    let h_ref = full_participation_forward(&out.a_hat, &out.params, &bundle.features, cfg.activation, phi)?;
    let h_tilde = out.embeddings();
    match check_error_bound(
        &h_ref,
        &h_tilde,
        &z,
        phi,
        &out.basis.u,
        &out.code.h,
        rip.delta_hat,
        cfg.activation.lipschitz(),
        cfg.layers,
    ) {
        Ok(report) => Ok(serde_json::to_value(report)?),
        Err(Error::DeltaOutOfRange(delta)) => Ok(json!({
            "delta_hat": delta,
            "vacuous": true,
            "measured_error": (&h_tilde - &h_ref).norm(),
            "residual_norm": (&z - phi.mul_dense(&h_tilde)?).norm(),
        })),
        Err(e) => Err(e),
    }
}

fn heatmap(cfg: &RunConfig, ms: &[usize]) -> Result<Value> {
    let maps = heatmap_sweep(cfg, ms)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join(HEATMAP_FILE), heatmap_csv(&maps).as_bytes())?;
    let means: Vec<Value> = maps.iter().map(|(m, h)| json!({ "m": m, "mean": h.mean() })).collect();
    Ok(json!({ "output": cfg.output_dir.join(HEATMAP_FILE), "means": means }))
}

fn dispatch(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => train(&cfg),
        Command::Eval { model } => eval(&cfg, model.clone()),
        Command::Gen(args) => gen(&cfg, args),
        Command::Recover(args) => recover(&cfg, args),
        Command::Check(what) => check(&cfg, what),
        Command::Heatmap { ms } => heatmap(&cfg, ms),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(value) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&value).expect("JSON values always serialize")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
