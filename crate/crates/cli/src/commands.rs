use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use bread::ais::{derive_seed, BoundPoint};
use bread::dataset::load_csv_standardized;
use bread::grid::{dominant_mode_mass, exact_analysis, ExactAnalysis};
use bread::models::{simulate_dataset, LinRegModel, Model, NoisePrior, Representation};
use bread::path::posterior_path;
use bread::protocol::{run_bread, RefreshStudyConfig};
use bread::record::{
    chain_weights_csv, curves_csv, git_blob_hash, persist_run, table_hash, table_to_csv, RunRecord,
};
use bread::transitions::VectorKernel;
use bread::{
    bdmc, forward_ais, reverse_ais, AisRun, AnnealingSchedule, BdmcResult, BoundCurve, ChainRng,
    Direction, KernelSpec,
};
use rand::SeedableRng;
use serde::Serialize;

use crate::config::{parse_noise, BuiltModel, FileConfig, KernelFlags, ModelSpec, TargetSpec};
use crate::output::Outputs;
use crate::{Cli, Command, KernelArgs, ModelArgs, SweepArgs, TargetArgs, UsageError};

// sub-seed labels
const GRID: u64 = 1;
const DESIGN: u64 = 2;
const DATA: u64 = 3;
const SWEEP: u64 = 100;

const DEFAULT_CHAINS: usize = 16;

struct Ctx {
    file: FileConfig,
    seed: u64,
    seed_source: &'static str,
    timings: bool,
    out: Outputs,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Report { input } = &cli.command {
        return crate::report::print(input);
    }
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.global.threads.or(file.threads) {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let (seed, seed_source) = match (cli.global.seed, file.seed) {
        (Some(s), _) => (s, "flag"),
        (None, Some(s)) => (s, "config"),
        (None, None) => (rand::random(), "entropy"),
    };
    let timings = cli.global.timings || file.record_timings.unwrap_or(false);
    let ctx = Ctx {
        file,
        seed,
        seed_source,
        timings,
        out: Outputs::new(&cli.global.out_dir),
    };
    match cli.command {
        Command::ToyExact { target, stages } => toy_exact(ctx, &target, stages),
        Command::ToyAis {
            target,
            sweep,
            steps_per_stage,
        } => toy_ais(ctx, &target, &sweep, steps_per_stage),
        Command::Bdmc {
            model,
            kernel,
            sweep,
        } => bdmc_command(ctx, &model, &kernel, &sweep),
        Command::Simulate { model } => simulate(ctx, &model),
        Command::Bread {
            data,
            target_column,
            noise,
            noise_scale,
            kernel,
            sweep,
            estimation_budget,
            refresh_steps,
            simulate_at,
            refresh_study,
            consistency_threshold,
        } => bread_command(
            ctx,
            BreadFlags {
                data,
                target_column,
                noise,
                noise_scale,
                kernel,
                sweep,
                estimation_budget,
                refresh_steps,
                simulate_at,
                refresh_study,
                consistency_threshold,
            },
        ),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn resolve_stages(
    flag: Option<Vec<usize>>,
    file: &FileConfig,
    default: &[usize],
) -> anyhow::Result<Vec<usize>> {
    let stages = flag
        .or_else(|| file.stages.clone())
        .unwrap_or_else(|| default.to_vec());
    if stages.is_empty() || stages.iter().any(|&t| t < 2) {
        return Err(usage("--T needs values of at least 2"));
    }
    if stages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--T values must be strictly increasing"));
    }
    Ok(stages)
}

fn resolve_chains(flag: Option<usize>, file: &FileConfig) -> anyhow::Result<usize> {
    match flag.or(file.chains).unwrap_or(DEFAULT_CHAINS) {
        0 => Err(usage("--K must be positive")),
        k => Ok(k),
    }
}

fn resolve_target(args: &TargetArgs, file: &FileConfig, seed: u64) -> anyhow::Result<TargetSpec> {
    let base = file.target.clone();
    let kind = match (&args.target, &base) {
        (Some(kind), _) => kind.as_str(),
        (None, Some(TargetSpec::Random { .. })) => "random",
        (None, _) => "barrier",
    };
    match kind {
        "barrier" => {
            if args.sigma.is_some() || args.grid_seed.is_some() {
                return Err(usage("--sigma and --grid-seed apply to the random target"));
            }
            Ok(TargetSpec::Barrier)
        }
        "random" => {
            let (base_sigma, base_seed) = match base {
                Some(TargetSpec::Random { sigma, seed }) => (Some(sigma), Some(seed)),
                _ => (None, None),
            };
            let sigma = args.sigma.or(base_sigma).unwrap_or(2.0);
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(usage(format!("--sigma must be positive, got {sigma}")));
            }
            Ok(TargetSpec::Random {
                sigma,
                seed: args
                    .grid_seed
                    .or(base_seed)
                    .unwrap_or_else(|| derive_seed(seed, GRID)),
            })
        }
        other => Err(usage(format!(
            "unknown target `{other}` (expected barrier or random)"
        ))),
    }
}

fn resolve_model(
    args: &ModelArgs,
    file: &FileConfig,
    seed: u64,
    default_noise: NoisePrior,
) -> anyhow::Result<ModelSpec> {
    let base = file.model.clone();
    let kind = match (&args.model, &base) {
        (Some(kind), _) => kind.clone(),
        (None, Some(ModelSpec::Mf { representation, .. })) => match representation {
            Representation::Collapsed => "mf-collapsed".into(),
            Representation::Uncollapsed => "mf-uncollapsed".into(),
        },
        (None, _) => "linreg".into(),
    };
    let regression_flags =
        args.n.is_some() || args.d.is_some() || args.noise.is_some() || args.design_seed.is_some();
    let mf_flags = args.rows.is_some() || args.rank.is_some() || args.cols.is_some();
    if args.noise.is_none() && args.noise_scale.is_some() {
        return Err(usage("--noise-scale needs --noise"));
    }
    match kind.as_str() {
        "linreg" => {
            if mf_flags {
                return Err(usage(
                    "--rows, --rank and --cols apply to matrix factorization",
                ));
            }
            let (n, d, noise, design_seed) = match base {
                Some(ModelSpec::Linreg {
                    observations,
                    features,
                    noise,
                    design_seed,
                }) => (observations, features, noise, Some(design_seed)),
                _ => (30, 3, default_noise, None),
            };
            let noise = match &args.noise {
                Some(kind) => parse_noise(kind, args.noise_scale)?,
                None => noise,
            };
            Ok(ModelSpec::Linreg {
                observations: args.n.unwrap_or(n),
                features: args.d.unwrap_or(d),
                noise,
                design_seed: args
                    .design_seed
                    .or(design_seed)
                    .unwrap_or_else(|| derive_seed(seed, DESIGN)),
            })
        }
        "mf-collapsed" | "mf-uncollapsed" => {
            if regression_flags {
                return Err(usage("--n, --d, --noise and --design-seed apply to linreg"));
            }
            let (rows, rank, cols) = match base {
                Some(ModelSpec::Mf {
                    rows, rank, cols, ..
                }) => (rows, rank, cols),
                _ => (10, 5, 10),
            };
            Ok(ModelSpec::Mf {
                rows: args.rows.unwrap_or(rows),
                rank: args.rank.unwrap_or(rank),
                cols: args.cols.unwrap_or(cols),
                representation: if kind == "mf-collapsed" {
                    Representation::Collapsed
                } else {
                    Representation::Uncollapsed
                },
            })
        }
        other => Err(usage(format!(
            "unknown model `{other}` (expected linreg, mf-collapsed or mf-uncollapsed)"
        ))),
    }
}

fn kernel_flags(args: &KernelArgs) -> KernelFlags {
    KernelFlags {
        kind: args.kernel.clone(),
        step_size: args.step_size,
        leapfrog_steps: args.leapfrog_steps,
        scale: args.scale,
        steps_per_stage: args.steps_per_stage,
    }
}

fn grid_steps_per_stage(flag: Option<usize>, file: &FileConfig) -> anyhow::Result<usize> {
    let from_file = match file.kernel {
        Some(KernelSpec::GridNeighborMh { steps_per_stage }) => Some(steps_per_stage),
        Some(other) => {
            return Err(usage(format!(
                "toy targets use the grid kernel, not {other:?}"
            )))
        }
        None => None,
    };
    match flag.or(from_file).unwrap_or(1) {
        0 => Err(usage("--steps-per-stage must be positive")),
        s => Ok(s),
    }
}

fn bound_point<S>(run: &AisRun<S>, log_z1: f64, timings: bool) -> BoundPoint {
    let bound = match run.direction {
        Direction::Forward => log_z1 + run.log_estimate(),
        Direction::Reverse => log_z1 - run.log_estimate(),
    };
    BoundPoint {
        stages: run.stages(),
        bound,
        direction: run.direction,
        wall_time_secs: timings.then_some(run.wall_time.as_secs_f64()),
    }
}

#[derive(Serialize)]
struct ToyExactSettings {
    target: TargetSpec,
    stages: Vec<usize>,
    log_partition: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dominant_mode_mass: Option<f64>,
}

fn toy_exact(mut ctx: Ctx, args: &TargetArgs, stages: Option<Vec<usize>>) -> anyhow::Result<()> {
    let target = resolve_target(args, &ctx.file, ctx.seed)?;
    let stages = resolve_stages(stages, &ctx.file, &[10, 100, 1000])?;
    let grid = target.build()?;
    let mut csv = String::from(
        "T,J,B,final_kl_forward,final_kl_reverse,chain_kl_forward,chain_kl_reverse,\
         expected_log_weight_forward,expected_log_weight_reverse\n",
    );
    for &t in &stages {
        let a: ExactAnalysis = exact_analysis(&grid, &AnnealingSchedule::linear(t)?);
        println!("T={t}: J={:.6} B={:.6}", a.final_jeffreys, a.chain_jeffreys);
        writeln!(
            csv,
            "{t},{},{},{},{},{},{},{},{}",
            a.final_jeffreys,
            a.chain_jeffreys,
            a.final_kl_forward,
            a.final_kl_reverse,
            a.chain_kl_forward,
            a.chain_kl_reverse,
            a.expected_log_weight_forward,
            a.expected_log_weight_reverse
        )?;
    }
    ctx.out.write("toy_exact.csv", csv.as_bytes())?;
    let settings = ToyExactSettings {
        dominant_mode_mass: matches!(target, TargetSpec::Barrier)
            .then(|| dominant_mode_mass(&grid)),
        log_partition: grid.log_partition(),
        target,
        stages,
    };
    ctx.out
        .finish("toy-exact", ctx.seed, ctx.seed_source, &settings)
}

#[derive(Serialize)]
struct ToyAisSummary {
    target: TargetSpec,
    log_partition: f64,
    log_initial_partition: f64,
    /// Bounds on `log Z_T − log Z_1`, one per `T`.
    results: Vec<BdmcResult>,
}

#[derive(Serialize)]
struct ToyAisSettings<'a> {
    target: &'a TargetSpec,
    stages: &'a [usize],
    chains: usize,
    kernel: KernelSpec,
}

fn toy_ais(
    mut ctx: Ctx,
    args: &TargetArgs,
    sweep: &SweepArgs,
    steps_per_stage: Option<usize>,
) -> anyhow::Result<()> {
    let target = resolve_target(args, &ctx.file, ctx.seed)?;
    let stages = resolve_stages(sweep.stages.clone(), &ctx.file, &[100])?;
    let chains = resolve_chains(sweep.chains, &ctx.file)?;
    let grid = target.build()?;
    let kernel = grid
        .kernel()
        .with_steps_per_stage(grid_steps_per_stage(steps_per_stage, &ctx.file)?);
    let path = grid.path();
    let log_z1 = grid.log_initial_partition();
    let input_hash = git_blob_hash(&serde_json::to_vec(grid.log_potential())?);
    let probs = grid.probabilities();

    let mut forward_curve = BoundCurve::new(Direction::Forward);
    let mut reverse_curve = BoundCurve::new(Direction::Reverse);
    let mut records = Vec::new();
    let mut results = Vec::new();
    let mut histogram = String::from("T,cell,row,col,count,frequency,probability\n");
    for (i, &t) in stages.iter().enumerate() {
        let schedule = AnnealingSchedule::linear(t)?;
        let base = derive_seed(ctx.seed, SWEEP + i as u64);
        let fwd = forward_ais(
            &path,
            &schedule,
            &kernel,
            |rng| grid.sample_uniform(rng),
            chains,
            derive_seed(base, 0),
        )?;
        let mut rng = ChainRng::seed_from_u64(derive_seed(base, 1));
        let exact: Vec<usize> = (0..chains).map(|_| grid.sample_exact(&mut rng)).collect();
        let rev = reverse_ais(
            &path,
            &schedule,
            &kernel,
            &exact,
            chains,
            derive_seed(base, 2),
        )?;

        forward_curve.push(bound_point(&fwd, log_z1, ctx.timings))?;
        reverse_curve.push(bound_point(&rev, log_z1, ctx.timings))?;
        let result = BdmcResult::from_runs(&fwd, &rev)?;
        println!(
            "T={t}: log Z in [{:.4}, {:.4}] (exact {:.4})",
            log_z1 + result.lower,
            log_z1 + result.upper,
            grid.log_partition()
        );
        results.push(result);

        let mut counts = vec![0usize; grid.cells()];
        for &x in &fwd.final_states {
            counts[x] += 1;
        }
        for (cell, (&count, p)) in counts.iter().zip(&probs).enumerate() {
            let (row, col) = (cell / grid.width(), cell % grid.width());
            let freq = count as f64 / chains as f64;
            writeln!(histogram, "{t},{cell},{row},{col},{count},{freq},{p}")?;
        }
        let name = target.name();
        records.push(RunRecord::from_run(
            format!("forward/T={t}"),
            name.clone(),
            &input_hash,
            &fwd,
            ctx.timings,
        ));
        records.push(RunRecord::from_run(
            format!("reverse/T={t}"),
            name,
            &input_hash,
            &rev,
            ctx.timings,
        ));
    }

    let refs: Vec<&RunRecord> = records.iter().collect();
    ctx.out
        .write("toy_ais_weights.csv", chain_weights_csv(&refs).as_bytes())?;
    ctx.out
        .write("toy_ais_histogram.csv", histogram.as_bytes())?;
    ctx.out.write(
        "toy_ais_bounds.csv",
        curves_csv(&[&forward_curve, &reverse_curve]).as_bytes(),
    )?;
    ctx.out.write_json(
        "toy_ais.json",
        &ToyAisSummary {
            target: target.clone(),
            log_partition: grid.log_partition(),
            log_initial_partition: log_z1,
            results,
        },
    )?;
    let settings = ToyAisSettings {
        target: &target,
        stages: &stages,
        chains,
        kernel: bread::Kernel::spec(&kernel),
    };
    ctx.out
        .finish("toy-ais", ctx.seed, ctx.seed_source, &settings)
}

#[derive(Serialize)]
struct BdmcSummary {
    model: ModelSpec,
    model_name: String,
    data_hash: String,
    /// Closed-form `log p(y)` when the model has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_log_marginal_likelihood: Option<f64>,
    results: Vec<BdmcResult>,
    /// Content-addressed run records under `runs/`.
    run_ids: Vec<String>,
}

#[derive(Serialize)]
struct BdmcSettings<'a> {
    model: &'a ModelSpec,
    stages: &'a [usize],
    chains: usize,
    kernel: KernelSpec,
}

fn bdmc_command(
    mut ctx: Ctx,
    model_args: &ModelArgs,
    kernel_args: &KernelArgs,
    sweep: &SweepArgs,
) -> anyhow::Result<()> {
    let spec = resolve_model(
        model_args,
        &ctx.file,
        ctx.seed,
        NoisePrior::Fixed { scale: 1.0 },
    )?;
    let stages = resolve_stages(sweep.stages.clone(), &ctx.file, &[10, 100, 1000])?;
    let chains = resolve_chains(sweep.chains, &ctx.file)?;
    let kernel =
        kernel_flags(kernel_args).apply(ctx.file.kernel.unwrap_or_else(KernelSpec::default_hmc))?;
    VectorKernel::from_spec(kernel).map_err(|e| usage(e.to_string()))?;
    match spec.build()? {
        BuiltModel::Linreg(m) => {
            let exact = |m: &LinRegModel, y: &Vec<f64>| match m.noise() {
                NoisePrior::Fixed { .. } => m.log_marginal_likelihood(y).ok(),
                _ => None,
            };
            run_model_bdmc(&mut ctx, &spec, m, &stages, chains, kernel, exact)?
        }
        BuiltModel::Mf(m) => {
            run_model_bdmc(&mut ctx, &spec, m, &stages, chains, kernel, |_, _| None)?
        }
    }
    let settings = BdmcSettings {
        model: &spec,
        stages: &stages,
        chains,
        kernel,
    };
    ctx.out.finish("bdmc", ctx.seed, ctx.seed_source, &settings)
}

fn run_model_bdmc<M: Model + 'static>(
    ctx: &mut Ctx,
    spec: &ModelSpec,
    model: M,
    stages: &[usize],
    chains: usize,
    kernel_spec: KernelSpec,
    exact: impl Fn(&M, &M::Data) -> Option<f64>,
) -> anyhow::Result<()> {
    let model = Arc::new(model);
    let sim = simulate_dataset(model.as_ref(), derive_seed(ctx.seed, DATA));
    let data = Arc::new(sim.data);
    let truth = exact(model.as_ref(), &data);
    let data_hash = table_hash(&model.data_table(&data));
    let path = posterior_path(Arc::clone(&model), Arc::clone(&data));
    let kernel = VectorKernel::from_spec(kernel_spec)?;
    let store = ctx.out.dir().join("runs");

    let mut forward_curve = BoundCurve::new(Direction::Forward);
    let mut reverse_curve = BoundCurve::new(Direction::Reverse);
    let mut records = Vec::new();
    let mut run_ids = Vec::new();
    let mut results = Vec::new();
    for (i, &t) in stages.iter().enumerate() {
        let schedule = AnnealingSchedule::linear(t)?;
        let seed = derive_seed(ctx.seed, SWEEP + i as u64);
        let out = bdmc(
            &path,
            &schedule,
            &kernel,
            |rng| model.sample_params(rng),
            std::slice::from_ref(&sim.params),
            chains,
            seed,
        )?;
        println!(
            "T={t}: lower {:.4}, upper {:.4}, gap {:.4}",
            out.result.lower, out.result.upper, out.result.gap
        );
        forward_curve.push(bound_point(&out.forward, 0.0, ctx.timings))?;
        reverse_curve.push(bound_point(&out.reverse, 0.0, ctx.timings))?;
        for run in [&out.forward, &out.reverse] {
            let label = format!(
                "{}/T={t}",
                if run.direction == Direction::Forward {
                    "forward"
                } else {
                    "reverse"
                }
            );
            let record = RunRecord::from_run(label, model.name(), &data_hash, run, ctx.timings);
            run_ids.push(persist_run(&record, &store)?);
            records.push(record);
        }
        results.push(out.result);
    }
    if let Some(truth) = truth {
        println!("exact log p(y) = {truth:.4}");
    }

    let refs: Vec<&RunRecord> = records.iter().collect();
    ctx.out.write(
        "bdmc_curves.csv",
        curves_csv(&[&forward_curve, &reverse_curve]).as_bytes(),
    )?;
    ctx.out
        .write("bdmc_weights.csv", chain_weights_csv(&refs).as_bytes())?;
    ctx.out.write_json(
        "bdmc.json",
        &BdmcSummary {
            model: spec.clone(),
            model_name: model.name().to_string(),
            data_hash,
            exact_log_marginal_likelihood: truth,
            results,
            run_ids,
        },
    )
}

#[derive(Serialize)]
struct SimulatedParams {
    model: ModelSpec,
    model_name: String,
    data_hash: String,
    /// An exact posterior sample given the simulated data.
    params: Vec<f64>,
}

fn simulate(mut ctx: Ctx, model_args: &ModelArgs) -> anyhow::Result<()> {
    let spec = resolve_model(
        model_args,
        &ctx.file,
        ctx.seed,
        NoisePrior::Fixed { scale: 1.0 },
    )?;
    let seed = derive_seed(ctx.seed, DATA);
    let (table, params, name) = match spec.build()? {
        BuiltModel::Linreg(m) => {
            let sim = simulate_dataset(&m, seed);
            (m.data_table(&sim.data), sim.params, m.name().to_string())
        }
        BuiltModel::Mf(m) => {
            let sim = simulate_dataset(&m, seed);
            (m.data_table(&sim.data), sim.params, m.name().to_string())
        }
    };
    let csv = table_to_csv(&table);
    ctx.out.write("simulated.csv", csv.as_bytes())?;
    ctx.out.write_json(
        "simulated_params.json",
        &SimulatedParams {
            model: spec.clone(),
            model_name: name,
            data_hash: table_hash(&table),
            params,
        },
    )?;
    println!("simulated {} rows", table.rows.len());
    ctx.out.finish("simulate", ctx.seed, ctx.seed_source, &spec)
}

struct BreadFlags {
    data: Option<PathBuf>,
    target_column: Option<String>,
    noise: Option<String>,
    noise_scale: Option<f64>,
    kernel: KernelArgs,
    sweep: SweepArgs,
    estimation_budget: Option<usize>,
    refresh_steps: Option<usize>,
    simulate_at: Option<Vec<f64>>,
    refresh_study: bool,
    consistency_threshold: Option<f64>,
}

#[derive(Serialize)]
struct BreadSettings<'a> {
    dataset: &'a bread::dataset::DatasetHandle,
    noise: NoisePrior,
    protocol: &'a bread::protocol::ProtocolConfig,
}

fn bread_command(mut ctx: Ctx, flags: BreadFlags) -> anyhow::Result<()> {
    let data_path = flags
        .data
        .or_else(|| ctx.file.data.clone())
        .ok_or_else(|| usage("bread needs a dataset: pass --data <CSV>"))?;
    let column = flags
        .target_column
        .or_else(|| ctx.file.target_column.clone())
        .unwrap_or_else(|| "y".into());
    let noise = match &flags.noise {
        Some(kind) => parse_noise(kind, flags.noise_scale)?,
        None if flags.noise_scale.is_some() => return Err(usage("--noise-scale needs --noise")),
        None => NoisePrior::default_inverse_gaussian(),
    };

    let mut config = ctx.file.protocol.clone().unwrap_or_default();
    if let Some(stages) = flags
        .sweep
        .stages
        .clone()
        .or_else(|| ctx.file.stages.clone())
    {
        config.stage_sweep = stages;
    }
    if let Some(k) = flags.sweep.chains.or(ctx.file.chains) {
        config.chains = k;
    }
    if let Some(b) = flags.estimation_budget {
        config.estimation_budget = b;
    }
    if let Some(r) = flags.refresh_steps {
        config.reverse_refresh_steps = r;
    }
    if let Some(eta) = flags.simulate_at {
        config.simulation_hyperparameters = Some(eta);
    }
    if flags.refresh_study && config.refresh_study.is_none() {
        config.refresh_study = Some(RefreshStudyConfig::default());
    }
    if let Some(c) = flags.consistency_threshold {
        config.consistency_threshold = c;
    }
    config.kernel = kernel_flags(&flags.kernel).apply(ctx.file.kernel.unwrap_or(config.kernel))?;
    config.seed = ctx.seed;
    config.record_timings |= ctx.timings;
    config.validate().map_err(|e| usage(e.to_string()))?;

    let dataset = load_csv_standardized(&data_path, &column)?;
    if dataset.dropped_rows > 0 {
        eprintln!("dropped {} rows with missing values", dataset.dropped_rows);
    }
    let model = Arc::new(LinRegModel::new(dataset.design.clone(), noise)?);
    let real = Arc::new(dataset.target.clone());
    let store = ctx.out.dir().join("runs");
    let report = run_bread(model, real, &config, Some(&store))?;

    let mut curves = String::from("T,curve,bound\n");
    for (name, curve) in [
        ("forward-real", &report.forward_real),
        ("forward-simulated", &report.forward_simulated),
        ("reverse-simulated", &report.reverse_simulated),
    ] {
        for p in &curve.points {
            writeln!(curves, "{},{name},{}", p.stages, p.bound)?;
        }
    }
    // stable sort keeps the curve order within each T
    let mut lines: Vec<&str> = curves.lines().skip(1).collect();
    lines.sort_by_key(|l| l.split(',').next().and_then(|t| t.parse::<usize>().ok()));
    let curves = std::iter::once("T,curve,bound")
        .chain(lines)
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";

    let mut gaps = String::from("T,lower,upper,gap,mean_chain_gap\n");
    for g in &report.gaps {
        writeln!(
            gaps,
            "{},{},{},{},{}",
            g.stages, g.lower, g.upper, g.gap, g.mean_chain_gap
        )?;
    }

    ctx.out.write_json("bread_report.json", &report)?;
    ctx.out.write("bread_curves.csv", curves.as_bytes())?;
    ctx.out.write("bread_gaps.csv", gaps.as_bytes())?;
    print!("{}", crate::report::render(&serde_json::to_value(&report)?));
    let settings = BreadSettings {
        dataset: &dataset,
        noise,
        protocol: &config,
    };
    ctx.out
        .finish("bread", ctx.seed, ctx.seed_source, &settings)
}
