//! Experiment CLI. Every subcommand prints its fully resolved effective
//! configuration before running; outputs are deterministic given that
//! configuration (benchmark wall times excepted).
//!
//! Exit codes: 0 success, 1 runtime/IO/tolerance failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use colin::adapter::{
    fuse, fused_forward, load_adapter, param_count, random_init, save_adapter, save_fused,
    adapter_forward,
};
use colin::gradcheck::{check_adapter_gradients, delta_w_bound_ratio, delta_w_experiment};
use colin::sim::{compare_sizes, run_sim, SimConfig, SimSummary};
use colin::toy::{build_toy_model, make_synthetic_task, train, InitScheme, TrainConfig};
use colin::{ColinAdapter, Matrix, Rng};

#[derive(Parser)]
#[command(name = "colin", version, about = "CoLin adapter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Low-rank factorization convergence simulation, with/without the
    /// orthogonal loss, aggregated over paired seeds.
    Simulate(SimulateArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// First-order weight-update prediction experiment.
    Deltaw(DeltawArgs),
    /// Train adapters + head on the synthetic task, backbone frozen.
    TrainToy(TrainToyArgs),
    /// Parameter-count arithmetic for the composite projection.
    Params(ParamsArgs),
    /// Fuse a saved adapter into dense weights, verifying equivalence.
    Fuse(FuseArgs),
    /// Micro-benchmark: compose-per-call forward vs fused forward.
    BenchFuse(BenchFuseArgs),
}

/// Load `path` as JSON into the effective-config type; missing fields fall
/// back to the type's defaults.
fn load_config_file<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

fn print_effective<T: Serialize>(name: &str, cfg: &T) {
    println!(
        "effective config [{name}]: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
struct SimulateArgs {
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    ol_weight: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Comma-separated list of n values; when given, also writes the
    /// relative final-gap report as `<out>_gaps.json`.
    #[arg(long, value_delimiter = ',')]
    gap_ns: Option<Vec<usize>>,
    /// Output prefix; writes `<out>_trace.csv` and `<out>_summary.csv`.
    #[arg(long, default_value = "sim")]
    out: PathBuf,
}

fn trace_csv(summary: &SimSummary) -> String {
    let mut csv = String::from("arm,seed,iter,loss\n");
    for t in &summary.traces {
        for (it, loss) in t.iters.iter().zip(&t.losses) {
            csv.push_str(&format!("{},{},{},{}\n", t.arm, t.seed, it, loss));
        }
    }
    csv
}

fn summary_csv(summary: &SimSummary) -> String {
    let mut csv = String::from("iter,arm,mean,min,max\n");
    for (i, it) in summary.iters.iter().enumerate() {
        for (arm, stats) in [("with_OL", &summary.with_ol), ("without_OL", &summary.without_ol)] {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                it, arm, stats.mean[i], stats.min[i], stats.max[i]
            ));
        }
    }
    csv
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), String> {
    let mut cfg: SimConfig = match &args.config {
        Some(p) => load_config_file(p)?,
        None => SimConfig::default(),
    };
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = args.ol_weight {
        cfg.ol_weight = v;
    }
    if let Some(v) = args.record_every {
        cfg.record_every = v;
    }
    print_effective("simulate", &cfg);
    cfg.validate().map_err(|e| e.to_string())?;

    let summary = run_sim(&cfg).map_err(|e| e.to_string())?;
    let stem = args.out.display();
    write_text(&PathBuf::from(format!("{stem}_trace.csv")), &trace_csv(&summary))?;
    write_text(&PathBuf::from(format!("{stem}_summary.csv")), &summary_csv(&summary))?;
    println!(
        "final mean loss: with_OL {} without_OL {} relative gap {}",
        summary.final_mean(colin::sim::Arm::WithOl),
        summary.final_mean(colin::sim::Arm::WithoutOl),
        summary.final_gap()
    );

    if let Some(ns) = args.gap_ns {
        let gaps = compare_sizes(&cfg, &ns).map_err(|e| e.to_string())?;
        write_text(&PathBuf::from(format!("{stem}_gaps.json")), &to_json_pretty(&gaps))?;
        for g in &gaps {
            println!("n {} relative gap {}", g.n, g.gap);
        }
    }
    Ok(())
}

// --------------------------------------------------------------- gradcheck

#[derive(Args, Serialize, Deserialize)]
#[serde(default)]
struct GradcheckArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 6)]
    h: usize,
    #[arg(long, default_value_t = 3)]
    beta: usize,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    #[arg(long, default_value_t = 4)]
    tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to check starting at --seed.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            config: None,
            d: 8,
            h: 6,
            beta: 3,
            alpha: 2,
            tokens: 4,
            seed: 0,
            runs: 1,
            out: None,
        }
    }
}

fn merge_config_then_flags<T: DeserializeOwned + Serialize>(
    file: &Option<PathBuf>,
    flags: T,
    matches_defaults: impl Fn(&T, &T) -> T,
) -> Result<T, String>
where
    T: Default,
{
    match file {
        Some(p) => {
            let base: T = load_config_file(p)?;
            Ok(matches_defaults(&base, &flags))
        }
        None => Ok(flags),
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), String> {
    let defaults = GradcheckArgs::default();
    let cfg = merge_config_then_flags(&args.config.clone(), args, |base, flags| GradcheckArgs {
        config: None,
        d: if flags.d != defaults.d { flags.d } else { base.d },
        h: if flags.h != defaults.h { flags.h } else { base.h },
        beta: if flags.beta != defaults.beta { flags.beta } else { base.beta },
        alpha: if flags.alpha != defaults.alpha { flags.alpha } else { base.alpha },
        tokens: if flags.tokens != defaults.tokens { flags.tokens } else { base.tokens },
        seed: if flags.seed != defaults.seed { flags.seed } else { base.seed },
        runs: if flags.runs != defaults.runs { flags.runs } else { base.runs },
        out: flags.out.clone(),
    })?;
    print_effective("gradcheck", &cfg);

    let mut reports = Vec::new();
    let mut all_pass = true;
    for seed in cfg.seed..cfg.seed + cfg.runs {
        let report = check_adapter_gradients(cfg.d, cfg.h, cfg.beta, cfg.alpha, cfg.tokens, seed)
            .map_err(|e| e.to_string())?;
        println!(
            "seed {seed}: worst relative error {} -> {}",
            report.worst(),
            if report.pass { "pass" } else { "FAIL" }
        );
        all_pass &= report.pass;
        reports.push(report);
    }
    let text = to_json_pretty(&reports);
    match &cfg.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if all_pass {
        Ok(())
    } else {
        Err("gradient check exceeded tolerance".into())
    }
}

// ------------------------------------------------------------------ deltaw

#[derive(Args)]
struct DeltawArgs {
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 60)]
    n: usize,
    /// Step sizes for the sweep (repeat the flag or comma-separate).
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 5e-4, 2.5e-4])]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DeltawCliReport {
    sweep: colin::gradcheck::DeltaWSweep,
    /// Deviation bound constant for the square case; only set when m=k=n.
    square_bound_constant: Option<f64>,
    pass: bool,
}

fn cmd_deltaw(args: DeltawArgs) -> Result<(), String> {
    #[derive(Serialize)]
    struct Effective<'a> {
        m: usize,
        k: usize,
        n: usize,
        eta: &'a [f64],
        seed: u64,
    }
    print_effective(
        "deltaw",
        &Effective { m: args.m, k: args.k, n: args.n, eta: &args.eta, seed: args.seed },
    );

    let sweep = delta_w_experiment(args.m, args.k, args.n, &args.eta, args.seed)
        .map_err(|e| e.to_string())?;
    let mut pass = sweep.points.iter().all(|p| p.residual.is_finite());
    // halving check on consecutive eta pairs that actually halve
    for w in sweep.points.windows(2) {
        let ratio_eta = w[1].eta / w[0].eta;
        if (ratio_eta - 0.5).abs() < 1e-12 && w[0].residual > 0.0 {
            let ratio = w[1].residual / w[0].residual;
            if !(0.4..=0.6).contains(&ratio) {
                pass = false;
            }
        }
    }
    let square_bound_constant = if args.m == args.k && args.k == args.n {
        let c = delta_w_bound_ratio(args.m, args.k, args.n, args.eta[0], args.seed)
            .map_err(|e| e.to_string())?;
        if c > 1.5 {
            pass = false;
        }
        Some(c)
    } else {
        None
    };
    for p in &sweep.points {
        println!("eta {} residual {}", p.eta, p.residual);
    }
    println!("residual-vs-eta slope {}", sweep.slope);
    if let Some(c) = square_bound_constant {
        println!("square-case deviation constant {c}");
    }

    let report = DeltawCliReport { sweep, square_bound_constant, pass };
    let text = to_json_pretty(&report);
    match &args.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if report.pass {
        Ok(())
    } else {
        Err("first-order prediction residual outside tolerance".into())
    }
}

// --------------------------------------------------------------- train-toy

#[derive(Args, Serialize, Deserialize, Clone)]
#[serde(default)]
struct TrainToyArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 2)]
    beta: usize,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    #[arg(long, default_value_t = 4)]
    out_dim: usize,
    #[arg(long, default_value_t = 3)]
    tokens: usize,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adapter initialization: "svd" or "random".
    #[arg(long, default_value = "svd")]
    init: String,
    /// CSV trace output path.
    #[serde(skip)]
    #[arg(long, default_value = "train_trace.csv")]
    out: PathBuf,
    /// Optionally save the first trained adapter as JSON.
    #[serde(skip)]
    #[arg(long)]
    save_adapter: Option<PathBuf>,
}

impl Default for TrainToyArgs {
    fn default() -> Self {
        TrainToyArgs {
            config: None,
            blocks: 2,
            d: 8,
            h: 4,
            beta: 2,
            alpha: 2,
            out_dim: 4,
            tokens: 3,
            samples: 16,
            lr: 1e-4,
            lambda: 1e-4,
            steps: 500,
            batch: 16,
            momentum: 0.0,
            seed: 0,
            init: "svd".into(),
            out: PathBuf::from("train_trace.csv"),
            save_adapter: None,
        }
    }
}

fn cmd_train_toy(args: TrainToyArgs) -> Result<(), String> {
    let defaults = TrainToyArgs::default();
    let cfg = match &args.config {
        Some(p) => {
            let base: TrainToyArgs = load_config_file(p)?;
            // flags that differ from their defaults win over the file
            macro_rules! pick {
                ($f:ident) => {
                    if args.$f != defaults.$f { args.$f.clone() } else { base.$f.clone() }
                };
            }
            TrainToyArgs {
                config: None,
                blocks: pick!(blocks),
                d: pick!(d),
                h: pick!(h),
                beta: pick!(beta),
                alpha: pick!(alpha),
                out_dim: pick!(out_dim),
                tokens: pick!(tokens),
                samples: pick!(samples),
                lr: pick!(lr),
                lambda: pick!(lambda),
                steps: pick!(steps),
                batch: pick!(batch),
                momentum: pick!(momentum),
                seed: pick!(seed),
                init: pick!(init),
                out: args.out.clone(),
                save_adapter: args.save_adapter.clone(),
            }
        }
        None => args,
    };
    print_effective("train-toy", &cfg);
    let scheme = match cfg.init.as_str() {
        "svd" => InitScheme::Svd,
        "random" => InitScheme::Random,
        other => return Err(format!("unknown init scheme {other:?} (use svd|random)")),
    };

    let mut rng = Rng::new(cfg.seed);
    let dataset = make_synthetic_task(cfg.d, cfg.out_dim, cfg.tokens, cfg.samples, &mut rng)
        .map_err(|e| e.to_string())?;
    let (mut model, partition) =
        build_toy_model(cfg.blocks, cfg.d, cfg.h, cfg.beta, cfg.alpha, cfg.out_dim, &mut rng)
            .map_err(|e| e.to_string())?;
    if scheme == InitScheme::Random {
        let mut init_rng = Rng::new(cfg.seed ^ 0xA5A5_A5A5);
        for block in &mut model.blocks {
            random_init(&mut block.adapter_1, &mut init_rng).map_err(|e| e.to_string())?;
            random_init(&mut block.adapter_2, &mut init_rng).map_err(|e| e.to_string())?;
        }
    }
    println!(
        "params: frozen {} adapters {} head {} (trainable fraction {:.4})",
        partition.theta_f,
        partition.theta_a,
        partition.theta_t,
        partition.omega() as f64 / (partition.theta_f + partition.omega()) as f64
    );

    let train_cfg = TrainConfig {
        lr: cfg.lr,
        lambda: cfg.lambda,
        steps: cfg.steps,
        batch: cfg.batch,
        seed: cfg.seed,
        momentum: cfg.momentum,
        freeze_adapters: false,
    };
    let trace = train(&mut model, &dataset, &train_cfg).map_err(|e| e.to_string())?;

    let mut csv = String::from("step,task_loss,ortho_loss,total_loss\n");
    for i in 0..trace.task_loss.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            i, trace.task_loss[i], trace.ortho_loss[i], trace.total_loss[i]
        ));
    }
    write_text(&cfg.out, &csv)?;
    if let (Some(first), Some(last)) = (trace.task_loss.first(), trace.task_loss.last()) {
        println!("task loss: initial {first} final {last}");
    }
    if let Some(path) = &cfg.save_adapter {
        let adapter = &model.blocks[0].adapter_1;
        save_adapter(path, adapter, cfg.lambda).map_err(|e| e.to_string())?;
        println!("saved adapter to {}", path.display());
    }
    Ok(())
}

// ------------------------------------------------------------------ params

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    m: u64,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    beta: u64,
    #[arg(long, default_value_t = 1)]
    alpha: u64,
    #[arg(long, default_value_t = 1)]
    gamma: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_params(args: ParamsArgs) -> Result<(), String> {
    #[derive(Serialize)]
    struct Effective {
        m: u64,
        n: u64,
        beta: u64,
        alpha: u64,
        gamma: u64,
    }
    print_effective(
        "params",
        &Effective { m: args.m, n: args.n, beta: args.beta, alpha: args.alpha, gamma: args.gamma },
    );
    let count = param_count(args.m, args.n, args.beta, args.alpha, args.gamma);
    println!(
        "colin {} dense {} reduction {}",
        count.colin, count.dense_baseline, count.reduction
    );
    if let Some(p) = &args.out {
        write_text(p, &to_json_pretty(&count))?;
    }
    Ok(())
}

// -------------------------------------------------------------------- fuse

#[derive(Args)]
struct FuseArgs {
    /// Adapter JSON produced by this tool.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

const FUSE_PROBE_COUNT: usize = 8;
const FUSE_PROBE_TOL: f64 = 1e-10;

fn cmd_fuse(args: FuseArgs) -> Result<(), String> {
    #[derive(Serialize)]
    struct Effective<'a> {
        input: &'a Path,
        out: &'a Path,
        seed: u64,
        probes: usize,
        tolerance: f64,
    }
    print_effective(
        "fuse",
        &Effective {
            input: &args.input,
            out: &args.out,
            seed: args.seed,
            probes: FUSE_PROBE_COUNT,
            tolerance: FUSE_PROBE_TOL,
        },
    );
    let (adapter, _lambda) = load_adapter(&args.input).map_err(|e| e.to_string())?;
    let fused = fuse(&adapter).map_err(|e| e.to_string())?;

    let mut rng = Rng::new(args.seed);
    let mut max_diff = 0.0f64;
    for _ in 0..FUSE_PROBE_COUNT {
        let x = Matrix::kaiming_uniform(4, adapter.d, &mut rng);
        let (y_multi, _) = adapter_forward(&adapter, &x).map_err(|e| e.to_string())?;
        let y_fused = fused_forward(&fused, &x).map_err(|e| e.to_string())?;
        max_diff = max_diff.max(y_multi.sub(&y_fused).map_err(|e| e.to_string())?.max_abs());
    }
    if max_diff > FUSE_PROBE_TOL {
        return Err(format!(
            "fusion equivalence failed: max diff {max_diff:e} > {FUSE_PROBE_TOL:e}; nothing written"
        ));
    }
    save_fused(&args.out, &fused).map_err(|e| e.to_string())?;
    println!("fused adapter written to {} (max probe diff {max_diff:e})", args.out.display());
    Ok(())
}

// -------------------------------------------------------------- bench-fuse

#[derive(Args)]
struct BenchFuseArgs {
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 16)]
    h: usize,
    #[arg(long, default_value_t = 8)]
    beta: usize,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    #[arg(long, default_value_t = 8)]
    tokens: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchReport {
    d: usize,
    h: usize,
    beta: usize,
    alpha: usize,
    tokens: usize,
    reps: usize,
    unfused_median_us: f64,
    unfused_p90_us: f64,
    fused_median_us: f64,
    fused_p90_us: f64,
    max_output_diff: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn cmd_bench_fuse(args: BenchFuseArgs) -> Result<(), String> {
    #[derive(Serialize)]
    struct Effective {
        d: usize,
        h: usize,
        beta: usize,
        alpha: usize,
        tokens: usize,
        reps: usize,
        seed: u64,
    }
    print_effective(
        "bench-fuse",
        &Effective {
            d: args.d,
            h: args.h,
            beta: args.beta,
            alpha: args.alpha,
            tokens: args.tokens,
            reps: args.reps,
            seed: args.seed,
        },
    );
    if args.reps < 1 {
        return Err("reps must be >= 1".into());
    }
    let mut rng = Rng::new(args.seed);
    let adapter = ColinAdapter::random(args.d, args.h, args.beta, args.alpha, &mut rng)
        .map_err(|e| e.to_string())?;
    let fused = fuse(&adapter).map_err(|e| e.to_string())?;
    let x = Matrix::kaiming_uniform(args.tokens, args.d, &mut rng);

    // equivalence guard
    let (y_multi, _) = adapter_forward(&adapter, &x).map_err(|e| e.to_string())?;
    let y_fused = fused_forward(&fused, &x).map_err(|e| e.to_string())?;
    let max_output_diff = y_multi.sub(&y_fused).map_err(|e| e.to_string())?.max_abs();
    if max_output_diff > 1e-10 {
        return Err(format!("fused output diverges: {max_output_diff:e}"));
    }

    let warmup = 50;
    for _ in 0..warmup {
        let _ = adapter_forward(&adapter, &x).map_err(|e| e.to_string())?;
        let _ = fused_forward(&fused, &x).map_err(|e| e.to_string())?;
    }
    let mut unfused = Vec::with_capacity(args.reps);
    let mut fused_t = Vec::with_capacity(args.reps);
    for _ in 0..args.reps {
        let t0 = Instant::now();
        let y = adapter_forward(&adapter, &x).map_err(|e| e.to_string())?;
        unfused.push(t0.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(&y);
        let t1 = Instant::now();
        let y = fused_forward(&fused, &x).map_err(|e| e.to_string())?;
        fused_t.push(t1.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(&y);
    }
    unfused.sort_by(f64::total_cmp);
    fused_t.sort_by(f64::total_cmp);

    let report = BenchReport {
        d: args.d,
        h: args.h,
        beta: args.beta,
        alpha: args.alpha,
        tokens: args.tokens,
        reps: args.reps,
        unfused_median_us: percentile(&unfused, 0.5),
        unfused_p90_us: percentile(&unfused, 0.9),
        fused_median_us: percentile(&fused_t, 0.5),
        fused_p90_us: percentile(&fused_t, 0.9),
        max_output_diff,
    };
    println!(
        "unfused median {:.2}us p90 {:.2}us | fused median {:.2}us p90 {:.2}us",
        report.unfused_median_us, report.unfused_p90_us, report.fused_median_us, report.fused_p90_us
    );
    let text = to_json_pretty(&report);
    match &args.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits 2 on usage errors
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Deltaw(a) => cmd_deltaw(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Params(a) => cmd_params(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::BenchFuse(a) => cmd_bench_fuse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
