//! `drape`: train, evaluate and export neural cloth drapes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use drape_core::io::{export_grid, export_vertices, read_garment, RunConfig};
use drape_core::objective::Problem;
use drape_core::surface::load_checkpoint;
use drape_core::trainer::bench::{supervised_bench, BenchVariant};
use drape_core::trainer::{evaluate_dense, train, DenseReport, TrainOutputs};
use drape_core::{DrapeError, GarmentRestMesh};

#[derive(Parser, Debug)]
#[command(name = "drape", version, about = "Neural implicit cloth draping")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for loss evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize the garment's rest positions over its UV layout.
    Atlas {
        /// Garment OBJ; defaults to the configured garment.
        #[arg(long)]
        garment: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Train a drape.
    Train,
    /// Write the deformed garment as OBJ.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportMode::Vertices)]
        mode: ExportMode,
        /// Grid resolution for `--mode grid`; defaults to `output.export_resolution`.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Supervised fitting benchmark across input encodings.
    BenchEncoding,
    /// Dense loss evaluation and penetration report for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExportMode {
    Vertices,
    Grid,
}

/// Failure class, mapped onto the exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn classify(e: anyhow::Error) -> Failure {
    match e.downcast_ref::<DrapeError>() {
        Some(DrapeError::Config(_) | DrapeError::Parse(_) | DrapeError::BudgetMismatch(_)) => Failure::Usage(e),
        _ => Failure::Runtime(e),
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn load_config(g: &GlobalOpts) -> CmdResult<RunConfig> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)
            .map_err(|e| usage(anyhow::Error::new(e).context(format!("loading {}", path.display()))))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.train.seed = seed;
        config.bench.seed = seed;
    }
    if let Some(out) = &g.out {
        config.output.dir = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
    }
    Ok(config)
}

fn setup_threads(g: &GlobalOpts) -> CmdResult<()> {
    let threads = if g.deterministic { 1 } else { g.threads.unwrap_or(1) };
    if threads == 0 {
        return Err(usage(anyhow!("--threads must be >= 1")));
    }
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn runtime<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>) -> CmdResult<T> {
    r.map_err(|e| classify(e.into()))
}

fn report_lines(r: &DenseReport) -> String {
    let mut s = String::new();
    let m = &r.mean;
    for (k, v) in [
        ("strain", m.strain),
        ("bend", m.bend),
        ("gravity", m.gravity),
        ("collision", m.collision),
        ("weighted_total", m.weighted_total),
        ("mean_abs_strain", r.mean_abs_strain),
        ("penetration_fraction", r.penetration_fraction),
    ] {
        let _ = writeln!(s, "{k} = {v:e}");
    }
    let _ = writeln!(s, "valid_cells = {}", r.valid_cells);
    let _ = writeln!(s, "resolution = {}", r.resolution);
    s
}

fn garment_for(config: &RunConfig, explicit: Option<&Path>) -> CmdResult<GarmentRestMesh> {
    match explicit {
        Some(p) => runtime(read_garment(p).with_context(|| format!("reading {}", p.display()))),
        None => runtime(config.build_garment()),
    }
}

fn cmd_atlas(g: &GlobalOpts, garment: Option<&Path>, resolution: usize) -> CmdResult<()> {
    let config = load_config(g)?;
    if resolution < 2 {
        return Err(usage(anyhow!("--resolution must be >= 2 (got {resolution})")));
    }
    let mesh = garment_for(&config, garment)?;
    let atlas = runtime(mesh.build_atlas(resolution))?;
    let dir = config.output_dir();
    runtime(fs::create_dir_all(&dir))?;
    let path = dir.join("atlas.png");
    runtime(atlas.write_png(&path))?;
    println!("atlas = {}", path.display());
    println!("resolution = {resolution}");
    println!("valid_fraction = {}", atlas.valid_fraction());
    Ok(())
}

fn cmd_train(g: &GlobalOpts) -> CmdResult<()> {
    let config = load_config(g)?;
    let train_config = config.train_config().map_err(|e| usage(DrapeError::Config(vec![e])))?;
    let mesh = runtime(config.build_garment())?;
    let collider = runtime(config.build_collider())?;
    let problem = Problem::new(&mesh, collider.as_ref(), train_config.loss_settings());
    let dir = config.output_dir();
    runtime(fs::create_dir_all(&dir))?;
    runtime(fs::write(dir.join("config.toml"), config.to_toml_string()))?;
    let result = runtime(train(&train_config, &problem, &TrainOutputs::in_dir(&dir)))?;
    let report = runtime(evaluate_dense(
        &result.state.model,
        &problem,
        config.output.dense_resolution,
        config.output.dense_seed,
    ))?;
    let summary = serde_json::json!({
        "epochs": result.state.epoch,
        "converged_at": result.converged_at,
        "parameters": result.state.model.param_count(),
        "dense": report,
    });
    runtime(fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json")))?;
    println!("epochs = {}", result.state.epoch);
    match result.converged_at {
        Some(e) => println!("converged_at = {e}"),
        None => println!("converged_at = none"),
    }
    print!("{}", report_lines(&report));
    println!("checkpoint = {}", dir.join("final.ckpt").display());
    Ok(())
}

fn cmd_export(g: &GlobalOpts, checkpoint: &Path, mode: ExportMode, resolution: Option<usize>) -> CmdResult<()> {
    let config = load_config(g)?;
    let model = runtime(load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display())))?;
    let mesh = runtime(config.build_garment())?;
    let exported = match mode {
        ExportMode::Vertices => runtime(export_vertices(&model, &mesh))?,
        ExportMode::Grid => {
            let r = resolution.unwrap_or(config.output.export_resolution);
            if r < 2 {
                return Err(usage(anyhow!("--resolution must be >= 2 (got {r})")));
            }
            runtime(export_grid(&model, &mesh, r))?
        }
    };
    let dir = config.output_dir();
    runtime(fs::create_dir_all(&dir))?;
    let name = match mode {
        ExportMode::Vertices => "drape_vertices.obj",
        ExportMode::Grid => "drape_grid.obj",
    };
    let path = dir.join(name);
    runtime(exported.write_obj(&path))?;
    println!("mesh = {}", path.display());
    println!("vertices = {}", exported.vertices.len());
    println!("triangles = {}", exported.triangles.len());
    Ok(())
}

fn cmd_bench(g: &GlobalOpts) -> CmdResult<()> {
    let config = load_config(g)?;
    let variants = BenchVariant::standard();
    let results = runtime(supervised_bench(&variants, &config.bench))?;
    let dir = config.output_dir();
    runtime(fs::create_dir_all(&dir))?;
    let mut csv = String::from("variant,parameters,epochs_to_threshold,wall_clock_ms,final_mse\n");
    println!("{:<14} {:>10} {:>16} {:>12}", "variant", "parameters", "epochs", "wall_ms");
    for r in &results {
        let epochs = r.epochs_to_threshold.map_or_else(|| "not converged".to_string(), |e| e.to_string());
        println!("{:<14} {:>10} {:>16} {:>12.0}", r.name, r.parameters, epochs, r.wall_clock_ms);
        let _ = writeln!(csv, "{},{},{},{:.3},{:e}", r.name, r.parameters, epochs, r.wall_clock_ms, r.final_mse);
    }
    runtime(fs::write(dir.join("bench.csv"), csv))?;
    Ok(())
}

fn cmd_eval(g: &GlobalOpts, checkpoint: &Path) -> CmdResult<()> {
    let config = load_config(g)?;
    let train_config = config.train_config().map_err(|e| usage(DrapeError::Config(vec![e])))?;
    let model = runtime(load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display())))?;
    let mesh = runtime(config.build_garment())?;
    let collider = runtime(config.build_collider())?;
    let problem = Problem::new(&mesh, collider.as_ref(), train_config.loss_settings());
    let report = runtime(evaluate_dense(&model, &problem, config.output.dense_resolution, config.output.dense_seed))?;
    print!("{}", report_lines(&report));
    Ok(())
}

fn run(cli: Cli) -> CmdResult<()> {
    setup_threads(&cli.global)?;
    let g = &cli.global;
    match &cli.command {
        Command::Atlas { garment, resolution } => cmd_atlas(g, garment.as_deref(), *resolution),
        Command::Train => cmd_train(g),
        Command::Export { checkpoint, mode, resolution } => cmd_export(g, checkpoint, *mode, *resolution),
        Command::BenchEncoding => cmd_bench(g),
        Command::Eval { checkpoint } => cmd_eval(g, checkpoint),
    }
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
        Err(f) => {
            let code = f.code();
            let (Failure::Usage(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
