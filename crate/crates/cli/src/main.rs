//! `mshand` command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mshand::dynamics::{rollout, DynamicsParams, SimState};
use mshand::evaluation::evaluate;
use mshand::io::{self, RunConfig};
use mshand::kinematics::{KinematicTree, Trajectory, NUM_JOINTS};
use mshand::musculature::{apply_overrides, map_muscles, Musculature};
use mshand::pipeline::{biopr_refine, Feedback};
use mshand::training::{train_idnet, train_refinenet, LogEntry};
use mshand::{Error, Result};

/// Environment variable naming a default run configuration.
const CONFIG_ENV: &str = "MSHAND_CONFIG";

#[derive(Parser)]
#[command(name = "mshand", version, about = "Musculoskeletal hand simulation and pose refinement")]
struct Cli {
    /// Seed for every random draw; overrides the config's `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config's `train.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert bone-relative muscle attachments to joint-relative ones.
    MapMuscles(MapMuscles),
    /// Roll the simulator forward under an excitation program.
    Simulate(Simulate),
    /// Train the inverse-dynamics network.
    TrainIdnet(TrainIdnet),
    /// Train the refinement network against a trained inverse-dynamics network.
    TrainRefine(TrainRefine),
    /// Refine a predicted trajectory with the simulator in the loop.
    Refine(Refine),
    /// Score a predicted trajectory against ground truth.
    Eval(Eval),
    /// Normalized joint-angle curves as CSV.
    PlotData(PlotData),
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (defaults to $MSHAND_CONFIG, then built-in defaults).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MapMuscles {
    #[arg(long)]
    bones: PathBuf,
    #[arg(long)]
    attachments: PathBuf,
    /// Per-point offset replacements.
    #[arg(long = "override")]
    overrides: Option<PathBuf>,
    /// Skeleton the result is validated against (default: bundled hand).
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Simulate {
    #[arg(long)]
    muscles: PathBuf,
    #[arg(long)]
    excitations: PathBuf,
    /// Initial pose (starts at rest velocity).
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainIdnet {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(short, long)]
    output: PathBuf,
    /// Per-update mean reward as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Add a wall-clock column to the log (makes it non-reproducible).
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args)]
struct TrainRefine {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    idnet: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Training loss as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args)]
struct Refine {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    idnet: PathBuf,
    #[arg(long)]
    refine: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    /// Pose injected into the simulator before each step: refined or predicted.
    #[arg(long)]
    feedback: Option<Feedback>,
    /// Also write the simulated reference trajectory.
    #[arg(long)]
    emit_reference: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PlotData {
    #[arg(long)]
    traj: PathBuf,
    /// Comma-separated joints: names (`ring_pip`), indices, or `<finger><1-3>`
    /// aliases such as `ring1`.
    #[arg(long, value_delimiter = ',', required = true)]
    joints: Vec<String>,
    /// Rotation axis to plot: x, y or z.
    #[arg(long, default_value = "z")]
    axis: char,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

fn load_tree_or_default(path: &Option<PathBuf>) -> Result<KinematicTree> {
    match path {
        Some(p) => io::load_tree(p),
        None => Ok(KinematicTree::default_hand()),
    }
}

impl ConfigArg {
    fn path(&self) -> Option<PathBuf> {
        self.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
    }

    /// Loads the config and applies the global overrides.
    fn load(&self, cli: &Globals) -> Result<RunConfig> {
        let mut cfg = match self.path() {
            Some(p) => io::load_config(&p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
        }
        if let Some(w) = cli.workers {
            cfg.train.workers = w;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

struct Globals {
    seed: Option<u64>,
    workers: Option<usize>,
}

fn write_log(path: &Path, columns: [&str; 2], log: &[LogEntry], wall_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut head = columns.to_vec();
    if wall_time {
        head.push("wall_time");
    }
    w.write_record(&head).map_err(csv_error)?;
    for e in log {
        let mut row = vec![e.update.to_string(), e.value.to_string()];
        if wall_time {
            row.push(e.wall_time.to_string());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn map_muscles_cmd(a: &MapMuscles) -> Result<()> {
    let tree = load_tree_or_default(&a.tree)?;
    let model = io::load_bones(&a.bones)?;
    let mapped = map_muscles(&model, &io::load_attachments(&a.attachments)?)?;
    let muscles = match &a.overrides {
        Some(p) => apply_overrides(&tree, &mapped, &io::load_overrides(p)?)?,
        None => mapped,
    };
    io::save_musculature(&Musculature::new(&tree, muscles)?, &a.output)
}

fn simulate_cmd(a: &Simulate, g: &Globals) -> Result<()> {
    let cfg = a.config.load(g)?;
    let tree = load_tree_or_default(&a.tree)?;
    let musc = io::load_musculature(&tree, &a.muscles)?;
    let excitations = io::load_excitations(&a.excitations)?.resolve(&musc)?;
    let init = io::load_pose(&a.init)?;
    let state = SimState::new(&tree, &musc, &init)?;
    let params: &DynamicsParams = &cfg.dynamics;
    io::save_trajectory(&rollout(&state, &tree, &musc, &excitations, params)?, &a.output)
}

fn train_idnet_cmd(a: &TrainIdnet, g: &Globals) -> Result<()> {
    let cfg = a.config.load(g)?;
    let (tree, musc) = cfg.system()?;
    let trajectories = cfg.trajectories(&tree)?;
    let out = train_idnet(&tree, &musc, &cfg.dynamics, &trajectories, &cfg.train)?;
    io::save_checkpoint(&out.net.to_checkpoint(), &a.output)?;
    if let Some(p) = &a.log {
        write_log(p, ["update", "mean_reward"], &out.log, a.wall_time)?;
    }
    Ok(())
}

fn train_refine_cmd(a: &TrainRefine, g: &Globals) -> Result<()> {
    let cfg = a.config.load(g)?;
    let (tree, musc) = cfg.system()?;
    let idnet = io::load_idnet(&a.idnet)?;
    let trajectories = cfg.trajectories(&tree)?;
    let out = train_refinenet(&tree, &musc, &idnet, &cfg.pipeline_params(), &trajectories, &cfg.train)?;
    io::save_checkpoint(&out.net.to_checkpoint(), &a.output)?;
    if let Some(p) = &a.log {
        write_log(p, ["iteration", "loss"], &out.log, a.wall_time)?;
    }
    Ok(())
}

fn refine_cmd(a: &Refine, g: &Globals) -> Result<()> {
    let cfg = a.config.load(g)?;
    let (tree, musc) = cfg.system()?;
    let mut params = cfg.pipeline_params();
    if let Some(f) = a.feedback {
        params.feedback = f;
    }
    let pred = io::load_trajectory(&a.pred)?;
    let out = biopr_refine(&pred, &tree, &musc, &io::load_idnet(&a.idnet)?, &io::load_refinenet(&a.refine)?, &params)?;
    io::save_trajectory(&out.refined, &a.output)?;
    if let Some(p) = &a.emit_reference {
        io::save_trajectory(&out.reference, p)?;
    }
    Ok(())
}

fn eval_cmd(a: &Eval) -> Result<()> {
    let tree = load_tree_or_default(&a.tree)?;
    let report = evaluate(&tree, &io::load_trajectory(&a.pred)?, &io::load_trajectory(&a.gt)?)?;
    io::save_json(&report, &a.output)
}

/// Resolves a joint by name, index, or `<finger><n>` alias (`ring1` is the
/// ring finger's first joint from the palm).
fn resolve_joint(tree: &KinematicTree, spec: &str) -> Result<usize> {
    if let Some(j) = tree.joint_index(spec) {
        return Ok(j);
    }
    if let Ok(j) = spec.parse::<usize>() {
        if j < NUM_JOINTS {
            return Ok(j);
        }
    }
    let fingers = [("index", 1), ("middle", 4), ("ring", 7), ("little", 10), ("pinky", 10), ("thumb", 13)];
    for (finger, first) in fingers {
        if let Some(n) = spec.strip_prefix(finger).and_then(|n| n.parse::<usize>().ok()) {
            if (1..=3).contains(&n) {
                return Ok(first + n - 1);
            }
        }
    }
    Err(Error::InvalidArgument(format!("unknown joint {spec:?}")))
}

/// Change of one joint coordinate from frame 0, divided by the change at
/// its largest excursion, so a one-way motion runs from 0 to 1.
fn normalized_curve(traj: &Trajectory, joint: usize, axis: usize) -> Vec<f64> {
    let start = traj.pose(0).rotations[joint][axis];
    let delta: Vec<f64> = traj.poses().map(|p| p.rotations[joint][axis] - start).collect();
    let peak = delta.iter().copied().fold(0.0, |a: f64, d| if d.abs() > a.abs() { d } else { a });
    if peak == 0.0 {
        return vec![0.0; delta.len()];
    }
    delta.iter().map(|d| d / peak).collect()
}

fn plot_data_cmd(a: &PlotData) -> Result<()> {
    let tree = load_tree_or_default(&a.tree)?;
    let axis = match a.axis {
        'x' => 0,
        'y' => 1,
        'z' => 2,
        other => return Err(Error::InvalidArgument(format!("axis must be x, y or z, got {other:?}"))),
    };
    let traj = io::load_trajectory(&a.traj)?;
    let joints = a.joints.iter().map(|s| resolve_joint(&tree, s)).collect::<Result<Vec<_>>>()?;
    let curves: Vec<Vec<f64>> = joints.iter().map(|&j| normalized_curve(&traj, j, axis)).collect();
    let mut w = csv::Writer::from_path(&a.output).map_err(csv_error)?;
    let mut header = vec!["frame".to_string(), "t".to_string()];
    header.extend(a.joints.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (i, f) in traj.frames().iter().enumerate() {
        let mut row = vec![i.to_string(), f.t.to_string()];
        row.extend(curves.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = Globals { seed: cli.seed, workers: cli.workers };
    match &cli.command {
        Command::MapMuscles(a) => map_muscles_cmd(a),
        Command::Simulate(a) => simulate_cmd(a, &g),
        Command::TrainIdnet(a) => train_idnet_cmd(a, &g),
        Command::TrainRefine(a) => train_refine_cmd(a, &g),
        Command::Refine(a) => refine_cmd(a, &g),
        Command::Eval(a) => eval_cmd(a),
        Command::PlotData(a) => plot_data_cmd(a),
    }
}

fn main() -> ExitCode {
    // Clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "error: {line}");
            ExitCode::from(1)
        }
    }
}
