use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Rotation3, Vector3};
use tileil::demos::{generate_demos, save_demos, tool_down, ExpertConfig};
use tileil::gesture::{read_model, run_task, write_model, GestureTask, Kernel};
use tileil::handmap::HandSchema;
use tileil::kinematics::{solve_ik, DhTable, HomTransform, IkSettings, JointAngles};
use tileil::tilesim::{SceneConfig, TileEnv};
use tileil::trainer::{evaluate, load_groups, load_policy, run_group_suite, train, GroupConfig, Trainer};
use tileil_bridge::{run_blocking, GestureModel, ServeConfig, SessionConfig};

/// Seed of the evaluation episode sequence unless overridden.
const EVAL_SEED: u64 = 7;

#[derive(Parser)]
#[command(name = "tileil", version, about = "Tile-installation imitation learning toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one group config.
    Train(TrainArgs),
    /// Evaluate a policy checkpoint with the deterministic policy.
    Eval(EvalArgs),
    /// Train and evaluate every group config in a directory.
    Suite(SuiteArgs),
    /// Demonstration tools.
    Demo {
        #[command(subcommand)]
        cmd: DemoCmd,
    },
    /// Gesture classifier tools.
    Gesture {
        #[command(subcommand)]
        cmd: GestureCmd,
    },
    /// Kinematics tools.
    Ik {
        #[command(subcommand)]
        cmd: IkCmd,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    group: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Step budget; overrides max_steps from the config.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Episodes for the final evaluation (0 skips it).
    #[arg(short = 'n', long, default_value_t = 100)]
    eval_episodes: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short = 'n', long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = EVAL_SEED)]
    seed: u64,
    /// Scene config; the bundled scene by default.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    groups: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value = "runs/suite")]
    out: PathBuf,
    #[arg(short = 'n', long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = EVAL_SEED)]
    eval_seed: u64,
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Record scripted-expert demonstrations.
    Expert {
        #[arg(short = 'n', default_value_t = 60)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10000)]
        seed: u64,
    },
    /// Record human demonstrations through the teleop bridge.
    Record {
        /// Start the WebSocket bridge and serve the viewer page.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: SocketAddr,
        #[arg(long, default_value = "teleop_demos.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// GSVM1 grip model; enables skeleton messages.
        #[arg(long)]
        gesture_model: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GestureCmd {
    /// Train on the synthetic dataset and report held-out accuracy.
    Train {
        /// grip (also used for suction) or screw; both when omitted.
        #[arg(long)]
        task: Option<GestureTask>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the fitted model here (single task only).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IkCmd {
    /// Solve for the joint angles reaching a flange pose; prints six angles
    /// in degrees.
    Solve {
        /// Flange position x,y,z in meters.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        position: Vec<f64>,
        /// Roll, pitch, yaw in degrees; tool pointing down when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rpy: Option<Vec<f64>>,
        /// Initial joint angles in degrees; the scene home pose by default.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// DH table file (rows of a, alpha, d, theta offset); UR3 by default.
        #[arg(long)]
        dh: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Suite(a) => cmd_suite(a),
        Cmd::Demo { cmd } => match cmd {
            DemoCmd::Expert { n, out, seed } => cmd_demo_expert(n, out, seed),
            DemoCmd::Record { serve, addr, out, seed, gesture_model } => {
                if !serve {
                    bail!("recording needs the bridge; pass --serve");
                }
                cmd_record(addr, out, seed, gesture_model)
            }
        },
        Cmd::Gesture { cmd: GestureCmd::Train { task, seed, model_out } } => cmd_gesture(task, seed, model_out),
        Cmd::Ik { cmd: IkCmd::Solve { position, rpy, from, dh } } => cmd_ik(position, rpy, from, dh),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut group = GroupConfig::load(&a.group).with_context(|| format!("loading {}", a.group.display()))?;
    if let Some(s) = a.seed {
        group.seed = s;
    }
    if let Some(b) = a.budget {
        group.max_steps = b;
    }
    let dir = a.out.join(format!("{}-seed{}", group.name, group.seed));
    let mut trainer = Trainer::new(group.clone())?;
    let outcome = train(&mut trainer, &dir)?;
    println!(
        "{}: {} updates, {} steps, status {} -> {}",
        group.name,
        outcome.manifest.updates,
        outcome.manifest.steps,
        outcome.manifest.status,
        dir.display()
    );
    if a.eval_episodes > 0 {
        let r = evaluate(&outcome.policy, &group.scene, a.eval_episodes, EVAL_SEED)?;
        print_report(&r);
    }
    Ok(())
}

fn print_report(r: &tileil::trainer::EvalReport) {
    println!("episodes            {}", r.n_episodes);
    println!("picked rate         {:.1}%", 100.0 * r.picked_rate);
    println!("installed rate      {:.1}%", 100.0 * r.installed_rate);
    println!("avg episode length  {:.1}", r.avg_episode_length);
    match r.installed_avg_length {
        Some(l) => println!("installed length    {l:.1}"),
        None => println!("installed length    -"),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let policy = load_policy(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let scene = match &a.scene {
        Some(p) => SceneConfig::load(p)?,
        None => SceneConfig::default(),
    };
    print_report(&evaluate(&policy, &scene, a.episodes, a.seed)?);
    Ok(())
}

fn cmd_suite(a: SuiteArgs) -> Result<()> {
    let groups = load_groups(&a.groups)?;
    let rows = run_group_suite(&groups, a.budget, &a.out, a.episodes, a.eval_seed)?;
    println!("{:<32} {:>9} {:>8} {:>10} {:>8}", "group", "steps", "picked", "installed", "length");
    for r in &rows {
        println!(
            "{:<32} {:>9} {:>7.1}% {:>9.1}% {:>8.1}",
            r.group,
            r.steps,
            100.0 * r.picked_rate,
            100.0 * r.installed_rate,
            r.avg_episode_length
        );
    }
    println!("table written to {}", a.out.join("suite.csv").display());
    Ok(())
}

fn cmd_demo_expert(n: usize, out: PathBuf, seed: u64) -> Result<()> {
    let mut env = TileEnv::new(SceneConfig::default());
    let set = generate_demos(&mut env, &ExpertConfig::default(), n, seed)?;
    save_demos(&out, &set)?;
    let mean_len = set.transition_count() as f64 / set.trajectories.len().max(1) as f64;
    println!(
        "{} demonstrations, {} transitions (mean length {:.1}) -> {}",
        set.trajectories.len(),
        set.transition_count(),
        mean_len,
        out.display()
    );
    Ok(())
}

fn cmd_record(addr: SocketAddr, out: PathBuf, seed: u64, gesture_model: Option<PathBuf>) -> Result<()> {
    let gesture = match gesture_model {
        Some(p) => {
            let model = read_model(BufReader::new(File::open(&p)?))?;
            if model.task != GestureTask::Grip {
                bail!("skeleton mode needs a grip model, got {}", model.task);
            }
            Some(GestureModel { schema: HandSchema::default_21(), model })
        }
        None => None,
    };
    let session = SessionConfig { record_path: Some(out.clone()), gesture, ..SessionConfig::default() };
    let cfg = ServeConfig { addr, session, seed, ..ServeConfig::default() };
    eprintln!("open http://{addr}/ in a browser; recordings go to {}", out.display());
    let session = run_blocking(cfg)?;
    println!("{} demonstrations recorded", session.recorded().len());
    Ok(())
}

fn cmd_gesture(task: Option<GestureTask>, seed: u64, model_out: Option<PathBuf>) -> Result<()> {
    let tasks = match task {
        Some(t) => vec![t],
        None => vec![GestureTask::Grip, GestureTask::Screw],
    };
    if model_out.is_some() && tasks.len() != 1 {
        bail!("--model-out needs a single --task");
    }
    println!("{:<6} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9}", "task", "train", "test", "C", "gamma", "cv acc", "test acc");
    for t in tasks {
        let r = run_task(t, seed)?;
        let gamma = match r.cv.best.kernel {
            Kernel::Rbf { gamma } => format!("{gamma}"),
            Kernel::Linear => "linear".into(),
        };
        println!(
            "{:<6} {:>6} {:>6} {:>6} {:>6} {:>8.2}% {:>8.2}%",
            t.to_string(),
            r.n_train,
            r.n_test,
            r.cv.best.c,
            gamma,
            100.0 * r.cv.mean_accuracy,
            100.0 * r.test_accuracy
        );
        if let Some(p) = &model_out {
            let mut w = BufWriter::new(File::create(p)?);
            write_model(&mut w, &r.model)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_ik(position: Vec<f64>, rpy: Option<Vec<f64>>, from: Option<Vec<f64>>, dh: Option<PathBuf>) -> Result<()> {
    if position.len() != 3 || rpy.as_ref().is_some_and(|a| a.len() != 3) || from.as_ref().is_some_and(|q| q.len() != 6) {
        bail!("--position and --rpy take three comma-separated numbers, --from takes six");
    }
    let dh = match dh {
        Some(p) => DhTable::load(p)?,
        None => DhTable::ur3(),
    };
    let rot = match rpy {
        Some(a) => {
            let [r, p, y] = [a[0], a[1], a[2]].map(f64::to_radians);
            *Rotation3::from_euler_angles(r, p, y).matrix()
        }
        None => tool_down(),
    };
    let target = HomTransform::from_parts(&rot, &Vector3::new(position[0], position[1], position[2]));
    let q0 = match from {
        Some(v) => JointAngles::from_degrees([v[0], v[1], v[2], v[3], v[4], v[5]]),
        None => JointAngles::from_degrees(SceneConfig::default().home_deg),
    };
    let sol = solve_ik(&dh, &q0, &target, &IkSettings::default())?;
    let text: Vec<String> = sol.q.degrees().iter().map(|d| format!("{d:.6}")).collect();
    println!("{}", text.join(" "));
    Ok(())
}
