//! `democap`: run the collection service or inspect exported records.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use democap_core::gateway::cli::{self, CliOutcome, DEFAULT_AUDIT_RATE, EXIT_CONFIG};
use democap_core::gateway::{serve, Service};
use democap_core::kinematics::KinematicChain;
use democap_core::scene::SceneModel;

use config::{FileConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "democap", version, about = "Robot demonstration collection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the session service for console connections.
    Serve {
        /// Arm definition (TOML); the bundled Panda model if omitted.
        #[arg(long, env = "DEMOCAP_CHAIN")]
        chain: Option<PathBuf>,
        /// Scene definition (TOML).
        #[arg(long, env = "DEMOCAP_SCENE")]
        scene: Option<PathBuf>,
        /// Listen address, default 127.0.0.1:7878.
        #[arg(long, env = "DEMOCAP_LISTEN")]
        listen: Option<String>,
        /// Directory that `export` commands write records into.
        #[arg(long, env = "DEMOCAP_EXPORT_DIR")]
        export_dir: Option<PathBuf>,
        /// TOML file with any of: chain, scene, listen, export_dir.
        #[arg(long, env = "DEMOCAP_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Check a record directory's checksums, dimensions and version.
    Validate { dir: PathBuf },
    /// Replay a record against a scene and report collisions.
    Audit {
        dir: PathBuf,
        #[arg(long, env = "DEMOCAP_SCENE")]
        scene: PathBuf,
        /// Replay sampling rate in Hz.
        #[arg(long, env = "DEMOCAP_AUDIT_RATE", default_value_t = DEFAULT_AUDIT_RATE)]
        rate: f64,
        /// Obstacle labels allowed to be touched (the task objects).
        #[arg(long = "ignore", num_args = 1..)]
        ignore: Vec<String>,
    },
    /// Render depth.raw and rgb.ppm for one camera pose.
    Render {
        scene: PathBuf,
        /// Camera pose: px py pz qx qy qz qw. Defaults to the scene camera.
        #[arg(long, num_args = 7, allow_negative_numbers = true)]
        pose: Option<Vec<f64>>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn report(outcome: CliOutcome) -> ExitCode {
    if outcome.code == 0 {
        println!("{}", outcome.report);
    } else {
        eprintln!("{}", outcome.report);
    }
    ExitCode::from(outcome.code as u8)
}

fn run_serve(over: Overrides, config: Option<PathBuf>) -> anyhow::Result<()> {
    let file = match &config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = config::resolve(over, file)?;
    let chain = match &cfg.chain {
        Some(p) => KinematicChain::load(p)?,
        None => KinematicChain::panda(),
    };
    let scene = SceneModel::load(&cfg.scene)?;
    if let Some(dir) = &cfg.export_dir {
        std::fs::create_dir_all(dir)?;
    }
    let listener = std::net::TcpListener::bind(&cfg.listen)?;
    println!("listening on {}", listener.local_addr()?);
    log::info!("chain {}, scene {}", chain.name, cfg.scene.display());
    serve(Arc::new(Service::new(chain, scene, cfg.export_dir)), listener)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEMOCAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match cli.command {
        Command::Serve {
            chain,
            scene,
            listen,
            export_dir,
            config,
        } => {
            let over = Overrides {
                chain,
                scene,
                listen,
                export_dir,
            };
            match run_serve(over, config) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("democap serve: {e:#}");
                    ExitCode::from(EXIT_CONFIG as u8)
                }
            }
        }
        Command::Validate { dir } => report(cli::cli_validate(&dir)),
        Command::Audit {
            dir,
            scene,
            rate,
            ignore,
        } => report(cli::cli_audit(&dir, &scene, rate, &ignore)),
        Command::Render { scene, pose, out } => {
            let pose: Option<[f64; 7]> = pose.map(|p| p.try_into().expect("clap enforces 7 values"));
            match cli::cli_render(&scene, pose.as_ref(), &out) {
                Ok((outcome, _)) => report(outcome),
                Err(outcome) => report(outcome),
            }
        }
    }
}
