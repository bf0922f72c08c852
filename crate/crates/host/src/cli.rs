use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use emr_core::ann::{
    frozen_accuracy, generate_training_data, parse_eeprom, train_with, NetGeometry, TrainParams, WeightImage,
    EEPROM_CAPACITY,
};
use emr_core::firmware::Phase;
use emr_core::mapping::{measurement_duration, GlobalMap, LocalMap, RobotFix};
use emr_core::protocol::{protocol_markdown, MotorAction};
use emr_core::sensor::find_model;
use emr_core::{Command, Response};

use crate::files::write_atomic;
use crate::session::{load_catalog, Session, CATALOG_ENV};
use crate::{Exit, Failure};

#[derive(Debug, Parser)]
#[command(name = "emr", version, about = "Infrared environment-scanner emulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a distance converter and write its EEPROM image.
    Train(TrainArgs),
    /// Boot a session, run one scan and write the local map.
    Scan(ScanArgs),
    /// Merge a local map into a global map file.
    Merge(MergeArgs),
    /// Serve the HTTP API for a session.
    Serve(ServeArgs),
    /// Print or write the protocol reference.
    ProtocolDoc(DocArgs),
    /// Export command/frame/response triples for client test suites.
    Conformance(ConformanceArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub sensor: String,
    /// Sensor catalog JSON.
    #[arg(long, env = CATALOG_ENV)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value = "10-16-8")]
    pub geometry: String,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 20_000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Distance class width in cm.
    #[arg(long, default_value_t = 1)]
    pub resolution: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep other sensors' images already in `out`.
    #[arg(long)]
    pub append: bool,
    /// Print the bit-error history only every N epochs.
    #[arg(long, default_value_t = 1)]
    pub every: usize,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Binary map output.
    #[arg(long)]
    pub out: PathBuf,
    /// PBM output; defaults to `out` with a `.pbm` extension.
    #[arg(long)]
    pub pbm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Global map file, created if missing.
    #[arg(long)]
    pub global: PathBuf,
    #[arg(long)]
    pub local: PathBuf,
    /// Robot heading in degrees clockwise from north.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Robot position in cells.
    #[arg(long, allow_negative_numbers = true, default_value_t = 0)]
    pub dx: i64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0)]
    pub dy: i64,
    /// Also write the merged map as PBM.
    #[arg(long)]
    pub pbm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

#[derive(Debug, Args)]
pub struct DocArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<Exit, Failure> {
    match cli.command {
        Cmd::Train(a) => train(&a),
        Cmd::Scan(a) => scan(&a),
        Cmd::Merge(a) => merge(&a),
        Cmd::Serve(a) => serve(&a),
        Cmd::ProtocolDoc(a) => {
            emit(a.out.as_deref(), protocol_markdown().as_bytes())?;
            Ok(Exit::Ok)
        }
        Cmd::Conformance(a) => {
            let session = Session::load(&a.session)?;
            let doc = crate::conformance::fixtures(&session);
            let mut text = serde_json::to_string_pretty(&doc).expect("fixtures serialize");
            text.push('\n');
            emit(a.out.as_deref(), text.as_bytes())?;
            Ok(Exit::Ok)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, bytes).map_err(|e| Failure::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::usage(format!("stdout: {e}"))),
    }
}

fn train(a: &TrainArgs) -> Result<Exit, Failure> {
    if a.epochs == 0 {
        return Err(Failure::usage("--epochs must be at least 1"));
    }
    if !(a.eta.is_finite() && a.eta > 0.0) {
        return Err(Failure::usage("--eta must be positive"));
    }
    let catalog = load_catalog(a.catalog.as_deref())?;
    let spec = find_model(&catalog, &a.sensor).map_err(Failure::usage)?;
    let geometry = NetGeometry::parse(&a.geometry).map_err(Failure::usage)?;
    if !geometry.is_converter() {
        return Err(Failure::usage(format!(
            "{geometry} is not a 10-input, 8-output network"
        )));
    }
    let ts = generate_training_data(spec, a.resolution).map_err(Failure::usage)?;

    let params = TrainParams {
        eta: a.eta,
        epochs: a.epochs,
        seed: a.seed,
    };
    let every = a.every.max(1);
    let mut out = std::io::stdout().lock();
    let outcome = train_with(&ts, &geometry, params, |epoch, errors| {
        if epoch % every == 0 || errors == 0 {
            let _ = writeln!(out, "epoch {epoch} bit-errors {errors}");
        }
    })
    .map_err(Failure::usage)?;
    drop(out);

    let accuracy = frozen_accuracy(&outcome.weights, &ts);
    let mut image = WeightImage::new(spec.model_name.clone(), outcome.weights);
    image.converged = outcome.converged;

    let mut images = Vec::new();
    if a.append && a.out.exists() {
        let existing = std::fs::read(&a.out).map_err(|e| Failure::io(&a.out, e))?;
        images = parse_eeprom(&existing).map_err(|e| Failure::mismatch(format!("{}: {e}", a.out.display())))?;
        images.retain(|i| i.model != image.model);
    }
    images.push(image);
    let mut bytes = Vec::new();
    for i in &images {
        bytes.extend(i.to_bytes().map_err(Failure::mismatch)?);
    }
    if bytes.len() > EEPROM_CAPACITY {
        return Err(Failure::mismatch(format!(
            "{} bytes of images exceed the {EEPROM_CAPACITY}-byte EEPROM",
            bytes.len()
        )));
    }
    write_atomic(&a.out, &bytes).map_err(|e| Failure::io(&a.out, e))?;

    println!(
        "accuracy {accuracy:.4} over {} patterns after {} epochs",
        ts.len(),
        outcome.bit_errors.len()
    );
    println!("image {} ({} bytes)", a.out.display(), bytes.len());
    if outcome.converged {
        Ok(Exit::Ok)
    } else {
        eprintln!("warning: training did not converge; image marked as partial");
        Ok(Exit::NotConverged)
    }
}

fn scan(a: &ScanArgs) -> Result<Exit, Failure> {
    let session = Session::load(&a.session)?;
    let mut fw = session.boot();
    if fw.phase() == Phase::Faulted {
        return Err(Failure::new(
            Exit::Fault,
            format!("firmware fault\n{}", fw.fault_report().unwrap_or_default()),
        ));
    }
    let (scene, pose) = (&session.scene, &session.pose);
    let on = Command::Motor {
        motor: 1,
        action: MotorAction::On,
    };
    fw.execute(&on, scene, pose);
    let map = match fw.execute(&Command::LocalScan, scene, pose) {
        Response::Ack(bytes) => LocalMap::from_bytes(&bytes).map_err(Failure::mismatch)?,
        Response::Nak(code) if fw.phase() == Phase::Faulted => {
            return Err(Failure::new(Exit::Fault, format!("scan: NAK {}", code.name())));
        }
        Response::Nak(code) => {
            return Err(Failure::mismatch(format!("scan refused: NAK {}", code.name())));
        }
    };
    let pbm = a.pbm.clone().unwrap_or_else(|| a.out.with_extension("pbm"));
    write_atomic(&a.out, &map.to_bytes()).map_err(|e| Failure::io(&a.out, e))?;
    write_atomic(&pbm, map.to_pbm().as_bytes()).map_err(|e| Failure::io(&pbm, e))?;
    let report = fw.last_scan().cloned().expect("scan report after a scan");
    println!(
        "elapsed {:.3} s (estimate {:.3} s), {} rays, {} echoes, {} cells",
        report.elapsed,
        measurement_duration(&fw.config().scan),
        report.rays,
        report.echoes,
        report.cells
    );
    Ok(Exit::Ok)
}

fn merge(a: &MergeArgs) -> Result<Exit, Failure> {
    let local_bytes = std::fs::read(&a.local).map_err(|e| Failure::io(&a.local, e))?;
    let local =
        LocalMap::from_bytes(&local_bytes).map_err(|e| Failure::mismatch(format!("{}: {e}", a.local.display())))?;
    let mut global = if a.global.exists() {
        let bytes = std::fs::read(&a.global).map_err(|e| Failure::io(&a.global, e))?;
        GlobalMap::from_bytes(&bytes).map_err(|e| Failure::mismatch(format!("{}: {e}", a.global.display())))?
    } else {
        GlobalMap::new(local.raster())
    };
    global
        .merge(&local, &RobotFix::new(a.alpha, a.dx, a.dy))
        .map_err(Failure::mismatch)?;
    write_atomic(&a.global, &global.to_bytes()).map_err(|e| Failure::io(&a.global, e))?;
    if let Some(p) = &a.pbm {
        write_atomic(p, global.to_pbm().as_bytes()).map_err(|e| Failure::io(p, e))?;
    }
    println!("{} cells in {}", global.count(), a.global.display());
    Ok(Exit::Ok)
}

fn serve(a: &ServeArgs) -> Result<Exit, Failure> {
    let session = Session::load(&a.session)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .map_err(|e| Failure::usage(format!("bind {}: {e}", a.bind)))?;
        eprintln!("listening on http://{}", a.bind);
        let app = crate::server::router(crate::server::spawn(session));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::usage(format!("serve: {e}")))
    })?;
    Ok(Exit::Ok)
}
