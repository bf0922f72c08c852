//! Session files: everything needed to boot one emulated module in a scene.
//!
//! Paths inside a session are resolved relative to the session file.

use std::path::{Path, PathBuf};

use emr_core::firmware::{FirmwareConfig, MotorSetup, SensorMount};
use emr_core::mapping::ScanConfig;
use emr_core::motion::{GearTrain, MotorDoc, RampProfile, StepperSpec};
use emr_core::sensor::{find_model, parse_catalog, SensorSpec, CATALOG};
use emr_core::world::{load_scene, Pose, Scene};
use emr_core::Firmware;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the default sensor catalog.
pub const CATALOG_ENV: &str = "EMR_CATALOG";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

impl SessionError {
    fn invalid(path: &Path, message: impl ToString) -> Self {
        SessionError::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

/// Head motor and gear train. Without a ramp the default linear ramp for
/// the train is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionDoc {
    #[serde(default = "reference_motor")]
    pub motor: MotorDoc,
    pub stages: GearTrain,
    #[serde(default)]
    pub ramp: Option<RampProfile>,
}

fn reference_motor() -> MotorDoc {
    MotorDoc {
        step_deg: 3.6,
        poles_2p: 50,
        phases: 2,
    }
}

/// On-disk session document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub scene: PathBuf,
    /// Model of the head sensor.
    pub sensor: String,
    /// Sensor catalog; falls back to `EMR_CATALOG`, then the bundled one.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub motion: Option<MotionDoc>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    pub eeprom: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the middle of the scene, facing north.
    #[serde(default)]
    pub pose: Option<PoseDoc>,
    /// Extra fixed sensors; the head sensor always sits on port 1.
    #[serde(default)]
    pub fixed_sensors: Option<Vec<SensorMount>>,
    #[serde(default)]
    pub noise_sigma: f64,
}

/// A loaded session with every referenced file read and parsed.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: FirmwareConfig,
    pub scene: Scene,
    pub pose: Pose,
    pub eeprom: Vec<u8>,
}

impl Session {
    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = read_text(path)?;
        let doc: SessionConfig = serde_json::from_str(&text).map_err(|e| SessionError::invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_doc(&doc, base)
    }

    pub fn from_doc(doc: &SessionConfig, base: &Path) -> Result<Self, SessionError> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let scene_path = resolve(&doc.scene);
        let scene = load_scene(&read_text(&scene_path)?).map_err(|e| SessionError::invalid(&scene_path, e))?;
        let catalog = load_catalog(doc.catalog.as_deref().map(resolve).as_deref())?;
        find_model(&catalog, &doc.sensor).map_err(|e| SessionError::invalid(&base.join("session"), e))?;

        let eeprom_path = resolve(&doc.eeprom);
        let eeprom = std::fs::read(&eeprom_path).map_err(|source| SessionError::Io {
            path: eeprom_path.clone(),
            source,
        })?;

        let mut config = FirmwareConfig {
            catalog,
            seed: doc.seed,
            ..FirmwareConfig::default()
        };
        if let Some(m) = &doc.motion {
            config.motors[0] = motor_setup(m).map_err(|e| SessionError::invalid(base, e))?;
        }
        if let Some(scan) = doc.scan {
            scan.validate().map_err(|e| SessionError::invalid(base, e))?;
            config.scan = scan;
        }
        let mut sensors = vec![SensorMount {
            port: 1,
            model: doc.sensor.clone(),
            head: true,
            azimuth: 0.0,
            noise_sigma: doc.noise_sigma,
        }];
        match &doc.fixed_sensors {
            Some(extra) => sensors.extend(extra.iter().cloned()),
            None => sensors.extend(config.sensors.iter().filter(|s| !s.head).map(|s| SensorMount {
                model: doc.sensor.clone(),
                noise_sigma: doc.noise_sigma,
                ..s.clone()
            })),
        }
        config.sensors = sensors;

        let pose = match &doc.pose {
            Some(p) => Pose::new(p.x, p.y, p.heading),
            None => {
                let b = scene.bounds();
                Pose::new((b.min.x + b.max.x) / 2.0, (b.min.y + b.max.y) / 2.0, 0.0)
            }
        };
        Ok(Self {
            config,
            scene,
            pose,
            eeprom,
        })
    }

    pub fn boot(&self) -> Firmware {
        Firmware::boot(self.eeprom.clone(), self.config.clone())
    }
}

fn motor_setup(doc: &MotionDoc) -> Result<MotorSetup, String> {
    let m = &doc.motor;
    let spec = StepperSpec {
        pole_count_2p: m.poles_2p,
        phase_count_m: m.phases,
        step_angle_full: m.step_deg,
        ..StepperSpec::reference()
    };
    spec.validate().map_err(|e| e.to_string())?;
    let mut setup = MotorSetup::with_motor(doc.stages.clone(), spec);
    if let Some(ramp) = doc.ramp {
        ramp.validate().map_err(|e| e.to_string())?;
        setup.ramp = ramp;
    }
    Ok(setup)
}

fn read_text(path: &Path) -> Result<String, SessionError> {
    std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Catalog from `path`, else from `EMR_CATALOG`, else the bundled one.
pub fn load_catalog(path: Option<&Path>) -> Result<Vec<SensorSpec>, SessionError> {
    let from_env = std::env::var_os(CATALOG_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => {
            let text = read_text(&p)?;
            parse_catalog(&text).map_err(|e| SessionError::invalid(&p, e))
        }
        None => Ok(parse_catalog(CATALOG).expect("bundled catalog parses")),
    }
}
