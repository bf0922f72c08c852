//! Emulated microcontroller program: boot from EEPROM, command loop,
//! watchdog, motor state machines and the scan procedure.
//!
//! Time is simulated. Scanning charges 0.05 s per segment step-batch and
//! 0.01 s per distance computation; head positioning is charged by the
//! motor's ramp profile.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{infer_distance, parse_eeprom, AnnError, WeightMatrix};
use crate::mapping::{LocalMap, MapError, ScanConfig};
use crate::motion::{
    head_step_angle, move_duration, step_sequence, CoilState, GearTrain, RampProfile, SequenceKind, StepMode,
    StepperSpec,
};
use crate::protocol::{
    decode, unframe, AddressClass, Command, MotorAction, NakCode, Response, SevenBitAddress, DEFAULT_MODULE_ADDRESS,
};
use crate::sensor::{find_model, parse_catalog, PowerManager, PowerMode, SensorSpec, SensorState, CATALOG};
use crate::world::{Pose, Scene};

/// Seconds per mechanical step-batch while scanning.
pub const SEGMENT_STEP_TIME: f64 = 0.05;
/// Seconds per distance computation.
pub const MEASURE_TIME: f64 = 0.01;
/// Head speed in start-stop operation, degrees per second.
pub const START_STOP_HEAD_SPEED: f64 = 20.0;
/// Boot failures tolerated before the module gives up.
pub const MAX_BOOT_FAILURES: u32 = 2;

const LIMIT_DEG: f64 = 180.0;
const RESOLUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    LoadingWeights,
    Ready,
    Executing,
    Faulted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// Gear train, motor and ramp of one stepper axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSetup {
    pub train: GearTrain,
    pub spec: StepperSpec,
    pub ramp: RampProfile,
}

impl MotorSetup {
    /// Linear ramp from the 20 deg/s start-stop speed to 1.2 times that.
    pub fn for_train(train: GearTrain) -> Self {
        Self::with_motor(train, StepperSpec::reference())
    }

    /// [`MotorSetup::for_train`] for another motor.
    pub fn with_motor(train: GearTrain, spec: StepperSpec) -> Self {
        let full = head_step_angle(&train, spec.step_angle_full);
        let n_s = START_STOP_HEAD_SPEED / full;
        Self {
            train,
            spec,
            ramp: RampProfile::linear(n_s, 1.2 * n_s, 0.5 * n_s),
        }
    }
}

impl Default for MotorSetup {
    fn default() -> Self {
        Self::for_train(GearTrain::reference())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotorState {
    pub enabled: bool,
    pub mode: StepMode,
    pub direction: Direction,
    /// Drive-table row counter in the current mode's units.
    pub step_index: i64,
    /// Position in half-steps from the zero position; right is positive.
    pub half_steps: i64,
    #[serde(skip)]
    pub setup: MotorSetup,
}

impl MotorState {
    pub fn new(setup: MotorSetup) -> Self {
        Self {
            enabled: false,
            mode: StepMode::Full,
            direction: Direction::Right,
            step_index: 0,
            half_steps: 0,
            setup,
        }
    }

    fn half_step_angle(&self) -> f64 {
        head_step_angle(&self.setup.train, self.setup.spec.step_angle_full) / 2.0
    }

    /// Head angle of one step in the current mode.
    pub fn step_angle(&self) -> f64 {
        match self.mode {
            StepMode::Full => 2.0 * self.half_step_angle(),
            StepMode::Half => self.half_step_angle(),
        }
    }

    pub fn head_angle(&self) -> f64 {
        self.half_steps as f64 * self.half_step_angle()
    }

    pub fn coil_state(&self) -> CoilState {
        let kind = match self.mode {
            StepMode::Full => SequenceKind::BipolarFull,
            StepMode::Half => SequenceKind::BipolarHalf,
        };
        step_sequence(kind, self.step_index)
    }

    fn half_steps_per_step(&self) -> i64 {
        match self.mode {
            StepMode::Full => 2,
            StepMode::Half => 1,
        }
    }

    pub fn set_mode(&mut self, mode: StepMode) {
        if mode == self.mode {
            return;
        }
        self.step_index = match mode {
            StepMode::Half => self.step_index * 2,
            StepMode::Full => self.step_index.div_euclid(2),
        };
        self.mode = mode;
    }

    /// One step in the current direction, refused past +/-180 degrees.
    pub fn step(&mut self) -> Result<(), NakCode> {
        if !self.enabled {
            return Err(NakCode::MotorOff);
        }
        let sign = match self.direction {
            Direction::Right => 1,
            Direction::Left => -1,
        };
        let next = self.half_steps + sign * self.half_steps_per_step();
        if (next as f64 * self.half_step_angle()).abs() > LIMIT_DEG + 1e-9 {
            return Err(NakCode::Limit);
        }
        self.half_steps = next;
        self.step_index += sign;
        Ok(())
    }
}

/// Sensor on a port. The head sensor's azimuth is added to the head angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorMount {
    /// Port number 1-32 as used in commands.
    pub port: u8,
    pub model: String,
    #[serde(default)]
    pub head: bool,
    /// Degrees clockwise from the robot's forward axis.
    #[serde(default)]
    pub azimuth: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmwareConfig {
    pub motors: [MotorSetup; 2],
    pub sensors: Vec<SensorMount>,
    pub scan: ScanConfig,
    pub catalog: Vec<SensorSpec>,
    /// Watchdog period, simulated seconds.
    pub watchdog_period: f64,
    pub seed: u64,
    pub address: SevenBitAddress,
}

impl Default for FirmwareConfig {
    /// Reference 1:64 head with the scan sensor on port 1 and three fixed
    /// sensors of the same type on ports 2-4.
    fn default() -> Self {
        let model = crate::sensor::DEFAULT_SCAN_MODEL.to_string();
        let mount = |port: u8, head: bool, azimuth: f64| SensorMount {
            port,
            model: model.clone(),
            head,
            azimuth,
            noise_sigma: 0.0,
        };
        Self {
            motors: [MotorSetup::default(), MotorSetup::default()],
            sensors: vec![
                mount(1, true, 0.0),
                mount(2, false, 90.0),
                mount(3, false, 180.0),
                mount(4, false, -90.0),
            ],
            scan: ScanConfig {
                deps: 1.125,
                ..ScanConfig::default()
            },
            catalog: parse_catalog(CATALOG).expect("bundled catalog"),
            watchdog_period: 2.0,
            seed: 0,
            address: SevenBitAddress::new(DEFAULT_MODULE_ADDRESS).expect("7-bit"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BootError {
    #[error("sensor setup: {0}")]
    Sensor(#[from] crate::sensor::SensorError),
    #[error("port {0} outside 1-32")]
    BadPort(u8),
    #[error("weight image: {0}")]
    Image(#[from] AnnError),
    #[error("image for {model} is not a 10-input, 8-output network")]
    NotConverter { model: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub elapsed: f64,
    pub rays: usize,
    pub echoes: usize,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Firmware {
    phase: Phase,
    config: FirmwareConfig,
    eeprom: Vec<u8>,
    weights: BTreeMap<String, WeightMatrix>,
    motors: [MotorState; 2],
    power: PowerManager,
    mounts: BTreeMap<u8, SensorMount>,
    clock: f64,
    watchdog_deadline: f64,
    failures: u32,
    resets: u32,
    log: Vec<LogEntry>,
    rng: ChaCha8Rng,
    last_map: Option<LocalMap>,
    last_scan: Option<ScanReport>,
}

/// Serializable view for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub phase: Phase,
    pub clock: f64,
    pub watchdog_deadline: f64,
    pub resets: u32,
    pub failures: u32,
    pub motors: Vec<MotorSnapshot>,
    pub power_mode: PowerMode,
    /// `(port, powered)` per attached sensor.
    pub power_table: Vec<(u8, bool)>,
    pub weights: Vec<String>,
    pub scan: ScanConfig,
    pub last_scan: Option<ScanReport>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotorSnapshot {
    pub motor: u8,
    pub enabled: bool,
    pub mode: StepMode,
    pub direction: Direction,
    pub step_index: i64,
    pub head_angle: f64,
    pub step_angle: f64,
    pub coil: CoilState,
}

impl Firmware {
    /// Powers up from an EEPROM dump. A failed start triggers one module
    /// reset; a second failure leaves the module faulted.
    pub fn boot(eeprom: Vec<u8>, config: FirmwareConfig) -> Self {
        let motors = [
            MotorState::new(config.motors[0].clone()),
            MotorState::new(config.motors[1].clone()),
        ];
        let mut fw = Self {
            phase: Phase::Init,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            watchdog_deadline: config.watchdog_period,
            config,
            eeprom,
            weights: BTreeMap::new(),
            motors,
            power: PowerManager::new(),
            mounts: BTreeMap::new(),
            clock: 0.0,
            failures: 0,
            resets: 0,
            log: Vec::new(),
            last_map: None,
            last_scan: None,
        };
        while fw.phase != Phase::Ready && fw.phase != Phase::Faulted {
            fw.start();
        }
        fw
    }

    /// One start attempt from `Init`.
    fn start(&mut self) {
        self.phase = Phase::Init;
        match self.try_start() {
            Ok(()) => {
                self.failures = 0;
                self.phase = Phase::Ready;
                self.feed();
                self.note("ready");
            }
            Err(e) => {
                self.failures += 1;
                self.note(format!("start failed: {e}"));
                if self.failures >= MAX_BOOT_FAILURES {
                    self.phase = Phase::Faulted;
                    self.note("faulted");
                } else {
                    self.resets += 1;
                    self.phase = Phase::Init;
                    self.note("module reset");
                }
            }
        }
    }

    fn try_start(&mut self) -> Result<(), BootError> {
        self.weights.clear();
        self.power = PowerManager::new();
        self.mounts.clear();
        self.motors = [
            MotorState::new(self.config.motors[0].clone()),
            MotorState::new(self.config.motors[1].clone()),
        ];
        for m in &self.config.sensors {
            if !(1..=32).contains(&m.port) {
                return Err(BootError::BadPort(m.port));
            }
            let spec = find_model(&self.config.catalog, &m.model)?.clone();
            let state = SensorState::new(spec, m.port - 1, m.noise_sigma)?;
            self.power.attach(state, m.head)?;
            self.mounts.insert(m.port, m.clone());
        }
        self.phase = Phase::LoadingWeights;
        for image in parse_eeprom(&self.eeprom)? {
            if !image.weights.geometry().is_converter() {
                return Err(BootError::NotConverter { model: image.model });
            }
            if !image.converged {
                self.note(format!("weights for {} are marked as not converged", image.model));
            }
            self.weights.insert(image.model, image.weights);
        }
        Ok(())
    }

    fn note(&mut self, message: impl Into<String>) {
        self.log.push(LogEntry {
            time: self.clock,
            message: message.into(),
        });
    }

    fn feed(&mut self) {
        self.watchdog_deadline = self.clock + self.config.watchdog_period;
    }

    fn advance(&mut self, dt: f64) {
        self.clock += dt;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn resets(&self) -> u32 {
        self.resets
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn config(&self) -> &FirmwareConfig {
        &self.config
    }

    pub fn motor(&self, motor: u8) -> &MotorState {
        &self.motors[usize::from(motor - 1)]
    }

    pub fn power(&self) -> &PowerManager {
        &self.power
    }

    pub fn weights(&self, model: &str) -> Option<&WeightMatrix> {
        self.weights.get(model)
    }

    pub fn last_map(&self) -> Option<&LocalMap> {
        self.last_map.as_ref()
    }

    pub fn last_scan(&self) -> Option<&ScanReport> {
        self.last_scan.as_ref()
    }

    pub fn fault_report(&self) -> Option<String> {
        (self.phase == Phase::Faulted).then(|| {
            self.log
                .iter()
                .map(|e| format!("[{:.3}] {}", e.time, e.message))
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    /// Replaces the scan parameters used by `LocalScan`.
    pub fn set_scan_config(&mut self, cfg: ScanConfig) -> Result<(), MapError> {
        cfg.validate()?;
        self.config.scan = cfg;
        Ok(())
    }

    /// Overwrites EEPROM contents, as an external programmer would. Takes
    /// effect on the next reset.
    pub fn write_eeprom(&mut self, bytes: Vec<u8>) {
        self.eeprom = bytes;
    }

    /// Advances the clock to `now`; an expired watchdog resets the module
    /// and re-boots from EEPROM.
    pub fn watchdog_tick(&mut self, now: f64) {
        if now > self.clock {
            self.clock = now;
        }
        if self.phase == Phase::Faulted || self.clock <= self.watchdog_deadline {
            return;
        }
        self.resets += 1;
        self.note("watchdog expired, module reset");
        self.start();
        if self.phase == Phase::Init {
            self.feed();
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            phase: self.phase,
            clock: self.clock,
            watchdog_deadline: self.watchdog_deadline,
            resets: self.resets,
            failures: self.failures,
            motors: self
                .motors
                .iter()
                .enumerate()
                .map(|(i, m)| MotorSnapshot {
                    motor: i as u8 + 1,
                    enabled: m.enabled,
                    mode: m.mode,
                    direction: m.direction,
                    step_index: m.step_index,
                    head_angle: m.head_angle(),
                    step_angle: m.step_angle(),
                    coil: m.coil_state(),
                })
                .collect(),
            power_mode: self.power.mode(),
            power_table: self.power.power_table().into_iter().map(|(c, p)| (c + 1, p)).collect(),
            weights: self.weights.keys().cloned().collect(),
            scan: self.config.scan,
            last_scan: self.last_scan.clone(),
            fault: self.fault_report(),
        }
    }

    /// Handles one wire frame and returns the encoded response.
    pub fn execute_frame(&mut self, bytes: &[u8], scene: &Scene, pose: &Pose) -> Vec<u8> {
        let response = match unframe(bytes) {
            Err(e) => Response::Nak(e.into()),
            Ok(frame) => {
                let general_call = frame.is_control();
                if !general_call && frame.address != self.config.address {
                    Response::Nak(NakCode::Frame)
                } else {
                    match decode(&frame.payload) {
                        Ok(cmd) => self.execute(&cmd, scene, pose),
                        Err(e) => Response::Nak(e.into()),
                    }
                }
            }
        };
        encode_response(&response)
    }

    /// Dispatches one command. Every call yields exactly one response.
    pub fn execute(&mut self, cmd: &Command, scene: &Scene, pose: &Pose) -> Response {
        match self.phase {
            Phase::Ready => {}
            Phase::Faulted => return Response::Nak(NakCode::Faulted),
            _ => return Response::Nak(NakCode::Busy),
        }
        self.phase = Phase::Executing;
        let response = match *cmd {
            Command::QueryAdc { channel } => self.query_adc(channel, scene, pose),
            Command::QueryDistance { channel } => self.query_distance(channel, scene, pose),
            Command::LocalScan => match self.scan(scene, pose) {
                Ok(map) => Response::Ack(map.to_bytes()),
                Err(code) => Response::Nak(code),
            },
            Command::Motor { motor, action } => self.motor_command(motor, action),
        };
        self.phase = Phase::Ready;
        self.feed();
        response
    }

    fn azimuth_of(&self, mount: &SensorMount) -> f64 {
        if mount.head {
            self.motors[0].head_angle() + mount.azimuth
        } else {
            mount.azimuth
        }
    }

    /// Powers `port` alone and takes one reading; `None` if nothing is
    /// attached.
    fn read_port(&mut self, port: u8, scene: &Scene, pose: &Pose) -> Option<(u16, String)> {
        let mount = self.mounts.get(&port)?.clone();
        self.power.select(port - 1).ok()?;
        let az = self.azimuth_of(&mount);
        let code = self.power.sample(port - 1, scene, pose, az, &mut self.rng);
        Some((code, mount.model))
    }

    fn query_adc(&mut self, channel: u8, scene: &Scene, pose: &Pose) -> Response {
        let code = self.read_port(channel, scene, pose).map_or(0, |(c, _)| c);
        Response::ack(code.to_be_bytes().to_vec())
    }

    fn query_distance(&mut self, channel: u8, scene: &Scene, pose: &Pose) -> Response {
        let Some((code, model)) = self.read_port(channel, scene, pose) else {
            return Response::ack(vec![0]);
        };
        let Some(w) = self.weights.get(&model) else {
            return Response::Nak(NakCode::NoWeights);
        };
        let d = infer_distance(w, code);
        self.advance(MEASURE_TIME);
        Response::ack(vec![d])
    }

    fn motor_command(&mut self, motor: u8, action: MotorAction) -> Response {
        let idx = usize::from(motor - 1);
        let m = &mut self.motors[idx];
        match action {
            MotorAction::Off => m.enabled = false,
            MotorAction::On => m.enabled = true,
            MotorAction::HalfMode => m.set_mode(StepMode::Half),
            MotorAction::FullMode => m.set_mode(StepMode::Full),
            MotorAction::DirLeft => m.direction = Direction::Left,
            MotorAction::DirRight => m.direction = Direction::Right,
            MotorAction::Step => {
                if let Err(code) = m.step() {
                    return Response::Nak(code);
                }
                let dt = 1.0 / m.setup.ramp.n_s;
                self.advance(dt);
            }
        }
        Response::ack(Vec::new())
    }

    /// Moves motor 1 to `target_half_steps` using its ramp.
    fn position_head(&mut self, target_half_steps: i64) -> Result<(), NakCode> {
        let m = &mut self.motors[0];
        let per_step = m.half_steps_per_step();
        let delta = target_half_steps - m.half_steps;
        if delta % per_step != 0 {
            return Err(NakCode::Resolution);
        }
        let steps = (delta / per_step).unsigned_abs();
        let saved = m.direction;
        m.direction = if delta >= 0 { Direction::Right } else { Direction::Left };
        for _ in 0..steps {
            m.step()?;
        }
        m.direction = saved;
        let dt = move_duration(&m.setup.ramp, steps).map_err(|_| NakCode::BadArgument)?;
        self.advance(dt);
        Ok(())
    }

    /// Sweeps the head across the configured range and returns the local
    /// map. Only the head sensor is powered while scanning.
    pub fn scan(&mut self, scene: &Scene, pose: &Pose) -> Result<LocalMap, NakCode> {
        let cfg = self.config.scan;
        cfg.validate().map_err(|_| NakCode::BadArgument)?;
        let head_port = self.power.head_channel().map(|c| c + 1).ok_or(NakCode::NoSensor)?;
        let mount = self.mounts[&head_port].clone();
        let weights = self.weights.get(&mount.model).cloned().ok_or(NakCode::NoWeights)?;
        let m = &self.motors[0];
        if !m.enabled {
            return Err(NakCode::MotorOff);
        }
        let half = m.half_step_angle();
        let per_step = m.half_steps_per_step();
        let segment_steps = cfg.deps / m.step_angle();
        if (segment_steps - segment_steps.round()).abs() > RESOLUTION_TOLERANCE {
            return Err(NakCode::Resolution);
        }
        let start_half = -((cfg.dphi / 2.0) / half).round() as i64;
        if start_half % per_step != 0 {
            return Err(NakCode::Resolution);
        }
        let segment_steps = segment_steps.round() as u64;
        let n = cfg.measurement_count().map_err(|_| NakCode::BadArgument)?;
        let mut map = LocalMap::for_config(&cfg).map_err(|_| NakCode::BadArgument)?;

        let start_clock = self.clock;
        let prior_mode = self.power.mode();
        self.power.set_mode(PowerMode::Scan).map_err(|_| NakCode::NoSensor)?;
        let result = (|| -> Result<usize, NakCode> {
            self.position_head(start_half)?;
            self.feed();
            let mut echoes = 0;
            for _ in 0..n {
                let m = &mut self.motors[0];
                let saved = m.direction;
                m.direction = Direction::Right;
                for _ in 0..segment_steps {
                    m.step()?;
                }
                m.direction = saved;
                self.advance(SEGMENT_STEP_TIME);
                let alpha = self.motors[0].head_angle();
                let az = self.azimuth_of(&mount);
                let code = self.power.sample(head_port - 1, scene, pose, az, &mut self.rng);
                let d = f64::from(infer_distance(&weights, code));
                self.advance(MEASURE_TIME);
                if d > 0.0 && d <= cfg.l_mmax {
                    let a = crate::world::normalize_deg(alpha);
                    if map.plot_point(a, d).map_err(|_| NakCode::BadArgument)?.is_some() {
                        echoes += 1;
                    }
                }
                self.feed();
            }
            self.position_head(0)?;
            Ok(echoes)
        })();
        self.power.set_mode(prior_mode).map_err(|_| NakCode::NoSensor)?;
        let echoes = result?;
        self.last_scan = Some(ScanReport {
            elapsed: self.clock - start_clock,
            rays: n,
            echoes,
            cells: map.count(),
        });
        self.last_map = Some(map.clone());
        Ok(map)
    }
}

pub fn encode_response(r: &Response) -> Vec<u8> {
    r.to_bytes()
        .unwrap_or_else(|_| vec![crate::protocol::NAK, NakCode::BadArgument as u8])
}

/// True if `addr` is outside both reserved address groups.
pub fn usable_address(addr: SevenBitAddress) -> bool {
    [false, true]
        .iter()
        .all(|rw| crate::protocol::validate_address(addr, *rw) == AddressClass::Ok)
}
