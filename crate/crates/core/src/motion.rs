//! Stepper motor and gear-train kinematics, drive sequences and ramps.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("gear stage needs at least one tooth on each gear")]
    ZeroTeeth,
    #[error("gear train needs at least one stage")]
    EmptyTrain,
    #[error("stepper parameters must be positive")]
    BadStepper,
    #[error("step angle {given} does not match 360/(2p*m) = {expected}")]
    StepAngleMismatch { given: f64, expected: f64 },
    #[error("invalid ramp: {0}")]
    BadRamp(&'static str),
    #[error("t = {t} s lies outside the ramp domain [0, {t_br}]")]
    OutsideRamp { t: f64, t_br: f64 },
    #[error("invalid motion config: {0}")]
    Config(String),
}

/// One gear pair, driving gear first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "(u32, u32)", into = "(u32, u32)")]
pub struct GearStage {
    z_in: u32,
    z_out: u32,
}

impl GearStage {
    pub fn new(z_in: u32, z_out: u32) -> Result<Self, MotionError> {
        if z_in == 0 || z_out == 0 {
            return Err(MotionError::ZeroTeeth);
        }
        Ok(Self { z_in, z_out })
    }

    pub fn z_in(&self) -> u32 {
        self.z_in
    }

    pub fn z_out(&self) -> u32 {
        self.z_out
    }

    /// Speed factor `z_in / z_out`.
    pub fn speed_factor(&self) -> Ratio<u64> {
        Ratio::new(u64::from(self.z_in), u64::from(self.z_out))
    }

    /// Transmission ratio `i = n_in / n_out = z_out / z_in`.
    pub fn ratio(&self) -> Ratio<u64> {
        self.speed_factor().recip()
    }
}

impl TryFrom<(u32, u32)> for GearStage {
    type Error = MotionError;
    fn try_from((z_in, z_out): (u32, u32)) -> Result<Self, Self::Error> {
        Self::new(z_in, z_out)
    }
}

impl From<GearStage> for (u32, u32) {
    fn from(s: GearStage) -> Self {
        (s.z_in, s.z_out)
    }
}

pub fn stage_output_speed(stage: GearStage, n_in: f64) -> f64 {
    f64::from(stage.z_in) / f64::from(stage.z_out) * n_in
}

/// Stages from the motor pinion to the sensor head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GearStage>", into = "Vec<GearStage>")]
pub struct GearTrain {
    stages: Vec<GearStage>,
}

impl GearTrain {
    pub fn new(stages: Vec<GearStage>) -> Result<Self, MotionError> {
        if stages.is_empty() {
            return Err(MotionError::EmptyTrain);
        }
        Ok(Self { stages })
    }

    pub fn from_pairs(pairs: &[(u32, u32)]) -> Result<Self, MotionError> {
        let stages = pairs
            .iter()
            .map(|&(a, b)| GearStage::new(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(stages)
    }

    /// The 1:64 train of the original head, `[(10,40),(5,80)]`.
    pub fn reference() -> Self {
        Self::from_pairs(&[(10, 40), (5, 80)]).expect("valid train")
    }

    pub fn stages(&self) -> &[GearStage] {
        &self.stages
    }

    /// Product of the stage speed factors (1/64 for the reference train).
    pub fn speed_factor(&self) -> Ratio<u64> {
        self.stages
            .iter()
            .fold(Ratio::from_integer(1), |acc, s| acc * s.speed_factor())
    }

    /// Overall reduction `n_motor / n_head`.
    pub fn reduction(&self) -> Ratio<u64> {
        self.speed_factor().recip()
    }
}

impl TryFrom<Vec<GearStage>> for GearTrain {
    type Error = MotionError;
    fn try_from(stages: Vec<GearStage>) -> Result<Self, Self::Error> {
        Self::new(stages)
    }
}

impl From<GearTrain> for Vec<GearStage> {
    fn from(t: GearTrain) -> Self {
        t.stages
    }
}

/// Exact head step for a motor step given as a rational number of degrees.
pub fn head_step_angle_exact(train: &GearTrain, motor_step: Ratio<u64>) -> Ratio<u64> {
    train.speed_factor() * motor_step
}

pub fn head_step_angle(train: &GearTrain, motor_step: f64) -> f64 {
    let f = train.speed_factor();
    motor_step * *f.numer() as f64 / *f.denom() as f64
}

/// Nearest whole step count for `target` degrees (ties away from zero) and
/// the angle it actually reaches.
pub fn steps_for_angle(train: &GearTrain, motor_step: f64, target: f64) -> (i64, f64) {
    let step = head_step_angle(train, motor_step);
    let steps = (target / step).round() as i64;
    (steps, steps as f64 * step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Full,
    Half,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperSpec {
    pub pole_count_2p: u32,
    pub phase_count_m: u32,
    pub step_angle_full: f64,
    pub rated_voltage: f64,
    pub phase_current: f64,
    pub winding_resistance: f64,
}

impl StepperSpec {
    /// The head motor: 2p = 50, m = 2, 3.6 degrees, 7 V, 0.58 A, 12 ohm.
    pub fn reference() -> Self {
        Self {
            pole_count_2p: 50,
            phase_count_m: 2,
            step_angle_full: 3.6,
            rated_voltage: 7.0,
            phase_current: 0.58,
            winding_resistance: 12.0,
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let positive = [
            self.step_angle_full,
            self.rated_voltage,
            self.phase_current,
            self.winding_resistance,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if self.pole_count_2p == 0 || self.phase_count_m == 0 || !positive {
            return Err(MotionError::BadStepper);
        }
        let expected = 360.0 / f64::from(self.pole_count_2p * self.phase_count_m);
        if (expected - self.step_angle_full).abs() > 1e-9 * expected {
            return Err(MotionError::StepAngleMismatch {
                given: self.step_angle_full,
                expected,
            });
        }
        Ok(())
    }

    pub fn steps_per_rev(&self, mode: StepMode) -> u32 {
        let full = self.pole_count_2p * self.phase_count_m;
        match mode {
            StepMode::Full => full,
            StepMode::Half => 2 * full,
        }
    }

    /// Exact step angle in degrees.
    pub fn step_angle_exact(&self, mode: StepMode) -> Ratio<u64> {
        Ratio::new(360, u64::from(self.steps_per_rev(mode)))
    }
}

/// `(step angle, steps per revolution)` for the drive mode.
pub fn stepper_derived(spec: &StepperSpec, mode: StepMode) -> (f64, u32) {
    let s = spec.steps_per_rev(mode);
    (360.0 / f64::from(s), s)
}

/// Rotor speed in revolutions per second for step rate `f_s`.
pub fn rotor_speed(f_s: f64, steps_per_rev: u32) -> f64 {
    f_s / f64::from(steps_per_rev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Polarity {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "0")]
    Off,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::Plus => "+",
            Polarity::Minus => "-",
            Polarity::Off => "0",
        })
    }
}

/// Terminal polarities of both coils, centre taps included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoilState {
    pub s1a: Polarity,
    pub s1b: Polarity,
    pub common1: Polarity,
    pub s2a: Polarity,
    pub s2b: Polarity,
    pub common2: Polarity,
}

impl CoilState {
    const fn bipolar(s1a: Polarity, s1b: Polarity, s2a: Polarity, s2b: Polarity) -> Self {
        Self {
            s1a,
            s1b,
            common1: Polarity::Off,
            s2a,
            s2b,
            common2: Polarity::Off,
        }
    }

    const fn unipolar(s1a: Polarity, s1b: Polarity, s2a: Polarity, s2b: Polarity) -> Self {
        Self {
            s1a,
            s1b,
            common1: Polarity::Minus,
            s2a,
            s2b,
            common2: Polarity::Minus,
        }
    }

    pub fn terminals(&self) -> [Polarity; 6] {
        [self.s1a, self.s1b, self.common1, self.s2a, self.s2b, self.common2]
    }

    pub fn coil1_energized(&self) -> bool {
        self.s1a != Polarity::Off || self.s1b != Polarity::Off
    }

    pub fn coil2_energized(&self) -> bool {
        self.s2a != Polarity::Off || self.s2b != Polarity::Off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    BipolarFull,
    BipolarHalf,
    UnipolarFull,
}

use Polarity::{Minus as M, Off as O, Plus as P};

pub const UNIPOLAR_FULL: [CoilState; 4] = [
    CoilState::unipolar(P, O, O, P),
    CoilState::unipolar(P, O, P, O),
    CoilState::unipolar(O, P, P, O),
    CoilState::unipolar(O, P, O, P),
];

pub const BIPOLAR_FULL: [CoilState; 4] = [
    CoilState::bipolar(P, M, P, M),
    CoilState::bipolar(P, M, M, P),
    CoilState::bipolar(M, P, M, P),
    CoilState::bipolar(M, P, P, M),
];

pub const BIPOLAR_HALF: [CoilState; 8] = [
    CoilState::bipolar(P, M, P, M),
    CoilState::bipolar(P, M, O, O),
    CoilState::bipolar(P, M, M, P),
    CoilState::bipolar(O, O, M, P),
    CoilState::bipolar(M, P, M, P),
    CoilState::bipolar(M, P, O, O),
    CoilState::bipolar(M, P, P, M),
    CoilState::bipolar(O, O, P, M),
];

impl SequenceKind {
    pub fn table(&self) -> &'static [CoilState] {
        match self {
            SequenceKind::BipolarFull => &BIPOLAR_FULL,
            SequenceKind::BipolarHalf => &BIPOLAR_HALF,
            SequenceKind::UnipolarFull => &UNIPOLAR_FULL,
        }
    }
}

/// Row `step_index mod cycle` of the drive table; negative indices wrap.
pub fn step_sequence(kind: SequenceKind, step_index: i64) -> CoilState {
    let table = kind.table();
    table[step_index.rem_euclid(table.len() as i64) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampKind {
    Linear,
    Exponential,
    SCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampDirection {
    Accelerate,
    Brake,
}

/// Step-rate profile. Rates are in steps/s, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampProfile {
    pub kind: RampKind,
    pub n_s: f64,
    pub n_0: f64,
    /// Linear ramps only.
    #[serde(default)]
    pub slope: f64,
    /// Exponential ramps only.
    #[serde(default)]
    pub tau: f64,
    /// Ramp duration for exponential and S-curve ramps.
    #[serde(default)]
    pub t_br: f64,
    /// S-curve ramps only.
    #[serde(default)]
    pub segment_count: u32,
}

impl RampProfile {
    pub fn linear(n_s: f64, n_0: f64, slope: f64) -> Self {
        Self {
            kind: RampKind::Linear,
            n_s,
            n_0,
            slope,
            tau: 0.0,
            t_br: 0.0,
            segment_count: 0,
        }
    }

    pub fn exponential(n_s: f64, n_0: f64, tau: f64, t_br: f64) -> Self {
        Self {
            kind: RampKind::Exponential,
            n_s,
            n_0,
            slope: 0.0,
            tau,
            t_br,
            segment_count: 0,
        }
    }

    pub fn s_curve(n_s: f64, n_0: f64, t_br: f64, segment_count: u32) -> Self {
        Self {
            kind: RampKind::SCurve,
            n_s,
            n_0,
            slope: 0.0,
            tau: 0.0,
            t_br,
            segment_count,
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let finite = [self.n_s, self.n_0, self.slope, self.tau, self.t_br]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(MotionError::BadRamp("non-finite parameter"));
        }
        if !(self.n_s > 0.0 && self.n_0 >= self.n_s) {
            return Err(MotionError::BadRamp("need n_0 >= n_s > 0"));
        }
        match self.kind {
            RampKind::Linear if self.slope <= 0.0 => Err(MotionError::BadRamp("slope must be positive")),
            RampKind::Exponential if self.tau <= 0.0 => Err(MotionError::BadRamp("tau must be positive")),
            RampKind::Exponential | RampKind::SCurve if self.t_br <= 0.0 => {
                Err(MotionError::BadRamp("t_br must be positive"))
            }
            RampKind::SCurve if self.segment_count < 2 => Err(MotionError::BadRamp("need at least 2 segments")),
            _ => Ok(()),
        }
    }

    /// Time the ramp takes to cover its full rate change.
    pub fn duration(&self) -> f64 {
        match self.kind {
            RampKind::Linear => (self.n_0 - self.n_s) / self.slope,
            RampKind::Exponential | RampKind::SCurve => self.t_br,
        }
    }
}

/// Cubic easing with zero slope at both ends, `u` in [0, 1].
pub fn s_curve_ease(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Step rate at time `t` into a ramp.
///
/// A linear brake starts from `n_0`. Linear and S-curve ramps hold their
/// final rate beyond their duration; exponential ramps are only defined on
/// `[0, t_br]`.
pub fn ramp_rate(profile: &RampProfile, t: f64, direction: RampDirection) -> Result<f64, MotionError> {
    profile.validate()?;
    if t.is_nan() || t < 0.0 {
        return Err(MotionError::OutsideRamp {
            t,
            t_br: profile.duration(),
        });
    }
    let p = profile;
    let span = p.n_0 - p.n_s;
    Ok(match (p.kind, direction) {
        (RampKind::Linear, RampDirection::Accelerate) => (p.slope * t + p.n_s).min(p.n_0),
        (RampKind::Linear, RampDirection::Brake) => (-p.slope * t + p.n_0).max(p.n_s),
        (RampKind::Exponential, dir) => {
            if t > p.t_br {
                return Err(MotionError::OutsideRamp { t, t_br: p.t_br });
            }
            let e = (-(p.t_br - t) / p.tau).exp();
            // Written around the t_br end so n(t_br) is exact in floating point.
            match dir {
                RampDirection::Accelerate => p.n_0 - span * (1.0 - e),
                RampDirection::Brake => span * (1.0 - e) + p.n_s,
            }
        }
        (RampKind::SCurve, dir) => {
            let u = (t / p.t_br).min(1.0);
            let eased = s_curve_chord(u, p.segment_count);
            match dir {
                RampDirection::Accelerate => p.n_s + span * eased,
                RampDirection::Brake => p.n_0 - span * eased,
            }
        }
    })
}

/// Chordal (piecewise linear) approximation of [`s_curve_ease`] with
/// `segments` equal steps in `u`.
pub fn s_curve_chord(u: f64, segments: u32) -> f64 {
    let k = f64::from(segments);
    let x = u.clamp(0.0, 1.0) * k;
    let i = x.floor().min(k - 1.0);
    let (u0, u1) = (i / k, (i + 1.0) / k);
    let (y0, y1) = (s_curve_ease(u0), s_curve_ease(u1));
    y0 + (y1 - y0) * (x - i)
}

/// Time to travel `steps` steps starting and ending at rest: accelerate
/// along the ramp, cruise at the ramp's end rate, then brake symmetrically.
pub fn move_duration(profile: &RampProfile, steps: u64) -> Result<f64, MotionError> {
    profile.validate()?;
    if steps == 0 {
        return Ok(0.0);
    }
    // Periods of the accelerating steps until the ramp is exhausted.
    let end = profile.duration();
    let mut periods = Vec::new();
    let mut t = 0.0;
    while (periods.len() as u64) < steps.div_ceil(2) {
        let rate = if t < end {
            ramp_rate(profile, t, RampDirection::Accelerate)?
        } else {
            break;
        };
        let dt = 1.0 / rate;
        periods.push(dt);
        t += dt;
    }
    let ramp_steps = periods.len() as u64;
    let ramp_time: f64 = periods.iter().sum();
    if 2 * ramp_steps <= steps {
        let cruise = (steps - 2 * ramp_steps) as f64 / profile.n_0;
        Ok(2.0 * ramp_time + cruise)
    } else {
        // Odd count with the peak step shared by both halves.
        Ok(2.0 * ramp_time - periods.last().copied().unwrap_or(0.0))
    }
}

/// Time for `steps` steps at a constant rate.
pub fn start_stop_duration(rate: f64, steps: u64) -> f64 {
    steps as f64 / rate
}

/// Oscillator frequency of the chopper stage, `1 / (0.69 R C)`.
pub fn chopper_frequency(r_ohm: f64, c_farad: f64) -> f64 {
    1.0 / (0.69 * r_ohm * c_farad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorDoc {
    pub step_deg: f64,
    pub poles_2p: u32,
    pub phases: u32,
}

/// The gear/motor configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub motor: MotorDoc,
    pub stages: GearTrain,
    pub ramp: RampProfile,
}

impl MotionConfig {
    pub fn parse(text: &str) -> Result<Self, MotionError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| MotionError::Config(e.to_string()))?;
        let expected = 360.0 / f64::from(cfg.motor.poles_2p.max(1) * cfg.motor.phases.max(1));
        if cfg.motor.poles_2p == 0 || cfg.motor.phases == 0 || (expected - cfg.motor.step_deg).abs() > 1e-9 {
            return Err(MotionError::StepAngleMismatch {
                given: cfg.motor.step_deg,
                expected,
            });
        }
        cfg.ramp.validate()?;
        Ok(cfg)
    }
}
