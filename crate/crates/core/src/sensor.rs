//! Sharp-style infrared range sensors: transfer curve, 10-bit quantization,
//! seeded noise, and decoder-based power management.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Pose, Scene};

/// Full-scale code of the 10-bit ADC.
pub const ADC_MAX: u16 = 1023;
/// Default ADC reference voltage.
pub const VREF: f64 = 5.0;
/// Highest ADC channel index (16 on-board plus 16 extension channels).
pub const MAX_CHANNEL: u8 = 31;

/// Voltage reported for misses and for targets beyond `max_range`, as a
/// fraction of the far-range anchor.
const OUT_OF_RANGE_FACTOR: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("sensor {model}: range must satisfy 0 < min < max")]
    InvalidRange { model: String },
    #[error("sensor {model}: voltage anchors must satisfy v_at_min > v_at_max > 0")]
    InvalidAnchors { model: String },
    #[error("sensor {model}: no voltage anchors for this output kind")]
    MissingAnchors { model: String },
    #[error("sensor {model}: 1-bit outputs cannot measure distance")]
    OneBitOutput { model: String },
    #[error("unknown sensor model {0:?}")]
    UnknownModel(String),
    #[error("channel {0} is not attached")]
    UnknownChannel(u8),
    #[error("channel {0} is already attached")]
    DuplicateChannel(u8),
    #[error("channel {0} is out of range")]
    ChannelOutOfRange(u8),
    #[error("scan mode: only the head sensor may be powered")]
    ScanModeActive,
    #[error("no head sensor attached")]
    NoHeadSensor,
    #[error("no fixed sensors attached")]
    NoFixedSensors,
    #[error("catalog parse error: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Analog,
    #[serde(rename = "digital-8bit")]
    Digital8Bit,
    #[serde(rename = "digital-1bit")]
    Digital1Bit,
}

/// A sensor type as listed in the manufacturer's type table.
///
/// Voltage anchors are optional because the table does not list them for
/// digital parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub model_name: String,
    pub min_range: f64,
    pub max_range: f64,
    pub output_kind: OutputKind,
    #[serde(default)]
    pub v_at_min: Option<f64>,
    #[serde(default)]
    pub v_at_max: Option<f64>,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(SensorError::InvalidRange {
                model: self.model_name.clone(),
            });
        }
        if self.output_kind != OutputKind::Digital1Bit {
            if let (Some(near), Some(far)) = (self.v_at_min, self.v_at_max) {
                if !(near > far && far > 0.0) {
                    return Err(SensorError::InvalidAnchors {
                        model: self.model_name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Fits the transfer curve. Fails for 1-bit parts and parts without
    /// voltage anchors.
    pub fn transfer_curve(&self) -> Result<TransferCurve, SensorError> {
        self.validate()?;
        if self.output_kind == OutputKind::Digital1Bit {
            return Err(SensorError::OneBitOutput {
                model: self.model_name.clone(),
            });
        }
        let (Some(v_near), Some(v_far)) = (self.v_at_min, self.v_at_max) else {
            return Err(SensorError::MissingAnchors {
                model: self.model_name.clone(),
            });
        };
        Ok(TransferCurve::fit(self.min_range, self.max_range, v_near, v_far))
    }
}

/// `V(d) = a / (d + b) + c` on `[min_range, max_range]`, with `b` pinned at
/// `min_range / 4` and `a`, `c` chosen to hit both voltage anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub v_at_min: f64,
    pub v_at_max: f64,
}

impl TransferCurve {
    pub fn fit(min_range: f64, max_range: f64, v_at_min: f64, v_at_max: f64) -> Self {
        let b = min_range / 4.0;
        let a = (v_at_min - v_at_max) / (1.0 / (min_range + b) - 1.0 / (max_range + b));
        let c = v_at_min - a / (min_range + b);
        Self {
            a,
            b,
            c,
            min_range,
            max_range,
            v_at_min,
            v_at_max,
        }
    }

    /// Output voltage for a target at `distance` (cm); `None` is a miss.
    pub fn voltage(&self, distance: Option<f64>) -> f64 {
        match distance {
            Some(d) if d < self.min_range => self.v_at_min * d.max(0.0) / self.min_range,
            Some(d) if d <= self.max_range => self.a / (d + self.b) + self.c,
            _ => self.v_at_max * OUT_OF_RANGE_FACTOR,
        }
    }

    /// Inverse of the measuring branch. `None` outside `[v_at_max, v_at_min]`.
    pub fn distance(&self, volts: f64) -> Option<f64> {
        const EPS: f64 = 1e-12;
        if volts < self.v_at_max - EPS || volts > self.v_at_min + EPS {
            return None;
        }
        let d = self.a / (volts - self.c) - self.b;
        Some(d.clamp(self.min_range, self.max_range))
    }
}

pub fn voltage_of(spec: &SensorSpec, distance: Option<f64>) -> Result<f64, SensorError> {
    Ok(spec.transfer_curve()?.voltage(distance))
}

/// 10-bit conversion, round half up, clamped to `0..=1023`.
pub fn quantize(volts: f64, vref: f64) -> u16 {
    let code = (volts / vref * f64::from(ADC_MAX) + 0.5).floor();
    code.clamp(0.0, f64::from(ADC_MAX)) as u16
}

/// Centre voltage of an ADC code.
pub fn code_voltage(code: u16, vref: f64) -> f64 {
    f64::from(code) / f64::from(ADC_MAX) * vref
}

/// The bundled sensor catalog.
pub const CATALOG: &str = include_str!("../fixtures/sensor_catalog.json");

pub fn parse_catalog(text: &str) -> Result<Vec<SensorSpec>, SensorError> {
    serde_json::from_str(text).map_err(|e| SensorError::Catalog(e.to_string()))
}

pub fn find_model<'a>(catalog: &'a [SensorSpec], name: &str) -> Result<&'a SensorSpec, SensorError> {
    catalog
        .iter()
        .find(|s| s.model_name == name)
        .ok_or_else(|| SensorError::UnknownModel(name.to_string()))
}

/// Default scan sensor.
pub const DEFAULT_SCAN_MODEL: &str = "GP2Y0A02YK";

/// An attached sensor. Only [`PowerManager`] switches `powered`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub spec: SensorSpec,
    curve: TransferCurve,
    powered: bool,
    pub channel: u8,
    pub noise_sigma: f64,
}

impl SensorState {
    pub fn new(spec: SensorSpec, channel: u8, noise_sigma: f64) -> Result<Self, SensorError> {
        if channel > MAX_CHANNEL {
            return Err(SensorError::ChannelOutOfRange(channel));
        }
        let curve = spec.transfer_curve()?;
        Ok(Self {
            spec,
            curve,
            powered: false,
            channel,
            noise_sigma,
        })
    }

    pub fn powered(&self) -> bool {
        self.powered
    }

    pub fn curve(&self) -> &TransferCurve {
        &self.curve
    }

    /// One ADC reading of the target along `azimuth` from `pose`.
    pub fn sample<R: Rng + ?Sized>(&self, scene: &Scene, pose: &Pose, azimuth: f64, rng: &mut R) -> u16 {
        if !self.powered {
            return 0;
        }
        let mut v = self.curve.voltage(scene.ray_cast(pose, azimuth));
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            v += normal.sample(rng);
        }
        quantize(v, VREF)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerMode {
    Scan,
    Drive,
}

/// 4-to-16 decoder pair driving the sensor supply lines.
///
/// The low nibble of the selected channel is the decoder address; the bank
/// flag picks the extension decoder for channels 16..=31.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerManager {
    sensors: Vec<SensorState>,
    head: Option<u8>,
    mode: PowerMode,
    selected: Option<u8>,
    cursor: usize,
}

impl Default for PowerManager {
    fn default() -> Self {
        Self::new()
    }
}

impl PowerManager {
    pub fn new() -> Self {
        Self {
            sensors: Vec::new(),
            head: None,
            mode: PowerMode::Drive,
            selected: None,
            cursor: 0,
        }
    }

    pub fn attach(&mut self, mut sensor: SensorState, is_head: bool) -> Result<(), SensorError> {
        if self.sensors.iter().any(|s| s.channel == sensor.channel) {
            return Err(SensorError::DuplicateChannel(sensor.channel));
        }
        sensor.powered = false;
        if is_head {
            self.head = Some(sensor.channel);
        }
        self.sensors.push(sensor);
        self.sensors.sort_by_key(|s| s.channel);
        Ok(())
    }

    pub fn mode(&self) -> PowerMode {
        self.mode
    }

    pub fn head_channel(&self) -> Option<u8> {
        self.head
    }

    pub fn powered(&self) -> Option<u8> {
        self.selected
    }

    /// Decoder address lines of the current selection: (4-bit address, bank).
    pub fn address_bits(&self) -> Option<(u8, bool)> {
        self.selected.map(|c| (c & 0x0f, c >= 16))
    }

    pub fn sensor(&self, channel: u8) -> Option<&SensorState> {
        self.sensors.iter().find(|s| s.channel == channel)
    }

    pub fn sensors(&self) -> &[SensorState] {
        &self.sensors
    }

    /// (channel, powered) for every attached sensor.
    pub fn power_table(&self) -> Vec<(u8, bool)> {
        self.sensors.iter().map(|s| (s.channel, s.powered)).collect()
    }

    fn fixed_channels(&self) -> Vec<u8> {
        self.sensors
            .iter()
            .map(|s| s.channel)
            .filter(|c| Some(*c) != self.head)
            .collect()
    }

    fn power_only(&mut self, channel: Option<u8>) {
        for s in &mut self.sensors {
            s.powered = Some(s.channel) == channel;
        }
        self.selected = channel;
    }

    pub fn select(&mut self, channel: u8) -> Result<(), SensorError> {
        if self.sensor(channel).is_none() {
            return Err(SensorError::UnknownChannel(channel));
        }
        if self.mode == PowerMode::Scan && Some(channel) != self.head {
            return Err(SensorError::ScanModeActive);
        }
        self.power_only(Some(channel));
        Ok(())
    }

    /// Powers the next fixed sensor in channel order and returns its channel.
    pub fn round_robin_next(&mut self) -> Result<u8, SensorError> {
        if self.mode == PowerMode::Scan {
            return Err(SensorError::ScanModeActive);
        }
        let fixed = self.fixed_channels();
        if fixed.is_empty() {
            return Err(SensorError::NoFixedSensors);
        }
        let channel = fixed[self.cursor % fixed.len()];
        self.cursor = (self.cursor + 1) % fixed.len();
        self.power_only(Some(channel));
        Ok(channel)
    }

    /// Entering scan mode powers the head sensor alone; leaving it powers
    /// nothing until the next selection.
    pub fn set_mode(&mut self, mode: PowerMode) -> Result<(), SensorError> {
        match mode {
            PowerMode::Scan => {
                let head = self.head.ok_or(SensorError::NoHeadSensor)?;
                self.mode = PowerMode::Scan;
                self.power_only(Some(head));
            }
            PowerMode::Drive => {
                self.mode = PowerMode::Drive;
                self.power_only(None);
            }
        }
        Ok(())
    }

    /// Samples the powered sensor; 0 if `channel` is not the powered one.
    pub fn sample<R: Rng + ?Sized>(&self, channel: u8, scene: &Scene, pose: &Pose, azimuth: f64, rng: &mut R) -> u16 {
        self.sensor(channel).map_or(0, |s| s.sample(scene, pose, azimuth, rng))
    }
}
