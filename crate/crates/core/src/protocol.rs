//! Host command codec, transport framing and bus address rules.
//!
//! Wire forms:
//!
//! * command: one or two bytes (see [`Command::encode`])
//! * request frame: `STX addr<<1|rw len payload xor ETX`
//! * response: `ACK len_hi len_lo payload xor` or `NAK code`

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STX: u8 = 0x02;
pub const ETX: u8 = 0x03;
pub const ACK: u8 = 0x06;
pub const NAK: u8 = 0x15;

pub const QUERY_ADC: u8 = 0x61;
pub const QUERY_DISTANCE: u8 = 0x62;
pub const LOCAL_SCAN: u8 = 0x65;
pub const MOTOR_1: u8 = 0x6d;
pub const MOTOR_2: u8 = 0x6e;

pub const CHANNELS: u8 = 32;
pub const MOTORS: u8 = 2;

/// Bus address of the scanner module.
pub const DEFAULT_MODULE_ADDRESS: u8 = 0x28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotorAction {
    Off,
    On,
    HalfMode,
    FullMode,
    DirLeft,
    DirRight,
    Step,
}

impl MotorAction {
    pub const ALL: [MotorAction; 7] = [
        MotorAction::Off,
        MotorAction::On,
        MotorAction::HalfMode,
        MotorAction::DirLeft,
        MotorAction::DirRight,
        MotorAction::Step,
        MotorAction::FullMode,
    ];

    pub fn byte(self) -> u8 {
        match self {
            MotorAction::Off => b'a',
            MotorAction::On => b'e',
            MotorAction::HalfMode => b'h',
            MotorAction::DirLeft => b'l',
            MotorAction::DirRight => b'r',
            MotorAction::Step => b's',
            MotorAction::FullMode => b'v',
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.byte() == b)
    }

    fn describe(self) -> &'static str {
        match self {
            MotorAction::Off => "switch off",
            MotorAction::On => "switch on",
            MotorAction::HalfMode => "set half-step mode",
            MotorAction::DirLeft => "set direction left",
            MotorAction::DirRight => "set direction right",
            MotorAction::Step => "execute one step",
            MotorAction::FullMode => "set full-step mode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Command {
    /// Raw 10-bit ADC reading of a sensor port, 1-32.
    QueryAdc {
        channel: u8,
    },
    /// Distance in cm computed by the network, 1-32.
    QueryDistance {
        channel: u8,
    },
    LocalScan,
    Motor {
        motor: u8,
        action: MotorAction,
    },
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unknown command byte {0:#04x}")]
    Unknown(u8),
    #[error("command truncated")]
    Incomplete,
    #[error("argument byte {0:#04x} out of range")]
    BadArgument(u8),
    #[error("{0} trailing bytes after command")]
    Trailing(usize),
}

fn channel_byte(k: u8) -> u8 {
    0x30 + k
}

impl Command {
    pub fn query_adc(channel: u8) -> Option<Self> {
        (1..=CHANNELS)
            .contains(&channel)
            .then_some(Command::QueryAdc { channel })
    }

    pub fn query_distance(channel: u8) -> Option<Self> {
        (1..=CHANNELS)
            .contains(&channel)
            .then_some(Command::QueryDistance { channel })
    }

    pub fn motor(motor: u8, action: MotorAction) -> Option<Self> {
        (1..=MOTORS)
            .contains(&motor)
            .then_some(Command::Motor { motor, action })
    }

    /// All 79 commands, in table order.
    pub fn all() -> Vec<Command> {
        let mut out = Vec::with_capacity(79);
        out.extend((1..=CHANNELS).map(|channel| Command::QueryAdc { channel }));
        out.extend((1..=CHANNELS).map(|channel| Command::QueryDistance { channel }));
        out.push(Command::LocalScan);
        for motor in 1..=MOTORS {
            let mut actions = MotorAction::ALL;
            actions.sort_by_key(|a| a.byte());
            out.extend(actions.iter().map(|&action| Command::Motor { motor, action }));
        }
        out
    }

    /// Ports 1-32 are sent as bytes 0x31-0x50; motors as 0x6D/0x6E plus
    /// the action letter.
    pub fn encode(&self) -> Vec<u8> {
        match *self {
            Command::QueryAdc { channel } => vec![QUERY_ADC, channel_byte(channel)],
            Command::QueryDistance { channel } => vec![QUERY_DISTANCE, channel_byte(channel)],
            Command::LocalScan => vec![LOCAL_SCAN],
            Command::Motor { motor, action } => vec![MOTOR_1 + motor - 1, action.byte()],
        }
    }

    pub fn description(&self) -> String {
        match *self {
            Command::QueryAdc { channel } => format!("read ADC value of sensor port {channel}"),
            Command::QueryDistance { channel } => format!("compute distance of IR sensor {channel}"),
            Command::LocalScan => "capture local environment (scan)".to_string(),
            Command::Motor { motor, action } => format!("stepper motor {motor}: {}", action.describe()),
        }
    }

    /// True for the extension ports 17-32.
    pub fn is_extension(&self) -> bool {
        matches!(*self, Command::QueryAdc { channel } | Command::QueryDistance { channel } if channel > 16)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Command::QueryAdc { channel } => write!(f, "QueryAdc({channel})"),
            Command::QueryDistance { channel } => write!(f, "QueryDistance({channel})"),
            Command::LocalScan => f.write_str("LocalScan"),
            Command::Motor { motor, action } => write!(f, "Motor({motor}, {action:?})"),
        }
    }
}

pub fn encode(cmd: &Command) -> Vec<u8> {
    cmd.encode()
}

pub fn decode(bytes: &[u8]) -> Result<Command, DecodeError> {
    let (&op, rest) = bytes.split_first().ok_or(DecodeError::Incomplete)?;
    let (cmd, used) = match op {
        LOCAL_SCAN => (Command::LocalScan, 1),
        QUERY_ADC | QUERY_DISTANCE => {
            let &arg = rest.first().ok_or(DecodeError::Incomplete)?;
            let channel = arg.wrapping_sub(0x30);
            if !(1..=CHANNELS).contains(&channel) {
                return Err(DecodeError::BadArgument(arg));
            }
            let cmd = if op == QUERY_ADC {
                Command::QueryAdc { channel }
            } else {
                Command::QueryDistance { channel }
            };
            (cmd, 2)
        }
        MOTOR_1 | MOTOR_2 => {
            let &arg = rest.first().ok_or(DecodeError::Incomplete)?;
            let action = MotorAction::from_byte(arg).ok_or(DecodeError::BadArgument(arg))?;
            (
                Command::Motor {
                    motor: op - MOTOR_1 + 1,
                    action,
                },
                2,
            )
        }
        other => return Err(DecodeError::Unknown(other)),
    };
    if bytes.len() > used {
        return Err(DecodeError::Trailing(bytes.len() - used));
    }
    Ok(cmd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SevenBitAddress(u8);

impl SevenBitAddress {
    pub fn new(addr: u8) -> Option<Self> {
        (addr < 0x80).then_some(Self(addr))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl fmt::Display for SevenBitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:07b}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReservedKind {
    GeneralCall,
    StartByte,
    Cbus,
    OtherBusFormats,
    FutureExtensionA,
    HsModeMasterCode,
    TenBitAddressing,
    FutureExtensionB,
}

impl ReservedKind {
    pub const ALL: [ReservedKind; 8] = [
        ReservedKind::GeneralCall,
        ReservedKind::StartByte,
        ReservedKind::Cbus,
        ReservedKind::OtherBusFormats,
        ReservedKind::FutureExtensionA,
        ReservedKind::HsModeMasterCode,
        ReservedKind::TenBitAddressing,
        ReservedKind::FutureExtensionB,
    ];

    /// `(address pattern, r/w pattern, meaning)`.
    pub fn row(self) -> (&'static str, &'static str, &'static str) {
        match self {
            ReservedKind::GeneralCall => ("0000 000", "0", "general call address"),
            ReservedKind::StartByte => ("0000 000", "1", "start byte"),
            ReservedKind::Cbus => ("0000 001", "X", "CBUS address"),
            ReservedKind::OtherBusFormats => ("0000 010", "X", "reserved for other bus formats"),
            ReservedKind::FutureExtensionA => ("0000 011", "X", "reserved for future extensions"),
            ReservedKind::HsModeMasterCode => ("0000 1XX", "X", "Hs-mode master code"),
            ReservedKind::TenBitAddressing => ("1111 0XX", "X", "10-bit slave addressing"),
            ReservedKind::FutureExtensionB => ("1111 1XX", "X", "reserved for future extensions"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddressClass {
    Ok,
    Reserved(ReservedKind),
}

pub fn validate_address(addr: SevenBitAddress, read: bool) -> AddressClass {
    use ReservedKind::*;
    let a = addr.0;
    let kind = match a {
        0b000_0000 if !read => GeneralCall,
        0b000_0000 => StartByte,
        0b000_0001 => Cbus,
        0b000_0010 => OtherBusFormats,
        0b000_0011 => FutureExtensionA,
        0b000_0100..=0b000_0111 => HsModeMasterCode,
        0b111_1000..=0b111_1011 => TenBitAddressing,
        0b111_1100..=0b111_1111 => FutureExtensionB,
        _ => return AddressClass::Ok,
    };
    AddressClass::Reserved(kind)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub address: SevenBitAddress,
    pub read: bool,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(address: SevenBitAddress, read: bool, payload: Vec<u8>) -> Self {
        Self { address, read, payload }
    }

    /// Write frame carrying one encoded command.
    pub fn command(address: SevenBitAddress, cmd: &Command) -> Self {
        Self::new(address, false, cmd.encode())
    }

    /// Control frames go to the general-call address.
    pub fn is_control(&self) -> bool {
        validate_address(self.address, self.read) == AddressClass::Reserved(ReservedKind::GeneralCall)
    }

    fn address_byte(&self) -> u8 {
        self.address.0 << 1 | u8::from(self.read)
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame shorter than the 5-byte minimum")]
    TooShort,
    #[error("missing STX")]
    BadStart,
    #[error("missing ETX")]
    BadEnd,
    #[error("length byte {declared} does not match {actual} payload bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("checksum mismatch: frame says {found:#04x}, computed {computed:#04x}")]
    Checksum { found: u8, computed: u8 },
    #[error("payload of {0} bytes exceeds 255")]
    PayloadTooLong(usize),
    #[error("address is reserved: {0:?}")]
    ReservedAddress(ReservedKind),
}

pub fn xor_checksum<'a>(bytes: impl IntoIterator<Item = &'a u8>) -> u8 {
    bytes.into_iter().fold(0, |acc, b| acc ^ b)
}

pub fn frame(f: &Frame) -> Result<Vec<u8>, FrameError> {
    if f.payload.len() > 255 {
        return Err(FrameError::PayloadTooLong(f.payload.len()));
    }
    if let AddressClass::Reserved(kind) = validate_address(f.address, f.read) {
        if !f.is_control() {
            return Err(FrameError::ReservedAddress(kind));
        }
    }
    let mut out = Vec::with_capacity(f.payload.len() + 5);
    out.push(STX);
    out.push(f.address_byte());
    out.push(f.payload.len() as u8);
    out.extend_from_slice(&f.payload);
    out.push(xor_checksum(&out[1..]));
    out.push(ETX);
    Ok(out)
}

pub fn unframe(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < 5 {
        return Err(FrameError::TooShort);
    }
    if bytes[0] != STX {
        return Err(FrameError::BadStart);
    }
    if bytes[bytes.len() - 1] != ETX {
        return Err(FrameError::BadEnd);
    }
    let declared = usize::from(bytes[2]);
    let actual = bytes.len() - 5;
    if declared != actual {
        return Err(FrameError::LengthMismatch { declared, actual });
    }
    let found = bytes[bytes.len() - 2];
    let computed = xor_checksum(&bytes[1..bytes.len() - 2]);
    if found != computed {
        return Err(FrameError::Checksum { found, computed });
    }
    let f = Frame {
        address: SevenBitAddress(bytes[1] >> 1),
        read: bytes[1] & 1 == 1,
        payload: bytes[3..3 + declared].to_vec(),
    };
    if let AddressClass::Reserved(kind) = validate_address(f.address, f.read) {
        if !f.is_control() {
            return Err(FrameError::ReservedAddress(kind));
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum NakCode {
    Busy = 0x01,
    MotorOff = 0x02,
    Resolution = 0x03,
    Limit = 0x04,
    Checksum = 0x05,
    UnknownCommand = 0x06,
    BadArgument = 0x07,
    Incomplete = 0x08,
    Faulted = 0x09,
    Frame = 0x0a,
    NoWeights = 0x0b,
    NoSensor = 0x0c,
}

impl NakCode {
    pub const ALL: [NakCode; 12] = [
        NakCode::Busy,
        NakCode::MotorOff,
        NakCode::Resolution,
        NakCode::Limit,
        NakCode::Checksum,
        NakCode::UnknownCommand,
        NakCode::BadArgument,
        NakCode::Incomplete,
        NakCode::Faulted,
        NakCode::Frame,
        NakCode::NoWeights,
        NakCode::NoSensor,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| *c as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            NakCode::Busy => "busy",
            NakCode::MotorOff => "motor-off",
            NakCode::Resolution => "resolution",
            NakCode::Limit => "limit",
            NakCode::Checksum => "checksum",
            NakCode::UnknownCommand => "unknown-command",
            NakCode::BadArgument => "bad-argument",
            NakCode::Incomplete => "incomplete",
            NakCode::Faulted => "faulted",
            NakCode::Frame => "frame",
            NakCode::NoWeights => "no-weights",
            NakCode::NoSensor => "no-sensor",
        }
    }

    fn meaning(self) -> &'static str {
        match self {
            NakCode::Busy => "module is not ready for commands",
            NakCode::MotorOff => "motor must be switched on first",
            NakCode::Resolution => "scan segment is not a whole number of head steps",
            NakCode::Limit => "step would move the head beyond +/-180 degrees",
            NakCode::Checksum => "frame checksum mismatch",
            NakCode::UnknownCommand => "unknown command byte",
            NakCode::BadArgument => "argument byte out of range",
            NakCode::Incomplete => "command truncated",
            NakCode::Faulted => "module is faulted",
            NakCode::Frame => "malformed frame",
            NakCode::NoWeights => "no weight matrix for the sensor model",
            NakCode::NoSensor => "no scan-head sensor attached",
        }
    }
}

impl From<DecodeError> for NakCode {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Unknown(_) => NakCode::UnknownCommand,
            DecodeError::Incomplete => NakCode::Incomplete,
            DecodeError::BadArgument(_) | DecodeError::Trailing(_) => NakCode::BadArgument,
        }
    }
}

impl From<FrameError> for NakCode {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Checksum { .. } => NakCode::Checksum,
            _ => NakCode::Frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ack(Vec<u8>),
    Nak(NakCode),
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum ResponseError {
    #[error("empty response")]
    Empty,
    #[error("unknown response lead byte {0:#04x}")]
    BadLead(u8),
    #[error("response truncated")]
    Truncated,
    #[error("unknown NAK code {0:#04x}")]
    BadCode(u8),
    #[error("response checksum mismatch")]
    Checksum,
    #[error("{0} trailing bytes after response")]
    Trailing(usize),
    #[error("ACK payload of {0} bytes exceeds 65535")]
    TooLong(usize),
}

impl Response {
    pub fn ack(payload: impl Into<Vec<u8>>) -> Self {
        Response::Ack(payload.into())
    }

    /// ACK carries a 16-bit big-endian length so scan maps fit in one reply.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ResponseError> {
        match self {
            Response::Ack(payload) => {
                let len = u16::try_from(payload.len()).map_err(|_| ResponseError::TooLong(payload.len()))?;
                let mut out = Vec::with_capacity(payload.len() + 4);
                out.push(ACK);
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(payload);
                out.push(xor_checksum(&out[1..]));
                Ok(out)
            }
            Response::Nak(code) => Ok(vec![NAK, *code as u8]),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ResponseError> {
        let (&lead, rest) = bytes.split_first().ok_or(ResponseError::Empty)?;
        match lead {
            NAK => {
                let &code = rest.first().ok_or(ResponseError::Truncated)?;
                if rest.len() > 1 {
                    return Err(ResponseError::Trailing(rest.len() - 1));
                }
                NakCode::from_byte(code)
                    .map(Response::Nak)
                    .ok_or(ResponseError::BadCode(code))
            }
            ACK => {
                if rest.len() < 3 {
                    return Err(ResponseError::Truncated);
                }
                let len = usize::from(u16::from_be_bytes([rest[0], rest[1]]));
                let total = 2 + len + 1;
                if rest.len() < total {
                    return Err(ResponseError::Truncated);
                }
                if rest.len() > total {
                    return Err(ResponseError::Trailing(rest.len() - total));
                }
                if xor_checksum(&rest[..total - 1]) != rest[total - 1] {
                    return Err(ResponseError::Checksum);
                }
                Ok(Response::Ack(rest[2..2 + len].to_vec()))
            }
            other => Err(ResponseError::BadLead(other)),
        }
    }

    pub fn is_ack(&self) -> bool {
        matches!(self, Response::Ack(_))
    }
}

/// Markdown reference of the wire protocol, generated from the registry.
pub fn protocol_markdown() -> String {
    let mut md = String::new();
    md.push_str("# Scanner module protocol\n\n");
    md.push_str("Generated by `emr protocol-doc`; do not edit by hand.\n\n");
    md.push_str("## Request frames\n\n");
    md.push_str("```\nSTX(0x02) ADDR LEN PAYLOAD... XOR ETX(0x03)\n```\n\n");
    md.push_str(
        "* `ADDR` is the 7-bit module address shifted left by one, with the read/write bit in bit 0 (write = 0).\n",
    );
    md.push_str("* `LEN` is the payload length, 0 to 255.\n");
    md.push_str("* `XOR` is the XOR of `ADDR`, `LEN` and every payload byte.\n");
    md.push_str(&format!(
        "* The scanner module answers at address `{:#04x}`.\n\n",
        DEFAULT_MODULE_ADDRESS
    ));
    md.push_str("Frames addressed to a reserved address are rejected, except general-call control frames.\n\n");
    md.push_str("### Reserved addresses\n\n| Address | R/W | Meaning |\n|---|---|---|\n");
    for kind in ReservedKind::ALL {
        let (a, rw, meaning) = kind.row();
        md.push_str(&format!("| `{a}` | {rw} | {meaning} |\n"));
    }
    md.push_str("\n## Commands\n\nThe payload of a request frame is one command.\n\n");
    md.push_str("| Hex | Chars | Command | Description |\n|---|---|---|---|\n");
    for cmd in Command::all() {
        let bytes = cmd.encode();
        let hex: Vec<String> = bytes.iter().map(|b| format!("{b:02X}")).collect();
        let chars: Vec<String> = bytes.iter().map(|b| (*b as char).to_string()).collect();
        let chars = chars.join(" ").replace('|', "\\|");
        md.push_str(&format!(
            "| `{}` | `{}` | `{}` | {} |\n",
            hex.join(" "),
            chars,
            cmd,
            cmd.description()
        ));
    }
    md.push_str(&format!("\n{} commands in total.\n\n", Command::all().len()));
    md.push_str("## Responses\n\nEvery request receives exactly one response.\n\n");
    md.push_str("```\nACK(0x06) LEN_HI LEN_LO PAYLOAD... XOR\nNAK(0x15) CODE\n```\n\n");
    md.push_str("`XOR` covers both length bytes and the payload.\n\n");
    md.push_str("| Command | ACK payload |\n|---|---|\n");
    md.push_str("| QueryAdc | ADC code, 2 bytes big-endian (0 for unpowered or unattached ports) |\n");
    md.push_str("| QueryDistance | distance in cm, 1 byte (0 = no valid distance) |\n");
    md.push_str("| LocalScan | local map in `EMRM` binary form |\n");
    md.push_str("| Motor | empty |\n\n");
    md.push_str("### NAK codes\n\n| Code | Name | Meaning |\n|---|---|---|\n");
    for code in NakCode::ALL {
        md.push_str(&format!(
            "| `{:#04x}` | {} | {} |\n",
            code as u8,
            code.name(),
            code.meaning()
        ));
    }
    md.push_str("\n## Local map block\n\n");
    md.push_str("```\n\"EMRM\" SIDE(u16 LE) ROWS... RASTER(f32 LE)\n```\n\n");
    md.push_str(
        "Rows run from y = 0 (south) upward, `ceil(SIDE/8)` bytes each, most significant bit first (lowest x). ",
    );
    md.push_str("The scan-head axis is cell (SIDE/2, SIDE/2). `RASTER` is the cell size in cm.\n");
    md
}
