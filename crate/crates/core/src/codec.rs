//! Register protocol over 11-bit CAN frames.
//!
//! Frame id is `BASE_ID + motor_id`. Payload layout:
//!
//! | byte | content |
//! |------|---------|
//! | 0    | opcode |
//! | 1    | motor id (1 or 2), must agree with the frame id |
//! | 2..  | opcode body, at most 6 bytes |
//!
//! Bodies, all multi-byte fields little-endian:
//!
//! | opcode | name          | body | dlc |
//! |--------|---------------|------|-----|
//! | 0x01   | SetMode       | mode `u8` (0 idle, 1 torque, 2 velocity, 3 position) | 3 |
//! | 0x02   | SetTarget     | target `f32` | 6 |
//! | 0x03   | SetGains      | loop `u8` (0 velocity, 1 position), term `u8` (0 kp, 1 ki, 2 kd, 3 integral limit), value `f32` | 8 |
//! | 0x04   | FanCtl        | `u8` 0 off, 1 on | 3 |
//! | 0x05   | TelemetryReq  | channel `u8` | 3 |
//! | 0x06   | TelemetryResp | channel `u8`, then a channel-specific value | 5 or 7 |
//!
//! Telemetry channels: 0 position (`f32` rad), 1 velocity (`f32` rad/s),
//! 2 torque (`f32` N·m), 3 current (`f32` A), 4 stator temperature
//! (`i16` centi-°C), 5 pack voltage (`f32` V), 6 drive clock (`u32` ms).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hal::{DriveMode, GainLoop, MotorId};

pub const BASE_ID: u16 = 0x100;
pub const MAX_ID: u16 = 0x7FF;
pub const MAX_DLC: usize = 8;
pub const MAX_BODY: usize = MAX_DLC - 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame id {0:#x} exceeds 11 bits")]
    IdOutOfRange(u16),
    #[error("dlc {dlc} invalid for {what}")]
    MalformedLength { what: &'static str, dlc: usize },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("frame id {0:#x} is reserved")]
    ReservedId(u16),
    #[error("unknown motor id {0}")]
    UnknownMotor(u8),
    #[error("frame id addresses motor {id_motor} but payload names motor {payload_motor}")]
    MotorMismatch { id_motor: u8, payload_motor: u8 },
    #[error("invalid {field} value {value}")]
    InvalidField { field: &'static str, value: u32 },
    #[error("non-finite float in {0}")]
    NonFinite(&'static str),
    #[error("body of {0} bytes does not fit in one frame")]
    BodyOverflow(usize),
    #[error("bad candump text: {0}")]
    Text(String),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::IdOutOfRange(_) => "E_CODEC_ID_RANGE",
            CodecError::MalformedLength { .. } => "E_CODEC_LENGTH",
            CodecError::UnknownOpcode(_) => "E_CODEC_OPCODE",
            CodecError::ReservedId(_) => "E_CODEC_RESERVED_ID",
            CodecError::UnknownMotor(_) => "E_CODEC_MOTOR",
            CodecError::MotorMismatch { .. } => "E_CODEC_MOTOR_MISMATCH",
            CodecError::InvalidField { .. } => "E_CODEC_FIELD",
            CodecError::NonFinite(_) => "E_CODEC_NONFINITE",
            CodecError::BodyOverflow(_) => "E_CODEC_OVERFLOW",
            CodecError::Text(_) => "E_CODEC_TEXT",
        }
    }
}

/// Raw CAN 2.0A data frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    id: u16,
    dlc: u8,
    data: [u8; MAX_DLC],
}

impl Frame {
    pub fn new(id: u16, payload: &[u8]) -> Result<Self, CodecError> {
        if id > MAX_ID {
            return Err(CodecError::IdOutOfRange(id));
        }
        if payload.len() > MAX_DLC {
            return Err(CodecError::MalformedLength {
                what: "frame",
                dlc: payload.len(),
            });
        }
        let mut data = [0u8; MAX_DLC];
        data[..payload.len()].copy_from_slice(payload);
        Ok(Self {
            id,
            dlc: payload.len() as u8,
            data,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> usize {
        self.dlc as usize
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc()]
    }

    /// Parses candump notation, e.g. `101#02010000803F`.
    pub fn from_candump(text: &str) -> Result<Self, CodecError> {
        let (id, data) = text
            .trim()
            .split_once('#')
            .ok_or_else(|| CodecError::Text(text.to_string()))?;
        let id = u16::from_str_radix(id, 16).map_err(|e| CodecError::Text(e.to_string()))?;
        let payload = hex::decode(data).map_err(|e| CodecError::Text(e.to_string()))?;
        Frame::new(id, &payload)
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03X}#{}", self.id, hex::encode_upper(self.payload()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    SetMode = 0x01,
    SetTarget = 0x02,
    SetGains = 0x03,
    FanCtl = 0x04,
    TelemetryReq = 0x05,
    TelemetryResp = 0x06,
}

impl TryFrom<u8> for Opcode {
    type Error = CodecError;

    fn try_from(b: u8) -> Result<Self, CodecError> {
        Ok(match b {
            0x01 => Opcode::SetMode,
            0x02 => Opcode::SetTarget,
            0x03 => Opcode::SetGains,
            0x04 => Opcode::FanCtl,
            0x05 => Opcode::TelemetryReq,
            0x06 => Opcode::TelemetryResp,
            other => return Err(CodecError::UnknownOpcode(other)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainTerm {
    Kp,
    Ki,
    Kd,
    IntegralLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Position,
    Velocity,
    Torque,
    Current,
    StatorTemp,
    PackVoltage,
    Clock,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Position,
        Channel::Velocity,
        Channel::Torque,
        Channel::Current,
        Channel::StatorTemp,
        Channel::PackVoltage,
        Channel::Clock,
    ];

    fn to_byte(self) -> u8 {
        self as u8
    }

    fn from_byte(b: u8) -> Result<Self, CodecError> {
        Channel::ALL
            .get(b as usize)
            .copied()
            .ok_or(CodecError::InvalidField {
                field: "channel",
                value: b as u32,
            })
    }
}

/// A telemetry value in its wire representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    Position(f32),
    Velocity(f32),
    Torque(f32),
    Current(f32),
    /// Centi-degrees Celsius.
    StatorTemp(i16),
    PackVoltage(f32),
    /// Milliseconds.
    Clock(u32),
}

impl Reading {
    pub fn channel(&self) -> Channel {
        match self {
            Reading::Position(_) => Channel::Position,
            Reading::Velocity(_) => Channel::Velocity,
            Reading::Torque(_) => Channel::Torque,
            Reading::Current(_) => Channel::Current,
            Reading::StatorTemp(_) => Channel::StatorTemp,
            Reading::PackVoltage(_) => Channel::PackVoltage,
            Reading::Clock(_) => Channel::Clock,
        }
    }

    /// Quantizes a temperature to centi-degrees.
    pub fn stator_temp(celsius: f64) -> Result<Self, CodecError> {
        let centi = (celsius * 100.0).round();
        if !centi.is_finite() {
            return Err(CodecError::NonFinite("stator temperature"));
        }
        if centi < i16::MIN as f64 || centi > i16::MAX as f64 {
            return Err(CodecError::InvalidField {
                field: "stator temperature",
                value: celsius as i32 as u32,
            });
        }
        Ok(Reading::StatorTemp(centi as i16))
    }

    /// Quantizes a clock value to whole milliseconds.
    pub fn clock(seconds: f64) -> Result<Self, CodecError> {
        let ms = (seconds * 1000.0).round();
        if !(0.0..=u32::MAX as f64).contains(&ms) {
            return Err(CodecError::InvalidField {
                field: "clock",
                value: 0,
            });
        }
        Ok(Reading::Clock(ms as u32))
    }

    /// Value in SI units (°C for temperature, s for the clock).
    pub fn value(&self) -> f64 {
        match *self {
            Reading::Position(v)
            | Reading::Velocity(v)
            | Reading::Torque(v)
            | Reading::Current(v)
            | Reading::PackVoltage(v) => v as f64,
            Reading::StatorTemp(c) => c as f64 / 100.0,
            Reading::Clock(ms) => ms as f64 / 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Body {
    SetMode(DriveMode),
    SetTarget(f32),
    SetGains {
        stage: GainLoop,
        term: GainTerm,
        value: f32,
    },
    FanCtl(bool),
    TelemetryReq(Channel),
    TelemetryResp(Reading),
}

impl Body {
    pub fn opcode(&self) -> Opcode {
        match self {
            Body::SetMode(_) => Opcode::SetMode,
            Body::SetTarget(_) => Opcode::SetTarget,
            Body::SetGains { .. } => Opcode::SetGains,
            Body::FanCtl(_) => Opcode::FanCtl,
            Body::TelemetryReq(_) => Opcode::TelemetryReq,
            Body::TelemetryResp(_) => Opcode::TelemetryResp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterMessage {
    pub motor: MotorId,
    pub body: Body,
}

impl RegisterMessage {
    pub fn new(motor: MotorId, body: Body) -> Self {
        Self { motor, body }
    }
}

fn mode_byte(mode: DriveMode) -> u8 {
    match mode {
        DriveMode::Idle => 0,
        DriveMode::Torque => 1,
        DriveMode::VelocityPid => 2,
        DriveMode::PositionPid => 3,
    }
}

fn finite(v: f32, what: &'static str) -> Result<f32, CodecError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CodecError::NonFinite(what))
    }
}

fn encode_body(body: &Body, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match *body {
        Body::SetMode(mode) => out.push(mode_byte(mode)),
        Body::SetTarget(v) => out.extend(finite(v, "target")?.to_le_bytes()),
        Body::SetGains { stage, term, value } => {
            out.push(match stage {
                GainLoop::Velocity => 0,
                GainLoop::Position => 1,
            });
            out.push(term as u8);
            out.extend(finite(value, "gain")?.to_le_bytes());
        }
        Body::FanCtl(on) => out.push(on as u8),
        Body::TelemetryReq(ch) => out.push(ch.to_byte()),
        Body::TelemetryResp(r) => {
            out.push(r.channel().to_byte());
            match r {
                Reading::StatorTemp(c) => out.extend(c.to_le_bytes()),
                Reading::Clock(ms) => out.extend(ms.to_le_bytes()),
                Reading::Position(v)
                | Reading::Velocity(v)
                | Reading::Torque(v)
                | Reading::Current(v)
                | Reading::PackVoltage(v) => out.extend(finite(v, "telemetry")?.to_le_bytes()),
            }
        }
    }
    Ok(())
}

pub fn encode(msg: &RegisterMessage) -> Result<Frame, CodecError> {
    let mut payload = Vec::with_capacity(MAX_DLC);
    payload.push(msg.body.opcode() as u8);
    payload.push(msg.motor.number());
    encode_body(&msg.body, &mut payload)?;
    let body_len = payload.len() - 2;
    if body_len > MAX_BODY {
        return Err(CodecError::BodyOverflow(body_len));
    }
    Frame::new(BASE_ID + msg.motor.number() as u16, &payload)
}

fn f32_at(body: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(body[at..at + 4].try_into().expect("length checked"))
}

fn expect_len(what: &'static str, body: &[u8], n: usize) -> Result<(), CodecError> {
    if body.len() == n {
        Ok(())
    } else {
        Err(CodecError::MalformedLength {
            what,
            dlc: body.len() + 2,
        })
    }
}

fn decode_body(op: Opcode, body: &[u8]) -> Result<Body, CodecError> {
    Ok(match op {
        Opcode::SetMode => {
            expect_len("SetMode", body, 1)?;
            Body::SetMode(match body[0] {
                0 => DriveMode::Idle,
                1 => DriveMode::Torque,
                2 => DriveMode::VelocityPid,
                3 => DriveMode::PositionPid,
                b => {
                    return Err(CodecError::InvalidField {
                        field: "mode",
                        value: b as u32,
                    })
                }
            })
        }
        Opcode::SetTarget => {
            expect_len("SetTarget", body, 4)?;
            Body::SetTarget(finite(f32_at(body, 0), "target")?)
        }
        Opcode::SetGains => {
            expect_len("SetGains", body, 6)?;
            let stage = match body[0] {
                0 => GainLoop::Velocity,
                1 => GainLoop::Position,
                b => {
                    return Err(CodecError::InvalidField {
                        field: "gain loop",
                        value: b as u32,
                    })
                }
            };
            let term = match body[1] {
                0 => GainTerm::Kp,
                1 => GainTerm::Ki,
                2 => GainTerm::Kd,
                3 => GainTerm::IntegralLimit,
                b => {
                    return Err(CodecError::InvalidField {
                        field: "gain term",
                        value: b as u32,
                    })
                }
            };
            Body::SetGains {
                stage,
                term,
                value: finite(f32_at(body, 2), "gain")?,
            }
        }
        Opcode::FanCtl => {
            expect_len("FanCtl", body, 1)?;
            Body::FanCtl(match body[0] {
                0 => false,
                1 => true,
                b => {
                    return Err(CodecError::InvalidField {
                        field: "fan state",
                        value: b as u32,
                    })
                }
            })
        }
        Opcode::TelemetryReq => {
            expect_len("TelemetryReq", body, 1)?;
            Body::TelemetryReq(Channel::from_byte(body[0])?)
        }
        Opcode::TelemetryResp => {
            let Some((&ch, value)) = body.split_first() else {
                return Err(CodecError::MalformedLength {
                    what: "TelemetryResp",
                    dlc: 2,
                });
            };
            let ch = Channel::from_byte(ch)?;
            let reading = match ch {
                Channel::StatorTemp => {
                    expect_len("TelemetryResp", body, 3)?;
                    Reading::StatorTemp(i16::from_le_bytes([value[0], value[1]]))
                }
                Channel::Clock => {
                    expect_len("TelemetryResp", body, 5)?;
                    Reading::Clock(u32::from_le_bytes(
                        value.try_into().expect("length checked"),
                    ))
                }
                _ => {
                    expect_len("TelemetryResp", body, 5)?;
                    let v = finite(f32_at(value, 0), "telemetry")?;
                    match ch {
                        Channel::Position => Reading::Position(v),
                        Channel::Velocity => Reading::Velocity(v),
                        Channel::Torque => Reading::Torque(v),
                        Channel::Current => Reading::Current(v),
                        _ => Reading::PackVoltage(v),
                    }
                }
            };
            Body::TelemetryResp(reading)
        }
    })
}

/// Decodes a frame. Never panics; every input maps to a message or a classified error.
pub fn decode(frame: &Frame) -> Result<RegisterMessage, CodecError> {
    let id = frame.id();
    let id_motor = match id.checked_sub(BASE_ID) {
        Some(n @ 1..=2) => n as u8,
        _ => return Err(CodecError::ReservedId(id)),
    };
    let payload = frame.payload();
    if payload.is_empty() {
        return Err(CodecError::MalformedLength {
            what: "header",
            dlc: 0,
        });
    }
    let op = Opcode::try_from(payload[0])?;
    if payload.len() < 2 {
        return Err(CodecError::MalformedLength {
            what: "header",
            dlc: payload.len(),
        });
    }
    let motor = MotorId::try_from(payload[1]).map_err(|_| CodecError::UnknownMotor(payload[1]))?;
    if motor.number() != id_motor {
        return Err(CodecError::MotorMismatch {
            id_motor,
            payload_motor: motor.number(),
        });
    }
    let body = decode_body(op, &payload[2..])?;
    Ok(RegisterMessage { motor, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_target_layout() {
        let f = encode(&RegisterMessage::new(MotorId::M1, Body::SetTarget(1.0))).unwrap();
        assert_eq!(f.id(), 0x101);
        assert_eq!(f.dlc(), 6);
        assert_eq!(f.payload(), &[0x02, 0x01, 0x00, 0x00, 0x80, 0x3F]);
    }

    #[test]
    fn zero_target_has_zero_body() {
        let f = encode(&RegisterMessage::new(MotorId::M2, Body::SetTarget(0.0))).unwrap();
        assert_eq!(f.id(), 0x102);
        assert_eq!(&f.payload()[2..], &[0, 0, 0, 0]);
    }

    #[test]
    fn short_set_target_is_malformed() {
        let f = Frame::new(0x101, &[0x02, 0x01, 0x00]).unwrap();
        assert_eq!(decode(&f).unwrap_err().code(), "E_CODEC_LENGTH");
    }

    #[test]
    fn unknown_opcode() {
        let f = Frame::new(0x101, &[0xFF, 0x01, 0, 0, 0, 0]).unwrap();
        assert_eq!(decode(&f), Err(CodecError::UnknownOpcode(0xFF)));
    }

    #[test]
    fn reserved_ids() {
        for id in [0x000, 0x100, 0x103, 0x7FF] {
            let f = Frame::new(id, &[0x02, 0x01, 0, 0, 0, 0]).unwrap();
            assert_eq!(decode(&f), Err(CodecError::ReservedId(id)));
        }
    }

    #[test]
    fn error_codes_are_distinct() {
        let cases = [
            Frame::new(0x101, &[0x02, 0x01, 0x00]).unwrap(),
            Frame::new(0x101, &[0xFF, 0x01]).unwrap(),
            Frame::new(0x100, &[0x02, 0x01]).unwrap(),
            Frame::new(0x101, &[0x04, 0x03, 0x01]).unwrap(),
            Frame::new(0x101, &[0x04, 0x02, 0x01]).unwrap(),
            Frame::new(0x101, &[0x04, 0x01, 0x07]).unwrap(),
            Frame::new(0x101, &[0x02, 0x01, 0x00, 0x00, 0xC0, 0x7F]).unwrap(),
        ];
        let codes: std::collections::BTreeSet<_> = cases
            .iter()
            .map(|f| decode(f).unwrap_err().code())
            .collect();
        assert_eq!(codes.len(), cases.len());
    }

    #[test]
    fn frame_limits() {
        assert_eq!(Frame::new(0x800, &[]), Err(CodecError::IdOutOfRange(0x800)));
        assert!(Frame::new(0x101, &[0; 9]).is_err());
    }

    #[test]
    fn non_finite_targets_do_not_encode() {
        let m = RegisterMessage::new(MotorId::M1, Body::SetTarget(f32::NAN));
        assert_eq!(encode(&m), Err(CodecError::NonFinite("target")));
    }

    #[test]
    fn temperature_fits_one_frame() {
        let r = Reading::stator_temp(79.996).unwrap();
        assert_eq!(r, Reading::StatorTemp(8000));
        let f = encode(&RegisterMessage::new(MotorId::M2, Body::TelemetryResp(r))).unwrap();
        assert_eq!(f.payload(), &[0x06, 0x02, 0x04, 0x40, 0x1F]);
        assert!(Reading::stator_temp(400.0).is_err());
    }

    #[test]
    fn candump_text_round_trip() {
        let f = Frame::from_candump("101#02010000803F").unwrap();
        assert_eq!(f.to_string(), "101#02010000803F");
        assert!(Frame::from_candump("101-02").is_err());
    }

    fn finite_f32() -> impl Strategy<Value = f32> {
        any::<f32>().prop_filter("finite", |v| v.is_finite())
    }

    fn body() -> impl Strategy<Value = Body> {
        let mode = prop_oneof![
            Just(DriveMode::Idle),
            Just(DriveMode::Torque),
            Just(DriveMode::VelocityPid),
            Just(DriveMode::PositionPid)
        ];
        let stage = prop_oneof![Just(GainLoop::Velocity), Just(GainLoop::Position)];
        let term = prop_oneof![
            Just(GainTerm::Kp),
            Just(GainTerm::Ki),
            Just(GainTerm::Kd),
            Just(GainTerm::IntegralLimit)
        ];
        let channel = (0u8..7).prop_map(|b| Channel::from_byte(b).unwrap());
        let reading = prop_oneof![
            finite_f32().prop_map(Reading::Position),
            finite_f32().prop_map(Reading::Velocity),
            finite_f32().prop_map(Reading::Torque),
            finite_f32().prop_map(Reading::Current),
            any::<i16>().prop_map(Reading::StatorTemp),
            finite_f32().prop_map(Reading::PackVoltage),
            any::<u32>().prop_map(Reading::Clock),
        ];
        prop_oneof![
            mode.prop_map(Body::SetMode),
            finite_f32().prop_map(Body::SetTarget),
            (stage, term, finite_f32()).prop_map(|(stage, term, value)| Body::SetGains {
                stage,
                term,
                value
            }),
            any::<bool>().prop_map(Body::FanCtl),
            channel.prop_map(Body::TelemetryReq),
            reading.prop_map(Body::TelemetryResp),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(motor in prop_oneof![Just(MotorId::M1), Just(MotorId::M2)], body in body()) {
            let msg = RegisterMessage::new(motor, body);
            let frame = encode(&msg).unwrap();
            prop_assert!(frame.dlc() <= MAX_DLC);
            prop_assert_eq!(decode(&frame).unwrap(), msg);
            prop_assert_eq!(encode(&msg).unwrap(), frame);
        }

        #[test]
        fn decode_is_total(id in 0u16..2048, payload in proptest::collection::vec(any::<u8>(), 0..=8)) {
            let frame = Frame::new(id, &payload).unwrap();
            if let Ok(msg) = decode(&frame) {
                prop_assert_eq!(encode(&msg).unwrap(), frame);
            }
        }
    }
}
