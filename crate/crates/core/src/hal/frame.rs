//! Drive backend that talks the register protocol over a frame link.

use std::collections::VecDeque;

use super::pid::PidGains;
use super::sim::SimDrive;
use super::{
    Ack, Bench, Drive, DriveCommand, DriveConfig, DriveMode, Fixture, GainLoop, HalError, MotorId,
    TelemetrySample,
};
use crate::codec::{
    decode, encode, Body, Channel, CodecError, Frame, GainTerm, Reading, RegisterMessage,
};
use crate::scalar::Scalar;

/// A frame transport plus the clock of whatever is on the other end.
pub trait Link {
    fn transmit(&mut self, frame: &Frame) -> Result<(), HalError>;

    /// Next pending inbound frame, if any.
    fn receive(&mut self) -> Option<Frame>;

    /// Lets the remote side run one control period.
    fn tick(&mut self) -> Result<(), HalError>;

    fn now(&self) -> f64;

    fn control_period(&self) -> f64;
}

/// Limits the host enforces before anything goes on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLimits {
    pub peak_torque: [f64; 2],
    pub velocity_limit: f64,
}

#[derive(Debug)]
pub struct FrameDrive<L> {
    link: L,
    limits: FrameLimits,
    modes: [Option<DriveMode>; 2],
}

impl<L: Link> FrameDrive<L> {
    pub fn new(link: L, limits: FrameLimits) -> Self {
        Self {
            link,
            limits,
            modes: [None; 2],
        }
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    fn send(&mut self, motor: MotorId, body: Body) -> Result<(), HalError> {
        let frame = encode(&RegisterMessage::new(motor, body))?;
        self.link.transmit(&frame)
    }

    fn ack(&self, motor: Option<MotorId>) -> Ack {
        Ack {
            motor,
            effective_step: (self.link.now() / self.link.control_period()).round() as u64 + 1,
        }
    }

    fn read(&mut self, motor: MotorId, channel: Channel) -> Result<f64, HalError> {
        self.send(motor, Body::TelemetryReq(channel))?;
        let frame = self
            .link
            .receive()
            .ok_or(HalError::Timeout("telemetry response"))?;
        let msg = decode(&frame)?;
        if msg.motor != motor {
            return Err(CodecError::MotorMismatch {
                id_motor: motor.number(),
                payload_motor: msg.motor.number(),
            }
            .into());
        }
        match msg.body {
            Body::TelemetryResp(r) if r.channel() == channel => Ok(r.value()),
            other => Err(CodecError::InvalidField {
                field: "telemetry response",
                value: other.opcode() as u32,
            }
            .into()),
        }
    }
}

fn to_wire(value: f64, what: &'static str) -> Result<f32, HalError> {
    let v = value as f32;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(HalError::OutOfRange {
            what,
            value,
            limit: f32::MAX as f64,
        })
    }
}

impl<L: Link> Drive for FrameDrive<L> {
    fn backend(&self) -> &'static str {
        "frame"
    }

    fn control_period(&self) -> f64 {
        self.link.control_period()
    }

    fn now(&self) -> f64 {
        self.link.now()
    }

    fn send_command(&mut self, cmd: DriveCommand) -> Result<Ack, HalError> {
        let target = to_wire(cmd.target, "target")?;
        let limit = match cmd.mode {
            DriveMode::Torque => {
                Some(("torque target", self.limits.peak_torque[cmd.motor.index()]))
            }
            DriveMode::VelocityPid => Some(("velocity target", self.limits.velocity_limit)),
            DriveMode::Idle | DriveMode::PositionPid => None,
        };
        if let Some((what, limit)) = limit {
            if cmd.target.abs() > limit {
                return Err(HalError::OutOfRange {
                    what,
                    value: cmd.target,
                    limit,
                });
            }
        }
        let i = cmd.motor.index();
        if self.modes[i] != Some(cmd.mode) {
            self.send(cmd.motor, Body::SetMode(cmd.mode))?;
            self.modes[i] = Some(cmd.mode);
        }
        self.send(cmd.motor, Body::SetTarget(target))?;
        Ok(self.ack(Some(cmd.motor)))
    }

    fn set_gains(
        &mut self,
        motor: MotorId,
        stage: GainLoop,
        gains: PidGains<f64>,
    ) -> Result<Ack, HalError> {
        let terms = [
            (GainTerm::Kp, gains.kp),
            (GainTerm::Ki, gains.ki),
            (GainTerm::Kd, gains.kd),
            (GainTerm::IntegralLimit, gains.integral_limit),
        ];
        for (term, value) in terms {
            let value = to_wire(value, "gain")?;
            self.send(motor, Body::SetGains { stage, term, value })?;
        }
        Ok(self.ack(Some(motor)))
    }

    fn set_fans(&mut self, on: bool) -> Result<Ack, HalError> {
        self.send(MotorId::M1, Body::FanCtl(on))?;
        Ok(self.ack(None))
    }

    fn sample(&mut self, motor: MotorId) -> Result<TelemetrySample, HalError> {
        Ok(TelemetrySample {
            t: self.read(motor, Channel::Clock)?,
            motor_id: motor,
            position: self.read(motor, Channel::Position)?,
            velocity: self.read(motor, Channel::Velocity)?,
            torque: self.read(motor, Channel::Torque)?,
            current: self.read(motor, Channel::Current)?,
            stator_temp: self.read(motor, Channel::StatorTemp)?,
            pack_voltage: self.read(motor, Channel::PackVoltage)?,
        })
    }

    fn step(&mut self) -> Result<(), HalError> {
        self.link.tick()
    }
}

/// Bench instruments are wired to the host, not the bus.
impl<L: Link + Bench> Bench for FrameDrive<L> {
    fn attach(&mut self, fixture: Fixture) -> Result<(), HalError> {
        self.link.attach(fixture)
    }

    fn load_cell(&mut self, motor: MotorId, pulley_radius: f64) -> Result<f64, HalError> {
        self.link.load_cell(motor, pulley_radius)
    }

    fn microphone(&mut self) -> Result<f64, HalError> {
        self.link.microphone()
    }

    fn recharge(&mut self) -> Result<(), HalError> {
        self.modes = [None; 2];
        self.link.recharge()
    }
}

/// Loopback link with a drive emulator decoding frames into a [`SimDrive`].
#[derive(Debug)]
pub struct SimLink<T: Scalar> {
    drive: SimDrive<T>,
    modes: [DriveMode; 2],
    gains: [[PidGains<f64>; 2]; 2],
    cached: [Option<(u64, TelemetrySample)>; 2],
    step_count: u64,
    rx: VecDeque<Frame>,
    frames_in: u64,
}

impl<T: Scalar> SimLink<T> {
    pub fn new(drive: SimDrive<T>, config: &DriveConfig) -> Self {
        let gains = [config.velocity, config.position];
        Self {
            drive,
            modes: [DriveMode::Idle; 2],
            gains: [gains, gains],
            cached: [None; 2],
            step_count: 0,
            rx: VecDeque::new(),
            frames_in: 0,
        }
    }

    pub fn drive(&self) -> &SimDrive<T> {
        &self.drive
    }

    /// Frames accepted by the emulator so far.
    pub fn frames_in(&self) -> u64 {
        self.frames_in
    }

    fn telemetry(&mut self, motor: MotorId) -> Result<TelemetrySample, HalError> {
        let i = motor.index();
        match self.cached[i] {
            Some((step, s)) if step == self.step_count => Ok(s),
            _ => {
                let s = self.drive.sample(motor)?;
                self.cached[i] = Some((self.step_count, s));
                Ok(s)
            }
        }
    }

    fn respond(&mut self, motor: MotorId, channel: Channel) -> Result<(), HalError> {
        let s = self.telemetry(motor)?;
        let f = |v: f64| v as f32;
        let reading = match channel {
            Channel::Position => Reading::Position(f(s.position)),
            Channel::Velocity => Reading::Velocity(f(s.velocity)),
            Channel::Torque => Reading::Torque(f(s.torque)),
            Channel::Current => Reading::Current(f(s.current)),
            Channel::StatorTemp => Reading::stator_temp(s.stator_temp)?,
            Channel::PackVoltage => Reading::PackVoltage(f(s.pack_voltage)),
            Channel::Clock => Reading::clock(s.t)?,
        };
        let frame = encode(&RegisterMessage::new(motor, Body::TelemetryResp(reading)))?;
        self.rx.push_back(frame);
        Ok(())
    }
}

impl<T: Scalar> Link for SimLink<T> {
    fn transmit(&mut self, frame: &Frame) -> Result<(), HalError> {
        let msg = decode(frame)?;
        self.frames_in += 1;
        let motor = msg.motor;
        let i = motor.index();
        match msg.body {
            Body::SetMode(mode) => {
                self.modes[i] = mode;
                self.drive
                    .send_command(DriveCommand::new(motor, mode, 0.0))?;
            }
            Body::SetTarget(v) => {
                self.drive
                    .send_command(DriveCommand::new(motor, self.modes[i], v as f64))?;
            }
            Body::SetGains { stage, term, value } => {
                let g = &mut self.gains[i][stage as usize];
                let value = value as f64;
                match term {
                    GainTerm::Kp => g.kp = value,
                    GainTerm::Ki => g.ki = value,
                    GainTerm::Kd => g.kd = value,
                    GainTerm::IntegralLimit => g.integral_limit = value,
                }
                // partial updates may be transiently invalid; apply once consistent
                if g.is_valid() {
                    let g = *g;
                    self.drive.set_gains(motor, stage, g)?;
                }
            }
            Body::FanCtl(on) => {
                self.drive.set_fans(on)?;
            }
            Body::TelemetryReq(channel) => self.respond(motor, channel)?,
            Body::TelemetryResp(_) => {}
        }
        Ok(())
    }

    fn receive(&mut self) -> Option<Frame> {
        self.rx.pop_front()
    }

    fn tick(&mut self) -> Result<(), HalError> {
        self.step_count += 1;
        self.drive.step()
    }

    fn now(&self) -> f64 {
        self.drive.now()
    }

    fn control_period(&self) -> f64 {
        self.drive.control_period()
    }
}

impl<T: Scalar> Bench for SimLink<T> {
    fn attach(&mut self, fixture: Fixture) -> Result<(), HalError> {
        self.cached = [None; 2];
        self.drive.attach(fixture)
    }

    fn load_cell(&mut self, motor: MotorId, pulley_radius: f64) -> Result<f64, HalError> {
        self.drive.load_cell(motor, pulley_radius)
    }

    fn microphone(&mut self) -> Result<f64, HalError> {
        self.drive.microphone()
    }

    fn recharge(&mut self) -> Result<(), HalError> {
        self.modes = [DriveMode::Idle; 2];
        self.cached = [None; 2];
        self.drive.recharge()
    }
}

impl<T: Scalar> FrameDrive<SimLink<T>> {
    /// Frame backend in front of a simulated drive.
    pub fn over_sim(drive: SimDrive<T>, config: &DriveConfig) -> Self {
        let limits = FrameLimits {
            peak_torque: [
                drive.peak_torque(MotorId::M1),
                drive.peak_torque(MotorId::M2),
            ],
            velocity_limit: drive.velocity_limit(),
        };
        FrameDrive::new(SimLink::new(drive, config), limits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hal::SensorNoise;
    use crate::plant::PlantParams;

    fn pair() -> (SimDrive<f64>, FrameDrive<SimLink<f64>>) {
        let cfg = DriveConfig::default();
        let mk = || SimDrive::new(PlantParams::default(), &cfg, SensorNoise::none(), 3).unwrap();
        (mk(), FrameDrive::over_sim(mk(), &cfg))
    }

    #[test]
    fn frame_backend_tracks_sim_backend() {
        let (mut sim, mut frame) = pair();
        for d in [&mut sim as &mut dyn Drive, &mut frame as &mut dyn Drive] {
            d.send_command(DriveCommand::new(MotorId::M1, DriveMode::VelocityPid, 12.5))
                .unwrap();
            d.send_command(DriveCommand::new(MotorId::M2, DriveMode::PositionPid, 1.0))
                .unwrap();
            d.run_for(0.5).unwrap();
        }
        for m in MotorId::BOTH {
            let a = sim.sample(m).unwrap();
            let b = frame.sample(m).unwrap();
            assert!((a.velocity - b.velocity).abs() < 1e-4, "{a:?} {b:?}");
            assert!((a.position - b.position).abs() < 1e-5);
            assert!((a.stator_temp - b.stator_temp).abs() <= 0.005 + 1e-12);
            assert!((a.t - b.t).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_never_reaches_the_wire() {
        let (_, mut frame) = pair();
        let err = frame
            .send_command(DriveCommand::new(
                MotorId::M2,
                DriveMode::VelocityPid,
                500.0,
            ))
            .unwrap_err();
        assert_eq!(err.code(), "E_RANGE");
        assert_eq!(frame.link().frames_in(), 0);
    }

    #[test]
    fn gains_go_over_the_wire() {
        let (_, mut frame) = pair();
        let g = PidGains {
            kp: 0.2,
            ki: 0.5,
            kd: 0.0,
            integral_limit: 2.0,
        };
        frame.set_gains(MotorId::M1, GainLoop::Velocity, g).unwrap();
        assert_eq!(frame.link().frames_in(), 4);
        assert_eq!(frame.link().gains[0][0], g.cast::<f32>().cast::<f64>());
    }

    struct Silent;

    impl Link for Silent {
        fn transmit(&mut self, _: &Frame) -> Result<(), HalError> {
            Ok(())
        }
        fn receive(&mut self) -> Option<Frame> {
            None
        }
        fn tick(&mut self) -> Result<(), HalError> {
            Ok(())
        }
        fn now(&self) -> f64 {
            0.0
        }
        fn control_period(&self) -> f64 {
            1e-3
        }
    }

    #[test]
    fn silent_bus_times_out() {
        let limits = FrameLimits {
            peak_torque: [3.0; 2],
            velocity_limit: 200.0,
        };
        let mut d = FrameDrive::new(Silent, limits);
        assert_eq!(d.sample(MotorId::M1).unwrap_err().code(), "E_TIMEOUT");
    }
}
