// SPDX-License-Identifier: Apache-2.0

//! Encrypted, locality-tagged command channel between the CPU and the TPM.
//!
//! Wire format of a frame:
//!
//! ```text
//! cycle (1) || locality (1) || seq (8, BE) || len (4, BE) || ciphertext || tag (32)
//! ```
//!
//! The tag is HMAC over everything before it except the length field.
//! Each direction has its own encryption and MAC subkeys derived from the
//! pre-shared key, and its own sequence counter used as the CTR nonce.
//! Receivers accept only the next expected sequence number.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::cpu::Locality4Capability;
use crate::crypto::{self, MacTag32, SymKey128};
use crate::tpm::command::{decode_result, TpmResponse};
use crate::tpm::{Locality, TpmCall, TpmCommand, TpmDevice, TpmError};
use crate::transcript::Transcript;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize, strum::EnumIter, strum::IntoStaticStr,
)]
#[strum(serialize_all = "SCREAMING_SNAKE_CASE")]
pub enum BusError {
    #[error("channel not established")]
    NotEstablished,
    #[error("bus locked by an open programmed-I/O session")]
    BusBusy,
    #[error("an I/O session is already open")]
    SessionBusy,
    #[error("I/O sessions are only available at localities 2 to 4")]
    SessionLocality,
    #[error("locality 4 frames require the microcode capability")]
    PrivilegedLocality,
    #[error("frame sequence number is not the next expected value")]
    Replay,
    #[error("frame failed authentication")]
    Tamper,
}

impl BusError {
    pub fn code(&self) -> &'static str {
        self.into()
    }
}

/// Failure of a command sent over the bus: either the channel or the TPM refused it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Tpm(#[from] TpmError),
}

impl ChannelError {
    pub fn code(&self) -> &'static str {
        match self {
            ChannelError::Bus(e) => e.code(),
            ChannelError::Tpm(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cycle {
    Io,
    Dma,
}

impl Cycle {
    pub fn to_byte(self) -> u8 {
        match self {
            Cycle::Io => 0x00,
            Cycle::Dma => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(Cycle::Io),
            0x02 => Some(Cycle::Dma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    ToTpm,
    ToHost,
}

impl Direction {
    fn context(self) -> &'static [u8] {
        match self {
            Direction::ToTpm => b"HOST-TO-TPM",
            Direction::ToHost => b"TPM-TO-HOST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusFrame {
    pub cycle: Cycle,
    pub locality: u8,
    pub seq: u64,
    pub ciphertext: Vec<u8>,
    pub tag: MacTag32,
}

const HEADER_LEN: usize = 1 + 1 + 8 + 4;

impl BusFrame {
    fn tag_input(cycle: Cycle, locality: u8, seq: u64, ciphertext: &[u8]) -> Vec<u8> {
        let mut m = Vec::with_capacity(10 + ciphertext.len());
        m.push(cycle.to_byte());
        m.push(locality);
        m.extend_from_slice(&seq.to_be_bytes());
        m.extend_from_slice(ciphertext);
        m
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + 32);
        w.push(self.cycle.to_byte());
        w.push(self.locality);
        w.extend_from_slice(&self.seq.to_be_bytes());
        w.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        w.extend_from_slice(&self.ciphertext);
        w.extend_from_slice(self.tag.as_bytes());
        w
    }

    /// Structural parse only; authentication happens at the receiver.
    pub fn parse(wire: &[u8]) -> Result<Self, BusError> {
        if wire.len() < HEADER_LEN + 32 {
            return Err(BusError::Tamper);
        }
        let cycle = Cycle::from_byte(wire[0]).ok_or(BusError::Tamper)?;
        let locality = wire[1];
        let seq = u64::from_be_bytes(wire[2..10].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(wire[10..14].try_into().expect("4 bytes")) as usize;
        if wire.len() != HEADER_LEN + len + 32 {
            return Err(BusError::Tamper);
        }
        let ciphertext = wire[HEADER_LEN..HEADER_LEN + len].to_vec();
        let tag = MacTag32::from_slice(&wire[HEADER_LEN + len..]).expect("32 bytes");
        Ok(Self { cycle, locality, seq, ciphertext, tag })
    }
}

#[derive(Clone)]
struct DirKeys {
    enc: SymKey128,
    mac: Vec<u8>,
}

impl DirKeys {
    fn derive(psk: &SymKey128, dir: Direction) -> Self {
        Self {
            enc: crypto::kdf_key128(psk.as_bytes(), "BUS-ENC", dir.context()).expect("psk is non-empty"),
            mac: crypto::kdf(psk.as_bytes(), "BUS-MAC", dir.context(), 32).expect("psk is non-empty"),
        }
    }

    fn seal(&self, cycle: Cycle, locality: u8, seq: u64, payload: &[u8]) -> BusFrame {
        let ciphertext = crypto::ctr_crypt(&self.enc, seq, payload);
        let tag =
            crypto::mac(&self.mac, &BusFrame::tag_input(cycle, locality, seq, &ciphertext)).expect("non-empty key");
        BusFrame { cycle, locality, seq, ciphertext, tag }
    }

    fn open(&self, frame: &BusFrame, expected_seq: u64) -> Result<Vec<u8>, BusError> {
        let expect =
            crypto::mac(&self.mac, &BusFrame::tag_input(frame.cycle, frame.locality, frame.seq, &frame.ciphertext))
                .expect("non-empty key");
        if !crypto::tags_equal(expect.as_bytes(), frame.tag.as_bytes()) {
            return Err(BusError::Tamper);
        }
        if frame.seq != expected_seq {
            return Err(BusError::Replay);
        }
        Ok(crypto::ctr_crypt(&self.enc, frame.seq, &frame.ciphertext))
    }
}

struct Channel {
    to_tpm: DirKeys,
    to_host: DirKeys,
    host_send_seq: u64,
    tpm_recv_seq: u64,
    tpm_send_seq: u64,
    host_recv_seq: u64,
}

/// Who put a frame on the wire. Visible to the test harness only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameOrigin {
    Microcode(String),
    Software,
    Adversary,
    Tpm,
}

#[derive(Clone, Debug, Default)]
pub struct TapLog {
    frames: Vec<Vec<u8>>,
}

impl TapLog {
    pub fn frames(&self) -> &[Vec<u8>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cumulative traffic counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusStats {
    pub frames: u64,
    pub commands: u64,
    pub per_command: BTreeMap<String, u64>,
}

pub struct SecureBus {
    tpm: TpmDevice,
    channel: Option<Channel>,
    tap: TapLog,
    audit: Vec<(FrameOrigin, u8)>,
    io_session: Option<Locality>,
    stats: BusStats,
    transcript: Transcript,
}

impl SecureBus {
    /// Attaches a device; the channel stays closed until [`SecureBus::establish`].
    pub fn new(tpm: TpmDevice) -> Self {
        Self {
            tpm,
            channel: None,
            tap: TapLog::default(),
            audit: Vec::new(),
            io_session: None,
            stats: BusStats::default(),
            transcript: Transcript::new(),
        }
    }

    /// Keys both endpoints with `psk`, zeroing counters and the tap.
    pub fn establish(&mut self, psk: &SymKey128) {
        self.channel = Some(Channel {
            to_tpm: DirKeys::derive(psk, Direction::ToTpm),
            to_host: DirKeys::derive(psk, Direction::ToHost),
            host_send_seq: 0,
            tpm_recv_seq: 0,
            tpm_send_seq: 0,
            host_recv_seq: 0,
        });
        self.tap = TapLog::default();
        self.audit.clear();
        self.io_session = None;
    }

    pub fn is_established(&self) -> bool {
        self.channel.is_some()
    }

    pub fn send_seq(&self) -> Option<u64> {
        self.channel.as_ref().map(|c| c.host_send_seq)
    }

    pub fn tap(&self) -> TapLog {
        self.tap.clone()
    }

    pub fn tap_ref(&self) -> &TapLog {
        &self.tap
    }

    /// Origin and locality of every tapped frame, index-aligned with the tap.
    #[doc(hidden)]
    pub fn audit_log(&self) -> &[(FrameOrigin, u8)] {
        &self.audit
    }

    pub fn stats(&self) -> &BusStats {
        &self.stats
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }

    pub fn tpm(&self) -> &TpmDevice {
        &self.tpm
    }

    /// Platform-side access to the device (provisioning, persistence, test hooks).
    pub fn tpm_mut(&mut self) -> &mut TpmDevice {
        &mut self.tpm
    }

    pub fn into_tpm(self) -> TpmDevice {
        self.tpm
    }

    pub fn io_session(&self) -> Option<Locality> {
        self.io_session
    }

    pub fn io_session_open(&mut self, locality: Locality) -> Result<(), BusError> {
        match locality.value() {
            2 | 3 => self.open_session(locality),
            4 => Err(BusError::PrivilegedLocality),
            _ => Err(BusError::SessionLocality),
        }
    }

    pub fn io_session_close(&mut self, locality: Locality) -> Result<(), BusError> {
        if locality == Locality::L4 {
            return Err(BusError::PrivilegedLocality);
        }
        self.close_session(locality)
    }

    pub(crate) fn io_session_open_privileged(&mut self, _cap: &Locality4Capability) -> Result<(), BusError> {
        self.open_session(Locality::L4)
    }

    pub(crate) fn io_session_close_privileged(&mut self, _cap: &Locality4Capability) -> Result<(), BusError> {
        self.close_session(Locality::L4)
    }

    fn open_session(&mut self, locality: Locality) -> Result<(), BusError> {
        if self.io_session.is_some() {
            return Err(BusError::SessionBusy);
        }
        self.io_session = Some(locality);
        Ok(())
    }

    fn close_session(&mut self, locality: Locality) -> Result<(), BusError> {
        match self.io_session {
            Some(l) if l == locality => {
                self.io_session = None;
                Ok(())
            }
            Some(_) => Err(BusError::SessionBusy),
            None => Ok(()),
        }
    }

    /// Software-originated command at locality 0 to 3.
    pub fn send(&mut self, locality: Locality, cycle: Cycle, payload: &[u8]) -> Result<Vec<u8>, BusError> {
        if locality == Locality::L4 {
            return Err(BusError::PrivilegedLocality);
        }
        self.transact(locality, cycle, payload, FrameOrigin::Software)
    }

    pub(crate) fn send_privileged(
        &mut self,
        _cap: &Locality4Capability,
        origin: &str,
        payload: &[u8],
    ) -> Result<Vec<u8>, BusError> {
        self.transact(Locality::L4, Cycle::Io, payload, FrameOrigin::Microcode(origin.to_string()))
    }

    fn transact(
        &mut self,
        locality: Locality,
        cycle: Cycle,
        payload: &[u8],
        origin: FrameOrigin,
    ) -> Result<Vec<u8>, BusError> {
        let channel = self.channel.as_mut().ok_or(BusError::NotEstablished)?;
        match (self.io_session, cycle) {
            (Some(_), Cycle::Dma) => return Err(BusError::BusBusy),
            (Some(owner), Cycle::Io) if owner != locality => return Err(BusError::BusBusy),
            _ => {}
        }
        let seq = channel.host_send_seq;
        channel.host_send_seq += 1;
        let frame = channel.to_tpm.seal(cycle, locality.value(), seq, payload);
        let wire = frame.to_wire();
        self.push_tap(wire.clone(), origin, locality.value());
        let response = self.tpm_receive(&wire)?;
        self.host_receive(&response)
    }

    fn push_tap(&mut self, wire: Vec<u8>, origin: FrameOrigin, locality: u8) {
        self.tap.frames.push(wire);
        self.audit.push((origin, locality));
        self.stats.frames += 1;
    }

    /// TPM endpoint: authenticate, check order, execute, frame the response.
    fn tpm_receive(&mut self, wire: &[u8]) -> Result<Vec<u8>, BusError> {
        let channel = self.channel.as_mut().ok_or(BusError::NotEstablished)?;
        let frame = BusFrame::parse(wire)?;
        let plain = channel.to_tpm.open(&frame, channel.tpm_recv_seq)?;
        channel.tpm_recv_seq += 1;

        let name = TpmCommand::decode(&plain).map(|c| c.name()).unwrap_or("Malformed");
        self.stats.commands += 1;
        *self.stats.per_command.entry(name.to_string()).or_default() += 1;

        let result = self.tpm.process(frame.locality, &plain);
        let outcome = match decode_result(&result) {
            Ok(Ok(_)) => "OK",
            Ok(Err(e)) => e.code(),
            Err(_) => "MALFORMED",
        };
        let actor = match self.audit.last() {
            Some((FrameOrigin::Microcode(op), _)) => format!("microcode:{op}"),
            Some((FrameOrigin::Adversary, _)) => "adversary".to_string(),
            _ => format!("locality{}", frame.locality),
        };
        self.transcript.record(&actor, name, &plain, outcome);

        let channel = self.channel.as_mut().expect("checked above");
        let seq = channel.tpm_send_seq;
        channel.tpm_send_seq += 1;
        let reply = channel.to_host.seal(Cycle::Io, frame.locality, seq, &result).to_wire();
        self.push_tap(reply.clone(), FrameOrigin::Tpm, frame.locality);
        Ok(reply)
    }

    fn host_receive(&mut self, wire: &[u8]) -> Result<Vec<u8>, BusError> {
        let channel = self.channel.as_mut().ok_or(BusError::NotEstablished)?;
        let frame = BusFrame::parse(wire)?;
        let plain = channel.to_host.open(&frame, channel.host_recv_seq)?;
        channel.host_recv_seq += 1;
        Ok(plain)
    }

    /// Adversarial injection of raw wire bytes toward one endpoint.
    ///
    /// Frames toward the TPM that authenticate are executed and their reply
    /// wire bytes returned; frames toward the host return the decrypted payload.
    pub fn inject(&mut self, direction: Direction, wire: &[u8]) -> Result<Vec<u8>, BusError> {
        let locality = wire.get(1).copied().unwrap_or(0);
        self.push_tap(wire.to_vec(), FrameOrigin::Adversary, locality);
        match direction {
            Direction::ToTpm => self.tpm_receive(wire),
            Direction::ToHost => self.host_receive(wire),
        }
    }

    /// Software command port at a fixed locality and cycle type.
    pub fn port(&mut self, locality: Locality, cycle: Cycle) -> SoftwarePort<'_> {
        SoftwarePort { bus: self, locality, cycle }
    }
}

pub(crate) fn decode_response(bytes: &[u8]) -> Result<TpmResponse, ChannelError> {
    decode_result(bytes).map_err(ChannelError::Tpm)?.map_err(ChannelError::Tpm)
}

pub struct SoftwarePort<'a> {
    bus: &'a mut SecureBus,
    locality: Locality,
    cycle: Cycle,
}

impl TpmCall for SoftwarePort<'_> {
    type Error = ChannelError;

    fn call(&mut self, cmd: TpmCommand) -> Result<TpmResponse, ChannelError> {
        let reply = self.bus.send(self.locality, self.cycle, &cmd.encode())?;
        decode_response(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Digest32;

    fn bus() -> SecureBus {
        let mut tpm = TpmDevice::from_manufacturing_seed(b"bus");
        let psk = tpm.provision_owner(b"owner").unwrap();
        let mut bus = SecureBus::new(tpm);
        bus.establish(&psk);
        bus
    }

    #[test]
    fn round_trip_and_tap() {
        let mut b = bus();
        assert_eq!(b.send_seq(), Some(0));
        assert!(b.tap().is_empty());
        let d = b.port(Locality::L0, Cycle::Io).pcr_read(0).unwrap();
        assert_eq!(d, Digest32::zero());
        assert_eq!(b.tap().len(), 2);
        let frame = BusFrame::parse(&b.tap().frames()[0]).unwrap();
        assert_eq!((frame.cycle, frame.locality, frame.seq), (Cycle::Io, 0, 0));
    }

    #[test]
    fn wire_layout() {
        let f =
            BusFrame { cycle: Cycle::Dma, locality: 3, seq: 0x0102, ciphertext: vec![9, 8], tag: MacTag32([7; 32]) };
        let w = f.to_wire();
        assert_eq!(&w[..14], &[0x02, 3, 0, 0, 0, 0, 0, 0, 1, 2, 0, 0, 0, 2]);
        assert_eq!(&w[14..16], &[9, 8]);
        assert_eq!(BusFrame::parse(&w).unwrap(), f);
    }

    #[test]
    fn replay_and_tamper() {
        let mut b = bus();
        b.port(Locality::L1, Cycle::Io).read_clock().unwrap();
        let req = b.tap().frames()[0].clone();
        let reply = b.tap().frames()[1].clone();
        assert_eq!(b.inject(Direction::ToTpm, &req), Err(BusError::Replay));
        assert_eq!(b.inject(Direction::ToHost, &reply), Err(BusError::Replay));
        let mut bad = req.clone();
        bad[HEADER_LEN] ^= 1;
        assert_eq!(b.inject(Direction::ToTpm, &bad), Err(BusError::Tamper));
        let mut relabel = req;
        relabel[1] = 4;
        assert_eq!(b.inject(Direction::ToTpm, &relabel), Err(BusError::Tamper));
        assert!(b.port(Locality::L1, Cycle::Io).read_clock().is_ok());
    }

    #[test]
    fn dma_lockout() {
        let mut b = bus();
        b.io_session_open(Locality::L3).unwrap();
        assert_eq!(b.io_session_open(Locality::L2), Err(BusError::SessionBusy));
        assert_eq!(b.port(Locality::L0, Cycle::Dma).read_clock(), Err(ChannelError::Bus(BusError::BusBusy)));
        assert!(b.port(Locality::L3, Cycle::Io).read_clock().is_ok());
        b.io_session_close(Locality::L3).unwrap();
        assert!(b.port(Locality::L0, Cycle::Dma).read_clock().is_ok());
        assert_eq!(b.io_session_open(Locality::L1), Err(BusError::SessionLocality));
        assert_eq!(b.io_session_open(Locality::L4), Err(BusError::PrivilegedLocality));
        assert_eq!(b.send(Locality::L4, Cycle::Io, b"x"), Err(BusError::PrivilegedLocality));
    }

    #[test]
    fn reestablish_resets() {
        let mut b = bus();
        b.port(Locality::L0, Cycle::Io).read_clock().unwrap();
        let psk = b.tpm().channel_psk().unwrap();
        b.establish(&psk);
        assert_eq!(b.send_seq(), Some(0));
        assert!(b.tap().is_empty());
        let mut unkeyed = SecureBus::new(TpmDevice::from_manufacturing_seed(b"x"));
        assert_eq!(unkeyed.send(Locality::L0, Cycle::Io, b""), Err(BusError::NotEstablished));
    }
}
