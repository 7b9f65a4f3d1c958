// SPDX-License-Identifier: Apache-2.0

//! Locality-4 command port used by microcode operations.

use super::Locality4Capability;
use crate::bus::{decode_response, ChannelError, SecureBus};
use crate::tpm::{TpmCall, TpmCommand, TpmResponse};

/// Holds a locality-4 programmed-I/O session for its lifetime.
pub(crate) struct MicrocodePort<'a> {
    bus: &'a mut SecureBus,
    cap: Locality4Capability,
    origin: &'static str,
}

impl<'a> MicrocodePort<'a> {
    pub(crate) fn open(
        bus: &'a mut SecureBus,
        cap: &Locality4Capability,
        origin: &'static str,
    ) -> Result<Self, ChannelError> {
        bus.io_session_open_privileged(cap)?;
        Ok(Self { bus, cap: cap.clone(), origin })
    }

    /// Lets lower-locality traffic contend for the bus while the session is held.
    pub(crate) fn bus_mut(&mut self) -> &mut SecureBus {
        self.bus
    }
}

impl Drop for MicrocodePort<'_> {
    fn drop(&mut self) {
        let _ = self.bus.io_session_close_privileged(&self.cap);
    }
}

impl TpmCall for MicrocodePort<'_> {
    type Error = ChannelError;

    fn call(&mut self, cmd: TpmCommand) -> Result<TpmResponse, ChannelError> {
        let reply = self.bus.send_privileged(&self.cap, self.origin, &cmd.encode())?;
        decode_response(&reply)
    }
}
