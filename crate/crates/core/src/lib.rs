// SPDX-License-Identifier: Apache-2.0

pub mod adversary;
pub mod bus;
pub mod cpu;
pub mod crypto;
pub mod flows;
pub mod platform;
pub mod scenario;
pub mod tpm;
pub mod transcript;

pub use platform::Platform;
