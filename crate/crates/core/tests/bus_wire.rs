// SPDX-License-Identifier: Apache-2.0

//! Tapped frames decoded with the independent oracles: subkeys via the
//! SP800-108 oracle, payloads via the `ctr` keystream, tags via hand-rolled HMAC.

mod common;

use proptest::prelude::*;

use talus_core::bus::{BusFrame, Cycle, SecureBus};
use talus_core::tpm::command::decode_result;
use talus_core::tpm::{Locality, TpmCall, TpmCommand, TpmDevice, TpmResponse};

struct Subkeys {
    enc: [u8; 16],
    mac: Vec<u8>,
}

fn subkeys(psk: &[u8], direction: &[u8]) -> Subkeys {
    let enc = common::sp800_108(psk, b"BUS-ENC", direction, 16).try_into().unwrap();
    Subkeys { enc, mac: common::sp800_108(psk, b"BUS-MAC", direction, 32) }
}

fn open(keys: &Subkeys, wire: &[u8]) -> (BusFrame, Vec<u8>) {
    let frame = BusFrame::parse(wire).unwrap();
    let mut tagged = wire[..2].to_vec();
    tagged.extend_from_slice(&frame.seq.to_be_bytes());
    tagged.extend_from_slice(&frame.ciphertext);
    assert_eq!(common::hmac_sha256(&keys.mac, &tagged), frame.tag.0, "tag covers cycle, locality, seq and ciphertext");
    let plain = common::ctr_oracle(&keys.enc, frame.seq, 0, &frame.ciphertext);
    (frame, plain)
}

fn bus(seed: &[u8]) -> (SecureBus, Vec<u8>) {
    let mut tpm = TpmDevice::from_manufacturing_seed(seed);
    let psk = tpm.provision_owner(b"owner secret").unwrap();
    let mut bus = SecureBus::new(tpm);
    bus.establish(&psk);
    (bus, psk.0.to_vec())
}

#[test]
fn frames_decode_under_oracle_keys() {
    let (mut bus, psk) = bus(b"wire");
    let up = subkeys(&psk, b"HOST-TO-TPM");
    let down = subkeys(&psk, b"TPM-TO-HOST");
    let mut port = bus.port(Locality::L2, Cycle::Dma);
    port.pcr_extend(5, &talus_core::crypto::hash(b"x")).unwrap();
    let value = port.pcr_read(5).unwrap();

    let tap = bus.tap();
    assert_eq!(tap.len(), 4);
    for (i, wire) in tap.frames().iter().enumerate() {
        let seq = (i / 2) as u64;
        if i % 2 == 0 {
            let (frame, plain) = open(&up, wire);
            assert_eq!((frame.cycle, frame.locality, frame.seq), (Cycle::Dma, 2, seq));
            let expected = if i == 0 {
                TpmCommand::PcrExtend { index: 5, value: talus_core::crypto::hash(b"x") }
            } else {
                TpmCommand::PcrRead { index: 5 }
            };
            assert_eq!(plain, expected.encode());
        } else {
            let (frame, plain) = open(&down, wire);
            assert_eq!((frame.cycle, frame.locality, frame.seq), (Cycle::Io, 2, seq));
            let reply = decode_result(&plain).unwrap().unwrap();
            if i == 3 {
                assert_eq!(reply, TpmResponse::Digest(value));
            }
        }
    }
}

#[test]
fn direction_keys_differ() {
    let psk = [9u8; 16];
    let up = subkeys(&psk, b"HOST-TO-TPM");
    let down = subkeys(&psk, b"TPM-TO-HOST");
    assert_ne!(up.enc, down.enc);
    assert_ne!(up.mac, down.mac);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_payload_round_trips_through_oracle(chunk in proptest::collection::vec(any::<u8>(), 0..300), loc in 0u8..4) {
        let (mut bus, psk) = bus(b"prop");
        let mut port = bus.port(Locality::new(loc).unwrap(), Cycle::Io);
        let seq = port.hash_sequence_start().unwrap();
        port.hash_sequence_update(seq, &chunk).unwrap();
        let digest = port.hash_sequence_complete(seq).unwrap();
        prop_assert_eq!(digest.0, common::sha256(&chunk));

        let up = subkeys(&psk, b"HOST-TO-TPM");
        let (frame, plain) = open(&up, &bus.tap().frames()[2]);
        prop_assert_eq!(frame.locality, loc);
        prop_assert_eq!(plain, TpmCommand::HashSequenceUpdate { seq, chunk: chunk.clone() }.encode());
        if chunk.len() >= 8 {
            for wire in bus.tap().frames() {
                prop_assert!(talus_core::crypto::find_subslice(wire, &chunk).is_none());
            }
        }
    }
}
