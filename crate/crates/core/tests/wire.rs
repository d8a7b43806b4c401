mod common;

use labnet_core::node::parse_poll;
use labnet_core::wire::{
    decode_node_payload, encode_line, encode_node_payload, parse_line, payload_to_points, MAX_PAYLOAD_BYTES,
};
use labnet_core::{DataPoint, NodePayload, Reading};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(format!("{GOLDEN}/{name}")).unwrap()
}

fn example_payload() -> NodePayload {
    NodePayload {
        room_id: "Lab03".into(),
        device_id: "Dev01".into(),
        sequence: 7,
        readings: vec![
            Reading::new("temperature", "T1", 21.6),
            Reading::new("temperature", "T2", 22.8),
            Reading::new("temperature", "T3", 25.2),
        ],
    }
}

#[test]
fn example_entry_golden_files() {
    let raw = encode_node_payload(&example_payload()).unwrap();
    assert_eq!(raw, golden("example_entry.payload"));
    assert_eq!(decode_node_payload(&raw).unwrap(), example_payload());

    let point = payload_to_points(&example_payload(), 1_600_000_000_000_000_000).remove(0);
    let line = encode_line(&point).unwrap() + "\n";
    assert_eq!(line.as_bytes(), golden("example_entry.line"));

    let heartbeat = NodePayload {
        readings: vec![],
        sequence: 0,
        ..example_payload()
    };
    assert_eq!(encode_node_payload(&heartbeat).unwrap(), golden("heartbeat.payload"));
}

#[test]
fn mixed_golden_lines_reencode_byte_exact() {
    let text = String::from_utf8(golden("mixed.line")).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        out += &encode_line(&parse_line(line).unwrap()).unwrap();
        out.push('\n');
    }
    assert_eq!(out, text);
    let p = parse_line(text.lines().next().unwrap()).unwrap();
    assert_eq!(p.fields["P1"], 1.22e-10);
}

fn seeded_payload() -> impl Strategy<Value = NodePayload> {
    any::<u64>().prop_map(|s| common::random_payload(&mut ChaCha8Rng::seed_from_u64(s)))
}

fn seeded_point() -> impl Strategy<Value = DataPoint> {
    any::<u64>().prop_map(|s| common::random_point(&mut ChaCha8Rng::seed_from_u64(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn payload_round_trip(p in seeded_payload()) {
        match encode_node_payload(&p) {
            Ok(raw) => {
                prop_assert!(raw.len() <= MAX_PAYLOAD_BYTES);
                prop_assert_eq!(decode_node_payload(&raw).unwrap(), p);
            }
            Err(e) => {
                let oversize = matches!(e, labnet_core::WireError::OversizePayload { .. });
                prop_assert!(oversize, "{}", e);
            }
        }
    }

    #[test]
    fn line_round_trip(p in seeded_point()) {
        let line = encode_line(&p).unwrap();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_line(&line).unwrap(), p);
    }

    #[test]
    fn encoding_is_canonical(p in seeded_point()) {
        let once = encode_line(&p).unwrap();
        let twice = encode_line(&parse_line(&once).unwrap()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn arbitrary_bytes_never_panic(raw in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode_node_payload(&raw);
        let _ = parse_poll(&raw);
        let _ = parse_line(&String::from_utf8_lossy(&raw));
    }

    #[test]
    fn mutated_valid_input_never_panics(p in seeded_point(), cut in any::<prop::sample::Index>(), b in any::<u8>()) {
        let mut line = encode_line(&p).unwrap().into_bytes();
        let i = cut.index(line.len());
        line[i] = b;
        let _ = parse_line(&String::from_utf8_lossy(&line));
        line.truncate(i);
        let _ = parse_line(&String::from_utf8_lossy(&line));
    }
}
