mod common;

use proptest::prelude::*;

use adcosim_core::message::{decode_a, decode_b, encode_a, encode_b, B_LENGTH_PREFIX};
use common::{envelope, payload_a, payload_b};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn dialect_a_round_trip(env in envelope(payload_a())) {
        let bytes = encode_a(&env).unwrap();
        prop_assert_eq!(bytes.last(), Some(&b'\n'));
        prop_assert!(!bytes[..bytes.len() - 1].contains(&b'\n'));
        prop_assert_eq!(decode_a(&bytes).unwrap(), env);
    }

    #[test]
    fn dialect_b_round_trip(env in envelope(payload_b())) {
        let bytes = encode_b(&env).unwrap();
        let len = u32::from_be_bytes(bytes[..B_LENGTH_PREFIX].try_into().unwrap()) as usize;
        prop_assert_eq!(len, bytes.len() - B_LENGTH_PREFIX);
        prop_assert_eq!(decode_b(&bytes).unwrap(), env);
    }

    #[test]
    fn dialects_do_not_cross(env in envelope(payload_a())) {
        // unit-bearing A payloads have no B encoding
        if env.payload.dialect().is_some() || matches!(env.payload, adcosim_core::message::Payload::Sync(_)) {
            prop_assert!(encode_b(&env).is_err());
        }
    }

    #[test]
    fn truncated_b_records_are_rejected(env in envelope(payload_b()), cut in 1usize..64) {
        let bytes = encode_b(&env).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_b(&bytes[..keep]).is_err());
    }
}
