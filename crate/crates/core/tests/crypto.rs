use ed25519_dalek::SigningKey;
use proptest::prelude::*;
use rand::rngs::OsRng;
use sandi::tagcrypt::{
    commit, decode_tag, encode_tag, normalize_address, sign_tag, verify_commitment, verify_tag_signature, DecodeError,
    EndorsedMessage, EndorsementTag, CT_LEN,
};

fn arb_tag() -> impl Strategy<Value = (SigningKey, EndorsementTag)> {
    (any::<[u8; 32]>(), any::<[u8; 32]>(), any::<u64>(), any::<u8>(), proptest::collection::vec(any::<u8>(), CT_LEN))
        .prop_map(|(seed, com, tau, y, ct)| {
            let sk = SigningKey::from_bytes(&seed);
            let sigma = sign_tag(&sk, &com, tau, y, &ct);
            (sk, EndorsementTag { com, tau, y, ct, sigma })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
        let _ = decode_tag(&bytes);
    }

    #[test]
    fn truncation_is_detected((_, tag) in arb_tag(), cut in 1usize..170) {
        let bytes = encode_tag(&tag);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_tag(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected((_, tag) in arb_tag(), extra in proptest::collection::vec(any::<u8>(), 1..8)) {
        let mut bytes = encode_tag(&tag);
        bytes.extend(&extra);
        prop_assert_eq!(decode_tag(&bytes), Err(DecodeError::Trailing(extra.len())));
    }

    #[test]
    fn foreign_key_does_not_verify((_, tag) in arb_tag(), other: [u8; 32]) {
        let vk = SigningKey::from_bytes(&other).verifying_key();
        prop_assert!(!verify_tag_signature(&vk, &tag));
    }

    #[test]
    fn endorsed_file_round_trip((sk, tag) in arb_tag(), m in proptest::collection::vec(any::<u8>(), 0..400), op: [u8; 32]) {
        let em = EndorsedMessage { tag, message: m, op };
        let back = EndorsedMessage::from_file_bytes(&em.to_file_bytes()).unwrap();
        prop_assert_eq!(&back, &em);
        prop_assert!(verify_tag_signature(&sk.verifying_key(), &back.tag));
    }

    #[test]
    fn address_normalization_is_idempotent(a in "[ A-Za-z0-9@.]{0,30}") {
        let n = normalize_address(&a);
        prop_assert_eq!(normalize_address(&n), n.clone());
        let c = commit(b"m", &a, &mut OsRng);
        prop_assert!(verify_commitment(&c.com, &c.op, b"m", &n));
    }
}

#[test]
fn wrong_magic_and_version_are_named() {
    let sk = SigningKey::from_bytes(&[9; 32]);
    let ct = vec![0; CT_LEN];
    let tag = EndorsementTag { com: [1; 32], tau: 5, y: 2, sigma: sign_tag(&sk, &[1; 32], 5, 2, &ct), ct };
    let mut bytes = encode_tag(&tag);
    bytes[0] = b'X';
    assert_eq!(decode_tag(&bytes), Err(DecodeError::BadMagic));
    let mut bytes = encode_tag(&tag);
    bytes[4] = 9;
    assert_eq!(decode_tag(&bytes), Err(DecodeError::BadVersion(9)));
}
