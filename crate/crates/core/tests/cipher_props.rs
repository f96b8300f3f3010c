mod common;

use fedchaos::cipher::{self, ChaosKey, CipherBlob};
use fedchaos::nn::ModelParams;
use fedchaos::Error;
use proptest::prelude::*;

fn key() -> impl Strategy<Value = ChaosKey> {
    (3.57f64..=4.0, 0.001f64..0.999, 0u32..2000)
        .prop_filter("not the fixed point", |(r, x0, _)| *x0 != 1.0 - 1.0 / r)
        .prop_map(|(r, x0, burn_in)| ChaosKey::new(r, x0, burn_in).unwrap())
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn params() -> impl Strategy<Value = ModelParams> {
    prop::collection::vec(1usize..=6, 2..=5).prop_flat_map(|sizes| {
        let total = ModelParams::zeros(&sizes).num_params();
        prop::collection::vec(finite(), total).prop_map(move |vals| {
            let mut p = ModelParams::zeros(&sizes);
            for (slot, v) in p.values_mut().zip(vals) {
                *slot = v;
            }
            p
        })
    })
}

proptest! {
    #[test]
    fn decrypt_inverts_encrypt(k in key(), payload in prop::collection::vec(any::<u8>(), 0..600)) {
        let blob = cipher::encrypt(&payload, &k).unwrap();
        prop_assert_eq!(blob.len(), payload.len());
        prop_assert_eq!(cipher::decrypt(&blob, &k).unwrap(), payload);
    }

    #[test]
    fn keystream_is_a_function_of_the_key(k in key(), n in 0usize..512) {
        let a = cipher::keystream_bytes(&k, n).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(a, cipher::keystream_bytes(&k, n).unwrap());
    }

    #[test]
    fn keystream_prefixes_agree(k in key(), n in 1usize..256) {
        let long = cipher::keystream_bytes(&k, 2 * n).unwrap();
        prop_assert_eq!(&long[..n], &cipher::keystream_bytes(&k, n).unwrap()[..]);
    }

    #[test]
    fn seal_open_is_lossless(k in key(), p in params()) {
        let blob = cipher::seal_params(&p, &k).unwrap();
        prop_assert_eq!(blob.len(), cipher::wire_len(&p.shapes()));
        let back = cipher::open_params(&blob, &k, &p.shapes()).unwrap();
        for (a, b) in p.values().zip(back.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_an_integrity_error(p in params(), cut in 1usize..64) {
        let bytes = cipher::serialize_params(&p).unwrap();
        let cut = cut.min(bytes.len());
        let r = cipher::deserialize_params(&bytes[..bytes.len() - cut], &p.shapes());
        prop_assert!(matches!(r, Err(Error::Integrity(_))));
    }
}

#[test]
fn wrong_key_fails_integrity_check() {
    let p = ModelParams::zeros(&[3, 4, 1]);
    let k = ChaosKey::new(3.8, 0.3, 1000).unwrap();
    let other = ChaosKey::new(3.8, 0.3 + 1e-9, 1000).unwrap();
    let blob = cipher::seal_params(&p, &k).unwrap();
    assert!(matches!(
        cipher::open_params(&blob, &other, &p.shapes()),
        Err(Error::Integrity(_))
    ));
}

#[test]
fn shape_mismatch_is_an_integrity_error() {
    let p = ModelParams::zeros(&[3, 4, 1]);
    let bytes = cipher::serialize_params(&p).unwrap();
    let r = cipher::deserialize_params(&bytes, &[(3, 5), (5, 1)]);
    assert!(matches!(r, Err(Error::Integrity(_))));
}

#[test]
fn non_finite_parameters_are_refused() {
    let mut p = ModelParams::zeros(&[2, 1]);
    p.layers[0].bias[0] = f64::NAN;
    let k = ChaosKey::new(3.9, 0.4, 10).unwrap();
    assert!(matches!(cipher::seal_params(&p, &k), Err(Error::Numerical(_))));
}

#[test]
fn keys_outside_the_chaotic_band_are_rejected() {
    assert!(matches!(ChaosKey::new(3.5, 0.3, 0), Err(Error::Domain(_))));
    assert!(matches!(ChaosKey::new(3.8, 0.0, 0), Err(Error::Domain(_))));
    assert!(matches!(ChaosKey::new(3.8, 1.0, 0), Err(Error::Domain(_))));
    let blob = CipherBlob { payload: vec![1, 2, 3] };
    let bad = ChaosKey {
        r: 2.0,
        x0: 0.5,
        burn_in: 0,
    };
    assert!(cipher::decrypt(&blob, &bad).is_err());
}
