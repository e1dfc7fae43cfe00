use halfv::trace_io::{decode_trace, encode_trace, read_trace, write_trace};
use halfv::Error;
use halfv_core::{DenseMatrix, LayerTrace, Modality};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2 layers, 3 tokens (2 visual + 1 text), dim 4; value at (l, n, d) is l·100 + n·10 + d + 0.5.
fn fixture_bytes() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"HVTD");
    for word in [1u32, 2, 3, 4] {
        b.extend_from_slice(&word.to_le_bytes());
    }
    b.extend_from_slice(&[0, 0, 1]);
    for l in 0..2 {
        for n in 0..3 {
            for d in 0..4 {
                b.extend_from_slice(&((l * 100 + n * 10 + d) as f32 + 0.5).to_le_bytes());
            }
        }
    }
    b
}

#[test]
fn hand_assembled_fixture_decodes() {
    let bytes = fixture_bytes();
    assert_eq!(bytes.len(), 20 + 3 + 2 * 3 * 4 * 4);
    let t = decode_trace(&bytes).unwrap();
    assert_eq!((t.num_layers(), t.num_tokens(), t.dim(), t.num_visual()), (2, 3, 4, 2));
    assert_eq!(t.modality(), &[Modality::Visual, Modality::Visual, Modality::Text]);
    assert_eq!(t.layer(1).row(2), &[120.5, 121.5, 122.5, 123.5]);
    assert_eq!(t.layer(0).row(0), &[0.5, 1.5, 2.5, 3.5]);
    assert_eq!(encode_trace(&t).unwrap(), bytes);
}

#[test]
fn bad_magic_and_version_are_format_errors() {
    let mut bytes = fixture_bytes();
    bytes[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_trace(&bytes), Err(Error::Format(_))));
    let mut bytes = fixture_bytes();
    bytes[4] = 2;
    assert!(matches!(decode_trace(&bytes), Err(Error::Format(_))));
    assert!(matches!(decode_trace(b"HV"), Err(Error::Format(_))));
}

#[test]
fn every_length_mismatch_is_corrupt() {
    let bytes = fixture_bytes();
    for cut in 4..bytes.len() {
        assert!(matches!(decode_trace(&bytes[..cut]), Err(Error::Corrupt(_))), "truncated at {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_trace(&long), Err(Error::Corrupt(_))));
    let mut huge = bytes.clone();
    huge[8..20].copy_from_slice(&[0xff; 12]);
    assert!(matches!(decode_trace(&huge), Err(Error::Corrupt(_))));
    let mut modality = bytes;
    modality[21] = 7;
    assert!(matches!(decode_trace(&modality), Err(Error::Corrupt(_))));
}

#[test]
fn semantic_violations_are_validation_errors() {
    let mut text_free = fixture_bytes();
    text_free[22] = 0;
    assert!(matches!(decode_trace(&text_free), Err(Error::Core(halfv_core::Error::Validation(_)))));
    let mut interleaved = fixture_bytes();
    interleaved[20..23].copy_from_slice(&[0, 1, 0]);
    assert!(matches!(decode_trace(&interleaved), Err(Error::Core(_))));
}

#[test]
fn empty_path_is_an_io_error() {
    let t = decode_trace(&fixture_bytes()).unwrap();
    let err = write_trace(&t, "").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(read_trace("/nonexistent/trace.hvtd"), Err(Error::Io { .. })));
}

#[test]
fn rewriting_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let t = decode_trace(&fixture_bytes()).unwrap();
    let (a, b) = (dir.path().join("a.hvtd"), dir.path().join("b.hvtd"));
    write_trace(&t, &a).unwrap();
    write_trace(&read_trace(&a).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&a).unwrap(), fixture_bytes());
}

fn random_trace(seed: u64, layers: usize, v: usize, t: usize, dim: usize) -> LayerTrace {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = v + t;
    let modality = (0..n).map(|i| if i < v { Modality::Visual } else { Modality::Text }).collect();
    let states = (0..layers)
        // f32-representable values so the round trip is exact
        .map(|_| DenseMatrix::new(n, dim, (0..n * dim).map(|_| r.gen_range(-1e3f32..1e3) as f64).collect()).unwrap())
        .collect();
    LayerTrace::new(modality, states).unwrap()
}

proptest! {
    #[test]
    fn read_inverts_write(seed in any::<u64>(), layers in 1usize..5, v in 0usize..6, t in 1usize..4, dim in 1usize..6) {
        let trace = random_trace(seed, layers, v, t, dim);
        let bytes = encode_trace(&trace).unwrap();
        let back = decode_trace(&bytes).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(encode_trace(&back).unwrap(), bytes);
    }
}
