//! Keeps the checked-in fuzz seeds in step with the formats.
//! Regenerate with `cargo test -p tvc-core --test fuzz_corpus -- --ignored`.

use std::fs;
use std::path::PathBuf;

use tvc_core::{codec, compress, tensor_store, DType, Format, Group, TaskVector};

fn corpus(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target)
}

fn sample() -> TaskVector {
    TaskVector::new(vec![
        Group::new("layer.weight", vec![3, 4], (0..12).map(|i| (i as f32 - 5.5) / 4.0).collect()),
        Group::new("bias", vec![5], vec![0.0, 1.5, -0.25, 0.0, 2.0]),
        Group::new("scalar", vec![], vec![-3.0]),
    ])
    .unwrap()
}

fn seeds() -> Vec<(&'static str, String, Vec<u8>)> {
    let tv = sample();
    let mut out = vec![];
    for dtype in [DType::F32, DType::F16, DType::Bf16] {
        let bytes = tensor_store::encode_container(&tv, dtype).unwrap();
        out.push(("container_parse", format!("valid_{}", dtype.name()), bytes));
    }
    for (k, alpha) in [(25.0, 1.0), (100.0, 2.5), (5.0, 0.5)] {
        let ca = compress::compress(&tv, k, alpha).unwrap();
        for format in [Format::Golomb, Format::Bitmask] {
            let bytes = codec::encode_bytes(&ca, format);
            out.push(("blob_decode", format!("valid_{format}_k{k}"), bytes));
        }
    }
    out
}

#[test]
#[ignore]
fn regenerate_seeds() {
    for (target, name, bytes) in seeds() {
        fs::create_dir_all(corpus(target)).unwrap();
        fs::write(corpus(target).join(name), bytes).unwrap();
    }
}

#[test]
fn checked_in_seeds_are_current() {
    for (target, name, bytes) in seeds() {
        let path = corpus(target).join(&name);
        let on_disk = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk, bytes, "{target}/{name} is stale");
        match target {
            "container_parse" => drop(tensor_store::parse_container(&on_disk).unwrap()),
            _ => drop(codec::decode(&on_disk).unwrap()),
        }
    }
}

/// Seeded stand-in for the fuzz targets: mutated seeds must either be
/// rejected or survive a lossless re-encode.
#[test]
fn mutated_seeds_hold_target_invariants() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xF0_22);
    for (target, _, seed) in seeds() {
        for _ in 0..3000 {
            let mut b = seed.clone();
            match rng.gen_range(0..4) {
                0 => b.truncate(rng.gen_range(0..b.len())),
                1 => {
                    let i = rng.gen_range(0..b.len());
                    b[i] ^= 1 << rng.gen_range(0..8);
                }
                2 => {
                    let i = rng.gen_range(0..b.len());
                    b[i] = rng.gen();
                }
                _ => b.extend((0..rng.gen_range(1..9)).map(|_| rng.gen::<u8>())),
            }
            if target == "container_parse" {
                if let Ok(tv) = tensor_store::parse_container(&b) {
                    let again = tensor_store::encode_container(&tv, DType::F32).unwrap();
                    assert_eq!(tensor_store::parse_container(&again).unwrap(), tv);
                }
            } else {
                let decoded = codec::decode(&b);
                match codec::parse_blob(&b) {
                    Ok((_, ca)) => {
                        assert_eq!(decoded.unwrap(), ca);
                        for format in [Format::Golomb, Format::Bitmask] {
                            assert_eq!(codec::decode(&codec::encode_bytes(&ca, format)).unwrap(), ca);
                        }
                    }
                    Err(_) => assert!(decoded.is_err()),
                }
            }
        }
    }
}
