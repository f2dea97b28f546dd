#![no_main]

use libfuzzer_sys::fuzz_target;
use tvc_core::{codec, Format};

fuzz_target!(|data: &[u8]| {
    let decoded = codec::decode(data);
    match codec::parse_blob(data) {
        Ok((blob, ca)) => {
            assert_eq!(decoded.expect("decode agrees with parse"), ca);
            for format in [Format::Golomb, Format::Bitmask] {
                let bytes = codec::encode_bytes(&ca, format);
                assert_eq!(codec::decode(&bytes).expect("canonical re-decode"), ca);
            }
            assert_eq!(blob.headers.len(), ca.tensors.len());
        }
        Err(_) => assert!(decoded.is_err()),
    }
});
