#![no_main]

use libfuzzer_sys::fuzz_target;
use tvc_core::{tensor_store, DType};

fuzz_target!(|data: &[u8]| {
    let _ = tensor_store::parse_manifest(data);
    if let Ok(tv) = tensor_store::parse_container(data) {
        // every stored dtype widens exactly to f32, so this re-encode is lossless
        let bytes = tensor_store::encode_container(&tv, DType::F32).expect("re-encode");
        assert_eq!(tensor_store::parse_container(&bytes).expect("re-parse"), tv);
    }
});
