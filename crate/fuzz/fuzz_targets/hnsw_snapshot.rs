#![no_main]

use curio_core::hnsw::HnswIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(index) = HnswIndex::from_bytes(bytes) {
        assert_eq!(index.to_bytes(), bytes);
    }
});
