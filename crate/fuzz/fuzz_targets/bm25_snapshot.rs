#![no_main]

use curio_core::bm25::Bm25Index;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(index) = Bm25Index::from_bytes(bytes) {
        let _ = index.search("quartz crystal", 5, None);
    }
});
