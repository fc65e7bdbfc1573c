#![no_main]

use curio_core::store::{decode_collections, decode_records, encode_collections, encode_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(records) = decode_records(bytes) {
        assert_eq!(decode_records(&encode_records(&records)).unwrap(), records);
    }
    if let Ok(collections) = decode_collections(bytes) {
        assert_eq!(decode_collections(&encode_collections(&collections)).unwrap(), collections);
    }
});
