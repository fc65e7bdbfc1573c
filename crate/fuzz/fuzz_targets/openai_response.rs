#![no_main]

use curio_agent::openai::parse_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(body) = serde_json::from_slice(bytes) {
        let _ = parse_response(&body);
    }
});
