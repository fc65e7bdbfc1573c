#![no_main]

use curio_agent::stub::ScriptedStub;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ScriptedStub::from_json(text);
});
