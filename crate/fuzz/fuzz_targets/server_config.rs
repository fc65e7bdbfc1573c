#![no_main]

use curio_server::config::ServerConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ServerConfig::parse(text);
});
