#![no_main]

use curio_core::bm25::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    for token in tokenize(text) {
        assert!(!token.is_empty());
        assert!(!token.chars().any(char::is_whitespace));
    }
});
