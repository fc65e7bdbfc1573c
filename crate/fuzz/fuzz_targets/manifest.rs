#![no_main]

use curio_core::manifest::CorpusManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(manifest) = CorpusManifest::parse(text) {
        let again = CorpusManifest::parse(&manifest.to_jsonl()).expect("serialized manifest parses");
        let entries = |m: &CorpusManifest| {
            (
                m.image_root.clone(),
                m.collections.iter().map(|c| c.entry.clone()).collect::<Vec<_>>(),
                m.records.iter().map(|r| r.entry.clone()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(entries(&manifest), entries(&again));
    }
});
