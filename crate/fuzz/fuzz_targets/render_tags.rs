#![no_main]

use curio_agent::tags::{parse_render_tags, parse_segments, Segment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let (texts, tags) = parse_render_tags(text);
    let segments = parse_segments(text);
    let seg_tags: Vec<_> = segments
        .iter()
        .filter_map(|s| match s {
            Segment::Tag(t) => Some(t.clone()),
            Segment::Text(_) => None,
        })
        .collect();
    assert_eq!(seg_tags, tags);
    // every tag found must parse back to itself
    for tag in &tags {
        let (_, again) = parse_render_tags(&tag.to_string());
        assert_eq!(again, vec![tag.clone()]);
    }
    assert!(texts.iter().map(String::len).sum::<usize>() <= text.len());
});
