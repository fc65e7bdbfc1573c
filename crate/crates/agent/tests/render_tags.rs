use curio_agent::tags::{parse_render_tags, parse_segments, retain_tags, RenderTag, Segment, TagKind};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    input: String,
    texts: Vec<String>,
    tags: Vec<(String, String)>,
}

fn kind(name: &str) -> TagKind {
    match name {
        "FundusRecord" => TagKind::FundusRecord,
        "FundusCollection" => TagKind::FundusCollection,
        other => panic!("unknown kind {other}"),
    }
}

#[test]
fn table() {
    let cases: Vec<Case> = serde_json::from_str(include_str!("data/render_tags.json")).unwrap();
    assert_eq!(cases.len(), 50);
    for case in &cases {
        let (texts, tags) = parse_render_tags(&case.input);
        let expected: Vec<RenderTag> = case
            .tags
            .iter()
            .map(|(k, id)| RenderTag {
                kind: kind(k),
                murag_id: id.clone(),
            })
            .collect();
        assert_eq!(texts, case.texts, "texts of {:?}", case.input);
        assert_eq!(tags, expected, "tags of {:?}", case.input);
        // keeping every tag is the identity on canonical input
        let (rebuilt, kept, dropped) = retain_tags(&case.input, |_| true);
        assert_eq!(kept, expected);
        assert!(dropped.is_empty());
        assert_eq!(parse_render_tags(&rebuilt), (texts, tags));
    }
}

fn arb_segment() -> impl Strategy<Value = Segment> {
    prop_oneof![
        "[^<]{1,12}".prop_map(Segment::Text),
        ("[a-z0-9_.-]{1,10}", any::<bool>()).prop_map(|(id, rec)| Segment::Tag(RenderTag {
            kind: if rec { TagKind::FundusRecord } else { TagKind::FundusCollection },
            murag_id: id,
        })),
    ]
}

fn merge(segments: Vec<Segment>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for s in segments {
        match (out.last_mut(), s) {
            (Some(Segment::Text(prev)), Segment::Text(t)) => prev.push_str(&t),
            (_, s) => out.push(s),
        }
    }
    out
}

proptest! {
    #[test]
    fn canonical_documents_round_trip(segments in prop::collection::vec(arb_segment(), 0..12)) {
        let doc: String = segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.clone(),
                Segment::Tag(tag) => tag.to_string(),
            })
            .collect();
        prop_assert_eq!(parse_segments(&doc), merge(segments));
    }

    #[test]
    fn text_is_never_lost(input in "\\PC{0,60}") {
        // dropping every tag leaves exactly the text segments
        let (rebuilt, _, dropped) = retain_tags(&input, |_| false);
        let (texts, tags) = parse_render_tags(&input);
        prop_assert_eq!(rebuilt, texts.concat());
        prop_assert_eq!(dropped, tags);
    }
}
