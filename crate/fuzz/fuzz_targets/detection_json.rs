#![no_main]

use curio_agent::image::parse_detections;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_detections(text, None);
    if let Ok(objects) = parse_detections(text, Some((640, 480))) {
        for o in objects {
            let b = o.bounding_box;
            assert!(b.width > 0 && b.height > 0);
            assert!(u64::from(b.x) + u64::from(b.width) <= 640 && u64::from(b.y) + u64::from(b.height) <= 480);
        }
    }
});
