//! System instructions, compiled in from `prompts/`.

use serde::{Deserialize, Serialize};

pub const AGENT_TEMPLATE: &str = include_str!("../prompts/agent_system.md");
pub const REWRITE_TEXT_TO_IMAGE: &str = include_str!("../prompts/rewrite_text_to_image.md");
pub const REWRITE_TEXT_TO_TEXT: &str = include_str!("../prompts/rewrite_text_to_text.md");
pub const IMAGE_VQA: &str = include_str!("../prompts/image_vqa.md");
pub const IMAGE_CAPTION: &str = include_str!("../prompts/image_caption.md");
pub const IMAGE_OCR: &str = include_str!("../prompts/image_ocr.md");
pub const IMAGE_DETECT_OBJECTS: &str = include_str!("../prompts/image_detect_objects.md");

/// Every catalog file as `(file name, contents)`.
pub const CATALOG: [(&str, &str); 7] = [
    ("agent_system.md", AGENT_TEMPLATE),
    ("rewrite_text_to_image.md", REWRITE_TEXT_TO_IMAGE),
    ("rewrite_text_to_text.md", REWRITE_TEXT_TO_TEXT),
    ("image_vqa.md", IMAGE_VQA),
    ("image_caption.md", IMAGE_CAPTION),
    ("image_ocr.md", IMAGE_OCR),
    ("image_detect_objects.md", IMAGE_DETECT_OBJECTS),
];

/// Deployment-specific parts of the agent instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortalConfig {
    pub portal_name: String,
    pub portal_description: String,
}

impl Default for PortalConfig {
    fn default() -> Self {
        Self {
            portal_name: "Curio".into(),
            portal_description: "Curio is a research portal that makes scientific collection objects openly \
                accessible. Objects are grouped into thematic collections, and every record comes with a \
                title, a catalog number, an image and descriptive metadata."
                .into(),
        }
    }
}

/// Instantiates the agent instruction. Pure: equal configs give equal bytes.
pub fn build_system_prompt(portal: &PortalConfig) -> String {
    // single pass so placeholder-like text inside the values is left alone
    let mut out = String::with_capacity(AGENT_TEMPLATE.len() + portal.portal_description.len());
    let mut rest = AGENT_TEMPLATE;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        if let Some(after) = tail.strip_prefix("{portal_name}") {
            out.push_str(&portal.portal_name);
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{portal_description}") {
            out.push_str(&portal.portal_description);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}
