//! Render payloads: everything a client needs to draw a card for a tag.

use std::collections::BTreeMap;

use serde::Serialize;

use curio_agent::tags::{RenderTag, TagKind};
use curio_core::domain::ContactInfo;
use curio_core::store::Store;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionRef {
    pub murag_id: String,
    pub collection_name: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderPayload {
    Record {
        murag_id: String,
        title: String,
        catalogno: String,
        image_url: String,
        collection: CollectionRef,
        details: BTreeMap<String, String>,
    },
    Collection {
        murag_id: String,
        collection_name: String,
        title: String,
        description: String,
        contacts: Vec<ContactInfo>,
        record_count: usize,
    },
}

pub fn image_url(image_name: &str) -> String {
    format!("/v1/images/{image_name}")
}

/// Resolves a tag against the store; `None` if its id is unknown.
pub fn resolve(store: &Store, tag: &RenderTag) -> Option<RenderPayload> {
    match tag.kind {
        TagKind::FundusRecord => {
            let r = store.get_record(&tag.murag_id)?;
            let parent = store.parent_of(r);
            Some(RenderPayload::Record {
                murag_id: r.murag_id.to_string(),
                title: store.record_title(r),
                catalogno: r.catalogno.clone(),
                image_url: image_url(&r.image_name),
                collection: CollectionRef {
                    murag_id: parent.murag_id.to_string(),
                    collection_name: parent.collection_name.clone(),
                    title: parent.title.clone(),
                },
                details: r.details.clone(),
            })
        }
        TagKind::FundusCollection => {
            let c = store.get_collection(&tag.murag_id)?;
            if c.murag_id.as_str() != tag.murag_id {
                return None;
            }
            let record_count = store.stats().records_per_collection.get(&c.collection_name).copied().unwrap_or(0);
            Some(RenderPayload::Collection {
                murag_id: c.murag_id.to_string(),
                collection_name: c.collection_name.clone(),
                title: c.title.clone(),
                description: c.description.clone(),
                contacts: c.contacts.clone(),
                record_count,
            })
        }
    }
}

pub fn resolve_all(store: &Store, tags: &[RenderTag]) -> Vec<RenderPayload> {
    tags.iter().filter_map(|t| resolve(store, t)).collect()
}
