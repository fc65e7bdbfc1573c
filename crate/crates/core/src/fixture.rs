//! Deterministic synthetic corpora for tests, demos, and benchmarks.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{ContactInfo, FieldSpec};
use crate::manifest::{CollectionEntry, CorpusManifest, Located, RecordEntry, DEFAULT_IMAGE_ROOT};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const IMAGE_SIDE: u32 = 24;

struct Theme {
    name: &'static str,
    prefix: &'static str,
    title: &'static str,
    title_de: &'static str,
    description: &'static str,
    description_de: &'static str,
    /// (field name, label, German label, value pool). The first field's pool
    /// is walked in order, the others are sampled.
    fields: &'static [(&'static str, &'static str, &'static str, &'static [&'static str])],
    title_fields: &'static [&'static str],
}

const THEMES: &[Theme] = &[
    Theme {
        name: "minerals",
        prefix: "MIN",
        title: "Mineralogical Collection",
        title_de: "Mineralogische Sammlung",
        description: "Rock and mineral specimens from field excursions, including rare silicates, ores and crystals.",
        description_de: "Gesteins- und Mineralproben aus Exkursionen, darunter seltene Silikate, Erze und Kristalle.",
        fields: &[
            ("Mineral", "Mineral", "Mineral", &["Sanrománit", "Quartz", "Pyrite", "Malachite", "Fluorite", "Galena", "Calcite", "Beryl"]),
            ("Locality", "Locality", "Fundort", &["Alps", "Harz", "Atacama", "Urals", "Cornwall", "Black Forest"]),
            ("Formula", "Chemical formula", "Chemische Formel", &["SiO2", "FeS2", "CaCO3", "CaF2", "PbS", "Cu2CO3(OH)2"]),
        ],
        title_fields: &["Mineral", "Locality"],
    },
    Theme {
        name: "instruments",
        prefix: "INS",
        title: "Historical Scientific Instruments",
        title_de: "Historische wissenschaftliche Instrumente",
        description: "Microscopes, balances, telescopes and measuring devices once used in teaching and research laboratories.",
        description_de: "Mikroskope, Waagen, Teleskope und Messgeräte aus Lehre und Forschung.",
        fields: &[
            ("Instrument", "Instrument", "Instrument", &["Brass microscope", "Analytical balance", "Refracting telescope", "Galvanometer", "Sextant", "Barometer"]),
            ("Maker", "Maker", "Hersteller", &["Zeiss", "Leitz", "Sartorius", "Fraunhofer", "Siemens"]),
            ("Year", "Year", "Jahr", &["1852", "1876", "1899", "1910", "1934"]),
        ],
        title_fields: &["Instrument", "Maker"],
    },
    Theme {
        name: "zoology",
        prefix: "ZOO",
        title: "Zoological Teaching Collection",
        title_de: "Zoologische Lehrsammlung",
        description: "Preserved animals, skeletons and wet specimens used for comparative anatomy lessons.",
        description_de: "Präparierte Tiere, Skelette und Nasspräparate für die vergleichende Anatomie.",
        fields: &[
            ("CommonName", "Common name", "Trivialname", &["Red fox", "Barn owl", "Common frog", "Hedgehog", "Grey heron", "Stag beetle"]),
            ("Species", "Species", "Art", &["Vulpes vulpes", "Tyto alba", "Rana temporaria", "Erinaceus europaeus", "Ardea cinerea", "Lucanus cervus"]),
            ("Preparation", "Preparation", "Präparation", &["Skeleton", "Taxidermy mount", "Wet specimen", "Skull"]),
        ],
        title_fields: &["CommonName", "Preparation"],
    },
    Theme {
        name: "antiquities",
        prefix: "ANT",
        title: "Collection of Classical Antiquities",
        title_de: "Antikensammlung",
        description: "Plaster casts, bronzes and ceramics documenting Greek and Roman sculpture and daily life.",
        description_de: "Gipsabgüsse, Bronzen und Keramik zur griechischen und römischen Plastik und Alltagskultur.",
        fields: &[
            ("Object", "Object", "Objekt", &["Bronze goose statue", "Marble torso", "Plaster bust of Athena", "Terracotta oil lamp", "Stone plinth", "Red-figure amphora"]),
            ("Material", "Material", "Material", &["Bronze", "Marble", "Plaster", "Terracotta", "Limestone"]),
            ("Period", "Period", "Epoche", &["Archaic", "Classical", "Hellenistic", "Roman Imperial"]),
        ],
        title_fields: &["Object"],
    },
    Theme {
        name: "herbarium",
        prefix: "HRB",
        title: "University Herbarium",
        title_de: "Universitätsherbarium",
        description: "Pressed plants, seeds and botanical drawings collected by students and researchers.",
        description_de: "Gepresste Pflanzen, Samen und botanische Zeichnungen.",
        fields: &[
            ("Taxon", "Taxon", "Taxon", &["Bellis perennis", "Quercus robur", "Taraxacum officinale", "Digitalis purpurea", "Papaver rhoeas"]),
            ("Collector", "Collector", "Sammler", &["A. Lindner", "M. Okafor", "H. Sato", "E. Berg"]),
            ("Habitat", "Habitat", "Lebensraum", &["Meadow", "Forest edge", "Riverbank", "Dune"]),
        ],
        title_fields: &["Taxon", "Habitat"],
    },
    Theme {
        name: "paleontology",
        prefix: "PAL",
        title: "Paleontological Collection",
        title_de: "Paläontologische Sammlung",
        description: "Fossil invertebrates, vertebrate bones and trace fossils from quarries and coastal cliffs.",
        description_de: "Fossile Wirbellose, Wirbeltierknochen und Spurenfossilien.",
        fields: &[
            ("Fossil", "Fossil", "Fossil", &["Ammonite", "Trilobite", "Belemnite", "Ichthyosaur vertebra", "Fern imprint"]),
            ("Stratum", "Stratum", "Schicht", &["Jurassic", "Devonian", "Cretaceous", "Carboniferous"]),
        ],
        title_fields: &["Fossil", "Stratum"],
    },
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture needs n_records >= n_collections >= 1 (got {n_collections} collections, {n_records} records)")]
    Precondition { n_collections: usize, n_records: usize },
}

/// A manifest plus the PNG bytes of every image it references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    pub manifest: CorpusManifest,
    pub images: BTreeMap<String, Vec<u8>>,
}

impl Fixture {
    /// Writes `manifest.jsonl` and `images/` into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let image_dir = dir.join(DEFAULT_IMAGE_ROOT);
        std::fs::create_dir_all(&image_dir)?;
        for (name, bytes) in &self.images {
            std::fs::write(image_dir.join(name), bytes)?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_jsonl())?;
        Ok(path)
    }
}

/// Builds `n_collections` themed collections and `n_records` records assigned
/// round-robin (record `j` goes to collection `j % n_collections`). Themes
/// repeat with a numeric suffix once exhausted.
pub fn generate_fixture(seed: u64, n_collections: usize, n_records: usize) -> Result<Fixture, FixtureError> {
    if n_collections == 0 || n_records < n_collections {
        return Err(FixtureError::Precondition {
            n_collections,
            n_records,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = CorpusManifest {
        image_root: Some(DEFAULT_IMAGE_ROOT.to_owned()),
        ..Default::default()
    };
    let mut images = BTreeMap::new();
    let mut line = 2;

    let names: Vec<(usize, String, String)> = (0..n_collections)
        .map(|i| {
            let theme = i % THEMES.len();
            let round = i / THEMES.len();
            if round == 0 {
                (theme, THEMES[theme].name.to_owned(), THEMES[theme].title.to_owned())
            } else {
                (
                    theme,
                    format!("{}-{}", THEMES[theme].name, round + 1),
                    format!("{} {}", THEMES[theme].title, round + 1),
                )
            }
        })
        .collect();

    for (theme, name, title) in &names {
        let t = &THEMES[*theme];
        manifest.collections.push(Located {
            line,
            entry: CollectionEntry {
                collection_name: name.clone(),
                title: title.clone(),
                title_de: t.title_de.to_owned(),
                description: t.description.to_owned(),
                description_de: t.description_de.to_owned(),
                contacts: vec![ContactInfo {
                    name: "Collection office".into(),
                    email: format!("{name}@collections.example.org"),
                }],
                title_fields: t.title_fields.iter().map(|s| s.to_string()).collect(),
                fields: t
                    .fields
                    .iter()
                    .map(|(n, label, label_de, _)| FieldSpec {
                        name: n.to_string(),
                        label: label.to_string(),
                        label_de: label_de.to_string(),
                    })
                    .collect(),
            },
        });
        line += 1;
    }

    for j in 0..n_records {
        let c = j % n_collections;
        let ordinal = j / n_collections;
        let (theme, name, _) = &names[c];
        let t = &THEMES[*theme];
        let mut details = BTreeMap::new();
        for (k, (field, _, _, pool)) in t.fields.iter().enumerate() {
            let value = if k == 0 {
                pool[ordinal % pool.len()]
            } else {
                *pool.choose(&mut rng).expect("non-empty pool")
            };
            details.insert(field.to_string(), value.to_owned());
        }
        let catalogno = format!("{}-{:04}", t.prefix, ordinal + 1);
        let image_name = format!("{}-{:04}.png", name, ordinal + 1);
        images.insert(image_name.clone(), placeholder_png(&mut rng, j));
        manifest.records.push(Located {
            line,
            entry: RecordEntry {
                fundus_id: ((c as i64 + 1) * 100_000) + ordinal as i64 + 1,
                title: format!("Object {catalogno}"),
                catalogno,
                collection_name: name.clone(),
                image_name,
                details,
            },
        });
        line += 1;
    }
    Ok(Fixture { manifest, images })
}

/// Small two-colour stripe pattern; `salt` makes every record's image differ.
fn placeholder_png(rng: &mut ChaCha8Rng, salt: usize) -> Vec<u8> {
    let bg: [u8; 3] = rng.random();
    let fg: [u8; 3] = rng.random();
    let period = 2 + (salt % 7) as u32;
    let offset = (salt / 7) as u32;
    let img = image::RgbImage::from_fn(IMAGE_SIDE, IMAGE_SIDE, |x, y| {
        if (x + y + offset) % period == 0 {
            image::Rgb(fg)
        } else {
            image::Rgb(bg)
        }
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encode");
    out.into_inner()
}
