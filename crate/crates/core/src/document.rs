//! Documents, PHI annotations and the seeded billing-statement generator.
//!
//! A document is a logical page layout: text elements with pixel boxes on a
//! 2550x3300 page (US letter at 300 DPI). Exactly one element per PHI
//! category carries the ground-truth value, and its box is the annotation
//! box. Field boxes are fixed per template; only the strings vary with the
//! seed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PageSize, Rect};

/// The seven PHI categories carried by every document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhiCategory {
    Name,
    DateOfBirth,
    Address,
    #[serde(rename = "MRN")]
    Mrn,
    #[serde(rename = "SSN")]
    Ssn,
    Email,
    Account,
}

/// Spatial character of a category's rendered value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhiForm {
    LongForm,
    Structured,
}

impl PhiCategory {
    pub const ALL: [PhiCategory; 7] = [
        PhiCategory::Name,
        PhiCategory::DateOfBirth,
        PhiCategory::Address,
        PhiCategory::Mrn,
        PhiCategory::Ssn,
        PhiCategory::Email,
        PhiCategory::Account,
    ];

    pub fn form(&self) -> PhiForm {
        match self {
            PhiCategory::Name | PhiCategory::DateOfBirth | PhiCategory::Address => {
                PhiForm::LongForm
            }
            _ => PhiForm::Structured,
        }
    }

    pub fn is_structured(&self) -> bool {
        self.form() == PhiForm::Structured
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhiCategory::Name => "Name",
            PhiCategory::DateOfBirth => "DateOfBirth",
            PhiCategory::Address => "Address",
            PhiCategory::Mrn => "MRN",
            PhiCategory::Ssn => "SSN",
            PhiCategory::Email => "Email",
            PhiCategory::Account => "Account",
        }
    }

    /// Anchored validation pattern for generated values.
    pub fn format_pattern(&self) -> &'static str {
        match self {
            PhiCategory::Name => r"^[A-Z][a-z]+ [A-Z][a-z]+$",
            PhiCategory::DateOfBirth => r"^\d{4}-\d{2}-\d{2}$",
            PhiCategory::Address => r"^\d+ [A-Z][a-z]+ [A-Z][a-z]+, [A-Z][a-z]+, [A-Z]{2} \d{5}$",
            PhiCategory::Mrn => r"^MRN-\d{8}$",
            PhiCategory::Ssn => r"^\d{3}-\d{2}-\d{4}$",
            PhiCategory::Email => r"^[a-z]+@[a-z]+\.[a-z]+$",
            PhiCategory::Account => r"^ACCT-\d+$",
        }
    }

    pub fn matches_format(&self, value: &str) -> bool {
        Regex::new(self.format_pattern())
            .expect("category patterns are valid")
            .is_match(value)
    }
}

impl fmt::Display for PhiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhiCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown PHI category `{s}`")))
    }
}

/// Ground truth for one PHI element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiAnnotation {
    pub category: PhiCategory,
    pub bbox: Rect,
    pub value: String,
    pub context_label: String,
    pub context_bbox: Rect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextElement {
    pub text: String,
    pub bbox: Rect,
    /// Set on the element holding a PHI value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiCategory>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    #[default]
    #[serde(rename = "billing-v1")]
    BillingV1,
    #[serde(rename = "billing-v2")]
    BillingV2,
}

impl Template {
    pub const ALL: [Template; 2] = [Template::BillingV1, Template::BillingV2];

    pub fn id(&self) -> &'static str {
        match self {
            Template::BillingV1 => "billing-v1",
            Template::BillingV2 => "billing-v2",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub template: Template,
    pub seed: u64,
    pub page: PageSize,
    /// Reading order.
    pub elements: Vec<TextElement>,
    pub annotations: Vec<PhiAnnotation>,
}

impl Document {
    pub fn annotation(&self, category: PhiCategory) -> Option<&PhiAnnotation> {
        self.annotations.iter().find(|a| a.category == category)
    }

    /// Plain text as a perfect reader would emit it, one element per line.
    pub fn full_text(&self) -> String {
        let lines: Vec<&str> = self.elements.iter().map(|e| e.text.as_str()).collect();
        lines.join("\n")
    }

    /// Checks every structural invariant of a document.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidDocument {
            id: self.id.clone(),
            reason,
        };
        if self.annotations.len() != PhiCategory::ALL.len() {
            return Err(fail(format!("{} annotations, expected 7", self.annotations.len())));
        }
        let categories: BTreeSet<PhiCategory> =
            self.annotations.iter().map(|a| a.category).collect();
        if categories.len() != PhiCategory::ALL.len() {
            return Err(fail("duplicate PHI category".into()));
        }
        let text = self.full_text();
        for a in &self.annotations {
            for (what, rect) in [("bbox", a.bbox), ("context_bbox", a.context_bbox)] {
                if !rect.fits_within(self.page.width, self.page.height) {
                    return Err(fail(format!("{} {what} {rect} outside page", a.category)));
                }
            }
            if a.value.is_empty() || !a.category.matches_format(&a.value) {
                return Err(fail(format!("{} value `{}` has wrong format", a.category, a.value)));
            }
            let holders = self
                .elements
                .iter()
                .filter(|e| e.text.contains(&a.value))
                .count();
            if holders != 1 || text.matches(&a.value).count() != 1 {
                return Err(fail(format!("{} value must occur exactly once", a.category)));
            }
            let element = self
                .elements
                .iter()
                .find(|e| e.phi == Some(a.category))
                .ok_or_else(|| fail(format!("no element for {}", a.category)))?;
            if element.text != a.value || element.bbox != a.bbox {
                return Err(fail(format!("{} element disagrees with annotation", a.category)));
            }
            if a.context_bbox.intersects(&a.bbox) {
                return Err(fail(format!("{} label overlaps its value", a.category)));
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            for b in &self.annotations[i + 1..] {
                if a.bbox.intersects(&b.bbox) {
                    return Err(fail(format!("{} and {} boxes overlap", a.category, b.category)));
                }
            }
        }
        Ok(())
    }
}

/// Caption shown next to each PHI field.
pub fn context_label(category: PhiCategory) -> &'static str {
    match category {
        PhiCategory::Name => "Patient Name:",
        PhiCategory::DateOfBirth => "Date of Birth:",
        PhiCategory::Address => "Billing Address:",
        PhiCategory::Mrn => "Medical Record Number:",
        PhiCategory::Ssn => "SSN:",
        PhiCategory::Email => "Email:",
        PhiCategory::Account => "Account Number:",
    }
}

struct Field {
    category: PhiCategory,
    value: Rect,
    label: Rect,
}

const fn field(category: PhiCategory, value: Rect, label: Rect) -> Field {
    Field {
        category,
        value,
        label,
    }
}

// Structured values sit one SAM patch wide, with their captions in a
// left-hand column at least four 51.2 px compressed cells away from every
// value box, so no shipped radius reaches a caption.
const BILLING_V1: [Field; 7] = [
    field(PhiCategory::Name, Rect::new(26, 75, 650, 65), Rect::new(26, 30, 220, 30)),
    field(PhiCategory::DateOfBirth, Rect::new(700, 436, 180, 30), Rect::new(700, 380, 180, 30)),
    field(PhiCategory::Address, Rect::new(26, 845, 900, 150), Rect::new(26, 790, 260, 30)),
    field(PhiCategory::Mrn, Rect::new(256, 412, 25, 20), Rect::new(26, 412, 75, 20)),
    field(PhiCategory::Ssn, Rect::new(256, 463, 25, 20), Rect::new(26, 463, 75, 20)),
    field(PhiCategory::Email, Rect::new(256, 514, 25, 20), Rect::new(26, 514, 75, 20)),
    field(PhiCategory::Account, Rect::new(256, 565, 25, 20), Rect::new(26, 565, 75, 20)),
];

// Same form spread over three tiles; the name box straddles x = 1024.
const BILLING_V2: [Field; 7] = [
    field(PhiCategory::Name, Rect::new(900, 75, 650, 65), Rect::new(900, 30, 220, 30)),
    field(PhiCategory::DateOfBirth, Rect::new(1724, 436, 180, 30), Rect::new(1724, 380, 180, 30)),
    field(PhiCategory::Address, Rect::new(26, 1869, 900, 150), Rect::new(26, 1814, 260, 30)),
    field(PhiCategory::Mrn, Rect::new(1280, 412, 25, 20), Rect::new(1050, 412, 75, 20)),
    field(PhiCategory::Ssn, Rect::new(1280, 463, 25, 20), Rect::new(1050, 463, 75, 20)),
    field(PhiCategory::Email, Rect::new(1280, 514, 25, 20), Rect::new(1050, 514, 75, 20)),
    field(PhiCategory::Account, Rect::new(1280, 565, 25, 20), Rect::new(1050, 565, 75, 20)),
];

struct Layout {
    fields: &'static [Field; 7],
    header: Rect,
    provider: Rect,
    /// Top of the itemised charges, which run to the bottom of the page.
    items_top: u32,
    /// Vertical band the charges must skip, if any.
    items_gap: Option<(u32, u32)>,
}

impl Template {
    fn layout(&self) -> Layout {
        match self {
            Template::BillingV1 => Layout {
                fields: &BILLING_V1,
                header: Rect::new(1100, 30, 900, 60),
                provider: Rect::new(1100, 120, 1200, 40),
                items_top: 1100,
                items_gap: None,
            },
            Template::BillingV2 => Layout {
                fields: &BILLING_V2,
                header: Rect::new(26, 1100, 900, 60),
                provider: Rect::new(26, 1200, 1200, 40),
                items_top: 1300,
                items_gap: Some((1780, 2040)),
            },
        }
    }
}

/// Rendered characters per line of text in the target band.
pub const BASELINE_CHAR_BAND: (usize, usize) = (1995, 2078);

const FIRST_NAMES: &[&str] = &[
    "Alice", "Bernard", "Carmen", "Dmitri", "Elena", "Farah", "Gustavo", "Helen", "Imani",
    "Jonah", "Keiko", "Luis", "Marisol", "Nathan", "Olivia", "Priya", "Quentin", "Rosa",
    "Samuel", "Tamsin", "Ursula", "Victor", "Wen", "Yusuf", "Zora",
];
const LAST_NAMES: &[&str] = &[
    "Abernathy", "Balogun", "Castellano", "Delacroix", "Eriksen", "Fitzgerald", "Gallagher",
    "Hawthorne", "Iglesias", "Jablonski", "Kowalczyk", "Lindqvist", "Montgomery", "Nakamura",
    "Okonkwo", "Petrakis", "Quintero", "Rasmussen", "Szymanski", "Thibodeaux", "Underwood",
    "Valdivia", "Whitfield", "Yamamoto", "Zielinski",
];
const STREETS: &[&str] = &[
    "Maple", "Juniper", "Harbor", "Sycamore", "Chestnut", "Willow", "Granite", "Meadow",
    "Lakeview", "Orchard", "Summit", "Cedar",
];
const STREET_KINDS: &[&str] = &["Avenue", "Street", "Road", "Lane", "Drive", "Court"];
const CITIES: &[(&str, &str)] = &[
    ("Springfield", "IL"),
    ("Riverton", "WY"),
    ("Fairview", "OR"),
    ("Georgetown", "TX"),
    ("Madison", "WI"),
    ("Clinton", "IA"),
    ("Ashland", "KY"),
    ("Burlington", "VT"),
];
const MAIL_HOSTS: &[&str] = &["mailbox", "postal", "inbox", "letterbox", "webmail"];
const MAIL_TLDS: &[&str] = &["com", "net", "org"];
const SERVICES: &[(&str, &str)] = &[
    ("99213", "Office visit, established patient"),
    ("80053", "Comprehensive metabolic panel"),
    ("85025", "Complete blood count with differential"),
    ("71046", "Chest radiograph, two views"),
    ("93000", "Electrocardiogram with interpretation"),
    ("36415", "Routine venipuncture"),
    ("90686", "Influenza vaccine, quadrivalent"),
    ("81001", "Urinalysis with microscopy"),
    ("97110", "Therapeutic exercise, each 15 minutes"),
    ("99203", "Office visit, new patient"),
];
const FOOTER_WORDS: &[&str] = &[
    "Please", "remit", "payment", "within", "thirty", "days", "of", "the", "statement",
    "date", "Questions", "about", "this", "bill", "may", "be", "directed", "to", "our",
    "patient", "accounts", "office", "during", "business", "hours", "Thank", "you", "for",
    "choosing", "our", "clinic",
];

/// Draws a value in the canonical format of `category`.
pub fn sample_value(category: PhiCategory, rng: &mut impl Rng) -> String {
    match category {
        PhiCategory::Name => format!(
            "{} {}",
            FIRST_NAMES.choose(rng).unwrap(),
            LAST_NAMES.choose(rng).unwrap()
        ),
        PhiCategory::DateOfBirth => format!(
            "{:04}-{:02}-{:02}",
            rng.gen_range(1935..=2005),
            rng.gen_range(1..=12),
            rng.gen_range(1..=28)
        ),
        PhiCategory::Address => {
            let (city, state) = CITIES.choose(rng).unwrap();
            format!(
                "{} {} {}, {}, {} {:05}",
                rng.gen_range(10..=9899),
                STREETS.choose(rng).unwrap(),
                STREET_KINDS.choose(rng).unwrap(),
                city,
                state,
                rng.gen_range(10000..=99950)
            )
        }
        PhiCategory::Mrn => format!("MRN-{:08}", rng.gen_range(0..100_000_000u32)),
        PhiCategory::Ssn => format!(
            "{:03}-{:02}-{:04}",
            rng.gen_range(100..=899),
            rng.gen_range(1..=99),
            rng.gen_range(1..=9999)
        ),
        PhiCategory::Email => {
            let first = FIRST_NAMES.choose(rng).unwrap().to_lowercase();
            let last = LAST_NAMES.choose(rng).unwrap().to_lowercase();
            format!(
                "{}{}@{}.{}",
                &first[..1],
                last,
                MAIL_HOSTS.choose(rng).unwrap(),
                MAIL_TLDS.choose(rng).unwrap()
            )
        }
        PhiCategory::Account => format!("ACCT-{:07}", rng.gen_range(0..10_000_000u32)),
    }
}

fn char_width_box(x: u32, y: u32, text: &str, page: PageSize) -> Rect {
    let w = (text.len() as u32 * 22).clamp(22, page.width - x);
    Rect::new(x, y, w, 40)
}

/// Builds the document for `(seed, template)`; pure and deterministic.
pub fn generate_document(seed: u64, template: Template) -> Document {
    generate_with_id(format!("doc-{seed:016x}"), seed, template)
}

fn generate_with_id(id: String, seed: u64, template: Template) -> Document {
    let page = PageSize::LETTER_300DPI;
    let layout = template.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Values are drawn until no value is a substring of another.
    let values: Vec<String> = loop {
        let drawn: Vec<String> = layout
            .fields
            .iter()
            .map(|f| sample_value(f.category, &mut rng))
            .collect();
        let distinct = drawn.iter().enumerate().all(|(i, a)| {
            drawn
                .iter()
                .enumerate()
                .all(|(j, b)| i == j || !b.contains(a.as_str()))
        });
        if distinct {
            break drawn;
        }
    };

    let mut elements = vec![
        TextElement {
            text: "STATEMENT OF ACCOUNT".into(),
            bbox: layout.header,
            phi: None,
        },
        TextElement {
            text: "Lakeside Family Medicine, Billing Department".into(),
            bbox: layout.provider,
            phi: None,
        },
    ];
    let mut annotations = Vec::with_capacity(7);
    for (f, value) in layout.fields.iter().zip(&values) {
        let label = context_label(f.category);
        elements.push(TextElement {
            text: label.into(),
            bbox: f.label,
            phi: None,
        });
        elements.push(TextElement {
            text: value.clone(),
            bbox: f.value,
            phi: Some(f.category),
        });
        annotations.push(PhiAnnotation {
            category: f.category,
            bbox: f.value,
            value: value.clone(),
            context_label: label.into(),
            context_bbox: f.label,
        });
    }

    let target = rng.gen_range(BASELINE_CHAR_BAND.0..=BASELINE_CHAR_BAND.1);
    let mut length: usize = elements.iter().map(|e| e.text.len() + 1).sum::<usize>() - 1;
    let footer_min = 40;
    let mut y = layout.items_top;
    let mut items = Vec::new();
    items.push("Date        Code   Description                                Amount".to_string());
    length += items[0].len() + 1;
    loop {
        let (code, description) = SERVICES.choose(&mut rng).unwrap();
        let line = format!(
            "2024-{:02}-{:02}  {}  {:<40} ${:>4}.{:02}",
            rng.gen_range(1..=12),
            rng.gen_range(1..=28),
            code,
            description,
            rng.gen_range(15..=980),
            rng.gen_range(0..100)
        );
        if length + 1 + line.len() + 1 + footer_min > target {
            break;
        }
        length += line.len() + 1;
        items.push(line);
    }
    for line in items {
        if let Some((top, bottom)) = layout.items_gap {
            if y + 40 > top && y < bottom {
                y = bottom;
            }
        }
        elements.push(TextElement {
            bbox: char_width_box(100, y, &line, page),
            text: line,
            phi: None,
        });
        y += 48;
    }

    let footer_len = target - length - 1;
    let mut footer = String::new();
    let mut words = FOOTER_WORDS.iter().cycle();
    while footer.len() < footer_len {
        if !footer.is_empty() {
            footer.push(' ');
        }
        footer.push_str(words.next().unwrap());
    }
    footer.truncate(footer_len);
    elements.push(TextElement {
        bbox: char_width_box(100, y.min(page.height - 40), &footer, page),
        text: footer,
        phi: None,
    });

    elements.sort_by_key(|e| (e.bbox.y, e.bbox.x));
    Document {
        id,
        template,
        seed,
        page,
        elements,
        annotations,
    }
}

/// One corpus entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_seed: u64,
    pub template: Template,
    pub documents: Vec<ManifestEntry>,
}

/// Sidecar record, one per PHI element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub category: PhiCategory,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub value: String,
    pub context_label: String,
    pub context_bbox: Rect,
}

#[derive(Serialize, Deserialize)]
struct DocumentFile {
    id: String,
    template: Template,
    seed: u64,
    page: PageSize,
    elements: Vec<TextElement>,
}

/// Generates `n` documents in memory; document `i` gets the `i`-th draw
/// of a generator seeded with `corpus_seed`.
pub fn generate_corpus(n: usize, corpus_seed: u64, template: Template) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    (0..n)
        .map(|i| generate_with_id(format!("doc-{i:04}"), rng.next_u64(), template))
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes `n` documents plus annotation sidecars and a manifest under `dir`.
pub fn write_corpus(n: usize, corpus_seed: u64, template: Template, dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidConfig("corpus size must be at least 1".into()));
    }
    let docs = generate_corpus(n, corpus_seed, template);
    save_corpus(&docs, corpus_seed, template, dir)
}

pub fn save_corpus(docs: &[Document], corpus_seed: u64, template: Template, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for doc in docs {
        let file = DocumentFile {
            id: doc.id.clone(),
            template: doc.template,
            seed: doc.seed,
            page: doc.page,
            elements: doc.elements.clone(),
        };
        let mut body = serde_json::to_vec_pretty(&file)?;
        body.push(b'\n');
        write_file(&dir.join(format!("{}.json", doc.id)), &body)?;

        let mut sidecar = Vec::new();
        for a in &doc.annotations {
            let record = AnnotationRecord {
                doc_id: doc.id.clone(),
                category: a.category,
                x: a.bbox.x,
                y: a.bbox.y,
                w: a.bbox.w,
                h: a.bbox.h,
                value: a.value.clone(),
                context_label: a.context_label.clone(),
                context_bbox: a.context_bbox,
            };
            serde_json::to_writer(&mut sidecar, &record)?;
            sidecar.push(b'\n');
        }
        write_file(&dir.join(format!("{}.annotations.jsonl", doc.id)), &sidecar)?;
    }
    let manifest = Manifest {
        corpus_seed,
        template,
        documents: docs
            .iter()
            .map(|d| ManifestEntry {
                id: d.id.clone(),
                seed: d.seed,
            })
            .collect(),
    };
    let mut body = serde_json::to_vec_pretty(&manifest)?;
    body.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &body)?;
    Ok(manifest)
}

/// Loads and validates every document listed in `dir/manifest.json`.
pub fn read_corpus(dir: &Path) -> Result<Vec<Document>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw)?;
    manifest
        .documents
        .iter()
        .map(|entry| read_document(dir, &entry.id))
        .collect()
}

fn read_document(dir: &Path, id: &str) -> Result<Document> {
    let doc_path = dir.join(format!("{id}.json"));
    let raw = fs::read(&doc_path).map_err(|e| Error::io(&doc_path, e))?;
    let file: DocumentFile = serde_json::from_slice(&raw)?;

    let sidecar_path: PathBuf = dir.join(format!("{id}.annotations.jsonl"));
    let reader = BufReader::new(fs::File::open(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?);
    let mut annotations = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&sidecar_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: sidecar_path.clone(),
            line: i + 1,
            reason,
        };
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if record.doc_id != file.id {
            return Err(malformed(format!("doc_id {} != {}", record.doc_id, file.id)));
        }
        annotations.push(PhiAnnotation {
            category: record.category,
            bbox: Rect::new(record.x, record.y, record.w, record.h),
            value: record.value,
            context_label: record.context_label,
            context_bbox: record.context_bbox,
        });
    }
    let doc = Document {
        id: file.id,
        template: file.template,
        seed: file.seed,
        page: file.page,
        elements: file.elements,
        annotations,
    };
    doc.validate()?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bbox_to_patches, GridSpec};

    #[test]
    fn taxonomy_is_fixed() {
        assert_eq!(PhiCategory::ALL.len(), 7);
        let long: Vec<_> = PhiCategory::ALL.iter().filter(|c| !c.is_structured()).collect();
        assert_eq!(
            long,
            [&PhiCategory::Name, &PhiCategory::DateOfBirth, &PhiCategory::Address]
        );
    }

    #[test]
    fn seed_one_has_one_annotation_per_category() {
        let doc = generate_document(1, Template::BillingV1);
        let cats: BTreeSet<_> = doc.annotations.iter().map(|a| a.category).collect();
        assert_eq!(cats.len(), 7);
        doc.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_document(1, Template::BillingV1),
            generate_document(1, Template::BillingV1)
        );
        assert_ne!(
            generate_document(1, Template::BillingV1),
            generate_document(2, Template::BillingV1)
        );
    }

    #[test]
    fn ssn_has_canonical_shape() {
        let doc = generate_document(2, Template::BillingV1);
        let ssn = &doc.annotation(PhiCategory::Ssn).unwrap().value;
        assert!(Regex::new(r"^\d{3}-\d{2}-\d{4}$").unwrap().is_match(ssn), "{ssn}");
    }

    #[test]
    fn unknown_template_is_rejected() {
        assert!(matches!(
            "billing-v9".parse::<Template>(),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn text_length_lands_in_baseline_band() {
        for seed in 0..200 {
            for template in Template::ALL {
                let n = generate_document(seed, template).full_text().len();
                assert!(
                    (BASELINE_CHAR_BAND.0..=BASELINE_CHAR_BAND.1).contains(&n),
                    "seed {seed} {template}: {n}"
                );
            }
        }
    }

    #[test]
    fn field_footprints_respect_form_classes() {
        for template in Template::ALL {
            let doc = generate_document(3, template);
            for a in &doc.annotations {
                let patches = bbox_to_patches(a.bbox, doc.page, GridSpec::Sam40).unwrap();
                let cols: BTreeSet<_> = patches.iter().map(|p| (p.tile, p.cell.col)).collect();
                let rows: BTreeSet<_> = patches.iter().map(|p| (p.tile, p.cell.row)).collect();
                if a.category.is_structured() {
                    assert!(cols.len() <= 2 && rows.len() <= 2, "{template} {}", a.category);
                } else {
                    assert!(cols.len() >= 3, "{template} {}", a.category);
                }
            }
        }
    }

    #[test]
    fn reference_template_keeps_phi_in_first_tile() {
        let doc = generate_document(5, Template::BillingV1);
        assert!(doc
            .annotations
            .iter()
            .all(|a| a.bbox.right() <= 1024 && a.bbox.bottom() <= 1024));
        let doc = generate_document(5, Template::BillingV2);
        let tiles: BTreeSet<_> = doc
            .annotations
            .iter()
            .flat_map(|a| bbox_to_patches(a.bbox, doc.page, GridSpec::Sam40).unwrap())
            .map(|p| p.tile)
            .collect();
        assert!(tiles.len() >= 3);
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(3, 11, Template::BillingV2, dir.path()).unwrap();
        assert_eq!(manifest.documents.len(), 3);
        let loaded = read_corpus(dir.path()).unwrap();
        assert_eq!(loaded, generate_corpus(3, 11, Template::BillingV2));
    }

    #[test]
    fn zero_documents_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_corpus(0, 1, Template::BillingV1, dir.path()).is_err());
    }

    #[test]
    fn tampered_sidecar_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(1, 0, Template::BillingV1, dir.path()).unwrap();
        let path = dir.path().join("doc-0000.annotations.jsonl");
        let body = fs::read_to_string(&path).unwrap();
        let first_line_end = body.find('\n').unwrap() + 1;
        fs::write(&path, &body[first_line_end..]).unwrap();
        assert!(matches!(
            read_corpus(dir.path()),
            Err(Error::InvalidDocument { .. })
        ));
    }
}
