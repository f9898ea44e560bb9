//! Manga109-style annotation object model.
//!
//! One XML document describes one book: a `<book>` element holding
//! `<pages>`, each `<page>` holding `<frame>`, `<text>`, `<face>` and
//! `<body>` elements with `xmin`/`ymin`/`xmax`/`ymax` attributes. Genre and
//! publisher are not part of the upstream schema; they come from a CSV
//! manifest (`title,genre,publisher`) or, for documents written by this
//! crate, from optional attributes on `<book>`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use quick_xml::events::attributes::Attributes;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("page {page}: region {region} box {bbox:?} exceeds page {width}x{height}")]
    Bounds { page: u32, region: String, bbox: (u32, u32, u32, u32), width: u32, height: u32 },
    #[error("missing metadata: {0}")]
    MissingMetadata(String),
    #[error("metadata manifest: {0}")]
    Manifest(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The twelve genre labels of the Manga109 classification set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    #[serde(rename = "4-panel")]
    FourPanel,
    #[serde(rename = "animal")]
    Animal,
    #[serde(rename = "battle")]
    Battle,
    #[serde(rename = "fantasy")]
    Fantasy,
    #[serde(rename = "history")]
    History,
    #[serde(rename = "horror")]
    Horror,
    #[serde(rename = "humor")]
    Humor,
    #[serde(rename = "love")]
    Love,
    #[serde(rename = "romantic comedy")]
    RomanticComedy,
    #[serde(rename = "SF")]
    ScienceFiction,
    #[serde(rename = "sport")]
    Sport,
    #[serde(rename = "suspense")]
    Suspense,
}

impl Genre {
    pub const ALL: [Genre; 12] = [
        Genre::FourPanel,
        Genre::Animal,
        Genre::Battle,
        Genre::Fantasy,
        Genre::History,
        Genre::Horror,
        Genre::Humor,
        Genre::Love,
        Genre::RomanticComedy,
        Genre::ScienceFiction,
        Genre::Sport,
        Genre::Suspense,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Genre::FourPanel => "4-panel",
            Genre::Animal => "animal",
            Genre::Battle => "battle",
            Genre::Fantasy => "fantasy",
            Genre::History => "history",
            Genre::Horror => "horror",
            Genre::Humor => "humor",
            Genre::Love => "love",
            Genre::RomanticComedy => "romantic comedy",
            Genre::ScienceFiction => "SF",
            Genre::Sport => "sport",
            Genre::Suspense => "suspense",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Genre {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String =
            s.trim().chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect();
        let genre = match norm.as_str() {
            "4panel" | "fourpanel" | "yonkoma" => Genre::FourPanel,
            "animal" => Genre::Animal,
            "battle" => Genre::Battle,
            "fantasy" => Genre::Fantasy,
            "history" | "historical" => Genre::History,
            "horror" => Genre::Horror,
            "humor" | "humour" => Genre::Humor,
            "love" | "loveromance" => Genre::Love,
            "romanticcomedy" | "romcom" => Genre::RomanticComedy,
            "sf" | "scifi" | "sciencefiction" => Genre::ScienceFiction,
            "sport" | "sports" => Genre::Sport,
            "suspense" => Genre::Suspense,
            _ => return Err(AnnotationError::MissingMetadata(format!("unknown genre label {s:?}"))),
        };
        Ok(genre)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Frame,
    Text,
    Face,
    Body,
}

impl RegionKind {
    pub fn tag(&self) -> &'static str {
        match self {
            RegionKind::Frame => "frame",
            RegionKind::Text => "text",
            RegionKind::Face => "face",
            RegionKind::Body => "body",
        }
    }

    fn from_tag(tag: &[u8]) -> Option<Self> {
        match tag {
            b"frame" => Some(RegionKind::Frame),
            b"text" => Some(RegionKind::Text),
            b"face" => Some(RegionKind::Face),
            b"body" => Some(RegionKind::Body),
            _ => None,
        }
    }

    /// Face and body boxes both count as characters.
    pub fn is_character(&self) -> bool {
        matches!(self, RegionKind::Face | RegionKind::Body)
    }

    /// Sources of the text-and-character mask.
    pub fn is_mask_source(&self) -> bool {
        !matches!(self, RegionKind::Frame)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAnnotation {
    pub index: u32,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<Region>,
}

impl PageAnnotation {
    pub fn has_frames(&self) -> bool {
        self.regions.iter().any(|r| r.kind == RegionKind::Frame)
    }

    pub fn regions_of(&self, kind: RegionKind) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(move |r| r.kind == kind)
    }

    pub fn frames(&self) -> impl Iterator<Item = &Region> {
        self.regions_of(RegionKind::Frame)
    }

    /// Horizontal mirror of the page annotation.
    pub fn mirrored(&self) -> PageAnnotation {
        PageAnnotation {
            regions: self.regions.iter().map(|r| Region { bbox: r.bbox.mirrored(self.width), ..r.clone() }).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookAnnotation {
    pub title: String,
    pub genre: Option<Genre>,
    pub publisher: Option<String>,
    pub pages: Vec<PageAnnotation>,
}

impl BookAnnotation {
    /// Work identity shared by all volumes of one series: the title with a
    /// trailing `_volNN` suffix removed.
    pub fn work_key(&self) -> &str {
        work_key(&self.title)
    }

    pub fn page(&self, index: u32) -> Option<&PageAnnotation> {
        self.pages.iter().find(|p| p.index == index)
    }

    pub fn with_frames_only(&self) -> BookAnnotation {
        BookAnnotation { pages: filter_pages_with_frames(self), ..self.clone() }
    }
}

pub fn work_key(title: &str) -> &str {
    if let Some(pos) = title.rfind('_') {
        let suffix = &title[pos + 1..];
        let lower = suffix.to_ascii_lowercase();
        if let Some(digits) = lower.strip_prefix("vol") {
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && pos > 0 {
                return &title[..pos];
            }
        }
    }
    title
}

/// Pages carrying at least one frame, in document order.
pub fn filter_pages_with_frames(book: &BookAnnotation) -> Vec<PageAnnotation> {
    book.pages.iter().filter(|p| p.has_frames()).cloned().collect()
}

/// One row of the `title,genre,publisher` manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookMetadata {
    pub title: String,
    pub genre: Genre,
    pub publisher: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataManifest {
    entries: BTreeMap<String, BookMetadata>,
}

#[derive(Deserialize)]
struct ManifestRow {
    title: String,
    genre: String,
    publisher: String,
}

impl MetadataManifest {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, AnnotationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["title", "genre", "publisher"] {
            return Err(AnnotationError::Schema(format!(
                "metadata header must be `title,genre,publisher`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize::<ManifestRow>() {
            let row = row?;
            let genre = row.genre.parse()?;
            let meta = BookMetadata { title: row.title.clone(), genre, publisher: row.publisher };
            if entries.insert(row.title.clone(), meta).is_some() {
                return Err(AnnotationError::Schema(format!("duplicate title {:?} in metadata", row.title)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, AnnotationError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn insert(&mut self, meta: BookMetadata) {
        self.entries.insert(meta.title.clone(), meta);
    }

    pub fn get(&self, title: &str) -> Option<&BookMetadata> {
        self.entries.get(title)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> Result<String, AnnotationError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["title", "genre", "publisher"])?;
        for m in self.entries.values() {
            wtr.write_record([m.title.as_str(), m.genre.label(), m.publisher.as_str()])?;
        }
        let bytes = wtr.into_inner().map_err(|e| AnnotationError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

/// Per-page image dimensions, keyed by page index.
pub type ImageDims = BTreeMap<u32, (u32, u32)>;

/// A problem found while validating a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub page: Option<u32>,
    pub region: Option<String>,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let page = self.page.map_or_else(|| "-".to_string(), |p| p.to_string());
        let region = self.region.as_deref().unwrap_or("-");
        write!(f, "page={page}\tregion={region}\t{}\t{}", self.kind, self.detail)
    }
}

struct ParsedDocument {
    title: Option<String>,
    genre: Option<Genre>,
    publisher: Option<String>,
    pages: Vec<PageAnnotation>,
    issues: Vec<(ValidationIssue, AnnotationError)>,
}

fn schema<T>(msg: impl Into<String>) -> Result<T, AnnotationError> {
    Err(AnnotationError::Schema(msg.into()))
}

fn read_attrs(attrs: Attributes<'_>) -> Result<BTreeMap<String, String>, AnnotationError> {
    let mut out = BTreeMap::new();
    for attr in attrs {
        let attr = attr.map_err(|e| AnnotationError::Schema(format!("bad attribute: {e}")))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|e| AnnotationError::Schema(format!("bad attribute value: {e}")))?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn int_attr(attrs: &BTreeMap<String, String>, key: &str, what: &str) -> Result<u32, AnnotationError> {
    let raw = attrs.get(key).ok_or_else(|| AnnotationError::Schema(format!("{what}: missing attribute `{key}`")))?;
    raw.trim().parse::<u32>().map_err(|_| {
        AnnotationError::Schema(format!("{what}: attribute `{key}`={raw:?} is not a non-negative integer"))
    })
}

struct PageBuilder {
    page: PageAnnotation,
    ids: HashSet<String>,
}

fn start_page(
    attrs: &BTreeMap<String, String>,
    dims: &ImageDims,
    last_index: Option<u32>,
) -> Result<PageBuilder, AnnotationError> {
    let index = int_attr(attrs, "index", "page")?;
    if let Some(last) = last_index {
        if index <= last {
            return schema(format!("page indices must be strictly increasing ({index} after {last})"));
        }
    }
    let declared = match (attrs.get("width"), attrs.get("height")) {
        (Some(_), Some(_)) => Some((int_attr(attrs, "width", "page")?, int_attr(attrs, "height", "page")?)),
        _ => None,
    };
    let (width, height) = match (dims.get(&index), declared) {
        (Some(&img), Some(decl)) => {
            if img != decl {
                warn!(
                    "page {index}: image is {}x{}, annotation declares {}x{}; using image",
                    img.0, img.1, decl.0, decl.1
                );
            }
            img
        }
        (Some(&img), None) => img,
        (None, Some(decl)) => decl,
        (None, None) => return schema(format!("page {index}: no image dimensions available")),
    };
    if width == 0 || height == 0 {
        return schema(format!("page {index}: dimensions must be positive"));
    }
    Ok(PageBuilder { page: PageAnnotation { index, width, height, regions: Vec::new() }, ids: HashSet::new() })
}

fn add_region(
    builder: &mut PageBuilder,
    kind: RegionKind,
    attrs: &BTreeMap<String, String>,
) -> Result<(), (Option<String>, AnnotationError)> {
    let page = builder.page.index;
    let id = attrs.get("id").cloned();
    let what = format!("page {page} {}", kind.tag());
    let coords = (|| {
        Ok::<_, AnnotationError>((
            int_attr(attrs, "xmin", &what)?,
            int_attr(attrs, "ymin", &what)?,
            int_attr(attrs, "xmax", &what)?,
            int_attr(attrs, "ymax", &what)?,
        ))
    })()
    .map_err(|e| (id.clone(), e))?;
    let id = id.ok_or_else(|| (None, AnnotationError::Schema(format!("{what}: missing attribute `id`"))))?;
    if !builder.ids.insert(id.clone()) {
        return Err((Some(id.clone()), AnnotationError::Schema(format!("page {page}: duplicate region id {id:?}"))));
    }
    let (xmin, ymin, xmax, ymax) = coords;
    let bbox = BBox::new(xmin, ymin, xmax, ymax)
        .map_err(|e| (Some(id.clone()), AnnotationError::Schema(format!("page {page}: {e}"))))?;
    let (width, height) = (builder.page.width, builder.page.height);
    if !bbox.fits_within(width, height) {
        return Err((
            Some(id.clone()),
            AnnotationError::Bounds { page, region: id, bbox: (xmin, ymin, xmax, ymax), width, height },
        ));
    }
    builder.page.regions.push(Region { id, kind, bbox });
    Ok(())
}

fn issue_kind(err: &AnnotationError) -> &'static str {
    match err {
        AnnotationError::Schema(_) => "SchemaError",
        AnnotationError::Bounds { .. } => "BoundsError",
        AnnotationError::MissingMetadata(_) => "MissingMetadataError",
        AnnotationError::Manifest(_) => "ManifestError",
        AnnotationError::Io(_) => "IoError",
    }
}

/// Parses the document, collecting region-level problems instead of
/// stopping at the first one. Malformed XML is still fatal.
fn parse_document(doc: &str, dims: &ImageDims) -> Result<ParsedDocument, AnnotationError> {
    let mut reader = Reader::from_str(doc);
    reader.config_mut().trim_text(true);

    let mut out = ParsedDocument { title: None, genre: None, publisher: None, pages: Vec::new(), issues: Vec::new() };
    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut current: Option<PageBuilder> = None;
    // Depth of an ignored subtree (unknown region kinds, <characters>, ...).
    let mut skip_depth: Option<usize> = None;
    let mut saw_book = false;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| AnnotationError::Schema(format!("malformed XML at byte {}: {e}", reader.error_position())))?;
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            Event::End(_) => {
                let closed = stack.pop();
                if skip_depth == Some(stack.len()) {
                    skip_depth = None;
                }
                if closed.as_deref() == Some(b"page") && skip_depth.is_none() {
                    if let Some(b) = current.take() {
                        out.pages.push(b.page);
                    }
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let Some(start) = start else { continue };
        let name = start.name().as_ref().to_vec();
        let depth = stack.len();
        if skip_depth.is_none() {
            match (depth, name.as_slice()) {
                (0, b"book") => {
                    saw_book = true;
                    let attrs = read_attrs(start.attributes())?;
                    out.title = attrs.get("title").map(|t| t.trim().to_string()).filter(|t| !t.is_empty());
                    if let Some(g) = attrs.get("genre") {
                        out.genre = Some(g.parse()?);
                    }
                    out.publisher = attrs.get("publisher").cloned();
                }
                (0, other) => {
                    return schema(format!("root element must be <book>, found <{}>", String::from_utf8_lossy(other)))
                }
                (1, b"pages") => {}
                (2, b"page") if stack[1] == b"pages" => {
                    let attrs = read_attrs(start.attributes())?;
                    let last = out.pages.last().map(|p| p.index);
                    let builder = start_page(&attrs, dims, last)?;
                    if is_empty {
                        out.pages.push(builder.page);
                    } else {
                        current = Some(builder);
                    }
                }
                (3, tag) if stack[2] == b"page" => {
                    match RegionKind::from_tag(tag) {
                        Some(kind) => {
                            let attrs = read_attrs(start.attributes())?;
                            let builder = current.as_mut().expect("page builder open inside <page>");
                            if let Err((region, err)) = add_region(builder, kind, &attrs) {
                                let issue = ValidationIssue {
                                    page: Some(builder.page.index),
                                    region,
                                    kind: issue_kind(&err),
                                    detail: err.to_string(),
                                };
                                out.issues.push((issue, err));
                            }
                        }
                        None => warn!(
                            "page {}: skipping unknown region kind <{}>",
                            current.as_ref().map_or(0, |b| b.page.index),
                            String::from_utf8_lossy(tag)
                        ),
                    }
                    if !is_empty {
                        skip_depth = Some(depth);
                    }
                }
                _ => {
                    if !is_empty {
                        skip_depth = Some(depth);
                    }
                }
            }
        }
        if !is_empty {
            stack.push(name);
        }
    }
    if !saw_book {
        return schema("document has no <book> element");
    }
    if !stack.is_empty() {
        return schema("document ended inside an open element");
    }
    Ok(out)
}

/// Parses one annotation document into a validated [`BookAnnotation`].
///
/// `image_dims` take precedence over `width`/`height` declared on `<page>`.
/// `metadata` fills the title, genre and publisher when the document does
/// not carry them.
pub fn parse_book(
    annotation_document: &str,
    image_dims: &ImageDims,
    metadata: Option<&BookMetadata>,
) -> Result<BookAnnotation, AnnotationError> {
    let mut parsed = parse_document(annotation_document, image_dims)?;
    if let Some((_, err)) = parsed.issues.drain(..).next() {
        return Err(err);
    }
    let title = parsed
        .title
        .or_else(|| metadata.map(|m| m.title.clone()))
        .filter(|t| !t.is_empty())
        .ok_or_else(|| AnnotationError::MissingMetadata("book has no title".into()))?;
    Ok(BookAnnotation {
        genre: parsed.genre.or_else(|| metadata.map(|m| m.genre)),
        publisher: parsed.publisher.or_else(|| metadata.map(|m| m.publisher.clone())),
        title,
        pages: parsed.pages,
    })
}

/// Every problem in the document, one entry per error.
pub fn validate_document(annotation_document: &str, image_dims: &ImageDims) -> Vec<ValidationIssue> {
    match parse_document(annotation_document, image_dims) {
        Ok(parsed) => {
            let mut issues: Vec<ValidationIssue> = parsed.issues.into_iter().map(|(i, _)| i).collect();
            if parsed.title.is_none() {
                issues.push(ValidationIssue {
                    page: None,
                    region: None,
                    kind: "MissingMetadataError",
                    detail: "book has no title attribute".into(),
                });
            }
            issues
        }
        Err(err) => vec![ValidationIssue { page: None, region: None, kind: issue_kind(&err), detail: err.to_string() }],
    }
}

/// Serializes a book back to the annotation document format.
pub fn write_book(book: &BookAnnotation) -> String {
    let mut writer = Writer::new_with_indent(Vec::new(), b' ', 2);
    let xml = (|| -> std::io::Result<()> {
        writer.write_event(Event::Decl(BytesDecl::new("1.0", Some("utf-8"), None)))?;
        let mut root = BytesStart::new("book");
        root.push_attribute(("title", book.title.as_str()));
        if let Some(g) = book.genre {
            root.push_attribute(("genre", g.label()));
        }
        if let Some(p) = &book.publisher {
            root.push_attribute(("publisher", p.as_str()));
        }
        writer.write_event(Event::Start(root))?;
        writer.write_event(Event::Start(BytesStart::new("pages")))?;
        for page in &book.pages {
            let mut el = BytesStart::new("page");
            el.push_attribute(("index", page.index.to_string().as_str()));
            el.push_attribute(("width", page.width.to_string().as_str()));
            el.push_attribute(("height", page.height.to_string().as_str()));
            if page.regions.is_empty() {
                writer.write_event(Event::Empty(el))?;
                continue;
            }
            writer.write_event(Event::Start(el))?;
            for r in &page.regions {
                let mut reg = BytesStart::new(r.kind.tag());
                reg.push_attribute(("id", r.id.as_str()));
                for (k, v) in
                    [("xmin", r.bbox.xmin()), ("ymin", r.bbox.ymin()), ("xmax", r.bbox.xmax()), ("ymax", r.bbox.ymax())]
                {
                    reg.push_attribute((k, v.to_string().as_str()));
                }
                writer.write_event(Event::Empty(reg))?;
            }
            writer.write_event(Event::End(BytesEnd::new("page")))?;
        }
        writer.write_event(Event::End(BytesEnd::new("pages")))?;
        writer.write_event(Event::End(BytesEnd::new("book")))?;
        Ok(())
    })();
    xml.expect("writing to a Vec cannot fail");
    String::from_utf8(writer.into_inner()).expect("xml writer emits utf-8")
}
