//! Rendered corpora on disk and image sources for training.
//!
//! Layout: `<root>/<mode>/<title>/<page_index>.png`, with `<root>/index.json`
//! mapping each relative path to its title, page, label id and mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{AblationError, AblationSpec};
use crate::annotation::BookAnnotation;
use crate::classifier::ImageSource;
use crate::corpus::SplitManifest;
use crate::dataset::{load_page_image, DatasetError};
use crate::item::ItemRef;
use crate::render::RenderConfig;

#[derive(Debug, Error)]
pub enum RenderedError {
    #[error("{item}: {source}")]
    Render { item: ItemRef, source: AblationError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub title: String,
    pub page: u32,
    /// Class id under the manifest used when rendering, if any.
    pub label: Option<usize>,
    pub mode: String,
}

/// `relative path -> entry`, sorted by path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenderedIndex {
    pub entries: BTreeMap<String, IndexEntry>,
}

impl RenderedIndex {
    pub fn path(root: &Path) -> PathBuf {
        root.join("index.json")
    }

    /// Reads the index, or an empty one if it does not exist yet.
    pub fn load(root: &Path) -> Result<Self, RenderedError> {
        let path = Self::path(root);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|source| RenderedError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|source| RenderedError::Json { path, source })
    }

    pub fn save(&self, root: &Path) -> Result<(), RenderedError> {
        let path = Self::path(root);
        let text = serde_json::to_string_pretty(self).expect("index serializes") + "\n";
        fs::write(&path, text).map_err(|source| RenderedError::Io { path, source })
    }
}

pub fn relative_path(mode: &str, item: &ItemRef) -> String {
    format!("{mode}/{}/{}.png", item.title, item.page)
}

/// Renders every page with frames under `ablation`, writes the PNGs and
/// merges the entries into `<out>/index.json`. `dataset_root` is needed for
/// modes that read the page image.
pub fn render_corpus(
    books: &[BookAnnotation],
    dataset_root: Option<&Path>,
    ablation: &AblationSpec,
    cfg: &RenderConfig,
    manifest: Option<&SplitManifest>,
    out: &Path,
) -> Result<RenderedIndex, RenderedError> {
    let mode = ablation.dir_name();
    let mut index = RenderedIndex::load(out)?;
    let mut written = 0usize;
    for book in books {
        let dir = out.join(&mode).join(&book.title);
        fs::create_dir_all(&dir).map_err(|source| RenderedError::Io { path: dir.clone(), source })?;
        for page in book.pages.iter().filter(|p| p.has_frames()) {
            let item = ItemRef::new(&book.title, page.index);
            let image = match (ablation.needs_image(), dataset_root) {
                (true, Some(root)) => Some(load_page_image(root, &item)?),
                _ => None,
            };
            let rendered = ablation
                .render(&book.title, page, image.as_ref(), cfg, None)
                .map_err(|source| RenderedError::Render { item: item.clone(), source })?;
            let rel = relative_path(&mode, &item);
            let path = out.join(&rel);
            rendered.pixels.save(&path).map_err(|source| RenderedError::Image { path, source })?;
            let label = manifest.and_then(|m| m.label_of(&item));
            index
                .entries
                .insert(rel, IndexEntry { title: book.title.clone(), page: page.index, label, mode: mode.clone() });
            written += 1;
        }
    }
    index.save(out)?;
    info!("rendered {written} pages to {}", out.join(&mode).display());
    Ok(index)
}

/// Looks up the raw page image for an item.
pub type PageImages<'a> = &'a dyn Fn(&ItemRef) -> Option<GrayImage>;

/// A rendered corpus directory for one ablation mode.
#[derive(Debug, Clone)]
pub struct RenderedCorpus {
    pub root: PathBuf,
    pub mode: String,
}

impl RenderedCorpus {
    pub fn new(root: impl Into<PathBuf>, ablation: &AblationSpec) -> Self {
        Self { root: root.into(), mode: ablation.dir_name() }
    }

    pub fn image_path(&self, item: &ItemRef) -> PathBuf {
        self.root.join(relative_path(&self.mode, item))
    }

    pub fn exists(&self) -> bool {
        self.root.join(&self.mode).is_dir()
    }
}

impl ImageSource for RenderedCorpus {
    fn load(&self, item: &ItemRef) -> Result<GrayImage, String> {
        let path = self.image_path(item);
        image::open(&path).map(|i| i.to_luma8()).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Renders pages on demand from annotations (and page images when the mode
/// needs them). Noisy specs are re-drawn per epoch when asked.
pub struct RenderingSource<'a> {
    pages: BTreeMap<ItemRef, (&'a str, &'a crate::annotation::PageAnnotation)>,
    images: Option<PageImages<'a>>,
    pub ablation: AblationSpec,
    pub cfg: RenderConfig,
}

impl<'a> RenderingSource<'a> {
    pub fn new(
        books: &'a [BookAnnotation],
        images: Option<PageImages<'a>>,
        ablation: AblationSpec,
        cfg: RenderConfig,
    ) -> Self {
        let pages = books
            .iter()
            .flat_map(|b| b.pages.iter().map(move |p| (ItemRef::new(&b.title, p.index), (b.title.as_str(), p))))
            .collect();
        Self { pages, images, ablation, cfg }
    }

    fn render(&self, item: &ItemRef, epoch: Option<usize>) -> Result<GrayImage, String> {
        let (title, page) = self.pages.get(item).ok_or("no annotation for this page")?;
        let image = match (self.ablation.needs_image(), self.images) {
            (true, Some(f)) => Some(f(item).ok_or("no page image")?),
            _ => None,
        };
        self.ablation.render(title, page, image.as_ref(), &self.cfg, epoch).map(|r| r.pixels).map_err(|e| e.to_string())
    }
}

impl ImageSource for RenderingSource<'_> {
    fn load(&self, item: &ItemRef) -> Result<GrayImage, String> {
        self.render(item, None)
    }

    fn load_for_epoch(&self, item: &ItemRef, epoch: usize) -> Result<GrayImage, String> {
        self.render(item, Some(epoch))
    }

    fn varies_by_epoch(&self) -> bool {
        self.ablation.noise.is_some_and(|n| n.range > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_title_split, default_styles, generate_synthetic_corpus};
    use crate::perturb::{NoiseFamily, NoiseSpec};
    use crate::render::AblationMode;

    #[test]
    fn corpus_layout_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_synthetic_corpus(&default_styles()[..2], 10, 3).unwrap();
        let manifest = build_title_split(&corpus.books, 1).unwrap();
        let spec = AblationSpec::clean(AblationMode::FrameOnly);
        let index =
            render_corpus(&corpus.books, None, &spec, &RenderConfig::default(), Some(&manifest), dir.path()).unwrap();
        assert_eq!(index.entries.len(), 20);
        let item = ItemRef::new(&corpus.books[0].title, 3);
        let rel = format!("frame_only/{}/3.png", item.title);
        assert_eq!(index.entries[&rel].label, manifest.label_of(&item));
        assert!(dir.path().join(&rel).is_file());

        // a second mode merges into the same index
        let noisy = AblationSpec::noisy(NoiseSpec::new(NoiseFamily::Rectangular, 5, 2));
        render_corpus(&corpus.books, None, &noisy, &RenderConfig::default(), None, dir.path()).unwrap();
        assert_eq!(RenderedIndex::load(dir.path()).unwrap().entries.len(), 40);

        let on_disk = RenderedCorpus::new(dir.path(), &spec).load(&item).unwrap();
        let live = RenderingSource::new(&corpus.books, None, spec, RenderConfig::default()).load(&item).unwrap();
        assert_eq!(on_disk, live);
    }
}
