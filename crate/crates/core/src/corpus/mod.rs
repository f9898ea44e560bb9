//! Labelled datasets and deterministic split manifests.
//!
//! Two protocols are supported. `PageRandom` splits the pages of every
//! class 80/10/10 into train/dev/test and deals the train portion into five
//! cross-validation folds. `LeaveOneWorkOut` holds out every page of one
//! randomly chosen work per class and deals the remaining works, whole, into
//! five folds.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{BookAnnotation, Genre};
use crate::item::ItemRef;

pub use synthetic::{default_styles, generate_synthetic_corpus, Jittered, SyntheticCorpus, SyntheticStyle};

/// Cross-validation folds per experiment.
pub const FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("class {class:?} has only {pages} page(s); at least 3 are required")]
    InsufficientPages { class: String, pages: usize },
    #[error("class {class:?} has a single work ({work:?}); leave-one-work-out needs at least two")]
    SingleWorkClass { class: String, work: String },
    #[error("book {title:?} has no {field}")]
    MissingMetadata { title: String, field: &'static str },
    #[error("task {task} cannot use the {protocol:?} protocol")]
    ProtocolMismatch { task: LabelTask, protocol: Protocol },
    #[error("no eligible pages for task {0}")]
    NoEligiblePages(LabelTask),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTask {
    /// One class per work; volumes of the same work share a class.
    #[serde(alias = "title104")]
    Title,
    /// Works of the 4-panel genre only.
    FourPanelSubset,
    Publisher,
    Genre,
}

impl LabelTask {
    /// Class count of the task on the full Manga109 classification set.
    pub fn reference_class_count(&self) -> usize {
        match self {
            LabelTask::Title => 104,
            LabelTask::FourPanelSubset => 5,
            LabelTask::Publisher => 12,
            LabelTask::Genre => 12,
        }
    }

    pub fn default_protocol(&self) -> Protocol {
        match self {
            LabelTask::Title | LabelTask::FourPanelSubset => Protocol::PageRandom,
            LabelTask::Publisher | LabelTask::Genre => Protocol::LeaveOneWorkOut,
        }
    }

    pub fn includes(&self, book: &BookAnnotation) -> bool {
        match self {
            LabelTask::FourPanelSubset => book.genre == Some(Genre::FourPanel),
            _ => true,
        }
    }

    /// Class label of a book under this task.
    pub fn label_of(&self, book: &BookAnnotation) -> Result<String, CorpusError> {
        match self {
            LabelTask::Title | LabelTask::FourPanelSubset => Ok(book.work_key().to_string()),
            LabelTask::Publisher => book
                .publisher
                .clone()
                .ok_or_else(|| CorpusError::MissingMetadata { title: book.title.clone(), field: "publisher" }),
            LabelTask::Genre => book
                .genre
                .map(|g| g.label().to_string())
                .ok_or_else(|| CorpusError::MissingMetadata { title: book.title.clone(), field: "genre" }),
        }
    }
}

impl fmt::Display for LabelTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelTask::Title => "title",
            LabelTask::FourPanelSubset => "four_panel_subset",
            LabelTask::Publisher => "publisher",
            LabelTask::Genre => "genre",
        })
    }
}

impl FromStr for LabelTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "title" | "title104" => Ok(LabelTask::Title),
            "four_panel_subset" | "four_panel" | "4panel" => Ok(LabelTask::FourPanelSubset),
            "publisher" => Ok(LabelTask::Publisher),
            "genre" => Ok(LabelTask::Genre),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    PageRandom,
    LeaveOneWorkOut,
}

/// Bijection between label strings and contiguous ids, ordered
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        Self { labels: set.into_iter().collect() }
    }

    pub fn for_books(books: &[BookAnnotation], task: LabelTask) -> Result<Self, CorpusError> {
        let labels =
            books.iter().filter(|b| task.includes(b)).map(|b| task.label_of(b)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_labels(labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Deterministic assignment of pages to folds, dev and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub task: LabelTask,
    pub seed: u64,
    pub protocol: Protocol,
    pub labels: LabelMap,
    /// Class id of every book title in the manifest.
    pub title_labels: BTreeMap<String, usize>,
    pub folds: Vec<Vec<ItemRef>>,
    pub dev: Vec<ItemRef>,
    pub test: Vec<ItemRef>,
}

impl SplitManifest {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_of(&self, item: &ItemRef) -> Option<usize> {
        self.title_labels.get(&item.title).copied()
    }

    /// Training items of fold model `fold`: every fold except `fold`.
    pub fn fold_train(&self, fold: usize) -> Vec<ItemRef> {
        self.folds.iter().enumerate().filter(|(k, _)| *k != fold).flat_map(|(_, items)| items.iter().cloned()).collect()
    }

    pub fn fold_validation(&self, fold: usize) -> &[ItemRef] {
        &self.folds[fold]
    }

    pub fn train_len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn all_items(&self) -> impl Iterator<Item = &ItemRef> {
        self.folds.iter().flatten().chain(self.dev.iter()).chain(self.test.iter())
    }

    /// Checks that folds, dev and test are pairwise disjoint and labelled.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.folds.len() != FOLDS {
            return Err(CorpusError::InvalidManifest(format!("expected {FOLDS} folds, found {}", self.folds.len())));
        }
        let mut seen = BTreeSet::new();
        for item in self.all_items() {
            if !seen.insert(item) {
                return Err(CorpusError::InvalidManifest(format!("{item} appears twice")));
            }
            match self.label_of(item) {
                Some(id) if id < self.num_classes() => {}
                _ => return Err(CorpusError::InvalidManifest(format!("{item} has no valid label"))),
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let manifest: SplitManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct Labelled {
    labels: LabelMap,
    title_labels: BTreeMap<String, usize>,
}

fn label_books(books: &[BookAnnotation], task: LabelTask) -> Result<Labelled, CorpusError> {
    let labels = LabelMap::for_books(books, task)?;
    let mut title_labels = BTreeMap::new();
    for book in books.iter().filter(|b| task.includes(b)) {
        let id = labels.id_of(&task.label_of(book)?).expect("label map built from these books");
        title_labels.insert(book.title.clone(), id);
    }
    Ok(Labelled { labels, title_labels })
}

fn frame_pages(book: &BookAnnotation) -> impl Iterator<Item = ItemRef> + '_ {
    book.pages.iter().filter(|p| p.has_frames()).map(|p| ItemRef::new(&book.title, p.index))
}

/// Per-class split sizes (train, dev, test): train = floor(0.8n),
/// dev = round(0.1n) with halves rounded up, test takes the remainder.
pub fn page_random_sizes(n: usize) -> (usize, usize, usize) {
    let train = 4 * n / 5;
    let dev = (n + 5) / 10;
    (train, dev, n - train - dev)
}

/// Page-level 80/10/10 split stratified by class, with the train portion
/// dealt round-robin into five folds.
pub fn build_page_random_split(
    books: &[BookAnnotation],
    task: LabelTask,
    seed: u64,
) -> Result<SplitManifest, CorpusError> {
    if task.default_protocol() != Protocol::PageRandom {
        return Err(CorpusError::ProtocolMismatch { task, protocol: Protocol::PageRandom });
    }
    let Labelled { labels, title_labels } = label_books(books, task)?;
    let mut by_class: Vec<Vec<ItemRef>> = vec![Vec::new(); labels.len()];
    for book in books.iter().filter(|b| task.includes(b)) {
        by_class[title_labels[&book.title]].extend(frame_pages(book));
    }
    if by_class.iter().all(Vec::is_empty) {
        return Err(CorpusError::NoEligiblePages(task));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); FOLDS];
    let (mut dev, mut test) = (Vec::new(), Vec::new());
    let mut cursor = 0usize;
    for (id, mut items) in by_class.into_iter().enumerate() {
        if items.len() < 3 {
            let class = labels.label(id).unwrap_or_default().to_string();
            return Err(CorpusError::InsufficientPages { class, pages: items.len() });
        }
        items.shuffle(&mut rng);
        let (_, n_dev, n_test) = page_random_sizes(items.len());
        let mut rest = items.into_iter();
        test.extend(rest.by_ref().take(n_test));
        dev.extend(rest.by_ref().take(n_dev));
        for item in rest {
            folds[cursor % FOLDS].push(item);
            cursor += 1;
        }
    }
    Ok(finish(task, seed, Protocol::PageRandom, labels, title_labels, folds, dev, test))
}

/// The 104-work title split.
pub fn build_title_split(books: &[BookAnnotation], seed: u64) -> Result<SplitManifest, CorpusError> {
    build_page_random_split(books, LabelTask::Title, seed)
}

/// Holds out every page of one randomly chosen work per class.
pub fn build_leave_one_work_out(
    books: &[BookAnnotation],
    task: LabelTask,
    seed: u64,
) -> Result<SplitManifest, CorpusError> {
    if task.default_protocol() != Protocol::LeaveOneWorkOut {
        return Err(CorpusError::ProtocolMismatch { task, protocol: Protocol::LeaveOneWorkOut });
    }
    let Labelled { labels, title_labels } = label_books(books, task)?;
    // class -> work -> pages, all ordered
    let mut classes: Vec<BTreeMap<String, Vec<ItemRef>>> = vec![BTreeMap::new(); labels.len()];
    for book in books {
        let id = title_labels[&book.title];
        classes[id].entry(book.work_key().to_string()).or_default().extend(frame_pages(book));
    }
    if classes.iter().all(|c| c.values().all(Vec::is_empty)) {
        return Err(CorpusError::NoEligiblePages(task));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    let mut remaining: Vec<Vec<ItemRef>> = Vec::new();
    for (id, works) in classes.into_iter().enumerate() {
        if works.len() < 2 {
            return Err(CorpusError::SingleWorkClass {
                class: labels.label(id).unwrap_or_default().to_string(),
                work: works.keys().next().cloned().unwrap_or_default(),
            });
        }
        let held_out = rng.random_range(0..works.len());
        for (i, (_, pages)) in works.into_iter().enumerate() {
            if i == held_out {
                test.extend(pages);
            } else {
                remaining.push(pages);
            }
        }
    }
    // whole works into the currently smallest fold
    remaining.shuffle(&mut rng);
    let mut folds: Vec<Vec<ItemRef>> = vec![Vec::new(); FOLDS];
    for pages in remaining {
        let target = (0..FOLDS).min_by_key(|&k| (folds[k].len(), k)).expect("FOLDS > 0");
        folds[target].extend(pages);
    }
    Ok(finish(task, seed, Protocol::LeaveOneWorkOut, labels, title_labels, folds, Vec::new(), test))
}

/// Builds the split prescribed for `task`.
pub fn build_split(books: &[BookAnnotation], task: LabelTask, seed: u64) -> Result<SplitManifest, CorpusError> {
    match task.default_protocol() {
        Protocol::PageRandom => build_page_random_split(books, task, seed),
        Protocol::LeaveOneWorkOut => build_leave_one_work_out(books, task, seed),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    task: LabelTask,
    seed: u64,
    protocol: Protocol,
    labels: LabelMap,
    title_labels: BTreeMap<String, usize>,
    mut folds: Vec<Vec<ItemRef>>,
    mut dev: Vec<ItemRef>,
    mut test: Vec<ItemRef>,
) -> SplitManifest {
    folds.iter_mut().for_each(|f| f.sort());
    dev.sort();
    test.sort();
    SplitManifest { task, seed, protocol, labels, title_labels, folds, dev, test }
}

/// Drops books whose class has only one work under `task`, returning the
/// kept books and the dropped class labels.
pub fn exclude_single_work_classes(
    books: &[BookAnnotation],
    task: LabelTask,
) -> Result<(Vec<BookAnnotation>, Vec<String>), CorpusError> {
    let mut works: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for book in books.iter().filter(|b| task.includes(b)) {
        works.entry(task.label_of(book)?).or_default().insert(book.work_key());
    }
    let dropped: Vec<String> = works.iter().filter(|(_, w)| w.len() < 2).map(|(l, _)| l.clone()).collect();
    let kept = books
        .iter()
        .filter(|b| task.includes(b))
        .filter(|b| task.label_of(b).map(|l| !dropped.contains(&l)).unwrap_or(false))
        .cloned()
        .collect();
    Ok((kept, dropped))
}
