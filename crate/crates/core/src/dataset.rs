//! Manga109-style dataset directories.
//!
//! ```text
//! <root>/annotations/<title>.xml
//! <root>/images/<title>/<page:03>.jpg   (or .png)
//! <root>/metadata.csv                   title,genre,publisher
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::warn;
use thiserror::Error;

use crate::annotation::{
    parse_book, validate_document, write_book, AnnotationError, BookAnnotation, BookMetadata, ImageDims,
    MetadataManifest, ValidationIssue,
};
use crate::item::ItemRef;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Annotation { path: PathBuf, source: AnnotationError },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("no page image for {0}")]
    MissingImage(ItemRef),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} has no annotations directory")]
    NotADataset(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "png", "jpeg"];

pub fn annotations_dir(root: &Path) -> PathBuf {
    root.join("annotations")
}

pub fn images_dir(root: &Path) -> PathBuf {
    root.join("images")
}

/// Existing image file for a page, trying zero-padded and plain names.
pub fn page_image_path(root: &Path, title: &str, page: u32) -> Option<PathBuf> {
    let dir = images_dir(root).join(title);
    for stem in [format!("{page:03}"), page.to_string()] {
        for ext in IMAGE_EXTENSIONS {
            let p = dir.join(format!("{stem}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

pub fn load_page_image(root: &Path, item: &ItemRef) -> Result<GrayImage, DatasetError> {
    let path = page_image_path(root, &item.title, item.page).ok_or_else(|| DatasetError::MissingImage(item.clone()))?;
    let img = image::open(&path).map_err(|source| DatasetError::Image { path: path.clone(), source })?;
    Ok(img.to_luma8())
}

/// Dimensions of every page image present for a book, read from headers.
pub fn image_dims(root: &Path, title: &str) -> Result<ImageDims, DatasetError> {
    let dir = images_dir(root).join(title);
    let mut dims = ImageDims::new();
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(dims);
    };
    for entry in entries {
        let path = entry.map_err(io_err(&dir))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        let Some(index) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        if is_image {
            let d =
                image::image_dimensions(&path).map_err(|source| DatasetError::Image { path: path.clone(), source })?;
            dims.insert(index, d);
        }
    }
    Ok(dims)
}

fn annotation_files(root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = annotations_dir(root);
    if !dir.is_dir() {
        return Err(DatasetError::NotADataset(root.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "xml"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_metadata(root: &Path, metadata: Option<&Path>) -> Result<MetadataManifest, DatasetError> {
    let path = metadata.map(Path::to_path_buf).unwrap_or_else(|| root.join("metadata.csv"));
    if !path.is_file() {
        if metadata.is_some() {
            return Err(DatasetError::Io { path, source: std::io::ErrorKind::NotFound.into() });
        }
        return Ok(MetadataManifest::default());
    }
    MetadataManifest::from_path(&path).map_err(|source| DatasetError::Annotation { path, source })
}

/// Parses every annotation document, sorted by file name. Titles missing
/// from the document are taken from the metadata manifest by file stem.
pub fn load_books(root: &Path, metadata: Option<&Path>) -> Result<Vec<BookAnnotation>, DatasetError> {
    let manifest = load_metadata(root, metadata)?;
    let mut books = Vec::new();
    for path in annotation_files(root)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let doc = fs::read_to_string(&path).map_err(io_err(&path))?;
        let dims = image_dims(root, &stem)?;
        let meta = manifest.get(&stem);
        let mut book =
            parse_book(&doc, &dims, meta).map_err(|source| DatasetError::Annotation { path: path.clone(), source })?;
        if let Some(m) = manifest.get(&book.title) {
            book.genre = book.genre.or(Some(m.genre));
            book.publisher = book.publisher.or_else(|| Some(m.publisher.clone()));
        } else if !manifest.is_empty() {
            warn!("{} is not in the metadata manifest", book.title);
        }
        books.push(book);
    }
    Ok(books)
}

/// Every validation problem in the dataset, tagged with its file.
pub fn validate_dataset(root: &Path) -> Result<Vec<(PathBuf, ValidationIssue)>, DatasetError> {
    let mut out = Vec::new();
    for path in annotation_files(root)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let doc = fs::read_to_string(&path).map_err(io_err(&path))?;
        let dims = image_dims(root, &stem)?;
        out.extend(validate_document(&doc, &dims).into_iter().map(|i| (path.clone(), i)));
    }
    Ok(out)
}

/// Writes books (and optionally one raster per page, in book then page
/// order) in the dataset layout, plus `metadata.csv` for books that carry
/// genre and publisher.
pub fn write_dataset(root: &Path, books: &[BookAnnotation], rasters: Option<&[GrayImage]>) -> Result<(), DatasetError> {
    let ann = annotations_dir(root);
    fs::create_dir_all(&ann).map_err(io_err(&ann))?;
    let mut manifest = MetadataManifest::default();
    let mut raster_iter = rasters.map(|r| r.iter());
    for book in books {
        let path = ann.join(format!("{}.xml", book.title));
        fs::write(&path, write_book(book)).map_err(io_err(&path))?;
        if let (Some(genre), Some(publisher)) = (book.genre, &book.publisher) {
            manifest.insert(BookMetadata { title: book.title.clone(), genre, publisher: publisher.clone() });
        }
        if let Some(iter) = raster_iter.as_mut() {
            let dir = images_dir(root).join(&book.title);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for page in &book.pages {
                let Some(img) = iter.next() else { break };
                let path = dir.join(format!("{:03}.png", page.index));
                img.save(&path).map_err(|source| DatasetError::Image { path: path.clone(), source })?;
            }
        }
    }
    if !manifest.is_empty() {
        let path = root.join("metadata.csv");
        let csv = manifest.to_csv().map_err(|source| DatasetError::Annotation { path: path.clone(), source })?;
        fs::write(&path, csv).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_styles, generate_synthetic_corpus};

    #[test]
    fn synthetic_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_synthetic_corpus(&default_styles()[..2], 10, 3).unwrap();
        write_dataset(dir.path(), &corpus.books, Some(&corpus.rasters)).unwrap();
        let books = load_books(dir.path(), None).unwrap();
        let mut expected = corpus.books.clone();
        expected.sort_by(|a, b| a.title.cmp(&b.title));
        assert_eq!(books, expected);
        // second generated book, page 4
        let img = load_page_image(dir.path(), &ItemRef::new(&corpus.books[1].title, 4)).unwrap();
        assert_eq!(img, corpus.rasters[14]);
        assert!(validate_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn not_a_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_books(dir.path(), None), Err(DatasetError::NotADataset(_))));
    }
}
