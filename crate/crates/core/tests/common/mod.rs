#![allow(dead_code)]

use panel_layout::annotation::{BookAnnotation, Genre, PageAnnotation, Region, RegionKind};
use panel_layout::geometry::{BBox, Point, Quad};

pub fn region(id: &str, kind: RegionKind, b: (u32, u32, u32, u32)) -> Region {
    Region { id: id.to_string(), kind, bbox: BBox::new(b.0, b.1, b.2, b.3).unwrap() }
}

pub fn page(index: u32, width: u32, height: u32, regions: Vec<Region>) -> PageAnnotation {
    PageAnnotation { index, width, height, regions }
}

/// Page-count table of the 104-work corpus: per genre, per work, per volume.
/// Genre totals and work counts match the Manga109 classification set; the
/// split of pages between works is invented.
pub const MOCK_CORPUS: [(Genre, &[&[u32]]); 12] = [
    (Genre::FourPanel, &[&[61], &[55], &[55], &[49], &[54]]),
    (Genre::Animal, &[&[96], &[100], &[90], &[96], &[97]]),
    (Genre::Battle, &[&[92], &[90], &[89], &[95], &[98], &[89], &[91], &[91], &[88]]),
    (Genre::Fantasy, &[&[95], &[97], &[99], &[96], &[93], &[92], &[101], &[96], &[93], &[100], &[99], &[93]]),
    (Genre::History, &[&[113], &[117], &[118], &[123], &[116], &[112]]),
    (Genre::Horror, &[&[90], &[88]]),
    (
        Genre::Humor,
        &[&[93, 93], &[93, 93], &[93], &[93], &[93], &[93], &[93], &[93], &[93], &[92], &[92], &[92], &[92]],
    ),
    (Genre::Love, &[&[96, 93], &[93], &[92], &[92], &[91], &[93], &[92], &[92], &[96], &[92], &[92], &[84]]),
    (Genre::RomanticComedy, &[&[91, 93], &[93], &[93], &[93], &[90], &[93], &[93], &[93], &[96], &[94], &[96], &[88]]),
    (
        Genre::ScienceFiction,
        &[&[94], &[92], &[95], &[93], &[94], &[93], &[90], &[92], &[92], &[95], &[93], &[92], &[89], &[90]],
    ),
    (Genre::Sport, &[&[103, 93], &[100], &[97], &[98], &[101], &[96], &[95], &[97], &[88]]),
    (Genre::Suspense, &[&[88], &[91], &[92], &[92], &[95]]),
];

/// Books of the mock corpus; each page carries a single frame. Publishers
/// are assigned round-robin over twelve names by work.
pub fn mock_books() -> Vec<BookAnnotation> {
    let mut books = Vec::new();
    let mut work_no = 0usize;
    for (genre, works) in MOCK_CORPUS {
        for volumes in works {
            let work = format!("{}Work{work_no:03}", genre.label().replace([' ', '-'], ""));
            let publisher = format!("publisher{:02}", work_no % 12);
            for (v, &pages) in volumes.iter().enumerate() {
                let title = if volumes.len() > 1 { format!("{work}_vol{:02}", v + 1) } else { work.clone() };
                let pages =
                    (0..pages).map(|i| page(i, 64, 48, vec![region("f", RegionKind::Frame, (4, 4, 60, 44))])).collect();
                books.push(BookAnnotation { title, genre: Some(genre), publisher: Some(publisher.clone()), pages });
            }
            work_no += 1;
        }
    }
    books
}

/// True when no two non-adjacent edges of the quad cross and no vertex
/// repeats.
pub fn is_simple(q: &Quad) -> bool {
    let v = q.vertices;
    for i in 0..4 {
        for j in i + 1..4 {
            if v[i] == v[j] {
                return false;
            }
        }
    }
    !segments_intersect(v[0], v[1], v[2], v[3]) && !segments_intersect(v[1], v[2], v[3], v[0])
}

fn orient(a: Point, b: Point, c: Point) -> i64 {
    ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).signum()
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_segment(a, b, c))
        || (o2 == 0 && on_segment(a, b, d))
        || (o3 == 0 && on_segment(c, d, a))
        || (o4 == 0 && on_segment(c, d, b))
}

/// Axis-aligned rectangle: each edge is horizontal or vertical and
/// consecutive edges alternate.
pub fn is_axis_rectangle(q: &Quad) -> bool {
    let v = q.vertices;
    (0..4).all(|i| {
        let (a, b, c) = (v[i], v[(i + 1) % 4], v[(i + 2) % 4]);
        let e1 = (b.x - a.x, b.y - a.y);
        let e2 = (c.x - b.x, c.y - b.y);
        (e1.0 == 0 || e1.1 == 0) && e1.0 * e2.0 + e1.1 * e2.1 == 0
    })
}
