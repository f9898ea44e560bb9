//! Panel geometry in page pixel coordinates (origin top-left, y down).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid box ({xmin}, {ymin}, {xmax}, {ymax}): requires xmin < xmax and ymin < ymax")]
pub struct InvalidBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

/// Axis-aligned box. `xmax`/`ymax` are exclusive: the box covers pixel
/// columns `xmin..xmax` and rows `ymin..ymax`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    xmin: u32,
    ymin: u32,
    xmax: u32,
    ymax: u32,
}

impl BBox {
    pub fn new(xmin: u32, ymin: u32, xmax: u32, ymax: u32) -> Result<Self, InvalidBox> {
        if xmin < xmax && ymin < ymax {
            Ok(Self { xmin, ymin, xmax, ymax })
        } else {
            Err(InvalidBox { xmin, ymin, xmax, ymax })
        }
    }

    pub fn xmin(&self) -> u32 {
        self.xmin
    }

    pub fn ymin(&self) -> u32 {
        self.ymin
    }

    pub fn xmax(&self) -> u32 {
        self.xmax
    }

    pub fn ymax(&self) -> u32 {
        self.ymax
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.xmax <= width && self.ymax <= height
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.xmin && x < self.xmax && y >= self.ymin && y < self.ymax
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.xmin < other.xmax && other.xmin < self.xmax && self.ymin < other.ymax && other.ymin < self.ymax
    }

    /// Mirror horizontally inside a page of the given width.
    pub fn mirrored(&self, page_width: u32) -> BBox {
        BBox { xmin: page_width - self.xmax, ymin: self.ymin, xmax: page_width - self.xmin, ymax: self.ymax }
    }

    /// Corner pixels of the box outline as a quad (TL, TR, BR, BL).
    pub fn to_quad(&self) -> Quad {
        let (l, t) = (self.xmin as i64, self.ymin as i64);
        let (r, b) = (self.xmax as i64 - 1, self.ymax as i64 - 1);
        Quad::new([Point::new(l, t), Point::new(r, t), Point::new(r, b), Point::new(l, b)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(&self, other: &Point) -> i64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

/// Free quadrilateral whose vertices are outline pixel centers, stored
/// top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quad {
    pub vertices: [Point; 4],
}

impl Quad {
    pub const fn new(vertices: [Point; 4]) -> Self {
        Self { vertices }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        (0..4).map(move |i| (self.vertices[i], self.vertices[(i + 1) % 4]))
    }

    /// Largest Chebyshev displacement between corresponding vertices.
    pub fn max_displacement(&self, other: &Quad) -> i64 {
        self.vertices.iter().zip(other.vertices.iter()).map(|(a, b)| a.chebyshev(b)).max().unwrap_or(0)
    }

    /// All vertices lie on pixels of a `width`×`height` canvas.
    pub fn within(&self, width: u32, height: u32) -> bool {
        self.vertices.iter().all(|p| p.x >= 0 && p.y >= 0 && p.x < width as i64 && p.y < height as i64)
    }

    pub fn clamped(&self, width: u32, height: u32) -> Quad {
        let mut out = *self;
        for p in &mut out.vertices {
            p.x = p.x.clamp(0, width as i64 - 1);
            p.y = p.y.clamp(0, height as i64 - 1);
        }
        out
    }

    pub fn mirrored(&self, page_width: u32) -> Quad {
        let w = page_width as i64 - 1;
        let [tl, tr, br, bl] = self.vertices;
        let flip = |p: Point| Point::new(w - p.x, p.y);
        Quad::new([flip(tr), flip(tl), flip(bl), flip(br)])
    }

    /// Every corner is a right angle (zero-length edges count as degenerate
    /// right angles).
    pub fn has_right_angles(&self) -> bool {
        (0..4).all(|i| {
            let prev = self.vertices[(i + 3) % 4];
            let cur = self.vertices[i];
            let next = self.vertices[(i + 1) % 4];
            let (ax, ay) = (prev.x - cur.x, prev.y - cur.y);
            let (bx, by) = (next.x - cur.x, next.y - cur.y);
            ax * bx + ay * by == 0
        })
    }

    /// Axis-aligned rectangle: top/bottom edges horizontal, left/right
    /// edges vertical.
    pub fn is_axis_aligned(&self) -> bool {
        let [tl, tr, br, bl] = self.vertices;
        tl.y == tr.y && bl.y == br.y && tl.x == bl.x && tr.x == br.x
    }

    /// Distinct vertices and no pair of opposite edges touching.
    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        for i in 0..4 {
            for j in (i + 1)..4 {
                if v[i] == v[j] {
                    return false;
                }
            }
        }
        !segments_touch(v[0], v[1], v[2], v[3]) && !segments_touch(v[1], v[2], v[3], v[0])
    }
}

fn orientation(a: Point, b: Point, c: Point) -> i64 {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    cross.signum()
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segments `p1p2` and `p3p4` share at least one point.
fn segments_touch(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = orientation(p3, p4, p1);
    let d2 = orientation(p3, p4, p2);
    let d3 = orientation(p1, p2, p3);
    let d4 = orientation(p1, p2, p4);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment(p3, p4, p1))
        || (d2 == 0 && on_segment(p3, p4, p2))
        || (d3 == 0 && on_segment(p1, p2, p3))
        || (d4 == 0 && on_segment(p1, p2, p4))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_boxes() {
        assert!(BBox::new(5, 0, 5, 10).is_err());
        assert!(BBox::new(0, 7, 3, 2).is_err());
        assert_eq!(BBox::new(1, 2, 4, 6).unwrap().area(), 12);
    }

    #[test]
    fn quad_corners_are_outline_pixels() {
        let q = BBox::new(10, 10, 50, 30).unwrap().to_quad();
        assert_eq!(q.vertices[0], Point::new(10, 10));
        assert_eq!(q.vertices[2], Point::new(49, 29));
        assert!(q.has_right_angles() && q.is_axis_aligned() && q.is_simple());
    }

    #[test]
    fn bowtie_is_not_simple() {
        let q = Quad::new([Point::new(0, 0), Point::new(10, 10), Point::new(10, 0), Point::new(0, 10)]);
        assert!(!q.is_simple());
        let dart = Quad::new([Point::new(0, 0), Point::new(10, 0), Point::new(3, 3), Point::new(0, 10)]);
        assert!(dart.is_simple());
        assert!(!dart.has_right_angles());
    }

    #[test]
    fn mirroring_twice_is_identity() {
        let b = BBox::new(3, 4, 20, 9).unwrap();
        assert_eq!(b.mirrored(40).mirrored(40), b);
        let q = b.to_quad();
        assert_eq!(q.mirrored(40).mirrored(40), q);
        assert_eq!(b.mirrored(40).to_quad(), q.mirrored(40));
    }
}
