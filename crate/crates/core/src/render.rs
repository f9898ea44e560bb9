//! The three ablation renderings of a facing-page spread.

use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Luma};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::PageAnnotation;
use crate::geometry::{Point, Quad};
use crate::item::ItemRef;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("{source_ref}: image is {image_w}x{image_h} but annotation says {page_w}x{page_h}")]
    DimensionMismatch { source_ref: ItemRef, image_w: u32, image_h: u32, page_w: u32, page_h: u32 },
    #[error("{0}: no frames to draw")]
    EmptyFrameList(ItemRef),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Unprocessed,
    Masked,
    FrameOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Unprocessed, AblationMode::Masked, AblationMode::FrameOnly];

    pub fn dir_name(&self) -> &'static str {
        match self {
            AblationMode::Unprocessed => "unprocessed",
            AblationMode::Masked => "masked",
            AblationMode::FrameOnly => "frame_only",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "unprocessed" | "original" => Ok(AblationMode::Unprocessed),
            "masked" => Ok(AblationMode::Masked),
            "frame_only" | "frameonly" | "frames" => Ok(AblationMode::FrameOnly),
            other => Err(format!("unknown ablation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub mask_fill: u8,
    pub stroke_value: u8,
    pub stroke_width: u32,
    pub canvas_value: u8,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { mask_fill: 255, stroke_value: 0, stroke_width: 3, canvas_value: 255 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.stroke_width == 0 {
            return Err(RenderError::InvalidConfig("stroke_width must be at least 1".into()));
        }
        if self.mask_fill == self.stroke_value {
            warn!("mask_fill equals stroke_value ({}); masks will look like strokes", self.mask_fill);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub pixels: GrayImage,
    pub mode: AblationMode,
    pub source: ItemRef,
}

impl RenderedImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

fn check_dims(image: &GrayImage, title: &str, page: &PageAnnotation) -> Result<(), RenderError> {
    if image.dimensions() != (page.width, page.height) {
        return Err(RenderError::DimensionMismatch {
            source_ref: ItemRef::new(title, page.index),
            image_w: image.width(),
            image_h: image.height(),
            page_w: page.width,
            page_h: page.height,
        });
    }
    Ok(())
}

pub fn render_unprocessed(
    page_image: &GrayImage,
    title: &str,
    page: &PageAnnotation,
) -> Result<RenderedImage, RenderError> {
    check_dims(page_image, title, page)?;
    Ok(RenderedImage {
        pixels: page_image.clone(),
        mode: AblationMode::Unprocessed,
        source: ItemRef::new(title, page.index),
    })
}

/// Fills every text, face and body box with `cfg.mask_fill`.
pub fn render_masked(
    page_image: &GrayImage,
    title: &str,
    page: &PageAnnotation,
    cfg: &RenderConfig,
) -> Result<RenderedImage, RenderError> {
    check_dims(page_image, title, page)?;
    cfg.validate()?;
    let mut pixels = page_image.clone();
    for region in page.regions.iter().filter(|r| r.kind.is_mask_source()) {
        let b = region.bbox;
        for y in b.ymin()..b.ymax() {
            for x in b.xmin()..b.xmax() {
                pixels.put_pixel(x, y, Luma([cfg.mask_fill]));
            }
        }
    }
    Ok(RenderedImage { pixels, mode: AblationMode::Masked, source: ItemRef::new(title, page.index) })
}

/// Draws only the frame outlines on a blank canvas of the page's size.
pub fn render_frame_only(
    title: &str,
    page: &PageAnnotation,
    frames: &[Quad],
    cfg: &RenderConfig,
) -> Result<RenderedImage, RenderError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(RenderError::EmptyFrameList(ItemRef::new(title, page.index)));
    }
    let mut pixels = GrayImage::from_pixel(page.width, page.height, Luma([cfg.canvas_value]));
    for quad in frames {
        stroke_quad(&mut pixels, quad, cfg.stroke_value, cfg.stroke_width);
    }
    Ok(RenderedImage { pixels, mode: AblationMode::FrameOnly, source: ItemRef::new(title, page.index) })
}

/// Strokes the four edges of `quad` with a `width`×`width` square brush
/// centered on each Bresenham pixel, clipped to the canvas.
pub fn stroke_quad(canvas: &mut GrayImage, quad: &Quad, value: u8, width: u32) {
    for (a, b) in quad.edges() {
        stroke_segment(canvas, a, b, value, width);
    }
}

pub fn stroke_segment(canvas: &mut GrayImage, a: Point, b: Point, value: u8, width: u32) {
    let lo = -((width as i64 - 1) / 2);
    let hi = width as i64 / 2;
    let (w, h) = (canvas.width() as i64, canvas.height() as i64);
    let mut plot = |x: i64, y: i64| {
        for dy in lo..=hi {
            for dx in lo..=hi {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && px < w && py < h {
                    canvas.put_pixel(px as u32, py as u32, Luma([value]));
                }
            }
        }
    };
    let (mut x, mut y) = (a.x, a.y);
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if x == b.x && y == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
