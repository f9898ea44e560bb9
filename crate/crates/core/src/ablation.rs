//! Which rendering produces a training image: a base mode, optionally with
//! frame-vertex noise layered before frame-only rendering.

use std::fmt;
use std::str::FromStr;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::PageAnnotation;
use crate::item::ItemRef;
use crate::perturb::{page_quads, perturb_page, NoiseFamily, NoiseSpec, PerturbError};
use crate::render::{
    render_frame_only, render_masked, render_unprocessed, AblationMode, RenderConfig, RenderError, RenderedImage,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AblationError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("{0}: mode needs the page image but none was supplied")]
    MissingImage(ItemRef),
    #[error("noise only applies to frame_only rendering, not {0}")]
    NoiseWithoutFrames(AblationMode),
    #[error("cannot parse ablation spec {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl AblationSpec {
    pub fn clean(mode: AblationMode) -> Self {
        Self { mode, noise: None }
    }

    pub fn noisy(noise: NoiseSpec) -> Self {
        Self { mode: AblationMode::FrameOnly, noise: Some(noise) }
    }

    pub fn validate(&self) -> Result<(), AblationError> {
        if self.noise.is_some() && self.mode != AblationMode::FrameOnly {
            return Err(AblationError::NoiseWithoutFrames(self.mode));
        }
        Ok(())
    }

    pub fn needs_image(&self) -> bool {
        self.mode != AblationMode::FrameOnly
    }

    /// Directory name of the rendered corpus, e.g. `frame_only` or
    /// `frame_only-quadrilateral-20`. The noise seed is not part of the name.
    pub fn dir_name(&self) -> String {
        match &self.noise {
            None => self.mode.dir_name().to_string(),
            Some(n) => format!("{}-{}-{}", self.mode.dir_name(), n.family.label().to_ascii_lowercase(), n.range),
        }
    }

    /// Renders one page. `epoch` re-seeds the noise so every epoch sees a fresh
    /// draw; `None` gives the static corpus.
    pub fn render(
        &self,
        title: &str,
        page: &PageAnnotation,
        image: Option<&GrayImage>,
        cfg: &RenderConfig,
        epoch: Option<usize>,
    ) -> Result<RenderedImage, AblationError> {
        self.validate()?;
        let need_image = || image.ok_or_else(|| AblationError::MissingImage(ItemRef::new(title, page.index)));
        Ok(match self.mode {
            AblationMode::Unprocessed => render_unprocessed(need_image()?, title, page)?,
            AblationMode::Masked => render_masked(need_image()?, title, page, cfg)?,
            AblationMode::FrameOnly => {
                let quads = match self.noise {
                    None => page_quads(page),
                    Some(mut spec) => {
                        if let Some(e) = epoch {
                            spec.seed = spec.seed.wrapping_add((e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        }
                        perturb_page(title, page, &spec)?
                    }
                };
                render_frame_only(title, page, &quads, cfg)?
            }
        })
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dir_name())
    }
}

impl FromStr for AblationSpec {
    type Err = AblationError;

    /// Accepts a bare mode (`masked`) or `frame_only-<family>-<range>`; the
    /// noise seed defaults to 0 in the short form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || AblationError::Parse(s.to_string());
        let mut parts = s.split('-');
        let mode: AblationMode = parts.next().unwrap_or_default().parse().map_err(|_| parse_err())?;
        let spec = match (parts.next(), parts.next(), parts.next()) {
            (None, _, _) => AblationSpec::clean(mode),
            (Some(fam), Some(range), None) => {
                let family = match fam.to_ascii_lowercase().as_str() {
                    "rectangular" => NoiseFamily::Rectangular,
                    "quadrilateral" => NoiseFamily::Quadrilateral,
                    _ => return Err(parse_err()),
                };
                let range = range.parse().map_err(|_| parse_err())?;
                AblationSpec { mode, noise: Some(NoiseSpec::new(family, range, 0)) }
            }
            _ => return Err(parse_err()),
        };
        spec.validate()?;
        Ok(spec)
    }
}
