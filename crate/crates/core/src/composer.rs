//! Lays stylised keyframes out as comic pages.

use std::path::Path;

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub page_width: u32,
    pub columns: u32,
    pub gutter_px: u32,
    pub page_panels: usize,
    pub border_px: u32,
}

impl Default for Layout {
    fn default() -> Self {
        Layout { page_width: 1600, columns: 2, gutter_px: 16, page_panels: 8, border_px: 3 }
    }
}

/// A panel rectangle in page pixels, border included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PanelBox {
    pub fn intersects(&self, o: &PanelBox) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComicPage {
    pub image: RgbImage,
    pub panel_boxes: Vec<PanelBox>,
    pub page_index: usize,
}

impl ComicPage {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.image.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

fn validate(layout: &Layout) -> Result<u32> {
    if layout.columns == 0 || layout.page_panels == 0 {
        return Err(Error::Constraint("layout needs at least one column and one panel per page".into()));
    }
    let used = layout.gutter_px * (layout.columns + 1);
    let cell = layout.page_width.saturating_sub(used) / layout.columns;
    if cell <= 2 * layout.border_px {
        return Err(Error::Constraint(format!("page width {} leaves no room for panels", layout.page_width)));
    }
    Ok(cell)
}

/// Scales `frame` to fit inside `w × h` keeping its aspect ratio, centred on black.
fn letterbox(frame: &Frame, w: u32, h: u32) -> RgbImage {
    let s = (w as f64 / frame.width() as f64).min(h as f64 / frame.height() as f64);
    let fw = ((frame.width() as f64 * s).round() as u32).clamp(1, w);
    let fh = ((frame.height() as f64 * s).round() as u32).clamp(1, h);
    let mut out = RgbImage::from_pixel(w, h, BLACK);
    let fitted = frame.resize(fw, fh).to_rgb8();
    imageops::replace(&mut out, &fitted, ((w - fw) / 2) as i64, ((h - fh) / 2) as i64);
    out
}

/// Places panels row-major on a fixed-column grid. The area inside each
/// border takes the aspect ratio of the first panel; other panels are
/// letterboxed.
pub fn compose(panels: &[Frame], layout: &Layout) -> Result<Vec<ComicPage>> {
    if panels.is_empty() {
        return Err(Error::EmptyInput("no panels to compose".into()));
    }
    let cell_w = validate(layout)?;
    let first = &panels[0];
    let g = layout.gutter_px;
    let b = layout.border_px;
    let inner_w = cell_w - 2 * b;
    let inner_h = ((inner_w as f64 * first.height() as f64 / first.width() as f64).round() as u32).max(1);
    let cell_h = inner_h + 2 * b;
    let mut pages = Vec::new();
    for (page_index, chunk) in panels.chunks(layout.page_panels).enumerate() {
        let rows = (chunk.len() as u32).div_ceil(layout.columns);
        let height = g + rows * (cell_h + g);
        let mut image = RgbImage::from_pixel(layout.page_width, height, WHITE);
        let mut boxes = Vec::with_capacity(chunk.len());
        for (i, panel) in chunk.iter().enumerate() {
            let (r, c) = (i as u32 / layout.columns, i as u32 % layout.columns);
            let bx = PanelBox { x: g + c * (cell_w + g), y: g + r * (cell_h + g), w: cell_w, h: cell_h };
            let frame = RgbImage::from_pixel(bx.w, bx.h, BLACK);
            imageops::replace(&mut image, &frame, bx.x as i64, bx.y as i64);
            let inner = letterbox(panel, bx.w - 2 * b, bx.h - 2 * b);
            imageops::replace(&mut image, &inner, (bx.x + b) as i64, (bx.y + b) as i64);
            boxes.push(bx);
        }
        pages.push(ComicPage { image, panel_boxes: boxes, page_index });
    }
    Ok(pages)
}
