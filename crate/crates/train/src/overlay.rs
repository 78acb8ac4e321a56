use std::path::Path;

use image::{Rgb, RgbImage};
use silhouette_core::silhouette::{aligned_len, max_frame_slack};
use silhouette_core::SilhouetteTrack;

use crate::error::{Error, Result};

const HEIGHT: u32 = 320;
const TARGET_WIDTH: u32 = 1600;
const MIN_COLUMN: u32 = 3;
const MAX_COLUMN: u32 = 12;
const OUTLINE: Rgb<u8> = Rgb([0, 0, 0]);
const BAR: Rgb<u8> = Rgb([230, 120, 40]);
const AXIS: Rgb<u8> = Rgb([200, 200, 200]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

/// Pixel rows `[top, bottom]` covered by one frame's `[min, max]` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub top: u32,
    pub bottom: u32,
}

/// Geometry of an overlay plot: input frames drawn as outlines, output
/// frames as filled bars, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayLayout {
    pub width: u32,
    pub height: u32,
    pub column_width: u32,
    pub outlines: Vec<Span>,
    pub bars: Vec<Span>,
}

/// Row of amplitude `v ∈ [-1, 1]`; +1 is the top row.
pub fn value_row(v: f64, height: u32) -> u32 {
    let v = v.clamp(-1.0, 1.0);
    ((1.0 - v) / 2.0 * (height - 1) as f64).round() as u32
}

fn span(min: f64, max: f64, height: u32) -> Span {
    Span {
        top: value_row(max, height),
        bottom: value_row(min, height),
    }
}

pub fn overlay_layout(input: &SilhouetteTrack, output: &SilhouetteTrack) -> Result<OverlayLayout> {
    let n = aligned_len(
        input.len(),
        output.len(),
        max_frame_slack(input.window_len(), input.hop_len()),
    )?;
    let column_width = (TARGET_WIDTH / n as u32).clamp(MIN_COLUMN, MAX_COLUMN);
    let width = u32::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(column_width))
        .ok_or_else(|| Error::Image("track too long to plot".into()))?;
    let spans = |t: &SilhouetteTrack| -> Vec<Span> {
        t.frames()[..n].iter().map(|f| span(f.min, f.max, HEIGHT)).collect()
    };
    Ok(OverlayLayout {
        width,
        height: HEIGHT,
        column_width,
        outlines: spans(input),
        bars: spans(output),
    })
}

pub fn render_image(layout: &OverlayLayout) -> RgbImage {
    let mut img = RgbImage::from_pixel(layout.width, layout.height, BACKGROUND);
    let axis = value_row(0.0, layout.height);
    for x in 0..layout.width {
        img.put_pixel(x, axis, AXIS);
    }
    let cw = layout.column_width;
    for (i, b) in layout.bars.iter().enumerate() {
        for x in i as u32 * cw..(i as u32 + 1) * cw {
            for y in b.top..=b.bottom {
                img.put_pixel(x, y, BAR);
            }
        }
    }
    let mut prev: Option<Span> = None;
    for (i, o) in layout.outlines.iter().enumerate() {
        let x0 = i as u32 * cw;
        for x in x0..x0 + cw {
            img.put_pixel(x, o.top, OUTLINE);
            img.put_pixel(x, o.bottom, OUTLINE);
        }
        // Step contour: connect to the previous column's edges.
        let (from_top, from_bottom) = match prev {
            Some(p) => (p.top, p.bottom),
            None => (o.top, o.bottom),
        };
        for (a, b) in [(from_top, o.top), (from_bottom, o.bottom)] {
            for y in a.min(b)..=a.max(b) {
                img.put_pixel(x0, y, OUTLINE);
            }
        }
        if prev.is_none() {
            for y in o.top..=o.bottom {
                img.put_pixel(x0, y, OUTLINE);
            }
        }
        prev = Some(*o);
    }
    if let (Some(last), true) = (prev, layout.width > 0) {
        for y in last.top..=last.bottom {
            img.put_pixel(layout.width - 1, y, OUTLINE);
        }
    }
    img
}

/// Writes the overlay of `output` on `input` as a PNG.
pub fn render_overlay(input: &SilhouetteTrack, output: &SilhouetteTrack, path: impl AsRef<Path>) -> Result<()> {
    let layout = overlay_layout(input, output)?;
    render_image(&layout)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))
}
