use std::path::Path;

use image::{Rgb as PixelRgb, RgbImage};

use super::spec::{CategorySpec, Rgb, WHITE};
use crate::error::{Error, Result};

/// RGB raster with a white background. Every non-white pixel is foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl SketchImage {
    /// All-white image.
    pub fn blank(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self {
            width,
            height,
            pixels: vec![WHITE; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: Rgb) {
        self.pixels[row * self.width + col] = rgb;
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.get(row, col) != WHITE
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != WHITE).count()
    }

    /// Foreground positions in scan order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize, Rgb)> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != WHITE)
            .map(|(i, &p)| (i / self.width, i % self.width, p))
    }

    /// Inclusive `(top, left, bottom, right)` of the foreground.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.foreground().fold(None, |acc, (r, c, _)| match acc {
            None => Some((r, c, r, c)),
            Some((t, l, b, rt)) => Some((t.min(r), l.min(c), b.max(r), rt.max(c))),
        })
    }

    /// Distinct foreground colors, sorted.
    pub fn colors(&self) -> Vec<Rgb> {
        let mut cs: Vec<Rgb> = self.foreground().map(|(_, _, p)| p).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            PixelRgb(self.get(y as usize, x as usize))
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| {
                Error::io(
                    format!("writing {}", path.display()),
                    std::io::Error::other(e),
                )
            })
    }
}

/// Alpha-composites over white.
fn over_white(rgba: [u8; 4]) -> Rgb {
    let a = u32::from(rgba[3]);
    let mix = |c: u8| ((u32::from(c) * a + 255 * (255 - a) + 127) / 255) as u8;
    [mix(rgba[0]), mix(rgba[1]), mix(rgba[2])]
}

fn decode(path: &Path) -> Result<SketchImage> {
    let decoded = image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let pixels = rgba.pixels().map(|p| over_white(p.0)).collect();
    SketchImage::from_pixels(w, h, pixels).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a PNG (RGB or RGBA) and snaps every pixel to white or a component
/// color of `spec`.
pub fn load_sketch(path: &Path, spec: &CategorySpec) -> Result<SketchImage> {
    snap_colors(decode(path)?, spec)
}

/// Color given to strokes that match no component.
pub const INK: Rgb = [0, 0, 0];

/// Reads a possibly unlabeled PNG. Pixels that snap to white or a component
/// color of `spec` are snapped; any other pixel becomes [`INK`].
pub fn load_strokes(path: &Path, spec: &CategorySpec) -> Result<SketchImage> {
    let mut img = decode(path)?;
    for p in &mut img.pixels {
        *p = spec.snap(*p).unwrap_or(INK);
    }
    Ok(img)
}

/// Applies [`CategorySpec::snap`] to every pixel.
pub fn snap_colors(mut img: SketchImage, spec: &CategorySpec) -> Result<SketchImage> {
    let width = img.width;
    for (i, p) in img.pixels.iter_mut().enumerate() {
        *p = spec.snap(*p).ok_or(Error::UnknownColor {
            x: i % width,
            y: i / width,
            rgb: *p,
        })?;
    }
    Ok(img)
}

/// Translates the foreground onto a `canvas`×`canvas` white image so that
/// the bounding-box center lands on `(canvas / 2, canvas / 2)`.
///
/// With integer division on both sides, odd slack leaves one more blank row
/// (column) on the top (left), except that a box of odd extent puts its
/// middle pixel exactly at `canvas / 2`.
pub fn crop_and_center(img: &SketchImage, canvas: usize) -> Result<SketchImage> {
    let (top, left, bottom, right) = img.bounding_box().ok_or(Error::EmptySketch)?;
    let (h, w) = (bottom - top + 1, right - left + 1);
    if h > canvas || w > canvas {
        return Err(Error::SketchLargerThanCanvas {
            width: w,
            height: h,
            canvas,
        });
    }
    let dst_top = canvas / 2 - h / 2;
    let dst_left = canvas / 2 - w / 2;
    let mut out = SketchImage::blank(canvas, canvas);
    for (r, c, p) in img.foreground() {
        out.set(r - top + dst_top, c - left + dst_left, p);
    }
    Ok(out)
}
