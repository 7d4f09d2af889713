//! Skeletonization of color-coded strokes to one-pixel lines.
//!
//! Two-subcycle boundary peeling in the Zhang–Suen style. Candidates of a
//! subcycle are selected on the mask as it stood at the start of the
//! subcycle, then removed in scan order, each re-tested as a simple point of
//! both the full foreground and its own color class. Removing only simple
//! points keeps the 8-connected components of every color intact, which the
//! purely parallel rule does not (it erases 2×2 squares outright). A final
//! sweep removes one simple pixel from any 2×2 block the peeling leaves.

use super::image::SketchImage;
use super::spec::{Rgb, WHITE};

/// Neighbor offsets `(dr, dc)` in the order P2..P9: N, NE, E, SE, S, SW, W, NW.
const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    fn at(&self, r: isize, c: isize) -> Option<Rgb> {
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            return None;
        }
        let p = self.pixels[r as usize * self.width + c as usize];
        (p != WHITE).then_some(p)
    }

    /// Foreground flags of P2..P9, optionally restricted to one color.
    fn ring(&self, r: usize, c: usize, color: Option<Rgb>) -> [bool; 8] {
        let mut out = [false; 8];
        for (o, (dr, dc)) in out.iter_mut().zip(RING) {
            *o = match (self.at(r as isize + dr, c as isize + dc), color) {
                (Some(p), Some(want)) => p == want,
                (Some(_), None) => true,
                (None, _) => false,
            };
        }
        out
    }

    fn is_fg(&self, r: usize, c: usize) -> bool {
        self.pixels[r * self.width + c] != WHITE
    }

    fn clear(&mut self, r: usize, c: usize) {
        self.pixels[r * self.width + c] = WHITE;
    }

    /// Removable without changing 8-connected topology of the full mask or
    /// of its own color, and not a line end.
    fn removable(&self, r: usize, c: usize) -> bool {
        let all = self.ring(r, c, None);
        if all.iter().filter(|&&b| b).count() < 2 {
            return false;
        }
        let own = self.ring(r, c, Some(self.pixels[r * self.width + c]));
        is_simple(&all) && is_simple(&own)
    }
}

/// Yokoi connectivity number for 8-connectivity equals 1.
///
/// `ring` is in P2..P9 order (N first, clockwise).
fn is_simple(ring: &[bool; 8]) -> bool {
    // Reorder to x1..x8 = E, NE, N, NW, W, SW, S, SE.
    let idx = [2, 1, 0, 7, 6, 5, 4, 3];
    let xb = |k: usize| u8::from(!ring[idx[k % 8]]);
    let mut n = 0i32;
    for k in [0, 2, 4, 6] {
        n += i32::from(xb(k)) - i32::from(xb(k) * xb(k + 1) * xb(k + 2));
    }
    n == 1
}

fn transitions(ring: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !ring[i] && ring[(i + 1) % 8]).count()
}

fn zhang_suen_candidate(ring: &[bool; 8], second: bool) -> bool {
    let b = ring.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) || transitions(ring) != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *ring;
    if second {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    } else {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    }
}

fn peel(raster: &mut Raster, second: bool) -> bool {
    let mut candidates = Vec::new();
    for r in 0..raster.height {
        for c in 0..raster.width {
            if raster.is_fg(r, c) && zhang_suen_candidate(&raster.ring(r, c, None), second) {
                candidates.push((r, c));
            }
        }
    }
    let mut changed = false;
    for (r, c) in candidates {
        if raster.removable(r, c) {
            raster.clear(r, c);
            changed = true;
        }
    }
    changed
}

fn break_blocks(raster: &mut Raster) -> bool {
    let mut changed = false;
    for r in 0..raster.height.saturating_sub(1) {
        for c in 0..raster.width.saturating_sub(1) {
            let block = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)];
            if !block.iter().all(|&(y, x)| raster.is_fg(y, x)) {
                continue;
            }
            if let Some(&(y, x)) = block.iter().find(|&&(y, x)| raster.removable(y, x)) {
                raster.clear(y, x);
                changed = true;
            }
        }
    }
    changed
}

/// Thins every stroke to one pixel width. Survivors keep their color.
pub fn thin(img: &SketchImage) -> SketchImage {
    let mut raster = Raster {
        width: img.width(),
        height: img.height(),
        pixels: img.pixels().to_vec(),
    };
    loop {
        let mut changed = false;
        while peel(&mut raster, false) | peel(&mut raster, true) {
            changed = true;
        }
        changed |= break_blocks(&mut raster);
        if !changed {
            break;
        }
    }
    SketchImage::from_pixels(raster.width, raster.height, raster.pixels).expect("same dimensions")
}

/// Whether any 2×2 block is entirely foreground.
pub fn has_solid_block(img: &SketchImage) -> bool {
    (0..img.height().saturating_sub(1)).any(|r| {
        (0..img.width().saturating_sub(1)).any(|c| {
            img.is_foreground(r, c)
                && img.is_foreground(r, c + 1)
                && img.is_foreground(r + 1, c)
                && img.is_foreground(r + 1, c + 1)
        })
    })
}

/// Number of 8-connected foreground components, optionally of one color.
pub fn component_count(img: &SketchImage, color: Option<Rgb>) -> usize {
    let (h, w) = (img.height(), img.width());
    let member = |r: usize, c: usize| match color {
        Some(want) => img.get(r, c) == want,
        None => img.is_foreground(r, c),
    };
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if seen[r * w + c] || !member(r, c) {
                continue;
            }
            count += 1;
            seen[r * w + c] = true;
            stack.push((r, c));
            while let Some((y, x)) = stack.pop() {
                for (dr, dc) in RING {
                    let (ny, nx) = (y as isize + dr, x as isize + dc);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if !seen[ny * w + nx] && member(ny, nx) {
                        seen[ny * w + nx] = true;
                        stack.push((ny, nx));
                    }
                }
            }
        }
    }
    count
}
