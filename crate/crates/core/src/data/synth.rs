//! Procedural labeled sketches for desk-scale experiments.
//!
//! Each template describes an object as a few polylines per component in a
//! unit frame. Per sketch the frame is randomly placed, scaled and rotated,
//! vertices are jittered and strokes are drawn as wobbly 1-pixel lines, one
//! color per component.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Manifest, Record, Split};
use crate::error::{Error, Result};
use crate::sketchio::{CategorySpec, Rgb, SketchImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    Lamp,
    Chair,
    Rifle,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Lamp, Template::Chair, Template::Rifle];

    pub fn name(self) -> &'static str {
        match self {
            Template::Lamp => "lamp",
            Template::Chair => "chair",
            Template::Rifle => "rifle",
        }
    }

    pub fn spec(self) -> CategorySpec {
        const RED: Rgb = [255, 0, 0];
        const GREEN: Rgb = [0, 160, 0];
        const BLUE: Rgb = [0, 0, 255];
        const ORANGE: Rgb = [255, 140, 0];
        let pairs: &[(&str, Rgb)] = match self {
            Template::Lamp => &[("tube", RED), ("base", GREEN), ("shade", BLUE)],
            Template::Chair => &[
                ("back", RED),
                ("seat", GREEN),
                ("leg", BLUE),
                ("arm", ORANGE),
            ],
            Template::Rifle => &[
                ("barrel", RED),
                ("body", GREEN),
                ("stock", BLUE),
                ("grip", ORANGE),
            ],
        };
        CategorySpec::from_pairs(self.name(), pairs).expect("template specs are valid")
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::InvalidSpec(format!("unknown template {s:?} (lamp, chair, rifle)"))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub template: Template,
    pub count: usize,
    pub seed: u64,
    /// Square image side in pixels.
    pub canvas: usize,
    /// Perpendicular stroke wobble, as a fraction of the object size.
    pub amplitude: f64,
    /// Control-point displacement, as a fraction of the object size.
    pub noise: f64,
}

impl SynthConfig {
    pub fn new(template: Template, count: usize, seed: u64) -> Self {
        Self {
            template,
            count,
            seed,
            canvas: 800,
            amplitude: 0.008,
            noise: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidSpec("count must be at least 1".into()));
        }
        if self.canvas < 64 {
            return Err(Error::InvalidSpec(format!(
                "canvas {} is below 64",
                self.canvas
            )));
        }
        if !(self.amplitude >= 0.0 && self.noise >= 0.0) {
            return Err(Error::InvalidSpec(
                "jitter parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

type Poly = Vec<(f64, f64)>;

fn u(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, steps: usize) -> Poly {
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f64 / steps as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn closed(mut p: Poly) -> Poly {
    p.push(p[0]);
    p
}

/// Component strokes in a unit frame centered on the origin, y down.
fn layout(t: Template, rng: &mut ChaCha8Rng) -> Vec<(usize, Poly)> {
    match t {
        Template::Lamp => {
            let top = -0.5;
            let shade_h = u(rng, 0.18, 0.3);
            let (wt, wb) = (u(rng, 0.08, 0.18), u(rng, 0.22, 0.38));
            let shade_bottom = top + shade_h;
            let base_y = u(rng, 0.4, 0.48);
            let bend = u(rng, -0.12, 0.12);
            let foot = u(rng, -0.05, 0.05);
            let (rx, ry) = (u(rng, 0.12, 0.28), u(rng, 0.025, 0.06));
            vec![
                (
                    2,
                    closed(vec![
                        (-wt, top),
                        (wt, top),
                        (wb, shade_bottom),
                        (-wb, shade_bottom),
                    ]),
                ),
                (
                    0,
                    vec![
                        (0.0, shade_bottom + 0.02),
                        (bend, (shade_bottom + base_y) / 2.0),
                        (foot, base_y - ry - 0.01),
                    ],
                ),
                (1, ellipse(foot, base_y, rx, ry, 0.0, 2.0 * PI, 20)),
            ]
        }
        Template::Chair => {
            let half = u(rng, 0.2, 0.3);
            let lean = u(rng, -0.06, 0.06);
            let seat_y = u(rng, -0.05, 0.05);
            let depth = u(rng, 0.06, 0.12);
            let arm_y = u(rng, -0.3, -0.15);
            let mut strokes = vec![
                (
                    0,
                    closed(vec![
                        (-half + lean, -0.5),
                        (half + lean, -0.5),
                        (half, seat_y - 0.02),
                        (-half, seat_y - 0.02),
                    ]),
                ),
                (
                    1,
                    closed(vec![
                        (-half, seat_y),
                        (half, seat_y),
                        (half + 0.08, seat_y + depth),
                        (-half + 0.08, seat_y + depth),
                    ]),
                ),
            ];
            for x in [-half + 0.03, half - 0.03, -half + 0.1, half + 0.05] {
                strokes.push((
                    2,
                    vec![(x, seat_y + depth + 0.02), (x + u(rng, -0.03, 0.03), 0.5)],
                ));
            }
            for side in [-1.0, 1.0] {
                let x = side * (half + 0.04);
                strokes.push((
                    3,
                    vec![
                        (x, arm_y),
                        (x + 0.12, arm_y + 0.02),
                        (x + 0.12, seat_y - 0.04),
                    ],
                ));
            }
            strokes
        }
        Template::Rifle => {
            let y = u(rng, -0.06, 0.0);
            let body_l = u(rng, -0.22, -0.15);
            let body_r = u(rng, 0.05, 0.12);
            let body_h = u(rng, 0.07, 0.11);
            let tail = u(rng, 0.1, 0.2);
            let grip_x = u(rng, -0.1, -0.02);
            let grip_drop = u(rng, 0.15, 0.25);
            vec![
                (0, vec![(body_r + 0.02, y), (0.5, y)]),
                (0, vec![(body_r + 0.02, y + 0.025), (0.48, y + 0.025)]),
                (
                    1,
                    closed(vec![
                        (body_l, y - 0.01),
                        (body_r, y - 0.01),
                        (body_r, y + body_h),
                        (body_l, y + body_h),
                    ]),
                ),
                (
                    2,
                    closed(vec![
                        (body_l - 0.02, y),
                        (-0.5, y + 0.02),
                        (-0.5, y + tail),
                        (body_l - 0.02, y + body_h),
                    ]),
                ),
                (
                    3,
                    vec![
                        (grip_x, y + body_h + 0.02),
                        (grip_x - 0.05, y + body_h + grip_drop),
                        (grip_x + 0.03, y + body_h + grip_drop),
                        (grip_x + 0.06, y + body_h + 0.02),
                    ],
                ),
            ]
        }
    }
}

/// Clipped 8-connected line.
fn line(img: &mut SketchImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: Rgb) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let (w, h) = (img.width() as i64, img.height() as i64);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.set(y as usize, x as usize, rgb);
        }
        if x == x1 && y == y1 {
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

/// Draws one sketch and checks that every component is visible.
fn render(cfg: &SynthConfig, spec: &CategorySpec, rng: &mut ChaCha8Rng) -> SketchImage {
    loop {
        let c = cfg.canvas as f64;
        let size = c * u(rng, 0.55, 0.8);
        let margin = (c - size) / 2.0;
        let cx = c / 2.0 + u(rng, -margin, margin) * 0.8;
        let cy = c / 2.0 + u(rng, -margin, margin) * 0.8;
        let angle = u(rng, -0.15, 0.15);
        let (sin, cos) = angle.sin_cos();
        let to_px = |(x, y): (f64, f64)| {
            (
                cx + size * (cos * x - sin * y),
                cy + size * (sin * x + cos * y),
            )
        };

        let mut img = SketchImage::blank(cfg.canvas, cfg.canvas);
        for (comp, poly) in layout(cfg.template, rng) {
            let rgb = spec
                .color_of(comp)
                .expect("template component ids match spec");
            let verts: Vec<(f64, f64)> = poly
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = to_px((x, y));
                    (
                        px + size * cfg.noise * u(rng, -1.0, 1.0),
                        py + size * cfg.noise * u(rng, -1.0, 1.0),
                    )
                })
                .collect();
            let phase = u(rng, 0.0, 2.0 * PI);
            let wave = u(rng, 20.0, 60.0);
            let mut travelled = 0.0;
            let mut prev: Option<(i64, i64)> = None;
            for seg in verts.windows(2) {
                let ((ax, ay), (bx, by)) = (seg[0], seg[1]);
                let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
                let steps = (len / 6.0).ceil().max(1.0) as usize;
                let (nx, ny) = if len > 0.0 {
                    (-(by - ay) / len, (bx - ax) / len)
                } else {
                    (0.0, 0.0)
                };
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let off = size * cfg.amplitude * ((travelled + t * len) / wave + phase).sin();
                    let p = (
                        (ax + t * (bx - ax) + off * nx).round() as i64,
                        (ay + t * (by - ay) + off * ny).round() as i64,
                    );
                    if let Some(q) = prev {
                        line(&mut img, q, p, rgb);
                    }
                    prev = Some(p);
                }
                travelled += len;
            }
        }
        if img.colors().len() == spec.num_classes() {
            return img;
        }
    }
}

/// Writes `count` sketches and the template spec under `out/<template>/` and
/// returns a manifest (paths relative to `out`, every record in the train
/// split) describing them. Output is a pure function of the config.
pub fn gen_synthetic(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let name = cfg.template.name();
    let dir = out.join(name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let spec = cfg.template.spec();
    let spec_rel = PathBuf::from(name).join(format!("{name}.json"));
    spec.save(&out.join(&spec_rel))?;

    let mut manifest = Manifest::default();
    manifest.specs.insert(name.to_string(), spec_rel);
    for i in 0..cfg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let img = render(cfg, &spec, &mut rng);
        let rel = PathBuf::from(name).join(format!("{name}_{i:04}.png"));
        img.save_png(&out.join(&rel))?;
        manifest.records.push(Record {
            path: rel,
            category: name.to_string(),
            split: Split::Train,
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_endpoints_and_connectivity() {
        let mut img = SketchImage::blank(20, 20);
        line(&mut img, (2, 3), (15, 9), [255, 0, 0]);
        assert!(img.is_foreground(3, 2) && img.is_foreground(9, 15));
        assert_eq!(img.foreground_count(), 14);
        assert_eq!(crate::sketchio::component_count(&img, None), 1);
        // clipped
        let mut img = SketchImage::blank(5, 5);
        line(&mut img, (-3, 2), (8, 2), [255, 0, 0]);
        assert_eq!(img.foreground_count(), 5);
    }

    #[test]
    fn template_names_round_trip() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
            assert!(t.spec().num_classes() >= 3);
        }
        assert!("sofa".parse::<Template>().is_err());
    }

    #[test]
    fn every_template_draws_every_component() {
        for t in Template::ALL {
            let cfg = SynthConfig {
                canvas: 256,
                ..SynthConfig::new(t, 1, 0)
            };
            let spec = t.spec();
            for s in 0..10 {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let img = render(&cfg, &spec, &mut rng);
                assert_eq!(img.colors().len(), spec.num_classes(), "{t} seed {s}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::new(Template::Lamp, 0, 0).validate().is_err());
        let small = SynthConfig {
            canvas: 32,
            ..SynthConfig::new(Template::Lamp, 1, 0)
        };
        assert!(small.validate().is_err());
    }
}
