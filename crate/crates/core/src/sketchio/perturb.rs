use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::SketchImage;
use super::spec::{CategorySpec, WHITE};
use crate::error::{Error, Result};

/// Robustness perturbation: erase one component and/or sprinkle random
/// single-pixel dots in component colors over the background.
///
/// Dot positions are drawn without replacement from the background left after
/// the erase, so at most that many dots are added. Deterministic per `seed`.
pub fn perturb(
    img: &SketchImage,
    spec: &CategorySpec,
    drop_component: Option<usize>,
    dot_count: usize,
    seed: u64,
) -> Result<SketchImage> {
    let mut out = img.clone();
    if let Some(id) = drop_component {
        let color = spec
            .color_of(id)
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))?;
        for r in 0..out.height() {
            for c in 0..out.width() {
                if out.get(r, c) == color {
                    out.set(r, c, WHITE);
                }
            }
        }
    }
    if dot_count == 0 {
        return Ok(out);
    }
    let background: Vec<usize> = out
        .pixels()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == WHITE)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, background.len(), dot_count.min(background.len())).into_vec();
    let w = out.width();
    for k in picks {
        let i = background[k];
        let color = spec.components()[rng.gen_range(0..spec.num_classes())].rgb;
        out.set(i / w, i % w, color);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lamp_image() -> (SketchImage, CategorySpec) {
        let spec = CategorySpec::from_pairs(
            "lamp",
            &[
                ("tube", [255, 0, 0]),
                ("base", [0, 255, 0]),
                ("shade", [0, 0, 255]),
            ],
        )
        .unwrap();
        let mut img = SketchImage::blank(64, 64);
        for i in 10..50 {
            img.set(i, 32, [255, 0, 0]);
            img.set(55, i, [0, 255, 0]);
            img.set(5, i, [0, 0, 255]);
        }
        (img, spec)
    }

    #[test]
    fn identity_without_changes() {
        let (img, spec) = lamp_image();
        assert_eq!(perturb(&img, &spec, None, 0, 1).unwrap(), img);
    }

    #[test]
    fn drops_one_component() {
        let (img, spec) = lamp_image();
        let tube = spec.resolve("tube").unwrap();
        let out = perturb(&img, &spec, Some(tube), 0, 1).unwrap();
        assert!(out.pixels().iter().all(|&p| p != [255, 0, 0]));
        assert_eq!(out.foreground_count(), img.foreground_count() - 40);
        assert!(matches!(
            perturb(&img, &spec, Some(3), 0, 1),
            Err(Error::UnknownComponent(_))
        ));
    }

    #[test]
    fn dots_are_seeded() {
        let (img, spec) = lamp_image();
        let a = perturb(&img, &spec, None, 20, 9).unwrap();
        let b = perturb(&img, &spec, None, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.foreground_count(), img.foreground_count() + 20);
        assert!(a.colors().iter().all(|c| spec.component_of(*c).is_some()));
        assert_ne!(perturb(&img, &spec, None, 20, 10).unwrap(), a);
    }
}
