//! Raster sketch ingestion and conversion to ordered point sets.

mod image;
mod perturb;
mod points;
mod spec;
mod thin;

pub use self::image::{crop_and_center, load_sketch, load_strokes, snap_colors, SketchImage, INK};
pub use perturb::perturb;
pub use points::{
    extract_points, extract_unlabeled, labels_to_image, sample_indices, to_pixel, LabeledPointSet,
    PointSet, DEFAULT_POINTS,
};
pub use spec::{CategorySpec, Component, Rgb, COLOR_TOLERANCE, MIN_COMPONENTS, WHITE};
pub use thin::{component_count, has_solid_block, thin};

/// Default square canvas side in pixels.
pub const DEFAULT_CANVAS: usize = 800;

/// Load, center, thin and sample one labeled sketch.
pub fn preprocess(
    path: &std::path::Path,
    spec: &CategorySpec,
    canvas: usize,
    n_points: usize,
) -> crate::Result<(SketchImage, LabeledPointSet)> {
    let img = load_sketch(path, spec)?;
    let img = prepare(&img, canvas)?;
    let pts = extract_points(&img, spec, n_points)?;
    Ok((img, pts))
}

/// Centering followed by thinning.
pub fn prepare(img: &SketchImage, canvas: usize) -> crate::Result<SketchImage> {
    Ok(thin(&crop_and_center(img, canvas)?))
}
