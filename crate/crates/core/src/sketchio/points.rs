use super::image::SketchImage;
use super::spec::CategorySpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default number of sampled points per sketch.
pub const DEFAULT_POINTS: usize = 512;

/// Fixed-length ordered list of normalized `(x, y)` coordinates.
///
/// The first `n_original` entries are distinct foreground pixels in scan
/// order; any remainder repeats them cyclically.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f32; 2]>,
    pub n_original: usize,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[N, 2]` tensor with columns `x, y`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .points
            .iter()
            .flat_map(|p| [T::of(f64::from(p[0])), T::of(f64::from(p[1]))])
            .collect();
        Tensor::new(&[self.points.len(), 2], data).expect("two coordinates per point")
    }
}

/// A [`PointSet`] with one component id per point.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointSet {
    pub base: PointSet,
    pub labels: Vec<usize>,
}

impl LabeledPointSet {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn n_original(&self) -> usize {
        self.base.n_original
    }

    /// Labels of the non-padded points.
    pub fn original_labels(&self) -> &[usize] {
        &self.labels[..self.base.n_original]
    }
}

/// Indices kept when sampling `n` of `count` scan-ordered items.
pub fn sample_indices(count: usize, n: usize) -> Vec<usize> {
    if count <= n {
        (0..n).map(|i| i % count).collect()
    } else {
        (0..n).map(|i| i * count / n).collect()
    }
}

fn normalize(v: usize, extent: usize) -> f32 {
    if extent <= 1 {
        0.0
    } else {
        (v as f64 / (extent - 1) as f64) as f32
    }
}

fn sample<L: Copy>(
    img: &SketchImage,
    fg: &[(usize, usize, L)],
    n_points: usize,
) -> Result<(PointSet, Vec<L>)> {
    if n_points == 0 {
        return Err(Error::ShapeMismatch("n_points must be at least 1".into()));
    }
    if fg.is_empty() {
        return Err(Error::EmptySketch);
    }
    let (w, h) = (img.width(), img.height());
    let idx = sample_indices(fg.len(), n_points);
    let points = idx
        .iter()
        .map(|&i| [normalize(fg[i].1, w), normalize(fg[i].0, h)])
        .collect();
    let labels = idx.iter().map(|&i| fg[i].2).collect();
    let base = PointSet {
        points,
        n_original: fg.len().min(n_points),
    };
    Ok((base, labels))
}

/// Samples exactly `n_points` foreground pixels in row-major scan order.
///
/// Oversized sketches keep indices `floor(i * count / n_points)`; undersized
/// ones are padded by repeating the ordered sequence.
pub fn extract_points(
    img: &SketchImage,
    spec: &CategorySpec,
    n_points: usize,
) -> Result<LabeledPointSet> {
    let fg: Vec<(usize, usize, usize)> = img
        .foreground()
        .map(|(r, c, rgb)| {
            spec.component_of(rgb)
                .map(|id| (r, c, id))
                .ok_or(Error::UnknownColor { x: c, y: r, rgb })
        })
        .collect::<Result<_>>()?;
    let (base, labels) = sample(img, &fg, n_points)?;
    Ok(LabeledPointSet { base, labels })
}

/// [`extract_points`] without labels; any foreground color is accepted.
/// Also returns the `(row, col)` pixel of every point.
pub fn extract_unlabeled(
    img: &SketchImage,
    n_points: usize,
) -> Result<(PointSet, Vec<(usize, usize)>)> {
    let fg: Vec<(usize, usize, (usize, usize))> =
        img.foreground().map(|(r, c, _)| (r, c, (r, c))).collect();
    sample(img, &fg, n_points)
}

/// Pixel position of a normalized coordinate on a `canvas`-sized square.
pub fn to_pixel(v: f32, canvas: usize) -> usize {
    let p = (f64::from(v) * (canvas - 1) as f64).round();
    (p.max(0.0) as usize).min(canvas - 1)
}

/// Renders the non-padded points in their label colors on a white canvas.
pub fn labels_to_image(
    pts: &LabeledPointSet,
    spec: &CategorySpec,
    canvas: usize,
) -> Result<SketchImage> {
    let mut img = SketchImage::blank(canvas, canvas);
    for (p, &label) in pts
        .base
        .points
        .iter()
        .zip(&pts.labels)
        .take(pts.base.n_original)
    {
        let rgb = spec.color_of(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: spec.num_classes(),
        })?;
        img.set(to_pixel(p[1], canvas), to_pixel(p[0], canvas), rgb);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::sketchio::spec::Rgb;

    fn lamp() -> CategorySpec {
        CategorySpec::from_pairs(
            "lamp",
            &[
                ("tube", [255, 0, 0]),
                ("base", [0, 255, 0]),
                ("shade", [0, 0, 255]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn scan_order_and_normalization() {
        let mut img = SketchImage::blank(800, 800);
        img.set(1, 7, [0, 0, 255]);
        img.set(0, 5, [255, 0, 0]);
        img.set(1, 2, [0, 255, 0]);
        let pts = extract_points(&img, &lamp(), 3).unwrap();
        assert_eq!(pts.base.points[0], [5.0 / 799.0, 0.0]);
        assert_eq!(pts.base.points[1], [2.0 / 799.0, 1.0 / 799.0]);
        assert_eq!(pts.base.points[2], [7.0 / 799.0, 1.0 / 799.0]);
        assert_eq!(pts.labels, vec![0, 1, 2]);
        assert_eq!(pts.n_original(), 3);
    }

    #[test]
    fn padding_repeats_cyclically() {
        let mut img = SketchImage::blank(10, 10);
        for c in [1, 3, 5, 7] {
            img.set(4, c, [255, 0, 0]);
        }
        let pts = extract_points(&img, &lamp(), 8).unwrap();
        assert_eq!(pts.n_original(), 4);
        assert_eq!(pts.len(), 8);
        assert_eq!(pts.base.points[..4], pts.base.points[4..]);
    }

    #[test]
    fn uniform_stride_subsampling() {
        // 1000 foreground pixels on a 40x40 canvas
        let mut img = SketchImage::blank(40, 40);
        let mut all = Vec::new();
        'fill: for r in 0..40 {
            for c in 0..40 {
                if (r * 7 + c * 3) % 8 < 5 {
                    img.set(r, c, [0, 255, 0]);
                    all.push((r, c));
                    if all.len() == 1000 {
                        break 'fill;
                    }
                }
            }
        }
        assert_eq!(all.len(), 1000);
        let pts = extract_points(&img, &lamp(), 500).unwrap();
        for (i, p) in pts.base.points.iter().enumerate() {
            let (r, c) = all[2 * i];
            assert_eq!(*p, [c as f32 / 39.0, r as f32 / 39.0]);
        }
        assert_eq!(pts.n_original(), 500);
    }

    #[test]
    fn unlabeled_matches_labeled() {
        let mut img = SketchImage::blank(30, 30);
        for i in 0..20 {
            img.set(i, i + 3, [255, 0, 0]);
            img.set(i + 5, 2, [0, 0, 255]);
        }
        let labeled = extract_points(&img, &lamp(), 16).unwrap();
        let (base, pixels) = extract_unlabeled(&img, 16).unwrap();
        assert_eq!(base, labeled.base);
        for (p, &(r, c)) in base.points.iter().zip(&pixels) {
            assert_eq!((to_pixel(p[1], 30), to_pixel(p[0], 30)), (r, c));
        }
    }

    #[test]
    fn errors() {
        let img = SketchImage::blank(5, 5);
        assert!(matches!(
            extract_points(&img, &lamp(), 4),
            Err(Error::EmptySketch)
        ));
        let mut img = SketchImage::blank(5, 5);
        img.set(2, 3, [9, 9, 9]);
        assert!(matches!(
            extract_points(&img, &lamp(), 4),
            Err(Error::UnknownColor { x: 3, y: 2, .. })
        ));
    }

    #[test]
    fn render_corner_and_skip_padding() {
        let pts = LabeledPointSet {
            base: PointSet {
                points: vec![[0.0, 0.0], [1.0, 1.0]],
                n_original: 1,
            },
            labels: vec![2, 0],
        };
        let img = labels_to_image(&pts, &lamp(), 16).unwrap();
        assert_eq!(
            img.foreground().collect::<Vec<_>>(),
            vec![(0, 0, [0, 0, 255])]
        );
    }

    fn arbitrary_sketch(square: bool) -> impl Strategy<Value = SketchImage> {
        let colors: [Rgb; 3] = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];
        (1usize..24, 1usize..24).prop_flat_map(move |(w, h)| {
            let h = if square { w } else { h };
            proptest::collection::vec(0usize..6, w * h).prop_map(move |cells| {
                let pixels = cells
                    .iter()
                    .map(|&v| if v < 3 { colors[v] } else { [255, 255, 255] })
                    .collect();
                SketchImage::from_pixels(w, h, pixels).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn originals_match_naive_enumeration(img in arbitrary_sketch(false), n in 1usize..600) {
            let spec = lamp();
            let mut naive = Vec::new();
            for r in 0..img.height() {
                for c in 0..img.width() {
                    let p = img.get(r, c);
                    if p != [255, 255, 255] {
                        naive.push((r, c, spec.component_of(p).unwrap()));
                    }
                }
            }
            prop_assume!(!naive.is_empty());
            let pts = extract_points(&img, &spec, n).unwrap();
            prop_assert_eq!(pts.len(), n);
            prop_assert_eq!(pts.n_original(), naive.len().min(n));
            let picked = sample_indices(naive.len(), n);
            let mut last = None;
            for (k, &i) in picked.iter().enumerate().take(pts.n_original()) {
                let (r, c, l) = naive[i];
                prop_assert_eq!(pts.labels[k], l);
                prop_assert_eq!(pts.base.points[k], [normalize(c, img.width()), normalize(r, img.height())]);
                prop_assert!(last < Some((r, c)));
                last = Some((r, c));
            }
            // pure function
            prop_assert_eq!(extract_points(&img, &spec, n).unwrap(), pts);
        }

        #[test]
        fn render_round_trip(img in arbitrary_sketch(true)) {
            let spec = lamp();
            prop_assume!(img.foreground_count() > 0);
            let n = img.foreground_count();
            let pts = extract_points(&img, &spec, n + 3).unwrap();
            let back = labels_to_image(&pts, &spec, img.width()).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
