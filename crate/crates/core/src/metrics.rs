//! Point-level (P) and component-level (C) segmentation accuracy.
//!
//! Only the first `n_original` points of a sample are scored; padding
//! duplicates never count. A component is the set of original points sharing
//! one ground-truth label within one sketch, and it is correct when at least
//! three quarters of its points carry that label.

use std::collections::BTreeMap;
use std::fmt;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::sketchio::LabeledPointSet;

/// Fraction of a component's points that must be right for it to count.
pub const COMPONENT_THRESHOLD: (usize, usize) = (3, 4);

fn originals<'a>(
    pred: &'a [usize],
    truth: &'a LabeledPointSet,
) -> Result<(&'a [usize], &'a [usize])> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let n = truth.n_original();
    Ok((&pred[..n], truth.original_labels()))
}

/// Correct and total original points.
pub fn point_counts(pred: &[usize], truth: &LabeledPointSet) -> Result<(usize, usize)> {
    let (p, t) = originals(pred, truth)?;
    Ok((p.iter().zip(t).filter(|(a, b)| a == b).count(), t.len()))
}

/// Fraction of original points labeled correctly.
pub fn p_metric(pred: &[usize], truth: &LabeledPointSet) -> Result<f64> {
    let (correct, total) = point_counts(pred, truth)?;
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// `(correct_components, total_components)` for one sketch.
pub fn c_metric(pred: &[usize], truth: &LabeledPointSet) -> Result<(usize, usize)> {
    let (p, t) = originals(pred, truth)?;
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&guess, &label) in p.iter().zip(t) {
        let e = groups.entry(label).or_default();
        e.0 += usize::from(guess == label);
        e.1 += 1;
    }
    let (num, den) = COMPONENT_THRESHOLD;
    let correct = groups
        .values()
        .filter(|(hit, size)| hit * den >= size * num)
        .count();
    Ok((correct, groups.len()))
}

/// Scores for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryReport {
    pub category: String,
    pub p_metric: f64,
    pub c_metric: f64,
    /// `confusion[truth][pred]` over original points.
    pub confusion: Vec<Vec<usize>>,
    pub n_sketches: usize,
    pub n_points: usize,
    pub correct_points: usize,
    pub n_components: usize,
    pub correct_components: usize,
}

impl CategoryReport {
    fn new(category: &str) -> Self {
        Self {
            category: category.to_string(),
            p_metric: 0.0,
            c_metric: 0.0,
            confusion: Vec::new(),
            n_sketches: 0,
            n_points: 0,
            correct_points: 0,
            n_components: 0,
            correct_components: 0,
        }
    }

    fn add(&mut self, pred: &[usize], truth: &LabeledPointSet, num_classes: usize) -> Result<()> {
        let (points_ok, points) = point_counts(pred, truth)?;
        let (comps_ok, comps) = c_metric(pred, truth)?;
        let (p, t) = originals(pred, truth)?;
        let size = p
            .iter()
            .chain(t)
            .map(|&l| l + 1)
            .max()
            .unwrap_or(0)
            .max(num_classes);
        if self.confusion.len() < size {
            for row in &mut self.confusion {
                row.resize(size, 0);
            }
            self.confusion.resize(size, vec![0; size]);
        }
        for (&guess, &label) in p.iter().zip(t) {
            self.confusion[label][guess] += 1;
        }
        self.n_sketches += 1;
        self.n_points += points;
        self.correct_points += points_ok;
        self.n_components += comps;
        self.correct_components += comps_ok;
        self.p_metric = ratio(self.correct_points, self.n_points);
        self.c_metric = ratio(self.correct_components, self.n_components);
        Ok(())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-category scores plus their unweighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by category name.
    pub categories: Vec<CategoryReport>,
    pub p_metric: f64,
    pub c_metric: f64,
    pub n_sketches: usize,
    pub n_points: usize,
    pub n_components: usize,
}

impl EvalReport {
    /// Aggregates `(category, truth, prediction, num_classes)` entries.
    pub fn from_predictions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a LabeledPointSet, &'a [usize], usize)>,
    {
        let mut by_cat: BTreeMap<&str, CategoryReport> = BTreeMap::new();
        for (cat, truth, pred, classes) in items {
            by_cat
                .entry(cat)
                .or_insert_with(|| CategoryReport::new(cat))
                .add(pred, truth, classes)?;
        }
        if by_cat.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let categories: Vec<CategoryReport> = by_cat.into_values().collect();
        let k = categories.len() as f64;
        Ok(Self {
            p_metric: categories.iter().map(|c| c.p_metric).sum::<f64>() / k,
            c_metric: categories.iter().map(|c| c.c_metric).sum::<f64>() / k,
            n_sketches: categories.iter().map(|c| c.n_sketches).sum(),
            n_points: categories.iter().map(|c| c.n_points).sum(),
            n_components: categories.iter().map(|c| c.n_components).sum(),
            categories,
        })
    }

    pub fn category(&self, name: &str) -> Option<&CategoryReport> {
        self.categories.iter().find(|c| c.category == name)
    }

    /// `category,p_metric,c_metric,n_sketches,n_points,n_components` rows
    /// followed by an `Average` row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("writing report", e.into());
        w.write_record([
            "category",
            "p_metric",
            "c_metric",
            "n_sketches",
            "n_points",
            "n_components",
        ])
        .map_err(io)?;
        let rows = self
            .categories
            .iter()
            .map(|c| {
                (
                    c.category.as_str(),
                    c.p_metric,
                    c.c_metric,
                    c.n_sketches,
                    c.n_points,
                    c.n_components,
                )
            })
            .chain([(
                "Average",
                self.p_metric,
                self.c_metric,
                self.n_sketches,
                self.n_points,
                self.n_components,
            )]);
        for (name, p, c, s, n, k) in rows {
            w.write_record([
                name.to_string(),
                format!("{p:.6}"),
                format!("{c:.6}"),
                s.to_string(),
                n.to_string(),
                k.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("writing report", e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .categories
            .iter()
            .map(|c| c.category.len())
            .max()
            .unwrap_or(0)
            .max(8);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>8}  {:>8}",
            "category", "P-metric", "C-metric", "sketches"
        )?;
        for c in &self.categories {
            writeln!(
                f,
                "{:<width$}  {:>7.2}%  {:>7.2}%  {:>8}",
                c.category,
                100.0 * c.p_metric,
                100.0 * c.c_metric,
                c.n_sketches
            )?;
        }
        write!(
            f,
            "{:<width$}  {:>7.2}%  {:>7.2}%  {:>8}",
            "Average",
            100.0 * self.p_metric,
            100.0 * self.c_metric,
            self.n_sketches
        )
    }
}

/// Scores `predict` over `samples`.
pub fn report<F>(samples: &[Sample], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&Sample) -> Result<Vec<usize>>,
{
    let preds = samples
        .iter()
        .map(&mut predict)
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(
        samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.category.as_str(), &s.points, p.as_slice(), s.num_classes)),
    )
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::sketchio::PointSet;

    fn truth(labels: &[usize], n_original: usize) -> LabeledPointSet {
        LabeledPointSet {
            base: PointSet {
                points: vec![[0.0, 0.0]; labels.len()],
                n_original,
            },
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn p_metric_basics() {
        let t = truth(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 10);
        assert_eq!(p_metric(t.labels.as_slice(), &t).unwrap(), 1.0);
        let mut pred = t.labels.clone();
        pred[0] = 1;
        pred[5] = 0;
        assert_eq!(p_metric(&pred, &t).unwrap(), 0.8);
        assert!(matches!(
            p_metric(&pred[..3], &t),
            Err(Error::LengthMismatch(3, 10))
        ));
    }

    #[test]
    fn padding_is_ignored() {
        let t = truth(&[0, 1, 0, 1], 2);
        assert_eq!(p_metric(&[0, 1, 1, 0], &t).unwrap(), 1.0);
        assert_eq!(c_metric(&[0, 1, 1, 0], &t).unwrap(), (2, 2));
    }

    #[test]
    fn component_threshold_is_inclusive() {
        let t = truth(&[0, 0, 0, 0, 1, 1, 1, 1], 8);
        assert_eq!(c_metric(&[0, 0, 0, 1, 1, 1, 0, 0], &t).unwrap(), (1, 2));
        assert_eq!(c_metric(&[0, 0, 0, 1, 1, 1, 1, 0], &t).unwrap(), (2, 2));
        let three = truth(&[0, 1, 2, 2], 4);
        assert_eq!(c_metric(&three.labels, &three).unwrap().1, 3);
    }

    #[test]
    fn report_averages_categories_unweighted() {
        let a = truth(&[0; 10], 10);
        let b = truth(&[1; 5], 5);
        let pa: Vec<usize> = (0..10).map(|i| usize::from(i >= 8)).collect();
        let pb = vec![1, 1, 1, 0, 0];
        let r = EvalReport::from_predictions([
            ("a", &a, pa.as_slice(), 2),
            ("b", &b, pb.as_slice(), 2),
        ])
        .unwrap();
        assert!((r.category("a").unwrap().p_metric - 0.8).abs() < 1e-12);
        assert!((r.category("b").unwrap().p_metric - 0.6).abs() < 1e-12);
        assert!((r.p_metric - 0.7).abs() < 1e-12);
        assert_eq!(
            r.category("a").unwrap().confusion,
            vec![vec![8, 2], vec![0, 0]]
        );
        assert!(r.to_csv().ends_with("Average,0.700000,0.500000,2,15,2\n"));
        assert!(r.to_string().contains("Average"));
        assert!(matches!(
            EvalReport::from_predictions(std::iter::empty()),
            Err(Error::EmptyDataset)
        ));
    }

    fn instance() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
        (1usize..50, 1usize..=5).prop_flat_map(|(n, c)| {
            (
                proptest::collection::vec(0..c, n),
                proptest::collection::vec(0..c, n),
                1..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn correcting_a_point_never_hurts((t, p, n) in instance(), which in any::<prop::sample::Index>()) {
            let truth = truth(&t, n);
            let i = which.index(n);
            let mut fixed = p.clone();
            fixed[i] = t[i];
            prop_assert!(p_metric(&fixed, &truth).unwrap() >= p_metric(&p, &truth).unwrap());
            prop_assert!(c_metric(&fixed, &truth).unwrap().0 >= c_metric(&p, &truth).unwrap().0);
        }

        #[test]
        fn c_metric_ignores_order((t, p, n) in instance(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let ts: Vec<usize> = order.iter().map(|&i| t[i]).collect();
            let ps: Vec<usize> = order.iter().map(|&i| p[i]).collect();
            prop_assert_eq!(c_metric(&ps, &truth(&ts, n)).unwrap(), c_metric(&p[..n], &truth(&t[..n], n)).unwrap());
        }

        #[test]
        fn p_metric_is_one_minus_hamming((t, p, n) in instance()) {
            let hamming = (0..n).filter(|&i| t[i] != p[i]).count();
            let got = p_metric(&p, &truth(&t, n)).unwrap();
            prop_assert_eq!(got, (n - hamming) as f64 / n as f64);
            prop_assert!((got - (1.0 - hamming as f64 / n as f64)).abs() < 1e-12);
        }

        #[test]
        fn confusion_trace_matches_p((t, p, n) in instance()) {
            let tr = truth(&t, n);
            let r = EvalReport::from_predictions([("x", &tr, p.as_slice(), 5)]).unwrap();
            let c = &r.categories[0];
            let trace: usize = (0..c.confusion.len()).map(|i| c.confusion[i][i]).sum();
            let total: usize = c.confusion.iter().flatten().sum();
            prop_assert_eq!(total, n);
            prop_assert_eq!(trace as f64 / total as f64, c.p_metric);
        }
    }
}
