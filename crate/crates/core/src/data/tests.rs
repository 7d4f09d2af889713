use proptest::prelude::*;

use super::*;
use crate::sketchio::{extract_points, load_sketch, prepare, DEFAULT_CANVAS};

fn manifest(per_cat: &[(&str, usize)]) -> Manifest {
    let mut m = Manifest::default();
    for &(cat, n) in per_cat {
        m.specs.insert(cat.into(), format!("{cat}.json").into());
        for i in 0..n {
            m.records.push(Record {
                path: format!("{cat}/{i}.png").into(),
                category: cat.into(),
                split: Split::Train,
            });
        }
    }
    m
}

fn counts(m: &Manifest, cat: &str) -> (usize, usize) {
    let of = |s| {
        m.records
            .iter()
            .filter(|r| r.category == cat && r.split == s)
            .count()
    };
    (of(Split::Train), of(Split::Test))
}

#[test]
fn split_is_stratified() {
    let m = manifest(&[("lamp", 1000), ("chair", 1000)]);
    let s = split(&m, 0.75, 3).unwrap();
    assert_eq!(counts(&s, "lamp"), (750, 250));
    assert_eq!(counts(&s, "chair"), (750, 250));
    assert_eq!(split(&m, 0.75, 3).unwrap(), s);
    assert_ne!(split(&m, 0.75, 4).unwrap(), s);
    let two = split(&manifest(&[("a", 2)]), 0.5, 0).unwrap();
    assert_eq!(counts(&two, "a"), (1, 1));
}

#[test]
fn split_errors() {
    assert!(matches!(
        split(&Manifest::default(), 0.5, 0),
        Err(Error::EmptyManifest)
    ));
    assert!(split(&manifest(&[("a", 3)]), 1.0, 0).is_err());
    assert!(split(&manifest(&[("a", 3)]), 0.0, 0).is_err());
}

#[test]
fn batch_shapes() {
    let sizes: Vec<usize> = batches(25, 10, 0, 0).iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![10, 10, 5]);
    assert_eq!(batches(25, 1, 0, 0).len(), 25);
    assert_eq!(batches(25, 10, 1, 2), batches(25, 10, 1, 2));
    assert_ne!(batches(25, 10, 1, 2), batches(25, 10, 1, 3));
}

#[test]
fn manifest_validation_and_io() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manifest(&[("lamp", 3)]);
    m.save(dir.path()).unwrap();
    assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    assert_eq!(Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    m.records.push(m.records[0].clone());
    assert!(matches!(m.validate(), Err(Error::InvalidManifest(_))));
    let mut orphan = manifest(&[("lamp", 1)]);
    orphan.records[0].category = "sofa".into();
    assert!(matches!(orphan.validate(), Err(Error::InvalidManifest(_))));
}

#[test]
fn merge_replaces_category() {
    let mut m = manifest(&[("lamp", 3), ("chair", 2)]);
    m.merge(manifest(&[("lamp", 5)]));
    assert_eq!(counts(&m, "lamp").0, 5);
    assert_eq!(counts(&m, "chair").0, 2);
}

#[test]
fn synthetic_corpus_is_valid_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for t in Template::ALL {
        let cfg = SynthConfig::new(t, 6, 11);
        let ma = gen_synthetic(&cfg, a.path()).unwrap();
        let mb = gen_synthetic(&cfg, b.path()).unwrap();
        assert_eq!(ma, mb);
        let spec = t.spec();
        for r in &ma.records {
            let bytes_a = std::fs::read(a.path().join(&r.path)).unwrap();
            assert_eq!(bytes_a, std::fs::read(b.path().join(&r.path)).unwrap());
            let img = load_sketch(&a.path().join(&r.path), &spec).unwrap();
            assert_eq!(img.colors().len(), spec.num_classes());
            let pts = extract_points(&prepare(&img, DEFAULT_CANVAS).unwrap(), &spec, 512).unwrap();
            assert!(pts.n_original() > 100);
        }
        assert_eq!(ma.load_specs(a.path()).unwrap()[t.name()], spec);
    }
}

#[test]
fn cache_round_trip_and_invalidation() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_synthetic(&SynthConfig::new(Template::Lamp, 2, 1), dir.path()).unwrap();
    let specs = m.load_specs(dir.path()).unwrap();
    let opts = LoadOptions {
        canvas: DEFAULT_CANVAS,
        n_points: 64,
        use_cache: true,
    };
    let fresh = load_samples(
        dir.path(),
        &m,
        &specs,
        &Selection::default(),
        LoadOptions {
            use_cache: false,
            ..opts
        },
    )
    .unwrap();
    let first = load_samples(dir.path(), &m, &specs, &Selection::default(), opts).unwrap();
    let sidecar = cache::sidecar_path(&first[0].path, 64);
    assert!(sidecar.exists());
    let second = load_samples(dir.path(), &m, &specs, &Selection::default(), opts).unwrap();
    assert_eq!(first, fresh);
    assert_eq!(second, fresh);

    // damaged sidecar is ignored and rewritten
    let mut bytes = std::fs::read(&sidecar).unwrap();
    bytes[30] ^= 0xff;
    std::fs::write(&sidecar, &bytes).unwrap();
    let img_bytes = std::fs::read(&first[0].path).unwrap();
    let key = cache::CacheKey::new(&img_bytes, &specs["lamp"], DEFAULT_CANVAS, 64);
    assert_eq!(read_cache(&sidecar, &key).unwrap(), None);
    assert_eq!(
        load_points(&first[0].path, &specs["lamp"], opts).unwrap(),
        fresh[0].points
    );
    assert!(read_cache(&sidecar, &key).unwrap().is_some());
    let other = cache::CacheKey {
        n_points: 65,
        ..key
    };
    assert_eq!(read_cache(&sidecar, &other).unwrap(), None);
}

#[test]
fn selection_filters() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = gen_synthetic(&SynthConfig::new(Template::Lamp, 4, 1), dir.path()).unwrap();
    m.merge(gen_synthetic(&SynthConfig::new(Template::Chair, 2, 1), dir.path()).unwrap());
    let m = split(&m, 0.5, 0).unwrap();
    let specs = m.load_specs(dir.path()).unwrap();
    let opts = LoadOptions {
        canvas: DEFAULT_CANVAS,
        n_points: 32,
        use_cache: false,
    };
    let sel = Selection {
        split: Some(Split::Test),
        category: Some("lamp"),
    };
    let s = load_samples(dir.path(), &m, &specs, &sel, opts).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|x| x.category == "lamp" && x.num_classes == 3));
    let chairs = load_samples(
        dir.path(),
        &m,
        &specs,
        &Selection {
            split: None,
            category: Some("chair"),
        },
        opts,
    )
    .unwrap();
    assert!(chairs.iter().all(|x| x.num_classes == 4));
}

proptest! {
    #[test]
    fn split_partitions(sizes in proptest::collection::vec(1usize..40, 1..4), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let cats: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, &n)| (format!("c{i}"), n)).collect();
        let refs: Vec<(&str, usize)> = cats.iter().map(|(c, n)| (c.as_str(), *n)).collect();
        let m = manifest(&refs);
        let s = split(&m, frac, seed).unwrap();
        prop_assert_eq!(s.records.len(), m.records.len());
        for (a, b) in m.records.iter().zip(&s.records) {
            prop_assert_eq!(&a.path, &b.path);
        }
        for (cat, n) in &refs {
            let (tr, te) = counts(&s, cat);
            prop_assert_eq!(tr + te, *n);
            prop_assert!((tr as f64 - frac * *n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn batches_cover_exactly_once(len in 0usize..100, bs in 1usize..20, seed in any::<u64>(), epoch in 0u64..50) {
        let b = batches(len, bs, seed, epoch);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert!(b.iter().rev().skip(1).all(|c| c.len() == bs));
    }
}
