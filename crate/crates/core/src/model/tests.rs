use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::gradcheck;

fn tiny(k: &[usize]) -> MCPNetConfig {
    MCPNetConfig::new(k, 3, 8).with_width_factor(WidthFactor::new(1, 16).unwrap())
}

fn points(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 2], |_| rng.gen_range(0.0..1.0))
}

#[test]
fn init_is_deterministic_and_follows_bounds() {
    let a = Model::<f32>::init(tiny(&[1, 3]), 7).unwrap();
    let b = Model::<f32>::init(tiny(&[1, 3]), 7).unwrap();
    let c = Model::<f32>::init(tiny(&[1, 3]), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for col in a.columns() {
        for l in col {
            let [k, c_in, _] = [l.conv.kernel.shape()[0], l.conv.kernel.shape()[1], 0];
            let bound = (1.0 / (k * c_in) as f32).sqrt();
            assert!(l.conv.kernel.data().iter().all(|v| v.abs() <= bound));
            assert!(l.conv.bias.data().iter().all(|&v| v == 0.0));
            assert!(l.gamma.data().iter().all(|&v| v == 1.0));
            assert!(l.beta.data().iter().all(|&v| v == 0.0));
            assert!(
                l.stats.mean.iter().all(|&v| v == 0.0) && l.stats.var.iter().all(|&v| v == 1.0)
            );
        }
    }
    assert_eq!(a.params().len(), (6 + 4) * 4 + 2);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(
        Model::<f32>::init(tiny(&[2]), 0),
        Err(Error::InvalidConfig(_))
    ));
    assert!(matches!(
        Model::<f32>::init(MCPNetConfig::new(&[1], 1, 8), 0),
        Err(Error::InvalidConfig(_))
    ));
    let starved =
        MCPNetConfig::new(&[1], 3, 8).with_width_factor(WidthFactor::new(1, 128).unwrap());
    assert!(matches!(
        Model::<f32>::init(starved, 0),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn score_rows_are_distributions() {
    let m = Model::<f64>::init(tiny(&[1, 3, 5]), 1).unwrap();
    for n in [1, 7, 20] {
        let s = m.forward(&points(n, 3), Mode::Eval).unwrap();
        assert_eq!((s.n_points(), s.num_classes()), (n, 3));
        for i in 0..n {
            let row = s.row(i);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn batched_eval_matches_single() {
    let m = Model::<f64>::init(tiny(&[1, 3]), 2).unwrap();
    let a = points(6, 1);
    let b = points(6, 2);
    let mut both = a.data().to_vec();
    both.extend_from_slice(b.data());
    let batch = Tensor::new(&[2, 6, 2], both).unwrap();
    let lb = m.logits(&batch, Mode::Eval).unwrap();
    let la = m.logits(&a, Mode::Eval).unwrap();
    let lb1 = m.logits(&b, Mode::Eval).unwrap();
    let c = 3;
    for (i, v) in la.data().iter().chain(lb1.data()).enumerate() {
        assert!((lb.data()[i] - v).abs() < 1e-12, "index {i} (C={c})");
    }
}

#[test]
fn wrong_input_shape_is_an_error() {
    let m = Model::<f32>::init(tiny(&[1]), 0).unwrap();
    let bad = Tensor::<f32>::zeros(&[4, 3]);
    assert!(matches!(
        m.forward(&bad, Mode::Eval),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn train_forward_updates_running_stats() {
    let mut m = Model::<f64>::init(tiny(&[1]), 0).unwrap();
    let mut g = Graph::new();
    let params = m.bind(&mut g, false);
    let x = g.constant(points(8, 0));
    let trace = m.forward_graph(&mut g, &params, x, Mode::Train).unwrap();
    assert_eq!(trace.batch_norms.len(), 7);
    let before = m.clone();
    m.update_running_stats(&g, &trace);
    let (mean, var) = g.batch_stats(trace.batch_norms[0]).unwrap();
    for c in 0..mean.len() {
        assert!((m.bn_layers()[0].mean[c] - 0.1 * mean[c]).abs() < 1e-12);
        assert!((m.bn_layers()[0].var[c] - (0.9 + 0.1 * var[c])).abs() < 1e-12);
    }
    assert_eq!(m.params(), before.params());
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
    assert_eq!(argmax(&[1.0f32]), 0);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let m = Model::<f32>::init(tiny(&[1, 5]), 9).unwrap();
    let bytes = to_bytes(&m);
    let back: Model<f32> = from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(to_bytes(&back), bytes);
    assert_eq!(&bytes[..4], b"MCPN");
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
}

#[test]
fn checkpoint_corruption_is_detected() {
    let bytes = to_bytes(&Model::<f32>::init(tiny(&[1]), 0).unwrap());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(from_bytes::<f32>(&bad), Err(Error::BadMagic)));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(
        from_bytes::<f32>(&flipped),
        Err(Error::ChecksumMismatch)
    ));
    assert!(matches!(
        from_bytes::<f32>(&bytes[..bytes.len() - 10]),
        Err(Error::ChecksumMismatch)
    ));
    let mut v2 = bytes[..bytes.len() - 4].to_vec();
    v2[4] = 2;
    let crc = crc32fast::hash(&v2);
    v2.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(
        from_bytes::<f32>(&v2),
        Err(Error::VersionMismatch {
            found: 2,
            expected: 1
        })
    ));
}

#[test]
fn full_loss_gradcheck() {
    let cfg = tiny(&[1]);
    let m = Model::<f64>::init(cfg, 4).unwrap();
    let labels = [0, 1, 2, 0, 1, 2, 2, 0];
    let mask = [true; 8];
    let mut inputs = vec![points(8, 11)];
    inputs.extend(m.params().into_iter().cloned());
    let report = gradcheck(
        |g, vars| {
            let t = m.forward_graph(g, &vars[1..], vars[0], Mode::Train)?;
            g.softmax_cross_entropy(t.logits, &labels, &mask)
        },
        &inputs,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pooled_feature_is_order_invariant(seed in any::<u64>(), n in 2usize..20) {
        let m = Model::<f64>::init(tiny(&[1]), seed).unwrap();
        let x = points(n, seed ^ 5);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled = Tensor::from_fn(&[n, 2], |i| x.data()[perm[i / 2] * 2 + i % 2]);
        let a = m.forward_column(0, &x, Mode::Eval).unwrap();
        let b = m.forward_column(0, &shuffled, Mode::Eval).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            let (ra, rb) = (a.row(0, src), b.row(0, i));
            for (u, v) in ra.iter().zip(rb) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
