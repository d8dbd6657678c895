//! Property tests for the stated invariants.

use freqcl::config::{ExperimentConfig, Precision};
use freqcl::data::{encode_cifar10_binary, parse_cifar10_binary, Dataset};
use freqcl::model::AggregatorVariant;
use freqcl::rehearsal::{BufferEntry, ReplayBuffer, StrategyKind};
use freqcl::tensor::{Graph, Tensor};
use freqcl::trainer::{masked_argmax, AccuracyMatrix};
use freqcl::wavelet::{dwt2d, idwt2d, Selection};
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-10.0f64..10.0, c * h * w).prop_map(move |d| Tensor::new(&[c, h, w], d).unwrap())
}

fn even_image() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| image(c, 2 * h, 2 * w))
}

proptest! {
    #[test]
    fn dwt_round_trip_and_energy(x in even_image()) {
        let q = dwt2d(&x).unwrap();
        let back = idwt2d(&q).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
        let e = x.sum_squares();
        prop_assert!((q.energy() - e).abs() <= 1e-9 * e.max(1.0));
    }

    #[test]
    fn dwt_is_linear(a in image(2, 4, 6), b in image(2, 4, 6), s in -3.0f64..3.0) {
        let mixed = Tensor::new(&[2, 4, 6], a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect()).unwrap();
        let (qa, qb, qm) = (dwt2d(&a).unwrap(), dwt2d(&b).unwrap(), dwt2d(&mixed).unwrap());
        for (m, (x, y)) in qm.ll.data().iter().zip(qa.ll.data().iter().zip(qb.ll.data())) {
            prop_assert!((m - (x + s * y)).abs() < 1e-9);
        }
    }

    #[test]
    fn reservoir_never_exceeds_capacity(cap in 0usize..20, n in 0usize..200, seed in any::<u64>()) {
        let mut b = ReplayBuffer::<f32>::new(cap, seed);
        let mut last = 0;
        for i in 0..n {
            let e = BufferEntry::new(Tensor::full(&[1, 1, 1], i as f32), Tensor::zeros(&[1, 1, 1]), 0, None, 0).unwrap();
            b.reservoir_offer(e);
            prop_assert!(b.len() <= cap);
            prop_assert_eq!(b.seen(), last + 1);
            last = b.seen();
        }
        prop_assert_eq!(b.len(), cap.min(n));
        prop_assert_eq!(b.seen(), n as u64);
    }

    #[test]
    fn stored_entries_never_change_in_place(seed in any::<u64>(), n in 1usize..60) {
        let mut b = ReplayBuffer::<f32>::new(5, seed);
        for i in 0..n {
            let e = BufferEntry::new(Tensor::full(&[1, 1, 1], i as f32), Tensor::full(&[1, 1, 1], -(i as f32)), i, None, 0).unwrap();
            b.reservoir_offer(e);
            for e in b.entries() {
                prop_assert_eq!(e.low.data()[0], e.label as f32);
                prop_assert_eq!(e.high.data()[0], -(e.label as f32));
            }
        }
    }

    #[test]
    fn aggregate_mutual_commutes(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2, 2, 2], a).unwrap());
        let y = g.constant(Tensor::new(&[1, 2, 2, 2], b).unwrap());
        let (p, q) = freqcl::model::aggregate(&mut g, x, y, AggregatorVariant::Mutual).unwrap();
        let (r, s) = freqcl::model::aggregate(&mut g, y, x, AggregatorVariant::Mutual).unwrap();
        prop_assert_eq!(g.value(p), g.value(s));
        prop_assert_eq!(g.value(q), g.value(r));
    }

    #[test]
    fn class_il_correct_implies_task_il_correct(
        logits in prop::collection::vec(-3.0f64..3.0, 6),
        task in 0usize..3,
        label_off in 0usize..2,
    ) {
        let classes = [2 * task, 2 * task + 1];
        let label = classes[label_off];
        let seen: Vec<usize> = (0..=2 * task + 1).collect();
        if masked_argmax(&logits, &seen) == label {
            prop_assert_eq!(masked_argmax(&logits, &classes), label);
        }
    }

    #[test]
    fn average_accuracy_is_row_mean(rows in (1usize..6).prop_flat_map(|t| {
        (0..t).map(|i| prop::collection::vec(0.0f64..=1.0, i + 1)).collect::<Vec<_>>()
    })) {
        let a = AccuracyMatrix::from_rows(rows.clone()).unwrap();
        for (t, r) in rows.iter().enumerate() {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            prop_assert_eq!(a.average_accuracy(t).unwrap(), mean);
            prop_assert!(a.forgetting(t).unwrap() >= -1.0);
        }
    }

    #[test]
    fn cifar_layout_round_trip_at_8_bits(bytes in prop::collection::vec(any::<u8>(), 3072 * 2), l0 in 0u8..10, l1 in 0u8..10) {
        let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        let d = Dataset::new(Tensor::new(&[2, 3, 32, 32], data).unwrap(), vec![l0 as usize, l1 as usize]).unwrap();
        let back: Dataset<f64> = parse_cifar10_binary(&encode_cifar10_binary(&d).unwrap()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn config_emit_parse_round_trip(
        cap in 0usize..500,
        lr in 0.0f64..1.0,
        seed in any::<u64>(),
        kind in 0usize..4,
        variant in 0usize..4,
        selection in 0usize..7,
        f64_mode in any::<bool>(),
        alpha in 0.0f64..2.0,
    ) {
        let mut c = ExperimentConfig { buffer_capacity: cap, ..ExperimentConfig::default() };
        c.train.lr = lr;
        c.seed = seed;
        c.strategy.kind = StrategyKind::ALL[kind];
        c.strategy.alpha = alpha;
        c.variant = AggregatorVariant::ALL[variant];
        c.selection = Selection::ALL[selection];
        c.precision = if f64_mode { Precision::F64 } else { Precision::F32 };
        prop_assert_eq!(ExperimentConfig::parse(&c.emit()).unwrap(), c);
    }
}
