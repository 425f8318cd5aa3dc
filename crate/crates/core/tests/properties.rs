use aum_core::data::{apply_missingness, generate, GeneratorConfig, MissingnessSpec};
use aum_core::evaluation::auc_roc;
use aum_core::graph::{augment_mask, NodeId};
use aum_core::message_passing::{attention_weights, update_node, AttentionMode, Message, MpLayer};
use aum_core::rng::seeded;
use aum_core::GaussianVec;
use proptest::prelude::*;

fn message(j: usize, sigma: Vec<f64>) -> Message {
    Message {
        source: NodeId::Modality(j),
        target: NodeId::Patient(0),
        observed: true,
        gaussian: GaussianVec::new(vec![0.0; sigma.len()], sigma).unwrap(),
    }
}

proptest! {
    #[test]
    fn attention_is_a_distribution_favouring_low_sigma(
        sigmas in prop::collection::vec(prop::collection::vec(0.5f64..20.0, 3), 1..6),
        theta in 0.5f64..10.0,
        pick in any::<prop::sample::Index>(),
        shrink in 0.5f64..0.99,
    ) {
        let msgs: Vec<Message> = sigmas.iter().cloned().enumerate().map(|(j, s)| message(j, s)).collect();
        let refs: Vec<&Message> = msgs.iter().collect();
        let a = attention_weights(&refs, theta).unwrap();
        prop_assert!((a.values().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(a.values().all(|&w| w > 0.0));

        let j = pick.index(msgs.len());
        let mut lower = msgs.clone();
        lower[j] = message(j, sigmas[j].iter().map(|s| s * shrink).collect());
        let refs: Vec<&Message> = lower.iter().collect();
        let b = attention_weights(&refs, theta).unwrap();
        let key = NodeId::Modality(j);
        if msgs.len() > 1 {
            prop_assert!(b[&key] > a[&key], "{} -> {}", a[&key], b[&key]);
        }
    }

    #[test]
    fn analytic_variance_update_adds_weighted_variances(
        d in 1usize..4,
        raw in prop::collection::vec((0.1f64..3.0, 0.01f64..1.0), 1..5),
        prior_sigma in 0.1f64..3.0,
    ) {
        let layer = MpLayer::init(&mut seeded(0), 0, d, 10.0, AttentionMode::Uncertainty, false).unwrap();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        let msgs: Vec<Message> = raw.iter().enumerate().map(|(j, r)| message(j, vec![r.0; d])).collect();
        let alpha = msgs.iter().zip(&raw).map(|(m, r)| (m.source, r.1 / total)).collect();
        let refs: Vec<&Message> = msgs.iter().collect();
        let prior = GaussianVec::isotropic(d, 0.3, prior_sigma);
        let out = update_node(&layer, &prior, &refs, &alpha).unwrap();
        let expect = prior_sigma * prior_sigma + raw.iter().map(|r| (r.1 / total).powi(2) * r.0 * r.0).sum::<f64>();
        for &s in out.sigma() {
            prop_assert!(s >= prior_sigma);
            prop_assert!((s * s - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn edge_dropout_only_demotes_and_never_orphans(
        mask in prop::collection::vec(any::<bool>(), 3..30),
        drop in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let m = 3;
        let mut observed = mask.clone();
        observed.truncate(observed.len() / m * m);
        for row in observed.chunks_mut(m) {
            if !row.iter().any(|&b| b) {
                row[0] = true;
            }
        }
        let out = augment_mask(&observed, m, drop, &mut seeded(seed)).unwrap();
        for (o, a) in observed.chunks(m).zip(out.chunks(m)) {
            prop_assert!(a.iter().any(|&b| b));
            prop_assert!(o.iter().zip(a).all(|(&o, &a)| o || !a));
        }
        prop_assert_eq!(augment_mask(&observed, m, 0.0, &mut seeded(seed)).unwrap(), observed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masking_keeps_one_modality_and_never_fills_in(ratio in 0.0f64..0.95, mnar in any::<bool>(), seed in 0u64..1000) {
        let c = generate(&GeneratorConfig { n_patients: 40, ..GeneratorConfig::default() }, seed).unwrap();
        let spec = if mnar { MissingnessSpec::mnar(ratio) } else { MissingnessSpec::mcar(ratio) };
        let masked = apply_missingness(&c, &spec, seed).unwrap();
        for (before, after) in c.patients.iter().zip(&masked.patients) {
            prop_assert!(after.observed_count() >= 1);
            for (b, a) in before.observations.iter().zip(&after.observations) {
                if let Some(a) = a {
                    prop_assert_eq!(Some(a), b.as_ref());
                }
            }
        }
    }

    #[test]
    fn auc_of_negated_scores_is_complementary(scores in prop::collection::vec(-5.0f64..5.0, 2..60), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let mut labels: Vec<u8> = scores.iter().map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc_roc(&scores, &labels).unwrap();
        prop_assert!((a + auc_roc(&neg, &labels).unwrap() - 1.0).abs() <= 1e-12);
    }
}
