use fewtrip::corpus::{
    derive_bio_tags, sample_episode, AnnotatedSentence, Corpus, EpisodeShape, Span,
};
use fewtrip::entdec::{
    crf_log_partition, crf_nll, sequence_score, tags_to_spans, viterbi_decode, CrfParams,
    NUM_STATES, NUM_TAGS,
};
use fewtrip::harness::checkpoint;
use fewtrip::harness::{Counts, ModelParams};
use fewtrip::numeric::{logsumexp, softmax_axis, Axis, ParamStore, Tensor};
use fewtrip::reldec::relation_loss_value;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |data| Tensor::new(vec![rows, cols], data).unwrap())
}

fn chain() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..=6).prop_flat_map(|t| {
        (
            matrix(t, NUM_TAGS, 5.0),
            matrix(NUM_STATES, NUM_STATES, 3.0),
        )
    })
}

/// A sentence with non-overlapping subject and object spans.
fn sentence() -> impl Strategy<Value = AnnotatedSentence> {
    (2usize..12)
        .prop_flat_map(|n| (Just(n), 0..n, 0..n, 1usize..4, 1usize..4))
        .prop_filter_map("overlapping spans", |(n, s, o, sl, ol)| {
            let subj = Span::new(s, (s + sl).min(n));
            let obj = Span::new(o, (o + ol).min(n));
            let tokens = (0..n).map(|i| format!("w{i}")).collect();
            AnnotatedSentence::new(tokens, "r".into(), subj, obj).ok()
        })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c, 50.0))) {
        for axis in [Axis::Rows, Axis::Cols] {
            let s = softmax_axis(&m, axis).unwrap();
            prop_assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (rows, cols) = s.dims2().unwrap();
            let sums: Vec<f64> = match axis {
                Axis::Rows => (0..rows).map(|r| s.row(r).iter().sum()).collect(),
                Axis::Cols => (0..cols).map(|c| (0..rows).map(|r| s.get2(r, c)).sum()).collect(),
            };
            prop_assert!(sums.iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn logsumexp_bounds(xs in prop::collection::vec(-500.0f64..500.0, 1..10)) {
        let l = logsumexp(&xs).unwrap();
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(l >= max && l <= max + (xs.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn bio_tags_round_trip(s in sentence()) {
        let tags = derive_bio_tags(&s);
        prop_assert!(tags.is_well_formed());
        prop_assert_eq!(tags_to_spans(&tags), (Some(s.subject()), Some(s.object())));
    }

    #[test]
    fn viterbi_is_consistent((em, table) in chain(), constrained in any::<bool>()) {
        let crf = CrfParams::from_table(table, constrained).unwrap();
        let (path, score) = viterbi_decode(&em, &crf).unwrap();
        let direct = sequence_score(&em, &crf, path.as_slice()).unwrap();
        prop_assert!((direct - score).abs() <= 1e-9 * direct.abs().max(1.0));
        let z = crf_log_partition(&em, &crf).unwrap();
        prop_assert!(score <= z + 1e-9);
        prop_assert!(crf_nll(&em, &crf, &path).unwrap() >= -1e-9);
        if constrained {
            prop_assert!(path.is_well_formed());
        }
    }

    #[test]
    fn episodes_keep_support_and_query_apart(seed in any::<u64>()) {
        // Every sentence is unique, so equality identifies corpus entries.
        let sentences = (0..4).flat_map(|r| (0..8).map(move |i| {
            AnnotatedSentence::new(
                vec![format!("s{r}_{i}"), "x".into(), "y".into()],
                format!("r{r}"),
                Span::new(0, 1),
                Span::new(2, 3),
            ).unwrap()
        }));
        let corpus = Corpus::from_sentences("p", sentences).unwrap();
        let ep = sample_episode(&corpus, EpisodeShape::new(3, 2, 3), seed).unwrap();
        let support: Vec<_> = ep.support.iter().flatten().collect();
        prop_assert_eq!(support.len(), 6);
        prop_assert_eq!(ep.query.len(), 9);
        prop_assert!(ep.query.iter().all(|q| !support.contains(&q)));
        let again = sample_episode(&corpus, EpisodeShape::new(3, 2, 3), seed).unwrap();
        prop_assert_eq!(ep, again);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
    ) {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(values.clone()));
        let model = ModelParams { encoder: "attention".into(), d: 1, vocab_hash: "h".into(), store };
        let back = checkpoint::from_json(&checkpoint::to_json(&model).unwrap()).unwrap();
        let got: Vec<u64> = back.store.get("x").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn relation_loss_is_non_negative(scores in prop::collection::vec(-30.0f64..30.0, 1..8), pick in any::<prop::sample::Index>()) {
        let gold = pick.index(scores.len());
        prop_assert!(relation_loss_value(&scores, gold).unwrap() >= 0.0);
    }

    #[test]
    fn f1_is_bounded(tp in 0u64..100, fp in 0u64..100, fn_ in 0u64..100) {
        let f1 = Counts { tp, fp, fn_ }.f1();
        prop_assert!((0.0..=1.0).contains(&f1));
    }
}
