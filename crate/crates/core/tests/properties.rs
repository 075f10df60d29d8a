use pidgin_adapt::adapt::{mask_tokens, MaskingConfig};
use pidgin_adapt::corpus::{
    clean_and_filter, deduplicate, normalize_text, split_and_subsample, CleanConfig, LanguageTag, ParallelCorpus, SentencePair,
    SplitSpec,
};
use pidgin_adapt::eval::{corpus_bleu, macro_f1, Smoothing};
use pidgin_adapt::orthography::{builtin_rules, normalize_token};
use pidgin_adapt::tokenize::{is_special, MASK_ID, NUM_SPECIALS};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "di", "pikin", "dey", "chop", "rice", "wetin", "happen", "carry", "karry", "tink", "think", "wan", "go", "market", "sabi",
    "dem", "no", "don", "come", "house", "oya", "abeg", "the", "child", "is", "eating",
];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..max).prop_map(|w| w.join(" "))
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(WORDS), 1..max)
}

fn corpus(pairs: Vec<(String, String)>) -> ParallelCorpus {
    let mut c = ParallelCorpus::new("p", (LanguageTag::eng(), LanguageTag::pcm()));
    for (s, t) in pairs {
        c.pairs.push(SentencePair::real(&s, &t, &c.langs, "p"));
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalize_token_is_idempotent(w in "[a-zA-Z]{1,10}") {
        let rules = builtin_rules();
        let once = normalize_token(&w, &rules);
        prop_assert_eq!(normalize_token(&once, &rules), once);
    }

    #[test]
    fn normalize_text_is_idempotent(s in "\\PC{0,40}") {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert_eq!(once.trim(), once.as_str());
    }

    #[test]
    fn bleu_of_identical_corpus_is_100(refs in prop::collection::vec(tokens(12), 1..8)) {
        let b = corpus_bleu(&refs, &refs, 4, Smoothing::None).unwrap();
        prop_assert!((b.score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_ignores_segment_order(
        pairs in prop::collection::vec((tokens(10), tokens(10)), 1..10),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let base = corpus_bleu(&h, &r, 4, Smoothing::AddK(1.0)).unwrap().score;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let (h2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let again = corpus_bleu(&h2, &r2, 4, Smoothing::AddK(1.0)).unwrap().score;
        prop_assert!((base - again).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&base));
    }

    #[test]
    fn macro_f1_is_invariant_under_consistent_relabeling(
        labels in prop::collection::vec((0usize..3, 0usize..3), 1..40),
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let (p, g): (Vec<_>, Vec<_>) = labels.iter().cloned().unzip();
        let (p2, g2): (Vec<usize>, Vec<usize>) = labels.iter().map(|&(a, b)| (perm[a], perm[b])).unzip();
        let a = macro_f1(&p, &g).unwrap();
        prop_assert!((a - macro_f1(&p2, &g2).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn split_parts_are_disjoint_and_subsamples_nest(
        pairs in prop::collection::vec((sentence(6), sentence(6)), 20..60),
        seed in any::<u64>(),
    ) {
        let c = corpus(pairs);
        let spec = SplitSpec { train_frac: 0.8, dev_frac: 0.1, test_frac: 0.1, seed };
        let full = split_and_subsample(&c, &spec, 1.0).unwrap();
        let half = split_and_subsample(&c, &spec, 0.5).unwrap();
        prop_assert_eq!(full.train.len() + full.dev.len() + full.test.len(), c.len());
        prop_assert_eq!(&half.dev, &full.dev);
        prop_assert_eq!(&half.test, &full.test);
        prop_assert_eq!(&half.train.pairs[..], &full.train.pairs[..half.train.len()]);
    }

    #[test]
    fn clean_and_dedup_are_idempotent(pairs in prop::collection::vec((sentence(8), sentence(8)), 0..30)) {
        let c = corpus(pairs);
        let cfg = CleanConfig { max_len: 5, max_ratio: 3.0 };
        let (once, _) = clean_and_filter(&c, &cfg);
        let (twice, report) = clean_and_filter(&once, &cfg);
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(report.dropped(), 0);
        let d = deduplicate(&c);
        prop_assert_eq!(deduplicate(&d), d.clone());
        prop_assert!(d.len() <= c.len());
    }

    #[test]
    fn masking_selects_the_configured_count(
        ids in prop::collection::vec(0u32..60, 1..50),
        seed in any::<u64>(),
    ) {
        let cfg = MaskingConfig { seed, ..MaskingConfig::default() };
        let n = ids.iter().filter(|&&i| !is_special(i)).count();
        match mask_tokens(&ids, &cfg, 60) {
            Ok(m) => {
                let k = ((0.15 * n as f64).round() as usize).clamp(1, n);
                prop_assert_eq!(m.positions.len(), k);
                prop_assert_eq!(m.labels.len(), k);
                for (i, (&a, &b)) in ids.iter().zip(&m.ids).enumerate() {
                    if m.positions.contains(&i) {
                        prop_assert!(b == MASK_ID || b as usize >= NUM_SPECIALS);
                    } else {
                        prop_assert_eq!(a, b);
                    }
                }
            }
            Err(_) => prop_assert_eq!(n, 0),
        }
    }
}
