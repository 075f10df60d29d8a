use pidgin_adapt::adapt::{finetune_classifier, predict_labels, StageConfig};
use pidgin_adapt::corpus::{LabeledCorpus, LabeledText, LanguageTag, Sentiment};
use pidgin_adapt::eval::macro_f1;
use pidgin_adapt::model::{forward, init_model, read_checkpoint, write_checkpoint, Batch, ModelConfig, TrainHyper};
use pidgin_adapt::tokenize::{train_word_vocab, TokenizerSpec};

// First four logits of each decoder row for the tiny model seeded with 42.
const GOLDEN: [[f64; 4]; 4] = [
    [-1.4084425431353402, -0.5110329889296289, 2.7109868386214386, 0.368012438874157],
    [-1.105477761536751, -0.4907836065093717, 0.8534918407808966, 0.532624283684554],
    [-0.9166520167314705, -0.007425348205861743, 0.9076213272644079, 0.856609497789399],
    [-1.5789129969163824, -0.40975558113932264, 0.770927509568887, -0.3262478982397487],
];

fn golden_batch() -> Batch {
    Batch::new(&[(vec![5, 9, 10, 11, 3], vec![12, 13, 14])])
}

fn max_diff(logits: &pidgin_adapt::model::Mat) -> f64 {
    assert_eq!(logits.shape(), (4, 20));
    let mut worst: f64 = 0.0;
    for (r, row) in GOLDEN.iter().enumerate() {
        for (c, &g) in row.iter().enumerate() {
            worst = worst.max((logits.get(r, c) - g).abs());
        }
    }
    worst
}

#[test]
fn seeded_logits_are_frozen() {
    let ckpt = init_model(&ModelConfig::tiny(20), 42).unwrap();
    let logits = forward(&ckpt, &golden_batch()).unwrap();
    assert!(max_diff(&logits[0]) < 1e-12, "{}", max_diff(&logits[0]));

    // Checkpoints hold f32, so a reload only agrees to single precision.
    let mut buf = Vec::new();
    write_checkpoint(&ckpt, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    let d = max_diff(&forward(&back, &golden_batch()).unwrap()[0]);
    assert!(d < 1e-5, "{d}");
}

#[test]
fn classifier_fits_thirty_sentences() {
    let cues = [
        (Sentiment::Positive, ["sweet", "fine", "happy", "correct", "good"]),
        (Sentiment::Negative, ["bad", "wahala", "vex", "spoil", "yeye"]),
        (Sentiment::Neutral, ["table", "market", "bus", "road", "chair"]),
    ];
    let mut items = Vec::new();
    for (label, words) in cues {
        for w in words {
            for frame in ["dis one {} well", "{} na im e be"] {
                items.push(LabeledText { text: frame.replace("{}", w), label });
            }
        }
    }
    assert_eq!(items.len(), 30);
    let data = LabeledCorpus { name: "toy".into(), lang: LanguageTag::pcm(), items };
    let tok = TokenizerSpec::word(train_word_vocab(data.items.iter().map(|i| i.text.as_str()), 100).unwrap());
    let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 3).unwrap();
    let cfg = StageConfig {
        steps: 300,
        batch_size: 10,
        hyper: TrainHyper { lr: 3e-3, warmup_steps: 30, ..TrainHyper::default() },
        eval_every: 0,
    };
    let out = finetune_classifier(ckpt, &tok, &data, None, &cfg, 8).unwrap();
    let texts: Vec<&str> = data.items.iter().map(|i| i.text.as_str()).collect();
    let gold: Vec<usize> = data.items.iter().map(|i| i.label.index()).collect();
    let pred = predict_labels(&out.ckpt, &tok, &texts).unwrap();
    assert_eq!(macro_f1(&pred, &gold).unwrap(), 1.0);
}
