use super::batch::{Batch, ClassBatch, MaskedBatch};
use super::graph::{Graph, NodeId};
use super::tensor::Mat;
use super::transformer::{Dropper, NUM_CLASSES};
use super::{Checkpoint, ModelError};

/// A training objective over one batch.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Seq2Seq { batch: &'a Batch, label_smoothing: f64 },
    Mlm(&'a MaskedBatch),
    Classify(&'a ClassBatch),
}

fn check_ids(ckpt: &Checkpoint, rows: &[Vec<u32>]) -> Result<(), ModelError> {
    let cfg = ckpt.config();
    for row in rows {
        if row.len() > cfg.max_len {
            return Err(ModelError::LengthOverflow { len: row.len(), max: cfg.max_len });
        }
        if let Some(&id) = row.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab: cfg.vocab_size });
        }
    }
    Ok(())
}

/// Builds the mean loss of `obj` on `g`; returns the loss node and the number
/// of scored items (target tokens, masked positions or sequences).
pub(crate) fn build_loss(
    g: &mut Graph<'_>,
    ckpt: &Checkpoint,
    obj: &Objective<'_>,
    mut drop: Option<&mut Dropper>,
) -> Result<(NodeId, usize), ModelError> {
    let net = ckpt.net();
    let mut parts = Vec::new();
    let count;
    match obj {
        Objective::Seq2Seq { batch, label_smoothing } => {
            check_ids(ckpt, &batch.src)?;
            check_ids(ckpt, &batch.tgt_in)?;
            check_ids(ckpt, &batch.tgt_out)?;
            count = batch.target_tokens();
            if count == 0 {
                return Err(ModelError::EmptyTargets);
            }
            for i in 0..batch.len() {
                let enc = net.encode(g, &batch.src[i], &batch.src_pad[i], drop.as_deref_mut());
                let dec = net.decode(g, enc, &batch.src_pad[i], &batch.tgt_in[i], &batch.tgt_pad[i], drop.as_deref_mut());
                let logits = net.lm_logits(g, dec);
                let targets: Vec<Option<usize>> = batch.tgt_out[i]
                    .iter()
                    .zip(&batch.tgt_pad[i])
                    .map(|(&t, &p)| (!p).then_some(t as usize))
                    .collect();
                parts.push(g.cross_entropy(logits, &targets, *label_smoothing));
            }
        }
        Objective::Mlm(batch) => {
            check_ids(ckpt, &batch.ids)?;
            count = batch.masked_count();
            if count == 0 {
                return Err(ModelError::NoMaskedPositions);
            }
            for i in 0..batch.ids.len() {
                if batch.labels[i].iter().all(Option::is_none) {
                    continue;
                }
                let enc = net.encode(g, &batch.ids[i], &batch.pad[i], drop.as_deref_mut());
                let logits = net.mlm_logits(g, enc);
                let targets: Vec<Option<usize>> = batch.labels[i].iter().map(|l| l.map(|t| t as usize)).collect();
                parts.push(g.cross_entropy(logits, &targets, 0.0));
            }
        }
        Objective::Classify(batch) => {
            check_ids(ckpt, &batch.ids)?;
            count = batch.labels.len();
            if count == 0 {
                return Err(ModelError::EmptyInput);
            }
            for (i, &label) in batch.labels.iter().enumerate() {
                if label >= NUM_CLASSES {
                    return Err(ModelError::BadLabel { label, classes: NUM_CLASSES });
                }
                if batch.pad[i].iter().all(|p| *p) {
                    return Err(ModelError::EmptyInput);
                }
                let enc = net.encode(g, &batch.ids[i], &batch.pad[i], drop.as_deref_mut());
                let logits = net.class_logits(g, enc, &batch.pad[i]);
                parts.push(g.cross_entropy(logits, &[Some(label)], 0.0));
            }
        }
    }
    let total = g.sum(&parts);
    Ok((g.scale(total, 1.0 / count as f64), count))
}

fn eval_loss(ckpt: &Checkpoint, obj: &Objective<'_>) -> Result<(f64, usize), ModelError> {
    let mut g = Graph::new(ckpt.params());
    let (loss, n) = build_loss(&mut g, ckpt, obj, None)?;
    Ok((g.scalar(loss), n))
}

/// Mean token cross-entropy over non-pad targets, and the token count.
pub fn seq2seq_loss(ckpt: &Checkpoint, batch: &Batch, label_smoothing: f64) -> Result<(f64, usize), ModelError> {
    eval_loss(ckpt, &Objective::Seq2Seq { batch, label_smoothing })
}

/// Mean cross-entropy at masked positions, and the masked count.
pub fn mlm_loss(ckpt: &Checkpoint, batch: &MaskedBatch) -> Result<(f64, usize), ModelError> {
    eval_loss(ckpt, &Objective::Mlm(batch))
}

/// Mean classification cross-entropy, and the number of sequences.
pub fn classify_loss(ckpt: &Checkpoint, batch: &ClassBatch) -> Result<(f64, usize), ModelError> {
    eval_loss(ckpt, &Objective::Classify(batch))
}

/// Decoder logits (`tgt_len × vocab_size`) for every item in the batch.
pub fn forward(ckpt: &Checkpoint, batch: &Batch) -> Result<Vec<Mat>, ModelError> {
    check_ids(ckpt, &batch.src)?;
    check_ids(ckpt, &batch.tgt_in)?;
    let net = ckpt.net();
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut g = Graph::new(ckpt.params());
        let enc = net.encode(&mut g, &batch.src[i], &batch.src_pad[i], None);
        let dec = net.decode(&mut g, enc, &batch.src_pad[i], &batch.tgt_in[i], &batch.tgt_pad[i], None);
        let logits = net.lm_logits(&mut g, dec);
        out.push(g.value(logits).clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig};
    use super::*;
    use crate::tokenize::{MASK_ID, PAD_ID};

    fn tiny() -> Checkpoint {
        init_model(&ModelConfig::tiny(30), 3).unwrap()
    }

    fn zero_output(ckpt: &mut Checkpoint) {
        for name in ["embed", "out.bias", "mlm.bias"] {
            for v in ckpt.params_mut().by_name_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut c = tiny();
        zero_output(&mut c);
        let b = Batch::new(&[(vec![8, 9, 10], vec![11, 12]), (vec![8], vec![13])]);
        for eps in [0.0, 0.1] {
            let (l, n) = seq2seq_loss(&c, &b, eps).unwrap();
            assert_eq!(n, 5);
            assert!((l - 30f64.ln()).abs() < 1e-6);
        }
        let mb = MaskedBatch::new(&[(vec![8, MASK_ID, 10], vec![None, Some(9), None])]);
        let (l, n) = mlm_loss(&c, &mb).unwrap();
        assert_eq!(n, 1);
        assert!((l - 30f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn mlm_scores_only_masked_positions() {
        let c = tiny();
        let a = MaskedBatch::new(&[(vec![8, MASK_ID, 10, 11], vec![None, Some(9), None, None])]);
        // An extra sequence with nothing selected contributes nothing.
        let b = MaskedBatch::new(&[
            (vec![8, MASK_ID, 10, 11], vec![None, Some(9), None, None]),
            (vec![12, 13, 14], vec![None, None, None]),
        ]);
        assert_eq!(mlm_loss(&c, &a).unwrap(), mlm_loss(&c, &b).unwrap());
    }

    #[test]
    fn errors_on_empty_targets_and_overflow() {
        let c = tiny();
        let mb = MaskedBatch::new(&[(vec![8, 9], vec![None, None])]);
        assert!(matches!(mlm_loss(&c, &mb), Err(ModelError::NoMaskedPositions)));
        let long = Batch::new(&[(vec![8; 100], vec![9])]);
        assert!(matches!(seq2seq_loss(&c, &long, 0.0), Err(ModelError::LengthOverflow { .. })));
        let mut allpad = Batch::new(&[(vec![8], vec![9])]);
        for p in allpad.tgt_pad.iter_mut().flatten() {
            *p = true;
        }
        assert!(matches!(seq2seq_loss(&c, &allpad, 0.0), Err(ModelError::EmptyTargets)));
        let oov = Batch::new(&[(vec![99], vec![9])]);
        assert!(matches!(forward(&c, &oov), Err(ModelError::TokenOutOfRange { .. })));
    }

    #[test]
    fn pad_contents_do_not_leak() {
        let c = tiny();
        let b = Batch::new(&[(vec![8, 9, 10, 11], vec![12, 13, 14]), (vec![8, 9], vec![12])]);
        let base = forward(&c, &b).unwrap();
        let mut perturbed = b.clone();
        perturbed.src[1][2] = 20;
        perturbed.src[1][3] = 21;
        perturbed.tgt_in[1][3] = 22;
        let again = forward(&c, &perturbed).unwrap();
        assert_eq!(base[0], again[0]);
        for t in 0..2 {
            assert_eq!(base[1].row(t), again[1].row(t));
        }
        // Same sequence without padding at all.
        let solo = forward(&c, &Batch::new(&[(vec![8, 9], vec![12])])).unwrap();
        for t in 0..2 {
            for (x, y) in solo[0].row(t).iter().zip(base[1].row(t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(PAD_ID, 0);
    }

    #[test]
    fn decoder_is_causal() {
        let c = tiny();
        let a = forward(&c, &Batch::new(&[(vec![8, 9], vec![12, 13, 14, 15])])).unwrap();
        let b = forward(&c, &Batch::new(&[(vec![8, 9], vec![12, 13, 20, 21])])).unwrap();
        // tgt_in = [bos, 12, 13, x, y]: positions 0..=2 see only shared prefix
        for t in 0..=2 {
            assert_eq!(a[0].row(t), b[0].row(t));
        }
        assert_ne!(a[0].row(3), b[0].row(3));
    }
}
