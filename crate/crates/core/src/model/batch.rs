use crate::tokenize::{BOS_ID, EOS_ID, PAD_ID};

fn pad_to(seqs: &[Vec<u32>]) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(seqs.len());
    let mut pad = Vec::with_capacity(seqs.len());
    for s in seqs {
        let mut row = s.clone();
        row.resize(width, PAD_ID);
        let mut m = vec![false; s.len()];
        m.resize(width, true);
        ids.push(row);
        pad.push(m);
    }
    (ids, pad)
}

/// Padded sequence-to-sequence batch. `true` in a pad mask marks padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub src_pad: Vec<Vec<bool>>,
    pub tgt_in: Vec<Vec<u32>>,
    pub tgt_out: Vec<Vec<u32>>,
    pub tgt_pad: Vec<Vec<bool>>,
}

impl Batch {
    /// `src` sequences are used verbatim; each target gets `<bos>` prepended
    /// for the decoder input and `<eos>` appended for the output.
    pub fn new(pairs: &[(Vec<u32>, Vec<u32>)]) -> Self {
        let srcs: Vec<Vec<u32>> = pairs.iter().map(|(s, _)| s.clone()).collect();
        let ins: Vec<Vec<u32>> = pairs.iter().map(|(_, t)| std::iter::once(BOS_ID).chain(t.iter().copied()).collect()).collect();
        let outs: Vec<Vec<u32>> = pairs.iter().map(|(_, t)| t.iter().copied().chain(std::iter::once(EOS_ID)).collect()).collect();
        let (src, src_pad) = pad_to(&srcs);
        let (tgt_in, tgt_pad) = pad_to(&ins);
        let (tgt_out, _) = pad_to(&outs);
        Batch { src, src_pad, tgt_in, tgt_out, tgt_pad }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn target_tokens(&self) -> usize {
        self.tgt_pad.iter().flatten().filter(|p| !**p).count()
    }
}

/// Encoder-only batch for masked-LM training.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub ids: Vec<Vec<u32>>,
    pub pad: Vec<Vec<bool>>,
    /// Original token at each selected position, `None` elsewhere.
    pub labels: Vec<Vec<Option<u32>>>,
}

impl MaskedBatch {
    pub fn new(items: &[(Vec<u32>, Vec<Option<u32>>)]) -> Self {
        let seqs: Vec<Vec<u32>> = items.iter().map(|(s, _)| s.clone()).collect();
        let (ids, pad) = pad_to(&seqs);
        let width = ids.first().map_or(0, Vec::len);
        let labels = items
            .iter()
            .map(|(_, l)| {
                let mut l = l.clone();
                l.resize(width, None);
                l
            })
            .collect();
        MaskedBatch { ids, pad, labels }
    }

    pub fn masked_count(&self) -> usize {
        self.labels.iter().flatten().filter(|l| l.is_some()).count()
    }
}

/// Labeled sequences for the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBatch {
    pub ids: Vec<Vec<u32>>,
    pub pad: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

impl ClassBatch {
    pub fn new(items: &[(Vec<u32>, usize)]) -> Self {
        let seqs: Vec<Vec<u32>> = items.iter().map(|(s, _)| s.clone()).collect();
        let (ids, pad) = pad_to(&seqs);
        ClassBatch { ids, pad, labels: items.iter().map(|(_, l)| *l).collect() }
    }
}
