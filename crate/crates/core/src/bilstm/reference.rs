//! Cache-free forward pass in double-double precision, used as the
//! finite-difference oracle for the hand-written backward pass.
//!
//! Kept deliberately separate from the training forward pass: it re-reads
//! parameters by block index and recomputes every gate from scratch.

use super::dd::Dd;
use super::{BiLstmModel, LabeledContext};
use crate::corpus::{EmbeddingTable, Token};

// Block indices in `BiLstmParams::blocks` order.
const FORWARD: usize = 0;
const BACKWARD: usize = 8;
const DENSE1_W: usize = 16;
const DENSE1_B: usize = 17;
const DENSE2_W: usize = 18;
const DENSE2_B: usize = 19;
const UNKNOWN: usize = 20;

/// A single parameter entry replaced by an exact double-double value.
#[derive(Clone, Copy)]
pub(super) struct Override {
    pub block: usize,
    pub index: usize,
    pub value: Dd,
}

struct Params {
    blocks: Vec<Vec<Dd>>,
    cols: Vec<usize>,
}

impl Params {
    fn new(model: &BiLstmModel, change: Option<Override>) -> Self {
        let named = model.params.blocks();
        let mut blocks: Vec<Vec<Dd>> = named
            .iter()
            .map(|(_, t)| t.data.iter().copied().map(Dd::from_f64).collect())
            .collect();
        let cols = named
            .iter()
            .map(|(_, t)| t.shape.last().copied().unwrap_or(1))
            .collect();
        if let Some(o) = change {
            blocks[o.block][o.index] = o.value;
        }
        Self { blocks, cols }
    }

    /// `W x + b` with `W` stored row-major in `w`.
    fn affine(&self, w: usize, b: usize, x: &[Dd]) -> Vec<Dd> {
        let cols = self.cols[w];
        self.blocks[b]
            .iter()
            .enumerate()
            .map(|(r, bias)| {
                let row = &self.blocks[w][r * cols..(r + 1) * cols];
                row.iter().zip(x).fold(*bias, |acc, (a, v)| acc + *a * *v)
            })
            .collect()
    }

    fn cell(&self, base: usize, inputs: &[Vec<Dd>]) -> Vec<Dd> {
        let hidden = self.blocks[base + 4].len();
        let mut h = vec![Dd::ZERO; hidden];
        let mut c = vec![Dd::ZERO; hidden];
        for x in inputs {
            let mut concat = x.clone();
            concat.extend_from_slice(&h);
            let i = self.affine(base, base + 4, &concat);
            let f = self.affine(base + 1, base + 5, &concat);
            let o = self.affine(base + 2, base + 6, &concat);
            let g = self.affine(base + 3, base + 7, &concat);
            for k in 0..hidden {
                c[k] = f[k].sigmoid() * c[k] + i[k].sigmoid() * g[k].tanh();
                h[k] = o[k].sigmoid() * c[k].tanh();
            }
        }
        h
    }
}

fn embed(params: &Params, table: &EmbeddingTable, token: &Token) -> Vec<Dd> {
    match table.embed(token) {
        Some(v) => v.iter().copied().map(Dd::from_f64).collect(),
        None => params.blocks[UNKNOWN].clone(),
    }
}

pub(super) fn loss(
    model: &BiLstmModel,
    sample: &LabeledContext,
    table: &EmbeddingTable,
    change: Option<Override>,
) -> Dd {
    let p = Params::new(model, change);
    let keep = model.hyper.max_context;
    let skip = sample.left.len().saturating_sub(keep);
    let left: Vec<Vec<Dd>> = sample.left[skip..].iter().map(|t| embed(&p, table, t)).collect();
    let right: Vec<Vec<Dd>> = sample
        .right
        .iter()
        .take(keep)
        .rev()
        .map(|t| embed(&p, table, t))
        .collect();

    let mut joined = p.cell(FORWARD, &left);
    joined.extend(p.cell(BACKWARD, &right));
    let hidden: Vec<Dd> = p
        .affine(DENSE1_W, DENSE1_B, &joined)
        .into_iter()
        .map(Dd::tanh)
        .collect();
    let logit = p.affine(DENSE2_W, DENSE2_B, &hidden)[0];
    if sample.label == 1 {
        (-logit).softplus() * Dd::from_f64(model.hyper.pos_weight)
    } else {
        logit.softplus()
    }
}
