//! Parameter layout of the encoder. The same tree shape is reused for
//! weights (`f32`), gradients (`f64`), and optimizer moments (`f64`),
//! and a name-based visitor gives checkpointing, the optimizer, and
//! gradient checks a single flat view of every tensor.

use super::tensor::{Mat, Tensor2, TensorBase};
use super::ModelConfig;
use crate::context::ContextSettings;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scale of the normal distribution used for weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NormTree<T> {
    pub gamma: TensorBase<T>, // 1 × d
    pub beta: TensorBase<T>,  // 1 × d
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTree<T> {
    pub attn_norm: NormTree<T>,
    pub wq: TensorBase<T>, // d × d
    pub bq: TensorBase<T>, // 1 × d
    pub wk: TensorBase<T>,
    pub bk: TensorBase<T>,
    pub wv: TensorBase<T>,
    pub bv: TensorBase<T>,
    pub wo: TensorBase<T>,
    pub bo: TensorBase<T>,
    pub ffn_norm: NormTree<T>,
    pub w1: TensorBase<T>, // d × d_ff
    pub b1: TensorBase<T>, // 1 × d_ff
    pub w2: TensorBase<T>, // d_ff × d
    pub b2: TensorBase<T>, // 1 × d
}

/// Every trainable tensor of the model. The five embedding tables are
/// summed into the input; the last row of each metadata table (team,
/// chat type, player) is the neutral row, pinned at zero and excluded
/// from gradient accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree<T> {
    pub token_emb: TensorBase<T>,  // vocab × d
    pub pos_emb: TensorBase<T>,    // max_tokens × d
    pub team_emb: TensorBase<T>,   // team_slots + 1 × d
    pub chat_emb: TensorBase<T>,   // 3 × d
    pub player_emb: TensorBase<T>, // player_slots + 1 × d
    pub blocks: Vec<BlockTree<T>>,
    pub final_norm: NormTree<T>,
    pub classifier_w: TensorBase<T>, // d × n_classes
    pub classifier_b: TensorBase<T>, // 1 × n_classes
}

pub type ParamSet = ParamTree<f32>;
pub type Gradients = ParamTree<f64>;

impl<T: Copy + Default> ParamTree<T> {
    /// Flat `(name, tensor)` view in a fixed order shared by all trees.
    pub fn visit(&self) -> Vec<(String, &TensorBase<T>)> {
        let mut out: Vec<(String, &TensorBase<T>)> = vec![
            ("token_emb".into(), &self.token_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("team_emb".into(), &self.team_emb),
            ("chat_emb".into(), &self.chat_emb),
            ("player_emb".into(), &self.player_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.attn_norm.gamma"), &b.attn_norm.gamma));
            out.push((format!("block{i}.attn_norm.beta"), &b.attn_norm.beta));
            out.push((format!("block{i}.wq"), &b.wq));
            out.push((format!("block{i}.bq"), &b.bq));
            out.push((format!("block{i}.wk"), &b.wk));
            out.push((format!("block{i}.bk"), &b.bk));
            out.push((format!("block{i}.wv"), &b.wv));
            out.push((format!("block{i}.bv"), &b.bv));
            out.push((format!("block{i}.wo"), &b.wo));
            out.push((format!("block{i}.bo"), &b.bo));
            out.push((format!("block{i}.ffn_norm.gamma"), &b.ffn_norm.gamma));
            out.push((format!("block{i}.ffn_norm.beta"), &b.ffn_norm.beta));
            out.push((format!("block{i}.w1"), &b.w1));
            out.push((format!("block{i}.b1"), &b.b1));
            out.push((format!("block{i}.w2"), &b.w2));
            out.push((format!("block{i}.b2"), &b.b2));
        }
        out.push(("final_norm.gamma".into(), &self.final_norm.gamma));
        out.push(("final_norm.beta".into(), &self.final_norm.beta));
        out.push(("classifier.w".into(), &self.classifier_w));
        out.push(("classifier.b".into(), &self.classifier_b));
        out
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut TensorBase<T>)> {
        let mut out: Vec<(String, &mut TensorBase<T>)> = vec![
            ("token_emb".into(), &mut self.token_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("team_emb".into(), &mut self.team_emb),
            ("chat_emb".into(), &mut self.chat_emb),
            ("player_emb".into(), &mut self.player_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.attn_norm.gamma"), &mut b.attn_norm.gamma));
            out.push((format!("block{i}.attn_norm.beta"), &mut b.attn_norm.beta));
            out.push((format!("block{i}.wq"), &mut b.wq));
            out.push((format!("block{i}.bq"), &mut b.bq));
            out.push((format!("block{i}.wk"), &mut b.wk));
            out.push((format!("block{i}.bk"), &mut b.bk));
            out.push((format!("block{i}.wv"), &mut b.wv));
            out.push((format!("block{i}.bv"), &mut b.bv));
            out.push((format!("block{i}.wo"), &mut b.wo));
            out.push((format!("block{i}.bo"), &mut b.bo));
            out.push((format!("block{i}.ffn_norm.gamma"), &mut b.ffn_norm.gamma));
            out.push((format!("block{i}.ffn_norm.beta"), &mut b.ffn_norm.beta));
            out.push((format!("block{i}.w1"), &mut b.w1));
            out.push((format!("block{i}.b1"), &mut b.b1));
            out.push((format!("block{i}.w2"), &mut b.w2));
            out.push((format!("block{i}.b2"), &mut b.b2));
        }
        out.push(("final_norm.gamma".into(), &mut self.final_norm.gamma));
        out.push(("final_norm.beta".into(), &mut self.final_norm.beta));
        out.push(("classifier.w".into(), &mut self.classifier_w));
        out.push(("classifier.b".into(), &mut self.classifier_b));
        out
    }
}

/// Applies `f` to every tensor, preserving the tree structure.
pub fn map_tree<S, T>(
    src: &ParamTree<S>,
    f: impl Fn(&TensorBase<S>) -> TensorBase<T>,
) -> ParamTree<T> {
    let fn_norm = |n: &NormTree<S>| NormTree { gamma: f(&n.gamma), beta: f(&n.beta) };
    ParamTree {
        token_emb: f(&src.token_emb),
        pos_emb: f(&src.pos_emb),
        team_emb: f(&src.team_emb),
        chat_emb: f(&src.chat_emb),
        player_emb: f(&src.player_emb),
        blocks: src
            .blocks
            .iter()
            .map(|b| BlockTree {
                attn_norm: fn_norm(&b.attn_norm),
                wq: f(&b.wq),
                bq: f(&b.bq),
                wk: f(&b.wk),
                bk: f(&b.bk),
                wv: f(&b.wv),
                bv: f(&b.bv),
                wo: f(&b.wo),
                bo: f(&b.bo),
                ffn_norm: fn_norm(&b.ffn_norm),
                w1: f(&b.w1),
                b1: f(&b.b1),
                w2: f(&b.w2),
                b2: f(&b.b2),
            })
            .collect(),
        final_norm: fn_norm(&src.final_norm),
        classifier_w: f(&src.classifier_w),
        classifier_b: f(&src.classifier_b),
    }
}

/// Builds a tree of the same shapes as `like`, filled with zeros of a
/// possibly different dtype.
pub fn zeros_like<S: Copy + Default, T: Copy + Default>(like: &ParamTree<S>) -> ParamTree<T> {
    map_tree(like, |t| TensorBase::zeros(t.rows(), t.cols()))
}

/// Copies the whole tree into the compute dtype, done once per batch so
/// the inner loops never convert.
pub fn widen_tree(params: &ParamSet) -> ParamTree<f64> {
    map_tree(params, Tensor2::widen)
}

/// Standard normal sample via Box–Muller, driven by the seeded stream.
fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = INIT_STD * sample_normal(rng);
    }
    m.quantize()
}

fn ones(cols: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(1, cols);
    t.fill(1.0);
    t
}

impl ParamSet {
    /// Random initialization: weights ~ N(0, 0.02²), biases zero, norm
    /// scales one. The neutral (last) row of each metadata table is
    /// zeroed so untracked positions contribute nothing to the sum.
    pub fn init(
        model: &ModelConfig,
        context: &ContextSettings,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamSet {
        let d = model.d_model;
        let norm = || NormTree { gamma: ones(d), beta: Tensor2::zeros(1, d) };
        let mut set = ParamSet {
            token_emb: random_tensor(vocab_size, d, rng),
            pos_emb: random_tensor(context.max_tokens, d, rng),
            team_emb: random_tensor(context.team_rows(), d, rng),
            chat_emb: random_tensor(context.chat_type_rows(), d, rng),
            player_emb: random_tensor(context.player_rows(), d, rng),
            blocks: (0..model.n_layers)
                .map(|_| BlockTree {
                    attn_norm: norm(),
                    wq: random_tensor(d, d, rng),
                    bq: Tensor2::zeros(1, d),
                    wk: random_tensor(d, d, rng),
                    bk: Tensor2::zeros(1, d),
                    wv: random_tensor(d, d, rng),
                    bv: Tensor2::zeros(1, d),
                    wo: random_tensor(d, d, rng),
                    bo: Tensor2::zeros(1, d),
                    ffn_norm: norm(),
                    w1: random_tensor(d, model.d_ff, rng),
                    b1: Tensor2::zeros(1, model.d_ff),
                    w2: random_tensor(model.d_ff, d, rng),
                    b2: Tensor2::zeros(1, d),
                })
                .collect(),
            final_norm: norm(),
            classifier_w: random_tensor(d, model.label_space.n_classes(), rng),
            classifier_b: Tensor2::zeros(1, model.label_space.n_classes()),
        };
        for table in [&mut set.team_emb, &mut set.chat_emb, &mut set.player_emb] {
            let last = table.rows() - 1;
            table.row_mut(last).fill(0.0);
        }
        set
    }

    /// The frozen neutral row index of a metadata table.
    pub fn neutral_row(table: &Tensor2) -> usize {
        table.rows() - 1
    }
}
