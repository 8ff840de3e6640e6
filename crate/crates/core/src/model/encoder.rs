//! Forward and backward passes of the encoder, written as explicit
//! loops in `f64` so every analytic gradient can be checked against
//! central finite differences.
//!
//! Architecture: summed five-table input embedding → pre-norm residual
//! blocks (multi-head self-attention with a padding-aware key mask,
//! then a GELU feed-forward) → final layer norm → linear → per-token
//! softmax. Dropout is applied to the embedding sum and to each
//! sub-block output, only when a dropout stream is supplied.

use super::params::{widen_tree, Gradients, ParamSet, ParamTree};
use super::tensor::Mat;
use super::{ModelConfig, ModelError};
use crate::context::EncodedSequence;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-12;
/// Additive score mask for padded keys; large enough to zero them out
/// after softmax, small enough to stay finite.
const SCORE_MASK: f64 = -1e30;
/// `[PAD]` always has id 0; the tokenizer guarantees the special-token
/// layout.
const PAD_ID: usize = 0;

/// One supervised sequence: `gold[k]` is the head index of the k-th
/// position whose `loss_mask` is set.
#[derive(Debug, Clone)]
pub struct Example {
    pub seq: EncodedSequence,
    pub gold: Vec<usize>,
}

/// Input embedding: for every position, the sum of the token, position,
/// team, chat-type, and player rows selected by the sequence tracks.
pub fn embed_sequence(params: &ParamSet, seq: &EncodedSequence) -> Result<Mat, ModelError> {
    embed_wide(&widen_tree(params), seq)
}

fn check_track(index: usize, rows: usize, track: &'static str) -> Result<(), ModelError> {
    if index >= rows {
        return Err(ModelError::TrackOutOfRange { track, index, rows });
    }
    Ok(())
}

fn embed_wide(params: &ParamTree<f64>, seq: &EncodedSequence) -> Result<Mat, ModelError> {
    if !seq.tracks_consistent() {
        return Err(ModelError::ShapeMismatch("sequence tracks have unequal lengths".into()));
    }
    let d = params.token_emb.cols();
    let mut x = Mat::zeros(seq.len(), d);
    for i in 0..seq.len() {
        check_track(seq.token_ids[i], params.token_emb.rows(), "token")?;
        check_track(seq.positions[i], params.pos_emb.rows(), "position")?;
        check_track(seq.team_track[i], params.team_emb.rows(), "team")?;
        check_track(seq.chat_type_track[i], params.chat_emb.rows(), "chat_type")?;
        check_track(seq.player_track[i], params.player_emb.rows(), "player")?;
        let row = x.row_mut(i);
        for (source, index) in [
            (&params.token_emb, seq.token_ids[i]),
            (&params.pos_emb, seq.positions[i]),
            (&params.team_emb, seq.team_track[i]),
            (&params.chat_emb, seq.chat_type_track[i]),
            (&params.player_emb, seq.player_track[i]),
        ] {
            for (acc, &v) in row.iter_mut().zip(source.row(index)) {
                *acc += v;
            }
        }
    }
    Ok(x)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct NormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> (Mat, NormCache) {
    let (n, d) = x.shape();
    let mut out = Mat::zeros(n, d);
    let mut xhat = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for c in 0..d {
            let h = (row[c] - mean) * inv;
            xhat.set(i, c, h);
            out.set(i, c, gamma.get(0, c) * h + beta.get(0, c));
        }
    }
    (out, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Mat,
    cache: &NormCache,
    gamma: &Mat,
    dgamma: &mut Mat,
    dbeta: &mut Mat,
) -> Mat {
    let (n, d) = dy.shape();
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy.get(i, c);
            let h = cache.xhat.get(i, c);
            dbeta.set(0, c, dbeta.get(0, c) + g);
            dgamma.set(0, c, dgamma.get(0, c) + g * h);
            let dxhat = g * gamma.get(0, c);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * h;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let inv = cache.inv_std[i];
        for c in 0..d {
            let dxhat = dy.get(i, c) * gamma.get(0, c);
            let h = cache.xhat.get(i, c);
            dx.set(i, c, inv * (dxhat - mean_dxhat - h * mean_dxhat_xhat));
        }
    }
    dx
}

/// `x·w + b` with `b` broadcast over rows.
fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut out = x.matmul(w);
    for i in 0..out.rows() {
        for (o, &bias) in out.row_mut(i).iter_mut().zip(b.row(0)) {
            *o += bias;
        }
    }
    out
}

/// Accumulates `dw`, `db` and returns `dx` for `y = x·w + b`.
fn linear_backward(x: &Mat, w: &Mat, dy: &Mat, dw: &mut Mat, db: &mut Mat) -> Mat {
    dw.add_assign(&x.matmul_transa(dy));
    for i in 0..dy.rows() {
        for (acc, &g) in db.row_mut(0).iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
    dy.matmul_transb(w)
}

/// Inverted-dropout multipliers: `None` means identity (evaluation, or
/// rate zero).
struct DropMask(Option<Mat>);

fn apply_dropout(x: &mut Mat, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> DropMask {
    let Some(rng) = rng.as_deref_mut() else {
        return DropMask(None);
    };
    if rate == 0.0 {
        return DropMask(None);
    }
    let keep = 1.0 - rate;
    let mut mask = Mat::zeros(x.rows(), x.cols());
    for (m, v) in mask.data_mut().iter_mut().zip(x.data_mut()) {
        *m = if rng.random_bool(keep) { 1.0 / keep } else { 0.0 };
        *v *= *m;
    }
    DropMask(Some(mask))
}

fn dropout_backward(dy: &mut Mat, mask: &DropMask) {
    if let Some(mask) = &mask.0 {
        for (g, &m) in dy.data_mut().iter_mut().zip(mask.data()) {
            *g *= m;
        }
    }
}

fn softmax_rows(m: &mut Mat) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct BlockCache {
    ln1: NormCache,
    ln1_out: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention distribution of each head, rows = queries.
    head_probs: Vec<Mat>,
    attn_concat: Mat,
    attn_drop: DropMask,
    ln2: NormCache,
    ln2_out: Mat,
    ffn_pre: Mat,
    ffn_act: Mat,
    ffn_drop: DropMask,
}

struct Cache {
    emb_drop: DropMask,
    blocks: Vec<BlockCache>,
    final_ln: NormCache,
    final_out: Mat,
    probs: Mat,
}

fn check_shapes(params: &ParamTree<f64>, cfg: &ModelConfig) -> Result<(), ModelError> {
    cfg.validate()?;
    if params.token_emb.cols() != cfg.d_model {
        return Err(ModelError::ShapeMismatch(format!(
            "token table width {} != d_model {}",
            params.token_emb.cols(),
            cfg.d_model
        )));
    }
    if params.blocks.len() != cfg.n_layers {
        return Err(ModelError::ShapeMismatch(format!(
            "{} blocks != n_layers {}",
            params.blocks.len(),
            cfg.n_layers
        )));
    }
    if params.classifier_w.cols() != cfg.n_classes() {
        return Err(ModelError::ShapeMismatch(format!(
            "classifier width {} != {} classes",
            params.classifier_w.cols(),
            cfg.n_classes()
        )));
    }
    Ok(())
}

fn forward_cached(
    params: &ParamTree<f64>,
    cfg: &ModelConfig,
    seq: &EncodedSequence,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Mat, Cache), ModelError> {
    let n = seq.len();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let pad: Vec<bool> = seq.token_ids.iter().map(|&t| t == PAD_ID).collect();

    let mut x = embed_wide(params, seq)?;
    let emb_drop = apply_dropout(&mut x, cfg.dropout, &mut dropout_rng);

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        // Attention sub-block on the normalized input.
        let (ln1_out, ln1) = layer_norm(&x, &block.attn_norm.gamma, &block.attn_norm.beta);
        let q = linear(&ln1_out, &block.wq, &block.bq);
        let k = linear(&ln1_out, &block.wk, &block.bk);
        let v = linear(&ln1_out, &block.wv, &block.bv);
        let mut head_probs = Vec::with_capacity(n_heads);
        let mut attn_concat = Mat::zeros(n, d);
        for h in 0..n_heads {
            let off = h * dh;
            let mut scores = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if pad[j] {
                        scores.set(i, j, SCORE_MASK);
                        continue;
                    }
                    let mut dot = 0.0;
                    for t in 0..dh {
                        dot += q.get(i, off + t) * k.get(j, off + t);
                    }
                    scores.set(i, j, dot * scale);
                }
            }
            softmax_rows(&mut scores);
            for i in 0..n {
                for j in 0..n {
                    let p = scores.get(i, j);
                    if p == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        let acc = attn_concat.get(i, off + t) + p * v.get(j, off + t);
                        attn_concat.set(i, off + t, acc);
                    }
                }
            }
            head_probs.push(scores);
        }
        let mut attn_out = linear(&attn_concat, &block.wo, &block.bo);
        let attn_drop = apply_dropout(&mut attn_out, cfg.dropout, &mut dropout_rng);
        x.add_assign(&attn_out);

        // Feed-forward sub-block.
        let (ln2_out, ln2) = layer_norm(&x, &block.ffn_norm.gamma, &block.ffn_norm.beta);
        let ffn_pre = linear(&ln2_out, &block.w1, &block.b1);
        let mut ffn_act = Mat::zeros(ffn_pre.rows(), ffn_pre.cols());
        for (a, &p) in ffn_act.data_mut().iter_mut().zip(ffn_pre.data()) {
            *a = gelu(p);
        }
        let mut ffn_out = linear(&ffn_act, &block.w2, &block.b2);
        let ffn_drop = apply_dropout(&mut ffn_out, cfg.dropout, &mut dropout_rng);
        x.add_assign(&ffn_out);

        blocks.push(BlockCache {
            ln1,
            ln1_out,
            q,
            k,
            v,
            head_probs,
            attn_concat,
            attn_drop,
            ln2,
            ln2_out,
            ffn_pre,
            ffn_act,
            ffn_drop,
        });
    }

    let (final_out, final_ln) = layer_norm(&x, &params.final_norm.gamma, &params.final_norm.beta);
    let mut probs = linear(&final_out, &params.classifier_w, &params.classifier_b);
    softmax_rows(&mut probs);
    let cache = Cache { emb_drop, blocks, final_ln, final_out, probs: probs.clone() };
    Ok((probs, cache))
}

/// Per-token class distributions, `len × n_classes`, rows summing to 1.
/// Dropout is off: this is the inference path.
pub fn forward(
    params: &ParamSet,
    cfg: &ModelConfig,
    seq: &EncodedSequence,
) -> Result<Mat, ModelError> {
    let wide = widen_tree(params);
    check_shapes(&wide, cfg)?;
    forward_cached(&wide, cfg, seq, None).map(|(probs, _)| probs)
}

fn masked_positions(seq: &EncodedSequence) -> Vec<usize> {
    seq.loss_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| if m { Some(i) } else { None })
        .collect()
}

fn check_example(ex: &Example, n_classes: usize) -> Result<usize, ModelError> {
    let masked = masked_positions(&ex.seq).len();
    if masked != ex.gold.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} gold labels for {} supervised positions",
            ex.gold.len(),
            masked
        )));
    }
    if let Some(&bad) = ex.gold.iter().find(|&&g| g >= n_classes) {
        return Err(ModelError::ShapeMismatch(format!(
            "gold head index {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(masked)
}

/// Mean masked cross-entropy of a batch, forward only (no dropout).
pub fn batch_loss(params: &ParamSet, cfg: &ModelConfig, batch: &[Example]) -> Result<f64, ModelError> {
    let wide = widen_tree(params);
    check_shapes(&wide, cfg)?;
    let mut total = 0usize;
    for ex in batch {
        total += check_example(ex, cfg.n_classes())?;
    }
    if total == 0 {
        return Err(ModelError::EmptySupervision);
    }
    let mut loss = 0.0;
    for ex in batch {
        let (probs, _) = forward_cached(&wide, cfg, &ex.seq, None)?;
        for (pos, &gold) in masked_positions(&ex.seq).iter().zip(&ex.gold) {
            loss -= probs.get(*pos, gold).max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(loss / total as f64)
}

/// Mean masked cross-entropy and its gradient for every parameter.
/// `grads` is overwritten. Supplying a dropout stream enables dropout
/// at the rate in `cfg`; the same stream state reproduces the same
/// masks.
pub fn loss_and_grad(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &[Example],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    grads: &mut Gradients,
) -> Result<f64, ModelError> {
    let wide = widen_tree(params);
    check_shapes(&wide, cfg)?;
    let mut total = 0usize;
    for ex in batch {
        total += check_example(ex, cfg.n_classes())?;
    }
    if total == 0 {
        return Err(ModelError::EmptySupervision);
    }
    for (_, tensor) in grads.visit_mut() {
        tensor.fill(0.0);
    }
    let inv_total = 1.0 / total as f64;
    let mut loss = 0.0;
    for ex in batch {
        let (probs, cache) = forward_cached(&wide, cfg, &ex.seq, dropout_rng.as_deref_mut())?;
        let positions = masked_positions(&ex.seq);
        for (pos, &gold) in positions.iter().zip(&ex.gold) {
            loss -= probs.get(*pos, gold).max(f64::MIN_POSITIVE).ln();
        }
        backward(&wide, cfg, ex, &cache, inv_total, grads);
    }
    Ok(loss * inv_total)
}

/// Softmax-row backward: `ds = p ⊙ (dp − Σ dp⊙p)` per row.
fn softmax_backward_rows(probs: &Mat, dprobs: &Mat) -> Mat {
    let (n, m) = probs.shape();
    let mut ds = Mat::zeros(n, m);
    for i in 0..n {
        let dot: f64 = probs.row(i).iter().zip(dprobs.row(i)).map(|(&p, &g)| p * g).sum();
        for j in 0..m {
            ds.set(i, j, probs.get(i, j) * (dprobs.get(i, j) - dot));
        }
    }
    ds
}

fn backward(
    params: &ParamTree<f64>,
    cfg: &ModelConfig,
    ex: &Example,
    cache: &Cache,
    inv_total: f64,
    grads: &mut Gradients,
) {
    let n = ex.seq.len();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Fused softmax + cross-entropy: d(logits) = (p − onehot)/total on
    // supervised rows, zero elsewhere.
    let mut dlogits = Mat::zeros(n, cfg.n_classes());
    for (pos, &gold) in masked_positions(&ex.seq).iter().zip(&ex.gold) {
        for c in 0..cfg.n_classes() {
            let delta = if c == gold { 1.0 } else { 0.0 };
            dlogits.set(*pos, c, (cache.probs.get(*pos, c) - delta) * inv_total);
        }
    }

    let dfinal = linear_backward(
        &cache.final_out,
        &params.classifier_w,
        &dlogits,
        &mut grads.classifier_w,
        &mut grads.classifier_b,
    );
    let mut dx = layer_norm_backward(
        &dfinal,
        &cache.final_ln,
        &params.final_norm.gamma,
        &mut grads.final_norm.gamma,
        &mut grads.final_norm.beta,
    );

    for (block, (bp, bg)) in cache
        .blocks
        .iter()
        .zip(params.blocks.iter().zip(grads.blocks.iter_mut()))
        .rev()
    {
        // Feed-forward sub-block: x_out = x_in + drop(W2·gelu(W1·ln2(x_in))).
        let mut dffn = dx.clone();
        dropout_backward(&mut dffn, &block.ffn_drop);
        let dact = linear_backward(&block.ffn_act, &bp.w2, &dffn, &mut bg.w2, &mut bg.b2);
        let mut dpre = Mat::zeros(n, cfg.d_ff);
        for ((g, &up), &pre) in
            dpre.data_mut().iter_mut().zip(dact.data()).zip(block.ffn_pre.data())
        {
            *g = up * gelu_grad(pre);
        }
        let dln2 = linear_backward(&block.ln2_out, &bp.w1, &dpre, &mut bg.w1, &mut bg.b1);
        let dx_ffn = layer_norm_backward(
            &dln2,
            &block.ln2,
            &bp.ffn_norm.gamma,
            &mut bg.ffn_norm.gamma,
            &mut bg.ffn_norm.beta,
        );
        dx.add_assign(&dx_ffn);

        // Attention sub-block: x_mid = x_in + drop(Wo·concat(heads)).
        let mut dattn = dx.clone();
        dropout_backward(&mut dattn, &block.attn_drop);
        let dconcat =
            linear_backward(&block.attn_concat, &bp.wo, &dattn, &mut bg.wo, &mut bg.bo);
        let mut dq = Mat::zeros(n, d);
        let mut dk = Mat::zeros(n, d);
        let mut dv = Mat::zeros(n, d);
        for h in 0..n_heads {
            let off = h * dh;
            let probs = &block.head_probs[h];
            // dP and dV from the weighted sum ctx_i = Σ_j P_ij · v_j.
            let mut dprobs = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let p = probs.get(i, j);
                    let mut dot = 0.0;
                    for t in 0..dh {
                        let up = dconcat.get(i, off + t);
                        dot += up * block.v.get(j, off + t);
                        if p != 0.0 {
                            let acc = dv.get(j, off + t) + p * up;
                            dv.set(j, off + t, acc);
                        }
                    }
                    dprobs.set(i, j, dot);
                }
            }
            let dscores = softmax_backward_rows(probs, &dprobs);
            for i in 0..n {
                for j in 0..n {
                    let s = dscores.get(i, j) * scale;
                    if s == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        let nq = dq.get(i, off + t) + s * block.k.get(j, off + t);
                        dq.set(i, off + t, nq);
                        let nk = dk.get(j, off + t) + s * block.q.get(i, off + t);
                        dk.set(j, off + t, nk);
                    }
                }
            }
        }
        let mut dln1 = linear_backward(&block.ln1_out, &bp.wq, &dq, &mut bg.wq, &mut bg.bq);
        dln1.add_assign(&linear_backward(&block.ln1_out, &bp.wk, &dk, &mut bg.wk, &mut bg.bk));
        dln1.add_assign(&linear_backward(&block.ln1_out, &bp.wv, &dv, &mut bg.wv, &mut bg.bv));
        let dx_attn = layer_norm_backward(
            &dln1,
            &block.ln1,
            &bp.attn_norm.gamma,
            &mut bg.attn_norm.gamma,
            &mut bg.attn_norm.beta,
        );
        dx.add_assign(&dx_attn);
    }

    dropout_backward(&mut dx, &cache.emb_drop);

    // Scatter embedding gradients back into the tables. The last row of
    // each metadata table is the frozen neutral row and receives none.
    let team_neutral = grads.team_emb.rows() - 1;
    let chat_neutral = grads.chat_emb.rows() - 1;
    let player_neutral = grads.player_emb.rows() - 1;
    for i in 0..n {
        let drow = dx.row(i).to_vec();
        let targets: [(&mut Mat, usize, bool); 5] = [
            (&mut grads.token_emb, ex.seq.token_ids[i], true),
            (&mut grads.pos_emb, ex.seq.positions[i], true),
            (&mut grads.team_emb, ex.seq.team_track[i], ex.seq.team_track[i] != team_neutral),
            (
                &mut grads.chat_emb,
                ex.seq.chat_type_track[i],
                ex.seq.chat_type_track[i] != chat_neutral,
            ),
            (
                &mut grads.player_emb,
                ex.seq.player_track[i],
                ex.seq.player_track[i] != player_neutral,
            ),
        ];
        for (table, index, live) in targets {
            if !live {
                continue;
            }
            for (acc, &g) in table.row_mut(index).iter_mut().zip(&drow) {
                *acc += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{
        ContextSettings, EncodedSequence, CHAT_TYPE_ALL, CHAT_TYPE_NEUTRAL, CHAT_TYPE_TEAM,
    };
    use crate::model::params::zeros_like;
    use crate::model::tensor::Tensor2;
    use crate::model::LabelSpace;
    use rand::SeedableRng;

    fn toy_config(d_model: usize, n_layers: usize, n_heads: usize) -> ModelConfig {
        ModelConfig {
            d_model,
            n_layers,
            n_heads,
            d_ff: d_model * 2,
            dropout: 0.0,
            label_space: LabelSpace::Dota,
            seed: 11,
        }
    }

    fn toy_context(max_tokens: usize) -> ContextSettings {
        ContextSettings { max_tokens, team_slots: 2, player_slots: 4, ..ContextSettings::default() }
    }

    fn init(cfg: &ModelConfig, ctx: &ContextSettings, vocab: usize) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        ParamSet::init(cfg, ctx, vocab, &mut rng)
    }

    /// A hand-built sequence resembling [CLS] a b [SEP] with the two
    /// middle tokens supervised.
    fn small_seq() -> EncodedSequence {
        EncodedSequence {
            token_ids: vec![2, 5, 6, 3],
            positions: vec![0, 1, 2, 3],
            team_track: vec![2, 0, 0, 0],
            chat_type_track: vec![CHAT_TYPE_NEUTRAL, CHAT_TYPE_TEAM, CHAT_TYPE_TEAM, CHAT_TYPE_TEAM],
            player_track: vec![4, 0, 0, 0],
            loss_mask: vec![false, true, true, false],
            current_line_span: (1, 3),
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, ctx: &ContextSettings, vocab: usize) -> EncodedSequence {
        let n = rng.random_range(3..ctx.max_tokens);
        let token_ids: Vec<usize> = (0..n).map(|_| rng.random_range(1..vocab)).collect();
        let team_track: Vec<usize> = (0..n).map(|_| rng.random_range(0..=ctx.team_neutral())).collect();
        let chat: Vec<usize> = (0..n).map(|_| rng.random_range(0..=CHAT_TYPE_NEUTRAL)).collect();
        let player: Vec<usize> =
            (0..n).map(|_| rng.random_range(0..=ctx.player_neutral())).collect();
        let mask: Vec<bool> = (0..n).map(|i| i + 2 >= n).collect();
        EncodedSequence {
            token_ids,
            positions: (0..n).collect(),
            team_track,
            chat_type_track: chat,
            player_track: player,
            loss_mask: mask,
            current_line_span: (n - 2, n),
        }
    }

    #[test]
    fn embedding_matches_gather_and_add_oracle() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let seq = random_seq(&mut rng, &ctx, 24);
            let x = embed_sequence(&params, &seq).unwrap();
            for i in 0..seq.len() {
                for c in 0..cfg.d_model {
                    let oracle = params.token_emb.get(seq.token_ids[i], c) as f64
                        + params.pos_emb.get(seq.positions[i], c) as f64
                        + params.team_emb.get(seq.team_track[i], c) as f64
                        + params.chat_emb.get(seq.chat_type_track[i], c) as f64
                        + params.player_emb.get(seq.player_track[i], c) as f64;
                    assert!((x.get(i, c) - oracle).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn embedding_is_additive_in_a_single_track_change() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut seq = small_seq();
        let before = embed_sequence(&params, &seq).unwrap();
        let old = seq.player_track[2];
        seq.player_track[2] = 3;
        let after = embed_sequence(&params, &seq).unwrap();
        for i in 0..seq.len() {
            for c in 0..cfg.d_model {
                let expected = if i == 2 {
                    before.get(i, c) + params.player_emb.get(3, c) as f64
                        - params.player_emb.get(old, c) as f64
                } else {
                    before.get(i, c)
                };
                assert!((after.get(i, c) - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zeroed_tables_embed_to_zero() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let mut params = init(&cfg, &ctx, 24);
        for (_, t) in params.visit_mut() {
            t.fill(0.0);
        }
        let x = embed_sequence(&params, &small_seq()).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_track_ids_are_rejected() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut seq = small_seq();
        seq.team_track[1] = 99;
        match embed_sequence(&params, &seq) {
            Err(ModelError::TrackOutOfRange { track: "team", index: 99, .. }) => {}
            other => panic!("expected track error, got {other:?}"),
        }
    }

    #[test]
    fn forward_rows_are_distributions() {
        let cfg = toy_config(8, 2, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let probs = forward(&params, &cfg, &small_seq()).unwrap();
        assert_eq!(probs.shape(), (4, 3));
        for i in 0..probs.rows() {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            assert!(probs.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn padded_tail_does_not_disturb_real_positions() {
        let cfg = toy_config(8, 2, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let seq = small_seq();
        let plain = forward(&params, &cfg, &seq).unwrap();
        let mut padded = seq.clone();
        for extra in 0..3 {
            padded.token_ids.push(0);
            padded.positions.push(4 + extra);
            padded.team_track.push(2);
            padded.chat_type_track.push(CHAT_TYPE_NEUTRAL);
            padded.player_track.push(4);
            padded.loss_mask.push(false);
        }
        let with_pads = forward(&params, &cfg, &padded).unwrap();
        for i in 0..seq.len() {
            for c in 0..cfg.n_classes() {
                assert!((plain.get(i, c) - with_pads.get(i, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn uniform_head_gives_log_class_count_loss() {
        let cfg = ModelConfig { label_space: LabelSpace::Full, ..toy_config(8, 1, 2) };
        let ctx = toy_context(16);
        let mut params = init(&cfg, &ctx, 24);
        params.classifier_w.fill(0.0);
        params.classifier_b.fill(0.0);
        let ex = Example { seq: small_seq(), gold: vec![0, 4] };
        let loss = batch_loss(&params, &cfg, &[ex]).unwrap();
        assert!((loss - (9.0f64).ln()).abs() <= 1e-9);
    }

    #[test]
    fn confident_correct_head_drives_loss_to_zero() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let mut params = init(&cfg, &ctx, 24);
        params.classifier_w.fill(0.0);
        params.classifier_b.fill(0.0);
        params.classifier_b.set(0, 1, 50.0);
        let ex = Example { seq: small_seq(), gold: vec![1, 1] };
        let loss = batch_loss(&params, &cfg, &[ex]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn batch_without_supervision_is_an_error() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut seq = small_seq();
        seq.loss_mask = vec![false; 4];
        let ex = Example { seq, gold: vec![] };
        assert!(matches!(
            batch_loss(&params, &cfg, &[ex.clone()]),
            Err(ModelError::EmptySupervision)
        ));
        let mut grads = zeros_like(&params);
        assert!(matches!(
            loss_and_grad(&params, &cfg, &[ex], None, &mut grads),
            Err(ModelError::EmptySupervision)
        ));
    }

    #[test]
    fn mismatched_gold_length_is_an_error() {
        let cfg = toy_config(8, 1, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let ex = Example { seq: small_seq(), gold: vec![0] };
        assert!(matches!(batch_loss(&params, &cfg, &[ex]), Err(ModelError::ShapeMismatch(_))));
        let bad_class = Example { seq: small_seq(), gold: vec![0, 9] };
        assert!(matches!(
            batch_loss(&params, &cfg, &[bad_class]),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    /// Straight-line re-implementation of the whole network for one
    /// layer and one head, written directly from the layer formulas
    /// with plain nested vectors and no shared helper code.
    fn reference_forward(params: &ParamSet, cfg: &ModelConfig, seq: &EncodedSequence) -> Vec<Vec<f64>> {
        let n = seq.len();
        let d = cfg.d_model;
        let b = &params.blocks[0];
        let get = |t: &Tensor2, r: usize, c: usize| t.get(r, c) as f64;

        // Embedding sum.
        let mut x = vec![vec![0.0f64; d]; n];
        for i in 0..n {
            for c in 0..d {
                x[i][c] = get(&params.token_emb, seq.token_ids[i], c)
                    + get(&params.pos_emb, seq.positions[i], c)
                    + get(&params.team_emb, seq.team_track[i], c)
                    + get(&params.chat_emb, seq.chat_type_track[i], c)
                    + get(&params.player_emb, seq.player_track[i], c);
            }
        }

        let layer_norm = |row: &[f64], gamma: &Tensor2, beta: &Tensor2| -> Vec<f64> {
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let var: f64 =
                row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            row.iter()
                .enumerate()
                .map(|(c, v)| {
                    (v - mean) / (var + 1e-12).sqrt() * gamma.get(0, c) as f64
                        + beta.get(0, c) as f64
                })
                .collect()
        };

        // Pre-norm attention with a single head.
        let h: Vec<Vec<f64>> =
            (0..n).map(|i| layer_norm(&x[i], &b.attn_norm.gamma, &b.attn_norm.beta)).collect();
        let project = |w: &Tensor2, bias: &Tensor2, row: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|c| {
                    row.iter().enumerate().map(|(r, v)| v * w.get(r, c) as f64).sum::<f64>()
                        + bias.get(0, c) as f64
                })
                .collect()
        };
        let q: Vec<Vec<f64>> = h.iter().map(|r| project(&b.wq, &b.bq, r)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| project(&b.wk, &b.bk, r)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| project(&b.wv, &b.bv, r)).collect();
        let mut ctx = vec![vec![0.0f64; d]; n];
        for i in 0..n {
            let mut scores: Vec<f64> = (0..n)
                .map(|j| {
                    if seq.token_ids[j] == 0 {
                        -1e30
                    } else {
                        (0..d).map(|t| q[i][t] * k[j][t]).sum::<f64>() / (d as f64).sqrt()
                    }
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in &mut scores {
                *s /= sum;
            }
            for (j, p) in scores.iter().enumerate() {
                for t in 0..d {
                    ctx[i][t] += p * v[j][t];
                }
            }
        }
        for i in 0..n {
            let out = project(&b.wo, &b.bo, &ctx[i]);
            for c in 0..d {
                x[i][c] += out[c];
            }
        }

        // Feed-forward.
        for i in 0..n {
            let g = layer_norm(&x[i], &b.ffn_norm.gamma, &b.ffn_norm.beta);
            let mut hidden = vec![0.0f64; cfg.d_ff];
            for (c, slot) in hidden.iter_mut().enumerate() {
                let pre: f64 = g.iter().enumerate().map(|(r, v)| v * b.w1.get(r, c) as f64).sum::<f64>()
                    + b.b1.get(0, c) as f64;
                let t = (0.7978845608028654 * (pre + 0.044715 * pre * pre * pre)).tanh();
                *slot = 0.5 * pre * (1.0 + t);
            }
            for c in 0..d {
                let out: f64 = hidden
                    .iter()
                    .enumerate()
                    .map(|(r, hv)| hv * b.w2.get(r, c) as f64)
                    .sum::<f64>()
                    + b.b2.get(0, c) as f64;
                x[i][c] += out;
            }
        }

        // Final norm, classifier, softmax.
        let n_classes = cfg.n_classes();
        let mut probs = vec![vec![0.0f64; n_classes]; n];
        for i in 0..n {
            let f = layer_norm(&x[i], &params.final_norm.gamma, &params.final_norm.beta);
            let mut logits: Vec<f64> = (0..n_classes)
                .map(|c| {
                    f.iter()
                        .enumerate()
                        .map(|(r, v)| v * params.classifier_w.get(r, c) as f64)
                        .sum::<f64>()
                        + params.classifier_b.get(0, c) as f64
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in &mut logits {
                *l = (*l - max).exp();
                sum += *l;
            }
            for (c, l) in logits.iter().enumerate() {
                probs[i][c] = l / sum;
            }
        }
        probs
    }

    #[test]
    fn single_head_forward_matches_straight_line_reference() {
        let cfg = toy_config(4, 1, 1);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut seq = random_seq(&mut rng, &ctx, 24);
            // Include a padded tail in half the cases.
            if rng.random_bool(0.5) {
                seq.token_ids.push(0);
                seq.positions.push(seq.positions.len());
                seq.team_track.push(ctx.team_neutral());
                seq.chat_type_track.push(CHAT_TYPE_NEUTRAL);
                seq.player_track.push(ctx.player_neutral());
                seq.loss_mask.push(false);
            }
            let fast = forward(&params, &cfg, &seq).unwrap();
            let slow = reference_forward(&params, &cfg, &seq);
            for i in 0..seq.len() {
                for c in 0..cfg.n_classes() {
                    assert!(
                        (fast.get(i, c) - slow[i][c]).abs() <= 1e-6,
                        "row {i} class {c}: {} vs {}",
                        fast.get(i, c),
                        slow[i][c]
                    );
                }
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences_on_sampled_weights() {
        let cfg = ModelConfig { label_space: LabelSpace::Full, ..toy_config(8, 1, 2) };
        let ctx = toy_context(12);
        let mut params = init(&cfg, &ctx, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let batch: Vec<Example> = (0..2)
            .map(|_| {
                let seq = random_seq(&mut rng, &ctx, 20);
                let gold = (0..seq.loss_mask.iter().filter(|&&m| m).count())
                    .map(|_| rng.random_range(0..9))
                    .collect();
                Example { seq, gold }
            })
            .collect();
        let mut grads = zeros_like(&params);
        loss_and_grad(&params, &cfg, &batch, None, &mut grads).unwrap();

        let names: Vec<String> = params.visit().iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            // Probe two fixed entries per tensor.
            for probe in 0..2 {
                let (rows, cols) = {
                    let list = params.visit();
                    let (_, t) = list.iter().find(|(n, _)| *n == name).unwrap();
                    t.shape()
                };
                let r = if probe == 0 { 0 } else { (rows - 1) / 2 };
                let c = if probe == 0 { cols - 1 } else { cols / 2 };
                let analytic = {
                    let list = grads.visit();
                    let (_, g) = list.iter().find(|(n, _)| *n == name).unwrap();
                    g.get(r, c)
                };
                let eps = 1e-4f32;
                let original = {
                    let mut list = params.visit_mut();
                    let (_, t) = list.iter_mut().find(|(n, _)| *n == name).unwrap();
                    let w = t.get(r, c);
                    t.set(r, c, w + eps);
                    w
                };
                let plus = batch_loss(&params, &cfg, &batch).unwrap();
                let w_plus = original + eps;
                {
                    let mut list = params.visit_mut();
                    let (_, t) = list.iter_mut().find(|(n, _)| *n == name).unwrap();
                    t.set(r, c, original - eps);
                }
                let minus = batch_loss(&params, &cfg, &batch).unwrap();
                let w_minus = original - eps;
                {
                    let mut list = params.visit_mut();
                    let (_, t) = list.iter_mut().find(|(n, _)| *n == name).unwrap();
                    t.set(r, c, original);
                }
                let numeric = (plus - minus) / (w_plus as f64 - w_minus as f64);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-3,
                    "{name}[{r},{c}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn neutral_only_metadata_tracks_leave_metadata_tables_untouched() {
        let cfg = toy_config(8, 2, 2);
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let mut seq = small_seq();
        // Mimic metadata_mode = None: every track at its neutral index.
        seq.team_track = vec![ctx.team_neutral(); 4];
        seq.chat_type_track = vec![CHAT_TYPE_NEUTRAL; 4];
        seq.player_track = vec![ctx.player_neutral(); 4];
        let ex = Example { seq, gold: vec![1, 2] };
        let mut grads = zeros_like(&params);
        loss_and_grad(&params, &cfg, &[ex], None, &mut grads).unwrap();
        assert!(grads.team_emb.data().iter().all(|&g| g == 0.0));
        assert!(grads.chat_emb.data().iter().all(|&g| g == 0.0));
        assert!(grads.player_emb.data().iter().all(|&g| g == 0.0));
        // Token and position tables still learn.
        assert!(grads.token_emb.data().iter().any(|&g| g != 0.0));
        assert!(grads.pos_emb.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn dropout_streams_reproduce_and_vary() {
        let cfg = ModelConfig { dropout: 0.2, ..toy_config(8, 1, 2) };
        let ctx = toy_context(16);
        let params = init(&cfg, &ctx, 24);
        let ex = Example { seq: small_seq(), gold: vec![1, 2] };
        let mut g1 = zeros_like(&params);
        let mut g2 = zeros_like(&params);
        let mut rng1 = ChaCha8Rng::seed_from_u64(4);
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let l1 = loss_and_grad(&params, &cfg, std::slice::from_ref(&ex), Some(&mut rng1), &mut g1)
            .unwrap();
        let l2 = loss_and_grad(&params, &cfg, std::slice::from_ref(&ex), Some(&mut rng2), &mut g2)
            .unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let mut rng3 = ChaCha8Rng::seed_from_u64(5);
        let l3 = loss_and_grad(&params, &cfg, std::slice::from_ref(&ex), Some(&mut rng3), &mut g1)
            .unwrap();
        assert_ne!(l1, l3);
    }

    #[test]
    fn chat_type_constants_cover_the_table() {
        assert_eq!(CHAT_TYPE_TEAM, 0);
        assert_eq!(CHAT_TYPE_ALL, 1);
        assert_eq!(CHAT_TYPE_NEUTRAL, 2);
    }
}
