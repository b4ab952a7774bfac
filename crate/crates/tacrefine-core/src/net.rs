//! The goal-conditioned multi-branch policy network, built from scratch in
//! 64-bit floats.
//!
//! Per finger, a two-layer dense encoder (99 -> 64 -> 32, tanh) is shared
//! between the current and target tactile images; a learned per-finger
//! positional encoding is added to both encoder outputs. The six 32-vectors
//! plus the joint vector are concatenated (198), fused to 128 with tanh, and
//! a three-layer MLP head (128 -> 64 -> 32 -> 6, linear output) produces the
//! wrist pose increment.
//!
//! All weights live in one flat `Vec<f64>` addressed through a segment table,
//! which keeps the optimizer, serialization and gradient checking trivial.

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::rng::DetRng;
use crate::tacsim::TactileImage;
use std::ops::Range;
use std::path::Path;

const PARAMS_MAGIC: [u8; 4] = *b"TACW";
const PARAMS_VERSION: u16 = 1;

pub const FINGERS: usize = 3;
pub const JOINT_DIM: usize = 6;
pub const OUT_DIM: usize = 6;

/// Layer-size metadata. Everything else (segment offsets, parameter count)
/// is derived from this.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchMeta {
    pub image_rows: usize,
    pub image_cols: usize,
    pub enc_hidden: usize,
    pub feature_dim: usize,
    pub fusion_dim: usize,
    pub head_hidden: [usize; 2],
}

impl Default for ArchMeta {
    fn default() -> Self {
        ArchMeta {
            image_rows: crate::tacsim::SENSOR_ROWS,
            image_cols: crate::tacsim::SENSOR_COLS,
            enc_hidden: 64,
            feature_dim: 32,
            fusion_dim: 128,
            head_hidden: [64, 32],
        }
    }
}

impl ArchMeta {
    pub fn image_dim(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// Concatenated fusion input: 3 current + 3 target features + joints.
    pub fn fused_input_dim(&self) -> usize {
        2 * FINGERS * self.feature_dim + JOINT_DIM
    }
}

/// Flat-buffer addresses of every parameter block.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Segments {
    enc_w1: [Range<usize>; FINGERS],
    enc_b1: [Range<usize>; FINGERS],
    enc_w2: [Range<usize>; FINGERS],
    enc_b2: [Range<usize>; FINGERS],
    pos: [Range<usize>; FINGERS],
    fus_w: Range<usize>,
    fus_b: Range<usize>,
    h1_w: Range<usize>,
    h1_b: Range<usize>,
    h2_w: Range<usize>,
    h2_b: Range<usize>,
    h3_w: Range<usize>,
    h3_b: Range<usize>,
    total: usize,
}

fn segments(meta: &ArchMeta) -> Segments {
    let mut off = 0usize;
    let mut take = |n: usize| {
        let r = off..off + n;
        off += n;
        r
    };
    let img = meta.image_dim();
    let (eh, fd) = (meta.enc_hidden, meta.feature_dim);
    let empty = || 0..0;
    let mut enc_w1 = [empty(), empty(), empty()];
    let mut enc_b1 = [empty(), empty(), empty()];
    let mut enc_w2 = [empty(), empty(), empty()];
    let mut enc_b2 = [empty(), empty(), empty()];
    let mut pos = [empty(), empty(), empty()];
    for f in 0..FINGERS {
        enc_w1[f] = take(eh * img);
        enc_b1[f] = take(eh);
        enc_w2[f] = take(fd * eh);
        enc_b2[f] = take(fd);
    }
    for p in pos.iter_mut() {
        *p = take(fd);
    }
    let fus_w = take(meta.fusion_dim * meta.fused_input_dim());
    let fus_b = take(meta.fusion_dim);
    let h1_w = take(meta.head_hidden[0] * meta.fusion_dim);
    let h1_b = take(meta.head_hidden[0]);
    let h2_w = take(meta.head_hidden[1] * meta.head_hidden[0]);
    let h2_b = take(meta.head_hidden[1]);
    let h3_w = take(OUT_DIM * meta.head_hidden[1]);
    let h3_b = take(OUT_DIM);
    Segments {
        enc_w1,
        enc_b1,
        enc_w2,
        enc_b2,
        pos,
        fus_w,
        fus_b,
        h1_w,
        h1_b,
        h2_w,
        h2_b,
        h3_w,
        h3_b,
        total: off,
    }
}

/// All learnable weights plus architecture metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub meta: ArchMeta,
    pub seed: u64,
    flat: Vec<f64>,
    seg: Segments,
}

impl PolicyParams {
    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    fn view(&self, r: &Range<usize>) -> &[f64] {
        &self.flat[r.clone()]
    }
}

/// Xavier-uniform initialization: weights `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))` per layer; biases and positional
/// encodings start at zero.
pub fn init_params(seed: u64) -> PolicyParams {
    init_params_with(ArchMeta::default(), seed)
}

pub fn init_params_with(meta: ArchMeta, seed: u64) -> PolicyParams {
    let seg = segments(&meta);
    let mut flat = vec![0.0; seg.total];
    let mut rng = DetRng::new(seed);
    let img = meta.image_dim();
    let mut fill = |range: &Range<usize>, fan_in: usize, fan_out: usize, flat: &mut Vec<f64>| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut flat[range.clone()] {
            *w = rng.uniform(-a, a);
        }
    };
    for f in 0..FINGERS {
        fill(&seg.enc_w1[f], img, meta.enc_hidden, &mut flat);
        fill(&seg.enc_w2[f], meta.enc_hidden, meta.feature_dim, &mut flat);
    }
    fill(&seg.fus_w, meta.fused_input_dim(), meta.fusion_dim, &mut flat);
    fill(&seg.h1_w, meta.fusion_dim, meta.head_hidden[0], &mut flat);
    fill(&seg.h2_w, meta.head_hidden[0], meta.head_hidden[1], &mut flat);
    fill(&seg.h3_w, meta.head_hidden[1], OUT_DIM, &mut flat);
    PolicyParams { meta, seed, flat, seg }
}

/// Network input: tactile triplets for the current and target grasps plus
/// the current joint vector. Images are normalized to `[0, 1]` internally.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput {
    pub current: [TactileImage; 3],
    pub target: [TactileImage; 3],
    pub joints: [f64; 6],
}

/// One partial derivative per weight, same flat layout as [`PolicyParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    flat: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        GradientSet { flat: vec![0.0; params.num_params()] }
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }
}

/// `out = W x + b` with `W` stored row-major `(out_dim x in_dim)`.
fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w.len(), b.len() * n);
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += wi * xi;
        }
        *out_v = acc;
    }
}

fn tanh_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
}

/// `dpre = dpost * (1 - a^2)` where `a` is the tanh output.
fn tanh_backprop(a: &[f64], dpost: &[f64], dpre: &mut [f64]) {
    for i in 0..a.len() {
        dpre[i] = dpost[i] * (1.0 - a[i] * a[i]);
    }
}

struct ForwardCache {
    cur_in: [Vec<f64>; 3],
    tgt_in: [Vec<f64>; 3],
    cur_h1: [Vec<f64>; 3],
    tgt_h1: [Vec<f64>; 3],
    cur_e: [Vec<f64>; 3],
    tgt_e: [Vec<f64>; 3],
    fused_in: Vec<f64>,
    fused: Vec<f64>,
    head1: Vec<f64>,
    head2: Vec<f64>,
    out: [f64; 6],
}

fn normalize(img: &TactileImage) -> Vec<f64> {
    img.values.iter().map(|&v| v as f64 / 255.0).collect()
}

fn check_shapes(params: &PolicyParams, input: &PolicyInput) -> Result<()> {
    for img in input.current.iter().chain(input.target.iter()) {
        if img.rows != params.meta.image_rows || img.cols != params.meta.image_cols {
            return Err(Error::MetadataMismatch(format!(
                "image is {}x{}, network expects {}x{}",
                img.rows, img.cols, params.meta.image_rows, params.meta.image_cols
            )));
        }
    }
    Ok(())
}

fn forward_cached(params: &PolicyParams, input: &PolicyInput) -> Result<ForwardCache> {
    check_shapes(params, input)?;
    let meta = &params.meta;
    let seg = &params.seg;
    let mut cache = ForwardCache {
        cur_in: [normalize(&input.current[0]), normalize(&input.current[1]), normalize(&input.current[2])],
        tgt_in: [normalize(&input.target[0]), normalize(&input.target[1]), normalize(&input.target[2])],
        cur_h1: [vec![0.0; meta.enc_hidden], vec![0.0; meta.enc_hidden], vec![0.0; meta.enc_hidden]],
        tgt_h1: [vec![0.0; meta.enc_hidden], vec![0.0; meta.enc_hidden], vec![0.0; meta.enc_hidden]],
        cur_e: [vec![0.0; meta.feature_dim], vec![0.0; meta.feature_dim], vec![0.0; meta.feature_dim]],
        tgt_e: [vec![0.0; meta.feature_dim], vec![0.0; meta.feature_dim], vec![0.0; meta.feature_dim]],
        fused_in: vec![0.0; meta.fused_input_dim()],
        fused: vec![0.0; meta.fusion_dim],
        head1: vec![0.0; meta.head_hidden[0]],
        head2: vec![0.0; meta.head_hidden[1]],
        out: [0.0; 6],
    };

    let fd = meta.feature_dim;
    for f in 0..FINGERS {
        let (w1, b1) = (params.view(&seg.enc_w1[f]), params.view(&seg.enc_b1[f]));
        let (w2, b2) = (params.view(&seg.enc_w2[f]), params.view(&seg.enc_b2[f]));
        let pos = params.view(&seg.pos[f]);

        matvec(w1, b1, &cache.cur_in[f], &mut cache.cur_h1[f]);
        tanh_inplace(&mut cache.cur_h1[f]);
        matvec(w2, b2, &cache.cur_h1[f], &mut cache.cur_e[f]);
        tanh_inplace(&mut cache.cur_e[f]);

        matvec(w1, b1, &cache.tgt_in[f], &mut cache.tgt_h1[f]);
        tanh_inplace(&mut cache.tgt_h1[f]);
        matvec(w2, b2, &cache.tgt_h1[f], &mut cache.tgt_e[f]);
        tanh_inplace(&mut cache.tgt_e[f]);

        // Positional encoding is added to both streams of this finger.
        for i in 0..fd {
            cache.fused_in[f * fd + i] = cache.cur_e[f][i] + pos[i];
            cache.fused_in[(FINGERS + f) * fd + i] = cache.tgt_e[f][i] + pos[i];
        }
    }
    let joints_off = 2 * FINGERS * fd;
    cache.fused_in[joints_off..joints_off + JOINT_DIM].copy_from_slice(&input.joints);

    matvec(params.view(&seg.fus_w), params.view(&seg.fus_b), &cache.fused_in, &mut cache.fused);
    tanh_inplace(&mut cache.fused);
    matvec(params.view(&seg.h1_w), params.view(&seg.h1_b), &cache.fused, &mut cache.head1);
    tanh_inplace(&mut cache.head1);
    matvec(params.view(&seg.h2_w), params.view(&seg.h2_b), &cache.head1, &mut cache.head2);
    tanh_inplace(&mut cache.head2);
    let mut out = [0.0; 6];
    matvec(params.view(&seg.h3_w), params.view(&seg.h3_b), &cache.head2, &mut out);
    cache.out = out;
    Ok(cache)
}

/// Pure forward pass: predicted 6-DoF wrist increment.
pub fn forward(params: &PolicyParams, input: &PolicyInput) -> Result<[f64; 6]> {
    Ok(forward_cached(params, input)?.out)
}

/// `||pred - label||^2` over the 6 components.
pub fn mse_loss(pred: &[f64; 6], label: &[f64; 6]) -> f64 {
    pred.iter().zip(label.iter()).map(|(p, l)| (p - l) * (p - l)).sum()
}

/// Mean squared-residual loss over a batch; the finite-difference oracle in
/// the tests differentiates exactly this function.
pub fn batch_loss(params: &PolicyParams, batch: &[(PolicyInput, [f64; 6])]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut acc = 0.0;
    for (input, label) in batch {
        acc += mse_loss(&forward(params, input)?, label);
    }
    Ok(acc / batch.len() as f64)
}

/// Exact analytic gradients of [`batch_loss`] with respect to every weight.
pub fn backward(
    params: &PolicyParams,
    batch: &[(PolicyInput, [f64; 6])],
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let meta = &params.meta;
    let seg = &params.seg;
    let mut grads = GradientSet::zeros_like(params);
    let mut loss_acc = 0.0;

    let fd = meta.feature_dim;
    let mut d_out = [0.0; 6];
    let mut d_head2 = vec![0.0; meta.head_hidden[1]];
    let mut d_head1 = vec![0.0; meta.head_hidden[0]];
    let mut d_fused = vec![0.0; meta.fusion_dim];
    let mut d_fused_in = vec![0.0; meta.fused_input_dim()];
    let mut d_pre2 = vec![0.0; meta.head_hidden[1]];
    let mut d_pre1 = vec![0.0; meta.head_hidden[0]];
    let mut d_pre_f = vec![0.0; meta.fusion_dim];
    let mut d_e = vec![0.0; fd];
    let mut d_e_pre = vec![0.0; fd];
    let mut d_h1 = vec![0.0; meta.enc_hidden];
    let mut d_h1_pre = vec![0.0; meta.enc_hidden];

    for (input, label) in batch {
        let cache = forward_cached(params, input)?;
        let residual_loss = mse_loss(&cache.out, label);
        if !residual_loss.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        loss_acc += residual_loss;
        for i in 0..6 {
            d_out[i] = 2.0 * (cache.out[i] - label[i]);
        }

        // Head: linear output layer, then the two tanh layers.
        split_backward(params, &mut grads, &seg.h3_w, &seg.h3_b, &cache.head2, &d_out, Some(&mut d_head2));

        tanh_backprop(&cache.head2, &d_head2, &mut d_pre2);
        split_backward(params, &mut grads, &seg.h2_w, &seg.h2_b, &cache.head1, &d_pre2, Some(&mut d_head1));

        tanh_backprop(&cache.head1, &d_head1, &mut d_pre1);
        split_backward(params, &mut grads, &seg.h1_w, &seg.h1_b, &cache.fused, &d_pre1, Some(&mut d_fused));

        tanh_backprop(&cache.fused, &d_fused, &mut d_pre_f);
        split_backward(params, &mut grads, &seg.fus_w, &seg.fus_b, &cache.fused_in, &d_pre_f, Some(&mut d_fused_in));

        // Per-finger encoders, shared weights across current/target streams.
        for f in 0..FINGERS {
            for (stream, e, h1, x_in) in [
                (0, &cache.cur_e[f], &cache.cur_h1[f], &cache.cur_in[f]),
                (1, &cache.tgt_e[f], &cache.tgt_h1[f], &cache.tgt_in[f]),
            ] {
                let base = if stream == 0 { f * fd } else { (FINGERS + f) * fd };
                d_e.copy_from_slice(&d_fused_in[base..base + fd]);
                // Positional encoding gradient: both streams contribute.
                for i in 0..fd {
                    grads.flat[seg.pos[f].start + i] += d_e[i];
                }
                tanh_backprop(e, &d_e, &mut d_e_pre);
                split_backward(
                    params,
                    &mut grads,
                    &seg.enc_w2[f],
                    &seg.enc_b2[f],
                    h1,
                    &d_e_pre,
                    Some(&mut d_h1),
                );
                tanh_backprop(h1, &d_h1, &mut d_h1_pre);
                split_backward(
                    params,
                    &mut grads,
                    &seg.enc_w1[f],
                    &seg.enc_b1[f],
                    x_in,
                    &d_h1_pre,
                    None,
                );
            }
        }
    }

    let k = batch.len() as f64;
    for gv in grads.flat.iter_mut() {
        *gv /= k;
    }
    Ok((loss_acc / k, grads))
}

/// Backward through one dense layer whose weight/bias gradients live at
/// disjoint ranges of the flat gradient buffer.
fn split_backward(
    params: &PolicyParams,
    grads: &mut GradientSet,
    w_range: &Range<usize>,
    b_range: &Range<usize>,
    x: &[f64],
    dpre: &[f64],
    dx: Option<&mut [f64]>,
) {
    let n = x.len();
    let w = params.view(w_range);
    {
        let dw = &mut grads.flat[w_range.clone()];
        for (o, d) in dpre.iter().enumerate() {
            let row = &mut dw[o * n..(o + 1) * n];
            for (wi, xi) in row.iter_mut().zip(x.iter()) {
                *wi += d * xi;
            }
        }
    }
    {
        let db = &mut grads.flat[b_range.clone()];
        for (o, d) in dpre.iter().enumerate() {
            db[o] += d;
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for (o, d) in dpre.iter().enumerate() {
            let row = &w[o * n..(o + 1) * n];
            for (dxi, wi) in dx.iter_mut().zip(row.iter()) {
                *dxi += wi * d;
            }
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }
}

/// One Adam update with bias correction.
pub fn optimizer_step(
    params: &mut PolicyParams,
    grads: &GradientSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    debug_assert_eq!(params.num_params(), grads.flat.len());
    debug_assert_eq!(params.num_params(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.flat.len() {
        let g = grads.flat[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.flat[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

fn write_meta(w: &mut ByteWriter, meta: &ArchMeta) {
    for v in [
        meta.image_rows,
        meta.image_cols,
        meta.enc_hidden,
        meta.feature_dim,
        meta.fusion_dim,
        meta.head_hidden[0],
        meta.head_hidden[1],
    ] {
        w.put_u32(v as u32);
    }
}

fn read_meta(r: &mut ByteReader) -> Result<ArchMeta> {
    let mut vals = [0usize; 7];
    for v in vals.iter_mut() {
        *v = r.get_u32()? as usize;
    }
    Ok(ArchMeta {
        image_rows: vals[0],
        image_cols: vals[1],
        enc_hidden: vals[2],
        feature_dim: vals[3],
        fusion_dim: vals[4],
        head_hidden: [vals[5], vals[6]],
    })
}

pub(crate) fn write_params_body(w: &mut ByteWriter, params: &PolicyParams) {
    w.put_u64(params.seed);
    write_meta(w, &params.meta);
    w.put_u64(params.flat.len() as u64);
    w.put_f64_slice(&params.flat);
}

pub(crate) fn read_params_body(r: &mut ByteReader) -> Result<PolicyParams> {
    let seed = r.get_u64()?;
    let meta = read_meta(r)?;
    let seg = segments(&meta);
    let stored = r.get_u64()? as usize;
    if stored != seg.total {
        return Err(Error::MetadataMismatch(format!(
            "parameter count {stored} does not match architecture metadata ({})",
            seg.total
        )));
    }
    let flat = r.get_f64_vec(stored)?;
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stored parameters".into()));
    }
    Ok(PolicyParams { meta, seed, flat, seg })
}

/// Versioned binary parameter file with shape metadata and CRC.
pub fn save_params(params: &PolicyParams, config_hash: u64, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new(PARAMS_MAGIC, PARAMS_VERSION);
    w.put_u64(config_hash);
    write_params_body(&mut w, params);
    w.finish_to_file(path)
}

pub fn load_params(path: &Path) -> Result<(PolicyParams, u64)> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::open(&bytes, PARAMS_MAGIC, PARAMS_VERSION)?;
    let config_hash = r.get_u64()?;
    let params = read_params_body(&mut r)?;
    Ok((params, config_hash))
}
