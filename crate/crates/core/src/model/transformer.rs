//! The toy decoder-only multi-stream transformer.
//!
//! Per position, each stream's token is embedded with its own table and the
//! streams are summed together with a learned absolute position embedding.
//! The body is a stack of pre-norm blocks (causal attention, GELU
//! feed-forward), a final layer norm, and one output head per stream.
//! Forward caches every activation the hand-written backward pass needs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::real::{gauss, Mat, Real};
use crate::model::{Interleave, ModelConfig};

const LN_EPS: f64 = 1e-5;
const GELU_C0: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Mat<F>,
    pub ln1_b: Mat<F>,
    pub wq: Mat<F>,
    pub wk: Mat<F>,
    pub wv: Mat<F>,
    pub wo: Mat<F>,
    pub ln2_g: Mat<F>,
    pub ln2_b: Mat<F>,
    pub w1: Mat<F>,
    pub b1: Mat<F>,
    pub w2: Mat<F>,
    pub b2: Mat<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    /// One embedding table per stream, vocab_size x d_model.
    pub embed: Vec<Mat<F>>,
    pub pos: Mat<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_g: Mat<F>,
    pub lnf_b: Mat<F>,
    /// One output head per stream, d_model x vocab_size.
    pub heads: Vec<Mat<F>>,
}

impl<F: Real> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ff_mult * d;
        let v = cfg.vocab_size;
        Params {
            embed: (0..cfg.n_q).map(|_| Mat::zeros(v, d)).collect(),
            pos: Mat::zeros(cfg.max_t, d),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    ln1_g: Mat::zeros(1, d),
                    ln1_b: Mat::zeros(1, d),
                    wq: Mat::zeros(d, d),
                    wk: Mat::zeros(d, d),
                    wv: Mat::zeros(d, d),
                    wo: Mat::zeros(d, d),
                    ln2_g: Mat::zeros(1, d),
                    ln2_b: Mat::zeros(1, d),
                    w1: Mat::zeros(d, f),
                    b1: Mat::zeros(1, f),
                    w2: Mat::zeros(f, d),
                    b2: Mat::zeros(1, d),
                })
                .collect(),
            lnf_g: Mat::zeros(1, d),
            lnf_b: Mat::zeros(1, d),
            heads: (0..cfg.n_q).map(|_| Mat::zeros(d, v)).collect(),
        }
    }

    /// Training initialization: gaussian embeddings and projections, zeroed
    /// residual-writing matrices (wo, w2), unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 0.02;
        let mut fill = |m: &mut Mat<F>| {
            for v in &mut m.data {
                *v = F::from_f64(gauss(&mut rng) * std);
            }
        };
        for e in &mut p.embed {
            fill(e);
        }
        fill(&mut p.pos);
        for l in &mut p.layers {
            fill(&mut l.wq);
            fill(&mut l.wk);
            fill(&mut l.wv);
            fill(&mut l.w1);
            l.ln1_g.data.fill(F::one());
            l.ln2_g.data.fill(F::one());
        }
        p.lnf_g.data.fill(F::one());
        for h in &mut p.heads {
            fill(h);
        }
        p
    }

    /// Every tensor gaussian: used by gradient checks so no parameter sits
    /// at an exact zero that would hide a missing gradient path.
    pub fn random_all(cfg: &ModelConfig, std: f64, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, m) in p.visit_mut() {
            for v in &mut m.data {
                *v = F::from_f64(gauss(&mut rng) * std);
            }
        }
        for l in &mut p.layers {
            for v in l.ln1_g.data.iter_mut().chain(l.ln2_g.data.iter_mut()) {
                *v = *v + F::one();
            }
        }
        for v in &mut p.lnf_g.data {
            *v = *v + F::one();
        }
        p
    }

    pub fn visit(&self) -> Vec<(String, &Mat<F>)> {
        let mut out = Vec::new();
        for (q, e) in self.embed.iter().enumerate() {
            out.push((format!("embed.{q}"), e));
        }
        out.push(("pos".to_string(), &self.pos));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.ln1_g"), &l.ln1_g));
            out.push((format!("layer.{i}.ln1_b"), &l.ln1_b));
            out.push((format!("layer.{i}.wq"), &l.wq));
            out.push((format!("layer.{i}.wk"), &l.wk));
            out.push((format!("layer.{i}.wv"), &l.wv));
            out.push((format!("layer.{i}.wo"), &l.wo));
            out.push((format!("layer.{i}.ln2_g"), &l.ln2_g));
            out.push((format!("layer.{i}.ln2_b"), &l.ln2_b));
            out.push((format!("layer.{i}.w1"), &l.w1));
            out.push((format!("layer.{i}.b1"), &l.b1));
            out.push((format!("layer.{i}.w2"), &l.w2));
            out.push((format!("layer.{i}.b2"), &l.b2));
        }
        out.push(("lnf_g".to_string(), &self.lnf_g));
        out.push(("lnf_b".to_string(), &self.lnf_b));
        for (q, h) in self.heads.iter().enumerate() {
            out.push((format!("head.{q}"), h));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let mut out = Vec::new();
        for (q, e) in self.embed.iter_mut().enumerate() {
            out.push((format!("embed.{q}"), e));
        }
        out.push(("pos".to_string(), &mut self.pos));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer.{i}.ln1_g"), &mut l.ln1_g));
            out.push((format!("layer.{i}.ln1_b"), &mut l.ln1_b));
            out.push((format!("layer.{i}.wq"), &mut l.wq));
            out.push((format!("layer.{i}.wk"), &mut l.wk));
            out.push((format!("layer.{i}.wv"), &mut l.wv));
            out.push((format!("layer.{i}.wo"), &mut l.wo));
            out.push((format!("layer.{i}.ln2_g"), &mut l.ln2_g));
            out.push((format!("layer.{i}.ln2_b"), &mut l.ln2_b));
            out.push((format!("layer.{i}.w1"), &mut l.w1));
            out.push((format!("layer.{i}.b1"), &mut l.b1));
            out.push((format!("layer.{i}.w2"), &mut l.w2));
            out.push((format!("layer.{i}.b2"), &mut l.b2));
        }
        out.push(("lnf_g".to_string(), &mut self.lnf_g));
        out.push(("lnf_b".to_string(), &mut self.lnf_b));
        for (q, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("head.{q}"), h));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn add_scaled(&mut self, other: &Params<F>, scale: F) {
        for ((_, a), (_, b)) in self.visit_mut().into_iter().zip(other.visit()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + *y * scale;
            }
        }
    }
}

/// Which forward positions get head logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogitRows {
    All,
    Last,
    Rows(Vec<usize>),
}

/// Per-stream logits at the selected forward positions. `rows[i]` is the
/// grid row the i-th logit row was computed at; it predicts grid row
/// `rows[i] + 1`.
#[derive(Debug, Clone)]
pub struct Logits<F> {
    pub rows: Vec<usize>,
    pub per_stream: Vec<Mat<F>>,
}

struct LayerCache<F> {
    xhat1: Mat<F>,
    rstd1: Vec<F>,
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// One T x T attention matrix per head.
    probs: Vec<Mat<F>>,
    ctx: Mat<F>,
    xhat2: Mat<F>,
    rstd2: Vec<F>,
    h_pre: Mat<F>,
    h_act: Mat<F>,
}

pub struct Cache<F> {
    layers: Vec<LayerCache<F>>,
    t_len: usize,
    xhatf: Mat<F>,
    rstdf: Vec<F>,
    f_sel: Mat<F>,
}

fn layernorm<F: Real>(x: &Mat<F>, g: &Mat<F>, b: &Mat<F>) -> (Mat<F>, Mat<F>, Vec<F>) {
    let (t_len, d) = (x.rows, x.cols);
    let mut y = Mat::zeros(t_len, d);
    let mut xhat = Mat::zeros(t_len, d);
    let mut rstd = Vec::with_capacity(t_len);
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    for t in 0..t_len {
        let row = x.row(t);
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<F>()
            * inv_d;
        let r = (var + eps).sqrt().recip();
        rstd.push(r);
        let (yr, xr) = (y.row_mut(t), t * d);
        for i in 0..d {
            let h = (row[i] - mean) * r;
            xhat.data[xr + i] = h;
            yr[i] = g.data[i] * h + b.data[i];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layernorm_bwd<F: Real>(
    dy: &Mat<F>,
    xhat: &Mat<F>,
    rstd: &[F],
    g: &Mat<F>,
    dg: &mut Mat<F>,
    db: &mut Mat<F>,
    dx: &mut Mat<F>,
) {
    let (t_len, d) = (dy.rows, dy.cols);
    let inv_d = F::from_f64(1.0 / d as f64);
    for (t, &rstd_t) in rstd.iter().enumerate().take(t_len) {
        let dyr = dy.row(t);
        let xhr = xhat.row(t);
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for i in 0..d {
            dg.data[i] = dg.data[i] + dyr[i] * xhr[i];
            db.data[i] = db.data[i] + dyr[i];
            let dxh = dyr[i] * g.data[i];
            sum_dxhat = sum_dxhat + dxh;
            sum_dxhat_xhat = sum_dxhat_xhat + dxh * xhr[i];
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        let dxr = dx.row_mut(t);
        for i in 0..d {
            let dxh = dyr[i] * g.data[i];
            dxr[i] = dxr[i] + rstd_t * (dxh - m1 - xhr[i] * m2);
        }
    }
}

fn gelu<F: Real>(x: F) -> F {
    let c0 = F::from_f64(GELU_C0);
    let c1 = F::from_f64(GELU_C1);
    let half = F::from_f64(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c0 = F::from_f64(GELU_C0);
    let c1 = F::from_f64(GELU_C1);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let th = u.tanh();
    half * (F::one() + th) + half * x * (F::one() - th * th) * c0 * (F::one() + three * c1 * x * x)
}

fn add_bias<F: Real>(x: &mut Mat<F>, b: &Mat<F>) {
    for t in 0..x.rows {
        for (v, bv) in x.row_mut(t).iter_mut().zip(&b.data) {
            *v = *v + *bv;
        }
    }
}

fn validate_grid(cfg: &ModelConfig, grid: &[u32]) -> Result<usize> {
    if grid.is_empty() || !grid.len().is_multiple_of(cfg.n_q) {
        return Err(Error::Model(format!(
            "grid of {} cells is not a multiple of n_q={}",
            grid.len(),
            cfg.n_q
        )));
    }
    let t_len = grid.len() / cfg.n_q;
    if t_len > cfg.max_t {
        return Err(Error::Model(format!(
            "sequence length {t_len} exceeds max_t {}",
            cfg.max_t
        )));
    }
    if let Some(&bad) = grid.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Model(format!(
            "token id {bad} out of range for vocab size {}",
            cfg.vocab_size
        )));
    }
    Ok(t_len)
}

/// Forward pass with activation cache; logits are produced at the selected
/// rows only. The logit row at position t predicts grid row t+1.
pub fn forward_cached<F: Real>(
    p: &Params<F>,
    cfg: &ModelConfig,
    grid: &[u32],
    rows: &LogitRows,
) -> Result<(Logits<F>, Cache<F>)> {
    let t_len = validate_grid(cfg, grid)?;
    let (d, n_q, h) = (cfg.d_model, cfg.n_q, cfg.n_heads);
    let hd = d / h;
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());

    let mut x = Mat::zeros(t_len, d);
    for t in 0..t_len {
        let row = x.row_mut(t);
        for q in 0..n_q {
            let id = grid[t * n_q + q] as usize;
            for (xi, ei) in row.iter_mut().zip(p.embed[q].row(id)) {
                *xi = *xi + *ei;
            }
        }
        for (xi, pi) in row.iter_mut().zip(p.pos.row(t)) {
            *xi = *xi + *pi;
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in &p.layers {
        let x_in = x;
        let (a_norm, xhat1, rstd1) = layernorm(&x_in, &l.ln1_g, &l.ln1_b);
        let qm = a_norm.matmul(&l.wq);
        let km = a_norm.matmul(&l.wk);
        let vm = a_norm.matmul(&l.wv);

        let mut ctx = Mat::zeros(t_len, d);
        let mut probs = Vec::with_capacity(h);
        for head in 0..h {
            let off = head * hd;
            let mut scores = Mat::zeros(t_len, t_len);
            F::gemm(
                t_len,
                hd,
                t_len,
                scale,
                &qm.data[off..],
                d as isize,
                1,
                &km.data[off..],
                1,
                d as isize,
                F::zero(),
                &mut scores.data,
                t_len as isize,
                1,
            );
            // Causal softmax: row t attends to positions <= t.
            for t in 0..t_len {
                let row = scores.row_mut(t);
                let mut max = F::neg_infinity();
                for &v in row.iter().take(t + 1) {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = F::zero();
                for v in row.iter_mut().take(t + 1) {
                    *v = (*v - max).exp();
                    sum = sum + *v;
                }
                let inv = sum.recip();
                for (j, v) in row.iter_mut().enumerate() {
                    if j <= t {
                        *v = *v * inv;
                    } else {
                        *v = F::zero();
                    }
                }
            }
            F::gemm(
                t_len,
                t_len,
                hd,
                F::one(),
                &scores.data,
                t_len as isize,
                1,
                &vm.data[off..],
                d as isize,
                1,
                F::zero(),
                &mut ctx.data[off..],
                d as isize,
                1,
            );
            probs.push(scores);
        }

        let attn_out = ctx.matmul(&l.wo);
        let mut x_mid = x_in.clone();
        for (v, a) in x_mid.data.iter_mut().zip(&attn_out.data) {
            *v = *v + *a;
        }

        let (b_norm, xhat2, rstd2) = layernorm(&x_mid, &l.ln2_g, &l.ln2_b);
        let mut h_pre = b_norm.matmul(&l.w1);
        add_bias(&mut h_pre, &l.b1);
        let mut h_act = h_pre.clone();
        for v in &mut h_act.data {
            *v = gelu(*v);
        }
        let mut ff_out = h_act.matmul(&l.w2);
        add_bias(&mut ff_out, &l.b2);
        let mut x_out = x_mid.clone();
        for (v, m) in x_out.data.iter_mut().zip(&ff_out.data) {
            *v = *v + *m;
        }

        layers.push(LayerCache {
            xhat1,
            rstd1,
            q: qm,
            k: km,
            v: vm,
            probs,
            ctx,
            xhat2,
            rstd2,
            h_pre,
            h_act,
        });
        x = x_out;
    }

    let (f_all, xhatf, rstdf) = layernorm(&x, &p.lnf_g, &p.lnf_b);
    let sel: Vec<usize> = match rows {
        LogitRows::All => (0..t_len).collect(),
        LogitRows::Last => vec![t_len - 1],
        LogitRows::Rows(r) => r.clone(),
    };
    let mut f_sel = Mat::zeros(sel.len(), d);
    for (i, &t) in sel.iter().enumerate() {
        f_sel.row_mut(i).copy_from_slice(f_all.row(t));
    }
    let per_stream = p.heads.iter().map(|hq| f_sel.matmul(hq)).collect();

    Ok((
        Logits {
            rows: sel,
            per_stream,
        },
        Cache {
            layers,
            t_len,
            xhatf,
            rstdf,
            f_sel,
        },
    ))
}

pub fn forward<F: Real>(p: &Params<F>, cfg: &ModelConfig, grid: &[u32]) -> Result<Logits<F>> {
    Ok(forward_cached(p, cfg, grid, &LogitRows::All)?.0)
}

/// Accumulates exact gradients of the scalar loss into `grads`, given the
/// loss gradient w.r.t. the selected logits.
pub fn backward<F: Real>(
    p: &Params<F>,
    cfg: &ModelConfig,
    grid: &[u32],
    cache: &Cache<F>,
    dlogits: &Logits<F>,
    grads: &mut Params<F>,
) {
    let (d, n_q, h) = (cfg.d_model, cfg.n_q, cfg.n_heads);
    let hd = d / h;
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());
    let t_len = cache.t_len;

    // Heads.
    let mut df_sel = Mat::zeros(dlogits.rows.len(), d);
    for q in 0..n_q {
        cache.f_sel.matmul_tn_acc(&dlogits.per_stream[q], &mut grads.heads[q]);
        dlogits.per_stream[q].matmul_nt_acc(&p.heads[q], &mut df_sel);
    }
    let mut df = Mat::zeros(t_len, d);
    for (i, &t) in dlogits.rows.iter().enumerate() {
        df.row_mut(t).copy_from_slice(df_sel.row(i));
    }

    // Final layer norm.
    let mut dx = Mat::zeros(t_len, d);
    layernorm_bwd(
        &df,
        &cache.xhatf,
        &cache.rstdf,
        &p.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
        &mut dx,
    );

    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let l = &p.layers[li];
        let gl = &mut grads.layers[li];

        // Feed-forward block; dx splits into the residual and the FF path.
        let dff = dx.clone();
        let mut dh_act = dff.matmul_nt(&l.w2);
        lc.h_act.matmul_tn_acc(&dff, &mut gl.w2);
        for t in 0..t_len {
            for (bv, dv) in gl.b2.data.iter_mut().zip(dff.row(t)) {
                *bv = *bv + *dv;
            }
        }
        for (dv, hv) in dh_act.data.iter_mut().zip(&lc.h_pre.data) {
            *dv = *dv * gelu_grad(*hv);
        }
        let db_norm = dh_act.matmul_nt(&l.w1);
        {
            // b_norm = xhat2 * g + b, reconstruct for the weight gradient.
            let mut b_norm = lc.xhat2.clone();
            for t in 0..t_len {
                for (v, (g, b)) in b_norm
                    .row_mut(t)
                    .iter_mut()
                    .zip(l.ln2_g.data.iter().zip(&l.ln2_b.data))
                {
                    *v = *v * *g + *b;
                }
            }
            b_norm.matmul_tn_acc(&dh_act, &mut gl.w1);
        }
        for t in 0..t_len {
            for (bv, dv) in gl.b1.data.iter_mut().zip(dh_act.row(t)) {
                *bv = *bv + *dv;
            }
        }
        let mut dx_mid = dx; // residual path
        layernorm_bwd(
            &db_norm,
            &lc.xhat2,
            &lc.rstd2,
            &l.ln2_g,
            &mut gl.ln2_g,
            &mut gl.ln2_b,
            &mut dx_mid,
        );

        // Attention block.
        let dattn = dx_mid.clone();
        let dctx = dattn.matmul_nt(&l.wo);
        lc.ctx.matmul_tn_acc(&dattn, &mut gl.wo);

        let mut dq = Mat::zeros(t_len, d);
        let mut dk = Mat::zeros(t_len, d);
        let mut dv = Mat::zeros(t_len, d);
        for head in 0..h {
            let off = head * hd;
            let probs = &lc.probs[head];
            // dprobs = dctx_h @ v_h^T
            let mut dprobs = Mat::zeros(t_len, t_len);
            F::gemm(
                t_len,
                hd,
                t_len,
                F::one(),
                &dctx.data[off..],
                d as isize,
                1,
                &lc.v.data[off..],
                1,
                d as isize,
                F::zero(),
                &mut dprobs.data,
                t_len as isize,
                1,
            );
            // dv_h += probs^T @ dctx_h
            F::gemm(
                t_len,
                t_len,
                hd,
                F::one(),
                &probs.data,
                1,
                t_len as isize,
                &dctx.data[off..],
                d as isize,
                1,
                F::one(),
                &mut dv.data[off..],
                d as isize,
                1,
            );
            // Softmax backward, rows independent; masked cells have p=0.
            let mut dscores = dprobs;
            for t in 0..t_len {
                let pr = probs.row(t);
                let dr = dscores.row_mut(t);
                let mut dot = F::zero();
                for j in 0..=t {
                    dot = dot + pr[j] * dr[j];
                }
                for j in 0..t_len {
                    dr[j] = if j <= t { pr[j] * (dr[j] - dot) } else { F::zero() };
                }
            }
            // dq_h += dscores @ k_h * scale ; dk_h += dscores^T @ q_h * scale
            F::gemm(
                t_len,
                t_len,
                hd,
                scale,
                &dscores.data,
                t_len as isize,
                1,
                &lc.k.data[off..],
                d as isize,
                1,
                F::one(),
                &mut dq.data[off..],
                d as isize,
                1,
            );
            F::gemm(
                t_len,
                t_len,
                hd,
                scale,
                &dscores.data,
                1,
                t_len as isize,
                &lc.q.data[off..],
                d as isize,
                1,
                F::one(),
                &mut dk.data[off..],
                d as isize,
                1,
            );
        }

        let mut da_norm = dq.matmul_nt(&l.wq);
        dk.matmul_nt_acc(&l.wk, &mut da_norm);
        dv.matmul_nt_acc(&l.wv, &mut da_norm);
        {
            let mut a_norm = lc.xhat1.clone();
            for t in 0..t_len {
                for (v, (g, b)) in a_norm
                    .row_mut(t)
                    .iter_mut()
                    .zip(l.ln1_g.data.iter().zip(&l.ln1_b.data))
                {
                    *v = *v * *g + *b;
                }
            }
            a_norm.matmul_tn_acc(&dq, &mut gl.wq);
            a_norm.matmul_tn_acc(&dk, &mut gl.wk);
            a_norm.matmul_tn_acc(&dv, &mut gl.wv);
        }
        let mut dx_in = dx_mid; // residual path
        layernorm_bwd(
            &da_norm,
            &lc.xhat1,
            &lc.rstd1,
            &l.ln1_g,
            &mut gl.ln1_g,
            &mut gl.ln1_b,
            &mut dx_in,
        );
        dx = dx_in;
    }

    // Embeddings and positions.
    for t in 0..t_len {
        let dr = dx.row(t);
        for q in 0..n_q {
            let id = grid[t * n_q + q] as usize;
            for (ev, dv) in grads.embed[q].row_mut(id).iter_mut().zip(dr) {
                *ev = *ev + *dv;
            }
        }
        for (pv, dv) in grads.pos.row_mut(t).iter_mut().zip(dr) {
            *pv = *pv + *dv;
        }
    }
}

/// Longest grid the model accepts under its interleave mode, in original
/// (pre-delay) rows.
pub fn max_input_rows(cfg: &ModelConfig) -> usize {
    match cfg.interleave {
        Interleave::Parallel => cfg.max_t,
        Interleave::Delay => cfg.max_t + 1 - cfg.n_q,
    }
}
