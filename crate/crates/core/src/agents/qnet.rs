//! Transformer-encoder dueling Q-network over slot tokens.
//!
//! tokens -> encoder MLP -> + sinusoidal positions -> pre-LN transformer
//! blocks (masked multi-head attention, ReLU feed-forward) -> final layer
//! norm -> per-slot advantage head and a value head on slot 0.
//! `Q_i = v + a_i - mean(a over valid slots)`.
//!
//! Everything is f64 with hand-written backward passes so gradients can be
//! checked against finite differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::{Layout, Params};
use crate::env::Observation;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("bad network config: {0}")]
    Config(String),
    #[error("observation has {got_slots} slots of width {got_width}, network expects {slots} of width {width}")]
    Observation {
        got_slots: usize,
        got_width: usize,
        slots: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub token_width: usize,
    /// `1 + N`.
    pub slots: usize,
    pub latent: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub head_hidden: usize,
    pub positional_encoding: bool,
}

impl QNetConfig {
    /// Defaults: 4 heads, 2 blocks, feed-forward width `4T`, 2 encoder
    /// layers, head hidden width `T`.
    pub fn new(token_width: usize, slots: usize, latent: usize) -> QNetConfig {
        QNetConfig {
            token_width,
            slots,
            latent,
            heads: 4,
            blocks: 2,
            ffn: 4 * latent,
            encoder_layers: 2,
            head_hidden: latent,
            positional_encoding: true,
        }
    }

    pub fn check(&self) -> Result<(), ShapeError> {
        let bad = |m: &str| Err(ShapeError::Config(m.into()));
        if self.token_width == 0 || self.slots == 0 || self.latent == 0 {
            return bad("token width, slots and latent width must be positive");
        }
        if self.heads == 0 || !self.latent.is_multiple_of(self.heads) {
            return bad("latent width must be a multiple of the head count");
        }
        if self.encoder_layers == 0 || self.ffn == 0 || self.head_hidden == 0 {
            return bad("encoder layers, feed-forward and head widths must be positive");
        }
        Ok(())
    }
}

/// Q-values per slot; invalid slots hold negative infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues {
    pub q: Vec<f64>,
    pub valid: Vec<bool>,
}

impl QValues {
    /// Highest valid Q-value, lowest slot on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.q.len() {
            if self.valid[i] && self.q[i] > self.q[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.q[self.argmax()]
    }
}

// c = a * b + beta * c on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    beta: f64,
    c: &mut [f64],
    crs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * crs + (n - 1), "gemm: c too short");
    if k == 0 {
        for i in 0..m {
            for x in &mut c[i * crs..i * crs + n] {
                *x *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * ars + (k - 1) * acs, "gemm: a too short");
    assert!(b.len() > (k - 1) * brs + (n - 1) * bcs, "gemm: b too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            ars as isize,
            acs as isize,
            b.as_ptr(),
            brs as isize,
            bcs as isize,
            beta,
            c.as_mut_ptr(),
            crs as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
    i: usize,
    o: usize,
}

impl Lin {
    fn new(layout: &mut Layout, name: &str, i: usize, o: usize) -> Lin {
        let w = layout.push(format!("{name}.weight"), &[i, o]);
        let b = layout.push(format!("{name}.bias"), &[o]);
        Lin { w, b, i, o }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng, gain: f64) {
        let bound = gain * (6.0 / (self.i + self.o) as f64).sqrt();
        for x in &mut p[self.w..self.w + self.i * self.o] {
            *x = rng.gen_range(-bound..bound);
        }
    }

    fn fwd(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let bias = &p[self.b..self.b + self.o];
        let mut y: Vec<f64> = (0..rows).flat_map(|_| bias.iter().copied()).collect();
        gemm(rows, self.i, self.o, x, (self.i, 1), &p[self.w..], (self.o, 1), 1.0, &mut y, self.o);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient.
    fn bwd(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], rows: usize, need_dx: bool) -> Vec<f64> {
        gemm(self.i, rows, self.o, x, (1, self.i), dy, (self.o, 1), 1.0, &mut g[self.w..], self.o);
        for r in 0..rows {
            for (gb, d) in g[self.b..self.b + self.o].iter_mut().zip(&dy[r * self.o..(r + 1) * self.o]) {
                *gb += d;
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; rows * self.i];
        gemm(rows, self.o, self.i, dy, (self.o, 1), &p[self.w..], (1, self.o), 0.0, &mut dx, self.i);
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
    d: usize,
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl Norm {
    fn new(layout: &mut Layout, name: &str, d: usize) -> Norm {
        let g = layout.push(format!("{name}.gain"), &[d]);
        let b = layout.push(format!("{name}.bias"), &[d]);
        Norm { g, b, d }
    }

    fn init(&self, p: &mut [f64]) {
        p[self.g..self.g + self.d].fill(1.0);
    }

    fn fwd(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, NormCache) {
        let d = self.d;
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let (gain, bias) = (&p[self.g..self.g + d], &p[self.b..self.b + d]);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gain[j] + bias[j];
            }
        }
        (y, NormCache { xhat, rstd })
    }

    fn bwd(&self, p: &[f64], g: &mut [f64], c: &NormCache, dy: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut dx = vec![0.0; dy.len()];
        let gain = &p[self.g..self.g + d];
        for r in 0..c.rstd.len() {
            let xh = &c.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..d {
                g[self.g + j] += dyr[j] * xh[j];
                g[self.b + j] += dyr[j];
                let dh = dyr[j] * gain[j];
                m1 += dh;
                m2 += dh * xh[j];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for j in 0..d {
                let dh = dyr[j] * gain[j];
                dx[r * d + j] = c.rstd[r] * (dh - m1 - xh[j] * m2);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    wq: Lin,
    wk: Lin,
    wv: Lin,
    wo: Lin,
    ln2: Norm,
    f1: Lin,
    f2: Lin,
}

struct BlockCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    f_act: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`QNetwork::backward`].
pub struct ForwardCache {
    mask: Vec<bool>,
    enc_in: Vec<Vec<f64>>,
    enc_act: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    lnf: NormCache,
    zf: Vec<f64>,
    ha_act: Vec<f64>,
    hv_act: Vec<f64>,
}

fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_mask(d: &mut [f64], act: &[f64]) {
    for (g, &a) in d.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Network structure; parameters live in a separate [`Params`] so one
/// network can serve many snapshots.
#[derive(Debug, Clone)]
pub struct QNetwork {
    cfg: QNetConfig,
    layout: Arc<Layout>,
    enc: Vec<Lin>,
    blocks: Vec<Block>,
    lnf: Norm,
    a1: Lin,
    a2: Lin,
    v1: Lin,
    v2: Lin,
    pe: Vec<f64>,
}

impl QNetwork {
    pub fn new(cfg: QNetConfig) -> Result<QNetwork, ShapeError> {
        cfg.check()?;
        let t = cfg.latent;
        let mut layout = Layout::default();
        let mut enc = Vec::new();
        let mut width = cfg.token_width;
        for l in 0..cfg.encoder_layers {
            enc.push(Lin::new(&mut layout, &format!("encoder.{l}"), width, t));
            width = t;
        }
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let n = |s: &str| format!("block.{b}.{s}");
                Block {
                    ln1: Norm::new(&mut layout, &n("ln1"), t),
                    wq: Lin::new(&mut layout, &n("query"), t, t),
                    wk: Lin::new(&mut layout, &n("key"), t, t),
                    wv: Lin::new(&mut layout, &n("value"), t, t),
                    wo: Lin::new(&mut layout, &n("out"), t, t),
                    ln2: Norm::new(&mut layout, &n("ln2"), t),
                    f1: Lin::new(&mut layout, &n("ffn1"), t, cfg.ffn),
                    f2: Lin::new(&mut layout, &n("ffn2"), cfg.ffn, t),
                }
            })
            .collect();
        let lnf = Norm::new(&mut layout, "final_ln", t);
        let a1 = Lin::new(&mut layout, "advantage.0", t, cfg.head_hidden);
        let a2 = Lin::new(&mut layout, "advantage.1", cfg.head_hidden, 1);
        let v1 = Lin::new(&mut layout, "value.0", t, cfg.head_hidden);
        let v2 = Lin::new(&mut layout, "value.1", cfg.head_hidden, 1);
        let pe = positional_table(cfg.slots, t);
        Ok(QNetwork {
            cfg,
            layout: Arc::new(layout),
            enc,
            blocks,
            lnf,
            a1,
            a2,
            v1,
            v2,
            pe,
        })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    /// Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(self.layout.clone());
        let p = &mut params.data;
        for l in &self.enc {
            l.init(p, &mut rng, 1.0);
        }
        // Residual branches start small so early blocks stay near identity.
        let residual_gain = 1.0 / (2.0 * self.cfg.blocks.max(1) as f64).sqrt();
        for b in &self.blocks {
            b.ln1.init(p);
            b.ln2.init(p);
            for l in [b.wq, b.wk, b.wv, b.f1] {
                l.init(p, &mut rng, 1.0);
            }
            for l in [b.wo, b.f2] {
                l.init(p, &mut rng, residual_gain);
            }
        }
        self.lnf.init(p);
        for l in [self.a1, self.a2, self.v1, self.v2] {
            l.init(p, &mut rng, 1.0);
        }
        params
    }

    fn check_obs(&self, slots: usize, width: usize) -> Result<(), ShapeError> {
        if slots != self.cfg.slots || width != self.cfg.token_width {
            return Err(ShapeError::Observation {
                got_slots: slots,
                got_width: width,
                slots: self.cfg.slots,
                width: self.cfg.token_width,
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &Params, obs: &Observation) -> Result<QValues, ShapeError> {
        self.forward_cached(params, obs).map(|(q, _)| q)
    }

    pub fn forward_cached(&self, params: &Params, obs: &Observation) -> Result<(QValues, ForwardCache), ShapeError> {
        self.check_obs(obs.slots(), obs.width())?;
        Ok(self.forward_raw(params, obs.tokens(), obs.mask()))
    }

    fn forward_raw(&self, params: &Params, tokens: &[u8], mask: &[bool]) -> (QValues, ForwardCache) {
        let p = &params.data;
        let s = self.cfg.slots;
        let t = self.cfg.latent;
        let heads = self.cfg.heads;
        let dh = t / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut h: Vec<f64> = tokens.iter().map(|&b| b as f64).collect();
        let mut enc_in = Vec::with_capacity(self.enc.len());
        let mut enc_act = Vec::with_capacity(self.enc.len());
        for l in &self.enc {
            let mut y = l.fwd(p, &h, s);
            relu_inplace(&mut y);
            enc_in.push(std::mem::replace(&mut h, y.clone()));
            enc_act.push(y);
        }
        let mut z = h;
        if self.cfg.positional_encoding {
            add_into(&mut z, &self.pe);
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, ln1) = blk.ln1.fwd(p, &z);
            let q = blk.wq.fwd(p, &a, s);
            let k = blk.wk.fwd(p, &a, s);
            let v = blk.wv.fwd(p, &a, s);
            let mut probs = vec![0.0; heads * s * s];
            let mut o = vec![0.0; s * t];
            for hd in 0..heads {
                let ph = &mut probs[hd * s * s..(hd + 1) * s * s];
                gemm(s, dh, s, &q[hd * dh..], (t, 1), &k[hd * dh..], (1, t), 0.0, ph, s);
                for i in 0..s {
                    let row = &mut ph[i * s..(i + 1) * s];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..s {
                        if mask[j] {
                            row[j] *= scale;
                            mx = mx.max(row[j]);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..s {
                        row[j] = if mask[j] { (row[j] - mx).exp() } else { 0.0 };
                        sum += row[j];
                    }
                    for x in row.iter_mut() {
                        *x /= sum;
                    }
                }
                gemm(s, s, dh, ph, (s, 1), &v[hd * dh..], (t, 1), 0.0, &mut o[hd * dh..], t);
            }
            let attn = blk.wo.fwd(p, &o, s);
            add_into(&mut z, &attn);
            let (b, ln2) = blk.ln2.fwd(p, &z);
            let mut f_act = blk.f1.fwd(p, &b, s);
            relu_inplace(&mut f_act);
            let f_out = blk.f2.fwd(p, &f_act, s);
            add_into(&mut z, &f_out);
            caches.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                p: probs,
                o,
                ln2,
                b,
                f_act,
            });
        }
        let (zf, lnf) = self.lnf.fwd(p, &z);

        let mut ha_act = self.a1.fwd(p, &zf, s);
        relu_inplace(&mut ha_act);
        let adv = self.a2.fwd(p, &ha_act, s);
        let mut hv_act = self.v1.fwd(p, &zf[..t], 1);
        relu_inplace(&mut hv_act);
        let value = self.v2.fwd(p, &hv_act, 1)[0];

        let nv = mask.iter().filter(|&&m| m).count() as f64;
        let mean_a = adv.iter().zip(mask).filter(|(_, &m)| m).map(|(a, _)| a).sum::<f64>() / nv;
        let q = adv
            .iter()
            .zip(mask)
            .map(|(&a, &m)| if m { value + a - mean_a } else { f64::NEG_INFINITY })
            .collect();
        let cache = ForwardCache {
            mask: mask.to_vec(),
            enc_in,
            enc_act,
            blocks: caches,
            lnf,
            zf,
            ha_act,
            hv_act,
        };
        (
            QValues {
                q,
                valid: mask.to_vec(),
            },
            cache,
        )
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d q`.
    /// Entries of `dq` on invalid slots are ignored.
    pub fn backward(&self, params: &Params, cache: &ForwardCache, dq: &[f64], grad: &mut [f64]) {
        let p = &params.data;
        let s = self.cfg.slots;
        let t = self.cfg.latent;
        let heads = self.cfg.heads;
        let dh = t / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = &cache.mask;

        let nv = mask.iter().filter(|&&m| m).count() as f64;
        let sum_dq: f64 = dq.iter().zip(mask).filter(|(_, &m)| m).map(|(d, _)| d).sum();
        let da: Vec<f64> = dq
            .iter()
            .zip(mask)
            .map(|(&d, &m)| if m { d - sum_dq / nv } else { 0.0 })
            .collect();

        let mut dhv = self.v2.bwd(p, grad, &cache.hv_act, &[sum_dq], 1, true);
        relu_mask(&mut dhv, &cache.hv_act);
        let dzf0 = self.v1.bwd(p, grad, &cache.zf[..t], &dhv, 1, true);
        let mut dha = self.a2.bwd(p, grad, &cache.ha_act, &da, s, true);
        relu_mask(&mut dha, &cache.ha_act);
        let mut dzf = self.a1.bwd(p, grad, &cache.zf, &dha, s, true);
        add_into(&mut dzf[..t], &dzf0);
        let mut dz = self.lnf.bwd(p, grad, &cache.lnf, &dzf);

        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut df = blk.f2.bwd(p, grad, &c.f_act, &dz, s, true);
            relu_mask(&mut df, &c.f_act);
            let db = blk.f1.bwd(p, grad, &c.b, &df, s, true);
            add_into(&mut dz, &blk.ln2.bwd(p, grad, &c.ln2, &db));

            let d_o = blk.wo.bwd(p, grad, &c.o, &dz, s, true);
            let mut dqm = vec![0.0; s * t];
            let mut dkm = vec![0.0; s * t];
            let mut dvm = vec![0.0; s * t];
            let mut ds = vec![0.0; s * s];
            for hd in 0..heads {
                let ph = &c.p[hd * s * s..(hd + 1) * s * s];
                gemm(s, dh, s, &d_o[hd * dh..], (t, 1), &c.v[hd * dh..], (1, t), 0.0, &mut ds, s);
                gemm(s, s, dh, ph, (1, s), &d_o[hd * dh..], (t, 1), 0.0, &mut dvm[hd * dh..], t);
                for i in 0..s {
                    let row = &mut ds[i * s..(i + 1) * s];
                    let prow = &ph[i * s..(i + 1) * s];
                    let dot: f64 = row.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for j in 0..s {
                        row[j] = prow[j] * (row[j] - dot) * scale;
                    }
                }
                gemm(s, s, dh, &ds, (s, 1), &c.k[hd * dh..], (t, 1), 0.0, &mut dqm[hd * dh..], t);
                gemm(s, s, dh, &ds, (1, s), &c.q[hd * dh..], (t, 1), 0.0, &mut dkm[hd * dh..], t);
            }
            let mut dan = blk.wq.bwd(p, grad, &c.a, &dqm, s, true);
            add_into(&mut dan, &blk.wk.bwd(p, grad, &c.a, &dkm, s, true));
            add_into(&mut dan, &blk.wv.bwd(p, grad, &c.a, &dvm, s, true));
            add_into(&mut dz, &blk.ln1.bwd(p, grad, &c.ln1, &dan));
        }

        let mut d = dz;
        for l in (0..self.enc.len()).rev() {
            relu_mask(&mut d, &cache.enc_act[l]);
            d = self.enc[l].bwd(p, grad, &cache.enc_in[l], &d, s, l > 0);
        }
    }
}

/// Fixed sinusoidal table, `slots x width`.
pub fn positional_table(slots: usize, width: usize) -> Vec<f64> {
    let mut pe = vec![0.0; slots * width];
    for pos in 0..slots {
        for j in 0..width {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / width as f64);
            let angle = pos as f64 * freq;
            pe[pos * width + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
