//! Reduced conditional U-Net.
//!
//! ```text
//! input [x_t | y | s]  ─ conv3×3 ─┬─ Res(c0) ─ pool ─ Res(c1) ─ pool ─ … ─ Res(mid) [─ Attn]
//!                                  │                                         │
//! out ◀ conv3×3 ◀ SiLU ◀ GN ◀ Res(c0) ◀ cat ◀ up ◀ Res(c1) ◀ cat ◀ up ◀ ───┘
//! ```
//!
//! Level `l` carries `base_width · 2^l` channels. Every residual block
//! receives the shared timestep embedding through its own learned shift.

use super::layers::*;
use super::{sinusoidal_embedding, DenoiserConfig};

#[derive(Debug, Clone)]
pub struct UNet {
    config: DenoiserConfig,
    entries: Vec<ParamEntry>,
    total: usize,
    t_lin1: Linear,
    t_lin2: Linear,
    conv_in: Conv2d,
    down: Vec<ResBlock>,
    mid: ResBlock,
    attn: Option<Attention>,
    up: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct Tape<F> {
    emb: Vec<F>,
    t_h1: Vec<F>,
    t_a1: Vec<F>,
    t_h2: Vec<F>,
    temb: Vec<F>,
    conv_in: ConvCache<F>,
    down: Vec<ResBlockCache<F>>,
    skip_channels: Vec<usize>,
    mid: ResBlockCache<F>,
    attn: Option<AttentionCache<F>>,
    up: Vec<ResBlockCache<F>>,
    norm_out: GroupNormCache<F>,
    pre_act: Act<F>,
    conv_out: ConvCache<F>,
}

impl UNet {
    /// Lays out the network. The config must already be validated.
    pub fn new(config: &DenoiserConfig) -> Self {
        let mut alloc = ParamAllocator::default();
        let d = config.time_embed_dim;
        let g = config.num_groups;
        let widths: Vec<usize> = (0..config.depth).map(|l| config.base_width << l).collect();
        let t_lin1 = Linear::new(&mut alloc, "time.lin1", d, d);
        let t_lin2 = Linear::new(&mut alloc, "time.lin2", d, d);
        let conv_in = Conv2d::new(&mut alloc, "conv_in", config.in_channels(), config.base_width, 3);
        let mut down = Vec::new();
        let mut ch = config.base_width;
        for (l, &w) in widths.iter().enumerate() {
            down.push(ResBlock::new(&mut alloc, &format!("down{l}"), ch, w, d, g));
            ch = w;
        }
        let mid = ResBlock::new(&mut alloc, "mid", ch, ch, d, g);
        let attn = config.use_attention.then(|| Attention::new(&mut alloc, "mid.attn", ch, g));
        let mut up = Vec::new();
        for l in (0..config.depth).rev() {
            up.push(ResBlock::new(&mut alloc, &format!("up{l}"), ch + widths[l], widths[l], d, g));
            ch = widths[l];
        }
        let norm_out = GroupNorm::new(&mut alloc, "norm_out", ch, g);
        let conv_out = Conv2d::new(&mut alloc, "conv_out", ch, 3, 3);
        Self {
            config: config.clone(),
            entries: alloc.entries,
            total: alloc.total,
            t_lin1,
            t_lin2,
            conv_in,
            down,
            mid,
            attn,
            up,
            norm_out,
            conv_out,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// Layer index map of the flat parameter vector.
    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn init_params<F: Real, R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        use rand_distr::{Distribution, StandardNormal};
        let mut p = vec![F::zero(); self.total];
        for e in &self.entries {
            let dst = &mut p[e.offset..e.offset + e.len()];
            match e.init {
                ParamInit::Zeros => {}
                ParamInit::Ones => dst.iter_mut().for_each(|v| *v = F::one()),
                ParamInit::He { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in dst.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = F::lit(z * std);
                    }
                }
            }
        }
        p
    }

    pub fn forward<F: Real>(&self, p: &[F], input: &Act<F>, t: usize) -> (Act<F>, Tape<F>) {
        assert_eq!(p.len(), self.total, "parameter vector length");
        let emb: Vec<F> = sinusoidal_embedding(t, self.config.time_embed_dim)
            .expect("validated even dimension")
            .into_iter()
            .map(F::lit)
            .collect();
        let t_h1 = self.t_lin1.forward(p, &emb);
        let t_a1 = silu(&t_h1);
        let t_h2 = self.t_lin2.forward(p, &t_a1);
        let temb = silu(&t_h2);

        let (mut cur, conv_in) = self.conv_in.forward(p, input);
        let mut down = Vec::with_capacity(self.down.len());
        let mut skips = Vec::with_capacity(self.down.len());
        for block in &self.down {
            let (h, cache) = block.forward(p, &cur, &temb);
            down.push(cache);
            cur = avg_pool2(&h);
            skips.push(h);
        }
        let (h, mid) = self.mid.forward(p, &cur, &temb);
        cur = h;
        let attn = self.attn.as_ref().map(|a| {
            let (h, cache) = a.forward(p, &cur);
            cur = h;
            cache
        });
        let mut up = Vec::with_capacity(self.up.len());
        let mut skip_channels = Vec::with_capacity(self.up.len());
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let upsampled = upsample2(&cur);
            skip_channels.push(upsampled.c);
            let (h, cache) = block.forward(p, &upsampled.concat(&skip), &temb);
            up.push(cache);
            cur = h;
        }
        let (pre_act, norm_out) = self.norm_out.forward(p, &cur);
        let (out, conv_out) = self.conv_out.forward(p, &silu_act(&pre_act));
        let tape = Tape {
            emb,
            t_h1,
            t_a1,
            t_h2,
            temb,
            conv_in,
            down,
            skip_channels,
            mid,
            attn,
            up,
            norm_out,
            pre_act,
            conv_out,
        };
        (out, tape)
    }

    /// Accumulates `∂L/∂θ` into `g` given `∂L/∂output`.
    pub fn backward<F: Real>(&self, p: &[F], tape: &Tape<F>, dout: &Act<F>, g: &mut [F]) {
        assert_eq!(g.len(), self.total, "gradient vector length");
        let mut dtemb = vec![F::zero(); self.config.time_embed_dim];
        let ds = self.conv_out.backward(p, &tape.conv_out, dout, g);
        let dn = silu_act_backward(&tape.pre_act, &ds);
        let mut dcur = self.norm_out.backward(p, &tape.norm_out, &dn, g);

        let mut dskips = Vec::with_capacity(self.up.len());
        for ((block, cache), &c_up) in self.up.iter().zip(&tape.up).zip(&tape.skip_channels).rev() {
            let dcat = block.backward(p, cache, &tape.temb, &dcur, &mut dtemb, g);
            let (dup, dskip) = dcat.split(c_up);
            dskips.push(dskip);
            dcur = upsample2_backward(&dup);
        }
        // dskips now ordered from the shallowest level to the deepest.
        if let (Some(a), Some(cache)) = (&self.attn, &tape.attn) {
            dcur = a.backward(p, cache, &dcur, g);
        }
        dcur = self.mid.backward(p, &tape.mid, &tape.temb, &dcur, &mut dtemb, g);
        for (l, (block, cache)) in self.down.iter().zip(&tape.down).enumerate().rev() {
            let mut dh = avg_pool2_backward(&dcur);
            dh.add_assign(&dskips[l]);
            dcur = block.backward(p, cache, &tape.temb, &dh, &mut dtemb, g);
        }
        let _ = self.conv_in.backward(p, &tape.conv_in, &dcur, g);

        let dh2 = silu_backward(&tape.t_h2, &dtemb);
        let da1 = self.t_lin2.backward(p, &tape.t_a1, &dh2, g);
        let dh1 = silu_backward(&tape.t_h1, &da1);
        let _ = self.t_lin1.backward(p, &tape.emb, &dh1, g);
    }
}
