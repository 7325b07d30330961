//! Composite building blocks: conv layers with their normalization policy,
//! residual blocks, the attention family (channel gate, global-contrast
//! gate, spatial map, and the combined feature-variation block), and the
//! atrous-pyramid family with plain, residual-sum, and progressive fusion.
//!
//! Every block is a pure description (specs + parameter-name prefix).
//! `init` registers its parameters in a [`ParamStore`]; `forward` replays it
//! onto a tape via [`Fwd`]. Blocks preserve their input shape.

use crate::autodiff::{Fwd, Mode, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Element, Tensor};
use rand::Rng;

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

/// Weight of the batch statistics in each running-average update.
pub const BN_MOMENTUM: f64 = 0.1;

/// What follows a convolution.
///
/// `BnRelu` is the default unit (bias-free conv, batch norm, ReLU).
/// Gate-producing chains use `Relu` / `Linear` (biased conv, no norm) and
/// end in a sigmoid applied by the owning block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Post {
    BnRelu,
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conv,
    Deconv,
}

/// One convolution (forward or transposed) with its post-processing.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    prefix: String,
    spec: ConvSpec,
    post: Post,
    kind: Kind,
}

impl ConvLayer {
    pub fn conv(prefix: impl Into<String>, spec: ConvSpec, post: Post) -> Self {
        ConvLayer {
            prefix: prefix.into(),
            spec,
            post,
            kind: Kind::Conv,
        }
    }

    /// Doubling transposed conv followed by batch norm + ReLU.
    pub fn deconv(prefix: impl Into<String>, spec: ConvSpec) -> Self {
        ConvLayer {
            prefix: prefix.into(),
            spec,
            post: Post::BnRelu,
            kind: Kind::Deconv,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    /// Register weights (He fan-in), bias (zero) where used, and batch-norm
    /// parameters (scale 1, shift 0, running mean 0 / variance 1).
    pub fn init<E: Element>(
        &self,
        store: &mut ParamStore<E>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let (wshape, fan_in) = match self.kind {
            Kind::Conv => {
                self.spec.validate_conv()?;
                (self.spec.weight_shape(), self.spec.in_channels)
            }
            Kind::Deconv => {
                self.spec.validate_deconv()?;
                (self.spec.deconv_weight_shape(), self.spec.in_channels)
            }
        };
        let (kd, kh, kw) = self.spec.kernel;
        let fan_in = (fan_in * kd * kh * kw) as f64;
        let std = (2.0 / fan_in).sqrt();
        store.insert(&self.weight_name(), Tensor::randn(wshape, 0.0, std, rng), true)?;

        match self.post {
            Post::BnRelu => {
                let c = self.spec.bias_shape();
                store.insert(&format!("{}.bn.g", self.prefix), Tensor::full(c, E::ONE), true)?;
                store.insert(&format!("{}.bn.b", self.prefix), Tensor::zeros(c), true)?;
                store.insert(&format!("{}.bn.rm", self.prefix), Tensor::zeros(c), false)?;
                store.insert(&format!("{}.bn.rv", self.prefix), Tensor::full(c, E::ONE), false)?;
            }
            Post::Relu | Post::Linear => {
                store.insert(
                    &format!("{}.b", self.prefix),
                    Tensor::zeros(self.spec.bias_shape()),
                    true,
                )?;
            }
        }
        Ok(())
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let y = match (self.kind, self.post) {
            (Kind::Conv, Post::BnRelu) => ctx.tape.conv3d(x, w, None, &self.spec)?,
            (Kind::Conv, _) => {
                let b = ctx.param(&format!("{}.b", self.prefix))?;
                ctx.tape.conv3d(x, w, Some(b), &self.spec)?
            }
            (Kind::Deconv, _) => ctx.tape.conv_transpose3d(x, w, None, &self.spec)?,
        };
        match self.post {
            Post::BnRelu => {
                let g = ctx.param(&format!("{}.bn.g", self.prefix))?;
                let b = ctx.param(&format!("{}.bn.b", self.prefix))?;
                let normed = match ctx.mode() {
                    Mode::Train => {
                        let (v, stats) = ctx.tape.batch_norm_train(y, g, b, BN_EPS)?;
                        ctx.record_bn(&format!("{}.bn", self.prefix), stats);
                        v
                    }
                    Mode::Infer => {
                        let rm = ctx.buffer(&format!("{}.bn.rm", self.prefix))?;
                        let rv = ctx.buffer(&format!("{}.bn.rv", self.prefix))?;
                        ctx.tape.batch_norm_infer(y, g, b, &rm, &rv, BN_EPS)?
                    }
                };
                Ok(ctx.tape.relu(normed))
            }
            Post::Relu => Ok(ctx.tape.relu(y)),
            Post::Linear => Ok(y),
        }
    }
}

/// Two 3×3×3 conv units plus the identity: `out = x + f(x)`. When input and
/// output widths differ, the identity path becomes a 1×1×1 projection.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    c1: ConvLayer,
    c2: ConvLayer,
    project: Option<ConvLayer>,
}

impl ResidualBlock {
    pub fn new(prefix: &str, in_c: usize, out_c: usize) -> Self {
        ResidualBlock {
            c1: ConvLayer::conv(
                format!("{prefix}.c1"),
                ConvSpec::same(in_c, out_c, 3, 1),
                Post::BnRelu,
            ),
            c2: ConvLayer::conv(
                format!("{prefix}.c2"),
                ConvSpec::same(out_c, out_c, 3, 1),
                Post::BnRelu,
            ),
            project: (in_c != out_c).then(|| {
                ConvLayer::conv(
                    format!("{prefix}.skip"),
                    ConvSpec::pointwise(in_c, out_c),
                    Post::Linear,
                )
            }),
        }
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        self.c1.init(store, rng)?;
        self.c2.init(store, rng)?;
        if let Some(p) = &self.project {
            p.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let f = self.c1.forward(ctx, x)?;
        let f = self.c2.forward(ctx, f)?;
        let identity = match &self.project {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        ctx.tape.add(identity, f)
    }
}

/// Global-contrast gate: one sigmoid scalar per sample scales every channel
/// and voxel. `gate = σ(conv1×1×1(relu(conv3×3×3(GAP(x)))))`, the final conv
/// mapping C → 1.
#[derive(Debug, Clone)]
pub struct CebBranch {
    a: ConvLayer,
    g: ConvLayer,
}

impl CebBranch {
    pub fn new(prefix: &str, c: usize) -> Self {
        CebBranch {
            a: ConvLayer::conv(
                format!("{prefix}.a"),
                ConvSpec::same(c, c, 3, 1),
                Post::Relu,
            ),
            g: ConvLayer::conv(format!("{prefix}.g"), ConvSpec::pointwise(c, 1), Post::Linear),
        }
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        self.a.init(store, rng)?;
        self.g.init(store, rng)
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let pooled = ctx.tape.global_avg_pool(x);
        let h = self.a.forward(ctx, pooled)?;
        let z = self.g.forward(ctx, h)?;
        let gate = ctx.tape.sigmoid(z);
        ctx.tape.mul(x, gate)
    }
}

/// Spatial attention map: `A = σ(conv3×3×3(relu(conv3×3×3(x))))` with the
/// input's full shape, multiplied elementwise into `x`.
#[derive(Debug, Clone)]
pub struct PsbBranch {
    a: ConvLayer,
    g: ConvLayer,
}

impl PsbBranch {
    pub fn new(prefix: &str, c: usize) -> Self {
        PsbBranch {
            a: ConvLayer::conv(
                format!("{prefix}.a"),
                ConvSpec::same(c, c, 3, 1),
                Post::Relu,
            ),
            g: ConvLayer::conv(
                format!("{prefix}.g"),
                ConvSpec::same(c, c, 3, 1),
                Post::Linear,
            ),
        }
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        self.a.init(store, rng)?;
        self.g.init(store, rng)
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let h = self.a.forward(ctx, x)?;
        let z = self.g.forward(ctx, h)?;
        let gate = ctx.tape.sigmoid(z);
        ctx.tape.mul(x, gate)
    }
}

/// Per-channel gate: like [`CebBranch`] but the final conv keeps C channels,
/// so each channel gets its own sigmoid weight (constant over space).
#[derive(Debug, Clone)]
pub struct CabBranch {
    a: ConvLayer,
    g: ConvLayer,
}

impl CabBranch {
    pub fn new(prefix: &str, c: usize) -> Self {
        CabBranch {
            a: ConvLayer::conv(
                format!("{prefix}.a"),
                ConvSpec::same(c, c, 3, 1),
                Post::Relu,
            ),
            g: ConvLayer::conv(format!("{prefix}.g"), ConvSpec::pointwise(c, c), Post::Linear),
        }
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        self.a.init(store, rng)?;
        self.g.init(store, rng)
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let pooled = ctx.tape.global_avg_pool(x);
        let h = self.a.forward(ctx, pooled)?;
        let z = self.g.forward(ctx, h)?;
        let gate = ctx.tape.sigmoid(z);
        ctx.tape.mul(x, gate)
    }
}

/// Feature-variation block: a 1×1×1 entry conv, the contrast and spatial
/// branches, and a 3×3×3 conv over `concat[ceb, psb, entry]` (3C → C) added
/// back onto the block input.
#[derive(Debug, Clone)]
pub struct FvBlock {
    pre: ConvLayer,
    ceb: CebBranch,
    psb: PsbBranch,
    post: ConvLayer,
}

impl FvBlock {
    pub fn new(prefix: &str, c: usize) -> Self {
        FvBlock {
            pre: ConvLayer::conv(
                format!("{prefix}.pre"),
                ConvSpec::pointwise(c, c),
                Post::BnRelu,
            ),
            ceb: CebBranch::new(&format!("{prefix}.ceb"), c),
            psb: PsbBranch::new(&format!("{prefix}.psb"), c),
            post: ConvLayer::conv(
                format!("{prefix}.post"),
                ConvSpec::same(3 * c, c, 3, 1),
                Post::BnRelu,
            ),
        }
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        self.pre.init(store, rng)?;
        self.ceb.init(store, rng)?;
        self.psb.init(store, rng)?;
        self.post.init(store, rng)
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let fv1 = self.pre.forward(ctx, x)?;
        let cb = self.ceb.forward(ctx, fv1)?;
        let pb = self.psb.forward(ctx, fv1)?;
        let cat = ctx.tape.concat_channels(&[cb, pb, fv1])?;
        let y = self.post.forward(ctx, cat)?;
        ctx.tape.add(x, y)
    }
}

/// Fusion strategy of the atrous pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidKind {
    /// Concatenate the four branch outputs, one fusion conv.
    Plain,
    /// Adjacent-branch residual sums, then one fusion conv.
    ResidualSum,
    /// Adjacent-branch residual sums fused progressively in pairs.
    Progressive,
}

/// Four-branch atrous pyramid over dilations (1, 2, 4, 8). Each branch
/// reduces C → C/4 with a 1×1×1 conv, then applies a dilated 3×3×3 conv;
/// the fusion stage restores C channels per [`PyramidKind`].
#[derive(Debug, Clone)]
pub struct PyramidBlock {
    kind: PyramidKind,
    channels: usize,
    eq7_literal: bool,
    reduce: Vec<ConvLayer>,
    atrous: Vec<ConvLayer>,
    fuse: Vec<ConvLayer>,
    out: ConvLayer,
}

impl PyramidBlock {
    pub fn new(prefix: &str, kind: PyramidKind, channels: usize, eq7_literal: bool) -> Result<Self> {
        if channels % 4 != 0 || channels == 0 {
            return Err(Error::InvalidSpec {
                op: "pyramid",
                reason: format!("channel count {channels} must be a positive multiple of 4"),
            });
        }
        let quarter = channels / 4;
        let half = channels / 2;
        let reduce = (1..=4)
            .map(|t| {
                ConvLayer::conv(
                    format!("{prefix}.reduce{t}"),
                    ConvSpec::pointwise(channels, quarter),
                    Post::BnRelu,
                )
            })
            .collect();
        let atrous = (1..=4)
            .map(|t| {
                ConvLayer::conv(
                    format!("{prefix}.atrous{t}"),
                    ConvSpec::same(quarter, quarter, 3, 1 << (t - 1)),
                    Post::BnRelu,
                )
            })
            .collect();
        let fuse = match kind {
            PyramidKind::Progressive => (1..=2)
                .map(|t| {
                    ConvLayer::conv(
                        format!("{prefix}.fuse{t}"),
                        ConvSpec::pointwise(half, half),
                        Post::BnRelu,
                    )
                })
                .collect(),
            _ => Vec::new(),
        };
        let out = ConvLayer::conv(
            format!("{prefix}.out"),
            ConvSpec::pointwise(channels, channels),
            Post::BnRelu,
        );
        Ok(PyramidBlock {
            kind,
            channels,
            eq7_literal,
            reduce,
            atrous,
            fuse,
            out,
        })
    }

    pub fn kind(&self) -> PyramidKind {
        self.kind
    }

    /// Width of each atrous branch (C/4).
    pub fn branch_channels(&self) -> usize {
        self.channels / 4
    }

    /// Width after pairwise fusion (C/2).
    pub fn pair_channels(&self) -> usize {
        self.channels / 2
    }

    /// Dilation rates in branch order.
    pub fn dilations(&self) -> [usize; 4] {
        [1, 2, 4, 8]
    }

    pub fn init<E: Element>(&self, store: &mut ParamStore<E>, rng: &mut impl Rng) -> Result<()> {
        for layer in self
            .reduce
            .iter()
            .chain(&self.atrous)
            .chain(&self.fuse)
            .chain(std::iter::once(&self.out))
        {
            layer.init(store, rng)?;
        }
        Ok(())
    }

    /// The adjacent-sum stage: within each pair (1,2) and (3,4), every
    /// branch receives the pair's sum. The literal reading also keeps the
    /// branch's own term, double-counting it; the alternative drops it.
    fn adjacent_sums<E: Element>(&self, ctx: &mut Fwd<E>, fd: &[Var; 4]) -> Result<[Var; 4]> {
        let pair12 = ctx.tape.add(fd[0], fd[1])?;
        let pair34 = ctx.tape.add(fd[2], fd[3])?;
        if self.eq7_literal {
            Ok([
                ctx.tape.add(fd[0], pair12)?,
                ctx.tape.add(fd[1], pair12)?,
                ctx.tape.add(fd[2], pair34)?,
                ctx.tape.add(fd[3], pair34)?,
            ])
        } else {
            Ok([pair12, pair12, pair34, pair34])
        }
    }

    pub fn forward<E: Element>(&self, ctx: &mut Fwd<E>, x: Var) -> Result<Var> {
        let mut fd = [x; 4];
        for t in 0..4 {
            let r = self.reduce[t].forward(ctx, x)?;
            fd[t] = self.atrous[t].forward(ctx, r)?;
        }
        let fused = match self.kind {
            PyramidKind::Plain => ctx.tape.concat_channels(&fd)?,
            PyramidKind::ResidualSum => {
                let s = self.adjacent_sums(ctx, &fd)?;
                ctx.tape.concat_channels(&s)?
            }
            PyramidKind::Progressive => {
                let s = self.adjacent_sums(ctx, &fd)?;
                let lo = ctx.tape.concat_channels(&s[0..2])?;
                let lo = self.fuse[0].forward(ctx, lo)?;
                let hi = ctx.tape.concat_channels(&s[2..4])?;
                let hi = self.fuse[1].forward(ctx, hi)?;
                ctx.tape.concat_channels(&[lo, hi])?
            }
        };
        self.out.forward(ctx, fused)
    }
}
