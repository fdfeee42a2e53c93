use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{validate_resolution, BackboneConfig, FusionVariant, HEAD_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{
    maxpool2d, mean_pool, BatchNorm2d, Conv2d, Conv2dSpec, Ctx, Linear, Mode, NormUpdate, ParamId, ParamStore, SeBlock,
    SeBlockSpec,
};
use crate::tensor::{Tape, Tensor, Var};

/// Activation taps available on each path.
pub const TAPS: [&str; 6] = ["conv1", "pool1", "res1", "res2", "res3", "res4"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Spatial,
    Temporal,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Spatial => "spatial",
            PathKind::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(PathKind::Spatial),
            "temporal" => Ok(PathKind::Temporal),
            other => Err(Error::arg("path", format!("`{other}` is not spatial or temporal"))),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(store: &mut ParamStore, name: &str, spec: Conv2dSpec, rng: &mut impl rand::Rng) -> Result<Self> {
        let out = spec.out_channels;
        Ok(ConvBn {
            conv: Conv2d::new(store, name, spec, false, rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), out)?,
        })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: &Var, relu: bool) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, &y)?;
        if relu {
            ctx.tape.relu(&y)
        } else {
            Ok(y)
        }
    }
}

/// SE-ResNeXt bottleneck: 1x1 reduce, grouped 3x3, 1x1 expand, SE gate,
/// residual add, ReLU.
#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: ConvBn,
    grouped: ConvBn,
    expand: ConvBn,
    se: SeBlock,
    shortcut: Option<ConvBn>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        cfg: &BackboneConfig,
        mid: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let reduce = ConvBn::new(store, &format!("{name}.conv1"), Conv2dSpec::new(cin, mid, 1), rng)?;
        let grouped = ConvBn::new(
            store,
            &format!("{name}.conv2"),
            Conv2dSpec::new(mid, mid, 3)
                .stride(stride)
                .padding(1)
                .groups(cfg.cardinality),
            rng,
        )?;
        let expand = ConvBn::new(store, &format!("{name}.conv3"), Conv2dSpec::new(mid, cout, 1), rng)?;
        let se = SeBlock::new(
            store,
            &format!("{name}.se"),
            SeBlockSpec {
                channels: cout,
                reduction_ratio: cfg.se_ratio,
            },
            rng,
        )?;
        let shortcut = (cin != cout || stride != 1)
            .then(|| {
                ConvBn::new(
                    store,
                    &format!("{name}.shortcut"),
                    Conv2dSpec::new(cin, cout, 1).stride(stride),
                    rng,
                )
            })
            .transpose()?;
        Ok(Bottleneck {
            reduce,
            grouped,
            expand,
            se,
            shortcut,
        })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let y = self.reduce.forward(ctx, x, true)?;
        let y = self.grouped.forward(ctx, &y, true)?;
        let y = self.expand.forward(ctx, &y, false)?;
        let y = self.se.forward(ctx, &y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x, false)?,
            None => x.clone(),
        };
        let y = ctx.tape.add(&y, &skip)?;
        ctx.tape.relu(&y)
    }
}

/// One SE-ResNeXt path: stem plus four stages.
#[derive(Clone, Debug)]
struct Backbone {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        let stem_out = cfg.stem_channels();
        let stem = ConvBn::new(
            store,
            &format!("{prefix}.conv1"),
            Conv2dSpec::new(3, stem_out, 7).stride(2).padding(3),
            rng,
        )?;
        let mut cin = stem_out;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let cout = cfg.stage_out_channels[s];
            let blocks = (0..cfg.stage_blocks[s])
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let name = format!("{prefix}.res{}.{b}", s + 1);
                    let block = Bottleneck::new(store, &name, cin, cout, stride, cfg, cfg.bottleneck_width(s), rng);
                    cin = cout;
                    block
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        Ok(Backbone { stem, stages })
    }

    fn stem(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<(Var, Var)> {
        let c1 = self.stem.forward(ctx, x, true)?;
        let p1 = maxpool2d(ctx.tape, &c1, 3, 2, 1)?;
        Ok((c1, p1))
    }

    fn stage(&self, ctx: &mut Ctx<'_>, stage: usize, x: &Var) -> Result<Var> {
        let mut x = x.clone();
        for block in &self.stages[stage - 1] {
            x = block.forward(ctx, &x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct Head {
    fuse: ConvBn,
    cls: ConvBn,
    out: Linear,
}

/// Cross fusion of same-location feature maps after stage `stage` (1-based).
///
/// Bidirectional fusion writes `sf + tf` back to both paths (the returned
/// vars are the same node); one-way fusion only updates the spatial map.
pub fn fuse_stage(tape: &mut Tape, sf: &Var, tf: &Var, variant: FusionVariant, stage: usize) -> Result<(Var, Var)> {
    if sf.shape() != tf.shape() {
        return Err(Error::ShapeMismatch {
            op: "fuse_stage",
            left: sf.shape().clone(),
            right: tf.shape().clone(),
        });
    }
    match variant.fusion_at(stage) {
        (true, true) => {
            let sum = tape.add(sf, tf)?;
            Ok((sum.clone(), sum))
        }
        (true, false) => Ok((tape.add(sf, tf)?, tf.clone())),
        (false, true) => Ok((sf.clone(), tape.add(sf, tf)?)),
        (false, false) => Ok((sf.clone(), tf.clone())),
    }
}

/// Result of a forward pass. Taps are keyed `"{path}.{tap}"` for the
/// post-fusion stage outputs, `"{path}.res{k}.pre"` before fusion, plus
/// `"fuse"`, `"cls"` and `"logits"`.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    pub taps: BTreeMap<String, Var>,
    pub params: Vec<Var>,
    pub norm_updates: Vec<NormUpdate>,
}

impl Forward {
    pub fn tap(&self, name: &str) -> Result<&Var> {
        self.taps.get(name).ok_or_else(|| Error::UnknownTap {
            name: name.to_string(),
            valid: self.taps.keys().cloned().collect::<Vec<_>>().join(", "),
        })
    }
}

#[derive(Clone, Debug)]
pub struct StcNet {
    pub config: BackboneConfig,
    pub variant: FusionVariant,
    pub seed: u64,
    pub store: ParamStore,
    spatial: Backbone,
    temporal: Option<Backbone>,
    head: Head,
}

/// Build a model with weights drawn deterministically from `seed`.
pub fn build_model(config: &BackboneConfig, variant: FusionVariant, seed: u64) -> Result<StcNet> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = crate::rng::stream(seed, &[0x1417]);
    let spatial = Backbone::new(&mut store, "spatial", config, &mut rng)?;
    let temporal = variant
        .has_temporal()
        .then(|| Backbone::new(&mut store, "temporal", config, &mut rng))
        .transpose()?;
    let top = config.stage_out_channels[3];
    let head = Head {
        fuse: ConvBn::new(
            &mut store,
            "head.fuse",
            Conv2dSpec::new(top, HEAD_CHANNELS, 1),
            &mut rng,
        )?,
        cls: ConvBn::new(
            &mut store,
            "head.cls",
            Conv2dSpec::new(HEAD_CHANNELS, HEAD_CHANNELS, 1),
            &mut rng,
        )?,
        out: Linear::new(&mut store, "head.out", HEAD_CHANNELS, config.n_classes, &mut rng)?,
    };
    Ok(StcNet {
        config: config.clone(),
        variant,
        seed,
        store,
        spatial,
        temporal,
        head,
    })
}

impl StcNet {
    /// Learnable scalar count (batchnorm running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.store.learnable_count()
    }

    pub fn output_layer(&self) -> &Linear {
        &self.head.out
    }

    fn backbone(&self, path: PathKind) -> Result<&Backbone> {
        match path {
            PathKind::Spatial => Ok(&self.spatial),
            PathKind::Temporal => self
                .temporal
                .as_ref()
                .ok_or_else(|| Error::arg("path", format!("variant {} has no temporal path", self.variant))),
        }
    }

    /// Check a `[B*T, 3, R, R]` input and return B.
    fn check_input(&self, name: &str, x: &Tensor) -> Result<usize> {
        let [n, c, h, w] = x.shape().nchw()?;
        if c != 3 || h != w {
            return Err(Error::arg(name, format!("expected [B*T, 3, R, R], got {}", x.shape())));
        }
        validate_resolution(h)?;
        let t = self.config.n_frames;
        if n % t != 0 {
            return Err(Error::arg(
                name,
                format!("batch of {n} frames is not a multiple of {t} frames per clip"),
            ));
        }
        Ok(n / t)
    }

    /// Run both paths and the head on a batch of clips stacked along the
    /// first axis (`B * n_frames` frames).
    pub fn forward(
        &self,
        tape: &mut Tape,
        mode: Mode,
        requires_grad: bool,
        rgb: &Tensor,
        res: &Tensor,
    ) -> Result<Forward> {
        let ctx = Ctx::new(tape, &self.store, mode, requires_grad);
        let s = ctx.tape.constant(rgb.clone());
        let t = ctx.tape.constant(res.clone());
        self.run(ctx, &s, &t)
    }

    /// Forward on input vars with some parameters replaced by caller-owned
    /// vars; all other parameters enter as constants.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        mode: Mode,
        rgb: &Var,
        res: &Var,
        replace: &[(ParamId, Var)],
    ) -> Result<Forward> {
        let mut ctx = Ctx::new(tape, &self.store, mode, false);
        for (id, var) in replace {
            ctx.replace(*id, var.clone())?;
        }
        self.run(ctx, rgb, res)
    }

    fn run(&self, mut ctx: Ctx<'_>, rgb: &Var, res: &Var) -> Result<Forward> {
        self.check_input("rgb", rgb.value())?;
        if rgb.shape() != res.shape() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: rgb.shape().clone(),
                right: res.shape().clone(),
            });
        }
        let mut taps = BTreeMap::new();
        let (c1, p1) = self.spatial.stem(&mut ctx, rgb)?;
        taps.insert("spatial.conv1".into(), c1);
        taps.insert("spatial.pool1".into(), p1.clone());
        let mut s = p1;
        let mut t = match &self.temporal {
            Some(tb) => {
                let (c1, p1) = tb.stem(&mut ctx, res)?;
                taps.insert("temporal.conv1".into(), c1);
                taps.insert("temporal.pool1".into(), p1.clone());
                Some(p1)
            }
            None => None,
        };
        for stage in 1..=4 {
            s = self.spatial.stage(&mut ctx, stage, &s)?;
            taps.insert(format!("spatial.res{stage}.pre"), s.clone());
            if let (Some(tb), Some(tv)) = (&self.temporal, t.as_mut()) {
                *tv = tb.stage(&mut ctx, stage, tv)?;
                taps.insert(format!("temporal.res{stage}.pre"), tv.clone());
                let (sf, tf) = fuse_stage(ctx.tape, &s, tv, self.variant, stage)?;
                s = sf;
                *tv = tf;
                taps.insert(format!("temporal.res{stage}"), tv.clone());
            }
            taps.insert(format!("spatial.res{stage}"), s.clone());
        }
        let top = match &t {
            Some(tv) => ctx.tape.add(&s, tv)?,
            None => s,
        };
        let logits = self.head_forward(&mut ctx, &top, &mut taps)?;
        let (params, norm_updates) = ctx.finish();
        Ok(Forward {
            logits,
            taps,
            params,
            norm_updates,
        })
    }

    fn head_forward(&self, ctx: &mut Ctx<'_>, top: &Var, taps: &mut BTreeMap<String, Var>) -> Result<Var> {
        let fused = self.head.fuse.forward(ctx, top, true)?;
        taps.insert("fuse".into(), fused.clone());
        let cls = self.head.cls.forward(ctx, &fused, true)?;
        let pooled = mean_pool(ctx.tape, &cls, self.config.n_frames)?;
        let b = pooled.shape().dims()[0];
        taps.insert("cls".into(), ctx.tape.reshape(&pooled, vec![b, HEAD_CHANNELS, 1, 1])?);
        let logits = self.head.out.forward(ctx, &pooled)?;
        taps.insert("logits".into(), logits.clone());
        Ok(logits)
    }

    /// Run one path alone with no fusion, returning its `"{path}.{tap}"` taps.
    pub fn run_single_path(
        &self,
        tape: &mut Tape,
        mode: Mode,
        path: PathKind,
        x: &Tensor,
    ) -> Result<BTreeMap<String, Var>> {
        self.check_input("x", x)?;
        let backbone = self.backbone(path)?;
        let mut ctx = Ctx::new(tape, &self.store, mode, false);
        let mut taps = BTreeMap::new();
        let p = path.name();
        let input = ctx.tape.constant(x.clone());
        let (c1, mut v) = backbone.stem(&mut ctx, &input)?;
        taps.insert(format!("{p}.conv1"), c1);
        taps.insert(format!("{p}.pool1"), v.clone());
        for stage in 1..=4 {
            v = backbone.stage(&mut ctx, stage, &v)?;
            taps.insert(format!("{p}.res{stage}"), v.clone());
        }
        Ok(taps)
    }

    /// Eval-mode forward with learnable parameters on the tape, returning the
    /// pass and the requested activation. After `tape.backward` on a function
    /// of the logits, `tape.grad(&activation)` holds its gradient.
    pub fn capture_activations(
        &self,
        tape: &mut Tape,
        rgb: &Tensor,
        res: &Tensor,
        tap: &str,
        path: PathKind,
    ) -> Result<(Forward, Var)> {
        if !TAPS.contains(&tap) {
            return Err(Error::UnknownTap {
                name: tap.to_string(),
                valid: TAPS.join(", "),
            });
        }
        self.backbone(path)?;
        let fwd = self.forward(tape, Mode::Eval, true, rgb, res)?;
        let act = fwd.tap(&format!("{}.{tap}", path.name()))?.clone();
        Ok((fwd, act))
    }
}
