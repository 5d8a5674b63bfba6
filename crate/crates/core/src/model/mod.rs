//! The cascaded network: shared blocks, the fully-connected coarse branch,
//! the dilated fine branch with its deconvolution bridge, and the post-hoc
//! refinement and fusion networks. Also builds the ablation variants.

mod check;
mod io;
mod layers;
mod params;
mod spec;

pub use check::{tiny_objective, tiny_spec, CheckTarget, NetworkObjective};
pub use io::{fnv1a, from_bytes, load, save, to_bytes, FORMAT_VERSION, MAGIC};
pub use params::{init_uniform, Gradients, Group, Param};
pub use spec::{BlockSpec, ConvSpec, DeconvSpec, NetworkSpec, PoolSpec, Variant};

use crate::discretize::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::loss::softmax_probs;
use crate::tensor::{bilinear_resize, concat_channels, split_channels, Tensor};
use layers::{Op, Seq, SeqCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct Network {
    shared: Seq,
    reg_trunk: Option<Seq>,
    reg_head: Option<Seq>,
    bridge: Option<Seq>,
    bridge_channels: usize,
    cls_trunk: Seq,
    cls_trunk_channels: usize,
    cls_mid: Seq,
    cls_head: Seq,
    refine_trunk: Option<Seq>,
    refine_trunk_channels: usize,
    refine_bridge: Option<Seq>,
    refine_bridge_channels: usize,
    refine_head: Option<Seq>,
    fusion: Option<Seq>,
}

/// All learnable parameters with their momentum buffers, plus the network layout and
/// discretization they were built for.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub scheme: DiscretizationScheme,
    /// Highest training stage completed (0 = untrained).
    pub stages_completed: u32,
    pub params: Vec<Param>,
    net: Network,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.scheme == other.scheme
            && self.stages_completed == other.stages_completed
            && self.params == other.params
    }
}

struct Builder<'r> {
    params: Vec<Param>,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn add(&mut self, name: String, group: Group, shape: &[usize], fan_in: usize, zero: bool, decay: bool) -> usize {
        let n: usize = shape.iter().product();
        let data = match (&mut self.rng, zero) {
            (Some(rng), false) => init_uniform(*rng, fan_in, n),
            _ => vec![0.0; n],
        };
        self.params.push(Param {
            name,
            group,
            value: Tensor::new(shape.to_vec(), data).expect("builder shapes are positive"),
            momentum: Tensor::zeros(shape),
            decay,
        });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, seq: &mut Seq, name: &str, group: Group, cin: usize, cout: usize, kernel: usize, dilation: usize, head: bool) {
        let weights = self.add(format!("{name}.w"), group, &[cout, cin, kernel, kernel], cin * kernel * kernel, head, true);
        let bias = self.add(format!("{name}.b"), group, &[cout], 1, true, false);
        seq.push(
            name,
            Op::Conv {
                weights,
                bias,
                stride: 1,
                padding: dilation * (kernel - 1) / 2,
                dilation,
            },
        );
        if !head {
            seq.push(format!("{name}.relu"), Op::Relu);
        }
    }

    fn block(&mut self, seq: &mut Seq, spec: &BlockSpec, group: Group, mut cin: usize) -> usize {
        for i in 0..spec.convs {
            let name = format!("{}.conv{}", spec.name, i + 1);
            self.conv(seq, &name, group, cin, spec.channels, spec.kernel, spec.dilation, false);
            cin = spec.channels;
        }
        if let Some(p) = spec.pool {
            seq.push(
                format!("{}.pool", spec.name),
                Op::MaxPool {
                    window: p.window,
                    stride: p.stride,
                    padding: p.padding,
                },
            );
        }
        cin
    }

    fn fc(&mut self, seq: &mut Seq, name: &str, group: Group, fan_in: usize, out: usize, head: bool) {
        let weights = self.add(format!("{name}.w"), group, &[out, fan_in], fan_in, head, true);
        let bias = self.add(format!("{name}.b"), group, &[out], 1, true, false);
        seq.push(name, Op::Fc { weights, bias });
        if !head {
            seq.push(format!("{name}.relu"), Op::Relu);
        }
    }

    fn deconv(&mut self, seq: &mut Seq, spec: &DeconvSpec, group: Group, cin: usize) {
        let k = spec.kernel;
        let fan_in = (cin * k * k / (spec.stride * spec.stride)).max(1);
        let weights = self.add(format!("{}.w", spec.name), group, &[cin, spec.channels, k, k], fan_in, false, true);
        let bias = self.add(format!("{}.b", spec.name), group, &[spec.channels], 1, true, false);
        seq.push(
            spec.name.clone(),
            Op::Deconv {
                weights,
                bias,
                stride: spec.stride,
                padding: spec.padding,
            },
        );
        seq.push(format!("{}.relu", spec.name), Op::Relu);
    }
}

fn pooled(size: usize, blocks: &[BlockSpec]) -> usize {
    blocks.iter().fold(size, |s, b| match b.pool {
        Some(p) => (s + 2 * p.padding).saturating_sub(p.window) / p.stride + 1,
        None => s,
    })
}

/// Lays out the network; with `rng` the weights are initialised, otherwise
/// all parameters are zero (used when loading).
fn assemble(spec: &NetworkSpec, rng: Option<&mut ChaCha8Rng>) -> (Network, Vec<Param>) {
    let mut b = Builder { params: Vec::new(), rng };
    let variant = spec.variant;
    let (h8, w8) = spec.coarse_size();
    let k = spec.bins;

    let mut shared = Seq::default();
    let mut ch = 3;
    for blk in &spec.shared {
        ch = b.block(&mut shared, blk, Group::Shared, ch);
    }
    let shared_channels = ch;

    let (mut reg_trunk, mut reg_head, mut bridge) = (None, None, None);
    let mut bridge_channels = 0;
    if variant.has_coarse_branch() {
        let mut trunk = Seq::default();
        let mut c = shared_channels;
        for blk in &spec.regression {
            c = b.block(&mut trunk, blk, Group::RegressionTrunk, c);
        }
        trunk.push("flatten", Op::Flatten);
        let mut width = c * pooled(h8, &spec.regression) * pooled(w8, &spec.regression);
        for (i, &out) in spec.fc.iter().enumerate() {
            b.fc(&mut trunk, &format!("r{}", i + 3), Group::RegressionTrunk, width, out, false);
            width = out;
        }
        let mut head = Seq::default();
        let outputs = if variant.coarse_is_classifier() { k * h8 * w8 } else { h8 * w8 };
        b.fc(&mut head, &format!("r{}", spec.fc.len() + 3), Group::RegressionHead, width, outputs, true);
        let mut br = Seq::default();
        b.deconv(&mut br, &spec.bridge, Group::Bridge, 1);
        bridge_channels = spec.bridge.channels;
        reg_trunk = Some(trunk);
        reg_head = Some(head);
        bridge = Some(br);
    }

    let mut cls_trunk = Seq::default();
    let mut c = shared_channels;
    for blk in &spec.classification {
        c = b.block(&mut cls_trunk, blk, Group::ClassTrunk, c);
    }
    let cls_trunk_channels = c;
    let mut cls_mid = Seq::default();
    let mut c = cls_trunk_channels + bridge_channels;
    for conv in &spec.classifier {
        b.conv(&mut cls_mid, &conv.name, Group::ClassTrunk, c, conv.channels, conv.kernel, 1, false);
        c = conv.channels;
    }
    let mut cls_head = Seq::default();
    let head_channels = if variant.fine_is_classifier() { k } else { 1 };
    let head_name = format!("c{}", spec.classifier.len() + 3);
    b.conv(&mut cls_head, &head_name, Group::ClassHead, c, head_channels, 1, 1, true);

    let (mut refine_trunk, mut refine_bridge, mut refine_head, mut fusion) = (None, None, None, None);
    let (mut refine_trunk_channels, mut refine_bridge_channels) = (0, 0);
    if variant.has_post_refinement() {
        let mut trunk = Seq::default();
        let mut c = 3;
        for blk in &spec.refinement {
            c = b.block(&mut trunk, blk, Group::Refinement, c);
        }
        refine_trunk_channels = c;
        let mut br = Seq::default();
        b.deconv(&mut br, &spec.refine_bridge, Group::Refinement, k);
        refine_bridge_channels = spec.refine_bridge.channels;
        let mut head = Seq::default();
        let mut c = refine_trunk_channels + refine_bridge_channels;
        for conv in &spec.refine_convs {
            b.conv(&mut head, &conv.name, Group::Refinement, c, conv.channels, conv.kernel, 1, false);
            c = conv.channels;
        }
        let last = format!("rf{}", spec.refine_convs.len() + 4);
        b.conv(&mut head, &last, Group::Refinement, c, k, 1, 1, true);

        let mut fu = Seq::default();
        let mut c = 3;
        for i in 0..spec.fusion_layers {
            let last = i + 1 == spec.fusion_layers;
            let out = if last { 1 } else { spec.fusion_channels };
            b.conv(&mut fu, &format!("fusion{}", i + 1), Group::Fusion, c, out, 3, 1, last);
            c = out;
        }
        refine_trunk = Some(trunk);
        refine_bridge = Some(br);
        refine_head = Some(head);
        fusion = Some(fu);
    }

    let net = Network {
        shared,
        reg_trunk,
        reg_head,
        bridge,
        bridge_channels,
        cls_trunk,
        cls_trunk_channels,
        cls_mid,
        cls_head,
        refine_trunk,
        refine_trunk_channels,
        refine_bridge,
        refine_bridge_channels,
        refine_head,
        fusion,
    };
    (net, b.params)
}

/// How much of the cascade a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Shared blocks and the coarse branch only.
    Coarse,
    Full,
}

/// Activations of one cascade forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Feature vector out of the last hidden fully-connected layer.
    pub gamma: Option<Tensor>,
    /// Coarse head output: log-depth `N×1×h×w`, or logits `N×K×h×w` (CCCN).
    pub coarse: Option<Tensor>,
    /// Log-depth map fed into the bridge (soft-decoded for CCCN).
    pub bridged_log_depth: Option<Tensor>,
    /// Features out of c4.
    pub lambda: Option<Tensor>,
    /// Fine head output: logits `N×K×h×w` or log-depth `N×1×h×w`.
    pub fine: Option<Tensor>,
    coarse_probs: Option<Tensor>,
    shared_cache: SeqCache,
    reg_trunk_cache: SeqCache,
    reg_head_cache: SeqCache,
    bridge_cache: SeqCache,
    cls_trunk_cache: SeqCache,
    cls_mid_cache: SeqCache,
    cls_head_cache: SeqCache,
}

impl ForwardCache {
    /// Continuous coarse depth map `D0` in meters.
    pub fn d0(&self) -> Option<Tensor> {
        self.bridged_log_depth.as_ref().map(|t| t.map(f64::exp))
    }
}

/// Gradients of the loss with respect to the cascade's head outputs.
#[derive(Debug, Clone, Default)]
pub struct LossSeeds {
    pub coarse: Option<Tensor>,
    pub fine: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct RefineCache {
    /// `N×K×(H/4)×(W/4)` logits.
    pub logits: Tensor,
    trunk_cache: SeqCache,
    bridge_cache: SeqCache,
    head_cache: SeqCache,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    /// The three log-depth maps stacked as channels (coarse, fine, refined).
    pub input: Tensor,
    /// Fused log-depth, `N×1×(H/4)×(W/4)`.
    pub log_depth: Tensor,
    cache: SeqCache,
}

impl FusionCache {
    pub fn depth(&self) -> Tensor {
        self.log_depth.map(f64::exp)
    }
}

/// Index of the largest logit per pixel, lowest index on ties.
pub fn argmax_bins(logits: &Tensor) -> Vec<usize> {
    let (n, k, h, w) = logits.dims4();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut best = 0;
            for c in 1..k {
                if logits.data()[base + c * plane + p] > logits.data()[base + best * plane + p] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}

impl ModelState {
    pub fn build(spec: &NetworkSpec, scheme: &DiscretizationScheme, seed: u64) -> Result<Self> {
        spec.validate()?;
        scheme.validate()?;
        if scheme.bins != spec.bins {
            return Err(Error::Config(format!(
                "scheme has {} bins but the network emits {}",
                scheme.bins, spec.bins
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, params) = assemble(spec, Some(&mut rng));
        Ok(ModelState {
            spec: spec.clone(),
            scheme: *scheme,
            stages_completed: 0,
            params,
            net,
        })
    }

    /// Same layout as [`ModelState::build`] with every parameter zero.
    pub(crate) fn zeroed(spec: &NetworkSpec, scheme: &DiscretizationScheme) -> Result<Self> {
        spec.validate()?;
        let (net, params) = assemble(spec, None);
        Ok(ModelState {
            spec: spec.clone(),
            scheme: *scheme,
            stages_completed: 0,
            params,
            net,
        })
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients::zeros_like(&self.params)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Redraws the zero-initialised head weights from the fan-in uniform
    /// distribution and draws every bias from `[0.1, 0.24]`.
    ///
    /// Zero heads block all gradient, and zero biases put units fed by dead
    /// regions exactly on the ReLU kink; positive biases also keep most units
    /// active, so few gradient entries are small enough to drown in
    /// finite-difference roundoff.
    pub fn randomize_for_check(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            let shape = p.value.shape().to_vec();
            let data = if !p.decay {
                init_uniform(&mut rng, 300, p.value.len()).into_iter().map(|b| 0.1 + b.abs()).collect()
            } else if p.value.max_abs() == 0.0 {
                let fan_in = shape[1..].iter().product();
                init_uniform(&mut rng, fan_in, p.value.len())
            } else {
                continue;
            };
            p.value = Tensor::new(shape, data).expect("same shape");
        }
    }

    /// Copies b1–b3 into the refinement blocks where shapes agree.
    pub fn init_refinement_from_shared(&mut self) {
        let pairs: Vec<(String, String)> = self
            .spec
            .shared
            .iter()
            .zip(&self.spec.refinement)
            .map(|(s, r)| (format!("{}.", s.name), format!("{}.", r.name)))
            .collect();
        for (from, to) in pairs {
            let sources: Vec<(String, Tensor)> = self
                .params
                .iter()
                .filter_map(|p| p.name.strip_prefix(&from).map(|rest| (format!("{to}{rest}"), p.value.clone())))
                .collect();
            for (name, value) in sources {
                if let Some(dst) = self.param_mut(&name) {
                    if dst.value.shape() == value.shape() {
                        dst.value = value;
                    }
                }
            }
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (_, c, h, w) = image.dims4();
        if image.shape().len() != 4 || c != 3 || h != self.spec.input_height || w != self.spec.input_width {
            return Err(Error::shape(
                "forward",
                format!(
                    "image {:?} does not match N×3×{}×{}",
                    image.shape(),
                    self.spec.input_height,
                    self.spec.input_width
                ),
            ));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("image values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn centred(image: &Tensor) -> Tensor {
        image.map(|v| v - 0.5)
    }

    fn log_representatives(&self) -> Result<Vec<f64>> {
        Ok(self.scheme.representatives()?.into_iter().map(f64::ln).collect())
    }

    /// Runs the cascade (shared blocks, coarse branch, bridge, fine branch).
    pub fn forward_rccn(&self, image: &Tensor) -> Result<ForwardCache> {
        self.forward_scoped(image, Scope::Full, true)
    }

    pub fn forward_scoped(&self, image: &Tensor, scope: Scope, keep: bool) -> Result<ForwardCache> {
        self.check_image(image)?;
        let net = &self.net;
        let p = &self.params;
        let n = image.shape()[0];
        let (h8, w8) = self.spec.coarse_size();
        let k = self.spec.bins;
        let (shared, shared_cache) = net.shared.forward(p, Self::centred(image), keep)?;

        let mut out = ForwardCache {
            gamma: None,
            coarse: None,
            bridged_log_depth: None,
            lambda: None,
            fine: None,
            coarse_probs: None,
            shared_cache,
            reg_trunk_cache: SeqCache::default(),
            reg_head_cache: SeqCache::default(),
            bridge_cache: SeqCache::default(),
            cls_trunk_cache: SeqCache::default(),
            cls_mid_cache: SeqCache::default(),
            cls_head_cache: SeqCache::default(),
        };

        let mut bridge_features = None;
        if let (Some(trunk), Some(head)) = (&net.reg_trunk, &net.reg_head) {
            let (gamma, c) = trunk.forward(p, shared.clone(), keep)?;
            out.reg_trunk_cache = c;
            let (raw, c) = head.forward(p, gamma.clone(), keep)?;
            out.reg_head_cache = c;
            out.gamma = Some(gamma);
            let bridged = if self.spec.variant.coarse_is_classifier() {
                let logits = raw.reshape(&[n, k, h8, w8])?;
                let probs = softmax_probs(&logits)?;
                let reps = self.log_representatives()?;
                let plane = h8 * w8;
                let mut soft = vec![0.0; n * plane];
                for b in 0..n {
                    for (c, rep) in reps.iter().enumerate() {
                        let src = &probs.data()[(b * k + c) * plane..(b * k + c + 1) * plane];
                        for (s, &pr) in soft[b * plane..(b + 1) * plane].iter_mut().zip(src) {
                            *s += pr * rep;
                        }
                    }
                }
                out.coarse = Some(logits);
                out.coarse_probs = Some(probs);
                Tensor::new(vec![n, 1, h8, w8], soft)?
            } else {
                let map = raw.reshape(&[n, 1, h8, w8])?;
                out.coarse = Some(map.clone());
                map
            };
            if scope == Scope::Full {
                let bridge = net.bridge.as_ref().expect("coarse branch implies a bridge");
                let (feat, c) = bridge.forward(p, bridged.clone(), keep)?;
                out.bridge_cache = c;
                bridge_features = Some(feat);
            }
            out.bridged_log_depth = Some(bridged);
        }
        if scope == Scope::Coarse {
            return Ok(out);
        }

        let (trunk, c) = net.cls_trunk.forward(p, shared, keep)?;
        out.cls_trunk_cache = c;
        let joined = match &bridge_features {
            Some(f) => concat_channels(&[f, &trunk])?,
            None => trunk,
        };
        let (lambda, c) = net.cls_mid.forward(p, joined, keep)?;
        out.cls_mid_cache = c;
        let (fine, c) = net.cls_head.forward(p, lambda.clone(), keep)?;
        out.cls_head_cache = c;
        out.lambda = Some(lambda);
        out.fine = Some(fine);
        Ok(out)
    }

    /// Backpropagates head-output gradients through the cascade. The fine
    /// seed reaches the coarse parameters through the bridge.
    pub fn backward_rccn(&self, cache: &ForwardCache, seeds: &LossSeeds, grads: &mut Gradients) -> Result<()> {
        let net = &self.net;
        let p = &self.params;
        let k = self.spec.bins;
        let mut grad_shared: Option<Tensor> = None;
        let mut add_shared = |g: Tensor| -> Result<()> {
            match &mut grad_shared {
                Some(acc) => acc.add_assign(&g),
                None => {
                    grad_shared = Some(g);
                    Ok(())
                }
            }
        };

        let mut grad_bridged: Option<Tensor> = None;
        if let Some(g_fine) = &seeds.fine {
            let g_lambda = net
                .cls_head
                .backward(p, grads, &cache.cls_head_cache, g_fine.clone(), true)?
                .expect("input gradient requested");
            let g_joined = net
                .cls_mid
                .backward(p, grads, &cache.cls_mid_cache, g_lambda, true)?
                .expect("input gradient requested");
            let g_trunk = if let Some(bridge) = &net.bridge {
                let parts = split_channels(&g_joined, &[net.bridge_channels, net.cls_trunk_channels])?;
                let mut parts = parts.into_iter();
                let g_feat = parts.next().expect("two parts");
                grad_bridged = bridge.backward(p, grads, &cache.bridge_cache, g_feat, true)?;
                parts.next().expect("two parts")
            } else {
                g_joined
            };
            let g = net
                .cls_trunk
                .backward(p, grads, &cache.cls_trunk_cache, g_trunk, true)?
                .expect("input gradient requested");
            add_shared(g)?;
        }

        if let (Some(trunk), Some(head)) = (&net.reg_trunk, &net.reg_head) {
            let coarse = cache
                .coarse
                .as_ref()
                .ok_or_else(|| Error::shape("backward_rccn", "cache has no coarse output"))?;
            let (n, _, h8, w8) = coarse.dims4();
            let mut g_coarse: Option<Tensor> = seeds.coarse.clone();
            if let Some(gb) = grad_bridged {
                let through = if self.spec.variant.coarse_is_classifier() {
                    let probs = cache.coarse_probs.as_ref().expect("CCCN caches probabilities");
                    let bridged = cache.bridged_log_depth.as_ref().expect("bridged map cached");
                    let reps = self.log_representatives()?;
                    let plane = h8 * w8;
                    let mut g = vec![0.0; probs.len()];
                    for b in 0..n {
                        for (c, rep) in reps.iter().enumerate() {
                            let base = (b * k + c) * plane;
                            for i in 0..plane {
                                let m = bridged.data()[b * plane + i];
                                g[base + i] = probs.data()[base + i] * (rep - m) * gb.data()[b * plane + i];
                            }
                        }
                    }
                    Tensor::new(probs.shape().to_vec(), g)?
                } else {
                    gb
                };
                match &mut g_coarse {
                    Some(g) => g.add_assign(&through)?,
                    None => g_coarse = Some(through),
                }
            }
            if let Some(g) = g_coarse {
                let len = g.len();
                let flat = g.reshape(&[n, len / n])?;
                let g_gamma = head
                    .backward(p, grads, &cache.reg_head_cache, flat, true)?
                    .expect("input gradient requested");
                let g = trunk
                    .backward(p, grads, &cache.reg_trunk_cache, g_gamma, true)?
                    .expect("input gradient requested");
                add_shared(g)?;
            }
        }

        if let Some(g) = grad_shared {
            net.shared.backward(p, grads, &cache.shared_cache, g, false)?;
        }
        Ok(())
    }

    /// Lifts the fine logits to /4 using shallow image features.
    pub fn forward_refine(&self, image: &Tensor, cache: &ForwardCache, keep: bool) -> Result<RefineCache> {
        let (Some(trunk), Some(bridge), Some(head)) = (&self.net.refine_trunk, &self.net.refine_bridge, &self.net.refine_head) else {
            return Err(Error::Config(format!("variant {} has no refinement network", self.spec.variant)));
        };
        self.check_image(image)?;
        let fine = cache
            .fine
            .as_ref()
            .ok_or_else(|| Error::shape("forward_refine", "cache has no fine logits"))?;
        let p = &self.params;
        let (features, trunk_cache) = trunk.forward(p, Self::centred(image), keep)?;
        let (lifted, bridge_cache) = bridge.forward(p, fine.clone(), keep)?;
        let joined = concat_channels(&[&lifted, &features])?;
        let (logits, head_cache) = head.forward(p, joined, keep)?;
        Ok(RefineCache {
            logits,
            trunk_cache,
            bridge_cache,
            head_cache,
        })
    }

    /// Gradients for the refinement parameters only; the cascade is frozen.
    pub fn backward_refine(&self, cache: &RefineCache, grad_logits: Tensor, grads: &mut Gradients) -> Result<()> {
        let (Some(trunk), Some(bridge), Some(head)) = (&self.net.refine_trunk, &self.net.refine_bridge, &self.net.refine_head) else {
            return Err(Error::Config("no refinement network".into()));
        };
        let p = &self.params;
        let g = head
            .backward(p, grads, &cache.head_cache, grad_logits, true)?
            .expect("input gradient requested");
        let parts = split_channels(&g, &[self.net.refine_bridge_channels, self.net.refine_trunk_channels])?;
        bridge.backward(p, grads, &cache.bridge_cache, parts[0].clone(), false)?;
        trunk.backward(p, grads, &cache.trunk_cache, parts[1].clone(), false)?;
        Ok(())
    }

    /// Log-depth of the argmax class per pixel, as an `N×1×h×w` map.
    pub fn decode_log_map(&self, logits: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = logits.dims4();
        let reps = self.log_representatives()?;
        let data = argmax_bins(logits).into_iter().map(|b| reps[b]).collect();
        Tensor::new(vec![n, 1, h, w], data)
    }

    /// Stacks the coarse, fine and refined maps (log-depth, /4 grid).
    pub fn fusion_inputs(&self, cache: &ForwardCache, refine: &RefineCache) -> Result<Tensor> {
        let (h4, w4) = self.spec.refine_size();
        let coarse = match (&cache.coarse, self.spec.variant.coarse_is_classifier()) {
            (Some(logits), true) => self.decode_log_map(logits)?,
            (Some(map), false) => map.clone(),
            (None, _) => return Err(Error::shape("fusion", "cache has no coarse map")),
        };
        let fine = cache
            .fine
            .as_ref()
            .ok_or_else(|| Error::shape("fusion", "cache has no fine logits"))?;
        let coarse = bilinear_resize(&coarse, h4, w4)?;
        let fine = bilinear_resize(&self.decode_log_map(fine)?, h4, w4)?;
        let refined = self.decode_log_map(&refine.logits)?;
        concat_channels(&[&coarse, &fine, &refined])
    }

    pub fn forward_fusion(&self, cache: &ForwardCache, refine: &RefineCache, keep: bool) -> Result<FusionCache> {
        self.fuse(self.fusion_inputs(cache, refine)?, keep)
    }

    /// Runs the fusion network on precomputed [`Self::fusion_inputs`].
    pub fn fuse(&self, input: Tensor, keep: bool) -> Result<FusionCache> {
        let fusion = self
            .net
            .fusion
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no fusion network", self.spec.variant)))?;
        let (log_depth, cache) = fusion.forward(&self.params, input.clone(), keep)?;
        Ok(FusionCache {
            input,
            log_depth,
            cache,
        })
    }

    pub fn backward_fusion(&self, cache: &FusionCache, grad_log: Tensor, grads: &mut Gradients) -> Result<()> {
        let fusion = self.net.fusion.as_ref().ok_or_else(|| Error::Config("no fusion network".into()))?;
        fusion.backward(&self.params, grads, &cache.cache, grad_log, false)?;
        Ok(())
    }

    /// Every head's depth map at full input resolution (meters).
    pub fn head_maps(&self, image: &Tensor) -> Result<HeadMaps> {
        let (h, w) = (self.spec.input_height, self.spec.input_width);
        let cache = self.forward_scoped(image, Scope::Full, false)?;
        let up_log = |t: &Tensor| -> Result<Tensor> { Ok(bilinear_resize(&t.map(f64::exp), h, w)?) };
        let nearest = |t: &Tensor| -> Result<Tensor> { nearest_resize(&t.map(f64::exp), h, w) };
        let coarse = match (&cache.coarse, self.spec.variant.coarse_is_classifier()) {
            (Some(logits), true) => Some(nearest(&self.decode_log_map(logits)?)?),
            (Some(map), false) => Some(up_log(map)?),
            _ => None,
        };
        let fine_out = cache.fine.as_ref().expect("full scope computes the fine head");
        let fine = if self.spec.variant.fine_is_classifier() {
            nearest(&self.decode_log_map(fine_out)?)?
        } else {
            up_log(fine_out)?
        };
        let (mut refined, mut fused) = (None, None);
        if self.spec.variant.has_post_refinement() && self.stages_completed >= 3 {
            let rc = self.forward_refine(image, &cache, false)?;
            refined = Some(nearest(&self.decode_log_map(&rc.logits)?)?);
            if self.stages_completed >= 4 {
                let fc = self.forward_fusion(&cache, &rc, false)?;
                fused = Some(bilinear_resize(&fc.depth(), h, w)?);
            }
        }
        Ok(HeadMaps {
            coarse,
            fine,
            refined,
            fused,
        })
    }

    /// Full-resolution depth from the most refined trained head, clamped to
    /// the scheme's range.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        if self.stages_completed == 0 {
            return Err(Error::Config("model has not been trained".into()));
        }
        let maps = self.head_maps(image)?;
        let best = maps.fused.or(maps.refined).unwrap_or(maps.fine);
        let (a, b) = (self.scheme.min_depth, self.scheme.max_depth);
        Ok(best.map(|v| v.clamp(a, b)))
    }
}

/// Full-resolution depth maps (meters) from each available head.
#[derive(Debug, Clone)]
pub struct HeadMaps {
    pub coarse: Option<Tensor>,
    pub fine: Tensor,
    pub refined: Option<Tensor>,
    pub fused: Option<Tensor>,
}

/// Nearest-neighbour upsampling by block replication (also handles
/// non-integer ratios by floor mapping).
pub fn nearest_resize(input: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4();
    if new_h == 0 || new_w == 0 {
        return Err(Error::shape("nearest_resize", "target size must be >= 1"));
    }
    let mut out = Vec::with_capacity(n * c * new_h * new_w);
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..new_h {
            let sy = y * h / new_h;
            for x in 0..new_w {
                out.push(src[sy * w + x * w / new_w]);
            }
        }
    }
    Tensor::new(vec![n, c, new_h, new_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Mode;

    fn scheme() -> DiscretizationScheme {
        DiscretizationScheme::new(Mode::SpacingIncreasing, 1.0, 40.0, 4).unwrap()
    }

    fn model(variant: Variant, seed: u64) -> ModelState {
        ModelState::build(&tiny_spec(variant), &scheme(), seed).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, 3, 32, 32], |_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
    }

    #[test]
    fn build_is_a_function_of_the_seed() {
        assert_eq!(model(Variant::Rccn, 1), model(Variant::Rccn, 1));
        assert_ne!(model(Variant::Rccn, 1), model(Variant::Rccn, 2));
    }

    #[test]
    fn fresh_heads_predict_unit_depth_and_uniform_bins() {
        let m = model(Variant::Rccn, 3);
        let cache = m.forward_rccn(&image(0)).unwrap();
        assert!(cache.d0().unwrap().data().iter().all(|&d| d == 1.0));
        let probs = softmax_probs(cache.fine.as_ref().unwrap()).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn coarse_bias_of_ln_two_doubles_the_depth() {
        let mut m = model(Variant::Rrcn, 4);
        let img = image(1);
        let before = m.forward_rccn(&img).unwrap().d0().unwrap();
        m.param_mut("r5.b").unwrap().value.data_mut().iter_mut().for_each(|b| *b += std::f64::consts::LN_2);
        let after = m.forward_rccn(&img).unwrap().d0().unwrap();
        for (a, b) in after.data().iter().zip(before.data()) {
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rccn_with_a_silent_bridge_reduces_to_c() {
        let mut rccn = model(Variant::Rccn, 5);
        let mut c = model(Variant::C, 6);
        rccn.randomize_for_check(7);
        c.randomize_for_check(8);
        for name in ["de.w", "de.b"] {
            rccn.param_mut(name).unwrap().value.fill(0.0);
        }
        let bridge = rccn.net.bridge_channels;
        for p in &c.params {
            let dst = rccn.param_mut(&p.name).unwrap();
            if dst.value.shape() == p.value.shape() {
                dst.value = p.value.clone();
            } else {
                // c3 sees the bridge channels first; copy C's weights into the
                // trunk slice and leave the bridge slice as it is.
                let (cout, cin_c, kh, kw) = p.value.dims4();
                let cin_r = dst.value.shape()[1];
                assert_eq!(cin_r, cin_c + bridge);
                for o in 0..cout {
                    for i in 0..cin_c * kh * kw {
                        dst.value.data_mut()[o * cin_r * kh * kw + bridge * kh * kw + i] = p.value.data()[o * cin_c * kh * kw + i];
                    }
                }
            }
        }
        let img = image(2);
        let a = rccn.forward_rccn(&img).unwrap().fine.unwrap();
        let b = c.forward_rccn(&img).unwrap().fine.unwrap();
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn output_grids_are_an_eighth_and_a_quarter() {
        let mut m = model(Variant::Rccn, 9);
        m.randomize_for_check(1);
        let img = image(3);
        let cache = m.forward_rccn(&img).unwrap();
        assert_eq!(cache.coarse.as_ref().unwrap().shape(), &[1, 1, 4, 4]);
        assert_eq!(cache.fine.as_ref().unwrap().shape(), &[1, 4, 4, 4]);
        let rc = m.forward_refine(&img, &cache, false).unwrap();
        assert_eq!(rc.logits.shape(), &[1, 4, 8, 8]);
        let fc = m.forward_fusion(&cache, &rc, false).unwrap();
        assert_eq!(fc.input.shape(), &[1, 3, 8, 8]);
        assert_eq!(fc.log_depth.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn argmax_prefers_the_lowest_index_and_ignores_per_pixel_shifts() {
        let logits = Tensor::new(vec![1, 3, 1, 2], vec![1.0, 5.0, 2.0, 5.0, 2.0, 0.0]).unwrap();
        assert_eq!(argmax_bins(&logits), vec![1, 0]);
        let shifted = Tensor::from_fn(&[1, 3, 1, 2], |i| logits.data()[i] + if i % 2 == 0 { 100.0 } else { -7.5 });
        assert_eq!(argmax_bins(&shifted), argmax_bins(&logits));
    }

    #[test]
    fn fusion_can_pass_the_refined_map_through() {
        let mut m = model(Variant::Rccn, 10);
        m.randomize_for_check(2);
        m.stages_completed = 4;
        let fusion: Vec<usize> = (0..m.params.len()).filter(|&i| m.params[i].group == Group::Fusion).collect();
        let mut first = true;
        for &i in &fusion {
            let p = &mut m.params[i];
            p.value.fill(0.0);
            if p.value.shape().len() == 4 {
                let (_, cin, kh, kw) = p.value.dims4();
                let src = if first { 2 } else { 0 };
                p.value.data_mut()[(src * kh + kh / 2) * kw + kw / 2] = 1.0;
                assert!(src < cin);
                first = false;
            }
        }
        let img = image(4);
        let cache = m.forward_rccn(&img).unwrap();
        let rc = m.forward_refine(&img, &cache, false).unwrap();
        let fc = m.forward_fusion(&cache, &rc, false).unwrap();
        assert_eq!(fc.log_depth.data(), m.decode_log_map(&rc.logits).unwrap().data());
    }

    #[test]
    fn predict_is_full_size_and_clamped() {
        let mut m = model(Variant::Rrcn, 11);
        let img = image(5);
        assert!(matches!(m.predict(&img), Err(Error::Config(_))));
        m.stages_completed = 2;
        m.param_mut("r5.b").unwrap().value.fill(10.0);
        let depth = m.predict(&img).unwrap();
        assert_eq!(depth.shape(), &[1, 1, 32, 32]);
        assert!(depth.data().iter().all(|&d| (1.0..=40.0).contains(&d)));
        m.params[0].value.data_mut()[0] = f64::NAN;
        assert!(matches!(m.predict(&img), Err(Error::NonFinite(_))));
    }

    #[test]
    fn images_outside_the_unit_range_are_rejected() {
        let m = model(Variant::C, 12);
        let bad = Tensor::full(&[1, 3, 32, 32], 1.5);
        assert!(m.forward_rccn(&bad).is_err());
        assert!(m.forward_rccn(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
    }
}
