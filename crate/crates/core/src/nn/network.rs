//! Mini-ResNet with optional Wavelet-Attention downsampling blocks.
//!
//! Stem (3×3 conv, BN, ReLU), then one stage per entry of `stage_widths`.
//! Stage 1 keeps the resolution; the first block of every later stage halves
//! it. A downsampling block is either the baseline (stride-2 3×3 conv, 1×1
//! stride-2 projection shortcut) or a WA block (DWT attention + head conv,
//! shortcut from the raw low-frequency subband through a 1×1 conv).

use std::fmt;
use std::str::FromStr;

use super::layers::{batchnorm, global_avg_pool, linear, update_running, BatchStats, Mode, RunningStats};
use super::params::{Bound, ParamId, ParamKind, ParamStore};
use super::{he_normal, he_normal_fan};
use crate::attention::{wa_graph, WaConfig, WaVariant};
use crate::autodiff::{Graph, NodeId};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::Wavelet;

/// Which downsampling stages use the WA block. Stages are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    None,
    Layer(usize),
    All,
}

impl Placement {
    pub fn uses_wa(self, stage: usize) -> bool {
        match self {
            Placement::None => false,
            Placement::Layer(s) => s == stage,
            Placement::All => stage >= 2,
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Placement::None),
            "all" => Ok(Placement::All),
            _ => match s.strip_prefix("layer").and_then(|n| n.parse::<usize>().ok()) {
                Some(1) => Err(Error::Config("placement layer1: stage 1 never downsamples".into())),
                Some(n) if n >= 2 => Ok(Placement::Layer(n)),
                _ => Err(Error::Config(format!("unknown placement {s:?}; valid: none, layer2, layer3, all"))),
            },
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::None => f.write_str("none"),
            Placement::Layer(n) => write!(f, "layer{n}"),
            Placement::All => f.write_str("all"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub placement: Placement,
    pub wavelet: Wavelet,
    /// Head of the WA blocks. `Plain` only fits stages whose width does not change.
    pub variant: WaVariant,
    pub num_classes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            in_channels: 3,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            placement: Placement::None,
            wavelet: Wavelet::Haar,
            variant: WaVariant::Stride,
            num_classes: 10,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes == 0 || self.blocks_per_stage == 0 {
            return bad("in_channels, num_classes and blocks_per_stage must be positive".into());
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return bad(format!("stage widths must be non-empty and positive, got {:?}", self.stage_widths));
        }
        let stages = self.stage_widths.len();
        match self.placement {
            Placement::Layer(s) if s > stages => {
                return bad(format!("placement layer{s} refers to a missing stage (network has {stages})"))
            }
            Placement::All if stages < 2 => return bad("placement all needs a downsampling stage".into()),
            _ => {}
        }
        if self.variant == WaVariant::Plain {
            for s in 2..=stages {
                if self.placement.uses_wa(s) && self.stage_widths[s - 2] != self.stage_widths[s - 1] {
                    return bad(format!("WA variant plain cannot change width at stage {s}; use stride or one_by_one"));
                }
            }
        }
        Ok(())
    }

    /// Trainable parameter count from the widths alone.
    pub fn param_count(&self) -> usize {
        let conv = |o: usize, i: usize, k: usize| o * i * k * k;
        let bn = |c: usize| 2 * c;
        let w0 = self.stage_widths[0];
        let mut total = conv(w0, self.in_channels, 3) + bn(w0);
        let mut cin = w0;
        for (si, &w) in self.stage_widths.iter().enumerate() {
            let stage = si + 1;
            for b in 0..self.blocks_per_stage {
                let down = b == 0 && stage >= 2;
                let first = if down && self.placement.uses_wa(stage) {
                    self.variant.head_geometry().map_or(0, |(k, _)| conv(w, cin, k))
                } else {
                    conv(w, cin, 3)
                };
                total += first + bn(w) + conv(w, w, 3) + bn(w);
                if down || cin != w {
                    total += conv(w, cin, 1) + bn(w);
                }
                cin = w;
            }
        }
        total + cin * self.num_classes + self.num_classes
    }
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
enum First {
    Conv(Conv),
    Wa { cfg: WaConfig, head: Option<ParamId> },
}

#[derive(Clone, Debug)]
enum Shortcut {
    Identity,
    Projection(Conv, Norm),
    /// 1×1 conv + BN on the input's low-frequency subband.
    LowFrequency(Conv, Norm),
}

#[derive(Clone, Debug)]
struct Block {
    name: String,
    first: First,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    shortcut: Shortcut,
}

/// Batch statistics of one BN layer, to be folded into its running stats.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    mean: ParamId,
    var: ParamId,
    pub stats: BatchStats<T>,
}

pub struct ForwardOutput<T> {
    pub logits: NodeId,
    /// Empty in eval mode.
    pub bn_updates: Vec<BnUpdate<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
    stem: (Conv, Norm),
    stages: Vec<Vec<Block>>,
    fc: (ParamId, ParamId),
}

struct Builder<'a, T: Scalar> {
    params: ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, shape: [usize; 4], stride: usize) -> Result<Conv> {
        let w = self.params.add(format!("{name}.weight"), ParamKind::Weight, he_normal(self.rng, &shape))?;
        Ok(Conv { w, stride, pad: shape[3] / 2 })
    }

    fn norm(&mut self, name: &str, c: usize) -> Result<Norm> {
        let run = RunningStats::<T>::new(c)?;
        Ok(Norm {
            gamma: self.params.add(format!("{name}.weight"), ParamKind::Norm, Tensor::full(&[c], T::one())?)?,
            beta: self.params.add(format!("{name}.bias"), ParamKind::Norm, Tensor::zeros(&[c])?)?,
            mean: self.params.add(format!("{name}.running_mean"), ParamKind::Buffer, run.mean)?,
            var: self.params.add(format!("{name}.running_var"), ParamKind::Buffer, run.var)?,
        })
    }
}

/// Builds a network with He-initialized weights drawn from `Rng::new(seed)` in registration order.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut b = Builder { params: ParamStore::new(), rng: &mut rng };
    let w0 = spec.stage_widths[0];
    let stem = (b.conv("stem.conv", [w0, spec.in_channels, 3, 3], 1)?, b.norm("stem.bn", w0)?);
    let mut stages = Vec::new();
    let mut cin = w0;
    for (si, &w) in spec.stage_widths.iter().enumerate() {
        let stage = si + 1;
        let mut blocks = Vec::new();
        for bi in 0..spec.blocks_per_stage {
            let name = format!("layer{stage}.{bi}");
            let down = bi == 0 && stage >= 2;
            let wa = down && spec.placement.uses_wa(stage);
            let first = if wa {
                let cfg = WaConfig { wavelet: spec.wavelet, variant: spec.variant, out_channels: w };
                let head = match cfg.head_shape(cin) {
                    Some(shape) => {
                        let v = he_normal(b.rng, &shape);
                        Some(b.params.add(format!("{name}.wa.head.weight"), ParamKind::Weight, v)?)
                    }
                    None => None,
                };
                First::Wa { cfg, head }
            } else {
                First::Conv(b.conv(&format!("{name}.conv1"), [w, cin, 3, 3], if down { 2 } else { 1 })?)
            };
            let bn1 = b.norm(&format!("{name}.bn1"), w)?;
            let conv2 = b.conv(&format!("{name}.conv2"), [w, w, 3, 3], 1)?;
            let bn2 = b.norm(&format!("{name}.bn2"), w)?;
            let shortcut = if down || cin != w {
                let conv = b.conv(&format!("{name}.shortcut.conv"), [w, cin, 1, 1], if wa || !down { 1 } else { 2 })?;
                let norm = b.norm(&format!("{name}.shortcut.bn"), w)?;
                if wa {
                    Shortcut::LowFrequency(conv, norm)
                } else {
                    Shortcut::Projection(conv, norm)
                }
            } else {
                Shortcut::Identity
            };
            blocks.push(Block { name, first, bn1, conv2, bn2, shortcut });
            cin = w;
        }
        stages.push(blocks);
    }
    let k = spec.num_classes;
    let fc_w = b.params.add("fc.weight", ParamKind::Weight, he_normal_fan(b.rng, &[cin, k], cin))?;
    let fc_b = b.params.add("fc.bias", ParamKind::Bias, Tensor::zeros(&[k])?)?;
    Ok(Network { spec: spec.clone(), params: b.params, stem, stages, fc: (fc_w, fc_b) })
}

struct Pass<'a, T: Scalar> {
    net: &'a Network<T>,
    bound: &'a Bound,
    mode: Mode,
    updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> Pass<'_, T> {
    fn conv(&self, g: &mut Graph<T>, c: &Conv, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, self.bound.node(c.w), None, c.stride, c.pad)
    }

    fn norm(&mut self, g: &mut Graph<T>, n: &Norm, x: NodeId) -> Result<NodeId> {
        let p = &self.net.params;
        let running = RunningStats { mean: p.value(n.mean).clone(), var: p.value(n.var).clone() };
        let (y, stats) = batchnorm(g, x, self.bound.node(n.gamma), self.bound.node(n.beta), &running, self.mode)?;
        if let Some(stats) = stats {
            self.updates.push(BnUpdate { mean: n.mean, var: n.var, stats });
        }
        Ok(y)
    }

    fn block(&mut self, g: &mut Graph<T>, blk: &Block, x: NodeId) -> Result<NodeId> {
        let (h, ll) = match &blk.first {
            First::Conv(c) => (self.conv(g, c, x)?, None),
            First::Wa { cfg, head } => {
                let n = wa_graph(g, x, cfg, head.map(|h| self.bound.node(h)))?;
                (n.out, Some(n.ll))
            }
        };
        let h = self.norm(g, &blk.bn1, h)?;
        let h = g.relu(h);
        let h = self.conv(g, &blk.conv2, h)?;
        let h = self.norm(g, &blk.bn2, h)?;
        let s = match &blk.shortcut {
            Shortcut::Identity => x,
            Shortcut::Projection(c, n) => {
                let s = self.conv(g, c, x)?;
                self.norm(g, n, s)?
            }
            Shortcut::LowFrequency(c, n) => {
                let s = self.conv(g, c, ll.expect("WA block has a low-frequency band"))?;
                self.norm(g, n, s)?
            }
        };
        let y = g.add(h, s)?;
        Ok(g.relu(y))
    }
}

impl<T: Scalar> Network<T> {
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, x: NodeId, mode: Mode) -> Result<ForwardOutput<T>> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::Dimension(format!(
                "network expects N×{}×H×W input, got {shape:?}",
                self.spec.in_channels
            )));
        }
        let mut pass = Pass { net: self, bound, mode, updates: Vec::new() };
        let h = pass.conv(g, &self.stem.0, x)?;
        let h = pass.norm(g, &self.stem.1, h)?;
        let mut h = g.relu(h);
        for blk in self.stages.iter().flatten() {
            h = pass.block(g, blk, h)?;
        }
        let pooled = global_avg_pool(g, h)?;
        let logits = linear(g, pooled, bound.node(self.fc.0), Some(bound.node(self.fc.1)))?;
        Ok(ForwardOutput { logits, bn_updates: pass.updates })
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let xi = g.input(x.clone());
        let out = self.forward(&mut g, &bound, xi, Mode::Eval)?;
        Ok(g.value(out.logits).clone())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: f64) {
        for u in updates {
            update_running(self.params.value_mut(u.mean).data_mut(), &u.stats.mean, momentum);
            update_running(self.params.value_mut(u.var).data_mut(), &u.stats.var, momentum);
        }
    }

    /// One line per block describing its layers, e.g. for structural comparison.
    pub fn describe(&self) -> Vec<String> {
        let p = &self.params;
        let conv = |c: &Conv| {
            let s = p.value(c.w).shape();
            format!("conv{}x{}({}→{},s{})", s[2], s[3], s[1], s[0], c.stride)
        };
        let mut out = vec![format!("stem: {} bn relu", conv(&self.stem.0))];
        for blk in self.stages.iter().flatten() {
            let first = match &blk.first {
                First::Conv(c) => conv(c),
                First::Wa { cfg, head } => match head {
                    Some(h) => {
                        let s = p.value(*h).shape();
                        format!("wa[{}]+conv{}x{}({}→{},s1)", cfg.wavelet, s[2], s[3], s[1], s[0])
                    }
                    None => format!("wa[{}]", cfg.wavelet),
                },
            };
            let sc = match &blk.shortcut {
                Shortcut::Identity => "identity".to_string(),
                Shortcut::Projection(c, _) => format!("{} bn", conv(c)),
                Shortcut::LowFrequency(c, _) => format!("ll {} bn", conv(c)),
            };
            out.push(format!("{}: {first} bn relu {} bn + {sc} relu", blk.name, conv(&blk.conv2)));
        }
        let s = p.value(self.fc.0).shape();
        out.push(format!("head: gap linear({}→{})", s[0], s[1]));
        out
    }

    /// Every parameter and buffer, by name, rounded to `f32`.
    pub fn state(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.iter().map(|(_, p)| (p.name.clone(), p.value.cast())).collect()
    }

    /// Overwrites parameters from named entries; every parameter must be present with its shape.
    pub fn load_state<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in entries {
            let Some(id) = self.params.id(name) else { continue };
            let slot = self.params.value_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry {name:?} has shape {:?}, network expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let missing = &self.params.iter().nth(i).expect("index in range").1.name;
            return Err(Error::Format(format!("checkpoint lacks parameter {missing:?}")));
        }
        Ok(())
    }
}
