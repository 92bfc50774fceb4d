//! U-Net builder with a VGG-style encoder.
//!
//! Layout for a config of depth `d` (every conv is 3×3, padding 1, followed
//! by ReLU unless noted):
//!
//! ```text
//! enc{i}.conv{j}   i < d, j < encoder_block_convs[i]; then 2×2 max-pool
//! center           conv at 1/2^d resolution
//! dec{i}.up        2×2 stride-2 transposed conv (+ReLU), i = d-1 .. 0
//! dec{i}.conv      conv over concat(up, skip from enc{i})
//! head             1×1 conv to one logit channel, no activation
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, PrngState, Shape4, Tensor4, Var};

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub preset: String,
    pub in_channels: usize,
    pub depth: usize,
    pub encoder_block_convs: Vec<usize>,
    pub encoder_channels: Vec<usize>,
}

impl UNetConfig {
    pub const MICRO: &'static str = "micro";
    pub const TERNAUS11_LITE: &'static str = "ternaus11-lite";

    /// Test-scale preset: three stages of one conv, widths 8/16/32.
    pub fn micro(in_channels: usize) -> Self {
        UNetConfig {
            preset: Self::MICRO.into(),
            in_channels,
            depth: 3,
            encoder_block_convs: vec![1, 1, 1],
            encoder_channels: vec![8, 16, 32],
        }
    }

    /// VGG11 conv layout (1,1,2,2,2 convs per stage) at half the original widths.
    pub fn ternaus11_lite(in_channels: usize) -> Self {
        UNetConfig {
            preset: Self::TERNAUS11_LITE.into(),
            in_channels,
            depth: 5,
            encoder_block_convs: vec![1, 1, 2, 2, 2],
            encoder_channels: vec![32, 64, 128, 256, 256],
        }
    }

    pub fn from_preset(name: &str, in_channels: usize) -> Result<Self> {
        match name {
            Self::MICRO => Ok(Self::micro(in_channels)),
            Self::TERNAUS11_LITE => Ok(Self::ternaus11_lite(in_channels)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `{}` or `{}`)",
                Self::MICRO,
                Self::TERNAUS11_LITE
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.encoder_channels.len() != self.depth || self.encoder_block_convs.len() != self.depth {
            return Err(Error::Config(format!(
                "depth {} disagrees with encoder_channels ({}) / encoder_block_convs ({})",
                self.depth,
                self.encoder_channels.len(),
                self.encoder_block_convs.len()
            )));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0) || self.encoder_block_convs.contains(&0) {
            return Err(Error::Config("channel and conv counts must be positive".into()));
        }
        Ok(())
    }

    /// Required divisor of the input height and width.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    /// Every parameter in creation (= forward consumption) order.
    pub fn param_shapes(&self) -> Vec<(String, Shape4)> {
        let conv = |o: usize, i: usize, k: usize| Shape4::new(o, i, k, k);
        let bias = |o: usize| Shape4::new(1, o, 1, 1);
        let mut out = Vec::new();
        let mut prev = self.in_channels;
        for (stage, (&ch, &convs)) in self.encoder_channels.iter().zip(&self.encoder_block_convs).enumerate() {
            for j in 0..convs {
                out.push((format!("enc{stage}.conv{j}.weight"), conv(ch, prev, 3)));
                out.push((format!("enc{stage}.conv{j}.bias"), bias(ch)));
                prev = ch;
            }
        }
        out.push(("center.weight".into(), conv(prev, prev, 3)));
        out.push(("center.bias".into(), bias(prev)));
        for stage in (0..self.depth).rev() {
            let ch = self.encoder_channels[stage];
            // transposed conv weight is (in, out, k, k)
            out.push((format!("dec{stage}.up.weight"), Shape4::new(prev, ch, 2, 2)));
            out.push((format!("dec{stage}.up.bias"), bias(ch)));
            out.push((format!("dec{stage}.conv.weight"), conv(ch, 2 * ch, 3)));
            out.push((format!("dec{stage}.conv.bias"), bias(ch)));
            prev = ch;
        }
        out.push(("head.weight".into(), conv(1, prev, 1)));
        out.push(("head.bias".into(), bias(1)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.numel()).sum()
    }
}

impl fmt::Display for UNetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (in_channels {}, depth {}, convs {:?}, channels {:?})",
            self.preset, self.in_channels, self.depth, self.encoder_block_convs, self.encoder_channels
        )
    }
}

/// Fan-in used for He scaling: in·k·k for convs, in for the 2×2/2 transposed convs.
fn fan_in(name: &str, shape: Shape4) -> usize {
    if name.contains(".up.") {
        shape.n
    } else {
        shape.c * shape.h * shape.w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<T: Element = f32> {
    config: UNetConfig,
    names: Vec<String>,
    params: Vec<Tensor4<T>>,
}

impl<T: Element> UNetModel<T> {
    /// He-uniform weights (`U[-√(6/fan_in), √(6/fan_in)]`), zero biases.
    pub fn build(config: UNetConfig, rng: &mut PrngState) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".weight") {
                let bound = (6.0 / fan_in(&name, shape) as f64).sqrt();
                Tensor4::uniform(shape, -bound, bound, rng)
            } else {
                Tensor4::zeros(shape)
            };
            names.push(name);
            params.push(t);
        }
        Ok(UNetModel { config, names, params })
    }

    /// Assembles a model from explicit tensors, checking names and shapes.
    pub fn from_params(config: UNetConfig, named: Vec<(String, Tensor4<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != named.len() {
            return Err(Error::CheckpointMismatch(format!(
                "config {config} has {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((want_name, want_shape), (name, t)) in expected.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "expected `{want_name}` {want_shape}, found `{name}` {}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(UNetModel { config, names, params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor4<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor4<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor4<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor4::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor4::cast).collect(),
        }
    }

    /// Registers all parameters on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect()
    }

    /// Checks that `shape` is a legal input and returns the error the forward
    /// pass would raise otherwise.
    pub fn check_input(&self, shape: Shape4) -> Result<()> {
        if shape.c != self.config.in_channels {
            return Err(Error::Shape {
                op: "unet_forward",
                detail: format!("input {shape} has {} channels, model expects {}", shape.c, self.config.in_channels),
            });
        }
        let d = self.config.divisor();
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(d) || !shape.w.is_multiple_of(d) {
            return Err(Error::Divisibility {
                height: shape.h,
                width: shape.w,
                divisor: d,
            });
        }
        Ok(())
    }

    /// Logits `(n, 1, h, w)` for input `x` using parameters previously bound
    /// with [`UNetModel::bind`].
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut p = params.iter().copied();
        let mut next = move || p.next().expect("parameter count checked above");

        let mut h = x;
        let mut skips = Vec::with_capacity(self.config.depth);
        for &convs in &self.config.encoder_block_convs {
            for _ in 0..convs {
                let (w, b) = (next(), next());
                let y = g.conv2d(h, w, Some(b), 1, 1)?;
                h = g.relu(y);
            }
            skips.push(h);
            h = g.maxpool2d(h, 2)?;
        }
        let (w, b) = (next(), next());
        let y = g.conv2d(h, w, Some(b), 1, 1)?;
        h = g.relu(y);
        for skip in skips.into_iter().rev() {
            let (w, b) = (next(), next());
            let up = g.conv_transpose2d(h, w, Some(b), 2)?;
            let up = g.relu(up);
            let cat = g.concat_channels(up, skip)?;
            let (w, b) = (next(), next());
            let y = g.conv2d(cat, w, Some(b), 1, 1)?;
            h = g.relu(y);
        }
        let (w, b) = (next(), next());
        g.conv2d(h, w, Some(b), 1, 0)
    }

    /// Inference without gradients.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &params, xv)?;
        Ok(g.value(out).clone())
    }
}
