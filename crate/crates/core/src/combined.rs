//! Two U-Nets trained jointly across resolutions.
//!
//! `unet1` sees very-high-resolution (VHR) tiles, `unet2` sees
//! high-resolution (HR) tiles. Unlabelled VHR tiles tie the two together:
//! they go through `unet1` directly and through `unet2` after a block-mean
//! downsample, and the upsampled `unet2` probabilities act as a soft target
//! for `unet1`'s.

use std::fmt;

use crate::error::{Error, Result};
use crate::loss::{combined_loss_with, consistency_loss, LossConfig};
use crate::nn::{Checkpoint, UNetConfig, UNetModel};
use crate::tensor::{kernels, Element, Graph, PrngState, Shape4, Tensor4, Var};

pub const DEFAULT_BRIDGE_FACTOR: usize = 4;

/// Relative weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub vhr: f64,
    pub hr: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vhr: 1.0,
            hr: 1.0,
            consistency: 0.1,
        }
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.vhr, self.hr, self.consistency)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedConfig {
    pub bridge_factor: usize,
    pub weights: LossWeights,
    /// Stop gradients of the consistency term into `unet1`.
    pub detach_vhr: bool,
    /// Stop gradients of the consistency term into `unet2`.
    pub detach_hr: bool,
    pub loss: LossConfig,
}

impl Default for CombinedConfig {
    fn default() -> Self {
        CombinedConfig {
            bridge_factor: DEFAULT_BRIDGE_FACTOR,
            weights: LossWeights::default(),
            detach_vhr: false,
            detach_hr: false,
            loss: LossConfig::default(),
        }
    }
}

/// Images with their masks; masks are `(n, 1, h, w)` with values in {0, 1}.
#[derive(Clone, Debug)]
pub struct Labelled<T: Element = f32> {
    pub images: Tensor4<T>,
    pub masks: Tensor4<T>,
}

/// One step's worth of input from each stream.
#[derive(Clone, Debug)]
pub struct TriBatch<T: Element = f32> {
    pub hr: Labelled<T>,
    pub vhr_labelled: Labelled<T>,
    /// `None` turns the consistency term off for this step.
    pub vhr_unlabelled: Option<Tensor4<T>>,
}

/// Batch sizes of the (HR, labelled VHR, unlabelled VHR) streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamBatchSizes {
    pub hr: usize,
    pub vhr_labelled: usize,
    pub vhr_unlabelled: usize,
}

impl Default for StreamBatchSizes {
    fn default() -> Self {
        StreamBatchSizes {
            hr: 4,
            vhr_labelled: 2,
            vhr_unlabelled: 1,
        }
    }
}

/// Loss terms of one forward pass. `total` is the node to backpropagate.
#[derive(Clone, Copy, Debug)]
pub struct CombinedLossReport {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub l1_var: Var,
    pub l2_var: Var,
    pub l3_var: Option<Var>,
    pub total_var: Var,
    /// BCE and Dice parts of `l3` (both 0 when the term is absent).
    pub l3_bce: f64,
    pub l3_dice: f64,
}

/// Parameter handles of both networks on one graph.
#[derive(Clone, Debug)]
pub struct BoundCombined {
    pub unet1: Vec<Var>,
    pub unet2: Vec<Var>,
}

/// Block-mean downsample of VHR tiles to the HR grid.
pub fn bridge_down<T: Element>(vhr: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    kernels::avgpool_downsample(vhr, factor)
}

/// Nearest-neighbour upsample of HR logits back to the VHR grid.
pub fn bridge_up<T: Element>(hr_logits: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    kernels::upsample_nearest(hr_logits, factor)
}

#[derive(Clone, Debug)]
pub struct CombinedModel<T: Element = f32> {
    pub unet1: UNetModel<T>,
    pub unet2: UNetModel<T>,
    pub config: CombinedConfig,
}

impl<T: Element> CombinedModel<T> {
    pub fn new(unet1: UNetModel<T>, unet2: UNetModel<T>, config: CombinedConfig) -> Result<Self> {
        if config.bridge_factor < 2 {
            return Err(Error::Config(format!(
                "bridge factor must be at least 2, got {}",
                config.bridge_factor
            )));
        }
        let (c1, c2) = (unet1.config().in_channels, unet2.config().in_channels);
        if c1 != c2 {
            return Err(Error::Config(format!(
                "both networks must take the same bands ({c1} vs {c2})"
            )));
        }
        Ok(CombinedModel { unet1, unet2, config })
    }

    /// Fresh networks drawn from independent streams of `rng`-style seeds.
    pub fn build(
        unet_config: &UNetConfig,
        config: CombinedConfig,
        rng1: &mut PrngState,
        rng2: &mut PrngState,
    ) -> Result<Self> {
        let unet1 = UNetModel::build(unet_config.clone(), rng1)?;
        let unet2 = UNetModel::build(unet_config.clone(), rng2)?;
        Self::new(unet1, unet2, config)
    }

    pub fn num_parameters(&self) -> usize {
        self.unet1.num_parameters() + self.unet2.num_parameters()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundCombined {
        BoundCombined {
            unet1: self.unet1.bind(g, true),
            unet2: self.unet2.bind(g, true),
        }
    }

    /// Checks every stream against the network that consumes it, tagging
    /// errors with the stream name.
    pub fn check_batch(&self, batch: &TriBatch<T>) -> Result<()> {
        check_labelled(&self.unet1, &batch.vhr_labelled).map_err(|e| e.in_stream("vhr_labelled"))?;
        check_labelled(&self.unet2, &batch.hr).map_err(|e| e.in_stream("hr"))?;
        if let Some(x) = &batch.vhr_unlabelled {
            self.check_unlabelled(x.shape()).map_err(|e| e.in_stream("vhr_unlabelled"))?;
        }
        Ok(())
    }

    fn check_unlabelled(&self, shape: Shape4) -> Result<()> {
        self.unet1.check_input(shape)?;
        let f = self.config.bridge_factor;
        if !shape.h.is_multiple_of(f) || !shape.w.is_multiple_of(f) {
            return Err(Error::Divisibility {
                height: shape.h,
                width: shape.w,
                divisor: f,
            });
        }
        self.unet2.check_input(Shape4::new(shape.n, shape.c, shape.h / f, shape.w / f))
    }

    /// Records all three terms and their weighted sum on `g`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &BoundCombined, batch: &TriBatch<T>) -> Result<CombinedLossReport> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let w = cfg.weights;

        let x1 = g.constant(batch.vhr_labelled.images.clone());
        let y1 = g.constant(batch.vhr_labelled.masks.clone());
        let logits1 = self.unet1.forward(g, &bound.unet1, x1).map_err(|e| e.in_stream("vhr_labelled"))?;
        let l1 = combined_loss_with(g, logits1, y1, &cfg.loss).map_err(|e| e.in_stream("vhr_labelled"))?;

        let x2 = g.constant(batch.hr.images.clone());
        let y2 = g.constant(batch.hr.masks.clone());
        let logits2 = self.unet2.forward(g, &bound.unet2, x2).map_err(|e| e.in_stream("hr"))?;
        let l2 = combined_loss_with(g, logits2, y2, &cfg.loss).map_err(|e| e.in_stream("hr"))?;

        let a = g.scale(l1.total, T::lit(w.vhr));
        let b = g.scale(l2.total, T::lit(w.hr));
        let mut total = g.add(a, b)?;

        let mut l3 = None;
        if let Some(xu) = &batch.vhr_unlabelled {
            let term = self.consistency(g, bound, xu).map_err(|e| e.in_stream("vhr_unlabelled"))?;
            let c = g.scale(term.total, T::lit(w.consistency));
            total = g.add(total, c)?;
            l3 = Some(term);
        }

        Ok(CombinedLossReport {
            l1: l1.value,
            l2: l2.value,
            l3: l3.map_or(0.0, |t| t.value),
            total: crate::loss::to_f64(g.item(total)?),
            l1_var: l1.total,
            l2_var: l2.total,
            l3_var: l3.map(|t| t.total),
            total_var: total,
            l3_bce: l3.map_or(0.0, |t| t.bce),
            l3_dice: l3.map_or(0.0, |t| t.dice),
        })
    }

    fn consistency(&self, g: &mut Graph<T>, bound: &BoundCombined, xu: &Tensor4<T>) -> Result<crate::loss::LossValue> {
        let f = self.config.bridge_factor;
        let x = g.constant(xu.clone());
        let logits_a = self.unet1.forward(g, &bound.unet1, x)?;
        let down = g.avgpool_downsample(x, f)?;
        let logits_b = self.unet2.forward(g, &bound.unet2, down)?;
        let up = g.upsample_nearest(logits_b, f)?;
        let mut pa = g.sigmoid(logits_a);
        let mut pb = g.sigmoid(up);
        if self.config.detach_vhr {
            pa = g.detach(pa);
        }
        if self.config.detach_hr {
            pb = g.detach(pb);
        }
        consistency_loss(g, pa, pb, &self.config.loss)
    }
}

impl CombinedModel<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_model("unet1/", &self.unet1);
        ck.push_model("unet2/", &self.unet2);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: CombinedConfig) -> Result<Self> {
        Self::new(ck.model("unet1/")?, ck.model("unet2/")?, config)
    }
}

fn check_labelled<T: Element>(net: &UNetModel<T>, l: &Labelled<T>) -> Result<()> {
    let (xs, ys) = (l.images.shape(), l.masks.shape());
    net.check_input(xs)?;
    if ys != Shape4::new(xs.n, 1, xs.h, xs.w) {
        return Err(Error::ShapeMismatch {
            op: "mask",
            lhs: xs,
            rhs: ys,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_pair(seed: u64) -> CombinedModel<f64> {
        let cfg = UNetConfig::micro(4);
        let m1 = UNetModel::<f32>::build(cfg.clone(), &mut PrngState::derive(seed, 1)).unwrap().cast();
        let m2 = UNetModel::<f32>::build(cfg, &mut PrngState::derive(seed, 2)).unwrap().cast();
        CombinedModel::new(m1, m2, CombinedConfig::default()).unwrap()
    }

    fn mask(shape: Shape4, rng: &mut PrngState) -> Tensor4<f64> {
        Tensor4::uniform(shape, 0.0, 1.0, rng).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
    }

    fn batch(seed: u64, with_unlabelled: bool) -> TriBatch<f64> {
        let mut rng = PrngState::new(seed);
        let vhr = Shape4::new(2, 4, 16, 16);
        let hr = Shape4::new(2, 4, 8, 8);
        let vhr_m = Shape4::new(2, 1, 16, 16);
        let hr_m = Shape4::new(2, 1, 8, 8);
        TriBatch {
            vhr_labelled: Labelled {
                images: Tensor4::uniform(vhr, -1.0, 1.0, &mut rng),
                masks: mask(vhr_m, &mut rng),
            },
            hr: Labelled {
                images: Tensor4::uniform(hr, -1.0, 1.0, &mut rng),
                masks: mask(hr_m, &mut rng),
            },
            vhr_unlabelled: with_unlabelled.then(|| Tensor4::uniform(Shape4::new(1, 4, 32, 32), -1.0, 1.0, &mut rng)),
        }
    }

    fn grad_norms(g: &Graph<f64>, vars: &[Var]) -> f64 {
        vars.iter()
            .map(|&v| g.grad_or_zeros(v).data().iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    #[test]
    fn bridge_shapes() {
        let x = Tensor4::<f32>::ones([1, 4, 512, 512]);
        let d = bridge_down(&x, 4).unwrap();
        assert_eq!(d.shape(), Shape4::new(1, 4, 128, 128));
        assert!(d.data().iter().all(|&v| v == 1.0));
        assert_eq!(bridge_up(&d, 4).unwrap().shape(), x.shape());
        assert!(matches!(
            bridge_down(&Tensor4::<f32>::ones([1, 1, 6, 6]), 4),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn default_weights_compose() {
        let w = LossWeights::default();
        let (l1, l2, l3) = (0.2f64, 0.3, 0.5);
        assert!(((w.vhr * l1 + w.hr * l2) + w.consistency * l3 - 0.55).abs() < 1e-12);
        assert_eq!(StreamBatchSizes::default(), StreamBatchSizes { hr: 4, vhr_labelled: 2, vhr_unlabelled: 1 });
    }

    #[test]
    fn each_supervised_term_touches_one_network() {
        let model = micro_pair(3);
        let batch = batch(4, true);

        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let r = model.forward(&mut g, &bound, &batch).unwrap();
        g.backward(r.l1_var).unwrap();
        assert!(grad_norms(&g, &bound.unet1) > 0.0);
        assert_eq!(grad_norms(&g, &bound.unet2), 0.0);

        g.zero_grad();
        g.backward(r.l2_var).unwrap();
        assert!(grad_norms(&g, &bound.unet2) > 0.0);
        assert_eq!(grad_norms(&g, &bound.unet1), 0.0);

        g.zero_grad();
        g.backward(r.l3_var.unwrap()).unwrap();
        assert!(grad_norms(&g, &bound.unet1) > 0.0);
        assert!(grad_norms(&g, &bound.unet2) > 0.0);
    }

    #[test]
    fn detach_flags_cut_one_side() {
        let mut model = micro_pair(5);
        model.config.detach_hr = true;
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let r = model.forward(&mut g, &bound, &batch(6, true)).unwrap();
        g.backward(r.l3_var.unwrap()).unwrap();
        assert!(grad_norms(&g, &bound.unet1) > 0.0);
        assert_eq!(grad_norms(&g, &bound.unet2), 0.0);
    }

    #[test]
    fn total_is_weighted_sum_bitwise() {
        let cfg = UNetConfig::micro(4);
        let m1 = UNetModel::<f32>::build(cfg.clone(), &mut PrngState::derive(9, 1)).unwrap();
        let m2 = UNetModel::<f32>::build(cfg, &mut PrngState::derive(9, 2)).unwrap();
        let model = CombinedModel::new(m1, m2, CombinedConfig::default()).unwrap();
        let b = batch(10, true);
        let b = TriBatch {
            hr: Labelled { images: b.hr.images.cast(), masks: b.hr.masks.cast() },
            vhr_labelled: Labelled { images: b.vhr_labelled.images.cast(), masks: b.vhr_labelled.masks.cast() },
            vhr_unlabelled: b.vhr_unlabelled.map(|x| x.cast()),
        };
        let mut g = Graph::<f32>::new();
        let bound = model.bind(&mut g);
        let r = model.forward(&mut g, &bound, &b).unwrap();
        let w = model.config.weights;
        let recomputed = (w.vhr as f32 * r.l1 as f32 + w.hr as f32 * r.l2 as f32) + w.consistency as f32 * r.l3 as f32;
        assert_eq!(recomputed.to_bits(), (r.total as f32).to_bits());
    }

    #[test]
    fn empty_unlabelled_stream_drops_the_term() {
        let model = micro_pair(11);
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let r = model.forward(&mut g, &bound, &batch(12, false)).unwrap();
        assert!(r.l3_var.is_none());
        assert_eq!(r.l3, 0.0);
        assert_eq!(r.total, r.l1 + r.l2);
    }

    #[test]
    fn dice_part_vanishes_when_networks_agree() {
        // A zero head with equal biases makes both networks emit the same
        // constant field whatever they see.
        let mut model = micro_pair(13);
        for net in [&mut model.unet1, &mut model.unet2] {
            let k = net.params().len();
            let p = net.params_mut();
            p[k - 2] = Tensor4::zeros(p[k - 2].shape());
            p[k - 1] = Tensor4::full([1, 1, 1, 1], 0.3);
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let r = model.forward(&mut g, &bound, &batch(15, true)).unwrap();
        assert_eq!(r.l3_dice, 0.0);
        let p = 1.0 / (1.0 + (-0.3f64).exp());
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((r.l3_bce - entropy).abs() < 1e-12, "{} vs {entropy}", r.l3_bce);
    }

    #[test]
    fn stream_errors_name_the_stream() {
        let model = micro_pair(16);
        let mut b = batch(17, true);
        b.hr.images = Tensor4::zeros([2, 4, 6, 6]);
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let err = model.forward(&mut g, &bound, &b).unwrap_err();
        assert!(err.to_string().contains("hr"), "{err}");
        assert!(matches!(err, Error::Stream { stream: "hr", .. }));

        let mut b = batch(17, true);
        b.vhr_unlabelled = Some(Tensor4::zeros([1, 4, 16, 16]));
        let err = model.forward(&mut g, &bound, &b).unwrap_err();
        assert!(matches!(err, Error::Stream { stream: "vhr_unlabelled", .. }), "{err}");
    }
}
