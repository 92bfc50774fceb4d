//! Randomized verification sweeps shared by the integration and acceptance
//! suites. Each returns a measurement; callers decide the pass threshold.

use aquaseg::combined::{BoundCombined, CombinedConfig, CombinedModel, Labelled, TriBatch};
use aquaseg::loss;
use aquaseg::nn::{UNetConfig, UNetModel};
use aquaseg::tensor::kernels;
use aquaseg::{Graph, PrngState, Tensor4, Var};
use rand::Rng;

use super::{max_abs_diff, oracles, param_grad_check, rand_tensor, to_arr};

pub type OpCase = (&'static str, Vec<Tensor4<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>);

/// One randomly sized instance of every differentiable graph op.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = PrngState::new(seed);
    let n = r.gen_range(1..=2);
    let c = r.gen_range(1..=3);
    let h = 2 * r.gen_range(1..=4);
    let w = 2 * r.gen_range(1..=4);
    let x: Tensor4<f64> = rand_tensor([n, c, h, w], &mut r);
    let x2: Tensor4<f64> = rand_tensor([n, c, h, w], &mut r);
    let pos = x.map(|v| v.abs() + 0.5);
    let k = [1, 3][r.gen_range(0..2)];
    let wt: Tensor4<f64> = rand_tensor([2, c, k, k], &mut r);
    let bias: Tensor4<f64> = rand_tensor([1, 2, 1, 1], &mut r);
    let wt_t: Tensor4<f64> = rand_tensor([c, 2, 2, 2], &mut r);
    let bias_t: Tensor4<f64> = rand_tensor([1, 2, 1, 1], &mut r);
    let stride = r.gen_range(1..=2);
    // odd extents keep stride-2 "same" padding integral
    let xc: Tensor4<f64> = rand_tensor([n, c, h + stride - 1, w + stride - 1], &mut r);
    let pad = (k - 1) / 2;

    vec![
        ("conv2d", vec![xc, wt, bias], Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap())),
        ("conv_transpose2d", vec![x.clone(), wt_t, bias_t], Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2).unwrap())),
        ("maxpool2d", vec![x.clone()], Box::new(|g, v| g.maxpool2d(v[0], 2).unwrap())),
        ("upsample_nearest", vec![x.clone()], Box::new(|g, v| g.upsample_nearest(v[0], 2).unwrap())),
        ("avgpool_downsample", vec![x.clone()], Box::new(|g, v| g.avgpool_downsample(v[0], 2).unwrap())),
        ("concat_channels", vec![x.clone(), x2.clone()], Box::new(|g, v| g.concat_channels(v[0], v[1]).unwrap())),
        ("slice_channels", vec![x.clone()], Box::new(move |g, v| g.slice_channels(v[0], c - 1, 1).unwrap())),
        ("relu", vec![x.clone()], Box::new(|g, v| g.relu(v[0]))),
        ("sigmoid", vec![x.clone()], Box::new(|g, v| g.sigmoid(v[0]))),
        ("add", vec![x.clone(), x2.clone()], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", vec![x.clone(), x2.clone()], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", vec![x.clone(), x2.clone()], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("div", vec![x2, pos.clone()], Box::new(|g, v| g.div(v[0], v[1]).unwrap())),
        ("scale", vec![x.clone()], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", vec![x.clone()], Box::new(|g, v| g.add_scalar(v[0], 0.3))),
        ("rsub_scalar", vec![x.clone()], Box::new(|g, v| g.rsub_scalar(0.7, v[0]))),
        ("ln", vec![pos], Box::new(|g, v| g.ln(v[0]))),
        ("sum", vec![x.clone()], Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![x], Box::new(|g, v| g.mean(v[0]))),
    ]
}

fn binary_mask(dims: [usize; 4], rng: &mut PrngState) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| f64::from(rng.gen_bool(0.4) as u8))
}

/// Micro U-Net forward plus BCE+Dice loss, checked over all parameters and
/// the input.
pub fn unet_gradcheck(seed: u64) -> f64 {
    let mut rng = PrngState::new(seed);
    let model = UNetModel::<f64>::build(UNetConfig::micro(4), &mut rng).unwrap();
    let x = Tensor4::<f64>::uniform([2, 4, 16, 16], -1.0, 1.0, &mut rng);
    let y = binary_mask([2, 1, 16, 16], &mut rng);
    let mut params = model.params().to_vec();
    params.push(x);
    let n = model.params().len();
    param_grad_check(&params, seed, 4, 24, 1e-6, |g, v| {
        let t = g.constant(y.clone());
        let logits = model.forward(g, &v[..n], v[n]).unwrap();
        loss::combined_loss(g, logits, t).unwrap().total
    })
}

/// Weighted three-term loss of the two-network model, checked over both
/// networks' parameters.
pub fn combined_gradcheck(seed: u64) -> f64 {
    let mut rng = PrngState::new(100 + seed);
    let mut r2 = PrngState::new(200 + seed);
    let model = CombinedModel::<f64>::build(&UNetConfig::micro(4), CombinedConfig::default(), &mut rng, &mut r2).unwrap();
    let batch = TriBatch {
        hr: Labelled {
            images: Tensor4::uniform([2, 4, 8, 8], -1.0, 1.0, &mut rng),
            masks: binary_mask([2, 1, 8, 8], &mut rng),
        },
        vhr_labelled: Labelled {
            images: Tensor4::uniform([1, 4, 32, 32], -1.0, 1.0, &mut rng),
            masks: binary_mask([1, 1, 32, 32], &mut rng),
        },
        vhr_unlabelled: Some(Tensor4::uniform([1, 4, 32, 32], -1.0, 1.0, &mut rng)),
    };
    let n1 = model.unet1.params().len();
    let params: Vec<_> = model.unet1.params().iter().chain(model.unet2.params()).cloned().collect();
    param_grad_check(&params, seed, 4, 16, 1e-6, |g, v| {
        let bound = BoundCombined {
            unet1: v[..n1].to_vec(),
            unet2: v[n1..].to_vec(),
        };
        model.forward(g, &bound, &batch).unwrap().total_var
    })
}

/// `(op, shapes tried, worst max-abs deviation)` of the spatial kernels
/// against the loop oracles over `n` random shapes each.
pub fn kernel_oracle_sweep(n: usize, seed: u64) -> Vec<(&'static str, usize, f64)> {
    let mut rng = PrngState::new(seed);
    let mut worst = [0.0f64; 4];
    let mut convs = 0;
    for _ in 0..n {
        let (b, c) = (rng.gen_range(1..=2), rng.gen_range(1..=4));
        let f = rng.gen_range(1..=4);
        let (h, w) = (f * rng.gen_range(1..=5), f * rng.gen_range(1..=5));
        let x: Tensor4<f64> = rand_tensor([b, c, h, w], &mut rng);
        let xa = to_arr(&x);

        let k = [1, 3, 5][rng.gen_range(0..3)];
        let pad = rng.gen_range(0..=k / 2);
        // the kernel only accepts strides that tile the padded input exactly
        let mut stride = rng.gen_range(1..=2);
        if (h + 2 * pad).saturating_sub(k) % stride != 0 || (w + 2 * pad).saturating_sub(k) % stride != 0 {
            stride = 1;
        }
        let wt: Tensor4<f64> = rand_tensor([rng.gen_range(1..=3), c, k, k], &mut rng);
        let bias: Tensor4<f64> = rand_tensor([1, wt.shape().n, 1, 1], &mut rng);
        if h + 2 * pad >= k && w + 2 * pad >= k {
            let got = kernels::conv2d(&x, &wt, Some(&bias), stride, pad).unwrap();
            let want = oracles::conv2d(&xa, &to_arr(&wt), bias.data(), stride, pad);
            assert_eq!(got.shape().dims(), want.dims);
            worst[0] = worst[0].max(max_abs_diff(got.data(), &want.v));
            convs += 1;
        }

        let (got, _) = kernels::maxpool2d(&x, f).unwrap();
        worst[1] = worst[1].max(max_abs_diff(got.data(), &oracles::maxpool(&xa, f).v));
        let got = kernels::avgpool_downsample(&x, f).unwrap();
        worst[2] = worst[2].max(max_abs_diff(got.data(), &oracles::block_mean(&xa, f).v));
        let got = kernels::upsample_nearest(&x, f).unwrap();
        worst[3] = worst[3].max(max_abs_diff(got.data(), &oracles::nearest_up(&xa, f).v));
    }
    vec![
        ("conv2d", convs, worst[0]),
        ("maxpool2d", n, worst[1]),
        ("avgpool_downsample", n, worst[2]),
        ("upsample_nearest", n, worst[3]),
    ]
}

/// Number of random 8×8 mask pairs (out of `n`) where IoU or Dice differ
/// from the counting oracles in any bit.
pub fn metric_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = PrngState::new(seed);
    let mut bad = 0;
    for i in 0..n {
        // sweep densities so empty and full masks show up
        let (dp, dg) = ((i % 11) as f64 / 10.0, ((i / 11) % 11) as f64 / 10.0);
        let p: Vec<u8> = (0..64).map(|_| u8::from(rng.gen_bool(dp))).collect();
        let t: Vec<u8> = (0..64).map(|_| u8::from(rng.gen_bool(dg))).collect();
        let iou = loss::iou_metric(&p, &t).unwrap();
        let dice = loss::dice_metric(&p, &t).unwrap();
        if iou.to_bits() != oracles::iou(&p, &t).to_bits() || dice.to_bits() != oracles::dice(&p, &t).to_bits() {
            bad += 1;
        }
    }
    bad
}
