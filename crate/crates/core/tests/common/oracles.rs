//! Naive reference implementations used as independent test oracles.
//! Everything here is written as direct loops over indices in f64 and shares
//! no code with the library kernels.

#![allow(dead_code)]

/// Dense (n, c, h, w) array in f64 with explicit indexing.
#[derive(Clone, Debug)]
pub struct Arr {
    pub dims: [usize; 4],
    pub v: Vec<f64>,
}

impl Arr {
    pub fn new(dims: [usize; 4], v: Vec<f64>) -> Self {
        assert_eq!(v.len(), dims.iter().product::<usize>());
        Arr { dims, v }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Arr::new(dims, vec![0.0; dims.iter().product()])
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cc, hh, ww] = self.dims;
        self.v[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn put(&mut self, n: usize, c: usize, h: usize, w: usize, x: f64) {
        let [_, cc, hh, ww] = self.dims;
        self.v[((n * cc + c) * hh + h) * ww + w] = x;
    }
}

/// Direct quadruple-loop zero-padded cross-correlation.
pub fn conv2d(x: &Arr, w: &Arr, bias: &[f64], stride: usize, pad: usize) -> Arr {
    let [n, c, h, wd] = x.dims;
    let [oc, ic, kh, kw] = w.dims;
    assert_eq!(c, ic);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Arr::zeros([n, oc, oh, ow]);
    for b in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.get(o).copied().unwrap_or(0.0);
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(b, i, iy as usize, ix as usize) * w.at(o, i, ky, kx);
                            }
                        }
                    }
                    out.put(b, o, y, xo, acc);
                }
            }
        }
    }
    out
}

/// Scatter definition of the transposed convolution, weight (in_c, out_c, kh, kw).
pub fn conv_transpose2d(x: &Arr, w: &Arr, stride: usize) -> Arr {
    let [n, c, h, wd] = x.dims;
    let [ic, oc, kh, kw] = w.dims;
    assert_eq!(c, ic);
    let mut out = Arr::zeros([n, oc, (h - 1) * stride + kh, (wd - 1) * stride + kw]);
    for b in 0..n {
        for i in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    for o in 0..oc {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (oy, ox) = (y * stride + ky, xx * stride + kx);
                                let cur = out.at(b, o, oy, ox);
                                out.put(b, o, oy, ox, cur + x.at(b, i, y, xx) * w.at(i, o, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Window scan, first maximum wins.
pub fn maxpool(x: &Arr, k: usize) -> Arr {
    let [n, c, h, w] = x.dims;
    let mut out = Arr::zeros([n, c, h / k, w / k]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / k {
                for xx in 0..w / k {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            best = best.max(x.at(b, ch, y * k + dy, xx * k + dx));
                        }
                    }
                    out.put(b, ch, y, xx, best);
                }
            }
        }
    }
    out
}

pub fn block_mean(x: &Arr, f: usize) -> Arr {
    let [n, c, h, w] = x.dims;
    let mut out = Arr::zeros([n, c, h / f, w / f]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / f {
                for xx in 0..w / f {
                    let mut s = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            s += x.at(b, ch, y * f + dy, xx * f + dx);
                        }
                    }
                    out.put(b, ch, y, xx, s / (f * f) as f64);
                }
            }
        }
    }
    out
}

pub fn nearest_up(x: &Arr, f: usize) -> Arr {
    let [n, c, h, w] = x.dims;
    let mut out = Arr::zeros([n, c, h * f, w * f]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * f {
                for xx in 0..w * f {
                    out.put(b, ch, y, xx, x.at(b, ch, y / f, xx / f));
                }
            }
        }
    }
    out
}

/// (|P∩G|, |P|, |G|) by direct pixel counting.
pub fn mask_counts(p: &[u8], g: &[u8]) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut np = 0;
    let mut ng = 0;
    for i in 0..p.len() {
        if p[i] == 1 {
            np += 1;
        }
        if g[i] == 1 {
            ng += 1;
        }
        if p[i] == 1 && g[i] == 1 {
            inter += 1;
        }
    }
    (inter, np, ng)
}

pub fn iou(p: &[u8], g: &[u8]) -> f64 {
    let (i, a, b) = mask_counts(p, g);
    let union = a + b - i;
    if union == 0 {
        1.0
    } else {
        i as f64 / union as f64
    }
}

pub fn dice(p: &[u8], g: &[u8]) -> f64 {
    let (i, a, b) = mask_counts(p, g);
    if a + b == 0 {
        1.0
    } else {
        2.0 * i as f64 / (a + b) as f64
    }
}

pub fn sigmoid_clamped(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7)
}

/// Mean binary cross-entropy, one pixel at a time.
pub fn bce(logits: &[f64], target: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..logits.len() {
        let p = sigmoid_clamped(logits[i]);
        s += -(target[i] * p.ln() + (1.0 - target[i]) * (1.0 - p).ln());
    }
    s / logits.len() as f64
}

/// Soft Dice loss with additive smoothing.
pub fn soft_dice(logits: &[f64], target: &[f64], eps: f64) -> f64 {
    let mut pt = 0.0;
    let mut ps = 0.0;
    let mut ts = 0.0;
    for i in 0..logits.len() {
        let p = sigmoid_clamped(logits[i]);
        pt += p * target[i];
        ps += p;
        ts += target[i];
    }
    1.0 - (2.0 * pt + eps) / (ps + ts + eps)
}
