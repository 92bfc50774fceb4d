#![allow(dead_code)]

pub mod checks;
pub mod golden;
pub mod oracles;
pub mod workloads;

use aquaseg::tensor::{finite_difference_grad, relative_error, Element};
use aquaseg::{Graph, PrngState, Shape4, Tensor4, Var};
use oracles::Arr;

pub fn to_arr(t: &Tensor4<f64>) -> Arr {
    Arr::new(t.shape().dims(), t.data().to_vec())
}

pub fn rand_tensor<T: Element>(dims: [usize; 4], rng: &mut PrngState) -> Tensor4<T> {
    Tensor4::uniform(Shape4::from(dims), -1.0, 1.0, rng)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst relative error between backward() and central differences over all
/// inputs of `build`, for the scalar `Σ build(inputs) ⊙ R` with a fixed
/// random projection `R`.
pub fn grad_check<T: Element>(
    inputs: &[Tensor4<T>],
    eps: f64,
    seed: u64,
    build: impl Fn(&mut Graph<T>, &[Var]) -> Var,
) -> f64 {
    let forward = |xs: &[Tensor4<T>], grads: bool| -> (Graph<T>, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), grads)).collect();
        let out = build(&mut g, &vars);
        let shape = g.shape(out);
        let mut rng = PrngState::new(seed ^ 0xA5A5);
        let proj = g.constant(Tensor4::uniform(shape, -1.0, 1.0, &mut rng));
        let prod = g.mul(out, proj).unwrap();
        let loss = g.sum(prod);
        (g, vars, loss)
    };
    let (mut g, vars, loss) = forward(inputs, true);
    g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad_or_zeros(*v);
        let numeric = finite_difference_grad(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                let (g, _, loss) = forward(&xs, false);
                g.item(loss).unwrap()
            },
            &inputs[i],
            T::lit(eps),
        );
        worst = worst.max(relative_error(analytic.data(), numeric.data()));
    }
    worst
}

/// Finite-difference check of a scalar loss over many parameter tensors,
/// too many to probe one coordinate at a time.
///
/// Compares `∇L·d` against central differences along `directions` random
/// unit directions in the joint parameter space, plus `coords` randomly
/// picked single coordinates. Returns the worse of the two vector relative
/// errors.
pub fn param_grad_check(
    params: &[Tensor4<f64>],
    seed: u64,
    directions: usize,
    coords: usize,
    eps: f64,
    loss: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    use rand::Rng;

    let eval = |ps: &[Tensor4<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let l = loss(&mut g, &vars);
        g.item(l).unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let l = loss(&mut g, &vars);
    g.backward(l).unwrap();
    let grads: Vec<Tensor4<f64>> = vars.iter().map(|v| g.grad_or_zeros(*v)).collect();

    let mut rng = PrngState::new(seed ^ 0x5EED);
    let (mut dir_a, mut dir_n) = (Vec::new(), Vec::new());
    for _ in 0..directions {
        let mut d: Vec<Tensor4<f64>> = params.iter().map(|p| Tensor4::uniform(p.shape(), -1.0, 1.0, &mut rng)).collect();
        let norm = d.iter().map(|t| t.dot(t).unwrap()).sum::<f64>().sqrt();
        for t in &mut d {
            *t = t.map(|v| v / norm);
        }
        let shifted = |sign: f64| -> Vec<Tensor4<f64>> {
            params
                .iter()
                .zip(&d)
                .map(|(p, dt)| {
                    let mut q = p.clone();
                    for (a, &b) in q.data_mut().iter_mut().zip(dt.data()) {
                        *a += sign * eps * b;
                    }
                    q
                })
                .collect()
        };
        dir_n.push((eval(&shifted(1.0)) - eval(&shifted(-1.0))) / (2.0 * eps));
        dir_a.push(grads.iter().zip(&d).map(|(gt, dt)| gt.dot(dt).unwrap()).sum::<f64>());
    }

    let (mut co_a, mut co_n) = (Vec::new(), Vec::new());
    for _ in 0..coords {
        let t = rng.gen_range(0..params.len());
        let i = rng.gen_range(0..params[t].numel());
        let mut ps = params.to_vec();
        let orig = ps[t].data()[i];
        ps[t].data_mut()[i] = orig + eps;
        let hi = eval(&ps);
        ps[t].data_mut()[i] = orig - eps;
        let lo = eval(&ps);
        co_n.push((hi - lo) / (2.0 * eps));
        co_a.push(grads[t].data()[i]);
    }
    relative_error(&dir_a, &dir_n).max(relative_error(&co_a, &co_n))
}
