use hemoflow::graph::Adjacency;
use hemoflow::tensor::{
    finite_diff_check, gelu, gelu_backward, grouped_attention, grouped_attention_backward, mse_loss, relu,
    sparse_attention, sparse_attention_backward, GatedMlp, Linear, ParamAccess, RmsNorm, Tensor2,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sum(y * r)`: a scalar loss whose output gradient is `r`.
fn project(y: &Tensor2<f64>, r: &Tensor2<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn random_mask(n: usize, seed: u64) -> Adjacency {
    use rand::Rng;
    let mut g = rng(seed);
    // Ring keeps every row non-empty; chords add variety.
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..n {
        edges.push((g.random_range(0..n), g.random_range(0..n)));
    }
    Adjacency::from_edges(n, edges)
}

/// Dense attention with masked-out logits at minus infinity.
fn dense_oracle(q: &Tensor2<f64>, k: &Tensor2<f64>, v: &Tensor2<f64>, mask: &Adjacency) -> Tensor2<f64> {
    let n = q.rows();
    let d = mask.to_dense();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Tensor2::zeros(n, v.cols());
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                if d[i][j] {
                    q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        for j in 0..n {
            for c in 0..v.cols() {
                let cur = out.get(i, c);
                out.set(i, c, cur + w[j] / s * v.get(j, c));
            }
        }
    }
    out
}

struct Probe {
    params: Vec<Tensor2<f64>>,
}

impl ParamAccess<f64> for Probe {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<f64>)) {
        for (i, p) in self.params.iter_mut().enumerate() {
            f(&format!("p{i}"), p);
        }
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Tensor2<f64>)) {
        for (i, p) in self.params.iter().enumerate() {
            f(&format!("p{i}"), p);
        }
    }
}

struct LinearProbe {
    lin: Linear<f64>,
    x: Tensor2<f64>,
    r: Tensor2<f64>,
    corrupt: bool,
}

impl ParamAccess<f64> for LinearProbe {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<f64>)) {
        self.lin.visit_params("lin", f);
        f("x", &mut self.x);
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Tensor2<f64>)) {
        self.lin.visit_params_ref("lin", f);
        f("x", &self.x);
    }
}

impl LinearProbe {
    fn new(n: usize, p: usize, q: usize, seed: u64) -> Self {
        let mut g = rng(seed);
        LinearProbe {
            lin: Linear::new(p, q, &mut g),
            x: Tensor2::uniform(n, p, 1.0, &mut g).into_param(),
            r: Tensor2::uniform(n, q, 1.0, &mut g),
            corrupt: false,
        }
    }
    fn loss(&mut self) -> f64 {
        project(&self.lin.forward(&self.x).unwrap(), &self.r)
    }
    fn backward(&mut self) {
        let x = self.x.clone();
        let mut dx = self.lin.backward(&x, &self.r).unwrap();
        if self.corrupt {
            dx.data_mut()[0] += 0.5;
        }
        self.x.accumulate_grad(dx.data());
    }
}

#[test]
fn linear_gradient_passes_and_corruption_is_caught() {
    let mut p = LinearProbe::new(5, 4, 3, 1);
    let rep = finite_diff_check(&mut p, |s| s.loss(), |s| s.backward(), 1e-6, 1000);
    assert!(rep.passed(), "{rep:?}");
    let mut bad = LinearProbe::new(5, 4, 3, 1);
    bad.corrupt = true;
    let rep = finite_diff_check(&mut bad, |s| s.loss(), |s| s.backward(), 1e-6, 1000);
    assert!(!rep.passed());
    assert_eq!(rep.worst().unwrap().0, "x");
}

#[test]
fn rmsnorm_gradient() {
    let mut g = rng(2);
    let r = Tensor2::<f64>::uniform(4, 6, 1.0, &mut g);
    let mut norm = RmsNorm::<f64>::new(6);
    norm.gain = Tensor2::uniform(1, 6, 2.0, &mut g).into_param();
    let mut probe = Probe { params: vec![norm.gain.clone(), Tensor2::uniform(4, 6, 1.5, &mut g).into_param()] };
    let eval = |s: &mut Probe| {
        let n = RmsNorm { gain: s.params[0].clone() };
        project(&n.forward(&s.params[1]).unwrap().0, &r)
    };
    let back = |s: &mut Probe| {
        let mut n = RmsNorm { gain: s.params[0].clone() };
        let (_, inv) = n.forward(&s.params[1]).unwrap();
        let dx = n.backward(&s.params[1], &inv, &r);
        s.params[0].accumulate_grad(n.gain.grad().unwrap());
        s.params[1].accumulate_grad(dx.data());
    };
    let rep = finite_diff_check(&mut probe, eval, back, 1e-5, 1000);
    assert!(rep.passed(), "{rep:?}");
}

struct MlpProbe {
    mlp: GatedMlp<f64>,
    x: Tensor2<f64>,
    r: Tensor2<f64>,
}

impl ParamAccess<f64> for MlpProbe {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<f64>)) {
        self.mlp.visit_params("mlp", f);
        f("x", &mut self.x);
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Tensor2<f64>)) {
        self.mlp.visit_params_ref("mlp", f);
        f("x", &self.x);
    }
}

#[test]
fn gated_mlp_gradient() {
    let mut g = rng(3);
    let mut probe = MlpProbe {
        mlp: GatedMlp::new(4, 3, &mut g),
        x: Tensor2::uniform(5, 4, 1.5, &mut g).into_param(),
        r: Tensor2::uniform(5, 4, 1.0, &mut g),
    };
    let rep = finite_diff_check(
        &mut probe,
        |s| project(&s.mlp.forward(&s.x).unwrap().0, &s.r),
        |s| {
            let x = s.x.clone();
            let (_, cache) = s.mlp.forward(&x).unwrap();
            let dx = s.mlp.backward(&x, &cache, &s.r).unwrap();
            s.x.accumulate_grad(dx.data());
        },
        1e-5,
        1000,
    );
    assert!(rep.passed(), "{rep:?}");
    assert_eq!(rep.blocks.len(), 7);
}

#[test]
fn activation_and_loss_gradients() {
    let mut g = rng(4);
    let r = Tensor2::<f64>::uniform(3, 4, 1.0, &mut g);
    let target = Tensor2::<f64>::uniform(3, 4, 1.0, &mut g);
    let mut probe = Probe { params: vec![Tensor2::uniform(3, 4, 2.0, &mut g).into_param()] };
    let rep = finite_diff_check(
        &mut probe,
        |s| project(&gelu(&s.params[0]), &r),
        |s| {
            let d = gelu_backward(&s.params[0], &r);
            s.params[0].accumulate_grad(d.data());
        },
        1e-5,
        100,
    );
    assert!(rep.passed(), "{rep:?}");
    let rep = finite_diff_check(
        &mut probe,
        |s| mse_loss(&s.params[0], &target).unwrap().0,
        |s| {
            let (_, d) = mse_loss(&s.params[0], &target).unwrap();
            s.params[0].accumulate_grad(d.data());
        },
        1e-6,
        100,
    );
    assert!(rep.passed(), "{rep:?}");
    // relu is piecewise linear; away from zero its projection is exact.
    let x = Tensor2::<f64>::from_vec(1, 2, vec![-1.0, 2.0]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 2.0]);
}

#[test]
fn attention_gradient_of_q_k_v() {
    let n = 9;
    let mask = random_mask(n, 5);
    let mut g = rng(5);
    let r = Tensor2::<f64>::uniform(n, 3, 1.0, &mut g);
    let mut probe = Probe {
        params: vec![
            Tensor2::uniform(n, 4, 1.0, &mut g).into_param(),
            Tensor2::uniform(n, 4, 1.0, &mut g).into_param(),
            Tensor2::uniform(n, 3, 1.0, &mut g).into_param(),
        ],
    };
    let rep = finite_diff_check(
        &mut probe,
        |s| project(&sparse_attention(&s.params[0], &s.params[1], &s.params[2], &mask).unwrap().0, &r),
        |s| {
            let (q, k, v) = (s.params[0].clone(), s.params[1].clone(), s.params[2].clone());
            let (_, sc) = sparse_attention(&q, &k, &v, &mask).unwrap();
            let (dq, dk, dv) = sparse_attention_backward(&q, &k, &v, &mask, &sc, &r).unwrap();
            s.params[0].accumulate_grad(dq.data());
            s.params[1].accumulate_grad(dk.data());
            s.params[2].accumulate_grad(dv.data());
        },
        1e-4,
        1000,
    );
    assert!(rep.passed(), "{rep:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_matches_dense_oracle(n in 2usize..32, dh in 1usize..6, seed in any::<u64>()) {
        let mask = random_mask(n, seed);
        let mut g = rng(seed ^ 0xabc);
        let q = Tensor2::<f64>::uniform(n, dh, 3.0, &mut g);
        let k = Tensor2::<f64>::uniform(n, dh, 3.0, &mut g);
        let v = Tensor2::<f64>::uniform(n, dh, 3.0, &mut g);
        let (o, s) = sparse_attention(&q, &k, &v, &mask).unwrap();
        let d = dense_oracle(&q, &k, &v, &mask);
        let scale = d.data().iter().fold(1e-300f64, |m, x| m.max(x.abs()));
        prop_assert!(o.max_abs_diff(&d) / scale < 1e-10);
        for r in s.row_sums(&mask) {
            prop_assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_ignores_non_neighbour_keys_and_values(n in 3usize..20, seed in any::<u64>()) {
        let mask = random_mask(n, seed);
        let mut g = rng(seed);
        let q = Tensor2::<f64>::uniform(n, 3, 1.0, &mut g);
        let k = Tensor2::<f64>::uniform(n, 3, 1.0, &mut g);
        let v = Tensor2::<f64>::uniform(n, 2, 1.0, &mut g);
        let (o, _) = sparse_attention(&q, &k, &v, &mask).unwrap();
        // Row 0 must not see any node outside its neighbourhood.
        let (mut k2, mut v2) = (k.clone(), v.clone());
        for j in 0..n {
            if !mask.has_edge(0, j) {
                k2.row_mut(j).iter_mut().for_each(|x| *x = 99.0);
                v2.row_mut(j).iter_mut().for_each(|x| *x = -99.0);
            }
        }
        let (o2, _) = sparse_attention(&q, &k2, &v2, &mask).unwrap();
        prop_assert_eq!(o.row(0), o2.row(0));
    }

    #[test]
    fn linear_gradients_on_random_shapes(n in 1usize..6, p in 1usize..6, q in 1usize..6, seed in any::<u64>()) {
        let mut probe = LinearProbe::new(n, p, q, seed);
        let rep = finite_diff_check(&mut probe, |s| s.loss(), |s| s.backward(), 1e-6, 1000);
        prop_assert!(rep.passed(), "{:?}", rep);
    }

    #[test]
    fn attention_gradients_on_random_instances(n in 2usize..10, dh in 1usize..4, seed in any::<u64>()) {
        let mask = random_mask(n, seed);
        let mut g = rng(seed);
        let r = Tensor2::<f64>::uniform(n, dh, 1.0, &mut g);
        let mut probe = Probe {
            params: (0..3).map(|_| Tensor2::uniform(n, dh, 1.0, &mut g).into_param()).collect(),
        };
        let rep = finite_diff_check(
            &mut probe,
            |s| project(&sparse_attention(&s.params[0], &s.params[1], &s.params[2], &mask).unwrap().0, &r),
            |s| {
                let (q, k, v) = (s.params[0].clone(), s.params[1].clone(), s.params[2].clone());
                let (_, sc) = sparse_attention(&q, &k, &v, &mask).unwrap();
                let (dq, dk, dv) = sparse_attention_backward(&q, &k, &v, &mask, &sc, &r).unwrap();
                s.params[0].accumulate_grad(dq.data());
                s.params[1].accumulate_grad(dk.data());
                s.params[2].accumulate_grad(dv.data());
            },
            1e-4,
            1000,
        );
        prop_assert!(rep.passed(), "{:?}", rep);
    }

    #[test]
    fn grouped_attention_matches_per_head(n in 2usize..16, heads in 1usize..5, dh in 1usize..4, seed in any::<u64>()) {
        let masks = [random_mask(n, seed), random_mask(n, seed ^ 1)];
        let d = heads * dh;
        let mut g = rng(seed);
        let qkv = Tensor2::<f64>::uniform(n, 3 * d, 2.0, &mut g);
        let d_out = Tensor2::<f64>::uniform(n, d, 1.0, &mut g);
        let mut out = Tensor2::zeros(n, d);
        let mut d_qkv = Tensor2::zeros(n, 3 * d);
        for (m, mask) in masks.iter().enumerate() {
            let group: Vec<usize> = (0..heads).filter(|h| h % 2 == m).collect();
            if group.is_empty() {
                continue;
            }
            let sc = grouped_attention(&qkv, dh, &group, mask, &mut out).unwrap();
            grouped_attention_backward(&qkv, dh, mask, &sc, &d_out, &mut d_qkv).unwrap();
        }
        for h in 0..heads {
            let mask = &masks[h % 2];
            let (q, k, v) = (qkv.columns(h * dh, dh), qkv.columns(d + h * dh, dh), qkv.columns(2 * d + h * dh, dh));
            let (o, sc) = sparse_attention(&q, &k, &v, mask).unwrap();
            let (dq, dk, dv) = sparse_attention_backward(&q, &k, &v, mask, &sc, &d_out.columns(h * dh, dh)).unwrap();
            prop_assert!(o.max_abs_diff(&out.columns(h * dh, dh)) < 1e-12);
            prop_assert!(dq.max_abs_diff(&d_qkv.columns(h * dh, dh)) < 1e-12);
            prop_assert!(dk.max_abs_diff(&d_qkv.columns(d + h * dh, dh)) < 1e-12);
            prop_assert!(dv.max_abs_diff(&d_qkv.columns(2 * d + h * dh, dh)) < 1e-12);
        }
    }
}
