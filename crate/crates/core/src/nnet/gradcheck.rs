//! Central finite-difference checks of the analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::layers::{
    col2im, conv_backward, conv_forward, fc_backward, fc_forward, im2col, maxpool_backward, maxpool_forward, relu,
    relu_backward, ConvDims,
};
use super::{init_model, CnnModel, Engine, HeadKind, NUM_PARAMS, TENSORS};
use crate::rng::derived_stream;
use crate::simkernel::logistic;
use crate::terrain::CELLS;

pub const EPSILON: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Outcome of checking one layer or tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// Max-pool entries whose perturbation changed the winner, where a
    /// finite difference straddles a kink; not compared.
    pub skipped: usize,
    /// Full-model entries whose perturbation flipped a ReLU or pooling
    /// winner somewhere; these are differenced with the nominal activation
    /// pattern held fixed.
    pub kinks: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), checked: 0, skipped: 0, kinks: 0, max_rel_error: 0.0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
    }
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Perturb `buf[i]` by `+-EPSILON`, evaluate `f` at both points, restore.
fn central<F: FnMut(&[f64]) -> f64>(buf: &mut [f64], i: usize, mut f: F) -> f64 {
    let orig = buf[i];
    buf[i] = orig + EPSILON;
    let up = f(buf);
    buf[i] = orig - EPSILON;
    let down = f(buf);
    buf[i] = orig;
    (up - down) / (2.0 * EPSILON)
}

/// Each layer kernel in isolation on small seeded shapes, with the scalar
/// objective `sum(r * output)` for a random projection `r`.
pub fn check_layers(seed: u64) -> Vec<GradCheck> {
    let mut rng = derived_stream(seed, &[0x6c61]);
    let mut out = Vec::new();

    // Convolution: weights, biases, and input.
    let d = ConvDims { cin: 2, cout: 3, batch: 2, h: 5, w: 4 };
    let mut x = random_vec(&mut rng, d.cin * d.plane(), 1.0);
    let mut wt = random_vec(&mut rng, d.cout * d.taps(), 1.0);
    let mut b = random_vec(&mut rng, d.cout, 1.0);
    let r = random_vec(&mut rng, d.cout * d.plane(), 1.0);
    let conv = |x: &[f64], wt: &[f64], b: &[f64]| {
        let mut cols = vec![0.0; d.taps() * d.plane()];
        im2col(x, d, &mut cols);
        let mut y = vec![0.0; d.cout * d.plane()];
        conv_forward(&cols, d, wt, b, &mut y);
        (cols, y)
    };
    let (cols, _) = conv(&x, &wt, &b);
    let (mut gw, mut gb) = (vec![0.0; wt.len()], vec![0.0; b.len()]);
    let mut dcols = vec![0.0; cols.len()];
    conv_backward(&cols, &r, d, &wt, &mut gw, &mut gb, Some(&mut dcols));
    let mut gx = vec![0.0; x.len()];
    col2im(&dcols, d, &mut gx);
    let mut c = GradCheck::new("conv3x3");
    for i in 0..wt.len() {
        let (xx, bb) = (x.clone(), b.clone());
        let n = central(&mut wt, i, |w| dot(&conv(&xx, w, &bb).1, &r));
        c.record(gw[i], n);
    }
    for i in 0..b.len() {
        let (xx, ww) = (x.clone(), wt.clone());
        let n = central(&mut b, i, |bb| dot(&conv(&xx, &ww, bb).1, &r));
        c.record(gb[i], n);
    }
    for i in 0..x.len() {
        let (ww, bb) = (wt.clone(), b.clone());
        let n = central(&mut x, i, |xx| dot(&conv(xx, &ww, &bb).1, &r));
        c.record(gx[i], n);
    }
    out.push(c);

    // ReLU, inputs kept away from the kink.
    let mut x: Vec<f64> = (0..40)
        .map(|_| {
            let v: f64 = rng.gen_range(0.01..1.0);
            if rng.gen::<bool>() { v } else { -v }
        })
        .collect();
    let r = random_vec(&mut rng, x.len(), 1.0);
    let fwd = |x: &[f64]| {
        let mut y = x.to_vec();
        relu(&mut y);
        y
    };
    let mut g = r.clone();
    relu_backward(&fwd(&x), &mut g);
    let mut c = GradCheck::new("relu");
    for i in 0..x.len() {
        let n = central(&mut x, i, |xx| dot(&fwd(xx), &r));
        c.record(g[i], n);
    }
    out.push(c);

    // Max-pool over odd-sized planes.
    let (planes, h, w) = (3, 5, 3);
    let mut x = random_vec(&mut rng, planes * h * w, 1.0);
    let (oh, ow) = (h / 2, w / 2);
    let r = random_vec(&mut rng, planes * oh * ow, 1.0);
    let pool = |x: &[f64]| {
        let mut y = vec![0.0; planes * oh * ow];
        let mut arg = vec![0; y.len()];
        maxpool_forward(x, planes, h, w, &mut y, &mut arg);
        (y, arg)
    };
    let (_, arg) = pool(&x);
    let mut g = vec![0.0; x.len()];
    maxpool_backward(&r, &arg, &mut g);
    let mut c = GradCheck::new("maxpool2x2");
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + EPSILON;
        let (yu, au) = pool(&x);
        x[i] = orig - EPSILON;
        let (yd, ad) = pool(&x);
        x[i] = orig;
        if au != arg || ad != arg {
            c.skipped += 1;
            continue;
        }
        c.record(g[i], (dot(&yu, &r) - dot(&yd, &r)) / (2.0 * EPSILON));
    }
    out.push(c);

    // Fully connected.
    let (n, nin, nout) = (3, 7, 5);
    let mut x = random_vec(&mut rng, n * nin, 1.0);
    let mut wt = random_vec(&mut rng, nout * nin, 1.0);
    let mut b = random_vec(&mut rng, nout, 1.0);
    let r = random_vec(&mut rng, n * nout, 1.0);
    let fc = |x: &[f64], wt: &[f64], b: &[f64]| {
        let mut y = vec![0.0; n * nout];
        fc_forward(x, n, nin, wt, b, nout, &mut y);
        dot(&y, &r)
    };
    let (mut gw, mut gb, mut gx) = (vec![0.0; wt.len()], vec![0.0; nout], vec![0.0; x.len()]);
    fc_backward(&x, &r, n, nin, nout, &wt, &mut gw, &mut gb, Some(&mut gx));
    let mut c = GradCheck::new("fully_connected");
    for i in 0..wt.len() {
        let (xx, bb) = (x.clone(), b.clone());
        c.record(gw[i], central(&mut wt, i, |w| fc(&xx, w, &bb)));
    }
    for i in 0..nout {
        let (xx, ww) = (x.clone(), wt.clone());
        c.record(gb[i], central(&mut b, i, |bb| fc(&xx, &ww, bb)));
    }
    for i in 0..x.len() {
        let (ww, bb) = (wt.clone(), b.clone());
        c.record(gx[i], central(&mut x, i, |xx| fc(xx, &ww, &bb)));
    }
    out.push(c);

    // Sigmoid head with squared error, as in the viability loss.
    let mut c = GradCheck::new("sigmoid_mse");
    for _ in 0..20 {
        let mut z = [rng.gen_range(-4.0..4.0)];
        let y: f64 = rng.gen();
        let p = logistic(z[0]);
        let analytic = 2.0 * (p - y) * p * (1.0 - p);
        c.record(analytic, central(&mut z, 0, |z| (logistic(z[0]) - y).powi(2)));
    }
    out.push(c);
    out
}

/// The full network on `inputs` seeded heightfield-like inputs: every entry
/// of the small tensors and `per_large_tensor` sampled entries of the large
/// ones, one report per tensor.
pub fn check_model(head_kind: HeadKind, seed: u64, inputs: usize, per_large_tensor: usize) -> Vec<GradCheck> {
    let mut rng = derived_stream(seed, &[0x6d6f]);
    let mut model = init_model(head_kind, seed);
    // Non-zero biases so every bias gradient is exercised away from a symmetric start.
    for (i, t) in TENSORS.iter().enumerate() {
        if t.fan_in == 0 {
            for v in model.tensor_mut(i) {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
    }
    let x = random_vec(&mut rng, inputs * CELLS, 0.3);
    let labels: Vec<f64> = (0..inputs)
        .map(|_| match head_kind {
            HeadKind::Sigmoid => rng.gen(),
            HeadKind::Linear => rng.gen_range(0.0..2.0),
        })
        .collect();

    let mut engine = Engine::new(inputs);
    let mut grad = vec![0.0; NUM_PARAMS];
    let mut sq = vec![0.0; inputs];
    engine.loss_and_grad(&model, &x, &labels, &mut grad, &mut sq);
    engine.forward(&model, &x, inputs);
    let pattern = engine.activation_pattern();

    let loss_at = |m: &CnnModel, engine: &mut Engine| {
        let out = engine.forward(m, &x, inputs);
        let l = out.iter().zip(&labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / inputs as f64;
        (l, engine.activation_pattern())
    };

    let mut reports = Vec::new();
    for t in TENSORS.iter() {
        let mut c = GradCheck::new(t.name);
        let picks: Vec<usize> = if t.len <= 600 {
            (0..t.len).collect()
        } else {
            let mut v = sample(&mut rng, t.len, per_large_tensor.min(t.len)).into_vec();
            v.sort_unstable();
            v
        };
        for k in picks {
            let i = t.offset + k;
            let orig = model.params[i];
            model.params[i] = orig + EPSILON;
            let (mut up, pu) = loss_at(&model, &mut engine);
            model.params[i] = orig - EPSILON;
            let (mut down, pd) = loss_at(&model, &mut engine);
            if pu != pattern || pd != pattern {
                // The perturbation crosses a ReLU or pooling switch; difference
                // on the piece the analytic gradient belongs to.
                c.kinks += 1;
                engine.freeze(Some(pattern.clone()));
                down = loss_at(&model, &mut engine).0;
                model.params[i] = orig + EPSILON;
                up = loss_at(&model, &mut engine).0;
                engine.freeze(None);
            }
            model.params[i] = orig;
            c.record(grad[i], (up - down) / (2.0 * EPSILON));
        }
        reports.push(c);
    }
    reports
}
