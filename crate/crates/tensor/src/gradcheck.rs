//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Tape, Tensor, Var};

/// Default step for f32 central differences.
pub const H: f32 = 1e-3;

/// Uniform entries in `[-1, 1)`.
pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Weighted sum of `y`, so every output element reaches the loss.
pub fn project<'t>(y: Var<'t>, w: &Tensor) -> Var<'t> {
    let wv = y.tape().constant(w.clone());
    y.mul(wv).expect("weights match the output shape").sum()
}

/// Norms of the finite-difference gradient, the analytic gradient and
/// their difference, for one input.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradStats {
    pub fd: f64,
    pub analytic: f64,
    pub diff: f64,
}

impl GradStats {
    /// `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)`, or zero when both vanish.
    pub fn rel_error(&self) -> f64 {
        let scale = self.fd.max(self.analytic);
        if scale > 1e-6 {
            self.diff / scale
        } else {
            0.0
        }
    }

    /// Pool several inputs into one concatenated gradient.
    pub fn combine(stats: &[GradStats]) -> GradStats {
        let sq = |f: fn(&GradStats) -> f64| stats.iter().map(|s| f(s).powi(2)).sum::<f64>().sqrt();
        GradStats {
            fd: sq(|s| s.fd),
            analytic: sq(|s| s.analytic),
            diff: sq(|s| s.diff),
        }
    }
}

/// Central differences with step `h` against the analytic gradient of the
/// scalar `f`, per input.
pub fn grad_stats<F>(inputs: &[Tensor], h: f32, f: F) -> Vec<GradStats>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |ins: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t)).collect();
        f(&tape, &vars).value().item().expect("scalar loss") as f64
    };

    let mut out = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let (mut diff2, mut fd2, mut an2) = (0f64, 0f64, 0f64);
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        for j in 0..input.numel() {
            plus[i].data_mut()[j] += h;
            minus[i].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h as f64);
            plus[i].data_mut()[j] = input.data()[j];
            minus[i].data_mut()[j] = input.data()[j];
            let an = analytic.data()[j] as f64;
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
        }
        out.push(GradStats {
            fd: fd2.sqrt(),
            analytic: an2.sqrt(),
            diff: diff2.sqrt(),
        });
    }
    out
}

/// Largest [`GradStats::rel_error`] over the inputs.
pub fn max_rel_error<F>(inputs: &[Tensor], h: f32, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    grad_stats(inputs, h, f).iter().map(GradStats::rel_error).fold(0.0, f64::max)
}

/// Relative error of every tape primitive on random inputs.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut check = |name: &'static str, err: f64| out.push((name, err));

    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 5]);
    let w = random(&mut rng, &[3, 5]);
    check("matmul", max_rel_error(&[a.clone(), b], H, |_, v| project(v[0].matmul(v[1]).unwrap(), &w)));

    let ba = random(&mut rng, &[2, 3, 4]);
    let bb = random(&mut rng, &[2, 4, 2]);
    let bw = random(&mut rng, &[2, 3, 2]);
    check("bmm", max_rel_error(&[ba, bb], H, |_, v| project(v[0].matmul(v[1]).unwrap(), &bw)));

    let bias = random(&mut rng, &[4]);
    let w34 = random(&mut rng, &[3, 4]);
    check("add", max_rel_error(&[a.clone(), bias.clone()], H, |_, v| project(v[0].add(v[1]).unwrap(), &w34)));
    check("mul", max_rel_error(&[a.clone(), bias.clone()], H, |_, v| project(v[0].mul(v[1]).unwrap(), &w34)));
    check("scale", max_rel_error(std::slice::from_ref(&a), H, |_, v| project(v[0].scale(-1.7), &w34)));

    let t = random(&mut rng, &[2, 3, 4]);
    let wt = random(&mut rng, &[3, 2, 4]);
    check("transpose", max_rel_error(std::slice::from_ref(&t), H, |_, v| project(v[0].transpose(0, 1).unwrap(), &wt)));
    let wr = random(&mut rng, &[6, 4]);
    check("reshape", max_rel_error(std::slice::from_ref(&t), H, |_, v| project(v[0].reshape([6, 4]).unwrap(), &wr)));

    let c1 = random(&mut rng, &[3, 2]);
    let wc = random(&mut rng, &[3, 6]);
    check("concat", max_rel_error(&[a.clone(), c1], H, |_, v| {
        project(Var::concat_last(&[v[0], v[1]]).unwrap(), &wc)
    }));

    let table = random(&mut rng, &[5, 3]);
    let wg = random(&mut rng, &[4, 3]);
    check("gather", max_rel_error(&[table], H, |_, v| project(v[0].gather_rows(&[4, 0, 4, 2]).unwrap(), &wg)));

    check("softmax", max_rel_error(std::slice::from_ref(&a), H, |_, v| project(v[0].softmax_last(), &w34)));
    check("log_softmax", max_rel_error(std::slice::from_ref(&a), H, |_, v| project(v[0].log_softmax_last(), &w34)));

    let gain = random(&mut rng, &[4]);
    check("layer_norm", max_rel_error(&[a.clone(), gain, bias], H, |_, v| {
        project(v[0].layer_norm(v[1], v[2]).unwrap(), &w34)
    }));

    // keep relu inputs away from the kink
    let r = Tensor::new([6], vec![0.8, -0.6, 0.3, -0.2, 0.9, -0.95]).unwrap();
    let wr6 = random(&mut rng, &[6]);
    check("relu", max_rel_error(std::slice::from_ref(&r), H, |_, v| project(v[0].relu(), &wr6)));

    check("dropout", max_rel_error(std::slice::from_ref(&r), H, |_, v| project(v[0].dropout(0.5, true).unwrap(), &wr6)));

    let mask = [false, true, false, false, true, false];
    check("masked_fill", max_rel_error(std::slice::from_ref(&r), H, |_, v| {
        project(v[0].masked_fill(&mask).unwrap().softmax_last(), &wr6)
    }));

    check("sum", max_rel_error(std::slice::from_ref(&a), H, |_, v| v[0].mul(v[0]).unwrap().sum()));
    check("mean", max_rel_error(&[a], H, |_, v| v[0].mul(v[0]).unwrap().mean()));
    out
}
