//! Invariant suite behind `wacnn selfcheck`.
//!
//! Each property is a named closure returning a measured error and a bound.
//! Gradient checks run in f64 with central differences at `h = 1e-5`.

use std::time::Instant;

use crate::attention::{
    gc_forward, gc_graph, nl_forward, nl_graph, wa_forward, wa_graph, NlConfig, NlNodes, NlParams, PairwiseForm,
    WaConfig, WaVariant,
};
use crate::autodiff::{gradcheck_many, GradcheckReport, Graph, NodeId};
use crate::data::Rng;
use crate::error::Result;
use crate::nn::{batchnorm, build_network, cross_entropy, Bound, Mode, NetworkSpec, Network, ParamId, Placement, RunningStats};
use crate::tensor::{softmax, Tensor};
use crate::wavelet::{dwt2, dwt2_direct, idwt2, FilterBank, Wavelet};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const NET_GRAD_TOL: f64 = 1e-4;

/// Knobs for mutation testing of the suite itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct Options {
    /// Adds `1e-3` to the first Haar synthesis low-pass tap.
    pub perturb_haar: bool,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    pub seconds: f64,
    /// Set when the check itself failed to run.
    pub error: Option<String>,
}

impl Outcome {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match &self.error {
            Some(e) => format!("{status}  {:<28} error: {e}", self.name),
            None => format!("{status}  {:<28} {:.3e} (bound {:.0e}, {:.2}s)", self.name, self.value, self.bound, self.seconds),
        }
    }
}

type Check = fn(&Options) -> Result<f64>;

/// Name, check, and bound on the value the check returns.
pub fn properties() -> Vec<(&'static str, Check, f64)> {
    vec![
        ("dwt_matrix_equals_direct", |o| dwt_oracle_error(o, 50), 1e-12),
        ("perfect_reconstruction", |o| reconstruction_error(o, 50), 1e-8),
        ("parseval_orthogonal", |o| parseval_error(o, 50), 1e-8),
        ("haar_closed_forms", |_| haar_closed_form_error(), 1e-12),
        ("softmax_slices_and_shift", |_| softmax_error(), 1e-12),
        ("wa_zero_detail_closed_form", |_| wa_closed_form_error(), 1e-12),
        ("gc_zero_value_identity", |_| gc_identity_error(), 0.0),
        ("nl_zero_output_identity", |_| nl_identity_error(), 0.0),
        ("nl_pairwise_oracle", |_| nl_oracle_error(), 1e-10),
        ("grad_conv2d", |_| grad_conv(), GRAD_TOL),
        ("grad_batchnorm", |_| grad_batchnorm(), GRAD_TOL),
        ("grad_softmax", |_| grad_softmax(), GRAD_TOL),
        ("grad_wa_plain", |_| grad_wa(WaVariant::Plain), GRAD_TOL),
        ("grad_wa_stride", |_| grad_wa(WaVariant::Stride), GRAD_TOL),
        ("grad_wa_one_by_one", |_| grad_wa(WaVariant::OneByOne), GRAD_TOL),
        ("grad_gc", |_| grad_gc(), GRAD_TOL),
        ("grad_nl_gaussian", |_| grad_nl(PairwiseForm::Gaussian), GRAD_TOL),
        ("grad_nl_embedded_gaussian", |_| grad_nl(PairwiseForm::EmbeddedGaussian), GRAD_TOL),
        ("grad_nl_dot_product", |_| grad_nl(PairwiseForm::DotProduct), GRAD_TOL),
        ("grad_nl_concat", |_| grad_nl(PairwiseForm::Concat), GRAD_TOL),
        ("grad_network", |_| grad_network(), NET_GRAD_TOL),
    ]
}

/// Runs every property. A property with bound 0 must be exact.
pub fn run(opts: &Options) -> Vec<Outcome> {
    properties()
        .into_iter()
        .map(|(name, check, bound)| {
            let start = Instant::now();
            let res = check(opts);
            let seconds = start.elapsed().as_secs_f64();
            match res {
                Ok(value) => {
                    let passed = if bound == 0.0 { value == 0.0 } else { value < bound };
                    Outcome { name, value, bound, passed, seconds, error: None }
                }
                Err(e) => Outcome { name, value: f64::NAN, bound, passed: false, seconds, error: Some(e.to_string()) },
            }
        })
        .collect()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Rng::new(seed).uniform_tensor(shape, -1.0, 1.0)
}

fn bank(w: Wavelet, opts: &Options) -> FilterBank {
    let mut fb = w.filter_bank();
    if opts.perturb_haar && w == Wavelet::Haar {
        fb.synthesis_lo[0] += 1e-3;
    }
    fb
}

fn max_band_diff(a: &crate::wavelet::SubbandSet<f64>, b: &crate::wavelet::SubbandSet<f64>) -> Result<f64> {
    let mut m = 0.0f64;
    for (x, y) in [(&a.ll, &b.ll), (&a.lh, &b.lh), (&a.hl, &b.hl), (&a.hh, &b.hh)] {
        m = m.max(x.max_abs_diff(y)?);
    }
    Ok(m)
}

/// Max-abs gap between the matrix and direct DWT over `per_family` inputs per wavelet, sizes 4..16.
pub fn dwt_oracle_error(opts: &Options, per_family: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (wi, w) in Wavelet::ALL.into_iter().enumerate() {
        let fb = bank(w, opts);
        for k in 0..per_family {
            let side = [4, 8, 12, 16][(k % 4) as usize];
            let x = Rng::derive(1, wi as u64, k).uniform_tensor::<f64>(&[1, 1, side, side], -1.0, 1.0);
            worst = worst.max(max_band_diff(&dwt2(&x, &fb)?, &dwt2_direct(&x, &fb)?)?);
        }
    }
    Ok(worst)
}

/// Max-abs error of `idwt2(dwt2(x))` on random 16×16 inputs.
pub fn reconstruction_error(opts: &Options, per_family: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (wi, w) in Wavelet::ALL.into_iter().enumerate() {
        let fb = bank(w, opts);
        for k in 0..per_family {
            let x = Rng::derive(2, wi as u64, k).uniform_tensor::<f64>(&[1, 1, 16, 16], -1.0, 1.0);
            worst = worst.max(idwt2(&dwt2(&x, &fb)?, &fb)?.max_abs_diff(&x)?);
        }
    }
    Ok(worst)
}

/// Relative energy gap between an input and its four subbands, orthogonal families only.
pub fn parseval_error(opts: &Options, per_family: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (wi, w) in Wavelet::ALL.into_iter().enumerate().filter(|(_, w)| w.is_orthogonal()) {
        let fb = bank(w, opts);
        for k in 0..per_family {
            let side = [4, 8, 16][(k % 3) as usize];
            let x = Rng::derive(3, wi as u64, k).uniform_tensor::<f64>(&[1, 2, side, side], -1.0, 1.0);
            let s = dwt2(&x, &fb)?;
            let e = s.ll.sum_squares() + s.lh.sum_squares() + s.hl.sum_squares() + s.hh.sum_squares();
            let e0 = x.sum_squares();
            worst = worst.max((e - e0).abs() / e0);
        }
    }
    Ok(worst)
}

/// Constant `c` maps to `(2c, 0, 0, 0)`; `[[1,2],[3,4]]` maps to `(5, −2, −1, 0)`.
pub fn haar_closed_form_error() -> Result<f64> {
    let fb = Wavelet::Haar.filter_bank();
    let mut worst = 0.0f64;
    for c in [1.0, -3.5, 0.25] {
        let s = dwt2(&Tensor::full(&[1, 1, 8, 8], c)?, &fb)?;
        worst = worst.max(s.ll.map(|v| v - 2.0 * c).max_abs());
        worst = worst.max(s.lh.max_abs()).max(s.hl.max_abs()).max(s.hh.max_abs());
    }
    let s = dwt2(&Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])?, &fb)?;
    for (band, want) in [(&s.ll, 5.0f64), (&s.lh, -2.0), (&s.hl, -1.0), (&s.hh, 0.0)] {
        worst = worst.max((band.item()? - want).abs());
    }
    Ok(worst)
}

/// Slices over the axis group sum to one, and adding a constant changes nothing.
pub fn softmax_error() -> Result<f64> {
    let x = random(&[2, 3, 4, 4], 5);
    let y = softmax(&x, &[2, 3])?;
    let mut worst = 0.0f64;
    for slice in y.data().chunks(16) {
        worst = worst.max((slice.iter().sum::<f64>() - 1.0).abs());
    }
    let shifted = softmax(&x.map(|v| v + 7.25), &[2, 3])?;
    Ok(worst.max(shifted.max_abs_diff(&y)?))
}

/// Constant `c` through plain Haar WA gives `2c·(1 + 1/n'²)` everywhere.
pub fn wa_closed_form_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for (side, c) in [(4usize, 1.0), (8, -2.5), (16, 0.75), (32, 3.0)] {
        let out = wa_forward(&Tensor::full(&[2, 3, side, side], c)?, &WaConfig::plain(Wavelet::Haar), None)?;
        let n = (side / 2) as f64;
        let want = 2.0 * c * (1.0 + 1.0 / (n * n));
        worst = worst.max(out.map(|v| v - want).max_abs());
    }
    Ok(worst)
}

/// `gc_forward` with a zero value transform returns its input exactly.
pub fn gc_identity_error() -> Result<f64> {
    let x = random(&[2, 4, 5, 5], 6);
    let y = gc_forward(&x, &random(&[1, 4, 1, 1], 7), &Tensor::zeros(&[4, 4, 1, 1])?)?;
    y.max_abs_diff(&x)
}

fn nl_params(c: usize, cb: usize, seed: u64) -> NlParams<f64> {
    NlParams {
        wq: random(&[cb, c, 1, 1], seed),
        wk: random(&[cb, c, 1, 1], seed + 1),
        wv: random(&[cb, c, 1, 1], seed + 2),
        wz: random(&[c, cb, 1, 1], seed + 3),
        wf: Some(random(&[1, 2 * cb, 1, 1], seed + 4)),
    }
}

/// `nl_forward` with a zero output transform returns its input exactly, for every form.
pub fn nl_identity_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for form in PairwiseForm::ALL {
        let x = random(&[1, 3, 4, 4], 8);
        let mut p = nl_params(3, 2, 9);
        p.wz = Tensor::zeros(&[3, 2, 1, 1])?;
        worst = worst.max(nl_forward(&x, &NlConfig { form, bottleneck: 2 }, &p)?.max_abs_diff(&x)?);
    }
    Ok(worst)
}

/// Direct double loop over all position pairs `(i, j)`.
pub fn nl_brute_force(x: &Tensor<f64>, cfg: &NlConfig, p: &NlParams<f64>) -> Result<Tensor<f64>> {
    let (n, c, h, w) = x.dims4()?;
    let (np, cb) = (h * w, cfg.bottleneck);
    let mut out = x.clone();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for b in 0..n {
        let xv = |i: usize| (0..c).map(|ch| x.data()[(b * c + ch) * np + i]).collect::<Vec<f64>>();
        let proj = |wt: &Tensor<f64>, v: &[f64]| {
            (0..cb).map(|o| dot(&wt.data()[o * c..(o + 1) * c], v)).collect::<Vec<f64>>()
        };
        for i in 0..np {
            let xi = xv(i);
            let ti = proj(&p.wq, &xi);
            let f: Vec<f64> = (0..np)
                .map(|j| {
                    let xj = xv(j);
                    let pj = proj(&p.wk, &xj);
                    match cfg.form {
                        PairwiseForm::Gaussian => dot(&xi, &xj).exp(),
                        PairwiseForm::EmbeddedGaussian => dot(&ti, &pj).exp(),
                        PairwiseForm::DotProduct => dot(&ti, &pj),
                        PairwiseForm::Concat => {
                            let wf = p.wf.as_ref().expect("concat needs wf").data();
                            (dot(&wf[..cb], &ti) + dot(&wf[cb..], &pj)).max(0.0)
                        }
                    }
                })
                .collect();
            let norm = match cfg.form {
                PairwiseForm::Gaussian | PairwiseForm::EmbeddedGaussian => f.iter().sum::<f64>(),
                _ => np as f64,
            };
            let mut y = vec![0.0; cb];
            for (j, fj) in f.iter().enumerate() {
                let vj = proj(&p.wv, &xv(j));
                for k in 0..cb {
                    y[k] += fj / norm * vj[k];
                }
            }
            for o in 0..c {
                out.data_mut()[(b * c + o) * np + i] += dot(&p.wz.data()[o * cb..(o + 1) * cb], &y);
            }
        }
    }
    Ok(out)
}

/// Max-abs gap between `nl_forward` and [`nl_brute_force`] over all forms, `N_p ≤ 16`.
pub fn nl_oracle_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for form in PairwiseForm::ALL {
        for (shape, cb, seed) in [([1, 2, 1, 1], 1, 10), ([1, 2, 2, 2], 2, 11), ([2, 3, 4, 4], 2, 12), ([1, 2, 3, 5], 1, 13)] {
            let cfg = NlConfig { form, bottleneck: cb };
            let x = random(&shape, seed);
            let p = nl_params(shape[1], cb, seed + 100);
            worst = worst.max(nl_forward(&x, &cfg, &p)?.max_abs_diff(&nl_brute_force(&x, &cfg, &p)?)?);
        }
    }
    Ok(worst)
}

/// Worst relative error of `Σ probe ⊙ f(inputs)` over three seeds.
fn probed<F>(seeds: u64, mut make: impl FnMut(u64) -> (Vec<Tensor<f64>>, Vec<usize>), f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let (inputs, out_shape) = make(seed);
        let probe = random(&out_shape, 900 + seed);
        let r = gradcheck_many(
            |g, ids| {
                let y = f(g, ids)?;
                let p = g.input(probe.clone());
                let y = g.mul(y, p)?;
                g.sum(y)
            },
            &inputs,
            GRAD_STEP,
        )?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

pub fn grad_conv() -> Result<f64> {
    let mut worst = 0.0f64;
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        worst = worst.max(probed(
            3,
            |s| {
                let side = (5 + 2 * pad - 3) / stride + 1;
                (vec![random(&[2, 2, 5, 5], 20 + s), random(&[3, 2, 3, 3], 30 + s), random(&[3], 40 + s)], vec![2, 3, side, side])
            },
            move |g, ids| g.conv2d(ids[0], ids[1], Some(ids[2]), stride, pad),
        )?);
    }
    Ok(worst)
}

pub fn grad_batchnorm() -> Result<f64> {
    let mut worst = 0.0f64;
    for mode in [Mode::Train, Mode::Eval] {
        for seed in 0..3 {
            let running = RunningStats {
                mean: Rng::new(50 + seed).uniform_tensor(&[3], -0.5, 0.5),
                var: Rng::new(60 + seed).uniform_tensor(&[3], 0.5, 2.0),
            };
            let inputs = vec![
                Rng::new(70 + seed).uniform_tensor(&[2, 3, 3, 3], -2.0, 2.0),
                Rng::new(80 + seed).uniform_tensor(&[3], 0.5, 1.5),
                random(&[3], 90 + seed),
            ];
            let probe = random(&[2, 3, 3, 3], 100 + seed);
            let r = gradcheck_many(
                |g, ids| {
                    let (y, _) = batchnorm(g, ids[0], ids[1], ids[2], &running, mode)?;
                    let p = g.input(probe.clone());
                    let y = g.mul(y, p)?;
                    g.sum(y)
                },
                &inputs,
                GRAD_STEP,
            )?;
            worst = worst.max(r.max_rel_error);
        }
    }
    Ok(worst)
}

pub fn grad_softmax() -> Result<f64> {
    let mut worst = 0.0f64;
    for axes in [vec![1], vec![2, 3]] {
        worst = worst.max(probed(
            3,
            |s| (vec![random(&[2, 3, 2, 3], 110 + s).map(|v| 3.0 * v)], vec![2, 3, 2, 3]),
            |g, ids| g.softmax(ids[0], &axes),
        )?);
    }
    Ok(worst)
}

pub fn grad_wa(variant: WaVariant) -> Result<f64> {
    let cfg = WaConfig { wavelet: Wavelet::Haar, variant, out_channels: 3 };
    let cout = if variant == WaVariant::Plain { 2 } else { 3 };
    probed(
        3,
        |s| {
            let mut inputs = vec![random(&[1, 2, 8, 8], 120 + s)];
            if let Some(shape) = cfg.head_shape(2) {
                inputs.push(random(&shape, 130 + s));
            }
            (inputs, vec![1, cout, 4, 4])
        },
        |g, ids| Ok(wa_graph(g, ids[0], &cfg, ids.get(1).copied())?.out),
    )
}

pub fn grad_gc() -> Result<f64> {
    probed(
        3,
        |s| (vec![random(&[1, 2, 3, 3], 140 + s), random(&[1, 2, 1, 1], 150 + s), random(&[2, 2, 1, 1], 160 + s)], vec![1, 2, 3, 3]),
        |g, ids| gc_graph(g, ids[0], ids[1], ids[2]),
    )
}

pub fn grad_nl(form: PairwiseForm) -> Result<f64> {
    let cfg = NlConfig { form, bottleneck: 2 };
    probed(
        3,
        |s| {
            let p = nl_params(2, 2, 170 + 10 * s);
            let mut inputs = vec![random(&[1, 2, 2, 3], 180 + s), p.wq, p.wk, p.wv, p.wz];
            if form == PairwiseForm::Concat {
                inputs.push(p.wf.expect("wf"));
            }
            (inputs, vec![1, 2, 2, 3])
        },
        |g, ids| {
            let nodes = NlNodes { wq: ids[1], wk: ids[2], wv: ids[3], wz: ids[4], wf: ids.get(5).copied() };
            nl_graph(g, ids[0], &cfg, &nodes)
        },
    )
}

/// A small network of the given placement and variant: widths [2,3,3], one block per stage, 3 classes.
pub fn tiny_spec(placement: Placement, variant: WaVariant) -> NetworkSpec {
    NetworkSpec { stage_widths: vec![2, 3, 3], blocks_per_stage: 1, placement, variant, num_classes: 3, ..NetworkSpec::default() }
}

/// First `2×3×8×8` input, over derived seeds, whose ReLU inputs all stay at least `1e-3`
/// from zero, so central differences never straddle a kink.
pub fn kink_free_input(net: &Network<f64>, seed: u64, mode: Mode) -> Result<Tensor<f64>> {
    for k in 0..500 {
        let x = Rng::derive(seed, 100, k).uniform_tensor::<f64>(&[2, 3, 8, 8], -1.0, 1.0);
        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let xi = g.input(x.clone());
        net.forward(&mut g, &b, xi, mode)?;
        if g.kink_margin().is_none_or(|m| m > 1e-3) {
            return Ok(x);
        }
    }
    Err(crate::Error::Numeric("no kink-free input among 500 candidates".into()))
}

/// Gradient check of cross-entropy through the whole network, w.r.t. the input and every trainable parameter.
pub fn network_gradcheck(spec: &NetworkSpec, seed: u64, mode: Mode) -> Result<GradcheckReport> {
    let net = build_network::<f64>(spec, seed)?;
    let x = kink_free_input(&net, seed, mode)?;
    let trainable: Vec<ParamId> = net.params.iter().filter(|(_, p)| p.kind.trainable()).map(|(id, _)| id).collect();
    let mut inputs = vec![x];
    inputs.extend(trainable.iter().map(|&id| net.params.value(id).clone()));
    gradcheck_many(
        |g, ids| {
            let mut nodes = vec![None; net.params.len()];
            for (k, &id) in trainable.iter().enumerate() {
                nodes[id.index()] = Some(ids[k + 1]);
            }
            let out = net.forward(g, &Bound::from_nodes(nodes), ids[0], mode)?;
            cross_entropy(g, out.logits, &[1, 2])
        },
        &inputs,
        GRAD_STEP,
    )
}

/// Baseline and layer3 WA-stride mini-nets, three seeds each.
pub fn grad_network() -> Result<f64> {
    let mut worst = 0.0f64;
    for placement in [Placement::None, Placement::Layer(3)] {
        for seed in 0..3 {
            worst = worst.max(network_gradcheck(&tiny_spec(placement, WaVariant::Stride), 11 + seed, Mode::Train)?.max_rel_error);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_least_twelve_distinct_properties() {
        let names: std::collections::HashSet<_> = properties().iter().map(|p| p.0).collect();
        assert!(names.len() >= 12);
        assert_eq!(names.len(), properties().len());
    }

    #[test]
    fn perturbed_haar_breaks_reconstruction_only_there() {
        let bad = Options { perturb_haar: true };
        assert!(reconstruction_error(&bad, 5).unwrap() > 1e-4);
        assert!(reconstruction_error(&Options::default(), 5).unwrap() < 1e-8);
        // The analysis side is untouched.
        assert!(dwt_oracle_error(&bad, 4).unwrap() < 1e-12);
    }

    #[test]
    fn fresh_build_passes_everything() {
        let report = run(&Options::default());
        let failed: Vec<String> = report.iter().filter(|o| !o.passed).map(Outcome::line).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn nl_oracle_agrees() {
        assert!(nl_oracle_error().unwrap() < 1e-10);
    }
}
