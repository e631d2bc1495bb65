//! Finite-difference verification of every backward rule.
//!
//! Checks run in `f64`. A non-scalar output is reduced to
//! `Σ out ⊙ R` with a fixed random `R`, so every output entry contributes.
//! An entry passes when `|analytic - numeric| <= max(rel · max(|analytic|,
//! |numeric|), abs)`.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::decoder::{AttentionMode, RmaStage};
use crate::error::Result;
use crate::loss::{bce_loss, combined_loss, dice_loss};
use crate::model::{Model, ModelConfig, Variant};
use crate::ops::Conv2dSpec;
use crate::params::{Graph, ParamBuilder, ParamId, ParamStore};
use crate::ss2d::{expand_routes, merge_routes, Ss2d, SsmConfig, ScanMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vss::VssBlock;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-3, abs: 1e-4 }
    }
}

impl Tolerance {
    fn allowed(&self, a: f64, b: f64) -> f64 {
        (self.rel * a.abs().max(b.abs())).max(self.abs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Entries checked per parameter tensor; `None` checks all of them.
    pub samples_per_tensor: Option<usize>,
    pub tolerance: Tolerance,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            samples_per_tensor: None,
            tolerance: Tolerance::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    /// Largest numeric gradient magnitude seen; shows the check is not
    /// passing on near-zero gradients.
    pub max_grad: f64,
    /// Largest `error / allowed` over all entries; at most 1 on success.
    pub worst_ratio: f64,
    /// Name and flat index of the entry with the worst ratio.
    pub worst_entry: Option<(String, usize)>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

fn weighted_sum(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Compares tape gradients of `f` w.r.t. every tensor in `params` with
/// central differences.
pub fn check_graph(
    name: &str,
    params: &ParamStore<f64>,
    f: impl Fn(&Graph<'_, f64>) -> Result<Var<f64>>,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let tape = Tape::new();
    let g = Graph::new(&tape, params);
    for id in params.ids() {
        g.param(id);
    }
    let out = f(&g)?;
    let weights = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let loss = g.sum(&g.mul(&out, &g.constant(weights.clone()))?)?;
    let analytic = if loss.requires_grad() {
        let mut grads = g.backward(&loss)?;
        g.param_grads(&mut grads)
    } else {
        Vec::new()
    };
    drop(g);
    drop(tape);

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::inference();
        let g = Graph::new(&tape, store);
        Ok(weighted_sum(f(&g)?.value(), &weights))
    };

    let mut work = params.clone();
    let mut report = CheckReport {
        name: name.into(),
        checked: 0,
        failures: 0,
        max_abs_err: 0.0,
        max_grad: 0.0,
        worst_ratio: 0.0,
        worst_entry: None,
    };
    for id in params.ids() {
        let len = params.get(id).len();
        let entries: Vec<usize> = match opts.samples_per_tensor {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in entries {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id.index()).and_then(Option::as_ref).map_or(0.0, |t| t.data()[i]);
            let err = (a - numeric).abs();
            let ratio = err / opts.tolerance.allowed(a, numeric);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            report.max_grad = report.max_grad.max(numeric.abs());
            if ratio > 1.0 || !ratio.is_finite() {
                report.failures += 1;
            }
            if ratio > report.worst_ratio || report.worst_entry.is_none() {
                report.worst_ratio = ratio;
                report.worst_entry = Some((params.name(id).into(), i));
            }
        }
    }
    Ok(report)
}

/// Named inputs for single-op checks.
struct Inputs {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl Inputs {
    fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.sample(StandardNormal));
        self.store.add(name, t)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
        self.store.add(name, t)
    }

    /// Magnitudes in `[gap, 1]` with random sign, keeping clear of a kink at 0.
    fn away_from_zero(&mut self, name: &str, shape: &[usize], gap: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        });
        self.store.add(name, t)
    }
}

type GraphFn = Box<dyn Fn(&Graph<'_, f64>) -> Result<Var<f64>>>;

/// One entry of the gradient suite.
pub struct Check {
    pub name: &'static str,
    params: ParamStore<f64>,
    f: GraphFn,
    opts: CheckOptions,
}

impl Check {
    fn new(
        name: &'static str,
        params: ParamStore<f64>,
        f: impl Fn(&Graph<'_, f64>) -> Result<Var<f64>> + 'static,
    ) -> Self {
        Self {
            name,
            params,
            f: Box::new(f),
            opts: CheckOptions::default(),
        }
    }

    pub fn run(&self) -> Result<CheckReport> {
        check_graph(self.name, &self.params, &self.f, &self.opts)
    }
}

fn unary_check(name: &'static str, op: fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>>, lo: f64, hi: f64) -> Check {
    let mut inp = Inputs::new(1);
    let x = inp.uniform("x", &[2, 3, 4], lo, hi);
    Check::new(name, inp.store, move |g| op(g, &g.param(x)))
}

fn op_checks() -> Vec<Check> {
    let mut checks = alloc::vec![
        unary_check("sigmoid", |t, x| t.sigmoid(x), -4.0, 4.0),
        unary_check("silu", |t, x| t.silu(x), -4.0, 4.0),
        unary_check("softplus", |t, x| t.softplus(x), -4.0, 4.0),
        unary_check("exp", |t, x| t.exp(x), -2.0, 2.0),
        unary_check("ln", |t, x| t.ln(x), 0.5, 2.0),
        unary_check("affine", |t, x| t.affine(x, -1.5, 0.25), -1.0, 1.0),
    ];

    let mut inp = Inputs::new(2);
    let x = inp.away_from_zero("x", &[3, 5], 0.1);
    checks.push(Check::new("relu", inp.store, move |g| g.relu(&g.param(x))));

    // Alternately inside and outside [-0.4, 0.4], at least 0.1 from either bound.
    let mut inp = Inputs::new(3);
    let rng = &mut inp.rng;
    let values = Tensor::from_fn(&[4, 4], |i| {
        let v: f64 = if i % 2 == 0 {
            rng.random_range(-0.3..0.3)
        } else {
            rng.random_range(0.5..1.0)
        };
        if i % 4 == 1 {
            -v
        } else {
            v
        }
    });
    let x = inp.store.add("x", values);
    checks.push(Check::new("clamp", inp.store, move |g| g.clamp(&g.param(x), -0.4, 0.4)));

    for (name, kind) in [("add", 0u8), ("sub", 1), ("mul", 2), ("div", 3)] {
        let mut inp = Inputs::new(4);
        let a = inp.normal("a", &[2, 5]);
        let b = inp.uniform("b", &[2, 5], 0.5, 2.0);
        checks.push(Check::new(name, inp.store, move |g| {
            let (a, b) = (g.param(a), g.param(b));
            match kind {
                0 => g.add(&a, &b),
                1 => g.sub(&a, &b),
                2 => g.mul(&a, &b),
                _ => g.div(&a, &b),
            }
        }));
    }

    let mut inp = Inputs::new(5);
    let a = inp.normal("a", &[2, 3, 4, 5]);
    let b = inp.normal("b", &[2, 1, 4, 5]);
    checks.push(Check::new("mul_broadcast", inp.store, move |g| {
        g.mul_broadcast(&g.param(a), &g.param(b))
    }));

    let mut inp = Inputs::new(6);
    let x = inp.normal("x", &[3, 4]);
    checks.push(Check::new("sum", inp.store.clone(), move |g| g.sum(&g.param(x))));
    checks.push(Check::new("mean", inp.store, move |g| g.mean(&g.param(x))));

    let conv_cases: [(&'static str, [usize; 4], [usize; 4], Conv2dSpec); 4] = [
        ("conv2d 3x3 same", [2, 3, 6, 5], [4, 3, 3, 3], Conv2dSpec::new(1, 1)),
        ("conv2d 4x4 stride 4", [1, 3, 8, 8], [5, 3, 4, 4], Conv2dSpec::new(4, 0)),
        ("conv2d 2x2 stride 2", [2, 2, 4, 6], [3, 2, 2, 2], Conv2dSpec::new(2, 0)),
        ("conv2d depthwise", [1, 4, 5, 5], [4, 1, 3, 3], Conv2dSpec::depthwise(4, 1)),
    ];
    for (name, xs, ws, spec) in conv_cases {
        let mut inp = Inputs::new(7);
        let x = inp.normal("x", &xs);
        let w = inp.normal("w", &ws);
        let b = inp.normal("b", &[ws[0]]);
        checks.push(Check::new(name, inp.store, move |g| {
            g.conv2d(&g.param(x), &g.param(w), Some(&g.param(b)), spec)
        }));
    }

    let mut inp = Inputs::new(8);
    let x = inp.normal("x", &[2, 3, 4]);
    let w = inp.normal("w", &[5, 3]);
    let b = inp.normal("b", &[5]);
    checks.push(Check::new("linear axis 1", inp.store, move |g| {
        g.linear_axis(&g.param(x), &g.param(w), Some(&g.param(b)), 1)
    }));
    let mut inp = Inputs::new(9);
    let x = inp.normal("x", &[2, 3, 4]);
    let w = inp.normal("w", &[2, 4]);
    checks.push(Check::new("linear last axis", inp.store, move |g| {
        g.linear(&g.param(x), &g.param(w), None)
    }));

    let mut inp = Inputs::new(10);
    let x = inp.normal("x", &[2, 5, 3, 3]);
    let gamma = inp.uniform("gamma", &[5], 0.5, 1.5);
    let beta = inp.normal("beta", &[5]);
    checks.push(Check::new("layer_norm channels", inp.store, move |g| {
        g.layer_norm_axis(&g.param(x), &g.param(gamma), &g.param(beta), 1, 1e-5)
    }));
    let mut inp = Inputs::new(11);
    let x = inp.normal("x", &[3, 6]);
    let gamma = inp.uniform("gamma", &[6], 0.5, 1.5);
    let beta = inp.normal("beta", &[6]);
    checks.push(Check::new("layer_norm last axis", inp.store, move |g| {
        g.layer_norm(&g.param(x), &g.param(gamma), &g.param(beta), 1e-5)
    }));

    for (name, oh, ow) in [("upsample_bilinear 2x", 6, 8), ("upsample_bilinear fractional", 5, 7)] {
        let mut inp = Inputs::new(12);
        let x = inp.normal("x", &[1, 2, 3, 4]);
        checks.push(Check::new(name, inp.store, move |g| g.upsample_bilinear(&g.param(x), oh, ow)));
    }

    let mut inp = Inputs::new(13);
    let x = inp.normal("x", &[2, 6]);
    let index: Rc<[usize]> = Rc::from([4usize, 0, 5, 1, 3, 2]);
    checks.push(Check::new("gather_blocks", inp.store, move |g| {
        let y = g.gather_blocks(&g.param(x), index.clone(), &[3, 4])?;
        g.reshape(&y, &[12])
    }));

    let mut inp = Inputs::new(14);
    let x = inp.normal("x", &[1, 2, 3, 4]);
    checks.push(Check::new("route expand/merge", inp.store, move |g| {
        let routes = expand_routes(g, &g.param(x))?;
        let scaled = [
            g.affine(&routes[0], 1.0, 0.0)?,
            g.affine(&routes[1], -2.0, 0.0)?,
            g.affine(&routes[2], 0.5, 0.0)?,
            g.mul(&routes[3], &routes[3])?,
        ];
        merge_routes(g, &scaled, 3, 4)
    }));

    for (name, mode) in [
        ("selective_scan sequential", ScanMode::Sequential),
        ("selective_scan parallel", ScanMode::Parallel),
    ] {
        let (n, d, s, l) = (2, 3, 4, 7);
        let mut inp = Inputs::new(15);
        let u = inp.normal("u", &[n, d, l]);
        let delta = inp.uniform("delta", &[n, d, l], 0.1, 1.0);
        let a = inp.uniform("A", &[d, s], -2.0, -0.2);
        let b = inp.normal("B", &[n, s, l]);
        let c = inp.normal("C", &[n, s, l]);
        let dd = inp.normal("D", &[d]);
        checks.push(Check::new(name, inp.store, move |g| {
            g.selective_scan(
                &g.param(u),
                &g.param(delta),
                &g.param(a),
                &g.param(b),
                &g.param(c),
                &g.param(dd),
                mode,
            )
        }));
    }

    let mut inp = Inputs::new(16);
    let p = inp.uniform("pred", &[1, 1, 4, 4], 0.05, 0.95);
    let rng = &mut inp.rng;
    let target = Tensor::from_fn(&[1, 1, 4, 4], |_| rng.random_bool(0.5) as u8 as f64);
    let t2 = target.clone();
    checks.push(Check::new("bce_loss", inp.store.clone(), move |g| bce_loss(g, &g.param(p), &target)));
    checks.push(Check::new("dice_loss", inp.store, move |g| dice_loss(g, &g.param(p), &t2)));

    checks
}

/// Builds parameters with the module constructors at small width.
fn module_store(seed: u64, build: impl FnOnce(&mut ParamBuilder<'_, f64>)) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build(&mut ParamBuilder::new(&mut store, &mut rng));
    store
}

/// Perturbs freshly initialized parameters so that zero-initialized biases
/// and unit norms do not hide errors.
fn jitter(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in store.values_mut() {
        for x in v.data_mut() {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
}

fn module_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    let ssm = SsmConfig::default();

    for (name, mode) in [("ss2d sequential", ScanMode::Sequential), ("ss2d parallel", ScanMode::Parallel)] {
        let cfg = SsmConfig { scan_mode: mode, ..ssm };
        let mut module = None;
        let mut store = module_store(20, |b| module = Some(Ss2d::new(&mut b.scope("ss2d"), 4, cfg)));
        jitter(&mut store, 21, 0.05);
        let x = store.add("x", Tensor::from_fn(&[1, 4, 3, 4], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0));
        let module = module.expect("built");
        checks.push(Check::new(name, store, move |g| module.forward(g, &g.param(x))));
    }

    let mut block = None;
    let mut store = module_store(22, |b| block = Some(VssBlock::new(&mut b.scope("vss"), 4, ssm, 4)));
    jitter(&mut store, 23, 0.05);
    let x = store.add("x", Tensor::from_fn(&[1, 4, 2, 3], |i| ((i * 29) % 13) as f64 / 6.0 - 1.0));
    let block = block.expect("built");
    checks.push(Check::new("vss block", store, move |g| block.forward(g, &g.param(x))));

    for (name, mode) in [("rma stage", AttentionMode::Rma), ("ra stage", AttentionMode::Ra)] {
        let mut stage = None;
        let mut store = module_store(24, |b| stage = Some(RmaStage::new(&mut b.scope("stage"), mode, ssm, 4)));
        jitter(&mut store, 25, 0.05);
        let coarse = store.add("coarse", Tensor::from_fn(&[1, 1, 2, 2], |i| i as f64 * 0.7 - 1.0));
        let feats = store.add(
            "features",
            Tensor::from_fn(&[1, crate::decoder::DECODER_CHANNELS, 4, 4], |i| {
                ((i * 31) % 17) as f64 / 8.0 - 1.0
            }),
        );
        let stage = stage.expect("built");
        let opts = CheckOptions {
            samples_per_tensor: Some(24),
            ..CheckOptions::default()
        };
        checks.push(Check {
            opts,
            ..Check::new(name, store, move |g| {
                let out = stage.forward(g, &g.param(coarse), &g.param(feats))?;
                g.add(&out.logits, &out.probs)
            })
        });
    }
    checks
}

/// Desk-preset Tiny model on a 64×64 input, combined deep-supervision loss.
fn end_to_end_check(samples_per_tensor: usize) -> Check {
    let model: Model<f64> = Model::new(ModelConfig::desk(Variant::Tiny), 30).expect("desk config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let image = Tensor::from_fn(&[1, 3, 64, 64], |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn(&[1, 1, 64, 64], |i| {
        let (y, x) = ((i / 64) as f64 - 30.0, (i % 64) as f64 - 34.0);
        (y * y + x * x < 300.0) as u8 as f64
    });
    let params = model.params.clone();
    let opts = CheckOptions {
        samples_per_tensor: Some(samples_per_tensor),
        ..CheckOptions::default()
    };
    Check {
        opts,
        ..Check::new("end-to-end desk model 64x64", params, move |g| {
            let preds = model.forward(g, &g.constant(image.clone()))?;
            combined_loss(g, &preds, &target, model.config.supervision)
        })
    }
}

/// The full suite: every differentiable op, the composite modules and the
/// end-to-end model.
pub fn suite() -> Vec<Check> {
    let mut checks = op_checks();
    checks.extend(module_checks());
    checks.push(end_to_end_check(2));
    checks
}

/// Runs [`suite`], reporting each result as it completes.
pub fn run_suite(mut on_report: impl FnMut(&CheckReport)) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for check in suite() {
        let r = check.run()?;
        on_report(&r);
        reports.push(r);
    }
    Ok(reports)
}
