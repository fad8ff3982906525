//! Finite-difference verification of the backpropagation engine.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{softmax_xent, ActivationPlan, Matrix, Mlp, Pass};
use crate::rng::{Domain, SeedStream};

pub const DEFAULT_DRAWS: usize = 24;
pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

const MAX_LAYERS: usize = 3;
const MAX_WIDTH: usize = 6;
const MAX_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub draws: usize,
    /// Negative control: perturb the analytic weight gradient of this layer.
    pub corrupt_layer: Option<usize>,
}

impl GradCheckOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, draws: DEFAULT_DRAWS, corrupt_layer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawResult {
    pub draw: usize,
    pub dims: Vec<usize>,
    pub batch: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub magnitude_floor: f64,
    pub corrupt_layer: Option<usize>,
    pub draws: Vec<DrawResult>,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn loss(model: &Mlp<f64>, x: &Matrix<f64>, y: &[usize]) -> Result<f64> {
    Ok(softmax_xent(&model.predict(x)?, y)?.0)
}

fn central<F>(mut eval: F, slot: &mut f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let base = *slot;
    let plus = eval(base + FD_STEP)?;
    let minus = eval(base - FD_STEP)?;
    *slot = base;
    Ok((plus - minus) / (2.0 * FD_STEP))
}

struct Worst {
    err: f64,
    at: String,
    checked: usize,
}

impl Worst {
    fn see(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.err || e.is_nan() {
            self.err = e;
            self.at = at();
        }
    }
}

fn check_draw(seed: u64, draw: usize, corrupt_layer: Option<usize>) -> Result<DrawResult> {
    let mut s = SeedStream::new(seed, Domain::GradCheck, draw as u64);
    let layers = 1 + s.index(MAX_LAYERS);
    let dims: Vec<usize> = (0..=layers).map(|_| 2 + s.index(MAX_WIDTH - 1)).collect();
    let batch = 1 + s.index(MAX_BATCH);
    let plan = if s.index(2) == 0 { ActivationPlan::HiddenRelu } else { ActivationPlan::AllRelu };
    let mut model = Mlp::<f64>::init(&dims, &plan, 0.0, s.next_u64())?;
    // Nonzero biases keep pre-activations off the ReLU kink.
    for layer in model.layers_mut() {
        for b in layer.bias.data_mut() {
            *b = s.symmetric(0.5);
        }
    }
    let x = Matrix::from_vec(batch, dims[0], (0..batch * dims[0]).map(|_| s.symmetric(1.0)).collect())?;
    let classes = dims[layers];
    let y: Vec<usize> = (0..batch).map(|_| s.index(classes)).collect();

    let (logits, trace) = model.forward(&x, Pass::Train)?;
    let (_, dlogits) = softmax_xent(&logits, &y)?;
    let mut back = model.backward(&trace, &dlogits)?;
    if let Some(l) = corrupt_layer.filter(|&l| l < back.params.layers.len()) {
        for g in back.params.layers[l].weights.data_mut() {
            *g = *g * 1.01 + 1e-3;
        }
    }

    let mut worst = Worst { err: 0.0, at: String::new(), checked: 0 };
    for l in 0..layers {
        for part in ["weights", "bias"] {
            let len = match part {
                "weights" => model.layers()[l].weights.data().len(),
                _ => model.layers()[l].bias.data().len(),
            };
            for i in 0..len {
                let analytic = match part {
                    "weights" => back.params.layers[l].weights.data()[i],
                    _ => back.params.layers[l].bias.data()[i],
                };
                let mut probe = model.clone();
                let mut value = param(&probe, l, part, i);
                let numeric = central(
                    |v| {
                        set_param(&mut probe, l, part, i, v);
                        loss(&probe, &x, &y)
                    },
                    &mut value,
                )?;
                worst.see(analytic, numeric, || format!("layer {l} {part}[{i}]"));
            }
        }
    }
    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let analytic = back.input_grad.data()[i];
        let mut value = x.data()[i];
        let numeric = central(
            |v| {
                xp.data_mut()[i] = v;
                loss(&model, &xp, &y)
            },
            &mut value,
        )?;
        xp.data_mut()[i] = x.data()[i];
        worst.see(analytic, numeric, || format!("input[{i}]"));
    }
    Ok(DrawResult { draw, dims, batch, checked: worst.checked, max_rel_err: worst.err, worst: worst.at })
}

fn param(model: &Mlp<f64>, l: usize, part: &str, i: usize) -> f64 {
    let layer = &model.layers()[l];
    if part == "weights" {
        layer.weights.data()[i]
    } else {
        layer.bias.data()[i]
    }
}

fn set_param(model: &mut Mlp<f64>, l: usize, part: &str, i: usize, v: f64) {
    let layer = &mut model.layers_mut()[l];
    if part == "weights" {
        layer.weights.data_mut()[i] = v;
    } else {
        layer.bias.data_mut()[i] = v;
    }
}

/// Compares every parameter gradient and the input gradient of random small
/// models against central finite differences of the cross-entropy loss.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let draws = (0..opts.draws).map(|d| check_draw(opts.seed, d, opts.corrupt_layer)).collect::<Result<Vec<_>>>()?;
    let max_rel_err = draws.iter().map(|d| d.max_rel_err).fold(0.0, f64::max);
    let passed = !draws.is_empty() && draws.iter().all(|d| d.max_rel_err < TOLERANCE);
    Ok(GradCheckReport {
        seed: opts.seed,
        step: FD_STEP,
        tolerance: TOLERANCE,
        magnitude_floor: MAGNITUDE_FLOOR,
        corrupt_layer: opts.corrupt_layer,
        draws,
        max_rel_err,
        passed,
    })
}
