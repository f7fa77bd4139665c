//! Analytical benchmark functions with known structure.
//!
//! Samples are drawn with `ChaCha20Rng::seed_from_u64(seed)`, which gives the
//! same stream on every platform.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::domain::{InputSpace, SampleSet};
use crate::error::{Error, Result};

type Evaluator = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct Discontinuity {
    pub dim: usize,
    pub location: f64,
}

#[derive(Clone)]
pub struct BenchmarkModel {
    name: String,
    dim: usize,
    parameters: Vec<(String, f64)>,
    evaluator: Arc<Evaluator>,
    sobol_first_order: Option<Vec<f64>>,
    discontinuities: Vec<Discontinuity>,
}

impl std::fmt::Debug for BenchmarkModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("parameters", &self.parameters)
            .finish_non_exhaustive()
    }
}

impl BenchmarkModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parameters(&self) -> &[(String, f64)] {
        &self.parameters
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// Exact first-order Sobol' indices, when known in closed form.
    pub fn sobol_first_order(&self) -> Option<&[f64]> {
        self.sobol_first_order.as_deref()
    }

    pub fn discontinuities(&self) -> &[Discontinuity] {
        &self.discontinuities
    }

    /// All benchmarks live on the unit cube with uniform inputs.
    pub fn input_space(&self) -> InputSpace {
        InputSpace::unit_cube(self.dim).expect("dimension is positive")
    }
}

/// `1{x > 1/2}` on `[0, 1]`.
pub fn step_1d() -> BenchmarkModel {
    BenchmarkModel {
        name: "step".into(),
        dim: 1,
        parameters: Vec::new(),
        evaluator: Arc::new(|x| if x[0] > 0.5 { 1.0 } else { 0.0 }),
        sobol_first_order: Some(vec![1.0]),
        discontinuities: vec![Discontinuity {
            dim: 0,
            location: 0.5,
        }],
    }
}

/// Three constant pieces separated by `x1 = 1/2` and the diagonal
/// `x2 = 2 x1 - 1`.
pub fn diagonal_2d() -> BenchmarkModel {
    BenchmarkModel {
        name: "diagonal2d".into(),
        dim: 2,
        parameters: Vec::new(),
        evaluator: Arc::new(|x| {
            if x[0] < 0.5 {
                0.0
            } else if x[1] > 2.0 * x[0] - 1.0 {
                1.0
            } else {
                2.0
            }
        }),
        sobol_first_order: None,
        discontinuities: vec![Discontinuity {
            dim: 0,
            location: 0.5,
        }],
    }
}

/// `sum_i a_i [c + sin(k pi (x_i - 1/3))] 1{x_i > 1/3}`.
pub fn oscillatory_multid(d: usize, k: f64, c: f64, a: Vec<f64>) -> Result<BenchmarkModel> {
    if d == 0 || a.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.len(),
        });
    }
    let norm: f64 = a.iter().map(|v| v * v).sum();
    let sobol = (norm > 0.0).then(|| a.iter().map(|v| v * v / norm).collect());
    let mut parameters = vec![("k".to_string(), k), ("c".to_string(), c)];
    parameters.extend(
        a.iter()
            .enumerate()
            .map(|(i, v)| (format!("a{}", i + 1), *v)),
    );
    let coeffs = a.clone();
    Ok(BenchmarkModel {
        name: "multid".into(),
        dim: d,
        parameters,
        evaluator: Arc::new(move |x| {
            coeffs
                .iter()
                .zip(x)
                .map(|(ai, &xi)| {
                    if xi > 1.0 / 3.0 {
                        ai * (c + (k * PI * (xi - 1.0 / 3.0)).sin())
                    } else {
                        0.0
                    }
                })
                .sum()
        }),
        sobol_first_order: sobol,
        discontinuities: (0..d)
            .map(|dim| Discontinuity {
                dim,
                location: 1.0 / 3.0,
            })
            .collect(),
    })
}

/// The oscillatory model with `a_i = i`.
pub fn oscillatory_default(d: usize, k: f64, c: f64) -> BenchmarkModel {
    oscillatory_multid(d, k, c, (1..=d).map(|i| i as f64).collect()).expect("lengths agree")
}

/// `1{x1 > 1/2} (x1^2 + x2^2)`.
pub fn gated_quadratic_2d() -> BenchmarkModel {
    BenchmarkModel {
        name: "gated-quadratic".into(),
        dim: 2,
        parameters: Vec::new(),
        evaluator: Arc::new(|x| {
            if x[0] > 0.5 {
                x[0] * x[0] + x[1] * x[1]
            } else {
                0.0
            }
        }),
        sobol_first_order: None,
        discontinuities: vec![Discontinuity {
            dim: 0,
            location: 0.5,
        }],
    }
}

/// Looks a benchmark up by its command-line name.
pub fn by_name(name: &str, d: usize, k: f64, c: f64) -> Result<BenchmarkModel> {
    match name {
        "step" => Ok(step_1d()),
        "diagonal2d" => Ok(diagonal_2d()),
        "multid" => Ok(oscillatory_default(d, k, c)),
        "gated-quadratic" => Ok(gated_quadratic_2d()),
        other => Err(Error::InvalidInput(format!("unknown benchmark {other:?}"))),
    }
}

/// `n` independent uniform points with evaluated outputs.
pub fn sample(model: &BenchmarkModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inputs: Vec<f64> = (0..n * model.dim).map(|_| rng.random::<f64>()).collect();
    let f = model.evaluator.clone();
    SampleSet::from_function(model.dim, inputs, move |x| f(x))
}
