//! Finite-difference gradient checking for anything that exposes its
//! parameters through [`NamedTensors`].
//!
//! Every hand-derived backward pass in this crate is validated against a
//! central difference `(L(p + h) - L(p - h)) / 2h` on sampled coordinates.
//! Sampling keeps full-model checks affordable while still touching every
//! tensor.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensors::NamedTensors;

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub path: String,
    pub index: usize,
    pub numeric: f64,
    pub analytic: f64,
    pub relative_error: f64,
}

/// Outcome of a sampled gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Worst coordinate seen, if any was checked.
    pub worst: Option<CoordinateCheck>,
    /// Coordinates whose relative error exceeded the tolerance.
    pub failures: Vec<CoordinateCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

// The denominator floor keeps finite-difference noise (around 1e-10 for
// losses of order one at step 1e-5) from reading as failure on gradients
// that are themselves nearly zero.
fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

/// Compare analytic gradients against central differences of `loss`.
///
/// `params` is restored exactly after every probe. `analytic` must share the
/// tensor layout of `params` (same paths, same shapes) and hold the
/// gradients under test. `samples_per_tensor == 0` checks every coordinate;
/// otherwise that many coordinates are drawn per tensor with a generator
/// seeded by `seed`, so reports are reproducible.
pub fn check_gradients<P, F>(
    params: &mut P,
    analytic: &P,
    mut loss: F,
    step: f64,
    tolerance: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: NamedTensors,
    F: FnMut(&P) -> Result<f64>,
{
    let n_tensors = params.tensors().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        worst: None,
        failures: Vec::new(),
        tolerance,
    };

    for ti in 0..n_tensors {
        let (path, len) = {
            let tensors = params.tensors();
            (tensors[ti].0.clone(), tensors[ti].1.len())
        };
        if len == 0 {
            continue;
        }
        let indices: Vec<usize> = if samples_per_tensor == 0 {
            (0..len).collect()
        } else {
            (0..samples_per_tensor.min(len))
                .map(|_| rng.gen_range(0..len))
                .collect()
        };

        for idx in indices {
            let original = {
                let mut tensors = params.tensors_mut();
                let slice = tensors[ti].1.as_slice_mut();
                let v = slice[idx];
                slice[idx] = v + step;
                v
            };
            let plus = loss(params)?;
            {
                let mut tensors = params.tensors_mut();
                tensors[ti].1.as_slice_mut()[idx] = original - step;
            }
            let minus = loss(params)?;
            {
                let mut tensors = params.tensors_mut();
                tensors[ti].1.as_slice_mut()[idx] = original;
            }

            let numeric = (plus - minus) / (2.0 * step);
            let expected = analytic.tensors()[ti].1.as_slice()[idx];
            let check = CoordinateCheck {
                path: path.clone(),
                index: idx,
                numeric,
                analytic: expected,
                relative_error: relative_error(numeric, expected),
            };
            report.checked += 1;
            if check.relative_error > tolerance {
                report.failures.push(check.clone());
            }
            let worse = report
                .worst
                .as_ref()
                .map(|w| check.relative_error > w.relative_error)
                .unwrap_or(true);
            if worse {
                report.worst = Some(check);
            }
        }
    }
    Ok(report)
}
