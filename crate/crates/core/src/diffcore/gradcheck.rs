//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding compare absolutely.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (seeded sample).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            abs_floor: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// (parameter index, flat element index) of the largest relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences taken by re-evaluating `f` on perturbed copies of `params`.
pub fn finite_difference_check<F>(
    f: F,
    params: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, DiffError>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var, DiffError>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        tape.grads(&vars)?
    };

    let eval = |ps: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport::default();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < p.len() => {
                let mut c = sample(&mut rng, p.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for j in coords {
            let original = p.data()[j];
            work[pi].data_mut()[j] = original + opts.step;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = original - opts.step;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[pi].data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.abs_floor);
            report.coords_checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}
