//! Central finite-difference verification of the backward rules.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::node::{backward, Node};
use crate::diffcore::params::ModelParameters;
use crate::error::{Error, Result};

/// Arrays larger than this have a deterministic random subset of
/// coordinates probed instead of every entry.
const MAX_COORDS_PER_PARAM: usize = 64;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradcheck {}: max rel error {:.3e} (tol {:.1e}) at {}[{}], {} coords",
            if self.passed() { "ok" } else { "FAILED" },
            self.max_rel_error,
            self.tolerance,
            self.worst_param,
            self.worst_coord,
            self.coords_checked
        )
    }
}

/// Compare analytic gradients of a scalar-valued `f` against central finite
/// differences, coordinate by coordinate over every trainable parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1)`, so it degrades gracefully
/// to absolute error for small gradients. Passes iff the max is within
/// `tolerance`; `step` must be positive.
pub fn grad_check<F>(
    f: F,
    params: &ModelParameters,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParameters) -> Result<Node>,
{
    if step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    params.zero_grads();
    let loss = f(params)?;
    if !loss.value().is_finite() {
        return Err(Error::Numerical("loss is not finite".into()));
    }
    backward(&loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
        tolerance,
    };
    // Coordinate subsampling must not depend on parameter values.
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_61c1);

    for (name, node, trainable) in params.iter() {
        if !trainable {
            continue;
        }
        let analytic = node.grad();
        let len = analytic.len();
        let coords: Vec<usize> = if len <= MAX_COORDS_PER_PARAM {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            all.shuffle(&mut rng);
            all.truncate(MAX_COORDS_PER_PARAM);
            all
        };

        for &i in &coords {
            let original = node.value().as_slice()[i];

            node.update_data(|t| t.as_mut_slice()[i] = original + step);
            let plus = f(params)?.item();
            node.update_data(|t| t.as_mut_slice()[i] = original - step);
            let minus = f(params)?.item();
            node.update_data(|t| t.as_mut_slice()[i] = original);

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss while probing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.to_string();
                report.worst_coord = i;
            }
        }
    }
    Ok(report)
}
