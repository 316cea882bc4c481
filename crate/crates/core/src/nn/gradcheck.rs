//! Central finite-difference verification of analytic gradients.

use rand::seq::index;

use super::named_rng;
use super::params::ParamSet;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Coordinates checked per block (all of them when the block is smaller).
pub const COORDS_PER_BLOCK: usize = 64;

/// Relative error denominator is `max(|analytic|, |numeric|, FLOOR)`.
pub const GRAD_MAGNITUDE_FLOOR: f64 = 1e-4;

/// Result of one loss evaluation: value, analytic gradient, and a signature of
/// the piecewise-linear region (e.g. the ReLU activation pattern). Coordinates
/// whose ±h probes land in a different region than the base point straddle a
/// kink and are excluded from the error statistics.
#[derive(Debug, Clone)]
pub struct LossEval<G> {
    pub loss: f64,
    pub grads: G,
    pub signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub kinks_excluded: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn coordinates_checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn kinks_excluded(&self) -> usize {
        self.blocks.iter().map(|b| b.kinks_excluded).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences on a fixed-seed subsample of coordinates in every block.
pub fn finite_diff_check<P, G, F>(loss_fn: F, params: &P, tolerance: f64) -> GradCheckReport
where
    P: ParamSet + Clone,
    G: ParamSet,
    F: Fn(&P) -> LossEval<G>,
{
    let base = loss_fn(params);
    let analytic = base.grads.to_blocks();
    let layout = params.block_layout();
    assert_eq!(
        analytic.len(),
        layout.len(),
        "gradient and parameter layouts differ"
    );

    let mut rng = named_rng(0x6772_6164, "finite-diff-coordinates");
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(layout.len());
    for (b, (name, len)) in layout.iter().enumerate() {
        assert_eq!(
            analytic[b].len(),
            *len,
            "gradient block {name} has wrong length"
        );
        let coords: Vec<usize> = if *len <= COORDS_PER_BLOCK {
            (0..*len).collect()
        } else {
            let mut c = index::sample(&mut rng, *len, COORDS_PER_BLOCK).into_vec();
            c.sort_unstable();
            c
        };

        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            kinks_excluded: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for k in coords {
            let original = read_coord(&probe, b, k);
            write_coord(&mut probe, b, k, original + FD_STEP);
            let plus = loss_fn(&probe);
            write_coord(&mut probe, b, k, original - FD_STEP);
            let minus = loss_fn(&probe);
            write_coord(&mut probe, b, k, original);

            if plus.signature != base.signature || minus.signature != base.signature {
                report.kinks_excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * FD_STEP);
            let err = relative_error(analytic[b][k], numeric);
            report.checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
            }
        }
        report.passed = report.max_rel_error < tolerance;
        blocks.push(report);
    }
    GradCheckReport { tolerance, blocks }
}

fn read_coord<P: ParamSet>(params: &P, block: usize, k: usize) -> f64 {
    let mut i = 0;
    let mut out = f64::NAN;
    params.visit_blocks(&mut |_, values| {
        if i == block {
            out = values[k];
        }
        i += 1;
    });
    out
}

fn write_coord<P: ParamSet>(params: &mut P, block: usize, k: usize, v: f64) {
    let mut i = 0;
    params.visit_blocks_mut(&mut |_, values| {
        if i == block {
            values[k] = v;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let report = finite_diff_check(
            |p: &Vec<f64>| LossEval {
                loss: 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
                grads: p.clone(),
                signature: 0,
            },
            &p,
            1e-8,
        );
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.coordinates_checked(), COORDS_PER_BLOCK);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let p = vec![1.0, 2.0, 3.0];
        let report = finite_diff_check(
            |p: &Vec<f64>| LossEval {
                loss: 4.2,
                grads: vec![0.0; p.len()],
                signature: 0,
            },
            &p,
            1e-12,
        );
        assert_eq!(report.max_rel_error(), 0.0);
        assert!(report.passed());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = vec![0.5, -1.5];
        let report = finite_diff_check(
            |p: &Vec<f64>| LossEval {
                loss: p.iter().map(|x| x.powi(3)).sum(),
                grads: p.iter().map(|x| 2.0 * x * x).collect::<Vec<_>>(),
                signature: 0,
            },
            &p,
            1e-4,
        );
        assert!(!report.passed());
    }

    #[test]
    fn kink_coordinates_are_excluded() {
        // |x| at x = 0.5e-4 straddles the kink within one step
        let p = vec![0.5e-4, 1.0];
        let report = finite_diff_check(
            |p: &Vec<f64>| LossEval {
                loss: p.iter().map(|x| x.abs()).sum(),
                grads: p.iter().map(|x| x.signum()).collect::<Vec<_>>(),
                signature: p.iter().fold(0u64, |acc, x| (acc << 1) | (*x > 0.0) as u64),
            },
            &p,
            1e-6,
        );
        assert_eq!(report.kinks_excluded(), 1);
        assert!(report.passed());
    }
}
