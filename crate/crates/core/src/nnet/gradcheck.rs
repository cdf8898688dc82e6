use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / (|numeric| + 1e-12)`.
    pub max_rel_error: f64,
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `loss` with the given
/// step, perturbing one parameter entry at a time.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[Matrix],
    analytic: &[Matrix],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, a)| p.shape() != a.shape())
    {
        return Err(Error::ShapeMismatch("analytic gradients do not match parameters".into()));
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensor: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for t in 0..work.len() {
        for i in 0..work[t].data().len() {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + step;
            let up = loss(&work)?;
            work[t].data_mut()[i] = original - step;
            let down = loss(&work)?;
            work[t].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[t].data()[i];
            let err = (a - numeric).abs() / (numeric.abs() + 1e-12);
            if err > report.max_rel_error || err.is_nan() {
                report = GradCheckReport {
                    max_rel_error: err,
                    tensor: t,
                    index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let p = vec![Matrix::scalar(1.0)];
        let g = vec![Matrix::scalar(2.0)];
        let r = finite_diff_check(|w| Ok(w[0].data()[0].powi(2)), &p, &g, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let p = vec![Matrix::from_rows(&[[1.0, 2.0]]).unwrap()];
        let g = vec![Matrix::from_rows(&[[2.0, 5.0]]).unwrap()];
        let r = finite_diff_check(|w| Ok(w[0].data().iter().map(|v| v * v).sum()), &p, &g, 1e-5)
            .unwrap();
        assert_eq!(r.index, 1);
        assert!((r.max_rel_error - 0.25).abs() < 1e-6);
    }
}
