use super::{Gradients, ParamId, ParamStore};
use crate::error::Result;

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Checks the reverse-mode gradient of `loss` against central differences
/// with step `eps`, over every coordinate of every parameter.
///
/// `loss(params, grads)` must return the scalar loss and, when `grads` is
/// `Some`, accumulate its gradient there.
pub fn grad_check<F>(params: &mut ParamStore<f64>, eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, Option<&mut Gradients<f64>>) -> Result<f64>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    grad_check_subset(params, &ids, eps, usize::MAX, loss)
}

/// As [`grad_check`], restricted to `ids` and at most `max_per_param`
/// evenly spaced coordinates of each.
pub fn grad_check_subset<F>(
    params: &mut ParamStore<f64>,
    ids: &[ParamId],
    eps: f64,
    max_per_param: usize,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, Option<&mut Gradients<f64>>) -> Result<f64>,
{
    let mut analytic = Gradients::zeros_like(params);
    loss(params, Some(&mut analytic))?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for &id in ids {
        let len = params.get(id).len();
        let step = len.div_ceil(max_per_param.min(len).max(1)).max(1);
        for k in (0..len).step_by(step) {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + eps;
            let up = loss(params, None)?;
            params.get_mut(id).data_mut()[k] = orig - eps;
            let down = loss(params, None)?;
            params.get_mut(id).data_mut()[k] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.get(id).data()[k];
            let err = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn square_function() {
        let mut p = ParamStore::new();
        let x = p.insert("x", Tensor::scalar(3.0)).unwrap();
        let r = grad_check(&mut p, 1e-5, |s, g| {
            let mut tape = Tape::new(s);
            let v = tape.param(x);
            let sq = tape.mul(v, v)?;
            if let Some(g) = g {
                tape.backward(sq, g)?;
            }
            Ok(tape.value(sq).data()[0])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.coordinates_checked, 1);
    }

    #[test]
    fn max_pool_away_from_ties() {
        let mut p = ParamStore::new();
        let x = p
            .insert("x", Tensor::vector(vec![0.3, -1.2, 2.5, 0.9]))
            .unwrap();
        let r = grad_check(&mut p, 1e-5, |s, g| {
            let mut tape = Tape::new(s);
            let v = tape.param(x);
            let m = tape.max_pool_time(v)?;
            if let Some(g) = g {
                tape.backward(m, g)?;
            }
            Ok(tape.value(m).data()[0])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut p = ParamStore::new();
        let x = p.insert("x", Tensor::scalar(2.0)).unwrap();
        let r = grad_check(&mut p, 1e-5, |s, g| {
            let v = s.get(x).data()[0];
            if let Some(g) = g {
                // true derivative of v^3 is 3v^2
                g.get_mut(x).data_mut()[0] += 2.0 * v * v;
            }
            Ok(v * v * v)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
