//! Central-difference gradient checking.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Compare analytic gradients against central finite differences.
///
/// `f` must build a scalar loss on the supplied tape from the given
/// parameters, deterministically. Returns the maximum over all parameter
/// entries of `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(CoreError::Contract(format!(
            "grad_check needs eps > 0, got {eps}"
        )));
    }
    for p in params {
        if !p.requires_grad() {
            return Err(CoreError::Contract(format!(
                "grad_check parameter of shape {:?} does not carry a gradient",
                p.shape()
            )));
        }
    }

    let eval = |check_finite: bool| -> Result<f64> {
        let tape = Tape::new();
        let loss = f(&tape)?;
        let v = loss.item()?;
        if check_finite && !v.is_finite() {
            return Err(CoreError::Domain {
                op: "grad_check",
                detail: format!("objective returned non-finite value {v}"),
            });
        }
        Ok(v)
    };

    // Analytic pass.
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape)?;
    if !loss.item()?.is_finite() {
        return Err(CoreError::Domain {
            op: "grad_check",
            detail: "objective returned non-finite value".to_string(),
        });
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_vec().unwrap()).collect();

    // Numeric pass, one entry at a time.
    let mut max_rel: f64 = 0.0;
    for (p, grads) in params.iter().zip(&analytic) {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            {
                let mut d = p.data_mut();
                d[i] = orig + eps;
            }
            let plus = eval(true)?;
            {
                let mut d = p.data_mut();
                d[i] = orig - eps;
            }
            let minus = eval(true)?;
            {
                let mut d = p.data_mut();
                d[i] = orig;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[i];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_checks_tightly() {
        let p = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let params = [p.clone()];
        let err = grad_check(
            |tape| {
                let sq = tape.mul(&p, &p)?;
                Ok(tape.sum(&sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }

    #[test]
    fn unused_parameter_contributes_only_truncation_noise() {
        let used = Tensor::param(vec![2], vec![0.5, -0.25]).unwrap();
        let unused = Tensor::param(vec![2], vec![3.0, 4.0]).unwrap();
        let params = [used.clone(), unused.clone()];
        let u = used.clone();
        let err = grad_check(
            |tape| {
                let sq = tape.mul(&u, &u)?;
                Ok(tape.sum(&sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
        assert_eq!(unused.grad_vec().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let a = Tensor::param(vec![2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let b = Tensor::param(vec![2, 2], vec![0.5, 0.4, -0.6, 0.9]).unwrap();
        let params = [a.clone(), b.clone()];
        let (ac, bc) = (a.clone(), b.clone());
        let err = grad_check(
            |tape| {
                let prod = tape.matmul(&ac, &bc)?;
                let squashed = tape.tanh(&prod);
                Ok(tape.sum(&squashed))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn rejects_bad_eps_and_gradless_params() {
        let p = Tensor::param(vec![1], vec![1.0]).unwrap();
        let c = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        assert!(grad_check(|t| Ok(t.sum(&p)), core::slice::from_ref(&p), 0.0).is_err());
        assert!(grad_check(|t| Ok(t.sum(&c)), core::slice::from_ref(&c), 1e-5).is_err());
    }
}
