use crate::error::{Error, Result};
use crate::numeric::{Params, Rng};

/// Probes where both gradients fall below this magnitude are skipped: the
/// relative error is meaningless there.
pub const SKIP_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Parameter name and flat index of the worst probe.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients against central differences on
/// `probe_count` randomly chosen scalars.
///
/// `loss_fn(model, true)` must compute the loss and accumulate gradients into
/// the model's parameters; `loss_fn(model, false)` only needs the loss.
pub fn grad_check<M, F>(
    model: &mut M,
    mut loss_fn: F,
    probe_count: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    M: Params + ?Sized,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("grad_check step {h} outside [1e-6, 1e-4]")));
    }
    model.zero_grads();
    loss_fn(model, true)?;

    let (names, sizes, analytic): (Vec<String>, Vec<usize>, Vec<Vec<f64>>) = {
        let params = model.named_params();
        let names = params.iter().map(|(n, _)| n.clone()).collect();
        let sizes = params.iter().map(|(_, p)| p.len()).collect();
        let grads = params.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
        (names, sizes, grads)
    };
    let total: usize = sizes.iter().sum();
    let probes: Vec<usize> = if probe_count >= total {
        (0..total).collect()
    } else {
        rng.sample_distinct(total, probe_count)
    };

    let mut report = GradCheckReport::default();
    for flat in probes {
        let (pi, ei) = locate(&sizes, flat);
        let original = nudge(model, pi, ei, None);
        nudge(model, pi, ei, Some(original + h));
        let plus = loss_fn(model, false)?;
        nudge(model, pi, ei, Some(original - h));
        let minus = loss_fn(model, false)?;
        nudge(model, pi, ei, Some(original));

        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic[pi][ei];
        if exact.abs() < SKIP_THRESHOLD && numeric.abs() < SKIP_THRESHOLD {
            report.skipped += 1;
            continue;
        }
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs());
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((names[pi].clone(), ei));
        }
    }
    model.zero_grads();
    Ok(report)
}

/// Adds normal(0, `std`) noise to every parameter. Freshly initialised
/// attention layers have gradients near the finite-difference noise floor;
/// spreading the weights first makes a gradient check informative.
pub fn jitter_params<M: Params + ?Sized>(model: &mut M, std: f64, rng: &mut Rng) {
    for (_, p) in model.named_params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.normal(0.0, std));
    }
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("probe index beyond parameter count")
}

/// Returns the current value, optionally overwriting it.
fn nudge<M: Params + ?Sized>(model: &mut M, pi: usize, ei: usize, value: Option<f64>) -> f64 {
    let mut params = model.named_params_mut();
    let slot = &mut params[pi].1.value.data_mut()[ei];
    let old = *slot;
    if let Some(v) = value {
        *slot = v;
    }
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Matrix, Parameter};

    #[test]
    fn quadratic_is_exact() {
        let mut w = Parameter::new(Matrix::from_rows(&[&[3.0]]));
        let mut rng = Rng::new(0);
        let report = grad_check(
            &mut w,
            |p: &mut Parameter, grad| {
                let x = p.value.get(0, 0);
                if grad {
                    p.grad.set(0, 0, 2.0 * x);
                }
                Ok(x * x)
            },
            1,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    }

    #[test]
    fn flat_direction_is_skipped() {
        let mut w = Parameter::new(Matrix::from_rows(&[&[3.0, 1.0]]));
        let mut rng = Rng::new(0);
        let report = grad_check(
            &mut w,
            |p: &mut Parameter, grad| {
                let x = p.value.get(0, 0);
                if grad {
                    p.grad.set(0, 0, 1.0);
                }
                Ok(x)
            },
            2,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut w = Parameter::new(Matrix::from_rows(&[&[2.0]]));
        let report = grad_check(
            &mut w,
            |p: &mut Parameter, grad| {
                let x = p.value.get(0, 0);
                if grad {
                    p.grad.set(0, 0, 3.0 * x);
                }
                Ok(x * x)
            },
            1,
            1e-5,
            &mut Rng::new(1),
        )
        .unwrap();
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn step_outside_range_rejected() {
        let mut w = Parameter::new(Matrix::zeros(1, 1));
        assert!(grad_check(&mut w, |_, _| Ok(0.0), 1, 1e-2, &mut Rng::new(0)).is_err());
    }
}
