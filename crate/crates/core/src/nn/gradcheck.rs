//! Central finite-difference check of every parameter gradient.

use super::{softmax_cross_entropy, MiniCnn, Trace};
use crate::error::Result;

/// Relative error `|a − n| / max(|a|, |n|, floor)`. The floor keeps
/// near-zero gradients from being judged on f32 rounding alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// One parameter entry whose gradients disagree.
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares the backprop gradient of the cross-entropy of `forward(model)`
/// with central differences of step `h`, entry by entry.
///
/// `forward` must be deterministic. The difference is taken in f64 and
/// divided by the step actually realised in f32.
pub fn check_gradients(
    model: &MiniCnn,
    labels: &[usize],
    h: f32,
    tol: f64,
    forward: impl Fn(&MiniCnn) -> Result<Trace>,
) -> Result<GradCheckReport> {
    let loss = |m: &MiniCnn| -> Result<f64> {
        Ok(softmax_cross_entropy(&forward(m)?.logits, labels)?.0 as f64)
    };
    let trace = forward(model)?;
    let (_, grad_logits) = softmax_cross_entropy(&trace.logits, labels)?;
    let grads = model.backward(&trace, &grad_logits)?;
    let analytic: Vec<(String, Vec<f32>)> = grads
        .params()
        .into_iter()
        .map(|p| (p.name, p.values.to_vec()))
        .collect();

    let mut report = GradCheckReport::default();
    for (pi, (name, g)) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.params_mut()[pi].values[k] += h;
            minus.params_mut()[pi].values[k] -= h;
            let step = (plus.params()[pi].values[k] - minus.params()[pi].values[k]) as f64;
            let numeric = (loss(&plus)? - loss(&minus)?) / step;
            let rel = relative_error(a as f64, numeric, 1e-2);
            report.worst = report.worst.max(rel);
            report.checked += 1;
            if !(rel < tol) {
                report.mismatches.push(Mismatch {
                    param: name.clone(),
                    index: k,
                    analytic: a as f64,
                    numeric,
                    rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::Architecture;
    use crate::tensor::{Shape, Tensor};

    fn tiny() -> (MiniCnn, Tensor) {
        let arch = Architecture {
            in_channels: 1,
            input_size: 8,
            widths: [1, 1, 2],
            num_classes: 2,
        };
        let x = Tensor::from_fn(Shape::new(2, 1, 8, 8), |n, _, y, x| {
            ((n + y * 3 + x) % 7) as f32 / 7.0 - 0.4
        });
        (MiniCnn::new(arch, 5).unwrap(), x)
    }

    #[test]
    fn correct_backprop_passes() {
        let (m, x) = tiny();
        let r = check_gradients(&m, &[0, 1], 1e-3, 1e-2, |m| m.forward_train(&x)).unwrap();
        assert_eq!(r.checked, m.num_params());
        assert!(r.passed(), "{:?}", r.mismatches.first());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // Doubling the input after the analytic trace is taken changes the
        // loss the differences see but not the recorded backprop.
        let (m, x) = tiny();
        let first = std::cell::Cell::new(true);
        let doubled = x.scale(2.0);
        let r = check_gradients(&m, &[0, 1], 1e-3, 1e-2, |m| {
            if first.replace(false) {
                m.forward_train(&x)
            } else {
                m.forward_train(&doubled)
            }
        })
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn forward_errors_propagate() {
        let (m, _) = tiny();
        let r = check_gradients(&m, &[0], 1e-3, 1e-2, |_| Err(Error::invalid("boom")));
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-5, 2e-5, 1e-2), 1e-3);
        assert_eq!(relative_error(2.0, 1.0, 1e-2), 0.5);
    }
}
