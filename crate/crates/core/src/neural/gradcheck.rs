use super::{Network, NeuralError, Tensor};

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_param: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Denominator floor for relative error, so parameters whose true gradient is
/// zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Checks the gradient of the scalar `weights . forward(input, aux)` with
/// respect to every parameter, using step `h`.
pub fn check_gradients(
    net: &Network,
    input: &Tensor,
    aux: &[f64],
    weights: &[f64],
    h: f64,
) -> Result<GradCheckReport, NeuralError> {
    let (out, cache) = net.forward(input, aux)?;
    if weights.len() != out.len() {
        return Err(NeuralError::Shape(format!(
            "loss weights have {} values, output has {}",
            weights.len(),
            out.len()
        )));
    }
    let mut analytic = vec![0.0; net.param_count()];
    net.backward(&cache, weights, &mut analytic)?;

    let loss = |n: &Network| -> Result<f64, NeuralError> {
        Ok(n.predict(input, aux)?
            .iter()
            .zip(weights)
            .map(|(o, w)| o * w)
            .sum())
    };
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_param: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.params()[i];
        probe.params_mut()[i] = original + h;
        let plus = loss(&probe)?;
        probe.params_mut()[i] = original - h;
        let minus = loss(&probe)?;
        probe.params_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_param = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
