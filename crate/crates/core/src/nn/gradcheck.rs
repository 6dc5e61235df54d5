use super::{DenseNet, Mat};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude floor for the relative error denominator.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index into `params ++ inputs` of the worst entry.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Loss over network outputs: returns the value and its gradient.
pub trait OutputLoss: Fn(&Mat<f64>) -> (f64, Mat<f64>) {}
impl<F: Fn(&Mat<f64>) -> (f64, Mat<f64>)> OutputLoss for F {}

/// Central-difference gradient of `loss(net(inputs))` over parameters,
/// followed by the inputs.
pub fn finite_diff_gradient<F: OutputLoss>(
    net: &DenseNet<f64>,
    inputs: &Mat<f64>,
    loss: &F,
) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.param_count() + inputs.as_slice().len());
    for i in 0..net.param_count() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let up = loss(&probe.predict(inputs)?).0;
        probe.params_mut()[i] = orig - FD_STEP;
        let down = loss(&probe.predict(inputs)?).0;
        probe.params_mut()[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    let mut x = inputs.clone();
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + FD_STEP;
        let up = loss(&net.predict(&x)?).0;
        x.as_mut_slice()[i] = orig - FD_STEP;
        let down = loss(&net.predict(&x)?).0;
        x.as_mut_slice()[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// Maximum of `|a - n| / max(|a|, |n|, 1e-6)` over all entries.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, None);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, Some(i));
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: analytic.len(),
        tolerance,
    }
}

/// Compares backprop against central differences. Never mutates `net`.
pub fn finite_diff_check<F: OutputLoss>(
    net: &DenseNet<f64>,
    inputs: &Mat<f64>,
    loss: F,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (y, cache) = net.forward(inputs)?;
    let (_, dy) = loss(&y);
    let (pg, dx) = net.backward(&cache, &dy)?;
    let mut analytic = pg.0;
    analytic.extend_from_slice(dx.as_slice());
    let numeric = finite_diff_gradient(net, inputs, &loss)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
