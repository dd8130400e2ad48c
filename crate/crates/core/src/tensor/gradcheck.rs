//! Central finite-difference checking of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Step and comparison settings for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many (evenly spaced) elements per input.
    pub max_elements: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-6,
            max_elements: None,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    /// Worst relative error per input.
    pub per_input: Vec<f64>,
    /// `(input, flat index, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central differences.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    loss.value().check_finite("gradcheck loss")?;
    let grads = tape.backward(&loss)?;

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<f64>> = probe.iter().cloned().map(Var::constant).collect();
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(Error::Usage("gradcheck function must return a scalar".into()));
        }
        Ok(out.value().item())
    };

    let mut report = GradReport::default();
    let mut worst_err = -1.0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        let n = inputs[i].numel();
        let stride = match opts.max_elements {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut input_worst: f64 = 0.0;
        for j in (0..n).step_by(stride) {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric, opts.floor);
            input_worst = input_worst.max(err);
            if err > worst_err {
                worst_err = err;
                report.worst = Some((i, j, a, numeric));
            }
            report.checked += 1;
        }
        report.per_input.push(input_worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient_checks_out() {
        let x = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let report = check(
            |tape, v| {
                let sq = tape.square(&v[0]);
                let cube = tape.mul(&sq, &v[0])?;
                Ok(tape.sum(&cube))
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-5, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn detached_operand_is_caught() {
        // d/dx sum(x * stop_grad(x)) is reported as x; the true slope is 2x
        let x = Tensor::new(&[2], vec![0.5, -1.5]).unwrap();
        let report = check(
            |tape, v| {
                let frozen = Var::constant(v[0].value().clone());
                let prod = tape.mul(&v[0], &frozen)?;
                Ok(tape.sum(&prod))
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!((report.max_rel_error() - 0.5).abs() < 1e-9);
    }
}
