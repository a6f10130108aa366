use super::{AutodiffError, ParameterSet, Tape, Tensor, Var};

/// Floor on the denominator of [`relative_error`], so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function of `inputs` with central
/// finite differences of step `h`; returns the largest relative error.
pub fn input_gradient_check<E: From<AutodiffError>>(
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    inputs: &[Tensor],
    h: f64,
) -> Result<f64, E> {
    let eval = |xs: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.watch(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out, &mut [])?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[which].len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = inputs[which].data()[j];
            probe[which].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[which].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[which].data_mut()[j] = x0;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Like [`input_gradient_check`], but differentiates with respect to every value of
/// a parameter set. `f` builds the scalar on a fresh tape from the current values.
pub fn param_gradient_check<E: From<AutodiffError>>(
    mut f: impl FnMut(&mut Tape, &ParameterSet) -> Result<Var, E>,
    params: &mut ParameterSet,
    h: f64,
) -> Result<f64, E> {
    params.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    tape.backward(out, &mut [&mut *params])?;
    let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| params.grad(i).to_vec()).collect();
    params.zero_grad();

    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let x0 = params.value(i).data()[j];
            params.value_mut(i)[j] = x0 + h;
            let mut tape = Tape::new();
            let out = f(&mut tape, params)?;
            let up = tape.value(out).item();
            params.value_mut(i)[j] = x0 - h;
            let mut tape = Tape::new();
            let out = f(&mut tape, params)?;
            let down = tape.value(out).item();
            params.value_mut(i)[j] = x0;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
