//! Minimal differentiable numeric core: tensors, a reverse-mode tape,
//! heterogeneous MLPs, and Adam.

mod adam;
mod model;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use model::{BoundModel, ForwardVars, Model, ModelSpec};
pub use tape::{Gradients, Tape, Var, NORMALIZE_EPS};
pub use tensor::{argmax, softmax, Tensor};

/// Central-difference gradient estimate of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = loss(&probe);
            probe[i] = orig - h;
            let down = loss(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired gradient entries.
/// The floor keeps entries that are zero on both sides from dividing by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of `build` with respect to every entry of
/// `inputs` against central differences, returning the max relative error.
///
/// `build` receives the inputs registered as differentiable leaves and must
/// return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, h: f64, floor: f64) -> crate::Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.get_or_zeros(v, &tape).into_data())
        .collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |p| {
            let mut offset = 0;
            let mut probe = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .map(|t| {
                    let data = p[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    probe.param(Tensor::new(t.shape().to_vec(), data).expect("shape preserved"))
                })
                .collect();
            match build(&mut probe, &vars) {
                Ok(v) => probe.value(v).item(),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &flat,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic, &numeric, floor))
}
