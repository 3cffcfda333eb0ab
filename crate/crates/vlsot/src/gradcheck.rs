//! Central finite-difference gradient checking. The numeric side never
//! touches the reverse sweep: it re-evaluates the forward closure at
//! perturbed inputs, so it stays an independent oracle for the tape.

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, Tape, Tensor, Var};

pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

impl GradCheck {
    fn agree(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.abs_tol + self.rel_tol * analytic.abs().max(numeric.abs())
    }

    /// Check `d loss / d input` for a loss built from free leaf tensors.
    pub fn check<F>(&self, name: &str, inputs: &[Tensor], build: F) -> Result<()>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .map(|v| {
                tape.grad(*v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.value(*v).len()])
            })
            .collect();

        let eval = |perturbed: &[Tensor]| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x, true)).collect();
            let l = build(&mut t, &vs)?;
            Ok(t.scalar_value(l))
        };

        for (pi, input) in inputs.iter().enumerate() {
            for ei in 0..input.numel() {
                let mut plus = inputs.to_vec();
                plus[pi].data_mut()[ei] += self.step;
                let mut minus = inputs.to_vec();
                minus[pi].data_mut()[ei] -= self.step;
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * self.step);
                let a = analytic[pi][ei];
                if !self.agree(a, numeric) {
                    return Err(Error::invalid(format!(
                        "{name}: gradient mismatch at input {pi}[{ei}]: analytic {a}, numeric {numeric}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check `d loss / d parameter` for every parameter bound by `build`.
    /// The closure must be deterministic (no dropout).
    pub fn check_params<F>(&self, name: &str, params: &mut ParamSet, build: F) -> Result<()>
    where
        F: Fn(&mut Graph) -> Result<Var>,
    {
        let mut g = Graph::new(params, true, 0.0, 0);
        let loss = build(&mut g)?;
        g.tape.backward(loss)?;
        let grads = g.take_param_grads();
        drop(g);

        for (id, analytic) in &grads {
            let numel = params.value(*id).numel();
            for ei in 0..numel {
                let original = params.value(*id).data()[ei];
                params.value_mut(*id).data_mut()[ei] = original + self.step;
                let plus = {
                    let mut gp = Graph::new(params, true, 0.0, 0);
                    let l = build(&mut gp)?;
                    gp.tape.scalar_value(l)
                };
                params.value_mut(*id).data_mut()[ei] = original - self.step;
                let minus = {
                    let mut gm = Graph::new(params, true, 0.0, 0);
                    let l = build(&mut gm)?;
                    gm.tape.scalar_value(l)
                };
                params.value_mut(*id).data_mut()[ei] = original;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[ei];
                if !self.agree(a, numeric) {
                    let pname = params.get(*id).name().to_string();
                    return Err(Error::invalid(format!(
                        "{name}: gradient mismatch at {pname}[{ei}]: analytic {a}, numeric {numeric}"
                    )));
                }
            }
        }
        Ok(())
    }
}
