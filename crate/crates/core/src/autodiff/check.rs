use super::{AutodiffError, Tape, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / (|numeric| + 1e-8)` over all entries.
    pub max_rel_error: f64,
    /// `(leaf, row, col)` where the maximum was attained.
    pub worst: (usize, usize, usize),
    pub entries: usize,
}

/// Checks the gradient of a scalar function of one tensor at `point`.
pub fn check_gradients<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    check_gradients_multi(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        h,
    )
}

/// Checks the gradient of a scalar function of several tensors.
///
/// `f` receives one trainable leaf per entry of `points`, in order, and
/// must build the same computation on every call.
pub fn check_gradients_multi<F>(f: F, points: &[Tensor], h: f64) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let evaluate = |values: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let shape = tape.value(out).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let mut work: Vec<Tensor> = points.to_vec();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0, 0),
        entries: 0,
    };
    for (leaf, point) in points.iter().enumerate() {
        for k in 0..point.len() {
            let (row, col) = (k / point.cols(), k % point.cols());
            let original = point.data()[k];
            work[leaf].data_mut()[k] = original + h;
            let plus = evaluate(&work)?;
            work[leaf].data_mut()[k] = original - h;
            let minus = evaluate(&work)?;
            work[leaf].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[leaf].data()[k];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(AutodiffError::GradCheckNonFinite { leaf, row, col });
            }
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            if rel > result.max_rel_error {
                result.max_rel_error = rel;
                result.worst = (leaf, row, col);
            }
            result.entries += 1;
        }
    }
    Ok(result)
}
