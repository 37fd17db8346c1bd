use super::ParamAccess;

/// Worst relative gradient error per parameter block.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    /// `(name, max |analytic - numeric| / max |numeric|)`.
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|(_, e)| *e <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.blocks.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares analytic gradients against central differences.
///
/// `backward` must leave the gradient of `loss` in every parameter's grad
/// buffer (buffers are zeroed beforehand). Perturbations use the step
/// `1e-5 * (1 + |theta|)`. Blocks larger than `max_entries` are probed on an
/// evenly strided subset. A block's error is the largest absolute deviation
/// scaled by the block's largest numeric gradient.
pub fn finite_diff_check<S: ParamAccess<f64>>(
    state: &mut S,
    mut loss: impl FnMut(&mut S) -> f64,
    backward: impl FnOnce(&mut S),
    tolerance: f64,
    max_entries: usize,
) -> GradCheckReport {
    state.zero_grads();
    backward(state);
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    state.visit_params_ref(&mut |name, p| {
        analytic.push((name.to_string(), p.grad().map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec)));
    });
    let mut blocks = Vec::with_capacity(analytic.len());
    for (b, (name, grad)) in analytic.iter().enumerate() {
        let stride = grad.len().div_ceil(max_entries.max(1)).max(1);
        let mut max_err: f64 = 0.0;
        let mut max_num: f64 = 0.0;
        for idx in (0..grad.len()).step_by(stride) {
            let mut theta = 0.0;
            set_entry(state, b, idx, |v| {
                theta = *v;
                *v = theta + 1e-5 * (1.0 + theta.abs());
            });
            let h = 1e-5 * (1.0 + theta.abs());
            let plus = loss(state);
            set_entry(state, b, idx, |v| *v = theta - h);
            let minus = loss(state);
            set_entry(state, b, idx, |v| *v = theta);
            let numeric = (plus - minus) / (2.0 * h);
            max_err = max_err.max((numeric - grad[idx]).abs());
            max_num = max_num.max(numeric.abs());
        }
        let rel = if max_num > 0.0 { max_err / max_num } else { max_err };
        blocks.push((name.clone(), rel));
    }
    GradCheckReport { tolerance, blocks }
}

fn set_entry<S: ParamAccess<f64>>(state: &mut S, block: usize, idx: usize, f: impl FnOnce(&mut f64)) {
    let mut f = Some(f);
    let mut b = 0;
    state.visit_params(&mut |_, p| {
        if b == block {
            if let Some(f) = f.take() {
                f(&mut p.data_mut()[idx]);
            }
        }
        b += 1;
    });
}
