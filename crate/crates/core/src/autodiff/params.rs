use super::Matrix;

/// Handle to one tensor inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Matrix,
    first_moment: Matrix,
    second_moment: Matrix,
    steps: u64,
}

/// Named tensors together with their Adam state.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 0.999)
    }
}

/// Per-parameter gradients, one matrix for every entry of the set.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub(crate) fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            grads: params
                .entries
                .iter()
                .map(|e| Matrix::zeros(e.value.rows(), e.value.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    /// Adds `other` scaled by `weight` into these gradients.
    pub fn add_scaled(&mut self, other: &Gradients, weight: f64) {
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            for (a, b) in g.data_mut().iter_mut().zip(o.data()) {
                *a += weight * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name: name.into(),
            value,
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
            steps: 0,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn steps(&self, id: ParamId) -> u64 {
        self.entries[id.0].steps
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Bias-corrected Adam update of the listed parameters.
    pub fn adam_step(&mut self, grads: &Gradients, ids: &[ParamId], cfg: &AdamConfig) {
        for &id in ids {
            let entry = &mut self.entries[id.0];
            entry.steps += 1;
            let t = entry.steps as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let g = grads.get(id).data();
            let m = entry.first_moment.data_mut();
            let v = entry.second_moment.data_mut();
            let p = entry.value.data_mut();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// `target <- tau * online + (1 - tau) * target`, element-wise, for each pair.
    pub fn ema_update(&mut self, pairs: &[(ParamId, ParamId)], tau: f64) {
        for &(target, online) in pairs {
            let src = self.entries[online.0].value.clone();
            ema_update(&mut self.entries[target.0].value, &src, tau);
        }
    }

    pub fn copy_value(&mut self, dst: ParamId, src: ParamId) {
        let v = self.entries[src.0].value.clone();
        self.entries[dst.0].value = v;
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn ema_update(target: &mut Matrix, online: &Matrix, tau: f64) {
    assert_eq!(target.shape(), online.shape(), "EMA shape mismatch");
    for (t, &o) in target.data_mut().iter_mut().zip(online.data()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Matrix::row_vector(&[1.0, -2.0]));
        let grads = Gradients::zeros_like(&ps);
        ps.adam_step(&grads, &[id], &AdamConfig::default());
        assert_eq!(ps.get(id).data(), &[1.0, -2.0]);
        assert_eq!(ps.steps(id), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Matrix::row_vector(&[0.0, 0.0]));
        let mut grads = Gradients::zeros_like(&ps);
        grads.get_mut(id).data_mut().copy_from_slice(&[3.0, -0.5]);
        let cfg = AdamConfig::new(0.1, 0.9, 0.999);
        ps.adam_step(&grads, &[id], &cfg);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let p = ps.get(id).data();
        assert!((p[0] + 0.1 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 0.1 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_a_parabola() {
        // f(p) = (p - 3)^2, f'(p) = 2(p - 3)
        let mut ps = ParameterSet::new();
        let id = ps.add("p", Matrix::scalar(0.0));
        let cfg = AdamConfig::new(0.1, 0.9, 0.999);
        for _ in 0..100 {
            let mut grads = Gradients::zeros_like(&ps);
            let p = ps.get(id).item();
            grads.get_mut(id).data_mut()[0] = 2.0 * (p - 3.0);
            ps.adam_step(&grads, &[id], &cfg);
        }
        let p = ps.get(id).item();
        assert!((p - 3.0).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn ema_endpoints() {
        let online = Matrix::row_vector(&[1.0, 2.0]);
        let mut t = Matrix::row_vector(&[0.0, 0.0]);
        ema_update(&mut t, &online, 0.0);
        assert_eq!(t.data(), &[0.0, 0.0]);
        ema_update(&mut t, &online, 1.0);
        assert_eq!(t.data(), &[1.0, 2.0]);
        let mut t = Matrix::scalar(0.0);
        ema_update(&mut t, &Matrix::scalar(1.0), 0.05);
        assert_eq!(t.item(), 0.05);
    }
}
