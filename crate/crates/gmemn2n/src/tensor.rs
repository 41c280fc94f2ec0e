//! Dense f64 matrices/vectors with hand-derived backward rules and a
//! finite-difference gradient checking harness.
//!
//! Everything upstream (encoding, the memory network, the trainer) is built
//! from these primitives. There is no taped autograd: each operation comes
//! with an explicit backward companion.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op}: non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
}

/// Dense row-major matrix of f64. A column vector is an `n x 1` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            rows: n,
            cols: 1,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// self += other * scale (shapes must match).
    pub fn axpy(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }
}

/// Matrix-vector product `M v`.
///
/// Backward: for upstream gradient g, dL/dM = g v^T and dL/dv = M^T g
/// (see [`matvec_grads`]).
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor, TensorError> {
    if m.cols != v.rows || v.cols != 1 {
        return Err(TensorError::DimMismatch {
            op: "matvec",
            lhs: m.shape(),
            rhs: v.shape(),
        });
    }
    let mut out = vec![0.0; m.rows];
    for r in 0..m.rows {
        let row = m.row(r);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(&v.data) {
            acc += a * b;
        }
        out[r] = acc;
    }
    Ok(Tensor::vector(out))
}

/// Transposed matrix-vector product `M^T v`.
pub fn matvec_t(m: &Tensor, v: &Tensor) -> Result<Tensor, TensorError> {
    if m.rows != v.rows || v.cols != 1 {
        return Err(TensorError::DimMismatch {
            op: "matvec_t",
            lhs: m.shape(),
            rhs: v.shape(),
        });
    }
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        let row = m.row(r);
        let s = v.data[r];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * s;
        }
    }
    Ok(Tensor::vector(out))
}

/// Backward rule of [`matvec`]: returns (dL/dM, dL/dv) for upstream gradient `g`.
pub fn matvec_grads(g: &Tensor, m: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
    let mut dm = Tensor::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let gr = g.data[r];
        for c in 0..m.cols {
            dm.data[r * m.cols + c] = gr * v.data[c];
        }
    }
    let dv = matvec_t(m, g).expect("matvec_grads shape");
    (dm, dv)
}

/// Numerically stable softmax over a column vector (max subtraction).
pub fn softmax(a: &Tensor) -> Result<Tensor, TensorError> {
    if a.is_empty() {
        return Err(TensorError::Empty("softmax"));
    }
    let max = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = a.data.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(Tensor::vector(out))
}

/// Backward rule of [`softmax`]: given output `y` and upstream gradient `g`,
/// returns y .* (g - <g, y>).
pub fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let dot: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
    let out: Vec<f64> = y
        .data
        .iter()
        .zip(&g.data)
        .map(|(yi, gi)| yi * (gi - dot))
        .collect();
    Tensor::vector(out)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor {
        rows: x.rows,
        cols: x.cols,
        data,
    }
}

/// Backward rule of [`sigmoid`]: given output `y` and upstream `g`, y(1-y) .* g.
pub fn sigmoid_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let data = y
        .data
        .iter()
        .zip(&g.data)
        .map(|(yi, gi)| yi * (1.0 - yi) * gi)
        .collect();
    Tensor {
        rows: y.rows,
        cols: y.cols,
        data,
    }
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::DimMismatch {
            op: "hadamard",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Named collection of tensors with stable (insertion) ordering.
///
/// Used both for parameter storage and for accumulated gradients; the stable
/// ordering keeps initialization, SGD updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.slots.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.slots
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter slot `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.slots
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter slot `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.slots.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.slots.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// A gradient store with the same slot names and shapes, all zero.
    pub fn zeros_like(&self) -> ParamStore {
        let slots = self
            .slots
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows, v.cols)))
            .collect();
        ParamStore { slots }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self
            .slots
            .values()
            .flat_map(|t| t.values())
            .map(|v| v * v)
            .sum();
        sq.sqrt()
    }
}

/// Scales every gradient by `max_norm / norm` when the l2 norm over all
/// concatenated entries exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip_global_norm requires max_norm > 0");
    let norm = grads.global_norm();
    // tolerance keeps the operation idempotent under f64 rounding
    if norm > max_norm * (1.0 + 1e-12) {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// I.i.d. Normal(mean, std^2) entries drawn from the given PRNG stream.
/// `std == 0` degenerates to a constant tensor.
pub fn gaussian_init<R: Rng>(
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
    rng: &mut R,
) -> Tensor {
    assert!(std >= 0.0, "gaussian_init requires std >= 0");
    if std == 0.0 {
        return Tensor::from_vec(rows, cols, vec![mean; rows * cols]);
    }
    let normal = Normal::new(mean, std).expect("valid normal distribution");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Central-difference gradient check.
///
/// `loss_fn` must be deterministic in `params` (noise injection disabled).
/// Returns the max over all entries of
/// |analytic - central| / max(|analytic|, |central|, 1e-8).
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &mut ParamStore,
    analytic: &ParamStore,
    h: f64,
) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(h > 0.0, "finite_diff_check requires h > 0");
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let mut worst = 0.0f64;
    for name in names {
        let n = params.get(&name).len();
        for i in 0..n {
            let orig = params.get(&name).values()[i];
            params.get_mut(&name).values_mut()[i] = orig + h;
            let up = loss_fn(params);
            params.get_mut(&name).values_mut()[i] = orig - h;
            let down = loss_fn(params);
            params.get_mut(&name).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(&name).values()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn matvec_row_sums() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let v = Tensor::vector(vec![1.0, 1.0]);
        let out = matvec(&m, &v).unwrap();
        assert_eq!(out.values(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_identity() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let v = Tensor::vector(vec![5.0, -2.0]);
        assert_eq!(matvec(&m, &v).unwrap().values(), &[5.0, -2.0]);
    }

    #[test]
    fn matvec_matches_triple_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let m = gaussian_init(4, 3, 0.0, 1.0, &mut rng);
        let v = gaussian_init(3, 1, 0.0, 1.0, &mut rng);
        let out = matvec(&m, &v).unwrap();
        // independent naive loop
        for r in 0..4 {
            let mut acc = 0.0;
            for c in 0..3 {
                acc += m.get(r, c) * v.get(c, 0);
            }
            assert!((out.get(r, 0) - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Tensor::zeros(2, 3);
        let v = Tensor::vector(vec![1.0, 2.0]);
        let err = matvec(&m, &v).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 1)"), "{msg}");
    }

    #[test]
    fn matvec_backward_rules() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let v = Tensor::vector(vec![5.0, 6.0]);
        let g = Tensor::vector(vec![1.0, -1.0]);
        let (dm, dv) = matvec_grads(&g, &m, &v);
        assert_eq!(dm.values(), &[5.0, 6.0, -5.0, -6.0]); // g v^T
        assert_eq!(dv.values(), &[1.0 - 3.0, 2.0 - 4.0]); // M^T g
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let out = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0])).unwrap();
        for v in out.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_stable_under_large_logits() {
        let out = softmax(&Tensor::vector(vec![1000.0, 0.0])).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(out.get(1, 0) < 1e-12);
        out.check_finite("softmax").unwrap();
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let a = gaussian_init(5, 1, 0.0, 1.0, &mut rng);
        let out = softmax(&a).unwrap();
        let z: f64 = a.values().iter().map(|x| x.exp()).sum();
        for (o, x) in out.values().iter().zip(a.values()) {
            assert!((o - x.exp() / z).abs() < 1e-12);
        }
        let sum: f64 = out.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax(&Tensor::vector(vec![])).is_err());
    }

    #[test]
    fn softmax_permutation_equivariant() {
        let a = Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]);
        let y = softmax(&a).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pa = Tensor::vector(perm.iter().map(|&i| a.get(i, 0)).collect());
        let py = softmax(&pa).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((py.get(k, 0) - y.get(i, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let out = sigmoid(&Tensor::vector(vec![0.0, 40.0, -40.0]));
        assert_eq!(out.get(0, 0), 0.5);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-12);
        assert!(out.get(2, 0) < 1e-12);
        out.check_finite("sigmoid").unwrap();
    }

    #[test]
    fn sigmoid_gradient_matches_finite_difference() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = gaussian_init(6, 1, 0.0, 1.0, &mut rng);
        let g = gaussian_init(6, 1, 0.0, 1.0, &mut rng);
        let y = sigmoid(&x);
        let dx = sigmoid_backward(&y, &g);
        let h = 1e-5;
        for i in 0..6 {
            let mut xp = x.clone();
            xp.values_mut()[i] += h;
            let mut xm = x.clone();
            xm.values_mut()[i] -= h;
            // loss = <g, sigmoid(x)>
            let lp: f64 = sigmoid(&xp)
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a * b)
                .sum();
            let lm: f64 = sigmoid(&xm)
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a * b)
                .sum();
            let num = (lp - lm) / (2.0 * h);
            let rel = (dx.get(i, 0) - num).abs() / dx.get(i, 0).abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-6, "entry {i}: rel error {rel}");
        }
    }

    #[test]
    fn hadamard_identity_and_annihilator() {
        let a = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let ones = Tensor::vector(vec![1.0; 3]);
        let zeros = Tensor::vector(vec![0.0; 3]);
        assert_eq!(hadamard(&a, &ones).unwrap().values(), a.values());
        assert_eq!(hadamard(&a, &zeros).unwrap().values(), zeros.values());
        assert!(hadamard(&a, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn hadamard_matches_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = gaussian_init(3, 4, 0.0, 1.0, &mut rng);
        let b = gaussian_init(3, 4, 0.0, 1.0, &mut rng);
        let out = hadamard(&a, &b).unwrap();
        for i in 0..12 {
            assert!((out.values()[i] - a.values()[i] * b.values()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn clip_three_four_five() {
        let mut grads = ParamStore::new();
        grads.insert("g", Tensor::vector(vec![30.0, 40.0]));
        let pre = clip_global_norm(&mut grads, 40.0);
        assert!((pre - 50.0).abs() < 1e-12);
        assert_eq!(grads.get("g").values(), &[24.0, 32.0]);
        assert!((grads.global_norm() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn clip_below_threshold_unchanged() {
        let mut grads = ParamStore::new();
        grads.insert("g", Tensor::vector(vec![6.0, 8.0]));
        clip_global_norm(&mut grads, 40.0);
        assert_eq!(grads.get("g").values(), &[6.0, 8.0]);
    }

    #[test]
    fn clip_concatenates_across_slots() {
        // two slots whose combined norm is 80 -> each entry halved
        let mut grads = ParamStore::new();
        grads.insert("a", Tensor::vector(vec![80.0 / 2f64.sqrt()]));
        grads.insert("b", Tensor::vector(vec![80.0 / 2f64.sqrt()]));
        // oracle: concatenate then norm
        let concat_norm =
            ((80.0 / 2f64.sqrt()).powi(2) + (80.0 / 2f64.sqrt()).powi(2)).sqrt();
        assert!((concat_norm - 80.0).abs() < 1e-9);
        clip_global_norm(&mut grads, 40.0);
        assert!((grads.get("a").values()[0] - 80.0 / 2f64.sqrt() / 2.0).abs() < 1e-9);
        assert!((grads.get("b").values()[0] - 80.0 / 2f64.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn clip_is_idempotent() {
        let mut once = ParamStore::new();
        once.insert("g", Tensor::vector(vec![30.0, 40.0, -10.0]));
        let mut twice = once.clone();
        clip_global_norm(&mut once, 13.0);
        clip_global_norm(&mut twice, 13.0);
        clip_global_norm(&mut twice, 13.0);
        assert_eq!(once.get("g").values(), twice.get("g").values());
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let t = gaussian_init(3, 3, 0.7, 0.0, &mut rng);
        assert!(t.values().iter().all(|&v| v == 0.7));

        let a = gaussian_init(4, 4, 0.0, 0.1, &mut ChaCha20Rng::seed_from_u64(42));
        let b = gaussian_init(4, 4, 0.0, 0.1, &mut ChaCha20Rng::seed_from_u64(42));
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let t = gaussian_init(100_000, 1, 0.0, 0.1, &mut rng);
        let n = t.len() as f64;
        let mean: f64 = t.values().iter().sum::<f64>() / n;
        let var: f64 = t.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.002, "sample mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.002, "sample std {}", var.sqrt());
    }

    #[test]
    fn finite_diff_on_quadratic() {
        // loss = 0.5 ||x||^2, gradient is x exactly
        let mut params = ParamStore::new();
        params.insert("x", Tensor::vector(vec![0.3, -1.7, 2.2]));
        let analytic = {
            let mut a = ParamStore::new();
            a.insert("x", Tensor::vector(vec![0.3, -1.7, 2.2]));
            a
        };
        let err = finite_diff_check(
            |p| 0.5 * p.get("x").values().iter().map(|v| v * v).sum::<f64>(),
            &mut params,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-9, "max rel error {err}");
    }
}
