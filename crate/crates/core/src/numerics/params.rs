//! Named parameter storage with gradient and Adam moment slots.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Adam hyperparameters. The paper setting is lr 1e-3 with gradient
/// clipping at 10; β and ε are the standard defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// All trainable tensors plus their gradient and Adam moment slots.
/// Deep-copyable so a target network is just a `clone`.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
    m1: Vec<Matrix>,
    m2: Vec<Matrix>,
    by_name: BTreeMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m1: Vec::new(),
            m2: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let idx = self.values.len();
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.m1.push(Matrix::zeros(value.rows(), value.cols()));
        self.m2.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.by_name.insert(name.clone(), idx);
        self.names.push(name);
        ParamId(idx)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.by_name
            .get(name)
            .copied()
            .map(ParamId)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds a worker's gradient buffer into the store's gradient slots.
    pub fn accumulate(&mut self, buf: &GradBuffer) {
        assert_eq!(buf.mats.len(), self.grads.len());
        for (g, b) in self.grads.iter_mut().zip(&buf.mats) {
            g.add_in_place(b);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
    }

    /// Scales all gradients so the global L2 norm is at most `threshold`,
    /// preserving direction. Returns the pre-clip norm.
    pub fn clip_gradients(&mut self, threshold: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > threshold {
            let s = threshold / norm;
            for g in &mut self.grads {
                g.scale_in_place(s);
            }
        }
        norm
    }

    /// Standard Adam with bias correction; gradients are zeroed after the
    /// update.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for idx in 0..self.values.len() {
            let g = self.grads[idx].as_slice().to_vec();
            let m1 = self.m1[idx].as_mut_slice();
            let m2 = self.m2[idx].as_mut_slice();
            let v = self.values[idx].as_mut_slice();
            for i in 0..g.len() {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                v[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
            self.grads[idx].fill(0.0);
        }
    }

    /// Copies parameter values from `src` (target-network sync). Adam
    /// state and gradients are not copied.
    pub fn copy_values_from(&mut self, src: &ParamStore) {
        assert_eq!(self.names, src.names, "parameter layouts differ");
        for (dst, s) in self.values.iter_mut().zip(&src.values) {
            dst.as_mut_slice().copy_from_slice(s.as_slice());
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            step: self.step,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, v)| TensorRecord {
                    name: name.clone(),
                    rows: v.rows(),
                    cols: v.cols(),
                    data: v.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    /// Restores parameter values from a checkpoint into a store with the
    /// same layout (names and shapes must match).
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), NumericsError> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NumericsError::BadCheckpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NumericsError::BadCheckpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        for rec in &ckpt.params {
            let id = self.id(&rec.name)?;
            let v = self.value_mut(id);
            if v.shape() != (rec.rows, rec.cols) {
                return Err(NumericsError::ShapeMismatch {
                    op: "load_checkpoint",
                    expected: v.shape(),
                    got: (rec.rows, rec.cols),
                });
            }
            v.as_mut_slice().copy_from_slice(&rec.data);
        }
        self.step = ckpt.step;
        Ok(())
    }

    pub fn save_checkpoint_file(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(json.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)
    }

    pub fn load_checkpoint_file(&mut self, path: &Path) -> Result<(), NumericsError> {
        let text = fs::read_to_string(path)
            .map_err(|e| NumericsError::BadCheckpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| NumericsError::BadCheckpoint(e.to_string()))?;
        self.load_checkpoint(&ckpt)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

const CHECKPOINT_FORMAT: &str = "stmarl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub params: Vec<TensorRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Per-worker gradient accumulator mirroring a store's layout.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    mats: Vec<Matrix>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer {
            mats: store.values.iter().map(|v| Matrix::zeros(v.rows(), v.cols())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    pub fn add_in_place(&mut self, other: &GradBuffer) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_in_place(b);
        }
    }
}

/// He initialization: i.i.d. N(0, 2/fan_in) entries, fan_in = cols.
pub fn he_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    assert!(cols > 0, "he_init needs fan_in > 0");
    let std = (2.0 / cols as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn store_with(values: &[(&str, Matrix)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, v) in values {
            s.add(*n, v.clone());
        }
        s
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut s = store_with(&[("w", Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())]);
        let before = s.value(s.id("w").unwrap()).clone();
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value(s.id("w").unwrap()), &before);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let cfg = AdamConfig::default();
        let mut s = store_with(&[("w", Matrix::from_vec(1, 3, vec![0.5, -0.5, 2.0]).unwrap())]);
        let id = s.id("w").unwrap();
        let grads = vec![0.3, -1.7, 0.002];
        s.grads[0] = Matrix::from_vec(1, 3, grads.clone()).unwrap();
        let before = s.value(id).as_slice().to_vec();
        s.adam_step(&cfg);
        let after = s.value(id).as_slice().to_vec();
        for i in 0..3 {
            // First-step closed form: m̂ = g, v̂ = g², so Δ = lr·g/(|g|+ε).
            let want = cfg.lr * grads[i] / (grads[i].abs() + cfg.eps);
            let delta = before[i] - after[i];
            assert!((delta - want).abs() < 1e-15, "elem {i}: {delta} vs {want}");
        }
    }

    #[test]
    fn adam_second_step_not_larger_with_equal_grads() {
        let cfg = AdamConfig::default();
        let mut s = store_with(&[("w", Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap())]);
        let g = Matrix::from_vec(1, 2, vec![0.7, -0.1]).unwrap();
        s.grads[0] = g.clone();
        let p0 = s.values[0].as_slice().to_vec();
        s.adam_step(&cfg);
        let p1 = s.values[0].as_slice().to_vec();
        s.grads[0] = g;
        s.adam_step(&cfg);
        let p2 = s.values[0].as_slice().to_vec();
        for i in 0..2 {
            let d1 = (p1[i] - p0[i]).abs();
            let d2 = (p2[i] - p1[i]).abs();
            assert!(d2 <= d1 + 1e-9, "step grew: {d1} then {d2}");
        }
    }

    #[test]
    fn clip_below_threshold_is_identity() {
        let mut s = store_with(&[("w", Matrix::zeros(1, 2))]);
        s.grads[0] = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap(); // norm 5
        let norm = s.clip_gradients(10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(s.grads[0].as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_above_threshold_scales_exactly() {
        let mut s = store_with(&[("w", Matrix::zeros(1, 2))]);
        s.grads[0] = Matrix::from_vec(1, 2, vec![12.0, 16.0]).unwrap(); // norm 20
        s.clip_gradients(10.0);
        assert_eq!(s.grads[0].as_slice(), &[6.0, 8.0]);
    }

    #[test]
    fn clip_zero_grads_stays_zero() {
        let mut s = store_with(&[("w", Matrix::zeros(2, 2))]);
        s.clip_gradients(10.0);
        assert!(s.grads[0].as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn he_init_statistics() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let fan_in = 50;
        let m = he_init(2000, fan_in, &mut rng); // 1e5 draws
        let n = m.len() as f64;
        let mean: f64 = m.as_slice().iter().sum::<f64>() / n;
        let var: f64 = m.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let want_var = 2.0 / fan_in as f64;
        assert!((var - want_var).abs() / want_var < 0.05, "var {var} vs {want_var}");
        // mean of n samples has std sqrt(var/n)
        let sigma = (want_var / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} beyond 3σ {sigma}");
    }

    #[test]
    fn he_init_is_reproducible() {
        let a = he_init(4, 4, &mut ChaCha12Rng::seed_from_u64(42));
        let b = he_init(4, 4, &mut ChaCha12Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add("a", he_init(3, 5, &mut rng));
        s.add("b", he_init(1, 2, &mut rng));
        s.step = 17;
        let ckpt = s.to_checkpoint();
        let mut restored = ParamStore::new();
        restored.add("a", Matrix::zeros(3, 5));
        restored.add("b", Matrix::zeros(1, 2));
        restored.load_checkpoint(&ckpt).unwrap();
        assert_eq!(restored.value(restored.id("a").unwrap()), s.value(s.id("a").unwrap()));
        assert_eq!(restored.global_step(), 17);
    }
}
