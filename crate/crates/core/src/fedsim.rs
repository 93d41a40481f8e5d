//! The learning side of the simulator: a synthetic strongly-convex federated
//! task, non-IID Dirichlet partitioning, gradient aggregation under
//! unreliable uplinks, ensemble inference, and the measured risk gap.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Ridge-regularized least squares; admits closed-form oracles.
    Quadratic,
    /// Ridge-regularized logistic regression with labels in {-1, +1}.
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub x: DVector<f64>,
    pub y: f64,
    pub class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    /// Upper bound on ||x||^2 over the data, enforced at generation time.
    pub feature_norm_sq_bound: f64,
}

/// One trained low-rank adapter. `basis` is a frozen orthonormal d x r frame;
/// the trained parameters are the coefficients and the full-space offset is
/// `basis * coeffs`. `basis = None` is the direct (rank = dimension) case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adapter {
    pub coeffs: DVector<f64>,
    pub basis: Option<DMatrix<f64>>,
}

impl Adapter {
    pub fn zero_direct(dim: usize) -> Self {
        Adapter { coeffs: DVector::zeros(dim), basis: None }
    }

    /// Frozen random orthonormal basis of the given rank (QR of a Gaussian draw).
    pub fn zero_low_rank(dim: usize, rank: usize, rng: &mut Stream) -> Self {
        assert!(rank >= 1 && rank <= dim);
        let g = DMatrix::from_fn(dim, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let q = qr.q().columns(0, rank).into_owned();
        Adapter { coeffs: DVector::zeros(rank), basis: Some(q) }
    }

    pub fn delta_w(&self) -> DVector<f64> {
        match &self.basis {
            Some(b) => b * &self.coeffs,
            None => self.coeffs.clone(),
        }
    }

    /// Pull a full-space gradient back to the trained parameter space.
    pub fn project_gradient(&self, grad_w: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(b) => b.transpose() * grad_w,
            None => grad_w.clone(),
        }
    }
}

/// Version-counted set of adapters shared by all UEs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterSet {
    pub adapters: Vec<Adapter>,
    pub round: usize,
}

/// Cached per-UE oracle minimizers of the test-shard risk.
#[derive(Debug, Clone)]
pub struct OptimalReference {
    pub minimizers: Vec<DVector<f64>>,
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub mode: TaskMode,
    pub dim: usize,
    pub ridge: f64,
    pub foundation: DVector<f64>,
    pub dataset: Dataset,
    /// Per-UE train shards, as indices into the dataset.
    pub shards: Vec<Vec<usize>>,
    /// Per-UE test shards, as indices into the dataset.
    pub test_shards: Vec<Vec<usize>>,
}

impl SyntheticTask {
    pub fn n_ues(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_samples<'a>(&'a self, shard: &[usize]) -> Vec<&'a Sample> {
        shard.iter().map(|&i| &self.dataset.samples[i]).collect()
    }
}

/// Parameters for synthetic data generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub mode: TaskMode,
    pub dim: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Features are rescaled so that ||x||^2 never exceeds this.
    pub feature_norm_sq_bound: f64,
    pub ridge: f64,
    pub foundation_scale: f64,
    pub test_fraction: f64,
}

/// Generate the dataset, draw the frozen foundation vector, and split
/// train/test per UE with Dirichlet class skew.
pub fn build_task(spec: &TaskSpec, k_ues: usize, concentration: f64, rng: &mut Stream) -> Result<SyntheticTask> {
    let dataset = generate_dataset(spec, rng);
    let foundation = DVector::from_fn(spec.dim, |_, _| {
        spec.foundation_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let shards_all = partition_dirichlet(&dataset, k_ues, concentration, rng)?;
    let mut shards = Vec::with_capacity(k_ues);
    let mut test_shards = Vec::with_capacity(k_ues);
    for mut shard in shards_all {
        shard.sort_unstable();
        let n_test = ((shard.len() as f64 * spec.test_fraction).round() as usize)
            .clamp(1, shard.len().saturating_sub(1).max(1));
        let test = shard.split_off(shard.len() - n_test);
        if shard.is_empty() {
            // Tiny shard: reuse the test samples for training as well.
            shards.push(test.clone());
        } else {
            shards.push(shard);
        }
        test_shards.push(test);
    }
    Ok(SyntheticTask {
        mode: spec.mode,
        dim: spec.dim,
        ridge: spec.ridge,
        foundation,
        dataset,
        shards,
        test_shards,
    })
}

fn generate_dataset(spec: &TaskSpec, rng: &mut Stream) -> Dataset {
    let radius = spec.feature_norm_sq_bound.sqrt();
    // Class-specific feature means and regressors give the shards genuinely
    // different local optima.
    let means: Vec<DVector<f64>> = (0..spec.n_classes)
        .map(|_| {
            let v = DVector::from_fn(spec.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = v.norm().max(1e-12);
            v * (0.6 * radius / n)
        })
        .collect();
    let w_base = DVector::from_fn(spec.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w_class: Vec<DVector<f64>> = (0..spec.n_classes)
        .map(|_| {
            &w_base + DVector::from_fn(spec.dim, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let class = i % spec.n_classes;
        let mut x = &means[class]
            + DVector::from_fn(spec.dim, |_, _| 0.35 * radius * rng.sample::<f64, _>(StandardNormal));
        let norm_sq = x.norm_squared();
        if norm_sq > spec.feature_norm_sq_bound {
            x *= (spec.feature_norm_sq_bound / norm_sq).sqrt();
        }
        let signal = x.dot(&w_class[class]);
        let y = match spec.mode {
            TaskMode::Quadratic => signal + 0.05 * rng.sample::<f64, _>(StandardNormal),
            TaskMode::Logistic => {
                if signal >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        samples.push(Sample { x, y, class });
    }
    Dataset {
        samples,
        n_classes: spec.n_classes,
        feature_norm_sq_bound: spec.feature_norm_sq_bound,
    }
}

/// Split a dataset into K shards with Dirichlet-skewed class proportions.
/// Degenerate draws that leave a shard empty are resampled.
pub fn partition_dirichlet(
    dataset: &Dataset,
    k_ues: usize,
    concentration: f64,
    rng: &mut Stream,
) -> Result<Vec<Vec<usize>>> {
    if concentration <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "concentration",
            reason: "Dirichlet concentration must be positive".to_string(),
        });
    }
    if k_ues == 0 || k_ues > dataset.samples.len() {
        return Err(Error::InvalidParameter {
            name: "k_ues",
            reason: format!(
                "need 1 <= K <= {} samples, got K = {k_ues}",
                dataset.samples.len()
            ),
        });
    }
    if k_ues == 1 {
        return Ok(vec![(0..dataset.samples.len()).collect()]);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.class].push(i);
    }
    let dirichlet = Dirichlet::new(&vec![concentration; k_ues]).map_err(|e| Error::InvalidParameter {
        name: "concentration",
        reason: e.to_string(),
    })?;
    for _attempt in 0..1000 {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k_ues];
        for class_samples in &by_class {
            let props: Vec<f64> = dirichlet.sample(rng);
            let cdf: Vec<f64> = props
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            for &i in class_samples {
                let u: f64 = rng.gen();
                let ue = cdf.iter().position(|&c| u <= c).unwrap_or(k_ues - 1);
                shards[ue].push(i);
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards);
        }
    }
    Err(Error::NoConvergence(
        "Dirichlet partitioning produced an empty shard in 1000 attempts; raise the concentration or the sample count".to_string(),
    ))
}

// ---------------------------------------------------------------------------
// Risk functions
// ---------------------------------------------------------------------------

/// Per-sample risk l(w; x, y), ridge included.
pub fn sample_risk(mode: TaskMode, ridge: f64, w: &DVector<f64>, s: &Sample) -> f64 {
    let margin = s.x.dot(w);
    let fit = match mode {
        TaskMode::Quadratic => 0.5 * (margin - s.y) * (margin - s.y),
        TaskMode::Logistic => ln_1p_exp(-s.y * margin),
    };
    fit + 0.5 * ridge * w.norm_squared()
}

/// Per-sample gradient of l with respect to w.
pub fn sample_gradient(mode: TaskMode, ridge: f64, w: &DVector<f64>, s: &Sample) -> DVector<f64> {
    let margin = s.x.dot(w);
    let scale = match mode {
        TaskMode::Quadratic => margin - s.y,
        TaskMode::Logistic => -s.y * sigmoid(-s.y * margin),
    };
    &s.x * scale + w * ridge
}

/// Mean risk over a batch.
pub fn batch_risk(mode: TaskMode, ridge: f64, w: &DVector<f64>, batch: &[&Sample]) -> f64 {
    batch.iter().map(|s| sample_risk(mode, ridge, w, s)).sum::<f64>() / batch.len() as f64
}

/// Mean gradient over a batch.
pub fn batch_gradient(mode: TaskMode, ridge: f64, w: &DVector<f64>, batch: &[&Sample]) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter {
            name: "batch",
            reason: "empty batch".to_string(),
        });
    }
    let mut g = DVector::zeros(w.len());
    for s in batch {
        g += sample_gradient(mode, ridge, w, s);
    }
    Ok(g / batch.len() as f64)
}

fn batch_hessian(mode: TaskMode, ridge: f64, w: &DVector<f64>, batch: &[&Sample]) -> DMatrix<f64> {
    let dim = w.len();
    let mut h = DMatrix::zeros(dim, dim);
    for s in batch {
        let c = match mode {
            TaskMode::Quadratic => 1.0,
            TaskMode::Logistic => {
                let p = sigmoid(s.y * s.x.dot(w));
                p * (1.0 - p)
            }
        };
        h.syger(c / batch.len() as f64, &s.x, &s.x, 1.0);
    }
    for i in 0..dim {
        h[(i, i)] += ridge;
    }
    h.fill_lower_triangle_with_upper_triangle();
    h
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn ln_1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

// ---------------------------------------------------------------------------
// Federated-round operations
// ---------------------------------------------------------------------------

/// Local gradient of the batch risk, evaluated at the LoRA composite
/// w0 + delta_w and pulled back to the adapter's parameter space.
pub fn local_gradient(
    task: &SyntheticTask,
    adapter: &Adapter,
    batch: &[&Sample],
) -> Result<DVector<f64>> {
    let w = &task.foundation + adapter.delta_w();
    let g = batch_gradient(task.mode, task.ridge, &w, batch)?;
    Ok(adapter.project_gradient(&g))
}

/// Data-volume-weighted aggregation of the gradients that were both
/// subscribed and successfully received. A round with no successful
/// subscribed upload leaves the adapter unchanged.
pub fn aggregate(
    adapter: &mut Adapter,
    gradients: &[Option<DVector<f64>>],
    volumes: &[f64],
    beta: &[u8],
    gamma: &[u8],
    eta: f64,
) -> Result<bool> {
    if volumes.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidParameter {
            name: "volumes",
            reason: "negative data volume".to_string(),
        });
    }
    let mut weight_sum = 0.0;
    let mut step: DVector<f64> = DVector::zeros(adapter.coeffs.len());
    for k in 0..volumes.len() {
        if beta[k] == 1 && gamma[k] == 1 {
            let g = gradients[k].as_ref().ok_or_else(|| Error::InvalidParameter {
                name: "gradients",
                reason: format!("missing gradient for subscribed UE {k}"),
            })?;
            step += g * volumes[k];
            weight_sum += volumes[k];
        }
    }
    if weight_sum == 0.0 {
        return Ok(false);
    }
    adapter.coeffs -= step * (eta / weight_sum);
    Ok(true)
}

/// Uniform-weight ensemble risk (1/N) sum_n F_k(delta_w_n + w0) on a shard.
pub fn ensemble_risk(task: &SyntheticTask, adapters: &AdapterSet, shard: &[usize]) -> f64 {
    let batch = task.shard_samples(shard);
    let n = adapters.adapters.len() as f64;
    adapters
        .adapters
        .iter()
        .map(|a| batch_risk(task.mode, task.ridge, &(&task.foundation + a.delta_w()), &batch))
        .sum::<f64>()
        / n
}

/// Measured risk gap: sum_k rho_k [ensemble risk on the k-th test shard
/// minus the oracle minimum].
pub fn measured_phi(task: &SyntheticTask, adapters: &AdapterSet, refs: &OptimalReference, rho: &[f64]) -> f64 {
    let mut phi = 0.0;
    for (k, &r) in rho.iter().enumerate().take(task.n_ues()) {
        phi += r * (ensemble_risk(task, adapters, &task.test_shards[k]) - refs.risks[k]);
    }
    phi
}

/// Damped-Newton convex minimization of the shard risk to gradient norm 1e-9.
pub fn solve_reference(task: &SyntheticTask, shard: &[usize]) -> Result<DVector<f64>> {
    let batch = task.shard_samples(shard);
    if batch.is_empty() {
        return Err(Error::InvalidParameter {
            name: "shard",
            reason: "empty shard".to_string(),
        });
    }
    let mut w = DVector::zeros(task.dim);
    for _ in 0..100 {
        let g = batch_gradient(task.mode, task.ridge, &w, &batch)?;
        if g.norm() < 1e-9 {
            return Ok(w);
        }
        let h = batch_hessian(task.mode, task.ridge, &w, &batch);
        let step = h
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::NoConvergence("singular Hessian in reference solve".to_string()))?;
        // Near the optimum the risk difference drops below floating-point
        // noise and a sufficient-decrease test can stall; the full Newton
        // step is always safe there.
        if g.norm() < 1e-6 {
            w -= step;
            continue;
        }
        let f0 = batch_risk(task.mode, task.ridge, &w, &batch);
        let mut t = 1.0;
        loop {
            let cand = &w - &step * t;
            if batch_risk(task.mode, task.ridge, &cand, &batch) <= f0 || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let g = batch_gradient(task.mode, task.ridge, &w, &batch)?;
    if g.norm() < 1e-9 {
        Ok(w)
    } else {
        Err(Error::NoConvergence(format!(
            "reference solve stalled at gradient norm {:e}",
            g.norm()
        )))
    }
}

/// Solve every UE's oracle minimizer on its test shard.
pub fn solve_references(task: &SyntheticTask) -> Result<OptimalReference> {
    let mut minimizers = Vec::with_capacity(task.n_ues());
    let mut risks = Vec::with_capacity(task.n_ues());
    for shard in &task.test_shards {
        let w = solve_reference(task, shard)?;
        risks.push(batch_risk(task.mode, task.ridge, &w, &task.shard_samples(shard)));
        minimizers.push(w);
    }
    Ok(OptimalReference { minimizers, risks })
}

/// Sample this round's fine-tuning batch: a fixed fraction of the shard,
/// uniformly without replacement, at least one sample.
pub fn sample_batch(shard: &[usize], fraction: f64, rng: &mut Stream) -> Vec<usize> {
    let n = ((shard.len() as f64 * fraction).round() as usize).clamp(1, shard.len());
    let mut idx: Vec<usize> = shard.to_vec();
    idx.shuffle(rng);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn quad_spec() -> TaskSpec {
        TaskSpec {
            mode: TaskMode::Quadratic,
            dim: 4,
            n_samples: 400,
            n_classes: 4,
            feature_norm_sq_bound: 0.36,
            ridge: 0.8,
            foundation_scale: 0.2,
            test_fraction: 0.3,
        }
    }

    #[test]
    fn partition_single_shard_is_whole_dataset() {
        let mut rng = substream(1, "task");
        let ds = generate_dataset(&quad_spec(), &mut rng);
        let shards = partition_dirichlet(&ds, 1, 0.3, &mut rng).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), ds.samples.len());
    }

    #[test]
    fn partition_rejects_oversized_k() {
        let mut rng = substream(2, "task");
        let ds = generate_dataset(&quad_spec(), &mut rng);
        assert!(partition_dirichlet(&ds, ds.samples.len() + 1, 0.3, &mut rng).is_err());
    }

    #[test]
    fn high_concentration_is_near_uniform() {
        let mut rng = substream(3, "task");
        let mut spec = quad_spec();
        spec.n_samples = 4000;
        let ds = generate_dataset(&spec, &mut rng);
        let k = 5;
        let mut max_dev: f64 = 0.0;
        for _ in 0..100 {
            let shards = partition_dirichlet(&ds, k, 1e6, &mut rng).unwrap();
            for s in &shards {
                // Per-shard class proportions should be close to the global 1/n_classes.
                let mut counts = vec![0usize; ds.n_classes];
                for &i in s {
                    counts[ds.samples[i].class] += 1;
                }
                for c in counts {
                    let p = c as f64 / s.len() as f64;
                    max_dev = max_dev.max((p - 1.0 / ds.n_classes as f64).abs());
                }
            }
        }
        // ~800-sample shards give a proportion std of ~0.015; the worst of
        // 2000 draws lands near 3.5 sigma, so 0.08 leaves real headroom.
        assert!(max_dev < 0.08, "max class-proportion deviation {max_dev}");
    }

    #[test]
    fn low_concentration_skews_classes() {
        let mut rng = substream(4, "task");
        let mut spec = quad_spec();
        spec.n_samples = 2000;
        let ds = generate_dataset(&spec, &mut rng);
        let uniform_entropy = (ds.n_classes as f64).ln();
        let entropy_of = |shards: &Vec<Vec<usize>>| -> f64 {
            let mut total = 0.0;
            let mut weight = 0.0;
            for s in shards {
                let mut counts = vec![0f64; ds.n_classes];
                for &i in s {
                    counts[ds.samples[i].class] += 1.0;
                }
                let n: f64 = counts.iter().sum();
                let h: f64 = counts
                    .iter()
                    .filter(|&&c| c > 0.0)
                    .map(|&c| -(c / n) * (c / n).ln())
                    .sum();
                total += n * h;
                weight += n;
            }
            total / weight
        };
        let mut mean_h = 0.0;
        for _ in 0..20 {
            let shards = partition_dirichlet(&ds, 8, 0.1, &mut rng).unwrap();
            mean_h += entropy_of(&shards);
        }
        mean_h /= 20.0;
        assert!(mean_h < 0.9 * uniform_entropy, "entropy {mean_h} vs uniform {uniform_entropy}");
    }

    #[test]
    fn gradient_zero_at_reference() {
        let mut rng = substream(5, "task");
        let task = build_task(&quad_spec(), 3, 0.5, &mut rng).unwrap();
        let w = solve_reference(&task, &task.test_shards[0]).unwrap();
        let batch = task.shard_samples(&task.test_shards[0]);
        let g = batch_gradient(task.mode, task.ridge, &w, &batch).unwrap();
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn quadratic_reference_matches_linear_solve() {
        let mut rng = substream(6, "task");
        let task = build_task(&quad_spec(), 2, 0.5, &mut rng).unwrap();
        let shard = &task.test_shards[1];
        let batch = task.shard_samples(shard);
        // Closed form: (mean x x^T + ridge I) w = mean y x.
        let dim = task.dim;
        let mut h = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for s in &batch {
            h += &s.x * s.x.transpose() / batch.len() as f64;
            b += &s.x * (s.y / batch.len() as f64);
        }
        for i in 0..dim {
            h[(i, i)] += task.ridge;
        }
        let closed = h.lu().solve(&b).unwrap();
        let newton = solve_reference(&task, shard).unwrap();
        assert!((&closed - &newton).norm() < 1e-9);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = substream(7, "task");
        let mut spec = quad_spec();
        spec.mode = TaskMode::Logistic;
        let task = build_task(&spec, 2, 0.5, &mut rng).unwrap();
        let batch = task.shard_samples(&task.shards[0]);
        let w = DVector::from_fn(task.dim, |i, _| 0.1 * (i as f64 + 1.0));
        let g = batch_gradient(task.mode, task.ridge, &w, &batch).unwrap();
        let h = 1e-6;
        for i in 0..task.dim {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (batch_risk(task.mode, task.ridge, &wp, &batch)
                - batch_risk(task.mode, task.ridge, &wm, &batch))
                / (2.0 * h);
            assert!((fd - g[i]).abs() / g[i].abs().max(1e-6) < 1e-5, "component {i}");
        }
    }

    #[test]
    fn duplicated_sample_batch_equals_sample_gradient() {
        let mut rng = substream(8, "task");
        let task = build_task(&quad_spec(), 2, 0.5, &mut rng).unwrap();
        let s = &task.dataset.samples[0];
        let w = DVector::from_element(task.dim, 0.3);
        let g1 = sample_gradient(task.mode, task.ridge, &w, s);
        let batch = vec![s, s, s];
        let g3 = batch_gradient(task.mode, task.ridge, &w, &batch).unwrap();
        assert!((g1 - g3).norm() < 1e-14);
    }

    #[test]
    fn aggregate_single_ue_is_plain_step() {
        let mut adapter = Adapter::zero_direct(3);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let changed = aggregate(&mut adapter, &[Some(g.clone())], &[4.0], &[1], &[1], 0.1).unwrap();
        assert!(changed);
        assert!((adapter.coeffs + g * 0.1).norm() < 1e-15);
    }

    #[test]
    fn aggregate_skips_when_all_failed() {
        let mut adapter = Adapter::zero_direct(2);
        adapter.coeffs[0] = 1.0;
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let changed =
            aggregate(&mut adapter, &[Some(g.clone()), Some(g)], &[1.0, 1.0], &[1, 1], &[0, 0], 0.1).unwrap();
        assert!(!changed);
        assert_eq!(adapter.coeffs[0], 1.0);
    }

    #[test]
    fn aggregate_volume_weighting() {
        let mut adapter = Adapter::zero_direct(1);
        let g1 = DVector::from_vec(vec![1.0]);
        let g2 = DVector::from_vec(vec![2.0]);
        aggregate(&mut adapter, &[Some(g1), Some(g2)], &[1.0, 3.0], &[1, 1], &[1, 1], 1.0).unwrap();
        // step = (1*1 + 3*2)/4 = 1.75
        assert!((adapter.coeffs[0] + 1.75).abs() < 1e-15);
    }

    #[test]
    fn ensemble_risk_single_and_identical() {
        let mut rng = substream(9, "task");
        let task = build_task(&quad_spec(), 2, 0.5, &mut rng).unwrap();
        let a = Adapter::zero_direct(task.dim);
        let one = AdapterSet { adapters: vec![a.clone()], round: 0 };
        let two = AdapterSet { adapters: vec![a.clone(), a], round: 0 };
        let r1 = ensemble_risk(&task, &one, &task.test_shards[0]);
        let r2 = ensemble_risk(&task, &two, &task.test_shards[0]);
        assert!((r1 - r2).abs() < 1e-14);
    }

    #[test]
    fn phi_zero_at_oracle_and_nonnegative() {
        let mut rng = substream(10, "task");
        let task = build_task(&quad_spec(), 1, 0.5, &mut rng).unwrap();
        let refs = solve_references(&task).unwrap();
        let adapter = Adapter {
            coeffs: &refs.minimizers[0] - &task.foundation,
            basis: None,
        };
        let set = AdapterSet { adapters: vec![adapter], round: 0 };
        let phi = measured_phi(&task, &set, &refs, &[1.0]);
        assert!(phi.abs() < 1e-12, "phi at the oracle must vanish, got {phi}");
        let zero = AdapterSet { adapters: vec![Adapter::zero_direct(task.dim)], round: 0 };
        assert!(measured_phi(&task, &zero, &refs, &[1.0]) >= 0.0);
    }

    #[test]
    fn full_rank_low_rank_matches_direct() {
        let mut rng = substream(11, "task");
        let task = build_task(&quad_spec(), 1, 0.5, &mut rng).unwrap();
        let batch: Vec<usize> = task.shards[0].clone();
        let samples = task.shard_samples(&batch);
        let eta = 0.5;
        let mut direct = Adapter::zero_direct(task.dim);
        let mut low = Adapter::zero_low_rank(task.dim, task.dim, &mut rng);
        for _ in 0..400 {
            for a in [&mut direct, &mut low] {
                let g = local_gradient(&task, a, &samples).unwrap();
                a.coeffs -= g * eta;
            }
        }
        let rd = batch_risk(task.mode, task.ridge, &(&task.foundation + direct.delta_w()), &samples);
        let rl = batch_risk(task.mode, task.ridge, &(&task.foundation + low.delta_w()), &samples);
        assert!((rd - rl).abs() < 1e-6, "direct {rd} vs full-rank low-rank {rl}");
    }
}
