#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use labelwise::eval::{generate_synthetic, SyntheticSpec};
use labelwise::model::{Dataset, FrequencyGrid, LabelSet, TimeGrid, TransferMatrix};
use labelwise::planner::PlannerModel;
use labelwise::sbl::{fit_sparse_prior, prune, EmConfig, HyperParams, DEFAULT_PRUNE_RATIO};

/// Random problem for comparing against the dense formulas.
pub struct Instance {
    pub a: TransferMatrix,
    pub hyper: HyperParams,
    pub data: Dataset,
    pub labels: LabelSet,
    pub values: Vec<f64>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=20);
    let m = rng.random_range(0..=5);
    let l = rng.random_range(1..=4);
    let fps = rng.random_range(2.0..30.0);
    let spacing = rng.random_range(0.05..0.9) * fps / (2.0 * m.max(1) as f64);
    let tg = TimeGrid::new(n, fps).unwrap();
    let fg = FrequencyGrid::uniform(m, spacing).unwrap();
    let a = TransferMatrix::new(&tg, &fg);
    let alpha: Vec<f64> = (0..=m).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();
    let sigma2 = 10f64.powf(rng.random_range(-2.0..0.0));
    let values = DMatrix::from_fn(n, l, |_, _| rng.random_range(-2.0..2.0));
    let ids = (0..l).map(|i| format!("s{i}")).collect();
    let data = Dataset::new(values, tg, ids).unwrap();
    let count = rng.random_range(1..=n);
    let labels = LabelSet::new(rand::seq::index::sample(&mut rng, n, count).into_vec(), n).unwrap();
    let values = labels.indices().iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    Instance {
        a,
        hyper: HyperParams::new(alpha, sigma2).unwrap(),
        data,
        labels,
        values,
    }
}

pub fn gamma(hyper: &HyperParams) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(hyper.gamma_vector()))
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("dense inverse")
}

/// `(A^T A / σ² + Γ^{-1})^{-1}` and `Σ A^T Y / σ²`.
pub fn dense_posterior(a: &DMatrix<f64>, y: &DMatrix<f64>, hyper: &HyperParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let s2 = hyper.sigma2;
    let g = gamma(hyper);
    let precision = a.transpose() * a / s2 + inverse(&g);
    let cov = inverse(&precision);
    let mean = &cov * a.transpose() * y / s2;
    (mean, cov)
}

pub fn dense_evidence(a: &DMatrix<f64>, y: &DMatrix<f64>, hyper: &HyperParams) -> f64 {
    let n = a.nrows();
    let sy = DMatrix::identity(n, n) * hyper.sigma2 + a * gamma(hyper) * a.transpose();
    let inv = inverse(&sy);
    let quad: f64 = y.column_iter().map(|c| c.dot(&(&inv * c))).sum();
    -quad - y.ncols() as f64 * sy.lu().determinant().ln()
}

pub fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / want.norm().max(f64::MIN_POSITIVE)
}

/// Series of 12 frames at 4 fps with DC and two random tones.
pub fn small_model(seed: u64) -> PlannerModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tg = TimeGrid::new(12, 4.0).unwrap();
    let f1 = rng.random_range(0.1..0.9);
    let f2 = rng.random_range(1.0..1.9);
    let alpha = vec![
        rng.random_range(0.5..2.0),
        rng.random_range(0.2..2.0),
        rng.random_range(0.2..2.0),
    ];
    let sigma2 = rng.random_range(0.01..0.2);
    PlannerModel::from_frequencies(&tg, vec![0.0, f1, f2], alpha, sigma2).unwrap()
}

pub fn dc_only_model(n: usize) -> PlannerModel {
    let tg = TimeGrid::new(n, 4.0).unwrap();
    PlannerModel::from_frequencies(&tg, vec![0.0], vec![1.0], 0.1).unwrap()
}

/// Random model with a few tones and a random label set.
pub fn random_model(rng: &mut ChaCha8Rng) -> PlannerModel {
    let n = rng.random_range(4..=30);
    let fps = 10.0;
    let k = rng.random_range(0..=4);
    let mut freqs = vec![0.0];
    freqs.extend((0..k).map(|j| (j as f64 + rng.random_range(0.1..0.9)) * 4.5 / k.max(1) as f64));
    let alpha = (0..=k).map(|_| 10f64.powf(rng.random_range(-1.5..1.0))).collect();
    let sigma2 = 10f64.powf(rng.random_range(-2.5..-0.5));
    PlannerModel::from_frequencies(&TimeGrid::new(n, fps).unwrap(), freqs, alpha, sigma2).unwrap()
}

pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, exclude: Option<usize>) -> Vec<usize> {
    (0..n).filter(|&i| Some(i) != exclude && rng.random_bool(0.5)).collect()
}

/// Two-tone synthetic series fitted with default settings.
pub struct Synthetic {
    pub spec: SyntheticSpec,
    pub data: Dataset,
    pub a: TransferMatrix,
    pub kept: Vec<usize>,
    pub model: PlannerModel,
}

pub fn two_tone_fit(seed: u64) -> Synthetic {
    let spec = SyntheticSpec::two_tone(seed);
    let data = generate_synthetic(&spec).unwrap();
    let fg = FrequencyGrid::uniform(100, 0.075).unwrap();
    let a = TransferMatrix::new(data.time_grid(), &fg);
    let fit = fit_sparse_prior(&data, &a, &EmConfig::default()).unwrap();
    let pruned = prune(&fit, &a, DEFAULT_PRUNE_RATIO).unwrap();
    let kept = pruned.kept_frequency_indices.clone();
    let model = PlannerModel::from_pruned(&pruned).unwrap();
    Synthetic {
        spec,
        data,
        a,
        kept,
        model,
    }
}
