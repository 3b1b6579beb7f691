mod common;

use common::{dense_evidence, dense_posterior, random_instance, rel_err};
use labelwise::planner::{predictive, restricted_posterior, PlannerModel};
use labelwise::sbl::{evidence, posterior};
use nalgebra::{DMatrix, DVector};

const TOL: f64 = 1e-8;

#[test]
fn posterior_matches_dense_formula() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let post = posterior(&inst.a, &inst.data, &inst.hyper).unwrap();
        let (mean, cov) = dense_posterior(inst.a.entries(), inst.data.values(), &inst.hyper);
        assert!(rel_err(&post.covariance, &cov) < TOL, "seed {seed} covariance");
        assert!(rel_err(&post.mean, &mean) < TOL, "seed {seed} mean");
    }
}

#[test]
fn restricted_posterior_and_predictive_match_dense_formula() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let model = PlannerModel::new(inst.a.clone(), inst.hyper.alpha.clone(), inst.hyper.sigma2).unwrap();
        let rp = restricted_posterior(&model, &inst.labels, Some(&inst.values)).unwrap();
        let aj = inst.a.restrict_rows(&inst.labels).unwrap();
        let yj = DMatrix::from_column_slice(inst.values.len(), 1, &inst.values);
        let (mean, cov) = dense_posterior(&aj, &yj, &inst.hyper);
        assert!(rel_err(&rp.covariance, &cov) < TOL, "seed {seed}");
        let got_mean = DMatrix::from_column_slice(rp.mean.len(), 1, rp.mean.as_slice());
        assert!(rel_err(&got_mean, &mean) < TOL, "seed {seed}");

        let pred = predictive(&model, &rp);
        let a = inst.a.entries();
        let n = a.nrows();
        let want_cov = DMatrix::identity(n, n) * inst.hyper.sigma2 + a * &cov * a.transpose();
        let want_mean: DVector<f64> = a * mean.column(0);
        assert!(rel_err(&pred.covariance, &want_cov) < TOL, "seed {seed}");
        let diff = (&pred.mean - &want_mean).norm() / want_mean.norm().max(f64::MIN_POSITIVE);
        assert!(diff < TOL, "seed {seed} predictive mean {diff}");
    }
}

#[test]
fn evidence_matches_dense_formula() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let got = evidence(&inst.a, &inst.data, &inst.hyper).unwrap();
        let want = dense_evidence(inst.a.entries(), inst.data.values(), &inst.hyper);
        assert!((got - want).abs() <= TOL * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
    }
}
