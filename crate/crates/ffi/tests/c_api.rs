use std::ffi::{CStr, CString};
use std::ptr;

use labelwise::eval::{generate_synthetic, SyntheticSpec};
use labelwise::io::{kind, Artifact, PriorBody, PrunedPrior};
use labelwise::planner::{exact_wsc, greedy_plan, Direction, SpreadMeasure};
use labelwise_ffi::*;

fn last_error() -> String {
    let p = lw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_prior() -> PrunedPrior {
    PrunedPrior {
        threshold_ratio: 0.01,
        kept_indices: vec![0, 2],
        frequencies: vec![0.0, 0.5],
        alpha: vec![1.0, 0.5],
        sigma2: 0.04,
    }
}

fn fitted() -> *mut LwPrior {
    let spec = SyntheticSpec::two_tone(1);
    let data = generate_synthetic(&spec).unwrap();
    let mut prior = ptr::null_mut();
    let status = unsafe {
        lw_prior_fit(
            data.values().as_ptr(),
            data.n(),
            data.slice_count(),
            spec.frame_rate,
            100,
            0.075,
            0.01,
            &mut prior,
        )
    };
    assert_eq!(status, LwStatus::Ok);
    prior
}

fn loaded(dir: &tempfile::TempDir, n: usize) -> *mut LwPrior {
    let pruned = toy_prior();
    let body = PriorBody {
        frame_rate: 2.0,
        n,
        slice_ids: vec!["a".into()],
        frequencies: pruned.frequencies.clone(),
        alpha: pruned.alpha.clone(),
        sigma2: pruned.sigma2,
        iterations_used: 1,
        converged: true,
        final_epsilon: 0.0,
        evidence_trace: vec![],
        pruned,
    };
    let path = dir.path().join("prior.json");
    Artifact::new(kind::PRIOR, &serde_json::json!({}), Default::default(), body)
        .unwrap()
        .write(&path)
        .unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut prior = ptr::null_mut();
    assert_eq!(unsafe { lw_prior_load(c.as_ptr(), &mut prior) }, LwStatus::Ok);
    prior
}

#[test]
fn fit_keeps_the_two_tones() {
    let prior = fitted();
    unsafe {
        let k = lw_prior_kept_count(prior);
        assert_eq!(k, 3);
        let mut f = vec![0.0; k];
        let mut a = vec![0.0; k];
        let mut s2 = 0.0;
        assert_eq!(lw_prior_values(prior, f.as_mut_ptr(), a.as_mut_ptr(), k, &mut s2), LwStatus::Ok);
        assert!((f[1] - 0.3).abs() < 1e-12 && (f[2] - 1.2).abs() < 1e-12);
        assert!(s2 > 0.0 && s2 < 0.01);

        let mut small = [0.0; 1];
        let status = lw_prior_values(prior, small.as_mut_ptr(), small.as_mut_ptr(), 1, ptr::null_mut());
        assert_eq!(status, LwStatus::Validation);
        assert!(last_error().contains("capacity"));
        lw_prior_free(prior);
    }
}

#[test]
fn greedy_and_predict_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let prior = loaded(&dir, 8);
    let model = toy_prior().planner_model(8, 2.0).unwrap();
    let expected = greedy_plan(&model, 4, SpreadMeasure::Trace, Direction::Minimize).unwrap();
    unsafe {
        let mut planner = ptr::null_mut();
        assert_eq!(lw_planner_new(prior, 0, 0.0, &mut planner), LwStatus::Ok);
        assert_eq!(lw_planner_len(planner), 8);

        let mut idx = [0usize; 4];
        let mut spreads = [0.0; 4];
        let status = lw_planner_greedy(planner, 4, LwMeasure::Trace, false, idx.as_mut_ptr(), spreads.as_mut_ptr());
        assert_eq!(status, LwStatus::Ok);
        assert_eq!(idx.to_vec(), expected.indices);
        assert_eq!(spreads.to_vec(), expected.spreads);

        let values = [1.0, 1.5, 0.5];
        let mut mean = [0.0; 8];
        let mut std = [0.0; 8];
        let status = lw_planner_predict(planner, idx.as_ptr(), values.as_ptr(), 3, mean.as_mut_ptr(), std.as_mut_ptr());
        assert_eq!(status, LwStatus::Ok);
        for &i in &idx[..3] {
            assert!(std[i] < std[idx[3]]);
        }
        assert!(std.iter().all(|s| *s >= 0.2 - 1e-12));

        let mut prior_std = [0.0; 8];
        let status = lw_planner_predict(planner, ptr::null(), ptr::null(), 0, mean.as_mut_ptr(), prior_std.as_mut_ptr());
        assert_eq!(status, LwStatus::Ok);
        assert!(mean.iter().all(|m| *m == 0.0));
        assert!((0..8).all(|i| prior_std[i] >= std[i]));

        lw_planner_free(planner);
        lw_prior_free(prior);
    }
}

#[test]
fn exact_and_sampled_wsc() {
    let dir = tempfile::tempdir().unwrap();
    let prior = loaded(&dir, 6);
    let model = toy_prior().planner_model(6, 2.0).unwrap();
    unsafe {
        let mut planner = ptr::null_mut();
        assert_eq!(lw_planner_new(prior, 0, 0.0, &mut planner), LwStatus::Ok);
        let mut c = 0.0;
        assert_eq!(lw_planner_wsc(planner, 0, 0, &mut c), LwStatus::Ok);
        assert_eq!(c, exact_wsc(&model).unwrap().constant);

        let mut s1 = 0.0;
        let mut s2 = 0.0;
        assert_eq!(lw_planner_wsc(planner, 200, 7, &mut s1), LwStatus::Ok);
        assert_eq!(lw_planner_wsc(planner, 200, 7, &mut s2), LwStatus::Ok);
        assert_eq!(s1, s2);
        assert!(s1 <= c * (1.0 + 1e-9));
        lw_planner_free(planner);
        lw_prior_free(prior);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut planner = ptr::null_mut();
        assert_eq!(lw_planner_new(ptr::null(), 4, 1.0, &mut planner), LwStatus::NullPointer);
        assert!(last_error().contains("prior"));
        assert!(planner.is_null());

        let missing = CString::new("/nonexistent/prior.json").unwrap();
        let mut prior = ptr::null_mut();
        assert_eq!(lw_prior_load(missing.as_ptr(), &mut prior), LwStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let prior = loaded(&dir, 20);
        let mut planner = ptr::null_mut();
        assert_eq!(lw_planner_new(prior, 0, 0.0, &mut planner), LwStatus::Ok);
        let mut c = 0.0;
        assert_eq!(lw_planner_wsc(planner, 0, 0, &mut c), LwStatus::Refused);
        let mut idx = [0usize; 1];
        let status = lw_planner_greedy(planner, 21, LwMeasure::Trace, false, idx.as_mut_ptr(), ptr::null_mut());
        assert_eq!(status, LwStatus::Validation);

        let bad = [1usize, 1];
        let vals = [0.0, 0.0];
        let mut out = [0.0; 20];
        let status = lw_planner_predict(planner, bad.as_ptr(), vals.as_ptr(), 2, out.as_mut_ptr(), out.as_mut_ptr());
        assert_eq!(status, LwStatus::Validation);
        lw_planner_free(planner);
        lw_prior_free(prior);

        lw_prior_free(ptr::null_mut());
        lw_planner_free(ptr::null_mut());
        assert_eq!(lw_prior_kept_count(ptr::null()), 0);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(lw_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
