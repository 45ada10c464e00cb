//! Exercises the C entry points through their raw signatures: handle
//! lifecycles, buffer contracts, status codes, and reproducibility.

use std::ffi::{CStr, CString};
use std::ptr;

use sa_lab_ffi::*;

const ONE_STATE: &str =
    r#"{"n_states": 1, "n_actions": 1, "gamma": 0.5, "reward": [[1.0]], "transition": [[[1.0]]]}"#;

const TWO_STATE: &str = r#"{
    "n_states": 2, "n_actions": 2, "gamma": 0.6,
    "reward": [[1.0, 0.0], [0.5, 2.0]],
    "transition": [[[0.7, 0.3], [0.4, 0.6]], [[0.2, 0.8], [0.9, 0.1]]]
}"#;

fn mdp_from(text: &str) -> *mut SaMdp {
    let json = CString::new(text).unwrap();
    let mut mdp = ptr::null_mut();
    let status = unsafe { sa_mdp_from_json(json.as_ptr(), &mut mdp) };
    assert_eq!(status, SaStatus::Ok, "{}", last_error());
    assert!(!mdp.is_null());
    mdp
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sa_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

#[test]
fn version_is_a_static_dotted_string() {
    let version = unsafe { CStr::from_ptr(sa_version()) }.to_str().unwrap();
    assert!(version.contains('.'), "odd version {version:?}");
}

#[test]
fn json_round_trip_preserves_the_model() {
    let mdp = mdp_from(TWO_STATE);
    unsafe {
        assert_eq!(sa_mdp_n_states(mdp), 2);
        assert_eq!(sa_mdp_n_actions(mdp), 2);
        assert_eq!(sa_mdp_gamma(mdp), 0.6);

        let text = sa_mdp_to_json(mdp);
        assert!(!text.is_null());
        let copy = CStr::from_ptr(text).to_str().unwrap().to_owned();
        sa_string_free(text);

        let again = mdp_from(&copy);
        let text2 = sa_mdp_to_json(again);
        assert_eq!(CStr::from_ptr(text2).to_str().unwrap(), copy);
        sa_string_free(text2);
        sa_mdp_free(again);
        sa_mdp_free(mdp);
    }
}

#[test]
fn q_learning_on_the_one_state_chain_hits_the_known_target() {
    let mdp = mdp_from(ONE_STATE);
    let mut map = ptr::null_mut();
    unsafe {
        let status = sa_map_q(mdp, ptr::null(), 0, &mut map);
        assert_eq!(status, SaStatus::Ok, "{}", last_error());
        assert_eq!(sa_map_dim(map), 1);
        // One state, one action: kappa = 1 - (1 - gamma) * 1 = gamma.
        assert_eq!(sa_map_kappa(map), 0.5);

        let mut star = [0.0];
        assert_eq!(sa_map_fixed_point(map, star.as_mut_ptr(), 1), SaStatus::Ok);
        // q* solves q = 1 + 0.5 q.
        assert!((star[0] - 2.0).abs() < 1e-9, "q* = {}", star[0]);

        let mut rec = ptr::null_mut();
        let status = sa_run(map, SaScheduleFamily::Poly, 1.0, 0.9, 10_000, 7, &mut rec);
        assert_eq!(status, SaStatus::Ok, "{}", last_error());

        assert_eq!(sa_record_dim(rec), 1);
        let n = sa_record_num_checkpoints(rec);
        assert!(n > 10, "only {n} checkpoints");
        let mut prev_t = 0;
        let mut t = 0;
        let mut err = f64::NAN;
        for i in 0..n {
            assert_eq!(
                sa_record_checkpoint(rec, i, &mut t, &mut err),
                SaStatus::Ok
            );
            assert!(i == 0 || t > prev_t, "checkpoint times not increasing");
            assert!(err.is_finite());
            prev_t = t;
        }
        assert_eq!(t, 10_000, "last checkpoint is the run end");
        assert_eq!(err, sa_record_final_error_sq(rec));
        assert!(err < 1e-3, "final squared error {err}");

        let mut w = [f64::NAN];
        assert_eq!(sa_record_final_iterate(rec, w.as_mut_ptr(), 1), SaStatus::Ok);
        // err is measured against the solved table, which sits within 1e-12
        // of the exact fixed point 2.
        assert!(((w[0] - 2.0).powi(2) - err).abs() < 1e-9);

        assert_eq!(
            sa_record_checkpoint(rec, n, &mut t, &mut err),
            SaStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"), "{}", last_error());

        sa_record_free(rec);
        sa_map_free(map);
        sa_mdp_free(mdp);
    }
}

#[test]
fn rejected_arguments_set_status_and_message() {
    let mut mdp = ptr::null_mut();
    unsafe {
        assert_eq!(
            sa_mdp_from_json(ptr::null(), &mut mdp),
            SaStatus::NullPointer
        );
        assert!(last_error().contains("null"), "{}", last_error());

        let garbage = CString::new("not json").unwrap();
        assert_eq!(
            sa_mdp_from_json(garbage.as_ptr(), &mut mdp),
            SaStatus::InvalidArgument
        );
        assert!(mdp.is_null(), "out must stay null on failure");
        assert!(!last_error().is_empty());

        let latin1 = CString::new(vec![0xC3, 0x28]).unwrap();
        assert_eq!(
            sa_mdp_from_json(latin1.as_ptr(), &mut mdp),
            SaStatus::InvalidUtf8
        );

        assert_eq!(
            sa_mdp_random(0, 1, 0.5, 1, &mut mdp),
            SaStatus::InvalidArgument
        );
        assert_eq!(
            sa_mdp_random(2, 2, 1.5, 1, &mut mdp),
            SaStatus::InvalidArgument
        );
        assert!(last_error().contains("gamma"), "{}", last_error());
    }

    let mdp = mdp_from(ONE_STATE);
    let mut map = ptr::null_mut();
    unsafe {
        // A behavior policy of the wrong length is rejected up front.
        let short = [1.0];
        assert_eq!(
            sa_map_q(mdp, short.as_ptr(), 3, &mut map),
            SaStatus::InvalidArgument
        );
        assert!(last_error().contains("mu"), "{}", last_error());

        assert_eq!(sa_map_q(mdp, ptr::null(), 0, &mut map), SaStatus::Ok);
        let mut rec = ptr::null_mut();
        // nu = 0.5 is outside the polynomial family's range.
        assert_eq!(
            sa_run(map, SaScheduleFamily::Poly, 1.0, 0.5, 100, 1, &mut rec),
            SaStatus::InvalidArgument
        );
        assert!(rec.is_null());

        let mut buf = [0.0; 3];
        assert_eq!(
            sa_map_fixed_point(map, buf.as_mut_ptr(), 3),
            SaStatus::InvalidArgument
        );
        assert!(last_error().contains("length"), "{}", last_error());

        sa_map_free(map);
        sa_mdp_free(mdp);
    }
}

#[test]
fn td_runs_are_reproducible_and_coverage_is_enforced() {
    let mdp = mdp_from(TWO_STATE);
    let mu = [0.5, 0.5, 0.5, 0.5];
    let pi = [0.8, 0.2, 0.3, 0.7];
    let mut map = ptr::null_mut();
    unsafe {
        let status = sa_map_td(mdp, mu.as_ptr(), 4, pi.as_ptr(), 4, &mut map);
        assert_eq!(status, SaStatus::Ok, "{}", last_error());
        assert_eq!(sa_map_dim(map), 2);
        let kappa = sa_map_kappa(map);
        assert!(kappa > 0.0 && kappa < 1.0, "kappa = {kappa}");

        let run = |seed: u64| -> [f64; 2] {
            let mut rec = ptr::null_mut();
            let status = sa_run(
                map,
                SaScheduleFamily::PolyLog,
                1.0,
                0.5,
                20_000,
                seed,
                &mut rec,
            );
            assert_eq!(status, SaStatus::Ok, "{}", last_error());
            let mut w = [f64::NAN; 2];
            assert_eq!(sa_record_final_iterate(rec, w.as_mut_ptr(), 2), SaStatus::Ok);
            sa_record_free(rec);
            w
        };
        let a = run(3);
        let b = run(3);
        let c = run(4);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
        assert!(a != c, "different seeds gave identical trajectories");
        sa_map_free(map);

        // mu never plays action 1 in state 0, but pi does.
        let bad_mu = [1.0, 0.0, 0.5, 0.5];
        let status = sa_map_td(mdp, bad_mu.as_ptr(), 4, pi.as_ptr(), 4, &mut map);
        assert_eq!(status, SaStatus::InvalidArgument);
        assert!(map.is_null());

        sa_mdp_free(mdp);
    }
}

#[test]
fn anchor_table_matches_the_library_computation() {
    let schedule = sa_lab::schedule::StepSizeSchedule::poly_log(1.0, 0.5).unwrap();
    let want = sa_lab::schedule::compute_anchors(&schedule, 8).unwrap();

    let mut anchors = [0u64; 8];
    let mut mass = [0.0f64; 8];
    unsafe {
        let status = sa_anchor_table(
            SaScheduleFamily::PolyLog,
            1.0,
            0.5,
            8,
            anchors.as_mut_ptr(),
            mass.as_mut_ptr(),
        );
        assert_eq!(status, SaStatus::Ok, "{}", last_error());
    }
    assert_eq!(&anchors[..], &want.anchors[1..=8]);
    assert_eq!(&mass[..], &want.bar_alpha[..8]);

    unsafe {
        // Null outputs just skip the copy.
        assert_eq!(
            sa_anchor_table(
                SaScheduleFamily::PolyLog,
                1.0,
                0.5,
                8,
                ptr::null_mut(),
                ptr::null_mut()
            ),
            SaStatus::Ok
        );
        // An exponent outside the family range is rejected.
        assert_eq!(
            sa_anchor_table(SaScheduleFamily::Poly, 1.0, 0.2, 4, ptr::null_mut(), ptr::null_mut()),
            SaStatus::InvalidArgument
        );
    }
}

#[test]
fn random_models_are_reproducible() {
    unsafe {
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(sa_mdp_random(3, 2, 0.7, 9, &mut a), SaStatus::Ok);
        assert_eq!(sa_mdp_random(3, 2, 0.7, 9, &mut b), SaStatus::Ok);
        let ja = sa_mdp_to_json(a);
        let jb = sa_mdp_to_json(b);
        assert_eq!(
            CStr::from_ptr(ja).to_str().unwrap(),
            CStr::from_ptr(jb).to_str().unwrap()
        );
        sa_string_free(ja);
        sa_string_free(jb);
        sa_mdp_free(a);
        sa_mdp_free(b);
    }
}

#[test]
fn null_handles_degrade_without_crashing() {
    unsafe {
        assert_eq!(sa_mdp_n_states(ptr::null()), 0);
        assert!(sa_mdp_gamma(ptr::null()).is_nan());
        assert!(sa_mdp_to_json(ptr::null()).is_null());
        assert_eq!(sa_map_dim(ptr::null()), 0);
        assert!(sa_map_kappa(ptr::null()).is_nan());
        assert_eq!(sa_record_num_checkpoints(ptr::null()), 0);
        assert!(sa_record_final_error_sq(ptr::null()).is_nan());
        sa_mdp_free(ptr::null_mut());
        sa_map_free(ptr::null_mut());
        sa_record_free(ptr::null_mut());
        sa_string_free(ptr::null_mut());
    }
}
