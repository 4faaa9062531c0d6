//! Reference-scale trainer checks: the small end-to-end behaviors that are
//! too slow for unit tests but pin the training loop's headline behavior on
//! generator output rather than toy fixtures.

use kinauth::data::{gen_profile, gen_session, make_windows, resample_default, Posture, Window};
use kinauth::train::{train_siamese, SiameseTrainConfig};

/// Two synthetic users with *nearly identical* movement profiles, ~110
/// windows each across ten short sessions.
///
/// The similarity is the point: profile pairs drawn independently differ so
/// much that a run separates them within a handful of optimizer steps, after
/// which every negative clears the margin, the miner finds nothing, and
/// training stalls. Interpolating user B two percent of the way from user
/// A's profile toward an independent draw keeps verification genuinely hard
/// — like real users sharing gait and posture habits — so the semi-hard band
/// stays populated across a full twenty-epoch run.
fn two_similar_users() -> Vec<Window> {
    let a0 = gen_profile(7);
    let b0 = gen_profile(8);
    let mut a = a0.clone();
    a.user_id = "userA".into();
    let mut b = a0;
    b.user_id = "userB".into();
    let t = 0.02;
    for c in 0..9 {
        b.freqs_hz[c] += t * (b0.freqs_hz[c] - b.freqs_hz[c]);
        b.amplitudes[c] += t * (b0.amplitudes[c] - b.amplitudes[c]);
        for p in 0..3 {
            b.posture_offsets[p][c] += t * (b0.posture_offsets[p][c] - b.posture_offsets[p][c]);
        }
    }
    let mut pool = Vec::new();
    for (u, prof) in [&a, &b].into_iter().enumerate() {
        for k in 0..10 {
            let rec = gen_session(prof, 2, Posture::ALL[k % 3], 1000 + (u * 100 + k) as u64);
            let rs = resample_default(&rec).unwrap();
            pool.extend(make_windows(&rs, 1).unwrap());
        }
    }
    pool
}

#[test]
fn triplet_loss_falls_by_a_fifth_over_twenty_epochs() {
    let pool = two_similar_users();
    assert!(pool.len() >= 200, "expected ~220 windows, got {}", pool.len());
    let cfg = SiameseTrainConfig {
        epochs: 20,
        seed: 2,
        batch_size: 1024,
        ..SiameseTrainConfig::default()
    };
    let (_, report) = train_siamese(&pool, &cfg).unwrap();
    assert_eq!(report.loss_curve.len(), 20);
    let (first, last) = (report.loss_curve[0], report.loss_curve[19]);
    assert!(
        last <= 0.8 * first,
        "expected ≥20% triplet-loss reduction, got {first:.5} → {last:.5}"
    );

    let mining = report.mining.expect("triplet mining stats");
    let total = mining.semi_hard_rate + mining.fallback_rate + mining.skip_rate;
    assert!((total - 1.0).abs() < 1e-9);
}
