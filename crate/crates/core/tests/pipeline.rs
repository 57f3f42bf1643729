use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kpservo::camera::Pixel;
use kpservo::experiment::{run_servo_batch, run_track_eval, ExperimentConfig, PathOccluder, Variant, SCRIPTED_SCENARIOS};
use kpservo::metrics::{Aggregate, TransientReport};
use kpservo::perception::{observe, KeypointObservation, OcclusionScenario};
use kpservo::tracker::{
    correct_observations, GatePolicy, KeypointFilter, KeypointStatus, NoiseConfig, TrackedKeypoint, TrackerState, Ukf,
};

fn recorded_sequence() -> Vec<KeypointObservation> {
    let channel = OcclusionScenario {
        noise_sigma: 1.0,
        outlier_prob: 0.1,
        outlier_offset: [20.0, 120.0],
        ..OcclusionScenario::clean()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..300u32)
        .map(|i| {
            let t = f64::from(i) * 0.1;
            let truth = [
                Pixel::new(100.0 + 10.0 * t, 200.0),
                Pixel::new(200.0 + 8.0 * t, 220.0 - 3.0 * t),
                Pixel::new(300.0, 150.0 + 5.0 * t),
            ];
            observe(&truth, &channel, u64::from(i), &mut rng)
        })
        .collect()
}

/// Gating is monotone in the threshold frame by frame: from the same
/// predicted state a wider gate never rejects more. Over a whole sequence
/// the filter states diverge once the decisions differ, so totals are not.
#[test]
fn raising_the_gate_never_gates_more() {
    let seq = recorded_sequence();
    let noise = NoiseConfig::default();
    let filter = Ukf::default();
    let thresholds = [15.0, 25.0, 30.0, 45.0, 70.0, 100.0, 500.0];
    let mut tracks: Vec<TrackedKeypoint> = seq[0]
        .keypoints
        .iter()
        .map(|k| {
            let p = k.unwrap();
            TrackedKeypoint { state: TrackerState::at_rest(p, &noise), last: p, unmeasured_frames: 0, low_confidence: false }
        })
        .collect();
    let mut totals = vec![0usize; thresholds.len()];
    for obs in &seq[1..] {
        for t in tracks.iter_mut() {
            t.state = filter.predict(&t.state, &noise).unwrap();
        }
        let counts: Vec<usize> = thresholds
            .iter()
            .map(|&d| {
                let gate = GatePolicy { distance_threshold: d, ..GatePolicy::default() };
                let mut trial = tracks.clone();
                correct_observations(&filter, &mut trial, obs, &noise, &gate).unwrap().count(KeypointStatus::Gated)
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        for (t, c) in totals.iter_mut().zip(&counts) {
            *t += c;
        }
        correct_observations(&filter, &mut tracks, obs, &noise, &GatePolicy::default()).unwrap();
    }
    assert!(totals[0] > 0);
    assert_eq!(*totals.last().unwrap(), 0);
}

#[test]
fn aggregates_match_recomputation_from_records() {
    let cfg = ExperimentConfig { repeats: 6, ..ExperimentConfig::default() };
    let batch = run_servo_batch(&cfg).unwrap();
    let again = TransientReport::from_records(&batch.records, &cfg.metrics);
    assert_eq!(again, batch.report);

    let direct = Aggregate::of(batch.report.runs.iter().map(|m| Some(m.overshoot)));
    assert_eq!(direct, batch.report.overshoot);
    let n = batch.report.runs.len() as f64;
    let mean = batch.report.runs.iter().map(|m| m.overshoot).sum::<f64>() / n;
    assert!((direct.mean.unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
}

#[test]
fn invariants_hold_on_servo_records() {
    let cfg = ExperimentConfig {
        repeats: 4,
        path_occluder: Some(PathOccluder { keypoint: None, half_size: [20.0, 20.0] }),
        ..ExperimentConfig::default()
    };
    let batch = run_servo_batch(&cfg).unwrap();
    let mut substituted = 0;
    for (rec, m) in batch.records.iter().zip(&batch.report.runs) {
        assert!(m.overshoot >= 0.0);
        if let (Some(r), Some(s)) = (m.rise_time, m.settling_time) {
            assert!(s >= r, "{}: settling {s} before rise {r}", rec.scenario_id);
        }
        assert!(rec.rows.len() <= cfg.servo.step_budget + 1);
        substituted += rec
            .rows
            .iter()
            .flat_map(|r| &r.status)
            .filter(|s| **s != KeypointStatus::Measured)
            .count();
    }
    assert!(substituted > 0, "the path occluder never hid a keypoint");
}

#[test]
fn without_occlusion_every_variant_is_near_perfect() {
    let mut cfg = ExperimentConfig::default();
    cfg.track_eval.occluders = false;
    cfg.track_eval.outlier_prob = 0.0;
    let report = run_track_eval(&cfg).unwrap();
    for k in 0..SCRIPTED_SCENARIOS {
        for v in Variant::ALL {
            for inpainting in [false, true] {
                let r = report.get(k, v, inpainting);
                assert!(r.eval.failure_rate < 1.0, "{k} {} {inpainting}: {:?}", v.name(), r.eval);
            }
        }
    }
}
