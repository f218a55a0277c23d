use std::f64::consts::PI;

use predator_core::classes::Region;
use predator_core::events::SENSOR_WIDTH;
use predator_core::sim::*;
use proptest::prelude::*;

fn oracle(config: &EpisodeConfig) -> Detector {
    Detector::from_config(config, None).unwrap()
}

fn run(config: EpisodeConfig) -> EpisodeTrace {
    let det = oracle(&config);
    Episode::new(config, det).unwrap().run()
}

/// Sensor columns where the prey changes the image, found by rendering the
/// same scene with the prey moved behind the camera.
fn prey_columns(world: &World, renderer: &Renderer) -> Vec<usize> {
    let with = renderer.render_sensor(world);
    let mut hidden = world.clone();
    let cam = world.predator.pose;
    hidden.prey.pose = Pose::new(cam.x - cam.theta.cos(), cam.y - cam.theta.sin(), 0.0);
    let without = renderer.render_sensor(&hidden);
    let w = SENSOR_WIDTH as usize;
    (0..w)
        .filter(|&c| (0..with.height).any(|r| with.get(c, r) != without.get(c, r)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, max_global_rejects: 4096, ..ProptestConfig::default() })]

    #[test]
    fn label_region_matches_rendered_prey(
        px in 1.0f64..8.5,
        py in 1.0f64..5.7,
        theta in -PI..PI,
        bearing in -38.0f64..38.0,
        distance in 0.9f64..6.0,
    ) {
        let cam = Pose::new(px, py, theta);
        let phi = theta - bearing.to_radians();
        let prey = Pose::new(px + distance * phi.cos(), py + distance * phi.sin(), 0.3);
        let arena = Arena::default();
        let inside = |v: f64, hi: f64| v > 0.4 && v < hi - 0.4;
        prop_assume!(inside(prey.x, arena.width) && inside(prey.y, arena.height));
        let world = World::new(arena, cam, prey);
        let renderer = Renderer::new(RenderConfig::default());
        let truth = renderer.ground_truth(&world);
        let cols = prey_columns(&world, &renderer);
        let w = SENSOR_WIDTH as usize;
        match truth.label.region() {
            Region::N => {
                // Absent in view only when too small to see.
                prop_assert!(truth.width_px < RenderConfig::default().visibility_px, "{truth:?}");
            }
            region => {
                prop_assert!(!cols.is_empty());
                let (lo, hi) = (cols[0], *cols.last().unwrap());
                prop_assume!(lo > 0 && hi < w - 1);
                let center = (lo + hi + 1) as f64 / 2.0;
                let third = w as f64 / 3.0;
                // Within a pixel of a boundary either side is a fair answer.
                prop_assume!((center - third).abs() > 1.0 && (center - 2.0 * third).abs() > 1.0);
                let seen = if center < third {
                    Region::L
                } else if center < 2.0 * third {
                    Region::C
                } else {
                    Region::R
                };
                prop_assert_eq!(seen, region, "center column {} truth {:?}", center, truth);
            }
        }
    }
}

#[test]
fn episodes_are_bit_identical_per_seed() {
    let config = EpisodeConfig {
        seed: 4,
        duration_s: 3.0,
        ..EpisodeConfig::default()
    };
    let a = run(config.clone());
    let b = run(config.clone());
    assert_eq!(a.csv_string(), b.csv_string());
    assert_eq!(a.summary_json(), b.summary_json());
    assert_eq!(a.inferences, b.inferences);
    let c = run(EpisodeConfig { seed: 5, ..config });
    assert_ne!(a.csv_string(), c.csv_string());
}

#[test]
fn scripted_teleop_timeline_is_reproducible() {
    let config = EpisodeConfig {
        duration_s: 2.0,
        prey: PreyBehavior::Teleop,
        ..EpisodeConfig::default()
    };
    let drive = || {
        let mut ep = Episode::new(config.clone(), oracle(&config)).unwrap();
        let mut tick = 0;
        while !ep.finished() {
            match tick {
                100 => ep.set_prey_command(1.0, 0.0),
                700 => ep.set_prey_command(0.5, 1.0),
                1500 => ep.set_prey_command(0.0, 0.0),
                _ => {}
            }
            ep.step();
            tick += 1;
        }
        ep.into_trace().csv_string()
    };
    assert_eq!(drive(), drive());
}

#[test]
fn faster_scenes_fill_histograms_faster() {
    let rate = |speed: f64| {
        let config = EpisodeConfig {
            duration_s: 8.0,
            predator_start: Some(Pose::new(1.0, 3.35, 0.0)),
            prey_start: Some(Pose::new(4.5, 1.85, 0.0)),
            prey: PreyBehavior::Circling { radius: 1.5, speed },
            predator_active: false,
            stop_on_capture: false,
            dvs: DvsModel {
                noise_rate: 0.0,
                ..DvsModel::default()
            },
            ..EpisodeConfig::default()
        };
        let det = oracle(&config);
        Episode::new(config, det).unwrap().without_rows().run().summary.mean_dvs_rate_hz
    };
    let slow = rate(0.4);
    let fast = rate(0.8);
    assert!(slow > 0.0);
    assert!(fast > slow, "slow {slow} Hz, fast {fast} Hz");
}

#[test]
fn event_burst_is_capped_at_the_inference_budget() {
    let config = EpisodeConfig {
        duration_s: 0.3,
        prey: PreyBehavior::Static,
        predator_active: false,
        stop_on_capture: false,
        dvs: DvsModel {
            noise_rate: 1e7,
            ..DvsModel::default()
        },
        loop_config: LoopConfig {
            filter: None,
            ..LoopConfig::default()
        },
        ..EpisodeConfig::default()
    };
    let trace = run(config);
    let s = &trace.summary;
    // 10 Meps over 5k-event frames asks for 2 kHz.
    assert!(s.dvs_frames as f64 / s.duration_s > 1500.0, "{} frames", s.dvs_frames);
    assert!(s.dropped > 0);
    assert!(s.min_inference_interval_us.unwrap() >= 2000);
    for pair in trace.inferences.windows(2) {
        assert!(pair[1].t_us - pair[0].t_us >= 2000);
    }
}

#[test]
fn quiet_scene_produces_no_frames_with_aps_off() {
    let config = EpisodeConfig {
        duration_s: 2.0,
        prey: PreyBehavior::Static,
        predator_active: false,
        stop_on_capture: false,
        dvs: DvsModel {
            noise_rate: 0.0,
            ..DvsModel::default()
        },
        loop_config: LoopConfig {
            aps_off_keps: Some(1.0),
            ..LoopConfig::default()
        },
        ..EpisodeConfig::default()
    };
    let s = run(config.clone()).summary;
    assert_eq!(s.dvs_frames, 0);
    assert_eq!(s.aps_frames, 0);
    assert!(s.aps_skipped > 0);
    assert_eq!(s.inferences, 0);

    // With APS left on, APS frames alone drive inference.
    let s = run(EpisodeConfig {
        loop_config: LoopConfig::default(),
        ..config
    })
    .summary;
    assert_eq!(s.dvs_frames, 0);
    assert!(s.aps_frames >= 29);
    assert_eq!(s.inferences, s.aps_frames);
}

#[test]
fn oracle_catches_circling_prey() {
    let config = EpisodeConfig {
        prey: PreyBehavior::Circling {
            radius: 1.5,
            speed: 0.5,
        },
        ..EpisodeConfig::default()
    };
    let det = oracle(&config);
    let s = Episode::new(config, det).unwrap().without_rows().run().summary;
    let t = s.capture_time_s.expect("captured");
    assert!(t <= 60.0);
    assert_eq!(s.wall_contacts, 0);
}
