use orient_core::estimator::{run_cycles, CycleConfig};
use orient_core::formats::{export_scene, import_scene};
use orient_core::simulator::{generate_scene, initial_estimator, NoiseConfig, ScenarioConfig};

fn small(noise: NoiseConfig) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed: 11,
        noise,
        ..Default::default()
    };
    cfg.traffic.count = 120;
    cfg
}

#[test]
fn exported_scene_cycles_like_the_original() {
    let cfg = small(NoiseConfig::default());
    let scene = generate_scene(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_scene(&scene, dir.path()).unwrap();
    let back = import_scene(dir.path()).unwrap();
    assert_eq!(back, scene);

    let m0 = initial_estimator(&cfg.noise);
    let cc = CycleConfig {
        cycles: 2,
        ..Default::default()
    };
    let a = run_cycles(&scene.tracks(), &m0, &cc).unwrap();
    let b = run_cycles(&back.tracks(), &m0, &cc).unwrap();
    assert_eq!(a.initial_error_deg, b.initial_error_deg);
    for (x, y) in a.cycles.iter().zip(&b.cycles) {
        assert_eq!(x.median_error_deg, y.median_error_deg);
    }
}

#[test]
fn noiseless_scene_stays_exact_through_cycles() {
    let cfg = small(NoiseConfig::noiseless());
    let scene = generate_scene(&cfg).unwrap();
    let m0 = initial_estimator(&cfg.noise);
    let rep = run_cycles(&scene.tracks(), &m0, &CycleConfig::default()).unwrap();
    assert!(rep.initial_error_deg < 1e-6, "{}", rep.initial_error_deg);
    for c in &rep.cycles {
        assert!(c.median_error_deg < 1e-3, "cycle {}: {}", c.cycle, c.median_error_deg);
    }
}

#[test]
fn same_seed_same_scene() {
    let cfg = small(NoiseConfig::default());
    assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&other).unwrap());
}
