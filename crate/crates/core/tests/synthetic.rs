use geounet::synthetic::{run_flat_baseline, SyntheticConfig};

#[test]
fn depth_one_baseline_is_near_chance() {
    let config = SyntheticConfig::default();
    let chance = 100.0 / config.classes as f64;
    let mut tests = Vec::new();
    for seed in 0..3 {
        let (train, test) = run_flat_baseline(&config, 1, seed).unwrap();
        eprintln!("seed {seed}: depth-1 train {train:.1}, test {test:.1}");
        tests.push(test);
    }
    let mean = tests.iter().sum::<f64>() / tests.len() as f64;
    assert!(mean <= chance + 10.0, "depth-1 baseline mean test accuracy {mean:.1}, chance {chance}");
}
