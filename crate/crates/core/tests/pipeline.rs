use pairweight::alq::{fitted_curve, run_mcmc, SamplerConfig};
use pairweight::design::{draw_sample, enumerate_design, monte_carlo_design_tensor, DesignConfig, DesignNode};
use pairweight::harness::{merge_runs, run_replications, CurveSetup, ExperimentConfig, GridSpec, ModelSpec, ScenarioSpec};
use pairweight::popgen::{generate_population, PopulationConfig};
use pairweight::weights::{compute_weights, WeightScheme};

fn small_population() -> PopulationConfig {
    PopulationConfig { n_psu: 30, seed: 9, ..Default::default() }
}

#[test]
fn population_sample_weights_fit() {
    let pop = generate_population(&small_population()).unwrap();
    let s = draw_sample(&pop, &DesignConfig { n_psu_selected: 12, seed: 4, ..Default::default() }).unwrap();
    assert_eq!(s.len(), 12 * 5 * 2);

    let cfg = ExperimentConfig { population: small_population(), ..Default::default() };
    let mask = ScenarioSpec::s1().sample_mask(&pop, &s);
    let opts = cfg.weight_options(&pop);
    let idx: Vec<usize> = (0..s.len()).filter(|&i| mask[i]).collect();
    let setup = CurveSetup::new(&pop, &cfg.scenario, &ModelSpec::default(), &GridSpec::default()).unwrap();
    let x: Vec<f64> = idx.iter().map(|&i| pop.persons[s.persons[i].person].x1).collect();
    let y: Vec<f64> = idx.iter().map(|&i| pop.persons[s.persons[i].person].y).collect();
    let basis = setup.basis(&x).unwrap();

    for scheme in WeightScheme::ALL {
        let w = compute_weights(&s, scheme, Some(&mask), &opts).unwrap();
        let wd = w.masked_normalized();
        let total: f64 = wd.iter().sum();
        assert!((total - idx.len() as f64).abs() < 1e-10 * idx.len() as f64);

        let sampler = SamplerConfig { seed: 2, ..Default::default() };
        let draws = run_mcmc(&y, &basis, &wd, 0.5, &sampler).unwrap();
        let curve = fitted_curve(&draws, &basis, &setup.grid).unwrap();
        assert_eq!(curve.x, setup.grid);
        assert!(curve.mean.iter().all(|m| m.is_finite()));
        let d = &draws.diagnostics;
        eprintln!("{scheme} n={} rhat {:?} ess {:?} div {} depth {} step {:?} acc {:?}", idx.len(), d.rhat, d.ess, d.n_divergent, d.max_depth_hits, d.step_sizes, d.accept_rate);
        assert!(draws.diagnostics.max_rhat() < 1.1, "{scheme}: {}", draws.diagnostics.max_rhat());
    }
}

#[test]
fn outputs_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let pop = generate_population(&small_population()).unwrap();
    pop.save(dir.path()).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("population.csv")).unwrap();
    assert_eq!(r.records().count(), pop.len());
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("population.json")).unwrap()).unwrap();
    assert_eq!(side["population_size"], pop.len());

    let t = enumerate_design(&DesignNode::srswor(5, 2), 1000).unwrap();
    let path = dir.path().join("tensor.json");
    t.save(&path).unwrap();
    assert!(std::fs::metadata(&path).unwrap().len() > 0);
}

#[test]
fn monte_carlo_tensor_agrees_with_enumeration() {
    let d = DesignNode::brewer(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
    let exact = enumerate_design(&d, 1000).unwrap();
    let mc = monte_carlo_design_tensor(&d, 2, 100_000, 3).unwrap();
    for i in 0..5 {
        for k in i + 1..5 {
            let se = mc.std_error(&[i, k]).unwrap().max(1e-4);
            assert!((mc.pi(&[i, k]) - exact.pi(&[i, k])).abs() < 5.0 * se, "({i}, {k})");
        }
    }
}

#[test]
fn split_runs_merge_to_the_full_run() {
    let cfg = ExperimentConfig {
        population: small_population(),
        k_values: vec![10, 15],
        replications: 3,
        schemes: vec![WeightScheme::Marginal, WeightScheme::FullPairwise],
        scenario: ScenarioSpec::s2(),
        model: ModelSpec { sampler: SamplerConfig { warmup: 150, draws: 150, ..Default::default() }, ..Default::default() },
        grid: GridSpec { points: 11, ..Default::default() },
        ..Default::default()
    };
    let full = run_replications(&cfg, 0..3).unwrap();
    let merged = merge_runs(run_replications(&cfg, 0..1).unwrap(), run_replications(&cfg, 1..3).unwrap()).unwrap();
    let (a, b) = (full.report(), merged.report());
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());
}
