use glt::estimation::{fit_node, FitOptions};
use glt::graph::{generate_cws, sample_weights_simplex};
use glt::inference::{activation_probability_interval, node_covariance, weight_intervals};
use glt::likelihood::build_all_node_data;
use glt::{GltModel, SeedDistribution, SeedTree, ThresholdSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn wald_intervals_cover_true_weights() {
    let mut hits = 0;
    let mut total = 0;
    for rep in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + rep);
        let g = generate_cws(20, 4, 0.2, &mut rng).unwrap();
        let w = sample_weights_simplex(&g, 1.0, &mut rng).unwrap();
        let m = GltModel::from_lt(g.clone(), w.clone()).unwrap();
        let traces = m
            .simulate_traces(&SeedDistribution::uniform_by_size(5), 2000, SeedTree::new(rep))
            .unwrap();
        let spec = ThresholdSpec::uniform();
        for d in build_all_node_data(&traces, &g).unwrap() {
            let Ok(fit) = fit_node(&d, &spec, &FitOptions::default()) else { continue };
            if fit.on_boundary {
                continue;
            }
            let cov = node_covariance(&d, &fit.weights, &spec).unwrap();
            if !cov.valid() {
                continue;
            }
            let truth = &w[g.in_edge_range(d.node)];
            for (ci, t) in weight_intervals(&fit, &cov, 0.95).unwrap().iter().zip(truth) {
                total += 1;
                hits += (ci.interval.lower <= *t && *t <= ci.interval.upper) as usize;
            }
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(total > 200, "{total}");
    assert!((0.9..=0.98).contains(&rate), "{hits}/{total}");
}

#[test]
fn activation_interval_contains_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let g = generate_cws(15, 4, 0.2, &mut rng).unwrap();
    let w = sample_weights_simplex(&g, 1.0, &mut rng).unwrap();
    let spec = ThresholdSpec::beta(2.0, 1.0).unwrap();
    let m = GltModel::with_common_threshold(g.clone(), w, spec).unwrap();
    let traces = m
        .simulate_traces(&SeedDistribution::uniform_by_size(3), 1500, SeedTree::new(3))
        .unwrap();
    let data = build_all_node_data(&traces, &g).unwrap();
    let mut checked = 0;
    for t in traces.iter().filter(|t| t.steps.len() > 1).take(50) {
        let history = &t.steps[..1];
        for v in g.children_of_set(&t.steps[0]).unwrap().iter().filter(|&v| !t.steps[0].contains(v)) {
            let fit = fit_node(&data[v], &spec, &FitOptions::default()).unwrap();
            let cov = node_covariance(&data[v], &fit.weights, &spec).unwrap();
            if !cov.valid() {
                continue;
            }
            let (p, ci) = activation_probability_interval(&fit, &cov, &g, history, 0.95).unwrap();
            assert!(ci.lower <= p && p <= ci.upper);
            let truth = m.transition_probability(history, v).unwrap();
            assert!((p - truth).abs() < 0.5);
            checked += 1;
        }
    }
    assert!(checked > 20);
}
