use msfm::experiments::{run_mc_study, McConfig};
use msfm::model::ExampleTag;

#[test]
fn scratch_bias_probe() {
    for (alpha, dt) in [(1.0, 0.0025), (0.0, 0.0025), (1.5, 0.0025)] {
        let cfg = McConfig {
            tag: ExampleTag::Example1,
            true_alpha: alpha,
            n_replicates: 150,
            t_total: 25.0,
            delta: 0.01,
            dt,
            sigma_obs: 0.1,
            sigma_fast: 0.1,
            theta_bounds: (-2.0, 3.0),
            root_seed: 42,
            n_bins: 25,
        };
        let r = run_mc_study(&cfg).unwrap();
        eprintln!(
            "alpha={alpha} dt={dt}: mean {:.4} emp {:.4} theo {:.4}",
            r.mean_estimate, r.empirical_stderr, r.theoretical_stderr
        );
    }
    panic!("done");
}
