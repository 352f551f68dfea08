use relalloc::{convergence_study, BetaParams, LossMode, Scheme, SimulationConfig, SystemSpec};

fn study(threads: usize) -> Vec<relalloc::RiskRow> {
    let config = SimulationConfig {
        spec: SystemSpec::parallel(vec![BetaParams::uniform(), BetaParams::new(3.0, 2.0).unwrap()]).unwrap(),
        scheme: Scheme::TwoStage,
        m_grid: vec![25, 100],
        replications: 2000,
        master_seed: 11,
        loss_mode: LossMode::Both,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| convergence_study(&config).unwrap())
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let one = study(1);
    for threads in [2, 3, 8] {
        let rows = study(threads);
        for (a, b) in one.iter().zip(&rows) {
            assert_eq!(a.risk_estimate.to_bits(), b.risk_estimate.to_bits());
            assert_eq!(a.std_error.map(f64::to_bits), b.std_error.map(f64::to_bits));
        }
    }
}
