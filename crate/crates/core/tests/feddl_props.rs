use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fedviz::feddl::{run_feddl, run_feddl_from, Aggregation, ClientShard, FedConfig, InitMode};
use fedviz::kernel::mmd;
use fedviz::privacy::PrivacySpec;
use fedviz::{DataMatrix, KernelParams};

fn gaussian(m: usize, n: usize, shift: f64, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    DataMatrix::from_points(&cols).unwrap()
}

fn config(aggregation: Aggregation) -> FedConfig {
    FedConfig {
        rounds: 8,
        local_steps: 3,
        step_size: 2.0,
        server_step_size: 2.0,
        aggregation,
        n_landmarks: 6,
        init: InitMode::GaussianScaled { scale: 1.0 },
        seed: 5,
        trace_objective: true,
    }
}

fn shards(parts: &[DataMatrix]) -> Vec<ClientShard> {
    let total: usize = parts.iter().map(DataMatrix::len).sum();
    let mut next = 0;
    parts
        .iter()
        .enumerate()
        .map(|(id, x)| {
            let ids: Vec<usize> = (next..next + x.len()).collect();
            next += x.len();
            ClientShard::new(id, x.clone(), x.len() as f64 / total as f64, ids).unwrap()
        })
        .collect()
}

#[test]
fn identical_shards_follow_the_single_client_trajectory() {
    let x = gaussian(3, 10, 0.5, 1);
    let y0 = gaussian(3, 6, 0.0, 2);
    let params = KernelParams::new(0.4).unwrap();
    for agg in [Aggregation::AverageLandmarks, Aggregation::AverageGradients] {
        let one = run_feddl_from(&shards(&[x.clone()]), y0.clone(), &config(agg), params, &PrivacySpec::none()).unwrap();
        let three = run_feddl_from(
            &shards(&[x.clone(), x.clone(), x.clone()]),
            y0.clone(),
            &config(agg),
            params,
            &PrivacySpec::none(),
        )
        .unwrap();
        let diff = (one.landmarks.as_matrix() - three.landmarks.as_matrix()).abs().max();
        assert!(diff < 1e-12, "{agg:?}: {diff:e}");
        for (a, b) in one.trace.entries.iter().zip(&three.trace.entries) {
            assert!((a.objective.unwrap() - b.objective.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn traced_objective_is_the_weighted_client_mmd() {
    let parts = [gaussian(2, 7, -1.0, 3), gaussian(2, 12, 1.0, 4), gaussian(2, 5, 0.0, 5)];
    let sh = shards(&parts);
    let params = KernelParams::new(0.8).unwrap();
    let mut cfg = config(Aggregation::AverageLandmarks);
    cfg.rounds = 1;
    cfg.local_steps = 1;
    let y0 = gaussian(2, 6, 0.0, 6);
    let mut y = y0.clone();
    for s in 0..6 {
        let out = run_feddl_from(&sh, y.clone(), &cfg, params, &PrivacySpec::none()).unwrap();
        let expect: f64 = sh.iter().map(|c| c.weight * mmd(&c.data, &out.landmarks, params).unwrap()).sum();
        let got = out.trace.final_objective().unwrap();
        assert!((got - expect).abs() < 1e-12, "step {s}: {got} vs {expect}");
        y = out.landmarks;
    }
}

#[test]
fn thread_count_does_not_change_the_result() {
    let parts: Vec<DataMatrix> = (0..5).map(|p| gaussian(4, 9, p as f64, 10 + p)).collect();
    let sh = shards(&parts);
    let params = KernelParams::new(0.2).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_feddl(&sh, &config(Aggregation::AverageGradients), params, &PrivacySpec::gradient_beta(0.5, 9)).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.landmarks, b.landmarks);
    let objectives = |o: &fedviz::feddl::FedOutcome| o.trace.entries.iter().map(|e| e.objective.map(f64::to_bits)).collect::<Vec<_>>();
    assert_eq!(objectives(&a), objectives(&b));
}
