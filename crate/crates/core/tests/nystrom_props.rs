use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fedviz::kernel::{kernel_between, pairwise_sq_dist, self_sq_dist, gaussian_kernel};
use fedviz::nystrom::{assemble_cross_block, nystrom_complete, CompletionParams, LandmarkBlock, MatrixKind};
use fedviz::privacy::PrivacyMode;
use fedviz::{DataMatrix, KernelParams};

fn clustered(n: usize, m: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..m).map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| centers[j % 4].iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    DataMatrix::from_points(&cols).unwrap()
}

fn kernel_error(x: &DataMatrix, n_y: usize, seed: u64, params: KernelParams) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = sample(&mut rng, x.len(), n_y).into_vec();
    let y = x.select_points(&idx).unwrap();
    let b = assemble_cross_block(&[(0, kernel_between(x, &y, params).unwrap())]).unwrap();
    let w = LandmarkBlock::from_landmarks(&y, MatrixKind::Kernel, params).unwrap();
    let k_hat = nystrom_complete(&b, &w, &CompletionParams::default(), PrivacyMode::None).unwrap();
    let k = gaussian_kernel(&self_sq_dist(x), params).unwrap();
    (&k_hat.values - &k).norm() / k.norm()
}

#[test]
fn median_error_does_not_grow_with_more_landmarks() {
    let x = clustered(120, 6, 11);
    let params = KernelParams::median_heuristic(&x, 120, 0).unwrap();
    let mut medians = Vec::new();
    for n_y in [4, 8, 16, 32] {
        let mut errs: Vec<f64> = (0..5).map(|s| kernel_error(&x, n_y, 100 + s, params)).collect();
        errs.sort_by(f64::total_cmp);
        medians.push(errs[2]);
    }
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "medians {medians:?}");
    }
}

fn split(x: &DataMatrix, clients: usize) -> Vec<(usize, Vec<usize>)> {
    (0..clients).map(|c| (c, (0..x.len()).filter(|j| j % clients == c).collect())).collect()
}

#[test]
fn upload_order_does_not_change_the_completion() {
    let x = clustered(37, 4, 3);
    let y = clustered(9, 4, 4);
    let params = KernelParams::new(0.05).unwrap();
    for kind in [MatrixKind::Distance, MatrixKind::Kernel] {
        let blocks: Vec<(usize, DMatrix<f64>, Vec<usize>)> = split(&x, 4)
            .into_iter()
            .map(|(c, ids)| {
                let xp = x.select_points(&ids).unwrap();
                let b = match kind {
                    MatrixKind::Distance => pairwise_sq_dist(&xp, &y).unwrap(),
                    MatrixKind::Kernel => kernel_between(&xp, &y, params).unwrap(),
                };
                (c, b, ids)
            })
            .collect();
        let w = LandmarkBlock::from_landmarks(&y, kind, params).unwrap();
        let complete = |order: &[usize]| {
            let upload: Vec<(usize, DMatrix<f64>)> = order.iter().map(|&c| (blocks[c].0, blocks[c].1.clone())).collect();
            let b = assemble_cross_block(&upload).unwrap();
            let done = nystrom_complete(&b, &w, &CompletionParams::default(), PrivacyMode::None).unwrap();
            // row index -> original point id
            let mut ids = vec![0; x.len()];
            for (c, _, pids) in &blocks {
                for (r, &pid) in b.rows_of(*c).unwrap().zip(pids) {
                    ids[r] = pid;
                }
            }
            let mut by_point = DMatrix::zeros(x.len(), x.len());
            for i in 0..x.len() {
                for j in 0..x.len() {
                    by_point[(ids[i], ids[j])] = done.values[(i, j)];
                }
            }
            by_point
        };
        let a = complete(&[0, 1, 2, 3]);
        for order in [[3, 1, 0, 2], [2, 3, 1, 0]] {
            let max = (&a - complete(&order)).abs().max();
            assert!(max <= 1e-10, "{kind:?} order {order:?}: {max:e}");
        }
    }
}
