use crate::error::{Error, Result};

/// Momentum gradient descent with per-coordinate gains. From
/// `monotone_from` on, a step that raises the loss is rejected and retried
/// along the plain gradient with halving lengths.
pub(crate) struct Schedule {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub monotone_from: usize,
    pub clip: Option<f64>,
}

const MIN_GAIN: f64 = 0.01;
const MAX_HALVINGS: usize = 40;
const SCALE_GROWTH: f64 = 1.1;

/// `eval(z, exaggeration, grad)` writes the gradient and returns the loss
/// without exaggeration. Returns the final iterate and the loss trace
/// (initial loss first).
pub(crate) fn minimize<F>(mut z: Vec<f64>, schedule: &Schedule, eval: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let len = z.len();
    let exag_at = |it: usize| {
        if it < schedule.exaggeration_iters {
            schedule.exaggeration
        } else {
            1.0
        }
    };
    let mut grad = vec![0.0; len];
    let mut loss = eval(&z, exag_at(0), &mut grad);
    let mut scale = 1.0f64;
    let mut trace = Vec::with_capacity(schedule.iterations + 1);
    trace.push(loss);
    let mut vel = vec![0.0; len];
    let mut gains = vec![1.0f64; len];
    let mut step = vec![0.0; len];
    let mut cand = vec![0.0; len];
    let mut cand_grad = vec![0.0; len];

    for it in 0..schedule.iterations {
        let mom = if it < schedule.momentum_switch {
            schedule.momentum
        } else {
            schedule.final_momentum
        };
        for k in 0..len {
            let g = match schedule.clip {
                Some(c) => grad[k].clamp(-c, c),
                None => grad[k],
            };
            gains[k] = if (g > 0.0) != (vel[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            step[k] = scale * schedule.learning_rate * gains[k] * g;
            vel[k] = mom * vel[k] - step[k];
            cand[k] = z[k] + vel[k];
        }
        let next_exag = exag_at(it + 1);
        let mut cand_loss = eval(&cand, next_exag, &mut cand_grad);
        if it >= schedule.monotone_from && !(cand_loss <= loss) {
            vel.iter_mut().for_each(|v| *v = 0.0);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                t *= 0.5;
                for k in 0..len {
                    cand[k] = z[k] - t * step[k];
                }
                cand_loss = eval(&cand, next_exag, &mut cand_grad);
                if cand_loss <= loss {
                    for k in 0..len {
                        vel[k] = -t * step[k];
                    }
                    scale *= t;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                scale = 1.0;
                gains.iter_mut().for_each(|g| *g = 1.0);
                cand.copy_from_slice(&z);
                cand_loss = loss;
                if next_exag != exag_at(it) {
                    cand_loss = eval(&cand, next_exag, &mut cand_grad);
                } else {
                    cand_grad.copy_from_slice(&grad);
                }
            }
        } else {
            scale = (scale * SCALE_GROWTH).min(1.0);
        }
        if !cand_loss.is_finite() || cand.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite embedding at iteration {}", it + 1)));
        }
        std::mem::swap(&mut z, &mut cand);
        std::mem::swap(&mut grad, &mut cand_grad);
        loss = cand_loss;
        trace.push(loss);
    }
    Ok((z, trace))
}
