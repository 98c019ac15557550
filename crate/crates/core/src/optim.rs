//! Accelerated projected gradient descent with backtracking line search,
//! for smooth objectives under coordinate-wise lower bounds.

pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns the value at `x` and writes the gradient into `grad`.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_and_gradient(x, &mut g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the value by at most
    /// `tolerance * (1 + |f|)`, twice in a row.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            max_iters: 2000,
            tolerance: 1e-10,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64]) {
    for (v, &lo) in x.iter_mut().zip(lower) {
        if *v < lo {
            *v = lo;
        }
    }
}

/// FISTA with a monotone restart: whenever the momentum step would raise
/// the objective, the extrapolation is dropped and the step is retried
/// from the current iterate. The returned point is therefore never worse
/// than the (projected) starting point.
pub fn minimize_projected<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    lower: &[f64],
    cfg: &DescentConfig,
) -> DescentResult {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "start point dimension");
    assert_eq!(lower.len(), n, "bound dimension");

    let mut x = x0.to_vec();
    project(&mut x, lower);
    let mut fx = obj.value(&x);
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut step = cfg.initial_step;
    let mut grad = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut quiet = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let fy = obj.value_and_gradient(&y, &mut grad);
        let fz = loop {
            for k in 0..n {
                z[k] = y[k] - step * grad[k];
            }
            project(&mut z, lower);
            let fz = obj.value(&z);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for k in 0..n {
                let d = z[k] - y[k];
                lin += grad[k] * d;
                sq += d * d;
            }
            if fz <= fy + lin + sq / (2.0 * step) || step < 1e-30 {
                break fz;
            }
            step *= 0.5;
        };

        if fz > fx {
            if y == x {
                // no descent possible from the current iterate
                converged = true;
                break;
            }
            y.copy_from_slice(&x);
            momentum = 1.0;
            quiet = 0;
            continue;
        }

        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        for k in 0..n {
            y[k] = z[k] + beta * (z[k] - x[k]);
        }
        let decrease = fx - fz;
        x.copy_from_slice(&z);
        fx = fz;
        momentum = next_momentum;
        step *= 1.25;

        if decrease <= cfg.tolerance * (1.0 + fx.abs()) {
            quiet += 1;
            if quiet >= 2 {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }

    DescentResult {
        x,
        value: fx,
        iterations,
        converged,
    }
}
