//! Derivative-free simplex search and damped least squares.
//!
//! Both solvers operate on plain `&[f64]` parameter vectors so callers can
//! choose their own parameterization (the registration and calibration
//! modules use degrees and millimetres, which are naturally similar in
//! sensitivity for this geometry).

use nalgebra::{DMatrix, DVector};

/// Controls for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Per-coordinate edge lengths of the initial simplex.
    pub initial_steps: Vec<f64>,
    pub max_iterations: usize,
    /// Converged when the max pairwise vertex distance falls below this...
    pub diameter_tol: f64,
    /// ...and the best/worst value spread falls below this.
    pub value_tol: f64,
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization with standard reflection/expansion/
/// contraction/shrink coefficients (1, 2, 0.5, 0.5).
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let dim = x0.len();
    assert_eq!(opts.initial_steps.len(), dim, "one initial step per coordinate");

    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    vertices.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += opts.initial_steps[i];
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| f(v)).collect();

    let mut order: Vec<usize> = (0..=dim).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let diameter = max_pairwise_distance(&vertices);
        let spread = values[worst] - values[best];
        if diameter < opts.diameter_tol && spread < opts.value_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += vertices[i][d];
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let lerp = |from: &[f64], to: &[f64], t: f64| -> Vec<f64> {
            from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
        };

        // Reflection.
        let reflected = lerp(&centroid, &vertices[worst], -1.0);
        let f_reflected = f(&reflected);
        if f_reflected < values[order[0]] {
            // Expansion.
            let expanded = lerp(&centroid, &vertices[worst], -2.0);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                vertices[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                vertices[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        // Contraction, outside or inside of the worst vertex.
        let contracted = if f_reflected < values[worst] {
            lerp(&centroid, &vertices[worst], -0.5)
        } else {
            lerp(&centroid, &vertices[worst], 0.5)
        };
        let f_contracted = f(&contracted);
        if f_contracted < values[worst].min(f_reflected) {
            vertices[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink toward the best vertex.
        let best_vertex = vertices[best].clone();
        for &i in order.iter().skip(1) {
            vertices[i] = lerp(&best_vertex, &vertices[i], 0.5);
            values[i] = f(&vertices[i]);
        }
    }

    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let best = order[0];
    SimplexResult { x: vertices[best].clone(), value: values[best], iterations, converged }
}

fn max_pairwise_distance(vertices: &[Vec<f64>]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            let d: f64 = vertices[i]
                .iter()
                .zip(&vertices[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max = max.max(d);
        }
    }
    max
}

/// Controls for [`levenberg_marquardt`].
#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when an accepted step reduces the cost by less than this
    /// relative amount.
    pub cost_tol: f64,
    /// Converged when an accepted step moves the parameters by less than this.
    pub step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, cost_tol: 1e-14, step_tol: 1e-12, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg-Marquardt with a central-difference Jacobian and step acceptance
/// by residual decrease (Marquardt diagonal scaling).
pub fn levenberg_marquardt<F: Fn(&[f64]) -> Vec<f64>>(residuals: F, x0: &[f64], opts: &LmOptions) -> LmResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(residuals(&x));
    let m = r.len();
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        // Central-difference Jacobian.
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let rp = residuals(&xp);
            let rm = residuals(&xm);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut x_trial = x.clone();
            for j in 0..n {
                x_trial[j] += delta[j];
            }
            let r_trial = DVector::from_vec(residuals(&x_trial));
            let cost_trial = r_trial.norm_squared();
            if cost_trial.is_finite() && cost_trial < cost {
                let rel_drop = (cost - cost_trial) / cost.max(1e-300);
                let step = delta.norm();
                x = x_trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.cost_tol || step < opts.step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction found at any damping; treat as converged
            // to a stationary point.
            converged = cost <= initial_cost;
            break;
        }
        if converged {
            break;
        }
    }

    LmResult { x, cost, initial_cost, iterations, converged }
}
