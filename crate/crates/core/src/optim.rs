//! Derivative-free minimisation (Nelder-Mead) used by the GARCH and
//! correlation-parameter fits.

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    /// Hard cap on iterations (reflections / contractions).
    pub max_iter: usize,
    /// Relative spread of objective values across the simplex below which
    /// the search stops.
    pub ftol: f64,
    /// Absolute spread of simplex vertices below which the search stops.
    pub xtol: f64,
    /// Initial step along each coordinate.
    pub step: f64,
    /// Number of restarts from the best vertex after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            ftol: 1e-8,
            xtol: 1e-10,
            step: 0.5,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `f` starting from `x0`. Non-finite objective values are treated
/// as `+inf`, so infeasible regions simply repel the simplex.
pub fn nelder_mead<F>(f: F, x0: &[f64], cfg: &NelderMeadConfig) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut best = x0.to_vec();
    let mut total_iter = 0;
    let mut result = run_simplex(&eval, &best, cfg, cfg.max_iter);
    total_iter += result.iterations;
    for _ in 0..cfg.restarts {
        if !result.converged || total_iter >= cfg.max_iter {
            break;
        }
        best.clone_from(&result.x);
        let again = run_simplex(&eval, &best, cfg, cfg.max_iter - total_iter);
        total_iter += again.iterations;
        let improved = again.fx < result.fx;
        let converged = again.converged;
        if improved {
            result = again;
        }
        result.converged = converged;
    }
    result.iterations = total_iter;
    result
}

fn run_simplex<F>(f: &F, x0: &[f64], cfg: &NelderMeadConfig, budget: usize) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += cfg.step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_best = values[0];
        let f_worst = values[n];
        if f_best.is_finite() && f_worst.is_finite() {
            let spread = (f_worst - f_best).abs();
            let x_spread = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0_f64, f64::max);
            if spread <= cfg.ftol * (f_best.abs() + 1e-12) || x_spread <= cfg.xtol {
                converged = true;
                break;
            }
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(EXPAND);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(CONTRACT * REFLECT);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let x0 = simplex[0].clone();
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = x0[j] + SHRINK * (simplex[i][j] - x0[j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let (idx, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("simplex is non-empty");
    NelderMeadResult {
        x: simplex[idx].clone(),
        fx: values[idx],
        iterations,
        converged,
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
