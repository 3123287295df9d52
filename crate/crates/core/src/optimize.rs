//! Box-constrained BFGS for small smooth problems.
//!
//! Minimizes `f` over a box using a projected quasi-Newton step with an
//! Armijo backtracking line search. Variables pinned at a bound with the
//! gradient pointing outward are frozen for the step.

use crate::math::fabs;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective change falls below this.
    pub rel_tol: f64,
    /// Largest ∞-norm of a single trial step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsResult<const D: usize> {
    pub x: [f64; D],
    pub value: f64,
    pub iterations: usize,
}

fn project<const D: usize>(x: &mut [f64; D], lo: &[f64; D], hi: &[f64; D]) {
    for i in 0..D {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// `f` returns `None` where the objective is undefined; the line search
/// treats that as an infinitely bad point. Returns `None` only if `f` fails
/// at the (projected) start.
pub fn minimize<const D: usize, F>(
    mut f: F,
    x0: [f64; D],
    lo: [f64; D],
    hi: [f64; D],
    opts: &BfgsOptions,
) -> Option<BfgsResult<D>>
where
    F: FnMut(&[f64; D]) -> Option<(f64, [f64; D])>,
{
    let mut x = x0;
    project(&mut x, &lo, &hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let identity = || {
        let mut h = [[0.0; D]; D];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut h = identity();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let mut free = [true; D];
        let mut pg_norm = 0.0f64;
        for i in 0..D {
            let at_lo = x[i] <= lo[i] && g[i] > 0.0;
            let at_hi = x[i] >= hi[i] && g[i] < 0.0;
            if at_lo || at_hi {
                free[i] = false;
            } else {
                pg_norm = pg_norm.max(fabs(g[i]));
            }
        }
        if pg_norm < opts.grad_tol {
            break;
        }
        iterations += 1;

        let mut d = [0.0; D];
        for i in 0..D {
            if free[i] {
                d[i] = -(0..D)
                    .filter(|&j| free[j])
                    .map(|j| h[i][j] * g[j])
                    .sum::<f64>();
            }
        }
        let slope: f64 = (0..D).map(|i| d[i] * g[i]).sum();
        if slope >= 0.0 {
            h = identity();
            for i in 0..D {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(fabs(*v)));
        if dmax > opts.max_step {
            let s = opts.max_step / dmax;
            d.iter_mut().for_each(|v| *v *= s);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = [0.0; D];
            for i in 0..D {
                trial[i] = x[i] + alpha * d[i];
            }
            project(&mut trial, &lo, &hi);
            let decrease: f64 = (0..D).map(|i| g[i] * (trial[i] - x[i])).sum();
            if let Some((ft, gt)) = f(&trial) {
                let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
                if finite && ft <= fx + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };

        let mut s = [0.0; D];
        let mut y = [0.0; D];
        for i in 0..D {
            s[i] = xn[i] - x[i];
            y[i] = gn[i] - g[i];
        }
        let sy: f64 = (0..D).map(|i| s[i] * y[i]).sum();
        if sy > 1e-12 {
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let mut hy = [0.0; D];
            for i in 0..D {
                hy[i] = (0..D).map(|j| h[i][j] * y[j]).sum();
            }
            let yhy: f64 = (0..D).map(|i| y[i] * hy[i]).sum();
            for i in 0..D {
                for j in 0..D {
                    h[i][j] +=
                        (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        let rel = fabs(fnew - fx) / fabs(fx).max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if rel < opts.rel_tol {
            break;
        }
    }

    Some(BfgsResult {
        x,
        value: fx,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64; 2]) -> Option<(f64, [f64; 2])> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a);
        let g = [
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions {
            max_iter: 500,
            rel_tol: 0.0,
            grad_tol: 1e-8,
            ..Default::default()
        };
        let r = minimize(rosenbrock, [-1.2, 1.0], [-5.0; 2], [5.0; 2], &opts).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn respects_bounds() {
        // Unconstrained minimum at (3, -2); box forces (1, -1).
        let f = |x: &[f64; 2]| {
            Some((
                (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2),
                [2.0 * (x[0] - 3.0), 2.0 * (x[1] + 2.0)],
            ))
        };
        let r = minimize(
            f,
            [0.0, 0.0],
            [-1.0, -1.0],
            [1.0, 1.0],
            &BfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(r.x, [1.0, -1.0]);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64; 1]| {
            Some((
                libm::cos(3.0 * x[0]) + 0.1 * x[0] * x[0],
                [-3.0 * libm::sin(3.0 * x[0]) + 0.2 * x[0]],
            ))
        };
        for s in [-3.0, -1.0, 0.0, 0.4, 2.5] {
            let start = f(&[s]).unwrap().0;
            let r = minimize(f, [s], [-4.0], [4.0], &BfgsOptions::default()).unwrap();
            assert!(r.value <= start);
        }
    }
}
