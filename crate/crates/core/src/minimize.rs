//! Local minimizers over smooth scalar functions with finite-difference
//! derivatives. Strategies implement [`Minimizer`] and are looked up by name
//! in [`MinimizerRegistry`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A scalar function of `dim` variables. Evaluation may fail (e.g. inside a
/// wire's exclusion zone); minimizers treat failures as infinitely high.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
}

impl<F> Objective for (usize, F)
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fn dim(&self) -> usize {
        self.0
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        (self.1)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    /// Finite-difference step.
    pub fd_step: f64,
    /// Longest allowed single step.
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub trait Minimizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn minimize(&self, f: &dyn Objective, x0: &[f64], opts: &MinimizeOptions) -> Result<MinimizeResult>;
}

fn eval(f: &dyn Objective, x: &[f64]) -> f64 {
    f.value(x).unwrap_or(f64::INFINITY)
}

/// Central-difference gradient.
pub fn fd_gradient(f: &dyn Objective, x: &[f64], h: f64) -> Result<DVector<f64>> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f.value(&xp)?;
        xp[i] = x[i] - h;
        let fm = f.value(&xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central second differences, symmetrized.
pub fn fd_hessian(f: &dyn Objective, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let f0 = f.value(x)?;
    let mut hm = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f.value(&xp)?;
        xp[i] = x[i] - h;
        let fm = f.value(&xp)?;
        xp[i] = x[i];
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = f.value(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok((hm.clone() + hm.transpose()) * 0.5)
}

/// Quasi-Newton (BFGS) on finite-difference gradients with Armijo backtracking.
/// The inverse-Hessian estimate starts from the finite-difference Hessian when
/// that is positive definite.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bfgs;

impl Minimizer for Bfgs {
    fn name(&self) -> &'static str {
        "bfgs"
    }

    fn minimize(&self, f: &dyn Objective, x0: &[f64], opts: &MinimizeOptions) -> Result<MinimizeResult> {
        let n = f.dim();
        let h = opts.fd_step;
        let mut x = DVector::from_column_slice(x0);
        let mut fx = f.value(x.as_slice())?;
        let mut g = fd_gradient(f, x.as_slice(), h)?;
        let mut hinv = initial_inverse(f, x.as_slice(), h, &g, opts.max_step);
        let mut last_step = f64::INFINITY;
        let mut stalled = 0usize;

        for iter in 0..opts.max_iters {
            let gnorm = g.norm();
            if gnorm < opts.grad_tol && last_step < opts.step_tol {
                return Ok(MinimizeResult {
                    x: x.as_slice().to_vec(),
                    value: fx,
                    grad_norm: gnorm,
                    iterations: iter,
                });
            }
            let mut p = -(&hinv * &g);
            if p.dot(&g) >= 0.0 || !p.iter().all(|v| v.is_finite()) {
                hinv = DMatrix::identity(n, n) * (opts.max_step / gnorm.max(1e-300)).min(1.0);
                p = -(&hinv * &g);
            }
            let plen = p.norm();
            if plen > opts.max_step {
                p *= opts.max_step / plen;
            }
            let slope = p.dot(&g);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let xn = &x + &p * alpha;
                let fnew = eval(f, xn.as_slice());
                if fnew <= fx + 1e-4 * alpha * slope {
                    accepted = Some((xn, fnew));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((xn, fnew)) = accepted else {
                if gnorm < opts.grad_tol {
                    return Ok(MinimizeResult {
                        x: x.as_slice().to_vec(),
                        value: fx,
                        grad_norm: gnorm,
                        iterations: iter,
                    });
                }
                // Near the floor of function-value resolution the Armijo test
                // stops discriminating; finish on the gradient alone.
                if let Some(r) = newton_polish(f, &x, opts, iter) {
                    return Ok(r);
                }
                return Err(Error::Search(format!(
                    "line search failed at iteration {iter} (|grad| = {gnorm:.3e})"
                )));
            };
            if fnew >= fx && gnorm < 1e3 * opts.grad_tol.max(1e-12) {
                stalled += 1;
                if stalled >= 3 {
                    if let Some(r) = newton_polish(f, &xn, opts, iter) {
                        return Ok(r);
                    }
                    stalled = 0;
                }
            } else {
                stalled = 0;
            }
            let gn = fd_gradient(f, xn.as_slice(), h)?;
            let s = &xn - &x;
            let y = &gn - &g;
            let sy = s.dot(&y);
            if sy > 1e-300 {
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(n, n);
                let a = &i - &s * y.transpose() * rho;
                let b = &i - &y * s.transpose() * rho;
                hinv = &a * &hinv * &b + &s * s.transpose() * rho;
            }
            last_step = s.norm();
            x = xn;
            fx = fnew;
            g = gn;
        }
        if let Some(r) = newton_polish(f, &x, opts, opts.max_iters) {
            return Ok(r);
        }
        Err(Error::Search(format!(
            "no convergence within {} iterations (|grad| = {:.3e})",
            opts.max_iters,
            g.norm()
        )))
    }
}

/// Newton iterations on the finite-difference gradient, each step taken only
/// if it lowers the gradient norm. Returns a result once the gradient and the
/// step both meet tolerance.
fn newton_polish(f: &dyn Objective, x0: &DVector<f64>, opts: &MinimizeOptions, iters: usize) -> Option<MinimizeResult> {
    let h = opts.fd_step;
    let mut x = x0.clone();
    let mut g = fd_gradient(f, x.as_slice(), h).ok()?;
    for k in 0..20 {
        let hess = fd_hessian(f, x.as_slice(), h).ok()?;
        let step = hess.cholesky()?.solve(&g);
        let snorm = step.norm();
        if !snorm.is_finite() || snorm > opts.max_step {
            return None;
        }
        let xn = &x - &step;
        let gn = fd_gradient(f, xn.as_slice(), h).ok()?;
        if gn.norm() >= g.norm() {
            break;
        }
        x = xn;
        g = gn;
        if g.norm() < opts.grad_tol && snorm < opts.step_tol {
            return Some(MinimizeResult {
                value: f.value(x.as_slice()).ok()?,
                x: x.as_slice().to_vec(),
                grad_norm: g.norm(),
                iterations: iters + k + 1,
            });
        }
    }
    (g.norm() < opts.grad_tol).then(|| MinimizeResult {
        value: eval(f, x.as_slice()),
        x: x.as_slice().to_vec(),
        grad_norm: g.norm(),
        iterations: iters,
    })
}

fn initial_inverse(f: &dyn Objective, x: &[f64], h: f64, g: &DVector<f64>, max_step: f64) -> DMatrix<f64> {
    let n = x.len();
    if let Ok(hess) = fd_hessian(f, x, h) {
        if let Some(ch) = hess.clone().cholesky() {
            return ch.inverse();
        }
    }
    DMatrix::identity(n, n) * (max_step / g.norm().max(1e-300)).min(1.0)
}

/// Derivative-free downhill simplex. Used as the fallback when a gradient
/// line search stalls.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    /// Edge length of the starting simplex.
    pub initial_size: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { initial_size: 1.0 }
    }
}

impl Minimizer for NelderMead {
    fn name(&self) -> &'static str {
        "nelder-mead"
    }

    fn minimize(&self, f: &dyn Objective, x0: &[f64], opts: &MinimizeOptions) -> Result<MinimizeResult> {
        let n = f.dim();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = f.value(x0)?;
        simplex.push((x0.to_vec(), f0));
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += self.initial_size;
            let fv = eval(f, &v);
            simplex.push((v, fv));
        }
        let iters = opts.max_iters * 20;
        for iter in 0..iters {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let size = simplex[1..]
                .iter()
                .map(|(v, _)| dist(v, &simplex[0].0))
                .fold(0.0, f64::max);
            if size < opts.step_tol * 1e-2 {
                let best = simplex[0].clone();
                let g = fd_gradient(f, &best.0, opts.fd_step).map(|g| g.norm()).unwrap_or(f64::NAN);
                return Ok(MinimizeResult {
                    x: best.0,
                    value: best.1,
                    grad_norm: g,
                    iterations: iter,
                });
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(1.0);
            let fr = eval(f, &xr);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(f, &xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let xc = if fr < worst.1 { along(0.5) } else { along(-0.5) };
                let fc = eval(f, &xc);
                if fc < worst.1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for item in simplex.iter_mut().skip(1) {
                        let v: Vec<f64> = item.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        let fv = eval(f, &v);
                        *item = (v, fv);
                    }
                }
            }
        }
        Err(Error::Search(format!("simplex did not contract within {iters} iterations")))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Name -> minimizer table.
pub struct MinimizerRegistry {
    entries: BTreeMap<&'static str, Box<dyn Minimizer>>,
}

impl MinimizerRegistry {
    pub fn empty() -> Self {
        MinimizerRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, m: Box<dyn Minimizer>) {
        self.entries.insert(m.name(), m);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Minimizer> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Config(format!("unknown minimizer `{name}`")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for MinimizerRegistry {
    fn default() -> Self {
        let mut r = MinimizerRegistry::empty();
        r.register(Box::new(Bfgs));
        r.register(Box::new(NelderMead::default()));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> MinimizeOptions {
        MinimizeOptions {
            grad_tol: 1e-8,
            step_tol: 1e-7,
            max_iters: 500,
            fd_step: 1e-4,
            max_step: 1.0,
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<f64> {
        Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
    }

    #[test]
    fn bfgs_finds_quadratic_minimum() {
        let f = (3usize, |x: &[f64]| -> Result<f64> {
            Ok(2.0 * (x[0] - 1.0).powi(2) + 0.5 * (x[1] + 2.0).powi(2) + 3.0 * (x[2] - 0.25).powi(2) + 0.4 * x[0] * x[1])
        });
        let r = Bfgs.minimize(&f, &[0.0, 0.0, 0.0], &opts()).unwrap();
        // analytic stationary point of the coupled quadratic
        let a = nalgebra::Matrix2::new(4.0, 0.4, 0.4, 1.0);
        let sol = a.lu().solve(&nalgebra::Vector2::new(4.0, -2.0)).unwrap();
        assert!((r.x[0] - sol[0]).abs() < 1e-6 && (r.x[1] - sol[1]).abs() < 1e-6);
        assert!((r.x[2] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = (2usize, rosenbrock);
        let o = MinimizeOptions { fd_step: 1e-6, grad_tol: 1e-6, ..opts() };
        let r = Bfgs.minimize(&f, &[-1.2, 1.0], &o).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = (2usize, rosenbrock);
        let nm = NelderMead { initial_size: 0.5 };
        let r = nm.minimize(&f, &[-1.2, 1.0], &opts()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn failing_region_treated_as_wall() {
        // minimum of the quadratic sits inside a forbidden disc; the search must
        // stop on the boundary side without erroring on the first probe
        let f = (2usize, |x: &[f64]| -> Result<f64> {
            if x[0] * x[0] + x[1] * x[1] < 0.25 {
                Err(Error::Domain("forbidden".into()))
            } else {
                Ok(x[0] * x[0] + x[1] * x[1])
            }
        });
        let nm = NelderMead { initial_size: 0.3 };
        let r = nm.minimize(&f, &[2.0, 0.0], &opts()).unwrap();
        assert!(r.value >= 0.25 && r.value < 0.3);
    }

    #[test]
    fn fd_hessian_exact_on_quadratic() {
        let f = (2usize, |x: &[f64]| -> Result<f64> { Ok(3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 5.0 * x[1] * x[1]) });
        let h = fd_hessian(&f, &[0.3, -0.7], 1e-3).unwrap();
        assert!((h[(0, 0)] - 6.0).abs() < 1e-6);
        assert!((h[(0, 1)] + 2.0).abs() < 1e-6);
        assert!((h[(1, 1)] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn registry_lookup() {
        let r = MinimizerRegistry::default();
        assert_eq!(r.names(), vec!["bfgs", "nelder-mead"]);
        assert_eq!(r.get("bfgs").unwrap().name(), "bfgs");
        assert!(r.get("simulated-annealing").is_err());
    }
}
