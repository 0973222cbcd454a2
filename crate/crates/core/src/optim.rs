//! Unconstrained minimizers: BFGS with a strong-Wolfe line search and a
//! Nelder–Mead simplex for nonsmooth or stalled cases.
//!
//! Objectives return `f64::INFINITY` (or NaN, treated the same way) outside
//! their effective domain; both methods back off from such points.

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Stopping rules for [`bfgs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the sup-norm of the gradient falls below this value.
    pub gtol: f64,
    /// Stop when a step changes `f` by less than `ftol * (1 + |f|)` twice in a row.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            ftol: 1e-15,
        }
    }
}

fn clean(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

struct LinePoint {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

/// Minimizes `fg`, which returns the value and gradient at a point.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (f0, g0) = fg(&x);
    let mut f = clean(f0);
    let mut g = g0;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            f,
            grad_norm: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    // Inverse Hessian approximation, row-major.
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut first = true;
    let mut small_steps = 0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if sup_norm(&g) <= opts.gtol {
            return Minimum {
                grad_norm: sup_norm(&g),
                x,
                f,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut dg = dot(&d, &g);
        if dg >= 0.0 {
            // Not a descent direction: restart from steepest descent.
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            first = true;
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }
        let alpha0 = if first { 1.0 / dot(&g, &g).sqrt().max(1e-300) } else { 1.0 };
        let Some(step) = strong_wolfe(&mut fg, &x, f, dg, &d, alpha0) else {
            if first {
                break;
            }
            // Line search failed with curvature information: retry along the gradient.
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            first = true;
            continue;
        };
        let x_new = axpy(&x, step.alpha, &d);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = f - step.f;
        x = x_new;
        f = step.f;
        g = step.g;
        if df.abs() <= opts.ftol * (1.0 + f.abs()) {
            small_steps += 1;
            if small_steps >= 2 {
                break;
            }
        } else {
            small_steps = 0;
        }
        let ys = dot(&y, &s);
        if ys <= 1e-300 {
            continue;
        }
        if first {
            let scale = ys / dot(&y, &y);
            for v in h.iter_mut() {
                *v *= scale;
            }
            first = false;
        }
        // H <- (I - r s y') H (I - r y s') + r s s'.
        let rho = 1.0 / ys;
        let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
        let yhy = dot(&y, &hy);
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
            }
        }
    }
    let grad_norm = sup_norm(&g);
    Minimum {
        converged: grad_norm <= opts.gtol,
        x,
        f,
        grad_norm,
        iterations,
    }
}

/// Strong-Wolfe line search with bracketing and zoom.
fn strong_wolfe<F>(fg: &mut F, x: &[f64], f0: f64, dg0: f64, d: &[f64], alpha0: f64) -> Option<LinePoint>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let eval = |fg: &mut F, alpha: f64| {
        let (f, g) = fg(&axpy(x, alpha, d));
        let f = clean(f);
        let dg = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        LinePoint { alpha, f, g, dg }
    };
    let mut prev = LinePoint {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let mut alpha = alpha0;
    for i in 0..40 {
        let cur = eval(fg, alpha);
        if !cur.f.is_finite() || !cur.dg.is_finite() {
            // Outside the domain: shrink toward the last good point.
            alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 * alpha0 {
                break;
            }
            continue;
        }
        if cur.f > f0 + C1 * cur.alpha * dg0 || (i > 0 && cur.f >= prev.f) {
            return zoom(fg, &eval, f0, dg0, prev, cur);
        }
        if cur.dg.abs() <= -C2 * dg0 {
            return Some(cur);
        }
        if cur.dg >= 0.0 {
            return zoom(fg, &eval, f0, dg0, cur, prev);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }
    (prev.alpha > 0.0 && prev.f < f0).then_some(prev)
}

fn zoom<F, E>(fg: &mut F, eval: &E, f0: f64, dg0: f64, mut lo: LinePoint, mut hi: LinePoint) -> Option<LinePoint>
where
    E: Fn(&mut F, f64) -> LinePoint,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let alpha = cubic_or_bisect(&lo, &hi);
        let cur = eval(fg, alpha);
        if !cur.f.is_finite() || !cur.dg.is_finite() || cur.f > f0 + C1 * alpha * dg0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dg.abs() <= -C2 * dg0 {
                return Some(cur);
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
    }
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Cubic interpolation minimizer within the bracket, safeguarded by bisection.
fn cubic_or_bisect(lo: &LinePoint, hi: &LinePoint) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.dg.is_finite() {
        return mid;
    }
    let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dg * hi.dg;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.dg + d2 - d1) / (hi.dg - lo.dg + 2.0 * d2);
    let (low, high) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (high - low);
    if t.is_finite() && t > low + margin && t < high - margin {
        t
    } else {
        mid
    }
}

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this value.
    pub ftol: f64,
    /// Initial edge length relative to `max(1, |x_i|)`.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            ftol: 1e-10,
            initial_step: 0.1,
        }
    }
}

/// Nelder–Mead simplex minimization of `f` (gradient-free).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = call(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step * x[i].abs().max(1.0);
        let v = call(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut iterations = 0;
    let mut converged = false;
    while evals < opts.max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if worst.is_finite() && (worst - best).abs() <= opts.ftol * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = call(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = call(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let t = if fr < simplex[n].1 { 0.5 } else { -0.5 };
            let xc = along(t);
            let fc = call(&xc, &mut evals);
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let v = call(&xs, &mut evals);
                    *item = (xs, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        grad_norm: f64::NAN,
        iterations,
        converged,
    }
}
