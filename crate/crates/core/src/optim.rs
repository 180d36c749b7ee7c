//! Small derivative-free minimizers used by the maximum-likelihood fits.

use crate::scalar::{c, Scalar};

#[derive(Debug, Clone)]
pub(crate) struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization. Non-finite objective values are treated as `+inf`.
pub(crate) fn nelder_mead<T, F>(f: F, start: &[T], step: &[T], max_evals: usize, ftol: T) -> Minimum<T>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    let n = start.len();
    let eval = |x: &[T]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            T::infinity()
        }
    };
    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] = v[i] + step[i];
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|x| eval(x)).collect();
    let mut evaluations = n + 1;
    let (alpha, gamma, rho, sigma) = (T::one(), c::<T>(2.0), c::<T>(0.5), c::<T>(0.5));
    let mut converged = false;

    while evaluations < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        if best.is_finite()
            && worst.is_finite()
            && (worst - best).abs() <= ftol * (best.abs() + worst.abs() + c(1e-12))
        {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for v in simplex.iter().take(n) {
            for (cj, &vj) in centroid.iter_mut().zip(v) {
                *cj = *cj + vj;
            }
        }
        let nf = T::from_usize_lossy(n);
        centroid.iter_mut().for_each(|cj| *cj = *cj / nf);

        let along = |t: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(&cj, &wj)| cj + t * (wj - cj))
                .collect()
        };

        let reflected = along(-alpha);
        let fr = eval(&reflected);
        evaluations += 1;
        if fr < values[0] {
            let expanded = along(-gamma);
            let fe = eval(&expanded);
            evaluations += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-rho) } else { along(rho) };
            let fc = eval(&contracted);
            evaluations += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let anchor = simplex[0].clone();
                for i in 1..=n {
                    for (vj, &aj) in simplex[i].iter_mut().zip(&anchor) {
                        *vj = aj + sigma * (*vj - aj);
                    }
                    values[i] = eval(&simplex[i]);
                }
                evaluations += n;
            }
        }
    }

    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0, T::infinity()), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evaluations,
        converged,
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section<T, F>(f: F, mut lo: T, mut hi: T, iters: usize) -> (T, T)
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let inv_phi = c::<T>((5.0_f64.sqrt() - 1.0) / 2.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Bisection for a root of a monotone function bracketed by `[lo, hi]`.
pub(crate) fn bisect<T, F>(f: F, mut lo: T, mut hi: T, iters: usize) -> T
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let flo = f(lo);
    for _ in 0..iters {
        let mid = (lo + hi) / c(2.0);
        let fm = f(mid);
        if (fm < T::zero()) == (flo < T::zero()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / c(2.0)
}
