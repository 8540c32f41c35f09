//! Nelder-Mead simplex minimization with dimension-adaptive coefficients.

use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub(crate) struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when the spread of objective values over the simplex falls below this.
    pub f_tol: f64,
    /// Stop when every vertex lies within this distance (infinity norm) of the best one.
    pub x_tol: f64,
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: DVector<f64>,
    pub f: f64,
}

pub(crate) fn minimize<F>(mut f: F, x0: DVector<f64>, options: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &DVector<f64>| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Gao & Han adaptive parameters; they reduce to the classic ones at n = 2.
    let dim = n as f64;
    let alpha = 1.0;
    let (gamma, rho, sigma) = if n >= 2 {
        (1.0 + 2.0 / dim, 0.75 - 1.0 / (2.0 * dim), 1.0 - 1.0 / dim)
    } else {
        (2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += options.initial_step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    while iterations < options.max_iterations {
        // Stable sort keeps ties in vertex order, which keeps runs reproducible.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = worst - best;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| (x - &simplex[0].0).amax())
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= options.f_tol) || diameter <= options.x_tol {
            break;
        }
        iterations += 1;

        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, (x, _)| acc + x)
            / dim;
        let reflected = &centroid + (&centroid - &simplex[n].0) * alpha;
        let fr = eval(&reflected);

        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = eval(&expanded);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }

        let (contracted, fc) = if fr < simplex[n].1 {
            let xc = &centroid + (&reflected - &centroid) * rho;
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = &centroid + (&simplex[n].0 - &centroid) * rho;
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (contracted, fc);
            continue;
        }

        // Shrink toward the best vertex.
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = &anchor + (&vertex.0 - &anchor) * sigma;
            let fx = eval(&x);
            *vertex = (x, fx);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f }
}
