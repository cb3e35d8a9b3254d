//! Hessian splitting `H = D - B`, the two-term series inverse
//! `Hhat^{-1} = D^{-1} + D^{-1} B D^{-1}`, the resulting Newton direction,
//! spectral certificates for those operators, and an exact reference solution.
//!
//! `D_ii = alpha f_i''(x_i) + 2 (1 - W_ii)` is local to agent `i`, and `B` is
//! constant: `B_ii = 1 - W_ii`, `B_ij = W_ij`. Applying `Hhat^{-1}` costs two
//! diagonal scalings and one `B` product, so nothing here forms an inverse.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{max_abs_entry, solve_dense, spectral_norm, sym_eigenvalues};
use crate::objective::{ObjectiveError, PenalizedObjective};
use crate::real::{norm2, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplittingError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("reference Newton solve did not reach ||g|| <= {tol:e} within {iterations} iterations (last ||g|| = {grad_norm:e})")]
    MaxIterationsExceeded {
        iterations: usize,
        grad_norm: f64,
        tol: f64,
    },
    #[error("Hessian solve failed (singular pivot)")]
    SingularHessian,
}

/// `D(x)` for a given objective; `B` is read from the objective's network.
#[derive(Debug, Clone)]
pub struct Splitting<'a, T: Real> {
    obj: &'a PenalizedObjective<T>,
    d: Vec<T>,
}

pub fn split<'a, T: Real>(
    obj: &'a PenalizedObjective<T>,
    x: &[T],
) -> Result<Splitting<'a, T>, SplittingError> {
    let curv = obj.curvature(x)?;
    let two = T::of(2.0);
    let d = curv
        .into_iter()
        .enumerate()
        .map(|(i, c)| c + two * (T::one() - obj.w_diag(i)))
        .collect();
    Ok(Splitting { obj, d })
}

impl<'a, T: Real> Splitting<'a, T> {
    pub fn d(&self) -> &[T] {
        &self.d
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn b_diag(&self, i: usize) -> T {
        T::one() - self.obj.w_diag(i)
    }

    /// `B v`.
    pub fn apply_b(&self, v: &[T]) -> Vec<T> {
        (0..self.n())
            .map(|i| {
                self.obj
                    .neighbor_weights(i)
                    .iter()
                    .fold(self.b_diag(i) * v[i], |acc, &(j, w)| acc + w * v[j])
            })
            .collect()
    }

    fn check_len(&self, v: &[T]) -> Result<(), SplittingError> {
        if v.len() == self.n() {
            Ok(())
        } else {
            Err(ObjectiveError::DimensionMismatch {
                expected: self.n(),
                got: v.len(),
            }
            .into())
        }
    }

    /// `Hhat^{-1} v = D^{-1} (v + B D^{-1} v)`.
    pub fn approx_inverse_apply(&self, v: &[T]) -> Result<Vec<T>, SplittingError> {
        self.check_len(v)?;
        let scaled: Vec<T> = v.iter().zip(&self.d).map(|(&vi, &di)| vi / di).collect();
        let mixed = self.apply_b(&scaled);
        Ok(v.iter()
            .zip(&mixed)
            .zip(&self.d)
            .map(|((&vi, &bi), &di)| (vi + bi) / di)
            .collect())
    }
}

/// `d = -Hhat(x)^{-1} g(x)`.
pub fn newton_direction<T: Real>(
    obj: &PenalizedObjective<T>,
    x: &[T],
) -> Result<Vec<T>, SplittingError> {
    let s = split(obj, x)?;
    let g = obj.gradient(x)?;
    Ok(s.approx_inverse_apply(&g)?
        .into_iter()
        .map(|v| -v)
        .collect())
}

/// The same direction in the form each agent evaluates it:
/// `d = D^{-1} (B d0 - g)` with `d0 = -D^{-1} g`.
pub fn newton_direction_local_form<T: Real>(
    obj: &PenalizedObjective<T>,
    x: &[T],
) -> Result<Vec<T>, SplittingError> {
    let s = split(obj, x)?;
    let g = obj.gradient(x)?;
    let d0: Vec<T> = g.iter().zip(s.d()).map(|(&gi, &di)| -gi / di).collect();
    let bd0 = s.apply_b(&d0);
    Ok(bd0
        .iter()
        .zip(&g)
        .zip(s.d())
        .map(|((&b, &gi), &di)| (b - gi) / di)
        .collect())
}

/// Closed-form spectral constants of the splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpectra {
    /// Upper bound on the eigenvalues of `D^{-1/2} B D^{-1/2}`.
    pub rho: f64,
    /// Lower eigenvalue bound of `Hhat^{-1}`.
    pub lambda: f64,
    /// Upper eigenvalue bound of `Hhat^{-1}`.
    pub big_lambda: f64,
}

impl RateSpectra {
    pub fn new(m: f64, big_m: f64, delta: f64, delta_max: f64, alpha: f64) -> Self {
        let rho = 2.0 * (1.0 - delta) / (2.0 * (1.0 - delta) + alpha * m);
        let lambda = 1.0 / (2.0 * (1.0 - delta) + alpha * big_m);
        let big_lambda = (1.0 + rho) / (2.0 * (1.0 - delta_max) + alpha * m);
        Self {
            rho,
            lambda,
            big_lambda,
        }
    }

    pub fn for_objective<T: Real>(obj: &PenalizedObjective<T>) -> Self {
        Self::new(
            obj.m(),
            obj.big_m(),
            obj.net().delta(),
            obj.net().delta_max(),
            obj.alpha(),
        )
    }
}

impl<'a> Splitting<'a, f64> {
    pub fn d_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.d))
    }

    pub fn b_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            b[(i, i)] = self.b_diag(i);
            for &(j, w) in self.obj.neighbor_weights(i) {
                b[(i, j)] = w;
            }
        }
        b
    }

    /// `D^{-1/2} B D^{-1/2}`.
    pub fn normalized_b(&self) -> DMatrix<f64> {
        normalized(&self.d, &self.b_dense())
    }

    /// `Hhat^{-1}` assembled column by column through
    /// [`Splitting::approx_inverse_apply`]; used only for certificates.
    pub fn approx_inverse_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            let col = self
                .approx_inverse_apply(&e)
                .expect("basis vector has length n");
            out.set_column(k, &DVector::from_vec(col));
            e[k] = 0.0;
        }
        out
    }

    /// `D^{-1/2} (sum_{j=0}^{k} N^j) D^{-1/2}` with `N = D^{-1/2} B D^{-1/2}`;
    /// `k = 1` is the two-term inverse used by the algorithm.
    pub fn truncated_inverse_dense(&self, k: usize) -> DMatrix<f64> {
        let n = self.n();
        let nb = self.normalized_b();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for _ in 0..k {
            term = &term * &nb;
            sum += &term;
        }
        let dinv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            self.d.iter().map(|v| 1.0 / v.sqrt()),
        ));
        &dinv_sqrt * sum * &dinv_sqrt
    }

    /// Max-abs entry of `D^{1/2}(I - Hhat^{-1} H) - N^2 D^{1/2}`.
    pub fn identity_residual(&self) -> f64 {
        splitting_identity_residual(&self.d, &self.b_dense())
    }
}

fn normalized(d: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
        b[(i, j)] / (d[i].sqrt() * d[j].sqrt())
    })
}

/// Residual of `D^{1/2}(I - Hhat^{-1} H) = (D^{-1/2} B D^{-1/2})^2 D^{1/2}` for
/// an arbitrary positive diagonal `d` and symmetric `b`, with `H = D - B` and
/// `Hhat^{-1} = D^{-1} + D^{-1} B D^{-1}` both formed densely.
pub fn splitting_identity_residual(d: &[f64], b: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let dm = DMatrix::from_diagonal(&DVector::from_column_slice(d));
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|v| 1.0 / v)));
    let dsqrt = DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|v| v.sqrt())));
    let h = &dm - b;
    let hat_inv = &dinv + &dinv * b * &dinv;
    let lhs = &dsqrt * (DMatrix::identity(n, n) - hat_inv * h);
    let nb = normalized(d, b);
    let rhs = &nb * &nb * &dsqrt;
    max_abs_entry(&(lhs - rhs))
}

/// Measured spectra next to their closed-form bounds at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCertificate {
    pub spectra: RateSpectra,
    pub h_eig: (f64, f64),
    pub h_bounds: (f64, f64),
    pub d_range: (f64, f64),
    pub d_bounds: (f64, f64),
    pub b_eig: (f64, f64),
    pub b_upper: f64,
    pub normalized_b_eig: (f64, f64),
    pub hat_inv_eig: (f64, f64),
    /// `max |H - (D - B)|`.
    pub split_residual: f64,
    pub identity_residual: f64,
}

impl SpectralCertificate {
    /// Every bound holds up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        let within =
            |(lo, hi): (f64, f64), (blo, bhi): (f64, f64)| lo >= blo - tol && hi <= bhi + tol;
        within(self.h_eig, self.h_bounds)
            && within(self.d_range, self.d_bounds)
            && within(self.b_eig, (0.0, self.b_upper))
            && within(self.normalized_b_eig, (0.0, self.spectra.rho))
            && within(
                self.hat_inv_eig,
                (self.spectra.lambda, self.spectra.big_lambda),
            )
    }
}

/// Measures every bounded operator at `x` with a dense symmetric eigensolver.
pub fn spectral_certificate(
    obj: &PenalizedObjective<f64>,
    x: &[f64],
) -> Result<SpectralCertificate, SplittingError> {
    let s = split(obj, x)?;
    let spectra = RateSpectra::for_objective(obj);
    let (m, big_m, alpha) = (obj.m(), obj.big_m(), obj.alpha());
    let (delta, delta_max) = (obj.net().delta(), obj.net().delta_max());
    let range = |v: Vec<f64>| (v[0], v[v.len() - 1]);
    let h = obj.hessian(x)?;
    let b = s.b_dense();
    let split_residual = max_abs_entry(&(&h - (s.d_dense() - &b)));
    let hat = s.approx_inverse_dense();
    let hat_sym = (&hat + hat.transpose()) * 0.5;
    let d_range = s
        .d()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(SpectralCertificate {
        spectra,
        h_eig: range(sym_eigenvalues(&h)),
        h_bounds: (alpha * m, 2.0 * (1.0 - delta) + alpha * big_m),
        d_range,
        d_bounds: (
            2.0 * (1.0 - delta_max) + alpha * m,
            2.0 * (1.0 - delta) + alpha * big_m,
        ),
        b_eig: range(sym_eigenvalues(&b)),
        b_upper: 2.0 * (1.0 - delta),
        normalized_b_eig: range(sym_eigenvalues(&s.normalized_b())),
        hat_inv_eig: range(sym_eigenvalues(&hat_sym)),
        split_residual,
        identity_residual: s.identity_residual(),
    })
}

/// Spectral-norm distance between the `k`-term truncated inverse and `H^{-1}`.
pub fn truncation_error(
    obj: &PenalizedObjective<f64>,
    x: &[f64],
    k: usize,
) -> Result<f64, SplittingError> {
    let s = split(obj, x)?;
    let h_inv = obj
        .hessian(x)?
        .try_inverse()
        .ok_or(SplittingError::SingularHessian)?;
    Ok(spectral_norm(&(s.truncated_inverse_dense(k) - h_inv)))
}

/// Minimizer of the penalized objective, with the data needed to measure
/// objective gaps against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution<T> {
    pub x_star: Vec<T>,
    pub f_star: T,
    /// `g(x*)`, kept so gaps can absorb the solver residual.
    pub grad: Vec<T>,
    pub grad_norm: T,
    pub iterations: usize,
}

pub const REFERENCE_MAX_ITERATIONS: usize = 200;

/// Exact Newton iterations with dense solves, a unit step when it makes
/// progress and halving otherwise, until `||g|| <= tol`.
pub fn reference_solution<T: Real>(
    obj: &PenalizedObjective<T>,
    tol: f64,
) -> Result<ReferenceSolution<T>, SplittingError> {
    if !(tol > 0.0) {
        return Err(SplittingError::InvalidTolerance(tol));
    }
    let n = obj.n();
    let tol_t = T::of(tol);
    let mut x = vec![T::zero(); n];
    let mut g = obj.gradient(&x)?;
    let mut gn = norm2(&g);
    let mut fx = obj.value(&x)?;
    for iteration in 0..=REFERENCE_MAX_ITERATIONS {
        if gn <= tol_t {
            return Ok(ReferenceSolution {
                x_star: x,
                f_star: fx,
                grad: g,
                grad_norm: gn,
                iterations: iteration,
            });
        }
        if iteration == REFERENCE_MAX_ITERATIONS {
            break;
        }
        let curv = obj.curvature(&x)?;
        let mut h = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            h[i][i] = T::one() - obj.w_diag(i) + curv[i];
            for &(j, w) in obj.neighbor_weights(i) {
                h[i][j] = -w;
            }
        }
        let rhs: Vec<T> = g.iter().map(|&v| -v).collect();
        let step = solve_dense(h, rhs).ok_or(SplittingError::SingularHessian)?;
        let slope = step
            .iter()
            .zip(&g)
            .fold(T::zero(), |acc, (&s, &gi)| acc + s * gi);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = x.iter().zip(&step).map(|(&xi, &si)| xi + t * si).collect();
            let f_trial = obj.value(&trial)?;
            let g_trial = obj.gradient(&trial)?;
            let gn_trial = norm2(&g_trial);
            if f_trial <= fx + T::of(1e-4) * t * slope || gn_trial <= T::of(0.5) * gn {
                accepted = Some((trial, f_trial, g_trial, gn_trial));
                break;
            }
            t = t * T::of(0.5);
        }
        match accepted {
            Some((xn, fnew, gnew, gnn)) => {
                x = xn;
                fx = fnew;
                g = gnew;
                gn = gnn;
            }
            None => break,
        }
    }
    Err(SplittingError::MaxIterationsExceeded {
        iterations: REFERENCE_MAX_ITERATIONS,
        grad_norm: gn.as_f64(),
        tol,
    })
}
