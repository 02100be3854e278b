//! Complex arithmetic helpers: disks, damped Newton inversion, boundary-sampled
//! sup norms and reproducible summation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the plane. All persisted values are finite.
pub type ComplexPoint = Complex64;

/// Default residual tolerance for [`newton_invert`].
pub const NEWTON_TOL: f64 = 1e-12;
/// Default iteration cap for [`newton_invert`].
pub const NEWTON_MAX_ITER: usize = 60;
/// Maximum number of step halvings per Newton step.
pub const MAX_HALVINGS: usize = 40;
/// Derivative moduli below this are treated as a critical point.
pub const DERIV_FLOOR: f64 = 1e-14;
/// Default number of boundary samples for sup norms.
pub const DEFAULT_SAMPLES: usize = 128;
/// Chunk length for the deterministic pairwise reductions.
pub const SUM_CHUNK: usize = 1024;

/// Euclidean disk `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: ComplexPoint,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: ComplexPoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::DomainError(format!("disk radius must be positive, got {radius}")));
        }
        if !is_finite(center) {
            return Err(Error::NonFiniteValue("disk center".into()));
        }
        Ok(Disk { center, radius })
    }

    /// Open containment `|z - c| < r`.
    pub fn contains(&self, z: ComplexPoint) -> bool {
        (z - self.center).norm() < self.radius
    }

    /// Closed containment `|z - c| <= r`.
    pub fn contains_closed(&self, z: ComplexPoint) -> bool {
        (z - self.center).norm() <= self.radius
    }

    /// `n` equispaced points on the boundary circle, starting at angle 0.
    pub fn boundary(&self, n: usize) -> Vec<ComplexPoint> {
        boundary_points(self.center, self.radius, n)
    }

    /// Concentric disk with radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Disk {
        Disk { center: self.center, radius: self.radius * factor }
    }
}

pub fn is_finite(z: ComplexPoint) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// `n` equispaced points on the circle `|z - center| = radius`.
pub fn boundary_points(center: ComplexPoint, radius: f64, n: usize) -> Vec<ComplexPoint> {
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            center + Complex64::from_polar(radius, theta)
        })
        .collect()
}

/// Solves `eval(z) = target` by damped Newton iteration from `seed`.
///
/// The residual test is `|eval(z) - target| <= tol * max(1, |target|)`; after it
/// passes one more undamped step is taken when it does not increase the residual.
/// When a step increases the residual it is halved up to [`MAX_HALVINGS`] times.
/// A Newton step below the float resolution at `z` also counts as converged, which
/// matters far out where `|eval'|` is large.
pub fn newton_invert<F, D>(
    target: ComplexPoint,
    seed: ComplexPoint,
    eval: F,
    deriv: D,
    tol: f64,
    max_iter: usize,
) -> Result<ComplexPoint>
where
    F: Fn(ComplexPoint) -> ComplexPoint,
    D: Fn(ComplexPoint) -> ComplexPoint,
{
    if !is_finite(target) || !is_finite(seed) {
        return Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY });
    }
    let scale = tol * target.norm().max(1.0);
    let mut z = seed;
    let mut r = eval(z) - target;
    if !is_finite(r) {
        return Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY });
    }
    for it in 0..max_iter {
        let rn = r.norm();
        let d = deriv(z);
        if !is_finite(d) {
            return Err(Error::NoConvergence { iterations: it, residual: rn });
        }
        if d.norm() < DERIV_FLOOR {
            return Err(Error::DerivativeVanished { re: z.re, im: z.im });
        }
        if rn <= scale {
            // polishing step
            let zp = z - r / d;
            let rp = eval(zp) - target;
            if is_finite(rp) && rp.norm() <= rn {
                return Ok(zp);
            }
            return Ok(z);
        }
        let step = r / d;
        // the residual cannot drop further once the step is below the spacing of floats at z
        if step.norm() <= 4.0 * f64::EPSILON * z.norm().max(1.0) {
            return Ok(z);
        }
        let mut h = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let zn = z - step * h;
            let rnew = eval(zn) - target;
            if is_finite(rnew) && rnew.norm() < rn {
                z = zn;
                r = rnew;
                accepted = true;
                break;
            }
            h *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations: it + 1, residual: rn });
        }
    }
    let rn = r.norm();
    if rn <= scale {
        Ok(z)
    } else {
        Err(Error::NoConvergence { iterations: max_iter, residual: rn })
    }
}

/// Maximum of `|g|` over `samples` equispaced boundary points of `d`.
///
/// By the maximum-modulus principle the true sup over the closed disk is on the
/// boundary, so the sampled value is a lower estimate that converges as the
/// sample count grows.
pub fn sup_norm_on_disk<G>(g: G, d: &Disk, samples: usize) -> Result<f64>
where
    G: Fn(ComplexPoint) -> Result<ComplexPoint>,
{
    if samples < 16 {
        return Err(Error::DomainError(format!("need at least 16 samples, got {samples}")));
    }
    let mut best: f64 = 0.0;
    for p in d.boundary(samples) {
        let v = g(p)?;
        if !is_finite(v) {
            return Err(Error::NonFiniteValue(format!("sample at {p}")));
        }
        best = best.max(v.norm());
    }
    Ok(best)
}

/// Pairwise sum with a fixed tree shape (leaves of [`SUM_CHUNK`] summed left to
/// right), so results do not depend on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= SUM_CHUNK {
        return xs.iter().sum();
    }
    let chunks = xs.len().div_ceil(SUM_CHUNK);
    let mid = (chunks / 2) * SUM_CHUNK;
    let (a, b) = xs.split_at(mid);
    #[cfg(feature = "parallel")]
    {
        if xs.len() >= 64 * SUM_CHUNK {
            let (x, y) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
            return x + y;
        }
    }
    pairwise_sum(a) + pairwise_sum(b)
}

/// `log(sum(exp(xs)))` with the same reduction tree as [`pairwise_sum`].
/// Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// Principal `m`-th root rotated by `2*pi*j/m`.
pub fn rotated_root(w: ComplexPoint, m: u32, j: u32) -> ComplexPoint {
    if m == 1 {
        return w;
    }
    let r = w.norm().powf(1.0 / m as f64);
    let theta = w.arg() / m as f64 + std::f64::consts::TAU * j as f64 / m as f64;
    Complex64::from_polar(r, theta)
}
