//! Catalogued meromorphic families with their analytic metadata, plus
//! evaluation, pole enumeration, local inverse branches and perturbations.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{is_finite, newton_invert, rotated_root, ComplexPoint, Disk, NEWTON_MAX_ITER, NEWTON_TOL};
use crate::error::{Error, Result};

/// Distance to a pole below which evaluation reports [`Error::PoleHit`].
pub const POLE_HIT_RADIUS: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyId {
    /// `mu * tan(z)^m`
    TanPower,
    /// `1 / (z sin z)`
    ZSinZ,
    /// `1 / (z cos sqrt z)`
    ZCosSqrtZ,
    /// `mu / (e^z - p)^k`, a rational function of `e^z`
    RationalExp,
    /// Metadata only (elliptic and Schwarzian examples).
    FormulaOnly,
}

impl FamilyId {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyId::TanPower => "tan",
            FamilyId::ZSinZ => "zsinz",
            FamilyId::ZCosSqrtZ => "zcossqrtz",
            FamilyId::RationalExp => "rational-exp",
            FamilyId::FormulaOnly => "formula-only",
        }
    }
}

/// A meromorphic family `f0` with its analytic constants.
///
/// `mult_bound` bounds the multiplicities of the co-finite pole subset that the
/// constructions draw from; for `ZSinZ` the double pole at 0 lies outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub family_id: FamilyId,
    pub mu: ComplexPoint,
    pub m_power: u32,
    pub order_rho: f64,
    pub beta: f64,
    #[serde(rename = "mult_bound_M")]
    pub mult_bound: u32,
    pub mult_star: u32,
    pub mayer_q: u32,
    pub mayer_alpha: f64,
    #[serde(rename = "mayer_Q")]
    pub mayer_growth: f64,
    pub divergence_type: bool,
    /// Pole of `R` for `RationalExp`; unused otherwise.
    pub rexp_pole: ComplexPoint,
}

impl FamilyDescriptor {
    pub fn tan_power(mu: ComplexPoint, m: u32) -> Result<Self> {
        if m == 0 || mu.norm() == 0.0 || !is_finite(mu) {
            return Err(Error::DomainError("tan power needs m >= 1 and mu != 0".into()));
        }
        let mut d = FamilyDescriptor {
            family_id: FamilyId::TanPower,
            mu,
            m_power: m,
            order_rho: 1.0,
            beta: 0.0,
            mult_bound: m,
            mult_star: m,
            mayer_q: m,
            mayer_alpha: 0.0,
            mayer_growth: 1.0,
            divergence_type: true,
            rexp_pole: Complex64::new(0.0, 0.0),
        };
        d.mayer_growth = d.default_growth_bound();
        Ok(d)
    }

    pub fn z_sin_z() -> Self {
        let mut d = FamilyDescriptor {
            family_id: FamilyId::ZSinZ,
            mu: Complex64::new(1.0, 0.0),
            m_power: 1,
            order_rho: 1.0,
            beta: 1.0,
            mult_bound: 1,
            mult_star: 1,
            mayer_q: 1,
            mayer_alpha: 1.0,
            mayer_growth: 1.0,
            divergence_type: true,
            rexp_pole: Complex64::new(0.0, 0.0),
        };
        d.mayer_growth = d.default_growth_bound();
        d
    }

    pub fn z_cos_sqrt_z() -> Self {
        let mut d = FamilyDescriptor {
            family_id: FamilyId::ZCosSqrtZ,
            mu: Complex64::new(1.0, 0.0),
            m_power: 1,
            order_rho: 0.5,
            beta: 0.5,
            mult_bound: 1,
            mult_star: 1,
            mayer_q: 1,
            mayer_alpha: 0.5,
            mayer_growth: 1.0,
            divergence_type: true,
            rexp_pole: Complex64::new(0.0, 0.0),
        };
        d.mayer_growth = d.default_growth_bound();
        d
    }

    /// `mu / (e^z - p)^k` with `p != 0`.
    pub fn rational_exp(mu: ComplexPoint, p: ComplexPoint, k: u32) -> Result<Self> {
        if k == 0 || p.norm() == 0.0 || mu.norm() == 0.0 {
            return Err(Error::DomainError("rational exponential needs k >= 1, p != 0, mu != 0".into()));
        }
        let mut d = FamilyDescriptor {
            family_id: FamilyId::RationalExp,
            mu,
            m_power: k,
            order_rho: 1.0,
            beta: 0.0,
            mult_bound: k,
            mult_star: k,
            mayer_q: k,
            mayer_alpha: 0.0,
            mayer_growth: 1.0,
            divergence_type: true,
            rexp_pole: p,
        };
        d.mayer_growth = d.default_growth_bound();
        Ok(d)
    }

    /// Metadata-only family (for instance an elliptic function with `rho = 2`, `beta = 0`).
    pub fn formula_only(rho: f64, beta: f64, q: u32) -> Result<Self> {
        if !(rho > 0.0) || beta < 0.0 || q == 0 {
            return Err(Error::DomainError("formula-only family needs rho > 0, beta >= 0, q >= 1".into()));
        }
        Ok(FamilyDescriptor {
            family_id: FamilyId::FormulaOnly,
            mu: Complex64::new(1.0, 0.0),
            m_power: q,
            order_rho: rho,
            beta,
            mult_bound: q,
            mult_star: q,
            mayer_q: q,
            mayer_alpha: 0.0,
            mayer_growth: 1.0,
            divergence_type: true,
            rexp_pole: Complex64::new(0.0, 0.0),
        })
    }

    pub(crate) fn numeric(&self) -> Result<()> {
        if self.family_id == FamilyId::FormulaOnly {
            Err(Error::Unsupported(self.family_id.name().into()))
        } else {
            Ok(())
        }
    }

    /// Upper bound for `|f0'(z)| / |z|^alpha` on preimages of `B(b, s0)` far out,
    /// for the default distinguished pole and stand-off.
    fn default_growth_bound(&self) -> f64 {
        let b = match self.default_mayer_pole() {
            Ok(p) => p.location.norm(),
            Err(_) => return 1.0,
        };
        let s0 = self.default_s0().unwrap_or(0.5);
        let w = b + s0;
        match self.family_id {
            FamilyId::TanPower => {
                // f' = m mu tan^(m-1) sec^2 with tan = (w/mu)^(1/m)
                let m = self.m_power as f64;
                let mu = self.mu.norm();
                let tau = (w / mu).powf(1.0 / m);
                m * mu * tau.powf(m - 1.0) * (1.0 + tau * tau)
            }
            // |f'| ~ |z| |w|^2 and ~ |z|^(1/2) |w|^2 / 2 at the b-points
            FamilyId::ZSinZ => 1.1 * w * w,
            FamilyId::ZCosSqrtZ => 0.55 * w * w,
            FamilyId::RationalExp => {
                // f' = -k mu e^z/(e^z - p)^(k+1) with (e^z - p)^k = mu/w
                let k = self.m_power as f64;
                let mu = self.mu.norm();
                let lo = (mu / w).powf(1.0 / k);
                k * w * (self.rexp_pole.norm() + lo) / lo
            }
            FamilyId::FormulaOnly => 1.0,
        }
    }

    /// Unperturbed `f0(z)`.
    pub fn f0(&self, z: ComplexPoint) -> Result<ComplexPoint> {
        self.numeric()?;
        if self.nearest_pole_distance(z) < POLE_HIT_RADIUS {
            return Err(Error::PoleHit);
        }
        let v = match self.family_id {
            FamilyId::TanPower => self.mu * tan(z).powu(self.m_power),
            FamilyId::ZSinZ => 1.0 / (z * z.sin()),
            FamilyId::ZCosSqrtZ => 1.0 / (z * z.sqrt().cos()),
            FamilyId::RationalExp => self.mu / (z.exp() - self.rexp_pole).powu(self.m_power),
            FamilyId::FormulaOnly => unreachable!(),
        };
        if !is_finite(v) {
            return Err(Error::PoleHit);
        }
        Ok(v)
    }

    /// Unperturbed `f0'(z)`.
    pub fn df0(&self, z: ComplexPoint) -> Result<ComplexPoint> {
        self.numeric()?;
        if self.nearest_pole_distance(z) < POLE_HIT_RADIUS {
            return Err(Error::PoleHit);
        }
        let v = match self.family_id {
            FamilyId::TanPower => {
                let m = self.m_power;
                let c = z.cos();
                self.mu * (m as f64) * tan(z).powu(m - 1) / (c * c)
            }
            FamilyId::ZSinZ => {
                let s = z.sin();
                let g = z * s;
                -(s + z * z.cos()) / (g * g)
            }
            FamilyId::ZCosSqrtZ => {
                let g = self.recip(z);
                -self.drecip(z) / (g * g)
            }
            FamilyId::RationalExp => {
                let e = z.exp();
                let k = self.m_power;
                -self.mu * (k as f64) * e / (e - self.rexp_pole).powu(k + 1)
            }
            FamilyId::FormulaOnly => unreachable!(),
        };
        if !is_finite(v) {
            return Err(Error::PoleHit);
        }
        Ok(v)
    }

    /// `1/f0(z)`, holomorphic across the poles.
    pub fn recip(&self, z: ComplexPoint) -> ComplexPoint {
        match self.family_id {
            FamilyId::TanPower => {
                let (s, c) = (z.sin(), z.cos());
                (c / s).powu(self.m_power) / self.mu
            }
            FamilyId::ZSinZ => z * z.sin(),
            FamilyId::ZCosSqrtZ => z * z.sqrt().cos(),
            FamilyId::RationalExp => (z.exp() - self.rexp_pole).powu(self.m_power) / self.mu,
            FamilyId::FormulaOnly => Complex64::new(f64::NAN, f64::NAN),
        }
    }

    /// Derivative of [`Self::recip`].
    pub fn drecip(&self, z: ComplexPoint) -> ComplexPoint {
        match self.family_id {
            FamilyId::TanPower => {
                let (s, c) = (z.sin(), z.cos());
                let m = self.m_power;
                -(m as f64) * (c / s).powu(m - 1) / (s * s) / self.mu
            }
            FamilyId::ZSinZ => z.sin() + z * z.cos(),
            FamilyId::ZCosSqrtZ => {
                let r = z.sqrt();
                // sqrt(z) sin(sqrt z) is even in sqrt z, so the branch does not matter
                r.cos() - 0.5 * r * r.sin()
            }
            FamilyId::RationalExp => {
                let e = z.exp();
                let k = self.m_power;
                (k as f64) * e * (e - self.rexp_pole).powu(k - 1) / self.mu
            }
            FamilyId::FormulaOnly => Complex64::new(f64::NAN, f64::NAN),
        }
    }

    /// Distance from `z` to the nearest pole (closed form per family).
    pub fn nearest_pole_distance(&self, z: ComplexPoint) -> f64 {
        match self.family_id {
            FamilyId::TanPower => {
                let k = ((z.re - FRAC_PI_2) / PI).round();
                (z - Complex64::new(FRAC_PI_2 + k * PI, 0.0)).norm()
            }
            FamilyId::ZSinZ => {
                let k = (z.re / PI).round();
                (z - Complex64::new(k * PI, 0.0)).norm()
            }
            FamilyId::ZCosSqrtZ => {
                let s = z.sqrt();
                let n0 = (s.re / PI - 0.5).round().max(0.0);
                let mut best = z.norm();
                for n in [n0 - 1.0, n0, n0 + 1.0] {
                    if n >= 0.0 {
                        let a = ((2.0 * n + 1.0) * FRAC_PI_2).powi(2);
                        best = best.min((z - Complex64::new(a, 0.0)).norm());
                    }
                }
                best
            }
            FamilyId::RationalExp => {
                let lp = self.rexp_pole.ln();
                let l = ((z.im - lp.im) / TAU).round();
                (z - Complex64::new(lp.re, lp.im + TAU * l)).norm()
            }
            FamilyId::FormulaOnly => f64::INFINITY,
        }
    }

    /// Leading Laurent coefficient `c` with `f0(z) ~ c/(z-a)^m` at pole `a`.
    fn laurent(&self, a: ComplexPoint, m: u32) -> ComplexPoint {
        match self.family_id {
            FamilyId::TanPower => {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                self.mu * sign
            }
            FamilyId::ZSinZ => {
                if a.norm() < 0.5 {
                    Complex64::new(1.0, 0.0)
                } else {
                    let n = (a.re / PI).round() as i64;
                    let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    Complex64::new(sign, 0.0) / a
                }
            }
            FamilyId::ZCosSqrtZ => {
                if a.norm() < 0.5 {
                    Complex64::new(1.0, 0.0)
                } else {
                    let s = a.re.sqrt();
                    let n = (s / PI - 0.5).round() as i64;
                    let sign = if n.rem_euclid(2) == 0 { -1.0 } else { 1.0 };
                    Complex64::new(2.0 * sign / s, 0.0)
                }
            }
            FamilyId::RationalExp => self.mu / self.rexp_pole.powu(self.m_power),
            FamilyId::FormulaOnly => Complex64::new(f64::NAN, f64::NAN),
        }
    }

    fn pole_record(&self, a: ComplexPoint, m: u32) -> PoleRecord {
        PoleRecord { location: a, multiplicity: m, laurent_coeff: self.laurent(a, m), index: 0 }
    }

    /// Whether a pole belongs to the co-finite subset used by the constructions.
    pub fn in_pstar(&self, p: &PoleRecord) -> bool {
        match self.family_id {
            FamilyId::ZSinZ => p.location.norm() > 0.5,
            // the two smallest poles sit next to the critical values
            FamilyId::ZCosSqrtZ => p.location.norm() > 5.0,
            _ => true,
        }
    }

    /// Singular values of `f0^{-1}`: isolated points plus a closed disk about 0
    /// containing the accumulating critical values.
    pub fn singular_values(&self) -> SingularSet {
        match self.family_id {
            FamilyId::TanPower => {
                let i = Complex64::new(0.0, 1.0);
                let m = self.m_power;
                let mut pts = vec![self.mu * i.powu(m), self.mu * (-i).powu(m)];
                if m >= 2 {
                    pts.push(Complex64::new(0.0, 0.0));
                }
                SingularSet { points: pts, cluster_radius: 0.0 }
            }
            FamilyId::ZSinZ => {
                // first positive root of tan s = -s carries the largest critical value
                let s = real_newton(2.0, |s| s.sin() + s * s.cos(), |s| 2.0 * s.cos() - s * s.sin());
                let v = 1.0 / (s * s.sin()).abs();
                SingularSet { points: vec![Complex64::new(0.0, 0.0)], cluster_radius: 1.01 * v }
            }
            FamilyId::ZCosSqrtZ => {
                // critical points solve tan s = 2/s with s = sqrt z
                let s = real_newton(1.1, |s| s.cos() - 0.5 * s * s.sin(), |s| -1.5 * s.sin() - 0.5 * s * s.cos());
                let v = 1.0 / (s * s * s.cos()).abs();
                SingularSet { points: vec![Complex64::new(0.0, 0.0)], cluster_radius: 1.01 * v }
            }
            FamilyId::RationalExp => {
                let r0 = self.mu / (-self.rexp_pole).powu(self.m_power);
                SingularSet { points: vec![r0, Complex64::new(0.0, 0.0)], cluster_radius: 0.0 }
            }
            FamilyId::FormulaOnly => SingularSet { points: vec![], cluster_radius: 0.0 },
        }
    }

    /// Stand-off radius `R*`: `dist(Sing, a) > 2 R*` for every pole in the
    /// co-finite subset (audited over the first 2000 poles).
    pub fn stand_off(&self) -> Result<f64> {
        self.numeric()?;
        let sing = self.singular_values();
        let poles = enumerate_poles_count(self, 2000)?;
        let mut d = f64::INFINITY;
        for p in poles.iter().filter(|p| self.in_pstar(p)) {
            d = d.min(sing.distance(p.location));
        }
        Ok(0.49 * d)
    }

    /// Separation radius `R†`: disks of this radius about distinct poles are disjoint.
    pub fn separation(&self) -> Result<f64> {
        self.numeric()?;
        let poles = enumerate_poles_count(self, 2000)?;
        let mut d = f64::INFINITY;
        for (i, p) in poles.iter().enumerate() {
            for q in poles.iter().skip(i + 1).take(8) {
                d = d.min((p.location - q.location).norm());
            }
        }
        Ok(0.5 * d)
    }

    /// The distinguished pole used by the Mayer construction.
    pub fn default_mayer_pole(&self) -> Result<PoleRecord> {
        self.numeric()?;
        let a = match self.family_id {
            FamilyId::TanPower => Complex64::new(FRAC_PI_2, 0.0),
            FamilyId::ZSinZ => Complex64::new(PI, 0.0),
            FamilyId::ZCosSqrtZ => Complex64::new(FRAC_PI_2 * FRAC_PI_2, 0.0),
            FamilyId::RationalExp => self.rexp_pole.ln(),
            FamilyId::FormulaOnly => unreachable!(),
        };
        Ok(self.pole_record(a, self.m_power.max(1)))
    }

    /// Radius `s0` of `U0 = B(b, s0)` with `B(b, 2 s0)` free of singular values.
    pub fn default_s0(&self) -> Result<f64> {
        let b = self.default_mayer_pole()?;
        let d = self.singular_values().distance(b.location);
        let sep = self.separation()?;
        Ok((0.45 * d).min(0.9 * sep))
    }

    /// Solutions of `f0(z) = b` with `r_lo <= |z| <= r_hi`, sorted by modulus.
    /// Points within `1e-6` of the origin region used by the closed forms are skipped.
    pub fn b_points(&self, b: ComplexPoint, r_lo: f64, r_hi: f64) -> Result<Vec<ComplexPoint>> {
        self.numeric()?;
        let mut seeds: Vec<ComplexPoint> = Vec::new();
        match self.family_id {
            FamilyId::TanPower => {
                let m = self.m_power;
                let kmax = (r_hi / PI).ceil() as i64 + 2;
                for j in 0..m {
                    let tau = rotated_root(b / self.mu, m, j);
                    let z0 = tau.atan();
                    for k in -kmax..=kmax {
                        seeds.push(z0 + Complex64::new(k as f64 * PI, 0.0));
                    }
                }
            }
            FamilyId::ZSinZ => {
                let kmax = (r_hi / PI).ceil() as i64 + 2;
                for k in (-kmax..=kmax).filter(|k| *k != 0) {
                    let a = k as f64 * PI;
                    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    seeds.push(Complex64::new(a, 0.0) + sign / (b * a));
                }
            }
            FamilyId::ZCosSqrtZ => {
                let nmax = (r_hi.sqrt() / PI).ceil() as i64 + 2;
                for n in 0..=nmax {
                    let s = (2.0 * n as f64 + 1.0) * FRAC_PI_2;
                    let a = s * s;
                    let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
                    seeds.push(Complex64::new(a, 0.0) + sign * 2.0 * s / (a * b));
                }
            }
            FamilyId::RationalExp => {
                let k = self.m_power;
                let lmax = (r_hi / TAU).ceil() as i64 + 2;
                for j in 0..k {
                    let e = self.rexp_pole + rotated_root(self.mu / b, k, j);
                    if e.norm() == 0.0 {
                        continue;
                    }
                    let z0 = e.ln();
                    for l in -lmax..=lmax {
                        seeds.push(z0 + Complex64::new(0.0, TAU * l as f64));
                    }
                }
            }
            FamilyId::FormulaOnly => unreachable!(),
        }
        let mut out = Vec::with_capacity(seeds.len());
        for s in seeds {
            if s.norm() < r_lo * 0.9 || s.norm() > r_hi * 1.1 {
                continue;
            }
            let z = newton_invert(b, s, |z| self.f0(z).unwrap_or(Complex64::new(f64::NAN, f64::NAN)), |z| {
                self.df0(z).unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            }, NEWTON_TOL, NEWTON_MAX_ITER)?;
            if z.norm() >= r_lo && z.norm() <= r_hi {
                out.push(z);
            }
        }
        out.sort_by(|a, b| cmp_modulus(*a, *b));
        out.dedup_by(|a, b| (*a - *b).norm() < 1e-9 * (1.0 + a.norm()));
        Ok(out)
    }
}

fn real_newton(x0: f64, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> f64 {
    let mut x = x0;
    for _ in 0..100 {
        let step = g(x) / dg(x);
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Order by modulus, ties broken by argument.
pub fn cmp_modulus(a: ComplexPoint, b: ComplexPoint) -> std::cmp::Ordering {
    a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg()))
}

/// Singular values as isolated points plus the disk `B̄(0, cluster_radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSet {
    pub points: Vec<ComplexPoint>,
    pub cluster_radius: f64,
}

impl SingularSet {
    pub fn distance(&self, z: ComplexPoint) -> f64 {
        let mut d = if self.cluster_radius > 0.0 { (z.norm() - self.cluster_radius).max(0.0) } else { f64::INFINITY };
        for p in &self.points {
            d = d.min((z - p).norm());
        }
        d
    }
}

/// One pole with multiplicity and leading Laurent coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleRecord {
    pub location: ComplexPoint,
    pub multiplicity: u32,
    pub laurent_coeff: ComplexPoint,
    pub index: usize,
}

/// All poles with `|a| <= max_modulus`, sorted by modulus.
pub fn enumerate_poles(fam: &FamilyDescriptor, max_modulus: f64) -> Result<Vec<PoleRecord>> {
    fam.numeric()?;
    let mut out = Vec::new();
    match fam.family_id {
        FamilyId::TanPower => {
            let kmax = (max_modulus / PI).ceil() as i64 + 1;
            for k in -kmax - 1..=kmax {
                let a = FRAC_PI_2 + k as f64 * PI;
                if a.abs() <= max_modulus {
                    out.push(fam.pole_record(Complex64::new(a, 0.0), fam.m_power));
                }
            }
        }
        FamilyId::ZSinZ => {
            let kmax = (max_modulus / PI).floor() as i64;
            for k in -kmax..=kmax {
                let a = k as f64 * PI;
                if a.abs() <= max_modulus {
                    let m = if k == 0 { 2 } else { 1 };
                    out.push(fam.pole_record(Complex64::new(a, 0.0), m));
                }
            }
        }
        FamilyId::ZCosSqrtZ => {
            out.push(fam.pole_record(Complex64::new(0.0, 0.0), 1));
            let mut n = 0u64;
            loop {
                let a = ((2 * n + 1) as f64 * FRAC_PI_2).powi(2);
                if a > max_modulus {
                    break;
                }
                out.push(fam.pole_record(Complex64::new(a, 0.0), 1));
                n += 1;
            }
        }
        FamilyId::RationalExp => {
            let lp = fam.rexp_pole.ln();
            let lmax = (max_modulus / TAU).ceil() as i64 + 1;
            for l in -lmax..=lmax {
                let a = Complex64::new(lp.re, lp.im + TAU * l as f64);
                if a.norm() <= max_modulus {
                    out.push(fam.pole_record(a, fam.m_power));
                }
            }
        }
        FamilyId::FormulaOnly => unreachable!(),
    }
    out.sort_by(|a, b| cmp_modulus(a.location, b.location));
    for (i, p) in out.iter_mut().enumerate() {
        p.index = i;
    }
    Ok(out)
}

/// The first `count` poles in modulus order.
pub fn enumerate_poles_count(fam: &FamilyDescriptor, count: usize) -> Result<Vec<PoleRecord>> {
    fam.numeric()?;
    let mut r = 16.0;
    loop {
        let mut v = enumerate_poles(fam, r)?;
        // poles tied in modulus with the cut-off must all be present
        if v.len() > count && v[count].location.norm() > v[count - 1].location.norm() * (1.0 + 1e-12) || v.len() > 2 * count + 8 {
            v.truncate(count);
            return Ok(v);
        }
        r *= 2.0;
    }
}

/// Additive and multiplicative perturbation at one time step: `f_n = lambda f0 + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStep {
    pub c: ComplexPoint,
    pub lambda: ComplexPoint,
}

impl PerturbationStep {
    pub fn identity() -> Self {
        PerturbationStep { c: Complex64::new(0.0, 0.0), lambda: Complex64::new(1.0, 0.0) }
    }

    pub fn is_identity(&self) -> bool {
        self.c.norm() == 0.0 && self.lambda == Complex64::new(1.0, 0.0)
    }

    /// `|c| < epsilon` and `lambda, 1/lambda` in `B(1, delta)`; the identity is always admissible.
    pub fn admissible(&self, epsilon: f64, delta: f64) -> bool {
        let one = Complex64::new(1.0, 0.0);
        let c_ok = self.c.norm() == 0.0 || self.c.norm() < epsilon;
        let l_ok = self.lambda == one || ((self.lambda - one).norm() < delta && (one / self.lambda - one).norm() < delta);
        c_ok && l_ok
    }

    /// Pulls a value of `f_n` back to a value of `f0`.
    pub fn unshift(&self, w: ComplexPoint) -> ComplexPoint {
        (w - self.c) / self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationMode {
    Zero,
    ConstantShift,
    RandomInBall,
    UserList,
}

/// A deterministic sequence of perturbation steps indexed from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSequence {
    pub mode: PerturbationMode,
    pub epsilon: f64,
    pub delta: f64,
    pub rng_seed: u64,
    /// Constant step for `ConstantShift`.
    pub constant: PerturbationStep,
    /// Explicit steps for `UserList`; step `n` is `steps[n-1]`, identity past the end.
    pub steps: Vec<PerturbationStep>,
    /// When false, `RandomInBall` keeps `lambda = 1` (additive perturbations only).
    pub multiplicative: bool,
}

impl PerturbationSequence {
    pub fn zero() -> Self {
        PerturbationSequence {
            mode: PerturbationMode::Zero,
            epsilon: 0.0,
            delta: 0.0,
            rng_seed: 0,
            constant: PerturbationStep::identity(),
            steps: vec![],
            multiplicative: true,
        }
    }

    pub fn constant_shift(c: ComplexPoint, epsilon: f64) -> Self {
        PerturbationSequence {
            mode: PerturbationMode::ConstantShift,
            epsilon,
            delta: 0.0,
            rng_seed: 0,
            constant: PerturbationStep { c, lambda: Complex64::new(1.0, 0.0) },
            steps: vec![],
            multiplicative: false,
        }
    }

    pub fn random_in_ball(epsilon: f64, delta: f64, seed: u64) -> Self {
        PerturbationSequence {
            mode: PerturbationMode::RandomInBall,
            epsilon,
            delta,
            rng_seed: seed,
            constant: PerturbationStep::identity(),
            steps: vec![],
            multiplicative: delta > 0.0,
        }
    }

    pub fn user_list(steps: Vec<PerturbationStep>, epsilon: f64, delta: f64) -> Self {
        PerturbationSequence {
            mode: PerturbationMode::UserList,
            epsilon,
            delta,
            rng_seed: 0,
            constant: PerturbationStep::identity(),
            steps,
            multiplicative: true,
        }
    }

    /// Step `n >= 1`. Random steps come from an independent ChaCha stream per `n`,
    /// so the value does not depend on evaluation order.
    pub fn step(&self, n: usize) -> PerturbationStep {
        match self.mode {
            PerturbationMode::Zero => PerturbationStep::identity(),
            PerturbationMode::ConstantShift => self.constant,
            PerturbationMode::UserList => {
                if n >= 1 && n <= self.steps.len() {
                    self.steps[n - 1]
                } else {
                    PerturbationStep::identity()
                }
            }
            PerturbationMode::RandomInBall => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                rng.set_stream(n as u64);
                let r = self.epsilon * rng.gen::<f64>().sqrt();
                let th = TAU * rng.gen::<f64>();
                let c = Complex64::from_polar(r, th);
                let lambda = if self.multiplicative && self.delta > 0.0 {
                    // |lambda - 1| < delta/(1+delta) keeps 1/lambda in B(1, delta) too
                    let dl = self.delta / (1.0 + self.delta);
                    let r = dl * rng.gen::<f64>().sqrt();
                    let th = TAU * rng.gen::<f64>();
                    Complex64::new(1.0, 0.0) + Complex64::from_polar(r, th)
                } else {
                    Complex64::new(1.0, 0.0)
                };
                PerturbationStep { c, lambda }
            }
        }
    }

    pub fn is_additive(&self) -> bool {
        match self.mode {
            PerturbationMode::Zero => true,
            PerturbationMode::ConstantShift => self.constant.lambda == Complex64::new(1.0, 0.0),
            PerturbationMode::RandomInBall => !self.multiplicative || self.delta == 0.0,
            PerturbationMode::UserList => self.steps.iter().all(|s| s.lambda == Complex64::new(1.0, 0.0)),
        }
    }

    /// Checks steps `1..=n` against the sequence's own budget.
    pub fn validate(&self, n: usize) -> Result<()> {
        for k in 1..=n {
            let s = self.step(k);
            if !s.admissible(self.epsilon, self.delta) {
                return Err(Error::ConfigInfeasible(format!(
                    "perturbation step {k} (c = {}, lambda = {}) violates |c| < {} or lambda in B(1, {})",
                    s.c, s.lambda, self.epsilon, self.delta
                )));
            }
        }
        Ok(())
    }
}

/// `sin z / cos z`. The library `tan` goes through `cos 2x + cosh 2y`, which
/// cancels next to the poles and loses about `|z - pole|^{-2}` ulps.
fn tan(z: ComplexPoint) -> ComplexPoint {
    if z.im.abs() > 20.0 {
        return Complex64::new(0.0, z.im.signum());
    }
    z.sin() / z.cos()
}

/// `lambda f0(z) + c`.
pub fn evaluate(fam: &FamilyDescriptor, step: &PerturbationStep, z: ComplexPoint) -> Result<ComplexPoint> {
    Ok(step.lambda * fam.f0(z)? + step.c)
}

/// `lambda f0'(z)`; the additive shift drops out.
pub fn derivative(fam: &FamilyDescriptor, step: &PerturbationStep, z: ComplexPoint) -> Result<ComplexPoint> {
    Ok(step.lambda * fam.df0(z)?)
}

/// A holomorphic inverse branch of `f_n = lambda f0 + c` landing next to a pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseBranch {
    pub source_disk: Disk,
    pub target_pole: PoleRecord,
    pub branch_index: u32,
    pub perturbation: PerturbationStep,
    pub family: FamilyDescriptor,
}

impl InverseBranch {
    /// Preimage of `w` near the target pole together with the branch derivative.
    pub fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        let u = self.perturbation.unshift(w);
        let p = &self.target_pole;
        let seed = p.location + rotated_root(p.laurent_coeff / u, p.multiplicity, self.branch_index);
        let target = 1.0 / u;
        let fam = &self.family;
        // Newton on 1/f0, which is holomorphic at the pole
        let z = newton_invert(target, seed, |z| fam.recip(z), |z| fam.drecip(z), NEWTON_TOL, NEWTON_MAX_ITER)?;
        let g = fam.recip(z);
        let dg = fam.drecip(z);
        // (f_n^{-1})' = 1/(lambda f0'(z)) and 1/f0' = -g^2/g'
        let d = -(g * g) / (dg * self.perturbation.lambda);
        if !is_finite(d) {
            return Err(Error::NonFiniteValue("branch derivative".into()));
        }
        Ok((z, d))
    }

    pub fn value(&self, w: ComplexPoint) -> Result<ComplexPoint> {
        Ok(self.eval(w)?.0)
    }

    pub fn deriv(&self, w: ComplexPoint) -> Result<ComplexPoint> {
        Ok(self.eval(w)?.1)
    }

    /// Checks at `samples` boundary points (and the center) that the branch lands in `target`.
    pub fn maps_into(&self, target: &Disk, samples: usize) -> Result<bool> {
        let mut pts = self.source_disk.boundary(samples);
        pts.push(self.source_disk.center);
        for w in pts {
            if !target.contains_closed(self.value(w)?) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Inverse branch of `f_n = lambda f0 + c` near a regular preimage `anchor` of `anchor_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularBranch {
    pub anchor: ComplexPoint,
    pub anchor_value: ComplexPoint,
    pub anchor_deriv: ComplexPoint,
    pub perturbation: PerturbationStep,
    pub family: FamilyDescriptor,
}

impl RegularBranch {
    pub fn new(fam: &FamilyDescriptor, anchor: ComplexPoint, step: PerturbationStep) -> Result<Self> {
        let v = fam.f0(anchor)?;
        let d = fam.df0(anchor)?;
        if d.norm() < crate::complex::DERIV_FLOOR {
            return Err(Error::DerivativeVanished { re: anchor.re, im: anchor.im });
        }
        Ok(RegularBranch { anchor, anchor_value: v, anchor_deriv: d, perturbation: step, family: *fam })
    }

    pub fn eval(&self, w: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
        let u = self.perturbation.unshift(w);
        let seed = self.anchor + (u - self.anchor_value) / self.anchor_deriv;
        let fam = &self.family;
        let nan = Complex64::new(f64::NAN, f64::NAN);
        let z = newton_invert(u, seed, |z| fam.f0(z).unwrap_or(nan), |z| fam.df0(z).unwrap_or(nan), NEWTON_TOL, NEWTON_MAX_ITER)?;
        let d = 1.0 / (self.perturbation.lambda * fam.df0(z)?);
        Ok((z, d))
    }
}

/// Builds the inverse branch of `f_n` on `domain` that lands next to `pole`,
/// using root index `j` in `1..=m(pole)`.
pub fn local_branch(
    fam: &FamilyDescriptor,
    step: &PerturbationStep,
    pole: &PoleRecord,
    j: u32,
    domain: Disk,
) -> Result<InverseBranch> {
    fam.numeric()?;
    if j == 0 || j > pole.multiplicity {
        return Err(Error::BranchDomainInvalid(format!("branch index {j} outside 1..={}", pole.multiplicity)));
    }
    let sing = fam.singular_values();
    let pulled = Disk { center: step.unshift(domain.center), radius: domain.radius / step.lambda.norm() };
    let mut pts = domain.boundary(32);
    pts.push(domain.center);
    for w in pts {
        let u = step.unshift(w);
        if sing.distance(u) <= 0.0 || u.norm() == 0.0 {
            return Err(Error::BranchDomainInvalid(format!("domain meets a singular value near {u}")));
        }
    }
    if sing.distance(pulled.center) <= pulled.radius {
        return Err(Error::BranchDomainInvalid(format!(
            "pulled-back domain B({}, {}) meets the singular set",
            pulled.center, pulled.radius
        )));
    }
    Ok(InverseBranch { source_disk: domain, target_pole: *pole, branch_index: j, perturbation: *step, family: *fam })
}

/// `rho M / (beta + M + 1)`.
pub fn theoretical_dimension(rho: f64, beta: f64, m: u32) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::DomainError(format!("rho must be positive, got {rho}")));
    }
    if beta < 0.0 || m == 0 {
        return Err(Error::DomainError("need beta >= 0 and M >= 1".into()));
    }
    let m = m as f64;
    Ok(rho * m / (beta + m + 1.0))
}

/// `rho / (alpha + 1 + 1/q)`.
pub fn mayer_dimension(rho: f64, alpha: f64, q: u32) -> Result<f64> {
    if q == 0 {
        return Err(Error::DomainError("q must be at least 1".into()));
    }
    let den = alpha + 1.0 + 1.0 / q as f64;
    if !(den > 0.0) {
        return Err(Error::DomainError(format!("alpha = {alpha} must exceed -1 - 1/q")));
    }
    if !(rho > 0.0) {
        return Err(Error::DomainError(format!("rho must be positive, got {rho}")));
    }
    Ok(rho / den)
}

/// Comparability audit of the inverse-branch derivative estimate
/// `|(f^{-1})'(w)| ~ |w|^{-(m+1)/m} |a|^{-beta/m}`.
///
/// Branches land next to each of `targets` from the circle of radius `radius`
/// around each of `sources`; returns the worst ratio in either direction.
pub fn branch_comparability(
    fam: &FamilyDescriptor,
    targets: &[PoleRecord],
    sources: &[ComplexPoint],
    radius: f64,
    samples: usize,
) -> Result<f64> {
    let mut worst: f64 = 1.0;
    for a in targets {
        for s in sources {
            let dom = Disk::new(*s, radius)?;
            let br = local_branch(fam, &PerturbationStep::identity(), a, 1, dom)?;
            let m = a.multiplicity as f64;
            let mut pts = dom.boundary(samples);
            pts.push(*s);
            for w in pts {
                let d = br.deriv(w)?.norm();
                let model = w.norm().powf(-(m + 1.0) / m) * a.location.norm().powf(-fam.beta / m);
                let r = d / model;
                worst = worst.max(r).max(1.0 / r);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> ComplexPoint {
        Complex64::new(re, im)
    }

    #[test]
    fn tan_values_and_shift() {
        let f = FamilyDescriptor::tan_power(c(1.0, 0.0), 1).unwrap();
        let z = c(std::f64::consts::FRAC_PI_4, 0.0);
        assert!((evaluate(&f, &PerturbationStep::identity(), z).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        let s = PerturbationStep { c: c(0.01, 0.0), lambda: c(1.0, 0.0) };
        assert!((evaluate(&f, &s, z).unwrap() - c(1.01, 0.0)).norm() < 1e-15);
        assert!((derivative(&f, &PerturbationStep::identity(), c(0.0, 0.0)).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn derivative_linear_in_lambda() {
        let f = FamilyDescriptor::z_sin_z();
        let z = c(2.3, 0.4);
        let d1 = derivative(&f, &PerturbationStep::identity(), z).unwrap();
        let d2 = derivative(&f, &PerturbationStep { c: c(0.3, 0.1), lambda: c(2.0, 0.0) }, z).unwrap();
        assert_eq!(d2, 2.0 * d1);
    }

    #[test]
    fn pole_hit_detected() {
        let f = FamilyDescriptor::z_sin_z();
        assert_eq!(f.f0(c(PI, 0.0)), Err(Error::PoleHit));
        let g = FamilyDescriptor::formula_only(2.0, 0.0, 3).unwrap();
        assert!(matches!(g.f0(c(1.0, 0.0)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn tan_poles_to_five() {
        let f = FamilyDescriptor::tan_power(c(1.0, 0.0), 1).unwrap();
        let p = enumerate_poles(&f, 5.0).unwrap();
        let locs: Vec<f64> = p.iter().map(|p| p.location.re).collect();
        assert_eq!(locs.len(), 4);
        assert!((locs[0].abs() - FRAC_PI_2).abs() < 1e-15 && (locs[1].abs() - FRAC_PI_2).abs() < 1e-15);
        assert!((locs[2].abs() - 3.0 * FRAC_PI_2).abs() < 1e-15);
        assert!(p.iter().enumerate().all(|(i, q)| q.index == i));
    }

    #[test]
    fn zsinz_poles_and_multiplicities() {
        let f = FamilyDescriptor::z_sin_z();
        let p = enumerate_poles(&f, 10.0).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p[0].multiplicity, 2);
        assert!(p[1..].iter().all(|q| q.multiplicity == 1));
        assert!(!f.in_pstar(&p[0]));
    }

    #[test]
    fn zcossqrtz_poles() {
        let f = FamilyDescriptor::z_cos_sqrt_z();
        let p = enumerate_poles(&f, 30.0).unwrap();
        assert!((p[1].location.re - 2.4674011002723395).abs() < 1e-12);
        assert!((p[2].location.re - 22.206609902451056).abs() < 1e-10);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn laurent_coefficients_match_function() {
        for f in [
            FamilyDescriptor::tan_power(c(1.5, 0.5), 2).unwrap(),
            FamilyDescriptor::z_sin_z(),
            FamilyDescriptor::z_cos_sqrt_z(),
            FamilyDescriptor::rational_exp(c(1.0, 0.0), c(std::f64::consts::E, 0.0), 2).unwrap(),
        ] {
            for p in enumerate_poles_count(&f, 12).unwrap() {
                let h = 1e-5;
                let z = p.location + c(h, 0.0);
                let approx = f.f0(z).unwrap() * c(h, 0.0).powu(p.multiplicity);
                let rel = (approx - p.laurent_coeff).norm() / p.laurent_coeff.norm();
                assert!(rel < 1e-3, "{:?} pole {} rel {}", f.family_id, p.location, rel);
            }
        }
    }

    #[test]
    fn branch_round_trip_tan() {
        let f = FamilyDescriptor::tan_power(c(1.0, 0.0), 1).unwrap();
        let pole = enumerate_poles(&f, 2.0).unwrap().into_iter().find(|p| p.location.re > 0.0).unwrap();
        let dom = Disk::new(c(5.0, 1.0), 1.0).unwrap();
        let br = local_branch(&f, &PerturbationStep::identity(), &pole, 1, dom).unwrap();
        for w in dom.boundary(32) {
            let z = br.value(w).unwrap();
            assert!((f.f0(z).unwrap() - w).norm() < 1e-10);
            assert!((z - pole.location).norm() < 0.5);
        }
    }

    #[test]
    fn branch_index_out_of_range() {
        let f = FamilyDescriptor::z_sin_z();
        let pole = enumerate_poles(&f, 4.0).unwrap()[1];
        let dom = Disk::new(c(-3.09, 0.0), 0.3).unwrap();
        assert!(matches!(
            local_branch(&f, &PerturbationStep::identity(), &pole, 2, dom),
            Err(Error::BranchDomainInvalid(_))
        ));
    }

    #[test]
    fn branch_rejects_singular_domain() {
        let f = FamilyDescriptor::tan_power(c(1.0, 0.0), 1).unwrap();
        let pole = enumerate_poles(&f, 2.0).unwrap()[0];
        let dom = Disk::new(c(0.0, 1.2), 0.5).unwrap();
        assert!(matches!(
            local_branch(&f, &PerturbationStep::identity(), &pole, 1, dom),
            Err(Error::BranchDomainInvalid(_))
        ));
    }

    #[test]
    fn formulas() {
        assert_eq!(theoretical_dimension(1.0, 1.0, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(theoretical_dimension(0.5, 0.5, 1).unwrap(), 0.2);
        assert!(theoretical_dimension(0.0, 1.0, 1).is_err());
        assert_eq!(mayer_dimension(1.0, 0.0, 1).unwrap(), 0.5);
        assert!(mayer_dimension(1.0, -2.5, 1).is_err());
    }

    #[test]
    fn random_steps_deterministic_and_admissible() {
        let s = PerturbationSequence::random_in_ball(0.01, 0.01, 42);
        for n in 1..200 {
            assert_eq!(s.step(n), s.step(n));
            assert!(s.step(n).admissible(0.01, 0.01));
        }
        assert_ne!(s.step(1), s.step(2));
        assert!(s.validate(500).is_ok());
        assert!(PerturbationSequence::zero().step(7).is_identity());
    }

    #[test]
    fn b_points_solve() {
        let f = FamilyDescriptor::tan_power(c(1.0, 0.0), 1).unwrap();
        let b = c(FRAC_PI_2, 0.0);
        let pts = f.b_points(b, 1.0, 20.0).unwrap();
        assert!(!pts.is_empty());
        for z in &pts {
            assert!((f.f0(*z).unwrap() - b).norm() < 1e-10);
        }
        assert!(pts.windows(2).all(|w| w[0].norm() <= w[1].norm()));
        for f in [FamilyDescriptor::z_sin_z(), FamilyDescriptor::z_cos_sqrt_z()] {
            let b = f.default_mayer_pole().unwrap().location;
            let pts = f.b_points(b, 5.0, 500.0).unwrap();
            assert!(pts.len() > 3);
            for z in &pts {
                assert!((f.f0(*z).unwrap() - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_sets() {
        let f = FamilyDescriptor::z_sin_z();
        let s = f.singular_values();
        assert!((s.cluster_radius / 1.01 - 0.5497).abs() < 1e-3);
        assert!(f.stand_off().unwrap() > 1.0);
        let g = FamilyDescriptor::z_cos_sqrt_z();
        assert!(g.singular_values().cluster_radius > 1.0);
    }
}
