//! Möbius maps on the extended plane, per-handle Schottky parameters and the
//! Möbius action on parameter space.
//!
//! A handle is given by its repelling/attracting fixed points and multiplier
//! `q`. The equivalent sewing coordinates are the two pole centers `w_±` and
//! the sewing parameter `rho`, in which the generator reads
//! `z ↦ w_- + rho/(z - w_+)`.

use crate::schottky::SchottkyData;
use crate::{Cx, Error, Result};
use serde::{Deserialize, Serialize};

/// A point of the Riemann sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Point {
    Finite(Cx),
    Infinity,
}

impl Point {
    pub fn finite(self) -> Option<Cx> {
        match self {
            Point::Finite(z) => Some(z),
            Point::Infinity => None,
        }
    }
}

impl From<Cx> for Point {
    fn from(z: Cx) -> Self {
        Point::Finite(z)
    }
}

/// An element of SL₂(ℂ), stored with unit determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobiusMap {
    pub a: Cx,
    pub b: Cx,
    pub c: Cx,
    pub d: Cx,
}

impl MobiusMap {
    /// Builds the map from any invertible matrix, rescaling to determinant one.
    pub fn new(a: Cx, b: Cx, c: Cx, d: Cx) -> Result<Self> {
        let det = a * d - b * c;
        if det.norm() == 0.0 || !det.is_finite() {
            return Err(Error::DegenerateHandle("singular Möbius matrix".into()));
        }
        let s = det.sqrt();
        Ok(Self {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        })
    }

    pub fn identity() -> Self {
        let one = Cx::new(1.0, 0.0);
        let zero = Cx::new(0.0, 0.0);
        Self {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    pub fn translation(t: Cx) -> Self {
        let one = Cx::new(1.0, 0.0);
        Self {
            a: one,
            b: t,
            c: Cx::new(0.0, 0.0),
            d: one,
        }
    }

    pub fn det(&self) -> Cx {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> Cx {
        self.a + self.d
    }

    /// Matrix product `self · other`, i.e. the map `z ↦ self(other(z))`.
    pub fn compose(&self, other: &MobiusMap) -> MobiusMap {
        // No renormalization: for long words `ad - bc` is lost to
        // cancellation, while the product of unimodular factors is already
        // unimodular up to rounding.
        MobiusMap {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn inverse(&self) -> MobiusMap {
        MobiusMap {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        match p {
            Point::Infinity => {
                if self.c.norm() == 0.0 {
                    Point::Infinity
                } else {
                    Point::Finite(self.a / self.c)
                }
            }
            Point::Finite(z) => {
                let den = self.c * z + self.d;
                if den.norm() == 0.0 {
                    Point::Infinity
                } else {
                    Point::Finite((self.a * z + self.b) / den)
                }
            }
        }
    }

    /// Applies the map to a finite point known to avoid the pole.
    pub fn map(&self, z: Cx) -> Cx {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// Derivative `1/(cz + d)²`.
    pub fn derivative(&self, z: Cx) -> Cx {
        let den = self.c * z + self.d;
        1.0 / (den * den)
    }

    /// Second derivative `-2c/(cz + d)³`.
    pub fn second_derivative(&self, z: Cx) -> Cx {
        let den = self.c * z + self.d;
        -2.0 * self.c / (den * den * den)
    }

    /// Multiplier with modulus at most one, from the trace via
    /// `q + 1/q + 2 = tr²`.
    pub fn multiplier(&self) -> Cx {
        let t = self.trace();
        let disc = (t * t - 4.0).sqrt();
        let big = if (t + disc).norm() >= (t - disc).norm() {
            (t + disc) / 2.0
        } else {
            (t - disc) / 2.0
        };
        1.0 / (big * big)
    }

    /// Attracting and repelling fixed points of a loxodromic map.
    pub fn fixed_points(&self) -> (Point, Point) {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let roots: [Point; 2] = if c.norm() < 1e-300 {
            // One fixed point at infinity, the other at b/(d - a).
            [Point::Infinity, Point::Finite(b / (d - a))]
        } else {
            let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
            [
                Point::Finite((a - d + disc) / (2.0 * c)),
                Point::Finite((a - d - disc) / (2.0 * c)),
            ]
        };
        let rate = |p: Point| match p {
            Point::Finite(z) => self.derivative(z).norm(),
            // At infinity the local multiplier is (c·∞ + d)^-2 in the chart 1/z, i.e. d².
            Point::Infinity => (d * d).norm(),
        };
        if rate(roots[0]) < rate(roots[1]) {
            (roots[0], roots[1])
        } else {
            (roots[1], roots[0])
        }
    }

    pub fn max_entry_distance(&self, other: &MobiusMap) -> f64 {
        [
            self.a - other.a,
            self.b - other.b,
            self.c - other.c,
            self.d - other.d,
        ]
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
    }

    /// Entrywise distance allowing for the overall sign ambiguity of SL₂.
    pub fn projective_distance(&self, other: &MobiusMap) -> f64 {
        let neg = MobiusMap {
            a: -other.a,
            b: -other.b,
            c: -other.c,
            d: -other.d,
        };
        self.max_entry_distance(other)
            .min(self.max_entry_distance(&neg))
    }
}

/// One handle: fixed points, multiplier and the derived sewing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleParams {
    /// Repelling fixed point, inside the plus-disk.
    pub repelling: Cx,
    /// Attracting fixed point, inside the minus-disk.
    pub attracting: Cx,
    pub multiplier: Cx,
    /// Pole of the inverse generator, center of the plus-disk.
    pub center_plus: Cx,
    /// Pole of the generator, center of the minus-disk.
    pub center_minus: Cx,
    pub rho: Cx,
}

impl HandleParams {
    /// Derives the sewing parameters from fixed points and multiplier.
    pub fn derive(repelling: Cx, attracting: Cx, multiplier: Cx) -> Result<Self> {
        let q = multiplier;
        if (repelling - attracting).norm() == 0.0 {
            return Err(Error::DegenerateHandle("coincident fixed points".into()));
        }
        if !(q.norm() > 0.0 && q.norm() < 1.0) {
            return Err(Error::DegenerateHandle(format!(
                "multiplier modulus {} outside (0,1)",
                q.norm()
            )));
        }
        let one_minus_q = 1.0 - q;
        let gap = repelling - attracting;
        Ok(Self {
            repelling,
            attracting,
            multiplier: q,
            center_plus: (repelling - q * attracting) / one_minus_q,
            center_minus: (attracting - q * repelling) / one_minus_q,
            rho: -q * gap * gap / (one_minus_q * one_minus_q),
        })
    }

    /// Inverse of [`HandleParams::derive`]: recovers fixed points and
    /// multiplier from the sewing parameters.
    pub fn from_sewing(center_plus: Cx, center_minus: Cx, rho: Cx) -> Result<Self> {
        if rho.norm() == 0.0 {
            return Err(Error::DegenerateHandle("zero sewing parameter".into()));
        }
        // Fixed points solve (z - w_-)(z - w_+) = rho.
        let sum = center_plus + center_minus;
        let diff = center_plus - center_minus;
        let disc = (diff * diff + 4.0 * rho).sqrt();
        let r1 = (sum + disc) / 2.0;
        let r2 = (sum - disc) / 2.0;
        let (repelling, attracting) = if (r1 - center_plus).norm() <= (r2 - center_plus).norm() {
            (r1, r2)
        } else {
            (r2, r1)
        };
        let gen = MobiusMap::new(
            center_minus,
            rho - center_plus * center_minus,
            Cx::new(1.0, 0.0),
            -center_plus,
        )?;
        let q = gen.multiplier();
        let h = Self::derive(repelling, attracting, q)?;
        Ok(Self {
            center_plus,
            center_minus,
            rho,
            ..h
        })
    }

    /// Generator (`sign = +1`) or its inverse (`sign = -1`).
    pub fn generator_map(&self, sign: i32) -> MobiusMap {
        let (w_from, w_to) = if sign > 0 {
            (self.center_plus, self.center_minus)
        } else {
            (self.center_minus, self.center_plus)
        };
        MobiusMap::new(w_to, self.rho - w_from * w_to, Cx::new(1.0, 0.0), -w_from)
            .expect("nonzero rho gives an invertible generator")
    }

    /// Generator built from the fixed-point conjugation to `diag(q^{1/2}, q^{-1/2})`.
    pub fn generator_from_fixed_points(&self) -> MobiusMap {
        let one = Cx::new(1.0, 0.0);
        let sigma = MobiusMap::new(one, -self.attracting, one, -self.repelling)
            .expect("distinct fixed points");
        let sq = self.multiplier.sqrt();
        let diag = MobiusMap {
            a: sq,
            b: Cx::new(0.0, 0.0),
            c: Cx::new(0.0, 0.0),
            d: 1.0 / sq,
        };
        sigma.inverse().compose(&diag).compose(&sigma)
    }

    /// The factor maps `(λ, μ)` with `λ z = s⁻¹(z - w_a)` and
    /// `μ z = s/(z - w_{-a})`, where `s` is the chosen square root of rho.
    /// `sign` selects the handle orientation `a = ±`.
    pub fn lambda_mu(&self, sign: i32, sqrt_rho: Cx) -> (MobiusMap, MobiusMap) {
        let (w_a, w_neg) = if sign > 0 {
            (self.center_plus, self.center_minus)
        } else {
            (self.center_minus, self.center_plus)
        };
        let one = Cx::new(1.0, 0.0);
        let zero = Cx::new(0.0, 0.0);
        let lambda = MobiusMap::new(one / sqrt_rho, -w_a / sqrt_rho, zero, one).unwrap();
        let mu = MobiusMap::new(zero, sqrt_rho, one, -w_neg).unwrap();
        (lambda, mu)
    }

    /// Moves the fixed points by `g`, keeping the multiplier.
    pub fn transformed(&self, g: &MobiusMap) -> Result<Self> {
        let rep = g
            .apply(Point::Finite(self.repelling))
            .finite()
            .ok_or(Error::InfiniteImage)?;
        let att = g
            .apply(Point::Finite(self.attracting))
            .finite()
            .ok_or(Error::InfiniteImage)?;
        Self::derive(rep, att, self.multiplier)
    }
}

/// Möbius action on the sewing coordinates of a single handle, written
/// directly in terms of `(w_a, w_{-a}, rho)`. Returns the new `(w_a, rho)`.
pub fn act_on_sewing(g: &MobiusMap, w_a: Cx, w_neg: Cx, rho: Cx) -> Result<(Cx, Cx)> {
    let (ga, gb, gc, gd) = (g.a, g.b, g.c, g.d);
    let den = (gc * w_a + gd) * (gc * w_neg + gd) - rho * gc * gc;
    if den.norm() == 0.0 {
        return Err(Error::InfiniteImage);
    }
    let w = ((ga * w_a + gb) * (gc * w_neg + gd) - rho * ga * gc) / den;
    Ok((w, rho / (den * den)))
}

/// Applies `g` to every handle of the surface; multipliers are unchanged.
pub fn act_on_parameters(g: &MobiusMap, s: &SchottkyData) -> Result<SchottkyData> {
    let handles = s
        .handles()
        .iter()
        .map(|h| h.transformed(g))
        .collect::<Result<Vec<_>>>()?;
    SchottkyData::new(handles)
}
