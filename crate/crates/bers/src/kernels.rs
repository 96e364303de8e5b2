//! Rational kernels of weight `(N, 1-N)` and the moment machinery built on
//! them.
//!
//! The basic kernel is
//! `π_N(x, y) = 1/(x-y) · ∏_j (y - A_j)/(x - A_j)` over `2N-1` anchor points.
//! With no anchors it degenerates to the reference kernel `1/(x-y)`.
//! Derivatives follow the scaled convention `f^{(i)} = (1/i!) ∂^i f`.

use serde::{Deserialize, Serialize};

use crate::mobius::{MobiusMap, Point};
use crate::schottky::{
    is_cyclically_reduced, is_proper_power, reduced_letter_sequences, SchottkyData,
};
use crate::{Cx, Error, Result};

/// Binomial coefficient as a float; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `F_m = C(m + 2N - 1, m)`.
pub fn f_coeff(weight: usize, m: usize) -> f64 {
    binomial(m + 2 * weight - 1, m)
}

/// Integer power of a complex number, accepting negative exponents.
pub fn powi(z: Cx, k: i64) -> Cx {
    if k >= 0 {
        z.powu(k as u32)
    } else {
        z.inv().powu((-k) as u32)
    }
}

/// Dense polynomial in monomial coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<Cx>,
}

impl Poly {
    pub fn new(coeffs: Vec<Cx>) -> Self {
        Self { coeffs }
    }

    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![Cx::new(0.0, 0.0); k + 1];
        coeffs[k] = Cx::new(1.0, 0.0);
        Self { coeffs }
    }

    pub fn degree_bound(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, y: Cx) -> Cx {
        self.coeffs
            .iter()
            .rev()
            .fold(Cx::new(0.0, 0.0), |acc, &c| acc * y + c)
    }

    /// Scaled derivative `p^{(n)}(y) = (1/n!) p^{[n]}(y)`.
    pub fn taylor_coeff(&self, n: usize, y: Cx) -> Cx {
        self.coeffs
            .iter()
            .enumerate()
            .skip(n)
            .rev()
            .fold(Cx::new(0.0, 0.0), |acc, (k, &c)| {
                acc * y + c * binomial(k, n)
            })
    }

    /// Coefficients of the Taylor expansion about `center`.
    pub fn shifted(&self, center: Cx) -> Vec<Cx> {
        (0..self.coeffs.len())
            .map(|n| self.taylor_coeff(n, center))
            .collect()
    }

    pub fn mul_linear(&self, root: Cx) -> Self {
        // (y - root) · p(y)
        let mut out = vec![Cx::new(0.0, 0.0); self.coeffs.len() + 1];
        for (k, &c) in self.coeffs.iter().enumerate() {
            out[k + 1] += c;
            out[k] -= root * c;
        }
        Self { coeffs: out }
    }

    pub fn scale(&self, s: Cx) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }
}

/// Lagrange basis polynomials on the given nodes.
pub fn lagrange_basis(nodes: &[Cx]) -> Vec<Poly> {
    (0..nodes.len())
        .map(|i| {
            let mut p = Poly::new(vec![Cx::new(1.0, 0.0)]);
            let mut den = Cx::new(1.0, 0.0);
            for (j, &aj) in nodes.iter().enumerate() {
                if j != i {
                    p = p.mul_linear(aj);
                    den *= nodes[i] - aj;
                }
            }
            p.scale(den.inv())
        })
        .collect()
}

/// A form value tagged with its differential weight in each variable.
#[derive(Clone, Debug, PartialEq)]
pub struct FormValue {
    pub value: Cx,
    pub weights: Vec<i32>,
}

impl FormValue {
    pub fn new(value: Cx, weights: Vec<i32>) -> Self {
        Self { value, weights }
    }

    /// Product of forms in the same variables; weights add.
    pub fn mul(&self, other: &FormValue) -> FormValue {
        let n = self.weights.len().max(other.weights.len());
        let weights = (0..n)
            .map(|i| self.weights.get(i).unwrap_or(&0) + other.weights.get(i).unwrap_or(&0))
            .collect();
        FormValue {
            value: self.value * other.value,
            weights,
        }
    }
}

/// The rational kernel `π_N` on a fixed set of anchor points.
#[derive(Clone, Debug)]
pub struct Kernel {
    weight: usize,
    nodes: Vec<Cx>,
    basis: Vec<Poly>,
}

impl Kernel {
    /// Kernel on `2N - 1` distinct anchors.
    pub fn new(weight: usize, nodes: Vec<Cx>) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidConfig("weight must be at least one".into()));
        }
        if nodes.len() != 2 * weight - 1 {
            return Err(Error::InvalidConfig(format!(
                "weight {weight} needs {} anchors, got {}",
                2 * weight - 1,
                nodes.len()
            )));
        }
        for i in 0..nodes.len() {
            for j in 0..i {
                if (nodes[i] - nodes[j]).norm() < 1e-12 {
                    return Err(Error::InvalidConfig("anchors must be distinct".into()));
                }
            }
        }
        let basis = lagrange_basis(&nodes);
        Ok(Self {
            weight,
            nodes,
            basis,
        })
    }

    /// The anchor-free kernel `1/(x - y)`, the limit of all anchors at infinity.
    pub fn reference(weight: usize) -> Self {
        Self {
            weight,
            nodes: Vec::new(),
            basis: Vec::new(),
        }
    }

    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn nodes(&self) -> &[Cx] {
        &self.nodes
    }

    pub fn basis(&self) -> &[Poly] {
        &self.basis
    }

    pub fn is_reference(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_pole(&self, x: Cx, y: Cx) -> Result<()> {
        if x == y {
            return Err(Error::PoleEvaluation("x = y".into()));
        }
        if self.nodes.contains(&x) {
            return Err(Error::PoleEvaluation("x at an anchor".into()));
        }
        Ok(())
    }

    /// `π_N^{(m,n)}(x, y)` by term-wise differentiation of the partial fractions
    /// `1/(x-y) - Σ_i p_i(y)/(x - A_i)`.
    pub fn pi(&self, m: usize, n: usize, x: Cx, y: Cx) -> Result<Cx> {
        self.check_pole(x, y)?;
        Ok(self.pi_unchecked(m, n, x, y))
    }

    pub fn pi_unchecked(&self, m: usize, n: usize, x: Cx, y: Cx) -> Cx {
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut v = binomial(m + n, m) * powi(x - y, -(m as i64 + n as i64 + 1));
        for (p, &a) in self.basis.iter().zip(&self.nodes) {
            v -= p.taylor_coeff(n, y) * powi(x - a, -(m as i64 + 1));
        }
        sign * v
    }

    /// `f_ℓ^{(m)}(x)` where `f_ℓ(x) = -Σ_i p_i^{(ℓ)}(0)/(x - A_i)`.
    pub fn f_ell(&self, ell: usize, m: usize, x: Cx) -> Result<Cx> {
        if self.nodes.contains(&x) {
            return Err(Error::PoleEvaluation("x at an anchor".into()));
        }
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut v = Cx::new(0.0, 0.0);
        for (p, &a) in self.basis.iter().zip(&self.nodes) {
            let c = p.coeffs.get(ell).copied().unwrap_or_default();
            v -= c * powi(x - a, -(m as i64 + 1));
        }
        Ok(sign * v)
    }

    /// `e^{mn}(y) = Σ_ℓ C(ℓ, n) f_ℓ^{(m)}(y) y^{ℓ-n}`: the regular part of
    /// `π_N^{(m,n)}(x, y)` at `x = y`.
    pub fn e_mn(&self, m: usize, n: usize, y: Cx) -> Result<Cx> {
        let mut v = Cx::new(0.0, 0.0);
        for ell in n..(2 * self.weight - 1) {
            v += binomial(ell, n) * self.f_ell(ell, m, y)? * y.powu((ell - n) as u32);
        }
        Ok(v)
    }

    /// Bidifferential kernel `M_N(x, y) = (x - y)^{-2N}`.
    pub fn m_kernel(&self, x: Cx, y: Cx) -> Result<Cx> {
        if x == y {
            return Err(Error::PoleEvaluation("x = y".into()));
        }
        Ok(powi(x - y, -(2 * self.weight as i64)))
    }
}

/// Where the `2N - 1` kernel anchors sit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Anchors {
    /// All anchors at infinity: the kernel is `1/(x - y)`.
    Infinity,
    /// Attracting fixed points of the listed group words. These are limit
    /// points, reached through the reference kernel plus a polynomial
    /// correction.
    LimitPoints(Vec<Vec<i32>>),
    /// Finite anchors outside the closed disks, used verbatim in the kernel.
    Exterior(Vec<Cx>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub weight: usize,
    pub anchors: Anchors,
}

/// Attracting fixed point of a word.
pub fn word_fixed_point(s: &SchottkyData, letters: &[i32]) -> Result<Cx> {
    match s.word(letters).map.fixed_points().0 {
        Point::Finite(z) => Ok(z),
        Point::Infinity => Err(Error::InvalidConfig(format!(
            "word {letters:?} fixes infinity"
        ))),
    }
}

impl KernelConfig {
    pub fn reference(weight: usize) -> Self {
        Self {
            weight,
            anchors: Anchors::Infinity,
        }
    }

    /// Default anchors. Weight one uses the reference kernel; higher weights
    /// take the generator fixed points `W_1, W_-1, W_2, …` and, when those run
    /// out, fixed points of primitive words of length two.
    pub fn standard(s: &SchottkyData, weight: usize) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidConfig("weight must be at least one".into()));
        }
        if weight == 1 {
            return Ok(Self::reference(1));
        }
        let needed = 2 * weight - 1;
        let mut words: Vec<Vec<i32>> = s.indices().into_iter().map(|a| vec![-a]).collect();
        words.extend(
            reduced_letter_sequences(s.genus(), 2)
                .into_iter()
                .filter(|w| is_cyclically_reduced(w) && !is_proper_power(w)),
        );
        let mut chosen: Vec<Vec<i32>> = Vec::new();
        let mut points: Vec<Cx> = Vec::new();
        for w in words {
            if chosen.len() == needed {
                break;
            }
            let z = word_fixed_point(s, &w)?;
            if points.iter().all(|&p| (p - z).norm() > 1e-9) {
                points.push(z);
                chosen.push(w);
            }
        }
        if chosen.len() < needed {
            return Err(Error::InvalidConfig(format!(
                "genus {} has too few distinct fixed points for weight {weight}",
                s.genus()
            )));
        }
        Ok(Self {
            weight,
            anchors: Anchors::LimitPoints(chosen),
        })
    }

    /// Matches user-supplied limit points against fixed points of primitive
    /// words up to length three.
    pub fn from_limit_points(s: &SchottkyData, weight: usize, points: &[Cx]) -> Result<Self> {
        let mut candidates = Vec::new();
        for k in 1..=3 {
            for w in reduced_letter_sequences(s.genus(), k) {
                if is_cyclically_reduced(&w) && !is_proper_power(&w) {
                    candidates.push((word_fixed_point(s, &w)?, w));
                }
            }
        }
        let words = points
            .iter()
            .map(|&z| {
                candidates
                    .iter()
                    .find(|(p, _)| (p - z).norm() < 1e-8 * (1.0 + z.norm()))
                    .map(|(_, w)| w.clone())
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "{z} is not a fixed point of a word of length at most three"
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            weight,
            anchors: Anchors::LimitPoints(words),
        };
        cfg.validate(s)?;
        Ok(cfg)
    }

    /// Anchor coordinates; empty for the reference kernel.
    pub fn anchor_points(&self, s: &SchottkyData) -> Result<Vec<Cx>> {
        match &self.anchors {
            Anchors::Infinity => Ok(Vec::new()),
            Anchors::Exterior(p) => Ok(p.clone()),
            Anchors::LimitPoints(words) => words.iter().map(|w| word_fixed_point(s, w)).collect(),
        }
    }

    pub fn validate(&self, s: &SchottkyData) -> Result<()> {
        if self.weight == 0 {
            return Err(Error::InvalidConfig("weight must be at least one".into()));
        }
        let points = self.anchor_points(s)?;
        if matches!(self.anchors, Anchors::Infinity) {
            return Ok(());
        }
        // Kernel::new checks count and distinctness.
        Kernel::new(self.weight, points.clone())?;
        match &self.anchors {
            Anchors::LimitPoints(words) => {
                for (w, z) in words.iter().zip(&points) {
                    if w.is_empty() || !is_cyclically_reduced(w) {
                        return Err(Error::InvalidConfig(format!(
                            "anchor word {w:?} is not cyclically reduced"
                        )));
                    }
                    if s.disk_containing(*z).is_none() {
                        return Err(Error::InvalidConfig(format!(
                            "limit point {z} lies outside every disk"
                        )));
                    }
                }
            }
            Anchors::Exterior(_) => {
                for z in &points {
                    if s.boundary_distance(*z) <= 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "exterior anchor {z} touches a disk"
                        )));
                    }
                }
            }
            Anchors::Infinity => {}
        }
        Ok(())
    }

    /// The rational kernel with these anchors as nodes.
    pub fn kernel(&self, s: &SchottkyData) -> Result<Kernel> {
        match self.anchors {
            Anchors::Infinity => Ok(Kernel::reference(self.weight)),
            _ => Kernel::new(self.weight, self.anchor_points(s)?),
        }
    }
}

/// `B^n(x) = x^{-n-2N}` for `0 <= n < modes`.
pub fn b_vector(x: Cx, weight: usize, modes: usize) -> Vec<Cx> {
    (0..modes)
        .map(|n| powi(x, -((n + 2 * weight) as i64)))
        .collect()
}

/// `C^m(y) = F_m y^m` for `0 <= m < modes`.
pub fn c_vector(y: Cx, weight: usize, modes: usize) -> Vec<Cx> {
    (0..modes)
        .map(|m| f_coeff(weight, m) * y.powu(m as u32))
        .collect()
}

fn series_mul(a: &[Cx], b: &[Cx]) -> Vec<Cx> {
    let n = a.len();
    let mut out = vec![Cx::new(0.0, 0.0); n];
    for i in 0..n {
        if a[i] == Cx::new(0.0, 0.0) {
            continue;
        }
        for j in 0..n - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

/// `D^{mn}(γ) = F_m/F_n · (y_γ^m y_γ'^N)^{(n)}(0)`, zero when `γ(0) = ∞`.
/// Row index `m`, column index `n`.
pub fn d_matrix(g: &MobiusMap, weight: usize, modes: usize) -> Vec<Vec<Cx>> {
    let zero = Cx::new(0.0, 0.0);
    if g.d.norm() == 0.0 {
        return vec![vec![zero; modes]; modes];
    }
    // 1/(cy + d) as a power series.
    let ratio = -g.c / g.d;
    let inv: Vec<Cx> = (0..modes).map(|k| ratio.powu(k as u32) / g.d).collect();
    let mut lin = vec![zero; modes];
    lin[0] = g.b;
    if modes > 1 {
        lin[1] = g.a;
    }
    let image = series_mul(&lin, &inv);
    let deriv = series_mul(&inv, &inv);
    let mut deriv_pow = vec![zero; modes];
    deriv_pow[0] = Cx::new(1.0, 0.0);
    for _ in 0..weight {
        deriv_pow = series_mul(&deriv_pow, &deriv);
    }
    let mut row_series = deriv_pow;
    let mut out = Vec::with_capacity(modes);
    for m in 0..modes {
        let fm = f_coeff(weight, m);
        out.push(
            (0..modes)
                .map(|n| row_series[n] * fm / f_coeff(weight, n))
                .collect(),
        );
        row_series = series_mul(&row_series, &image);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Cx {
        Cx::new(re, im)
    }

    fn sample_kernel(weight: usize) -> Kernel {
        let nodes = (0..2 * weight - 1)
            .map(|j| Cx::from_polar(1.0 + 0.3 * j as f64, 1.1 * j as f64))
            .collect();
        Kernel::new(weight, nodes).unwrap()
    }

    #[test]
    fn weight_one_hand_example() {
        let k = Kernel::new(1, vec![c(0.0, 0.0)]).unwrap();
        assert!((k.pi(0, 0, c(2.0, 0.0), c(1.0, 0.0)).unwrap() - c(0.5, 0.0)).norm() < 1e-15);
        assert!((k.basis()[0].eval(c(3.0, 1.0)) - c(1.0, 0.0)).norm() < 1e-15);
        let x = c(0.7, -0.2);
        assert!((k.f_ell(0, 0, x).unwrap() + 1.0 / x).norm() < 1e-15);
    }

    #[test]
    fn residue_and_anchor_zeros() {
        for weight in 1..=3 {
            let k = sample_kernel(weight);
            let y = c(0.3, 0.4);
            let h = 1e-7;
            let x = y + c(h, 0.0);
            assert!(((x - y) * k.pi(0, 0, x, y).unwrap() - 1.0).norm() < 1e-5);
            for &a in k.nodes() {
                assert!(k.pi(0, 0, c(2.0, -1.0), a).unwrap().norm() < 1e-12);
            }
            assert!(k.pi(0, 0, y, y).is_err());
            assert!(k.pi(0, 0, k.nodes()[0], y).is_err());
        }
    }

    #[test]
    fn product_form_matches_partial_fractions() {
        for weight in 1..=3 {
            let k = sample_kernel(weight);
            for (x, y) in [(c(3.0, 1.0), c(-0.5, 0.2)), (c(-2.0, 0.5), c(0.1, -2.0))] {
                let prod = k
                    .nodes()
                    .iter()
                    .fold(1.0 / (x - y), |acc, &a| acc * (y - a) / (x - a));
                assert!((k.pi(0, 0, x, y).unwrap() - prod).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn e_mn_vanishes_beyond_polynomial_degree() {
        let k = sample_kernel(2);
        for m in 0..4 {
            assert_eq!(k.e_mn(m, 3, c(0.2, 0.1)).unwrap(), c(0.0, 0.0));
        }
    }

    #[test]
    fn e_mn_is_regular_part_on_diagonal() {
        // The circle mean of π^{(m,n)}(·, y) about y kills the pole and
        // leaves the regular part at x = y.
        let k = sample_kernel(2);
        let y = c(0.2, -0.3);
        let nodes = 64;
        for m in 0..3 {
            for n in 0..3 {
                let mean: Cx = (0..nodes)
                    .map(|j| {
                        let t = 2.0 * std::f64::consts::PI * j as f64 / nodes as f64;
                        k.pi(m, n, y + Cx::from_polar(0.1, t), y).unwrap()
                    })
                    .sum::<Cx>()
                    / nodes as f64;
                let e = k.e_mn(m, n, y).unwrap();
                assert!((mean - e).norm() < 1e-10 * (1.0 + e.norm()), "{m}{n}");
            }
        }
    }

    #[test]
    fn f_values() {
        assert_eq!(f_coeff(2, 0), 1.0);
        assert_eq!(f_coeff(2, 1), 4.0);
        assert_eq!(f_coeff(2, 2), 10.0);
        assert!(b_vector(c(1.0, 0.0), 2, 6)
            .iter()
            .all(|&z| z == c(1.0, 0.0)));
    }

    #[test]
    fn truncated_bc_product_converges_to_m_kernel() {
        let weight = 2;
        let (x, y) = (c(2.0, 0.5), c(0.3, -0.2));
        let k = Kernel::reference(weight);
        let exact = k.m_kernel(x, y).unwrap();
        for modes in [10, 20, 40] {
            let s: Cx = b_vector(x, weight, modes)
                .iter()
                .zip(c_vector(y, weight, modes))
                .map(|(b, c)| b * c)
                .sum();
            let ratio = (y / x).norm();
            let bound = 1e2 * (modes as f64).powi(3) * ratio.powi(modes as i32) * exact.norm();
            assert!((s - exact).norm() < bound.max(1e-14));
        }
    }

    #[test]
    fn d_matrix_identity_and_diagonal() {
        let id = d_matrix(&MobiusMap::identity(), 2, 6);
        for m in 0..6 {
            for n in 0..6 {
                let e = if m == n { 1.0 } else { 0.0 };
                assert!((id[m][n] - e).norm() < 1e-14);
            }
        }
        let q = c(0.1, 0.05);
        let sq = q.sqrt();
        let diag = MobiusMap {
            a: sq,
            b: c(0.0, 0.0),
            c: c(0.0, 0.0),
            d: 1.0 / sq,
        };
        for weight in 1..=3 {
            let dm = d_matrix(&diag, weight, 8);
            for m in 0..8 {
                for n in 0..8 {
                    let e = if m == n {
                        q.powu((m + weight) as u32)
                    } else {
                        c(0.0, 0.0)
                    };
                    assert!((dm[m][n] - e).norm() < 1e-14);
                }
            }
        }
        let swap = MobiusMap::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        assert!(d_matrix(&swap, 1, 4)
            .iter()
            .flatten()
            .all(|z| z.norm() == 0.0));
    }

    #[test]
    fn d_matrix_maps_c_vector() {
        // D(γ) C(y) = C(γ y) to truncation error.
        let g = MobiusMap::new(c(1.0, 0.1), c(0.05, 0.0), c(0.1, 0.0), c(1.0, 0.0)).unwrap();
        let (weight, modes) = (2, 30);
        let y = c(0.05, 0.02);
        let dm = d_matrix(&g, weight, modes);
        let cv = c_vector(y, weight, modes);
        let lhs: Vec<Cx> = (0..modes)
            .map(|m| (0..modes).map(|n| dm[m][n] * cv[n]).sum())
            .collect();
        // Weight: C(γy) dy_γ^N = C(γy) γ'(y)^N dy^N.
        let rhs = c_vector(g.map(y), weight, modes);
        let jac = g.derivative(y).powu(weight as u32);
        for m in 0..6 {
            assert!((lhs[m] - rhs[m] * jac).norm() < 1e-12 * (1.0 + rhs[m].norm()));
        }
    }

    #[test]
    fn standard_anchors() {
        let s = SchottkyData::from_fixed_points(&[
            (c(1.0, 0.0), c(-1.0, 0.0), c(0.02, 0.0)),
            (c(0.5, 2.5), c(-0.5, 2.5), c(0.02, 0.0)),
        ])
        .unwrap();
        assert_eq!(
            KernelConfig::standard(&s, 1).unwrap().anchors,
            Anchors::Infinity
        );
        let cfg = KernelConfig::standard(&s, 2).unwrap();
        let pts = cfg.anchor_points(&s).unwrap();
        assert!((pts[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((pts[1] - c(-1.0, 0.0)).norm() < 1e-12);
        assert!((pts[2] - c(0.5, 2.5)).norm() < 1e-12);
        cfg.validate(&s).unwrap();
        let cfg3 = KernelConfig::standard(&s, 3).unwrap();
        assert_eq!(cfg3.anchor_points(&s).unwrap().len(), 5);
        cfg3.validate(&s).unwrap();
        let again = KernelConfig::from_limit_points(&s, 2, &pts).unwrap();
        assert_eq!(again, cfg);
        assert!(KernelConfig::from_limit_points(&s, 2, &[c(0.0, 0.0), pts[1], pts[2]]).is_err());

        let g1 =
            SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), c(0.02, 0.0))]).unwrap();
        assert!(KernelConfig::standard(&g1, 2).is_err());
    }

    fn cx_strategy(r: f64) -> impl Strategy<Value = Cx> {
        (-r..r, -r..r).prop_map(|(a, b)| Cx::new(a, b))
    }

    proptest! {
        #[test]
        fn expansion_identity(x in cx_strategy(4.0), y in cx_strategy(4.0), weight in 1usize..4) {
            let k = sample_kernel(weight);
            prop_assume!((x - y).norm() > 0.1);
            prop_assume!(k.nodes().iter().all(|&a| (x - a).norm() > 0.1));
            let mut rhs = 1.0 / (x - y);
            for ell in 0..(2 * weight - 1) {
                rhs += k.f_ell(ell, 0, x).unwrap() * y.powu(ell as u32);
            }
            let lhs = k.pi(0, 0, x, y).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm() + rhs.norm()));
        }

        #[test]
        fn derivatives_match_finite_differences(
            x in cx_strategy(3.0), y in cx_strategy(3.0), m in 0usize..3, n in 0usize..3
        ) {
            let k = sample_kernel(2);
            prop_assume!((x - y).norm() > 0.5);
            prop_assume!(k.nodes().iter().all(|&a| (x - a).norm() > 0.5));
            // Scaled derivatives as Taylor coefficients via a small-circle Cauchy sum.
            let r = 0.05;
            let nodes = 32;
            let mut acc = Cx::new(0.0, 0.0);
            for i in 0..nodes {
                for j in 0..nodes {
                    let ti = 2.0 * std::f64::consts::PI * i as f64 / nodes as f64;
                    let tj = 2.0 * std::f64::consts::PI * j as f64 / nodes as f64;
                    let u = Cx::from_polar(r, ti);
                    let v = Cx::from_polar(r, tj);
                    acc += k.pi(0, 0, x + u, y + v).unwrap()
                        * powi(u, -(m as i64))
                        * powi(v, -(n as i64));
                }
            }
            acc /= (nodes * nodes) as f64;
            let exact = k.pi(m, n, x, y).unwrap();
            prop_assert!((acc - exact).norm() < 1e-6 * (1.0 + exact.norm()));
        }

        #[test]
        fn d_matrix_composition(
            e1 in prop::array::uniform2(cx_strategy(0.15)),
            e2 in prop::array::uniform2(cx_strategy(0.15)),
        ) {
            let one = Cx::new(1.0, 0.0);
            let g1 = MobiusMap::new(one, e1[0], e1[1], one).unwrap();
            let g2 = MobiusMap::new(one, e2[0], e2[1], one).unwrap();
            let g12 = g1.compose(&g2);
            let modes = 12;
            let (d1, d2, d12) = (d_matrix(&g1, 2, modes + 20), d_matrix(&g2, 2, modes + 20), d_matrix(&g12, 2, modes));
            for m in 0..4 {
                for n in 0..4 {
                    let prod: Cx = (0..modes + 20).map(|k| d1[m][k] * d2[k][n]).sum();
                    prop_assert!((prod - d12[m][n]).norm() < 1e-9 * (1.0 + d12[m][n].norm()));
                }
            }
        }
    }
}
