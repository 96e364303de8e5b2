//! Variations of the Schottky parameters and the differential operators
//! built on them.
//!
//! The tangent basis is `∂_a^0 = ∂_{w_a}`, `∂_a^1 = ρ_a ∂_{ρ_a}`,
//! `∂_a^2 = ρ_a ∂_{w_{-a}}` for positive handles `a`. Parameter derivatives
//! are central finite differences with Richardson extrapolation; every
//! perturbed surface gets a freshly assembled engine, the base engine is
//! never touched.
//!
//! `∇(x) = Σ_{a,ℓ} Θ_{2,a}^ℓ(x) ∂_a^ℓ` uses the weight-two engine with the
//! standard anchors, and `∇_{m,y}(x)` adds
//! `Σ_k (Ψ_2(x, y_k) ∂_{y_k} + m_k ∂_{y_k}Ψ_2(x, y_k))`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::classical::{self, circle_moment, Quadrature};
use crate::kernels::{FormValue, KernelConfig, Poly};
use crate::schottky::SchottkyData;
use crate::sewing::{mobius_coboundary, QuasiformEngine};
use crate::{Cx, Error, Result};

const TWO_PI_I: Cx = Cx::new(0.0, 2.0 * PI);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdScheme {
    Central2,
    Central4,
}

impl FdScheme {
    /// `(offset, weight)` pairs of the first-derivative stencil, and its order.
    fn stencil(self) -> (&'static [(f64, f64)], i32) {
        match self {
            FdScheme::Central2 => (&[(1.0, 0.5), (-1.0, -0.5)], 2),
            FdScheme::Central4 => (
                &[
                    (1.0, 8.0 / 12.0),
                    (-1.0, -8.0 / 12.0),
                    (2.0, -1.0 / 12.0),
                    (-2.0, 1.0 / 12.0),
                ],
                4,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    pub scheme: FdScheme,
    /// Absolute step for the disk centers.
    pub h_w: f64,
    /// Relative step for `ρ` (a step in `log ρ`).
    pub h_rho: f64,
    /// Absolute step for form arguments `y_k`.
    pub h_y: f64,
    /// 1 for a single stencil, 2 for one Richardson step with a check.
    pub levels: usize,
    /// Relative disagreement allowed between Richardson levels.
    pub tol: f64,
    /// Absolute floor for the same check.
    pub abs_tol: f64,
    /// Mode cutoff of the engines assembled on perturbed surfaces.
    pub modes: usize,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self {
            scheme: FdScheme::Central4,
            h_w: 1e-4,
            h_rho: 1e-4,
            h_y: 1e-4,
            levels: 2,
            tol: 1e-4,
            abs_tol: 1e-7,
            modes: 20,
        }
    }
}

impl VariationConfig {
    /// Single-level scheme with every step set to `h`.
    pub fn plain(scheme: FdScheme, h: f64) -> Self {
        Self {
            scheme,
            h_w: h,
            h_rho: h,
            h_y: h,
            levels: 1,
            ..Self::default()
        }
    }
}

/// `d/dt f(t)` at `t = 0` for a vector-valued `f` holomorphic in `t`.
pub fn derivative_along(
    f: &dyn Fn(f64) -> Result<Vec<Cx>>,
    h: f64,
    vc: &VariationConfig,
) -> Result<Vec<Cx>> {
    let (stencil, order) = vc.scheme.stencil();
    let level = |h: f64| -> Result<Vec<Cx>> {
        let mut acc: Vec<Cx> = Vec::new();
        for &(off, w) in stencil {
            let v = f(off * h)?;
            if acc.is_empty() {
                acc = vec![Cx::new(0.0, 0.0); v.len()];
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x * (w / h);
            }
        }
        Ok(acc)
    };
    let coarse = level(h)?;
    if vc.levels <= 1 {
        return Ok(coarse);
    }
    let fine = level(h / 2.0)?;
    let k = 2f64.powi(order);
    let extrapolated: Vec<Cx> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (k * f - c) / (k - 1.0))
        .collect();
    for ((c, f), r) in coarse.iter().zip(&fine).zip(&extrapolated) {
        let err = (f - c).norm();
        if err > vc.tol * r.norm() + vc.abs_tol {
            return Err(Error::NonConvergentDerivative(err));
        }
    }
    Ok(extrapolated)
}

/// Copy of `s` moved by `t` along the coordinate of `∂_a^ℓ` (before the
/// `ρ_a` prefactor of `ℓ = 2`).
pub fn perturbed(s: &SchottkyData, a: usize, ell: usize, t: f64) -> Result<SchottkyData> {
    if a == 0 || a > s.genus() || ell > 2 {
        return Err(Error::InvalidConfig(format!(
            "no tangent direction ({a}, {ell})"
        )));
    }
    let mut triples: Vec<(Cx, Cx, Cx)> = s
        .handles()
        .iter()
        .map(|h| (h.center_plus, h.center_minus, h.rho))
        .collect();
    let tr = &mut triples[a - 1];
    match ell {
        0 => tr.0 += t,
        1 => tr.2 *= t.exp(),
        _ => tr.1 += t,
    }
    SchottkyData::from_sewing(&triples)
}

pub fn schottky_derivative_vec(
    f: &dyn Fn(&SchottkyData) -> Result<Vec<Cx>>,
    a: usize,
    ell: usize,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Vec<Cx>> {
    let h = if ell == 1 { vc.h_rho } else { vc.h_w };
    let d = derivative_along(&|t| f(&perturbed(s, a, ell, t)?), h, vc)?;
    if ell == 2 {
        let rho = s.rho(a as i32);
        Ok(d.into_iter().map(|v| v * rho).collect())
    } else {
        Ok(d)
    }
}

/// `∂_a^ℓ F` for a scalar function of the Schottky parameters.
pub fn schottky_derivative(
    f: impl Fn(&SchottkyData) -> Result<Cx>,
    a: usize,
    ell: usize,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Cx> {
    Ok(schottky_derivative_vec(&|t| Ok(vec![f(t)?]), a, ell, s, vc)?[0])
}

/// All `∂_a^ℓ F`, indexed `[a-1][ℓ][component]`.
pub fn tangent_derivatives(
    f: &dyn Fn(&SchottkyData) -> Result<Vec<Cx>>,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Vec<Vec<Vec<Cx>>>> {
    (1..=s.genus())
        .map(|a| {
            (0..3)
                .map(|ell| schottky_derivative_vec(f, a, ell, s, vc))
                .collect()
        })
        .collect()
}

/// `Σ_{a,ℓ} c_a^ℓ ∂_a^ℓ F` for coefficients indexed `[a-1][ℓ]`.
pub fn contract(coeffs: &[Vec<Cx>], derivs: &[Vec<Vec<Cx>>]) -> Vec<Cx> {
    let len = derivs.first().and_then(|d| d.first()).map_or(0, Vec::len);
    let mut out = vec![Cx::new(0.0, 0.0); len];
    for (ca, da) in coeffs.iter().zip(derivs) {
        for (c, d) in ca.iter().zip(da) {
            for (o, v) in out.iter_mut().zip(d) {
                *o += c * v;
            }
        }
    }
    out
}

/// Weight-one engine with the reference kernel, as used for the classical
/// objects on perturbed surfaces.
pub fn weight_one_engine(s: &SchottkyData, vc: &VariationConfig) -> Result<QuasiformEngine> {
    QuasiformEngine::assemble(s, &KernelConfig::reference(1), vc.modes)
}

/// `∇(x)` and `∇_{m,y}(x)` on one surface.
#[derive(Clone, Debug)]
pub struct Nabla {
    s: SchottkyData,
    e2: QuasiformEngine,
    vc: VariationConfig,
}

/// Scalar coefficient of a form in `y`, as a function of the surface.
pub type FormFn<'a> = dyn Fn(&SchottkyData, &[Cx]) -> Result<Cx> + 'a;

impl Nabla {
    pub fn new(s: &SchottkyData, vc: &VariationConfig) -> Result<Self> {
        let e2 = QuasiformEngine::assemble(s, &KernelConfig::standard(s, 2)?, vc.modes)?;
        Ok(Self {
            s: s.clone(),
            e2,
            vc: vc.clone(),
        })
    }

    /// The weight-two engine supplying `Θ_2` and `Ψ_2`.
    pub fn engine(&self) -> &QuasiformEngine {
        &self.e2
    }

    pub fn schottky(&self) -> &SchottkyData {
        &self.s
    }

    pub fn apply_vec(
        &self,
        f: &dyn Fn(&SchottkyData) -> Result<Vec<Cx>>,
        x: Cx,
    ) -> Result<Vec<Cx>> {
        let theta = self.e2.theta_all(x)?;
        Ok(contract(
            &theta,
            &tangent_derivatives(f, &self.s, &self.vc)?,
        ))
    }

    /// `∇(x) F`, a weight-two form in `x`.
    pub fn apply(&self, f: impl Fn(&SchottkyData) -> Result<Cx>, x: Cx) -> Result<FormValue> {
        let v = self.apply_vec(&|t| Ok(vec![f(t)?]), x)?[0];
        Ok(FormValue::new(v, vec![2]))
    }

    /// `∂_{y_k} H` at fixed parameters.
    pub fn y_derivative(&self, h: &FormFn, y: &[Cx], k: usize) -> Result<Cx> {
        let shifted = |t: f64| -> Result<Vec<Cx>> {
            let mut yy = y.to_vec();
            yy[k] += t;
            Ok(vec![h(&self.s, &yy)?])
        };
        Ok(derivative_along(&shifted, self.vc.h_y, &self.vc)?[0])
    }

    /// `∇_{m,y}(x) H` for a form of weights `m` in `y`; weight `(2, m)`.
    pub fn apply_forms(&self, h: &FormFn, m: &[i32], y: &[Cx], x: Cx) -> Result<FormValue> {
        if m.len() != y.len() {
            return Err(Error::InvalidConfig("one weight per form argument".into()));
        }
        if y.contains(&x) {
            return Err(Error::PoleEvaluation(
                "x coincides with a form argument".into(),
            ));
        }
        let mut v = self.apply_vec(&|t| Ok(vec![h(t, y)?]), x)?[0];
        let base = h(&self.s, y)?;
        for (k, (&yk, &mk)) in y.iter().zip(m).enumerate() {
            let psi = self.e2.psi(x, yk)?.value;
            let dpsi = self.e2.psi_dy(x, yk, 1)?;
            v += psi * self.y_derivative(h, y, k)? + f64::from(mk) * dpsi * base;
        }
        let mut weights = vec![2];
        weights.extend_from_slice(m);
        Ok(FormValue::new(v, weights))
    }
}

pub fn nabla(
    f: impl Fn(&SchottkyData) -> Result<Cx>,
    x: Cx,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<FormValue> {
    Nabla::new(s, vc)?.apply(f, x)
}

pub fn nabla_forms(
    h: &FormFn,
    m: &[i32],
    y: &[Cx],
    x: Cx,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<FormValue> {
    Nabla::new(s, vc)?.apply_forms(h, m, y, x)
}

/// `P = p(z) dz^{1-N}` with `deg p <= 2N - 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MobiusPolynomial {
    poly: Poly,
    weight: usize,
}

impl MobiusPolynomial {
    pub fn new(coeffs: Vec<Cx>, weight: usize) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidConfig("weight must be positive".into()));
        }
        let top = 2 * weight - 2;
        if coeffs.iter().skip(top + 1).any(|c| *c != Cx::new(0.0, 0.0)) {
            return Err(Error::InvalidConfig(format!("degree exceeds {top}")));
        }
        Ok(Self {
            poly: Poly::new(coeffs),
            weight,
        })
    }

    /// Monomials `1, z, …, z^{2N-2}`.
    pub fn basis(weight: usize) -> Vec<Self> {
        (0..(2 * weight).saturating_sub(1))
            .map(|k| Self {
                poly: Poly::monomial(k),
                weight,
            })
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    pub fn eval(&self, z: Cx) -> Cx {
        self.poly.eval(z)
    }

    /// `p^{(n)}(z)` with the `1/n!` convention.
    pub fn taylor(&self, n: usize, z: Cx) -> Cx {
        self.poly.taylor_coeff(n, z)
    }

    /// `p_a^ℓ` from `Ξ_P[γ_a](z) = Σ_ℓ p_a^ℓ (z - w_a)^ℓ`, indexed `[a-1][ℓ]`.
    pub fn cocycle_coefficients(&self, s: &SchottkyData) -> Vec<Vec<Cx>> {
        (1..=s.genus() as i32)
            .map(|a| mobius_coboundary(s, self.weight, &self.poly, a))
            .collect()
    }

    fn require_weight_two(&self) -> Result<()> {
        if self.weight != 2 {
            return Err(Error::InvalidConfig(
                "Möbius vector fields have weight two".into(),
            ));
        }
        Ok(())
    }
}

/// `D^P F = Σ_{a∈ℐ} p(W_a) ∂_{W_a} F` at fixed multipliers, as a single
/// directional derivative.
pub fn mobius_derivative_fixed_points(
    f: &dyn Fn(&SchottkyData) -> Result<Vec<Cx>>,
    p: &MobiusPolynomial,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Vec<Cx>> {
    p.require_weight_two()?;
    let moved = |t: f64| -> Result<Vec<Cx>> {
        let triples: Vec<(Cx, Cx, Cx)> = s
            .handles()
            .iter()
            .map(|h| {
                (
                    h.repelling + p.eval(h.repelling) * t,
                    h.attracting + p.eval(h.attracting) * t,
                    h.multiplier,
                )
            })
            .collect();
        f(&SchottkyData::from_fixed_points(&triples)?)
    };
    derivative_along(&moved, vc.h_w, vc)
}

/// `D^P F` through the tangent basis: `-Σ_{a,ℓ} p_a^ℓ ∂_a^ℓ F`. The sign
/// makes this the generator of `W ↦ W + ε p(W)`: conjugating `γ_a` by that
/// flow moves `γ_a z` by `ε γ_a'(z) Ξ_P[γ_a](z)`, while `∂_a^ℓ γ_a z =
/// -γ_a'(z) (z - w_a)^ℓ`.
pub fn mobius_derivative_cocycle(
    f: &dyn Fn(&SchottkyData) -> Result<Vec<Cx>>,
    p: &MobiusPolynomial,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Vec<Cx>> {
    p.require_weight_two()?;
    let coeffs: Vec<Vec<Cx>> = p
        .cocycle_coefficients(s)
        .into_iter()
        .map(|row| row.into_iter().map(|c| -c).collect())
        .collect();
    Ok(contract(&coeffs, &tangent_derivatives(f, s, vc)?))
}

/// `D^P_y H = D^P H + Σ_k (p(y_k) ∂_{y_k} + m_k p'(y_k)) H`, which vanishes
/// for every form `H`.
pub fn mobius_derivative_forms(
    h: &FormFn,
    m: &[i32],
    y: &[Cx],
    p: &MobiusPolynomial,
    s: &SchottkyData,
    vc: &VariationConfig,
) -> Result<Cx> {
    if m.len() != y.len() {
        return Err(Error::InvalidConfig("one weight per form argument".into()));
    }
    let mut v = mobius_derivative_cocycle(&|t| Ok(vec![h(t, y)?]), p, s, vc)?[0];
    let base = h(s, y)?;
    for (k, (&yk, &mk)) in y.iter().zip(m).enumerate() {
        let shifted = |t: f64| -> Result<Vec<Cx>> {
            let mut yy = y.to_vec();
            yy[k] += t;
            Ok(vec![h(s, &yy)?])
        };
        let dk = derivative_along(&shifted, vc.h_y, vc)?[0];
        v += p.eval(yk) * dk + f64::from(mk) * p.taylor(1, yk) * base;
    }
    Ok(v)
}

/// A pole of a meromorphic form; residues `Res^j` are taken for `j < order`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Pole {
    pub point: Cx,
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionReport {
    /// `max |H(x) - RHS(x)|` over the probes.
    pub expansion_residual: f64,
    /// `max |H(x)|` over the probes.
    pub expansion_scale: f64,
    /// Residual of the coboundary identity per supplied polynomial.
    pub coboundary_residuals: Vec<f64>,
    /// Largest single term of each coboundary identity.
    pub coboundary_scales: Vec<f64>,
}

impl ExpansionReport {
    pub fn relative_expansion_residual(&self) -> f64 {
        self.expansion_residual / self.expansion_scale.max(f64::MIN_POSITIVE)
    }
}

/// Reconstructs an `N`-form from its Schottky-contour moments and pole
/// residues,
/// `H(x) = Σ_{a,ℓ} Θ_{N,a}^ℓ(x) Res_{w_a}^ℓ H + Σ_{k,j} Ψ_N^{(0,j)}(x, y_k) Res_{y_k}^j H`,
/// and evaluates the coboundary identity
/// `-Σ_{a,ℓ} p_a^ℓ Res_{w_a}^ℓ H + Σ_{k,ℓ} p^{(ℓ)}(y_k) Res_{y_k}^ℓ H = 0`
/// for each polynomial in `ps`. `Res_{w_a}` integrates over `C_a`
/// counterclockwise; pole residues use circles of half the distance to the
/// nearest other singularity.
pub fn residue_expansion_check(
    h: &dyn Fn(Cx) -> Result<Cx>,
    poles: &[Pole],
    e: &QuasiformEngine,
    probes: &[Cx],
    ps: &[MobiusPolynomial],
    q: &Quadrature,
) -> Result<ExpansionReport> {
    let s = e.schottky();
    let n = e.weight();
    let lcount = 2 * n - 1;
    if ps.iter().any(|p| p.weight() != n) {
        return Err(Error::InvalidConfig(
            "polynomial weight differs from the engine".into(),
        ));
    }
    let pole_points: Vec<Cx> = poles.iter().map(|p| p.point).collect();
    let res_w: Vec<Vec<Cx>> = (1..=s.genus() as i32)
        .map(|a| {
            let (center, radius) = classical::pushed_circle(s, a, &pole_points)?;
            (0..lcount)
                .map(|ell| circle_moment(h, center, radius, ell as i32, q))
                .collect()
        })
        .collect::<Result<_>>()?;
    let res_y: Vec<Vec<Cx>> = poles
        .iter()
        .map(|pole| {
            let nearest = poles
                .iter()
                .filter(|o| o.point != pole.point)
                .map(|o| (o.point - pole.point).norm())
                .fold(s.boundary_distance(pole.point), f64::min);
            let r = 0.5 * nearest;
            (0..pole.order.max(lcount))
                .map(|j| circle_moment(h, pole.point, r, j as i32, q))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut expansion_residual: f64 = 0.0;
    let mut expansion_scale: f64 = 0.0;
    for &x in probes {
        let theta = e.theta_all(x)?;
        let mut rhs = Cx::new(0.0, 0.0);
        for (ta, ra) in theta.iter().zip(&res_w) {
            for (t, r) in ta.iter().zip(ra) {
                rhs += t * r;
            }
        }
        for (pole, ry) in poles.iter().zip(&res_y) {
            for (j, r) in ry.iter().enumerate().take(pole.order) {
                rhs += e.psi_dy(x, pole.point, j)? * r;
            }
        }
        let lhs = h(x)?;
        expansion_residual = expansion_residual.max((lhs - rhs).norm());
        expansion_scale = expansion_scale.max(lhs.norm());
    }

    let mut coboundary_residuals = Vec::new();
    let mut coboundary_scales = Vec::new();
    for p in ps {
        let coeffs = p.cocycle_coefficients(s);
        let mut total = Cx::new(0.0, 0.0);
        let mut scale: f64 = 0.0;
        for (ca, ra) in coeffs.iter().zip(&res_w) {
            for (c, r) in ca.iter().zip(ra) {
                total -= c * r;
                scale = scale.max((c * r).norm());
            }
        }
        for (pole, ry) in poles.iter().zip(&res_y) {
            for (ell, r) in ry.iter().enumerate().take(lcount) {
                let t = p.taylor(ell, pole.point) * r;
                total += t;
                scale = scale.max(t.norm());
            }
        }
        coboundary_residuals.push(total.norm());
        coboundary_scales.push(scale);
    }
    Ok(ExpansionReport {
        expansion_residual,
        expansion_scale,
        coboundary_residuals,
        coboundary_scales,
    })
}

/// One probe: the operator point `x` and form arguments `y, z, w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub x: Cx,
    pub y: Cx,
    pub z: Cx,
    pub w: Cx,
}

/// Deterministic probes in the fundamental domain: a Halton sequence over a
/// box around the disks, keeping points away from the circles and from each
/// other within a probe.
pub fn default_probes(s: &SchottkyData, count: usize) -> Vec<Probe> {
    let idx = s.indices();
    let r_max = idx.iter().map(|&a| s.circle(a).radius).fold(0.0, f64::max);
    let (mut lo, mut hi) = (
        Cx::new(f64::INFINITY, f64::INFINITY),
        Cx::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    );
    for &a in &idx {
        let c = s.center(a);
        lo = Cx::new(lo.re.min(c.re), lo.im.min(c.im));
        hi = Cx::new(hi.re.max(c.re), hi.im.max(c.im));
    }
    let pad = 1.0 + 2.0 * r_max;
    let (lo, hi) = (lo - Cx::new(pad, pad), hi + Cx::new(pad, pad));
    let halton = |mut i: usize, b: usize| {
        let (mut f, mut r) = (1.0, 0.0);
        while i > 0 {
            f /= b as f64;
            r += f * (i % b) as f64;
            i /= b;
        }
        r
    };
    let sep = 0.4;
    let mut out = Vec::new();
    let mut current: Vec<Cx> = Vec::new();
    let mut i = 1;
    while out.len() < count && i < 100_000 {
        let z = Cx::new(
            lo.re + (hi.re - lo.re) * halton(i, 2),
            lo.im + (hi.im - lo.im) * halton(i, 3),
        );
        i += 1;
        if s.boundary_distance(z) < 0.3 * r_max.max(0.1)
            || current.iter().any(|c| (c - z).norm() < sep)
        {
            continue;
        }
        current.push(z);
        if current.len() == 4 {
            out.push(Probe {
                x: current[0],
                y: current[1],
                z: current[2],
                w: current[3],
            });
            current.clear();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityResult {
    pub name: String,
    /// Relative residual `|LHS - RHS| / max(|LHS|, |RHS|)` per probe.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub results: Vec<IdentityResult>,
    pub config: VariationConfig,
    pub max_multiplier: f64,
    pub probes: Vec<Probe>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    /// One line per identity.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "identity suite: {} probes, max |q| = {:.3e}, scheme {:?}, h_w = {:e}, h_rho = {:e}\n",
            self.probes.len(),
            self.max_multiplier,
            self.config.scheme,
            self.config.h_w,
            self.config.h_rho
        );
        for r in &self.results {
            out.push_str(&format!(
                "{:<12} max residual {:.3e} (threshold {:.1e}) {}\n",
                r.name,
                r.max_residual,
                r.threshold,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Pass threshold: `1e-5` up to `|q| = 0.03`, ten times looser per doubling
/// beyond.
pub fn pass_threshold(max_multiplier: f64) -> f64 {
    let doublings = (max_multiplier / 0.03).log2().max(0.0);
    1e-5 * 10f64.powf(doublings)
}

/// Per-probe maximum over handles: the first handle opens the entry.
fn worst(r: &mut Vec<f64>, a: usize, v: f64) {
    if a == 1 {
        r.push(v);
    } else if let Some(last) = r.last_mut() {
        *last = last.max(v);
    }
}

fn relative(lhs: Cx, rhs: Cx) -> f64 {
    (lhs - rhs).norm() / lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE)
}

fn form_fn<'a>(
    f: impl Fn(&QuasiformEngine, &[Cx]) -> Result<Cx> + 'a,
    vc: &'a VariationConfig,
) -> impl Fn(&SchottkyData, &[Cx]) -> Result<Cx> + 'a {
    move |s: &SchottkyData, y: &[Cx]| f(&weight_one_engine(s, vc)?, y)
}

/// `∫_z^y ν_a` along the straight segment.
pub fn abel_integral(e: &QuasiformEngine, a: usize, y: Cx, z: Cx, q: &Quadrature) -> Result<Cx> {
    classical::path_integral(|w| Ok(classical::nu(e, a, w)?.value), &[z, y], &[], q)
}

/// Residuals of the seven differential equations for the classical
/// objects at each probe (`ω`, `s`, `ω_{y-z}`, `ν_a`, `∫ν_a`, the period
/// matrix and `log E`), plus the commutativity of two variations.
pub fn identity_suite(
    s: &SchottkyData,
    vc: &VariationConfig,
    probes: &[Probe],
) -> Result<SuiteReport> {
    identity_suite_selected(s, vc, probes, &IDENTITY_NAMES)
}

/// Pass threshold of the commutativity check, which nests two finite
/// differences.
pub const COMMUTATIVITY_THRESHOLD: f64 = 1e-4;

/// Names accepted by [`identity_suite_selected`], in report order. The last
/// entry is the commutativity check on `H = ω(z_1, z_2)`.
pub const IDENTITY_NAMES: [&str; 8] = [
    "omega",
    "proj_conn",
    "omega_diff",
    "nu",
    "abel",
    "rauch",
    "prime_form",
    "commutativity",
];

/// Runs only the identities named in `select`; the report keeps the
/// canonical order.
pub fn identity_suite_selected(
    s: &SchottkyData,
    vc: &VariationConfig,
    probes: &[Probe],
    select: &[&str],
) -> Result<SuiteReport> {
    if let Some(bad) = select.iter().find(|n| !IDENTITY_NAMES.contains(n)) {
        return Err(Error::InvalidConfig(format!("unknown identity {bad:?}")));
    }
    let want = |i: usize| select.contains(&IDENTITY_NAMES[i]);
    let q = Quadrature::default();
    let nab = Nabla::new(s, vc)?;
    let e1 = weight_one_engine(s, vc)?;
    let e2 = nab.engine();
    let g = s.genus();
    let max_multiplier = s
        .handles()
        .iter()
        .map(|h| h.multiplier.norm())
        .fold(0.0, f64::max);
    let threshold = pass_threshold(max_multiplier);

    let h_omega = form_fn(|e, y| Ok(e.omega(y[0], y[1])?.value), vc);
    let h_s = form_fn(|e, y| Ok(classical::proj_connection(e, y[0])?.value), vc);
    let h_odiff = form_fn(
        |e, y| Ok(classical::omega_diff(e, y[1], y[2], y[0])?.value),
        vc,
    );
    let h_loge = form_fn(|e, y| classical::log_prime_form(e, y[0], y[1]), vc);

    // Rauch: ∇Ω does not depend on the probe, so the parameter derivatives
    // are taken once.
    let omega_flat = |t: &SchottkyData| -> Result<Vec<Cx>> {
        Ok(classical::period_values(&weight_one_engine(t, vc)?, &q)?.concat())
    };
    let d_omega = if want(5) {
        tangent_derivatives(&omega_flat, s, vc)?
    } else {
        Vec::new()
    };

    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); IDENTITY_NAMES.len()];
    for p in probes {
        let (x, y, z, w) = (p.x, p.y, p.z, p.w);
        let om = |a: Cx, b: Cx| -> Result<Cx> { Ok(e1.omega(a, b)?.value) };
        let odiff = classical::omega_diff(&e1, y, z, x)?.value;
        let nu_x = classical::nu_all(&e1, x)?;

        if want(0) {
            let lhs = nab.apply_forms(&h_omega, &[1, 1], &[y, z], x)?.value;
            residuals[0].push(relative(lhs, om(x, y)? * om(x, z)?));
        }
        if want(1) {
            let lhs = nab.apply_forms(&h_s, &[2], &[y], x)?.value;
            let rhs = 6.0 * (om(x, y)?.powu(2) - e2.omega(x, y)?.value);
            residuals[1].push(relative(lhs, rhs));
        }
        if want(2) {
            let lhs = nab.apply_forms(&h_odiff, &[1, 0, 0], &[w, y, z], x)?.value;
            residuals[2].push(relative(lhs, odiff * om(x, w)?));
        }
        for a in 1..=g {
            if want(3) {
                let h_nu = form_fn(move |e, y| Ok(classical::nu(e, a, y[0])?.value), vc);
                let lhs = nab.apply_forms(&h_nu, &[1], &[y], x)?.value;
                worst(&mut residuals[3], a, relative(lhs, om(x, y)? * nu_x[a - 1]));
            }
            if want(4) {
                let qq = q.clone();
                let h_abel = form_fn(move |e, y| abel_integral(e, a, y[0], y[1], &qq), vc);
                let lhs = nab.apply_forms(&h_abel, &[0, 0], &[y, z], x)?.value;
                worst(&mut residuals[4], a, relative(lhs, odiff * nu_x[a - 1]));
            }
        }

        // With Ω = ∫_β ν and ∮_α ν = δ the Rauch formula reads
        // ∇(x) Ω_ab = 2πi ν_a(x) ν_b(x).
        if want(5) {
            let theta = e2.theta_all(x)?;
            let grad = contract(&theta, &d_omega);
            let mut worst_rauch: f64 = 0.0;
            for a in 0..g {
                for b in 0..g {
                    let rhs = TWO_PI_I * nu_x[a] * nu_x[b];
                    worst_rauch = worst_rauch.max(relative(grad[a * g + b], rhs));
                }
            }
            residuals[5].push(worst_rauch);
        }

        if want(6) {
            // E has weight (-1/2, -1/2): on log E the operator carries the
            // weight terms -½ ∂_y Ψ_2(x, y) - ½ ∂_z Ψ_2(x, z).
            let weight_terms = -0.5 * (e2.psi_dy(x, y, 1)? + e2.psi_dy(x, z, 1)?);
            let lhs = nab.apply_forms(&h_loge, &[0, 0], &[y, z], x)?.value + weight_terms;
            residuals[6].push(relative(lhs, -0.5 * odiff * odiff));
        }
        if want(7) {
            residuals[7].push(commutativity_residual(s, vc, x, y, z, w)?);
        }
    }
    let results = IDENTITY_NAMES
        .iter()
        .zip(residuals)
        .enumerate()
        .filter(|(i, _)| want(*i))
        .map(|(i, (name, r))| {
            let max_residual = r.iter().copied().fold(0.0, f64::max);
            let threshold = if i == 7 {
                COMMUTATIVITY_THRESHOLD
            } else {
                threshold
            };
            IdentityResult {
                name: (*name).to_string(),
                residuals: r,
                max_residual,
                threshold,
                pass: max_residual < threshold,
            }
        })
        .collect();
    Ok(SuiteReport {
        results,
        config: vc.clone(),
        max_multiplier,
        probes: probes.to_vec(),
    })
}

/// Both sides of `∇_{2,m;x,z}(y) ∇_{m;z}(x) H = ∇_{2,m;y,z}(x) ∇_{m;z}(y) H`
/// for `H = ω(z_1, z_2)`.
pub fn commutativity_sides(
    s: &SchottkyData,
    vc: &VariationConfig,
    x: Cx,
    y: Cx,
    z1: Cx,
    z2: Cx,
) -> Result<(Cx, Cx)> {
    let h = form_fn(|e, z| Ok(e.omega(z[0], z[1])?.value), vc);
    // ∇_{m;z}(v[0]) H at (z_1, z_2) = (v[1], v[2]), a form of weight (2, 1, 1).
    let inner = |t: &SchottkyData, v: &[Cx]| -> Result<Cx> {
        Ok(nabla_forms(&h, &[1, 1], &[v[1], v[2]], v[0], t, vc)?.value)
    };
    let side = |a: Cx, b: Cx| -> Result<Cx> {
        Ok(nabla_forms(&inner, &[2, 1, 1], &[a, z1, z2], b, s, vc)?.value)
    };
    Ok((side(x, y)?, side(y, x)?))
}

pub fn commutativity_residual(
    s: &SchottkyData,
    vc: &VariationConfig,
    x: Cx,
    y: Cx,
    z1: Cx,
    z2: Cx,
) -> Result<f64> {
    let (l, r) = commutativity_sides(s, vc, x, y, z1, z2)?;
    Ok(relative(l, r))
}
