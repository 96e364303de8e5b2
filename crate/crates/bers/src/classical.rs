//! Contour quadrature and the classical weight-one objects: the normalized
//! holomorphic differentials, the period matrix, the third-kind
//! differential, the projective connection and the prime form.
//!
//! Every function here expects an engine of weight one. Closed forms read
//! off the sewing matrices are paired with a quadrature route
//! (`*_by_quadrature`) that only uses `ω(x, y)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DVector;
use serde::Serialize;

use crate::kernels::FormValue;
use crate::schottky::SchottkyData;
use crate::sewing::QuasiformEngine;
use crate::{Cx, Error, Result};

const I: Cx = Cx::new(0.0, 1.0);
const TWO_PI_I: Cx = Cx::new(0.0, 2.0 * PI);
/// Node count at which circle refinement gives up.
const MAX_CIRCLE_NODES: usize = 4096;

/// Quadrature settings shared by circle and path integrals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quadrature {
    /// Starting trapezoid node count on circles.
    pub circle_nodes: usize,
    /// Gauss-Legendre order per panel.
    pub gl_order: usize,
    /// Relative tolerance.
    pub tol: f64,
    /// Bisection depth cap for path panels.
    pub max_depth: usize,
    /// Minimum allowed distance between a path and a pole.
    pub pole_tol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            circle_nodes: 64,
            gl_order: 20,
            tol: 1e-10,
            max_depth: 40,
            pole_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ContourSpec {
    Circle { center: Cx, radius: f64 },
    Polyline { nodes: Vec<Cx> },
}

impl ContourSpec {
    pub fn circle(center: Cx, radius: f64) -> Self {
        ContourSpec::Circle { center, radius }
    }

    pub fn polyline(nodes: Vec<Cx>) -> Self {
        ContourSpec::Polyline { nodes }
    }

    /// Distance from the contour to the nearest of `poles`.
    pub fn min_pole_distance(&self, poles: &[Cx]) -> f64 {
        match self {
            ContourSpec::Circle { center, radius } => poles
                .iter()
                .map(|p| ((p - center).norm() - radius).abs())
                .fold(f64::INFINITY, f64::min),
            ContourSpec::Polyline { nodes } => nodes
                .windows(2)
                .flat_map(|w| poles.iter().map(move |&p| segment_distance(w[0], w[1], p)))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn segment_distance(a: Cx, b: Cx, p: Cx) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a) * d.conj()).re / len2;
    (p - (a + d * t.clamp(0.0, 1.0))).norm()
}

/// `∮ f(z) dz` counterclockwise, trapezoid rule with node doubling.
pub fn circle_integral(
    f: impl Fn(Cx) -> Result<Cx>,
    center: Cx,
    radius: f64,
    q: &Quadrature,
) -> Result<Cx> {
    // Sum over nodes k*2π/n for k in `range` with stride, without the weight.
    let sum = |n: usize, odd_only: bool| -> Result<(Cx, f64)> {
        let mut acc = Cx::new(0.0, 0.0);
        let mut abs = 0.0;
        let step = if odd_only { 2 } else { 1 };
        let start = usize::from(odd_only);
        for k in (start..n).step_by(step) {
            let e = Cx::from_polar(radius, 2.0 * PI * k as f64 / n as f64);
            let v = f(center + e)? * e;
            acc += v;
            abs += v.norm();
        }
        Ok((acc, abs))
    };
    let mut n = q.circle_nodes.max(4);
    let (mut acc, mut abs) = sum(n, false)?;
    let mut prev = acc * I * (2.0 * PI / n as f64);
    loop {
        let (a2, b2) = sum(2 * n, true)?;
        acc += a2;
        abs += b2;
        n *= 2;
        let cur = acc * I * (2.0 * PI / n as f64);
        let scale = abs * 2.0 * PI / n as f64;
        let diff = (cur - prev).norm();
        if diff <= q.tol * scale.max(f64::MIN_POSITIVE) {
            return Ok(cur);
        }
        if n >= MAX_CIRCLE_NODES {
            return Err(Error::NonConvergent(diff.max(q.tol * scale)));
        }
        prev = cur;
    }
}

/// Contour moment `(1/2πi) ∮ (z - c)^ℓ f(z) dz` on a circle about `c`.
pub fn circle_moment(
    f: impl Fn(Cx) -> Result<Cx>,
    center: Cx,
    radius: f64,
    ell: i32,
    q: &Quadrature,
) -> Result<Cx> {
    let v = circle_integral(|z| Ok(f(z)? * (z - center).powi(ell)), center, radius, q)?;
    Ok(v / TWO_PI_I)
}

struct Panels {
    rule: Vec<(f64, f64)>,
}

impl Panels {
    fn new(order: usize) -> Self {
        let n = NonZeroUsize::new(order.max(2)).expect("order is positive");
        Self {
            rule: GaussLegendre::new(n).as_node_weight_pairs().to_vec(),
        }
    }

    /// Returns `(∫ f, ∫ |f| |dz|)` on one panel.
    fn panel(&self, f: &impl Fn(Cx) -> Result<Cx>, a: Cx, b: Cx) -> Result<(Cx, f64)> {
        let half = (b - a) * 0.5;
        let mid = (a + b) * 0.5;
        let mut acc = Cx::new(0.0, 0.0);
        let mut abs = 0.0;
        for &(t, w) in &self.rule {
            let v = f(mid + half * t)? * w;
            acc += v;
            abs += v.norm();
        }
        Ok((acc * half, abs * half.norm()))
    }

    fn adaptive(
        &self,
        f: &impl Fn(Cx) -> Result<Cx>,
        a: Cx,
        b: Cx,
        whole: Cx,
        target: f64,
        depth: usize,
    ) -> Result<Cx> {
        let m = (a + b) * 0.5;
        let (l, _) = self.panel(f, a, m)?;
        let (r, _) = self.panel(f, m, b)?;
        let err = (l + r - whole).norm();
        if err <= target {
            return Ok(l + r);
        }
        if depth == 0 {
            return Err(Error::NonConvergent(err));
        }
        Ok(self.adaptive(f, a, m, l, target * 0.5, depth - 1)?
            + self.adaptive(f, m, b, r, target * 0.5, depth - 1)?)
    }
}

/// `∫ f(z) dz` along the straight segment from `a` to `b`, adaptive
/// Gauss-Legendre with bisection.
pub fn segment_integral(f: impl Fn(Cx) -> Result<Cx>, a: Cx, b: Cx, q: &Quadrature) -> Result<Cx> {
    path_integral(f, &[a, b], &[], q)
}

/// `∫ f(z) dz` along a polyline. Fails with `PathThroughPole` when the path
/// comes within `q.pole_tol` of one of `poles`.
pub fn path_integral(
    f: impl Fn(Cx) -> Result<Cx>,
    nodes: &[Cx],
    poles: &[Cx],
    q: &Quadrature,
) -> Result<Cx> {
    let spec = ContourSpec::polyline(nodes.to_vec());
    let d = spec.min_pole_distance(poles);
    if d < q.pole_tol {
        return Err(Error::PathThroughPole(d));
    }
    let panels = Panels::new(q.gl_order);
    let firsts = nodes
        .windows(2)
        .map(|w| panels.panel(&f, w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    let scale: f64 = firsts.iter().map(|p| p.1).sum();
    let total_len: f64 = nodes.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let mut acc = Cx::new(0.0, 0.0);
    for (w, (whole, _)) in nodes.windows(2).zip(firsts) {
        let share = (w[1] - w[0]).norm() / total_len.max(f64::MIN_POSITIVE);
        let target = q.tol * scale.max(f64::MIN_POSITIVE) * share;
        acc += panels.adaptive(&f, w[0], w[1], whole, target, q.max_depth)?;
    }
    Ok(acc)
}

pub fn contour_integral(
    f: impl Fn(Cx) -> Result<Cx>,
    c: &ContourSpec,
    poles: &[Cx],
    q: &Quadrature,
) -> Result<Cx> {
    let d = c.min_pole_distance(poles);
    if d < q.pole_tol {
        return Err(Error::PathThroughPole(d));
    }
    match c {
        ContourSpec::Circle { center, radius } => circle_integral(f, *center, *radius, q),
        ContourSpec::Polyline { nodes } => path_integral(f, nodes, &[], q),
    }
}

fn require_weight_one(e: &QuasiformEngine) -> Result<()> {
    if e.weight() != 1 {
        return Err(Error::InvalidConfig(format!(
            "weight-one engine required, got weight {}",
            e.weight()
        )));
    }
    Ok(())
}

fn check_handle(s: &SchottkyData, a: usize) -> Result<()> {
    if a == 0 || a > s.genus() {
        return Err(Error::InvalidConfig(format!("no handle {a}")));
    }
    Ok(())
}

/// Circle concentric with `C_letter`, pushed into the fundamental domain
/// where the mode expansions are accurate and kept outside the points of
/// `avoid`. On the Schottky circles themselves a point and its generator
/// image are both candidate reductions, and the truncated kernels disagree
/// between the two.
pub fn pushed_circle(s: &SchottkyData, letter: i32, avoid: &[Cx]) -> Result<(Cx, f64)> {
    let c = s.circle(letter);
    let room = s
        .indices()
        .into_iter()
        .filter(|&b| b != letter)
        .map(|b| {
            let o = s.circle(b);
            (o.center - c.center).norm() - o.radius - c.radius
        })
        .chain(avoid.iter().map(|&z| (z - c.center).norm() - c.radius))
        .fold(f64::INFINITY, f64::min);
    if room <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "no room for a contour around circle {letter}"
        )));
    }
    Ok((c.center, c.radius + (0.5 * room).min(0.25 * c.radius)))
}

/// Alpha cycle of handle `a`: a circle homologous to `C_{-a}`.
pub fn alpha_contour(s: &SchottkyData, a: usize, avoid: &[Cx]) -> Result<(Cx, f64)> {
    check_handle(s, a)?;
    pushed_circle(s, -(a as i32), avoid)
}

/// Path from a point `z` of `C_a` to `γ_a z` on `C_{-a}` that stays outside
/// the open disks and keeps at least `clearance` from each point of `avoid`.
///
/// The first candidate starts at the point of `C_a` nearest `w_{-a}`; later
/// candidates rotate the start point, then try one intermediate waypoint.
pub fn beta_path(s: &SchottkyData, a: usize, avoid: &[Cx], clearance: f64) -> Result<Vec<Cx>> {
    check_handle(s, a)?;
    let a = a as i32;
    let circle = s.circle(a);
    let base_angle = (s.center(-a) - circle.center).arg();
    let scale = s
        .indices()
        .into_iter()
        .map(|b| s.circle(b).radius)
        .fold(0.0, f64::max);
    let clear_of_disks = |p: &[Cx]| -> bool {
        p.windows(2).all(|w| {
            (1..64).all(|k| {
                let z = w[0] + (w[1] - w[0]) * (k as f64 / 64.0);
                s.boundary_distance(z) > -1e-12 * scale
            })
        }) && p[1..p.len() - 1]
            .iter()
            .all(|&z| s.boundary_distance(z) > 0.0)
    };
    let clear_of_points =
        |p: &[Cx]| ContourSpec::polyline(p.to_vec()).min_pole_distance(avoid) >= clearance;
    let starts: Vec<Cx> = (0..48)
        .map(|k| {
            // 0, +δ, -δ, +2δ, ...
            let j = (k + 1) / 2;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            circle.point(base_angle + sign * j as f64 * PI / 24.0)
        })
        .collect();
    for &z in &starts {
        let path = vec![z, s.apply_generator(a, z)];
        if clear_of_disks(&path) && clear_of_points(&path) {
            return Ok(path);
        }
    }
    for &z in &starts {
        let end = s.apply_generator(a, z);
        let mid = (z + end) * 0.5;
        let normal = (end - z) * I;
        for k in 1..=12 {
            for sign in [1.0, -1.0] {
                let path = vec![z, mid + normal * (sign * 0.25 * k as f64), end];
                if clear_of_disks(&path) && clear_of_points(&path) {
                    return Ok(path);
                }
            }
        }
    }
    Err(Error::PathThroughPole(clearance))
}

/// Normalized holomorphic differential `ν_a(x)` from the weight-one spanning
/// form: `ν_a = -Θ_{1,a}^0 / 2πi`, so that `∮_{C_{-a}} ν_b = δ_{ab}`.
pub fn nu(e: &QuasiformEngine, a: usize, x: Cx) -> Result<FormValue> {
    require_weight_one(e)?;
    check_handle(e.schottky(), a)?;
    let v = e.theta(a, 0, x)?.value;
    Ok(FormValue::new(-v / TWO_PI_I, vec![1]))
}

/// All `ν_a(x)`, indexed `a - 1`.
pub fn nu_all(e: &QuasiformEngine, x: Cx) -> Result<Vec<Cx>> {
    require_weight_one(e)?;
    Ok(e.theta_all(x)?
        .into_iter()
        .map(|row| -row[0] / TWO_PI_I)
        .collect())
}

/// `ν_a(x)` as `(1/2πi) ∫_{β_a} ω(x, ·)` along [`beta_path`].
pub fn nu_by_quadrature(e: &QuasiformEngine, a: usize, x: Cx, q: &Quadrature) -> Result<Cx> {
    require_weight_one(e)?;
    let s = e.schottky();
    let path = beta_path(s, a, &[x], 10.0 * q.pole_tol)?;
    let v = path_integral(|y| Ok(e.omega(x, y)?.value), &path, &[x], q)?;
    Ok(v / TWO_PI_I)
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodMatrix {
    /// `Ω_{ab} = ∫_{β_a} ν_b`, indexed `[a-1][b-1]`.
    pub omega: Vec<Vec<Cx>>,
    /// `∮_{C_{-a}} ν_b - δ_{ab}`.
    pub normalization: Vec<Vec<Cx>>,
    pub symmetry_residual: f64,
    pub normalization_residual: f64,
}

impl PeriodMatrix {
    pub fn genus(&self) -> usize {
        self.omega.len()
    }
}

/// `Ω_{ab} = ∫_{β_a} ν_b` without the residual checks.
pub fn period_values(e: &QuasiformEngine, q: &Quadrature) -> Result<Vec<Vec<Cx>>> {
    require_weight_one(e)?;
    let s = e.schottky();
    let g = s.genus();
    (1..=g)
        .map(|a| {
            let path = beta_path(s, a, &[], 0.0)?;
            (1..=g)
                .map(|b| path_integral(|x| Ok(nu(e, b, x)?.value), &path, &[], q))
                .collect()
        })
        .collect()
}

/// Period matrix with symmetry and normalization residuals. With this
/// normalization `2πi Ω_{11} ≈ log q` at genus one.
pub fn period_matrix(e: &QuasiformEngine, q: &Quadrature) -> Result<PeriodMatrix> {
    let omega = period_values(e, q)?;
    let s = e.schottky();
    let g = s.genus();
    let mut normalization = vec![vec![Cx::new(0.0, 0.0); g]; g];
    for a in 1..=g {
        for b in 1..=g {
            let (center, radius) = alpha_contour(s, a, &[])?;
            let alpha = circle_integral(|x| Ok(nu(e, b, x)?.value), center, radius, q)?;
            normalization[a - 1][b - 1] = alpha - if a == b { 1.0 } else { 0.0 };
        }
    }
    let mut symmetry_residual: f64 = 0.0;
    let mut normalization_residual: f64 = 0.0;
    for a in 0..g {
        for b in 0..g {
            symmetry_residual = symmetry_residual.max((omega[a][b] - omega[b][a]).norm());
            normalization_residual = normalization_residual.max(normalization[a][b].norm());
        }
    }
    Ok(PeriodMatrix {
        omega,
        normalization,
        symmetry_residual,
        normalization_residual,
    })
}

/// `∮_{C_{-a}} ω(x, y) dy`, which vanishes for `x` in the fundamental domain.
pub fn alpha_period_of_omega(e: &QuasiformEngine, a: usize, x: Cx, q: &Quadrature) -> Result<Cx> {
    let (center, radius) = alpha_contour(e.schottky(), a, &[x])?;
    circle_integral(|y| Ok(e.omega(x, y)?.value), center, radius, q)
}

/// Third-kind differential `ω_{y-z}(x) = Ψ_1(x, y) - Ψ_1(x, z)`, weight
/// `(1, 0, 0)` in `(x, y, z)`; residue `+1` at `x = y` and `-1` at `x = z`.
pub fn omega_diff(e: &QuasiformEngine, y: Cx, z: Cx, x: Cx) -> Result<FormValue> {
    require_weight_one(e)?;
    let v = e.psi(x, y)?.value - e.psi(x, z)?.value;
    Ok(FormValue::new(v, vec![1, 0, 0]))
}

/// `ω_{y-z}(x)` as `∫_z^y ω(x, ·)` along the straight segment.
pub fn omega_diff_by_quadrature(
    e: &QuasiformEngine,
    y: Cx,
    z: Cx,
    x: Cx,
    q: &Quadrature,
) -> Result<Cx> {
    require_weight_one(e)?;
    path_integral(|w| Ok(e.omega(x, w)?.value), &[z, y], &[x], q)
}

/// Projective connection `s(x) = 6 L̃(x)(I - Ã)^{-1} R̃(x)`, weight 2. Möbius
/// maps have vanishing Schwarzian, so `s` transforms as a quadratic
/// differential and points outside the fundamental domain are reduced.
pub fn proj_connection(e: &QuasiformEngine, x: Cx) -> Result<FormValue> {
    require_weight_one(e)?;
    let (xr, g) = e.schottky().reduce_to_fundamental(x)?;
    let u = e.resolvent().tr_mul(&e.l_tilde(xr));
    let v = 6.0 * u.dot(&e.r_vector(xr, 1)) * g.map.derivative(x).powu(2);
    Ok(FormValue::new(v, vec![2]))
}

/// `s(x)` from its defining limit `6(ω(x, x+h) - h^{-2})`, symmetrized in
/// `±h` and Richardson-extrapolated over `h, h/2, h/4`. Steps below `1e-3`
/// lose digits to the `h^{-2}` cancellation; `1e-2` is a good default.
pub fn proj_connection_limit(e: &QuasiformEngine, x: Cx, h: f64) -> Result<Cx> {
    require_weight_one(e)?;
    let level = |h: f64| -> Result<Cx> {
        // Subtract the pole at the rounded offset actually used.
        let side = |y: Cx| -> Result<Cx> {
            let d = y - x;
            Ok(e.omega(x, y)?.value - 1.0 / (d * d))
        };
        let hp = Cx::new(h, 0.0);
        Ok(3.0 * (side(x + hp)? + side(x - hp)?))
    };
    let (a0, a1, a2) = (level(h)?, level(h / 2.0)?, level(h / 4.0)?);
    let r0 = (4.0 * a1 - a0) / 3.0;
    let r1 = (4.0 * a2 - a1) / 3.0;
    Ok((16.0 * r1 - r0) / 15.0)
}

/// `∫ L̃(w) dw` antiderivative: `Q_b^n(w) = -(s_b/(w - w_b))^{n+1}/(n + 1)`.
fn q_vector(e: &QuasiformEngine, w: Cx) -> DVector<Cx> {
    let s = e.schottky();
    let idx = s.indices();
    let m = e.modes();
    DVector::from_fn(idx.len() * m, |i, _| {
        let b = idx[i / m];
        let n = i % m;
        -(s.sqrt_rho(b) / (w - s.center(b))).powu(n as u32 + 1) / (n as f64 + 1.0)
    })
}

/// Regularized `log E(y, z)` for `y, z` in the fundamental domain, defined
/// modulo `iπ`:
/// `log(y - z) + ½ ∫_y^z [ω_{y-z}(w) - 1/(w-y) + 1/(w-z)] dw`.
/// The bracket is `u(w)·(R(y) - R(z))` with `u = L̃(I - Ã)^{-1}`, so the
/// integral is closed form.
pub fn log_prime_form(e: &QuasiformEngine, y: Cx, z: Cx) -> Result<Cx> {
    require_weight_one(e)?;
    if y == z {
        return Err(Error::PoleEvaluation("y = z".into()));
    }
    let s = e.schottky();
    for p in [y, z] {
        if !s.in_fundamental_domain(p) {
            return Err(Error::InvalidConfig(format!(
                "{p} is outside the fundamental domain"
            )));
        }
    }
    let dq = q_vector(e, z) - q_vector(e, y);
    let dr = e.r_vector(y, 0) - e.r_vector(z, 0);
    let k_dr = e.resolvent() * dr;
    Ok((y - z).ln() + 0.5 * dq.dot(&k_dr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelConfig;

    fn c(re: f64, im: f64) -> Cx {
        Cx::new(re, im)
    }

    fn genus_two() -> SchottkyData {
        SchottkyData::from_fixed_points(&[
            (c(1.0, 0.0), c(-1.0, 0.0), c(0.02, 0.0)),
            (c(0.5, 2.5), c(-0.5, 2.5), c(0.015, 0.01)),
        ])
        .unwrap()
    }

    fn engine(s: &SchottkyData) -> QuasiformEngine {
        QuasiformEngine::assemble(s, &KernelConfig::reference(1), 20).unwrap()
    }

    #[test]
    fn circle_integral_basics() {
        let q = Quadrature::default();
        let v = circle_integral(|z| Ok(1.0 / z), c(0.0, 0.0), 1.0, &q).unwrap();
        assert!((v - TWO_PI_I).norm() < 1e-14);
        for k in -5..=5 {
            if k == -1 {
                continue;
            }
            let v = circle_integral(|z| Ok(z.powi(k)), c(0.3, 0.1), 1.0, &q).unwrap();
            assert!(v.norm() < 1e-13, "k={k}: {v}");
        }
    }

    #[test]
    fn circle_integral_reports_nonconvergence() {
        let q = Quadrature {
            circle_nodes: 4,
            ..Quadrature::default()
        };
        // Pole very close to the contour.
        let r = circle_integral(|z| Ok(1.0 / (z - 1.0001)), c(0.0, 0.0), 1.0, &q);
        assert!(matches!(r, Err(Error::NonConvergent(_))));
    }

    #[test]
    fn segment_integral_matches_antiderivative() {
        let q = Quadrature::default();
        let (a, b) = (c(-1.0, 0.5), c(2.0, 1.5));
        let v = segment_integral(|z| Ok(z.exp() / (z - 3.0)), a, b, &q).unwrap();
        let w = path_integral(|z| Ok(z.exp() / (z - 3.0)), &[a, c(0.0, -2.0), b], &[], &q).unwrap();
        assert!((v - w).norm() < 1e-12);
        let p = segment_integral(|z| Ok(z * z), a, b, &q).unwrap();
        assert!((p - (b.powi(3) - a.powi(3)) / 3.0).norm() < 1e-13);
    }

    #[test]
    fn alpha_contour_stays_inside_the_domain() {
        let s = genus_two();
        let x = c(1.2, 0.48);
        let (center, radius) = alpha_contour(&s, 1, &[x]).unwrap();
        assert!(radius > s.circle(-1).radius);
        for k in 0..32 {
            let z = center + Cx::from_polar(radius, k as f64 * PI / 16.0);
            assert!(s.in_fundamental_domain(z) && s.boundary_distance(z) > 0.0);
        }
        // Points just off C_{-1} leave no room.
        let hug = s.circle(-1).center + c(s.circle(-1).radius, 0.0);
        assert!(alpha_contour(&s, 1, &[hug]).is_err());
        assert!(alpha_contour(&s, 3, &[]).is_err());
    }

    #[test]
    fn path_through_pole_is_rejected() {
        let q = Quadrature::default();
        let r = path_integral(
            |z| Ok(1.0 / z),
            &[c(-1.0, 0.0), c(1.0, 0.0)],
            &[c(0.0, 0.0)],
            &q,
        );
        assert!(matches!(r, Err(Error::PathThroughPole(_))));
    }

    #[test]
    fn kernel_residue_is_one() {
        let e = engine(&genus_two());
        let y = c(0.2, 1.1);
        let q = Quadrature::default();
        let v = circle_moment(|x| Ok(e.psi(x, y)?.value), y, 0.1, 0, &q).unwrap();
        assert!((v - 1.0).norm() < 1e-12);
    }

    #[test]
    fn nu_routes_agree() {
        let s = genus_two();
        let e = engine(&s);
        let q = Quadrature::default();
        for x in [c(0.1, 1.2), c(-2.0, -1.0), c(2.3, 3.1)] {
            for a in 1..=2 {
                let closed = nu(&e, a, x).unwrap().value;
                let quad = nu_by_quadrature(&e, a, x, &q).unwrap();
                assert!(
                    (closed - quad).norm() < 1e-10 * closed.norm().max(1e-3),
                    "{closed} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn nu_small_q_limit() {
        let q = c(1e-6, 0.0);
        let (wp, wm) = (c(1.0, 0.0), c(-1.0, 0.0));
        let s = SchottkyData::from_fixed_points(&[(wp, wm, q)]).unwrap();
        let e = engine(&s);
        let x = c(0.3, 1.7);
        let v = nu(&e, 1, x).unwrap().value;
        let expect = (1.0 / (x - wm) - 1.0 / (x - wp)) / TWO_PI_I;
        assert!(
            (v - expect).norm() < 1e-4 * expect.norm(),
            "{v} vs {expect}"
        );
    }

    #[test]
    fn nu_is_holomorphic() {
        let e = engine(&genus_two());
        let q = Quadrature::default();
        let v = circle_integral(|x| Ok(nu(&e, 1, x)?.value), c(0.2, 1.2), 0.3, &q).unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn period_matrix_residuals() {
        let e = engine(&genus_two());
        let pm = period_matrix(&e, &Quadrature::default()).unwrap();
        assert!(pm.symmetry_residual < 1e-10, "{}", pm.symmetry_residual);
        assert!(
            pm.normalization_residual < 1e-10,
            "{}",
            pm.normalization_residual
        );
        // Imaginary part of Ω is positive definite.
        let im = |a: usize, b: usize| pm.omega[a][b].im;
        assert!(im(0, 0) > 0.0 && im(0, 0) * im(1, 1) - im(0, 1) * im(1, 0) > 0.0);
    }

    #[test]
    fn genus_one_period_is_log_q() {
        let q = c(0.01, 0.005);
        let s = SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), q)]).unwrap();
        let e = engine(&s);
        let pm = period_matrix(&e, &Quadrature::default()).unwrap();
        let tau = pm.omega[0][0] * TWO_PI_I;
        // Equal modulo 2πi; the leading correction vanishes at genus one.
        let d = tau - q.ln();
        let k = (d.im / (2.0 * PI)).round();
        assert!(
            (d - Cx::new(0.0, 2.0 * PI * k)).norm() < 1e-9,
            "{tau} vs {}",
            q.ln()
        );
    }

    #[test]
    fn omega_has_vanishing_alpha_periods() {
        let e = engine(&genus_two());
        let q = Quadrature::default();
        for a in 1..=2 {
            let v = alpha_period_of_omega(&e, a, c(0.1, 1.3), &q).unwrap();
            assert!(v.norm() < 1e-11, "{v}");
        }
    }

    #[test]
    fn omega_diff_routes_and_residues() {
        let e = engine(&genus_two());
        let q = Quadrature::default();
        let (y, z, x) = (c(0.2, 1.1), c(-1.8, 0.9), c(0.4, -1.3));
        let closed = omega_diff(&e, y, z, x).unwrap().value;
        let quad = omega_diff_by_quadrature(&e, y, z, x, &q).unwrap();
        assert!((closed - quad).norm() < 1e-11, "{closed} vs {quad}");
        let swapped = omega_diff(&e, z, y, x).unwrap().value;
        assert!((closed + swapped).norm() < 1e-12);
        let ry = circle_moment(|x| Ok(omega_diff(&e, y, z, x)?.value), y, 0.2, 0, &q).unwrap();
        let rz = circle_moment(|x| Ok(omega_diff(&e, y, z, x)?.value), z, 0.2, 0, &q).unwrap();
        assert!((ry - 1.0).norm() < 1e-11 && (rz + 1.0).norm() < 1e-11);
    }

    #[test]
    fn omega_diff_rational_limit() {
        let s =
            SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), c(1e-14, 0.0))]).unwrap();
        let e = engine(&s);
        let (y, z, x) = (c(0.2, 1.1), c(-1.8, 0.9), c(0.4, -1.3));
        let v = omega_diff(&e, y, z, x).unwrap().value;
        assert!((v - (1.0 / (x - y) - 1.0 / (x - z))).norm() < 1e-12);
    }

    #[test]
    fn proj_connection_routes() {
        let e = engine(&genus_two());
        for x in [c(0.1, 1.2), c(-2.0, -1.0)] {
            let closed = proj_connection(&e, x).unwrap().value;
            let limit = proj_connection_limit(&e, x, 1e-2).unwrap();
            assert!(
                (closed - limit).norm() < 1e-7 * closed.norm(),
                "{closed} vs {limit}"
            );
        }
        let q = Quadrature::default();
        let v =
            circle_integral(|x| Ok(proj_connection(&e, x)?.value), c(0.2, 1.2), 0.3, &q).unwrap();
        assert!(v.norm() < 1e-11);
        let flat =
            SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), c(1e-14, 0.0))]).unwrap();
        assert!(
            proj_connection(&engine(&flat), c(0.3, 0.4))
                .unwrap()
                .value
                .norm()
                < 1e-12
        );
    }

    #[test]
    fn prime_form_cross_ratio() {
        let e = engine(&genus_two());
        let q = Quadrature::default();
        let (y, z) = (c(0.2, 1.1), c(-1.8, 0.9));
        let (p, pt) = (c(0.5, -0.6), c(2.2, -0.3));
        let lhs = path_integral(
            |w| Ok(omega_diff(&e, y, z, w)?.value),
            &[p, pt],
            &[y, z],
            &q,
        )
        .unwrap();
        let le = |a, b| log_prime_form(&e, a, b).unwrap();
        let rhs = le(y, pt) + le(p, z) - le(pt, z) - le(y, p);
        let d = lhs - rhs;
        let k = (d.im / (2.0 * PI)).round();
        assert!(
            (d - Cx::new(0.0, 2.0 * PI * k)).norm() < 1e-11,
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn prime_form_mixed_derivative_is_omega() {
        let e = engine(&genus_two());
        let (y, z) = (c(0.2, 1.1), c(-1.8, 0.9));
        let h = 1e-3;
        let le = |dy: f64, dz: f64| log_prime_form(&e, y + dy, z + dz).unwrap();
        let fd = (le(h, h) - le(h, -h) - le(-h, h) + le(-h, -h)) / (4.0 * h * h);
        let w = e.omega(y, z).unwrap().value;
        assert!((fd - w).norm() < 1e-6 * w.norm(), "{fd} vs {w}");
    }

    #[test]
    fn prime_form_antisymmetry_and_rational_limit() {
        let e = engine(&genus_two());
        let (y, z) = (c(0.2, 1.1), c(-1.8, 0.9));
        let d = log_prime_form(&e, y, z).unwrap() - log_prime_form(&e, z, y).unwrap();
        let k = ((d.im - PI) / (2.0 * PI)).round();
        assert!((d - Cx::new(0.0, PI + 2.0 * PI * k)).norm() < 1e-12);
        let flat =
            SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), c(1e-14, 0.0))]).unwrap();
        let v = log_prime_form(&engine(&flat), y, z).unwrap();
        assert!((v - (y - z).ln()).norm() < 1e-12);
    }
}
