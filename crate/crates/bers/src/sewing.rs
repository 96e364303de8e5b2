//! Truncated sewing solve for the Bers quasiform `Ψ_N`, the bidifferential
//! `ω_N` and the holomorphic spanning forms `Θ_{N,a}^ℓ`.
//!
//! Rows and columns of the moment matrices are indexed by `(a, m)` with `a`
//! in the order `1, -1, 2, -2, …` and `0 <= m < M`.
//!
//! Anchors at limit points are handled in two steps. The sewing solve runs
//! for the base kernel (the reference kernel `1/(x-y)` in that case), and the
//! result is corrected by
//! `Ψ(x, y) = Ψ_base(x, y) - Σ_k p_k(y) Ψ_base(x, A_k)`,
//! where `p_k` is the Lagrange basis on the anchors. At a fixed point `A` of
//! `γ` the base value follows from quasiperiodicity:
//! `Ψ_base(x, A) = χ[γ](x, A) / (γ'(A)^{1-N} - 1)`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernels::{binomial, powi, Anchors, FormValue, Kernel, KernelConfig, Poly};
use crate::schottky::{GroupWord, SchottkyData};
use crate::{Cx, Error, Result};

/// Default mode cutoff.
pub const DEFAULT_MODES: usize = 16;

const CACHE_VERSION: &str = "bers-engine-v1";

/// Dense block matrix with rows `(a, m)` and columns `(b, n)`.
#[derive(Clone, Debug)]
pub struct BlockMomentMatrix {
    pub weight: usize,
    pub modes: usize,
    pub indices: Vec<i32>,
    pub data: DMatrix<Cx>,
}

impl BlockMomentMatrix {
    pub fn entry(&self, a: i32, m: usize, b: i32, n: usize) -> Cx {
        self.data[(
            SchottkyData::slot(a) * self.modes + m,
            SchottkyData::slot(b) * self.modes + n,
        )]
    }
}

/// `Ã` in closed form.
pub fn a_tilde(s: &SchottkyData, weight: usize, modes: usize) -> BlockMomentMatrix {
    let idx = s.indices();
    let dim = idx.len() * modes;
    let mut data = DMatrix::<Cx>::zeros(dim, dim);
    let big_n = weight as i32;
    for &a in &idx {
        for &b in &idx {
            if a == -b {
                continue;
            }
            let d = s.center(-a) - s.center(b);
            let ra = s.sqrt_rho(a) / d;
            let rb = s.sqrt_rho(b) / d;
            let rb_base = rb.powu(2 * weight as u32 - 1);
            for m in 0..modes {
                let sign = if (m as i32 + big_n) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                let left = ra.powu(m as u32 + 1) * sign;
                let mut right = rb_base;
                for n in 0..modes {
                    let c = binomial(m + n + 2 * weight - 1, m);
                    data[(
                        SchottkyData::slot(a) * modes + m,
                        SchottkyData::slot(b) * modes + n,
                    )] = left * right * c;
                    right *= rb;
                }
            }
        }
    }
    BlockMomentMatrix {
        weight,
        modes,
        indices: idx,
        data,
    }
}

/// Coefficients `c^ℓ` of `p(γ_a y) (γ_a' y)^{1-N} - p(y) = Σ_ℓ c^ℓ (y - w_a)^ℓ`
/// for a polynomial `p` of degree at most `2N - 2`.
pub fn mobius_coboundary(s: &SchottkyData, weight: usize, p: &Poly, a: i32) -> Vec<Cx> {
    let top = 2 * weight - 2;
    let rho = s.rho(a);
    let jac = powi(-rho, 1 - weight as i64);
    (0..=top)
        .map(|ell| {
            let j = top - ell;
            p.taylor_coeff(j, s.center(-a)) * rho.powu(j as u32) * jac
                - p.taylor_coeff(ell, s.center(a))
        })
        .collect()
}

#[derive(Clone, Debug)]
struct LimitAnchor {
    point: Cx,
    word: Vec<i32>,
    /// `γ'(A)^{1-N} - 1`.
    denom: Cx,
    basis: Poly,
    /// Coboundary coefficients per positive handle and ℓ.
    coboundary: Vec<Vec<Cx>>,
}

/// Tail diagnostics of a word sum.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSum {
    pub value: Cx,
    /// Contribution of each word length `0..=K`.
    pub shells: Vec<Cx>,
    /// Magnitude of the last shell, a proxy for the truncation error.
    pub tail_estimate: f64,
}

/// Assembled sewing data for one surface, weight and mode cutoff.
#[derive(Clone, Debug)]
pub struct QuasiformEngine {
    schottky: SchottkyData,
    config: KernelConfig,
    modes: usize,
    kernel: Kernel,
    a_tilde: BlockMomentMatrix,
    resolvent: DMatrix<Cx>,
    /// The sewing `A` moments without the `ρ_b^{ℓ/2}` column factor.
    t_moments: DMatrix<Cx>,
    logdet: Cx,
    limit: Vec<LimitAnchor>,
}

impl QuasiformEngine {
    pub fn assemble(s: &SchottkyData, cfg: &KernelConfig, modes: usize) -> Result<Self> {
        let a_t = a_tilde(s, cfg.weight, modes);
        let dim = a_t.data.nrows();
        let lu = (DMatrix::<Cx>::identity(dim, dim) - &a_t.data).lu();
        let u = lu.u();
        let pivots: Vec<f64> = (0..dim).map(|i| u[(i, i)].norm()).collect();
        let biggest = pivots.iter().cloned().fold(0.0, f64::max);
        let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest.is_nan() || smallest <= 1e-13 * biggest.max(1.0) {
            return Err(Error::SingularSystem);
        }
        let mut logdet: Cx = (0..dim).map(|i| u[(i, i)].ln()).sum();
        if lu.p().determinant::<f64>() < 0.0 {
            logdet += Cx::new(0.0, std::f64::consts::PI);
        }
        logdet.im = wrap_angle(logdet.im);
        let resolvent = lu.try_inverse().ok_or(Error::SingularSystem)?;
        Self::from_parts(s, cfg, modes, a_t, resolvent, logdet)
    }

    fn from_parts(
        s: &SchottkyData,
        cfg: &KernelConfig,
        modes: usize,
        a_t: BlockMomentMatrix,
        resolvent: DMatrix<Cx>,
        logdet: Cx,
    ) -> Result<Self> {
        cfg.validate(s)?;
        if modes < 2 * cfg.weight {
            return Err(Error::InvalidConfig(format!(
                "mode cutoff {modes} below 2N = {}",
                2 * cfg.weight
            )));
        }
        let kernel = match cfg.anchors {
            Anchors::Exterior(_) => cfg.kernel(s)?,
            _ => Kernel::reference(cfg.weight),
        };
        let t_moments = t_moment_matrix(s, &kernel, modes)?;
        let mut engine = Self {
            schottky: s.clone(),
            config: cfg.clone(),
            modes,
            kernel,
            a_tilde: a_t,
            resolvent,
            t_moments,
            logdet,
            limit: Vec::new(),
        };
        if let Anchors::LimitPoints(words) = &cfg.anchors {
            let points = cfg.anchor_points(s)?;
            let basis = crate::kernels::lagrange_basis(&points);
            let n = cfg.weight as i64;
            engine.limit = words
                .iter()
                .zip(points)
                .zip(basis)
                .map(|((w, point), basis)| {
                    let deriv = s.word(w).map.derivative(point);
                    let coboundary = (1..=s.genus() as i32)
                        .map(|a| mobius_coboundary(s, cfg.weight, &basis, a))
                        .collect();
                    LimitAnchor {
                        point,
                        word: w.clone(),
                        denom: powi(deriv, 1 - n) - 1.0,
                        basis,
                        coboundary,
                    }
                })
                .collect();
        }
        Ok(engine)
    }

    /// Doubles the mode cutoff from [`DEFAULT_MODES`] until `psi` at the probe
    /// pairs moves by less than `tol`.
    pub fn assemble_adaptive(
        s: &SchottkyData,
        cfg: &KernelConfig,
        probes: &[(Cx, Cx)],
        tol: f64,
        max_modes: usize,
    ) -> Result<Self> {
        let mut modes = DEFAULT_MODES.max(2 * cfg.weight);
        let mut engine = Self::assemble(s, cfg, modes)?;
        let eval = |e: &Self| -> Result<Vec<Cx>> {
            probes
                .iter()
                .map(|&(x, y)| Ok(e.psi(x, y)?.value))
                .collect()
        };
        let mut prev = eval(&engine)?;
        while modes * 2 <= max_modes {
            modes *= 2;
            let next = Self::assemble(s, cfg, modes)?;
            let vals = eval(&next)?;
            let change = prev
                .iter()
                .zip(&vals)
                .map(|(a, b)| (a - b).norm() / (1.0 + b.norm()))
                .fold(0.0, f64::max);
            engine = next;
            prev = vals;
            if change < tol {
                return Ok(engine);
            }
        }
        Err(Error::NonConvergent(tol))
    }

    pub fn schottky(&self) -> &SchottkyData {
        &self.schottky
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn weight(&self) -> usize {
        self.config.weight
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn a_tilde(&self) -> &BlockMomentMatrix {
        &self.a_tilde
    }

    /// `(I - Ã)^{-1}` at the current truncation.
    pub fn resolvent(&self) -> &DMatrix<Cx> {
        &self.resolvent
    }

    /// `log det(I - Ã)` from the LU pivots, imaginary part in `(-π, π]`.
    pub fn logdet(&self) -> Cx {
        self.logdet
    }

    /// Anchor points of the Lagrange correction; empty unless anchored at
    /// limit points.
    pub fn limit_anchors(&self) -> Vec<(Cx, Vec<i32>)> {
        self.limit
            .iter()
            .map(|l| (l.point, l.word.clone()))
            .collect()
    }

    /// Power-iteration estimate of the spectral radius of `Ã`.
    pub fn spectral_radius(&self) -> f64 {
        let a = &self.a_tilde.data;
        let dim = a.nrows();
        let mut v = DVector::<Cx>::from_fn(dim, |i, _| Cx::new(1.0, 0.1 * i as f64));
        let mut log_growth = 0.0;
        let steps = 400;
        let burn_in = 100;
        for k in 0..steps {
            let w = a * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            if k >= burn_in {
                log_growth += norm.ln() - v.norm().ln();
            }
            v = w / Cx::new(norm, 0.0);
        }
        (log_growth / (steps - burn_in) as f64).exp()
    }

    // Vector builders.

    /// `L̃(x)`.
    pub fn l_tilde(&self, x: Cx) -> DVector<Cx> {
        let n = self.weight();
        let m_count = self.modes;
        let idx = self.schottky.indices();
        DVector::from_fn(idx.len() * m_count, |i, _| {
            let b = idx[i / m_count];
            let k = i % m_count;
            let r = self.schottky.sqrt_rho(b) / (x - self.schottky.center(b));
            r.powu((k + 2 * n - 1) as u32) / (x - self.schottky.center(b))
        })
    }

    /// `(1/j!) ∂_y^j R(y)` for the base kernel; `j = 0` is `R(y)` and
    /// `j = 2N - 1` is `R̃(y)`.
    pub fn r_vector(&self, y: Cx, j: usize) -> DVector<Cx> {
        let n = self.weight();
        let m_count = self.modes;
        let idx = self.schottky.indices();
        let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        DVector::from_fn(idx.len() * m_count, |i, _| {
            let a = idx[i / m_count];
            let m = i % m_count;
            let s = self.schottky.sqrt_rho(a);
            let w = self.schottky.center(-a);
            if self.kernel.is_reference() {
                // Scaled by (s/(w - y))^{m+1} to keep large m stable.
                let msign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * msign
                    * binomial(m + j, m)
                    * (s / (w - y)).powu(m as u32 + 1)
                    * powi(w - y, -(j as i64))
            } else {
                sign * s.powu(m as u32 + 1) * self.kernel.pi_unchecked(m, j, w, y)
            }
        })
    }

    /// `L̃(x)(I - Ã)^{-1}` as a column.
    fn u_row(&self, x: Cx) -> DVector<Cx> {
        self.resolvent.tr_mul(&self.l_tilde(x))
    }

    fn check_distinct(x: Cx, y: Cx) -> Result<()> {
        if x == y {
            Err(Error::PoleEvaluation("x = y".into()))
        } else {
            Ok(())
        }
    }

    fn reduce(&self, z: Cx) -> Result<(Cx, GroupWord)> {
        self.schottky.reduce_to_fundamental(z)
    }

    // Base objects, both arguments in the fundamental domain.

    fn psi_base_raw(&self, u: &DVector<Cx>, x: Cx, y: Cx) -> Result<Cx> {
        Self::check_distinct(x, y)?;
        Ok(self.kernel.pi(0, 0, x, y)? + u.dot(&self.r_vector(y, 0)))
    }

    /// `T_b^ℓ(x)` for all `b` and `ℓ`, indexed `[slot(b)][ℓ]`.
    fn t_base(&self, u: &DVector<Cx>, x: Cx) -> Result<Vec<Vec<Cx>>> {
        let lcount = 2 * self.weight() - 1;
        let ua = self.t_moments.tr_mul(u);
        self.schottky
            .indices()
            .into_iter()
            .map(|b| {
                (0..lcount)
                    .map(|ell| {
                        Ok(self.kernel.pi(0, ell, x, self.schottky.center(b))?
                            + ua[SchottkyData::slot(b) * lcount + ell])
                    })
                    .collect()
            })
            .collect()
    }

    fn theta_from_t(&self, t: &[Vec<Cx>]) -> Vec<Vec<Cx>> {
        let n = self.weight() as i64;
        let lcount = 2 * self.weight() - 1;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        (1..=self.schottky.genus() as i32)
            .map(|a| {
                let rho = self.schottky.rho(a);
                (0..lcount)
                    .map(|ell| {
                        t[SchottkyData::slot(a)][ell]
                            + sign
                                * powi(rho, n - 1 - ell as i64)
                                * t[SchottkyData::slot(-a)][lcount - 1 - ell]
                    })
                    .collect()
            })
            .collect()
    }

    /// `Ψ_base(x, A_k)` for each limit anchor.
    fn anchor_values(&self, theta_base: &[Vec<Cx>]) -> Vec<Cx> {
        self.limit
            .iter()
            .map(|l| self.chi_with(theta_base, &l.word, l.point) / l.denom)
            .collect()
    }

    /// Final `Θ` and anchor values at `x` in the fundamental domain.
    fn theta_raw(&self, u: &DVector<Cx>, x: Cx) -> Result<(Vec<Vec<Cx>>, Vec<Cx>)> {
        let base = self.theta_from_t(&self.t_base(u, x)?);
        if self.limit.is_empty() {
            return Ok((base, Vec::new()));
        }
        let anchors = self.anchor_values(&base);
        let mut theta = base;
        for (l, &val) in self.limit.iter().zip(&anchors) {
            for (row, cob) in theta.iter_mut().zip(&l.coboundary) {
                for (t, c) in row.iter_mut().zip(cob) {
                    *t += val * c;
                }
            }
        }
        Ok((theta, anchors))
    }

    /// Cocycle `χ[γ_a](x, y) = Ψ(x, γ_a y)(γ_a' y)^{1-N} - Ψ(x, y)` for one
    /// letter, given `Θ(x)`.
    fn chi_letter(&self, theta: &[Vec<Cx>], a: i32, y: Cx) -> Cx {
        let h = a.unsigned_abs() as i32;
        if a > 0 {
            let ya = y - self.schottky.center(h);
            -theta[(h - 1) as usize]
                .iter()
                .rev()
                .fold(Cx::new(0.0, 0.0), |acc, &t| acc * ya + t)
        } else {
            // χ[γ^{-1}](y) = -χ[γ](γ^{-1} y) ((γ^{-1})' y)^{1-N}
            let z = self.schottky.apply_generator(a, y);
            let d = self.schottky.generator_derivative(a, y);
            -self.chi_letter(theta, h, z) * powi(d, 1 - self.weight() as i64)
        }
    }

    fn chi_with(&self, theta: &[Vec<Cx>], letters: &[i32], y: Cx) -> Cx {
        let mut z = y;
        let mut d = Cx::new(1.0, 0.0);
        let mut acc = Cx::new(0.0, 0.0);
        let n = self.weight() as i64;
        for &a in letters.iter().rev() {
            acc += self.chi_letter(theta, a, z) * powi(d, 1 - n);
            d *= self.schottky.generator_derivative(a, z);
            z = self.schottky.apply_generator(a, z);
        }
        acc
    }

    fn psi_reduced(&self, x: Cx, y: Cx) -> Result<Cx> {
        let u = self.u_row(x);
        let base = self.psi_base_raw(&u, x, y)?;
        if self.limit.is_empty() {
            return Ok(base);
        }
        let theta_base = self.theta_from_t(&self.t_base(&u, x)?);
        let anchors = self.anchor_values(&theta_base);
        Ok(base
            - self
                .limit
                .iter()
                .zip(anchors)
                .map(|(l, v)| l.basis.eval(y) * v)
                .sum::<Cx>())
    }

    // Public evaluators.

    /// `Ψ_N(x, y)`, weight `(N, 1-N)`. Points outside the fundamental domain
    /// are reduced first.
    pub fn psi(&self, x: Cx, y: Cx) -> Result<FormValue> {
        Self::check_distinct(x, y)?;
        let n = self.weight() as i64;
        let (xr, gx) = self.reduce(x)?;
        let (yr, gy) = self.reduce(y)?;
        let jx = powi(gx.map.derivative(x), n);
        let mut value = self.psi_reduced(xr, yr)? * jx;
        if !gy.is_empty() {
            // Ψ(x, y) = Ψ(x, Gy) (G'y)^{1-N} - χ[G](x, y)
            value = value * powi(gy.map.derivative(y), 1 - n) - self.chi(&gy.letters, x, y)?;
        }
        Ok(FormValue::new(value, vec![n as i32, 1 - n as i32]))
    }

    /// Scaled `y`-derivative `Ψ_N^{(0,j)}(x, y)`; `y` must lie in the
    /// fundamental domain.
    pub fn psi_dy(&self, x: Cx, y: Cx, j: usize) -> Result<Cx> {
        Self::check_distinct(x, y)?;
        if !self.schottky.in_fundamental_domain(y) {
            return Err(Error::InvalidConfig(format!(
                "{y} is outside the fundamental domain"
            )));
        }
        let n = self.weight() as i64;
        let (xr, gx) = self.reduce(x)?;
        let u = self.u_row(xr);
        let mut v = self.kernel.pi(0, j, xr, y)? + u.dot(&self.r_vector(y, j));
        if !self.limit.is_empty() {
            let theta_base = self.theta_from_t(&self.t_base(&u, xr)?);
            let anchors = self.anchor_values(&theta_base);
            v -= self
                .limit
                .iter()
                .zip(anchors)
                .map(|(l, a)| l.basis.taylor_coeff(j, y) * a)
                .sum::<Cx>();
        }
        Ok(v * powi(gx.map.derivative(x), n))
    }

    /// `ω_N(x, y)`, weight `(N, N)`.
    pub fn omega(&self, x: Cx, y: Cx) -> Result<FormValue> {
        Self::check_distinct(x, y)?;
        let n = self.weight();
        let (xr, gx) = self.reduce(x)?;
        let (yr, gy) = self.reduce(y)?;
        Self::check_distinct(xr, yr)?;
        let u = self.u_row(xr);
        let v = powi(xr - yr, -2 * n as i64) + u.dot(&self.r_vector(yr, 2 * n - 1));
        let jac = (gx.map.derivative(x) * gy.map.derivative(y)).powu(n as u32);
        Ok(FormValue::new(v * jac, vec![n as i32, n as i32]))
    }

    /// All `Θ_{N,a}^ℓ(x)`, indexed `[a-1][ℓ]`.
    pub fn theta_all(&self, x: Cx) -> Result<Vec<Vec<Cx>>> {
        let (xr, gx) = self.reduce(x)?;
        let (theta, _) = self.theta_raw(&self.u_row(xr), xr)?;
        let jac = gx.map.derivative(x).powu(self.weight() as u32);
        Ok(theta
            .into_iter()
            .map(|row| row.into_iter().map(|t| t * jac).collect())
            .collect())
    }

    pub fn theta(&self, a: usize, ell: usize, x: Cx) -> Result<FormValue> {
        if a == 0 || a > self.schottky.genus() || ell >= 2 * self.weight() - 1 {
            return Err(Error::InvalidConfig(format!(
                "no spanning form ({a}, {ell})"
            )));
        }
        let v = self.theta_all(x)?[a - 1][ell];
        Ok(FormValue::new(v, vec![self.weight() as i32]))
    }

    /// Base-kernel `T_b^ℓ(x)` indexed `[slot(b)][ℓ]`, `x` in the fundamental
    /// domain.
    pub fn t_forms(&self, x: Cx) -> Result<Vec<Vec<Cx>>> {
        self.t_base(&self.u_row(x), x)
    }

    /// Cocycle `χ[γ](x, y) = Ψ(x, γy)(γ'y)^{1-N} - Ψ(x, y)` of the word
    /// `γ = γ_{a_1} ∘ … ∘ γ_{a_k}`. Polynomial in `y`.
    pub fn chi(&self, letters: &[i32], x: Cx, y: Cx) -> Result<Cx> {
        let theta = self.theta_all(x)?;
        Ok(self.chi_with(&theta, letters, y))
    }

    /// `Ψ_base(x, A_k)` for each limit anchor, `x` reduced internally.
    pub fn psi_at_anchors(&self, x: Cx) -> Result<Vec<Cx>> {
        let (xr, gx) = self.reduce(x)?;
        let u = self.u_row(xr);
        let base = self.theta_from_t(&self.t_base(&u, xr)?);
        let jac = gx.map.derivative(x).powu(self.weight() as u32);
        Ok(self
            .anchor_values(&base)
            .into_iter()
            .map(|v| v * jac)
            .collect())
    }

    /// Shell identity, matrix side: `L̃(x) Ã^{k-1} R(y)` for `k >= 1`.
    pub fn shell_matrix(&self, x: Cx, y: Cx, k: usize) -> Cx {
        let mut v = self.r_vector(y, 0);
        for _ in 1..k {
            v = &self.a_tilde.data * v;
        }
        self.l_tilde(x).dot(&v)
    }

    /// Shell identity, word side: `Σ_{|γ| = k} Π(γx, y)(γ'x)^N` for the base
    /// kernel.
    pub fn shell_words(&self, x: Cx, y: Cx, k: usize) -> Cx {
        let n = self.weight() as u32;
        word_shells(&self.schottky, x, k, |z, d| {
            d.powu(n) * self.kernel.pi_unchecked(0, 0, z, y)
        })[k]
    }

    // Cache.

    /// Hash of everything the engine depends on.
    pub fn cache_key(s: &SchottkyData, cfg: &KernelConfig, modes: usize) -> String {
        let payload =
            serde_json::to_string(&(CACHE_VERSION, s, cfg, modes)).expect("engine key serializes");
        hex::encode(Sha256::digest(payload.as_bytes()))
    }

    pub fn cache_path(dir: &Path, s: &SchottkyData, cfg: &KernelConfig, modes: usize) -> PathBuf {
        dir.join(format!("{}.json", Self::cache_key(s, cfg, modes)))
    }

    pub fn save_cache(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = Self::cache_path(dir, &self.schottky, &self.config, self.modes);
        let record = CacheRecord {
            version: CACHE_VERSION.into(),
            schottky: self.schottky.clone(),
            config: self.config.clone(),
            modes: self.modes,
            logdet: self.logdet,
            resolvent: self.resolvent.iter().copied().collect(),
        };
        std::fs::write(&path, serde_json::to_vec(&record)?)?;
        Ok(path)
    }

    /// Loads a cached solve if present, assembling and storing it otherwise.
    pub fn load_or_assemble(
        dir: &Path,
        s: &SchottkyData,
        cfg: &KernelConfig,
        modes: usize,
    ) -> Result<Self> {
        let path = Self::cache_path(dir, s, cfg, modes);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(rec) = serde_json::from_slice::<CacheRecord>(&bytes) {
                if rec.version == CACHE_VERSION
                    && rec.schottky == *s
                    && rec.config == *cfg
                    && rec.modes == modes
                {
                    let a_t = a_tilde(s, cfg.weight, modes);
                    let dim = a_t.data.nrows();
                    if rec.resolvent.len() == dim * dim {
                        let resolvent = DMatrix::from_vec(dim, dim, rec.resolvent);
                        return Self::from_parts(s, cfg, modes, a_t, resolvent, rec.logdet);
                    }
                }
            }
        }
        let engine = Self::assemble(s, cfg, modes)?;
        // A failed write only costs a recomputation next time.
        let _ = engine.save_cache(dir);
        Ok(engine)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    version: String,
    schottky: SchottkyData,
    config: KernelConfig,
    modes: usize,
    logdet: Cx,
    resolvent: Vec<Cx>,
}

fn wrap_angle(t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = t % two_pi;
    if t > std::f64::consts::PI {
        t -= two_pi;
    } else if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

/// The `A` moments used for `T`, with the column factor `ρ_b^{ℓ/2}` removed.
fn t_moment_matrix(s: &SchottkyData, kernel: &Kernel, modes: usize) -> Result<DMatrix<Cx>> {
    let n = kernel.weight();
    let lcount = 2 * n - 1;
    let idx = s.indices();
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut out = DMatrix::<Cx>::zeros(idx.len() * modes, idx.len() * lcount);
    for &a in &idx {
        let sa = s.sqrt_rho(a);
        let w = s.center(-a);
        for &b in &idx {
            for m in 0..modes {
                for ell in 0..lcount {
                    let v = if a == -b {
                        sa.powu(m as u32 + 1) * kernel.e_mn(m, ell, w)?
                    } else {
                        let d = w - s.center(b);
                        let msign = if m % 2 == 0 { 1.0 } else { -1.0 };
                        let sing = msign
                            * binomial(m + ell, m)
                            * (sa / d).powu(m as u32 + 1)
                            * powi(d, -(ell as i64));
                        let poly = sa.powu(m as u32 + 1)
                            * (kernel.pi_unchecked(m, ell, w, s.center(b))
                                - msign * binomial(m + ell, m) * powi(d, -((m + ell + 1) as i64)));
                        sing + poly
                    };
                    out[(
                        SchottkyData::slot(a) * modes + m,
                        SchottkyData::slot(b) * lcount + ell,
                    )] = sign * v;
                }
            }
        }
    }
    Ok(out)
}

/// Sums `f(γx, γ'x)` over reduced words, returning one total per word length
/// `0..=max_len`.
pub fn word_shells(s: &SchottkyData, x: Cx, max_len: usize, f: impl Fn(Cx, Cx) -> Cx) -> Vec<Cx> {
    let mut shells = vec![Cx::new(0.0, 0.0); max_len + 1];
    let idx = s.indices();
    // Depth-first over words, extending on the left: γ_c ∘ (current word).
    #[allow(clippy::too_many_arguments)]
    fn walk(
        s: &SchottkyData,
        idx: &[i32],
        z: Cx,
        d: Cx,
        last: i32,
        depth: usize,
        max_len: usize,
        f: &dyn Fn(Cx, Cx) -> Cx,
        shells: &mut [Cx],
    ) {
        shells[depth] += f(z, d);
        if depth == max_len {
            return;
        }
        for &c in idx {
            if depth > 0 && c == -last {
                continue;
            }
            let d2 = d * s.generator_derivative(c, z);
            let z2 = s.apply_generator(c, z);
            walk(s, idx, z2, d2, c, depth + 1, max_len, f, shells);
        }
    }
    walk(
        s,
        &idx,
        x,
        Cx::new(1.0, 0.0),
        0,
        0,
        max_len,
        &f,
        &mut shells,
    );
    shells
}

/// Direct Poincaré sum `Σ_{|γ| <= K} Π_N(γx, y)(γ'x)^N` over the anchor
/// kernel of `cfg`.
pub fn poincare_sum_oracle(
    s: &SchottkyData,
    cfg: &KernelConfig,
    x: Cx,
    y: Cx,
    max_len: usize,
) -> Result<OracleSum> {
    let kernel = cfg.kernel(s)?;
    let n = cfg.weight as u32;
    let shells = word_shells(s, x, max_len, |z, d| {
        d.powu(n) * kernel.pi_unchecked(0, 0, z, y)
    });
    Ok(OracleSum {
        value: shells.iter().sum(),
        tail_estimate: shells.last().map_or(0.0, |c| c.norm()),
        shells,
    })
}

/// Direct sum `Σ_{|γ| <= K} M_N(γx, y)(γ'x)^N`.
pub fn poincare_omega_oracle(
    s: &SchottkyData,
    weight: usize,
    x: Cx,
    y: Cx,
    max_len: usize,
) -> OracleSum {
    let n = weight as u32;
    let shells = word_shells(s, x, max_len, |z, d| {
        d.powu(n) * powi(z - y, -2 * weight as i64)
    });
    OracleSum {
        value: shells.iter().sum(),
        tail_estimate: shells.last().map_or(0.0, |c| c.norm()),
        shells,
    }
}
