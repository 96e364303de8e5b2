//! `det(I - Ã)` by two independent routes: the log-determinant of the
//! truncated matrix and the product `Π_{m>=0} Π_{γ_p} (1 - q_{γ_p}^{m+N})` over
//! primitive conjugacy classes.

use serde::Serialize;

use crate::schottky::{is_cyclically_reduced, reduced_letter_sequences, SchottkyData};
use crate::sewing::QuasiformEngine;
use crate::{Cx, Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct DetReport {
    pub logdet_matrix: Cx,
    pub logdet_product: Cx,
    pub difference: f64,
    pub max_len: usize,
    pub modes: usize,
    pub m_max: usize,
    /// Product-route contribution of the classes of each word length.
    pub shells: Vec<Cx>,
}

pub fn logdet_truncated(e: &QuasiformEngine) -> Cx {
    e.logdet()
}

/// Smallest `m_max` with `|q|^{m_max + N} < 1e-14`.
pub fn tail_m_max(q_abs: f64, weight: usize) -> usize {
    if q_abs <= 0.0 {
        return 0;
    }
    let m = (1e-14f64.ln() / q_abs.ln()).ceil() as i64 - weight as i64;
    m.max(1) as usize
}

/// Product route, split by class length; entry `k - 1` holds length `k`.
pub fn logdet_product_shells(
    s: &SchottkyData,
    weight: usize,
    max_len: usize,
    m_max: usize,
) -> Result<Vec<Cx>> {
    if max_len == 0 || m_max == 0 {
        return Err(Error::InvalidConfig(
            "max_len and m_max must be positive".into(),
        ));
    }
    let mut shells = vec![Cx::new(0.0, 0.0); max_len];
    for rep in s.primitive_class_reps(max_len) {
        let q = rep.map.multiplier();
        if q.norm() >= 1.0 {
            return Err(Error::MultiplierOutOfRange(q.norm()));
        }
        let mut qpow = q.powu(weight as u32);
        let mut acc = Cx::new(0.0, 0.0);
        for _ in 0..=m_max {
            acc += ln_one_minus(qpow);
            qpow *= q;
        }
        shells[rep.len() - 1] += acc;
    }
    Ok(shells)
}

/// `ln(1 - q)`, by its series when `1 - q` would round away `q`.
fn ln_one_minus(q: Cx) -> Cx {
    if q.norm() > 1e-4 {
        return (1.0 - q).ln();
    }
    let mut term = q;
    let mut acc = Cx::new(0.0, 0.0);
    for k in 1..=5 {
        acc -= term / k as f64;
        term *= q;
    }
    acc
}

pub fn logdet_product(s: &SchottkyData, weight: usize, max_len: usize, m_max: usize) -> Result<Cx> {
    Ok(logdet_product_shells(s, weight, max_len, m_max)?
        .iter()
        .sum())
}

/// Both routes side by side. `m_max` defaults to the tail bound of the
/// largest class multiplier.
pub fn det_report(e: &QuasiformEngine, max_len: usize, m_max: Option<usize>) -> Result<DetReport> {
    let s = e.schottky();
    let m_max = match m_max {
        Some(m) => m,
        None => {
            let q_max = s
                .primitive_class_reps(max_len)
                .iter()
                .map(|r| r.map.multiplier().norm())
                .fold(0.0, f64::max);
            tail_m_max(q_max, e.weight())
        }
    };
    let shells = logdet_product_shells(s, e.weight(), max_len, m_max)?;
    let logdet_product: Cx = shells.iter().sum();
    let logdet_matrix = logdet_truncated(e);
    Ok(DetReport {
        logdet_matrix,
        logdet_product,
        difference: (logdet_matrix - logdet_product).norm(),
        max_len,
        modes: e.modes(),
        m_max,
        shells,
    })
}

/// `tr Ã^k` from the truncated matrix.
pub fn trace_power_matrix(e: &QuasiformEngine, k: usize) -> Cx {
    let a = &e.a_tilde().data;
    let mut p = a.clone();
    for _ in 1..k {
        p = &p * a;
    }
    p.trace()
}

/// `Σ tr D(γ)` over cyclically reduced words of length `k`, with the
/// infinite trace `tr D(γ) = q_γ^N / (1 - q_γ)`.
pub fn trace_power_words(s: &SchottkyData, weight: usize, k: usize) -> Cx {
    reduced_letter_sequences(s.genus(), k)
        .into_iter()
        .filter(|w| is_cyclically_reduced(w))
        .map(|w| {
            let q = s.word(&w).map.multiplier();
            q.powu(weight as u32) / (1.0 - q)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelConfig;

    #[test]
    fn ln_one_minus_keeps_tiny_arguments() {
        let q = Cx::new(3e-20, -1e-20);
        assert_eq!(ln_one_minus(q), -q);
        let q = Cx::new(2e-4, 1e-4);
        assert!((ln_one_minus(q) - (1.0 - q).ln()).norm() < 1e-18);
        let q = Cx::new(9e-5, 1e-5);
        // The direct logarithm itself is only good to a rounding of `1 - q`.
        assert!((ln_one_minus(q) - (1.0 - q).ln()).norm() < 3e-16);
    }

    fn c(re: f64, im: f64) -> Cx {
        Cx::new(re, im)
    }

    #[test]
    fn genus_one_weight_one_is_eta_squared() {
        let q = c(0.03, 0.02);
        let s = SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), q)]).unwrap();
        let got = logdet_product(&s, 1, 6, 40).unwrap();
        let expect: Cx = (1..=41).map(|m| 2.0 * (1.0 - q.powu(m)).ln()).sum();
        assert!((got - expect).norm() < 1e-15);
    }

    #[test]
    fn tail_bound() {
        assert_eq!(tail_m_max(0.0, 2), 0);
        let m = tail_m_max(0.1, 1);
        assert!(0.1f64.powi(m as i32 + 1) < 1e-14);
        assert!(0.1f64.powi(m as i32) >= 1e-14);
    }

    #[test]
    fn zero_limit_is_zero() {
        let s =
            SchottkyData::from_fixed_points(&[(c(1.0, 0.0), c(-1.0, 0.0), c(1e-12, 0.0))]).unwrap();
        let e = QuasiformEngine::assemble(&s, &KernelConfig::reference(1), 8).unwrap();
        assert!(logdet_truncated(&e).norm() < 1e-10);
    }

    #[test]
    fn traces_agree_with_word_sums() {
        let s = SchottkyData::from_fixed_points(&[
            (c(1.0, 0.0), c(-1.0, 0.0), c(0.03, 0.0)),
            (c(0.5, 2.5), c(-0.5, 2.5), c(0.02, 0.01)),
        ])
        .unwrap();
        let e = QuasiformEngine::assemble(&s, &KernelConfig::reference(2), 24).unwrap();
        for k in 1..=4 {
            let a = trace_power_matrix(&e, k);
            let b = trace_power_words(&s, 2, k);
            assert!((a - b).norm() < 1e-12, "k={k}: {a} vs {b}");
        }
        // log det = -Σ_k tr Ã^k / k. The first-order term is the sum of the
        // generator traces, not zero: only the (a, -a) blocks vanish. γ_a and
        // its inverse share the multiplier.
        let first: Cx = (1..=2)
            .map(|a| {
                let q = s.handle(a).multiplier;
                2.0 * q * q / (1.0 - q)
            })
            .sum();
        assert!((trace_power_matrix(&e, 1) - first).norm() < 1e-13);
        let series: Cx = (1..=12)
            .map(|k| -trace_power_matrix(&e, k) / k as f64)
            .sum();
        assert!((series - e.logdet()).norm() < 1e-12);
    }
}
