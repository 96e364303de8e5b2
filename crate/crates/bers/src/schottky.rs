//! The marked Schottky group: handle data, fundamental-domain geometry and
//! free-group word combinatorics.
//!
//! Handle indices run over `±1..±g`. Index `a > 0` refers to the plus-disk
//! of handle `a` (center `w_a`, containing the repelling fixed point) and
//! `-a` to its partner. The generator `γ_a` maps the exterior of disk `a`
//! onto the interior of disk `-a`; `γ_{-a}` is its inverse. Disks are the
//! isometric circles `|z - w_a| = |rho_a|^{1/2}`.

use crate::mobius::{HandleParams, MobiusMap};
use crate::{Cx, Error, Result};
use serde::{Deserialize, Serialize};

/// Default cap on generator applications in [`SchottkyData::reduce_to_fundamental`].
pub const REDUCTION_CAP: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchottkyData {
    handles: Vec<HandleParams>,
    /// Cached square roots of rho, one per handle.
    sqrt_rho: Vec<Cx>,
}

/// Result of [`SchottkyData::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub pass: bool,
    /// Smallest distance between two disk boundaries; negative on overlap.
    pub min_gap: f64,
    /// Pair of indices realizing `min_gap`.
    pub closest_pair: (i32, i32),
    /// Largest `|q|` over the handles.
    pub max_multiplier: f64,
    pub messages: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: Cx,
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, z: Cx) -> bool {
        (z - self.center).norm() < self.radius
    }

    pub fn point(&self, angle: f64) -> Cx {
        self.center + Cx::from_polar(self.radius, angle)
    }
}

impl SchottkyData {
    pub fn new(handles: Vec<HandleParams>) -> Result<Self> {
        if handles.is_empty() {
            return Err(Error::InvalidConfig("genus must be at least one".into()));
        }
        let sqrt_rho = handles.iter().map(|h| h.rho.sqrt()).collect();
        Ok(Self { handles, sqrt_rho })
    }

    /// Builds a surface from `(repelling, attracting, q)` triples.
    pub fn from_fixed_points(triples: &[(Cx, Cx, Cx)]) -> Result<Self> {
        let handles = triples
            .iter()
            .map(|&(p, m, q)| HandleParams::derive(p, m, q))
            .collect::<Result<Vec<_>>>()?;
        Self::new(handles)
    }

    /// Builds a surface from `(w_+, w_-, rho)` triples.
    pub fn from_sewing(triples: &[(Cx, Cx, Cx)]) -> Result<Self> {
        let handles = triples
            .iter()
            .map(|&(wp, wm, rho)| HandleParams::from_sewing(wp, wm, rho))
            .collect::<Result<Vec<_>>>()?;
        Self::new(handles)
    }

    pub fn genus(&self) -> usize {
        self.handles.len()
    }

    pub fn handles(&self) -> &[HandleParams] {
        &self.handles
    }

    /// Indices in the canonical order `1, -1, 2, -2, …`.
    pub fn indices(&self) -> Vec<i32> {
        (1..=self.genus() as i32).flat_map(|a| [a, -a]).collect()
    }

    /// Position of index `a` in [`SchottkyData::indices`].
    pub fn slot(a: i32) -> usize {
        let h = (a.unsigned_abs() - 1) as usize;
        2 * h + usize::from(a < 0)
    }

    pub fn handle(&self, a: i32) -> &HandleParams {
        &self.handles[(a.unsigned_abs() - 1) as usize]
    }

    /// Disk center `w_a`.
    pub fn center(&self, a: i32) -> Cx {
        let h = self.handle(a);
        if a > 0 {
            h.center_plus
        } else {
            h.center_minus
        }
    }

    pub fn rho(&self, a: i32) -> Cx {
        self.handle(a).rho
    }

    pub fn sqrt_rho(&self, a: i32) -> Cx {
        self.sqrt_rho[(a.unsigned_abs() - 1) as usize]
    }

    /// Fixed point inside disk `a`.
    pub fn fixed_point(&self, a: i32) -> Cx {
        let h = self.handle(a);
        if a > 0 {
            h.repelling
        } else {
            h.attracting
        }
    }

    /// Returns a copy with the cached square root of rho negated on the given handle.
    pub fn with_flipped_branch(&self, handle: usize) -> Self {
        let mut out = self.clone();
        out.sqrt_rho[handle] = -out.sqrt_rho[handle];
        out
    }

    pub fn generator(&self, a: i32) -> MobiusMap {
        self.handle(a).generator_map(a.signum())
    }

    /// `γ_a z = w_{-a} + rho/(z - w_a)`, evaluated without matrices.
    pub fn apply_generator(&self, a: i32, z: Cx) -> Cx {
        self.center(-a) + self.rho(a) / (z - self.center(a))
    }

    pub fn generator_derivative(&self, a: i32, z: Cx) -> Cx {
        let d = z - self.center(a);
        -self.rho(a) / (d * d)
    }

    pub fn circle(&self, a: i32) -> Circle {
        Circle {
            center: self.center(a),
            radius: self.rho(a).norm().sqrt(),
        }
    }

    /// Index of the disk containing `z`, if any.
    pub fn disk_containing(&self, z: Cx) -> Option<i32> {
        self.indices()
            .into_iter()
            .find(|&a| self.circle(a).contains(z))
    }

    pub fn in_fundamental_domain(&self, z: Cx) -> bool {
        self.disk_containing(z).is_none()
    }

    /// Distance from `z` to the union of the closed disks (negative inside).
    pub fn boundary_distance(&self, z: Cx) -> f64 {
        self.indices()
            .into_iter()
            .map(|a| {
                let c = self.circle(a);
                (z - c.center).norm() - c.radius
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks pairwise disjointness of the disks and that each generator maps
    /// its circle onto the partner circle.
    pub fn validate(&self) -> Diagnostics {
        let idx = self.indices();
        let mut min_gap = f64::INFINITY;
        let mut closest_pair = (idx[0], idx[1]);
        for (i, &a) in idx.iter().enumerate() {
            for &b in &idx[i + 1..] {
                let (ca, cb) = (self.circle(a), self.circle(b));
                let gap = (ca.center - cb.center).norm() - ca.radius - cb.radius;
                if gap < min_gap {
                    min_gap = gap;
                    closest_pair = (a, b);
                }
            }
        }
        let mut messages = Vec::new();
        let mut pass = min_gap > 0.0;
        if !pass {
            messages.push(format!(
                "disks {} and {} overlap (gap {:.3e})",
                closest_pair.0, closest_pair.1, min_gap
            ));
        }
        for &a in &idx {
            let (ca, cb) = (self.circle(a), self.circle(-a));
            let mapped_ok = (0..8).all(|k| {
                let z = ca.point(k as f64 * std::f64::consts::FRAC_PI_4);
                ((self.apply_generator(a, z) - cb.center).norm() - cb.radius).abs()
                    < 1e-9 * (1.0 + cb.radius)
            });
            if !mapped_ok {
                pass = false;
                messages.push(format!("generator {a} does not pair its circles"));
            }
            if !ca.contains(self.fixed_point(a)) {
                pass = false;
                messages.push(format!("fixed point of disk {a} lies outside it"));
            }
        }
        let max_multiplier = self
            .handles
            .iter()
            .map(|h| h.multiplier.norm())
            .fold(0.0, f64::max);
        Diagnostics {
            pass,
            min_gap,
            closest_pair,
            max_multiplier,
            messages,
        }
    }

    /// Group element of a word, composed left to right.
    pub fn word(&self, letters: &[i32]) -> GroupWord {
        let map = letters.iter().fold(MobiusMap::identity(), |acc, &a| {
            acc.compose(&self.generator(a))
        });
        GroupWord {
            letters: letters.to_vec(),
            map,
        }
    }

    /// All reduced words of length `k` in lexicographic order over
    /// `1, -1, 2, -2, …`.
    pub fn reduced_words(&self, k: usize) -> Vec<GroupWord> {
        reduced_letter_sequences(self.genus(), k)
            .into_iter()
            .map(|w| self.word(&w))
            .collect()
    }

    /// One cyclically reduced representative per primitive conjugacy class of
    /// length at most `max_len`.
    pub fn primitive_class_reps(&self, max_len: usize) -> Vec<GroupWord> {
        (1..=max_len)
            .flat_map(|k| primitive_necklaces(self.genus(), k))
            .map(|w| self.word(&w))
            .collect()
    }

    /// Maps `z` into the fundamental domain. Returns `(γz, γ)`.
    pub fn reduce_to_fundamental(&self, z: Cx) -> Result<(Cx, GroupWord)> {
        self.reduce_with_cap(z, REDUCTION_CAP)
    }

    pub fn reduce_with_cap(&self, z: Cx, cap: usize) -> Result<(Cx, GroupWord)> {
        let mut z = z;
        let mut letters: Vec<i32> = Vec::new();
        for _ in 0..cap {
            // A point on a circle can land just inside the partner disk after
            // rounding; stepping straight back would cycle forever.
            let back = letters.last().map(|&a| -a);
            let disk = self
                .indices()
                .into_iter()
                .filter(|&a| Some(a) != back)
                .find(|&a| self.circle(a).contains(z));
            match disk {
                None => {
                    letters.reverse();
                    return Ok((z, self.word(&letters)));
                }
                Some(a) => {
                    z = self.apply_generator(a, z);
                    letters.push(a);
                }
            }
        }
        Err(Error::IterationCapExceeded(cap))
    }
}

/// A reduced word together with its Möbius map. The map of `[a₁, …, a_k]`
/// is `γ_{a₁} ∘ … ∘ γ_{a_k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupWord {
    pub letters: Vec<i32>,
    pub map: MobiusMap,
}

impl GroupWord {
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self) -> bool {
        is_reduced(&self.letters)
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        is_cyclically_reduced(&self.letters)
    }

    pub fn inverse_letters(&self) -> Vec<i32> {
        self.letters.iter().rev().map(|a| -a).collect()
    }
}

fn letter_order(g: usize) -> Vec<i32> {
    (1..=g as i32).flat_map(|a| [a, -a]).collect()
}

pub fn is_reduced(letters: &[i32]) -> bool {
    letters.windows(2).all(|w| w[0] != -w[1])
}

pub fn is_cyclically_reduced(letters: &[i32]) -> bool {
    is_reduced(letters) && (letters.len() < 2 || letters[0] != -letters[letters.len() - 1])
}

/// True when the word equals one of its nontrivial rotations, i.e. it is a
/// proper power.
pub fn is_proper_power(letters: &[i32]) -> bool {
    let k = letters.len();
    (1..k).any(|d| k.is_multiple_of(d) && (0..k).all(|i| letters[i] == letters[(i + d) % k]))
}

/// Lexicographically least rotation (with respect to the canonical order).
pub fn canonical_rotation(letters: &[i32]) -> Vec<i32> {
    let rank = |a: i32| SchottkyData::slot(a);
    let k = letters.len();
    (0..k.max(1))
        .map(|r| (0..k).map(|i| letters[(i + r) % k]).collect::<Vec<i32>>())
        .min_by(|x, y| x.iter().map(|&a| rank(a)).cmp(y.iter().map(|&a| rank(a))))
        .unwrap_or_default()
}

/// Letter sequences of all reduced words of length `k`.
pub fn reduced_letter_sequences(g: usize, k: usize) -> Vec<Vec<i32>> {
    let order = letter_order(g);
    let mut out: Vec<Vec<i32>> = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|w| {
                order
                    .iter()
                    .filter(|&&a| w.last().is_none_or(|&l| l != -a))
                    .map(|&a| {
                        let mut v = w.clone();
                        v.push(a);
                        v
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

/// Canonical representatives of primitive cyclically reduced classes of
/// length exactly `k`.
pub fn primitive_necklaces(g: usize, k: usize) -> Vec<Vec<i32>> {
    reduced_letter_sequences(g, k)
        .into_iter()
        .filter(|w| is_cyclically_reduced(w) && !is_proper_power(w))
        .filter(|w| canonical_rotation(w) == *w)
        .collect()
}
