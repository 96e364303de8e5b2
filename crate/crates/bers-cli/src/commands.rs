use std::path::{Path, PathBuf};

use bers::classical;
use bers::schottky::SchottkyData;
use bers::sewing::QuasiformEngine;
use bers::varops::{self, IDENTITY_NAMES};
use bers::{Cx, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, RunConfig};

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::DegenerateHandle(_)
            | Error::MultiplierOutOfRange(_) => EXIT_INVALID,
            _ => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Everything a command needs besides its own arguments.
pub struct Context {
    pub cfg: RunConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

impl Context {
    fn surface(&self) -> Result<SchottkyData, Failure> {
        let s = self.cfg.schottky()?;
        let d = s.validate();
        if !d.pass {
            return Err(Failure {
                code: EXIT_INVALID,
                message: d.messages.join("; "),
            });
        }
        Ok(s)
    }

    fn engine(&self, s: &SchottkyData, weight: usize) -> Result<QuasiformEngine, Failure> {
        let kc = self.cfg.kernel(s, weight)?;
        let m = self.cfg.truncation.modes;
        Ok(match &self.cache {
            Some(dir) => QuasiformEngine::load_or_assemble(dir, s, &kc, m)?,
            None => QuasiformEngine::assemble(s, &kc, m)?,
        })
    }

    /// Writes `rows` as CSV, or `report` as JSON.
    fn emit<R: Serialize, J: Serialize>(&self, rows: &[R], report: &J) -> Result<(), Failure> {
        let text = match self.format {
            Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in rows {
                    w.serialize(r).map_err(|e| Failure::usage(e.to_string()))?;
                }
                String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
            }
        };
        match &self.out {
            Some(p) => {
                std::fs::write(p, text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// Default cache directory: next to the output file.
pub fn cache_beside(out: &Path) -> PathBuf {
    out.parent().unwrap_or(Path::new(".")).join(".bers-cache")
}

// validate

#[derive(Serialize)]
struct KeyValue {
    key: String,
    value: String,
}

pub fn validate(ctx: &Context) -> Result<i32, Failure> {
    let s = ctx.cfg.schottky()?;
    let d = s.validate();
    let rows = vec![
        KeyValue {
            key: "pass".into(),
            value: d.pass.to_string(),
        },
        KeyValue {
            key: "min_gap".into(),
            value: format!("{:e}", d.min_gap),
        },
        KeyValue {
            key: "closest_pair".into(),
            value: format!("{} {}", d.closest_pair.0, d.closest_pair.1),
        },
        KeyValue {
            key: "max_multiplier".into(),
            value: format!("{:e}", d.max_multiplier),
        },
    ]
    .into_iter()
    .chain(d.messages.iter().map(|m| KeyValue {
        key: "message".into(),
        value: m.clone(),
    }))
    .collect::<Vec<_>>();
    ctx.emit(&rows, &d)?;
    if !d.pass {
        eprintln!(
            "validation failed: gap {:e} between disks {} and {}",
            d.min_gap, d.closest_pair.0, d.closest_pair.1
        );
    }
    Ok(if d.pass { 0 } else { EXIT_INVALID })
}

// eval

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Quantity {
    Psi,
    Omega,
    Theta,
    Nu,
    S,
    Primeform,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EvalRow {
    pub quantity: &'static str,
    pub x_re: f64,
    pub x_im: f64,
    pub y_re: Option<f64>,
    pub y_im: Option<f64>,
    pub a: Option<usize>,
    pub ell: Option<usize>,
    pub re: Option<f64>,
    pub im: Option<f64>,
    pub weights: &'static str,
    pub modes: usize,
    pub spectral_radius: f64,
    pub pole: bool,
    pub error: Option<String>,
}

/// Parses `"x0,x1,nx;y0,y1,ny"` into the points `x + iy`, row by row in `y`.
pub fn parse_grid(spec: &str) -> Result<Vec<Cx>, Failure> {
    let bad = || Failure::usage(format!("grid spec {spec:?} is not \"x0,x1,nx;y0,y1,ny\""));
    let axis = |part: &str| -> Result<Vec<f64>, Failure> {
        let f: Vec<&str> = part.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let (a, b) = (
            f[0].parse::<f64>().map_err(|_| bad())?,
            f[1].parse::<f64>().map_err(|_| bad())?,
        );
        let n = f[2].parse::<usize>().map_err(|_| bad())?;
        if n == 0 || !a.is_finite() || !b.is_finite() {
            return Err(bad());
        }
        Ok((0..n)
            .map(|k| {
                if n == 1 {
                    a
                } else {
                    a + (b - a) * k as f64 / (n - 1) as f64
                }
            })
            .collect())
    };
    let (xs, ys) = spec.split_once(';').ok_or_else(bad)?;
    let (xs, ys) = (axis(xs)?, axis(ys)?);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Cx::new(x, y)))
        .collect())
}

pub fn eval(ctx: &Context, what: Quantity, grid: Option<&str>) -> Result<i32, Failure> {
    let points = match grid {
        Some(g) => parse_grid(g)?,
        None => ctx.cfg.eval.points.clone(),
    };
    if points.is_empty() {
        return Err(Failure::usage(
            "no evaluation points: set eval.points or pass --seed-grid",
        ));
    }
    let base = ctx.cfg.eval.base;
    let two_point = matches!(what, Quantity::Psi | Quantity::Omega | Quantity::Primeform);
    if two_point && base.is_none() {
        return Err(Failure::usage(
            "this quantity needs eval.base as the second point",
        ));
    }
    let s = ctx.surface()?;
    let weight = match what {
        Quantity::Psi | Quantity::Omega | Quantity::Theta => ctx.cfg.weight,
        _ => 1,
    };
    let e = ctx.engine(&s, weight)?;
    let (modes, radius) = (e.modes(), e.spectral_radius());
    let n = weight as i32;
    let weights: &'static str = match (what, n) {
        (Quantity::Psi, 1) => "1,0",
        (Quantity::Psi, 2) => "2,-1",
        (Quantity::Psi, 3) => "3,-2",
        (Quantity::Psi, _) => "N,1-N",
        (Quantity::Omega, 1) => "1,1",
        (Quantity::Omega, 2) => "2,2",
        (Quantity::Omega, 3) => "3,3",
        (Quantity::Omega, _) => "N,N",
        (Quantity::Theta, 1) => "1",
        (Quantity::Theta, 2) => "2",
        (Quantity::Theta, 3) => "3",
        (Quantity::Theta, _) => "N",
        (Quantity::Nu, _) => "1",
        (Quantity::S, _) => "2",
        (Quantity::Primeform, _) => "-1/2,-1/2",
    };
    let name = match what {
        Quantity::Psi => "psi",
        Quantity::Omega => "omega",
        Quantity::Theta => "theta",
        Quantity::Nu => "nu",
        Quantity::S => "s",
        Quantity::Primeform => "log_prime_form",
    };
    let row = |x: Cx, a: Option<usize>, ell: Option<usize>, v: bers::Result<Cx>| {
        let y = if two_point { base } else { None };
        let (re, im, pole, error) = match v {
            Ok(v) => (Some(v.re), Some(v.im), false, None),
            Err(err) => (
                None,
                None,
                matches!(err, Error::PoleEvaluation(_)),
                Some(err.to_string()),
            ),
        };
        EvalRow {
            quantity: name,
            x_re: x.re,
            x_im: x.im,
            y_re: y.map(|y| y.re),
            y_im: y.map(|y| y.im),
            a,
            ell,
            re,
            im,
            weights,
            modes,
            spectral_radius: radius,
            pole,
            error,
        }
    };
    let g = s.genus();
    let lcount = 2 * weight - 1;
    let rows: Vec<EvalRow> = points
        .par_iter()
        .map(|&x| -> Vec<EvalRow> {
            let y = base.unwrap_or_default();
            match what {
                Quantity::Psi => vec![row(x, None, None, e.psi(x, y).map(|f| f.value))],
                Quantity::Omega => vec![row(x, None, None, e.omega(x, y).map(|f| f.value))],
                Quantity::S => vec![row(
                    x,
                    None,
                    None,
                    classical::proj_connection(&e, x).map(|f| f.value),
                )],
                Quantity::Primeform => {
                    vec![row(x, None, None, classical::log_prime_form(&e, x, y))]
                }
                Quantity::Theta => match e.theta_all(x) {
                    Ok(t) => (0..g)
                        .flat_map(|a| (0..lcount).map(move |l| (a, l)))
                        .map(|(a, l)| row(x, Some(a + 1), Some(l), Ok(t[a][l])))
                        .collect(),
                    Err(err) => (0..g)
                        .flat_map(|a| (0..lcount).map(move |l| (a, l)))
                        .map(|(a, l)| row(x, Some(a + 1), Some(l), Err(err.clone())))
                        .collect(),
                },
                Quantity::Nu => match classical::nu_all(&e, x) {
                    Ok(v) => v
                        .iter()
                        .enumerate()
                        .map(|(a, &v)| row(x, Some(a + 1), None, Ok(v)))
                        .collect(),
                    Err(err) => (0..g)
                        .map(|a| row(x, Some(a + 1), None, Err(err.clone())))
                        .collect(),
                },
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    ctx.emit(&rows, &rows)?;
    Ok(0)
}

// period-matrix

#[derive(Serialize)]
struct EntryRow {
    quantity: &'static str,
    i: Option<usize>,
    j: Option<usize>,
    re: f64,
    im: f64,
}

fn matrix_rows(name: &'static str, m: &[Vec<Cx>], out: &mut Vec<EntryRow>) {
    for (i, r) in m.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            out.push(EntryRow {
                quantity: name,
                i: Some(i + 1),
                j: Some(j + 1),
                re: v.re,
                im: v.im,
            });
        }
    }
}

fn scalar_row(name: &'static str, v: Cx) -> EntryRow {
    EntryRow {
        quantity: name,
        i: None,
        j: None,
        re: v.re,
        im: v.im,
    }
}

pub fn period_matrix(ctx: &Context) -> Result<i32, Failure> {
    let s = ctx.surface()?;
    let e = ctx.engine(&s, 1)?;
    let pm = classical::period_matrix(&e, &ctx.cfg.quadrature())?;
    let mut rows = Vec::new();
    matrix_rows("omega", &pm.omega, &mut rows);
    matrix_rows("normalization", &pm.normalization, &mut rows);
    rows.push(scalar_row(
        "symmetry_residual",
        Cx::new(pm.symmetry_residual, 0.0),
    ));
    rows.push(scalar_row(
        "normalization_residual",
        Cx::new(pm.normalization_residual, 0.0),
    ));
    ctx.emit(&rows, &pm)?;
    Ok(0)
}

// zeta

pub fn zeta(ctx: &Context) -> Result<i32, Failure> {
    let s = ctx.surface()?;
    let e = ctx.engine(&s, ctx.cfg.weight)?;
    let t = &ctx.cfg.truncation;
    let r = bers::zeta::det_report(&e, t.word_len, t.m_max)?;
    let mut rows = vec![
        scalar_row("logdet_matrix", r.logdet_matrix),
        scalar_row("logdet_product", r.logdet_product),
        scalar_row("difference", Cx::new(r.difference, 0.0)),
    ];
    for (k, v) in r.shells.iter().enumerate() {
        rows.push(EntryRow {
            quantity: "shell",
            i: Some(k + 1),
            j: None,
            re: v.re,
            im: v.im,
        });
    }
    ctx.emit(&rows, &r)?;
    Ok(0)
}

// check

#[derive(Serialize)]
struct CheckRow<'a> {
    identity: &'a str,
    probe: usize,
    residual: f64,
    threshold: f64,
    pass: bool,
}

pub fn check(ctx: &Context, names: &[String]) -> Result<i32, Failure> {
    let select: Vec<&str> = if names.is_empty() {
        IDENTITY_NAMES.to_vec()
    } else {
        names.iter().map(String::as_str).collect()
    };
    if let Some(bad) = select.iter().find(|n| !IDENTITY_NAMES.contains(n)) {
        return Err(Failure::usage(format!(
            "unknown check {bad:?}; expected one of {}",
            IDENTITY_NAMES.join(", ")
        )));
    }
    let s = ctx.surface()?;
    let vc = ctx.cfg.variation();
    let probes = varops::default_probes(&s, ctx.cfg.variation.probes);
    let report = varops::identity_suite_selected(&s, &vc, &probes, &select)?;
    let rows: Vec<CheckRow> = report
        .results
        .iter()
        .flat_map(|r| {
            r.residuals.iter().enumerate().map(|(p, &res)| CheckRow {
                identity: &r.name,
                probe: p,
                residual: res,
                threshold: r.threshold,
                pass: res < r.threshold,
            })
        })
        .collect();
    ctx.emit(&rows, &report)?;
    eprint!("{}", report.to_text());
    Ok(if report.pass() { 0 } else { EXIT_NUMERIC })
}
