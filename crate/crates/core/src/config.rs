//! Parsing of measure configs.
//!
//! ```text
//! [domain]
//! ambient_dim = 2
//! bbox = [[0.0,0.0],[1.0,1.0]]
//! [[stratum]]
//! kind = "simplex"
//! vertices = [[0.0,0.0],[1.0,0.0]]
//! density = "1.0"
//! ```
//!
//! The grammar is a subset of TOML and is read with the `toml` crate.

use crate::cantor::{CantorSet, CantorVariant};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::AaBox;
use crate::measure::{MeasureSpec, Stratum, DEFAULT_CANTOR_GENERATIONS};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: RawDomain,
    #[serde(default)]
    stratum: Vec<RawStratum>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    name: Option<String>,
    ambient_dim: usize,
    bbox: [Vec<f64>; 2],
    generations: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStratum {
    kind: String,
    dim: Option<usize>,
    vertices: Option<Vec<Vec<f64>>>,
    density: Option<String>,
    variant: Option<String>,
    generations: Option<u32>,
    axis: Option<usize>,
    interval: Option<[f64; 2]>,
    anchor: Option<Vec<f64>>,
    point: Option<Vec<f64>>,
    #[serde(rename = "box")]
    region: Option<[Vec<f64>; 2]>,
}

pub fn parse_measure_spec(text: &str) -> Result<MeasureSpec> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Syntax(e.message().to_string()))?;
    let n = raw.domain.ambient_dim;
    if !(1..=3).contains(&n) {
        return Err(Error::Dimension(format!("ambient_dim = {n} is not in 1..=3")));
    }
    let [lo, hi] = raw.domain.bbox;
    if lo.len() != n || hi.len() != n {
        return Err(Error::Validation("bbox corners must have ambient_dim coordinates".into()));
    }
    let bbox = AaBox::new(lo, hi);
    let default_gens = raw.domain.generations.unwrap_or(DEFAULT_CANTOR_GENERATIONS);
    let strata = raw
        .stratum
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            build_stratum(s, n, &bbox, default_gens).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("stratum {i}: {m}")),
                Error::Syntax(m) => Error::Syntax(format!("stratum {i}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = MeasureSpec::new(raw.domain.name.unwrap_or_else(|| "measure".into()), bbox, strata)?;
    spec.cantor_default_generations = default_gens;
    Ok(spec)
}

fn point(v: Vec<f64>, n: usize, what: &str) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(Error::Validation(format!("{what} has {} coordinates, expected {n}", v.len())));
    }
    Ok(v)
}

fn constant_density(text: &Option<String>) -> Result<f64> {
    let e = Expr::parse(text.as_deref().unwrap_or("1"))?;
    if e.polynomial_degree() != Some(0) {
        return Err(Error::Validation(format!("density `{e}` must be constant for this stratum kind")));
    }
    Ok(e.eval(&[0.0; 3]))
}

fn build_stratum(s: RawStratum, n: usize, bbox: &AaBox, default_gens: u32) -> Result<Stratum> {
    let kind = s.kind.clone();
    let need = |key: &str| Error::Syntax(format!("missing key `{key}` for kind `{kind}`"));
    let stratum = match s.kind.as_str() {
        "simplex" => {
            let vertices: Vec<Vec<f64>> = s.vertices.clone().ok_or_else(|| need("vertices"))?
                .into_iter()
                .map(|v| point(v, n, "vertex"))
                .collect::<Result<_>>()?;
            if vertices.is_empty() {
                return Err(Error::Validation("simplex has no vertices".into()));
            }
            let density = Expr::parse(s.density.as_deref().unwrap_or("1"))?;
            Stratum::Simplex { vertices, density }
        }
        "ac_density" => {
            let region = match s.region.clone() {
                Some([lo, hi]) => AaBox::new(point(lo, n, "box corner")?, point(hi, n, "box corner")?),
                None => bbox.clone(),
            };
            let density = Expr::parse(s.density.as_deref().unwrap_or("1"))?;
            Stratum::AcDensity { region, density }
        }
        "cantor" => {
            let variant = match s.variant.as_deref().unwrap_or("ternary") {
                "ternary" => CantorVariant::Ternary,
                "svc" | "smith_volterra" | "fat" => CantorVariant::SmithVolterra,
                other => return Err(Error::Syntax(format!("unknown cantor variant `{other}`"))),
            };
            let axis = s.axis.unwrap_or(1);
            if axis == 0 || axis > n {
                return Err(Error::Validation(format!("axis = {axis} is not in 1..={n}")));
            }
            let [a, b] = s.interval.unwrap_or([bbox.lo[axis - 1], bbox.hi[axis - 1]]);
            let anchor = match s.anchor.clone() {
                Some(p) => point(p, n, "anchor")?,
                None => bbox.lo.clone(),
            };
            let weight = constant_density(&s.density)?;
            let gens = s.generations.unwrap_or(default_gens);
            if gens == 0 || gens > 60 {
                return Err(Error::Validation(format!("generations = {gens} is not in 1..=60")));
            }
            Stratum::Cantor { set: CantorSet::new(variant, a, b, gens, weight), axis: axis - 1, anchor }
        }
        "point_mass" => {
            let p = point(s.point.clone().ok_or_else(|| need("point"))?, n, "point")?;
            Stratum::PointMass { point: p, weight: constant_density(&s.density)? }
        }
        other => return Err(Error::Syntax(format!("unknown stratum kind `{other}`"))),
    };
    if let Some(d) = s.dim {
        if d != stratum.intrinsic_dim() {
            return Err(Error::Validation(format!("dim = {d} but the geometry has dimension {}", stratum.intrinsic_dim())));
        }
    }
    Ok(stratum)
}

/// Reads a grid width written as `0.0625`, `1/16` or `2^-4`.
pub fn parse_scale(text: &str) -> Result<f64> {
    let t = text.trim();
    let bad = || Error::Syntax(format!("cannot read scale `{t}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let h = if let Some((a, b)) = t.split_once('/') {
        num(a)? / num(b)?
    } else if let Some((a, b)) = t.split_once('^') {
        num(a)?.powf(num(b)?)
    } else {
        num(t)?
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Validation(format!("scale `{t}` must be positive")));
    }
    Ok(h)
}

/// Comma separated list of scales.
pub fn parse_scales(text: &str) -> Result<Vec<f64>> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(parse_scale).collect()
}
