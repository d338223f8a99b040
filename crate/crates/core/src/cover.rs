//! Sphere covers of an input region and the cover-based constructor.

use std::fmt::Write as _;

use crate::construct::{build_self_from_centers, check_distinct, probe_sup, ApproxKind, ConstructedApproximator};
use crate::error::{Error, Result};
use crate::target::TargetFunction;

/// `N_x` balls of a common 2-norm radius in `R^{dn}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereCover {
    centers: Vec<Vec<f64>>,
    radius: f64,
}

fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl SphereCover {
    pub fn new(centers: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("cover radius must be positive, got {radius}")));
        }
        let Some(first) = centers.first() else {
            return Err(Error::invalid("a cover needs at least one center"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("cover centers must have positive length"));
        }
        for c in &centers {
            if c.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "cover center",
                    expected: dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("SphereCover::new"));
            }
        }
        check_distinct(&centers)?;
        Ok(Self { centers, radius })
    }

    /// Greedy cover of a point cloud: each point not yet within `radius` of a
    /// chosen center becomes a new center.
    pub fn greedy(points: &[Vec<f64>], radius: f64) -> Result<Self> {
        let r2 = radius * radius;
        let mut centers: Vec<Vec<f64>> = Vec::new();
        for p in points {
            if !centers.iter().any(|c| distance_sq(c, p) <= r2) {
                centers.push(p.clone());
            }
        }
        Self::new(centers, radius)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Length `dn` of each center.
    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Whether the flattened point lies in some ball.
    pub fn contains(&self, x: &[f64]) -> bool {
        let r2 = self.radius * self.radius;
        self.centers.iter().any(|c| distance_sq(c, x) <= r2)
    }

    /// Bounding box of the union of balls.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for c in &self.centers {
            for i in 0..dim {
                lo[i] = lo[i].min(c[i] - self.radius);
                hi[i] = hi[i].max(c[i] + self.radius);
            }
        }
        (lo, hi)
    }

    /// Parses the text format: a `radius <r>` line, then one center per line as
    /// whitespace-separated coordinates. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let radius = match lines.next() {
            Some((_, line)) => {
                let mut parts = line.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some("radius"), Some(r), None) => r
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("cover file: bad radius {r:?}: {e}")))?,
                    _ => {
                        return Err(Error::invalid(format!(
                            "cover file must start with `radius <r>`, found {line:?}"
                        )))
                    }
                }
            }
            None => return Err(Error::invalid("cover file is empty")),
        };
        let centers = lines
            .map(|(no, line)| {
                line.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|e| {
                            Error::invalid(format!("cover file line {}: bad value {tok:?}: {e}", no + 1))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(centers, radius)
    }

    /// Inverse of [`SphereCover::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("radius {:e}\n", self.radius);
        for c in &self.centers {
            let line: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Self-attention approximator whose centers are the cover's ball centers.
pub fn build_small_region(
    f: &TargetFunction,
    cover: &SphereCover,
    temperature: f64,
) -> Result<ConstructedApproximator> {
    if cover.dim() != f.d() * f.n() {
        return Err(Error::LengthMismatch {
            what: "cover center (d·n)",
            expected: f.d() * f.n(),
            got: cover.dim(),
        });
    }
    crate::construct::check_temperature(temperature)?;
    crate::construct::check_self_budget(f.d(), f.n(), cover.len())?;
    let (lo, hi) = cover.bounding_box();
    let probe = probe_sup(f, &lo, &hi, f.seed())?;
    build_self_from_centers(
        f,
        cover.centers.clone(),
        temperature,
        probe,
        ApproxKind::LipschitzCover,
    )
}

/// Number of weight entries that depend on the target or the centers, by layer:
/// the linear layer holds `dn` center coordinates per center in each half
/// (`2dn·N_x`), `W_K` holds `2d·N_x` norms and `2dn·N_x` logarithms, `W_O`
/// holds `n` copies of `d·b0`. Total `4dn·N_x + 2d·N_x + n`.
pub fn count_trainable_params(approx: &ConstructedApproximator) -> Result<usize> {
    if approx.kind() != ApproxKind::LipschitzCover {
        return Err(Error::WrongKind {
            expected: "lipschitz-cover",
            got: approx.kind().as_str(),
        });
    }
    Ok(trainable_param_count(approx.d(), approx.n(), approx.centers().len()))
}

/// The count of [`count_trainable_params`] for a `d × n` input and `nx` centers.
pub fn trainable_param_count(d: usize, n: usize, nx: usize) -> usize {
    let linear = 2 * d * n * nx;
    let keys = 2 * d * nx + 2 * d * n * nx;
    let output = n;
    linear + keys + output
}
