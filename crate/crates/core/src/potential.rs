//! Uniformly convex interaction potentials.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre_on;

const MOLLIFIER_NODES: usize = 64;

/// Serializable description of a potential, e.g.
/// `{"kind": "soft_quartic", "a": 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic,
    SoftQuartic { a: f64 },
    Kinked { b: f64 },
    Mollified { base: Box<PotentialSpec>, kappa: f64 },
}

#[derive(Debug, Clone)]
enum Shape {
    Quadratic,
    SoftQuartic { a: f64 },
    Kinked { b: f64 },
    Mollified(Arc<Mollified>),
}

#[derive(Debug)]
struct Mollified {
    base: Potential,
    kappa: f64,
}

/// A symmetric potential `V` with `c_minus <= V'' <= c_plus`.
#[derive(Debug, Clone)]
pub struct Potential {
    shape: Shape,
    c_minus: f64,
    c_plus: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl Potential {
    /// `V(x) = x^2 / 2`.
    pub fn quadratic() -> Self {
        Self { shape: Shape::Quadratic, c_minus: 1.0, c_plus: 1.0 }
    }

    /// `V(x) = x^2 / 2 + a sqrt(1 + x^2)`, with `1 <= V'' <= 1 + a`.
    pub fn soft_quartic(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return invalid(format!("soft_quartic needs a > 0, got {a}"));
        }
        Ok(Self { shape: Shape::SoftQuartic { a }, c_minus: 1.0, c_plus: 1.0 + a })
    }

    /// `V'' = 1 + b 1{|x| < 1}` with `V'` and `V` its continuous antiderivatives.
    pub fn kinked(b: f64) -> Result<Self> {
        if !(b > 0.0 && b < 1.0) {
            return invalid(format!("kinked needs b in (0, 1), got {b}"));
        }
        Ok(Self { shape: Shape::Kinked { b }, c_minus: 1.0, c_plus: 1.0 + b })
    }

    /// Convolution of `base` with the standard bump rescaled to `(-kappa, kappa)`.
    pub fn mollify(base: &Potential, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return invalid(format!("mollification scale must be positive, got {kappa}"));
        }
        let m = Mollified { base: base.clone(), kappa };
        let out = Self {
            shape: Shape::Mollified(Arc::new(m)),
            c_minus: base.c_minus,
            c_plus: base.c_plus,
        };
        for x in [-2.0, 0.0, 0.5, 3.0] {
            let vals = [out.v(x), out.dv(x), out.ddv(x)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("mollifier quadrature produced non-finite values".into()));
            }
        }
        Ok(out)
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        match spec {
            PotentialSpec::Quadratic => Ok(Self::quadratic()),
            PotentialSpec::SoftQuartic { a } => Self::soft_quartic(*a),
            PotentialSpec::Kinked { b } => Self::kinked(*b),
            PotentialSpec::Mollified { base, kappa } => Self::mollify(&Self::from_spec(base)?, *kappa),
        }
    }

    pub fn spec(&self) -> PotentialSpec {
        match &self.shape {
            Shape::Quadratic => PotentialSpec::Quadratic,
            Shape::SoftQuartic { a } => PotentialSpec::SoftQuartic { a: *a },
            Shape::Kinked { b } => PotentialSpec::Kinked { b: *b },
            Shape::Mollified(m) => PotentialSpec::Mollified {
                base: Box::new(m.base.spec()),
                kappa: m.kappa,
            },
        }
    }

    pub fn c_minus(&self) -> f64 {
        self.c_minus
    }

    pub fn c_plus(&self) -> f64 {
        self.c_plus
    }

    /// Every constructor yields an even potential.
    pub fn is_symmetric(&self) -> bool {
        true
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.shape, Shape::Quadratic)
    }

    /// Points where `V''` jumps.
    pub fn kinks(&self) -> &'static [f64] {
        match self.shape {
            Shape::Kinked { .. } => &[-1.0, 1.0],
            _ => &[],
        }
    }

    pub fn v(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Quadratic => 0.5 * x * x,
            Shape::SoftQuartic { a } => 0.5 * x * x + a * (1.0 + x * x).sqrt(),
            Shape::Kinked { b } => {
                let extra = if x.abs() <= 1.0 { 0.5 * x * x } else { x.abs() - 0.5 };
                0.5 * x * x + b * extra
            }
            Shape::Mollified(m) => m.convolve(x, 0),
        }
    }

    #[inline]
    pub fn dv(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Quadratic => x,
            Shape::SoftQuartic { a } => x + a * x / (1.0 + x * x).sqrt(),
            Shape::Kinked { b } => x + b * x.clamp(-1.0, 1.0),
            Shape::Mollified(m) => m.convolve(x, 1),
        }
    }

    #[inline]
    pub fn ddv(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Quadratic => 1.0,
            Shape::SoftQuartic { a } => {
                let s = 1.0 + x * x;
                1.0 + a / (s * s.sqrt())
            }
            Shape::Kinked { b } => {
                if x.abs() < 1.0 {
                    1.0 + b
                } else {
                    1.0
                }
            }
            Shape::Mollified(m) => m.convolve(x, 2),
        }
    }

    fn derivative(&self, order: usize, x: f64) -> f64 {
        match order {
            0 => self.v(x),
            1 => self.dv(x),
            _ => self.ddv(x),
        }
    }
}

impl Mollified {
    /// `int V^(order)(x - kappa s) eta(s) ds / Z`, split where the base
    /// potential has kinks so that every quadrature panel is smooth.
    fn convolve(&self, x: f64, order: usize) -> f64 {
        let mut cuts: Vec<f64> = vec![-1.0];
        for &k in self.base.kinks() {
            let s = (x - k) / self.kappa;
            if s > -1.0 && s < 1.0 {
                cuts.push(s);
            }
        }
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        let mut mass = 0.0;
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            let (nodes, weights) = gauss_legendre_on(MOLLIFIER_NODES, w[0], w[1]);
            for (&s, &wt) in nodes.iter().zip(&weights) {
                let b = wt * bump(s);
                acc += b * self.base.derivative(order, x - self.kappa * s);
                mass += b;
            }
        }
        acc / mass
    }
}

/// Lebesgue measure of `{x in [-S, S] : |V''(x) - V_kappa''(x)| >= eps}`.
///
/// The indicator is sampled on cells of width `1e-2`; cells whose endpoints
/// and midpoint disagree are refined to width `1e-4`.
pub fn lusin_measure(v: &Potential, s: f64, kappa: f64, eps: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return invalid("lusin_measure needs S >= 1");
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid("lusin_measure needs eps in (0, 1]");
    }
    let mollified = Potential::mollify(v, kappa)?;
    let bad = |x: f64| (v.ddv(x) - mollified.ddv(x)).abs() >= eps;
    const COARSE: f64 = 1e-2;
    const FINE: f64 = 1e-4;
    let cells = (2.0 * s / COARSE).round() as usize;
    let h = 2.0 * s / cells as f64;
    let sub = (h / FINE).round().max(1.0) as usize;
    let hf = h / sub as f64;
    let mut measure = 0.0;
    let mut left = bad(-s);
    for c in 0..cells {
        let a = -s + c as f64 * h;
        let right = bad(a + h);
        let mid = bad(a + 0.5 * h);
        if left == right && left == mid {
            if left {
                measure += h;
            }
        } else {
            for k in 0..sub {
                if bad(a + (k as f64 + 0.5) * hf) {
                    measure += hf;
                }
            }
        }
        left = right;
    }
    Ok(measure)
}
