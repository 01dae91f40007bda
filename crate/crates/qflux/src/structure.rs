//! The nonlinearity a(t) and its derived objects.
//!
//! A structure function carries the coefficient a of the operator
//! −div(a(|∇u|)∇u) together with certified growth indices
//!
//! ```text
//! i_a = inf_{t>0} t·a′(t)/a(t),   s_a = sup_{t>0} t·a′(t)/a(t),
//! ```
//!
//! which must satisfy −1 < i_a ≤ s_a < ∞. The model case a(t) = t^{p−2}
//! has i_a = s_a = p − 2. The module also provides b(t) = a(t)·t, the
//! energy density B(t) = ∫₀ᵗ b, the monotonicity pairing, and the
//! regularization family a_ε used by the solver's continuation.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Log-spaced scan grid bounds and size used for numeric index estimation.
const SCAN_LO: f64 = 1e-6;
const SCAN_HI: f64 = 1e6;
const SCAN_POINTS: usize = 4096;

/// Ratios above this are treated as an unbounded upper index.
const RATIO_CAP: f64 = 1e6;

/// Relative half-width of the C¹ blending band of the soft clamp.
const CLAMP_BAND: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("structure indices out of range: i_a = {i_a}, s_a = {s_a} (need -1 < i_a <= s_a < 1e6)")]
    IndexOutOfRange { i_a: f64, s_a: f64 },
    #[error("adaptive quadrature failed to converge after {0} subdivisions")]
    QuadratureFailure(usize),
    #[error("degenerate pair: xi == eta")]
    DegeneratePair,
}

/// How the stored indices were obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexCertainty {
    Exact,
    /// Inf/sup of t·a′(t)/a(t) over a log-spaced grid.
    NumericOnGrid { lo: f64, hi: f64, points: usize },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    PowerLaw { p: f64 },
    Constant { c: f64 },
    Regularized { base: String, eps: f64 },
    Custom,
}

/// The nonlinearity a with derivative access and certified indices.
///
/// Immutable after construction; cheap to clone and safe to share across
/// threads.
#[derive(Clone)]
pub struct StructureFunction {
    kind: Kind,
    a: ScalarFn,
    da: ScalarFn,
    i_a: f64,
    s_a: f64,
    certainty: IndexCertainty,
}

impl fmt::Debug for StructureFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StructureFunction({}, i_a={}, s_a={})", self.descriptor(), self.i_a, self.s_a)
    }
}

impl StructureFunction {
    /// a(t) = t^{p−2}, the p-Laplace coefficient. Requires p > 1.
    pub fn power_law(p: f64) -> Result<Self, StructureError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(StructureError::InvalidParameter(format!("powerlaw needs p > 1, got {p}")));
        }
        let e = p - 2.0;
        Ok(Self {
            kind: Kind::PowerLaw { p },
            a: Arc::new(move |t: f64| t.powf(e)),
            da: Arc::new(move |t: f64| e * t.powf(e - 1.0)),
            i_a: e,
            s_a: e,
            certainty: IndexCertainty::Exact,
        })
    }

    /// a ≡ c, the linear case. Requires c > 0.
    pub fn constant(c: f64) -> Result<Self, StructureError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(StructureError::InvalidParameter(format!("constant needs c > 0, got {c}")));
        }
        Ok(Self {
            kind: Kind::Constant { c },
            a: Arc::new(move |_| c),
            da: Arc::new(|_| 0.0),
            i_a: 0.0,
            s_a: 0.0,
            certainty: IndexCertainty::Exact,
        })
    }

    /// User-supplied a and a′; indices estimated by a dense log-grid scan.
    pub fn custom<F, G>(a: F, da: G) -> Result<Self, StructureError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let a: ScalarFn = Arc::new(a);
        let da: ScalarFn = Arc::new(da);
        let (i_a, s_a) = scan_indices(&a, &da)?;
        Ok(Self {
            kind: Kind::Custom,
            a,
            da,
            i_a,
            s_a,
            certainty: IndexCertainty::NumericOnGrid { lo: SCAN_LO, hi: SCAN_HI, points: SCAN_POINTS },
        })
    }

    /// Coefficient value a(t).
    pub fn a(&self, t: f64) -> f64 {
        (self.a)(t)
    }

    /// Derivative a′(t).
    pub fn da(&self, t: f64) -> f64 {
        (self.da)(t)
    }

    /// b(t) = a(t)·t, continuously extended by b(0) = 0.
    pub fn b(&self, t: f64) -> f64 {
        if t == 0.0 {
            0.0
        } else {
            self.a(t) * t
        }
    }

    pub fn i_a(&self) -> f64 {
        self.i_a
    }

    pub fn s_a(&self) -> f64 {
        self.s_a
    }

    pub fn certainty(&self) -> &IndexCertainty {
        &self.certainty
    }

    /// Short config-style descriptor, e.g. `powerlaw:p=3`.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            Kind::PowerLaw { p } => format!("powerlaw:p={p}"),
            Kind::Constant { c } => format!("constant:c={c}"),
            Kind::Regularized { base, eps } => format!("regularized({base},eps={eps})"),
            Kind::Custom => "custom".to_string(),
        }
    }

    /// The flux vector a(|v|)·v, continuously extended by 0 at v = 0.
    ///
    /// The extension is the b(0⁺) = 0 limit, valid for every admissible
    /// structure function since i_a > −1.
    pub fn flux_vec(&self, v: &[f64]) -> Vec<f64> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; v.len()];
        }
        let s = self.a(norm);
        v.iter().map(|x| s * x).collect()
    }

    /// The regularized family member a_ε.
    ///
    /// Construction: a_ε(t) = clamp_smooth(a(√(t² + ε²)); ε, ε⁻¹), where
    /// clamp_smooth is a C¹ soft clamp with a quadratic blend over a
    /// relative band of half-width 1e-2 around each clamp level. The shift
    /// √(t²+ε²) removes the origin degeneracy, the clamp enforces
    /// ε ≤ a_ε ≤ ε⁻¹, and both preserve the index window
    /// [min(i_a,0), max(s_a,0)] up to the blend-band tolerance.
    pub fn regularize(&self, eps: f64) -> Result<Self, StructureError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(StructureError::InvalidParameter(format!(
                "regularize needs eps in (0,1), got {eps}"
            )));
        }
        let base_a = self.a.clone();
        let base_a2 = self.a.clone();
        let base_da = self.da.clone();
        let (lo, hi) = (eps, 1.0 / eps);
        let a: ScalarFn = Arc::new(move |t: f64| {
            let s = (t * t + eps * eps).sqrt();
            clamp_smooth(base_a(s), lo, hi)
        });
        let da: ScalarFn = Arc::new(move |t: f64| {
            let s = (t * t + eps * eps).sqrt();
            let y = base_a2(s);
            clamp_smooth_slope(y, lo, hi) * base_da(s) * (t / s)
        });
        let (i_a, s_a) = scan_indices(&a, &da)?;
        Ok(Self {
            kind: Kind::Regularized { base: self.descriptor(), eps },
            a,
            da,
            i_a,
            s_a,
            certainty: IndexCertainty::NumericOnGrid { lo: SCAN_LO, hi: SCAN_HI, points: SCAN_POINTS },
        })
    }
}

/// C¹ soft clamp of y into [lo, hi] with quadratic blends near the levels.
///
/// Outside the bands it is exactly max(lo, min(y, hi)); inside a band of
/// half-width 1e-2·level it interpolates with matching value and slope at
/// the band edges. The output always stays within [lo, hi].
fn clamp_smooth(y: f64, lo: f64, hi: f64) -> f64 {
    let wl = CLAMP_BAND * lo;
    let y = if y <= lo - wl {
        lo
    } else if y < lo + wl {
        lo + (y - lo + wl) * (y - lo + wl) / (4.0 * wl)
    } else {
        y
    };
    let wh = CLAMP_BAND * hi;
    if y >= hi + wh {
        hi
    } else if y > hi - wh {
        hi - (hi + wh - y) * (hi + wh - y) / (4.0 * wh)
    } else {
        y
    }
}

/// Derivative of `clamp_smooth` with respect to y.
fn clamp_smooth_slope(y: f64, lo: f64, hi: f64) -> f64 {
    let wl = CLAMP_BAND * lo;
    let (y1, s1) = if y <= lo - wl {
        (lo, 0.0)
    } else if y < lo + wl {
        (lo + (y - lo + wl) * (y - lo + wl) / (4.0 * wl), (y - lo + wl) / (2.0 * wl))
    } else {
        (y, 1.0)
    };
    let wh = CLAMP_BAND * hi;
    let s2 = if y1 >= hi + wh {
        0.0
    } else if y1 > hi - wh {
        (hi + wh - y1) / (2.0 * wh)
    } else {
        1.0
    };
    s1 * s2
}

/// The log-spaced scan grid shared by index estimation and the sandwich
/// and clamp property checks.
pub fn scan_grid() -> Vec<f64> {
    let (l0, l1) = (SCAN_LO.ln(), SCAN_HI.ln());
    (0..SCAN_POINTS)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (SCAN_POINTS - 1) as f64).exp())
        .collect()
}

fn scan_indices(a: &ScalarFn, da: &ScalarFn) -> Result<(f64, f64), StructureError> {
    let mut i_a = f64::INFINITY;
    let mut s_a = f64::NEG_INFINITY;
    for t in scan_grid() {
        let av = a(t);
        if !(av > 0.0) || !av.is_finite() {
            return Err(StructureError::InvalidParameter(format!("a({t}) = {av} is not positive")));
        }
        let r = t * da(t) / av;
        if !r.is_finite() || r.abs() > RATIO_CAP {
            return Err(StructureError::IndexOutOfRange { i_a: r, s_a: r });
        }
        i_a = i_a.min(r);
        s_a = s_a.max(r);
    }
    if i_a <= -1.0 {
        return Err(StructureError::IndexOutOfRange { i_a, s_a });
    }
    Ok((i_a, s_a))
}

/// The monotonicity pairing [a(|ξ|)ξ − a(|η|)η]·(ξ − η).
///
/// Strictly positive for ξ ≠ η whenever the structure conditions hold;
/// the caller asserts positivity.
pub fn check_monotonicity(
    sf: &StructureFunction,
    xi: &[f64],
    eta: &[f64],
) -> Result<f64, StructureError> {
    assert_eq!(xi.len(), eta.len(), "dimension mismatch");
    if xi == eta {
        return Err(StructureError::DegeneratePair);
    }
    let fx = sf.flux_vec(xi);
    let fe = sf.flux_vec(eta);
    Ok(fx
        .iter()
        .zip(&fe)
        .zip(xi.iter().zip(eta))
        .map(|((fxi, fei), (x, e))| (fxi - fei) * (x - e))
        .sum())
}

/// The energy density B(t) = ∫₀ᵗ a(s)·s ds with adaptive quadrature.
pub struct EnergyDensity {
    sf: StructureFunction,
    rel_tol: f64,
    max_depth: usize,
}

impl EnergyDensity {
    pub fn new(sf: StructureFunction) -> Self {
        Self { sf, rel_tol: 1e-10, max_depth: 48 }
    }

    pub fn with_tolerance(sf: StructureFunction, rel_tol: f64, max_depth: usize) -> Self {
        Self { sf, rel_tol, max_depth }
    }

    pub fn structure(&self) -> &StructureFunction {
        &self.sf
    }

    /// B(t), by closed form for power-law and constant kinds, adaptive
    /// Simpson otherwise.
    pub fn eval(&self, t: f64) -> Result<f64, StructureError> {
        assert!(t >= 0.0, "B is defined on t >= 0");
        if t == 0.0 {
            return Ok(0.0);
        }
        match self.sf.kind {
            Kind::PowerLaw { p } => Ok(t.powf(p) / p),
            Kind::Constant { c } => Ok(c * t * t / 2.0),
            _ => self.adaptive_simpson(t),
        }
    }

    fn adaptive_simpson(&self, t: f64) -> Result<f64, StructureError> {
        let f = |s: f64| self.sf.b(s);
        let fa = f(0.0);
        let fb = f(t);
        let fm = f(t / 2.0);
        let whole = t / 6.0 * (fa + 4.0 * fm + fb);
        let mut worst_depth = 0usize;
        let v = simpson_rec(
            &f,
            0.0,
            t,
            fa,
            fb,
            fm,
            whole,
            self.rel_tol * whole.abs().max(f64::MIN_POSITIVE),
            self.max_depth,
            &mut worst_depth,
        );
        match v {
            Some(v) => Ok(v),
            None => Err(StructureError::QuadratureFailure(self.max_depth)),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    worst: &mut usize,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Some(left + right + delta / 15.0);
    }
    if depth == 0 {
        return None;
    }
    *worst = (*worst).max(depth);
    let l = simpson_rec(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1, worst)?;
    let r = simpson_rec(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1, worst)?;
    Some(l + r)
}
