//! Decreasing rearrangements, Marcinkiewicz/Lorentz/weak-log norms, and
//! a 2D boundary-curvature admissibility report.
//!
//! Everything operates on finite weighted sample sets: ψ* is a step
//! function, ψ**(s) = (1/s)∫₀ˢψ* is exact on the step structure, and the
//! sup-type norms are evaluated at breakpoints, interior critical points,
//! and a dense log-spaced refinement for the weak-log case. The Lorentz
//! integral uses a closed form on the first piece and adaptive Simpson
//! elsewhere.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RearrangeError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("constant {c} must exceed the total measure {total}")]
    BadConstant { c: f64, total: f64 },
    #[error("invalid exponents q={q}, sigma={sigma}")]
    BadOrder { q: f64, sigma: f64 },
    #[error("sample has nonpositive weight {0}")]
    BadWeight(f64),
    #[error("sample value is not finite")]
    BadValue,
}

/// Finite weighted sample set (|ψ(x_i)|, m_i).
#[derive(Debug, Clone)]
pub struct WeightedSamples {
    pairs: Vec<(f64, f64)>,
    total: f64,
}

impl WeightedSamples {
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, RearrangeError> {
        let mut out = Vec::new();
        let mut total = 0.0;
        for (v, m) in pairs {
            if !v.is_finite() {
                return Err(RearrangeError::BadValue);
            }
            if !(m > 0.0) || !m.is_finite() {
                return Err(RearrangeError::BadWeight(m));
            }
            out.push((v.abs(), m));
            total += m;
        }
        if out.is_empty() {
            return Err(RearrangeError::EmptySamples);
        }
        Ok(Self { pairs: out, total })
    }

    pub fn total_measure(&self) -> f64 {
        self.total
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(v, m)| (c.abs() * v, m)).collect(),
            total: self.total,
        }
    }
}

/// ψ* as a right-continuous nonincreasing step function: value v[j] on
/// [s[j], s[j+1]), with prefix integrals p[j] = ∫₀^{s[j]} ψ*.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    v: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
}

impl StepFunction {
    pub fn total(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn sup(&self) -> f64 {
        self.v.first().copied().unwrap_or(0.0)
    }

    /// Breakpoints s₁ < s₂ < … = total measure.
    pub fn breakpoints(&self) -> &[f64] {
        &self.s[1..]
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 || s >= self.total() {
            return 0.0;
        }
        let j = match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        self.v.get(j).copied().unwrap_or(0.0)
    }

    pub fn integral_to(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.total() {
            return *self.p.last().unwrap();
        }
        let j = match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        self.p[j] + self.v[j] * (s - self.s[j])
    }

    /// ψ**(s); the s → 0⁺ limit ψ*(0) is returned at s = 0.
    pub fn double_star(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.sup();
        }
        self.integral_to(s) / s
    }

    /// Per-piece data (s_lo, s_hi, v, A) with ψ**(s) = v + A/s on the piece.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.v.len()).map(|j| {
            let a = self.p[j] - self.v[j] * self.s[j];
            (self.s[j], self.s[j + 1], self.v[j], a)
        })
    }
}

/// Sort descending by value and accumulate weights.
pub fn rearrange(ws: &WeightedSamples) -> StepFunction {
    let mut sorted = ws.pairs.clone();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut v = Vec::new();
    let mut s = vec![0.0];
    let mut p = vec![0.0];
    for (val, m) in sorted {
        if let Some(last) = v.last().copied() {
            if last == val {
                let k = s.len() - 1;
                s[k] += m;
                p[k] += val * m;
                continue;
            }
        }
        v.push(val);
        s.push(s.last().unwrap() + m);
        p.push(p.last().unwrap() + val * m);
    }
    StepFunction { v, s, p }
}

/// sup over (0, m] of s^{1/q} ψ**(s). Pass q = ∞ for the essential sup.
pub fn marcinkiewicz_norm(ws: &WeightedSamples, q: f64) -> Result<f64, RearrangeError> {
    if !(q >= 1.0) {
        return Err(RearrangeError::BadOrder { q, sigma: f64::INFINITY });
    }
    let star = rearrange(ws);
    if q.is_infinite() {
        return Ok(star.sup());
    }
    let g = |s: f64| s.powf(1.0 / q) * star.double_star(s);
    let mut best = 0.0f64;
    for &s in star.breakpoints() {
        best = best.max(g(s));
    }
    // Interior critical points of v·s^{1/q} + A·s^{1/q−1} per piece.
    if q > 1.0 {
        for (lo, hi, v, a) in star.pieces() {
            if v > 0.0 {
                let sc = a * (q - 1.0) / v;
                if sc > lo && sc < hi {
                    best = best.max(g(sc));
                }
            }
        }
    }
    Ok(best)
}

const LOG_SAMPLES_PER_PIECE: usize = 128;

/// sup over (0, m] of s·log(1+C/s)·ψ**(s); C defaults to 2·total.
pub fn weak_log_norm(ws: &WeightedSamples, c: Option<f64>) -> Result<f64, RearrangeError> {
    let total = ws.total_measure();
    let c = c.unwrap_or(2.0 * total);
    if c <= total {
        return Err(RearrangeError::BadConstant { c, total });
    }
    let star = rearrange(ws);
    let g = |s: f64| s * (1.0 + c / s).ln() * star.double_star(s);
    let mut best = 0.0f64;
    for (lo, hi, _, _) in star.pieces() {
        best = best.max(g(hi));
        let lo = lo.max(hi * 1e-9);
        let ratio = (hi / lo).powf(1.0 / LOG_SAMPLES_PER_PIECE as f64);
        let mut s = lo;
        for _ in 0..LOG_SAMPLES_PER_PIECE {
            best = best.max(g(s));
            s *= ratio;
        }
    }
    Ok(best)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, right, 0.5 * tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    adaptive_simpson(&f, a, b, simpson(&f, a, b), tol, 40)
}

/// ‖s^{1/q−1/σ} ψ**(s)‖_{L^σ(0, m)}. σ = ∞ recovers the Marcinkiewicz
/// norm; q = ∞ is only admissible with σ = ∞.
pub fn lorentz_norm(ws: &WeightedSamples, q: f64, sigma: f64) -> Result<f64, RearrangeError> {
    if !(q >= 1.0) || !(sigma >= 1.0) || (q.is_infinite() && sigma.is_finite()) {
        return Err(RearrangeError::BadOrder { q, sigma });
    }
    if sigma.is_infinite() {
        return marcinkiewicz_norm(ws, q);
    }
    let star = rearrange(ws);
    let mut acc = 0.0;
    let mut first = true;
    for (lo, hi, v, a) in star.pieces() {
        if first {
            // ψ** ≡ v on the first piece: ∫₀^{s₁} (s^{1/q−1/σ} v)^σ ds.
            acc += v.powf(sigma) * (q / sigma) * hi.powf(sigma / q);
            first = false;
            continue;
        }
        let integrand =
            |s: f64| (s.powf(1.0 / q - 1.0 / sigma) * (v + a / s)).powf(sigma);
        let scale = integrand(lo).max(integrand(hi)) * (hi - lo);
        acc += integrate(integrand, lo, hi, 1e-12 * scale.max(1e-300));
    }
    Ok(acc.powf(1.0 / sigma))
}

#[derive(Debug, Clone)]
enum CurveKind {
    Circle { r: f64 },
    Stadium { a: f64, r: f64 },
    LogSpike { kappa0: f64, delta: f64, table: Vec<[f64; 2]> },
}

/// Closed plane curve in arclength parametrization with curvature access.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    kind: CurveKind,
    length: f64,
}

impl BoundaryCurve {
    pub fn circle(r: f64) -> Self {
        assert!(r > 0.0);
        Self { kind: CurveKind::Circle { r }, length: std::f64::consts::TAU * r }
    }

    /// Two straight segments of length `a` joined by semicircular caps of
    /// radius `r`.
    pub fn stadium(a: f64, r: f64) -> Self {
        assert!(a > 0.0 && r > 0.0);
        Self { kind: CurveKind::Stadium { a, r }, length: 2.0 * a + std::f64::consts::TAU * r }
    }

    /// Closed curve of length `length` whose curvature behaves like
    /// κ₀/|s−s₀| near two antipodal points (at L/4 and 3L/4), and is the
    /// constant 2π/L elsewhere. The two spike windows have half-width
    /// `delta`. The 180° rotational symmetry of the tangent closes the
    /// curve exactly.
    pub fn log_spike(kappa0: f64, delta: f64, length: f64) -> Self {
        assert!(kappa0 > 0.0 && length > 0.0);
        assert!(delta > 0.0 && delta < length / 4.0);
        let n = 1 << 16;
        let ds = length / n as f64;
        let mut table = Vec::with_capacity(n + 1);
        let mut pos = [0.0, 0.0];
        table.push(pos);
        for k in 0..n {
            // Midpoint rule; the integrand is bounded so the oscillatory
            // spike windows contribute only O(ds) local error, and the
            // antipodal antisymmetry cancels it in the closure sum.
            let s = (k as f64 + 0.5) * ds;
            let phi = spike_angle(s, kappa0, delta, length);
            pos[0] += ds * phi.cos();
            pos[1] += ds * phi.sin();
            table.push(pos);
        }
        Self { kind: CurveKind::LogSpike { kappa0, delta, table }, length }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn pos(&self, s: f64) -> [f64; 2] {
        let s = s.rem_euclid(self.length);
        match &self.kind {
            CurveKind::Circle { r } => {
                let t = s / r;
                [r * t.cos(), r * t.sin()]
            }
            CurveKind::Stadium { a, r } => stadium_pos(s, *a, *r),
            CurveKind::LogSpike { table, .. } => {
                let n = table.len() - 1;
                let x = s / self.length * n as f64;
                let k = (x.floor() as usize).min(n - 1);
                let t = x - k as f64;
                [
                    table[k][0] * (1.0 - t) + table[k + 1][0] * t,
                    table[k][1] * (1.0 - t) + table[k + 1][1] * t,
                ]
            }
        }
    }

    pub fn tangent(&self, s: f64) -> [f64; 2] {
        let s = s.rem_euclid(self.length);
        match &self.kind {
            CurveKind::Circle { r } => {
                let t = s / r;
                [-t.sin(), t.cos()]
            }
            CurveKind::Stadium { a, r } => stadium_tangent(s, *a, *r),
            CurveKind::LogSpike { kappa0, delta, .. } => {
                let phi = spike_angle(s, *kappa0, *delta, self.length);
                [phi.cos(), phi.sin()]
            }
        }
    }

    /// Signed curvature; unbounded at the spike points of `log_spike`.
    pub fn curvature(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.length);
        match &self.kind {
            CurveKind::Circle { r } => 1.0 / r,
            CurveKind::Stadium { a, r } => {
                let straight = s < *a || (*a + std::f64::consts::PI * r <= s && s < 2.0 * a + std::f64::consts::PI * r);
                if straight { 0.0 } else { 1.0 / r }
            }
            CurveKind::LogSpike { kappa0, delta, .. } => {
                let l = self.length;
                let mut k = std::f64::consts::TAU / l;
                for s0 in [0.25 * l, 0.75 * l] {
                    let mut d = s - s0;
                    if d > 0.5 * l {
                        d -= l;
                    }
                    if d < -0.5 * l {
                        d += l;
                    }
                    if d != 0.0 && d.abs() <= *delta {
                        k -= kappa0 / d.abs();
                    }
                }
                k
            }
        }
    }

    /// |pos(L) − pos(0)|, nonzero only through quadrature error.
    pub fn closure_gap(&self) -> f64 {
        match &self.kind {
            CurveKind::LogSpike { table, .. } => {
                let first = table[0];
                let last = table[table.len() - 1];
                ((last[0] - first[0]).powi(2) + (last[1] - first[1]).powi(2)).sqrt()
            }
            _ => 0.0,
        }
    }
}

/// Tangent angle of the spike curve: 2πs/L plus one log-spike angle
/// profile per spike, periodic with period L/2 so that
/// φ(s + L/2) = φ(s) + π exactly.
fn spike_angle(s: f64, kappa0: f64, delta: f64, l: f64) -> f64 {
    let mut phi = std::f64::consts::TAU * s / l;
    for s0 in [0.25 * l, 0.75 * l] {
        let mut d = s - s0;
        if d > 0.5 * l {
            d -= l;
        }
        if d < -0.5 * l {
            d += l;
        }
        if d != 0.0 && d.abs() <= delta {
            phi -= kappa0 * d.signum() * (d.abs() / delta).ln();
        }
    }
    phi
}

fn stadium_pos(s: f64, a: f64, r: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    if s < a {
        [-0.5 * a + s, -r]
    } else if s < a + PI * r {
        let th = -0.5 * PI + (s - a) / r;
        [0.5 * a + r * th.cos(), r * th.sin()]
    } else if s < 2.0 * a + PI * r {
        [0.5 * a - (s - a - PI * r), r]
    } else {
        let th = 0.5 * PI + (s - 2.0 * a - PI * r) / r;
        [-0.5 * a + r * th.cos(), r * th.sin()]
    }
}

fn stadium_tangent(s: f64, a: f64, r: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    if s < a {
        [1.0, 0.0]
    } else if s < a + PI * r {
        let th = -0.5 * PI + (s - a) / r;
        [-th.sin(), th.cos()]
    } else if s < 2.0 * a + PI * r {
        [-1.0, 0.0]
    } else {
        let th = 0.5 * PI + (s - 2.0 * a - PI * r) / r;
        [-th.sin(), th.cos()]
    }
}

#[derive(Debug, Clone)]
pub struct CurvatureRow {
    pub r: f64,
    /// Arclength of the boundary point attaining the sup.
    pub sup_point_arclength: f64,
    pub weak_log_norm: f64,
}

const ARC_SAMPLES: usize = 8192;
const PROBE_POINTS: usize = 256;

/// For each radius r: sup over boundary points x of the weak-log norm of
/// |κ| on the arc within Euclidean distance r of x, arclength-weighted.
pub fn curvature_admissibility(curve: &BoundaryCurve, radii: &[f64]) -> Vec<CurvatureRow> {
    let l = curve.length();
    let ds = l / ARC_SAMPLES as f64;
    let samples: Vec<(f64, [f64; 2], f64)> = (0..ARC_SAMPLES)
        .map(|k| {
            let s = (k as f64 + 0.5) * ds;
            (s, curve.pos(s), curve.curvature(s).abs())
        })
        .collect();
    let probes: Vec<(f64, [f64; 2])> = (0..PROBE_POINTS)
        .map(|p| {
            let s = p as f64 * l / PROBE_POINTS as f64;
            (s, curve.pos(s))
        })
        .collect();
    radii
        .iter()
        .map(|&r| {
            let mut best = 0.0f64;
            let mut best_s = 0.0;
            for &(sp, xp) in &probes {
                let arc: Vec<(f64, f64)> = samples
                    .iter()
                    .filter(|(_, pos, _)| {
                        let dx = pos[0] - xp[0];
                        let dy = pos[1] - xp[1];
                        dx * dx + dy * dy <= r * r
                    })
                    .map(|&(_, _, k)| (k, ds))
                    .collect();
                if arc.is_empty() {
                    continue;
                }
                let ws = WeightedSamples::new(arc).unwrap();
                let norm = weak_log_norm(&ws, None).unwrap();
                if norm > best {
                    best = norm;
                    best_s = sp;
                }
            }
            CurvatureRow { r, sup_point_arclength: best_s, weak_log_norm: best }
        })
        .collect()
}
