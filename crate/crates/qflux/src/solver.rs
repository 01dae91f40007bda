//! Dirichlet and Neumann solves by minimizing the discrete convex energy
//! J(u) = Σ_q w_q B(|∇u|_q) − Σ_k f_k u_k w_k.
//!
//! The gradient is the bilinear cell gradient sampled at the four Gauss
//! points of every grid cell whose corners are all in-domain, with the
//! load lumped onto the nodes. J is then a smooth convex function of the
//! nodal values whose Hessian is symmetric positive semidefinite, solved
//! by damped Newton with preconditioned conjugate gradients, continued
//! over a decreasing ε-regularization schedule. The final flux always
//! uses the unregularized nonlinearity.

use crate::grid::{self, GridDomain, NodeClass, ScalarField, Shape, VectorField};
use crate::structure::{StructureError, StructureFunction};
use std::cell::RefCell;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("newton stalled with gradient norm {grad_norm}")]
    NewtonStall { grad_norm: f64 },
    #[error("linear solve failed with relative residual {residual}")]
    LinearSolveFailure { residual: f64 },
    #[error("neumann data has nonzero mean {mean}")]
    IncompatibleData { mean: f64 },
    #[error("epsilon schedule must be strictly decreasing and positive")]
    InvalidSchedule,
    #[error("field does not live on the given domain")]
    DomainMismatch,
    #[error(transparent)]
    Structure(#[from] StructureError),
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-9, backtrack: 0.5, min_step: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LinearOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub epsilon_schedule: Vec<f64>,
    /// Run a final stage with the raw, unregularized nonlinearity.
    pub final_raw: bool,
    pub newton: NewtonOptions,
    pub linear: LinearOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            epsilon_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            final_raw: false,
            newton: NewtonOptions::default(),
            linear: LinearOptions::default(),
        }
    }
}

impl SolveOptions {
    /// Geometric schedule from 10⁻¹ down to `eps`; `eps = 0` keeps the
    /// default schedule and appends a raw final stage.
    pub fn with_target_epsilon(eps: f64) -> Self {
        let mut opts = Self::default();
        if eps == 0.0 {
            opts.final_raw = true;
            return opts;
        }
        assert!(eps > 0.0 && eps < 1.0, "epsilon must lie in [0, 1)");
        let mut schedule = Vec::new();
        let mut level: f64 = 1e-1;
        while level > eps * (1.0 + 1e-12) {
            schedule.push(level);
            level /= 10.0;
        }
        schedule.push(eps);
        opts.epsilon_schedule = schedule;
        opts
    }

    fn validate(&self) -> Result<(), SolveError> {
        let s = &self.epsilon_schedule;
        if s.iter().any(|&e| !(e > 0.0)) {
            return Err(SolveError::InvalidSchedule);
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SolveError::InvalidSchedule);
        }
        if s.is_empty() && !self.final_raw {
            return Err(SolveError::InvalidSchedule);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    /// None for the raw final stage.
    pub epsilon: Option<f64>,
    pub newton_iterations: usize,
    pub grad_norm: f64,
    /// Energy after each accepted Newton step, non-increasing.
    pub energy_history: Vec<f64>,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub bc: BoundaryCondition,
    pub stages: Vec<StageReport>,
    pub residual_l2: f64,
    pub energy: f64,
}

impl SolveReport {
    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.newton_iterations).sum()
    }
}

/// One Gauss point of one cell: the bilinear gradient there is a linear
/// map of the four corner values with the coefficients below.
struct QuadPoint {
    w: f64,
    node: [u32; 4],
    cx: [f64; 4],
    cy: [f64; 4],
}

impl QuadPoint {
    fn grad(&self, u: &[f64]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for k in 0..4 {
            let v = u[self.node[k] as usize];
            g[0] += self.cx[k] * v;
            g[1] += self.cy[k] * v;
        }
        g
    }
}

fn bilinear_cx(xi: f64, eta: f64, h: f64) -> ([f64; 4], [f64; 4]) {
    let cx = [-(1.0 - eta) / h, (1.0 - eta) / h, -eta / h, eta / h];
    let cy = [-(1.0 - xi) / h, -xi / h, (1.0 - xi) / h, xi / h];
    (cx, cy)
}

fn bilinear_phi(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta]
}

/// Quadrature over the grid cells: 2×2 Gauss on cells with four
/// in-domain corners, and with `cut` also 4×4 midpoint subcells clipped
/// to the analytic shape on partially covered cells. Node weights lump
/// the quadrature onto the load term; on a full rectangle they reproduce
/// the grid weights (h² inside, h²/2 on edges, h²/4 at corners).
fn build_quadrature(dom: &GridDomain, cut: bool) -> (Vec<QuadPoint>, Vec<f64>) {
    let h = dom.spacing();
    let g = 0.5 - 0.5 / 3.0f64.sqrt();
    let gauss = [(g, g), (1.0 - g, g), (g, 1.0 - g), (1.0 - g, 1.0 - g)];
    let wq = h * h / 4.0;
    let mut points = Vec::new();
    let mut lumped = vec![0.0; dom.node_count()];
    const SUB: usize = 4;
    for j in 0..dom.ny() - 1 {
        for i in 0..dom.nx() - 1 {
            let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
            let inside =
                corners.map(|(a, b)| dom.in_domain(a as isize, b as isize));
            let node = corners.map(|(a, b)| dom.idx(a, b) as u32);
            if inside.iter().all(|&b| b) {
                for (a, b) in corners {
                    lumped[dom.idx(a, b)] += wq;
                }
                for (xi, eta) in gauss {
                    let (cx, cy) = bilinear_cx(xi, eta, h);
                    points.push(QuadPoint { w: wq, node, cx, cy });
                }
            } else if cut && inside.iter().any(|&b| b) {
                let ws = h * h / (SUB * SUB) as f64;
                let (xc, yc) = (dom.x(i), dom.y(j));
                for sj in 0..SUB {
                    for si in 0..SUB {
                        let xi = (si as f64 + 0.5) / SUB as f64;
                        let eta = (sj as f64 + 0.5) / SUB as f64;
                        if !dom.contains_point(xc + xi * h, yc + eta * h) {
                            continue;
                        }
                        let (cx, cy) = bilinear_cx(xi, eta, h);
                        points.push(QuadPoint { w: ws, node, cx, cy });
                        for (k, phi) in bilinear_phi(xi, eta).iter().enumerate() {
                            lumped[node[k] as usize] += ws * phi;
                        }
                    }
                }
            }
        }
    }
    (points, lumped)
}

/// One boundary-penalty sample: adds w/2·(cᵀu)² to the energy, driving
/// the bilinear interpolant to zero at a point of the true boundary.
struct PenaltyRow {
    w: f64,
    node: [u32; 4],
    c: [f64; 4],
}

fn build_penalty(dom: &GridDomain, gamma: f64) -> Vec<PenaltyRow> {
    let h = dom.spacing();
    let mut rows = Vec::new();
    for [x, y, ds] in dom.boundary_quadrature(4) {
        let fi = ((x - dom.x(0)) / h).floor().clamp(0.0, (dom.nx() - 2) as f64);
        let fj = ((y - dom.y(0)) / h).floor().clamp(0.0, (dom.ny() - 2) as f64);
        let (i, j) = (fi as usize, fj as usize);
        let xi = ((x - dom.x(i)) / h).clamp(0.0, 1.0);
        let eta = ((y - dom.y(j)) / h).clamp(0.0, 1.0);
        rows.push(PenaltyRow {
            w: gamma / h * ds,
            node: [
                dom.idx(i, j) as u32,
                dom.idx(i + 1, j) as u32,
                dom.idx(i, j + 1) as u32,
                dom.idx(i + 1, j + 1) as u32,
            ],
            c: bilinear_phi(xi, eta),
        });
    }
    rows
}

/// Cached primitive B(t) = ∫₀ᵗ a(s)s ds on a uniform grid with Hermite
/// interpolation (the slope b is exact at the nodes).
struct BTable {
    dt: f64,
    vals: Vec<f64>,
    slopes: Vec<f64>,
}

const BTABLE_CELLS: usize = 65_536;

impl BTable {
    fn build(sf: &StructureFunction, tmax: f64) -> Self {
        let n = BTABLE_CELLS;
        let dt = tmax / n as f64;
        let mut vals = Vec::with_capacity(n + 1);
        let mut slopes = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        vals.push(0.0);
        slopes.push(sf.b(0.0));
        for k in 0..n {
            let t0 = k as f64 * dt;
            let t1 = t0 + dt;
            acc += dt / 6.0 * (sf.b(t0) + 4.0 * sf.b(0.5 * (t0 + t1)) + sf.b(t1));
            vals.push(acc);
            slopes.push(sf.b(t1));
        }
        Self { dt, vals, slopes }
    }

    fn tmax(&self) -> f64 {
        self.dt * (self.vals.len() - 1) as f64
    }

    fn eval(&self, t: f64) -> f64 {
        let x = t / self.dt;
        let k = (x.floor() as usize).min(self.vals.len() - 2);
        let s = x - k as f64;
        let (v0, v1) = (self.vals[k], self.vals[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.dt, self.slopes[k + 1] * self.dt);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * v0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * v1
            + (s3 - s2) * m1
    }
}

struct Stage<'a> {
    sf: &'a StructureFunction,
    qpoints: &'a [QuadPoint],
    penalty: &'a [PenaltyRow],
    load: &'a [f64],
    unknown: &'a [bool],
    weights: &'a [f64],
    neumann: bool,
    btable: RefCell<BTable>,
}

impl<'a> Stage<'a> {
    fn ensure_table(&self, need: f64) {
        if need > self.btable.borrow().tmax() {
            *self.btable.borrow_mut() = BTable::build(self.sf, 2.0 * need);
        }
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let mut gmax = 0.0f64;
        let mags: Vec<f64> = self
            .qpoints
            .iter()
            .map(|q| {
                let g = q.grad(u);
                let m = (g[0] * g[0] + g[1] * g[1]).sqrt();
                gmax = gmax.max(m);
                m
            })
            .collect();
        self.ensure_table(gmax);
        let table = self.btable.borrow();
        let mut j = 0.0;
        for (q, m) in self.qpoints.iter().zip(&mags) {
            j += q.w * table.eval(*m);
        }
        for row in self.penalty {
            let v: f64 = (0..4).map(|k| row.c[k] * u[row.node[k] as usize]).sum();
            j += 0.5 * row.w * v * v;
        }
        for (k, &l) in self.load.iter().enumerate() {
            j -= l * u[k];
        }
        j
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for q in self.qpoints {
            let gq = q.grad(u);
            let m = (gq[0] * gq[0] + gq[1] * gq[1]).sqrt();
            if m == 0.0 {
                continue;
            }
            let a = self.sf.a(m);
            for k in 0..4 {
                let node = q.node[k] as usize;
                if self.unknown[node] {
                    g[node] += q.w * a * (gq[0] * q.cx[k] + gq[1] * q.cy[k]);
                }
            }
        }
        for row in self.penalty {
            let v: f64 = (0..4).map(|k| row.c[k] * u[row.node[k] as usize]).sum();
            for k in 0..4 {
                let node = row.node[k] as usize;
                if self.unknown[node] {
                    g[node] += row.w * v * row.c[k];
                }
            }
        }
        for (k, &l) in self.load.iter().enumerate() {
            if self.unknown[k] {
                g[k] -= l;
            }
        }
        if self.neumann {
            self.project(&mut g);
        }
        g
    }

    /// Per-point Hessian coefficients (w·a, w·a′/|g|, g) at the current u.
    fn hessian_coeffs(&self, u: &[f64]) -> Vec<(f64, f64, [f64; 2])> {
        self.qpoints
            .iter()
            .map(|q| {
                let g = q.grad(u);
                let m = (g[0] * g[0] + g[1] * g[1]).sqrt();
                if m < 1e-14 {
                    // a′(t)/t stays bounded for the regularized family,
                    // and the rank-one term vanishes with g.
                    (q.w * self.sf.a(m.max(1e-14)), 0.0, g)
                } else {
                    (q.w * self.sf.a(m), q.w * self.sf.da(m) / m, g)
                }
            })
            .collect()
    }

    fn apply_hessian(&self, coeffs: &[(f64, f64, [f64; 2])], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (q, &(ca, cb, g)) in self.qpoints.iter().zip(coeffs) {
            let mut dx = 0.0;
            let mut dy = 0.0;
            for k in 0..4 {
                let val = v[q.node[k] as usize];
                dx += q.cx[k] * val;
                dy += q.cy[k] * val;
            }
            let gd = g[0] * dx + g[1] * dy;
            for k in 0..4 {
                let node = q.node[k] as usize;
                if self.unknown[node] {
                    out[node] += ca * (dx * q.cx[k] + dy * q.cy[k])
                        + cb * gd * (g[0] * q.cx[k] + g[1] * q.cy[k]);
                }
            }
        }
        for row in self.penalty {
            let val: f64 = (0..4).map(|k| row.c[k] * v[row.node[k] as usize]).sum();
            for k in 0..4 {
                let node = row.node[k] as usize;
                if self.unknown[node] {
                    out[node] += row.w * val * row.c[k];
                }
            }
        }
        if self.neumann {
            self.project(out);
        }
    }

    fn hessian_diag(&self, coeffs: &[(f64, f64, [f64; 2])]) -> Vec<f64> {
        let mut d = vec![0.0; self.load.len()];
        for (q, &(ca, cb, g)) in self.qpoints.iter().zip(coeffs) {
            for k in 0..4 {
                let node = q.node[k] as usize;
                if self.unknown[node] {
                    let gk = g[0] * q.cx[k] + g[1] * q.cy[k];
                    d[node] += ca * (q.cx[k] * q.cx[k] + q.cy[k] * q.cy[k]) + cb * gk * gk;
                }
            }
        }
        for row in self.penalty {
            for k in 0..4 {
                let node = row.node[k] as usize;
                if self.unknown[node] {
                    d[node] += row.w * row.c[k] * row.c[k];
                }
            }
        }
        for (k, v) in d.iter_mut().enumerate() {
            if !self.unknown[k] || *v <= 0.0 {
                *v = 1.0;
            }
        }
        d
    }

    /// Remove the weighted mean over unknowns (the Neumann gauge).
    fn project(&self, v: &mut [f64]) {
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            if self.unknown[k] {
                num += v[k] * w;
                den += w;
            }
        }
        let mean = num / den;
        for (k, val) in v.iter_mut().enumerate() {
            if self.unknown[k] {
                *val -= mean;
            }
        }
    }
}

fn flux_at(sf: &StructureFunction, g: [f64; 2]) -> [f64; 2] {
    let v = sf.flux_vec(&g);
    [v[0], v[1]]
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(
    stage: &Stage,
    coeffs: &[(f64, f64, [f64; 2])],
    b: &[f64],
    opts: &LinearOptions,
) -> Result<Vec<f64>, SolveError> {
    let n = b.len();
    let diag = stage.hessian_diag(coeffs);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if stage.neumann {
        stage.project(&mut r);
    }
    let bnorm = dot(&r, &r).sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut hp = vec![0.0; n];
    for _ in 0..opts.max_iter {
        stage.apply_hessian(coeffs, &p, &mut hp);
        let php = dot(&p, &hp);
        if php <= 0.0 {
            if dot(&x, b) > 0.0 {
                return Ok(x);
            }
            return Err(SolveError::LinearSolveFailure { residual: dot(&r, &r).sqrt() / bnorm });
        }
        let alpha = rz / php;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * hp[k];
        }
        if dot(&r, &r).sqrt() <= opts.rel_tol * bnorm {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    // CG iterates from x = 0 stay descent directions, so a truncated
    // solve is still usable by the damped Newton outer loop.
    Ok(x)
}

fn newton_stage(
    stage: &Stage,
    u: &mut [f64],
    epsilon: Option<f64>,
    newton: &NewtonOptions,
    linear: &LinearOptions,
) -> Result<StageReport, SolveError> {
    let mut energy = stage.energy(u);
    let mut history = vec![energy];
    for it in 0..newton.max_iter {
        let g = stage.gradient(u);
        let gn = inf_norm(&g);
        if gn <= newton.grad_tol {
            return Ok(StageReport {
                epsilon,
                newton_iterations: it,
                grad_norm: gn,
                energy_history: history,
                energy,
            });
        }
        let coeffs = stage.hessian_coeffs(u);
        let minus_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let delta = pcg(stage, &coeffs, &minus_g, linear)?;
        let slope = dot(&g, &delta);
        let noise = 1e-14 * (1.0 + energy.abs());
        let mut step = 1.0;
        let trial_energy = loop {
            let trial: Vec<f64> =
                u.iter().zip(&delta).map(|(ui, di)| ui + step * di).collect();
            let je = stage.energy(&trial);
            if je <= energy + 1e-4 * step * slope + noise {
                u.copy_from_slice(&trial);
                break je;
            }
            step *= newton.backtrack;
            if step < newton.min_step {
                return Err(SolveError::NewtonStall { grad_norm: gn });
            }
        };
        energy = trial_energy;
        history.push(energy);
        if stage.neumann {
            stage.project(u);
            energy = stage.energy(u);
        }
    }
    let gn = inf_norm(&stage.gradient(u));
    if gn <= newton.grad_tol {
        Ok(StageReport {
            epsilon,
            newton_iterations: newton.max_iter,
            grad_norm: gn,
            energy_history: history,
            energy,
        })
    } else {
        Err(SolveError::NewtonStall { grad_norm: gn })
    }
}

fn solve(
    sf: &StructureFunction,
    domain: &Arc<GridDomain>,
    f: &ScalarField,
    opts: &SolveOptions,
    bc: BoundaryCondition,
) -> Result<(ScalarField, SolveReport), SolveError> {
    opts.validate()?;
    if !Arc::ptr_eq(&f.domain, domain) {
        return Err(SolveError::DomainMismatch);
    }
    let neumann = bc == BoundaryCondition::Neumann;
    let n = domain.node_count();
    let curved = matches!(domain.shape(), Shape::Disk { .. } | Shape::Annulus { .. });
    let (qpoints, weights) = build_quadrature(domain, curved);
    let penalty = if curved && !neumann {
        build_penalty(domain, 200.0 * (sf.a(1.0).abs() + 1.0))
    } else {
        Vec::new()
    };
    let mut unknown = vec![false; n];
    if curved {
        // On curved shapes every node carrying quadrature weight is a
        // degree of freedom; Dirichlet data enters through the boundary
        // penalty instead of nodal pinning, which would put the zero set
        // on a staircase, not on the circle.
        for (k, w) in weights.iter().enumerate() {
            unknown[k] = *w > 0.0;
        }
        for row in &penalty {
            for node in row.node {
                unknown[node as usize] = true;
            }
        }
    } else {
        for (i, j) in domain.in_domain_nodes() {
            let k = domain.idx(i, j);
            // Nodes touching no full cell carry no energy and stay pinned.
            unknown[k] = weights[k] > 0.0
                && (neumann || domain.class(i, j) == NodeClass::Interior);
        }
    }

    let mut fvals = f.values().to_vec();
    if neumann {
        let mass: f64 = fvals.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let l1: f64 = fvals.iter().zip(&weights).map(|(v, w)| v.abs() * w).sum();
        if mass.abs() > 1e-8 * l1.max(1e-300) {
            return Err(SolveError::IncompatibleData { mean: mass });
        }
        let total: f64 = weights.iter().sum();
        let mean = mass / total;
        for (v, w) in fvals.iter_mut().zip(&weights) {
            if *w > 0.0 {
                *v -= mean;
            }
        }
    }
    let load: Vec<f64> = fvals.iter().zip(&weights).map(|(v, w)| v * w).collect();

    let mut u = vec![0.0; n];
    let mut stages = Vec::new();

    fn make_stage<'a>(
        sf_stage: &'a StructureFunction,
        qpoints: &'a [QuadPoint],
        penalty: &'a [PenaltyRow],
        load: &'a [f64],
        unknown: &'a [bool],
        weights: &'a [f64],
        neumann: bool,
    ) -> Stage<'a> {
        Stage {
            sf: sf_stage,
            qpoints,
            penalty,
            load,
            unknown,
            weights,
            neumann,
            btable: RefCell::new(BTable::build(sf_stage, 1.0)),
        }
    }

    // Newton start: one stage with the constant nonlinearity a(1), which
    // the quadratic energy solves in a single step.
    let poisson = StructureFunction::constant(sf.a(1.0))?;
    let st = make_stage(&poisson, &qpoints, &penalty, &load, &unknown, &weights, neumann);
    newton_stage(&st, &mut u, None, &opts.newton, &opts.linear)?;
    for eps in &opts.epsilon_schedule {
        let sfe = sf.regularize(*eps)?;
        let st = make_stage(&sfe, &qpoints, &penalty, &load, &unknown, &weights, neumann);
        stages.push(newton_stage(&st, &mut u, Some(*eps), &opts.newton, &opts.linear)?);
    }
    if opts.final_raw {
        let st = make_stage(sf, &qpoints, &penalty, &load, &unknown, &weights, neumann);
        stages.push(newton_stage(&st, &mut u, None, &opts.newton, &opts.linear)?);
    }

    let ufield = ScalarField::from_values(domain, u).expect("sized above");
    let grad = grid::gradient(&ufield);
    let mut flux = VectorField::zeros(domain);
    for (i, j) in domain.in_domain_nodes() {
        flux.set(i, j, flux_at(sf, grad.get(i, j)));
    }
    let report = SolveReport {
        bc,
        residual_l2: crate::estimates::residual_l2(&flux, f),
        energy: stages.last().map(|s| s.energy).unwrap_or(0.0),
        stages,
    };
    Ok((ufield, report))
}

pub fn solve_dirichlet(
    sf: &StructureFunction,
    domain: &Arc<GridDomain>,
    f: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveReport), SolveError> {
    solve(sf, domain, f, opts, BoundaryCondition::Dirichlet)
}

pub fn solve_neumann(
    sf: &StructureFunction,
    domain: &Arc<GridDomain>,
    f: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveReport), SolveError> {
    solve(sf, domain, f, opts, BoundaryCondition::Neumann)
}

#[derive(Debug)]
pub struct ApproxStep {
    pub sigma: f64,
    pub f: ScalarField,
    pub u: ScalarField,
    pub flux: VectorField,
    /// Sup-node gap |u_k − u_{k_max}|.
    pub u_gap: f64,
    /// Sup-node flux gap against the last step.
    pub flux_gap: f64,
    /// ‖V_k‖_{L¹} / ‖f_k‖_{L¹}.
    pub ratio_l1: f64,
}

/// Discrete Gaussian mollification with width σ, renormalized over the
/// in-domain nodes so constants are preserved.
pub fn mollify(f: &ScalarField, sigma: f64) -> ScalarField {
    let dom = &f.domain;
    let nodes: Vec<(usize, usize, f64, f64, f64)> = dom
        .in_domain_nodes()
        .map(|(i, j)| (i, j, dom.x(i), dom.y(j), dom.weight(i, j)))
        .collect();
    let cut = 4.0 * sigma;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = ScalarField::zeros(dom);
    for &(i, j, x, y, _) in &nodes {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(ii, jj, xx, yy, ww) in &nodes {
            let dx = xx - x;
            let dy = yy - y;
            if dx.abs() > cut || dy.abs() > cut {
                continue;
            }
            let k = (-(dx * dx + dy * dy) * inv2s2).exp() * ww;
            num += k * f.get(ii, jj);
            den += k;
        }
        out.set(i, j, num / den);
    }
    out
}

/// Solves along a sequence of mollified loads f_k with σ_k = 2^{-k}·diam,
/// mirroring the approximation defining generalized solutions.
pub fn approximation_sequence(
    sf: &StructureFunction,
    domain: &Arc<GridDomain>,
    f: &ScalarField,
    bc: BoundaryCondition,
    k_max: usize,
    opts: &SolveOptions,
) -> Result<Vec<ApproxStep>, SolveError> {
    assert!(k_max >= 1);
    let diam = domain.diameter();
    let mut steps = Vec::new();
    for k in 1..=k_max {
        let sigma = diam * 0.5f64.powi(k as i32);
        let mut fk = mollify(f, sigma);
        if bc == BoundaryCondition::Neumann {
            let mut mass = 0.0;
            let mut total = 0.0;
            for (i, j) in domain.in_domain_nodes() {
                mass += fk.get(i, j) * domain.weight(i, j);
                total += domain.weight(i, j);
            }
            let mean = mass / total;
            for (i, j) in domain.in_domain_nodes() {
                let v = fk.get(i, j) - mean;
                fk.set(i, j, v);
            }
        }
        let (u, _) = solve(sf, domain, &fk, opts, bc)?;
        let grad = grid::gradient(&u);
        let mut flux = VectorField::zeros(domain);
        for (i, j) in domain.in_domain_nodes() {
            flux.set(i, j, flux_at(sf, grad.get(i, j)));
        }
        let ratio_l1 = grid::norm_l1_vec(&flux) / grid::norm_l1(&fk).max(1e-300);
        steps.push(ApproxStep { sigma, f: fk, u, flux, u_gap: 0.0, flux_gap: 0.0, ratio_l1 });
    }
    let last_u = steps.last().unwrap().u.clone();
    let last_flux = steps.last().unwrap().flux.clone();
    for step in steps.iter_mut() {
        let mut ug = 0.0f64;
        let mut fg = 0.0f64;
        for (i, j) in domain.in_domain_nodes() {
            ug = ug.max((step.u.get(i, j) - last_u.get(i, j)).abs());
            let a = step.flux.get(i, j);
            let b = last_flux.get(i, j);
            fg = fg.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
        step.u_gap = ug;
        step.flux_gap = fg;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{norm_l2, GridDomain, ScalarField};
    use std::f64::consts::PI;

    fn max_err(u: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let dom = &u.domain;
        let mut worst = 0.0f64;
        for (i, j) in dom.in_domain_nodes() {
            worst = worst.max((u.get(i, j) - exact(dom.x(i), dom.y(j))).abs());
        }
        worst
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let dom = GridDomain::unit_square(1.0 / 16.0).unwrap();
        let f = ScalarField::zeros(&dom);
        for p in [1.5, 3.0] {
            let sf = StructureFunction::power_law(p).unwrap();
            let (u, rep) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
            assert!(max_err(&u, |_, _| 0.0) <= 1e-10);
            assert!(rep.stages.iter().all(|s| s.grad_norm <= 1e-9));
            let (un, _) = solve_neumann(&sf, &dom, &f, &SolveOptions::default()).unwrap();
            assert!(max_err(&un, |_, _| 0.0) <= 1e-10);
        }
    }

    #[test]
    fn dirichlet_manufactured_laplace() {
        let sf = StructureFunction::constant(1.0).unwrap();
        let errs: Vec<f64> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
            .iter()
            .map(|&h| {
                let dom = GridDomain::unit_square(h).unwrap();
                let f = ScalarField::from_fn(&dom, |x, y| {
                    2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
                });
                let (u, rep) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
                assert!(rep.residual_l2 < 1.0);
                max_err(&u, |x, y| (PI * x).sin() * (PI * y).sin())
            })
            .collect();
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!(s1 >= 1.8 && s2 >= 1.8, "slopes {s1}, {s2} from {errs:?}");
    }

    #[test]
    fn residual_decays_under_refinement() {
        let sf = StructureFunction::power_law(3.0).unwrap();
        let res: Vec<f64> = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]
            .iter()
            .map(|&h| {
                let dom = GridDomain::unit_square(h).unwrap();
                let f = ScalarField::from_fn(&dom, |x, y| {
                    (PI * x).sin() * (PI * y).sin()
                });
                let (_, rep) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
                rep.residual_l2
            })
            .collect();
        assert!(res[1] / res[0] <= 0.6 && res[2] / res[1] <= 0.6, "residuals {res:?}");
    }

    #[test]
    fn disk_flux_p_independent() {
        // Radial reduction of f ≡ 1: a(|u′|)|u′| = r/2, so V = −x/2.
        let dom = GridDomain::disk(1.0, 1.0 / 32.0).unwrap();
        let f = ScalarField::from_fn(&dom, |_, _| 1.0);
        let mut fluxes = Vec::new();
        for p in [1.5, 4.5] {
            let sf = StructureFunction::power_law(p).unwrap();
            let (u, _) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
            let grad = grid::gradient(&u);
            let mut worst = 0.0f64;
            let mut flux = VectorField::zeros(&dom);
            for (i, j) in dom.in_domain_nodes() {
                let v = flux_at(&sf, grad.get(i, j));
                flux.set(i, j, v);
                let ex = [-dom.x(i) / 2.0, -dom.y(j) / 2.0];
                worst = worst.max(((v[0] - ex[0]).powi(2) + (v[1] - ex[1]).powi(2)).sqrt());
            }
            assert!(worst <= 0.08, "p={p}: flux error {worst}");
            fluxes.push(flux);
        }
        let mut gap = 0.0f64;
        for (i, j) in dom.in_domain_nodes() {
            let a = fluxes[0].get(i, j);
            let b = fluxes[1].get(i, j);
            gap = gap.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
        assert!(gap <= 0.15, "pairwise flux gap {gap}");
    }

    #[test]
    fn neumann_manufactured() {
        let sf = StructureFunction::constant(1.0).unwrap();
        let errs: Vec<f64> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
            .iter()
            .map(|&h| {
                let dom = GridDomain::unit_square(h).unwrap();
                let f = ScalarField::from_fn(&dom, |x, _| (PI * x).cos());
                let (u, rep) = solve_neumann(&sf, &dom, &f, &SolveOptions::default()).unwrap();
                assert_eq!(rep.bc, BoundaryCondition::Neumann);
                // Compare up to the mean-zero gauge of the exact solution.
                let exact = |x: f64, _: f64| (PI * x).cos() / (PI * PI);
                max_err(&u, exact)
            })
            .collect();
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!(s1 >= 1.8 && s2 >= 1.8, "slopes {s1}, {s2} from {errs:?}");
    }

    #[test]
    fn neumann_rejects_incompatible_data() {
        let dom = GridDomain::unit_square(1.0 / 8.0).unwrap();
        let f = ScalarField::from_fn(&dom, |_, _| 1.0);
        let sf = StructureFunction::power_law(2.0).unwrap();
        assert!(matches!(
            solve_neumann(&sf, &dom, &f, &SolveOptions::default()),
            Err(SolveError::IncompatibleData { .. })
        ));
    }

    #[test]
    fn energy_descends_within_stages() {
        let dom = GridDomain::unit_square(1.0 / 16.0).unwrap();
        let f = ScalarField::from_fn(&dom, |x, y| (PI * x).sin() * (PI * y).sin());
        let sf = StructureFunction::power_law(4.5).unwrap();
        let (_, rep) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
        for stage in &rep.stages {
            for w in stage.energy_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "energy rose: {w:?}");
            }
        }
    }

    #[test]
    fn positive_rhs_nonnegative_solution() {
        let dom = GridDomain::disk(1.0, 1.0 / 16.0).unwrap();
        let f = ScalarField::from_fn(&dom, |_, _| 1.0);
        let sf = StructureFunction::power_law(3.0).unwrap();
        let (u, _) = solve_dirichlet(&sf, &dom, &f, &SolveOptions::default()).unwrap();
        for (i, j) in dom.in_domain_nodes() {
            assert!(u.get(i, j) >= -1e-8);
        }
    }

    #[test]
    fn schedule_validation() {
        let dom = GridDomain::unit_square(0.25).unwrap();
        let f = ScalarField::zeros(&dom);
        let sf = StructureFunction::power_law(2.0).unwrap();
        let mut opts = SolveOptions::default();
        opts.epsilon_schedule = vec![1e-2, 1e-1];
        assert!(matches!(
            solve_dirichlet(&sf, &dom, &f, &opts),
            Err(SolveError::InvalidSchedule)
        ));
        let opts = SolveOptions::with_target_epsilon(1e-3);
        assert_eq!(opts.epsilon_schedule, vec![1e-1, 1e-2, 1e-3]);
        assert!(!opts.final_raw);
        let opts = SolveOptions::with_target_epsilon(0.0);
        assert!(opts.final_raw);
    }

    #[test]
    fn mollifier_near_identity_for_small_sigma() {
        let dom = GridDomain::unit_square(1.0 / 16.0).unwrap();
        let f = ScalarField::from_fn(&dom, |x, y| x + 2.0 * y);
        let g = mollify(&f, 1e-3);
        let mut worst = 0.0f64;
        for (i, j) in dom.in_domain_nodes() {
            worst = worst.max((g.get(i, j) - f.get(i, j)).abs());
        }
        assert!(worst <= 1e-12, "mollifier gap {worst}");
        let c = mollify(&ScalarField::from_fn(&dom, |_, _| 3.5), 0.2);
        for (i, j) in dom.in_domain_nodes() {
            assert!((c.get(i, j) - 3.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn approximation_sequence_converges() {
        let dom = GridDomain::unit_square(1.0 / 16.0).unwrap();
        let sf = StructureFunction::power_law(3.0).unwrap();
        // Rough right-hand side: indicator of a half square.
        let f = ScalarField::from_fn(&dom, |x, _| if x < 0.5 { 1.0 } else { 0.0 });
        let steps = approximation_sequence(
            &sf,
            &dom,
            &f,
            BoundaryCondition::Dirichlet,
            5,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(steps.len(), 5);
        let gaps: Vec<f64> = steps.iter().map(|s| s.flux_gap).collect();
        // Eventual monotonicity of the flux gaps.
        assert!(gaps[gaps.len() - 2] <= gaps[1] + 1e-12, "gaps {gaps:?}");
        let ratios: Vec<f64> = steps.iter().map(|s| s.ratio_l1).collect();
        let max = ratios.iter().cloned().fold(0.0f64, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min <= 3.0, "ratios {ratios:?}");

        // A smooth load is reproduced once σ_k is below the mesh size.
        let smooth = ScalarField::from_fn(&dom, |x, y| (PI * x).sin() * y);
        let steps = approximation_sequence(
            &sf,
            &dom,
            &smooth,
            BoundaryCondition::Dirichlet,
            7,
            &SolveOptions::default(),
        )
        .unwrap();
        let last_f = &steps.last().unwrap().f;
        let diff = ScalarField::from_fn(&dom, |_, _| 0.0);
        let mut worst = 0.0f64;
        for (i, j) in dom.in_domain_nodes() {
            worst = worst.max((last_f.get(i, j) - smooth.get(i, j)).abs());
        }
        drop(diff);
        assert!(worst <= 0.05 * norm_l2(&smooth), "mollifier residue {worst}");
    }
}


