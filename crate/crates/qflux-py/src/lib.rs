//! Python bindings: structure functions, grid domains, the solver, the
//! estimate reports, and the algebraic verifiers.

use std::fmt::Display;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qflux::grid::{self, GridDomain, ScalarField};
use qflux::matrix_lemma::{self, MinBudget};
use qflux::rearrangement::{lorentz_norm, marcinkiewicz_norm, weak_log_norm, WeightedSamples};
use qflux::simplex_forms::{
    newton_chain_check, nonnegativity_sweep, phi_determinant, phi_product, phi_symmetric,
    SimplexPoint,
};
use qflux::solver::{self, BoundaryCondition, SolveOptions};
use qflux::structure::StructureFunction;
use qflux::{estimates, expr};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Coefficient a(t) with its structure indices.
#[pyclass(frozen, name = "Structure")]
struct Structure {
    inner: StructureFunction,
}

#[pymethods]
impl Structure {
    /// a(t) = t^(p-2), the p-Laplace coefficient.
    #[staticmethod]
    fn power_law(p: f64) -> PyResult<Self> {
        Ok(Self { inner: StructureFunction::power_law(p).map_err(value_err)? })
    }

    /// a(t) = c, the linear case.
    #[staticmethod]
    fn constant(c: f64) -> PyResult<Self> {
        Ok(Self { inner: StructureFunction::constant(c).map_err(value_err)? })
    }

    fn a(&self, t: f64) -> f64 {
        self.inner.a(t)
    }

    fn b(&self, t: f64) -> f64 {
        self.inner.b(t)
    }

    fn i_a(&self) -> f64 {
        self.inner.i_a()
    }

    fn s_a(&self) -> f64 {
        self.inner.s_a()
    }

    fn flux_vec(&self, v: Vec<f64>) -> Vec<f64> {
        self.inner.flux_vec(&v)
    }

    /// Clamped family member a_eps with the same index window.
    fn regularize(&self, eps: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.regularize(eps).map_err(value_err)? })
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    fn __repr__(&self) -> String {
        format!("Structure({})", self.inner.descriptor())
    }
}

/// Grid domain on a uniform mesh.
#[pyclass(frozen, name = "Domain")]
struct Domain {
    inner: Arc<GridDomain>,
}

#[pymethods]
impl Domain {
    #[staticmethod]
    fn unit_square(h: f64) -> PyResult<Self> {
        Ok(Self { inner: GridDomain::unit_square(h).map_err(value_err)? })
    }

    #[staticmethod]
    fn rectangle(x0: f64, y0: f64, w: f64, d: f64, h: f64) -> PyResult<Self> {
        Ok(Self { inner: GridDomain::rectangle_at(x0, y0, w, d, h).map_err(value_err)? })
    }

    #[staticmethod]
    fn disk(r: f64, h: f64) -> PyResult<Self> {
        Ok(Self { inner: GridDomain::disk(r, h).map_err(value_err)? })
    }

    #[staticmethod]
    fn annulus(r0: f64, r1: f64, h: f64) -> PyResult<Self> {
        Ok(Self { inner: GridDomain::annulus(r0, r1, h).map_err(value_err)? })
    }

    fn spacing(&self) -> f64 {
        self.inner.spacing()
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn in_domain_count(&self) -> usize {
        self.inner.in_domain_count()
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.inner.contains_point(x, y)
    }
}

/// A solved problem: the nodal solution, its flux, and the certificates.
#[pyclass(frozen)]
struct Solution {
    sf: StructureFunction,
    u: ScalarField,
    f: ScalarField,
    residual_l2: f64,
    energy: f64,
    iterations: usize,
}

#[pymethods]
impl Solution {
    #[getter]
    fn residual_l2(&self) -> f64 {
        self.residual_l2
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.energy
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.iterations
    }

    /// Nodal values as (x, y, u) triples over the in-domain nodes.
    fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let dom = &self.u.domain;
        dom.in_domain_nodes().map(|(i, j)| (dom.x(i), dom.y(j), self.u.get(i, j))).collect()
    }

    /// Flux samples as (x, y, vx, vy) over the in-domain nodes.
    fn flux(&self) -> Vec<(f64, f64, f64, f64)> {
        let v = estimates::flux(&self.sf, &self.u);
        let dom = &self.u.domain;
        dom.in_domain_nodes()
            .map(|(i, j)| {
                let [vx, vy] = v.get(i, j);
                (dom.x(i), dom.y(j), vx, vy)
            })
            .collect()
    }

    /// Two-sided coercivity report as a dict.
    fn global_estimate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = estimates::global_estimate(&self.sf, &self.u, &self.f, 10.0 * self.residual_l2)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("norm_f_l2", r.norm_f_l2)?;
        d.set_item("norm_v_l2", r.norm_v_l2)?;
        d.set_item("norm_grad_v_l2", r.norm_grad_v_l2)?;
        d.set_item("norm_v_w12", r.norm_v_w12)?;
        d.set_item("ratio_lower", r.ratio_lower)?;
        d.set_item("ratio_upper", r.ratio_upper)?;
        d.set_item("residual_l2", r.residual_l2)?;
        d.set_item("lower_certified", r.lower_certified)?;
        d.set_item("h", r.h)?;
        d.set_item("descriptor", r.descriptor)?;
        d.set_item("convex", r.convex)?;
        d.set_item("singular_nodes", r.singular_nodes)?;
        Ok(d)
    }

    /// (lhs, rhs, ratio) of the interior estimate on the ball B_r(cx, cy).
    fn local_estimate(&self, cx: f64, cy: f64, r: f64) -> PyResult<(f64, f64, f64)> {
        estimates::local_estimate(&self.sf, &self.u, &self.f, [cx, cy], r).map_err(value_err)
    }
}

/// Solve -div(a(|grad u|) grad u) = f with f given as a formula in x, y.
#[pyfunction]
#[pyo3(signature = (structure, domain, rhs, bc = "dirichlet", epsilon = 1e-4))]
fn solve(
    structure: &Structure,
    domain: &Domain,
    rhs: &str,
    bc: &str,
    epsilon: f64,
) -> PyResult<Solution> {
    let e = expr::Expr::parse(rhs).map_err(value_err)?;
    let f = ScalarField::from_fn(&domain.inner, |x, y| e.eval(x, y));
    let opts = SolveOptions::with_target_epsilon(epsilon);
    let bc = match bc {
        "dirichlet" => BoundaryCondition::Dirichlet,
        "neumann" => BoundaryCondition::Neumann,
        other => return Err(value_err(format!("unknown boundary condition '{other}'"))),
    };
    let (u, rep) = match bc {
        BoundaryCondition::Dirichlet => {
            solver::solve_dirichlet(&structure.inner, &domain.inner, &f, &opts)
        }
        BoundaryCondition::Neumann => {
            solver::solve_neumann(&structure.inner, &domain.inner, &f, &opts)
        }
    }
    .map_err(value_err)?;
    Ok(Solution {
        sf: structure.inner.clone(),
        u,
        f,
        residual_l2: rep.residual_l2,
        energy: rep.energy,
        iterations: rep.total_iterations(),
    })
}

/// Numeric estimate of the matrix lemma constant C(theta, n).
#[pyfunction]
#[pyo3(signature = (theta, n, seed = 0, starts = 200, iters = 10_000, samples = 1_000_000))]
fn min_constant<'py>(
    py: Python<'py>,
    theta: f64,
    n: usize,
    seed: u64,
    starts: usize,
    iters: usize,
    samples: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let budget = MinBudget { starts, iters, samples };
    let r = matrix_lemma::min_constant(theta, n, budget, seed).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("upper_bound", r.upper_bound)?;
    d.set_item("boundary_theta", r.boundary_theta)?;
    d.set_item("evaluations", r.evaluations)?;
    Ok(d)
}

/// The three evaluations (product, determinant, symmetric-function) of phi.
#[pyfunction]
fn phi(eta: Vec<f64>) -> (f64, f64, f64) {
    (phi_product(&eta), phi_determinant(&eta), phi_symmetric(&eta))
}

/// Newton chain triple (S_{k+1}, c S_k S_1, c S_k) at eta.
#[pyfunction]
fn newton_chain(eta: Vec<f64>, k: usize) -> PyResult<(f64, f64, f64)> {
    let pt = SimplexPoint::new(eta).map_err(value_err)?;
    newton_chain_check(&pt, k).map_err(value_err)
}

/// Randomized nonnegativity sweep of phi over the simplex.
#[pyfunction]
#[pyo3(signature = (n, samples = 100_000, seed = 0))]
fn phi_sweep<'py>(py: Python<'py>, n: usize, samples: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = nonnegativity_sweep(n, samples, seed);
    let d = PyDict::new(py);
    d.set_item("min_phi", r.min_phi)?;
    d.set_item("argmin", r.argmin)?;
    d.set_item("max_identity_gap", r.max_identity_gap)?;
    d.set_item("evaluations", r.evaluations)?;
    Ok(d)
}

fn weighted(pairs: Vec<(f64, f64)>) -> PyResult<WeightedSamples> {
    WeightedSamples::new(pairs).map_err(value_err)
}

/// Marcinkiewicz (weak-L^q) norm of weighted samples.
#[pyfunction]
fn marcinkiewicz(pairs: Vec<(f64, f64)>, q: f64) -> PyResult<f64> {
    marcinkiewicz_norm(&weighted(pairs)?, q).map_err(value_err)
}

/// Weak-log norm sup s log(1 + c/s) psi**(s).
#[pyfunction]
#[pyo3(signature = (pairs, c = None))]
fn weak_log(pairs: Vec<(f64, f64)>, c: Option<f64>) -> PyResult<f64> {
    weak_log_norm(&weighted(pairs)?, c).map_err(value_err)
}

/// Lorentz L^(q, sigma) norm of weighted samples.
#[pyfunction]
fn lorentz(pairs: Vec<(f64, f64)>, q: f64, sigma: f64) -> PyResult<f64> {
    lorentz_norm(&weighted(pairs)?, q, sigma).map_err(value_err)
}

/// Refinement ladder for u = |x1|^beta: bounded flux norms against a
/// diverging discrete Hessian.
#[pyfunction]
fn gallery<'py>(py: Python<'py>, beta: f64, p: f64, hs: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let domains = hs
        .iter()
        .map(|&h| GridDomain::rectangle_at(-0.5, -0.5, 1.0, 1.0, h))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let rep = estimates::gallery_counterexample(beta, p, &domains).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("beta", rep.beta)?;
    d.set_item("p", rep.p)?;
    d.set_item("hess_exponent", rep.hess_exponent)?;
    d.set_item("w22_fails", rep.w22_fails)?;
    let rows: Vec<(f64, f64, f64, f64)> =
        rep.rows.iter().map(|r| (r.h, r.norm_f_l2, r.norm_v_w12, r.norm_hess_l2)).collect();
    d.set_item("rows", rows)?;
    Ok(d)
}

/// Evaluate an expression in x and y, for sanity checks from Python.
#[pyfunction]
fn eval_expr(src: &str, x: f64, y: f64) -> PyResult<f64> {
    Ok(expr::Expr::parse(src).map_err(value_err)?.eval(x, y))
}

/// L2 norm of a grid sampling of an expression on a domain.
#[pyfunction]
fn norm_l2(domain: &Domain, src: &str) -> PyResult<f64> {
    let e = expr::Expr::parse(src).map_err(value_err)?;
    let f = ScalarField::from_fn(&domain.inner, |x, y| e.eval(x, y));
    Ok(grid::norm_l2(&f))
}

#[pymodule]
fn qflux_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Structure>()?;
    m.add_class::<Domain>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(min_constant, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(newton_chain, m)?)?;
    m.add_function(wrap_pyfunction!(phi_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(marcinkiewicz, m)?)?;
    m.add_function(wrap_pyfunction!(weak_log, m)?)?;
    m.add_function(wrap_pyfunction!(lorentz, m)?)?;
    m.add_function(wrap_pyfunction!(gallery, m)?)?;
    m.add_function(wrap_pyfunction!(eval_expr, m)?)?;
    m.add_function(wrap_pyfunction!(norm_l2, m)?)?;
    Ok(())
}
