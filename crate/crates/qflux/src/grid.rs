//! 2D grid domains, nodal fields, and discrete calculus.
//!
//! Domains are Cartesian grids with cut-cell classification: a node is
//! in-domain iff its center lies inside the analytic shape, Interior iff
//! all four axis neighbors are in-domain, Boundary otherwise. Gradients
//! use centered differences at interior nodes and one-sided second-order
//! stencils at boundary nodes; exterior values are never read. Norms use
//! midpoint quadrature with half weights on boundary nodes.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("spacing {h} does not tile extent {extent}")]
    BadSpacing { h: f64, extent: f64 },
    #[error("domain has no in-domain nodes")]
    EmptyDomain,
    #[error("fields live on different domains")]
    DomainMismatch,
    #[error("mask bitmap size {got} does not match {nx}x{ny}")]
    BadMask { got: usize, nx: usize, ny: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

#[derive(Debug, Clone)]
pub enum Shape {
    Rectangle { x0: f64, y0: f64, w: f64, d: f64 },
    Disk { r: f64 },
    Annulus { r0: f64, r1: f64 },
    Mask,
}

#[derive(Debug)]
pub struct GridDomain {
    shape: Shape,
    h: f64,
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    class: Vec<NodeClass>,
    convex: bool,
}

fn steps(extent: f64, h: f64) -> Result<usize, GridError> {
    let n = (extent / h).round();
    if n < 1.0 || (extent / h - n).abs() > 1e-6 {
        return Err(GridError::BadSpacing { h, extent });
    }
    Ok(n as usize)
}

impl GridDomain {
    pub fn rectangle(w: f64, d: f64, h: f64) -> Result<Arc<Self>, GridError> {
        Self::rectangle_at(0.0, 0.0, w, d, h)
    }

    pub fn rectangle_at(x0: f64, y0: f64, w: f64, d: f64, h: f64) -> Result<Arc<Self>, GridError> {
        let nx = steps(w, h)? + 1;
        let ny = steps(d, h)? + 1;
        let mut dom = Self {
            shape: Shape::Rectangle { x0, y0, w, d },
            h,
            nx,
            ny,
            x0,
            y0,
            class: vec![NodeClass::Interior; nx * ny],
            convex: true,
        };
        dom.classify(|_, _| true)?;
        Ok(Arc::new(dom))
    }

    pub fn unit_square(h: f64) -> Result<Arc<Self>, GridError> {
        Self::rectangle(1.0, 1.0, h)
    }

    pub fn disk(r: f64, h: f64) -> Result<Arc<Self>, GridError> {
        let n = steps(2.0 * r, h)? + 1;
        let mut dom = Self {
            shape: Shape::Disk { r },
            h,
            nx: n,
            ny: n,
            x0: -r,
            y0: -r,
            class: vec![NodeClass::Exterior; n * n],
            convex: true,
        };
        let r2 = r * r * (1.0 + 1e-12);
        dom.classify(|x, y| x * x + y * y <= r2)?;
        Ok(Arc::new(dom))
    }

    pub fn annulus(r0: f64, r1: f64, h: f64) -> Result<Arc<Self>, GridError> {
        assert!(0.0 < r0 && r0 < r1, "need 0 < r0 < r1");
        let n = steps(2.0 * r1, h)? + 1;
        let mut dom = Self {
            shape: Shape::Annulus { r0, r1 },
            h,
            nx: n,
            ny: n,
            x0: -r1,
            y0: -r1,
            class: vec![NodeClass::Exterior; n * n],
            convex: false,
        };
        let lo = r0 * r0 * (1.0 - 1e-12);
        let hi = r1 * r1 * (1.0 + 1e-12);
        dom.classify(|x, y| {
            let q = x * x + y * y;
            lo <= q && q <= hi
        })?;
        Ok(Arc::new(dom))
    }

    pub fn from_mask(
        nx: usize,
        ny: usize,
        h: f64,
        bitmap: &[bool],
        convex: bool,
    ) -> Result<Arc<Self>, GridError> {
        if bitmap.len() != nx * ny {
            return Err(GridError::BadMask { got: bitmap.len(), nx, ny });
        }
        let mut dom = Self {
            shape: Shape::Mask,
            h,
            nx,
            ny,
            x0: 0.0,
            y0: 0.0,
            class: vec![NodeClass::Exterior; nx * ny],
            convex,
        };
        let nxc = nx;
        dom.classify(move |x, y| {
            let i = (x / h).round() as usize;
            let j = (y / h).round() as usize;
            bitmap[j * nxc + i]
        })?;
        Ok(Arc::new(dom))
    }

    fn classify(&mut self, inside: impl Fn(f64, f64) -> bool) -> Result<(), GridError> {
        let (nx, ny) = (self.nx, self.ny);
        let mut indomain = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                indomain[j * nx + i] = inside(self.x(i), self.y(j));
            }
        }
        let neighbor = |i: usize, j: usize, di: isize, dj: isize| -> bool {
            let ii = i as isize + di;
            let jj = j as isize + dj;
            ii >= 0
                && jj >= 0
                && (ii as usize) < nx
                && (jj as usize) < ny
                && indomain[jj as usize * nx + ii as usize]
        };
        let mut any = false;
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                self.class[k] = if !indomain[k] {
                    NodeClass::Exterior
                } else {
                    any = true;
                    let interior = neighbor(i, j, 1, 0)
                        && neighbor(i, j, -1, 0)
                        && neighbor(i, j, 0, 1)
                        && neighbor(i, j, 0, -1);
                    if interior { NodeClass::Interior } else { NodeClass::Boundary }
                };
            }
        }
        if !any {
            return Err(GridError::EmptyDomain);
        }
        Ok(())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn convex(&self) -> bool {
        self.convex
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.h
    }

    pub fn class(&self, i: usize, j: usize) -> NodeClass {
        self.class[self.idx(i, j)]
    }

    /// Class with out-of-range indices treated as Exterior, for stencils.
    pub fn class_signed(&self, i: isize, j: isize) -> NodeClass {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            NodeClass::Exterior
        } else {
            self.class[j as usize * self.nx + i as usize]
        }
    }

    pub fn in_domain(&self, i: isize, j: isize) -> bool {
        self.class_signed(i, j) != NodeClass::Exterior
    }

    /// Quadrature weight: h² interior, h²/2 boundary, 0 exterior.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match self.class(i, j) {
            NodeClass::Interior => self.h * self.h,
            NodeClass::Boundary => 0.5 * self.h * self.h,
            NodeClass::Exterior => 0.0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn in_domain_count(&self) -> usize {
        self.class.iter().filter(|c| **c != NodeClass::Exterior).count()
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Rectangle { w, d, .. } => (w * w + d * d).sqrt(),
            Shape::Disk { r } => 2.0 * r,
            Shape::Annulus { r1, .. } => 2.0 * r1,
            Shape::Mask => {
                let w = (self.nx - 1) as f64 * self.h;
                let d = (self.ny - 1) as f64 * self.h;
                (w * w + d * d).sqrt()
            }
        }
    }

    /// Outward unit normal at a boundary node; exact for analytic shapes,
    /// estimated from exterior neighbors for masks.
    pub fn normal(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        if self.class(i, j) != NodeClass::Boundary {
            return None;
        }
        let (x, y) = (self.x(i), self.y(j));
        let v = match self.shape {
            Shape::Rectangle { x0, y0, w, d } => {
                let mut n = [0.0, 0.0];
                if (x - x0).abs() < 0.5 * self.h {
                    n[0] -= 1.0;
                }
                if (x - (x0 + w)).abs() < 0.5 * self.h {
                    n[0] += 1.0;
                }
                if (y - y0).abs() < 0.5 * self.h {
                    n[1] -= 1.0;
                }
                if (y - (y0 + d)).abs() < 0.5 * self.h {
                    n[1] += 1.0;
                }
                n
            }
            Shape::Disk { .. } => [x, y],
            Shape::Annulus { r0, r1 } => {
                let rho = (x * x + y * y).sqrt();
                if (rho - r0).abs() < (rho - r1).abs() {
                    [-x, -y]
                } else {
                    [x, y]
                }
            }
            Shape::Mask => {
                let mut n = [0.0, 0.0];
                for dj in -1..=1isize {
                    for di in -1..=1isize {
                        if (di, dj) != (0, 0)
                            && self.class_signed(i as isize + di, j as isize + dj)
                                == NodeClass::Exterior
                        {
                            let len = ((di * di + dj * dj) as f64).sqrt();
                            n[0] += di as f64 / len;
                            n[1] += dj as f64 / len;
                        }
                    }
                }
                n
            }
        };
        let len = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if len < 1e-12 {
            return None;
        }
        Some([v[0] / len, v[1] / len])
    }

    /// Analytic point membership, independent of the node classification.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        match self.shape {
            Shape::Rectangle { x0, y0, w, d } => {
                x >= x0 - 1e-12 && x <= x0 + w + 1e-12 && y >= y0 - 1e-12 && y <= y0 + d + 1e-12
            }
            Shape::Disk { r } => x * x + y * y <= r * r * (1.0 + 1e-12),
            Shape::Annulus { r0, r1 } => {
                let q = x * x + y * y;
                q >= r0 * r0 * (1.0 - 1e-12) && q <= r1 * r1 * (1.0 + 1e-12)
            }
            Shape::Mask => {
                let i = ((x - self.x0) / self.h).round() as isize;
                let j = ((y - self.y0) / self.h).round() as isize;
                self.class_signed(i, j) != NodeClass::Exterior
            }
        }
    }

    /// Arclength quadrature of the curved part of the boundary, about
    /// `per_h` samples per grid spacing; empty when the boundary is
    /// resolved exactly by grid nodes (rectangles, masks).
    pub fn boundary_quadrature(&self, per_h: usize) -> Vec<[f64; 3]> {
        let circle = |r: f64, out: &mut Vec<[f64; 3]>| {
            let k = ((std::f64::consts::TAU * r / self.h).ceil() as usize * per_h).max(8);
            let ds = std::f64::consts::TAU * r / k as f64;
            for m in 0..k {
                let t = (m as f64 + 0.5) / k as f64 * std::f64::consts::TAU;
                out.push([r * t.cos(), r * t.sin(), ds]);
            }
        };
        let mut pts = Vec::new();
        match self.shape {
            Shape::Rectangle { .. } | Shape::Mask => {}
            Shape::Disk { r } => circle(r, &mut pts),
            Shape::Annulus { r0, r1 } => {
                circle(r0, &mut pts);
                circle(r1, &mut pts);
            }
        }
        pts
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nx = self.nx;
        (0..self.nx * self.ny).map(move |k| (k % nx, k / nx))
    }

    pub fn in_domain_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes().filter(|&(i, j)| self.class(i, j) != NodeClass::Exterior)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes().filter(|&(i, j)| self.class(i, j) == NodeClass::Interior)
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes().filter(|&(i, j)| self.class(i, j) == NodeClass::Boundary)
    }
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    pub domain: Arc<GridDomain>,
    v: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(domain: &Arc<GridDomain>) -> Self {
        Self { domain: domain.clone(), v: vec![0.0; domain.node_count()] }
    }

    pub fn from_fn(domain: &Arc<GridDomain>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut s = Self::zeros(domain);
        for (i, j) in domain.in_domain_nodes() {
            s.v[domain.idx(i, j)] = f(domain.x(i), domain.y(j));
        }
        s
    }

    pub fn from_values(domain: &Arc<GridDomain>, v: Vec<f64>) -> Result<Self, GridError> {
        if v.len() != domain.node_count() {
            return Err(GridError::DomainMismatch);
        }
        Ok(Self { domain: domain.clone(), v })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.v[self.domain.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, val: f64) {
        let k = self.domain.idx(i, j);
        self.v[k] = val;
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }
}

#[derive(Debug, Clone)]
pub struct VectorField {
    pub domain: Arc<GridDomain>,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl VectorField {
    pub fn zeros(domain: &Arc<GridDomain>) -> Self {
        let n = domain.node_count();
        Self { domain: domain.clone(), vx: vec![0.0; n], vy: vec![0.0; n] }
    }

    pub fn from_fn(domain: &Arc<GridDomain>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut v = Self::zeros(domain);
        for (i, j) in domain.in_domain_nodes() {
            let k = domain.idx(i, j);
            let val = f(domain.x(i), domain.y(j));
            v.vx[k] = val[0];
            v.vy[k] = val[1];
        }
        v
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        let k = self.domain.idx(i, j);
        [self.vx[k], self.vy[k]]
    }

    pub fn set(&mut self, i: usize, j: usize, val: [f64; 2]) {
        let k = self.domain.idx(i, j);
        self.vx[k] = val[0];
        self.vy[k] = val[1];
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            domain: self.domain.clone(),
            v: if c == 0 { self.vx.clone() } else { self.vy.clone() },
        }
    }
}

/// One-axis first derivative at node (i, j): centered when both neighbors
/// are in-domain, else one-sided second order, else one-sided first order,
/// else 0. Never reads exterior values.
fn d_axis(dom: &GridDomain, v: &[f64], i: usize, j: usize, axis: usize) -> f64 {
    let (di, dj) = if axis == 0 { (1isize, 0isize) } else { (0, 1) };
    let h = dom.spacing();
    let at = |step: isize| -> f64 {
        let ii = (i as isize + di * step) as usize;
        let jj = (j as isize + dj * step) as usize;
        v[dom.idx(ii, jj)]
    };
    let ok = |step: isize| dom.in_domain(i as isize + di * step, j as isize + dj * step);
    if ok(1) && ok(-1) {
        (at(1) - at(-1)) / (2.0 * h)
    } else if ok(1) && ok(2) {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if ok(-1) && ok(-2) {
        (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
    } else if ok(1) {
        (at(1) - at(0)) / h
    } else if ok(-1) {
        (at(0) - at(-1)) / h
    } else {
        0.0
    }
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let dom = &u.domain;
    let mut g = VectorField::zeros(dom);
    for (i, j) in dom.in_domain_nodes() {
        let k = dom.idx(i, j);
        g.vx[k] = d_axis(dom, &u.v, i, j, 0);
        g.vy[k] = d_axis(dom, &u.v, i, j, 1);
    }
    g
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let dom = &v.domain;
    let mut d = ScalarField::zeros(dom);
    for (i, j) in dom.in_domain_nodes() {
        let k = dom.idx(i, j);
        d.v[k] = d_axis(dom, &v.vx, i, j, 0) + d_axis(dom, &v.vy, i, j, 1);
    }
    d
}

pub fn truncate(u: &ScalarField, t: f64) -> ScalarField {
    assert!(t > 0.0, "truncation level must be positive");
    let mut out = u.clone();
    for val in out.v.iter_mut() {
        *val = val.clamp(-t, t);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum Region {
    All,
    Ball { cx: f64, cy: f64, r: f64 },
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::All => true,
            Region::Ball { cx, cy, r } => {
                let dx = x - cx;
                let dy = y - cy;
                dx * dx + dy * dy <= r * r * (1.0 + 1e-12)
            }
        }
    }
}

fn weighted_pow_sum(dom: &GridDomain, region: Region, q: f64, mut f: impl FnMut(usize, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for (i, j) in dom.in_domain_nodes() {
        if region.contains(dom.x(i), dom.y(j)) {
            acc += f(i, j).abs().powf(q) * dom.weight(i, j);
        }
    }
    acc
}

pub fn norm_l1_region(u: &ScalarField, region: Region) -> f64 {
    weighted_pow_sum(&u.domain, region, 1.0, |i, j| u.get(i, j))
}

pub fn norm_l2_region(u: &ScalarField, region: Region) -> f64 {
    weighted_pow_sum(&u.domain, region, 2.0, |i, j| u.get(i, j)).sqrt()
}

pub fn norm_l1(u: &ScalarField) -> f64 {
    norm_l1_region(u, Region::All)
}

pub fn norm_l2(u: &ScalarField) -> f64 {
    norm_l2_region(u, Region::All)
}

fn vec_mag(v: &VectorField, i: usize, j: usize) -> f64 {
    let [a, b] = v.get(i, j);
    (a * a + b * b).sqrt()
}

pub fn norm_l1_vec_region(v: &VectorField, region: Region) -> f64 {
    weighted_pow_sum(&v.domain, region, 1.0, |i, j| vec_mag(v, i, j))
}

pub fn norm_l2_vec_region(v: &VectorField, region: Region) -> f64 {
    weighted_pow_sum(&v.domain, region, 2.0, |i, j| vec_mag(v, i, j)).sqrt()
}

pub fn norm_l1_vec(v: &VectorField) -> f64 {
    norm_l1_vec_region(v, Region::All)
}

pub fn norm_l2_vec(v: &VectorField) -> f64 {
    norm_l2_vec_region(v, Region::All)
}

/// Squared L² norm of the component gradients, interior nodes only. The
/// boundary collar is excluded because one-sided second derivatives at
/// cut cells are noisy; its measure is O(h).
pub fn grad_sq_interior_region(v: &VectorField, region: Region) -> f64 {
    let dom = &v.domain;
    let h2 = dom.spacing() * dom.spacing();
    let mut acc = 0.0;
    for (i, j) in dom.interior_nodes() {
        if region.contains(dom.x(i), dom.y(j)) {
            let gxx = d_axis(dom, &v.vx, i, j, 0);
            let gxy = d_axis(dom, &v.vx, i, j, 1);
            let gyx = d_axis(dom, &v.vy, i, j, 0);
            let gyy = d_axis(dom, &v.vy, i, j, 1);
            acc += (gxx * gxx + gxy * gxy + gyx * gyx + gyy * gyy) * h2;
        }
    }
    acc
}

pub fn norm_grad_l2(v: &VectorField) -> f64 {
    grad_sq_interior_region(v, Region::All).sqrt()
}

pub fn norm_w12_region(v: &VectorField, region: Region) -> f64 {
    let l2 = norm_l2_vec_region(v, region);
    (l2 * l2 + grad_sq_interior_region(v, region)).sqrt()
}

pub fn norm_w12(v: &VectorField) -> f64 {
    norm_w12_region(v, Region::All)
}
