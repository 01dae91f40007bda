//! The simplex nonnegativity lemma and its proof apparatus.
//!
//! For η in the simplex A = {η_i ≥ 0, Ση_i ≤ 1} the quadratic form with
//! matrix M_ii = (η_i − 1)², M_ij = η_iη_j is positive semidefinite. The
//! module exposes the matrix, its determinant written three equivalent
//! ways (LU, the product expansion φ, and the symmetric-function
//! expansion), elementary symmetric polynomials S_k, the Newton
//! inequality chain, and the sweep machinery used to certify min φ = 0
//! on A with zeros exactly at the vertices e_i.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("invalid simplex point: {0}")]
    InvalidPoint(String),
    #[error("order k = {k} out of range for n = {n}")]
    OrderOutOfRange { k: usize, n: usize },
}

/// A point of the simplex A = {η_i ≥ 0, Ση_i ≤ 1}, n ≥ 2.
#[derive(Debug, Clone)]
pub struct SimplexPoint {
    eta: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(eta: Vec<f64>) -> Result<Self, SimplexError> {
        if eta.len() < 2 {
            return Err(SimplexError::InvalidPoint("need n >= 2 components".into()));
        }
        if eta.iter().any(|&x| !(x >= 0.0)) {
            return Err(SimplexError::InvalidPoint(format!("negative component in {eta:?}")));
        }
        let s: f64 = eta.iter().sum();
        if s > 1.0 + 1e-12 {
            return Err(SimplexError::InvalidPoint(format!("sum {s} exceeds 1")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

/// All elementary symmetric functions S_1..S_n of η.
#[derive(Debug, Clone)]
pub struct SymmetricFunctions {
    pub s: Vec<f64>,
}

impl SymmetricFunctions {
    pub fn of(eta: &[f64]) -> Self {
        Self { s: elementary_symmetric_all(eta) }
    }

    /// S_k with the convention S_0 = 1 and S_k = 0 for k > n.
    pub fn s(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            k if k <= self.s.len() => self.s[k - 1],
            _ => 0.0,
        }
    }
}

/// The matrix of the quadratic form: (η_i − 1)² on the diagonal, η_iη_j
/// off it.
pub fn form_matrix(eta: &[f64]) -> DMatrix<f64> {
    let n = eta.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (eta[i] - 1.0) * (eta[i] - 1.0)
        } else {
            eta[i] * eta[j]
        }
    })
}

/// All S_1..S_n by the coefficient recurrence for Π(1 + η_i x): O(n²)
/// total, exact for rational inputs.
pub fn elementary_symmetric_all(eta: &[f64]) -> Vec<f64> {
    let n = eta.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &x) in eta.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e.remove(0);
    e
}

/// S_k of η, 1 ≤ k ≤ n.
pub fn elementary_symmetric(eta: &[f64], k: usize) -> Result<f64, SimplexError> {
    let n = eta.len();
    if k < 1 || k > n {
        return Err(SimplexError::OrderOutOfRange { k, n });
    }
    Ok(elementary_symmetric_all(eta)[k - 1])
}

/// φ(η) = Σ_i η_i² Π_{j≠i}(1 − 2η_j) + Π_j(1 − 2η_j): the product
/// expansion of the form determinant.
pub fn phi_product(eta: &[f64]) -> f64 {
    let n = eta.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut prod = eta[i] * eta[i];
        for (j, &x) in eta.iter().enumerate() {
            if j != i {
                prod *= 1.0 - 2.0 * x;
            }
        }
        acc += prod;
    }
    let mut prod = 1.0;
    for &x in eta {
        prod *= 1.0 - 2.0 * x;
    }
    acc + prod
}

/// det of the form matrix via LU with partial pivoting. Agrees with
/// `phi_product` to 1e-10 relative for n ≤ 12.
pub fn phi_determinant(eta: &[f64]) -> f64 {
    form_matrix(eta).lu().determinant()
}

/// The symmetric-function expansion of φ:
/// (1 − S₁)[1 + Σ_{k=1}^n (−1)^k 2^{k−1} S_k]
///   + Σ_{k=3}^n (−1)^{k−1} (k−2) 2^{k−2} S_k.
pub fn phi_symmetric(eta: &[f64]) -> f64 {
    let n = eta.len();
    let sf = SymmetricFunctions::of(eta);
    let mut bracket = 1.0;
    let mut sign = -1.0;
    let mut pow2 = 1.0;
    for k in 1..=n {
        bracket += sign * pow2 * sf.s(k);
        sign = -sign;
        pow2 *= 2.0;
    }
    let mut tail = 0.0;
    if n >= 3 {
        let mut sign = 1.0; // (−1)^{k−1} at k = 3
        let mut pow2 = 2.0; // 2^{k−2} at k = 3
        for k in 3..=n {
            tail += sign * (k as f64 - 2.0) * pow2 * sf.s(k);
            sign = -sign;
            pow2 *= 2.0;
        }
    }
    (1.0 - sf.s(1)) * bracket + tail
}

/// The Newton chain at order k: returns
/// (S_{k+1}, (n−k)/(n(k+1))·S_k·S₁, (n−k)/(n(k+1))·S_k).
/// On A the chain lhs ≤ rhs₁ ≤ rhs₂ holds for k = 1..n−1.
pub fn newton_chain_check(pt: &SimplexPoint, k: usize) -> Result<(f64, f64, f64), SimplexError> {
    let eta = pt.eta();
    let n = eta.len();
    if k < 1 || k > n - 1 {
        return Err(SimplexError::OrderOutOfRange { k, n });
    }
    let s = SymmetricFunctions::of(eta);
    let c = (n - k) as f64 / (n as f64 * (k + 1) as f64);
    Ok((s.s(k + 1), c * s.s(k) * s.s(1), c * s.s(k)))
}

/// Deterministic boundary probes of A: the vertices 0, e_i, all edge
/// midpoints of the vertex set, and the barycenter.
pub fn deterministic_probes(n: usize) -> Vec<Vec<f64>> {
    let mut verts = vec![vec![0.0; n]];
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        verts.push(v);
    }
    let mut probes = verts.clone();
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            let mid: Vec<f64> =
                verts[i].iter().zip(&verts[j]).map(|(a, b)| 0.5 * (a + b)).collect();
            probes.push(mid);
        }
    }
    probes.push(vec![1.0 / (n as f64 + 1.0); n]);
    probes
}

/// One flat-Dirichlet draw from A: normalized exponentials over n+1
/// coordinates with the slack dropped.
pub fn sample_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = g.iter().sum();
    g.truncate(n);
    g.iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub min_phi: f64,
    pub argmin: Vec<f64>,
    /// Max relative disagreement among the three φ evaluations seen.
    pub max_identity_gap: f64,
    pub evaluations: usize,
}

/// Min of φ over `samples` Dirichlet draws plus the deterministic
/// boundary probes. Nonnegative within 1e-12 by the lemma.
pub fn nonnegativity_sweep(n: usize, samples: usize, seed: u64) -> SweepResult {
    assert!((2..=12).contains(&n), "n must lie in [2, 12]");
    let chunk = 8192usize;
    let chunks: Vec<(usize, usize)> = (0..samples.div_ceil(chunk))
        .map(|i| (i, chunk.min(samples - i * chunk)))
        .collect();
    let reduce = |a: SweepResult, b: SweepResult| {
        let mut out = if a.min_phi <= b.min_phi { a.clone() } else { b.clone() };
        out.max_identity_gap = a.max_identity_gap.max(b.max_identity_gap);
        out.evaluations = a.evaluations + b.evaluations;
        out
    };
    let eval = |eta: &[f64]| {
        let p = phi_product(eta);
        let d = phi_determinant(eta);
        let s = phi_symmetric(eta);
        let scale = 1.0 + p.abs();
        let gap = ((d - p).abs().max((s - p).abs())) / scale;
        (p, gap)
    };
    let base = {
        let mut out = SweepResult {
            min_phi: f64::INFINITY,
            argmin: vec![],
            max_identity_gap: 0.0,
            evaluations: 0,
        };
        for eta in deterministic_probes(n) {
            let (p, gap) = eval(&eta);
            out.evaluations += 1;
            out.max_identity_gap = out.max_identity_gap.max(gap);
            if p < out.min_phi {
                out.min_phi = p;
                out.argmin = eta;
            }
        }
        out
    };
    let sampled = chunks
        .into_par_iter()
        .map(|(stream, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64 + 1);
            let mut out = SweepResult {
                min_phi: f64::INFINITY,
                argmin: vec![],
                max_identity_gap: 0.0,
                evaluations: 0,
            };
            for _ in 0..count {
                let eta = sample_simplex(n, &mut rng);
                let (p, gap) = eval(&eta);
                out.evaluations += 1;
                out.max_identity_gap = out.max_identity_gap.max(gap);
                if p < out.min_phi {
                    out.min_phi = p;
                    out.argmin = eta;
                }
            }
            out
        })
        .reduce(
            || SweepResult {
                min_phi: f64::INFINITY,
                argmin: vec![],
                max_identity_gap: 0.0,
                evaluations: 0,
            },
            reduce,
        );
    reduce(base, sampled)
}

/// Sylvester check: all leading principal minors of the form matrix are
/// ≥ −1e-12.
pub fn sylvester_minors_check(pt: &SimplexPoint) -> bool {
    let eta = pt.eta();
    let n = eta.len();
    assert!(n <= 10, "minor check capped at n = 10");
    let m = form_matrix(eta);
    (1..=n).all(|k| {
        let minor = m.view((0, 0), (k, k)).clone_owned().lu().determinant();
        minor >= -1e-12
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Subset-enumeration oracle for S_k: sums of all k-element products,
    /// O(2ⁿ), valid for n ≤ 12.
    fn subset_oracle(eta: &[f64], k: usize) -> f64 {
        let n = eta.len();
        let mut acc = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let mut prod = 1.0;
            for (i, &x) in eta.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    prod *= x;
                }
            }
            acc += prod;
        }
        acc
    }

    #[test]
    fn form_matrix_hand_cases() {
        let m = form_matrix(&[0.0, 0.0]);
        assert_eq!(m, DMatrix::identity(2, 2));
        let m = form_matrix(&[1.0, 0.0]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        let m = form_matrix(&[0.5, 0.5]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25]));
    }

    #[test]
    fn elementary_symmetric_hand_cases() {
        assert_eq!(elementary_symmetric(&[1.0, 1.0, 1.0], 2).unwrap(), 3.0);
        assert_eq!(elementary_symmetric(&[1.0, 2.0, 3.0], 3).unwrap(), 6.0);
        assert_eq!(elementary_symmetric(&[1.0, 2.0, 3.0], 1).unwrap(), 6.0);
        assert_eq!(elementary_symmetric(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0);
        assert!(elementary_symmetric(&[1.0, 2.0], 3).is_err());
        assert!(elementary_symmetric(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn elementary_symmetric_matches_subset_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=12 {
            for _ in 0..50 {
                let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for k in 1..=n {
                    let fast = elementary_symmetric(&eta, k).unwrap();
                    let slow = subset_oracle(&eta, k);
                    assert_relative_eq!(fast, slow, epsilon = 1e-10, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn phi_hand_cases() {
        // η = e₁: exactly one unit component.
        for n in 2..=6 {
            let mut e1 = vec![0.0; n];
            e1[0] = 1.0;
            assert_eq!(phi_product(&e1), 0.0);
            assert_eq!(phi_symmetric(&e1), 0.0);
        }
        // η = 0: only the trailing product survives.
        assert_eq!(phi_product(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(phi_symmetric(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(phi_determinant(&[0.0, 0.0, 0.0]), 1.0);
        // η = (1/2, 1/2): both factors (1−2η) vanish.
        assert_eq!(phi_product(&[0.5, 0.5]), 0.0);
        // η = (1, 0): singular diag(0, 1).
        assert_eq!(phi_determinant(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn triple_agreement_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=8 {
            for _ in 0..10_000 {
                let eta = sample_simplex(n, &mut rng);
                let p = phi_product(&eta);
                let d = phi_determinant(&eta);
                let s = phi_symmetric(&eta);
                let tol = 1e-10 * (1.0 + p.abs());
                assert!((d - p).abs() <= tol, "det vs product at {eta:?}: {d} vs {p}");
                assert!((s - p).abs() <= tol, "symmetric vs product at {eta:?}: {s} vs {p}");
            }
        }
    }

    #[test]
    fn triple_agreement_outside_simplex_too() {
        // The three expressions are polynomial identities on all of ℝⁿ.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 2..=6 {
            for _ in 0..2_000 {
                let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let p = phi_product(&eta);
                let d = phi_determinant(&eta);
                let s = phi_symmetric(&eta);
                let tol = 1e-9 * (1.0 + p.abs());
                assert!((d - p).abs() <= tol && (s - p).abs() <= tol);
            }
        }
    }

    #[test]
    fn newton_chain_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 2..=8 {
            for _ in 0..20_000 {
                let pt = SimplexPoint::new(sample_simplex(n, &mut rng)).unwrap();
                for k in 1..n {
                    let (lhs, r1, r2) = newton_chain_check(&pt, k).unwrap();
                    assert!(lhs <= r1 + 1e-12, "S_{} > Newton bound at {:?}", k + 1, pt);
                    assert!(r1 <= r2 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn newton_chain_equality_at_uniform_point() {
        // η = (1/n, ..., 1/n): S_k = C(n,k) n^{-k}, so
        // S_{k+1} = (n−k)/(n(k+1))·S_k exactly, and S₁ = 1 makes the two
        // right-hand sides coincide.
        for n in 2..=8 {
            let pt = SimplexPoint::new(vec![1.0 / n as f64; n]).unwrap();
            for k in 1..n {
                let (lhs, r1, r2) = newton_chain_check(&pt, k).unwrap();
                assert_relative_eq!(lhs, r1, epsilon = 1e-12, max_relative = 1e-12);
                assert_relative_eq!(r1, r2, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn newton_chain_vertex_case() {
        let pt = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        let (lhs, r1, r2) = newton_chain_check(&pt, 1).unwrap();
        assert_eq!(lhs, 0.0);
        assert!(lhs <= r1 && r1 <= r2);
    }

    #[test]
    fn sign_pairing_decompositions() {
        // Even pairing: 2^{2h−1} S_{2h} − 2^{2h} S_{2h+1} ≥ 0 for 1 ≤ h ≤ (n−1)/2;
        // odd pairing: (2h−1) 2^{2h−1} S_{2h+1} − 2h 2^{2h} S_{2h+2} ≥ 0 for
        // 1 ≤ h ≤ (n−2)/2. Both on the simplex.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in 2..=8 {
            for _ in 0..20_000 {
                let eta = sample_simplex(n, &mut rng);
                let s = SymmetricFunctions::of(&eta);
                let mut h = 1;
                while 2 * h <= n - 1 {
                    let lhs = 2f64.powi(2 * h as i32 - 1) * s.s(2 * h)
                        - 2f64.powi(2 * h as i32) * s.s(2 * h + 1);
                    assert!(lhs >= -1e-12, "even pairing failed at h={h}, eta={eta:?}");
                    h += 1;
                }
                let mut h = 1;
                while 2 * h <= n - 2 {
                    let lhs = (2.0 * h as f64 - 1.0) * 2f64.powi(2 * h as i32 - 1) * s.s(2 * h + 1)
                        - 2.0 * h as f64 * 2f64.powi(2 * h as i32) * s.s(2 * h + 2);
                    assert!(lhs >= -1e-12, "odd pairing failed at h={h}, eta={eta:?}");
                    h += 1;
                }
                // The two grouped sums themselves.
                let mut alternating = 1.0;
                for k in 1..=n {
                    alternating += (-1f64).powi(k as i32) * 2f64.powi(k as i32 - 1) * s.s(k);
                }
                assert!(alternating >= -1e-12);
                let mut weighted_tail = 0.0;
                for k in 3..=n {
                    weighted_tail +=
                        (-1f64).powi(k as i32 - 1) * (k as f64 - 2.0) * 2f64.powi(k as i32 - 2) * s.s(k);
                }
                assert!(weighted_tail >= -1e-12);
            }
        }
    }

    #[test]
    fn nonnegativity_sweep_small() {
        let r = nonnegativity_sweep(2, 10_000, 42);
        assert!(r.min_phi >= -1e-12);
        assert_eq!(r.min_phi, 0.0, "vertices are included, so the min is exactly 0");
        assert!(r.max_identity_gap <= 1e-10);
        let r3 = nonnegativity_sweep(3, 50_000, 42);
        assert!(r3.min_phi >= -1e-12 && r3.min_phi == 0.0);
    }

    #[test]
    fn nonnegativity_sweep_deterministic() {
        let a = nonnegativity_sweep(4, 20_000, 7);
        let b = nonnegativity_sweep(4, 20_000, 7);
        assert_eq!(a.min_phi, b.min_phi);
        assert_eq!(a.argmin, b.argmin);
        assert_eq!(a.max_identity_gap, b.max_identity_gap);
    }

    #[test]
    fn exhaustive_grid_n2() {
        // Full grid with step 1e-3 over A for n = 2: min is 0, attained at
        // the vertices and the midpoint (1/2, 1/2).
        let mut min = f64::INFINITY;
        let mut zeros = Vec::new();
        let steps = 1000usize;
        for i in 0..=steps {
            let x = i as f64 / steps as f64;
            for j in 0..=(steps - i) {
                let y = j as f64 / steps as f64;
                let v = phi_product(&[x, y]);
                if v < min {
                    min = v;
                }
                if v.abs() < 1e-12 {
                    zeros.push((x, y));
                }
            }
        }
        assert!(min >= -1e-12);
        assert!(zeros.contains(&(1.0, 0.0)));
        assert!(zeros.contains(&(0.0, 1.0)));
        assert!(zeros.contains(&(0.5, 0.5)));
    }

    #[test]
    fn sylvester_minors_on_probes_and_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 2..=8 {
            for eta in deterministic_probes(n) {
                assert!(sylvester_minors_check(&SimplexPoint::new(eta).unwrap()));
            }
            for _ in 0..2_000 {
                let pt = SimplexPoint::new(sample_simplex(n, &mut rng)).unwrap();
                assert!(sylvester_minors_check(&pt), "minors failed at {pt:?}");
            }
        }
        // η = 0 has the identity matrix: all minors exactly 1.
        let m = form_matrix(&[0.0; 5]);
        for k in 1..=5 {
            assert_eq!(m.view((0, 0), (k, k)).clone_owned().lu().determinant(), 1.0);
        }
    }

    #[test]
    fn quadratic_form_nonnegative_on_simplex() {
        // The lemma itself: Σ(η_i−1)²λ_i² + 2Σ_{i<j}η_iη_jλ_iλ_j ≥ 0 on A.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for n in 2..=6 {
            for _ in 0..10_000 {
                let eta = sample_simplex(n, &mut rng);
                let lam: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let mut q = 0.0;
                for i in 0..n {
                    q += (eta[i] - 1.0) * (eta[i] - 1.0) * lam[i] * lam[i];
                    for j in i + 1..n {
                        q += 2.0 * eta[i] * eta[j] * lam[i] * lam[j];
                    }
                }
                let scale: f64 = lam.iter().map(|x| x * x).sum();
                assert!(q >= -1e-12 * scale.max(1.0), "form negative at {eta:?}, {lam:?}");
            }
        }
    }

    #[test]
    fn simplex_point_validation() {
        assert!(SimplexPoint::new(vec![0.5]).is_err());
        assert!(SimplexPoint::new(vec![0.5, -0.1]).is_err());
        assert!(SimplexPoint::new(vec![0.7, 0.7]).is_err());
        assert!(SimplexPoint::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexPoint::new(vec![0.5, 0.5 + 0.9e-12]).is_ok());
    }
}
