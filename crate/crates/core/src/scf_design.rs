//! Combining-network design by spatial-correlation-function (SCF) fitting.
//!
//! The effective correlation `ρ(θ_i, θ_j) = a(θ_i)^H Φ^H Φ a(θ_j)` sampled on
//! a P-point grid is driven towards a target matrix `T` by minimizing
//! `‖(E ⊙ W)‖_F²` with `E = |A^H Φ^H Φ A − T|`. Two solvers:
//!
//! * a closed form, valid when the sampled manifold is row-orthogonal
//!   (`A A^H = C·I`): the optimal Gram matrix `Φ^H Φ` is the best rank-M
//!   positive-semidefinite approximation of `A T A^H / C²`, obtained by
//!   eigenvalue truncation. Off orthogonal grids the same construction is
//!   available as a heuristic and is flagged as such;
//! * a multi-start local optimizer over the phases of a structured matrix,
//!   with the analytic gradient of the weighted cost.

use ndarray::Array2;
use rand::Rng;

use crate::combiner::{
    full_connectivity, materialize, round_robin_connectivity, CombiningMatrix, Connectivity,
    PhaseParametrization,
};
use crate::error::{Error, Result};
use crate::linalg::{adjoint, frob_norm, hermitian_defect, hermitian_eigen, identity};
use crate::manifold::{manifold_matrix, ArrayGeometry, AzimuthGrid};
use crate::optim::{best_start, lbfgs, pattern_search, run_starts, LbfgsOptions, StartOutcome};
use crate::{C64, CMat};

/// Relative deviation of `A A^H` from `C·I` below which the closed form is
/// exact rather than heuristic.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Target correlation structure.
#[derive(Debug, Clone)]
enum TargetSpec {
    /// Arbitrary Hermitian `T` (P×P).
    Dense(CMat),
    /// `T = B^H B` for a reference manifold `B` (M_ref×P); lets the cost and
    /// gradient be evaluated without forming P×P products.
    Gram(CMat),
}

/// Azimuth grid, target matrix and error weights for an SCF design problem.
#[derive(Debug, Clone)]
pub struct DesignTarget {
    grid: AzimuthGrid,
    spec: TargetSpec,
    weight: Option<Array2<f64>>,
}

impl DesignTarget {
    /// Target from an explicit Hermitian matrix.
    pub fn from_matrix(grid: AzimuthGrid, t: CMat) -> Result<Self> {
        let p = grid.len();
        if t.dim() != (p, p) {
            return Err(Error::ShapeMismatch(format!(
                "target is {:?}, grid has {p} points",
                t.dim()
            )));
        }
        let defect = hermitian_defect(&t);
        let scale = t.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1.0);
        if defect > 1e-9 * scale {
            return Err(Error::InvalidInput(format!(
                "target must be Hermitian (defect {defect:.3e})"
            )));
        }
        Ok(DesignTarget { grid, spec: TargetSpec::Dense(t), weight: None })
    }

    /// `T = A_ref^H A_ref`, the correlation of an uncompressed reference
    /// array sampled on the same grid.
    pub fn reference_array(grid: AzimuthGrid, reference: &ArrayGeometry) -> Self {
        let b = manifold_matrix(reference, &grid);
        DesignTarget { grid, spec: TargetSpec::Gram(b), weight: None }
    }

    /// Ideal generic direction finder: `T = c·I` (constant gain, zero
    /// cross-correlation).
    pub fn ideal(grid: AzimuthGrid, c: f64) -> Self {
        let p = grid.len();
        let t = identity(p).mapv(|z| z * c);
        DesignTarget { grid, spec: TargetSpec::Dense(t), weight: None }
    }

    /// `T = B^H B` for an explicit effective manifold `B` (rows are
    /// channels, columns grid points); used to plant known optima and to
    /// re-target designs onto previously achieved correlations.
    pub fn from_effective_manifold(grid: AzimuthGrid, b: CMat) -> Result<Self> {
        if b.ncols() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "manifold has {} columns, grid {}",
                b.ncols(),
                grid.len()
            )));
        }
        Ok(DesignTarget { grid, spec: TargetSpec::Gram(b), weight: None })
    }

    /// Attaches an error-weight matrix (symmetric, nonnegative).
    pub fn with_weight(mut self, w: Array2<f64>) -> Result<Self> {
        let p = self.grid.len();
        if w.dim() != (p, p) {
            return Err(Error::ShapeMismatch(format!(
                "weight is {:?}, grid has {p} points",
                w.dim()
            )));
        }
        for i in 0..p {
            for j in 0..p {
                if w[[i, j]] < 0.0 || !w[[i, j]].is_finite() {
                    return Err(Error::InvalidInput("weights must be nonnegative".into()));
                }
                if (w[[i, j]] - w[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidInput("weight matrix must be symmetric".into()));
                }
            }
        }
        self.weight = Some(w);
        Ok(self)
    }

    /// Sampling grid.
    pub fn grid(&self) -> &AzimuthGrid {
        &self.grid
    }

    /// Weight matrix, if any (`None` means all ones).
    pub fn weight(&self) -> Option<&Array2<f64>> {
        self.weight.as_ref()
    }

    /// Materializes the target as a dense matrix.
    pub fn dense_target(&self) -> CMat {
        match &self.spec {
            TargetSpec::Dense(t) => t.clone(),
            TargetSpec::Gram(b) => adjoint(b).dot(b),
        }
    }
}

/// Three-band weight builder: full weight `w_main` within `mainlobe_width`
/// of the diagonal, zero ("don't care") in the transition band, `w_side`
/// beyond `transition_width`. Distances are circular distances between the
/// grid angles of the row and column.
pub fn banded_weight(
    grid: &AzimuthGrid,
    mainlobe_width: f64,
    transition_width: f64,
    w_main: f64,
    w_side: f64,
) -> Result<Array2<f64>> {
    if !(transition_width >= mainlobe_width) {
        return Err(Error::InvalidInput(
            "transition width must be at least the mainlobe width".into(),
        ));
    }
    let p = grid.len();
    let pts = grid.points();
    Ok(Array2::from_shape_fn((p, p), |(i, j)| {
        let d = crate::manifold::circular_distance(pts[i], pts[j]);
        if d <= mainlobe_width {
            w_main
        } else if d < transition_width {
            0.0
        } else {
            w_side
        }
    }))
}

/// Weight emphasizing rows/columns whose angle falls in one of the focus
/// intervals `(center, halfwidth)`; other entries get `background`.
pub fn focused_weight(
    grid: &AzimuthGrid,
    focus: &[(f64, f64)],
    background: f64,
) -> Array2<f64> {
    let p = grid.len();
    let pts = grid.points();
    let in_focus: Vec<bool> = pts
        .iter()
        .map(|&t| focus.iter().any(|&(c, h)| crate::manifold::circular_distance(t, c) <= h))
        .collect();
    Array2::from_shape_fn((p, p), |(i, j)| {
        if in_focus[i] || in_focus[j] {
            1.0
        } else {
            background
        }
    })
}

/// Outcome of a design run.
#[derive(Debug, Clone)]
pub struct DesignResult {
    /// The designed combining matrix.
    pub matrix: CombiningMatrix,
    /// Weighted SCF cost of `matrix`, re-evaluated after selection.
    pub cost: f64,
    /// Number of starts attempted.
    pub starts_used: usize,
    /// Final cost of each start, by start index.
    pub per_start_costs: Vec<f64>,
    /// Convergence flag of each start.
    pub converged: Vec<bool>,
}

/// Closed-form design plus diagnostics.
#[derive(Debug, Clone)]
pub struct ClosedFormDesign {
    /// The design; `matrix` is in unconstrained mode.
    pub result: DesignResult,
    /// True when `A A^H` deviated from `C·I` beyond tolerance and the
    /// solution is a heuristic rather than the exact optimum.
    pub heuristic: bool,
    /// True when kept eigenvalues were negative and clamped to zero
    /// (indefinite `S`; a Gram matrix cannot represent them).
    pub clamped: bool,
    /// Relative deviation of `A A^H` from `C·I`.
    pub orthogonality_defect: f64,
    /// Estimated grid constant `C = tr(A A^H)/N`.
    pub grid_constant: f64,
}

/// Entrywise error matrix `E = |A^H Φ^H Φ A − T|`.
pub fn error_matrix(phi: &CombiningMatrix, a: &CMat, t: &CMat) -> Result<Array2<f64>> {
    let p = a.ncols();
    if t.dim() != (p, p) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs grid size {p}",
            t.dim()
        )));
    }
    let atilde = crate::combiner::effective_manifold(phi, a)?;
    let rho = adjoint(&atilde).dot(&atilde);
    Ok(Array2::from_shape_fn((p, p), |(i, j)| (rho[[i, j]] - t[[i, j]]).norm()))
}

/// Weighted cost `Σ_{ij} (W_ij · E_ij)²`; with all-ones weights this is
/// exactly `‖E‖_F²`.
pub fn weighted_scf_cost(
    phi: &CombiningMatrix,
    a: &CMat,
    target: &DesignTarget,
) -> Result<f64> {
    if a.ncols() != target.grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "manifold has {} columns, grid {}",
            a.ncols(),
            target.grid.len()
        )));
    }
    let e = error_matrix(phi, a, &target.dense_target())?;
    Ok(match &target.weight {
        None => e.iter().map(|v| v * v).sum(),
        Some(w) => e.iter().zip(w.iter()).map(|(v, wi)| (v * wi) * (v * wi)).sum(),
    })
}

/// Rank-`m` positive-semidefinite factor: returns `Φ` (m×n) with
/// `Φ^H Φ` the best PSD rank-≤m Frobenius approximation of Hermitian `s`,
/// i.e. the `m` algebraically largest eigenvalues kept and negatives
/// clamped to zero. Second return marks whether clamping occurred.
pub fn rank_truncated_psd_factor(s: &CMat, m: usize) -> Result<(CMat, bool)> {
    let n = s.nrows();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!(
            "rank m={m} must satisfy 1 <= m <= {n}"
        )));
    }
    let eig = hermitian_eigen(s)?;
    let mut clamped = false;
    let mut phi = Array2::zeros((m, n));
    for k in 0..m {
        let mut lam = eig.values[k];
        if lam < 0.0 {
            lam = 0.0;
            clamped = true;
        }
        let w = lam.sqrt();
        for j in 0..n {
            phi[[k, j]] = eig.vectors[[j, k]].conj() * w;
        }
    }
    Ok((phi, clamped))
}

/// Closed-form SCF design (unconstrained mode).
///
/// Requires `A A^H ≈ C·I`; beyond [`ORTHOGONALITY_TOL`] the result is
/// reported with `heuristic = true` instead of failing. The returned matrix
/// satisfies `Φ^H Φ = (A T A^H / C²)` truncated to its `m` largest
/// eigenvalues.
pub fn closed_form_design(a: &CMat, target: &DesignTarget, m: usize) -> Result<ClosedFormDesign> {
    let n = a.nrows();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!(
            "output count m={m} must satisfy 1 <= m <= N={n}"
        )));
    }
    let gram = a.dot(&adjoint(a));
    let c = gram.diag().iter().map(|z| z.re).sum::<f64>() / n as f64;
    if c <= 0.0 {
        return Err(Error::InvalidInput("degenerate manifold: tr(A A^H) <= 0".into()));
    }
    let defect = frob_norm(&(&gram - &identity(n).mapv(|z| z * c))) / (c * (n as f64).sqrt());
    let heuristic = defect > ORTHOGONALITY_TOL;

    let t = target.dense_target();
    let s = a.dot(&t).dot(&adjoint(a)).mapv(|z| z / (c * c));
    let (phi, clamped) = rank_truncated_psd_factor(&s, m)?;
    let matrix = CombiningMatrix::unconstrained(phi);
    let cost = weighted_scf_cost(&matrix, a, target)?;
    Ok(ClosedFormDesign {
        result: DesignResult {
            matrix,
            cost,
            starts_used: 0,
            per_start_costs: vec![],
            converged: vec![],
        },
        heuristic,
        clamped,
        orthogonality_defect: defect,
        grid_constant: c,
    })
}

/// Options for the numeric SCF optimizer.
#[derive(Debug, Clone)]
pub struct ScfOptions {
    /// L-BFGS iteration cap per start.
    pub max_iterations: usize,
    /// Gradient tolerance passed to the local search.
    pub grad_tol: f64,
    /// Use the analytic gradient (default). When false, a derivative-free
    /// pattern search is used instead.
    pub use_gradient: bool,
    /// Optional explicit connectivity; defaults to fully meshed for `l == m`
    /// and round-robin otherwise.
    pub connectivity: Option<Connectivity>,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            max_iterations: 400,
            grad_tol: 1e-9,
            use_gradient: true,
            connectivity: None,
        }
    }
}

/// Cost/gradient engine for phases of a structured matrix against a target.
struct PhaseObjective<'a> {
    a: &'a CMat,
    entries: Vec<(usize, usize)>,
    amp: f64,
    m: usize,
    // Precomputed pieces.
    weight_sq: Option<Array2<f64>>,
    t_dense: Option<CMat>,
    // Gram-target fast path: T = B^H B.
    gram_b: Option<&'a CMat>,
    ab_h: Option<CMat>,     // A·B^H (N×M_ref)
    t_const: f64,           // ‖B B^H‖_F²
}

impl<'a> PhaseObjective<'a> {
    fn new(
        a: &'a CMat,
        target: &'a DesignTarget,
        m: usize,
        l: usize,
        eta: f64,
        connectivity: &Connectivity,
    ) -> Self {
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..a.nrows() {
                if connectivity[[i, j]] {
                    entries.push((i, j));
                }
            }
        }
        let amp = eta / (l as f64).sqrt();
        let weight_sq = target.weight.as_ref().map(|w| w.mapv(|v| v * v));
        let fast = weight_sq.is_none() && matches!(target.spec, TargetSpec::Gram(_));
        let (gram_b, ab_h, t_const, t_dense) = if fast {
            let b = match &target.spec {
                TargetSpec::Gram(b) => b,
                _ => unreachable!(),
            };
            let bbh = b.dot(&adjoint(b));
            (Some(b), Some(a.dot(&adjoint(b))), frob_norm(&bbh).powi(2), None)
        } else {
            (None, None, 0.0, Some(target.dense_target()))
        };
        PhaseObjective { a, entries, amp, m, weight_sq, t_dense, gram_b, ab_h, t_const }
    }

    fn phi_from(&self, x: &[f64]) -> CMat {
        let n = self.a.nrows();
        let mut phi = Array2::zeros((self.m, n));
        for (k, &(i, j)) in self.entries.iter().enumerate() {
            phi[[i, j]] = C64::from_polar(self.amp, x[k]);
        }
        phi
    }

    fn cost(&self, x: &[f64]) -> f64 {
        self.cost_grad_impl(x, None)
    }

    fn cost_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
        self.cost_grad_impl(x, Some(g))
    }

    fn cost_grad_impl(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let phi = self.phi_from(x);
        let atilde = phi.dot(self.a); // M×P
        let (f, k_mat) = if let (Some(b), Some(ab_h)) = (self.gram_b, self.ab_h.as_ref()) {
            // T = B^H B: cost = ‖Ã Ã^H‖² - 2‖B Ã^H‖² + ‖B B^H‖².
            let x_mm = atilde.dot(&adjoint(&atilde));
            let y = b.dot(&adjoint(&atilde));
            let f = frob_norm(&x_mm).powi(2) - 2.0 * frob_norm(&y).powi(2) + self.t_const;
            let k_mat = grad.is_some().then(|| {
                let z = self.a.dot(&adjoint(&atilde)); // N×M
                z.dot(&adjoint(&z)) - ab_h.dot(&adjoint(ab_h))
            });
            (f, k_mat)
        } else {
            let t = self.t_dense.as_ref().expect("dense target");
            let mut e_mat = adjoint(&atilde).dot(&atilde); // P×P
            e_mat -= t;
            let f = match &self.weight_sq {
                None => e_mat.iter().map(|z| z.norm_sqr()).sum(),
                Some(w2) => e_mat
                    .iter()
                    .zip(w2.iter())
                    .map(|(z, w)| z.norm_sqr() * w)
                    .sum(),
            };
            let k_mat = grad.is_some().then(|| {
                if let Some(w2) = &self.weight_sq {
                    for (z, w) in e_mat.iter_mut().zip(w2.iter()) {
                        *z *= *w;
                    }
                }
                self.a.dot(&e_mat).dot(&adjoint(self.a))
            });
            (f, k_mat)
        };
        if let (Some(g), Some(k_mat)) = (grad, k_mat) {
            // d cost = Re⟨dΦ, 4 Φ K⟩; with dΦ = jΦ dφ entrywise this gives
            // ∂cost/∂φ_mn = Im(conj(Φ_mn)·(4ΦK)_mn).
            let gphi = phi.dot(&k_mat).mapv(|z| z * 4.0);
            for (kk, &(i, j)) in self.entries.iter().enumerate() {
                g[kk] = (phi[[i, j]].conj() * gphi[[i, j]]).im;
            }
        }
        f
    }
}

/// Multi-start numeric SCF design over structured phases.
///
/// Start `i`'s initial phases depend only on `(seed, i)`, so the set of
/// starts for `n_starts = k` is a prefix of the set for any larger count and
/// the best cost is non-increasing in `n_starts`. Ties in cost resolve to
/// the lowest start index; a start whose search fails is recorded, and the
/// call errors only when every start fails.
pub fn optimize_scf(
    geom: &ArrayGeometry,
    target: &DesignTarget,
    m: usize,
    l: usize,
    eta: f64,
    n_starts: usize,
    seed: u64,
    options: &ScfOptions,
) -> Result<DesignResult> {
    if n_starts == 0 {
        return Err(Error::InvalidInput("n_starts must be at least 1".into()));
    }
    let n = geom.n_elements();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("need 1 <= M <= N, got M={m}, N={n}")));
    }
    if l == 0 || l > m {
        return Err(Error::InvalidInput(format!("need 1 <= L <= M, got L={l}, M={m}")));
    }
    let connectivity = match &options.connectivity {
        Some(c) => {
            if c.dim() != (m, n) {
                return Err(Error::ShapeMismatch("connectivity shape".into()));
            }
            c.clone()
        }
        None => {
            if l == m {
                full_connectivity(m, n)
            } else {
                round_robin_connectivity(m, n, l)
            }
        }
    };
    let a = manifold_matrix(geom, &target.grid);
    let objective = PhaseObjective::new(&a, target, m, l, eta, &connectivity);
    let dim = objective.entries.len();

    let outcomes: Vec<StartOutcome<Vec<f64>>> = run_starts(n_starts, |i| {
        let mut rng = crate::rng::stream(seed, i as u64);
        let x0: Vec<f64> = (0..dim).map(|_| crate::rng::uniform_phase(&mut rng)).collect();
        if options.use_gradient {
            let opts = LbfgsOptions {
                max_iterations: options.max_iterations,
                grad_tol: options.grad_tol,
                ..Default::default()
            };
            let out = lbfgs(|x, g| objective.cost_grad(x, g), &x0, &opts);
            StartOutcome { start_index: i, cost: out.f, converged: out.converged, payload: out.x }
        } else {
            let (x, f, done) =
                pattern_search(&|x: &[f64]| objective.cost(x), &x0, 0.5, options.max_iterations, 1e-10);
            StartOutcome { start_index: i, cost: f, converged: done, payload: x }
        }
    });

    let best = best_start(&outcomes)
        .ok_or_else(|| Error::OptimizationFailed("all SCF starts failed".into()))?;
    let phases = objective.phi_from(&outcomes[best].payload).mapv(|z| z.arg());
    let matrix = materialize(&PhaseParametrization {
        phases,
        branch_count: l,
        efficiency: eta,
        connectivity,
    })?;
    let cost = weighted_scf_cost(&matrix, &a, target)?;
    Ok(DesignResult {
        matrix,
        cost,
        starts_used: n_starts,
        per_start_costs: outcomes.iter().map(|o| o.cost).collect(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
    })
}

/// Unconstrained numeric minimizer of the all-ones-weight cost over
/// arbitrary complex `Φ` (re/im parameters), used as the independent check
/// of the closed form.
pub fn optimize_unconstrained(
    a: &CMat,
    target: &DesignTarget,
    m: usize,
    n_starts: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<DesignResult> {
    let n = a.nrows();
    let t = target.dense_target();
    let dim = 2 * m * n;

    let cost_grad = |x: &[f64], g: Option<&mut [f64]>| -> f64 {
        let phi = Array2::from_shape_fn((m, n), |(i, j)| {
            let k = 2 * (i * n + j);
            C64::new(x[k], x[k + 1])
        });
        let atilde = phi.dot(a);
        let mut e_mat = adjoint(&atilde).dot(&atilde);
        e_mat -= &t;
        let f: f64 = e_mat.iter().map(|z| z.norm_sqr()).sum();
        if let Some(g) = g {
            let k_mat = a.dot(&e_mat).dot(&adjoint(a));
            let gphi = phi.dot(&k_mat).mapv(|z| z * 4.0);
            for i in 0..m {
                for j in 0..n {
                    let k = 2 * (i * n + j);
                    g[k] = gphi[[i, j]].re;
                    g[k + 1] = gphi[[i, j]].im;
                }
            }
        }
        f
    };

    let outcomes: Vec<StartOutcome<Vec<f64>>> = run_starts(n_starts, |i| {
        let mut rng = crate::rng::stream(seed, i as u64);
        let x0: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let out = lbfgs(
            |x, g| cost_grad(x, Some(g)),
            &x0,
            &LbfgsOptions { max_iterations, grad_tol: 1e-10, ..Default::default() },
        );
        StartOutcome { start_index: i, cost: out.f, converged: out.converged, payload: out.x }
    });
    let best = best_start(&outcomes)
        .ok_or_else(|| Error::OptimizationFailed("all unconstrained starts failed".into()))?;
    let x = &outcomes[best].payload;
    let phi = Array2::from_shape_fn((m, n), |(i, j)| {
        let k = 2 * (i * n + j);
        C64::new(x[k], x[k + 1])
    });
    let matrix = CombiningMatrix::unconstrained(phi);
    let cost = weighted_scf_cost(&matrix, a, target)?;
    Ok(DesignResult {
        matrix,
        cost,
        starts_used: n_starts,
        per_start_costs: outcomes.iter().map(|o| o.cost).collect(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
    })
}

/// Convenience: checks that `matrix.cost` matches a re-evaluation (used by
/// callers that deserialize results).
pub fn reevaluate_cost(result: &DesignResult, geom: &ArrayGeometry, target: &DesignTarget) -> Result<f64> {
    let a = manifold_matrix(geom, target.grid());
    weighted_scf_cost(&result.matrix, &a, target)
}
