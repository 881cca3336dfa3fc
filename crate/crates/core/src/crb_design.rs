//! CRB-minimizing combining design under a false-detection constraint:
//! minimize the worst-case single-source CRB over a reference-direction
//! grid subject to `P_d(Φ, θ0, ρ_th) ≤ ε0` at every grid direction.
//!
//! Both the objective and the constraint are non-convex in the phases, so
//! the solver runs best-of-N seeded local searches. Inside a search the
//! minimax is smoothed by a p-norm softmax with an escalating exponent, and
//! the constraint enters as an escalating quadratic penalty; accepted
//! solutions must satisfy the exact (non-smoothed) constraint. Reported
//! worst-case values always come from the exact maximum over the grid.

use ndarray::Array2;

use crate::combiner::{
    full_connectivity, materialize, round_robin_connectivity, CombiningMatrix,
    PhaseParametrization,
};
use crate::error::{Error, Result};
use crate::false_detect::{union_bound_pd_on, NoiseWhitener};
use crate::manifold::{ArrayGeometry, AzimuthGrid};
use crate::optim::{best_start, lbfgs_fd, run_starts, LbfgsOptions, StartOutcome};
use crate::performance::{crb_matrix, crb_single, EffectiveGrid, MainlobeDef, NoiseModel};
use crate::scf_design::DesignResult;
use crate::C64;

/// Fixed-offset second source for the multi-source design variant: the
/// second DOA rides at `offset` radians from the scanned reference with
/// relative power `alpha_db` (inphase amplitudes).
#[derive(Debug, Clone, Copy)]
pub struct TwoSourceSpec {
    /// Angular offset of the second source (radians).
    pub offset: f64,
    /// Power of the second source relative to the first (dB, ≤ 0).
    pub alpha_db: f64,
}

/// Numeric knobs of the constrained design.
#[derive(Debug, Clone)]
pub struct CrbOptions {
    /// Correlation-profile grid size for sidelobe peaks.
    pub profile_points: usize,
    /// Quadrature order inside the optimization loop.
    pub design_g_order: usize,
    /// Quadrature order for reported values.
    pub report_g_order: usize,
    /// Mainlobe definition.
    pub mainlobe_def: MainlobeDef,
    /// Iteration cap of each smoothed subproblem.
    pub max_iterations: usize,
    /// Finite-difference step (radians) for phase gradients.
    pub fd_step: f64,
    /// Accepted absolute constraint tolerance on the reported `P_d`.
    pub constraint_tol: f64,
}

impl Default for CrbOptions {
    fn default() -> Self {
        CrbOptions {
            profile_points: 360,
            design_g_order: 64,
            report_g_order: 256,
            mainlobe_def: MainlobeDef::NullToNull,
            max_iterations: 60,
            fd_step: 1e-5,
            constraint_tol: 1e-3,
        }
    }
}

/// Problem statement for [`optimize_crb`].
#[derive(Debug, Clone)]
pub struct CrbDesignSpec {
    /// Antenna geometry.
    pub geometry: ArrayGeometry,
    /// Receiver channels.
    pub m: usize,
    /// Branches per antenna.
    pub l: usize,
    /// Branch efficiency.
    pub eta: f64,
    /// SNR threshold (linear, strongest-source power over total noise) at
    /// which the false-detection constraint is imposed.
    pub rho_th: f64,
    /// Desired false-detection level `ε0 ∈ (0, 1)`.
    pub epsilon0: f64,
    /// Reference-direction range (subset of (0, 2π]); the design handles
    /// only directions inside it (full circle by default).
    pub angular_range: (f64, f64),
    /// Number of reference directions in the minimax grid.
    pub theta0_grid_size: usize,
    /// Random starts.
    pub n_starts: usize,
    /// Seed for start generation.
    pub seed: u64,
    /// Optional warm start (e.g. an SCF design); run in addition to the
    /// random starts.
    pub init: Option<CombiningMatrix>,
    /// Noise split; the constraint and objective are evaluated under it.
    pub noise: NoiseModel,
    /// Fixed-offset second source (multi-source design), if any.
    pub two_source: Option<TwoSourceSpec>,
    /// Numeric options.
    pub options: CrbOptions,
}

impl CrbDesignSpec {
    /// Spec with defaults for the standard single-source full-circle case.
    pub fn new(geometry: ArrayGeometry, m: usize, rho_th: f64, epsilon0: f64) -> Self {
        CrbDesignSpec {
            geometry,
            m,
            l: m,
            eta: 1.0,
            rho_th,
            epsilon0,
            angular_range: (0.0, std::f64::consts::TAU),
            theta0_grid_size: 90,
            n_starts: 4,
            seed: 0,
            init: None,
            noise: NoiseModel::signal_only(1.0),
            two_source: None,
            options: CrbOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.geometry.n_elements();
        if self.m == 0 || self.m > n {
            return Err(Error::InvalidInput(format!(
                "need 1 <= M <= N, got M={}, N={n}",
                self.m
            )));
        }
        if self.l == 0 || self.l > self.m {
            return Err(Error::InvalidInput(format!(
                "need 1 <= L <= M, got L={}, M={}",
                self.l, self.m
            )));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon0 must lie in (0, 1], got {}",
                self.epsilon0
            )));
        }
        if !self.rho_th.is_finite() || self.rho_th <= 0.0 {
            return Err(Error::InvalidInput("rho_th must be positive and finite".into()));
        }
        let (lo, hi) = self.angular_range;
        if !(hi > lo) || hi - lo > std::f64::consts::TAU + 1e-12 {
            return Err(Error::InvalidInput("empty or oversized angular range".into()));
        }
        if self.theta0_grid_size == 0 {
            return Err(Error::InvalidInput("theta0 grid must be nonempty".into()));
        }
        if self.n_starts == 0 && self.init.is_none() {
            return Err(Error::InvalidInput("need at least one start or an init".into()));
        }
        Ok(())
    }

    /// Midpoint grid of reference directions over the angular range.
    pub fn theta0_points(&self) -> Vec<f64> {
        let (lo, hi) = self.angular_range;
        let k = self.theta0_grid_size;
        (0..k)
            .map(|i| (lo + (i as f64 + 0.5) * (hi - lo) / k as f64).rem_euclid(std::f64::consts::TAU))
            .collect()
    }

    /// Sources used for constraint evaluation at reference `theta0`.
    pub fn sources_at(&self, theta0: f64) -> Vec<(f64, C64)> {
        let s0 = C64::new((self.rho_th * self.noise.total()).sqrt(), 0.0);
        match self.two_source {
            None => vec![(theta0, s0)],
            Some(ts) => {
                let s1 = s0 * 10f64.powf(ts.alpha_db / 20.0);
                vec![(theta0, s0), (theta0 + ts.offset, s1)]
            }
        }
    }
}

/// Pointwise and worst-case values of a design over the θ0 grid.
#[derive(Debug, Clone)]
pub struct DesignEvaluation {
    /// `max` of the CRB column.
    pub worst_crb: f64,
    /// `max` of the Pd column.
    pub worst_pd: f64,
    /// Rows `(θ0, CRB(θ0), P_d(θ0))`.
    pub per_theta0: Vec<(f64, f64, f64)>,
}

/// Constrained-design outcome.
#[derive(Debug, Clone)]
pub struct CrbDesignOutcome {
    /// Best design and per-start bookkeeping; `cost` is the worst-case CRB.
    pub result: DesignResult,
    /// Exact worst-case CRB over the grid (re-evaluated).
    pub worst_crb: f64,
    /// Exact worst-case union-bound Pd over the grid (re-evaluated).
    pub worst_pd: f64,
    /// Whether the returned design satisfies `worst_pd ≤ ε0 + tol`.
    pub feasible: bool,
    /// Full per-θ0 table.
    pub evaluation: DesignEvaluation,
}

fn crb_at(
    phi: &CombiningMatrix,
    spec: &CrbDesignSpec,
    theta0: f64,
) -> Result<f64> {
    match spec.two_source {
        None => crb_single(phi, &spec.geometry, theta0, spec.rho_th, &spec.noise),
        Some(ts) => {
            let sources = spec.sources_at(theta0);
            let k = sources.len();
            let r_s = Array2::from_shape_fn((k, k), |(i, j)| {
                sources[i].1 * sources[j].1.conj()
            });
            let doas: Vec<f64> = sources.iter().map(|s| s.0).collect();
            let crb = crb_matrix(phi, &spec.geometry, &doas, &r_s, &spec.noise)?;
            let _ = ts;
            Ok(crb[[0, 0]])
        }
    }
}

/// Exact per-θ0 CRB and union-bound Pd tables with their maxima, evaluated
/// at the reporting quadrature order.
pub fn evaluate_design(phi: &CombiningMatrix, spec: &CrbDesignSpec) -> Result<DesignEvaluation> {
    spec.validate()?;
    let grid = AzimuthGrid::uniform(spec.options.profile_points)?;
    let eg = EffectiveGrid::new(phi, &spec.geometry, &grid)?;
    let wh = NoiseWhitener::new(&spec.noise, phi)?;
    let mut per = Vec::with_capacity(spec.theta0_grid_size);
    let mut worst_crb = 0.0f64;
    let mut worst_pd = 0.0f64;
    for theta0 in spec.theta0_points() {
        let crb = crb_at(phi, spec, theta0)?;
        let report = union_bound_pd_on(
            &eg,
            &wh,
            phi,
            &spec.geometry,
            theta0,
            &spec.sources_at(theta0),
            spec.options.report_g_order,
            spec.options.mainlobe_def,
        )?;
        worst_crb = worst_crb.max(crb);
        worst_pd = worst_pd.max(report.union_bound);
        per.push((theta0, crb, report.union_bound));
    }
    Ok(DesignEvaluation { worst_crb, worst_pd, per_theta0: per })
}

/// Smooth maximum `max·(Σ (v/max)^p)^{1/p}`; upper-bounds the true maximum
/// and converges to it as `p` grows.
fn pnorm_max(values: &[f64], p: f64) -> f64 {
    let vmax = values.iter().cloned().fold(0.0f64, f64::max);
    if vmax <= 0.0 {
        return 0.0;
    }
    let sum: f64 = values.iter().map(|&v| (v / vmax).powf(p)).sum();
    vmax * sum.powf(1.0 / p)
}

struct DesignObjective<'a> {
    spec: &'a CrbDesignSpec,
    entries: Vec<(usize, usize)>,
    amp: f64,
    grid: AzimuthGrid,
    theta0s: Vec<f64>,
    crb_floor: f64,
}

impl<'a> DesignObjective<'a> {
    fn phi_from(&self, x: &[f64]) -> CombiningMatrix {
        let n = self.spec.geometry.n_elements();
        let mut w = Array2::zeros((self.spec.m, n));
        for (k, &(i, j)) in self.entries.iter().enumerate() {
            w[[i, j]] = C64::from_polar(self.amp, x[k]);
        }
        CombiningMatrix::unconstrained(w)
    }

    /// Per-θ0 CRB and Pd at the design quadrature order.
    fn metrics(&self, phi: &CombiningMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let eg = EffectiveGrid::new(phi, &self.spec.geometry, &self.grid)?;
        let wh = NoiseWhitener::new(&self.spec.noise, phi)?;
        let mut crbs = Vec::with_capacity(self.theta0s.len());
        let mut pds = Vec::with_capacity(self.theta0s.len());
        for &theta0 in &self.theta0s {
            crbs.push(crb_at(phi, self.spec, theta0)?);
            let report = union_bound_pd_on(
                &eg,
                &wh,
                phi,
                &self.spec.geometry,
                theta0,
                &self.spec.sources_at(theta0),
                self.spec.options.design_g_order,
                self.spec.options.mainlobe_def,
            )?;
            pds.push(report.union_bound);
        }
        Ok((crbs, pds))
    }

    fn penalized(&self, x: &[f64], p: f64, nu: f64) -> f64 {
        let phi = self.phi_from(x);
        match self.metrics(&phi) {
            Ok((crbs, pds)) => {
                let crb_term = pnorm_max(&crbs, p) / self.crb_floor;
                let pd_smooth = pnorm_max(&pds, 4.0 * p);
                let viol = (pd_smooth - self.spec.epsilon0).max(0.0) / self.spec.epsilon0;
                crb_term + nu * viol * viol
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Exact worst-case values at the design quadrature order.
    fn exact(&self, x: &[f64]) -> Result<(f64, f64)> {
        let phi = self.phi_from(x);
        let (crbs, pds) = self.metrics(&phi)?;
        Ok((
            crbs.iter().cloned().fold(0.0f64, f64::max),
            pds.iter().cloned().fold(0.0f64, f64::max),
        ))
    }
}

/// Multi-start penalized minimax design. The best feasible start wins (by
/// worst-case CRB); when no start meets the constraint the least-violating
/// design is returned with `feasible = false`.
pub fn optimize_crb(spec: &CrbDesignSpec) -> Result<CrbDesignOutcome> {
    spec.validate()?;
    let n = spec.geometry.n_elements();
    let connectivity = if spec.l == spec.m {
        full_connectivity(spec.m, n)
    } else {
        round_robin_connectivity(spec.m, n, spec.l)
    };
    let mut entries = Vec::new();
    for i in 0..spec.m {
        for j in 0..n {
            if connectivity[[i, j]] {
                entries.push((i, j));
            }
        }
    }
    let dim = entries.len();
    let amp = spec.eta / (spec.l as f64).sqrt();

    // Floor: worst-case CRB of the uncompressed array, a hard lower bound
    // used only to scale the objective.
    let full = CombiningMatrix::identity(n);
    let theta0s = spec.theta0_points();
    let mut crb_floor = 0.0f64;
    for &t in &theta0s {
        crb_floor = crb_floor.max(crb_single(&full, &spec.geometry, t, spec.rho_th, &spec.noise)?);
    }

    let objective = DesignObjective {
        spec,
        entries,
        amp,
        grid: AzimuthGrid::uniform(spec.options.profile_points)?,
        theta0s,
        crb_floor,
    };

    // Warm start (if given) plus seeded random starts.
    let init_phases: Option<Vec<f64>> = match &spec.init {
        Some(phi) => {
            if phi.n_outputs() != spec.m || phi.n_inputs() != n {
                return Err(Error::ShapeMismatch("init matrix shape".into()));
            }
            Some(objective.entries.iter().map(|&(i, j)| phi.weights()[[i, j]].arg()).collect())
        }
        None => None,
    };
    let total_starts = spec.n_starts + usize::from(init_phases.is_some());

    #[derive(Clone)]
    struct StartPayload {
        x: Vec<f64>,
        worst_crb: f64,
    }

    let outcomes: Vec<StartOutcome<StartPayload>> = run_starts(total_starts, |idx| {
        let x0: Vec<f64> = if idx == 0 {
            if let Some(init) = &init_phases {
                init.clone()
            } else {
                let mut rng = crate::rng::stream(spec.seed, idx as u64);
                (0..dim).map(|_| crate::rng::uniform_phase(&mut rng)).collect()
            }
        } else if init_phases.is_some() {
            let mut rng = crate::rng::stream(spec.seed, (idx - 1) as u64);
            (0..dim).map(|_| crate::rng::uniform_phase(&mut rng)).collect()
        } else {
            let mut rng = crate::rng::stream(spec.seed, idx as u64);
            (0..dim).map(|_| crate::rng::uniform_phase(&mut rng)).collect()
        };

        let opts = LbfgsOptions {
            max_iterations: spec.options.max_iterations,
            grad_tol: 1e-7,
            ..Default::default()
        };
        let mut x = x0;
        let mut converged = false;
        for (p, nu) in [(8.0, 10.0), (16.0, 100.0), (32.0, 1_000.0)] {
            let out = lbfgs_fd(&|v: &[f64]| objective.penalized(v, p, nu), &x, spec.options.fd_step, &opts);
            x = out.x;
            converged = out.converged;
        }
        // Constraint restoration: escalate the penalty until the exact
        // (design-order) worst-case Pd clears ε0 with a small margin.
        let mut nu = 1e4;
        let margin = 1.0 - 1e-3;
        for _ in 0..4 {
            match objective.exact(&x) {
                Ok((_, pd)) if pd <= spec.epsilon0 * margin => break,
                Ok(_) => {
                    let out = lbfgs_fd(
                        &|v: &[f64]| objective.penalized(v, 64.0, nu),
                        &x,
                        spec.options.fd_step,
                        &opts,
                    );
                    x = out.x;
                    nu *= 10.0;
                }
                Err(_) => break,
            }
        }
        match objective.exact(&x) {
            Ok((crb, pd)) => {
                let feasible = pd <= spec.epsilon0;
                // Feasible starts rank by CRB; infeasible ones by violation,
                // far above any feasible cost.
                let cost = if feasible {
                    crb
                } else {
                    1e12 * (1.0 + (pd - spec.epsilon0) / spec.epsilon0)
                };
                StartOutcome {
                    start_index: idx,
                    cost,
                    converged,
                    payload: StartPayload { x, worst_crb: crb },
                }
            }
            Err(_) => StartOutcome {
                start_index: idx,
                cost: f64::INFINITY,
                converged: false,
                payload: StartPayload { x: vec![0.0; dim], worst_crb: f64::INFINITY },
            },
        }
    });

    let best = best_start(&outcomes)
        .ok_or_else(|| Error::OptimizationFailed("all constrained-design starts failed".into()))?;
    let payload = &outcomes[best].payload;

    let mut phases = Array2::zeros((spec.m, n));
    for (k, &(i, j)) in objective.entries.iter().enumerate() {
        phases[[i, j]] = payload.x[k].rem_euclid(std::f64::consts::TAU);
    }
    let matrix = materialize(&PhaseParametrization {
        phases,
        branch_count: spec.l,
        efficiency: spec.eta,
        connectivity,
    })?;

    let evaluation = evaluate_design(&matrix, spec)?;
    let feasible = evaluation.worst_pd <= spec.epsilon0 + spec.options.constraint_tol;
    Ok(CrbDesignOutcome {
        result: DesignResult {
            matrix,
            cost: evaluation.worst_crb,
            starts_used: total_starts,
            per_start_costs: outcomes.iter().map(|o| o.payload.worst_crb).collect(),
            converged: outcomes.iter().map(|o| o.converged).collect(),
        },
        worst_crb: evaluation.worst_crb,
        worst_pd: evaluation.worst_pd,
        feasible,
        evaluation,
    })
}

/// Designs for a sequence of constraint levels, tightest first. Each looser
/// level may inherit any tighter design (which is feasible for it by
/// construction), so the achieved worst-case CRB is non-increasing as the
/// constraint relaxes.
pub fn sweep_epsilon(base: &CrbDesignSpec, epsilons: &[f64]) -> Result<Vec<(f64, CrbDesignOutcome)>> {
    let mut order: Vec<f64> = epsilons.to_vec();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut results: Vec<(f64, CrbDesignOutcome)> = Vec::with_capacity(order.len());
    for &eps in &order {
        let mut spec = base.clone();
        spec.epsilon0 = eps;
        let mut outcome = optimize_crb(&spec)?;
        // Any tighter feasible design is also feasible here; adopt it when
        // it achieves a lower worst-case CRB.
        for (_, prev) in &results {
            if prev.feasible && prev.worst_pd <= eps && prev.worst_crb < outcome.worst_crb {
                let eval = evaluate_design(&prev.result.matrix, &spec)?;
                outcome = CrbDesignOutcome {
                    result: DesignResult {
                        matrix: prev.result.matrix.clone(),
                        cost: eval.worst_crb,
                        starts_used: outcome.result.starts_used,
                        per_start_costs: outcome.result.per_start_costs.clone(),
                        converged: outcome.result.converged.clone(),
                    },
                    worst_crb: eval.worst_crb,
                    worst_pd: eval.worst_pd,
                    feasible: eval.worst_pd <= eps + spec.options.constraint_tol,
                    evaluation: eval,
                };
            }
        }
        results.push((eps, outcome));
    }
    results.reverse(); // loosest first, matching the input convention
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let found = results.iter().find(|(e, _)| *e == eps).expect("swept epsilon");
        out.push((eps, found.1.clone()));
    }
    Ok(out)
}
