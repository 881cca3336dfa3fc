//! Analytic performance metrics: Cramér-Rao bounds, correlation profiles
//! with sidelobe statistics, SNR comparison formulas, and a position-optimized
//! sparse-array baseline.
//!
//! Noise model: signal noise of variance `σ1²` enters before the combining
//! network and is colored by it; measurement noise of variance `σ2²` enters
//! after. The effective covariance is `R_nn = σ1² Φ Φ^H + σ2² I`.

use ndarray::{Array1, Array2};

use crate::combiner::{effective_manifold, CombiningMatrix};
use crate::error::{Error, Result};
use crate::linalg::{adjoint, cholesky, cholesky_solve, hermitian_defect, hermitian_eigen, identity};
use crate::manifold::{
    circular_distance, manifold_matrix, steering_derivative, steering_vector, wrap_angle,
    ArrayGeometry, AzimuthGrid,
};
use crate::optim::{best_start, pattern_search, run_starts, StartOutcome};
use crate::{C64, CMat, CVec};

/// Signal-noise (`σ1²`, before combining) and measurement-noise (`σ2²`,
/// after combining) variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Variance of the noise entering before the combining network.
    pub sigma1_sq: f64,
    /// Variance of the noise entering after the combining network.
    pub sigma2_sq: f64,
}

impl NoiseModel {
    /// Validated constructor; at least one variance must be positive.
    pub fn new(sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        if sigma1_sq < 0.0 || sigma2_sq < 0.0 || !sigma1_sq.is_finite() || !sigma2_sq.is_finite() {
            return Err(Error::InvalidInput("noise variances must be nonnegative".into()));
        }
        if sigma1_sq == 0.0 && sigma2_sq == 0.0 {
            return Err(Error::InvalidInput("noise variances cannot both be zero".into()));
        }
        Ok(NoiseModel { sigma1_sq, sigma2_sq })
    }

    /// Signal-noise-only model (the default split in the experiments).
    pub fn signal_only(sigma_sq: f64) -> Self {
        NoiseModel { sigma1_sq: sigma_sq, sigma2_sq: 0.0 }
    }

    /// `β = σ2²/σ1²` (requires `σ1² > 0`).
    pub fn beta(&self) -> Option<f64> {
        (self.sigma1_sq > 0.0).then(|| self.sigma2_sq / self.sigma1_sq)
    }

    /// Total per-branch noise power `σ1² + σ2²`.
    pub fn total(&self) -> f64 {
        self.sigma1_sq + self.sigma2_sq
    }

    /// Effective noise covariance `R_nn = σ1² Φ Φ^H + σ2² I` (M×M).
    pub fn covariance(&self, phi: &CombiningMatrix) -> CMat {
        let w = phi.weights();
        let mut r = w.dot(&adjoint(w)).mapv(|z| z * self.sigma1_sq);
        for i in 0..phi.n_outputs() {
            r[[i, i]] += self.sigma2_sq;
        }
        r
    }
}

/// Mainlobe definition used when separating it from the sidelobe region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainlobeDef {
    /// Between the first local minima on either side of the reference.
    NullToNull,
    /// Contiguous region with `b >= 1/√2` around the reference.
    ThreeDb,
}

/// Normalized correlation profile `b(θ, θ0)` of a design at a reference DOA.
#[derive(Debug, Clone)]
pub struct CorrelationProfile {
    /// Reference direction θ0 (radians).
    pub reference_doa: f64,
    /// Evaluation grid.
    pub grid: AzimuthGrid,
    /// `b(θ_p, θ0) ∈ [0, 1]` per grid point.
    pub values: Vec<f64>,
    /// Mainlobe half-widths (radians) to the left/right of θ0; both equal π
    /// when the mainlobe covers the whole circle.
    pub mainlobe_halfwidths: (f64, f64),
    /// Sidelobe peaks `(θ_q, height)` outside the mainlobe, in angle order,
    /// refined by 3-point parabolic interpolation.
    pub sidelobe_peaks: Vec<(f64, f64)>,
}

impl CorrelationProfile {
    /// True when `theta` falls inside the mainlobe interval.
    pub fn in_mainlobe(&self, theta: f64) -> bool {
        let d = wrap_angle(theta - self.reference_doa);
        let (dl, dr) = self.mainlobe_halfwidths;
        (-dl..=dr).contains(&d)
    }

    /// Mean height of the sidelobe peaks (0 when there are none).
    pub fn mean_sidelobe_level(&self) -> f64 {
        if self.sidelobe_peaks.is_empty() {
            return 0.0;
        }
        self.sidelobe_peaks.iter().map(|&(_, h)| h).sum::<f64>() / self.sidelobe_peaks.len() as f64
    }

    /// Highest sidelobe peak (0 when there are none).
    pub fn peak_sidelobe_level(&self) -> f64 {
        self.sidelobe_peaks.iter().map(|&(_, h)| h).fold(0.0, f64::max)
    }
}

/// Effective manifold `Ã = Φ·A` sampled on a grid, with column norms;
/// precomputed once and shared across reference directions.
#[derive(Debug, Clone)]
pub struct EffectiveGrid {
    /// `Φ·A`, shape M×P.
    pub atilde: CMat,
    /// Column norms `‖ã(θ_p)‖`.
    pub norms: Vec<f64>,
    /// The sampling grid.
    pub grid: AzimuthGrid,
    scale: f64,
}

impl EffectiveGrid {
    /// Builds `Φ·A` over the grid; errors on blind spots.
    pub fn new(phi: &CombiningMatrix, geom: &ArrayGeometry, grid: &AzimuthGrid) -> Result<Self> {
        let a = manifold_matrix(geom, grid);
        let scale = phi.frobenius_sq() * geom.n_elements() as f64;
        let atilde = effective_manifold(phi, &a)?;
        let p = grid.len();
        let mut norms = Vec::with_capacity(p);
        for j in 0..p {
            let nsq: f64 = atilde.column(j).iter().map(|z| z.norm_sqr()).sum();
            if nsq <= 1e-24 * scale {
                return Err(Error::BlindSpot { theta: grid.points()[j] });
            }
            norms.push(nsq.sqrt());
        }
        Ok(EffectiveGrid { atilde, norms, grid: grid.clone(), scale })
    }
}

/// Normalized correlation of the effective array at `theta0` against every
/// grid direction, with mainlobe detection and sidelobe peak extraction.
pub fn correlation_profile(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    grid: &AzimuthGrid,
    mainlobe_def: MainlobeDef,
) -> Result<CorrelationProfile> {
    let eg = EffectiveGrid::new(phi, geom, grid)?;
    correlation_profile_on(&eg, phi, geom, theta0, mainlobe_def)
}

/// [`correlation_profile`] against a precomputed [`EffectiveGrid`].
pub fn correlation_profile_on(
    eg: &EffectiveGrid,
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    mainlobe_def: MainlobeDef,
) -> Result<CorrelationProfile> {
    let grid = &eg.grid;
    let atilde = &eg.atilde;
    let norms = &eg.norms;
    let p = grid.len();

    let a0 = {
        let av = steering_vector(geom, theta0);
        let mut out: CVec = Array1::zeros(phi.n_outputs());
        let w = phi.weights();
        for i in 0..phi.n_outputs() {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..phi.n_inputs() {
                acc += w[[i, k]] * av[k];
            }
            out[i] = acc;
        }
        out
    };
    let n0sq: f64 = a0.iter().map(|z| z.norm_sqr()).sum();
    if n0sq <= 1e-24 * eg.scale {
        return Err(Error::BlindSpot { theta: theta0 });
    }
    let n0 = n0sq.sqrt();

    let values: Vec<f64> = (0..p)
        .map(|j| {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..phi.n_outputs() {
                acc += a0[i].conj() * atilde[[i, j]];
            }
            (acc.norm() / (n0 * norms[j])).min(1.0)
        })
        .collect();

    let idx0 = grid.nearest_index(theta0);
    let pts = grid.points();

    // Mainlobe edges by walking away from the reference.
    let (left_steps, right_steps) = match mainlobe_def {
        MainlobeDef::NullToNull => {
            let walk = |dir: isize| -> usize {
                let mut steps = 0usize;
                let mut cur = idx0 as isize;
                while steps < p {
                    let nxt = (cur + dir).rem_euclid(p as isize);
                    if values[nxt as usize] > values[cur as usize] {
                        break;
                    }
                    cur = nxt;
                    steps += 1;
                }
                steps
            };
            (walk(-1), walk(1))
        }
        MainlobeDef::ThreeDb => {
            let level = std::f64::consts::FRAC_1_SQRT_2;
            let walk = |dir: isize| -> usize {
                let mut steps = 0usize;
                let mut cur = idx0 as isize;
                while steps < p {
                    let nxt = (cur + dir).rem_euclid(p as isize);
                    if values[nxt as usize] < level {
                        break;
                    }
                    cur = nxt;
                    steps += 1;
                }
                steps
            };
            (walk(-1), walk(1))
        }
    };
    let whole_circle = left_steps + right_steps >= p;
    let halfwidth = |steps: usize, dir: f64| -> f64 {
        if whole_circle {
            std::f64::consts::PI
        } else {
            let idx = ((idx0 as isize + dir as isize * steps as isize).rem_euclid(p as isize)) as usize;
            circular_distance(pts[idx], theta0)
        }
    };
    let mainlobe = (halfwidth(left_steps, -1.0), halfwidth(right_steps, 1.0));

    // Strict local maxima outside the mainlobe, parabolic-refined.
    let mut peaks = Vec::new();
    if !whole_circle {
        let in_main = |idx: usize| -> bool {
            let d = wrap_angle(pts[idx] - theta0);
            (-mainlobe.0..=mainlobe.1).contains(&d)
        };
        for i in 0..p {
            if in_main(i) {
                continue;
            }
            let im = (i + p - 1) % p;
            let ip = (i + 1) % p;
            let (ym, y0, yp) = (values[im], values[i], values[ip]);
            if y0 > ym && y0 > yp {
                let denom = ym - 2.0 * y0 + yp;
                let (dtheta, height) = if denom < -1e-300 {
                    let delta = 0.5 * (ym - yp) / denom;
                    let delta = delta.clamp(-0.5, 0.5);
                    (delta, y0 - 0.25 * (ym - yp) * delta)
                } else {
                    (0.0, y0)
                };
                let spacing = {
                    let d1 = circular_distance(pts[ip], pts[i]);
                    let d0 = circular_distance(pts[i], pts[im]);
                    0.5 * (d0 + d1)
                };
                let theta_q = (pts[i] + dtheta * spacing).rem_euclid(std::f64::consts::TAU);
                peaks.push((theta_q, height.clamp(0.0, 1.0)));
            }
        }
    }

    Ok(CorrelationProfile {
        reference_doa: theta0,
        grid: grid.clone(),
        values,
        mainlobe_halfwidths: mainlobe,
        sidelobe_peaks: peaks,
    })
}

/// Writes a profile as CSV: a `theta,b` table followed by a peaks section.
pub fn profile_to_csv(profile: &CorrelationProfile) -> String {
    let mut out = String::from("theta,b\n");
    for (t, v) in profile.grid.points().iter().zip(&profile.values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out.push_str("peak_theta,peak_height\n");
    for (t, h) in &profile.sidelobe_peaks {
        out.push_str(&format!("{t},{h}\n"));
    }
    out
}

fn effective_column(phi: &CombiningMatrix, v: &CVec) -> CVec {
    let w = phi.weights();
    Array1::from_shape_fn(phi.n_outputs(), |i| {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..phi.n_inputs() {
            acc += w[[i, k]] * v[k];
        }
        acc
    })
}

/// Deterministic-signal CRB matrix for `K` sources (single snapshot).
///
/// `CRB = c·(2 Re{F ⊙ R_s^T})^{-1}` with `F = D̃^H Z D̃`,
/// `Z = Q - Q Ã (Ã^H Q Ã)^{-1} Ã^H Q`. With signal noise present
/// (`σ1² > 0`), `Q = (Φ Φ^H + β I_M)^{-1}`, `β = σ2²/σ1²`, and `c = σ1²`;
/// with measurement noise only, `Q = I_M` and `c = σ2²`.
pub fn crb_matrix(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    doas: &[f64],
    r_s: &CMat,
    noise: &NoiseModel,
) -> Result<Array2<f64>> {
    let k = doas.len();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    if r_s.dim() != (k, k) {
        return Err(Error::ShapeMismatch(format!(
            "signal covariance {:?} for {k} sources",
            r_s.dim()
        )));
    }
    let scale = r_s.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-300);
    if hermitian_defect(r_s) > 1e-9 * scale {
        return Err(Error::InvalidInput("signal covariance must be Hermitian".into()));
    }
    let eig = hermitian_eigen(r_s)?;
    if eig.values[k - 1] < -1e-9 * scale {
        return Err(Error::InvalidInput("signal covariance must be PSD".into()));
    }

    let m = phi.n_outputs();
    let mut atilde = Array2::zeros((m, k));
    let mut dtilde = Array2::zeros((m, k));
    for (col, &theta) in doas.iter().enumerate() {
        let av = effective_column(phi, &steering_vector(geom, theta));
        let dv = effective_column(phi, &steering_derivative(geom, theta));
        for i in 0..m {
            atilde[[i, col]] = av[i];
            dtilde[[i, col]] = dv[i];
        }
    }

    let (prefactor, q) = if noise.sigma1_sq > 0.0 {
        let beta = noise.beta().expect("sigma1 > 0");
        let w = phi.weights();
        let mut g = w.dot(&adjoint(w));
        for i in 0..m {
            g[[i, i]] += beta;
        }
        let l = cholesky(&g).map_err(|_| {
            Error::Singular("Φ·Φ^H + β·I is singular; whitening undefined".into())
        })?;
        (noise.sigma1_sq, cholesky_solve(&l, &identity(m)))
    } else {
        (noise.sigma2_sq, identity(m))
    };

    let qa = q.dot(&atilde); // M×K
    let inner = adjoint(&atilde).dot(&qa); // K×K Hermitian PD when Ã full rank
    let l_inner = cholesky(&inner)
        .map_err(|_| Error::Singular("Ã^H Q Ã is singular (coherent or degenerate scenario)".into()))?;
    let qd = q.dot(&dtilde);
    let ahqd = adjoint(&atilde).dot(&qd); // K×K
    let solve = cholesky_solve(&l_inner, &ahqd);
    let f_mat = adjoint(&dtilde).dot(&qd) - adjoint(&ahqd).dot(&solve); // D̃^H Z D̃

    // G = 2 Re{F ⊙ R_s^T}, symmetric.
    let g_real = Array2::from_shape_fn((k, k), |(i, j)| 2.0 * (f_mat[[i, j]] * r_s[[j, i]]).re);
    let g_cplx = g_real.mapv(|v| C64::new(v, 0.0));
    let l_g = cholesky(&g_cplx)
        .map_err(|_| Error::Singular("Fisher information is not positive definite".into()))?;
    let inv = cholesky_solve(&l_g, &identity(k));
    Ok(inv.mapv(|z| z.re * prefactor))
}

/// Single-source CRB `1/(2 F ρ)` where `ρ` is the source power over the
/// total per-branch noise `σ1² + σ2²`. With `σ2² = 0` this is the input SNR
/// referenced to the signal noise, and the expression reduces to the pure
/// `1/(2Fρ)` form; in general it equals the K=1 specialization of
/// [`crb_matrix`] with `R_ss = ρ·(σ1² + σ2²)`.
pub fn crb_single(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    rho: f64,
    noise: &NoiseModel,
) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("SNR must be positive, got {rho}")));
    }
    let r_ss = rho * noise.total();
    let r_s = Array2::from_elem((1, 1), C64::new(r_ss, 0.0));
    let m = crb_matrix(phi, geom, &[theta0], &r_s, noise)?;
    let v = m[[0, 0]];
    if !(v > 0.0) {
        return Err(Error::Singular(format!(
            "non-identifiable direction theta0 = {theta0}"
        )));
    }
    Ok(v)
}

/// Average-SNR ratio of a compressive array over a sparse array with the
/// same channel count: `η²N(σ1²+σ2²) / (η²N·σ1² + M·σ2²)`.
///
/// Limits: → 1 when signal noise dominates (no gain from combining);
/// → `η²N/M` when measurement noise dominates.
pub fn snr_ratio(n: usize, m: usize, eta: f64, noise: &NoiseModel) -> Result<f64> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("need 1 <= M <= N, got M={m}, N={n}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidInput(format!("efficiency must be in (0,1], got {eta}")));
    }
    if noise.total() <= 0.0 {
        return Err(Error::InvalidInput("noise variances cannot both be zero".into()));
    }
    let nn = eta * eta * n as f64;
    Ok(nn * noise.total() / (nn * noise.sigma1_sq + m as f64 * noise.sigma2_sq))
}

/// Worst-case single-source CRB over a θ0 grid.
pub fn worst_case_crb(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0_grid: &[f64],
    rho: f64,
    noise: &NoiseModel,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &t in theta0_grid {
        worst = worst.max(crb_single(phi, geom, t, rho, noise)?);
    }
    Ok(worst)
}

/// Mean sidelobe level averaged over a θ0 grid.
pub fn mean_sidelobe_over(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0_grid: &[f64],
    profile_grid: &AzimuthGrid,
    mainlobe_def: MainlobeDef,
) -> Result<f64> {
    let mut acc = 0.0;
    for &t in theta0_grid {
        acc += correlation_profile(phi, geom, t, profile_grid, mainlobe_def)?.mean_sidelobe_level();
    }
    Ok(acc / theta0_grid.len() as f64)
}

/// Uniformly spaced θ0 evaluation grid over (0, 2π].
pub fn theta0_grid(points: usize) -> Vec<f64> {
    (1..=points)
        .map(|k| std::f64::consts::TAU * k as f64 / points as f64)
        .collect()
}

/// Weights of the sparse-array design objective.
#[derive(Debug, Clone, Copy)]
pub struct SparseObjective {
    /// Weight `w` on the mean sidelobe level; `1-w` goes to the normalized
    /// worst-case CRB.
    pub sidelobe_weight: f64,
    /// θ0 grid size for both metrics.
    pub theta0_points: usize,
    /// Profile grid size for sidelobe statistics.
    pub profile_points: usize,
}

impl Default for SparseObjective {
    fn default() -> Self {
        SparseObjective { sidelobe_weight: 0.5, theta0_points: 60, profile_points: 240 }
    }
}

/// A designed sparse array plus its achieved metrics.
#[derive(Debug, Clone)]
pub struct SparseDesign {
    /// Optimized element positions.
    pub geometry: ArrayGeometry,
    /// Final objective value.
    pub objective: f64,
    /// Worst-case single-source CRB at ρ = 1 over the θ0 grid.
    pub worst_crb: f64,
    /// Mean sidelobe level over the θ0 grid.
    pub mean_sidelobe: f64,
    /// Per-start objectives.
    pub per_start_objectives: Vec<f64>,
}

/// Optimizes `m` element positions inside a disk of radius `radius_bound`
/// (wavelengths) for a weighted sum of normalized worst-case CRB and mean
/// sidelobe level, by multi-start pattern search. The baseline comparator
/// for compressive designs with the same channel count.
pub fn design_sparse_array(
    m: usize,
    radius_bound: f64,
    objective: SparseObjective,
    n_starts: usize,
    seed: u64,
) -> Result<SparseDesign> {
    if m < 2 {
        return Err(Error::InvalidInput("sparse design needs at least 2 elements".into()));
    }
    if !(radius_bound > 0.0) {
        return Err(Error::InvalidInput("radius bound must be positive".into()));
    }
    if n_starts == 0 {
        return Err(Error::InvalidInput("n_starts must be at least 1".into()));
    }
    let thetas = theta0_grid(objective.theta0_points);
    let grid = AzimuthGrid::uniform(objective.profile_points)?;
    let noise = NoiseModel::signal_only(1.0);
    let id = CombiningMatrix::identity(m);

    // Reference CRB: m-element UCA at the radius bound.
    let ref_geom = ArrayGeometry::uca(m, radius_bound)?;
    let crb_ref = worst_case_crb(&id, &ref_geom, &thetas, 1.0, &noise)?;

    let eval = |x: &[f64]| -> f64 {
        let mut positions = Vec::with_capacity(m);
        let mut penalty = 0.0;
        for i in 0..m {
            let (px, py) = (x[2 * i], x[2 * i + 1]);
            let r = (px * px + py * py).sqrt();
            if r > radius_bound {
                penalty += 100.0 * ((r - radius_bound) / radius_bound).powi(2);
            }
            positions.push([px, py]);
        }
        let geom = match ArrayGeometry::positions(positions) {
            Ok(g) => g,
            Err(_) => return f64::INFINITY,
        };
        let crb = match worst_case_crb(&id, &geom, &thetas, 1.0, &noise) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let msl = match mean_sidelobe_over(&id, &geom, &thetas, &grid, MainlobeDef::NullToNull) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        (1.0 - objective.sidelobe_weight) * crb / crb_ref
            + objective.sidelobe_weight * msl
            + penalty
    };

    let outcomes: Vec<StartOutcome<Vec<f64>>> = run_starts(n_starts, |i| {
        let mut rng = crate::rng::stream(seed, i as u64);
        let x0: Vec<f64> = (0..2 * m)
            .map(|_| {
                use rand::Rng;
                (rng.gen::<f64>() * 2.0 - 1.0) * radius_bound
            })
            .collect();
        let (x, f, done) = pattern_search(&eval, &x0, radius_bound / 4.0, 400, 1e-7);
        StartOutcome { start_index: i, cost: f, converged: done, payload: x }
    });
    let best = best_start(&outcomes)
        .ok_or_else(|| Error::OptimizationFailed("all sparse-design starts failed".into()))?;

    // Project exactly into the disk and re-evaluate honestly.
    let mut positions = Vec::with_capacity(m);
    for i in 0..m {
        let (px, py) = (outcomes[best].payload[2 * i], outcomes[best].payload[2 * i + 1]);
        let r = (px * px + py * py).sqrt();
        let scale = if r > radius_bound { radius_bound / r } else { 1.0 };
        positions.push([px * scale, py * scale]);
    }
    let geometry = ArrayGeometry::positions(positions)?;
    let worst_crb_v = worst_case_crb(&id, &geometry, &thetas, 1.0, &noise)?;
    let msl = mean_sidelobe_over(&id, &geometry, &thetas, &grid, MainlobeDef::NullToNull)?;
    let obj = (1.0 - objective.sidelobe_weight) * worst_crb_v / crb_ref
        + objective.sidelobe_weight * msl;
    Ok(SparseDesign {
        geometry,
        objective: obj,
        worst_crb: worst_crb_v,
        mean_sidelobe: msl,
        per_start_objectives: outcomes.iter().map(|o| o.cost).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::random_kernel;
    use approx::assert_abs_diff_eq;

    fn uca9() -> ArrayGeometry {
        ArrayGeometry::uca(9, 0.65).unwrap()
    }

    #[test]
    fn profile_single_element_is_all_mainlobe() {
        let geom = ArrayGeometry::uca(1, 0.65).unwrap();
        let phi = CombiningMatrix::identity(1);
        let grid = AzimuthGrid::uniform(64).unwrap();
        let prof =
            correlation_profile(&phi, &geom, 1.0, &grid, MainlobeDef::NullToNull).unwrap();
        assert!(prof.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(prof.sidelobe_peaks.is_empty());
        assert_eq!(prof.mainlobe_halfwidths, (std::f64::consts::PI, std::f64::consts::PI));
        assert!(prof.in_mainlobe(4.0));
    }

    #[test]
    fn profile_symmetry_for_uca() {
        // θ0 on an element axis: reflection symmetry of the geometry makes
        // b(θ0+Δ) = b(θ0-Δ).
        let geom = uca9();
        let phi = CombiningMatrix::identity(9);
        let grid = AzimuthGrid::uniform(360).unwrap();
        let theta0 = std::f64::consts::TAU * 3.0 / 9.0;
        let prof =
            correlation_profile(&phi, &geom, theta0, &grid, MainlobeDef::NullToNull).unwrap();
        let idx0 = grid.nearest_index(theta0);
        for d in 1..120 {
            let a = prof.values[(idx0 + d) % 360];
            let b = prof.values[(idx0 + 360 - d) % 360];
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        // b(θ0, θ0) = 1 at the reference grid point.
        assert_abs_diff_eq!(prof.values[idx0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn profile_peaks_invariant_under_global_phase() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 33).unwrap();
        let rotated = CombiningMatrix::unconstrained(
            phi.weights().mapv(|z| z * C64::from_polar(1.0, 1.234)),
        );
        let grid = AzimuthGrid::uniform(360).unwrap();
        let p1 = correlation_profile(&phi, &geom, 0.7, &grid, MainlobeDef::NullToNull).unwrap();
        let p2 =
            correlation_profile(&rotated, &geom, 0.7, &grid, MainlobeDef::NullToNull).unwrap();
        assert_eq!(p1.sidelobe_peaks.len(), p2.sidelobe_peaks.len());
        for (a, b) in p1.sidelobe_peaks.iter().zip(&p2.sidelobe_peaks) {
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn profile_3db_narrower_than_null_to_null() {
        let geom = uca9();
        let phi = CombiningMatrix::identity(9);
        let grid = AzimuthGrid::uniform(720).unwrap();
        let nn = correlation_profile(&phi, &geom, 1.0, &grid, MainlobeDef::NullToNull).unwrap();
        let db = correlation_profile(&phi, &geom, 1.0, &grid, MainlobeDef::ThreeDb).unwrap();
        assert!(db.mainlobe_halfwidths.0 <= nn.mainlobe_halfwidths.0 + 1e-12);
        assert!(db.mainlobe_halfwidths.1 <= nn.mainlobe_halfwidths.1 + 1e-12);
        assert!(!nn.sidelobe_peaks.is_empty());
    }

    #[test]
    fn blind_spot_reported() {
        let geom = uca9();
        let phi = CombiningMatrix::unconstrained(Array2::zeros((3, 9)));
        let grid = AzimuthGrid::uniform(90).unwrap();
        match correlation_profile(&phi, &geom, 1.0, &grid, MainlobeDef::NullToNull) {
            Err(Error::BlindSpot { .. }) => {}
            other => panic!("expected blind spot, got {other:?}"),
        }
    }

    #[test]
    fn crb_single_equals_matrix_and_scales() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 21).unwrap();
        let noise = NoiseModel::signal_only(1.0);
        let rho = 1.0;
        let single = crb_single(&phi, &geom, 1.1, rho, &noise).unwrap();
        let r_s = Array2::from_elem((1, 1), C64::new(rho * noise.total(), 0.0));
        let matrix = crb_matrix(&phi, &geom, &[1.1], &r_s, &noise).unwrap();
        assert_abs_diff_eq!(single, matrix[[0, 0]], epsilon = 1e-12 * single);

        // Exact 1/ρ scaling: doubling power halves the bound.
        let double = crb_single(&phi, &geom, 1.1, 2.0 * rho, &noise).unwrap();
        assert_abs_diff_eq!(double, 0.5 * single, epsilon = 1e-12 * single);
    }

    #[test]
    fn crb_matches_finite_difference_derivatives() {
        // Replace the analytic steering derivative by central differences
        // and rebuild the single-source CRB from scratch.
        let geom = uca9();
        let phi = random_kernel(5, 9, 4).unwrap();
        let noise = NoiseModel { sigma1_sq: 0.7, sigma2_sq: 0.3 };
        let theta0 = 2.3;
        let rho = 2.0;
        let crb = crb_single(&phi, &geom, theta0, rho, &noise).unwrap();

        let h = 1e-6;
        let ap = steering_vector(&geom, theta0 + h);
        let am = steering_vector(&geom, theta0 - h);
        let dfd: CVec = Array1::from_shape_fn(9, |i| (ap[i] - am[i]) / C64::new(2.0 * h, 0.0));
        let a0 = steering_vector(&geom, theta0);
        let at = effective_column(&phi, &a0);
        let dt = effective_column(&phi, &dfd);

        let m = phi.n_outputs();
        let beta = noise.beta().unwrap();
        let w = phi.weights();
        let mut g = w.dot(&adjoint(w));
        for i in 0..m {
            g[[i, i]] += beta;
        }
        let q = crate::linalg::hermitian_inverse(&g).unwrap();
        let qa: CVec = Array1::from_shape_fn(m, |i| {
            (0..m).map(|k| q[[i, k]] * at[k]).sum()
        });
        let denom: C64 = at.iter().zip(qa.iter()).map(|(a, b)| a.conj() * b).sum();
        let qd: CVec = Array1::from_shape_fn(m, |i| (0..m).map(|k| q[[i, k]] * dt[k]).sum());
        let dqd: C64 = dt.iter().zip(qd.iter()).map(|(a, b)| a.conj() * b).sum();
        let aqd: C64 = at.iter().zip(qd.iter()).map(|(a, b)| a.conj() * b).sum();
        let f = dqd.re - (aqd.conj() * aqd / denom).re;
        let r_ss = rho * noise.total();
        let crb_fd = noise.sigma1_sq / (2.0 * f * r_ss);
        assert_abs_diff_eq!(crb, crb_fd, epsilon = 1e-5 * crb);
    }

    #[test]
    fn crb_invariant_under_unitary_for_signal_noise() {
        let geom = uca9();
        let phi = CombiningMatrix::identity(9);
        let noise = NoiseModel::signal_only(1.0);
        let crb0 = crb_single(&phi, &geom, 0.9, 1.0, &noise).unwrap();
        // Random unitary from a Hermitian eigenbasis.
        let h = {
            let mut rng = crate::rng::stream(17, 0);
            use rand::Rng;
            let g: CMat = Array2::from_shape_fn((9, 9), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            &g + &adjoint(&g)
        };
        let u = hermitian_eigen(&h).unwrap().vectors;
        let rotated = CombiningMatrix::unconstrained(u.dot(phi.weights()));
        let crb1 = crb_single(&rotated, &geom, 0.9, 1.0, &noise).unwrap();
        assert_abs_diff_eq!(crb0, crb1, epsilon = 1e-12 * crb0.max(crb1));
    }

    #[test]
    fn crb_two_source_matrix_is_spd() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 8).unwrap();
        let noise = NoiseModel::signal_only(1.0);
        let s = [C64::new(1.0, 0.0), C64::new(0.5, 0.0)];
        let r_s = Array2::from_shape_fn((2, 2), |(i, j)| s[i] * s[j].conj());
        let crb = crb_matrix(&phi, &geom, &[1.0, 1.4], &r_s, &noise).unwrap();
        assert!((crb[[0, 1]] - crb[[1, 0]]).abs() < 1e-12);
        assert!(crb[[0, 0]] > 0.0 && crb[[1, 1]] > 0.0);
        assert!(crb[[0, 0]] * crb[[1, 1]] - crb[[0, 1]] * crb[[1, 0]] > 0.0);
    }

    #[test]
    fn crb_rejects_degenerate() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 8).unwrap();
        let noise = NoiseModel::signal_only(1.0);
        let r_s = Array2::from_elem((2, 2), C64::new(1.0, 0.0));
        // Identical DOAs make Ã rank deficient.
        assert!(crb_matrix(&phi, &geom, &[1.0, 1.0], &r_s, &noise).is_err());
        assert!(crb_single(&phi, &geom, 1.0, 0.0, &noise).is_err());
    }

    #[test]
    fn snr_ratio_formula_and_limits() {
        // N=9, M=5, η=1, σ1²=σ2²: ratio = 9/(9/2 + 5/2) = 9/7.
        let noise = NoiseModel { sigma1_sq: 1.0, sigma2_sq: 1.0 };
        let r = snr_ratio(9, 5, 1.0, &noise).unwrap();
        assert_abs_diff_eq!(r, 9.0 / 7.0, epsilon = 1e-14);

        // Signal noise dominant → 1.
        let noise = NoiseModel { sigma1_sq: 1e8, sigma2_sq: 1.0 };
        let r = snr_ratio(9, 5, 0.9, &noise).unwrap();
        assert!((r - 1.0).abs() <= 1e-6, "ratio {r}");

        // Measurement noise dominant → η²N/M.
        let noise = NoiseModel { sigma1_sq: 1.0, sigma2_sq: 1e8 };
        let want = 0.81 * 9.0 / 5.0;
        let r = snr_ratio(9, 5, 0.9, &noise).unwrap();
        assert!((r - want).abs() <= 1e-6 * want, "ratio {r}");

        assert!(snr_ratio(9, 5, 1.0, &NoiseModel { sigma1_sq: 0.0, sigma2_sq: 0.0 }).is_err());
        assert!(snr_ratio(5, 9, 1.0, &NoiseModel::signal_only(1.0)).is_err());
    }

    #[test]
    fn two_element_crb_improves_with_separation() {
        // Wider apertures lower the worst-case CRB: sweep separations.
        let noise = NoiseModel::signal_only(1.0);
        let id = CombiningMatrix::identity(2);
        let thetas = theta0_grid(24);
        let mut last = f64::INFINITY;
        for sep in [0.2, 0.4, 0.8, 1.3] {
            let geom = ArrayGeometry::positions(vec![[-sep / 2.0, 0.0], [sep / 2.0, 0.0]]).unwrap();
            let crb = worst_case_crb(&id, &geom, &thetas, 1.0, &noise).unwrap();
            assert!(crb < last, "sep {sep}: {crb} !< {last}");
            last = crb;
        }
    }

    #[test]
    fn sparse_designer_is_deterministic() {
        let obj = SparseObjective { theta0_points: 12, profile_points: 96, ..Default::default() };
        let a = design_sparse_array(3, 0.65, obj, 2, 5).unwrap();
        let b = design_sparse_array(3, 0.65, obj, 2, 5).unwrap();
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        // Elements stay in the disk.
        for p in a.geometry.element_positions() {
            assert!((p[0] * p[0] + p[1] * p[1]).sqrt() <= 0.65 + 1e-12);
        }
    }
}
