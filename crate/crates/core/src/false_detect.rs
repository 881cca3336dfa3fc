//! Analytic false-detection probability.
//!
//! A false detection happens when the beamformer spectrum peaks at a
//! sidelobe direction `θ_q` instead of the mainlobe around the true `θ_0`.
//! For a single snapshot the difference statistic
//! `X_q = D(θ_0) - D(θ_q) = ỹ^H (ã_0 ã_0^H - ã_q ã_q^H) ỹ`
//! is a non-central indefinite quadratic form in complex Gaussians: after
//! whitening by `R_nn^{1/2}` it has at most two nonzero eigenvalues. Its
//! MGF is known in closed form, `P(X_q < 0)` follows from a contour
//! integral of `Ψ(s)/s` evaluated by Gauss-Chebyshev quadrature along the
//! vertical line through the saddle point, and the per-sidelobe terms are
//! combined by the union bound.
//!
//! Contour convention: the probability of a *negative* `X_q` needs the
//! contour in the half-plane `Re s < 0`, so the quadrature samples
//! `Ψ(-s_p(1 + j·tan(τ/2)))` with `s_p > 0` the stationary point of
//! `ln Ψ(-σ) - ln σ` on `(0, -1/λ_min)`. The opposite pairing (positive
//! axis) computes `P(X_q > 0)` instead; both are implemented behind
//! [`ContourSide`] and the Monte Carlo oracle in the tests pins the default.

use ndarray::{Array1, Array2};

use crate::combiner::CombiningMatrix;
use crate::error::{Error, Result};
use crate::linalg::{frob_norm, hermitian_eigen, psd_sqrt_pair};
use crate::manifold::{steering_vector, ArrayGeometry, AzimuthGrid};
use crate::performance::{CorrelationProfile, MainlobeDef, NoiseModel};
use crate::{C64, CMat, CVec};

/// Eigenvalues and non-centrality parameters of the whitened difference
/// statistic for one (θ0, θq) pair.
#[derive(Debug, Clone)]
pub struct QuadraticFormSpec {
    /// Nonzero eigenvalues `λ_r` of `B = R^{1/2} D R^{1/2}` (at most 2).
    pub eigenvalues: Vec<f64>,
    /// Squared moduli of the non-centrality parameters `|μ_r|²`.
    pub noncentrality: Vec<f64>,
    /// The (θ0, θq) pair this spec was built from.
    pub provenance: (f64, f64),
}

/// Sign structure of the retained spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    /// Both signs present: the generic case.
    Indefinite,
    /// Only positive eigenvalues: `X ≥ 0` almost surely.
    AllPositive,
    /// Only negative eigenvalues: `X ≤ 0` almost surely.
    AllNegative,
    /// No retained eigenvalues: `D(θ0)` and `D(θq)` are identical.
    Degenerate,
}

impl QuadraticFormSpec {
    /// Classifies the retained spectrum.
    pub fn kind(&self) -> SpectrumKind {
        let pos = self.eigenvalues.iter().any(|&l| l > 0.0);
        let neg = self.eigenvalues.iter().any(|&l| l < 0.0);
        match (pos, neg) {
            (true, true) => SpectrumKind::Indefinite,
            (true, false) => SpectrumKind::AllPositive,
            (false, true) => SpectrumKind::AllNegative,
            (false, false) => SpectrumKind::Degenerate,
        }
    }

    /// Mean and variance of `X_q` from the MGF:
    /// `E[X] = Σ λ_r (1 + |μ_r|²)`, `Var[X] = Σ λ_r² (1 + 2|μ_r|²)`.
    pub fn moments(&self) -> (f64, f64) {
        let mean = self
            .eigenvalues
            .iter()
            .zip(&self.noncentrality)
            .map(|(&l, &m)| l * (1.0 + m))
            .sum();
        let var = self
            .eigenvalues
            .iter()
            .zip(&self.noncentrality)
            .map(|(&l, &m)| l * l * (1.0 + 2.0 * m))
            .sum();
        (mean, var)
    }
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

/// Mean of the combined observation, `r = Σ_k ã_k s_k`.
pub fn mean_vector(phi: &CombiningMatrix, geom: &ArrayGeometry, sources: &[(f64, C64)]) -> CVec {
    let m = phi.n_outputs();
    let mut r: CVec = Array1::zeros(m);
    for &(theta, s) in sources {
        let ak = effective_column(phi, &steering_vector(geom, theta));
        for i in 0..m {
            r[i] += ak[i] * s;
        }
    }
    r
}

/// Hermitian square root and inverse square root of the effective noise
/// covariance, computed once per combining matrix.
#[derive(Debug, Clone)]
pub struct NoiseWhitener {
    /// `R_nn^{1/2}`.
    pub r_half: CMat,
    /// `R_nn^{-1/2}`.
    pub r_inv_half: CMat,
}

impl NoiseWhitener {
    /// Fails when `R_nn = σ1² Φ Φ^H + σ2² I` is (numerically) singular.
    pub fn new(noise: &NoiseModel, phi: &CombiningMatrix) -> Result<Self> {
        let (r_half, r_inv_half) = psd_sqrt_pair(&noise.covariance(phi))
            .map_err(|e| Error::Singular(format!("noise covariance not PD: {e}")))?;
        Ok(NoiseWhitener { r_half, r_inv_half })
    }
}

fn spec_from_vectors(
    a0: &CVec,
    aq: &CVec,
    r: &CVec,
    wh: &NoiseWhitener,
    provenance: (f64, f64),
) -> Result<QuadraticFormSpec> {
    let m = a0.len();
    let (r_half, r_inv_half) = (&wh.r_half, &wh.r_inv_half);
    // B = R^{1/2} (a0 a0^H - aq aq^H) R^{1/2} via the transformed vectors.
    let b0: CVec = Array1::from_shape_fn(m, |i| {
        (0..m).map(|k| r_half[[i, k]] * a0[k]).sum()
    });
    let bq: CVec = Array1::from_shape_fn(m, |i| {
        (0..m).map(|k| r_half[[i, k]] * aq[k]).sum()
    });
    let mut b: CMat = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            b[[i, j]] = b0[i] * b0[j].conj() - bq[i] * bq[j].conj();
        }
    }
    let scale = frob_norm(&b);
    let eig = hermitian_eigen(&b)?;
    // Whitened mean.
    let rw: CVec = Array1::from_shape_fn(m, |i| {
        (0..m).map(|k| r_inv_half[[i, k]] * r[k]).sum()
    });

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for k in 0..m {
        let lam = eig.values[k];
        if lam.abs() <= 1e-12 * scale {
            continue;
        }
        let mu: C64 = (0..m).map(|i| eig.vectors[[i, k]].conj() * rw[i]).sum();
        pairs.push((lam, mu.norm_sqr()));
    }
    // Rank of D is at most 2; numerically keep the two largest magnitudes.
    pairs.sort_by(|a, b| b.0.abs().partial_cmp(&a.0.abs()).unwrap());
    pairs.truncate(2);
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Ok(QuadraticFormSpec {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        noncentrality: pairs.iter().map(|p| p.1).collect(),
        provenance,
    })
}

/// Quadratic-form spec of `D(θ0) - D(θq)` with the unnormalized beamformer
/// statistic `D(θ) = |ã(θ)^H ỹ|²` (the appendix convention).
pub fn build_quadratic_spec(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    theta_q: f64,
    sources: &[(f64, C64)],
    noise: &NoiseModel,
) -> Result<QuadraticFormSpec> {
    let a0 = effective_column(phi, &steering_vector(geom, theta0));
    let aq = effective_column(phi, &steering_vector(geom, theta_q));
    let r = mean_vector(phi, geom, sources);
    let wh = NoiseWhitener::new(noise, phi)?;
    spec_from_vectors(&a0, &aq, &r, &wh, (theta0, theta_q))
}

/// Same statistic with unit-gain steering columns `ã/‖ã‖`, matching the
/// normalized beamformer spectrum used for estimation. The observation and
/// its mean are unchanged; only the test statistic is rescaled, which
/// matters exactly when `‖ã(θ0)‖ ≠ ‖ã(θq)‖`.
pub fn build_quadratic_spec_unit_gain(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    theta_q: f64,
    sources: &[(f64, C64)],
    noise: &NoiseModel,
) -> Result<QuadraticFormSpec> {
    let wh = NoiseWhitener::new(noise, phi)?;
    let r = mean_vector(phi, geom, sources);
    spec_unit_gain_with(phi, geom, theta0, theta_q, &r, &wh)
}

fn spec_unit_gain_with(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    theta_q: f64,
    r: &CVec,
    wh: &NoiseWhitener,
) -> Result<QuadraticFormSpec> {
    let mut a0 = effective_column(phi, &steering_vector(geom, theta0));
    let mut aq = effective_column(phi, &steering_vector(geom, theta_q));
    let n0 = a0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nq = aq.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n0 <= 0.0 {
        return Err(Error::BlindSpot { theta: theta0 });
    }
    if nq <= 0.0 {
        return Err(Error::BlindSpot { theta: theta_q });
    }
    for z in a0.iter_mut() {
        *z /= n0;
    }
    for z in aq.iter_mut() {
        *z /= nq;
    }
    spec_from_vectors(&a0, &aq, r, wh, (theta0, theta_q))
}

/// Moment generating function
/// `Ψ(s) = exp(Σ |μ_r|² λ_r s/(1-λ_r s)) / Π (1-λ_r s)`.
pub fn mgf(spec: &QuadraticFormSpec, s: C64) -> Result<C64> {
    let mut log_num = C64::new(0.0, 0.0);
    let mut den = C64::new(1.0, 0.0);
    for (&lam, &mu2) in spec.eigenvalues.iter().zip(&spec.noncentrality) {
        let one_minus = C64::new(1.0, 0.0) - s * lam;
        if one_minus.norm() < 1e-14 {
            return Err(Error::DegenerateSpectrum(format!(
                "MGF evaluated at pole 1/λ for λ = {lam}"
            )));
        }
        log_num += s * lam * mu2 / one_minus;
        den *= one_minus;
    }
    Ok(log_num.exp() / den)
}

/// First and second derivatives of `g(σ) = ln Ψ(-σ) - ln σ` on the negative
/// contour parametrized by `σ > 0`.
fn log_integrand_derivs(spec: &QuadraticFormSpec, sigma: f64) -> (f64, f64) {
    let mut g1 = -1.0 / sigma;
    let mut g2 = 1.0 / (sigma * sigma);
    for (&lam, &mu2) in spec.eigenvalues.iter().zip(&spec.noncentrality) {
        let d = 1.0 + lam * sigma;
        g1 += -mu2 * lam / (d * d) - lam / d;
        g2 += 2.0 * mu2 * lam * lam / (d * d * d) + lam * lam / (d * d);
    }
    (g1, g2)
}

/// Saddle point `s_p > 0` of the inversion integrand for `P(X < 0)`: the
/// minimizer of `ln(Ψ(-σ)/σ)` over `σ ∈ (0, -1/λ_min)`, found by Newton
/// iteration from the interval midpoint with bisection safeguarding.
/// Stationarity is driven to `|g'(s_p)| ≤ 1e-10`.
pub fn saddle_point(spec: &QuadraticFormSpec) -> Result<f64> {
    let lam_min = spec.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lam_min < 0.0) {
        return Err(Error::DegenerateSpectrum(
            "saddle point needs at least one negative eigenvalue".into(),
        ));
    }
    let sigma_max = -1.0 / lam_min;
    let mut lo = 0.0f64;
    let mut hi = sigma_max;
    // Shrink the endpoints until the derivative signs bracket the root.
    let mut lo_in = sigma_max * 1e-12;
    while log_integrand_derivs(spec, lo_in).0 >= 0.0 && lo_in > f64::MIN_POSITIVE {
        lo_in *= 0.5;
    }
    let mut hi_in = sigma_max * (1.0 - 1e-12);
    while log_integrand_derivs(spec, hi_in).0 <= 0.0 && sigma_max - hi_in > f64::MIN_POSITIVE {
        hi_in = 0.5 * (hi_in + sigma_max);
    }
    if !(log_integrand_derivs(spec, lo_in).0 < 0.0 && log_integrand_derivs(spec, hi_in).0 > 0.0) {
        return Err(Error::DegenerateSpectrum("saddle bracket not found".into()));
    }
    lo = lo.max(lo_in);
    hi = hi.min(hi_in);

    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g1, g2) = log_integrand_derivs(spec, sigma);
        if g1.abs() <= 1e-10 {
            return Ok(sigma);
        }
        if g1 > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let newton = sigma - g1 / g2;
        sigma = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let (g1, _) = log_integrand_derivs(spec, sigma);
    if g1.abs() <= 1e-8 {
        Ok(sigma)
    } else {
        Err(Error::DegenerateSpectrum(format!(
            "saddle Newton did not converge (residual {g1:.3e})"
        )))
    }
}

/// Which half-plane the inversion contour runs through. The printed formula
/// leaves the sign ambiguous; [`ContourSide::NegativeAxis`] is the reading
/// that matches `Prob(X < 0)` and is frozen as the default by the Monte
/// Carlo oracle test. The positive pairing computes `Prob(X > 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContourSide {
    /// Contour through `-s_p`: direct evaluation of `P(X < 0)`.
    NegativeAxis,
    /// Contour through `+s_p` (positive-side saddle): evaluates `P(X > 0)`.
    PositiveAxis,
}

/// Frozen convention selected by the oracle.
pub const CONTOUR_CONVENTION: ContourSide = ContourSide::NegativeAxis;

/// Positive-axis saddle: minimizer of `ln(Ψ(σ)/σ)` over `(0, 1/λ_max)`.
fn saddle_point_positive(spec: &QuadraticFormSpec) -> Result<f64> {
    let reflected = QuadraticFormSpec {
        eigenvalues: spec.eigenvalues.iter().map(|l| -l).collect(),
        noncentrality: spec.noncentrality.clone(),
        provenance: spec.provenance,
    };
    saddle_point(&reflected)
}

fn chebyshev_sum(spec: &QuadraticFormSpec, s_p: f64, g_order: usize, side: ContourSide) -> Result<f64> {
    let sign = match side {
        ContourSide::NegativeAxis => -1.0,
        ContourSide::PositiveAxis => 1.0,
    };
    let mut acc = 0.0;
    for g in 1..=g_order {
        let tau = (2.0 * g as f64 - 1.0) * std::f64::consts::PI / (2.0 * g_order as f64);
        let t = (tau / 2.0).tan();
        let s = C64::new(sign * s_p, sign * s_p * t);
        let val = C64::new(1.0, -t) * mgf(spec, s)?;
        acc += val.re;
    }
    Ok(acc / (2.0 * g_order as f64))
}

/// `P_q = Prob(X_q < 0)` by saddle-point Gauss-Chebyshev quadrature with
/// `g_order` nodes, using the frozen contour convention. Degenerate spectra
/// short-circuit: no eigenvalues → 1/2, single-signed spectra → 0 or 1.
pub fn pq(spec: &QuadraticFormSpec, g_order: usize) -> Result<f64> {
    pq_with_convention(spec, g_order, CONTOUR_CONVENTION)
}

/// `P_q` under an explicit contour convention (kept for the oracle test
/// that pins [`CONTOUR_CONVENTION`]).
pub fn pq_with_convention(
    spec: &QuadraticFormSpec,
    g_order: usize,
    side: ContourSide,
) -> Result<f64> {
    if g_order == 0 {
        return Err(Error::InvalidInput("quadrature order must be positive".into()));
    }
    match spec.kind() {
        SpectrumKind::Degenerate => return Ok(0.5),
        SpectrumKind::AllPositive => return Ok(0.0),
        SpectrumKind::AllNegative => return Ok(1.0),
        SpectrumKind::Indefinite => {}
    }
    let p = match side {
        ContourSide::NegativeAxis => {
            let s_p = saddle_point(spec)?;
            chebyshev_sum(spec, s_p, g_order, side)?
        }
        ContourSide::PositiveAxis => {
            let s_p = saddle_point_positive(spec)?;
            chebyshev_sum(spec, s_p, g_order, side)?
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

/// `P_q` along with the quadrature refinement gap `|pq(G) - pq(2G)|`.
pub fn pq_with_refinement(spec: &QuadraticFormSpec, g_order: usize) -> Result<(f64, f64)> {
    let p = pq(spec, g_order)?;
    let p2 = pq(spec, 2 * g_order)?;
    Ok((p, (p - p2).abs()))
}

/// One sidelobe's contribution to the union bound.
#[derive(Debug, Clone)]
pub struct SidelobeTerm {
    /// Sidelobe peak direction (radians).
    pub theta: f64,
    /// Peak height `b(θ_q, θ0)`.
    pub height: f64,
    /// `Prob(D(θ0) - D(θ_q) < 0)`.
    pub p_q: f64,
    /// Saddle point used (absent for degenerate spectra).
    pub saddle: Option<f64>,
}

/// Union-bound false-detection report at one reference direction.
#[derive(Debug, Clone)]
pub struct PdReport {
    /// Per-sidelobe terms sorted by descending peak height.
    pub per_sidelobe: Vec<SidelobeTerm>,
    /// `min(1, Σ_q P_q)`.
    pub union_bound: f64,
    /// Quadrature order used.
    pub quadrature_order: usize,
    /// Largest `|pq(G) - pq(2G)|` over the sidelobe terms.
    pub quadrature_delta: f64,
    /// The correlation profile the peaks came from.
    pub profile: CorrelationProfile,
}

impl PdReport {
    /// CSV rows `theta_q,height,p_q` followed by a `p_d` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_q,height,p_q\n");
        for t in &self.per_sidelobe {
            out.push_str(&format!("{},{},{}\n", t.theta, t.height, t.p_q));
        }
        out.push_str(&format!("p_d,{},\n", self.union_bound));
        out
    }
}

/// Union bound over the sidelobe peaks of the correlation profile around
/// `theta0`, with the normalized (unit-gain) beamformer statistic.
///
/// `sources` are `(doa, complex amplitude)` pairs; the first entry is the
/// reference (strongest) source whose mainlobe defines a correct detection.
#[allow(clippy::too_many_arguments)]
pub fn union_bound_pd(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    sources: &[(f64, C64)],
    noise: &NoiseModel,
    g_order: usize,
    mainlobe_def: MainlobeDef,
    grid: &AzimuthGrid,
) -> Result<PdReport> {
    let eg = crate::performance::EffectiveGrid::new(phi, geom, grid)?;
    let wh = NoiseWhitener::new(noise, phi)?;
    union_bound_pd_on(&eg, &wh, phi, geom, theta0, sources, g_order, mainlobe_def)
}

/// [`union_bound_pd`] against precomputed grid and whitener, for callers
/// (design loops) that sweep many reference directions per matrix.
#[allow(clippy::too_many_arguments)]
pub fn union_bound_pd_on(
    eg: &crate::performance::EffectiveGrid,
    wh: &NoiseWhitener,
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    sources: &[(f64, C64)],
    g_order: usize,
    mainlobe_def: MainlobeDef,
) -> Result<PdReport> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    let profile =
        crate::performance::correlation_profile_on(eg, phi, geom, theta0, mainlobe_def)?;
    let r = mean_vector(phi, geom, sources);
    let mut terms = Vec::with_capacity(profile.sidelobe_peaks.len());
    let mut total = 0.0;
    let mut delta_max = 0.0f64;
    for &(theta_q, height) in &profile.sidelobe_peaks {
        let spec = spec_unit_gain_with(phi, geom, theta0, theta_q, &r, wh)?;
        let saddle = match spec.kind() {
            SpectrumKind::Indefinite => Some(saddle_point(&spec)?),
            _ => None,
        };
        let (p_q, delta) = pq_with_refinement(&spec, g_order)?;
        delta_max = delta_max.max(delta);
        total += p_q;
        terms.push(SidelobeTerm { theta: theta_q, height, p_q, saddle });
    }
    terms.sort_by(|a, b| b.height.partial_cmp(&a.height).unwrap());
    Ok(PdReport {
        per_sidelobe: terms,
        union_bound: total.min(1.0),
        quadrature_order: g_order,
        quadrature_delta: delta_max,
        profile,
    })
}

/// Monte Carlo estimate of `Prob(D(θ0) - D(θq) < 0)` by direct simulation
/// of the single-snapshot observation; the independent oracle for [`pq`].
/// Returns the estimate and its binomial standard error.
#[allow(clippy::too_many_arguments)]
pub fn empirical_prob_negative(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    theta0: f64,
    theta_q: f64,
    sources: &[(f64, C64)],
    noise: &NoiseModel,
    unit_gain: bool,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let m = phi.n_outputs();
    let mut a0 = effective_column(phi, &steering_vector(geom, theta0));
    let mut aq = effective_column(phi, &steering_vector(geom, theta_q));
    if unit_gain {
        let n0 = a0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nq = aq.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in a0.iter_mut() {
            *z /= n0;
        }
        for z in aq.iter_mut() {
            *z /= nq;
        }
    }
    let r = mean_vector(phi, geom, sources);
    let (r_half, _) = psd_sqrt_pair(&noise.covariance(phi))?;

    let hits: u64 = (0..draws)
        .map(|trial| {
            let mut rng = crate::rng::stream(seed, trial as u64);
            let z: CVec =
                Array1::from_shape_fn(m, |_| crate::rng::complex_standard_normal(&mut rng));
            let mut d0 = C64::new(0.0, 0.0);
            let mut dq = C64::new(0.0, 0.0);
            for i in 0..m {
                let mut yi = r[i];
                for k in 0..m {
                    yi += r_half[[i, k]] * z[k];
                }
                d0 += a0[i].conj() * yi;
                dq += aq[i].conj() * yi;
            }
            u64::from(d0.norm_sqr() < dq.norm_sqr())
        })
        .sum();
    let p = hits as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    Ok((p, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::random_kernel;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn uca9() -> ArrayGeometry {
        ArrayGeometry::uca(9, 0.65).unwrap()
    }

    fn spec_of(lams: &[f64], mus: &[f64]) -> QuadraticFormSpec {
        QuadraticFormSpec {
            eigenvalues: lams.to_vec(),
            noncentrality: mus.to_vec(),
            provenance: (0.0, 0.0),
        }
    }

    #[test]
    fn degenerate_spec_is_empty() {
        let geom = uca9();
        let phi = CombiningMatrix::identity(9);
        let noise = NoiseModel::signal_only(1.0);
        let sources = [(1.0, C64::new(1.0, 0.0))];
        // θq = θ0 gives D = 0: no retained eigenvalues, P_q = 1/2.
        let spec = build_quadratic_spec(&phi, &geom, 1.0, 1.0, &sources, &noise).unwrap();
        assert!(spec.eigenvalues.is_empty());
        assert_eq!(spec.kind(), SpectrumKind::Degenerate);
        assert_eq!(pq(&spec, 64).unwrap(), 0.5);
    }

    #[test]
    fn orthogonal_steering_eigenvalues() {
        // With ã0 ⊥ ãq and white noise σ², B's eigenvalues are σ²‖ã0‖² and
        // -σ²‖ãq‖², and |μ1|² = ‖ã0‖²|s0|²/σ².
        let m = 4;
        let mut w: CMat = Array2::zeros((m, 8));
        w[[0, 0]] = C64::new(1.0, 0.0);
        w[[1, 1]] = C64::new(1.0, 0.0);
        w[[2, 2]] = C64::new(1.0, 0.0);
        w[[3, 3]] = C64::new(1.0, 0.0);
        let phi = CombiningMatrix::unconstrained(w);
        // Orthogonal effective vectors by construction: a0 -> e0·c0, aq -> e1·cq.
        let a0: CVec = Array1::from_shape_fn(m, |i| {
            if i == 0 {
                C64::new(2.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let aq: CVec = Array1::from_shape_fn(m, |i| {
            if i == 1 {
                C64::new(0.0, 1.5)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let sigma_sq = 0.7;
        let s0 = C64::new(1.3, 0.4);
        let r: CVec = a0.mapv(|z| z * s0);
        let r_nn = crate::linalg::identity(m).mapv(|z| z * sigma_sq);
        let (r_half, r_inv_half) = psd_sqrt_pair(&r_nn).unwrap();
        let wh = NoiseWhitener { r_half, r_inv_half };
        let spec = spec_from_vectors(&a0, &aq, &r, &wh, (0.0, 0.0)).unwrap();
        assert_eq!(spec.eigenvalues.len(), 2);
        assert_abs_diff_eq!(spec.eigenvalues[0], sigma_sq * 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(spec.eigenvalues[1], -sigma_sq * 2.25, epsilon = 1e-10);
        // μ for the positive branch: u1 = e0 → |μ1|² = |r0|²/σ² = 4|s0|²/σ².
        assert_abs_diff_eq!(
            spec.noncentrality[0],
            4.0 * s0.norm_sqr() / sigma_sq,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(spec.noncentrality[1], 0.0, epsilon = 1e-12);
        let _ = phi;
    }

    #[test]
    fn trace_identity() {
        // Σ λ_r = tr(B) = σ²(‖ã0‖² - ‖ãq‖²) for white noise.
        let geom = uca9();
        let phi = random_kernel(5, 9, 3).unwrap();
        let noise = NoiseModel { sigma1_sq: 0.0, sigma2_sq: 0.9 };
        let sources = [(1.0, C64::new(1.0, 0.0))];
        let spec = build_quadratic_spec(&phi, &geom, 1.0, 2.4, &sources, &noise).unwrap();
        let a0 = effective_column(&phi, &steering_vector(&geom, 1.0));
        let aq = effective_column(&phi, &steering_vector(&geom, 2.4));
        let want = 0.9
            * (a0.iter().map(|z| z.norm_sqr()).sum::<f64>()
                - aq.iter().map(|z| z.norm_sqr()).sum::<f64>());
        let got: f64 = spec.eigenvalues.iter().sum();
        assert_abs_diff_eq!(got, want, epsilon = 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn mgf_basics() {
        let spec = spec_of(&[0.8, -0.5], &[2.0, 0.3]);
        // Ψ(0) = 1 exactly.
        let one = mgf(&spec, C64::new(0.0, 0.0)).unwrap();
        assert_eq!(one, C64::new(1.0, 0.0));
        // Central single-eigenvalue case: Ψ(s) = 1/(1-λs).
        let central = spec_of(&[0.8], &[0.0]);
        let s = C64::new(0.3, 0.2);
        let got = mgf(&central, s).unwrap();
        let want = C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) - s * 0.8);
        assert!((got - want).norm() < 1e-14);
        // Pole evaluation errors.
        assert!(mgf(&central, C64::new(1.0 / 0.8, 0.0)).is_err());
    }

    #[test]
    fn mgf_moments_match_monte_carlo() {
        let spec = spec_of(&[0.9, -0.4], &[1.7, 0.6]);
        let (mean, var) = spec.moments();
        // Ψ'(0) = Σ λ(1+|μ|²).
        let want_mean: f64 = 0.9 * (1.0 + 1.7) - 0.4 * (1.0 + 0.6);
        assert_abs_diff_eq!(mean, want_mean, epsilon = 1e-14);

        // Sample X = Σ λ|z_r|², z_r ~ CN(√|μ|², 1).
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut rng = crate::rng::stream(42, 0);
        for _ in 0..n {
            let mut x = 0.0;
            for (&lam, &mu2) in spec.eigenvalues.iter().zip(&spec.noncentrality) {
                let z = crate::rng::complex_standard_normal(&mut rng) + mu2.sqrt();
                x += lam * z.norm_sqr();
            }
            sum += x;
            sum2 += x * x;
        }
        let emp_mean = sum / n as f64;
        let emp_var = sum2 / n as f64 - emp_mean * emp_mean;
        let se_mean = (emp_var / n as f64).sqrt();
        assert!(
            (mean - emp_mean).abs() <= 3.0 * se_mean,
            "mean {mean} vs MC {emp_mean} ± {se_mean}"
        );
        assert!((var - emp_var).abs() <= 0.02 * var, "var {var} vs MC {emp_var}");
    }

    #[test]
    fn saddle_symmetric_case_analytic_root() {
        // λ = {+a, -a}, μ = 0: stationarity reduces to 3a²σ² = 1, the
        // positive root of the cubic σ(3a²σ² - 1).
        for a in [0.5, 1.0, 2.7] {
            let spec = spec_of(&[a, -a], &[0.0, 0.0]);
            let s = saddle_point(&spec).unwrap();
            assert_abs_diff_eq!(s, 1.0 / (a * 3.0f64.sqrt()), epsilon = 1e-9);
            let (g1, g2) = log_integrand_derivs(&spec, s);
            assert!(g1.abs() <= 1e-10, "residual {g1:.3e}");
            assert!(g2 > 0.0, "convexity at the saddle");
        }
    }

    #[test]
    fn saddle_bracket_signs() {
        let spec = spec_of(&[1.3, -0.8], &[2.0, 0.1]);
        let sigma_max = 1.0 / 0.8;
        let eps = 1e-6;
        assert!(log_integrand_derivs(&spec, eps).0 < 0.0);
        assert!(log_integrand_derivs(&spec, sigma_max - eps).0 > 0.0);
        // No negative eigenvalue: no bracket.
        assert!(saddle_point(&spec_of(&[1.0, 0.5], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn pq_symmetric_is_half() {
        // λ = ±a with zero non-centrality: X is symmetric, P(X<0) = 1/2.
        let spec = spec_of(&[1.0, -1.0], &[0.0, 0.0]);
        let p = pq(&spec, 128).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn pq_exponential_difference_analytic() {
        // λ = {a, -b}, μ = 0: X = a·E1 - b·E2 with E ~ Exp(1) independent;
        // P(X < 0) = a... P(a E1 < b E2) = b/(a+b).
        for (a, b) in [(1.0, 1.0), (2.0, 0.5), (0.3, 1.7)] {
            let spec = spec_of(&[a, -b], &[0.0, 0.0]);
            let p = pq(&spec, 256).unwrap();
            assert_abs_diff_eq!(p, b / (a + b), epsilon = 1e-8);
        }
    }

    #[test]
    fn pq_monotone_in_mainlobe_energy() {
        let mut last = 1.0;
        for mu2 in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let spec = spec_of(&[1.0, -0.7], &[mu2, 0.2]);
            let p = pq(&spec, 128).unwrap();
            assert!(p < last + 1e-12, "mu2={mu2}: {p} !< {last}");
            last = p;
        }
    }

    #[test]
    fn contour_convention_pinned_by_monte_carlo() {
        // Randomized specs: the negative-axis convention matches the
        // empirical Prob(X < 0); the positive-axis pairing matches its
        // complement instead.
        let geom = uca9();
        let noise = NoiseModel::signal_only(1.0);
        let mut rng = crate::rng::stream(1312, 0);
        let mut max_err_neg = 0.0f64;
        let mut pos_diverges = false;
        for trial in 0..6 {
            let phi = random_kernel(5, 9, 100 + trial).unwrap();
            let theta0 = rng.gen::<f64>() * std::f64::consts::TAU;
            let theta_q = theta0 + 0.8 + rng.gen::<f64>() * 3.0;
            let snr_db = -4.0 + 10.0 * rng.gen::<f64>();
            let amp = C64::new(10f64.powf(snr_db / 20.0), 0.0);
            let sources = [(theta0, amp)];
            let spec =
                build_quadratic_spec_unit_gain(&phi, &geom, theta0, theta_q, &sources, &noise)
                    .unwrap();
            let p_neg = pq_with_convention(&spec, 256, ContourSide::NegativeAxis).unwrap();
            let p_pos = pq_with_convention(&spec, 256, ContourSide::PositiveAxis).unwrap();
            let draws = 200_000;
            let (emp, se) = empirical_prob_negative(
                &phi, &geom, theta0, theta_q, &sources, &noise, true, draws, 555 + trial,
            )
            .unwrap();
            let tol = (3.0 * se).max(1.5e-3);
            assert!(
                (p_neg - emp).abs() <= tol,
                "trial {trial}: analytic {p_neg} vs MC {emp} ± {se}"
            );
            max_err_neg = max_err_neg.max((p_neg - emp).abs());
            if (p_pos - emp).abs() > 10.0 * tol {
                pos_diverges = true;
            }
            // The positive-axis pairing computes the complement.
            assert!(
                (p_pos - (1.0 - emp)).abs() <= tol,
                "trial {trial}: positive-axis {p_pos} vs 1-MC {}",
                1.0 - emp
            );
        }
        assert!(pos_diverges, "oracle cannot distinguish conventions");
        assert!(max_err_neg <= 1.5e-3);
    }

    #[test]
    fn quadrature_converges_in_g() {
        let spec = spec_of(&[2.2, -0.9], &[5.0, 0.4]);
        let (p, delta) = pq_with_refinement(&spec, 64).unwrap();
        assert!(delta <= 1e-6, "G-refinement gap {delta:.3e}");
        let p512 = pq(&spec, 512).unwrap();
        assert!((p - p512).abs() <= 1e-6);
    }

    #[test]
    fn union_bound_no_peaks_is_zero() {
        let geom = ArrayGeometry::uca(1, 0.65).unwrap();
        let phi = CombiningMatrix::identity(1);
        let noise = NoiseModel::signal_only(1.0);
        let grid = AzimuthGrid::uniform(64).unwrap();
        let report = union_bound_pd(
            &phi,
            &geom,
            1.0,
            &[(1.0, C64::new(1.0, 0.0))],
            &noise,
            64,
            MainlobeDef::NullToNull,
            &grid,
        )
        .unwrap();
        assert!(report.per_sidelobe.is_empty());
        assert_eq!(report.union_bound, 0.0);
    }

    #[test]
    fn union_bound_dominates_max_term_and_is_phase_invariant() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 17).unwrap();
        let noise = NoiseModel::signal_only(1.0);
        let grid = AzimuthGrid::uniform(360).unwrap();
        let sources = [(0.9, C64::new(1.0, 0.0))];
        let report = union_bound_pd(
            &phi, &geom, 0.9, &sources, &noise, 128, MainlobeDef::NullToNull, &grid,
        )
        .unwrap();
        let max_term = report.per_sidelobe.iter().map(|t| t.p_q).fold(0.0, f64::max);
        assert!(report.union_bound >= max_term - 1e-15);
        assert!(!report.per_sidelobe.is_empty());
        // Heights sorted descending.
        for w in report.per_sidelobe.windows(2) {
            assert!(w[0].height >= w[1].height);
        }

        let rotated = CombiningMatrix::unconstrained(
            phi.weights().mapv(|z| z * C64::from_polar(1.0, 0.777)),
        );
        let report2 = union_bound_pd(
            &rotated, &geom, 0.9, &sources, &noise, 128, MainlobeDef::NullToNull, &grid,
        )
        .unwrap();
        assert_abs_diff_eq!(report.union_bound, report2.union_bound, epsilon = 1e-9);
    }

    #[test]
    fn pq_vanishes_at_high_snr() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 23).unwrap();
        let noise = NoiseModel::signal_only(1.0);
        let grid = AzimuthGrid::uniform(360).unwrap();
        let mut last = 1.1;
        for snr_db in [-6.0, 0.0, 6.0, 12.0, 24.0] {
            let amp = C64::new(10f64.powf(snr_db / 20.0), 0.0);
            let report = union_bound_pd(
                &phi,
                &geom,
                2.0,
                &[(2.0, amp)],
                &noise,
                128,
                MainlobeDef::NullToNull,
                &grid,
            )
            .unwrap();
            assert!(report.union_bound <= last + 1e-12, "snr {snr_db}");
            last = report.union_bound;
        }
        assert!(last < 1e-4, "P_d at 24 dB should be negligible, got {last}");
    }

    #[test]
    fn multi_source_mean_vector() {
        let geom = uca9();
        let phi = random_kernel(5, 9, 29).unwrap();
        let s1 = C64::new(1.0, 0.0);
        let s2 = C64::new(0.5, 0.0);
        let r = mean_vector(&phi, &geom, &[(1.0, s1), (1.4, s2)]);
        let a1 = effective_column(&phi, &steering_vector(&geom, 1.0));
        let a2 = effective_column(&phi, &steering_vector(&geom, 1.4));
        for i in 0..5 {
            assert!((r[i] - (a1[i] * s1 + a2[i] * s2)).norm() < 1e-13);
        }
    }
}
