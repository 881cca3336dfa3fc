//! Monte Carlo engine: snapshot synthesis, beamformer DOA estimation,
//! empirical detection/accuracy statistics, random-kernel CCDF studies, and
//! the adaptive refocusing loop.
//!
//! Noise convention for experiments: the total per-branch noise power is 1,
//! split between signal noise (`σ1²`, before combining) and measurement
//! noise (`σ2²`, after) by a configurable fraction that defaults to 0 — all
//! noise enters before the network. SNR means strongest-source power over
//! total per-branch noise. Every stochastic routine is a pure function of
//! `(inputs, seed)`, with one RNG stream per trial so that results are
//! independent of scheduling and thread count.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::combiner::{effective_manifold, CombiningMatrix};
use crate::error::{Error, Result};
use crate::false_detect::union_bound_pd;
use crate::manifold::{manifold_matrix, wrap_angle, ArrayGeometry, AzimuthGrid};
use crate::performance::{correlation_profile, crb_matrix, theta0_grid, MainlobeDef, NoiseModel};
use crate::scf_design::{focused_weight, optimize_scf, DesignTarget, ScfOptions};
use crate::{C64, CMat, CVec};

/// One radiating source: azimuth and complex amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    /// Direction of arrival (radians).
    pub doa: f64,
    /// Complex amplitude (deterministic across snapshots).
    pub amplitude: C64,
}

/// A measurement scene: sources, noise split, snapshot count.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Sources, strongest first by construction.
    pub sources: Vec<Source>,
    /// Noise model (σ1² before, σ2² after the network).
    pub noise: NoiseModel,
    /// Snapshot count `T`.
    pub snapshots: usize,
}

impl Scenario {
    /// Single inphase source at `doa` with the given SNR over unit total
    /// noise, split so that `sigma2_fraction` of the noise power enters
    /// after the combining network.
    pub fn single_source(doa: f64, snr_db: f64, sigma2_fraction: f64, snapshots: usize) -> Result<Self> {
        Scenario::new(vec![(doa, 0.0)], snr_db, sigma2_fraction, snapshots)
    }

    /// Two inphase sources `d` radians apart with the given power ratio
    /// (`alpha_db <= 0`, second relative to first); SNR refers to the first.
    pub fn two_source(
        doa: f64,
        offset: f64,
        alpha_db: f64,
        snr_db: f64,
        sigma2_fraction: f64,
        snapshots: usize,
    ) -> Result<Self> {
        Scenario::new(vec![(doa, 0.0), (doa + offset, alpha_db)], snr_db, sigma2_fraction, snapshots)
    }

    /// General constructor from `(doa, relative power dB)` pairs; the first
    /// source is the reference and must be the strongest.
    pub fn new(
        sources: Vec<(f64, f64)>,
        snr_db: f64,
        sigma2_fraction: f64,
        snapshots: usize,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidInput("scenario needs at least one source".into()));
        }
        if snapshots == 0 {
            return Err(Error::InvalidInput("need at least one snapshot".into()));
        }
        if !(0.0..1.0).contains(&sigma2_fraction) && sigma2_fraction != 0.0 {
            return Err(Error::InvalidInput(
                "sigma2 fraction must lie in [0, 1)".into(),
            ));
        }
        if sources.iter().skip(1).any(|&(_, rel)| rel > 0.0) {
            return Err(Error::InvalidInput(
                "the first source must be the strongest (relative powers <= 0 dB)".into(),
            ));
        }
        let p0 = 10f64.powf(snr_db / 10.0);
        let srcs = sources
            .iter()
            .map(|&(doa, rel_db)| Source {
                doa,
                amplitude: C64::new((p0 * 10f64.powf(rel_db / 10.0)).sqrt(), 0.0),
            })
            .collect();
        let noise = NoiseModel::new(1.0 - sigma2_fraction, sigma2_fraction)?;
        Ok(Scenario { sources: srcs, noise, snapshots })
    }

    /// The strongest source (reference for detection and SNR).
    pub fn strongest(&self) -> &Source {
        &self.sources[0]
    }

    /// `(doa, amplitude)` pairs for the analytic machinery.
    pub fn source_pairs(&self) -> Vec<(f64, C64)> {
        self.sources.iter().map(|s| (s.doa, s.amplitude)).collect()
    }

    /// Single-snapshot signal covariance `s s^H`.
    pub fn signal_covariance(&self) -> CMat {
        let k = self.sources.len();
        Array2::from_shape_fn((k, k), |(i, j)| {
            self.sources[i].amplitude * self.sources[j].amplitude.conj()
        })
    }

    /// Input SNR `ρ` of the strongest source over total noise power.
    pub fn rho(&self) -> f64 {
        self.strongest().amplitude.norm_sqr() / self.noise.total()
    }
}

/// Synthesizes `ỹ(t) = Φ(A s + v(t)) + w(t)` for `T` snapshots (columns).
/// Source amplitudes are deterministic; noise is fresh per snapshot.
pub fn synthesize_snapshots(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    scenario: &Scenario,
    seed: u64,
) -> Result<CMat> {
    let n = geom.n_elements();
    let m = phi.n_outputs();
    if phi.n_inputs() != n {
        return Err(Error::ShapeMismatch(format!(
            "combiner expects {} antennas, geometry has {n}",
            phi.n_inputs()
        )));
    }
    let mean = crate::false_detect::mean_vector(phi, geom, &scenario.source_pairs());
    let s1 = scenario.noise.sigma1_sq.sqrt();
    let s2 = scenario.noise.sigma2_sq.sqrt();
    let w = phi.weights();
    let mut y = Array2::zeros((m, scenario.snapshots));
    for t in 0..scenario.snapshots {
        let mut rng = crate::rng::stream(seed, t as u64);
        let v: CVec = Array1::from_shape_fn(n, |_| {
            crate::rng::complex_standard_normal(&mut rng) * s1
        });
        for i in 0..m {
            let mut yi = mean[i];
            for k in 0..n {
                yi += w[[i, k]] * v[k];
            }
            y[[i, t]] = yi;
        }
        for i in 0..m {
            y[[i, t]] += crate::rng::complex_standard_normal(&mut rng) * s2;
        }
    }
    Ok(y)
}

/// Normalized beamformer spectrum `ã^H R̂ ã / ‖ã‖²` over the grid, with
/// `R̂` the sample covariance of the snapshots.
pub fn beamformer_spectrum(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    snapshots: &CMat,
    grid: &AzimuthGrid,
) -> Result<Vec<f64>> {
    let a = manifold_matrix(geom, grid);
    let atilde = effective_manifold(phi, &a)?;
    let p = grid.len();
    let t_count = snapshots.ncols();
    if snapshots.nrows() != phi.n_outputs() {
        return Err(Error::ShapeMismatch(format!(
            "snapshots have {} rows, combiner {} outputs",
            snapshots.nrows(),
            phi.n_outputs()
        )));
    }
    let scale = phi.frobenius_sq() * geom.n_elements() as f64;
    let mut spectrum = Vec::with_capacity(p);
    for j in 0..p {
        let nsq: f64 = atilde.column(j).iter().map(|z| z.norm_sqr()).sum();
        if nsq <= 1e-24 * scale {
            return Err(Error::BlindSpot { theta: grid.points()[j] });
        }
        let mut acc = 0.0;
        for t in 0..t_count {
            let mut dot = C64::new(0.0, 0.0);
            for i in 0..snapshots.nrows() {
                dot += atilde[[i, j]].conj() * snapshots[[i, t]];
            }
            acc += dot.norm_sqr();
        }
        spectrum.push(acc / (t_count as f64 * nsq));
    }
    Ok(spectrum)
}

/// 3-point parabolic refinement of a peak at grid index `imax`.
fn refine_peak(spectrum: &[f64], grid: &AzimuthGrid, imax: usize) -> f64 {
    let p = spectrum.len();
    let pts = grid.points();
    let im = (imax + p - 1) % p;
    let ip = (imax + 1) % p;
    let (ym, y0, yp) = (spectrum[im], spectrum[imax], spectrum[ip]);
    let denom = ym - 2.0 * y0 + yp;
    let delta = if denom < -1e-300 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let spacing = {
        let d0 = crate::manifold::circular_distance(pts[imax], pts[im]);
        let d1 = crate::manifold::circular_distance(pts[ip], pts[imax]);
        0.5 * (d0 + d1)
    };
    (pts[imax] + delta * spacing).rem_euclid(std::f64::consts::TAU)
}

/// Grid argmax with 3-point parabolic refinement; ties resolve to the
/// lowest index.
pub fn estimate_doa(spectrum: &[f64], grid: &AzimuthGrid) -> Result<f64> {
    if spectrum.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum has {} values, grid {}",
            spectrum.len(),
            grid.len()
        )));
    }
    let mut imax = 0;
    let mut vmax = spectrum[0];
    for (i, &v) in spectrum.iter().enumerate() {
        if v > vmax {
            vmax = v;
            imax = i;
        }
    }
    Ok(refine_peak(spectrum, grid, imax))
}

/// Strongest spectrum value within a circular window, refined; `None` when
/// no grid point falls inside the window.
fn strongest_peak_near(
    spectrum: &[f64],
    grid: &AzimuthGrid,
    center: f64,
    halfwidth: f64,
) -> Option<f64> {
    let pts = grid.points();
    let mut best: Option<usize> = None;
    for i in 0..spectrum.len() {
        if crate::manifold::circular_distance(pts[i], center) <= halfwidth {
            if best.map_or(true, |b| spectrum[i] > spectrum[b]) {
                best = Some(i);
            }
        }
    }
    best.map(|i| refine_peak(spectrum, grid, i))
}

/// Single-trial detection outcome helper: synthesize, estimate, classify.
fn trial_estimate(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    scenario: &Scenario,
    grid: &AzimuthGrid,
    seed: u64,
) -> Result<f64> {
    let y = synthesize_snapshots(phi, geom, scenario, seed)?;
    let spectrum = beamformer_spectrum(phi, geom, &y, grid)?;
    estimate_doa(&spectrum, grid)
}

/// Empirical false-detection probability: fraction of trials whose estimate
/// falls outside the (noise-free) mainlobe of the strongest source.
/// Returns `(p, binomial standard error)`.
pub fn empirical_pd(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    scenario: &Scenario,
    trials: usize,
    mainlobe_def: MainlobeDef,
    seed: u64,
    grid: &AzimuthGrid,
) -> Result<(f64, f64)> {
    if trials < 100 {
        return Err(Error::InvalidInput("need at least 100 trials".into()));
    }
    let theta0 = scenario.strongest().doa;
    let profile = correlation_profile(phi, geom, theta0, grid, mainlobe_def)?;
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let est = trial_estimate(phi, geom, scenario, grid, crate::rng::child_seed(seed, t as u64))?;
            Ok(!profile.in_mainlobe(est))
        })
        .collect();
    let mut hits = 0usize;
    for o in outcomes {
        if o? {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    Ok((p, se))
}

/// Empirical RMSE of the single-source DOA estimate (radians), with errors
/// wrapped to (-π, π].
pub fn empirical_rmse(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    grid: &AzimuthGrid,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let theta0 = scenario.strongest().doa;
    let errs: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let est = trial_estimate(phi, geom, scenario, grid, crate::rng::child_seed(seed, t as u64))?;
            Ok(wrap_angle(est - theta0))
        })
        .collect();
    let mut acc = 0.0;
    for e in errs {
        let v = e?;
        acc += v * v;
    }
    Ok((acc / trials as f64).sqrt())
}

/// Metric tabulated by a CCDF study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcdfMetric {
    /// Worst-case CRB of the strongest source over a θ0 grid.
    Crb,
    /// Mean sidelobe level averaged over a θ0 grid.
    MeanSidelobe,
}

/// Empirical CCDF of a metric over an ensemble of random kernels, plus
/// reference values for named designs.
#[derive(Debug, Clone)]
pub struct CcdfTable {
    /// Which metric.
    pub metric: CcdfMetric,
    /// Sorted metric values of the ensemble (ascending).
    pub values: Vec<f64>,
    /// `P(X > values[i])`, non-increasing towards 0.
    pub ccdf: Vec<f64>,
    /// Ensemble size.
    pub n_realizations: usize,
    /// `(name, metric value)` for reference designs.
    pub references: Vec<(String, f64)>,
}

impl CcdfTable {
    /// Fraction of the ensemble strictly above `value`.
    pub fn ccdf_at(&self, value: f64) -> f64 {
        let above = self.values.iter().filter(|&&v| v > value).count();
        above as f64 / self.n_realizations as f64
    }

    /// CSV rows `value,ccdf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,ccdf\n");
        for (v, c) in self.values.iter().zip(&self.ccdf) {
            out.push_str(&format!("{v},{c}\n"));
        }
        out
    }

    /// CSV rows `name,value` for the reference designs.
    pub fn references_to_csv(&self) -> String {
        let mut out = String::from("name,value\n");
        for (n, v) in &self.references {
            out.push_str(&format!("{n},{v}\n"));
        }
        out
    }
}

/// Evaluation grids shared by the scalar design metrics.
#[derive(Debug, Clone, Copy)]
pub struct MetricGrids {
    /// θ0 grid size.
    pub theta0_points: usize,
    /// Correlation-profile grid size.
    pub profile_points: usize,
}

impl Default for MetricGrids {
    fn default() -> Self {
        MetricGrids { theta0_points: 90, profile_points: 360 }
    }
}

/// Scalar metric of one design under a scenario: worst-case strongest-source
/// CRB or θ0-averaged mean sidelobe level. For multi-source scenarios the
/// other sources ride along at their scenario offsets relative to θ0.
pub fn design_metric(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    metric: CcdfMetric,
    scenario: &Scenario,
    grids: &MetricGrids,
) -> Result<f64> {
    let thetas = theta0_grid(grids.theta0_points);
    match metric {
        CcdfMetric::MeanSidelobe => {
            let grid = AzimuthGrid::uniform(grids.profile_points)?;
            crate::performance::mean_sidelobe_over(phi, geom, &thetas, &grid, MainlobeDef::NullToNull)
        }
        CcdfMetric::Crb => {
            let offsets: Vec<f64> = scenario
                .sources
                .iter()
                .map(|s| s.doa - scenario.strongest().doa)
                .collect();
            let r_s = scenario.signal_covariance().mapv(|z| z / scenario.noise.total());
            let mut worst = 0.0f64;
            for &t0 in &thetas {
                let doas: Vec<f64> = offsets.iter().map(|&d| t0 + d).collect();
                let crb = crb_matrix(phi, geom, &doas, &r_s, &scenario.noise)?;
                worst = worst.max(crb[[0, 0]]);
            }
            Ok(worst)
        }
    }
}

/// CCDF of `metric` over `n_realizations` random kernels (fully meshed,
/// `L = M`, `η = 1`), with reference lines for the given designs.
#[allow(clippy::too_many_arguments)]
pub fn ccdf_study(
    geom: &ArrayGeometry,
    m: usize,
    metric: CcdfMetric,
    scenario: &Scenario,
    n_realizations: usize,
    design_refs: &[(String, CombiningMatrix)],
    seed: u64,
    grids: &MetricGrids,
) -> Result<CcdfTable> {
    if n_realizations == 0 {
        return Err(Error::InvalidInput("need at least one realization".into()));
    }
    let n = geom.n_elements();
    let samples: Vec<Result<f64>> = (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let kernel = crate::combiner::random_kernel(m, n, crate::rng::child_seed(seed, i as u64))?;
            design_metric(&kernel, geom, metric, scenario, grids)
        })
        .collect();
    let mut values = Vec::with_capacity(n_realizations);
    for s in samples {
        values.push(s?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n_realizations as f64;
    let ccdf: Vec<f64> = (0..n_realizations).map(|i| 1.0 - (i as f64 + 1.0) / nf).collect();
    let mut references = Vec::new();
    for (name, phi) in design_refs {
        references.push((name.clone(), design_metric(phi, geom, metric, scenario, grids)?));
    }
    Ok(CcdfTable { metric, values, ccdf, n_realizations, references })
}

/// Which design drove a given adaptive step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveDesignKind {
    /// The uniform-sensitivity design (first step and periodic rescans).
    Uniform,
    /// A design focused on the current regions of interest.
    Focused,
}

/// One step of the adaptive loop.
#[derive(Debug, Clone)]
pub struct AdaptiveStep {
    /// Step index (0-based).
    pub step: usize,
    /// Design in effect during this step.
    pub design_kind: AdaptiveDesignKind,
    /// DOA estimates after this step's measurement, ascending.
    pub estimates: Vec<f64>,
    /// Worst-case CRB of the in-effect design over the focus region (the
    /// full circle for uniform steps) at the scenario SNR.
    pub worst_crb: f64,
    /// True when a redesign failed and the previous design was kept.
    pub fallback: bool,
}

/// Adaptive loop configuration.
#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    /// Receiver channels.
    pub m: usize,
    /// Branches per antenna.
    pub l: usize,
    /// Branch efficiency.
    pub eta: f64,
    /// Estimation grid size.
    pub estimation_points: usize,
    /// Design grid size (SCF target sampling).
    pub design_points: usize,
    /// Rescan with the uniform design every `rescan_period` steps.
    pub rescan_period: usize,
    /// Total steps.
    pub steps: usize,
    /// Optimizer starts per redesign.
    pub n_starts: usize,
    /// Spectrum peaks at least this fraction of the maximum count as
    /// detected sources.
    pub peak_threshold: f64,
    /// At most this many sources tracked.
    pub max_sources: usize,
    /// Half-width (radians) of each region of interest.
    pub focus_halfwidth: f64,
    /// SCF weight outside the regions of interest.
    pub background_weight: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            m: 5,
            l: 5,
            eta: 1.0,
            estimation_points: 360,
            design_points: 180,
            rescan_period: 4,
            steps: 8,
            n_starts: 4,
            peak_threshold: 0.5,
            max_sources: 3,
            focus_halfwidth: 0.35,
            background_weight: 0.05,
        }
    }
}

/// Detects sources as spectrum local maxima above a relative threshold,
/// suppressing peaks that are explainable as sidelobes of an already
/// accepted (stronger) source through the design's own correlation profile.
fn detect_sources(
    spectrum: &[f64],
    eg: &crate::performance::EffectiveGrid,
    threshold: f64,
    max_sources: usize,
) -> Vec<f64> {
    let p = spectrum.len();
    let grid = &eg.grid;
    let vmax = spectrum.iter().cloned().fold(0.0f64, f64::max);
    let mut peaks: Vec<(f64, usize)> = Vec::new();
    for i in 0..p {
        let im = (i + p - 1) % p;
        let ip = (i + 1) % p;
        if spectrum[i] > spectrum[im] && spectrum[i] > spectrum[ip] && spectrum[i] >= threshold * vmax {
            peaks.push((spectrum[i], i));
        }
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let correlation = |i: usize, j: usize| -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for row in 0..eg.atilde.nrows() {
            acc += eg.atilde[[row, i]].conj() * eg.atilde[[row, j]];
        }
        acc.norm() / (eg.norms[i] * eg.norms[j])
    };

    let mut accepted: Vec<(f64, usize)> = Vec::new();
    for &(v, i) in &peaks {
        if accepted.len() >= max_sources {
            break;
        }
        let explained = accepted.iter().any(|&(va, ia)| {
            let b = correlation(i, ia);
            v <= va * b * b * 1.5
        });
        if !explained {
            accepted.push((v, i));
        }
    }
    let mut out: Vec<f64> = accepted.into_iter().map(|(_, i)| grid.points()[i]).collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Sequential adaptive measurement: scan with a uniform-sensitivity design,
/// focus the network on the regions of interest around the current
/// estimates, track, and rescan uniformly every `rescan_period` steps.
/// `scene(step)` supplies the (possibly moving) scenario per step.
pub fn adaptive_loop(
    geom: &ArrayGeometry,
    cfg: &AdaptiveConfig,
    scene: &dyn Fn(usize) -> Scenario,
    seed: u64,
) -> Result<Vec<AdaptiveStep>> {
    if cfg.steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    if cfg.rescan_period == 0 {
        return Err(Error::InvalidInput("rescan period must be positive".into()));
    }
    let est_grid = AzimuthGrid::uniform(cfg.estimation_points)?;
    let design_grid = AzimuthGrid::uniform(cfg.design_points)?;
    let reference = ArrayGeometry::uca(cfg.m, reference_radius(geom))?;
    let uniform_target = DesignTarget::reference_array(design_grid.clone(), &reference);
    let scf_opts = ScfOptions { max_iterations: 150, ..Default::default() };

    let uniform = optimize_scf(
        geom,
        &uniform_target,
        cfg.m,
        cfg.l,
        cfg.eta,
        cfg.n_starts,
        crate::rng::child_seed(seed, 0xadab),
        &scf_opts,
    )?
    .matrix;

    let mut steps = Vec::with_capacity(cfg.steps);
    let mut current = uniform.clone();
    let mut focus: Vec<f64> = Vec::new();
    for step in 0..cfg.steps {
        let rescan = step % cfg.rescan_period == 0;
        let (design_kind, phi) = if rescan {
            (AdaptiveDesignKind::Uniform, uniform.clone())
        } else {
            (AdaptiveDesignKind::Focused, current.clone())
        };

        let scenario = scene(step);
        let y = synthesize_snapshots(&phi, geom, &scenario, crate::rng::child_seed(seed, step as u64))?;
        let spectrum = beamformer_spectrum(&phi, geom, &y, &est_grid)?;
        let estimates = if rescan {
            let eg = crate::performance::EffectiveGrid::new(&phi, geom, &est_grid)?;
            detect_sources(&spectrum, &eg, cfg.peak_threshold, cfg.max_sources)
        } else {
            // A focused design is only trusted inside its regions of
            // interest (its sidelobes elsewhere are deliberately
            // unconstrained; rescans cover the rest of the circle), and
            // each region tracks exactly one source: take the strongest
            // peak per region.
            let mut tracked: Vec<f64> = focus
                .iter()
                .filter_map(|&c| {
                    strongest_peak_near(&spectrum, &est_grid, c, 2.0 * cfg.focus_halfwidth)
                })
                .collect();
            tracked.sort_by(|a, b| a.partial_cmp(b).unwrap());
            tracked.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            if tracked.is_empty() {
                tracked = focus.clone();
            }
            tracked
        };
        focus = estimates.clone();

        let crb_region: Vec<f64> = if rescan || focus.is_empty() {
            theta0_grid(cfg.design_points.min(90))
        } else {
            let mut pts = Vec::new();
            for &c in &focus {
                for k in -4i32..=4 {
                    pts.push(
                        (c + k as f64 * cfg.focus_halfwidth / 4.0)
                            .rem_euclid(std::f64::consts::TAU),
                    );
                }
            }
            pts
        };
        let mut worst_crb = 0.0f64;
        for &t in &crb_region {
            worst_crb = worst_crb.max(crate::performance::crb_single(
                &phi,
                geom,
                t,
                scenario.rho(),
                &scenario.noise,
            )?);
        }

        // Refocus the design for the next step.
        let mut fallback = false;
        if !focus.is_empty() && step + 1 < cfg.steps {
            let regions: Vec<(f64, f64)> = focus.iter().map(|&c| (c, cfg.focus_halfwidth)).collect();
            let w = focused_weight(&design_grid, &regions, cfg.background_weight);
            match uniform_target.clone().with_weight(w).and_then(|target| {
                optimize_scf(
                    geom,
                    &target,
                    cfg.m,
                    cfg.l,
                    cfg.eta,
                    cfg.n_starts,
                    crate::rng::child_seed(seed, 0x1000 + step as u64),
                    &scf_opts,
                )
            }) {
                Ok(res) => current = res.matrix,
                Err(_) => {
                    fallback = true;
                }
            }
        }

        steps.push(AdaptiveStep { step, design_kind, estimates, worst_crb, fallback });
    }
    Ok(steps)
}

fn reference_radius(geom: &ArrayGeometry) -> f64 {
    match geom.kind() {
        crate::manifold::GeometryKind::Uca { radius, .. } => *radius,
        crate::manifold::GeometryKind::Positions(p) => p
            .iter()
            .map(|q| (q[0] * q[0] + q[1] * q[1]).sqrt())
            .fold(0.0f64, f64::max)
            .max(0.25),
    }
}

/// Analytic union-bound P_d evaluated at the scenario's strongest source.
pub fn analytic_pd(
    phi: &CombiningMatrix,
    geom: &ArrayGeometry,
    scenario: &Scenario,
    g_order: usize,
    mainlobe_def: MainlobeDef,
    grid: &AzimuthGrid,
) -> Result<f64> {
    let report = union_bound_pd(
        phi,
        geom,
        scenario.strongest().doa,
        &scenario.source_pairs(),
        &scenario.noise,
        g_order,
        mainlobe_def,
        grid,
    )?;
    Ok(report.union_bound)
}
