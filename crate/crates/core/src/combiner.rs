//! The analog combining matrix `Φ ∈ C^{M×N}` and its structural constraints.
//!
//! In hardware, each of the `N` antenna signals is split into `L ≤ M`
//! branches, phase shifted, and recombined into `M` receiver channels. Every
//! realizable ("structured") matrix therefore has exactly `L` nonzeros per
//! column, each of modulus `η/√L`, where `η ∈ (0, 1]` models branch losses.
//! A second, "unconstrained" mode carries arbitrary complex entries; it
//! exists to represent closed-form designs that ignore the constant-modulus
//! constraint.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::{C64, CMat};

/// Whether a matrix obeys the hardware modulus structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerMode {
    /// Entries are `(η/√L)·e^{jφ}` on connected positions, zero elsewhere.
    Structured,
    /// Arbitrary complex entries (closed-form designs).
    Unconstrained,
}

/// Boolean connectivity mask; `true` where antenna `n` feeds channel `m`.
pub type Connectivity = Array2<bool>;

/// Fully meshed connectivity (every antenna feeds every channel).
pub fn full_connectivity(m: usize, n: usize) -> Connectivity {
    Array2::from_elem((m, n), true)
}

/// Round-robin connectivity with `l` branches per antenna: column `j`
/// connects channels `(j + k) mod m`, `k = 0..l`.
pub fn round_robin_connectivity(m: usize, n: usize, l: usize) -> Connectivity {
    let mut c = Array2::from_elem((m, n), false);
    for j in 0..n {
        for k in 0..l.min(m) {
            c[[(j + k) % m, j]] = true;
        }
    }
    c
}

/// Analog combining matrix with structural metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CombiningMatrix {
    weights: CMat,
    branch_count: usize,
    efficiency: f64,
    connectivity: Connectivity,
    mode: CombinerMode,
}

/// Phase-only parametrization of a structured combining matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseParametrization {
    /// Phases in radians, shape M×N; ignored on disconnected entries.
    pub phases: Array2<f64>,
    /// Branches per antenna `L`.
    pub branch_count: usize,
    /// Branch efficiency `η ∈ (0, 1]`.
    pub efficiency: f64,
    /// Connectivity mask, `L` true entries per column.
    pub connectivity: Connectivity,
}

impl PhaseParametrization {
    /// Fully meshed parametrization (`L = M`).
    pub fn fully_meshed(phases: Array2<f64>, efficiency: f64) -> Self {
        let (m, n) = phases.dim();
        PhaseParametrization {
            phases,
            branch_count: m,
            efficiency,
            connectivity: full_connectivity(m, n),
        }
    }
}

/// Builds the structured matrix `[Φ]_{m,n} = (η/√L)·e^{jφ_{m,n}}` on
/// connected entries, exact zero elsewhere.
pub fn materialize(p: &PhaseParametrization) -> Result<CombiningMatrix> {
    let (m, n) = p.phases.dim();
    if p.connectivity.dim() != (m, n) {
        return Err(Error::ShapeMismatch(format!(
            "connectivity {:?} vs phases {:?}",
            p.connectivity.dim(),
            p.phases.dim()
        )));
    }
    if p.branch_count == 0 || p.branch_count > m {
        return Err(Error::InvalidInput(format!(
            "branch count L={} must satisfy 1 <= L <= M={m}",
            p.branch_count
        )));
    }
    if !(p.efficiency > 0.0 && p.efficiency <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "efficiency must lie in (0, 1], got {}",
            p.efficiency
        )));
    }
    if p.phases.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("phases must be finite".into()));
    }
    for j in 0..n {
        let connected = (0..m).filter(|&i| p.connectivity[[i, j]]).count();
        if connected != p.branch_count {
            return Err(Error::InvalidInput(format!(
                "column {j} has {connected} connections, expected L={}",
                p.branch_count
            )));
        }
    }
    let amp = p.efficiency / (p.branch_count as f64).sqrt();
    let weights = Array2::from_shape_fn((m, n), |(i, j)| {
        if p.connectivity[[i, j]] {
            C64::from_polar(amp, p.phases[[i, j]])
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(CombiningMatrix {
        weights,
        branch_count: p.branch_count,
        efficiency: p.efficiency,
        connectivity: p.connectivity.clone(),
        mode: CombinerMode::Structured,
    })
}

impl CombiningMatrix {
    /// Wraps arbitrary complex weights as an unconstrained matrix.
    pub fn unconstrained(weights: CMat) -> Self {
        let (m, n) = weights.dim();
        let connectivity = full_connectivity(m, n);
        CombiningMatrix {
            weights,
            branch_count: m.max(1),
            efficiency: 1.0,
            connectivity,
            mode: CombinerMode::Unconstrained,
        }
    }

    /// Identity combiner (`M = N`, `Φ = I`), the uncompressed array.
    pub fn identity(n: usize) -> Self {
        let phases = Array2::zeros((n, n));
        let mut connectivity = Array2::from_elem((n, n), false);
        for i in 0..n {
            connectivity[[i, i]] = true;
        }
        materialize(&PhaseParametrization {
            phases,
            branch_count: 1,
            efficiency: 1.0,
            connectivity,
        })
        .expect("identity parametrization is always valid")
    }

    /// The complex weights `Φ`.
    pub fn weights(&self) -> &CMat {
        &self.weights
    }

    /// Receiver channel count `M`.
    pub fn n_outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Antenna count `N`.
    pub fn n_inputs(&self) -> usize {
        self.weights.ncols()
    }

    /// Branches per antenna `L`.
    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    /// Branch efficiency `η`.
    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Connectivity mask.
    pub fn connectivity(&self) -> &Connectivity {
        &self.connectivity
    }

    /// Structured or unconstrained.
    pub fn mode(&self) -> CombinerMode {
        self.mode
    }

    /// `‖Φ‖_F²`; equals `η²·N` for structured matrices.
    pub fn frobenius_sq(&self) -> f64 {
        self.weights.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Recovers the phase parametrization of a structured matrix.
    pub fn extract_phases(&self) -> Result<PhaseParametrization> {
        if self.mode != CombinerMode::Structured {
            return Err(Error::InvalidInput(
                "extract_phases requires a structured matrix".into(),
            ));
        }
        let (m, n) = self.weights.dim();
        let phases = Array2::from_shape_fn((m, n), |(i, j)| {
            if self.connectivity[[i, j]] {
                self.weights[[i, j]].arg()
            } else {
                0.0
            }
        });
        Ok(PhaseParametrization {
            phases,
            branch_count: self.branch_count,
            efficiency: self.efficiency,
            connectivity: self.connectivity.clone(),
        })
    }

    /// Serializes to the text format: header `M N L eta mode`, then one row
    /// per line with `re,im` entries separated by spaces. 17 significant
    /// digits, which round-trips f64 exactly.
    pub fn to_text(&self) -> String {
        let (m, n) = self.weights.dim();
        let mode = match self.mode {
            CombinerMode::Structured => "structured",
            CombinerMode::Unconstrained => "unconstrained",
        };
        let mut out = format!("{m} {n} {} {:.16e} {mode}\n", self.branch_count, self.efficiency);
        for i in 0..m {
            let mut row = String::new();
            for j in 0..n {
                if j > 0 {
                    row.push(' ');
                }
                let z = self.weights[[i, j]];
                row.push_str(&format!("{:.16e},{:.16e}", z.re, z.im));
            }
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// Parses the text format produced by [`CombiningMatrix::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty combiner file".into()))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(Error::Parse(format!(
                "header must be 'M N L eta mode', got '{header}'"
            )));
        }
        let m: usize = tokens[0].parse().map_err(|_| Error::Parse("bad M".into()))?;
        let n: usize = tokens[1].parse().map_err(|_| Error::Parse("bad N".into()))?;
        let l: usize = tokens[2].parse().map_err(|_| Error::Parse("bad L".into()))?;
        let eta: f64 = tokens[3].parse().map_err(|_| Error::Parse("bad eta".into()))?;
        let mode = match tokens[4] {
            "structured" => CombinerMode::Structured,
            "unconstrained" => CombinerMode::Unconstrained,
            other => return Err(Error::Parse(format!("unknown mode '{other}'"))),
        };
        let mut weights = Array2::zeros((m, n));
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i}")))?;
            let entries: Vec<&str> = line.split_whitespace().collect();
            if entries.len() != n {
                return Err(Error::Parse(format!(
                    "row {i} has {} entries, expected {n}",
                    entries.len()
                )));
            }
            for (j, e) in entries.iter().enumerate() {
                let (re, im) = e
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("entry '{e}' is not 're,im'")))?;
                let re: f64 = re.parse().map_err(|_| Error::Parse(format!("bad re in '{e}'")))?;
                let im: f64 = im.parse().map_err(|_| Error::Parse(format!("bad im in '{e}'")))?;
                weights[[i, j]] = C64::new(re, im);
            }
        }
        let connectivity = weights.mapv(|z| z != C64::new(0.0, 0.0));
        Ok(CombiningMatrix {
            weights,
            branch_count: l,
            efficiency: eta,
            connectivity,
            mode,
        })
    }
}

/// Random structured kernel: fully meshed, `L = M`, `η = 1`, phases drawn
/// uniformly from (0, 2π]. Deterministic in `seed`.
pub fn random_kernel(m: usize, n: usize, seed: u64) -> Result<CombiningMatrix> {
    if m > n {
        return Err(Error::InvalidInput(format!(
            "random kernel requires M <= N, got M={m}, N={n}"
        )));
    }
    let mut rng = crate::rng::stream(seed, 0);
    let phases = Array2::from_shape_fn((m, n), |_| crate::rng::uniform_phase(&mut rng));
    materialize(&PhaseParametrization::fully_meshed(phases, 1.0))
}

/// Effective manifold after combining, `Ã = Φ·A`.
pub fn effective_manifold(phi: &CombiningMatrix, a: &CMat) -> Result<CMat> {
    if phi.n_inputs() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "combiner has {} inputs but manifold has {} rows",
            phi.n_inputs(),
            a.nrows()
        )));
    }
    Ok(phi.weights().dot(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    #[test]
    fn materialize_identity() {
        let phi = CombiningMatrix::identity(4);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                assert_eq!(phi.weights()[[i, j]], want);
            }
        }
        assert_eq!(phi.mode(), CombinerMode::Structured);
    }

    #[test]
    fn fully_meshed_modulus() {
        let p = PhaseParametrization::fully_meshed(Array2::zeros((5, 9)), 1.0);
        let phi = materialize(&p).unwrap();
        let want = 1.0 / 5.0f64.sqrt();
        for z in phi.weights().iter() {
            assert_abs_diff_eq!(z.norm(), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn frobenius_identity() {
        // Sum of the 45 squared moduli: 45·(0.8/√5)² = 0.64·9 = 5.76, i.e.
        // η²·N for a structured matrix regardless of L.
        let p = PhaseParametrization::fully_meshed(Array2::zeros((5, 9)), 0.8);
        let phi = materialize(&p).unwrap();
        assert_abs_diff_eq!(phi.frobenius_sq(), 0.64 * 9.0, epsilon = 1e-12);

        let p = PhaseParametrization {
            phases: Array2::zeros((5, 9)),
            branch_count: 2,
            efficiency: 0.8,
            connectivity: round_robin_connectivity(5, 9, 2),
        };
        let phi = materialize(&p).unwrap();
        assert_abs_diff_eq!(phi.frobenius_sq(), 0.64 * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn materialize_rejects_bad_inputs() {
        // L > M.
        let p = PhaseParametrization {
            phases: Array2::zeros((3, 5)),
            branch_count: 4,
            efficiency: 1.0,
            connectivity: full_connectivity(3, 5),
        };
        assert!(materialize(&p).is_err());
        // Column connection count != L.
        let mut conn = full_connectivity(3, 5);
        conn[[0, 2]] = false;
        let p = PhaseParametrization {
            phases: Array2::zeros((3, 5)),
            branch_count: 3,
            efficiency: 1.0,
            connectivity: conn,
        };
        assert!(materialize(&p).is_err());
        // Efficiency out of range.
        let p = PhaseParametrization::fully_meshed(Array2::zeros((3, 5)), 1.5);
        assert!(materialize(&p).is_err());
    }

    #[test]
    fn random_kernel_deterministic() {
        let a = random_kernel(5, 9, 1234).unwrap();
        let b = random_kernel(5, 9, 1234).unwrap();
        assert_eq!(a.weights(), b.weights());
        let c = random_kernel(5, 9, 1235).unwrap();
        assert_ne!(a.weights(), c.weights());
        assert!(random_kernel(9, 5, 0).is_err());
    }

    #[test]
    fn random_kernel_ensemble() {
        // The random-baseline ensembles draw thousands of kernels; all must
        // be distinct and reproducible through child seeds.
        let seeds: Vec<u64> = (0..5000).map(|i| crate::rng::child_seed(99, i)).collect();
        let first = random_kernel(5, 9, seeds[0]).unwrap();
        let again = random_kernel(5, 9, seeds[0]).unwrap();
        assert_eq!(first.weights(), again.weights());
        let mut sums: Vec<u64> = seeds
            .iter()
            .map(|&s| {
                let k = random_kernel(5, 9, s).unwrap();
                k.weights().iter().map(|z| z.arg().to_bits() & 0xffff_ffff).sum()
            })
            .collect();
        sums.sort_unstable();
        sums.dedup();
        assert_eq!(sums.len(), 5000, "kernel ensemble collision");
    }

    /// Kolmogorov-Smirnov p-value against U(0, 2π].
    fn ks_pvalue_uniform_phase(mut xs: Vec<f64>) -> f64 {
        let n = xs.len() as f64;
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let u = x / std::f64::consts::TAU;
            let hi = (i as f64 + 1.0) / n - u;
            let lo = u - i as f64 / n;
            d = d.max(hi).max(lo);
        }
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..=100 {
            let k = k as f64;
            p += 2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn random_kernel_phase_distribution() {
        let mut phases = Vec::with_capacity(100_035);
        let mut i = 0u64;
        while phases.len() < 100_000 {
            let k = random_kernel(5, 9, crate::rng::child_seed(7, i)).unwrap();
            phases.extend(k.weights().iter().map(|z| z.arg().rem_euclid(std::f64::consts::TAU)));
            i += 1;
        }
        phases.truncate(100_000);
        let p = ks_pvalue_uniform_phase(phases);
        assert!(p > 0.01, "KS p-value {p:.4} too small for uniform phases");
    }

    #[test]
    fn effective_manifold_cases() {
        let geom = crate::manifold::ArrayGeometry::uca(9, 0.65).unwrap();
        let grid = crate::manifold::AzimuthGrid::uniform(16).unwrap();
        let a = crate::manifold::manifold_matrix(&geom, &grid);

        let id = CombiningMatrix::identity(9);
        let atilde = effective_manifold(&id, &a).unwrap();
        assert_eq!(atilde, a);

        // A zero row in Φ produces a zero row in Ã.
        let mut w = random_kernel(5, 9, 3).unwrap().weights().clone();
        for j in 0..9 {
            w[[2, j]] = C64::new(0.0, 0.0);
        }
        let phi = CombiningMatrix::unconstrained(w);
        let atilde = effective_manifold(&phi, &a).unwrap();
        assert!(atilde.row(2).iter().all(|z| z.norm() == 0.0));

        // Spot-check one entry against a scalar dot product.
        let phi = random_kernel(5, 9, 77).unwrap();
        let atilde = effective_manifold(&phi, &a).unwrap();
        let mut dot = C64::new(0.0, 0.0);
        for k in 0..9 {
            dot += phi.weights()[[3, k]] * a[[k, 11]];
        }
        assert!((atilde[[3, 11]] - dot).norm() < 1e-13);

        // Shape mismatch.
        let small = crate::manifold::manifold_matrix(
            &crate::manifold::ArrayGeometry::uca(5, 0.65).unwrap(),
            &grid,
        );
        assert!(effective_manifold(&phi, &small).is_err());
    }

    #[test]
    fn text_roundtrip_exact() {
        let mut rng = crate::rng::stream(21, 0);
        let phases = Array2::from_shape_fn((4, 7), |_| crate::rng::uniform_phase(&mut rng));
        let phi = materialize(&PhaseParametrization::fully_meshed(phases, 0.731)).unwrap();
        let text = phi.to_text();
        let back = CombiningMatrix::from_text(&text).unwrap();
        assert_eq!(phi.weights(), back.weights());
        assert_eq!(phi.branch_count(), back.branch_count());
        assert_eq!(phi.efficiency(), back.efficiency());
        assert_eq!(phi.mode(), back.mode());

        let un = CombiningMatrix::unconstrained(
            Array2::from_shape_fn((3, 5), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }),
        );
        let back = CombiningMatrix::from_text(&un.to_text()).unwrap();
        assert_eq!(un.weights(), back.weights());
    }

    #[test]
    fn phase_extraction_roundtrip() {
        let mut rng = crate::rng::stream(5, 1);
        let phases = Array2::from_shape_fn((5, 9), |_| crate::rng::uniform_phase(&mut rng));
        let phi = materialize(&PhaseParametrization::fully_meshed(phases, 0.9)).unwrap();
        let p = phi.extract_phases().unwrap();
        let phi2 = materialize(&p).unwrap();
        let diff: f64 = phi
            .weights()
            .iter()
            .zip(phi2.weights().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-14, "materialize∘extract defect {diff:.3e}");
    }

    #[test]
    fn parse_rejects_malformed() {
        assert!(CombiningMatrix::from_text("").is_err());
        assert!(CombiningMatrix::from_text("1 1 1 1.0\n0,0\n").is_err());
        assert!(CombiningMatrix::from_text("1 2 1 1.0 structured\n0,0\n").is_err());
        assert!(CombiningMatrix::from_text("1 1 1 1.0 structured\nbogus\n").is_err());
        assert!(CombiningMatrix::from_text("1 1 1 1.0 weird\n0,0\n").is_err());
    }
}
