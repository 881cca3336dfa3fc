//! Array geometries, steering vectors and azimuth sampling grids.
//!
//! Geometries are planar and sources are confined to the azimuthal plane, so
//! the steering vector of an isotropic element reduces to a pure phase
//! determined by the element position (in wavelengths) and the arrival
//! azimuth. A uniform circular array (UCA) of normalized radius `R̃` has
//! element `n` at angular position `ϑ_n = 2π(n-1)/N` and response
//! `a_n(θ) = exp(j 2π R̃ cos(θ - ϑ_n))`.
//!
//! An optional per-element complex gain pattern can be attached to any
//! geometry (measured element patterns, calibration offsets); it defaults to
//! unit gains, under which every steering entry has unit modulus and
//! `‖a(θ)‖² = N` for all θ.

use ndarray::{Array1, Array2};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::{C64, CMat, CVec};

/// Geometry family.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryKind {
    /// Uniform circular array: element count and radius in wavelengths.
    Uca { n_elements: usize, radius: f64 },
    /// Arbitrary planar array; element positions in wavelengths.
    Positions(Vec<[f64; 2]>),
}

/// Planar array geometry with optional per-element gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    kind: GeometryKind,
    gains: Option<Vec<C64>>,
}

impl ArrayGeometry {
    /// UCA constructor with validation.
    pub fn uca(n_elements: usize, radius: f64) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidInput("UCA needs at least one element".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!(
                "UCA radius must be positive and finite, got {radius}"
            )));
        }
        Ok(ArrayGeometry { kind: GeometryKind::Uca { n_elements, radius }, gains: None })
    }

    /// Arbitrary-geometry constructor with validation.
    pub fn positions(p: Vec<[f64; 2]>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidInput("geometry needs at least one element".into()));
        }
        if p.iter().any(|q| !q[0].is_finite() || !q[1].is_finite()) {
            return Err(Error::InvalidInput("element positions must be finite".into()));
        }
        Ok(ArrayGeometry { kind: GeometryKind::Positions(p), gains: None })
    }

    /// Attaches a per-element complex gain pattern (one entry per element).
    pub fn with_gains(mut self, gains: Vec<C64>) -> Result<Self> {
        if gains.len() != self.n_elements() {
            return Err(Error::ShapeMismatch(format!(
                "gain pattern has {} entries for {} elements",
                gains.len(),
                self.n_elements()
            )));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::InvalidInput("gains must be finite".into()));
        }
        self.gains = Some(gains);
        Ok(self)
    }

    /// Geometry family.
    pub fn kind(&self) -> &GeometryKind {
        &self.kind
    }

    /// Number of elements `N`.
    pub fn n_elements(&self) -> usize {
        match &self.kind {
            GeometryKind::Uca { n_elements, .. } => *n_elements,
            GeometryKind::Positions(p) => p.len(),
        }
    }

    /// Element positions in wavelengths (UCA elements realized on the circle).
    pub fn element_positions(&self) -> Vec<[f64; 2]> {
        match &self.kind {
            GeometryKind::Uca { n_elements, radius } => (0..*n_elements)
                .map(|n| {
                    let v = TAU * n as f64 / *n_elements as f64;
                    [radius * v.cos(), radius * v.sin()]
                })
                .collect(),
            GeometryKind::Positions(p) => p.clone(),
        }
    }
}

/// Grid spacing rule for [`AzimuthGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSpacing {
    /// Equally spaced azimuth angles.
    UniformAngle,
    /// Equally spaced spatial frequencies `u = cos θ`; makes the sampled
    /// manifold of a half-wavelength ULA row-orthogonal.
    UniformSpatialFrequency,
}

/// Ordered azimuth sampling grid on (0, 2π].
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthGrid {
    points: Vec<f64>,
    spacing: GridSpacing,
}

impl AzimuthGrid {
    /// `p` equally spaced angles `2π k / p`, `k = 1..=p`.
    pub fn uniform(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        let points = (1..=p).map(|k| TAU * k as f64 / p as f64).collect();
        Ok(AzimuthGrid { points, spacing: GridSpacing::UniformAngle })
    }

    /// `p` points with spatial frequencies `u_k = -1 + (2k-1)/p` mapped to
    /// azimuths `θ = arccos u ∈ (0, π)`, sorted ascending.
    pub fn uniform_spatial_frequency(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        let mut points: Vec<f64> = (1..=p)
            .map(|k| (-1.0 + (2.0 * k as f64 - 1.0) / p as f64).acos())
            .collect();
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(AzimuthGrid { points, spacing: GridSpacing::UniformSpatialFrequency })
    }

    /// Grid from explicit points; must be strictly increasing in (0, 2π].
    pub fn from_points(points: Vec<f64>, spacing: GridSpacing) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("grid points must be strictly increasing".into()));
            }
        }
        if points[0] <= 0.0 || *points.last().unwrap() > TAU {
            return Err(Error::InvalidInput("grid points must lie in (0, 2π]".into()));
        }
        Ok(AzimuthGrid { points, spacing })
    }

    /// Grid points in radians.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of grid points `P`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the grid has no points (unreachable by construction).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Spacing rule used to build the grid.
    pub fn spacing(&self) -> GridSpacing {
        self.spacing
    }

    /// Index of the grid point nearest to `theta` (circular distance).
    pub fn nearest_index(&self, theta: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &p) in self.points.iter().enumerate() {
            let d = circular_distance(p, theta);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Absolute circular distance between two angles, in [0, π].
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d = TAU - d;
    }
    d
}

/// Signed angle wrapped to (-π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let mut d = x.rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d -= TAU;
    }
    d
}

/// Steering vector `a(θ)` of length `N`.
pub fn steering_vector(geom: &ArrayGeometry, theta: f64) -> CVec {
    let (sin_t, cos_t) = theta.sin_cos();
    let mut a = match &geom.kind {
        GeometryKind::Uca { n_elements, radius } => Array1::from_shape_fn(*n_elements, |n| {
            let v = TAU * n as f64 / *n_elements as f64;
            let phase = TAU * radius * (theta - v).cos();
            C64::from_polar(1.0, phase)
        }),
        GeometryKind::Positions(p) => Array1::from_shape_fn(p.len(), |n| {
            let phase = TAU * (p[n][0] * cos_t + p[n][1] * sin_t);
            C64::from_polar(1.0, phase)
        }),
    };
    if let Some(g) = &geom.gains {
        for (an, gn) in a.iter_mut().zip(g) {
            *an *= gn;
        }
    }
    a
}

/// Angular derivative `∂a(θ)/∂θ`, entrywise `j·dφ_n/dθ·a_n(θ)`.
pub fn steering_derivative(geom: &ArrayGeometry, theta: f64) -> CVec {
    let a = steering_vector(geom, theta);
    let (sin_t, cos_t) = theta.sin_cos();
    match &geom.kind {
        GeometryKind::Uca { n_elements, radius } => Array1::from_shape_fn(*n_elements, |n| {
            let v = TAU * n as f64 / *n_elements as f64;
            let dphase = -TAU * radius * (theta - v).sin();
            C64::new(0.0, dphase) * a[n]
        }),
        GeometryKind::Positions(p) => Array1::from_shape_fn(p.len(), |n| {
            let dphase = TAU * (-p[n][0] * sin_t + p[n][1] * cos_t);
            C64::new(0.0, dphase) * a[n]
        }),
    }
}

/// Steering matrix `A` of shape `N×P`, column `p` = `a(θ_p)`.
pub fn manifold_matrix(geom: &ArrayGeometry, grid: &AzimuthGrid) -> CMat {
    let n = geom.n_elements();
    let p = grid.len();
    let mut a = Array2::zeros((n, p));
    for (j, &theta) in grid.points().iter().enumerate() {
        let col = steering_vector(geom, theta);
        for i in 0..n {
            a[[i, j]] = col[i];
        }
    }
    a
}

/// Half-wavelength uniform linear array along the x axis.
pub fn ula_half_wavelength(n: usize) -> Result<ArrayGeometry> {
    ArrayGeometry::positions((0..n).map(|k| [0.5 * k as f64, 0.0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{adjoint, frob_norm, identity};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn single_element_uca_at_zero() {
        let g = ArrayGeometry::uca(1, 0.65).unwrap();
        let a = steering_vector(&g, 0.0);
        let expected = C64::from_polar(1.0, TAU * 0.65);
        assert_abs_diff_eq!(a[0].re, expected.re, epsilon = 1e-15);
        assert_abs_diff_eq!(a[0].im, expected.im, epsilon = 1e-15);
    }

    #[test]
    fn steering_norm_equals_element_count() {
        let g = ArrayGeometry::uca(9, 0.65).unwrap();
        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..50 {
            let theta: f64 = rng.gen::<f64>() * TAU;
            let a = steering_vector(&g, theta);
            let norm_sq: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert_abs_diff_eq!(norm_sq, 9.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uca4_entry_by_hand() {
        // Element n=2 of a 4-element UCA sits at ϑ = π/2; at θ = π/2 its
        // phase is 2π·0.65·cos(0) = 1.3π.
        let g = ArrayGeometry::uca(4, 0.65).unwrap();
        let a = steering_vector(&g, std::f64::consts::FRAC_PI_2);
        let expected = C64::from_polar(1.0, 1.3 * std::f64::consts::PI);
        assert_abs_diff_eq!(a[1].re, expected.re, epsilon = 1e-14);
        assert_abs_diff_eq!(a[1].im, expected.im, epsilon = 1e-14);
    }

    #[test]
    fn derivative_zero_cases() {
        let g = ArrayGeometry::uca(1, 1.7).unwrap();
        let d = steering_derivative(&g, 0.0);
        assert_eq!(d[0], C64::new(0.0, 0.0));

        let g = ArrayGeometry::positions(vec![[0.0, 0.0]]).unwrap();
        for theta in [0.1, 1.0, 4.0] {
            let d = steering_derivative(&g, theta);
            assert_eq!(d[0].norm(), 0.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = ArrayGeometry::uca(9, 0.65).unwrap();
        let h = 1e-5;
        let mut rng = crate::rng::stream(5, 0);
        for _ in 0..100 {
            let theta: f64 = rng.gen::<f64>() * TAU;
            let analytic = steering_derivative(&g, theta);
            let fwd = steering_vector(&g, theta + h);
            let bwd = steering_vector(&g, theta - h);
            let mut diff = 0.0;
            let mut scale = 0.0;
            for n in 0..9 {
                let fd = (fwd[n] - bwd[n]) / C64::new(2.0 * h, 0.0);
                diff += (fd - analytic[n]).norm_sqr();
                scale += analytic[n].norm_sqr();
            }
            assert!(
                diff.sqrt() <= 1e-6 * scale.sqrt(),
                "fd mismatch at theta={theta}: {:.3e}",
                diff.sqrt() / scale.sqrt()
            );
        }
    }

    #[test]
    fn periodicity() {
        let g = ArrayGeometry::uca(7, 0.9).unwrap();
        for theta in [0.3, 2.2, 5.9] {
            let a = steering_vector(&g, theta);
            let b = steering_vector(&g, theta + TAU);
            for n in 0..7 {
                assert!((a[n] - b[n]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gains_are_applied() {
        let g = ArrayGeometry::uca(3, 0.65)
            .unwrap()
            .with_gains(vec![C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)])
            .unwrap();
        let bare = ArrayGeometry::uca(3, 0.65).unwrap();
        let a = steering_vector(&g, 1.1);
        let b = steering_vector(&bare, 1.1);
        assert!((a[0] - b[0] * 2.0).norm() < 1e-15);
        assert!((a[1] - b[1] * C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(ArrayGeometry::uca(3, 0.65).unwrap().with_gains(vec![C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn manifold_matrix_columns() {
        let g = ArrayGeometry::uca(9, 0.65).unwrap();
        let grid = AzimuthGrid::uniform(360).unwrap();
        let a = manifold_matrix(&g, &grid);
        assert_eq!(a.dim(), (9, 360));
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        let col = steering_vector(&g, grid.points()[17]);
        for i in 0..9 {
            assert_eq!(a[[i, 17]], col[i]);
        }
    }

    #[test]
    fn single_point_grid_rejected_but_p1_manifold_is_column() {
        let g = ArrayGeometry::uca(5, 0.65).unwrap();
        let grid = AzimuthGrid::from_points(vec![1.0, 2.0], GridSpacing::UniformAngle).unwrap();
        let a = manifold_matrix(&g, &grid);
        let col = steering_vector(&g, 1.0);
        for i in 0..5 {
            assert_eq!(a[[i, 0]], col[i]);
        }
    }

    #[test]
    fn ula_spatial_frequency_grid_is_orthogonal() {
        // Closed-form precondition: A·A^H = C·I for a λ/2 ULA sampled
        // uniformly in spatial frequency with P = N.
        let n = 8;
        let g = ula_half_wavelength(n).unwrap();
        let grid = AzimuthGrid::uniform_spatial_frequency(n).unwrap();
        let a = manifold_matrix(&g, &grid);
        let gram = a.dot(&adjoint(&a));
        let target = identity(n).mapv(|z| z * n as f64);
        let err = frob_norm(&(&gram - &target));
        assert!(err < 1e-10, "orthogonality defect {err:.3e}");
    }

    #[test]
    fn grid_validation() {
        assert!(AzimuthGrid::uniform(1).is_err());
        assert!(AzimuthGrid::from_points(vec![0.5, 0.4], GridSpacing::UniformAngle).is_err());
        assert!(AzimuthGrid::from_points(vec![0.0, 1.0], GridSpacing::UniformAngle).is_err());
        assert!(AzimuthGrid::from_points(vec![1.0, 7.0], GridSpacing::UniformAngle).is_err());
        let g = AzimuthGrid::uniform(360).unwrap();
        assert!(g.points()[0] > 0.0 && *g.points().last().unwrap() <= TAU);
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::uca(0, 0.5).is_err());
        assert!(ArrayGeometry::uca(4, 0.0).is_err());
        assert!(ArrayGeometry::uca(4, f64::NAN).is_err());
        assert!(ArrayGeometry::positions(vec![]).is_err());
        assert!(ArrayGeometry::positions(vec![[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn nearest_index_wraps() {
        let g = AzimuthGrid::uniform(360).unwrap();
        // 0.001 rad is nearest to the last grid point (2π), not the first.
        assert_eq!(g.nearest_index(0.001), 359);
        assert_eq!(g.nearest_index(TAU / 360.0), 0);
    }
}
