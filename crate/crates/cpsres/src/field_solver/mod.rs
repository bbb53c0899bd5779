//! 2D electrostatics of the coplanar-stripline cross-section.
//!
//! One solver covers three jobs: capacitance per unit length, per-unit-
//! thickness participation ratios of the thin interface layers (metal-air,
//! metal-substrate, substrate-air and the metal-air-substrate corners), and
//! the paired-run relative capacitance shifts that feed the oxide-regrowth
//! model.
//!
//! Geometry convention: the substrate fills y < 0, the two metal strips sit
//! on top of it at x ∈ ±[g/2, g/2 + w], y ∈ [0, t_nb], and everything else
//! is air. Equal and opposite potentials ±V/2 are applied to the strips; the
//! far boundary is a zero-normal-flux wall placed `domain_factor·(2w+g)`
//! beyond the structure.

pub mod fem;
pub mod mesh;

use serde::{Deserialize, Serialize};

use fem::{CellMaterial, NodeBc};
use mesh::{Feature, Mesh};

/// Cross-section and material parameters of one CPS resonator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpsGeometry {
    /// Trace width w (m).
    pub width: f64,
    /// Trace separation g (m), inner edge to inner edge.
    pub gap: f64,
    /// Resonator length (m); not used by the 2D solver but carried for the
    /// per-length quantities downstream.
    pub length: f64,
    /// Metal film thickness (m).
    pub t_nb: f64,
    /// Substrate relative permittivity (horizontal component).
    pub eps_substrate: f64,
    /// Optional vertical substrate permittivity for anisotropic substrates;
    /// defaults to the isotropic value.
    pub eps_substrate_vertical: Option<f64>,
    /// Relative permittivity of every interface layer.
    pub eps_interface: f64,
    /// Relative permittivity of the upper half-space (1 for vacuum).
    #[serde(default = "default_eps_air")]
    pub eps_air: f64,
    /// Metal-air interface thickness (m); also the corner-square side.
    pub t_ma: f64,
    /// Metal-substrate interface thickness (m).
    pub t_ms: f64,
    /// Substrate-air interface thickness (m).
    pub t_sa: f64,
}

fn default_eps_air() -> f64 {
    1.0
}

impl CpsGeometry {
    /// Bare cross-section with no interface layers.
    pub fn bare(width: f64, gap: f64, length: f64, t_nb: f64, eps_substrate: f64) -> Self {
        CpsGeometry {
            width,
            gap,
            length,
            t_nb,
            eps_substrate,
            eps_substrate_vertical: None,
            eps_interface: 10.0,
            eps_air: 1.0,
            t_ma: 0.0,
            t_ms: 0.0,
            t_sa: 0.0,
        }
    }

    /// Same cross-section with all interface thicknesses set to `t`.
    pub fn with_layer_thickness(&self, t: f64) -> Self {
        CpsGeometry {
            t_ma: t,
            t_ms: t,
            t_sa: t,
            ..self.clone()
        }
    }

    /// Uniformly scaled copy (lengths only).
    pub fn scaled(&self, s: f64) -> Self {
        CpsGeometry {
            width: s * self.width,
            gap: s * self.gap,
            length: s * self.length,
            t_nb: s * self.t_nb,
            t_ma: s * self.t_ma,
            t_ms: s * self.t_ms,
            t_sa: s * self.t_sa,
            ..self.clone()
        }
    }

    /// Config-load validation. The solver itself tolerates t_nb = 0
    /// (an idealized zero-thickness sheet used by the analytic cross-checks).
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.width > 0.0 && self.gap > 0.0 && self.length > 0.0) {
            return Err(SolverError::InvalidGeometry(
                "width, gap and length must be positive".into(),
            ));
        }
        if self.t_nb < 0.0 {
            return Err(SolverError::InvalidGeometry("t_nb must be >= 0".into()));
        }
        if self.t_ma < 0.0 || self.t_ms < 0.0 || self.t_sa < 0.0 {
            return Err(SolverError::InvalidGeometry(
                "interface thicknesses must be >= 0".into(),
            ));
        }
        if self.t_nb > 0.0 {
            for (name, t) in [("MA", self.t_ma), ("MS", self.t_ms), ("SA", self.t_sa)] {
                if t > 0.5 * self.t_nb {
                    return Err(SolverError::InvalidGeometry(format!(
                        "{name} interface thickness {t:.3e} m is not small against t_nb {:.3e} m",
                        self.t_nb
                    )));
                }
            }
        }
        if self.eps_substrate < 1.0
            || self.eps_interface < 1.0
            || self.eps_air < 1.0
            || self.eps_substrate_vertical.is_some_and(|e| e < 1.0)
        {
            return Err(SolverError::InvalidGeometry(
                "relative permittivities must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn substrate_eps(&self) -> (f64, f64) {
        (
            self.eps_substrate,
            self.eps_substrate_vertical.unwrap_or(self.eps_substrate),
        )
    }
}

/// Mesh refinement parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    /// Smallest cell size placed against feature lines (m).
    pub min_cell: f64,
    /// Geometric growth ratio away from features.
    pub growth_ratio: f64,
    /// Far-boundary distance in units of (2w + g).
    pub domain_factor: f64,
    /// Interface-layer thickness used by participation and shift runs (m).
    pub layer_thickness: f64,
    /// Allowed relative change of p̃ between the t and 2t runs. Sharp-corner
    /// cross-sections carry a weak singular tail that drifts a few percent
    /// per thickness doubling even deep in the thin-layer regime.
    pub linearity_tolerance: f64,
    /// Solve a bisected mesh as well and report the change.
    pub refine_check: bool,
}

impl GridSpec {
    /// Defaults for participation-ratio extraction. The 20 nm layer mirrors
    /// the practical meshable minimum of the reference finite-element
    /// workflow while 0.5 nm cells resolve the junction fields inside the
    /// corner squares.
    pub fn participation() -> Self {
        GridSpec {
            min_cell: 0.5e-9,
            growth_ratio: 1.35,
            domain_factor: 25.0,
            layer_thickness: 20.0e-9,
            linearity_tolerance: 0.10,
            refine_check: false,
        }
    }

    /// Lighter settings for the paired-run capacitance shifts, where
    /// discretization error cancels in the ratio.
    pub fn shift() -> Self {
        GridSpec {
            min_cell: 0.5e-9,
            growth_ratio: 1.45,
            domain_factor: 15.0,
            layer_thickness: 1.0e-9,
            linearity_tolerance: 0.10,
            refine_check: false,
        }
    }

    /// Settings for bare (no-layer) capacitance runs at a given lateral
    /// feature scale.
    pub fn bare(feature_scale: f64) -> Self {
        GridSpec {
            min_cell: feature_scale / 4000.0,
            growth_ratio: 1.30,
            domain_factor: 25.0,
            layer_thickness: 0.0,
            linearity_tolerance: 0.10,
            refine_check: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.min_cell > 0.0) || !(self.growth_ratio > 1.0) {
            return Err(SolverError::InvalidGrid(
                "min_cell must be positive and growth_ratio > 1".into(),
            ));
        }
        if self.domain_factor < 10.0 {
            return Err(SolverError::InvalidGrid(format!(
                "domain_factor {} is below the required 10 structure sizes",
                self.domain_factor
            )));
        }
        Ok(())
    }
}

/// Field-region labels for the energy bookkeeping. `Margin` is oxide inside
/// the junction-influence zone that is deliberately counted in no interface
/// integral (see [`region_at`] for the convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Vacuum,
    Substrate,
    Metal,
    MetalAir,
    MetalSubstrate,
    SubstrateAir,
    Corner,
    Margin,
}

impl Region {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        match self {
            Region::Vacuum => 0,
            Region::Substrate => 1,
            Region::Metal => 2,
            Region::MetalAir => 3,
            Region::MetalSubstrate => 4,
            Region::SubstrateAir => 5,
            Region::Corner => 6,
            Region::Margin => 7,
        }
    }
}

/// Per-unit-thickness participation ratios (ppm/nm).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParticipationSet {
    pub p_tilde_ma: f64,
    pub p_tilde_ms: f64,
    pub p_tilde_sa: f64,
    pub p_tilde_c: f64,
}

impl ParticipationSet {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_tilde_ma, self.p_tilde_ms, self.p_tilde_sa, self.p_tilde_c]
    }
}

/// Solved cross-section with the energy integrals needed downstream.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub mesh: Mesh,
    /// Node potentials, x-major with y fastest.
    pub potential: Vec<f64>,
    /// Cell regions, x-major.
    pub regions: Vec<Region>,
    /// Potential difference between the strips (V).
    pub applied_voltage: f64,
    /// Total electrostatic energy per unit length W_e (J/m).
    pub total_energy: f64,
    /// Energy per region, split into (x-field, y-field) parts.
    pub region_energy_xy: [(f64, f64); Region::COUNT],
    pub max_relative_residual: f64,
    pub free_nodes: usize,
}

impl FieldSolution {
    /// Capacitance per unit length, C = 2·W_e/V².
    pub fn capacitance(&self) -> f64 {
        2.0 * self.total_energy / (self.applied_voltage * self.applied_voltage)
    }

    /// Fraction of the total energy stored in one region.
    pub fn region_fraction(&self, region: Region) -> f64 {
        let (ex, ey) = self.region_energy_xy[region.index()];
        (ex + ey) / self.total_energy
    }

    pub fn region_energy(&self, region: Region) -> (f64, f64) {
        self.region_energy_xy[region.index()]
    }
}

/// Participation extraction report: the ratios at the run thickness, the
/// linearity cross-check at twice the thickness and optional refinement data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipationReport {
    pub set: ParticipationSet,
    pub set_double_thickness: ParticipationSet,
    /// Worst relative deviation between the two thickness runs.
    pub linearity_deviation: f64,
    /// Layer thickness used (m).
    pub layer_thickness: f64,
    pub capacitance: f64,
    /// (coarse C, fine C, |ΔC|/C) when the refinement check ran.
    pub refinement: Option<(f64, f64, f64)>,
    pub mesh_nodes: usize,
}

/// Paired-run capacitance shift following the oxide-regrowth procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftReport {
    /// (C‴ − C)/C, the relative capacitance shift.
    pub shift: f64,
    /// γ = (C″ − C′)/C′ at the meshable oxide thickness.
    pub gamma: f64,
    pub c_baseline: f64,
    pub c_thinned: f64,
    pub c_with_oxide: f64,
    /// Meshable oxide thickness t_min used for γ (m).
    pub t_min: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error(
        "unmeshable {layer} layer: thickness {thickness:.3e} m needs cells of at most {required:.3e} m but min_cell is {min_cell:.3e} m"
    )]
    UnmeshableLayer {
        layer: &'static str,
        thickness: f64,
        required: f64,
        min_cell: f64,
    },
    #[error(
        "interface thickness {thickness:.3e} m is outside the linear regime: participation changes by {deviation:.1}% between t and 2t ({allowed:.0}% allowed)"
    )]
    NonlinearRegime {
        thickness: f64,
        deviation: f64,
        allowed: f64,
    },
}

/// What to build on top of the bare cross-section for one run.
#[derive(Debug, Clone, Copy)]
enum Dressing {
    /// Interface layers as carried by the geometry. `junction_t` sets the
    /// corner-window and standoff scale, normally equal to t_ma; the
    /// linearity cross-check holds it fixed while doubling the layers.
    GeometryLayers { junction_t: f64 },
    /// No layers at all, metal top at the given height (shift runs).
    BareMetal { metal_top: f64 },
    /// Oxide of thickness t wrapped over the metal top and sidewalls, metal
    /// top at the given height (shift runs).
    OxideWrap { metal_top: f64, t: f64 },
}

impl Dressing {
    fn metal_top(&self, geom: &CpsGeometry) -> f64 {
        match *self {
            Dressing::GeometryLayers { .. } => geom.t_nb,
            Dressing::BareMetal { metal_top } | Dressing::OxideWrap { metal_top, .. } => metal_top,
        }
    }
}

/// Solve the cross-section with the geometry's own interface layers.
pub fn solve_cross_section(
    geom: &CpsGeometry,
    grid: &GridSpec,
) -> Result<FieldSolution, SolverError> {
    solve_cross_section_at_voltage(geom, grid, 1.0)
}

/// Solve with an explicit applied voltage (the default operations use 1 V).
pub fn solve_cross_section_at_voltage(
    geom: &CpsGeometry,
    grid: &GridSpec,
    voltage: f64,
) -> Result<FieldSolution, SolverError> {
    geom.validate()?;
    grid.validate()?;
    check_meshable(geom, grid)?;
    let scene = Dressing::GeometryLayers { junction_t: geom.t_ma };
    let mesh = build_mesh(geom, grid, &[scene]);
    Ok(solve_scene(geom, &mesh, scene, voltage))
}

/// Capacitance per unit length of a solved cross-section (F/m).
pub fn capacitance(solution: &FieldSolution) -> f64 {
    solution.capacitance()
}

/// Interface participation ratios per unit thickness. Solves at the grid's
/// layer thickness, validates linearity at twice the thickness, and converts
/// to ppm/nm.
pub fn participation_ratios(
    geom: &CpsGeometry,
    grid: &GridSpec,
) -> Result<ParticipationReport, SolverError> {
    geom.validate()?;
    grid.validate()?;
    let t = grid.layer_thickness;
    if t < 2.0 * grid.min_cell {
        return Err(SolverError::UnmeshableLayer {
            layer: "participation",
            thickness: t,
            required: t / 2.0,
            min_cell: grid.min_cell,
        });
    }

    // The junction windows (corner squares and sliver standoffs) stay at
    // the base thickness in both runs so the cross-check isolates the
    // layers' own thickness scaling.
    let solve_at = |thickness: f64, mesh_override: Option<&Mesh>| {
        let dressed = geom.with_layer_thickness(thickness);
        let scene = Dressing::GeometryLayers { junction_t: t };
        let mesh = match mesh_override {
            Some(m) => m.clone(),
            None => build_mesh(&dressed, grid, &[scene]),
        };
        let sol = solve_scene(&dressed, &mesh, scene, 1.0);
        (participation_from(&sol, thickness, t), sol)
    };

    let (set, sol) = solve_at(t, None);
    let (set_2t, _) = solve_at(2.0 * t, None);

    // The corner is a junction quantity evaluated on a fixed window; the
    // linearity requirement applies to the three interface layers.
    let mut linearity_deviation = 0.0_f64;
    for (a, b) in set.as_array()[..3].iter().zip(&set_2t.as_array()[..3]) {
        if *a > 0.0 {
            linearity_deviation = linearity_deviation.max((a - b).abs() / a);
        }
    }
    if linearity_deviation > grid.linearity_tolerance {
        return Err(SolverError::NonlinearRegime {
            thickness: t,
            deviation: 100.0 * linearity_deviation,
            allowed: 100.0 * grid.linearity_tolerance,
        });
    }

    let refinement = if grid.refine_check {
        let fine_mesh = sol.mesh.bisected();
        let (_, fine_sol) = solve_at(t, Some(&fine_mesh));
        let (c0, c1) = (sol.capacitance(), fine_sol.capacitance());
        Some((c0, c1, (c0 - c1).abs() / c1))
    } else {
        None
    };

    Ok(ParticipationReport {
        set,
        set_double_thickness: set_2t,
        linearity_deviation,
        layer_thickness: t,
        capacitance: sol.capacitance(),
        refinement,
        mesh_nodes: sol.mesh.node_count(),
    })
}

fn participation_from(sol: &FieldSolution, thickness: f64, junction_t: f64) -> ParticipationSet {
    let t_nm = thickness * 1e9;
    let per = |r: Region| sol.region_fraction(r) / t_nm * 1e6;
    ParticipationSet {
        p_tilde_ma: per(Region::MetalAir),
        p_tilde_ms: per(Region::MetalSubstrate),
        p_tilde_sa: per(Region::SubstrateAir),
        p_tilde_c: sol.region_fraction(Region::Corner) / (junction_t * 1e9) * 1e6,
    }
}

/// Relative capacitance shift from oxide regrowth: baseline C at full metal
/// thickness, C′ at thinned metal, C″ with the thinnest meshable oxide on
/// the thinned metal, then linear extrapolation γ′ = Δt_MA·γ/t_min and
/// C‴ = (1 + γ′)·C′. All three runs share one mesh so discretization error
/// cancels in the ratios.
pub fn capacitance_shift(
    geom: &CpsGeometry,
    delta_t_ma: f64,
    delta_t_nb: f64,
    grid: &GridSpec,
) -> Result<ShiftReport, SolverError> {
    geom.validate()?;
    grid.validate()?;
    if delta_t_ma < 0.0 || delta_t_nb < 0.0 {
        return Err(SolverError::InvalidGeometry(
            "regrowth thicknesses must be >= 0".into(),
        ));
    }
    if delta_t_nb >= geom.t_nb {
        return Err(SolverError::InvalidGeometry(format!(
            "metal consumption {delta_t_nb:.3e} m exceeds the film thickness {:.3e} m",
            geom.t_nb
        )));
    }
    let t_min = grid.layer_thickness;
    if t_min < 2.0 * grid.min_cell {
        return Err(SolverError::UnmeshableLayer {
            layer: "MA",
            thickness: t_min,
            required: t_min / 2.0,
            min_cell: grid.min_cell,
        });
    }

    let thinned_top = geom.t_nb - delta_t_nb;
    let scenes = [
        Dressing::BareMetal { metal_top: geom.t_nb },
        Dressing::BareMetal { metal_top: thinned_top },
        Dressing::OxideWrap { metal_top: thinned_top, t: t_min },
    ];
    let bare = CpsGeometry {
        t_ma: 0.0,
        t_ms: 0.0,
        t_sa: 0.0,
        ..geom.clone()
    };
    let mesh = build_mesh(&bare, grid, &scenes);
    let c_baseline = solve_scene(&bare, &mesh, scenes[0], 1.0).capacitance();
    let c_thinned = solve_scene(&bare, &mesh, scenes[1], 1.0).capacitance();
    let c_with_oxide = solve_scene(&bare, &mesh, scenes[2], 1.0).capacitance();

    let gamma = (c_with_oxide - c_thinned) / c_thinned;
    let gamma_extrapolated = delta_t_ma * gamma / t_min;
    let c_final = (1.0 + gamma_extrapolated) * c_thinned;
    Ok(ShiftReport {
        shift: (c_final - c_baseline) / c_baseline,
        gamma,
        c_baseline,
        c_thinned,
        c_with_oxide,
        t_min,
    })
}

fn check_meshable(geom: &CpsGeometry, grid: &GridSpec) -> Result<(), SolverError> {
    for (layer, t) in [("MA", geom.t_ma), ("MS", geom.t_ms), ("SA", geom.t_sa)] {
        if t > 0.0 && t < 2.0 * grid.min_cell {
            return Err(SolverError::UnmeshableLayer {
                layer,
                thickness: t,
                required: t / 2.0,
                min_cell: grid.min_cell,
            });
        }
    }
    Ok(())
}

/// Build a mesh whose feature lines cover the bare geometry and every
/// dressing that will run on it. x-lines are generated for x ≥ 0 and
/// mirrored so the mesh is exactly symmetric.
fn build_mesh(geom: &CpsGeometry, grid: &GridSpec, scenes: &[Dressing]) -> Mesh {
    let extent = grid.domain_factor * (2.0 * geom.width + geom.gap);
    let x_inner = geom.gap / 2.0;
    let x_outer = geom.gap / 2.0 + geom.width;
    let x_max = x_outer + extent;
    let fine = grid.min_cell;

    let mut x_features = vec![
        Feature { position: 0.0, cell: x_inner.max(fine) },
        Feature { position: x_inner, cell: fine },
        Feature { position: x_outer, cell: fine },
        Feature { position: x_max, cell: extent },
    ];
    let mut y_features = vec![Feature { position: 0.0, cell: fine }];

    for scene in scenes {
        let metal_top = scene.metal_top(geom);
        y_features.push(Feature { position: metal_top, cell: fine });
        match *scene {
            Dressing::GeometryLayers { junction_t } => {
                if junction_t > 0.0 {
                    let half = (junction_t / 2.0).min(fine);
                    for edge in [x_inner, x_outer] {
                        // Corner patch and standoff boundaries around the
                        // junctions, plus the foot-quarter boundary.
                        for offset in
                            [-2.0 * junction_t, -junction_t, -junction_t / 2.0, junction_t / 2.0, junction_t, 2.0 * junction_t]
                        {
                            x_features.push(Feature { position: edge + offset, cell: half });
                        }
                    }
                    y_features.push(Feature { position: junction_t, cell: half });
                    y_features.push(Feature { position: junction_t / 2.0, cell: half });
                    y_features.push(Feature { position: -junction_t, cell: half });
                }
                if geom.t_ma > 0.0 {
                    let half = (geom.t_ma / 2.0).min(fine);
                    for edge in [x_inner, x_outer] {
                        x_features.push(Feature { position: edge - geom.t_ma, cell: half });
                        x_features.push(Feature { position: edge + geom.t_ma, cell: half });
                    }
                    y_features.push(Feature { position: metal_top - geom.t_ma, cell: half });
                }
                if geom.t_ms > 0.0 {
                    let half = (geom.t_ms / 2.0).min(fine);
                    y_features.push(Feature { position: -geom.t_ms, cell: half });
                }
                if geom.t_sa > 0.0 {
                    let half = (geom.t_sa / 2.0).min(fine);
                    y_features.push(Feature { position: -geom.t_sa, cell: half });
                }
            }
            Dressing::BareMetal { .. } => {}
            Dressing::OxideWrap { metal_top, t } => {
                let half = (t / 2.0).min(fine);
                x_features.push(Feature { position: x_inner - t, cell: half });
                x_features.push(Feature { position: x_outer + t, cell: half });
                y_features.push(Feature { position: metal_top + t, cell: half });
            }
        }
    }

    let y_top = geom.t_nb + extent;
    let y_bottom = -extent;
    y_features.push(Feature { position: y_top, cell: extent });
    y_features.push(Feature { position: y_bottom, cell: extent });

    let half_xs = mesh::graded_lines(&x_features, grid.growth_ratio);
    let mut xs: Vec<f64> = half_xs.iter().skip(1).map(|&x| -x).rev().collect();
    xs.extend(half_xs);
    let ys = mesh::graded_lines(&y_features, grid.growth_ratio);
    Mesh { xs, ys }
}

/// Region of a point for a given dressing.
///
/// The MA layer is an oxide skin grown into the metal: it occupies the outer
/// thickness t_ma of the film (top and both sidewalls), so its feet reach
/// the metal-air-substrate triple points the way a native oxide does. The
/// corner regions are squares of side t_ma just outside the footprint at
/// each triple point; MS and SA are slivers at the substrate surface, under
/// the footprint and exposed respectively.
fn region_at(geom: &CpsGeometry, scene: Dressing, x: f64, y: f64) -> Region {
    let metal_top = scene.metal_top(geom);
    let ax = x.abs();
    let x_inner = geom.gap / 2.0;
    let x_outer = geom.gap / 2.0 + geom.width;
    let in_footprint = ax >= x_inner && ax <= x_outer;

    match scene {
        Dressing::GeometryLayers { junction_t } => {
            let t_ma = geom.t_ma;
            // Distance to the nearest triple point along the surface.
            let junction_dx = (ax - x_inner).abs().min((ax - x_outer).abs());
            // Corner regions at the four metal-air-substrate triple points:
            // the oxide square of side `junction_t` sitting on the substrate
            // against the sidewall foot, plus the substrate square directly
            // beneath it. They take precedence over the layers they touch.
            let outside_band = (ax >= x_inner - junction_t && ax < x_inner)
                || (ax > x_outer && ax <= x_outer + junction_t);
            if junction_t > 0.0 && outside_band && y.abs() <= junction_t {
                return Region::Corner;
            }
            if in_footprint && y >= 0.0 && y <= metal_top && geom.t_nb > 0.0 {
                let in_skin = t_ma > 0.0
                    && (ax <= x_inner + t_ma || ax >= x_outer - t_ma || y >= metal_top - t_ma);
                if !in_skin {
                    return Region::Metal;
                }
                // The foot quarter against the junction is corner-
                // dominated; it is excluded from the MA integral.
                return if junction_dx <= 0.5 * junction_t && y <= 0.5 * junction_t {
                    Region::Margin
                } else {
                    Region::MetalAir
                };
            }
            // Interface slivers keep a two-window standoff from the
            // junctions: closer in, the field is part of the corner zone and
            // the per-unit-thickness conversion would leave its linear
            // regime.
            if geom.t_ms > 0.0 && in_footprint && y <= 0.0 && y >= -geom.t_ms {
                return if junction_dx <= 2.0 * junction_t {
                    Region::Margin
                } else {
                    Region::MetalSubstrate
                };
            }
            if geom.t_sa > 0.0 && y <= 0.0 && y >= -geom.t_sa && !in_footprint {
                return if junction_dx <= 2.0 * junction_t {
                    Region::Margin
                } else {
                    Region::SubstrateAir
                };
            }
        }
        Dressing::BareMetal { .. } => {
            if in_footprint && y >= 0.0 && y <= metal_top && geom.t_nb > 0.0 {
                return Region::Metal;
            }
        }
        Dressing::OxideWrap { metal_top, t } => {
            if in_footprint && y >= 0.0 && y <= metal_top && geom.t_nb > 0.0 {
                return Region::Metal;
            }
            let side_band =
                (ax >= x_inner - t && ax < x_inner) || (ax > x_outer && ax <= x_outer + t);
            let top_band = y >= metal_top && y <= metal_top + t;
            if (in_footprint && top_band) || (side_band && y >= 0.0 && y <= metal_top + t) {
                return Region::MetalAir;
            }
        }
    }

    if y < 0.0 {
        Region::Substrate
    } else {
        Region::Vacuum
    }
}

fn material_for(geom: &CpsGeometry, region: Region) -> CellMaterial {
    match region {
        Region::Metal => CellMaterial::Conductor,
        Region::Vacuum => CellMaterial::Dielectric {
            eps_x: geom.eps_air,
            eps_y: geom.eps_air,
        },
        Region::Substrate => {
            let (ex, ey) = geom.substrate_eps();
            CellMaterial::Dielectric { eps_x: ex, eps_y: ey }
        }
        Region::MetalAir
        | Region::MetalSubstrate
        | Region::SubstrateAir
        | Region::Corner
        | Region::Margin => CellMaterial::Dielectric {
            eps_x: geom.eps_interface,
            eps_y: geom.eps_interface,
        },
    }
}

/// Classify cells, apply the strip potentials and solve one dressing.
fn solve_scene(geom: &CpsGeometry, mesh: &Mesh, scene: Dressing, voltage: f64) -> FieldSolution {
    let nx = mesh.xs.len();
    let ny = mesh.ys.len();
    let metal_top = scene.metal_top(geom);
    let x_inner = geom.gap / 2.0;
    let x_outer = geom.gap / 2.0 + geom.width;

    let mut regions = Vec::with_capacity((nx - 1) * (ny - 1));
    let mut cells = Vec::with_capacity((nx - 1) * (ny - 1));
    for ix in 0..nx - 1 {
        let xc = 0.5 * (mesh.xs[ix] + mesh.xs[ix + 1]);
        for iy in 0..ny - 1 {
            let yc = 0.5 * (mesh.ys[iy] + mesh.ys[iy + 1]);
            let region = region_at(geom, scene, xc, yc);
            regions.push(region);
            cells.push(material_for(geom, region));
        }
    }

    // Electrode extent: under GeometryLayers the oxide skin is dielectric,
    // so the equipotential region is the metal that remains inside it.
    let (bc_x_lo, bc_x_hi, bc_y_hi) = match scene {
        Dressing::GeometryLayers { .. } if geom.t_nb > 0.0 => (
            x_inner + geom.t_ma,
            x_outer - geom.t_ma,
            metal_top - geom.t_ma,
        ),
        _ => (x_inner, x_outer, metal_top),
    };
    let mut bcs: Vec<NodeBc> = vec![None; nx * ny];
    for (ix, &x) in mesh.xs.iter().enumerate() {
        let ax = x.abs();
        if !(bc_x_lo..=bc_x_hi).contains(&ax) {
            continue;
        }
        let phi = if x > 0.0 { voltage / 2.0 } else { -voltage / 2.0 };
        for (iy, &y) in mesh.ys.iter().enumerate() {
            if y >= 0.0 && y <= bc_y_hi {
                bcs[ix * ny + iy] = Some(phi);
            }
        }
    }

    let potential = fem::solve_potential(mesh, &cells, &bcs);

    let mut region_energy_xy = [(0.0, 0.0); Region::COUNT];
    let mut total_energy = 0.0;
    for ix in 0..nx - 1 {
        for iy in 0..ny - 1 {
            let (ex, ey) = fem::cell_energy_split(mesh, &cells, &potential.values, ix, iy);
            let slot = &mut region_energy_xy[regions[ix * (ny - 1) + iy].index()];
            slot.0 += ex;
            slot.1 += ey;
            total_energy += ex + ey;
        }
    }

    FieldSolution {
        mesh: mesh.clone(),
        potential: potential.values,
        regions,
        applied_voltage: voltage,
        total_energy,
        region_energy_xy,
        max_relative_residual: potential.max_relative_residual,
        free_nodes: potential.free_nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::VACUUM_PERMITTIVITY;
    use approx::assert_relative_eq;

    /// Complete elliptic integral K(k) by the arithmetic-geometric mean.
    fn elliptic_k(k: f64) -> f64 {
        let mut a = 1.0_f64;
        let mut b = (1.0 - k * k).sqrt();
        for _ in 0..60 {
            let (an, bn) = (0.5 * (a + b), (a * b).sqrt());
            if (an - bn).abs() < 1e-17 * an {
                a = an;
                break;
            }
            a = an;
            b = bn;
        }
        std::f64::consts::PI / (2.0 * a)
    }

    /// Conformal-mapping capacitance of a zero-thickness CPS on a dielectric
    /// half-space: C = ε0·(ε_air + ε_sub)/2 · K(k')/K(k), k = g/(g + 2w).
    fn conformal_cps_capacitance(width: f64, gap: f64, eps_sub: f64, eps_air: f64) -> f64 {
        let k = gap / (gap + 2.0 * width);
        let kp = (1.0 - k * k).sqrt();
        VACUUM_PERMITTIVITY * 0.5 * (eps_air + eps_sub) * elliptic_k(kp) / elliptic_k(k)
    }

    fn cps1_bare() -> CpsGeometry {
        CpsGeometry::bare(10e-6, 10e-6, 7.1e-3, 0.0, 10.0)
    }

    #[test]
    fn capacitance_matches_conformal_oracle() {
        let geom = cps1_bare();
        let grid = GridSpec::bare(10e-6);
        let sol = solve_cross_section(&geom, &grid).unwrap();
        let analytic = conformal_cps_capacitance(10e-6, 10e-6, 10.0, 1.0);
        assert_relative_eq!(sol.capacitance(), analytic, max_relative = 0.01);
        assert!(sol.max_relative_residual < 1e-10);
    }

    #[test]
    fn potential_is_antisymmetric_across_the_midplane() {
        let mut geom = cps1_bare();
        geom.t_nb = 145e-9;
        let grid = GridSpec {
            min_cell: 5e-9,
            ..GridSpec::bare(10e-6)
        };
        let sol = solve_cross_section(&geom, &grid).unwrap();
        let nx = sol.mesh.xs.len();
        let ny = sol.mesh.ys.len();
        for ix in 0..nx {
            let mx = nx - 1 - ix;
            assert_eq!(sol.mesh.xs[ix], -sol.mesh.xs[mx]);
            for iy in 0..ny {
                let v = sol.potential[ix * ny + iy];
                let vm = sol.potential[mx * ny + iy];
                assert!(
                    (v + vm).abs() <= 1e-10,
                    "asymmetry {v} vs {vm} at ix={ix}, iy={iy}"
                );
            }
        }
    }

    #[test]
    fn uniform_scaling_preserves_capacitance() {
        let geom = cps1_bare();
        let grid = GridSpec::bare(10e-6);
        let c1 = solve_cross_section(&geom, &grid).unwrap().capacitance();
        let scaled = geom.scaled(2.0);
        let grid2 = GridSpec {
            min_cell: grid.min_cell * 2.0,
            ..grid
        };
        let c2 = solve_cross_section(&scaled, &grid2).unwrap().capacitance();
        assert_relative_eq!(c1, c2, max_relative = 1e-3);
    }

    #[test]
    fn voltage_scaling_and_reciprocity() {
        let geom = cps1_bare();
        let grid = GridSpec::bare(10e-6);
        let sol1 = solve_cross_section_at_voltage(&geom, &grid, 1.0).unwrap();
        let sol2 = solve_cross_section_at_voltage(&geom, &grid, 2.0).unwrap();
        let flipped = solve_cross_section_at_voltage(&geom, &grid, -1.0).unwrap();
        // Quadratic energy: W(2V) = 4·W(V); C invariant under both changes.
        assert_relative_eq!(sol2.total_energy, 4.0 * sol1.total_energy, max_relative = 1e-12);
        assert_relative_eq!(sol2.capacitance(), sol1.capacitance(), max_relative = 1e-12);
        assert_relative_eq!(flipped.capacitance(), sol1.capacitance(), max_relative = 1e-12);
    }

    #[test]
    fn filling_space_with_eps_two_doubles_capacitance() {
        let mut vacuum_geom = cps1_bare();
        vacuum_geom.eps_substrate = 1.0;
        let grid = GridSpec::bare(10e-6);
        let c_vac = solve_cross_section(&vacuum_geom, &grid).unwrap().capacitance();

        let mut filled = vacuum_geom.clone();
        filled.eps_substrate = 2.0;
        filled.eps_air = 2.0;
        let c_filled = solve_cross_section(&filled, &grid).unwrap().capacitance();
        assert_relative_eq!(c_filled, 2.0 * c_vac, max_relative = 1e-12);
    }

    #[test]
    fn wider_gap_has_lower_capacitance() {
        let grid = GridSpec::bare(10e-6);
        let c1 = solve_cross_section(&cps1_bare(), &grid).unwrap().capacitance();
        let cps4 = CpsGeometry::bare(10e-6, 100e-6, 5.4e-3, 0.0, 10.0);
        let c4 = solve_cross_section(&cps4, &GridSpec::bare(10e-6))
            .unwrap()
            .capacitance();
        assert!(c4 < c1);
    }

    #[test]
    fn refinement_lowers_energy_monotonically() {
        let geom = cps1_bare();
        let grid = GridSpec {
            min_cell: 50e-9,
            growth_ratio: 1.5,
            domain_factor: 12.0,
            layer_thickness: 0.0,
            linearity_tolerance: 0.10,
            refine_check: false,
        };
        let scene = Dressing::GeometryLayers { junction_t: 0.0 };
        let mesh0 = build_mesh(&geom, &grid, &[scene]);
        let mesh1 = mesh0.bisected();
        let mesh2 = mesh1.bisected();
        let e0 = solve_scene(&geom, &mesh0, scene, 1.0).total_energy;
        let e1 = solve_scene(&geom, &mesh1, scene, 1.0).total_energy;
        let e2 = solve_scene(&geom, &mesh2, scene, 1.0).total_energy;
        assert!(e1 < e0, "bisection must lower the variational energy");
        assert!(e2 < e1);
        // And the decrements shrink: the sequence is converging.
        assert!(e1 - e2 < e0 - e1);
    }

    fn cps_table(index: usize) -> CpsGeometry {
        let gaps = [10e-6, 22e-6, 46e-6, 100e-6];
        CpsGeometry::bare(10e-6, gaps[index], 7e-3, 145e-9, 10.0)
    }

    #[test]
    fn cps1_participation_matches_reference_simulation() {
        let report = participation_ratios(&cps_table(0), &GridSpec::participation()).unwrap();
        let expected = [29.7, 196.0, 192.0, 41.5];
        for (value, reference) in report.set.as_array().iter().zip(expected) {
            assert_relative_eq!(*value, reference, max_relative = 0.25);
        }
        assert!(report.linearity_deviation <= GridSpec::participation().linearity_tolerance);
    }

    #[test]
    fn participation_sums_below_unity_and_scales_inversely() {
        let geom = cps_table(0);
        let grid = GridSpec::participation();
        let report = participation_ratios(&geom, &grid).unwrap();
        let p_sum: f64 = report
            .set
            .as_array()
            .iter()
            .map(|p| p * 1e-6 * (grid.layer_thickness * 1e9))
            .sum();
        assert!(p_sum < 1.0);

        // Scaling the cross-section by two halves every per-nm participation.
        let scaled = geom.scaled(2.0);
        let grid2 = GridSpec {
            min_cell: 2.0 * grid.min_cell,
            layer_thickness: 2.0 * grid.layer_thickness,
            ..grid
        };
        let scaled_report = participation_ratios(&scaled, &grid2).unwrap();
        for (a, b) in report
            .set
            .as_array()
            .iter()
            .zip(scaled_report.set.as_array())
        {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-9);
        }
    }

    #[test]
    fn sa_layer_follows_the_boundary_condition_factor() {
        // SA-only geometry so the layer permittivity is the only contrast.
        let grid = GridSpec::participation();
        let t = grid.layer_thickness;
        let sa_only = CpsGeometry {
            t_ma: 0.0,
            t_ms: 0.0,
            t_sa: t,
            ..cps_table(0)
        };

        // With ε_l equal to the substrate it displaces there is no contrast:
        // the solution is the bare one and p̃_SA is the bare surface energy
        // band. Check through the capacitance, which is mesh-insensitive.
        let no_contrast = solve_cross_section(&sa_only, &grid).unwrap();
        let bare = solve_cross_section(
            &CpsGeometry { t_sa: 0.0, ..sa_only.clone() },
            &grid,
        )
        .unwrap();
        assert_relative_eq!(no_contrast.capacitance(), bare.capacitance(), max_relative = 1e-3);

        // Changing ε_l rescales the layer energy by ε_l·∫Et² + D_n²/ε_l;
        // predict the factor from the no-contrast tangential/normal split.
        let (x_energy, y_energy) = no_contrast.region_energy(Region::SubstrateAir);
        let predict = |eps: f64| eps / 10.0 * x_energy + 10.0 / eps * y_energy;
        let mut contrast = sa_only.clone();
        contrast.eps_interface = 5.0;
        let halved = solve_cross_section(&contrast, &grid).unwrap();
        let measured_ratio = halved.region_energy(Region::SubstrateAir).0
            + halved.region_energy(Region::SubstrateAir).1;
        let measured_ratio = measured_ratio
            / (no_contrast.region_energy(Region::SubstrateAir).0
                + no_contrast.region_energy(Region::SubstrateAir).1);
        let predicted_ratio = predict(5.0) / predict(10.0);
        assert_relative_eq!(measured_ratio, predicted_ratio, max_relative = 0.10);
    }

    #[test]
    fn unmeshable_layer_is_reported() {
        let mut geom = cps_table(0);
        geom.t_ma = 0.2e-9;
        let err = solve_cross_section(&geom, &GridSpec::participation()).unwrap_err();
        assert!(matches!(err, SolverError::UnmeshableLayer { layer: "MA", .. }));
    }

    #[test]
    fn thick_layers_fail_the_linearity_check() {
        // 200 nm layers on a 1 µm-wide, 1 µm-gap cross-section are far
        // outside the thin-layer regime.
        let geom = CpsGeometry::bare(1e-6, 1e-6, 1e-3, 800e-9, 10.0);
        let grid = GridSpec {
            min_cell: 10e-9,
            growth_ratio: 1.35,
            domain_factor: 12.0,
            layer_thickness: 200e-9,
            linearity_tolerance: 0.10,
            refine_check: false,
        };
        let result = participation_ratios(&geom, &grid);
        assert!(
            matches!(result, Err(SolverError::NonlinearRegime { .. })),
            "got {result:?}"
        );
    }

    #[test]
    fn capacitance_shift_zero_is_exactly_zero() {
        let geom = cps_table(0);
        let report = capacitance_shift(&geom, 0.0, 0.0, &GridSpec::shift()).unwrap();
        assert_eq!(report.shift, 0.0);
    }

    #[test]
    fn capacitance_shift_grows_with_oxide_thickness() {
        let geom = cps_table(0);
        let grid = GridSpec::shift();
        let mut previous = 0.0;
        for delta_nm in [1.0, 2.5, 5.0] {
            let delta_t_ma = delta_nm * 1e-9;
            let delta_t_nb = 0.37 * delta_t_ma;
            let report = capacitance_shift(&geom, delta_t_ma, delta_t_nb, &grid).unwrap();
            assert!(report.shift > previous, "shift {} at {delta_nm} nm", report.shift);
            previous = report.shift;
        }
        // The effect is small and positive: more dielectric raises C.
        assert!(previous > 0.0 && previous < 1e-2);
    }
}
