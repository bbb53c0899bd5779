//! Physical constants and niobium material defaults.
//!
//! Fundamental constants are CODATA 2018 values (`h` and `k_B` are exact by
//! definition since the SI redefinition). The niobium numbers are *not*
//! measured in-house; they are handbook/literature defaults and every report
//! that uses them echoes them back so the provenance stays visible.

/// Planck constant (J s, exact).
pub const PLANCK_H: f64 = 6.62607015e-34;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054571817e-34;

/// Boltzmann constant (J/K, exact).
pub const BOLTZMANN_KB: f64 = 1.380649e-23;

/// Vacuum permittivity (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;

/// Vacuum permeability (H/m).
pub const VACUUM_PERMEABILITY: f64 = 1.25663706212e-6;

/// Speed of light in vacuum (m/s, exact).
pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;

/// Nb superconducting gap (J). Default is the BCS value Δ = 1.764·k_B·T_c
/// with T_c = 9.0 K, the critical temperature measured for this film type;
/// tunneling literature values run up to ~1.55 meV.
pub const NB_GAP_ENERGY_J: f64 = 2.194e-22;

/// Nb electronic density of states at the Fermi surface (states per J per
/// µm³, both spins). Default corresponds to 1.30 states/(eV·atom) with the
/// bulk Nb atomic density 5.55e10 µm⁻³, within the band-structure
/// literature range of roughly 1.2–1.5 states/(eV·atom).
pub const NB_DOS_FERMI_PER_J_UM3: f64 = 4.50e29;

/// Nb London penetration depth (m). Literature default for clean films.
pub const NB_LONDON_DEPTH_M: f64 = 39e-9;

/// Nb mass density (kg/m³), handbook value.
pub const NB_DENSITY_KG_M3: f64 = 8570.0;

/// Nb₂O₅ mass density (kg/m³), handbook value.
pub const NB2O5_DENSITY_KG_M3: f64 = 4600.0;

/// Nb standard atomic weight (dimensionless).
pub const NB_ATOMIC_MASS: f64 = 92.906;

/// O standard atomic weight (dimensionless).
pub const O_ATOMIC_MASS: f64 = 15.999;

/// Convert a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Convert a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert!((watts_to_dbm(dbm_to_watts(-132.7)) - -132.7).abs() < 1e-9);
    }

    #[test]
    fn hbar_consistent_with_h() {
        let hbar = PLANCK_H / (2.0 * std::f64::consts::PI);
        assert!((hbar - HBAR).abs() / HBAR < 1e-9);
    }
}
