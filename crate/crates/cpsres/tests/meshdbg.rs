#[test]
fn debug_alpha_values() {
    use cpsres::field_solver::CpsGeometry;
    use cpsres::inductance_solver::*;
    use cpsres::tls_model::{quasiparticle_bound, MaterialConstants};
    let lengths = [7.115e-3, 6.414e-3, 5.847e-3, 5.367e-3];
    let gaps = [10e-6, 22e-6, 46e-6, 100e-6];
    let freqs = [4.495e9, 4.986e9, 5.470e9, 5.959e9];
    for i in 0..4 {
        let geom = CpsGeometry::bare(10e-6, gaps[i], lengths[i], 145e-9, 10.0);
        let alpha = kinetic_fraction(&geom, freqs[i], 39e-9, &FilamentSpec::default()).unwrap();
        let nqp = quasiparticle_bound(8e6, alpha, freqs[i], &MaterialConstants::default()).unwrap();
        println!("CPS{}: alpha={:.5} nqp_if_this_device={:.0}", i + 1, alpha, nqp);
    }
}
