//! Closed-form partial inductances of parallel rectangular bars.
//!
//! The mutual inductance of two parallel, equal-length rectangular bars with
//! uniform axial current follows from the sextuple antiderivative of 1/r
//! evaluated over the corner differences of the two cross-sections (the
//! classic exact rectangular-conductor formulas). The same expression with
//! coincident cross-sections gives the partial self-inductance.

use crate::constants::VACUUM_PERMEABILITY;

/// Rectangular bar cross-section, axis along z with length `len`.
#[derive(Debug, Clone, Copy)]
pub struct Bar {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub len: f64,
}

impl Bar {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    fn max_extent(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }
}

/// Sextuple antiderivative of 1/r for the corner-difference evaluation.
/// Even in each argument, so it is evaluated on absolute values; the guards
/// handle the 0·ln(0) and 0·atan(∞) limits that appear on shared corners.
fn kernel(x: f64, y: f64, z: f64) -> f64 {
    let (x, y, z) = (x.abs(), y.abs(), z.abs());
    let x2 = x * x;
    let y2 = y * y;
    let z2 = z * z;
    let r = (x2 + y2 + z2).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let mut f = (x2 * x2 + y2 * y2 + z2 * z2 - 3.0 * (x2 * y2 + y2 * z2 + x2 * z2)) * r / 60.0;

    let yz = (y2 + z2).sqrt();
    if x > 0.0 && yz > 0.0 {
        f += (y2 * z2 / 4.0 - y2 * y2 / 24.0 - z2 * z2 / 24.0) * x * ((x + r) / yz).ln();
    }
    let xz = (x2 + z2).sqrt();
    if y > 0.0 && xz > 0.0 {
        f += (x2 * z2 / 4.0 - x2 * x2 / 24.0 - z2 * z2 / 24.0) * y * ((y + r) / xz).ln();
    }
    let xy = (x2 + y2).sqrt();
    if z > 0.0 && xy > 0.0 {
        f += (x2 * y2 / 4.0 - x2 * x2 / 24.0 - y2 * y2 / 24.0) * z * ((z + r) / xy).ln();
    }
    if x > 0.0 && y > 0.0 && z > 0.0 {
        f -= x * y * z2 * z * (x * y / (z * r)).atan() / 6.0;
        f -= x * y2 * y * z * (x * z / (y * r)).atan() / 6.0;
        f -= x2 * x * y * z * (y * z / (x * r)).atan() / 6.0;
    }
    f
}

/// Signed corner-difference evaluation for one axis: the four interval
/// points of ∫∫ over [a0,a1] × [b0,b1] of a function of (b − a).
fn interval_points(a0: f64, a1: f64, b0: f64, b1: f64) -> [(f64, f64); 4] {
    [
        (b1 - a0, 1.0),
        (b1 - a1, -1.0),
        (b0 - a0, -1.0),
        (b0 - a1, 1.0),
    ]
}

/// Mutual inductance (H) between two parallel bars of equal length with
/// uniform current density.
///
/// Three regimes, dispatched by scale: very distant pairs use the
/// thin-filament formula; long bars (length well above the transverse
/// scales, the usual case here) use the asymptotic cross-section expansion,
/// which stays accurate where the corner-difference closed form loses all
/// significance to cancellation; comparable-scale bars use the closed form.
pub fn mutual_inductance(a: &Bar, b: &Bar) -> f64 {
    debug_assert!((a.len - b.len).abs() < 1e-12 * a.len.max(b.len));
    // Canonical argument order makes reciprocity exact in floating point.
    if (b.x0, b.y0) < (a.x0, a.y0) {
        return mutual_inductance(b, a);
    }
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let extent = a.max_extent().max(b.max_extent());
    if dist > 30.0 * extent && dist > 0.15 * a.len {
        return filament_mutual(dist, a.len);
    }
    if a.len > 20.0 * (dist + extent) {
        return long_bar_mutual(a, b);
    }
    if dist > 30.0 * extent {
        return filament_mutual(dist, a.len);
    }
    corner_sum_mutual(a, b)
}

/// Partial self-inductance (H) of a rectangular bar with uniform current.
pub fn self_inductance(bar: &Bar) -> f64 {
    if bar.len > 20.0 * bar.max_extent() {
        return long_bar_mutual(bar, bar);
    }
    corner_sum_mutual(bar, bar)
}

/// Corner-difference evaluation of the exact sextuple integral; accurate
/// when length and transverse scales are comparable.
fn corner_sum_mutual(a: &Bar, b: &Bar) -> f64 {
    let xs = interval_points(a.x0, a.x1, b.x0, b.x1);
    let ys = interval_points(a.y0, a.y1, b.y0, b.y1);
    let zs = interval_points(0.0, a.len, 0.0, b.len);
    let mut sum = 0.0;
    for (x, sx) in xs {
        for (y, sy) in ys {
            for (z, sz) in zs {
                sum += sx * sy * sz * kernel(x, y, z);
            }
        }
    }
    VACUUM_PERMEABILITY / (4.0 * std::f64::consts::PI) * sum / (a.area() * b.area())
}

/// Long-bar expansion: M = (µ0/2π)·[l·(ln 2l − 1 − ⟨ln ρ⟩) + ⟨ρ⟩ − ⟨ρ²⟩/4l],
/// with the cross-section averages ⟨·⟩ taken over both rectangles. The
/// ⟨ln ρ⟩ term is the classic geometric-mean-distance integral, evaluated by
/// quadrature graded toward the singularity; the relative truncation error
/// is O((ρ/l)⁴).
fn long_bar_mutual(a: &Bar, b: &Bar) -> f64 {
    let l = a.len;
    let ux = offset_nodes(a.x0, a.x1, b.x0, b.x1);
    let uy = offset_nodes(a.y0, a.y1, b.y0, b.y1);
    let mut int_ln = 0.0;
    let mut int_rho = 0.0;
    let mut weight_total = 0.0;
    for &(u, wu) in &ux {
        for &(v, wv) in &uy {
            let w = wu * wv;
            let rho2 = u * u + v * v;
            int_ln += w * 0.5 * rho2.ln();
            int_rho += w * rho2.sqrt();
            weight_total += w;
        }
    }
    int_ln /= weight_total;
    int_rho /= weight_total;

    // ⟨ρ²⟩ exactly from the interval moments.
    let mean_sq = |a0: f64, a1: f64, b0: f64, b1: f64| {
        let dc = 0.5 * (b0 + b1) - 0.5 * (a0 + a1);
        let wa = a1 - a0;
        let wb = b1 - b0;
        dc * dc + (wa * wa + wb * wb) / 12.0
    };
    let rho_sq = mean_sq(a.x0, a.x1, b.x0, b.x1) + mean_sq(a.y0, a.y1, b.y0, b.y1);

    VACUUM_PERMEABILITY / (2.0 * std::f64::consts::PI)
        * (l * ((2.0 * l).ln() - 1.0 - int_ln) + int_rho - rho_sq / (4.0 * l))
}

/// Quadrature nodes in the offset variable u = x_b − x_a, weighted by the
/// interval-correlation (trapezoid) function. Panels grade geometrically
/// toward u = 0 when the supports overlap, where the log kernel is singular.
fn offset_nodes(a0: f64, a1: f64, b0: f64, b1: f64) -> Vec<(f64, f64)> {
    const GL8: [(f64, f64); 8] = [
        (0.019855071751232, 0.050614268145188),
        (0.101666761293187, 0.111190517226687),
        (0.237233795041836, 0.156853322938944),
        (0.408282678752175, 0.181341891689181),
        (0.591717321247825, 0.181341891689181),
        (0.762766204958164, 0.156853322938944),
        (0.898333238706813, 0.111190517226687),
        (0.980144928248768, 0.050614268145188),
    ];
    let wa = a1 - a0;
    let wb = b1 - b0;
    let lo = b0 - a1;
    let hi = b1 - a0;
    // Correlation weight: overlap length of the intervals at offset u.
    let tent = |u: f64| -> f64 {
        let overlap = (a1.min(b1 - u) - a0.max(b0 - u)).min(wa).min(wb);
        overlap.max(0.0)
    };

    let mut boundaries = Vec::new();
    if lo < 0.0 && hi > 0.0 {
        // Geometric grading toward the singular point u = 0 on both sides.
        let grade = |end: f64, out: &mut Vec<f64>| {
            let mut step = end.abs();
            let mut edges = Vec::new();
            for _ in 0..7 {
                edges.push(step.copysign(end));
                step /= 3.0;
            }
            edges.push(0.0);
            out.extend(edges);
        };
        grade(lo, &mut boundaries);
        grade(hi, &mut boundaries);
    } else {
        for k in 0..=3 {
            boundaries.push(lo + (hi - lo) * k as f64 / 3.0);
        }
    }
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup();

    let mut nodes = Vec::with_capacity((boundaries.len() - 1) * 8);
    for pair in boundaries.windows(2) {
        let width = pair[1] - pair[0];
        if width <= 0.0 {
            continue;
        }
        for (t, w) in GL8 {
            let u = pair[0] + t * width;
            nodes.push((u, w * width * tent(u)));
        }
    }
    nodes
}

/// Mutual inductance of two parallel thin filaments of length `len` at
/// distance `dist`.
pub fn filament_mutual(dist: f64, len: f64) -> f64 {
    let ratio = len / dist;
    VACUUM_PERMEABILITY / (2.0 * std::f64::consts::PI)
        * (len * ratio.asinh() - (len * len + dist * dist).sqrt() + dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Gauss–Legendre nodes/weights (8 point) on [0, 1].
    const GL8: [(f64, f64); 8] = [
        (0.019855071751232, 0.050614268145188),
        (0.101666761293187, 0.111190517226687),
        (0.237233795041836, 0.156853322938944),
        (0.408282678752175, 0.181341891689181),
        (0.591717321247825, 0.181341891689181),
        (0.762766204958164, 0.156853322938944),
        (0.898333238706813, 0.111190517226687),
        (0.980144928248768, 0.050614268145188),
    ];

    /// Composite Gauss–Legendre points: `panels`·8 nodes on [lo, hi].
    fn composite_nodes(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 8);
        for p in 0..panels {
            let start = lo + p as f64 * width;
            for (u, w) in GL8 {
                nodes.push((start + u * width, w / panels as f64));
            }
        }
        nodes
    }

    /// Brute-force Neumann oracle: integrate the filament-pair mutual over
    /// both cross-sections with composite Gauss–Legendre quadrature.
    fn neumann_mutual(a: &Bar, b: &Bar) -> f64 {
        let ax = composite_nodes(a.x0, a.x1, 3);
        let ay = composite_nodes(a.y0, a.y1, 3);
        let bx = composite_nodes(b.x0, b.x1, 3);
        let by = composite_nodes(b.y0, b.y1, 3);
        let mut total = 0.0;
        for &(x1, w1) in &ax {
            for &(y1, w2) in &ay {
                for &(x2, w3) in &bx {
                    for &(y2, w4) in &by {
                        let dist = ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
                        total += w1 * w2 * w3 * w4 * filament_mutual(dist, a.len);
                    }
                }
            }
        }
        total
    }

    #[test]
    fn closed_form_matches_neumann_quadrature() {
        let len = 5e-3;
        let cases = [
            (
                Bar { x0: 0.0, x1: 1e-6, y0: 0.0, y1: 0.5e-6, len },
                Bar { x0: 3e-6, x1: 4.5e-6, y0: 0.2e-6, y1: 1e-6, len },
            ),
            (
                Bar { x0: 0.0, x1: 2e-6, y0: 0.0, y1: 0.1e-6, len },
                Bar { x0: 10e-6, x1: 12e-6, y0: 0.0, y1: 0.1e-6, len },
            ),
            (
                Bar { x0: 0.0, x1: 0.3e-6, y0: 0.0, y1: 0.3e-6, len },
                Bar { x0: 100e-6, x1: 100.3e-6, y0: 0.0, y1: 0.3e-6, len },
            ),
        ];
        for (a, b) in cases {
            let exact = mutual_inductance(&a, &b);
            let oracle = neumann_mutual(&a, &b);
            assert_relative_eq!(exact, oracle, max_relative = 1e-3);
        }
    }

    #[test]
    fn mutual_is_symmetric() {
        let a = Bar { x0: 0.0, x1: 1e-6, y0: 0.0, y1: 0.5e-6, len: 5e-3 };
        let b = Bar { x0: 7e-6, x1: 9e-6, y0: -1e-6, y1: 0.0, len: 5e-3 };
        assert_eq!(mutual_inductance(&a, &b), mutual_inductance(&b, &a));
    }

    #[test]
    fn self_inductance_matches_thin_bar_formula() {
        // L ≈ (µ0·l/2π)(ln(2l/(a+b)) + 1/2 + 0.2235(a+b)/l) for a thin bar.
        let bar = Bar { x0: 0.0, x1: 10e-6, y0: 0.0, y1: 0.145e-6, len: 6e-3 };
        let l = bar.len;
        let sum = (bar.x1 - bar.x0) + (bar.y1 - bar.y0);
        let approx_formula = VACUUM_PERMEABILITY * l / (2.0 * std::f64::consts::PI)
            * ((2.0 * l / sum).ln() + 0.5 + 0.2235 * sum / l);
        let exact = self_inductance(&bar);
        assert_relative_eq!(exact, approx_formula, max_relative = 0.01);
    }

    #[test]
    fn thin_bars_approach_the_filament_limit() {
        let len = 5e-3;
        let a = Bar { x0: 0.0, x1: 1e-8, y0: 0.0, y1: 1e-8, len };
        let b = Bar { x0: 5e-6, x1: 5.01e-6, y0: 0.0, y1: 1e-8, len };
        let exact = mutual_inductance(&a, &b);
        let filament = filament_mutual(5e-6, len);
        assert_relative_eq!(exact, filament, max_relative = 1e-4);
    }
}
