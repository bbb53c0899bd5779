//! Graded rectilinear meshes for the cross-section solver.
//!
//! Grid lines cluster geometrically toward feature coordinates (conductor
//! edges, interface-layer boundaries) and grow geometrically toward the far
//! boundary, so nm-thick layers and a mm-scale domain coexist in one mesh.

/// A coordinate the mesh must contain, with the cell size requested next
/// to it.
#[derive(Debug, Clone, Copy)]
pub struct Feature {
    pub position: f64,
    pub cell: f64,
}

/// Tensor-product mesh: `xs` and `ys` are strictly increasing grid-line
/// coordinates. Cells are the rectangles between adjacent lines.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Mesh {
    pub fn cell_count(&self) -> usize {
        (self.xs.len() - 1) * (self.ys.len() - 1)
    }

    pub fn node_count(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// Nested refinement: bisect every interval in both directions.
    pub fn bisected(&self) -> Mesh {
        Mesh {
            xs: bisect(&self.xs),
            ys: bisect(&self.ys),
        }
    }
}

fn bisect(lines: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(lines.len() * 2 - 1);
    for pair in lines.windows(2) {
        out.push(pair[0]);
        out.push(0.5 * (pair[0] + pair[1]));
    }
    out.push(*lines.last().expect("non-empty line set"));
    out
}

/// Build one axis of graded lines from feature points. Between adjacent
/// features the cells grow geometrically from both ends until they meet and
/// are then shrunk uniformly to tile the span exactly, so the requested
/// feature-adjacent resolution is never coarsened.
pub fn graded_lines(features: &[Feature], growth: f64) -> Vec<f64> {
    assert!(growth > 1.0, "growth ratio must exceed 1");
    let mut sorted: Vec<Feature> = features.to_vec();
    sorted.sort_by(|a, b| a.position.total_cmp(&b.position));

    // Merge coincident features, keeping the finer cell request.
    let mut merged: Vec<Feature> = Vec::with_capacity(sorted.len());
    for f in sorted {
        match merged.last_mut() {
            Some(last) if nearly_equal(last.position, f.position, last.cell.min(f.cell)) => {
                last.cell = last.cell.min(f.cell);
            }
            _ => merged.push(f),
        }
    }
    assert!(merged.len() >= 2, "need at least two distinct features");

    let mut lines = Vec::new();
    lines.push(merged[0].position);
    for pair in merged.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        lines.extend(fill_segment(a.position, b.position, a.cell, b.cell, growth));
        lines.push(b.position);
    }
    lines
}

fn nearly_equal(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-6 * scale
}

/// Interior points strictly between `a` and `b`, cells growing from size
/// `ca` at the left end and `cb` at the right end.
fn fill_segment(a: f64, b: f64, ca: f64, cb: f64, growth: f64) -> Vec<f64> {
    let gap = b - a;
    debug_assert!(gap > 0.0);
    if gap <= ca.min(cb) * (1.0 + 1e-12) {
        return Vec::new();
    }

    let mut left_sizes = Vec::new();
    let mut right_sizes = Vec::new();
    let mut next_left = ca;
    let mut next_right = cb;
    let mut total = 0.0;
    while total < gap {
        if next_left <= next_right {
            left_sizes.push(next_left);
            total += next_left;
            next_left *= growth;
        } else {
            right_sizes.push(next_right);
            total += next_right;
            next_right *= growth;
        }
    }
    let scale = gap / total;

    // One cumulative pass over the full size sequence; the final cumulative
    // point is b itself and is owned by the caller.
    let mut sizes = left_sizes;
    sizes.extend(right_sizes.into_iter().rev());
    let mut points = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut x = a;
    for size in &sizes[..sizes.len() - 1] {
        x += size * scale;
        points.push(x);
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_layer_gets_exactly_two_cells() {
        let lines = graded_lines(
            &[
                Feature { position: 0.0, cell: 0.5e-9 },
                Feature { position: 1e-9, cell: 0.5e-9 },
            ],
            1.35,
        );
        assert_eq!(lines.len(), 3);
        assert!((lines[1] - 0.5e-9).abs() < 1e-21);
    }

    #[test]
    fn lines_are_strictly_increasing_and_contain_features() {
        let features = [
            Feature { position: -750e-6, cell: 750e-6 },
            Feature { position: -15e-6, cell: 0.5e-9 },
            Feature { position: -5e-6, cell: 0.5e-9 },
            Feature { position: -5e-6 + 1e-9, cell: 0.5e-9 },
            Feature { position: 5e-6, cell: 0.5e-9 },
            Feature { position: 15e-6, cell: 0.5e-9 },
            Feature { position: 750e-6, cell: 750e-6 },
        ];
        let lines = graded_lines(&features, 1.35);
        assert!(lines.windows(2).all(|w| w[1] > w[0]));
        for f in &features {
            assert!(
                lines.iter().any(|&x| x == f.position),
                "missing feature {}",
                f.position
            );
        }
        // Grading keeps the total line count moderate.
        assert!(lines.len() < 400, "line count {}", lines.len());
    }

    #[test]
    fn resolution_at_features_is_never_coarsened() {
        let lines = graded_lines(
            &[
                Feature { position: 0.0, cell: 1e-9 },
                Feature { position: 1e-3, cell: 1e-3 },
            ],
            1.3,
        );
        assert!(lines[1] - lines[0] <= 1e-9 * (1.0 + 1e-9));
    }

    #[test]
    fn scaling_all_features_by_two_scales_lines_exactly() {
        let base = [
            Feature { position: -3e-5, cell: 1e-9 },
            Feature { position: 0.0, cell: 1e-9 },
            Feature { position: 7e-6, cell: 2e-9 },
            Feature { position: 3e-5, cell: 3e-5 },
        ];
        let scaled: Vec<Feature> = base
            .iter()
            .map(|f| Feature { position: 2.0 * f.position, cell: 2.0 * f.cell })
            .collect();
        let a = graded_lines(&base, 1.35);
        let b = graded_lines(&scaled, 1.35);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }
}
