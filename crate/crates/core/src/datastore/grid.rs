use std::f64::consts::PI;

use crate::geo::{GeoBounds, GeoPoint, MAX_MERCATOR_LAT};

pub const DEFAULT_GRID_CELLS: usize = 64;

/// Uniform `cells x cells` bucketing over normalised Mercator coordinates.
/// Latitudes beyond the Mercator band fall into the edge rows.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl GridIndex {
    pub fn build(cells: usize, points: impl Iterator<Item = GeoPoint>) -> Self {
        let cells = cells.max(1);
        let mut buckets = vec![Vec::new(); cells * cells];
        for (i, p) in points.enumerate() {
            let (cx, cy) = cell_of(cells, p.lat, p.lon);
            buckets[cy * cells + cx].push(i);
        }
        Self { cells, buckets }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Indices of points in cells overlapping `b`, widened by one cell to
    /// absorb rounding at cell edges. Callers must still test containment.
    pub fn candidates<'a>(&'a self, b: &GeoBounds) -> impl Iterator<Item = usize> + 'a {
        let n = self.cells;
        let (x0, y0) = cell_of(n, b.north(), b.west());
        let (x1, y1) = cell_of(n, b.south(), b.east());
        let (x0, x1) = (x0.saturating_sub(1), (x1 + 1).min(n - 1));
        let (y0, y1) = (y0.saturating_sub(1), (y1 + 1).min(n - 1));
        let ys = if y0 <= y1 { y0..=y1 } else { 1..=0 };
        ys.flat_map(move |y| {
            let xs = if x0 <= x1 { x0..=x1 } else { 1..=0 };
            xs.flat_map(move |x| self.buckets[y * n + x].iter().copied())
        })
    }
}

fn cell_of(cells: usize, lat: f64, lon: f64) -> (usize, usize) {
    let phi = lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT).to_radians();
    let nx = (lon + 180.0) / 360.0;
    let ny = (1.0 - phi.tan().asinh() / PI) / 2.0;
    let idx = |v: f64| ((v * cells as f64).floor().max(0.0) as usize).min(cells - 1);
    (idx(nx), idx(ny))
}
