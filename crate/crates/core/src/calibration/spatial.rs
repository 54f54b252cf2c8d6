use std::collections::HashMap;

use crate::geometry::Point2;
use crate::scalar::Real;

/// Uniform-grid index over a fixed point set for radius and nearest-neighbor queries.
pub(crate) struct GridIndex<'a, T> {
    points: &'a [Point2<T>],
    cell: T,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a, T: Real> GridIndex<'a, T> {
    /// `cell` must be positive and finite.
    pub fn new(points: &'a [Point2<T>], cell: T) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key_of(p: &Point2<T>, cell: T) -> (i64, i64) {
        let k = |v: T| (v / cell).floor().to_i64().unwrap_or(0);
        (k(p.x), k(p.y))
    }

    /// Indices within `radius` (inclusive) of `q`, in ascending order.
    /// `radius` must not exceed the cell size.
    pub fn within(&self, q: &Point2<T>, radius: T, out: &mut Vec<usize>) {
        out.clear();
        let r2 = radius * radius;
        let (cx, cy) = Self::key_of(q, self.cell);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(bucket.iter().copied().filter(|&i| self.points[i].dist2(q) <= r2));
                }
            }
        }
        out.sort_unstable();
    }

    /// Nearest point within `radius` (inclusive), ties to the lowest index.
    /// `radius` must not exceed the cell size.
    pub fn nearest(&self, q: &Point2<T>, radius: T) -> Option<(usize, T)> {
        let r2 = radius * radius;
        let (cx, cy) = Self::key_of(q, self.cell);
        let mut best: Option<(usize, T)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &i in bucket {
                    let d2 = self.points[i].dist2(q);
                    if d2 > r2 {
                        continue;
                    }
                    best = match best {
                        Some((bi, bd)) if bd < d2 || (bd == d2 && bi < i) => Some((bi, bd)),
                        _ => Some((i, d2)),
                    };
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}
