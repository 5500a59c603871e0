//! Dense 2-D lookup table with bilinear interpolation and clamp-to-edge
//! extrapolation.

use crate::scalar::Scalar;

/// Position of a query along one axis: lower index, upper index, weight of
/// the upper node, and whether the query fell outside the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AxisPos<T> {
    lo: usize,
    hi: usize,
    t: T,
    clamped: bool,
}

fn locate<T: Scalar>(axis: &[T], v: T) -> AxisPos<T> {
    let last = axis.len() - 1;
    if v <= axis[0] {
        return AxisPos {
            lo: 0,
            hi: 0,
            t: T::zero(),
            clamped: v < axis[0],
        };
    }
    if v >= axis[last] {
        return AxisPos {
            lo: last,
            hi: last,
            t: T::zero(),
            clamped: v > axis[last],
        };
    }
    // First node strictly greater than v; v lies in [axis[hi-1], axis[hi]).
    let hi = axis.partition_point(|a| *a <= v);
    let lo = hi - 1;
    let t = (v - axis[lo]) / (axis[hi] - axis[lo]);
    AxisPos {
        lo,
        hi,
        t,
        clamped: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: Vec<T>,
    cols: Vec<T>,
    /// Row-major, `rows.len() * cols.len()` values.
    values: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated<T> {
    pub value: T,
    pub extrapolated: bool,
}

impl<T: Scalar> Grid<T> {
    /// Axes must be non-empty and strictly increasing; `values` is
    /// row-major with one row per `rows` node.
    pub fn new(rows: Vec<T>, cols: Vec<T>, values: Vec<T>) -> Result<Self, String> {
        for (name, axis) in [("row", &rows), ("column", &cols)] {
            if axis.is_empty() {
                return Err(format!("{name} axis is empty"));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(format!("{name} axis has a non-finite node"));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("{name} axis is not strictly increasing"));
            }
        }
        if values.len() != rows.len() * cols.len() {
            return Err(format!(
                "expected {}x{} values, got {}",
                rows.len(),
                cols.len(),
                values.len()
            ));
        }
        Ok(Grid { rows, cols, values })
    }

    pub fn from_fn(rows: Vec<T>, cols: Vec<T>, f: impl Fn(T, T) -> T) -> Result<Self, String> {
        let values = rows
            .iter()
            .flat_map(|r| cols.iter().map(|c| f(*r, *c)).collect::<Vec<_>>())
            .collect();
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> &[T] {
        &self.rows
    }

    pub fn cols(&self) -> &[T] {
        &self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols.len() + j]
    }

    pub fn interpolate(&self, row: T, col: T) -> Interpolated<T> {
        let r = locate(&self.rows, row);
        let c = locate(&self.cols, col);
        let one = T::one();
        let v00 = self.at(r.lo, c.lo);
        let v01 = self.at(r.lo, c.hi);
        let v10 = self.at(r.hi, c.lo);
        let v11 = self.at(r.hi, c.hi);
        let top = v00 * (one - c.t) + v01 * c.t;
        let bottom = v10 * (one - c.t) + v11 * c.t;
        Interpolated {
            value: top * (one - r.t) + bottom * r.t,
            extrapolated: r.clamped || c.clamped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid<f64> {
        Grid::new(
            vec![1.0, 2.0, 4.0],
            vec![0.0, 100.0],
            vec![10.0, 20.0, 12.0, 26.0, 16.0, 40.0],
        )
        .unwrap()
    }

    #[test]
    fn exact_nodes_return_table_values() {
        let g = grid();
        for (i, r) in g.rows().to_vec().into_iter().enumerate() {
            for (j, c) in g.cols().to_vec().into_iter().enumerate() {
                let p = g.interpolate(r, c);
                assert_eq!(p.value, g.at(i, j));
                assert!(!p.extrapolated);
            }
        }
    }

    #[test]
    fn midpoint_between_rows_is_mean() {
        let p = grid().interpolate(1.5, 0.0);
        assert_eq!(p.value, 11.0);
    }

    #[test]
    fn interior_cell_matches_hand_weights() {
        // Row 3.0 sits halfway in [2,4]; column 25 is a quarter of [0,100].
        // Corners 12, 26, 16, 40 with weights .375, .125, .375, .125.
        let p = grid().interpolate(3.0, 25.0);
        let expected = 12.0 * 0.375 + 26.0 * 0.125 + 16.0 * 0.375 + 40.0 * 0.125;
        assert!((p.value - expected).abs() < 1e-12);
    }

    #[test]
    fn outside_is_clamped_and_flagged() {
        let g = grid();
        let p = g.interpolate(8.0, 500.0);
        assert_eq!(p.value, 40.0);
        assert!(p.extrapolated);
        let p = g.interpolate(0.5, 0.0);
        assert_eq!(p.value, 10.0);
        assert!(p.extrapolated);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Grid::new(vec![1.0, 1.0], vec![0.0], vec![1.0, 1.0]).is_err());
        assert!(Grid::<f64>::new(vec![], vec![0.0], vec![]).is_err());
        assert!(Grid::new(vec![1.0], vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let g: Grid<f32> = Grid::new(vec![1.0, 2.0], vec![0.0], vec![2.0, 4.0]).unwrap();
        assert_eq!(g.interpolate(1.5, 0.0).value, 3.0);
    }

    proptest::proptest! {
        #[test]
        fn continuous_at_nodes(i in 0usize..3, j in 0usize..2, eps in 1e-9f64..1e-6) {
            let g = grid();
            let (r, c) = (g.rows()[i], g.cols()[j]);
            let v = g.at(i, j);
            for (dr, dc) in [(eps, 0.0), (-eps, 0.0), (0.0, eps), (0.0, -eps), (eps, eps), (-eps, -eps)] {
                let p = g.interpolate(r + dr, c + dc).value;
                proptest::prop_assert!((p - v).abs() < 1e-3);
            }
        }
    }
}
