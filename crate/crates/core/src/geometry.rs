//! Planar geometry: points, axis-aligned rectangles and affine transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Self) -> T {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Point2<U> {
        Point2::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }
}

/// Axis-aligned rectangle given by its corners, `x0 <= x1` and `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Real> Rect<T> {
    /// Builds a rectangle, swapping corners as needed so extents are non-negative.
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        Self::new(cx - w * half, cy - h * half, cx + w * half, cy + h * half)
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2<T> {
        let half = T::lit(0.5);
        Point2::new((self.x0 + self.x1) * half, (self.y0 + self.y1) * half)
    }

    pub fn contains(&self, p: &Point2<T>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 <= x1 && y0 <= y1).then_some(Self { x0, y0, x1, y1 })
    }

    /// Smallest rectangle containing all the given points.
    pub fn bounding(points: impl IntoIterator<Item = Point2<T>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Self::new(first.x, first.y, first.x, first.y);
        for p in it {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        Some(r)
    }
}

/// Intersection over union of two rectangles. Degenerate (zero-area) inputs give 0.
pub fn iou<T: Real>(a: &Rect<T>, b: &Rect<T>) -> T {
    let inter = match a.intersection(b) {
        Some(r) => r.area(),
        None => return T::zero(),
    };
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one()).max(T::zero())
}

/// Planar affine transform stored as a row-major 3x3 matrix whose last row is `(0, 0, 1)`.
///
/// Always invertible: constructors reject a singular upper-left 2x2 block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[T; 3]; 3]", into = "[[T; 3]; 3]")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Affine<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Affine<T> {
    pub fn identity() -> Self {
        Self::from_params([T::one(), T::zero(), T::zero(), T::zero(), T::one(), T::zero()])
            .expect("identity is invertible")
    }

    /// Validates a full 3x3 matrix: exact `(0, 0, 1)` last row and invertible linear part.
    pub fn new(m: [[T; 3]; 3]) -> Result<Self> {
        if m[2][0] != T::zero() || m[2][1] != T::zero() || m[2][2] != T::one() {
            return Err(Error::DegenerateGeometry(format!(
                "affine last row must be (0, 0, 1), got ({}, {}, {})",
                m[2][0], m[2][1], m[2][2]
            )));
        }
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry("non-finite matrix entry".into()));
        }
        let t = Self { m };
        if !t.is_invertible() {
            return Err(Error::NonInvertible);
        }
        Ok(t)
    }

    /// `[a, b, c, d, e, f]` maps `(x, y)` to `(a x + b y + c, d x + e y + f)`.
    pub fn from_params(p: [T; 6]) -> Result<Self> {
        Self::new([
            [p[0], p[1], p[2]],
            [p[3], p[4], p[5]],
            [T::zero(), T::zero(), T::one()],
        ])
    }

    pub fn scale_translate(sx: T, sy: T, tx: T, ty: T) -> Result<Self> {
        Self::from_params([sx, T::zero(), tx, T::zero(), sy, ty])
    }

    pub fn translation(tx: T, ty: T) -> Self {
        Self::from_params([T::one(), T::zero(), tx, T::zero(), T::one(), ty])
            .expect("translation is invertible")
    }

    pub fn matrix(&self) -> [[T; 3]; 3] {
        self.m
    }

    pub fn params(&self) -> [T; 6] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
    }

    pub fn det2(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    fn is_invertible(&self) -> bool {
        let scale = self.m[0][0].abs().max(self.m[0][1].abs())
            * self.m[1][0].abs().max(self.m[1][1].abs());
        let det = self.det2();
        det.is_finite() && det != T::zero() && det.abs() > scale * T::epsilon()
    }

    pub fn apply(&self, p: &Point2<T>) -> Point2<T> {
        let m = &self.m;
        Point2::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det2();
        let [a, b, c, d, e, f] = self.params();
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        Self::from_params([ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)])
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        let a = &self.m;
        let b = &inner.m;
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).fold(T::zero(), |acc, k| acc + a[r][k] * b[k][c]);
            }
        }
        out[2] = [T::zero(), T::zero(), T::one()];
        Self::new(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.params()
            .iter()
            .zip(other.params().iter())
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    pub fn cast<U: Real>(&self) -> Result<Affine<U>> {
        let p = self.params();
        Affine::from_params(p.map(|v| U::lit(v.to_f64_lossy())))
    }

    /// Least-squares affine fit mapping `src[i]` onto `dst[i]`; exact for three
    /// non-collinear pairs.
    pub fn fit(src: &[Point2<T>], dst: &[Point2<T>]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::InvalidInput(format!(
                "fit needs equal-length point lists ({} vs {})",
                src.len(),
                dst.len()
            )));
        }
        if src.len() < 3 {
            return Err(Error::Estimation(format!(
                "affine fit needs at least 3 pairs, got {}",
                src.len()
            )));
        }
        let n = T::from_usize(src.len()).expect("count fits scalar");
        let mean = |pts: &[Point2<T>]| {
            let (sx, sy) = pts
                .iter()
                .fold((T::zero(), T::zero()), |(ax, ay), p| (ax + p.x, ay + p.y));
            Point2::new(sx / n, sy / n)
        };
        let ms = mean(src);
        let md = mean(dst);

        // Centered normal equations; the translation follows from the means.
        let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
        let (mut sxu, mut syu, mut sxv, mut syv) = (T::zero(), T::zero(), T::zero(), T::zero());
        for (s, d) in src.iter().zip(dst) {
            let x = s.x - ms.x;
            let y = s.y - ms.y;
            let u = d.x - md.x;
            let v = d.y - md.y;
            sxx = sxx + x * x;
            sxy = sxy + x * y;
            syy = syy + y * y;
            sxu = sxu + x * u;
            syu = syu + y * u;
            sxv = sxv + x * v;
            syv = syv + y * v;
        }
        let det = sxx * syy - sxy * sxy;
        if !(det > sxx * syy * T::degeneracy_tol()) || det <= T::zero() {
            return Err(Error::Estimation(
                "source points are collinear or coincident".into(),
            ));
        }
        let a = (syy * sxu - sxy * syu) / det;
        let b = (sxx * syu - sxy * sxu) / det;
        let d = (syy * sxv - sxy * syv) / det;
        let e = (sxx * syv - sxy * sxv) / det;
        let c = md.x - a * ms.x - b * ms.y;
        let f = md.y - d * ms.x - e * ms.y;
        Self::from_params([a, b, c, d, e, f])
            .map_err(|_| Error::Estimation("fitted transform is singular".into()))
    }
}

impl<T: Real> TryFrom<[[T; 3]; 3]> for Affine<T> {
    type Error = Error;

    fn try_from(m: [[T; 3]; 3]) -> Result<Self> {
        Self::new(m)
    }
}

impl<T: Real> From<Affine<T>> for [[T; 3]; 3] {
    fn from(a: Affine<T>) -> Self {
        a.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect<f64> {
        Rect::new(x0, y0, x1, y1)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&r(0., 0., 10., 10.), &r(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&r(0., 0., 10., 10.), &r(20., 20., 30., 30.)), 0.0);
        let v = iou(&r(0., 0., 10., 10.), &r(5., 0., 15., 10.));
        assert!((v - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&r(1., 1., 1., 1.), &r(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn apply_examples() {
        let p = Point2::new(5.0, 7.0);
        assert_eq!(Affine::<f64>::identity().apply(&p), p);
        let t = Affine::scale_translate(2.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(t.apply(&Point2::new(3.0, 4.0)), Point2::new(7.0, 9.0));
        let t = Affine::translation(10.0, -2.0);
        assert_eq!(t.apply(&Point2::new(0.0, 0.0)), Point2::new(10.0, -2.0));
    }

    #[test]
    fn rejects_bad_last_row_and_singular() {
        let m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]];
        assert!(Affine::new(m).is_err());
        let m = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(Affine::new(m), Err(Error::NonInvertible)));
    }

    #[test]
    fn exact_fit_from_three_points() {
        let t = Affine::from_params([1.5, 0.2, -3.0, -0.1, 2.5, 7.0]).unwrap();
        let src = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(0.0, 10.0)];
        let dst: Vec<_> = src.iter().map(|p| t.apply(p)).collect();
        let fit = Affine::fit(&src, &dst).unwrap();
        assert!(fit.max_abs_diff(&t) < 1e-12);
        let col = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        assert!(Affine::fit(&col, &dst).is_err());
    }

    #[test]
    fn works_in_f32() {
        let t = Affine::<f32>::scale_translate(3.0, 3.0, 1.0, -2.0).unwrap();
        let p = t.inverse().unwrap().apply(&t.apply(&Point2::new(4.0, 5.0)));
        assert!((p.x - 4.0).abs() < 1e-5 && (p.y - 5.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn inverse_round_trip(
            a in -5.0f64..5.0, b in -5.0f64..5.0, d in -5.0f64..5.0, e in -5.0f64..5.0,
            c in -100.0f64..100.0, f in -100.0f64..100.0,
            x in -100.0f64..100.0, y in -100.0f64..100.0,
        ) {
            prop_assume!((a * e - b * d).abs() > 0.05);
            let t = Affine::from_params([a, b, c, d, e, f]).unwrap();
            let inv = t.inverse().unwrap();
            let p = Point2::new(x, y);
            let q = t.apply(&inv.apply(&p));
            prop_assert!((q.x - x).abs() < 1e-9);
            prop_assert!((q.y - y).abs() < 1e-9);
        }

        #[test]
        fn iou_symmetric_and_reflexive(
            x0 in 0.0f64..100.0, y0 in 0.0f64..100.0, w in 0.1f64..50.0, h in 0.1f64..50.0,
            u0 in 0.0f64..100.0, v0 in 0.0f64..100.0, w2 in 0.1f64..50.0, h2 in 0.1f64..50.0,
        ) {
            let a = r(x0, y0, x0 + w, y0 + h);
            let b = r(u0, v0, u0 + w2, v0 + h2);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
