//! Convex polygon clipping used for the overlap `T1 ∩ (T2 + z)`.

pub type Point = [f64; 2];

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Small fixed-capacity convex polygon. Clipping a triangle by three half-planes never
/// produces more than six vertices.
#[derive(Clone, Copy)]
pub struct Polygon {
    pts: [Point; 8],
    len: usize,
}

impl Polygon {
    pub fn triangle(p: &[Point; 3]) -> Self {
        let mut pts = [[0.0; 2]; 8];
        pts[..3].copy_from_slice(p);
        Self { pts, len: 3 }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.pts[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len < 3
    }

    /// Keep the part where `cross(dir, x - base) >= 0` (left of the directed line).
    pub fn clip(&self, base: Point, dir: Point) -> Polygon {
        let mut out = Polygon { pts: [[0.0; 2]; 8], len: 0 };
        if self.len == 0 {
            return out;
        }
        let side = |p: Point| cross(dir, sub(p, base));
        let mut prev = self.pts[self.len - 1];
        let mut prev_side = side(prev);
        for i in 0..self.len {
            let cur = self.pts[i];
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    out.push(intersect(prev, cur, prev_side, cur_side));
                }
                out.push(cur);
            } else if prev_side >= 0.0 {
                out.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
        out
    }

    #[inline]
    fn push(&mut self, p: Point) {
        if self.len < self.pts.len() {
            self.pts[self.len] = p;
            self.len += 1;
        }
    }

    pub fn area(&self) -> f64 {
        if self.len < 3 {
            return 0.0;
        }
        let p0 = self.pts[0];
        (1..self.len - 1)
            .map(|i| 0.5 * cross(sub(self.pts[i], p0), sub(self.pts[i + 1], p0)))
            .sum()
    }
}

#[inline]
fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}
