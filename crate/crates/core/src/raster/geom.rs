//! Screen-space primitives with analytic derivatives.

pub type Vec2 = [f64; 2];

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Edge functions of `p` against triangle `(p0, p1, p2)`; their sum is the
/// doubled signed area.
#[inline]
pub fn edge_functions(p: Vec2, t: &[Vec2; 3]) -> [f64; 3] {
    let w0 = sub(t[0], p);
    let w1 = sub(t[1], p);
    let w2 = sub(t[2], p);
    [cross(w1, w2), cross(w2, w0), cross(w0, w1)]
}

#[inline]
pub fn signed_area2(t: &[Vec2; 3]) -> f64 {
    cross(sub(t[1], t[0]), sub(t[2], t[0]))
}

/// Inclusive point-in-triangle test for either winding.
#[inline]
pub fn inside(e: &[f64; 3], area2: f64) -> bool {
    if area2 > 0.0 {
        e[0] >= 0.0 && e[1] >= 0.0 && e[2] >= 0.0
    } else {
        e[0] <= 0.0 && e[1] <= 0.0 && e[2] <= 0.0
    }
}

/// Gradient of the screen-space barycentrics `b = E / A`, contracted with
/// `g_b`, with respect to the three triangle vertices.
pub fn barycentric_backward(p: Vec2, t: &[Vec2; 3], b: &[f64; 3], area2: f64, g_b: &[f64; 3]) -> [Vec2; 3] {
    let w = [sub(t[0], p), sub(t[1], p), sub(t[2], p)];
    // dE_i/dp_k for the cyclic structure E_i = cross(w_{i+1}, w_{i+2}).
    // d cross(a, b)/da = (b.y, -b.x), d cross(a, b)/db = (-a.y, a.x).
    let mut d_e = [[[0.0; 2]; 3]; 3]; // [i][k]
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        d_e[i][j] = [w[k][1], -w[k][0]];
        d_e[i][k] = [-w[j][1], w[j][0]];
    }
    let gb_b: f64 = (0..3).map(|i| g_b[i] * b[i]).sum();
    let mut out = [[0.0; 2]; 3];
    for k in 0..3 {
        for c in 0..2 {
            let mut ge = 0.0;
            let mut ga = 0.0;
            for i in 0..3 {
                ge += g_b[i] * d_e[i][k][c];
                ga += d_e[i][k][c];
            }
            out[k][c] = (ge - gb_b * ga) / area2;
        }
    }
    out
}

/// Closest point of segment `a-b` to `p`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentDistance {
    pub dist: f64,
    /// Clamped segment parameter of the closest point.
    pub t: f64,
}

#[inline]
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> SegmentDistance {
    let e = sub(b, a);
    let w = sub(p, a);
    let l2 = dot(e, e);
    let t = if l2 > 0.0 { (dot(w, e) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * e[0], a[1] + t * e[1]];
    let d = sub(p, q);
    SegmentDistance {
        dist: dot(d, d).sqrt(),
        t,
    }
}

/// Gradients of the segment distance with respect to `a` and `b`.
#[inline]
pub fn segment_distance_backward(p: Vec2, a: Vec2, b: Vec2, sd: &SegmentDistance) -> (Vec2, Vec2) {
    if sd.dist <= 0.0 {
        return ([0.0; 2], [0.0; 2]);
    }
    let q = [a[0] + sd.t * (b[0] - a[0]), a[1] + sd.t * (b[1] - a[1])];
    let n = [(p[0] - q[0]) / sd.dist, (p[1] - q[1]) / sd.dist];
    (
        [-(1.0 - sd.t) * n[0], -(1.0 - sd.t) * n[1]],
        [-sd.t * n[0], -sd.t * n[1]],
    )
}

/// Gradients of the (clamped) segment parameter with respect to `a` and `b`.
#[inline]
pub fn segment_param_backward(p: Vec2, a: Vec2, b: Vec2, t: f64) -> (Vec2, Vec2) {
    let e = sub(b, a);
    let l2 = dot(e, e);
    if !(t > 0.0 && t < 1.0) || l2 <= 0.0 {
        return ([0.0; 2], [0.0; 2]);
    }
    let w = sub(p, a);
    let da = [
        (-e[0] - w[0]) / l2 + 2.0 * t * e[0] / l2,
        (-e[1] - w[1]) / l2 + 2.0 * t * e[1] / l2,
    ];
    let db = [w[0] / l2 - 2.0 * t * e[0] / l2, w[1] / l2 - 2.0 * t * e[1] / l2];
    (da, db)
}

/// Inner and outer limits (in units of sigma) of the coverage taper.
pub const TAPER_START: f64 = 3.0;
pub const TAPER_END: f64 = 5.0;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn taper(a: f64) -> (f64, f64) {
    if a <= TAPER_START {
        (0.0, 0.0)
    } else if a >= TAPER_END {
        (1.0, 0.0)
    } else {
        let w = TAPER_END - TAPER_START;
        let u = (a - TAPER_START) / w;
        (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / w)
    }
}

/// Soft coverage as a function of signed distance over sigma (positive
/// inside). A logistic curve, blended C1-smoothly to exactly 0 below
/// `-TAPER_END` and exactly 1 above `TAPER_END`. Returns value and derivative.
#[inline]
pub fn coverage(x: f64) -> (f64, f64) {
    if x >= TAPER_END {
        return (1.0, 0.0);
    }
    if x <= -TAPER_END {
        return (0.0, 0.0);
    }
    let s = sigmoid(x);
    let ds = s * (1.0 - s);
    if x >= 0.0 {
        let (tau, dtau) = taper(x);
        (s + (1.0 - s) * tau, ds * (1.0 - tau) + (1.0 - s) * dtau)
    } else {
        let (tau, dtau) = taper(-x);
        (s * (1.0 - tau), ds * (1.0 - tau) + s * dtau)
    }
}
