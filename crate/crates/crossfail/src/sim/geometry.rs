//! Four-way intersection geometry: two lanes per branch, right-hand traffic,
//! piecewise-linear routes (straight approach, one corner vertex, straight
//! exit), and precomputed transversal crossings between routes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry: {0}")]
    BadGeometry(String),
    #[error("noise sequence has {got} steps, expected {want}")]
    NoiseLength { got: usize, want: usize },
    #[error("ego policy returned non-finite acceleration at step {0}")]
    BadPolicy(usize),
    #[error("could not draw a non-overlapping initial state after {0} attempts")]
    SpawnFailed(usize),
    #[error("trajectory must hold {want} snapshots for this format, got {got}")]
    TrajectoryLength { got: usize, want: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("file format: {0}")]
    Format(String),
}

/// Road branch of the intersection; also used as a scenario tag (the branch
/// the intruder spawns from).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    East,
    West,
    South,
    North,
}

pub const BRANCHES: [Branch; 4] = [Branch::East, Branch::West, Branch::South, Branch::North];

impl Branch {
    pub fn index(self) -> usize {
        match self {
            Branch::East => 0,
            Branch::West => 1,
            Branch::South => 2,
            Branch::North => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Branch> {
        BRANCHES.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::East => "east",
            Branch::West => "west",
            Branch::South => "south",
            Branch::North => "north",
        }
    }

    pub fn parse(s: &str) -> Option<Branch> {
        match s.to_ascii_lowercase().as_str() {
            "east" | "e" => Some(Branch::East),
            "west" | "w" => Some(Branch::West),
            "south" | "s" => Some(Branch::South),
            "north" | "n" => Some(Branch::North),
            _ => None,
        }
    }

    /// Unit vector pointing from this branch toward the intersection center.
    fn toward_origin(self) -> [f64; 2] {
        match self {
            Branch::East => [-1.0, 0.0],
            Branch::West => [1.0, 0.0],
            Branch::South => [0.0, 1.0],
            Branch::North => [0.0, -1.0],
        }
    }

    pub fn opposite(self) -> Branch {
        match self {
            Branch::East => Branch::West,
            Branch::West => Branch::East,
            Branch::South => Branch::North,
            Branch::North => Branch::South,
        }
    }

    /// The three legal exits from this spawn branch.
    pub fn exits(self) -> [Branch; 3] {
        let mut out = [self; 3];
        let mut k = 0;
        for b in BRANCHES {
            if b != self {
                out[k] = b;
                k += 1;
            }
        }
        out
    }
}

/// clockwise 90-degree rotation: the right-hand side of a direction of travel
fn right_of(d: [f64; 2]) -> [f64; 2] {
    [d[1], -d[0]]
}

/// A route polyline with cumulative arc lengths.
#[derive(Debug, Clone)]
pub struct Route {
    pub spawn: Branch,
    pub dest: Branch,
    pub pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Route {
    fn new(spawn: Branch, dest: Branch, pts: Vec<[f64; 2]>) -> Route {
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += dist(w[0], w[1]);
            cum.push(acc);
        }
        Route { spawn, dest, pts, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn id(&self) -> usize {
        self.spawn.index() * 4 + self.dest.index()
    }

    /// Point at arc length `s` (clamped to the polyline).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        for i in 0..self.pts.len() - 1 {
            if s <= self.cum[i + 1] || i == self.pts.len() - 2 {
                let seg = self.cum[i + 1] - self.cum[i];
                let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
                return lerp(self.pts[i], self.pts[i + 1], t);
            }
        }
        *self.pts.last().unwrap()
    }

    /// Unit tangent of the segment containing arc `s` (the following segment
    /// at vertices, the last segment at and beyond the end).
    pub fn tangent_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let mut i = self.pts.len() - 2;
        for k in 0..self.pts.len() - 1 {
            if s < self.cum[k + 1] {
                i = k;
                break;
            }
        }
        let d = sub(self.pts[i + 1], self.pts[i]);
        let n = norm(d);
        [d[0] / n, d[1] / n]
    }

    /// Projects a point onto the polyline: `(arc length, lateral distance)`.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = sub(b, a);
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2
            } else {
                0.0
            }
            .clamp(0.0, 1.0);
            let q = lerp(a, b, t);
            let d = dist(p, q);
            if d < best.1 {
                best = (self.cum[i] + t * (self.cum[i + 1] - self.cum[i]), d);
            }
        }
        best
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}
fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
fn norm(a: [f64; 2]) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

/// A transversal crossing of two routes, as arc lengths on each.
#[derive(Debug, Clone, Copy)]
pub struct Crossing {
    pub arc_a: f64,
    pub arc_b: f64,
    pub point: [f64; 2],
}

/// World geometry: all 12 spawn → destination routes plus their pairwise
/// transversal crossings (conflict points). Collinear lane overlaps are not
/// crossings; same-path interactions go through leader projection instead.
#[derive(Debug, Clone)]
pub struct WorldGeometry {
    pub lane_width: f64,
    pub branch_length: f64,
    routes: Vec<Route>,
    /// crossings[a_id * 16 + b_id], ids as `Route::id`, sorted by `arc_a`.
    crossings: Vec<Vec<Crossing>>,
}

impl WorldGeometry {
    pub fn build(lane_width: f64, branch_length: f64) -> Result<WorldGeometry, SimError> {
        if !(lane_width > 0.0) || !lane_width.is_finite() {
            return Err(SimError::BadGeometry(format!(
                "lane width must be positive, got {lane_width}"
            )));
        }
        if !(branch_length > 4.0 * lane_width) || !branch_length.is_finite() {
            return Err(SimError::BadGeometry(format!(
                "branch length {branch_length} too short for lane width {lane_width}"
            )));
        }
        let half = lane_width / 2.0;
        let mut routes = Vec::with_capacity(12);
        for spawn in BRANCHES {
            for dest in spawn.exits() {
                let din = spawn.toward_origin();
                let rin = right_of(din);
                let start = [
                    -din[0] * branch_length + rin[0] * half,
                    -din[1] * branch_length + rin[1] * half,
                ];
                let dout = dest.toward_origin().map(|v| -v); // away from origin
                let rout = right_of(dout);
                let end = [
                    dout[0] * branch_length + rout[0] * half,
                    dout[1] * branch_length + rout[1] * half,
                ];
                let pts = if dest == spawn.opposite() {
                    // straight through: inbound and outbound lane centers are
                    // collinear for right-hand traffic
                    vec![start, end]
                } else {
                    // corner vertex: intersection of the two lane center lines
                    let corner = if din[0] == 0.0 {
                        // inbound vertical (x fixed), outbound horizontal (y fixed)
                        [start[0], end[1]]
                    } else {
                        [end[0], start[1]]
                    };
                    vec![start, corner, end]
                };
                routes.push(Route::new(spawn, dest, pts));
            }
        }

        let mut crossings = vec![Vec::new(); 16 * 16];
        let mut by_id: Vec<Option<&Route>> = vec![None; 16];
        for r in &routes {
            by_id[r.id()] = Some(r);
        }
        for ra in &routes {
            for rb in &routes {
                if ra.id() == rb.id() {
                    continue;
                }
                let mut list = Vec::new();
                for i in 0..ra.pts.len() - 1 {
                    for j in 0..rb.pts.len() - 1 {
                        if let Some((ta, tb, p)) = seg_intersect(
                            ra.pts[i],
                            ra.pts[i + 1],
                            rb.pts[j],
                            rb.pts[j + 1],
                        ) {
                            let arc_a = ra.cum[i] + ta * (ra.cum[i + 1] - ra.cum[i]);
                            let arc_b = rb.cum[j] + tb * (rb.cum[j + 1] - rb.cum[j]);
                            // dedupe corner touches shared by two segments
                            if !list.iter().any(|c: &Crossing| {
                                (c.arc_a - arc_a).abs() < 1e-9 && (c.arc_b - arc_b).abs() < 1e-9
                            }) {
                                list.push(Crossing { arc_a, arc_b, point: p });
                            }
                        }
                    }
                }
                list.sort_by(|a, b| a.arc_a.partial_cmp(&b.arc_a).unwrap());
                crossings[ra.id() * 16 + rb.id()] = list;
            }
        }

        Ok(WorldGeometry {
            lane_width,
            branch_length,
            routes,
            crossings,
        })
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, spawn: Branch, dest: Branch) -> &Route {
        self.routes
            .iter()
            .find(|r| r.spawn == spawn && r.dest == dest)
            .expect("spawn != dest routes always exist")
    }

    /// Transversal crossings of route `a` with route `b`, ascending in
    /// `a`-arc.
    pub fn crossings(&self, a: &Route, b: &Route) -> &[Crossing] {
        &self.crossings[a.id() * 16 + b.id()]
    }

    /// Distance from a position to the intersection box (the square where
    /// the two roads overlap), measured along the branch axes; zero inside.
    pub fn distance_to_intersection(&self, pos: [f64; 2]) -> f64 {
        (pos[0].abs().max(pos[1].abs()) - self.lane_width).max(0.0)
    }

    /// Half-width of the intersection box (= lane width, two lanes per road).
    pub fn intersection_half(&self) -> f64 {
        self.lane_width
    }
}

/// Transversal segment intersection with inclusive endpoints; collinear
/// overlaps return None.
fn seg_intersect(
    a0: [f64; 2],
    a1: [f64; 2],
    b0: [f64; 2],
    b1: [f64; 2],
) -> Option<(f64, f64, [f64; 2])> {
    let r = sub(a1, a0);
    let s = sub(b1, b0);
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = sub(b0, a0);
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    let eps = 1e-9;
    if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
        let t = t.clamp(0.0, 1.0);
        let u = u.clamp(0.0, 1.0);
        Some((t, u, [a0[0] + t * r[0], a0[1] + t * r[1]]))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldGeometry {
        WorldGeometry::build(0.04, 1.0).unwrap()
    }

    #[test]
    fn twelve_routes_each_starting_at_branch_length() {
        let w = world();
        assert_eq!(w.routes().len(), 12);
        for r in w.routes() {
            let s = r.pts[0];
            let axial = s[0].abs().max(s[1].abs());
            assert!((axial - 1.0).abs() < 1e-12, "{:?} starts at {s:?}", (r.spawn, r.dest));
            let e = *r.pts.last().unwrap();
            assert!((e[0].abs().max(e[1].abs()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn south_to_north_is_single_straight_segment_through_origin() {
        let w = world();
        let r = w.route(Branch::South, Branch::North);
        assert_eq!(r.pts.len(), 2);
        assert_eq!(r.pts[0][0], r.pts[1][0]);
        assert!(r.pts[0][1] < 0.0 && r.pts[1][1] > 0.0);
        // the lane center passes beside the origin by half a lane width
        assert!((r.pts[0][0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn turn_route_length_matches_hand_summed_segments() {
        let w = world();
        let r = w.route(Branch::South, Branch::East);
        // (0.02,-1) -> (0.02,-0.02) -> (1,-0.02)
        let expect = (1.0f64 - 0.02) + (1.0 - 0.02);
        assert!((r.length() - expect).abs() < 1e-12, "{}", r.length());
        // independent summation over the polyline
        let mut acc = 0.0;
        for seg in r.pts.windows(2) {
            acc += ((seg[1][0] - seg[0][0]).powi(2) + (seg[1][1] - seg[0][1]).powi(2)).sqrt();
        }
        assert!((r.length() - acc).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(WorldGeometry::build(0.0, 1.0).is_err());
        assert!(WorldGeometry::build(-0.1, 1.0).is_err());
        assert!(WorldGeometry::build(0.04, 0.0).is_err());
    }

    #[test]
    fn crossing_routes_have_conflict_points() {
        let w = world();
        let ego = w.route(Branch::South, Branch::North);
        let intr = w.route(Branch::East, Branch::West);
        let cs = w.crossings(ego, intr);
        assert_eq!(cs.len(), 1);
        assert!((cs[0].point[0] - 0.02).abs() < 1e-9);
        assert!((cs[0].point[1] - 0.02).abs() < 1e-9);

        // parallel opposite-direction straights never cross
        let opp = w.route(Branch::North, Branch::South);
        assert!(w.crossings(ego, opp).is_empty());
    }

    #[test]
    fn projection_recovers_arc_and_lateral_offset() {
        let w = world();
        let r = w.route(Branch::South, Branch::East);
        let s = 0.37;
        let p = r.point_at(s);
        let (arc, lat) = r.project(p);
        assert!((arc - s).abs() < 1e-12);
        assert!(lat < 1e-12);
        let off = [p[0] + 0.015, p[1]]; // push sideways on the approach leg
        let (arc2, lat2) = r.project(off);
        assert!((arc2 - s).abs() < 1e-12);
        assert!((lat2 - 0.015).abs() < 1e-12);
    }

    #[test]
    fn distance_to_intersection_is_axial() {
        let w = world();
        assert!((w.distance_to_intersection([0.02, -0.54]) - 0.5).abs() < 1e-12);
        assert_eq!(w.distance_to_intersection([0.01, 0.02]), 0.0);
    }
}
