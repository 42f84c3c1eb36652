//! Reference implementations written independently of the library, used as
//! oracles by the integration tests.
#![allow(dead_code)]

use quadlat::dataset::{sample_configuration, SamplerConfig, StanceId};
use quadlat::robot::kinematics::mass_points;
use quadlat::robot::{forward_kinematics, JointVector, RobotParams, Vec2, Vec3, NUM_JOINTS, NUM_LEGS};
use quadlat::stability::InstabilityReason;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Constraint-boundary band excluded from verdict comparisons.
pub const BOUNDARY_TOL: f64 = 1e-6;

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Winding number of `poly` around `p` (crossing-count formulation).
pub fn winding_number(p: Vec2, poly: &[Vec2]) -> i32 {
    let n = poly.len();
    let mut w = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a.y <= p.y {
            if b.y > p.y && cross(a, b, p) > 0.0 {
                w += 1;
            }
        } else if b.y <= p.y && cross(a, b, p) < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Gift-wrapping hull, counter-clockwise, collinear points dropped.
pub fn jarvis_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = Vec::new();
    for p in points {
        if !pts.contains(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 3 {
        return pts;
    }
    let start = (0..pts.len())
        .min_by(|&i, &j| pts[i].x.total_cmp(&pts[j].x).then(pts[i].y.total_cmp(&pts[j].y)))
        .unwrap();
    let mut hull = Vec::new();
    let mut cur = start;
    loop {
        hull.push(pts[cur]);
        let mut next = (cur + 1) % pts.len();
        for k in 0..pts.len() {
            let c = cross(pts[cur], pts[next], pts[k]);
            let farther = (pts[k] - pts[cur]).norm() > (pts[next] - pts[cur]).norm();
            if c < 0.0 || (c == 0.0 && farther) {
                next = k;
            }
        }
        cur = next;
        if cur == start || hull.len() > pts.len() {
            break;
        }
    }
    if hull.len() < 3 || shoelace(&hull).abs() == 0.0 {
        return hull.into_iter().take(2).collect();
    }
    hull
}

pub fn shoelace(v: &[Vec2]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| v[i].x * v[(i + 1) % n].y - v[(i + 1) % n].x * v[i].y)
        .sum::<f64>()
}

pub fn area_centroid(v: &[Vec2]) -> Vec2 {
    let n = v.len();
    let mut c = Vec2::zeros();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        c += (a + b) * (a.x * b.y - b.x * a.y);
    }
    c / (6.0 * shoelace(v))
}

/// Distance to the nearest edge line, positive inside a CCW polygon.
pub fn edge_distance(p: Vec2, v: &[Vec2]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| cross(v[i], v[(i + 1) % n], p) / (v[(i + 1) % n] - v[i]).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Rows of the static equilibrium system over all twelve force components;
/// columns of non-contact feet are zero.
fn equilibrium_rows(
    flags: [bool; NUM_LEGS],
    feet: &[Vec3; NUM_LEGS],
    com: Vec3,
    mass: f64,
    g: Vec3,
) -> (Vec<[f64; 12]>, [f64; 6]) {
    let mut rows = vec![[0.0; 12]; 6];
    for f in 0..NUM_LEGS {
        if !flags[f] {
            continue;
        }
        let p = feet[f];
        for a in 0..3 {
            rows[a][3 * f + a] = 1.0;
        }
        // (p x l)_x = p_y l_z - p_z l_y, and cyclic.
        rows[3][3 * f + 2] = p.y;
        rows[3][3 * f + 1] = -p.z;
        rows[4][3 * f] = p.z;
        rows[4][3 * f + 2] = -p.x;
        rows[5][3 * f + 1] = p.x;
        rows[5][3 * f] = -p.y;
    }
    let w = mass * g;
    let m = com.cross(&w);
    (rows, [-w.x, -w.y, -w.z, -m.x, -m.y, -m.z])
}

fn dot(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the row space by modified Gram-Schmidt with
/// re-orthogonalisation. Returns the basis and, per row, its coefficients on
/// the basis vectors found so far plus whether the row added a new one.
fn gram_schmidt(rows: &[[f64; 12]]) -> (Vec<[f64; 12]>, Vec<(Vec<f64>, bool)>) {
    let mut basis: Vec<[f64; 12]> = Vec::new();
    let mut coeffs = Vec::new();
    for r in rows {
        let mut v = *r;
        let mut l = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (k, u) in basis.iter().enumerate() {
                let c = dot(&v, u);
                l[k] += c;
                for i in 0..12 {
                    v[i] -= c * u[i];
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        let scale = dot(r, r).sqrt().max(1.0);
        if n > 1e-10 * scale {
            basis.push(v.map(|x| x / n));
            l.push(n);
            coeffs.push((l, true));
        } else {
            coeffs.push((l, false));
        }
    }
    (basis, coeffs)
}

/// Minimum-norm forces solving the equilibrium equations: the solution lies
/// in the row space, found by forward substitution on the Gram-Schmidt
/// factors. `None` if the equations are inconsistent.
pub fn min_norm_forces(
    flags: [bool; NUM_LEGS],
    feet: &[Vec3; NUM_LEGS],
    com: Vec3,
    mass: f64,
    g: Vec3,
) -> Option<[f64; 12]> {
    if !flags.iter().any(|c| *c) {
        return None;
    }
    let (rows, b) = equilibrium_rows(flags, feet, com, mass, g);
    let (basis, coeffs) = gram_schmidt(&rows);
    let mut c: Vec<f64> = Vec::new();
    for (i, (l, new)) in coeffs.iter().enumerate() {
        let known: f64 = l.iter().zip(&c).map(|(a, x)| a * x).sum();
        if *new {
            c.push((b[i] - known) / l[l.len() - 1]);
        }
    }
    let mut lam = [0.0; 12];
    for (u, ck) in basis.iter().zip(&c) {
        for i in 0..12 {
            lam[i] += ck * u[i];
        }
    }
    let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let res = rows
        .iter()
        .zip(b)
        .map(|(r, bi)| (dot(r, &lam) - bi).powi(2))
        .sum::<f64>()
        .sqrt();
    (res <= 1e-9 * bn.max(1.0)).then_some(lam)
}

/// Orthonormal basis of the null space of the equilibrium system restricted
/// to the contact feet.
pub fn equilibrium_null_space(flags: [bool; NUM_LEGS], feet: &[Vec3; NUM_LEGS]) -> Vec<[f64; 12]> {
    let (rows, _) = equilibrium_rows(flags, feet, Vec3::zeros(), 1.0, Vec3::zeros());
    let mut all = rows.clone();
    for f in 0..NUM_LEGS {
        if flags[f] {
            for a in 0..3 {
                let mut e = [0.0; 12];
                e[3 * f + a] = 1.0;
                all.push(e);
            }
        }
    }
    let (basis, _) = gram_schmidt(&all);
    let rank = gram_schmidt(&rows).0.len();
    basis[rank..].to_vec()
}

/// Smallest force norm among `n` random equilibrium solutions around `lam`.
pub fn random_search_min_norm(lam: &[f64; 12], null: &[[f64; 12]], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = |v: &[f64; 12]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let scale = 10f64.powi(-(i as i32 % 6)) * norm(lam).max(1.0);
        let mut v = *lam;
        for u in null {
            let t: f64 = rng.random_range(-1.0..1.0) * scale;
            for k in 0..12 {
                v[k] += t * u[k];
            }
        }
        best = best.min(norm(&v));
    }
    best
}

/// Joint torques from virtual work: the derivative of the work done by the
/// contact forces and gravity with respect to each joint, by central
/// differences of forward kinematics and the link mass points.
pub fn virtual_work_torques(q: &JointVector, lam: &[f64; 12], params: &RobotParams, g: Vec3) -> [f64; NUM_JOINTS] {
    let h = 1e-6;
    let potential = |q: &JointVector| -> f64 {
        let feet = forward_kinematics(q, params);
        let contact: f64 = (0..NUM_LEGS)
            .map(|f| feet.0[f].dot(&Vec3::new(lam[3 * f], lam[3 * f + 1], lam[3 * f + 2])))
            .sum();
        let weight: f64 = mass_points(q, params).iter().map(|(m, p)| m * g.dot(p)).sum();
        contact + weight
    };
    let mut tau = [0.0; NUM_JOINTS];
    for (j, t) in tau.iter_mut().enumerate() {
        let (mut up, mut down) = (*q, *q);
        up.0[j] += h;
        down.0[j] -= h;
        *t = -(potential(&up) - potential(&down)) / (2.0 * h);
    }
    tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerdict {
    pub stable: bool,
    pub reasons: Vec<InstabilityReason>,
    /// Smallest distance of any checked quantity to its limit.
    pub slack: f64,
}

/// Stability verdict built from the oracles above.
pub fn oracle_verdict(q: &JointVector, flags: [bool; NUM_LEGS], params: &RobotParams, margin: f64) -> OracleVerdict {
    let g = Vec3::new(0.0, 0.0, -params.gravity_accel);
    let feet = forward_kinematics(q, params).0;
    let pts = mass_points(q, params);
    let mass: f64 = pts.iter().map(|(m, _)| m).sum();
    let com = pts.iter().fold(Vec3::zeros(), |a, (m, p)| a + *m * p) / mass;
    let mut reasons = Vec::new();
    let mut slack = f64::INFINITY;
    match min_norm_forces(flags, &feet, com, mass, g) {
        None => reasons.push(InstabilityReason::NoEquilibrium),
        Some(lam) => {
            let mu = params.friction_coeff;
            for f in 0..NUM_LEGS {
                if !flags[f] {
                    continue;
                }
                let (x, y, z) = (lam[3 * f], lam[3 * f + 1], lam[3 * f + 2]);
                let s = z.min(mu * z - x.hypot(y));
                slack = slack.min(s.abs());
                if s < 0.0 {
                    reasons.push(InstabilityReason::FrictionViolation(f));
                }
            }
            for (j, t) in virtual_work_torques(q, &lam, params, g).iter().enumerate() {
                let s = params.torque_limit - t.abs();
                slack = slack.min(s.abs());
                if s < 0.0 {
                    reasons.push(InstabilityReason::TorqueViolation(j));
                }
            }
        }
    }
    let contact_pts: Vec<Vec2> = (0..NUM_LEGS)
        .filter(|&f| flags[f])
        .map(|f| Vec2::new(feet[f].x, feet[f].y))
        .collect();
    let hull = jarvis_hull(&contact_pts);
    if hull.len() < 3 {
        reasons.push(InstabilityReason::DegenerateSupport);
    } else {
        let c = area_centroid(&hull);
        let s = (1.0 - margin).sqrt();
        let shrunk: Vec<Vec2> = hull.iter().map(|v| c + s * (v - c)).collect();
        let p = Vec2::new(com.x, com.y);
        slack = slack.min(edge_distance(p, &shrunk).abs());
        if winding_number(p, &shrunk) == 0 {
            reasons.push(InstabilityReason::ComOutsidePolygon);
        }
    }
    reasons.sort();
    reasons.dedup();
    OracleVerdict {
        stable: reasons.is_empty(),
        reasons,
        slack,
    }
}

/// A pose for oracle sweeps: a sampled configuration of a random stance with
/// every joint perturbed, so that all failure modes occur.
pub fn random_pose(seed: u64, params: &RobotParams) -> (JointVector, [bool; NUM_LEGS]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stance = StanceId::new(rng.random_range(0..8)).unwrap();
    let s = sample_configuration(stance, seed, params, &SamplerConfig::default()).unwrap();
    let mut q = s.x.q();
    let spread = [0.0, 0.1, 0.3][rng.random_range(0..3)];
    for v in q.0.iter_mut() {
        *v += rng.random_range(-1.0..=1.0) * spread;
    }
    (q, s.contact_flags)
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let d = n(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let s = n(&mut a.iter().copied()).max(n(&mut b.iter().copied()));
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}
