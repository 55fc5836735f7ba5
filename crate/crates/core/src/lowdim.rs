//! Low-dimensional robust mean learning: sphere nets, the slab-intersection
//! body of per-direction medians, an approximate projection oracle, and the
//! circumscribing-ball search that realizes the diameter-to-radius
//! `sqrt(2)` guarantee constructively.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constants::{BALL_NET_BUDGET, FEASIBILITY_MAX_SWEEPS, NET_PROBE_BUDGET};
use crate::error::{Error, Result};
use crate::gaussian::{normal_quantile, Subspace};
use crate::univariate::directional_median;
use crate::{Samples, Vector};

/// Default dimension cap of the learner (runtime grows as `(1/rho)^k`).
pub const DEFAULT_DIM_CAP: usize = crate::constants::LOWDIM_CAP_DEFAULT;

/// Greedy covering of the unit sphere in `R^dim` at Euclidean resolution
/// `radius`: probe points are added whenever uncovered, so the result is
/// simultaneously a `radius`-packing (bounding its size) and, after the
/// probe run finishes clean, an empirical `radius`-cover.
///
/// Deterministic: probes come from a fixed-seed generator. Used for both
/// direction nets and covers of quadratic-polynomial subspaces.
pub(crate) fn greedy_sphere_cover(dim: usize, radius: f64, probe_budget: usize) -> Vec<Vector> {
    assert!(dim >= 1);
    if dim == 1 {
        return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let mut net: Vec<Vector> = Vec::new();
    // seed with +-e_i so covers of symmetric families contain mirror pairs
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(dim);
            e[i] = sign;
            net.push(e);
        }
    }
    let r2 = radius * radius;
    let mut streak = 0usize;
    while streak < probe_budget {
        let mut u = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let n = u.norm();
        if n < 1e-12 {
            continue;
        }
        u /= n;
        let covered = net.iter().any(|v| (&u - v).norm_squared() <= r2);
        if covered {
            streak += 1;
        } else {
            // antipodal closure keeps the cover symmetric
            net.push(-&u);
            net.push(u);
            streak = 0;
        }
    }
    net
}

fn probe_budget_for(dim: usize) -> usize {
    (NET_PROBE_BUDGET >> dim.saturating_sub(4)).max(10_000)
}

/// `beta`-net of the unit sphere in `R^k` by greedy farthest-point packing.
/// Size is bounded by the `beta`-packing number, `(c/beta)^k`.
pub fn sphere_net(k: usize, beta: f64) -> Result<Vec<Vector>> {
    if k == 0 || k > DEFAULT_DIM_CAP {
        return Err(Error::InvalidInput(format!(
            "sphere net dimension {k} outside 1..={DEFAULT_DIM_CAP}"
        )));
    }
    if !(0.0..1.0).contains(&beta) || beta == 0.0 {
        return Err(Error::InvalidInput("resolution must lie in (0, 1)".into()));
    }
    Ok(greedy_sphere_cover(k, beta, probe_budget_for(k)))
}

/// Intersection of slabs `|<v, y> - b_v| <= beta` over a direction net.
/// Lives in the coordinate frame of the subspace it was built for.
#[derive(Debug, Clone)]
pub struct SlabBody {
    pub directions: Vec<Vector>,
    pub centers: Vec<f64>,
    pub half_width: f64,
}

impl SlabBody {
    pub fn membership(&self, y: &Vector, tol: f64) -> bool {
        self.worst_violation(y) <= tol
    }

    /// Largest slab violation of `y` (<= 0 inside the body).
    pub fn worst_violation(&self, y: &Vector) -> f64 {
        self.directions
            .iter()
            .zip(&self.centers)
            .map(|(v, b)| (v.dot(y) - b).abs() - self.half_width)
            .fold(f64::MIN, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.directions.first().map_or(0, |v| v.len())
    }
}

/// Builds the slab body of per-direction medians of `S` projected onto a
/// `rho`-net of the unit sphere of `V`. The returned body lives in the
/// coordinate frame of `V`. Under goodness the projected true mean is a
/// member.
pub fn build_slab_body(
    samples: &Samples,
    subspace: &Subspace,
    rho: f64,
    beta: f64,
) -> Result<SlabBody> {
    let k = subspace.dim();
    let coords = subspace.coords(samples);
    let directions = sphere_net(k, rho)?;
    let mut centers = Vec::with_capacity(directions.len());
    for v in &directions {
        centers.push(directional_median(&coords, v)?);
    }
    Ok(SlabBody {
        directions,
        centers,
        half_width: beta,
    })
}

/// Median robustness bound at corruption fraction `eps`: the corrupted
/// directional median solves `(1 - eps) Phi(t) = 1/2`, i.e.
/// `t = Phi^{-1}(1/(2(1-eps)))` (the exact finite-`eps` form of the
/// asymptotic `sqrt(pi/2) eps`).
pub fn median_shift_bound(eps: f64) -> f64 {
    if eps <= 0.0 {
        0.0
    } else {
        normal_quantile(1.0 / (2.0 * (1.0 - eps)))
    }
}

/// Finds some point of the body by cyclic projection onto the slabs,
/// starting from the coordinate-wise median. Declares the body empty after
/// the sweep budget.
pub fn feasible_point(body: &SlabBody, start: &Vector, tol: f64) -> Result<Vector> {
    let mut x = start.clone();
    for _ in 0..FEASIBILITY_MAX_SWEEPS {
        let mut worst: f64 = 0.0;
        for (v, b) in body.directions.iter().zip(&body.centers) {
            let s = v.dot(&x);
            let clamped = s.clamp(b - body.half_width, b + body.half_width);
            let excess = s - clamped;
            if excess != 0.0 {
                x.axpy(-excess, v, 1.0);
                worst = worst.max(excess.abs());
            }
        }
        if worst <= tol {
            return Ok(x);
        }
    }
    Err(Error::GoodnessViolated(
        "slab body appears empty (feasibility search did not converge)".into(),
    ))
}

/// `rho'`-projection oracle onto the slab body via Dykstra's algorithm:
/// returns `x` in the body with `|x - y| <= dist(y, body) + rho'`.
/// Slab corrections stay parallel to their directions, so one scalar per
/// slab suffices.
pub fn proj_oracle(body: &SlabBody, y: &Vector, rho_prime: f64) -> Result<Vector> {
    if rho_prime <= 0.0 {
        return Err(Error::InvalidInput("accuracy must be positive".into()));
    }
    let tol = rho_prime / 10.0;
    let mut x = y.clone();
    let mut corrections = vec![0.0f64; body.directions.len()];
    let max_sweeps = 2_000usize;
    for sweep in 0..max_sweeps {
        let mut moved: f64 = 0.0;
        for (i, (v, b)) in body.directions.iter().zip(&body.centers).enumerate() {
            let s = v.dot(&x) + corrections[i];
            let clamped = s.clamp(b - body.half_width, b + body.half_width);
            let excess = s - clamped;
            let step = corrections[i] - excess;
            if step != 0.0 {
                x.axpy(step, v, 1.0);
                moved = moved.max(step.abs());
            }
            corrections[i] = excess;
        }
        if moved <= tol && body.membership(&x, tol) {
            return Ok(x);
        }
        // Dykstra converges quickly here; a long stall on an infeasible
        // iterate indicates an empty body.
        if sweep == max_sweeps - 1 {
            return Err(Error::GoodnessViolated(
                "projection oracle failed to converge (empty body?)".into(),
            ));
        }
    }
    unreachable!()
}

/// Lattice covering of the ball `B(center, radius)` at covering radius
/// `resolution`, coarsened geometrically if the point count would exceed
/// `budget`. Returns the points and the effective resolution.
pub(crate) fn ball_net(
    center: &Vector,
    radius: f64,
    resolution: f64,
    budget: usize,
) -> (Vec<Vector>, f64) {
    let mut res = resolution.max(1e-12);
    loop {
        if let Some(points) = try_lattice(center, radius, res, budget) {
            return (points, res);
        }
        res *= 1.15;
    }
}

fn try_lattice(center: &Vector, radius: f64, res: f64, budget: usize) -> Option<Vec<Vector>> {
    let k = center.len();
    let spacing = 2.0 * res / (k as f64).sqrt();
    let reach = radius + res;
    let half = (reach / spacing).floor() as i64;
    // quick volume estimate before enumerating
    let unit_ball_vol = {
        let kf = k as f64;
        std::f64::consts::PI.powf(kf / 2.0) / gamma_half_int(k + 2)
    };
    let est = unit_ball_vol * (reach / spacing).powi(k as i32) * 1.2 + 10.0;
    if est > budget as f64 * 1.5 {
        return None;
    }
    let mut points = Vec::new();
    let mut offset = vec![0i64; k];
    enumerate_lattice(
        center, spacing, reach * reach, half, 0, 0.0, &mut offset, &mut points,
    );
    if points.len() > budget { None } else { Some(points) }
}

/// Gamma((k)/2) for integer k >= 1 (k here is passed as the doubled index).
fn gamma_half_int(two_a: usize) -> f64 {
    // Gamma(a) with a = two_a / 2
    if two_a % 2 == 0 {
        let a = two_a / 2;
        (1..a).map(|i| i as f64).product::<f64>().max(1.0)
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while (x as f64) < two_a as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate_lattice(
    center: &Vector,
    spacing: f64,
    reach_sq: f64,
    half: i64,
    dim: usize,
    partial: f64,
    offset: &mut Vec<i64>,
    out: &mut Vec<Vector>,
) {
    if dim == center.len() {
        let mut p = center.clone();
        for (i, &o) in offset.iter().enumerate() {
            p[i] += o as f64 * spacing;
        }
        out.push(p);
        return;
    }
    for o in -half..=half {
        let step = o as f64 * spacing;
        let acc = partial + step * step;
        if acc > reach_sq {
            continue;
        }
        offset[dim] = o;
        enumerate_lattice(center, spacing, reach_sq, half, dim + 1, acc, offset, out);
    }
}

/// Generates a `(rho_eff R)`-net of the body: nets `B(x, 2R)`, projects each
/// net point through the oracle, and keeps projections that land close.
/// `rho_eff >= rho` reflects lattice-budget coarsening.
pub fn circumscribe_net<F>(radius: f64, rho: f64, oracle: F, x: &Vector) -> Result<Vec<Vector>>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let (net, res) = ball_net(x, 2.0 * radius, rho * radius / 3.0, BALL_NET_BUDGET);
    project_net(&net, res, oracle)
}

fn project_net<F>(net: &[Vector], res: f64, oracle: F) -> Result<Vec<Vector>>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut kept = Vec::new();
    for v in net {
        let u = oracle(v)?;
        if (v - &u).norm() <= 2.0 * res {
            kept.push(u);
        }
    }
    Ok(kept)
}

/// Greedy thinning to a `radius`-packing that still covers the input.
fn thin_points(points: &[Vector], radius: f64) -> Vec<Vector> {
    let r2 = radius * radius;
    let mut kept: Vec<Vector> = Vec::new();
    for p in points {
        if !kept.iter().any(|q| (p - q).norm_squared() <= r2) {
            kept.push(p.clone());
        }
    }
    kept
}

/// Finds a center whose ball of radius `sqrt(2) (1 + 2 rho_eff) R` contains
/// the body, given that the body has diameter at most `2R` and contains `x`.
/// Scans the ball net for the candidate minimizing the maximum distance to
/// the body net and accepts it when that distance is within
/// `sqrt(2) (1 + rho_eff) R`.
pub fn circumscribe<F>(radius: f64, rho: f64, oracle: F, x: &Vector) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    if x.is_empty() {
        return Ok(x.clone());
    }
    let (net, res) = ball_net(x, 2.0 * radius, rho * radius / 3.0, BALL_NET_BUDGET);
    circumscribe_with_net(radius, &net, res, oracle)
}

fn circumscribe_with_net<F>(radius: f64, net: &[Vector], res: f64, oracle: F) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let body_net = project_net(net, res, &oracle)?;
    if body_net.is_empty() {
        return Err(Error::Internal(
            "no net point projected into the body".into(),
        ));
    }
    let body_net = thin_points(&body_net, res);
    let accept = std::f64::consts::SQRT_2 * (radius + 3.0 * res);

    let mut best: Option<(f64, &Vector)> = None;
    for v in net {
        let far = body_net
            .iter()
            .map(|u| (v - u).norm())
            .fold(f64::MIN, f64::max);
        if far <= accept && best.is_none_or(|(b, _)| far < b) {
            best = Some((far, v));
        }
    }
    match best {
        Some((_, v)) => Ok(v.clone()),
        None => Err(Error::Internal(
            "no candidate center within the guaranteed radius; diameter bound violated?".into(),
        )),
    }
}

/// Options for [`learn_mean_low_d`].
#[derive(Debug, Clone, Copy)]
pub struct LowDimOptions {
    pub dim_cap: usize,
}

impl Default for LowDimOptions {
    fn default() -> Self {
        Self {
            dim_cap: DEFAULT_DIM_CAP,
        }
    }
}

/// Robustly learns the projection of the mean onto `V` from an
/// `eps`-corrupted set: direction net, per-direction medians, slab body,
/// feasibility search, then the circumscribing-ball center.
///
/// Returns an ambient vector lying in `V`, with
/// `|Pi_V mu - out| <= sqrt(2) (1 + 2 rho)/(1 - rho) * beta` under goodness,
/// where `beta` is the slab half-width below. Deterministic.
pub fn learn_mean_low_d(
    subspace: &Subspace,
    _gamma: f64,
    epsilon: f64,
    _delta: f64,
    samples: &Samples,
    rho: f64,
    options: &LowDimOptions,
) -> Result<Vector> {
    let k = subspace.dim();
    let d = subspace.ambient_dim();
    if k == 0 {
        return Ok(DVector::zeros(d));
    }
    if k > options.dim_cap {
        return Err(Error::InvalidInput(format!(
            "subspace dimension {k} above cap {}",
            options.dim_cap
        )));
    }
    if !(0.0..1.0).contains(&rho) || rho == 0.0 {
        return Err(Error::InvalidInput("rho must lie in (0, 1)".into()));
    }
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    // Direction-net cost is (1/rho)^k; coarsen in higher dimension.
    let rho_dir = match k {
        0..=3 => rho,
        4 => rho.max(0.35),
        5 => rho.max(0.45),
        _ => rho.max(0.55),
    };
    let beta = slab_half_width(epsilon, n);
    let body = build_slab_body(samples, subspace, rho_dir, beta)?;

    let coords = subspace.coords(samples);
    let start = DVector::from_fn(k, |i, _| {
        crate::univariate::median(coords.column(i).as_slice()).unwrap_or(0.0)
    });
    let big_r = beta / (1.0 - rho_dir);
    let rho_prime = rho_dir * big_r / 3.0;
    let x0 = feasible_point(&body, &start, rho_prime / 10.0)?;

    // The ball search guarantees sqrt(2)(1 + 2 rho_eff) R against the
    // feasible point's trivial diameter bound of 2R; when the lattice
    // budget forces rho_eff past the break-even point the search cannot
    // improve on x0, so return x0 directly.
    let (net, res_eff) = ball_net(&x0, 2.0 * big_r, rho_dir * big_r / 3.0, BALL_NET_BUDGET);
    let rho_eff = 3.0 * res_eff / big_r;
    if std::f64::consts::SQRT_2 * (1.0 + 2.0 * rho_eff) >= 2.0 {
        return Ok(subspace.from_coords(&x0));
    }
    let center =
        circumscribe_with_net(big_r, &net, res_eff, |y| proj_oracle(&body, y, rho_prime))?;
    Ok(subspace.from_coords(&center))
}

/// Slab half-width: the exact finite-`eps` median bound plus sampling slack
/// (stand-in for the analysis' `O(gamma eps / d) + o(eps)` terms).
pub fn slab_half_width(epsilon: f64, n: usize) -> f64 {
    median_shift_bound(epsilon) + 3.2 / (n as f64).sqrt()
}

/// Exact minimum enclosing ball (Welzl), used as a reference oracle in tests
/// for dimensions up to ~4. Returns `(center, radius)`.
pub fn welzl_min_ball(points: &[Vector]) -> (Vector, f64) {
    assert!(!points.is_empty());
    let k = points[0].len();
    let mut shuffled: Vec<&Vector> = points.iter().collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(0xba11);
    shuffled.shuffle(&mut rng);
    let mut boundary: Vec<Vector> = Vec::with_capacity(k + 1);
    welzl_recurse(&shuffled, shuffled.len(), &mut boundary, k)
}

fn welzl_recurse(
    points: &[&Vector],
    limit: usize,
    boundary: &mut Vec<Vector>,
    k: usize,
) -> (Vector, f64) {
    let mut ball = circumball(boundary, k);
    if boundary.len() == k + 1 {
        return ball;
    }
    for i in 0..limit {
        let p = points[i];
        if (p - &ball.0).norm() > ball.1 + 1e-10 {
            boundary.push(p.clone());
            ball = welzl_recurse(points, i, boundary, k);
            boundary.pop();
        }
    }
    ball
}

/// Smallest ball with the given points on its boundary (up to k+1 affinely
/// independent points in R^k).
fn circumball(boundary: &[Vector], k: usize) -> (Vector, f64) {
    match boundary.len() {
        0 => (DVector::zeros(k), 0.0),
        1 => (boundary[0].clone(), 0.0),
        m => {
            let p0 = &boundary[0];
            let mut a = DMatrix::zeros(m - 1, k);
            let mut b = DVector::zeros(m - 1);
            for i in 1..m {
                let diff = &boundary[i] - p0;
                a.row_mut(i - 1).copy_from(&diff.transpose());
                b[i - 1] = 0.5 * diff.dot(&(&boundary[i] + p0));
            }
            // minimal-norm solution of A c = b restricted to the affine hull
            let svd = a.clone().svd(true, true);
            let c = svd.solve(&b, 1e-12).unwrap_or_else(|_| p0.clone());
            let radius = boundary
                .iter()
                .map(|p| (p - &c).norm())
                .fold(0.0f64, f64::max);
            (c, radius)
        }
    }
}
