//! Numerical checks of the convexity, convergence and stability guarantees on
//! toy manifolds and analytic constrained instances where every quantity has
//! an exact reference.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::solver::{projected_subgradient, step_size, CoordinateSelector, FnRegularizer, PgdConfig, Regularizer, Schedule};

/// Convex compact sets with exact distance functions.
#[derive(Clone, Debug, PartialEq)]
pub enum ToyManifold {
    Ball { center: Vec<f64>, radius: f64 },
    Segment { start: Vec<f64>, end: Vec<f64> },
    /// Convex hull of the vertices.
    Polytope { vertices: Vec<Vec<f64>> },
    /// Finite sample whose convex hull stands in for the set.
    PointCloud { points: Vec<Vec<f64>> },
}

/// Hull projection enumerates vertex subsets, so keep vertex sets small.
const MAX_HULL_POINTS: usize = 24;

impl ToyManifold {
    pub fn unit_ball(dim: usize) -> Self {
        ToyManifold::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    /// `{(a, a) : a in [0, 1]}`
    pub fn diagonal_segment() -> Self {
        ToyManifold::Segment {
            start: vec![0.0, 0.0],
            end: vec![1.0, 1.0],
        }
    }

    /// Triangle with vertices `(0,0)`, `(1,0)`, `(0,1)`.
    pub fn triangle() -> Self {
        ToyManifold::Polytope {
            vertices: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToyManifold::Ball { .. } => "ball",
            ToyManifold::Segment { .. } => "segment",
            ToyManifold::Polytope { .. } => "polytope",
            ToyManifold::PointCloud { .. } => "point-cloud",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ToyManifold::Ball { center, .. } => center.len(),
            ToyManifold::Segment { start, .. } => start.len(),
            ToyManifold::Polytope { vertices: p } | ToyManifold::PointCloud { points: p } => {
                p.first().map_or(0, Vec::len)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if d == 0 {
            return bad(format!("{} manifold has dimension 0", self.name()));
        }
        match self {
            ToyManifold::Ball { radius, .. } if !(*radius > 0.0) => bad(format!("ball radius {radius} must be positive")),
            ToyManifold::Segment { end, .. } if end.len() != d => bad("segment endpoints differ in dimension".into()),
            ToyManifold::Polytope { vertices: p } | ToyManifold::PointCloud { points: p } => {
                if p.len() > MAX_HULL_POINTS {
                    bad(format!("{} points exceed the hull limit {MAX_HULL_POINTS}", p.len()))
                } else if p.iter().any(|v| v.len() != d) {
                    bad("hull points differ in dimension".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        match self {
            ToyManifold::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ToyManifold::Segment { start, end } => (
                (0..d).map(|i| start[i].min(end[i])).collect(),
                (0..d).map(|i| start[i].max(end[i])).collect(),
            ),
            ToyManifold::Polytope { vertices: p } | ToyManifold::PointCloud { points: p } => (
                (0..d).map(|i| p.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min)).collect(),
                (0..d).map(|i| p.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max)).collect(),
            ),
        }
    }

    /// A random point of the set: uniform for balls and segments, a
    /// random convex combination for hulls.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ToyManifold::Ball { center, radius } => {
                let d = center.len();
                let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                center.iter().zip(&dir).map(|(c, u)| c + r * u / n).collect()
            }
            ToyManifold::Segment { start, end } => {
                let a: f64 = rng.random();
                start.iter().zip(end).map(|(s, e)| s + a * (e - s)).collect()
            }
            ToyManifold::Polytope { vertices: p } | ToyManifold::PointCloud { points: p } => {
                let w: Vec<f64> = p.iter().map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let total: f64 = w.iter().sum();
                (0..self.dim())
                    .map(|i| p.iter().zip(&w).map(|(v, wi)| v[i] * wi / total).sum())
                    .collect()
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Calls `f` on every subset of `0..n` with `1..=k` elements.
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        for i in start..n {
            cur.push(i);
            f(cur);
            if cur.len() < k {
                rec(i + 1, n, k, cur, f);
            }
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Euclidean projection onto the convex hull of `points`. Every affinely
/// independent subset of at most `d + 1` points is tried; the projection onto
/// the affine hull of the subset is kept when its barycentric weights are
/// non-negative, and the nearest such candidate is the answer.
fn hull_projection(points: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut best = points[0].clone();
    let mut best_d = dist(&best, x);
    for_each_subset(points.len(), d + 1, &mut |s| {
        let base = &points[s[0]];
        let k = s.len() - 1;
        let weights = if k == 0 {
            vec![1.0]
        } else {
            let m = DMatrix::from_fn(d, k, |r, c| points[s[c + 1]][r] - base[r]);
            let rhs = DVector::from_fn(d, |r, _| x[r] - base[r]);
            let gram = m.transpose() * &m;
            let Some(chol) = gram.clone().cholesky() else { return };
            // Skip nearly dependent subsets; an independent one covers the face.
            if gram.determinant() < 1e-12 * gram.diagonal().iter().product::<f64>() {
                return;
            }
            let lam = chol.solve(&(m.transpose() * rhs));
            let mut w = vec![1.0 - lam.sum()];
            w.extend(lam.iter());
            w
        };
        if weights.iter().any(|&w| w < -1e-12) {
            return;
        }
        let p: Vec<f64> = (0..d)
            .map(|r| s.iter().zip(&weights).map(|(&i, w)| points[i][r] * w.max(0.0)).sum())
            .collect();
        let pd = dist(&p, x);
        if pd < best_d {
            best_d = pd;
            best = p;
        }
    });
    best
}

/// Nearest point of the set to `x`.
pub fn manifold_projection(m: &ToyManifold, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.dim() {
        return Err(Error::Shape {
            context: "manifold point",
            expected: vec![m.dim()],
            found: vec![x.len()],
        });
    }
    Ok(match m {
        ToyManifold::Ball { center, radius } => {
            let off: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
            let n = norm(&off);
            if n <= *radius {
                x.to_vec()
            } else {
                center.iter().zip(&off).map(|(c, o)| c + radius * o / n).collect()
            }
        }
        ToyManifold::Segment { start, end } => {
            let dir: Vec<f64> = end.iter().zip(start).map(|(e, s)| e - s).collect();
            let len2: f64 = dir.iter().map(|v| v * v).sum();
            let a = if len2 == 0.0 {
                0.0
            } else {
                (x.iter().zip(start).zip(&dir).map(|((xi, s), di)| (xi - s) * di).sum::<f64>() / len2).clamp(0.0, 1.0)
            };
            start.iter().zip(&dir).map(|(s, di)| s + a * di).collect()
        }
        ToyManifold::Polytope { vertices: p } | ToyManifold::PointCloud { points: p } => hull_projection(p, x),
    })
}

/// Euclidean distance from `x` to the set.
pub fn manifold_distance(m: &ToyManifold, x: &[f64]) -> Result<f64> {
    if let ToyManifold::Ball { center, radius } = m {
        if x.len() == center.len() {
            return Ok((dist(x, center) - radius).max(0.0));
        }
    }
    Ok(dist(&manifold_projection(m, x)?, x))
}

/// Outcome of one check: named statistics plus the configuration that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub stats: Vec<(String, f64)>,
    pub config: Vec<(String, String)>,
}

impl VerificationReport {
    fn new(check: &str) -> Self {
        Self {
            check: check.to_string(),
            passed: false,
            stats: Vec::new(),
            config: Vec::new(),
        }
    }

    fn stat(mut self, key: &str, v: f64) -> Self {
        self.stats.push((key.to_string(), v));
        self
    }

    fn conf(mut self, key: &str, v: impl ToString) -> Self {
        self.config.push((key.to_string(), v.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.stats.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}: {}\n", self.check, if self.passed { "PASS" } else { "FAIL" });
        for (k, v) in &self.stats {
            let _ = writeln!(s, "  {k} = {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "  config.{k} = {v}");
        }
        s
    }
}

pub const REPORT_CSV_HEADER: &str = "check,passed,key,value";

pub fn reports_to_csv(reports: &[VerificationReport]) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        for (k, v) in &r.stats {
            let _ = writeln!(s, "{},{},{k},{v:e}", r.check, r.passed);
        }
        for (k, v) in &r.config {
            let _ = writeln!(s, "{},{},config.{k},{v}", r.check, r.passed);
        }
    }
    s
}

fn uniform_in(lo: &[f64], hi: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..=*b)).collect()
}

fn padded_bounds(m: &ToyManifold, margin: f64) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = m.bounds();
    (lo.iter().map(|v| v - margin).collect(), hi.iter().map(|v| v + margin).collect())
}

/// Checks that the distance to `m` is 1-Lipschitz and midpoint convex on
/// random pairs drawn from the set's bounding box padded by 1.
pub fn verify_distance_properties(m: &ToyManifold, n_pairs: usize, seed: u64) -> Result<VerificationReport> {
    m.validate()?;
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("need at least one pair".into()));
    }
    let tol = 1e-9;
    let (lo, hi) = padded_bounds(m, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lip_max, mut cvx_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut violations = 0usize;
    for _ in 0..n_pairs {
        let x = uniform_in(&lo, &hi, &mut rng);
        let y = uniform_in(&lo, &hi, &mut rng);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (dx, dy, dm) = (manifold_distance(m, &x)?, manifold_distance(m, &y)?, manifold_distance(m, &mid)?);
        let lip = (dx - dy).abs() - dist(&x, &y);
        let cvx = dm - 0.5 * (dx + dy);
        lip_max = lip_max.max(lip);
        cvx_max = cvx_max.max(cvx);
        violations += usize::from(lip > tol) + usize::from(cvx > tol);
    }
    let mut r = VerificationReport::new(&format!("distance-properties/{}", m.name()))
        .stat("pairs", n_pairs as f64)
        .stat("violations", violations as f64)
        .stat("max_lipschitz_excess", lip_max)
        .stat("max_convexity_excess", cvx_max)
        .conf("tolerance", tol)
        .conf("seed", seed);
    r.passed = violations == 0;
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimaConfig {
    pub n_starts: usize,
    /// Endpoint distance counted as landing on the set.
    pub eps: f64,
    pub budget: usize,
    pub schedule: Schedule,
    pub c: f64,
    /// Padding of the start box around the set.
    pub box_margin: f64,
    pub n_fresh: usize,
    /// Slack over the smallest value found for fresh set samples.
    pub fresh_eps: f64,
    pub n_off: usize,
    /// Off-set samples are at least this far from the set.
    pub off_min_distance: f64,
    /// Quantile of off-set values that fresh samples must not exceed.
    pub off_quantile: f64,
    pub required_fraction: f64,
    pub seed: u64,
}

impl Default for MinimaConfig {
    fn default() -> Self {
        Self {
            n_starts: 100,
            eps: 0.1,
            budget: 500,
            schedule: Schedule::Harmonic,
            c: 0.5,
            box_margin: 1.0,
            n_fresh: 100,
            fresh_eps: 0.1,
            n_off: 1000,
            off_min_distance: 0.1,
            off_quantile: 0.1,
            required_fraction: 0.9,
            seed: 0,
        }
    }
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    values[((values.len() - 1) as f64 * q).floor() as usize]
}

/// Runs noise-free descent on `reg` from random starts and measures how close
/// the endpoints come to `m`; conversely checks that fresh samples of `m`
/// take near-minimal values. The mean gap between `reg - min` and the true
/// distance on off-set samples is reported as well.
pub fn verify_minima_on_manifold<R>(reg: &R, m: &ToyManifold, cfg: &MinimaConfig) -> Result<VerificationReport>
where
    R: Regularizer + ?Sized,
{
    m.validate()?;
    if cfg.n_starts == 0 || cfg.n_fresh == 0 || cfg.n_off == 0 {
        return Err(Error::InvalidConfig("sample counts must be positive".into()));
    }
    let schedule = PgdConfig {
        max_iters: cfg.budget,
        schedule: cfg.schedule,
        c: cfg.c,
        ..PgdConfig::default()
    };
    schedule.validate()?;
    let (lo, hi) = padded_bounds(m, cfg.box_margin);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut end_d = Vec::with_capacity(cfg.n_starts);
    let mut min_found = f64::INFINITY;
    for _ in 0..cfg.n_starts {
        let mut x = Tensor::vector(uniform_in(&lo, &hi, &mut rng));
        for i in 0..cfg.budget {
            let g = reg.subgradient(&x)?;
            x.axpy(-step_size(&schedule, i), &g);
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "minima descent",
                step: cfg.budget,
            });
        }
        min_found = min_found.min(reg.value(&x)?);
        end_d.push(manifold_distance(m, x.data())?);
    }
    let near = end_d.iter().filter(|&&d| d <= cfg.eps).count() as f64 / cfg.n_starts as f64;

    let fresh: Vec<f64> = (0..cfg.n_fresh)
        .map(|_| reg.value(&Tensor::vector(m.sample(&mut rng))))
        .collect::<Result<_>>()?;
    min_found = fresh.iter().copied().fold(min_found, f64::min);
    let mut off = Vec::with_capacity(cfg.n_off);
    let mut gap = 0.0;
    while off.len() < cfg.n_off {
        let x = uniform_in(&lo, &hi, &mut rng);
        let d = manifold_distance(m, &x)?;
        if d >= cfg.off_min_distance {
            let v = reg.value(&Tensor::vector(x))?;
            off.push(v);
            gap += (v - min_found - d).abs();
        }
    }
    let within_min = fresh.iter().filter(|&&v| v <= min_found + cfg.fresh_eps).count() as f64 / cfg.n_fresh as f64;
    let off_q = quantile(&mut off, cfg.off_quantile);
    let below_off = fresh.iter().filter(|&&v| v <= off_q).count() as f64 / cfg.n_fresh as f64;

    let mut r = VerificationReport::new(&format!("minima-on-manifold/{}", m.name()))
        .stat("fraction_endpoints_near", near)
        .stat("mean_endpoint_distance", end_d.iter().sum::<f64>() / end_d.len() as f64)
        .stat("max_endpoint_distance", end_d.iter().copied().fold(0.0, f64::max))
        .stat("min_value_found", min_found)
        .stat("fraction_fresh_near_min", within_min)
        .stat("off_value_quantile", off_q)
        .stat("fraction_fresh_below_off_quantile", below_off)
        .stat("mean_gap_to_distance", gap / cfg.n_off as f64)
        .conf("n_starts", cfg.n_starts)
        .conf("eps", cfg.eps)
        .conf("budget", cfg.budget)
        .conf("schedule", cfg.schedule.name())
        .conf("c", cfg.c)
        .conf("off_quantile", cfg.off_quantile)
        .conf("required_fraction", cfg.required_fraction)
        .conf("seed", cfg.seed);
    r.passed = near >= cfg.required_fraction && below_off >= cfg.required_fraction;
    Ok(r)
}

/// Convex `reg` restricted to `{x : x[i] = v_i}` with known unique
/// constrained minimizer `x_plus`.
pub struct SelectorInstance {
    pub name: String,
    pub reg: Box<dyn Regularizer + Send + Sync>,
    pub fixed: Vec<(usize, f64)>,
    pub x_plus: Vec<f64>,
    pub start: Vec<f64>,
}

fn shifted_square(center: Vec<f64>) -> Box<dyn Regularizer + Send + Sync> {
    let c2 = center.clone();
    Box::new(FnRegularizer::new(
        move |x: &Tensor| x.data().iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum(),
        move |x: &Tensor| Tensor::vector(x.data().iter().zip(&c2).map(|(a, c)| 2.0 * (a - c)).collect()),
    ))
}

impl SelectorInstance {
    /// `f(x) = ||x - (0, 2)||^2` on `{x[0] = 5}`: minimizer `(5, 2)`.
    pub fn analytic() -> Self {
        Self {
            name: "analytic".into(),
            reg: shifted_square(vec![0.0, 2.0]),
            fixed: vec![(0, 5.0)],
            x_plus: vec![5.0, 2.0],
            start: vec![0.0, 0.0],
        }
    }

    /// Squared distance to `(5, 2)`, a point of the constraint set.
    pub fn point_on_constraint() -> Self {
        Self {
            name: "point-on-constraint".into(),
            reg: shifted_square(vec![5.0, 2.0]),
            fixed: vec![(0, 5.0)],
            x_plus: vec![5.0, 2.0],
            start: vec![0.0, 0.0],
        }
    }

    /// Minimizer after shifting the constrained values by `delta`. Both
    /// built-in instances separate across coordinates, so the selected
    /// coordinates move with the data and the rest stay put.
    fn shifted_minimizer(&self, delta: &[f64]) -> Vec<f64> {
        let mut x = self.x_plus.clone();
        for (&(i, _), d) in self.fixed.iter().zip(delta) {
            x[i] += d;
        }
        x
    }
}

/// Runs the projected subgradient method on `inst`, tracking the error to the
/// constrained minimizer and the per-step inequality
/// `||x_{k+1} - x+||^2 <= ||x_k - x+||^2 + t_k^2`.
pub fn verify_pgd_convergence(inst: &SelectorInstance, cfg: &PgdConfig, tol: f64) -> Result<VerificationReport> {
    let constraint = CoordinateSelector {
        fixed: inst.fixed.clone(),
    };
    let mut prev: Option<f64> = None;
    let mut slack = f64::NEG_INFINITY;
    let mut iterates: Vec<Vec<f64>> = Vec::new();
    let run = projected_subgradient(
        inst.reg.as_ref(),
        &constraint,
        Tensor::vector(inst.start.clone()),
        cfg,
        None,
        |_, x, t| {
            let e2 = dist(x.data(), &inst.x_plus).powi(2);
            if let Some(p) = prev {
                slack = slack.max(e2 - p - t * t);
            }
            prev = Some(e2);
            iterates.push(x.data().to_vec());
        },
    )?;
    let err = dist(run.x.data(), &inst.x_plus);
    let frozen = iterates.len() > 1 && iterates[1..].iter().all(|x| x == &iterates[1]);
    let mut r = VerificationReport::new(&format!("pgd-convergence/{}", inst.name))
        .stat("final_error", err)
        .stat("max_step_slack", slack)
        .stat("iterations", run.iterations as f64)
        .stat("frozen_after_first", f64::from(u8::from(frozen)))
        .conf("max_iters", cfg.max_iters)
        .conf("schedule", cfg.schedule.name())
        .conf("c", cfg.c)
        .conf("tolerance", tol);
    r.passed = err < tol && slack <= 1e-10;
    Ok(r)
}

/// Reconstruction error under perturbed data. For each level `delta` the
/// constrained values get `delta * z` with standard normal `z`; the same `z`
/// are reused across levels. The error is measured against the noise-free
/// minimizer and averaged over trials.
pub fn verify_stability(
    inst: &SelectorInstance,
    noise_levels: &[f64],
    trials: usize,
    cfg: &PgdConfig,
    tol: f64,
    seed: u64,
) -> Result<VerificationReport> {
    if noise_levels.first() != Some(&0.0) || noise_levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("noise levels must start at 0 and increase".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..trials)
        .map(|_| inst.fixed.iter().map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut errors = Vec::with_capacity(noise_levels.len());
    let mut model_gap: f64 = 0.0;
    for &delta in noise_levels {
        let mut total = 0.0;
        for z in &draws {
            let shift: Vec<f64> = z.iter().map(|v| delta * v).collect();
            let constraint = CoordinateSelector {
                fixed: inst.fixed.iter().zip(&shift).map(|(&(i, v), s)| (i, v + s)).collect(),
            };
            let run = projected_subgradient(
                inst.reg.as_ref(),
                &constraint,
                Tensor::vector(inst.start.clone()),
                cfg,
                None,
                |_, _, _| {},
            )?;
            total += dist(run.x.data(), &inst.x_plus);
            model_gap = model_gap.max(dist(run.x.data(), &inst.shifted_minimizer(&shift)));
        }
        errors.push(total / trials as f64);
    }
    let monotone = errors.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let slope = noise_levels
        .iter()
        .zip(&errors)
        .skip(1)
        .map(|(d, e)| (e - errors[0]) / d)
        .fold(0.0, f64::max);
    let mut r = VerificationReport::new(&format!("stability/{}", inst.name));
    for (d, e) in noise_levels.iter().zip(&errors) {
        r = r.stat(&format!("error@{d}"), *e);
    }
    r = r
        .stat("fitted_slope", slope)
        .stat("max_error_to_perturbed_minimizer", model_gap)
        .stat("monotone", f64::from(u8::from(monotone)))
        .conf("trials", trials)
        .conf("max_iters", cfg.max_iters)
        .conf("schedule", cfg.schedule.name())
        .conf("c", cfg.c)
        .conf("tolerance", tol)
        .conf("seed", seed);
    r.passed = errors[0] <= tol && monotone;
    Ok(r)
}
