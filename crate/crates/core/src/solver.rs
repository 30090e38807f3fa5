//! Projected subgradient descent: alternate a subgradient step on a convex
//! regularizer with the exact projection onto an affine constraint set.

use crate::autodiff::{grad_input_fn, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evaluation::psnr_peak_ref;
use crate::forward_model::{apply_a, apply_a_adjoint, project_data_consistency, Image, Measurement, SamplingMask};
use crate::icnn::ConvexNet;

/// A function with a computable value and (sub)gradient.
pub trait Regularizer {
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn subgradient(&self, x: &Tensor) -> Result<Tensor>;
}

impl Regularizer for ConvexNet {
    fn value(&self, x: &Tensor) -> Result<f64> {
        self.forward(x)
    }

    fn subgradient(&self, x: &Tensor) -> Result<Tensor> {
        self.input_gradient(x)
    }
}

/// Regularizer written as a tape expression of its input.
pub struct TapeRegularizer<F> {
    build: F,
}

impl<F> TapeRegularizer<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    pub fn new(build: F) -> Self {
        Self { build }
    }
}

impl<F> Regularizer for TapeRegularizer<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn value(&self, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = (self.build)(&mut tape, v)?;
        Ok(tape.value(out).item())
    }

    fn subgradient(&self, x: &Tensor) -> Result<Tensor> {
        grad_input_fn(x, |tape, v| (self.build)(tape, v)).map(|(_, g)| g)
    }
}

/// Regularizer given by closed-form value and subgradient functions.
pub struct FnRegularizer<V, G> {
    value: V,
    grad: G,
}

impl<V, G> FnRegularizer<V, G>
where
    V: Fn(&Tensor) -> f64,
    G: Fn(&Tensor) -> Tensor,
{
    pub fn new(value: V, grad: G) -> Self {
        Self { value, grad }
    }
}

impl<V, G> Regularizer for FnRegularizer<V, G>
where
    V: Fn(&Tensor) -> f64,
    G: Fn(&Tensor) -> Tensor,
{
    fn value(&self, x: &Tensor) -> Result<f64> {
        Ok((self.value)(x))
    }

    fn subgradient(&self, x: &Tensor) -> Result<Tensor> {
        Ok((self.grad)(x))
    }
}

/// Affine feasible set with an exact Euclidean projection.
pub trait AffineConstraint {
    fn project(&self, x: &Tensor) -> Result<Tensor>;
    /// Distance of `x` from satisfying the constraint equations.
    fn residual(&self, x: &Tensor) -> Result<f64>;
}

/// `{x : A x = b}` for the masked unitary Fourier operator; acts on `[2, H, W]`.
pub struct MaskedFourier<'a> {
    pub mask: &'a SamplingMask,
    pub b: &'a Measurement,
}

impl AffineConstraint for MaskedFourier<'_> {
    fn project(&self, x: &Tensor) -> Result<Tensor> {
        let img = Image::from_tensor(x)?;
        Ok(project_data_consistency(self.mask, self.b, &img)?.to_tensor())
    }

    fn residual(&self, x: &Tensor) -> Result<f64> {
        Ok(apply_a(self.mask, &Image::from_tensor(x)?)?.distance(self.b))
    }
}

/// `{x : x[i] = v_i}` on a chosen set of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSelector {
    pub fixed: Vec<(usize, f64)>,
}

impl AffineConstraint for CoordinateSelector {
    fn project(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for &(i, v) in &self.fixed {
            if i >= out.len() {
                return Err(Error::InvalidConfig(format!("selector index {i} outside length {}", out.len())));
            }
            out.data_mut()[i] = v;
        }
        Ok(out)
    }

    fn residual(&self, x: &Tensor) -> Result<f64> {
        let mut s = 0.0;
        for &(i, v) in &self.fixed {
            let d = x.data().get(i).ok_or_else(|| Error::InvalidConfig(format!("selector index {i} out of range")))? - v;
            s += d * d;
        }
        Ok(s.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// `c`; for diagnostics only.
    Constant,
    /// `c / (i + 1)`
    Harmonic,
    /// `c / sqrt(i + 1)`
    Sqrt,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Harmonic => "harmonic",
            Schedule::Sqrt => "sqrt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "harmonic" => Ok(Schedule::Harmonic),
            "sqrt" => Ok(Schedule::Sqrt),
            other => Err(Error::InvalidConfig(format!("unknown schedule '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdConfig {
    pub max_iters: usize,
    pub schedule: Schedule,
    pub c: f64,
    pub record_trace: bool,
    /// Stop once successive iterates move less than this.
    pub early_stop: Option<f64>,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            schedule: Schedule::Harmonic,
            c: 0.1,
            record_trace: true,
            early_stop: None,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        // A zero constant step is allowed as a frozen-iterate control.
        let ok = match self.schedule {
            Schedule::Constant => self.c >= 0.0,
            _ => self.c > 0.0,
        };
        if !ok || !self.c.is_finite() {
            return Err(Error::InvalidConfig(format!("step constant {} not allowed for {}", self.c, self.schedule.name())));
        }
        if let Some(tol) = self.early_stop {
            if !(tol > 0.0) {
                return Err(Error::InvalidConfig("early stop tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Step size `t_i`.
pub fn step_size(cfg: &PgdConfig, i: usize) -> f64 {
    let n = (i + 1) as f64;
    match cfg.schedule {
        Schedule::Constant => cfg.c,
        Schedule::Harmonic => cfg.c / n,
        Schedule::Sqrt => cfg.c / n.sqrt(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub phi: f64,
    pub residual: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    Converged,
    /// A non-finite iterate or value appeared at this iteration; the result
    /// holds the last finite iterate.
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdRun {
    pub x: Tensor,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Runs `x_{i+1} = P(x_i - t_i g_i)` from `x0` (used as given).
///
/// `metric` adds a quality column to the trace. `observer` sees every
/// iterate after projection together with the step that produced it.
pub fn projected_subgradient<R, C>(
    reg: &R,
    constraint: &C,
    x0: Tensor,
    cfg: &PgdConfig,
    metric: Option<&dyn Fn(&Tensor) -> f64>,
    observer: impl FnMut(usize, &Tensor, f64),
) -> Result<PgdRun>
where
    R: Regularizer + ?Sized,
    C: AffineConstraint + ?Sized,
{
    run_pgd(reg, constraint, x0, false, cfg, metric, observer)
}

/// Shared loop. A zero step leaves a feasible iterate where it is instead of
/// sending it through the projection again, so such iterates stay bit-exact.
fn run_pgd<R, C>(
    reg: &R,
    constraint: &C,
    x0: Tensor,
    start_feasible: bool,
    cfg: &PgdConfig,
    metric: Option<&dyn Fn(&Tensor) -> f64>,
    mut observer: impl FnMut(usize, &Tensor, f64),
) -> Result<PgdRun>
where
    R: Regularizer + ?Sized,
    C: AffineConstraint + ?Sized,
{
    cfg.validate()?;
    let mut trace = Vec::new();
    let record = |i: usize, x: &Tensor, phi: f64, trace: &mut Vec<TraceEntry>| -> Result<()> {
        trace.push(TraceEntry {
            iter: i,
            phi,
            residual: constraint.residual(x)?,
            psnr: metric.map(|m| m(x)),
        });
        Ok(())
    };
    let mut x = x0;
    if cfg.record_trace {
        let phi = reg.value(&x)?;
        record(0, &x, phi, &mut trace)?;
    }
    observer(0, &x, 0.0);
    let mut stop = StopReason::Budget;
    let mut done = 0;
    for i in 0..cfg.max_iters {
        let t = step_size(cfg, i);
        let g = reg.subgradient(&x)?;
        let feasible = start_feasible || i > 0;
        let next = if feasible && (t == 0.0 || g.data().iter().all(|&v| v == 0.0)) {
            x.clone()
        } else {
            let mut half = x.clone();
            half.axpy(-t, &g);
            constraint.project(&half)?
        };
        let next_phi = reg.value(&next)?;
        if !next.is_finite() || !next_phi.is_finite() {
            stop = StopReason::NonFinite(i + 1);
            break;
        }
        let moved = next.zip_map(&x, |a, b| a - b).norm();
        x = next;
        done = i + 1;
        if cfg.record_trace {
            record(done, &x, next_phi, &mut trace)?;
        }
        observer(done, &x, t);
        if cfg.early_stop.is_some_and(|tol| moved < tol) {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(PgdRun {
        x,
        trace,
        iterations: done,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub image: Image,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Reconstructs from `(mask, b)` starting at the zero-filled image. With a
/// ground truth the trace carries PSNR on magnitude images.
pub fn pgd_reconstruct<R>(
    reg: &R,
    mask: &SamplingMask,
    b: &Measurement,
    cfg: &PgdConfig,
    truth: Option<&Image>,
) -> Result<ReconResult>
where
    R: Regularizer + ?Sized,
{
    if !b.is_consistent_with(mask) {
        return Err(Error::InvalidConfig("measurement has values outside the mask".into()));
    }
    let x0 = apply_a_adjoint(mask, b)?;
    if let Some(t) = truth {
        if !t.same_shape(&x0) {
            return Err(Error::Shape {
                context: "ground truth",
                expected: vec![x0.height(), x0.width()],
                found: vec![t.height(), t.width()],
            });
        }
    }
    let constraint = MaskedFourier { mask, b };
    let metric = truth.map(|t| {
        move |x: &Tensor| psnr_peak_ref(t, &Image::from_tensor(x).expect("iterate shape")).expect("matching shapes")
    });
    let run = run_pgd(
        reg,
        &constraint,
        x0.to_tensor(),
        true,
        cfg,
        metric.as_ref().map(|m| m as &dyn Fn(&Tensor) -> f64),
        |_, _, _| {},
    )?;
    Ok(ReconResult {
        image: Image::from_tensor(&run.x)?,
        trace: run.trace,
        iterations: run.iterations,
        stop: run.stop,
    })
}

/// `||A x - b||^2 + lambda * phi(x)`
pub fn objective_value<R>(reg: &R, mask: &SamplingMask, b: &Measurement, x: &Image, lambda: f64) -> Result<f64>
where
    R: Regularizer + ?Sized,
{
    let r = apply_a(mask, x)?.distance(b);
    let phi = if lambda == 0.0 { 0.0 } else { reg.value(&x.to_tensor())? };
    Ok(r * r + lambda * phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let mut cfg = PgdConfig {
            c: 2.0,
            ..PgdConfig::default()
        };
        assert_eq!(step_size(&cfg, 3), 0.5);
        cfg.schedule = Schedule::Sqrt;
        assert_eq!(step_size(&cfg, 3), 1.0);
        cfg.schedule = Schedule::Constant;
        assert_eq!(step_size(&cfg, 99), 2.0);
    }

    #[test]
    fn zero_step_only_for_constant() {
        let mut cfg = PgdConfig {
            c: 0.0,
            schedule: Schedule::Constant,
            ..PgdConfig::default()
        };
        cfg.validate().unwrap();
        cfg.schedule = Schedule::Harmonic;
        assert!(cfg.validate().is_err());
        cfg.c = 1.0;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn selector_projects_fixed_coordinates() {
        let s = CoordinateSelector { fixed: vec![(0, 5.0)] };
        let p = s.project(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(p.data(), &[5.0, 2.0]);
        assert_eq!(s.residual(&p).unwrap(), 0.0);
        assert!(s.project(&Tensor::vector(vec![1.0])).is_ok());
        assert!(CoordinateSelector { fixed: vec![(3, 0.0)] }
            .project(&Tensor::vector(vec![1.0]))
            .is_err());
    }
}
