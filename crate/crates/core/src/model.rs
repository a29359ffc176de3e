//! Trainable embedding heads over precomputed frame features, SGD with
//! momentum, and a central-difference gradient checker.

use rand::Rng;

use crate::error::{DalError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Identity,
    Linear,
    OneHidden { hidden: usize },
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Identity => "identity",
            HeadKind::Linear => "linear",
            HeadKind::OneHidden { .. } => "one_hidden",
        }
    }
}

/// Shape of an embedding head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub d_in: usize,
    pub d_out: usize,
}

impl HeadSpec {
    pub fn param_count(&self) -> usize {
        match self.kind {
            HeadKind::Identity => 0,
            HeadKind::Linear => self.d_out * self.d_in + self.d_out,
            HeadKind::OneHidden { hidden } => hidden * self.d_in + hidden + self.d_out * hidden + self.d_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(DalError::InvalidConfig("head dimensions must be positive".into()));
        }
        match self.kind {
            HeadKind::Identity if self.d_in != self.d_out => Err(DalError::InvalidConfig(format!(
                "identity head needs d_in == d_out, got {} and {}",
                self.d_in, self.d_out
            ))),
            HeadKind::OneHidden { hidden: 0 } => Err(DalError::InvalidConfig("hidden width must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Map from raw frame features to the embedding space.
///
/// Parameters are stored flat. `Linear` holds `W (d_out×d_in)` then `b`;
/// `OneHidden` holds `W1 (h×d_in)`, `b1`, `W2 (d_out×h)`, `b2`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead<T> {
    spec: HeadSpec,
    params: Vec<T>,
}

/// Gradients produced by [`EmbeddingHead::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

fn matvec<T: Scalar>(w: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).fold(bias[r], |acc, (&a, &b)| acc + a * b);
    }
}

/// Accumulates `dW += g xᵀ`, `db += g` and returns `Wᵀ g`.
fn linear_backward<T: Scalar>(w: &[T], x: &[T], g: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let cols = x.len();
    let mut dx = vec![T::zero(); cols];
    for (r, &gr) in g.iter().enumerate() {
        db[r] = db[r] + gr;
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            drow[c] = drow[c] + gr * x[c];
            dx[c] = dx[c] + row[c] * gr;
        }
    }
    dx
}

impl<T: Scalar> EmbeddingHead<T> {
    /// Fresh head: weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: HeadSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.param_count());
        let mut layer = |rows: usize, cols: usize, params: &mut Vec<T>| {
            let r = (6.0 / (rows + cols) as f64).sqrt();
            params.extend((0..rows * cols).map(|_| T::from_f64(rng.random_range(-r..=r))));
            params.extend((0..rows).map(|_| T::zero()));
        };
        match spec.kind {
            HeadKind::Identity => {}
            HeadKind::Linear => layer(spec.d_out, spec.d_in, &mut params),
            HeadKind::OneHidden { hidden } => {
                layer(hidden, spec.d_in, &mut params);
                layer(spec.d_out, hidden, &mut params);
            }
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: HeadSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(DalError::DimensionMismatch { expected: spec.param_count(), found: params.len() });
        }
        crate::linalg::check_finite(&params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> HeadSpec {
        self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Named slices of the flat parameter vector, in storage order.
    pub fn param_blocks(&self) -> Vec<(&'static str, &[T])> {
        let HeadSpec { kind, d_in, d_out } = self.spec;
        let p = &self.params[..];
        match kind {
            HeadKind::Identity => Vec::new(),
            HeadKind::Linear => {
                let (w, b) = p.split_at(d_out * d_in);
                vec![("W", w), ("b", b)]
            }
            HeadKind::OneHidden { hidden } => {
                let (w1, rest) = p.split_at(hidden * d_in);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(d_out * hidden);
                vec![("W1", w1), ("b1", b1), ("W2", w2), ("b2", b2)]
            }
        }
    }

    fn check_input(&self, raw: &[T]) -> Result<()> {
        if raw.len() != self.spec.d_in {
            return Err(DalError::DimensionMismatch { expected: self.spec.d_in, found: raw.len() });
        }
        Ok(())
    }

    pub fn forward(&self, raw: &[T]) -> Result<Vec<T>> {
        self.check_input(raw)?;
        let HeadSpec { kind, d_in, d_out } = self.spec;
        let mut out = vec![T::zero(); d_out];
        match kind {
            HeadKind::Identity => out.copy_from_slice(raw),
            HeadKind::Linear => {
                let (w, b) = self.params.split_at(d_out * d_in);
                matvec(w, b, raw, &mut out);
            }
            HeadKind::OneHidden { hidden } => {
                let hid = self.hidden_activations(raw, hidden);
                let off = hidden * d_in + hidden;
                let (w2, b2) = self.params[off..].split_at(d_out * hidden);
                matvec(w2, b2, &hid, &mut out);
            }
        }
        Ok(out)
    }

    fn hidden_pre(&self, raw: &[T], hidden: usize) -> Vec<T> {
        let d_in = self.spec.d_in;
        let (w1, rest) = self.params.split_at(hidden * d_in);
        let mut pre = vec![T::zero(); hidden];
        matvec(w1, &rest[..hidden], raw, &mut pre);
        pre
    }

    fn hidden_activations(&self, raw: &[T], hidden: usize) -> Vec<T> {
        self.hidden_pre(raw, hidden).into_iter().map(|v| v.max(T::zero())).collect()
    }

    /// Chain rule for one input. Parameter gradients are added into `param_grad`;
    /// the input gradient is returned.
    pub fn accumulate_backward(&self, raw: &[T], upstream: &[T], param_grad: &mut [T]) -> Result<Vec<T>> {
        self.check_input(raw)?;
        let HeadSpec { kind, d_in, d_out } = self.spec;
        if upstream.len() != d_out {
            return Err(DalError::DimensionMismatch { expected: d_out, found: upstream.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(DalError::DimensionMismatch { expected: self.params.len(), found: param_grad.len() });
        }
        Ok(match kind {
            HeadKind::Identity => upstream.to_vec(),
            HeadKind::Linear => {
                let (w, _) = self.params.split_at(d_out * d_in);
                let (dw, db) = param_grad.split_at_mut(d_out * d_in);
                linear_backward(w, raw, upstream, dw, db)
            }
            HeadKind::OneHidden { hidden } => {
                let pre = self.hidden_pre(raw, hidden);
                let act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
                let off = hidden * d_in + hidden;
                let w2 = &self.params[off..off + d_out * hidden];
                let (first, second) = param_grad.split_at_mut(off);
                let (dw2, db2) = second.split_at_mut(d_out * hidden);
                let d_act = linear_backward(w2, &act, upstream, dw2, db2);
                // rectifier subgradient is 0 at 0
                let d_pre: Vec<T> =
                    d_act.iter().zip(&pre).map(|(&g, &p)| if p > T::zero() { g } else { T::zero() }).collect();
                let w1 = &self.params[..hidden * d_in];
                let (dw1, db1) = first.split_at_mut(hidden * d_in);
                linear_backward(w1, raw, &d_pre, dw1, db1)
            }
        })
    }

    pub fn backward(&self, raw: &[T], upstream: &[T]) -> Result<HeadGradients<T>> {
        let mut params = vec![T::zero(); self.params.len()];
        let input = self.accumulate_backward(raw, upstream, &mut params)?;
        Ok(HeadGradients { params, input })
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingHead<U> {
        EmbeddingHead { spec: self.spec, params: self.params.iter().map(|&v| U::from_f64(v.as_f64())).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayKind {
    #[default]
    Constant,
    /// `initial · factor^⌊t / interval⌋`
    Step,
    /// `initial · factor^(t / interval)`
    Exponential,
}

impl DecayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayKind::Constant => "constant",
            DecayKind::Step => "step",
            DecayKind::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for DecayKind {
    type Err = DalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "step" => Ok(Self::Step),
            "exponential" => Ok(Self::Exponential),
            other => Err(DalError::InvalidConfig(format!("unknown decay {other:?} (constant, step, exponential)"))),
        }
    }
}

/// Learning-rate schedule; the rate never falls below `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub kind: DecayKind,
    pub factor: f64,
    pub interval: u64,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 0.01, kind: DecayKind::Constant, factor: 1.0, interval: 1, floor: 0.0 }
    }
}

impl LrSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        let interval = self.interval.max(1);
        let decayed = match self.kind {
            DecayKind::Constant => self.initial,
            DecayKind::Step => self.initial * self.factor.powi((t / interval).min(i32::MAX as u64) as i32),
            DecayKind::Exponential => self.initial * self.factor.powf(t as f64 / interval as f64),
        };
        decayed.max(self.floor)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial > 0.0
            && self.initial.is_finite()
            && self.factor > 0.0
            && self.factor <= 1.0
            && self.interval > 0
            && self.floor >= 0.0;
        if !ok {
            return Err(DalError::InvalidConfig(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }
}

/// SGD with momentum: `v ← μ v + g`, `θ ← θ − rate(t) v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub velocity: Vec<T>,
    pub iteration: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(schedule: LrSchedule, momentum: f64, params: usize) -> Result<Self> {
        schedule.validate()?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(DalError::InvalidConfig(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { schedule, momentum, velocity: vec![T::zero(); params], iteration: 0 })
    }

    pub fn rate(&self) -> f64 {
        self.schedule.rate(self.iteration)
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(DalError::DimensionMismatch { expected: self.velocity.len(), found: grads.len() });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(DalError::NonFiniteGradient { iteration: self.iteration, index });
        }
        let mu = T::from_f64(self.momentum);
        let rate = T::from_f64(self.rate());
        for ((p, v), &g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            *v = mu * *v + g;
            *p = *p - rate * *v;
        }
        self.iteration += 1;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> OptimizerState<U> {
        OptimizerState {
            schedule: self.schedule,
            momentum: self.momentum,
            velocity: self.velocity.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
            iteration: self.iteration,
        }
    }
}

/// Central-difference step used by [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-5;

/// Smallest gradient magnitude used as the relative-error denominator.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at `params`
/// for each coordinate in `coords`.
pub fn finite_diff_check<F>(params: &[f64], analytic: &[f64], coords: &[usize], mut loss: F) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut report = FdReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report = FdReport {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
                checked: report.checked,
            };
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_identity(d: usize) -> EmbeddingHead<f64> {
        let mut p = vec![0.0; d * d + d];
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        EmbeddingHead::from_params(HeadSpec { kind: HeadKind::Linear, d_in: d, d_out: d }, p).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id =
            EmbeddingHead::<f64>::init(HeadSpec { kind: HeadKind::Identity, d_in: 2, d_out: 2 }, &mut rng).unwrap();
        assert_eq!(id.forward(&[0.2, -1.3]).unwrap(), vec![0.2, -1.3]);
        assert_eq!(linear_identity(3).forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
        assert!(matches!(id.forward(&[1.0]), Err(DalError::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id =
            EmbeddingHead::<f64>::init(HeadSpec { kind: HeadKind::Identity, d_in: 2, d_out: 2 }, &mut rng).unwrap();
        let g = id.backward(&[1.0, 2.0], &[0.3, -0.4]).unwrap();
        assert!(g.params.is_empty());
        assert_eq!(g.input, vec![0.3, -0.4]);

        let lin = EmbeddingHead::<f64>::init(HeadSpec { kind: HeadKind::Linear, d_in: 3, d_out: 2 }, &mut rng).unwrap();
        let g = lin.backward(&[1.0, 2.0, 3.0], &[0.7, -0.1]).unwrap();
        assert_eq!(&g.params[6..], &[0.7, -0.1]);
        assert!(matches!(lin.backward(&[1.0, 2.0, 3.0], &[0.7]), Err(DalError::DimensionMismatch { .. })));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = HeadSpec { kind: HeadKind::OneHidden { hidden: 5 }, d_in: 4, d_out: 3 };
        let a = EmbeddingHead::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = EmbeddingHead::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().len(), spec.param_count());
        let r1 = (6.0f64 / 9.0).sqrt();
        assert!(a.params()[..20].iter().all(|v| v.abs() <= r1));
        assert!(a.params()[20..25].iter().all(|&v| v == 0.0));
        assert!(HeadSpec { kind: HeadKind::Identity, d_in: 2, d_out: 3 }.validate().is_err());
    }

    #[test]
    fn sgd_examples() {
        let sched = LrSchedule { initial: 0.1, ..Default::default() };
        let mut opt = OptimizerState::<f64>::new(sched, 0.0, 1).unwrap();
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.5]).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert_eq!(opt.iteration, 1);

        let mut opt = OptimizerState::<f64>::new(sched, 0.9, 2).unwrap();
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[1.0, 2.0]).unwrap();
        let before = p.clone();
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(opt.velocity, vec![0.9, 1.8]);
        assert!((p[0] - (before[0] - 0.1 * 0.9)).abs() < 1e-15);

        let mut opt = OptimizerState::<f64>::new(sched, 0.0, 2).unwrap();
        let mut p = vec![1.0, 2.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        assert!(matches!(
            opt.step(&mut p, &[f64::NAN, 0.0]),
            Err(DalError::NonFiniteGradient { iteration: 1, index: 0 })
        ));
        assert!(OptimizerState::<f64>::new(sched, 1.0, 1).is_err());
    }

    #[test]
    fn step_schedule_halves_the_run() {
        let total = 2000;
        let s = LrSchedule { initial: 0.01, kind: DecayKind::Step, factor: 0.1, interval: total / 2, floor: 0.001 };
        assert_eq!(s.rate(0), 0.01);
        assert_eq!(s.rate(total / 2 - 1), 0.01);
        assert!((s.rate(total / 2) - 0.001).abs() < 1e-18);
        assert!((s.rate(total) - 0.001).abs() < 1e-18);
        let e = LrSchedule { initial: 1.0, kind: DecayKind::Exponential, factor: 0.5, interval: 10, floor: 0.0 };
        assert!((e.rate(5) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fd_check_on_quadratic() {
        let p = vec![0.3, -1.2, 2.5, 0.01];
        let analytic: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let coords: Vec<usize> = (0..p.len()).collect();
        let r = finite_diff_check(&p, &analytic, &coords, |q| q.iter().map(|v| v * v).sum());
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);

        let mut bad = analytic.clone();
        bad[2] *= 2.0;
        let r = finite_diff_check(&p, &bad, &coords, |q| q.iter().map(|v| v * v).sum());
        assert_eq!(r.worst_index, 2);
        assert!(r.max_rel_error > 0.4);
    }
}
