//! Euler–Maruyama simulation of the controlled SDEs and Heun integration of
//! the probability-flow ODE.
//!
//! Forward:  `dX = [f_t(X) + σ_t u_t(X)] dt + σ_t dW`, from `t = 0` to `1`.
//! Backward: `dX = [f_t(X) − σ_t v_t(X)] dt + σ_t dW`, from `t = 1` to `0`.
//! Coefficients are evaluated at the current state and the current time of
//! each step (left endpoint in the direction of integration).

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::nn::ControlField;
use crate::rng::RngStream;
use crate::schedule::ScheduleParams;

/// A time-dependent vector field evaluated on a batch of states.
pub trait VectorField: Sync {
    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl VectorField for ControlField {
    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_at(t, x)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).eval(t, x)
    }
}

/// The identically zero control.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(x.raw_dim()))
    }
}

/// A closed-form field given as a batched closure.
pub struct FnField<F>(pub F);

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, ArrayView2<f64>) -> Array2<f64> + Sync,
{
    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok((self.0)(t, x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A recorded path. `times` is always ascending from exactly 0 to exactly 1 and
/// `states[k]` is the batch at `times[k]`; `direction` records which way the
/// solver ran.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Array3<f64>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn batch(&self) -> usize {
        self.states.shape()[1]
    }

    /// State at `t = 0`.
    pub fn x0(&self) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(0), 0)
    }

    /// State at `t = 1`.
    pub fn x1(&self) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(0), self.steps())
    }

    /// State where integration ended.
    pub fn terminal(&self) -> ArrayView2<'_, f64> {
        match self.direction {
            Direction::Forward => self.x1(),
            Direction::Backward => self.x0(),
        }
    }

    /// Write `t,sample,x0,x1,...` rows with 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.states.shape()[2];
        let mut header = vec!["t".to_string(), "sample".to_string()];
        header.extend((0..dim).map(|k| format!("x{k}")));
        out.write_record(&header)?;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..self.batch() {
                let mut rec = vec![fmt17(t), i.to_string()];
                rec.extend((0..dim).map(|d| fmt17(self.states[[k, i, d]])));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn grid_time(k: usize, nfe: usize) -> f64 {
    if k == nfe {
        1.0
    } else {
        k as f64 / nfe as f64
    }
}

fn check_finite(x: &Array2<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

fn check_batch(params: &ScheduleParams, x: &ArrayView2<f64>, nfe: usize) -> Result<()> {
    if nfe == 0 {
        return Err(Error::Domain("nfe must be at least 1".into()));
    }
    if x.ncols() != params.dim {
        return Err(Error::Dimension {
            expected: params.dim,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Euler–Maruyama on a uniform grid of `nfe` steps.
#[derive(Clone, Copy, Debug)]
pub struct EulerMaruyama {
    pub nfe: usize,
    /// When false the Brownian term is dropped (testing aid).
    pub noise: bool,
}

impl EulerMaruyama {
    pub fn new(nfe: usize) -> Self {
        Self { nfe, noise: true }
    }

    pub fn noiseless(nfe: usize) -> Self {
        Self { nfe, noise: false }
    }

    fn run(
        &self,
        params: &ScheduleParams,
        control: &dyn VectorField,
        start: ArrayView2<f64>,
        rng: &mut RngStream,
        direction: Direction,
        mut record: impl FnMut(usize, &Array2<f64>),
    ) -> Result<Array2<f64>> {
        check_batch(params, &start, self.nfe)?;
        let dt = 1.0 / self.nfe as f64;
        let sqrt_dt = dt.sqrt();
        let mut x = start.to_owned();
        let (first, sign) = match direction {
            Direction::Forward => (0, 1.0),
            Direction::Backward => (self.nfe, -1.0),
        };
        record(first, &x);
        for step in 0..self.nfe {
            let k = match direction {
                Direction::Forward => step,
                Direction::Backward => self.nfe - step,
            };
            let t = grid_time(k, self.nfe);
            let beta = params.beta(t)?;
            let sigma = beta.sqrt();
            let c = control.eval(t, x.view())?;
            // forward: x += (f + σu) dt ; backward: x -= (f − σv) dt
            Zip::from(&mut x).and(&c).for_each(|xi, &ci| {
                *xi += sign * (-0.5 * beta * *xi) * dt + sigma * ci * dt;
            });
            if self.noise {
                let z = rng.normal_matrix(x.nrows(), x.ncols());
                x.scaled_add(sigma * sqrt_dt, &z);
            }
            check_finite(&x, step)?;
            let next = match direction {
                Direction::Forward => k + 1,
                Direction::Backward => k - 1,
            };
            record(next, &x);
        }
        Ok(x)
    }

    fn run_recorded(
        &self,
        params: &ScheduleParams,
        control: &dyn VectorField,
        start: ArrayView2<f64>,
        rng: &mut RngStream,
        direction: Direction,
    ) -> Result<Trajectory> {
        let (n, d) = start.dim();
        let mut states = Array3::zeros((self.nfe + 1, n, d));
        self.run(params, control, start, rng, direction, |k, x| {
            states.index_axis_mut(Axis(0), k).assign(x);
        })?;
        Ok(Trajectory {
            times: (0..=self.nfe).map(|k| grid_time(k, self.nfe)).collect(),
            states,
            direction,
        })
    }

    pub fn forward(
        &self,
        params: &ScheduleParams,
        u: &dyn VectorField,
        x0: ArrayView2<f64>,
        rng: &mut RngStream,
    ) -> Result<Trajectory> {
        self.run_recorded(params, u, x0, rng, Direction::Forward)
    }

    /// Forward simulation returning only `X_1`.
    pub fn forward_terminal(
        &self,
        params: &ScheduleParams,
        u: &dyn VectorField,
        x0: ArrayView2<f64>,
        rng: &mut RngStream,
    ) -> Result<Array2<f64>> {
        self.run(params, u, x0, rng, Direction::Forward, |_, _| {})
    }

    pub fn backward(
        &self,
        params: &ScheduleParams,
        v: &dyn VectorField,
        x1: ArrayView2<f64>,
        rng: &mut RngStream,
    ) -> Result<Trajectory> {
        self.run_recorded(params, v, x1, rng, Direction::Backward)
    }

    /// Backward simulation returning only `X_0`.
    pub fn backward_terminal(
        &self,
        params: &ScheduleParams,
        v: &dyn VectorField,
        x1: ArrayView2<f64>,
        rng: &mut RngStream,
    ) -> Result<Array2<f64>> {
        self.run(params, v, x1, rng, Direction::Backward, |_, _| {})
    }
}

pub fn em_forward(
    params: &ScheduleParams,
    u: &dyn VectorField,
    x0: ArrayView2<f64>,
    nfe: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    EulerMaruyama::new(nfe).forward(params, u, x0, rng)
}

pub fn em_backward(
    params: &ScheduleParams,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    nfe: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    EulerMaruyama::new(nfe).backward(params, v, x1, rng)
}

/// Probability-flow drift `f_t(x) + σ_t (u_t(x) − v_t(x)) / 2`.
fn pf_drift(
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    t: f64,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let beta = params.beta(t)?;
    let half_sigma = 0.5 * beta.sqrt();
    let mut d = u.eval(t, x)?;
    let vv = v.eval(t, x)?;
    Zip::from(&mut d).and(&vv).and(&x).for_each(|d, &v, &x| {
        *d = -0.5 * beta * x + half_sigma * (*d - v);
    });
    Ok(d)
}

fn heun_run(
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    nfe: usize,
    mut record: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>> {
    check_batch(params, &x1, nfe)?;
    let h = 1.0 / nfe as f64;
    let mut x = x1.to_owned();
    record(nfe, &x);
    for k in (1..=nfe).rev() {
        let (t, t_next) = (grid_time(k, nfe), grid_time(k - 1, nfe));
        let d1 = pf_drift(params, u, v, t, x.view())?;
        let pred = &x - &(&d1 * h);
        let d2 = pf_drift(params, u, v, t_next, pred.view())?;
        Zip::from(&mut x).and(&d1).and(&d2).for_each(|x, &a, &b| {
            *x -= 0.5 * h * (a + b);
        });
        check_finite(&x, nfe - k)?;
        record(k - 1, &x);
    }
    Ok(x)
}

/// Heun integration of the probability-flow ODE from `t = 1` down to `0`.
pub fn pf_ode_heun(
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    nfe: usize,
) -> Result<Trajectory> {
    let (n, d) = x1.dim();
    let mut states = Array3::zeros((nfe + 1, n, d));
    heun_run(params, u, v, x1, nfe, |k, x| {
        states.index_axis_mut(Axis(0), k).assign(x);
    })?;
    Ok(Trajectory {
        times: (0..=nfe).map(|k| grid_time(k, nfe)).collect(),
        states,
        direction: Direction::Backward,
    })
}

/// Heun PF-ODE returning only `X_0`.
pub fn pf_ode_heun_terminal(
    params: &ScheduleParams,
    u: &dyn VectorField,
    v: &dyn VectorField,
    x1: ArrayView2<f64>,
    nfe: usize,
) -> Result<Array2<f64>> {
    heun_run(params, u, v, x1, nfe, |_, _| {})
}
