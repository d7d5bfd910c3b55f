//! Out-of-model validation data: linear neural dynamics driven by Poisson
//! input events, passed through the Balloon-Windkessel hemodynamic model and
//! sampled at the measurement interval.
//!
//! The neural drift is `sigma * (I - gain * A_bar)`, where `A_bar` is the
//! off-diagonal part of the ground-truth graph with rows normalized to sum to
//! one (rows without inputs stay zero). With `sigma < 0` and `gain < 1` the
//! drift is stable for any graph.

use rand::Rng as _;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, domain_err, Error, Result};
use crate::model::{eigenvalues, ConditionTrack, Matrix, ObservedSignal};
use crate::rng::Rng;

/// Hemodynamic constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalloonParams {
    /// Signal decay (1/s).
    pub kappa: f64,
    /// Flow-dependent elimination (1/s).
    pub gamma: f64,
    /// Haemodynamic transit time (s).
    pub tau: f64,
    /// Grubb's stiffness exponent.
    pub alpha: f64,
    /// Resting oxygen extraction fraction.
    pub e0: f64,
    /// Resting venous blood volume fraction.
    pub v0: f64,
}

impl Default for BalloonParams {
    fn default() -> Self {
        Self {
            kappa: 0.65,
            gamma: 0.41,
            tau: 0.98,
            alpha: 0.32,
            e0: 0.34,
            v0: 0.02,
        }
    }
}

impl BalloonParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kappa, self.gamma, self.tau, self.alpha, self.e0, self.v0,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.alpha > 1.0 || self.e0 >= 1.0 {
            return Err(config_err(
                "Balloon parameters must be positive, alpha <= 1 and E0 < 1",
            ));
        }
        Ok(())
    }

    /// BOLD readout coefficients `(k1, k2, k3)`.
    pub fn readout(&self) -> (f64, f64, f64) {
        (7.0 * self.e0, 2.0, 2.0 * self.e0 - 0.2)
    }
}

fn d_sigma() -> f64 {
    -0.5
}
fn d_gain() -> f64 {
    0.9
}
fn d_rate() -> f64 {
    0.5
}
fn d_dt_ode() -> f64 {
    0.01
}
fn d_duration() -> f64 {
    600.0
}
fn d_downsample() -> usize {
    72
}
fn d_height() -> f64 {
    1.0
}
fn d_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuroConfig {
    /// Ground-truth graph, `a_true[target][source]`; only off-diagonal
    /// non-zeros are used.
    pub a_true: Vec<Vec<f64>>,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_gain")]
    pub gain: f64,
    /// Input gain matrix `C`; identity when absent.
    #[serde(default)]
    pub input_gain: Option<Vec<Vec<f64>>>,
    /// Events per second per region.
    #[serde(default = "d_rate")]
    pub poisson_rate: f64,
    /// Integration step (s).
    #[serde(default = "d_dt_ode")]
    pub dt_ode: f64,
    /// Simulated time (s).
    #[serde(default = "d_duration")]
    pub duration: f64,
    /// Integration steps per measurement sample.
    #[serde(default = "d_downsample")]
    pub downsample: usize,
    /// Input pulse height; a pulse lasts one integration step.
    #[serde(default = "d_height")]
    pub impulse_height: f64,
    /// Measurement noise standard deviation relative to the BOLD standard
    /// deviation of each region.
    #[serde(default = "d_noise")]
    pub measurement_noise: f64,
    #[serde(default)]
    pub balloon: BalloonParams,
    /// Skip the stability check of the neural drift.
    #[serde(default)]
    pub allow_unstable: bool,
}

impl NeuroConfig {
    pub fn new(a_true: &Matrix) -> Self {
        let rows = (0..a_true.nrows())
            .map(|i| a_true.row(i).iter().copied().collect())
            .collect();
        Self {
            a_true: rows,
            sigma: d_sigma(),
            gain: d_gain(),
            input_gain: None,
            poisson_rate: d_rate(),
            dt_ode: d_dt_ode(),
            duration: d_duration(),
            downsample: d_downsample(),
            impulse_height: d_height(),
            measurement_noise: d_noise(),
            balloon: BalloonParams::default(),
            allow_unstable: false,
        }
    }

    pub fn nodes(&self) -> usize {
        self.a_true.len()
    }

    pub fn a_matrix(&self) -> Result<Matrix> {
        square(&self.a_true, "a_true")
    }

    pub fn measurement_interval(&self) -> f64 {
        self.dt_ode * self.downsample as f64
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt_ode).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a_matrix()?.nrows();
        if m == 0 {
            return Err(config_err("a_true must have at least one node"));
        }
        if let Some(c) = &self.input_gain {
            if square(c, "input_gain")?.nrows() != m {
                return Err(dim_err("input_gain must be M x M"));
            }
        }
        if !(self.poisson_rate > 0.0)
            || !(self.dt_ode > 0.0)
            || !(self.duration > 0.0)
            || self.downsample == 0
        {
            return Err(config_err(
                "rate, dt_ode, duration and downsample must be positive",
            ));
        }
        if !(self.measurement_noise >= 0.0) {
            return Err(config_err("measurement_noise must be non-negative"));
        }
        self.balloon.validate()
    }

    /// Neural drift matrix `sigma * (I - gain * A_bar)`.
    pub fn drift(&self) -> Result<Matrix> {
        let a = self.a_matrix()?;
        let m = a.nrows();
        let mut bar = Matrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { a[(i, j)] });
        for i in 0..m {
            let s: f64 = bar.row(i).iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                bar.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok((Matrix::identity(m, m) - bar * self.gain) * self.sigma)
    }
}

fn square(rows: &[Vec<f64>], name: &str) -> Result<Matrix> {
    let m = rows.len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(dim_err(format!("{name} must be square")));
    }
    Ok(Matrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// Integrated neural activity and the input events that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuroTrajectory {
    /// `M x steps`, sampled every `dt_ode`.
    pub z: Matrix,
    /// `(step, region)` of every event, in time order.
    pub events: Vec<(usize, usize)>,
    pub dt_ode: f64,
}

/// Poisson event times per region, mapped to integration steps.
pub fn poisson_events(
    m: usize,
    rate: f64,
    steps: usize,
    dt: f64,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let exp = Exp::new(rate).expect("positive rate");
    let horizon = steps as f64 * dt;
    let mut events = Vec::new();
    for region in 0..m {
        let mut t = 0.0;
        loop {
            t += rng.sample::<f64, _>(exp);
            if t >= horizon {
                break;
            }
            events.push((((t / dt) as usize).min(steps - 1), region));
        }
    }
    events.sort();
    events
}

/// Euler integration of `dz/dt = J z + C u` from `z = 0`.
pub fn simulate_neuro(config: &NeuroConfig, rng: &mut Rng) -> Result<NeuroTrajectory> {
    config.validate()?;
    let m = config.nodes();
    let steps = config.steps();
    let events = poisson_events(m, config.poisson_rate, steps, config.dt_ode, rng);
    integrate_neuro(config, events)
}

/// Replays a given event record.
pub fn integrate_neuro(
    config: &NeuroConfig,
    events: Vec<(usize, usize)>,
) -> Result<NeuroTrajectory> {
    let m = config.nodes();
    let steps = config.steps();
    let drift = config.drift()?;
    if !config.allow_unstable {
        let worst = eigenvalues(&drift)
            .ok_or_else(|| domain_err("neural drift eigenvalues did not converge"))?
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > 0.0 {
            return Err(domain_err(format!(
                "neural drift has an eigenvalue with real part {worst} > 0"
            )));
        }
    }
    let c = match &config.input_gain {
        Some(rows) => square(rows, "input_gain")?,
        None => Matrix::identity(m, m),
    };
    let dt = config.dt_ode;
    let mut z = Matrix::zeros(m, steps);
    let mut cur = nalgebra::DVector::<f64>::zeros(m);
    let mut u = nalgebra::DVector::<f64>::zeros(m);
    let mut next_event = 0;
    for s in 0..steps {
        z.set_column(s, &cur);
        u.fill(0.0);
        while next_event < events.len() && events[next_event].0 == s {
            u[events[next_event].1] += config.impulse_height;
            next_event += 1;
        }
        let d = &drift * &cur + &c * &u;
        cur += d * dt;
        if cur.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Divergence {
                step: s + 1,
                detail: "neural state diverged".into(),
            });
        }
    }
    Ok(NeuroTrajectory {
        z,
        events,
        dt_ode: dt,
    })
}

/// Euler integration of the hemodynamic states per region at `dt`; returns
/// the BOLD signal on the same grid.
pub fn balloon_bold(z: &Matrix, params: &BalloonParams, dt: f64) -> Result<Matrix> {
    params.validate()?;
    let (m, n) = z.shape();
    let (k1, k2, k3) = params.readout();
    let BalloonParams {
        kappa,
        gamma,
        tau,
        alpha,
        e0,
        v0,
    } = *params;
    let mut bold = Matrix::zeros(m, n);
    for i in 0..m {
        let (mut s, mut f, mut v, mut q) = (0.0, 1.0, 1.0, 1.0);
        for t in 0..n {
            bold[(i, t)] = v0 * (k1 * (1.0 - q) + k2 * (1.0 - q / v) + k3 * (1.0 - v));
            let zt = z[(i, t)];
            if !zt.is_finite() {
                return Err(domain_err(format!(
                    "non-finite neural input at region {i}, step {t}"
                )));
            }
            let outflow = v.powf(1.0 / alpha);
            let extraction = 1.0 - (1.0 - e0).powf(1.0 / f);
            let ds = zt - kappa * s - gamma * (f - 1.0);
            let df = s;
            let dv = (f - outflow) / tau;
            let dq = (f * extraction / e0 - outflow * q / v) / tau;
            s += dt * ds;
            f += dt * df;
            v += dt * dv;
            q += dt * dq;
            if !(v > 0.0) || !(f > 0.0) || !(q > 0.0) {
                return Err(Error::Divergence {
                    step: t + 1,
                    detail: format!("hemodynamic state left physical bounds in region {i}"),
                });
            }
        }
    }
    Ok(bold)
}

/// Averages each window of `factor` samples and keeps one value per window.
pub fn downsample(x: &Matrix, factor: usize) -> Matrix {
    let (m, n) = x.shape();
    let out = n / factor;
    Matrix::from_fn(m, out, |i, k| {
        (0..factor).map(|j| x[(i, k * factor + j)]).sum::<f64>() / factor as f64
    })
}

/// Balloon-Windkessel measurement of a neural trajectory at the measurement
/// interval, without measurement noise.
pub fn balloon_windkessel(
    traj: &NeuroTrajectory,
    params: &BalloonParams,
    factor: usize,
) -> Result<ObservedSignal> {
    let bold = balloon_bold(&traj.z, params, traj.dt_ode)?;
    let y = downsample(&bold, factor);
    let t = y.ncols();
    Ok(ObservedSignal {
        y,
        dt: traj.dt_ode * factor as f64,
        track: ConditionTrack::constant(t),
    })
}

/// Rescales every region to mean 0 and unit variance.
pub fn zscore(signal: &mut ObservedSignal) {
    let t = signal.y.ncols() as f64;
    for mut row in signal.y.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / t;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t).sqrt();
        let s = if sd > 0.0 { 1.0 / sd } else { 0.0 };
        row.iter_mut().for_each(|v| *v = (*v - mean) * s);
    }
}

/// Full generator: neural simulation, hemodynamics, downsampling, relative
/// measurement noise and per-region standardization.
pub fn simulate_neuro_dataset(
    config: &NeuroConfig,
    rng: &mut Rng,
) -> Result<(ObservedSignal, NeuroTrajectory)> {
    let traj = simulate_neuro(config, rng)?;
    let mut signal = balloon_windkessel(&traj, &config.balloon, config.downsample)?;
    if config.measurement_noise > 0.0 {
        let t = signal.y.ncols() as f64;
        for mut row in signal.y.row_iter_mut() {
            let mean = row.iter().sum::<f64>() / t;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t).sqrt();
            let scale = config.measurement_noise * sd;
            row.iter_mut()
                .for_each(|v| *v += scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    zscore(&mut signal);
    Ok((signal, traj))
}
