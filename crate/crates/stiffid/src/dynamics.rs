//! Linear single-track (bicycle) vehicle model: state-space construction,
//! fixed-step simulation, synthetic sensor generation, signal derivation from
//! raw measurements, and the trajectory-discrepancy metric used to score
//! stiffness estimates.
//!
//! States are `x = [v_y, r]` (lateral velocity, yaw rate) and inputs are
//! `u = [delta1, delta2]` (front and rear steering angles).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Errors from model construction, simulation, and signal processing.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    /// A physical parameter violated its positivity/validity constraint.
    InvalidParameter(String),
    /// Integration produced a non-finite state.
    Divergence { step: usize, time: f64 },
    /// Too few samples for the requested derivation.
    InsufficientData { needed: usize, got: usize },
    /// Two trajectories that must align do not.
    LengthMismatch { left: usize, right: usize },
    /// A required signal is absent from the trajectory.
    MissingSignal(&'static str),
}

impl std::fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DynamicsError::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            DynamicsError::Divergence { step, time } => {
                write!(f, "integration diverged at sample {step} (t = {time} s)")
            }
            DynamicsError::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need at least {needed} samples, got {got}")
            }
            DynamicsError::LengthMismatch { left, right } => {
                write!(f, "trajectory length mismatch: {left} vs {right}")
            }
            DynamicsError::MissingSignal(name) => {
                write!(f, "trajectory is missing required signal `{name}`")
            }
        }
    }
}

impl std::error::Error for DynamicsError {}

/// Lumped parameters of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Yaw moment of inertia [kg m^2].
    pub yaw_inertia: f64,
    /// Distance from the center of mass to the front axle [m].
    pub dist_front: f64,
    /// Distance from the center of mass to the rear axle [m].
    pub dist_rear: f64,
    /// Nominal longitudinal speed [m/s].
    pub nominal_speed: f64,
}

impl VehicleParams {
    pub fn new(
        mass: f64,
        yaw_inertia: f64,
        dist_front: f64,
        dist_rear: f64,
        nominal_speed: f64,
    ) -> Result<Self, DynamicsError> {
        let p = Self { mass, yaw_inertia, dist_front, dist_rear, nominal_speed };
        p.validate()?;
        Ok(p)
    }

    /// The 1:8-scale test-vehicle parameters used throughout the test suite
    /// (m = 2.15 kg, I_z = 0.085 kg m^2, a = b = 0.17 m, V_0 = 1.2 m/s).
    pub fn scaled_test_vehicle() -> Self {
        Self {
            mass: 2.15,
            yaw_inertia: 0.085,
            dist_front: 0.17,
            dist_rear: 0.17,
            nominal_speed: 1.2,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            (self.mass, "mass"),
            (self.yaw_inertia, "yaw_inertia"),
            (self.dist_front, "dist_front"),
            (self.dist_rear, "dist_rear"),
            (self.nominal_speed, "nominal_speed"),
        ];
        for (v, name) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Wheelbase a + b [m].
    pub fn wheelbase(&self) -> f64 {
        self.dist_front + self.dist_rear
    }
}

/// Continuous-time state-space matrices of the lateral model,
/// `xdot = A x + B u` with `x = [v_y, r]`, `u = [delta1, delta2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace {
    pub a: [[f64; 2]; 2],
    pub b: [[f64; 2]; 2],
}

impl StateSpace {
    /// `A x + B u` for one sample.
    pub fn derivative(&self, x: [f64; 2], u: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0][0] * u[0] + self.b[0][1] * u[1],
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1][0] * u[0] + self.b[1][1] * u[1],
        ]
    }
}

/// Builds the lateral state-space matrices for a stiffness pair at speed `v0`.
///
/// ```text
/// A = [ -(C_af+C_ar)/(m v0)        (b C_ar - a C_af)/(m v0) - v0 ]
///     [ (b C_ar - a C_af)/(I_z v0) -(a^2 C_af + b^2 C_ar)/(I_z v0) ]
/// B = [ C_af/m       C_ar/m   ]
///     [ a C_af/I_z  -b C_ar/I_z ]
/// ```
pub fn build_state_space(
    p: &VehicleParams,
    caf: f64,
    car: f64,
    v0: f64,
) -> Result<StateSpace, DynamicsError> {
    p.validate()?;
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "speed v0 must be strictly positive, got {v0}"
        )));
    }
    if !(caf.is_finite() && caf > 0.0) || !(car.is_finite() && car > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "cornering stiffness must be strictly positive, got caf={caf}, car={car}"
        )));
    }
    let (m, iz) = (p.mass, p.yaw_inertia);
    let (a, b) = (p.dist_front, p.dist_rear);
    let cross = b * car - a * caf;
    Ok(StateSpace {
        a: [
            [-(caf + car) / (m * v0), cross / (m * v0) - v0],
            [cross / (iz * v0), -(a * a * caf + b * b * car) / (iz * v0)],
        ],
        b: [[caf / m, car / m], [a * caf / iz, -b * car / iz]],
    })
}

/// Uniformly sampled time series of states, inputs, and derived signals.
///
/// `t`, `vx`, `r`, `delta1`, `delta2` are always present. The remaining
/// signals are optional: the simulator fills all of them, raw sensor data
/// carries only `ay` (and noisy `r`), and [`derive_signals`] reconstructs
/// `vy`, `vy_dot`, `r_dot` from the sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Sample period [s].
    pub dt: f64,
    pub t: Vec<f64>,
    /// Longitudinal speed [m/s].
    pub vx: Vec<f64>,
    /// Yaw rate [rad/s].
    pub r: Vec<f64>,
    /// Front steering angle [rad].
    pub delta1: Vec<f64>,
    /// Rear steering angle [rad].
    pub delta2: Vec<f64>,
    /// Lateral velocity [m/s].
    pub vy: Option<Vec<f64>>,
    /// Lateral acceleration [m/s^2].
    pub ay: Option<Vec<f64>>,
    /// Yaw acceleration [rad/s^2].
    pub r_dot: Option<Vec<f64>>,
    /// Lateral jerk-free acceleration of v_y [m/s^2].
    pub vy_dot: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn vy(&self) -> Result<&[f64], DynamicsError> {
        self.vy.as_deref().ok_or(DynamicsError::MissingSignal("vy"))
    }

    pub fn ay(&self) -> Result<&[f64], DynamicsError> {
        self.ay.as_deref().ok_or(DynamicsError::MissingSignal("ay"))
    }

    pub fn r_dot(&self) -> Result<&[f64], DynamicsError> {
        self.r_dot.as_deref().ok_or(DynamicsError::MissingSignal("rdot"))
    }

    pub fn vy_dot(&self) -> Result<&[f64], DynamicsError> {
        self.vy_dot.as_deref().ok_or(DynamicsError::MissingSignal("vydot"))
    }

    /// Checks the structural invariants: all series share the length of `t`
    /// (N >= 2) and `t` is uniformly spaced with step `dt`.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.t.len();
        if n < 2 {
            return Err(DynamicsError::InsufficientData { needed: 2, got: n });
        }
        for (len, name) in [
            (self.vx.len(), "vx"),
            (self.r.len(), "r"),
            (self.delta1.len(), "delta1"),
            (self.delta2.len(), "delta2"),
        ] {
            if len != n {
                return Err(DynamicsError::InvalidParameter(format!(
                    "series `{name}` has length {len}, expected {n}"
                )));
            }
        }
        for (opt, name) in [
            (&self.vy, "vy"),
            (&self.ay, "ay"),
            (&self.r_dot, "rdot"),
            (&self.vy_dot, "vydot"),
        ] {
            if let Some(s) = opt {
                if s.len() != n {
                    return Err(DynamicsError::InvalidParameter(format!(
                        "series `{name}` has length {}, expected {n}",
                        s.len()
                    )));
                }
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let tol = 1e-9 * self.dt.max(1.0);
        for i in 1..n {
            let step = self.t[i] - self.t[i - 1];
            if !((step - self.dt).abs() <= tol) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "time axis not uniform at sample {i}: step {step} vs dt {}",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    /// Sub-trajectory covering samples `[from, to)` (time axis re-anchored at 0).
    pub fn window(&self, from: usize, to: usize) -> Trajectory {
        let slice = |v: &[f64]| v[from..to].to_vec();
        Trajectory {
            dt: self.dt,
            t: (0..to - from).map(|i| i as f64 * self.dt).collect(),
            vx: slice(&self.vx),
            r: slice(&self.r),
            delta1: slice(&self.delta1),
            delta2: slice(&self.delta2),
            vy: self.vy.as_deref().map(slice),
            ay: self.ay.as_deref().map(slice),
            r_dot: self.r_dot.as_deref().map(slice),
            vy_dot: self.vy_dot.as_deref().map(slice),
        }
    }
}

/// Additive Gaussian noise plus constant bias on the yaw-rate and
/// lateral-acceleration channels, reproducible from the seed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    /// Yaw-rate noise standard deviation [rad/s].
    pub sigma_r: f64,
    /// Lateral-acceleration noise standard deviation [m/s^2].
    pub sigma_ay: f64,
    /// Constant yaw-rate bias [rad/s].
    pub bias_r: f64,
    /// Constant lateral-acceleration bias [m/s^2].
    pub bias_ay: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    /// Defaults chosen to make the comparative experiments discriminating:
    /// sigma_r = 0.01 rad/s, sigma_ay = 0.05 m/s^2, zero bias.
    fn default() -> Self {
        Self { sigma_r: 0.01, sigma_ay: 0.05, bias_r: 0.0, bias_ay: 0.0, seed: 0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.sigma_r < 0.0 || self.sigma_ay < 0.0 {
            return Err(DynamicsError::InvalidParameter(format!(
                "noise sigmas must be non-negative, got sigma_r={}, sigma_ay={}",
                self.sigma_r, self.sigma_ay
            )));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_r == 0.0 && self.sigma_ay == 0.0 && self.bias_r == 0.0 && self.bias_ay == 0.0
    }
}

/// Steering maneuvers used for data generation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SteerSchedule {
    /// `delta1 = amplitude * sin(2 pi frequency t)`, rear steering zero.
    Sine { amplitude: f64, frequency: f64 },
    /// Front step of `amplitude` at `at` seconds, rear steering zero.
    Step { amplitude: f64, at: f64 },
    /// One sine period starting at `start`, zero elsewhere (lane change).
    LaneChange { amplitude: f64, frequency: f64, start: f64 },
}

impl SteerSchedule {
    /// Default excitation: 0.1 rad at 0.5 Hz.
    pub fn default_sine() -> Self {
        SteerSchedule::Sine { amplitude: 0.1, frequency: 0.5 }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        match *self {
            SteerSchedule::Sine { amplitude, frequency } => {
                (amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin(), 0.0)
            }
            SteerSchedule::Step { amplitude, at } => {
                (if t >= at { amplitude } else { 0.0 }, 0.0)
            }
            SteerSchedule::LaneChange { amplitude, frequency, start } => {
                let period = 1.0 / frequency;
                if t >= start && t < start + period {
                    (amplitude * (2.0 * std::f64::consts::PI * frequency * (t - start)).sin(), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

/// Integrates `xdot = A x + B u` with classic fixed-step RK4 and returns the
/// fully populated trajectory: `vy_dot`/`r_dot` are the model derivatives at
/// each sample and `ay = vy_dot + vx * r`.
///
/// The number of samples is `round(duration/dt) + 1`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<F>(
    p: &VehicleParams,
    caf: f64,
    car: f64,
    steer: F,
    vx: f64,
    dt: f64,
    duration: f64,
    x0: [f64; 2],
) -> Result<Trajectory, DynamicsError>
where
    F: Fn(f64) -> (f64, f64),
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if duration < dt {
        return Err(DynamicsError::InvalidParameter(format!(
            "duration {duration} must be at least one step {dt}"
        )));
    }
    let ss = build_state_space(p, caf, car, vx)?;
    let n = (duration / dt).round() as usize + 1;

    let mut t = Vec::with_capacity(n);
    let mut vy = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);

    let mut x = x0;
    for i in 0..n {
        let ti = i as f64 * dt;
        let (u1, u2) = steer(ti);
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(DynamicsError::Divergence { step: i, time: ti });
        }
        t.push(ti);
        vy.push(x[0]);
        r.push(x[1]);
        d1.push(u1);
        d2.push(u2);

        if i + 1 < n {
            let th = ti + 0.5 * dt;
            let uh = steer(th);
            let ue = steer(ti + dt);
            let k1 = ss.derivative(x, [u1, u2]);
            let k2 = ss.derivative([x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]], [uh.0, uh.1]);
            let k3 = ss.derivative([x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]], [uh.0, uh.1]);
            let k4 = ss.derivative([x[0] + dt * k3[0], x[1] + dt * k3[1]], [ue.0, ue.1]);
            x = [
                x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
        }
    }

    let mut vy_dot = Vec::with_capacity(n);
    let mut r_dot = Vec::with_capacity(n);
    let mut ay = Vec::with_capacity(n);
    for i in 0..n {
        let xd = ss.derivative([vy[i], r[i]], [d1[i], d2[i]]);
        vy_dot.push(xd[0]);
        r_dot.push(xd[1]);
        ay.push(xd[0] + vx * r[i]);
    }

    Ok(Trajectory {
        dt,
        t,
        vx: vec![vx; n],
        r,
        delta1: d1,
        delta2: d2,
        vy: Some(vy),
        ay: Some(ay),
        r_dot: Some(r_dot),
        vy_dot: Some(vy_dot),
    })
}

/// Emulates IMU output: copies the trajectory, adds Gaussian noise plus bias
/// to `r` and `ay`, and clears `vy`, `vy_dot`, `r_dot` so they must be
/// re-derived as from raw sensors. With an all-zero noise model the sensor
/// channels are returned bit-for-bit unchanged.
pub fn synthesize_sensors(clean: &Trajectory, nm: &NoiseModel) -> Result<Trajectory, DynamicsError> {
    nm.validate()?;
    let ay_clean = clean.ay()?;
    let mut out = clean.clone();
    out.vy = None;
    out.vy_dot = None;
    out.r_dot = None;

    if nm.is_silent() {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let n = clean.len();
    let mut r = Vec::with_capacity(n);
    let mut ay = Vec::with_capacity(n);
    for i in 0..n {
        let zr: f64 = gauss.sample(&mut rng);
        let za: f64 = gauss.sample(&mut rng);
        r.push(clean.r[i] + nm.sigma_r * zr + nm.bias_r);
        ay.push(ay_clean[i] + nm.sigma_ay * za + nm.bias_ay);
    }
    out.r = r;
    out.ay = Some(ay);
    Ok(out)
}

/// Centered moving average with an odd window, shrinking symmetrically at the
/// edges so the filter stays phase-free.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return x.to_vec();
    }
    let half = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let s: f64 = x[i - k..=i + k].iter().sum();
            s / (2 * k + 1) as f64
        })
        .collect()
}

/// Central finite differences on a uniform grid; one-sided at the endpoints.
fn finite_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    d[0] = (x[1] - x[0]) / dt;
    d[n - 1] = (x[n - 1] - x[n - 2]) / dt;
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
    }
    d
}

/// Reconstructs the derived signals of a measured trajectory:
///
/// * `vy_dot = ay - vx * r` (sensor relation),
/// * `r_dot` by central differences of `r` after a centered moving average of
///   width `smoothing_window` (odd, >= 1; 1 disables smoothing),
/// * `vy` by trapezoidal integration of `vy_dot` from `vy(0) = 0`.
pub fn derive_signals(
    measured: &Trajectory,
    smoothing_window: usize,
) -> Result<Trajectory, DynamicsError> {
    let n = measured.len();
    if n < 3 {
        return Err(DynamicsError::InsufficientData { needed: 3, got: n });
    }
    if smoothing_window == 0 || smoothing_window % 2 == 0 {
        return Err(DynamicsError::InvalidParameter(format!(
            "smoothing window must be odd and >= 1, got {smoothing_window}"
        )));
    }
    let ay = measured.ay()?;

    let vy_dot: Vec<f64> =
        (0..n).map(|i| ay[i] - measured.vx[i] * measured.r[i]).collect();

    let r_smooth = moving_average(&measured.r, smoothing_window);
    let r_dot = finite_difference(&r_smooth, measured.dt);

    let mut vy = Vec::with_capacity(n);
    let mut acc = 0.0;
    vy.push(0.0);
    for i in 1..n {
        acc += 0.5 * (vy_dot[i] + vy_dot[i - 1]) * measured.dt;
        vy.push(acc);
    }

    let mut out = measured.clone();
    out.vy = Some(vy);
    out.vy_dot = Some(vy_dot);
    out.r_dot = Some(r_dot);
    Ok(out)
}

/// Re-simulates a measured trajectory's maneuver under a candidate stiffness
/// pair: the recorded steering is replayed (linearly interpolated between
/// samples) through the linear model from the measured initial state. The
/// result scores candidates via [`trajectory_error`].
pub fn replay(
    p: &VehicleParams,
    caf: f64,
    car: f64,
    measured: &Trajectory,
) -> Result<Trajectory, DynamicsError> {
    measured.validate()?;
    let n = measured.len();
    let dt = measured.dt;
    let d1 = measured.delta1.clone();
    let d2 = measured.delta2.clone();
    let interp = move |series: &[f64], t: f64| -> f64 {
        let pos = t / dt;
        let i = (pos.floor() as usize).min(series.len() - 1);
        if i + 1 >= series.len() {
            return series[series.len() - 1];
        }
        let frac = pos - i as f64;
        series[i] * (1.0 - frac) + series[i + 1] * frac
    };
    let steer = move |t: f64| (interp(&d1, t), interp(&d2, t));
    let vx = measured.vx[0];
    let x0 = [
        measured.vy.as_ref().map_or(0.0, |v| v[0]),
        measured.r[0],
    ];
    simulate(p, caf, car, steer, vx, dt, (n - 1) as f64 * dt, x0)
}

/// Trajectory discrepancy `e = integral(|vy - vy_sim| + |r - r_sim|) dt`
/// by the trapezoidal rule. Used instead of percent error because the
/// signals cross zero.
pub fn trajectory_error(
    measured: &Trajectory,
    simulated: &Trajectory,
) -> Result<f64, DynamicsError> {
    if measured.len() != simulated.len() {
        return Err(DynamicsError::LengthMismatch {
            left: measured.len(),
            right: simulated.len(),
        });
    }
    if (measured.dt - simulated.dt).abs() > 1e-12 * measured.dt.max(1.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "dt mismatch: {} vs {}",
            measured.dt, simulated.dt
        )));
    }
    let vm = measured.vy()?;
    let vs = simulated.vy()?;
    let n = measured.len();
    let integrand =
        |i: usize| (vm[i] - vs[i]).abs() + (measured.r[i] - simulated.r[i]).abs();
    let mut e = 0.0;
    for i in 1..n {
        e += 0.5 * (integrand(i) + integrand(i - 1)) * measured.dt;
    }
    Ok(e)
}
