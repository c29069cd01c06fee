use std::f64::consts::PI;

use rand::Rng;

use super::render::Canvas;
use super::{Env, EnvSpec};

pub const GRAVITY: f64 = 10.0;
pub const LENGTH: f64 = 1.0;
pub const MASS: f64 = 1.0;
pub const DAMPING: f64 = 0.1;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
/// Integrator substeps per control step.
pub const SUBSTEPS: usize = 10;

/// Angle from upright (wrapped to (−π, π]) and angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

pub fn wrap_angle(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// `(cos θ + 1) / 2`.
pub fn pendulum_reward(s: &PendulumState) -> f64 {
    (s.theta.cos() + 1.0) / 2.0
}

/// Physics with explicit damping (use 0 for energy checks).
pub fn pendulum_step_with(s: PendulumState, torque: f64, damping: f64) -> PendulumState {
    let a = torque.clamp(-1.0, 1.0);
    let h = DT / SUBSTEPS as f64;
    let (mut th, mut om) = (s.theta, s.theta_dot);
    let acc = |th: f64, om: f64| {
        GRAVITY / LENGTH * th.sin() + (a * MAX_TORQUE - damping * om) / (MASS * LENGTH * LENGTH)
    };
    // Kick-drift-kick leapfrog; the damping term uses the latest velocity.
    for _ in 0..SUBSTEPS {
        om += 0.5 * h * acc(th, om);
        th += h * om;
        om += 0.5 * h * acc(th, om);
    }
    PendulumState {
        theta: wrap_angle(th),
        theta_dot: om,
    }
}

/// One control step; the reward is taken at the resulting state.
pub fn pendulum_step(s: PendulumState, torque: f64) -> (PendulumState, f64) {
    let next = pendulum_step_with(s, torque, DAMPING);
    (next, pendulum_reward(&next))
}

/// Total mechanical energy with θ measured from upright.
pub fn pendulum_energy(s: &PendulumState) -> f64 {
    0.5 * MASS * LENGTH * LENGTH * s.theta_dot.powi(2) + MASS * GRAVITY * LENGTH * s.theta.cos()
}

pub fn render_pendulum(s: &PendulumState, size: usize) -> Vec<u8> {
    let mut c = Canvas::new(size, [235, 235, 225]);
    let (tip_x, tip_y) = (0.75 * s.theta.sin(), 0.75 * s.theta.cos());
    c.segment((0.0, 0.0), (tip_x, tip_y), 0.09, [40, 40, 60]);
    c.disc(tip_x, tip_y, 0.18, [200, 40, 40]);
    c.disc(0.0, 0.0, 0.07, [90, 90, 90]);
    c.pixels
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub state: PendulumState,
}

impl Pendulum {
    pub fn new(image_size: usize, episode_len: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                action_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                episode_len,
                dt: DT,
                image_size,
                state_dim: 2,
            },
            state: PendulumState {
                theta: PI,
                theta_dot: 0.0,
            },
        }
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) {
        self.state = PendulumState {
            theta: wrap_angle(rng.random_range(-PI..PI)),
            theta_dot: rng.random_range(-1.0..1.0),
        };
    }

    fn step(&mut self, action: &[f64]) -> f64 {
        let (s, r) = pendulum_step(self.state, action[0]);
        self.state = s;
        r
    }

    fn render(&self) -> Vec<u8> {
        render_pendulum(&self.state, self.spec.image_size)
    }

    fn true_state(&self) -> Vec<f64> {
        vec![self.state.theta, self.state.theta_dot]
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
