use rand::Rng;

use super::render::Canvas;
use super::{Env, EnvSpec};

pub const GOAL_RADIUS: f64 = 0.15;
pub const DT: f64 = 0.1;
pub const MAX_FORCE: f64 = 2.0;
pub const FRICTION: f64 = 1.0;
pub const ARENA: f64 = 1.0;

/// Point mass chasing a goal that is fixed for the episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
}

pub fn goal_reward(s: &GoalState) -> f64 {
    let d = ((s.pos[0] - s.goal[0]).powi(2) + (s.pos[1] - s.goal[1]).powi(2)).sqrt();
    if d < GOAL_RADIUS {
        1.0
    } else {
        0.0
    }
}

/// Damped semi-implicit Euler step; walls stop the mass.
pub fn sparse_goal_step(s: GoalState, force: &[f64]) -> (GoalState, f64) {
    let mut n = s;
    for i in 0..2 {
        let f = force[i].clamp(-1.0, 1.0) * MAX_FORCE;
        n.vel[i] += DT * (f - FRICTION * n.vel[i]);
        n.pos[i] += DT * n.vel[i];
        if n.pos[i].abs() > ARENA {
            n.pos[i] = n.pos[i].clamp(-ARENA, ARENA);
            n.vel[i] = 0.0;
        }
    }
    (n, goal_reward(&n))
}

pub fn render_goal(s: &GoalState, size: usize) -> Vec<u8> {
    let mut c = Canvas::new(size, [30, 30, 40]);
    c.disc(s.goal[0], s.goal[1], GOAL_RADIUS, [40, 190, 70]);
    c.disc(s.pos[0], s.pos[1], 0.1, [70, 110, 230]);
    c.pixels
}

#[derive(Clone, Debug)]
pub struct SparseGoal {
    spec: EnvSpec,
    pub state: GoalState,
}

impl SparseGoal {
    pub fn new(image_size: usize, episode_len: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: "goal".into(),
                action_dim: 2,
                action_low: -1.0,
                action_high: 1.0,
                episode_len,
                dt: DT,
                image_size,
                state_dim: 6,
            },
            state: GoalState {
                pos: [0.0; 2],
                vel: [0.0; 2],
                goal: [0.5, 0.5],
            },
        }
    }
}

impl Env for SparseGoal {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) {
        let mut u = || rng.random_range(-0.8..0.8);
        self.state = GoalState {
            pos: [u(), u()],
            vel: [0.0; 2],
            goal: [u(), u()],
        };
    }

    fn step(&mut self, action: &[f64]) -> f64 {
        let (s, r) = sparse_goal_step(self.state, action);
        self.state = s;
        r
    }

    fn render(&self) -> Vec<u8> {
        render_goal(&self.state, self.spec.image_size)
    }

    fn true_state(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.pos[0], s.pos[1], s.vel[0], s.vel[1], s.goal[0], s.goal[1]]
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
