//! Procedural scenes: a handful of colored shapes, each active over its own
//! time interval and moving along a straight line. The query describes one
//! of them; the annotation is that actor's analytic bounding box over its
//! active interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotationRecord, RendererParams, VideoTensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn word(&self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(&self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 5] = [Motion::Left, Motion::Right, Motion::Up, Motion::Down, Motion::Still];

    pub fn word(&self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Right => "right",
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Still => "still",
        }
    }

    fn direction(&self) -> (f64, f64) {
        match self {
            Motion::Left => (-1.0, 0.0),
            Motion::Right => (1.0, 0.0),
            Motion::Up => (0.0, -1.0),
            Motion::Down => (0.0, 1.0),
            Motion::Still => (0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Actor {
    pub shape: Shape,
    pub color: Color,
    pub motion: Motion,
    /// Bounding-box side in pixels (shapes are drawn inside an s x s box).
    pub size: f64,
    /// Pixel speed per frame along the motion direction.
    pub speed: f64,
    /// Center at the first active frame.
    pub spawn: (f64, f64),
    /// Inclusive active interval.
    pub active: (usize, usize),
}

impl Actor {
    /// Center at frame `t` (must be active).
    pub fn center_at(&self, t: usize) -> (f64, f64) {
        let dt = (t - self.active.0) as f64;
        let (dx, dy) = self.motion.direction();
        (self.spawn.0 + dx * self.speed * dt, self.spawn.1 + dy * self.speed * dt)
    }

    pub fn is_active(&self, t: usize) -> bool {
        t >= self.active.0 && t <= self.active.1
    }

    /// Normalized (cx, cy, w, h) bounding box at frame `t`.
    pub fn bbox_at(&self, t: usize, w_px: usize, h_px: usize) -> [f64; 4] {
        let (cx, cy) = self.center_at(t);
        [cx / w_px as f64, cy / h_px as f64, self.size / w_px as f64, self.size / h_px as f64]
    }
}

/// Generation knobs for the synthetic corpus.
#[derive(Clone, Debug)]
pub struct SceneParams {
    pub t: usize,
    pub h_px: usize,
    pub w_px: usize,
    pub min_actors: usize,
    pub max_actors: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Minimum active length of the target, as a fraction of T.
    pub min_target_span: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            t: 16,
            h_px: 32,
            w_px: 32,
            min_actors: 2,
            max_actors: 4,
            min_size: 9.0,
            max_size: 13.0,
            min_target_span: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub seed: u64,
    pub index: u64,
    pub t: usize,
    pub h_px: usize,
    pub w_px: usize,
    pub actors: Vec<Actor>,
    pub target_index: usize,
}

impl SyntheticScene {
    /// Deterministic per (seed, index): every draw comes from one seeded
    /// stream.
    pub fn generate(seed: u64, index: u64, p: &SceneParams) -> Result<SyntheticScene> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index.wrapping_add(1));

        if p.w_px as f64 <= p.max_size || p.h_px as f64 <= p.max_size {
            return Err(Error::Data(format!(
                "canvas {}x{} too small for shapes up to {} px",
                p.w_px, p.h_px, p.max_size
            )));
        }
        if p.t < 2 {
            return Err(Error::Data("scenes need at least two frames".into()));
        }

        let n_actors = rng.gen_range(p.min_actors..=p.max_actors);
        let target_index = rng.gen_range(0..n_actors);

        let target_shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
        let target_color = Color::ALL[rng.gen_range(0..Color::ALL.len())];

        let mut actors = Vec::with_capacity(n_actors);
        for i in 0..n_actors {
            let (shape, color) = if i == target_index {
                (target_shape, target_color)
            } else {
                // Distractors never share the target's appearance, which
                // keeps per-frame grounding well-posed; their motion is free.
                loop {
                    let s = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
                    let c = Color::ALL[rng.gen_range(0..Color::ALL.len())];
                    if (s, c) != (target_shape, target_color) {
                        break (s, c);
                    }
                }
            };
            let motion = Motion::ALL[rng.gen_range(0..Motion::ALL.len())];
            let size = rng.gen_range(p.min_size..p.max_size);

            let active = if i == target_index {
                let min_len = ((p.t as f64 * p.min_target_span).ceil() as usize).max(2);
                let len = rng.gen_range(min_len..=p.t);
                let start = rng.gen_range(0..=p.t - len);
                (start, start + len - 1)
            } else {
                let len = rng.gen_range(2..=p.t);
                let start = rng.gen_range(0..=p.t - len);
                (start, start + len - 1)
            };

            let frames = (active.1 - active.0) as f64;
            let (dx, dy) = motion.direction();
            // Small margin keeps speed*frames strictly below the free space
            // even after rounding, so a spawn position always exists.
            let travel_budget_x = p.w_px as f64 - size - 1e-6;
            let travel_budget_y = p.h_px as f64 - size - 1e-6;
            let speed = if matches!(motion, Motion::Still) {
                0.0
            } else {
                let budget = if dx != 0.0 { travel_budget_x } else { travel_budget_y };
                let cap = if frames > 0.0 { budget / frames } else { f64::INFINITY };
                rng.gen_range(0.75..1.5f64).min(cap)
            };
            if !matches!(motion, Motion::Still) && speed <= 0.0 {
                return Err(Error::Data("canvas too small to move a shape across it".into()));
            }

            // Spawn range keeping the box inside the canvas over the whole
            // active interval.
            let half = size / 2.0;
            let (tx, ty) = (dx * speed * frames, dy * speed * frames);
            let x_lo = half - tx.min(0.0);
            let x_hi = p.w_px as f64 - half - tx.max(0.0);
            let y_lo = half - ty.min(0.0);
            let y_hi = p.h_px as f64 - half - ty.max(0.0);
            if x_lo > x_hi || y_lo > y_hi {
                return Err(Error::Data("canvas too small for the sampled trajectory".into()));
            }
            let spawn = (rng.gen_range(x_lo..=x_hi), rng.gen_range(y_lo..=y_hi));

            actors.push(Actor { shape, color, motion, size, speed, spawn, active });
        }

        Ok(SyntheticScene {
            seed,
            index,
            t: p.t,
            h_px: p.h_px,
            w_px: p.w_px,
            actors,
            target_index,
        })
    }

    pub fn target(&self) -> &Actor {
        &self.actors[self.target_index]
    }

    /// Templated query describing the target actor.
    pub fn query(&self) -> String {
        let t = self.target();
        format!("the {} {} moving {}", t.color.word(), t.shape.word(), t.motion.word())
    }

    /// Rasterize the scene; pure function of the record.
    pub fn render(&self) -> VideoTensor {
        let mut video = VideoTensor::zeros(self.t, 3, self.h_px, self.w_px);
        for t in 0..self.t {
            for actor in &self.actors {
                if !actor.is_active(t) {
                    continue;
                }
                let (cx, cy) = actor.center_at(t);
                let half = actor.size / 2.0;
                let rgb = actor.color.rgb();
                let y0 = ((cy - half).floor().max(0.0)) as usize;
                let y1 = ((cy + half).ceil() as usize).min(self.h_px);
                let x0 = ((cx - half).floor().max(0.0)) as usize;
                let x1 = ((cx + half).ceil() as usize).min(self.w_px);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = x as f64 + 0.5;
                        let py = y as f64 + 0.5;
                        if covers(actor.shape, cx, cy, half, px, py) {
                            for (c, &v) in rgb.iter().enumerate() {
                                *video.at_mut(t, c, y, x) = v;
                            }
                        }
                    }
                }
            }
        }
        video
    }

    pub fn annotation(&self, video_id: &str) -> Result<AnnotationRecord> {
        let target = self.target();
        let boxes = (target.active.0..=target.active.1)
            .map(|t| target.bbox_at(t, self.w_px, self.h_px))
            .collect();
        let ann = AnnotationRecord {
            video_id: video_id.to_string(),
            t: self.t,
            query: self.query(),
            t_s: target.active.0,
            t_e: target.active.1,
            boxes,
            seed: self.seed,
            renderer: RendererParams { h_px: self.h_px, w_px: self.w_px, n_actors: self.actors.len() },
        };
        ann.validate()?;
        Ok(ann)
    }
}

fn covers(shape: Shape, cx: f64, cy: f64, half: f64, px: f64, py: f64) -> bool {
    match shape {
        Shape::Square => (px - cx).abs() <= half && (py - cy).abs() <= half,
        Shape::Circle => {
            let dx = px - cx;
            let dy = py - cy;
            dx * dx + dy * dy <= half * half
        }
        Shape::Triangle => {
            // Upward triangle: apex (cx, cy-half), base corners (cx +- half, cy+half).
            let v = (py - (cy - half)) / (2.0 * half);
            if !(0.0..=1.0).contains(&v) {
                return false;
            }
            (px - cx).abs() <= v * half
        }
    }
}
