use serde::{Deserialize, Serialize};

use super::{GridState, Pos};
use crate::error::{Error, Result};
use crate::games::Game;

pub type Rgb = [u8; 3];

/// Side of the egocentric window.
pub const WINDOW_SIZE: usize = 15;
/// Cells visible on each side of the observer.
pub const WINDOW_RADIUS: usize = WINDOW_SIZE / 2;
/// Colour of off-map cells in observations.
pub const VOID_COLOR: Rgb = [0, 0, 0];

const PALETTE: [Rgb; 12] = [
    [230, 25, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [170, 255, 195],
];

/// Colour shared by every member of `species` on every island.
pub fn species_color(species: usize) -> Rgb {
    if let Some(&c) = PALETTE.get(species) {
        return c;
    }
    // Golden-angle hue walk for large species counts.
    let k = species - PALETTE.len();
    let hue = (k as f64 * 137.507_764) % 360.0;
    let value = 0.55 + 0.4 * ((k / 7) % 2) as f64;
    let saturation = 0.5 + 0.45 * ((k / 3) % 2) as f64;
    hsv(hue, saturation, value)
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Observer's own body: its species colour pushed halfway to white.
pub(crate) fn highlight(c: Rgb) -> Rgb {
    c.map(|u| u + (255 - u) / 2)
}

/// Row-major RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let pixels = std::iter::repeat(color).take(width * height).flatten().collect();
        Self { width, height, pixels }
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, color: Rgb) {
        let i = 3 * (row * self.width + col);
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Egocentric `15 x 15` RGB window plus the previous step's reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `WINDOW_SIZE * WINDOW_SIZE * 3` bytes, row-major, facing direction up.
    pub pixels: Vec<u8>,
    pub last_reward: f64,
}

impl Observation {
    pub const LEN: usize = WINDOW_SIZE * WINDOW_SIZE * 3;

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = 3 * (row * WINDOW_SIZE + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Full-map render: terrain, then game overlays, then agent bodies.
pub fn render_full(game: &Game, state: &GridState) -> Image {
    let mut img = Image::filled(state.width, state.height, VOID_COLOR);
    for pos in state.positions() {
        img.set(pos.row, pos.col, game.terrain_color(state.terrain(pos)));
    }
    game.paint_overlay(state, &mut img);
    for agent in &state.agents {
        img.set(agent.position.row, agent.position.col, agent.color);
    }
    img
}

fn crop(img: &Image, state: &GridState, slot: usize) -> Observation {
    let agent = &state.agents[slot];
    let (fr, fc) = agent.orientation.forward();
    let (rr, rc) = agent.orientation.right();
    let mut pixels = Vec::with_capacity(Observation::LEN);
    let radius = WINDOW_RADIUS as isize;
    for wr in 0..WINDOW_SIZE as isize {
        let ahead = radius - wr;
        for wc in 0..WINDOW_SIZE as isize {
            let side = wc - radius;
            let dr = ahead * fr + side * rr;
            let dc = ahead * fc + side * rc;
            let color = if ahead == 0 && side == 0 {
                highlight(agent.color)
            } else {
                agent
                    .position
                    .offset(dr, dc, state.height, state.width)
                    .map_or(VOID_COLOR, |p: Pos| img.get(p.row, p.col))
            };
            pixels.extend_from_slice(&color);
        }
    }
    Observation {
        pixels,
        last_reward: state.last_rewards.get(slot).copied().unwrap_or(0.0),
    }
}

pub fn observe(game: &Game, state: &GridState, slot: usize) -> Result<Observation> {
    if slot >= state.agents.len() {
        return Err(Error::arg(format!("no agent in slot {slot}")));
    }
    Ok(crop(&render_full(game, state), state, slot))
}

/// Observations for every agent from a single full render.
pub fn observe_all(game: &Game, state: &GridState) -> Vec<Observation> {
    let img = render_full(game, state);
    (0..state.agents.len()).map(|slot| crop(&img, state, slot)).collect()
}
