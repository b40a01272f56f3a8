//! Rasterizes shapes as photos (filled, textured background) or sketches
//! (wobbly outlines on a blank page).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::shapes::Shape;

/// Pose shared by the photo and the sketch of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Latent {
    pub dx: f64,
    pub dy: f64,
    /// Radius of the unit frame in pixels.
    pub scale: f64,
    pub rotation: f64,
    pub aspect: f64,
}

impl Latent {
    pub fn draw(side: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = side as f64;
        Latent {
            dx: rng.random_range(-0.07..0.07) * s,
            dy: rng.random_range(-0.07..0.07) * s,
            scale: rng.random_range(0.3..0.42) * s,
            rotation: rng.random_range(-0.2..0.2),
            aspect: rng.random_range(0.9..1.1),
        }
    }

    /// Image point to unit-frame point.
    fn to_frame(self, side: usize, x: f64, y: f64) -> (f64, f64) {
        let c = side as f64 / 2.0;
        let (px, py) = (x - c - self.dx, y - c - self.dy);
        let (s, co) = self.rotation.sin_cos();
        let (rx, ry) = (co * px + s * py, -s * px + co * py);
        (rx / (self.scale * self.aspect), ry * self.aspect / self.scale)
    }
}

const SUPERSAMPLE: usize = 3;

fn subsamples() -> impl Iterator<Item = (f64, f64)> {
    (0..SUPERSAMPLE * SUPERSAMPLE).map(|k| {
        let i = (k / SUPERSAMPLE) as f64;
        let j = (k % SUPERSAMPLE) as f64;
        (
            (i + 0.5) / SUPERSAMPLE as f64,
            (j + 0.5) / SUPERSAMPLE as f64,
        )
    })
}

/// Filled shape over a striped, noisy background.
pub fn render_photo(shape: &Shape, latent: &Latent, side: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let base = rng.random_range(0.05..0.35);
    let stripe_amp = rng.random_range(0.03..0.12);
    let stripe_freq = rng.random_range(0.3..0.9);
    let stripe_dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let stripe_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let fill = rng.random_range(0.6..0.95);
    let shade_dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let shade = rng.random_range(0.0..0.1);
    let grain = Normal::new(0.0, 0.03).expect("valid sigma");
    let (sd, cd) = stripe_dir.sin_cos();
    let (ss, cs) = shade_dir.sin_cos();
    let half = side as f64 / 2.0;

    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (xf, yf) = (x as f64, y as f64);
            let covered = subsamples()
                .filter(|&(ox, oy)| {
                    let (u, v) = latent.to_frame(side, xf + ox, yf + oy);
                    shape.contains(u, v)
                })
                .count() as f64
                / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let cx = xf + 0.5;
            let cy = yf + 0.5;
            let bg = base + stripe_amp * (stripe_freq * (cd * cx + sd * cy) + stripe_phase).sin();
            let fg = fill + shade * (cs * (cx - half) + ss * (cy - half)) / half;
            let v = bg * (1.0 - covered) + fg * covered + grain.sample(rng);
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Smooth random displacement used to make strokes wobble.
struct Wobble {
    terms: Vec<[f64; 4]>,
}

impl Wobble {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let amp = rng.random_range(0.4..0.9);
        let terms = (0..6)
            .map(|_| {
                [
                    amp / 3.0,
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        Wobble { terms }
    }

    fn offset(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut dx, mut dy) = (0.0, 0.0);
        for (k, [a, fx, fy, ph]) in self.terms.iter().enumerate() {
            let s = a * (fx * x + fy * y + ph).sin();
            if k % 2 == 0 {
                dx += s;
            } else {
                dy += s;
            }
        }
        (dx, dy)
    }
}

// Rounded values; generated datasets depend on them exactly.
#[allow(clippy::approx_constant)]
const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (0.7071, 0.7071),
    (-0.7071, 0.7071),
    (0.7071, -0.7071),
    (-0.7071, -0.7071),
];

/// Outline of the shape with jittered strokes on a zero background.
pub fn render_sketch(shape: &Shape, latent: &Latent, side: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let width = rng.random_range(0.7..1.2);
    let ink = rng.random_range(0.75..1.0);
    let wobble = Wobble::draw(rng);
    let inside = |x: f64, y: f64| {
        let (u, v) = latent.to_frame(side, x, y);
        shape.contains(u, v)
    };

    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (xf, yf) = (x as f64, y as f64);
            let hits = subsamples()
                .filter(|&(ox, oy)| {
                    let (px, py) = (xf + ox, yf + oy);
                    let (wx, wy) = wobble.offset(px, py);
                    let (px, py) = (px + wx, py + wy);
                    let here = inside(px, py);
                    DIRECTIONS
                        .iter()
                        .any(|(ux, uy)| inside(px + width * ux, py + width * uy) != here)
                })
                .count() as f64
                / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            out.push((ink * hits) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::super::shapes::recipe;
    use super::*;

    fn centered(side: usize) -> Latent {
        Latent {
            dx: 0.0,
            dy: 0.0,
            scale: side as f64 * 0.35,
            rotation: 0.0,
            aspect: 1.0,
        }
    }

    #[test]
    fn photo_is_bright_inside_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = render_photo(&recipe("circle").unwrap(), &centered(32), 32, &mut rng);
        assert_eq!(img.len(), 32 * 32);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        let center = img[16 * 32 + 16];
        let corner = img[0];
        assert!(center > corner + 0.2, "{center} vs {corner}");
    }

    #[test]
    fn sketch_inks_only_near_the_outline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = render_sketch(&recipe("circle").unwrap(), &centered(32), 32, &mut rng);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img[16 * 32 + 16], 0.0);
        assert_eq!(img[0], 0.0);
        let ink: f32 = img.iter().sum();
        // Circumference 2*pi*11.2 px at one to two px of stroke.
        assert!(ink > 30.0 && ink < 220.0, "{ink}");
    }

    #[test]
    fn rotation_moves_the_shape() {
        let tri = recipe("equilateral_triangle").unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let mut turned = centered(32);
        turned.rotation = 0.5;
        assert_ne!(
            render_photo(&tri, &centered(32), 32, &mut a),
            render_photo(&tri, &turned, 32, &mut b)
        );
    }
}
