//! Shape recipes keyed by taxonomy leaf name.
//!
//! Every shape lives in a unit frame, roughly inside `[-1, 1]^2`, and is a
//! union of primitives minus another union. Siblings in the taxonomy share a
//! primitive family and differ in proportions, so taxonomy distance tracks
//! visual distance.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Ellipse { a: f64, b: f64, egg: f64 },
    Polygon(Vec<[f64; 2]>),
    /// Radius `1 - depth * bump(k * theta)`; square bumps give gear teeth.
    Radial { k: u32, depth: f64, square: bool },
}

impl Primitive {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Primitive::Ellipse { a, b, egg } => {
                // The egg term widens the lower half and narrows the upper.
                let bx = a * (1.0 - egg * v);
                (u / bx).powi(2) + (v / b).powi(2) <= 1.0
            }
            Primitive::Polygon(pts) => point_in_polygon(pts, u, v),
            Primitive::Radial { k, depth, square } => {
                let r = u.hypot(v);
                let phase = (*k as f64) * (v.atan2(u) + FRAC_PI_2);
                let bump = if *square {
                    if phase.rem_euclid(TAU) < PI {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    0.5 - 0.5 * phase.cos()
                };
                r <= 1.0 - depth * bump
            }
        }
    }
}

fn point_in_polygon(pts: &[[f64; 2]], u: f64, v: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let [xi, yi] = pts[i];
        let [xj, yj] = pts[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub add: Vec<Primitive>,
    pub sub: Vec<Primitive>,
}

impl Shape {
    fn one(p: Primitive) -> Self {
        Shape {
            add: vec![p],
            sub: Vec::new(),
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.add.iter().any(|p| p.contains(u, v)) && !self.sub.iter().any(|p| p.contains(u, v))
    }
}

/// Regular polygon with a vertex pointing up (negative v is up on screen).
fn regular(n: usize, r: f64, turn: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = -FRAC_PI_2 + turn + TAU * i as f64 / n as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

fn star(points: usize, inner: f64) -> Vec<[f64; 2]> {
    (0..2 * points)
        .map(|i| {
            let r = if i % 2 == 0 { 1.0 } else { inner };
            let a = -FRAC_PI_2 + PI * i as f64 / points as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Primitive {
    Primitive::Polygon(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
}

fn scaled(pts: Vec<[f64; 2]>, sx: f64, sy: f64) -> Vec<[f64; 2]> {
    pts.into_iter().map(|[x, y]| [x * sx, y * sy]).collect()
}

fn rotated(pts: Vec<[f64; 2]>, angle: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    pts.into_iter()
        .map(|[x, y]| [c * x - s * y, s * x + c * y])
        .collect()
}

fn poly(pts: Vec<[f64; 2]>) -> Primitive {
    Primitive::Polygon(pts)
}

fn ellipse(a: f64, b: f64) -> Primitive {
    Primitive::Ellipse { a, b, egg: 0.0 }
}

fn plus(half_width: f64) -> Vec<Primitive> {
    vec![
        rect(-1.0, -half_width, 1.0, half_width),
        rect(-half_width, -1.0, half_width, 1.0),
    ]
}

/// Names with a recipe, in the toy taxonomy's class order.
pub const RECIPE_NAMES: [&str; 40] = [
    "circle", "oval", "wide_ellipse", "slim_ellipse", "egg",
    "round_ring", "thick_ring", "square_ring", "triangle_ring", "target",
    "equilateral_triangle", "tall_triangle", "flat_triangle", "right_triangle", "inverted_triangle",
    "square", "wide_rectangle", "diamond", "trapezoid", "parallelogram",
    "pentagon", "hexagon", "heptagon", "octagon", "house",
    "plus", "thick_plus", "saltire", "tee", "ell",
    "star4", "star5", "star6", "star8", "star3",
    "blunt_star3", "blunt_star5", "blunt_star6", "blunt_star8", "gear",
];

/// The shape drawn for a taxonomy leaf.
pub fn recipe(name: &str) -> Result<Shape> {
    let sq = |r: f64| rect(-r, -r, r, r);
    let tri = |r: f64| poly(regular(3, r, 0.0));
    let shape = match name {
        "circle" => Shape::one(ellipse(1.0, 1.0)),
        "oval" => Shape::one(ellipse(1.0, 0.75)),
        "wide_ellipse" => Shape::one(ellipse(1.0, 0.5)),
        "slim_ellipse" => Shape::one(ellipse(0.5, 1.0)),
        "egg" => Shape::one(Primitive::Ellipse {
            a: 0.75,
            b: 1.0,
            egg: -0.3,
        }),
        "round_ring" => Shape {
            add: vec![ellipse(1.0, 1.0)],
            sub: vec![ellipse(0.6, 0.6)],
        },
        "thick_ring" => Shape {
            add: vec![ellipse(1.0, 1.0)],
            sub: vec![ellipse(0.35, 0.35)],
        },
        "square_ring" => Shape {
            add: vec![sq(0.85)],
            sub: vec![sq(0.5)],
        },
        "triangle_ring" => Shape {
            add: vec![tri(1.0)],
            sub: vec![tri(0.45)],
        },
        "target" => Shape {
            add: vec![ellipse(1.0, 1.0), ellipse(0.3, 0.3)],
            sub: vec![ellipse(0.6, 0.6)],
        },
        "equilateral_triangle" => Shape::one(tri(1.0)),
        "tall_triangle" => Shape::one(poly(scaled(regular(3, 1.0, 0.0), 0.6, 1.15))),
        "flat_triangle" => Shape::one(poly(scaled(regular(3, 1.0, 0.0), 1.15, 0.6))),
        "right_triangle" => Shape::one(poly(vec![[-0.8, -0.8], [0.8, 0.8], [-0.8, 0.8]])),
        "inverted_triangle" => Shape::one(poly(regular(3, 1.0, PI))),
        "square" => Shape::one(sq(0.75)),
        "wide_rectangle" => Shape::one(rect(-1.0, -0.5, 1.0, 0.5)),
        "diamond" => Shape::one(poly(regular(4, 1.0, 0.0))),
        "trapezoid" => Shape::one(poly(vec![[-0.45, -0.6], [0.45, -0.6], [0.95, 0.6], [-0.95, 0.6]])),
        "parallelogram" => Shape::one(poly(vec![[-0.45, -0.6], [0.95, -0.6], [0.45, 0.6], [-0.95, 0.6]])),
        "pentagon" => Shape::one(poly(regular(5, 1.0, 0.0))),
        "hexagon" => Shape::one(poly(regular(6, 1.0, 0.0))),
        "heptagon" => Shape::one(poly(regular(7, 1.0, 0.0))),
        "octagon" => Shape::one(poly(regular(8, 1.0, PI / 8.0))),
        "house" => Shape::one(poly(vec![
            [0.0, -1.0],
            [0.8, -0.2],
            [0.8, 0.85],
            [-0.8, 0.85],
            [-0.8, -0.2],
        ])),
        "plus" => Shape {
            add: plus(0.25),
            sub: Vec::new(),
        },
        "thick_plus" => Shape {
            add: plus(0.45),
            sub: Vec::new(),
        },
        "saltire" => Shape {
            add: vec![
                poly(rotated(vec![[-1.0, -0.25], [1.0, -0.25], [1.0, 0.25], [-1.0, 0.25]], PI / 4.0)),
                poly(rotated(vec![[-1.0, -0.25], [1.0, -0.25], [1.0, 0.25], [-1.0, 0.25]], -PI / 4.0)),
            ],
            sub: Vec::new(),
        },
        "tee" => Shape {
            add: vec![rect(-0.9, -0.9, 0.9, -0.45), rect(-0.25, -0.9, 0.25, 0.9)],
            sub: Vec::new(),
        },
        "ell" => Shape {
            add: vec![rect(-0.7, -0.9, -0.2, 0.9), rect(-0.7, 0.4, 0.8, 0.9)],
            sub: Vec::new(),
        },
        "star3" => Shape::one(poly(star(3, 0.3))),
        "star4" => Shape::one(poly(star(4, 0.4))),
        "star5" => Shape::one(poly(star(5, 0.42))),
        "star6" => Shape::one(poly(star(6, 0.5))),
        "star8" => Shape::one(poly(star(8, 0.55))),
        "blunt_star3" => Shape::one(Primitive::Radial {
            k: 3,
            depth: 0.4,
            square: false,
        }),
        "blunt_star5" => Shape::one(Primitive::Radial {
            k: 5,
            depth: 0.35,
            square: false,
        }),
        "blunt_star6" => Shape::one(Primitive::Radial {
            k: 6,
            depth: 0.3,
            square: false,
        }),
        "blunt_star8" => Shape::one(Primitive::Radial {
            k: 8,
            depth: 0.28,
            square: false,
        }),
        "gear" => Shape::one(Primitive::Radial {
            k: 8,
            depth: 0.25,
            square: true,
        }),
        other => {
            return Err(Error::Lookup {
                kind: "shape recipe",
                name: other.to_string(),
            })
        }
    };
    Ok(shape)
}
