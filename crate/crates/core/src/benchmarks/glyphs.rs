//! Geometric glyph shapes in normalised coordinates `(u, v) ∈ [-1, 1]²`
//! (`v` grows downwards).

/// Class order: solid silhouettes first, so small label sets contain no
/// stroke- or outline-like glyphs.
pub const GLYPH_NAMES: [&str; 16] = [
    "circle", "square", "triangle", "star", "arrow", "halfdisk", "crescent", "plus", "cross", "ring",
    "diamond", "bars", "stick", "hexagon", "tee", "ell",
];

pub const MAX_CLASSES: usize = GLYPH_NAMES.len();

fn in_triangle(p: (f32, f32), a: (f32, f32), b: (f32, f32), c: (f32, f32)) -> bool {
    let cross = |o: (f32, f32), s: (f32, f32), t: (f32, f32)| {
        (s.0 - o.0) * (t.1 - o.1) - (s.1 - o.1) * (t.0 - o.0)
    };
    let d1 = cross(p, a, b);
    let d2 = cross(p, b, c);
    let d3 = cross(p, c, a);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Whether point `(u, v)` lies inside glyph `class`.
pub fn inside(class: usize, u: f32, v: f32) -> bool {
    let r2 = u * u + v * v;
    match GLYPH_NAMES.get(class).copied().unwrap_or("") {
        "circle" => r2 < 0.62 * 0.62,
        "square" => u.abs().max(v.abs()) < 0.52,
        "triangle" => in_triangle((u, v), (0.0, -0.62), (-0.64, 0.52), (0.64, 0.52)),
        "plus" => (u.abs() < 0.18 && v.abs() < 0.66) || (v.abs() < 0.18 && u.abs() < 0.66),
        "cross" => {
            let (a, b) = ((u + v) * std::f32::consts::FRAC_1_SQRT_2, (u - v) * std::f32::consts::FRAC_1_SQRT_2);
            (a.abs() < 0.17 && b.abs() < 0.7) || (b.abs() < 0.17 && a.abs() < 0.7)
        }
        "ring" => r2 < 0.64 * 0.64 && r2 > 0.36 * 0.36,
        "diamond" => u.abs() + v.abs() < 0.68,
        "bars" => u.abs() < 0.62 && ((v - 0.3).abs() < 0.13 || (v + 0.3).abs() < 0.13),
        "stick" => u.abs() < 0.16 && v.abs() < 0.68,
        "hexagon" => {
            let (au, av) = (u.abs(), v.abs());
            av < 0.52 && au * 0.866 + av * 0.5 < 0.6 * 0.866 + 0.0
        }
        "crescent" => r2 < 0.62 * 0.62 && (u - 0.28) * (u - 0.28) + v * v > 0.48 * 0.48,
        "tee" => (v > -0.62 && v < -0.34 && u.abs() < 0.62) || (u.abs() < 0.15 && v >= -0.34 && v < 0.64),
        "ell" => (u > -0.5 && u < -0.22 && v.abs() < 0.64) || (v > 0.36 && v < 0.64 && u > -0.5 && u < 0.55),
        "star" => {
            let r = r2.sqrt();
            let theta = v.atan2(u) + std::f32::consts::FRAC_PI_2;
            let k = (theta * 5.0 / (2.0 * std::f32::consts::PI)).rem_euclid(1.0);
            let spike = (k - 0.5).abs() * 2.0;
            r < 0.28 + 0.42 * spike
        }
        "arrow" => in_triangle((u, v), (0.66, 0.0), (0.05, -0.5), (0.05, 0.5)) || (u > -0.62 && u <= 0.06 && v.abs() < 0.16),
        "halfdisk" => r2 < 0.64 * 0.64 && v > -0.05,
        _ => false,
    }
}
