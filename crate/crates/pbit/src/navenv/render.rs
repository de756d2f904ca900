//! Deterministic first-person raycast renderer over the occupancy grid.
//!
//! Geometry (ray hits, depth) depends only on the map and pose; the theme
//! only affects colors, so source/target renders of the same pose share a
//! bit-identical depth buffer.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::map::SceneMap;
use super::theme::{Domain, DomainStyleTheme};
use super::{NavError, Pose};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderConfig {
    pub resolution: usize,
    pub fov_deg: f64,
    pub wall_height: f64,
    pub camera_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 64,
            fov_deg: 90.0,
            wall_height: 1.0,
            camera_height: 0.5,
        }
    }
}

/// A rendered observation tagged with its visual domain. Pixel values are
/// (3, H, W) in [-1, 1].
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub data: Array3<f64>,
    pub domain: Domain,
}

struct Hit {
    perp_dist: f64,
    tex: u8,
    side: u8,
    /// Position along the wall in meters, for the stripe pattern.
    wall_u: f64,
}

fn cast_ray(map: &SceneMap, px: f64, py: f64, rdx: f64, rdy: f64) -> Hit {
    // Grid DDA in cell units.
    let cs = map.cell_size;
    let (gx, gy) = (px / cs, py / cs);
    let mut mx = gx.floor() as isize;
    let mut my = gy.floor() as isize;
    let ddx = if rdx == 0.0 { f64::INFINITY } else { (1.0 / rdx).abs() };
    let ddy = if rdy == 0.0 { f64::INFINITY } else { (1.0 / rdy).abs() };
    let (step_x, mut side_x) = if rdx < 0.0 {
        (-1isize, (gx - mx as f64) * ddx)
    } else {
        (1isize, (mx as f64 + 1.0 - gx) * ddx)
    };
    let (step_y, mut side_y) = if rdy < 0.0 {
        (-1isize, (gy - my as f64) * ddy)
    } else {
        (1isize, (my as f64 + 1.0 - gy) * ddy)
    };
    let mut side;
    loop {
        if side_x < side_y {
            side_x += ddx;
            mx += step_x;
            side = 0u8;
        } else {
            side_y += ddy;
            my += step_y;
            side = 1u8;
        }
        let outside =
            mx < 0 || my < 0 || mx as usize >= map.cols() || my as usize >= map.rows();
        let hit_wall = !outside && map.is_occupied_cell(my as usize, mx as usize);
        if outside || hit_wall {
            let perp = if side == 0 {
                (mx as f64 - gx + (1 - step_x) as f64 / 2.0) / rdx
            } else {
                (my as f64 - gy + (1 - step_y) as f64 / 2.0) / rdy
            };
            let perp = perp.max(1e-6) * cs;
            // Hit point for texture coordinate.
            let (hx, hy) = (px + perp / cs * rdx * cs, py + perp / cs * rdy * cs);
            let wall_u = if side == 0 { hy } else { hx };
            let tex = if outside {
                0
            } else {
                map.wall_tex[[my as usize, mx as usize]]
            };
            return Hit {
                perp_dist: perp,
                tex,
                side,
                wall_u,
            };
        }
    }
}

fn shade(dist: f64) -> f64 {
    1.0 / (1.0 + 0.35 * dist)
}

/// Deterministic per-pixel noise in [-1, 1], a function of pixel and pose.
fn pixel_noise(r: usize, c: usize, ch: usize, pose_bits: u64) -> f64 {
    let mut h = pose_bits ^ 0x9e37_79b9_7f4a_7c15;
    for v in [r as u64, c as u64, ch as u64] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    h ^= h >> 33;
    (h as f64 / u64::MAX as f64) * 2.0 - 1.0
}

fn pose_bits(p: &Pose) -> u64 {
    let q = |v: f64| ((v * 1e6).round() as i64) as u64;
    q(p.x)
        .wrapping_mul(0x100000001b3)
        .wrapping_add(q(p.y))
        .wrapping_mul(0x100000001b3)
        .wrapping_add(q(p.theta))
}

/// Render an observation plus the per-pixel depth buffer (meters).
pub fn render(
    map: &SceneMap,
    pose: &Pose,
    theme: &DomainStyleTheme,
    cfg: &RenderConfig,
) -> Result<(ImageSample, Array2<f64>), NavError> {
    if !map.is_free_world(pose.x, pose.y) {
        return Err(NavError::PoseOutsideMap);
    }
    let n = cfg.resolution;
    let (w, h) = (n, n);
    let mut img = Array3::<f64>::zeros((3, h, w));
    let mut depth = Array2::<f64>::zeros((h, w));

    let th = pose.theta.to_radians();
    let (dx, dy) = (th.cos(), th.sin());
    let half_tan = (cfg.fov_deg.to_radians() / 2.0).tan();
    // Camera plane points to the agent's left so column 0 is leftmost.
    let (plx, ply) = (-dy * half_tan, dx * half_tan);
    let focal_px = (w as f64 / 2.0) / half_tan;
    let bits = pose_bits(pose);

    for c in 0..w {
        let cam_x = 1.0 - 2.0 * (c as f64 + 0.5) / w as f64;
        let (rdx, rdy) = (dx + plx * cam_x, dy + ply * cam_x);
        let ray_len = (rdx * rdx + rdy * rdy).sqrt();
        let hit = cast_ray(map, pose.x, pose.y, rdx, rdy);

        let half_height = (cfg.wall_height / 2.0) / hit.perp_dist * focal_px;
        let center = h as f64 / 2.0;
        let top = (center - half_height).ceil().max(0.0) as usize;
        let bot = ((center + half_height).floor() as usize).min(h);

        let stripe = if ((hit.wall_u / 0.25).floor() as i64).rem_euclid(2) == 0 {
            1.0
        } else {
            0.85
        };
        let side_f = if hit.side == 0 { 1.0 } else { 0.82 };
        let wall_rgb = theme.wall_color(hit.tex);
        let wall_shade = theme.lighting * shade(hit.perp_dist) * side_f * stripe;
        let wall_depth = hit.perp_dist * ray_len;
        for r in top..bot {
            depth[[r, c]] = wall_depth;
            for ch in 0..3 {
                img[[ch, r, c]] = wall_rgb[ch] * wall_shade;
            }
        }
        // Ceiling above, floor below; camera sits mid-wall so both project
        // with the same row-distance relation.
        for r in 0..top {
            let p = center - (r as f64 + 0.5);
            let row_dist = cfg.camera_height * focal_px / p;
            depth[[r, c]] = row_dist * ray_len;
            let s = theme.lighting * shade(row_dist * ray_len);
            for ch in 0..3 {
                img[[ch, r, c]] = theme.ceiling[ch] * s;
            }
        }
        for r in bot..h {
            let p = (r as f64 + 0.5) - center;
            let row_dist = cfg.camera_height * focal_px / p;
            depth[[r, c]] = row_dist * ray_len;
            let fx = pose.x + row_dist * rdx;
            let fy = pose.y + row_dist * rdy;
            let tex = map
                .cell_of(fx, fy)
                .map(|(rr, cc)| map.floor_tex[[rr, cc]])
                .unwrap_or(0);
            let rgb = theme.floor_color(tex);
            let s = theme.lighting * shade(row_dist * ray_len);
            for ch in 0..3 {
                img[[ch, r, c]] = rgb[ch] * s;
            }
        }
    }

    // Map [0,1] colors to [-1,1] and add theme noise.
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let mut v = img[[ch, r, c]].clamp(0.0, 1.0) * 2.0 - 1.0;
                if theme.noise_amp > 0.0 {
                    v += theme.noise_amp * pixel_noise(r, c, ch, bits);
                }
                img[[ch, r, c]] = v.clamp(-1.0, 1.0);
            }
        }
    }

    Ok((
        ImageSample {
            data: img,
            domain: theme.domain,
        },
        depth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navenv::map::{generate_maze, MazeParams};

    fn corridor_map() -> SceneMap {
        // 2 m straight east-west corridor, walls all around.
        let text = "id = corridor\ncell_size = 0.1\n---\n\
                    ######################\n\
                    ######################\n\
                    #....................#\n\
                    #....................#\n\
                    #....................#\n\
                    ######################\n\
                    ######################\n";
        SceneMap::from_text(text).unwrap()
    }

    #[test]
    fn render_is_deterministic() {
        let map = generate_maze("t", 2, &MazeParams::default());
        let comp = map.largest_component();
        let (x, y) = map.cell_center(comp[10].0, comp[10].1);
        let pose = Pose::new(x, y, 123.0);
        let cfg = RenderConfig::default();
        let theme = DomainStyleTheme::target_default();
        let (a, _) = render(&map, &pose, &theme, &cfg).unwrap();
        let (b, _) = render(&map, &pose, &theme, &cfg).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn depth_identical_across_themes() {
        let map = generate_maze("t", 4, &MazeParams::default());
        let comp = map.largest_component();
        let (x, y) = map.cell_center(comp[33].0, comp[33].1);
        let pose = Pose::new(x, y, 77.0);
        let cfg = RenderConfig::default();
        let (img_s, d_s) = render(&map, &pose, &DomainStyleTheme::source_default(), &cfg).unwrap();
        let (img_t, d_t) = render(&map, &pose, &DomainStyleTheme::target_default(), &cfg).unwrap();
        assert_eq!(d_s, d_t, "depth must be theme independent");
        assert_ne!(img_s.data, img_t.data, "colors must differ across themes");
    }

    #[test]
    fn wall_at_half_meter_fills_image_height() {
        // Pinhole: half wall height (0.5 m) at 0.5 m spans focal_px * 1 = H/2
        // pixels, so the wall covers every row in every column.
        let map = corridor_map();
        // East wall interior face is at x = 2.1; stand 0.5 m away facing east.
        let pose = Pose::new(1.6, 0.35, 0.0);
        let cfg = RenderConfig::default();
        let theme = DomainStyleTheme::source_default();
        let (_, depth) = render(&map, &pose, &theme, &cfg).unwrap();
        let n = cfg.resolution;
        for c in 0..n {
            let col = depth.column(c);
            let first = col[0];
            assert!(
                col.iter().all(|&d| (d - first).abs() < 1e-9),
                "column {c} not fully wall"
            );
        }
        // Perpendicular distance encoded in the center column.
        let center = depth[[n / 2, n / 2]];
        assert!((center - 0.5).abs() < 0.02, "center depth {center}");
    }

    #[test]
    fn wall_at_one_meter_is_half_height() {
        let map = corridor_map();
        let pose = Pose::new(1.1, 0.35, 0.0);
        let cfg = RenderConfig::default();
        let theme = DomainStyleTheme::source_default();
        let (_, depth) = render(&map, &pose, &theme, &cfg).unwrap();
        let n = cfg.resolution;
        let c = n / 2;
        // Rows in [n/4, 3n/4) are wall (constant depth), outside are not.
        let wall_depth = depth[[n / 2, c]];
        assert!((depth[[n / 4, c]] - wall_depth).abs() < 1e-9);
        assert!((depth[[3 * n / 4 - 1, c]] - wall_depth).abs() < 1e-9);
        assert_ne!(depth[[n / 4 - 1, c]], wall_depth);
        assert_ne!(depth[[0, c]], wall_depth);
        assert_ne!(depth[[n - 1, c]], wall_depth);
    }

    #[test]
    fn render_outside_map_fails() {
        let map = corridor_map();
        let pose = Pose::new(-1.0, 0.3, 0.0);
        let cfg = RenderConfig::default();
        assert!(render(&map, &pose, &DomainStyleTheme::source_default(), &cfg).is_err());
    }
}
