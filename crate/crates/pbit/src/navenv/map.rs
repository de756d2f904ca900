//! Occupancy-grid scenes with per-cell texture attributes.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::NavError;

/// Grid scene. World coordinates are meters; cell (row, col) covers
/// `[col*cell, (col+1)*cell) x [row*cell, (row+1)*cell)` with row = y axis.
#[derive(Debug, Clone)]
pub struct SceneMap {
    pub id: String,
    pub cell_size: f64,
    /// true = occupied.
    pub occ: Array2<bool>,
    pub wall_tex: Array2<u8>,
    pub floor_tex: Array2<u8>,
}

impl SceneMap {
    pub fn rows(&self) -> usize {
        self.occ.nrows()
    }

    pub fn cols(&self) -> usize {
        self.occ.ncols()
    }

    pub fn width_m(&self) -> f64 {
        self.cols() as f64 * self.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.rows() as f64 * self.cell_size
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let c = (x / self.cell_size) as usize;
        let r = (y / self.cell_size) as usize;
        if r >= self.rows() || c >= self.cols() {
            None
        } else {
            Some((r, c))
        }
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            (c as f64 + 0.5) * self.cell_size,
            (r as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_occupied_cell(&self, r: usize, c: usize) -> bool {
        self.occ[[r, c]]
    }

    pub fn is_free_world(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((r, c)) => !self.occ[[r, c]],
            None => false,
        }
    }

    /// Free at (x, y) with a clearance disc of radius `r` (8-point check).
    pub fn is_free_disc(&self, x: f64, y: f64, r: f64) -> bool {
        if !self.is_free_world(x, y) {
            return false;
        }
        let d = std::f64::consts::FRAC_1_SQRT_2 * r;
        for (ox, oy) in [
            (r, 0.0),
            (-r, 0.0),
            (0.0, r),
            (0.0, -r),
            (d, d),
            (d, -d),
            (-d, d),
            (-d, -d),
        ] {
            if !self.is_free_world(x + ox, y + oy) {
                return false;
            }
        }
        true
    }

    /// 4-connected BFS hop counts from a goal cell; `u32::MAX` = unreachable.
    pub fn bfs_field(&self, goal: (usize, usize)) -> Array2<u32> {
        let mut dist = Array2::from_elem(self.occ.raw_dim(), u32::MAX);
        if self.occ[[goal.0, goal.1]] {
            return dist;
        }
        let mut q = VecDeque::new();
        dist[[goal.0, goal.1]] = 0;
        q.push_back(goal);
        while let Some((r, c)) = q.pop_front() {
            let d = dist[[r, c]];
            let push = |rr: usize, cc: usize, dist: &mut Array2<u32>, q: &mut VecDeque<(usize, usize)>| {
                if !self.occ[[rr, cc]] && dist[[rr, cc]] == u32::MAX {
                    dist[[rr, cc]] = d + 1;
                    q.push_back((rr, cc));
                }
            };
            if r > 0 {
                push(r - 1, c, &mut dist, &mut q);
            }
            if r + 1 < self.rows() {
                push(r + 1, c, &mut dist, &mut q);
            }
            if c > 0 {
                push(r, c - 1, &mut dist, &mut q);
            }
            if c + 1 < self.cols() {
                push(r, c + 1, &mut dist, &mut q);
            }
        }
        dist
    }

    /// Shortest traversable path length in meters; infinity if disconnected.
    pub fn geodesic(&self, a: (f64, f64), b: (f64, f64)) -> Result<f64, NavError> {
        let ca = self
            .cell_of(a.0, a.1)
            .filter(|&(r, c)| !self.occ[[r, c]])
            .ok_or(NavError::PoseOutsideMap)?;
        let cb = self
            .cell_of(b.0, b.1)
            .filter(|&(r, c)| !self.occ[[r, c]])
            .ok_or(NavError::PoseOutsideMap)?;
        let field = self.bfs_field(cb);
        let d = field[[ca.0, ca.1]];
        if d == u32::MAX {
            Ok(f64::INFINITY)
        } else {
            Ok(d as f64 * self.cell_size)
        }
    }

    /// Cells of the largest 4-connected free component.
    pub fn largest_component(&self) -> Vec<(usize, usize)> {
        let mut seen = Array2::from_elem(self.occ.raw_dim(), false);
        let mut best: Vec<(usize, usize)> = Vec::new();
        for r0 in 0..self.rows() {
            for c0 in 0..self.cols() {
                if self.occ[[r0, c0]] || seen[[r0, c0]] {
                    continue;
                }
                let mut comp = Vec::new();
                let mut q = VecDeque::new();
                seen[[r0, c0]] = true;
                q.push_back((r0, c0));
                while let Some((r, c)) = q.pop_front() {
                    comp.push((r, c));
                    let push = |rr: usize, cc: usize, seen: &mut Array2<bool>, q: &mut VecDeque<(usize, usize)>| {
                        if !self.occ[[rr, cc]] && !seen[[rr, cc]] {
                            seen[[rr, cc]] = true;
                            q.push_back((rr, cc));
                        }
                    };
                    if r > 0 {
                        push(r - 1, c, &mut seen, &mut q);
                    }
                    if r + 1 < self.rows() {
                        push(r + 1, c, &mut seen, &mut q);
                    }
                    if c > 0 {
                        push(r, c - 1, &mut seen, &mut q);
                    }
                    if c + 1 < self.cols() {
                        push(r, c + 1, &mut seen, &mut q);
                    }
                }
                if comp.len() > best.len() {
                    best = comp;
                }
            }
        }
        best
    }

    pub fn traversable_area(&self) -> f64 {
        let free = self.occ.iter().filter(|&&o| !o).count();
        free as f64 * self.cell_size * self.cell_size
    }

    /// Parse the plain-text scene format: `key = value` header lines, a `---`
    /// separator, then grid rows. `#` and digits are walls (digit = wall
    /// texture id), `.` and lowercase letters are free (letter = floor
    /// texture id, `a` = 1).
    pub fn from_text(text: &str) -> Result<SceneMap, NavError> {
        let mut cell_size = 0.1;
        let mut id = String::from("scene");
        let mut lines = text.lines();
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "---" {
                break;
            }
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NavError::InvalidScene(format!("bad header line: {line}")))?;
            match k.trim() {
                "cell_size" => {
                    cell_size = v
                        .trim()
                        .parse()
                        .map_err(|_| NavError::InvalidScene("bad cell_size".into()))?
                }
                "id" => id = v.trim().to_string(),
                other => {
                    return Err(NavError::InvalidScene(format!("unknown header key {other}")))
                }
            }
        }
        let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(NavError::InvalidScene("empty grid".into()));
        }
        let w = rows[0].chars().count();
        let h = rows.len();
        let mut occ = Array2::from_elem((h, w), false);
        let mut wall_tex = Array2::<u8>::zeros((h, w));
        let mut floor_tex = Array2::<u8>::zeros((h, w));
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != w {
                return Err(NavError::InvalidScene(format!("ragged row {r}")));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => occ[[r, c]] = true,
                    '0'..='9' => {
                        occ[[r, c]] = true;
                        wall_tex[[r, c]] = ch as u8 - b'0';
                    }
                    '.' => {}
                    'a'..='z' => floor_tex[[r, c]] = ch as u8 - b'a' + 1,
                    other => {
                        return Err(NavError::InvalidScene(format!(
                            "bad grid char {other:?} at ({r},{c})"
                        )))
                    }
                }
            }
        }
        let map = SceneMap {
            id,
            cell_size,
            occ,
            wall_tex,
            floor_tex,
        };
        if map.largest_component().is_empty() {
            return Err(NavError::InvalidScene("no traversable space".into()));
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("id = {}\ncell_size = {}\n---\n", self.id, self.cell_size);
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                let ch = if self.occ[[r, c]] {
                    let t = self.wall_tex[[r, c]];
                    if t == 0 {
                        '#'
                    } else {
                        (b'0' + t) as char
                    }
                } else {
                    let t = self.floor_tex[[r, c]];
                    if t == 0 {
                        '.'
                    } else {
                        (b'a' + t - 1) as char
                    }
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

/// Parameters for the built-in maze generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeParams {
    pub maze_cells: usize,
    pub corridor: usize,
    pub wall: usize,
    pub braid: f64,
    pub cell_size: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        MazeParams {
            maze_cells: 5,
            corridor: 5,
            wall: 3,
            braid: 0.25,
            cell_size: 0.1,
        }
    }
}

/// Deterministic DFS maze with some loops. Wall/floor textures vary by
/// position so different parts of a scene look different.
pub fn generate_maze(id: &str, seed: u64, p: &MazeParams) -> SceneMap {
    let n = p.maze_cells;
    let pitch = p.corridor + p.wall;
    let size = n * pitch + p.wall;
    let mut occ = Array2::from_elem((size, size), true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // DFS spanning tree over the n x n cell lattice.
    let mut visited = vec![false; n * n];
    let mut open_h = vec![false; n * n]; // passage to the cell on the right
    let mut open_v = vec![false; n * n]; // passage to the cell below
    let mut stack = vec![0usize];
    visited[0] = true;
    while let Some(&cur) = stack.last() {
        let (cy, cx) = (cur / n, cur % n);
        let mut nbrs = Vec::new();
        if cx > 0 && !visited[cur - 1] {
            nbrs.push((cur - 1, 'l'));
        }
        if cx + 1 < n && !visited[cur + 1] {
            nbrs.push((cur + 1, 'r'));
        }
        if cy > 0 && !visited[cur - n] {
            nbrs.push((cur - n, 'u'));
        }
        if cy + 1 < n && !visited[cur + n] {
            nbrs.push((cur + n, 'd'));
        }
        if nbrs.is_empty() {
            stack.pop();
            continue;
        }
        let (nxt, dir) = nbrs[rng.gen_range(0..nbrs.len())];
        visited[nxt] = true;
        match dir {
            'r' => open_h[cur] = true,
            'l' => open_h[nxt] = true,
            'd' => open_v[cur] = true,
            'u' => open_v[nxt] = true,
            _ => unreachable!(),
        }
        stack.push(nxt);
    }
    // Braid: open a fraction of the remaining walls to create loops.
    for cy in 0..n {
        for cx in 0..n {
            let i = cy * n + cx;
            if cx + 1 < n && !open_h[i] && rng.gen::<f64>() < p.braid {
                open_h[i] = true;
            }
            if cy + 1 < n && !open_v[i] && rng.gen::<f64>() < p.braid {
                open_v[i] = true;
            }
        }
    }

    let carve = |occ: &mut Array2<bool>, r0: usize, c0: usize, h: usize, w: usize| {
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                occ[[r, c]] = false;
            }
        }
    };
    for cy in 0..n {
        for cx in 0..n {
            let r0 = p.wall + cy * pitch;
            let c0 = p.wall + cx * pitch;
            carve(&mut occ, r0, c0, p.corridor, p.corridor);
            let i = cy * n + cx;
            if open_h[i] {
                carve(&mut occ, r0, c0 + p.corridor, p.corridor, p.wall);
            }
            if open_v[i] {
                carve(&mut occ, r0 + p.corridor, c0, p.wall, p.corridor);
            }
        }
    }

    let mut wall_tex = Array2::<u8>::zeros(occ.raw_dim());
    let mut floor_tex = Array2::<u8>::zeros(occ.raw_dim());
    for r in 0..size {
        for c in 0..size {
            if occ[[r, c]] {
                wall_tex[[r, c]] = ((r / p.corridor + 2 * (c / p.corridor)) % 3) as u8;
            } else {
                floor_tex[[r, c]] = ((r / pitch + c / pitch) % 2) as u8;
            }
        }
    }

    SceneMap {
        id: id.to_string(),
        cell_size: p.cell_size,
        occ,
        wall_tex,
        floor_tex,
    }
}

/// The fixed scene sets used by the toy experiments.
pub fn builtin_train_scenes() -> Vec<SceneMap> {
    (0..8)
        .map(|i| generate_maze(&format!("train_{i}"), 1000 + i, &MazeParams::default()))
        .collect()
}

pub fn builtin_eval_scenes() -> Vec<SceneMap> {
    (0..4)
        .map(|i| generate_maze(&format!("eval_{i}"), 9000 + i, &MazeParams::default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = generate_maze("t", 3, &MazeParams::default());
        let text = m.to_text();
        let m2 = SceneMap::from_text(&text).unwrap();
        assert_eq!(m.occ, m2.occ);
        assert_eq!(m.wall_tex, m2.wall_tex);
        assert_eq!(m.floor_tex, m2.floor_tex);
        assert_eq!(m.cell_size, m2.cell_size);
    }

    #[test]
    fn mazes_are_connected() {
        for m in builtin_train_scenes().iter().chain(&builtin_eval_scenes()) {
            let free = m.occ.iter().filter(|&&o| !o).count();
            assert_eq!(m.largest_component().len(), free, "{} not connected", m.id);
            assert!(free > 100);
        }
    }

    #[test]
    fn geodesic_symmetric_and_zero_on_self() {
        let m = generate_maze("t", 5, &MazeParams::default());
        let comp = m.largest_component();
        let a = m.cell_center(comp[0].0, comp[0].1);
        let b = m.cell_center(comp[40].0, comp[40].1);
        let ab = m.geodesic(a, b).unwrap();
        let ba = m.geodesic(b, a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(m.geodesic(a, a).unwrap(), 0.0);
    }

    #[test]
    fn invalid_scene_rejected() {
        assert!(SceneMap::from_text("cell_size = 0.1\n---\n###\n###\n").is_err());
        assert!(SceneMap::from_text("cell_size = 0.1\n---\n#.\n#..\n").is_err());
    }
}
