//! Top-down grid world shared by the navigation-style analogs.
//!
//! Agents have a position and a heading and act with the 8-action set:
//! move forward/backward, strafe left/right, turn left/right, and turn
//! left/right while moving forward. Observations are egocentric windows
//! rotated so the heading points up, with out-of-bounds cells rendered as
//! wall.

use std::collections::VecDeque;

pub const ACT_FWD: usize = 0;
pub const ACT_BACK: usize = 1;
pub const ACT_STRAFE_L: usize = 2;
pub const ACT_STRAFE_R: usize = 3;
pub const ACT_TURN_L: usize = 4;
pub const ACT_TURN_R: usize = 5;
pub const ACT_TURN_L_FWD: usize = 6;
pub const ACT_TURN_R_FWD: usize = 7;
pub const GRID_ACTIONS: usize = 8;

/// Egocentric window radius: agents see a (2r+1) x (2r+1) neighborhood.
pub const WINDOW_RADIUS: usize = 2;
pub const WINDOW_SIDE: usize = 2 * WINDOW_RADIUS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    pub height: usize,
    pub width: usize,
    walls: Vec<bool>,
    pub agent: (usize, usize),
    pub heading: Heading,
}

impl GridWorld {
    pub fn open(height: usize, width: usize) -> Self {
        GridWorld {
            height,
            width,
            walls: vec![false; height * width],
            agent: (0, 0),
            heading: Heading::North,
        }
    }

    /// Everything walled; carve rooms out of it.
    pub fn solid(height: usize, width: usize) -> Self {
        GridWorld {
            height,
            width,
            walls: vec![true; height * width],
            agent: (0, 0),
            heading: Heading::North,
        }
    }

    fn idx(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    pub fn in_bounds(&self, y: i32, x: i32) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width
    }

    pub fn is_wall(&self, y: usize, x: usize) -> bool {
        self.walls[self.idx(y, x)]
    }

    pub fn set_wall(&mut self, y: usize, x: usize, wall: bool) {
        let i = self.idx(y, x);
        self.walls[i] = wall;
    }

    pub fn blocked(&self, y: i32, x: i32) -> bool {
        !self.in_bounds(y, x) || self.is_wall(y as usize, x as usize)
    }

    /// Apply one of the 8 actions; blocked moves keep the position but turns
    /// always apply. Turn-and-move actions rotate first, then step.
    pub fn apply_action(&mut self, action: usize) {
        let (turn, move_dir): (Option<Heading>, Option<Heading>) = match action {
            ACT_FWD => (None, Some(self.heading)),
            ACT_BACK => (None, Some(self.heading.left().left())),
            ACT_STRAFE_L => (None, Some(self.heading.left())),
            ACT_STRAFE_R => (None, Some(self.heading.right())),
            ACT_TURN_L => (Some(self.heading.left()), None),
            ACT_TURN_R => (Some(self.heading.right()), None),
            ACT_TURN_L_FWD => {
                let h = self.heading.left();
                (Some(h), Some(h))
            }
            ACT_TURN_R_FWD => {
                let h = self.heading.right();
                (Some(h), Some(h))
            }
            _ => unreachable!("action validated by the env"),
        };
        if let Some(h) = turn {
            self.heading = h;
        }
        if let Some(dir) = move_dir {
            let (dy, dx) = dir.delta();
            let ny = self.agent.0 as i32 + dy;
            let nx = self.agent.1 as i32 + dx;
            if !self.blocked(ny, nx) {
                self.agent = (ny as usize, nx as usize);
            }
        }
    }

    /// Rotate a window offset (row, col relative to center, up = ahead)
    /// into a world offset for the current heading.
    fn rotate_offset(&self, oy: i32, ox: i32) -> (i32, i32) {
        match self.heading {
            Heading::North => (oy, ox),
            Heading::East => (ox, -oy),
            Heading::South => (-oy, -ox),
            Heading::West => (-ox, oy),
        }
    }

    /// Egocentric window: `channels` planes per cell, channel 0 is wall.
    /// `fill` paints channels 1.. for in-bounds floor cells.
    pub fn render_window(
        &self,
        channels: usize,
        mut fill: impl FnMut(usize, usize, &mut [f64]),
    ) -> Vec<f64> {
        let side = WINDOW_SIDE;
        let r = WINDOW_RADIUS as i32;
        let mut out = vec![0.0; side * side * channels];
        for wy in 0..side {
            for wx in 0..side {
                let (dy, dx) = self.rotate_offset(wy as i32 - r, wx as i32 - r);
                let y = self.agent.0 as i32 + dy;
                let x = self.agent.1 as i32 + dx;
                let cell = &mut out[(wy * side + wx) * channels..(wy * side + wx + 1) * channels];
                if self.blocked(y, x) {
                    cell[0] = 1.0;
                } else {
                    fill(y as usize, x as usize, cell);
                }
            }
        }
        out
    }

    /// Standard agent-state features appended after the window planes:
    /// normalized position and heading one-hot.
    pub fn agent_features(&self) -> Vec<f64> {
        let mut f = vec![
            self.agent.0 as f64 / self.height.max(1) as f64,
            self.agent.1 as f64 / self.width.max(1) as f64,
            0.0,
            0.0,
            0.0,
            0.0,
        ];
        f[2 + self.heading.index()] = 1.0;
        f
    }

    /// Shortest action sequence from (pos, heading) to any cell in `goals`,
    /// by breadth-first search over (position, heading) states with the 8
    /// actions as unit-cost edges. Returns None when unreachable.
    pub fn shortest_action_path(
        &self,
        from: (usize, usize),
        heading: Heading,
        goals: &[(usize, usize)],
    ) -> Option<Vec<usize>> {
        let nstates = self.height * self.width * 4;
        let state = |pos: (usize, usize), h: Heading| (pos.0 * self.width + pos.1) * 4 + h.index();
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nstates]; // (prev state, action)
        let mut seen = vec![false; nstates];
        let mut queue = VecDeque::new();
        let start = state(from, heading);
        seen[start] = true;
        queue.push_back((from, heading));
        let is_goal = |pos: (usize, usize)| goals.contains(&pos);
        if is_goal(from) {
            return Some(Vec::new());
        }
        let mut probe = self.clone();
        while let Some((pos, h)) = queue.pop_front() {
            for action in 0..GRID_ACTIONS {
                probe.agent = pos;
                probe.heading = h;
                probe.apply_action(action);
                let ns = state(probe.agent, probe.heading);
                if seen[ns] {
                    continue;
                }
                seen[ns] = true;
                prev[ns] = Some((state(pos, h), action));
                if is_goal(probe.agent) {
                    // Reconstruct.
                    let mut path = Vec::new();
                    let mut cur = ns;
                    while let Some((p, a)) = prev[cur] {
                        path.push(a);
                        cur = p;
                        if cur == start {
                            break;
                        }
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back((probe.agent, probe.heading));
            }
        }
        None
    }
}

/// Perfect maze over an odd-sized grid via recursive backtracking; cells at
/// odd coordinates are rooms, walls between them are knocked out as the
/// carver moves.
pub fn carve_perfect_maze(size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> GridWorld {
    use rand::seq::IndexedRandom;
    assert!(size >= 5 && size % 2 == 1, "maze size must be odd and >= 5");
    let mut world = GridWorld::solid(size, size);
    let cell = |i: usize| 2 * i + 1;
    let cells = (size - 1) / 2;
    let mut visited = vec![false; cells * cells];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    world.set_wall(cell(0), cell(0), false);
    while let Some(&(cy, cx)) = stack.last() {
        let mut neighbors = Vec::new();
        let candidates = [
            (cy.wrapping_sub(1), cx),
            (cy + 1, cx),
            (cy, cx.wrapping_sub(1)),
            (cy, cx + 1),
        ];
        for &(ny, nx) in &candidates {
            if ny < cells && nx < cells && !visited[ny * cells + nx] {
                neighbors.push((ny, nx));
            }
        }
        match neighbors.choose(rng) {
            Some(&(ny, nx)) => {
                visited[ny * cells + nx] = true;
                world.set_wall(cell(ny), cell(nx), false);
                // Knock out the wall between.
                let wy = (cell(cy) + cell(ny)) / 2;
                let wx = (cell(cx) + cell(nx)) / 2;
                world.set_wall(wy, wx, false);
                stack.push((ny, nx));
            }
            None => {
                stack.pop();
            }
        }
    }
    world
}
