use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupancy code of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Occupancy {
    Free = 0,
    Occupied = 1,
    OutOfBounds = 2,
}

impl Occupancy {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn letter(self) -> char {
        match self {
            Occupancy::Free => 'F',
            Occupancy::Occupied => 'O',
            Occupancy::OutOfBounds => 'X',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'F' => Some(Occupancy::Free),
            'O' => Some(Occupancy::Occupied),
            'X' => Some(Occupancy::OutOfBounds),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneStyle {
    /// A single empty room.
    Open,
    /// A room with isolated pillars on even/even cells.
    Pillars,
    /// Recursive room partition with one doorway per wall.
    Rooms,
}

/// Occupancy and goal-object grid. Cell `(col,row)` has index
/// `row·width + col` and spans `[col·s,(col+1)·s) × [row·s,(row+1)·s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrid {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub occupancy: Vec<Occupancy>,
    pub objects: Vec<Option<u8>>,
}

impl SceneGrid {
    /// Empty room: free interior ringed by out-of-bounds cells.
    pub fn open(width: usize, height: usize, cell_size: f64) -> Self {
        let mut occupancy = vec![Occupancy::Free; width * height];
        for row in 0..height {
            for col in 0..width {
                if row == 0 || col == 0 || row + 1 == height || col + 1 == width {
                    occupancy[row * width + col] = Occupancy::OutOfBounds;
                }
            }
        }
        SceneGrid {
            id: String::new(),
            width,
            height,
            cell_size,
            occupancy,
            objects: vec![None; width * height],
        }
    }

    /// Builds a grid from text rows, top row first (highest `row`).
    /// `.` free, `#` occupied, `X` out of bounds, digits place objects on free cells.
    pub fn from_rows(rows: &[&str], cell_size: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if width == 0 || rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::Parameter("scene rows must be non-empty and equally long".into()));
        }
        let mut g = SceneGrid::open(width, height, cell_size);
        for (i, line) in rows.iter().enumerate() {
            let row = height - 1 - i;
            for (col, ch) in line.chars().enumerate() {
                let idx = row * width + col;
                let (occ, obj) = match ch {
                    '.' => (Occupancy::Free, None),
                    '#' => (Occupancy::Occupied, None),
                    'X' => (Occupancy::OutOfBounds, None),
                    d if d.is_ascii_digit() => (Occupancy::Free, Some(d as u8 - b'0')),
                    other => return Err(Error::Parameter(format!("unknown scene character `{other}`"))),
                };
                g.occupancy[idx] = occ;
                g.objects[idx] = obj;
            }
        }
        Ok(g)
    }

    /// A one-cell-wide corridor of `len` free cells running west to east.
    pub fn corridor(len: usize, cell_size: f64) -> Self {
        let mut g = SceneGrid::open(len + 2, 3, cell_size);
        g.id = format!("corridor_{len}");
        g
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Occupancy at signed coordinates; anything off the grid is out of bounds.
    pub fn occ_at(&self, col: i64, row: i64) -> Occupancy {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            Occupancy::OutOfBounds
        } else {
            self.occupancy[row as usize * self.width + col as usize]
        }
    }

    pub fn object_at(&self, col: i64, row: i64) -> Option<u8> {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            None
        } else {
            self.objects[row as usize * self.width + col as usize]
        }
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.occupancy.get(idx) == Some(&Occupancy::Free)
    }

    pub fn free_cells(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_free(i)).collect()
    }

    /// Grid cell containing a world point (may be off the grid).
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64)
    }

    /// Free cell containing the point, if any.
    pub fn free_cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let (c, r) = self.cell_of(x, y);
        (self.occ_at(c, r) == Occupancy::Free).then(|| self.index(c as usize, r as usize))
    }

    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (c, r) = self.coords(idx);
        ((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size)
    }

    /// Number of 4-connected components of the free region.
    pub fn free_components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for s in 0..self.len() {
            if seen[s] || !self.is_free(s) {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                let (c, r) = self.coords(i);
                for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    if self.occ_at(nc, nr) == Occupancy::Free {
                        let j = self.index(nc as usize, nr as usize);
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    pub fn border_sealed(&self) -> bool {
        (0..self.len()).all(|i| {
            let (c, r) = self.coords(i);
            let edge = c == 0 || r == 0 || c + 1 == self.width || r + 1 == self.height;
            !edge || !self.is_free(i)
        })
    }

    /// Copy of the grid with the given `(cell, category)` objects placed.
    pub fn with_objects(&self, objects: &[(usize, u8)]) -> Result<Self> {
        let mut g = self.clone();
        g.objects.iter_mut().for_each(|o| *o = None);
        for &(cell, cat) in objects {
            if !self.is_free(cell) {
                return Err(Error::Parameter(format!("object on non-free cell {cell}")));
            }
            g.objects[cell] = Some(cat);
        }
        Ok(g)
    }
}

/// Generates a sealed scene whose free region is 4-connected.
pub fn generate_scene(seed: u64, width: usize, height: usize, style: SceneStyle, cell_size: f64) -> Result<SceneGrid> {
    if width < 8 || height < 8 {
        return Err(Error::Parameter(format!("scene must be at least 8x8, got {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = SceneGrid::open(width, height, cell_size);
    match style {
        SceneStyle::Open => {}
        SceneStyle::Pillars => {
            // even/even cells never separate the odd lattice that links everything
            for row in (2..height - 2).step_by(2) {
                for col in (2..width - 2).step_by(2) {
                    if rng.random_bool(0.15) {
                        let i = g.index(col, row);
                        g.occupancy[i] = Occupancy::Occupied;
                    }
                }
            }
        }
        SceneStyle::Rooms => divide(&mut g, &mut rng, 1, width - 2, 1, height - 2),
    }
    Ok(g)
}

const MIN_ROOM: usize = 5;

/// Recursive division on the inclusive box `[c0,c1]×[r0,r1]`. Walls go on even
/// coordinates and doorways on odd ones, so later walls never block a door.
fn divide(g: &mut SceneGrid, rng: &mut ChaCha8Rng, c0: usize, c1: usize, r0: usize, r1: usize) {
    let w = c1 + 1 - c0;
    let h = r1 + 1 - r0;
    let evens = |lo: usize, hi: usize| -> Vec<usize> {
        // wall positions leaving at least MIN_ROOM/2 cells on each side
        (lo + 2..hi.saturating_sub(1)).filter(|v| v % 2 == 0).collect()
    };
    let odds = |lo: usize, hi: usize| -> Vec<usize> { (lo..=hi).filter(|v| v % 2 == 1).collect() };
    let vertical = if w >= 2 * MIN_ROOM && h >= 2 * MIN_ROOM { rng.random_bool(0.5) } else { w >= 2 * MIN_ROOM };
    if vertical {
        let walls = evens(c0, c1);
        let doors = odds(r0, r1);
        if walls.is_empty() || doors.is_empty() {
            return;
        }
        let x = walls[rng.random_range(0..walls.len())];
        let door = doors[rng.random_range(0..doors.len())];
        for r in r0..=r1 {
            if r != door {
                let i = g.index(x, r);
                g.occupancy[i] = Occupancy::Occupied;
            }
        }
        divide(g, rng, c0, x - 1, r0, r1);
        divide(g, rng, x + 1, c1, r0, r1);
    } else if h >= 2 * MIN_ROOM {
        let walls = evens(r0, r1);
        let doors = odds(c0, c1);
        if walls.is_empty() || doors.is_empty() {
            return;
        }
        let y = walls[rng.random_range(0..walls.len())];
        let door = doors[rng.random_range(0..doors.len())];
        for c in c0..=c1 {
            if c != door {
                let i = g.index(c, y);
                g.occupancy[i] = Occupancy::Occupied;
            }
        }
        divide(g, rng, c0, c1, r0, y - 1);
        divide(g, rng, c0, c1, y + 1, r1);
    }
}
