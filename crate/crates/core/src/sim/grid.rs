use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("size {size} m is not a whole number of {resolution} m cells")]
    NotCellAligned { size: f64, resolution: f64 },
    #[error("occupancy has {got} rows, expected {expected}")]
    RowCount { expected: usize, got: usize },
    #[error("occupancy row {row} has {got} cells, expected {expected}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("occupancy row {row} column {col}: unexpected {ch:?} (use '.' or '#')")]
    BadCell { row: usize, col: usize, ch: char },
}

/// Row-major occupancy grid. Cell `(i, j)` covers
/// `[origin.x + i·res, origin.x + (i+1)·res) × [origin.y + j·res, ...)`,
/// with `j = 0` at the bottom. Everything outside the grid counts as occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    origin: (f64, f64),
    resolution: f64,
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

fn cell_count(size: f64, resolution: f64) -> Result<usize, GridError> {
    let n = size / resolution;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-6 {
        return Err(GridError::NotCellAligned { size, resolution });
    }
    Ok(rounded as usize)
}

impl OccupancyGrid {
    pub fn empty(origin: (f64, f64), size: (f64, f64), resolution: f64) -> Result<Self, GridError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::BadResolution(resolution));
        }
        let width = cell_count(size.0, resolution)?;
        let height = cell_count(size.1, resolution)?;
        Ok(OccupancyGrid {
            origin,
            resolution,
            width,
            height,
            cells: vec![false; width * height],
        })
    }

    /// Parses `.`/`#` rows, first row at the top (largest y).
    pub fn from_rows<S: AsRef<str>>(
        origin: (f64, f64),
        size: (f64, f64),
        resolution: f64,
        rows: &[S],
    ) -> Result<Self, GridError> {
        let mut grid = Self::empty(origin, size, resolution)?;
        if rows.len() != grid.height {
            return Err(GridError::RowCount {
                expected: grid.height,
                got: rows.len(),
            });
        }
        for (row, text) in rows.iter().enumerate() {
            let text = text.as_ref();
            let count = text.chars().count();
            if count != grid.width {
                return Err(GridError::RowWidth {
                    row,
                    expected: grid.width,
                    got: count,
                });
            }
            let j = grid.height - 1 - row;
            for (col, ch) in text.chars().enumerate() {
                let occupied = match ch {
                    '.' => false,
                    '#' => true,
                    _ => return Err(GridError::BadCell { row, col, ch }),
                };
                grid.set(col, j, occupied);
            }
        }
        Ok(grid)
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .rev()
            .map(|j| {
                (0..self.width)
                    .map(|i| if self.cells[j * self.width + i] { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn size(&self) -> (f64, f64) {
        (self.width as f64 * self.resolution, self.height as f64 * self.resolution)
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        assert!(i < self.width && j < self.height, "cell ({i}, {j}) out of range");
        self.cells[j * self.width + i] = occupied;
    }

    /// Signed cell index for a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.resolution).floor() as i64,
            ((y - self.origin.1) / self.resolution).floor() as i64,
        )
    }

    pub fn occupied_cell(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            return true;
        }
        self.cells[j as usize * self.width + i as usize]
    }

    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        if !(x.is_finite() && y.is_finite()) {
            return true;
        }
        let (i, j) = self.cell_of(x, y);
        self.occupied_cell(i, j)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (w, h) = self.size();
        x >= self.origin.0 && y >= self.origin.1 && x < self.origin.0 + w && y < self.origin.1 + h
    }
}
