//! 2D metric occupancy grid built from ultrasound range readings: a
//! single-ray log-odds beam model with clamping, plus PGM export with a
//! sidecar text file carrying resolution and origin.

use std::path::Path;

use crate::geometry::Pose2D;
use crate::image::{self, GrayImage, ImageError};

/// Log-odds update constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamModel {
    pub l_occupied: f64,
    pub l_free: f64,
    pub l_clamp: f64,
    pub decision_threshold: f64,
}

impl Default for BeamModel {
    fn default() -> Self {
        Self { l_occupied: 0.9, l_free: -0.4, l_clamp: 4.0, decision_threshold: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Occupied,
    Free,
    Unknown,
}

/// One ultrasound measurement taken at `pose`. `range` is `None` when
/// the sensor saw nothing inside its maximum range.
#[derive(Debug, Clone, Copy)]
pub struct UltrasoundReading {
    pub sensor_index: usize,
    pub range: Option<f64>,
    pub pose: Pose2D,
}

/// Beam directions and reach of the sensor array, relative to the robot
/// heading.
#[derive(Debug, Clone)]
pub struct SensorGeometry {
    pub mount_angles: Vec<f64>,
    pub max_range: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            mount_angles: vec![-20f64.to_radians(), 0.0, 20f64.to_radians()],
            max_range: 3.0,
        }
    }
}

/// Log-odds occupancy grid. Cell (0,0) has its lower corner at
/// `origin`; world point (x, y) falls in cell (floor((x-ox)/res),
/// floor((y-oy)/res)).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: (f64, f64),
    width: usize,
    height: usize,
    cells: Vec<f64>,
    model: BeamModel,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Self {
        Self::with_model(width, height, resolution, origin, BeamModel::default())
    }

    pub fn with_model(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        model: BeamModel,
    ) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self { resolution, origin, width, height, cells: vec![0.0; width * height], model }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn cell_index(&self, x: f64, y: f64) -> Option<usize> {
        // points exactly on a cell boundary belong to the upper cell;
        // the epsilon keeps float division from dropping them down
        let cx = ((x - self.origin.0) / self.resolution + 1e-9).floor();
        let cy = ((y - self.origin.1) / self.resolution + 1e-9).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some(cy as usize * self.width + cx as usize)
    }

    pub fn log_odds_at(&self, x: f64, y: f64) -> Option<f64> {
        self.cell_index(x, y).map(|i| self.cells[i])
    }

    fn bump(&mut self, idx: usize, delta: f64) {
        let c = self.model.l_clamp;
        self.cells[idx] = (self.cells[idx] + delta).clamp(-c, c);
    }

    /// Integrate one reading: cells along the central beam ray up to
    /// `range - resolution` are decremented as free, the cell at the
    /// measured range incremented as occupied. Max-range readings only
    /// decrement. Rays leaving the grid are clipped, never an error.
    pub fn integrate_reading(&mut self, r: &UltrasoundReading, geometry: &SensorGeometry) {
        let angle = r.pose.theta + geometry.mount_angles.get(r.sensor_index).copied().unwrap_or(0.0);
        let (s, c) = angle.sin_cos();
        let free_limit = match r.range {
            Some(range) => range - self.resolution,
            None => geometry.max_range - self.resolution,
        };
        // march the ray in resolution steps, deduplicating consecutive cells
        let mut last: Option<usize> = None;
        let mut t = self.resolution;
        while t <= free_limit + 1e-12 {
            let idx = self.cell_index(r.pose.x + t * c, r.pose.y + t * s);
            if let Some(i) = idx {
                if last != Some(i) {
                    self.bump(i, self.model.l_free);
                    last = Some(i);
                }
            }
            t += self.resolution;
        }
        if let Some(range) = r.range {
            if let Some(i) = self.cell_index(r.pose.x + range * c, r.pose.y + range * s) {
                self.bump(i, self.model.l_occupied);
            }
        }
    }

    /// Thresholded cell state; queries outside the grid are Unknown.
    pub fn query_cell(&self, x: f64, y: f64) -> CellState {
        match self.log_odds_at(x, y) {
            None => CellState::Unknown,
            Some(l) if l > self.model.decision_threshold => CellState::Occupied,
            Some(l) if l < -self.model.decision_threshold => CellState::Free,
            Some(_) => CellState::Unknown,
        }
    }

    /// Iterate occupied cell centers in world coordinates.
    pub fn occupied_cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for cy in 0..self.height {
            for cx in 0..self.width {
                if self.cells[cy * self.width + cx] > self.model.decision_threshold {
                    out.push((
                        self.origin.0 + (cx as f64 + 0.5) * self.resolution,
                        self.origin.1 + (cy as f64 + 0.5) * self.resolution,
                    ));
                }
            }
        }
        out
    }

    /// Render as PGM: Free=255, Unknown=128, Occupied=0. Row 0 of the
    /// image is the top of the map (largest y).
    pub fn to_gray(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for cy in 0..self.height {
            for cx in 0..self.width {
                let v = match self.cells[cy * self.width + cx] {
                    l if l > self.model.decision_threshold => 0u8,
                    l if l < -self.model.decision_threshold => 255,
                    _ => 128,
                };
                img.set(cx as u32, (self.height - 1 - cy) as u32, v);
            }
        }
        img
    }

    /// Write the map PGM plus `<stem>.meta.txt` with resolution and
    /// origin.
    pub fn save(&self, pgm_path: &Path) -> Result<(), ImageError> {
        image::write_pgm(pgm_path, &self.to_gray())?;
        let meta = format!(
            "resolution_m = {}\norigin_x = {}\norigin_y = {}\nwidth = {}\nheight = {}\n",
            self.resolution, self.origin.0, self.origin.1, self.width, self.height
        );
        let meta_path = pgm_path.with_extension("meta.txt");
        image::atomic_write(&meta_path, meta.as_bytes())?;
        Ok(())
    }
}
