//! Positions, the discretization grid, and the scenario state that every
//! other module reads.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};

/// A point in the local Cartesian frame, in meters. Ground users have `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance(&self, other: &Position3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl CellIndex {
    pub const fn new(ix: usize, iy: usize, iz: usize) -> Self {
        Self { ix, iy, iz }
    }
}

/// A cell of the ground-plane grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell2 {
    pub ix: usize,
    pub iy: usize,
}

/// Service area: `x ∈ [0, x_max]`, `y ∈ [0, y_max]`, UAV altitude in `[z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_max: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            x_max: 1000.0,
            y_max: 1000.0,
            z_min: 50.0,
            z_max: 300.0,
        }
    }
}

impl Bounds {
    pub fn contains_ground(&self, x: f64, y: f64) -> bool {
        (0.0..=self.x_max).contains(&x) && (0.0..=self.y_max).contains(&y)
    }

    pub fn contains_air(&self, p: &Position3) -> bool {
        self.contains_ground(p.x, p.y) && (self.z_min..=self.z_max).contains(&p.z)
    }

    /// Clamps a ground point into the area.
    pub fn clamp_ground(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(0.0, self.x_max), y.clamp(0.0, self.y_max))
    }
}

/// Uniform cubic grid over the UAV flight volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub bounds: Bounds,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Cells needed to cover `extent`; ratios within rounding of an integer
/// are not padded with an extra sliver cell.
fn cells(extent: f64, cell: f64) -> usize {
    let r = extent / cell;
    let n = if (r - r.round()).abs() <= 1e-9 * r.max(1.0) { r.round() } else { r.ceil() };
    (n as usize).max(1)
}

impl Grid {
    pub fn new(bounds: Bounds, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Domain(format!("cell size must be positive, got {cell_size}")));
        }
        if !(bounds.x_max > 0.0 && bounds.y_max > 0.0 && bounds.z_max >= bounds.z_min && bounds.z_min >= 0.0) {
            return Err(Error::Domain(format!("degenerate bounds {bounds:?}")));
        }
        Ok(Self {
            bounds,
            cell_size,
            nx: cells(bounds.x_max, cell_size),
            ny: cells(bounds.y_max, cell_size),
            nz: cells(bounds.z_max - bounds.z_min, cell_size),
        })
    }

    pub fn is_valid(&self, c: CellIndex) -> bool {
        c.ix < self.nx && c.iy < self.ny && c.iz < self.nz
    }

    fn axis(&self, offset: f64, n: usize) -> usize {
        ((offset / self.cell_size).floor() as usize).min(n - 1)
    }

    pub fn snap(&self, p: &Position3) -> Result<CellIndex> {
        if !p.is_finite() || !self.bounds.contains_air(p) {
            return Err(Error::Domain(format!("position {p:?} outside flight volume")));
        }
        Ok(CellIndex {
            ix: self.axis(p.x, self.nx),
            iy: self.axis(p.y, self.ny),
            iz: self.axis(p.z - self.bounds.z_min, self.nz),
        })
    }

    /// Ground-plane cell of `(x, y)`; points outside the area are clamped in.
    pub fn snap_2d(&self, x: f64, y: f64) -> Cell2 {
        let (x, y) = self.bounds.clamp_ground(x, y);
        Cell2 {
            ix: self.axis(x, self.nx),
            iy: self.axis(y, self.ny),
        }
    }

    pub fn center(&self, c: CellIndex) -> Result<Position3> {
        if !self.is_valid(c) {
            return Err(Error::Domain(format!(
                "cell {c:?} outside {}x{}x{} grid",
                self.nx, self.ny, self.nz
            )));
        }
        let h = self.cell_size;
        Ok(Position3 {
            x: (c.ix as f64 + 0.5) * h,
            y: (c.iy as f64 + 0.5) * h,
            z: self.bounds.z_min + (c.iz as f64 + 0.5) * h,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All cells in `(ix, iy, iz)` lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.nx).flat_map(move |ix| {
            (0..self.ny).flat_map(move |iy| (0..self.nz).map(move |iz| CellIndex { ix, iy, iz }))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub id: usize,
    pub position: Position3,
    pub power_level_index: usize,
    /// Hz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub id: usize,
    pub position: Position3,
    pub serving_uav: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub slot: u64,
    /// Seconds.
    pub slot_duration: f64,
}

impl Default for Clock {
    fn default() -> Self {
        Self {
            slot: 0,
            slot_duration: 1.0,
        }
    }
}

impl Clock {
    pub fn time(&self) -> f64 {
        self.slot as f64 * self.slot_duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bounds: Bounds,
    pub cell_size: f64,
    pub uavs: Vec<UavState>,
    pub users: Vec<UserState>,
    pub channel: ChannelParams,
    pub clock: Clock,
}

impl Scenario {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.bounds, self.cell_size)
    }

    pub fn user_positions(&self) -> Vec<Position3> {
        self.users.iter().map(|u| u.position).collect()
    }

    pub fn uav(&self, id: usize) -> Option<&UavState> {
        self.uavs.iter().find(|u| u.id == id)
    }

    /// Transmit power of a UAV in watts, from its ladder index.
    pub fn transmit_power(&self, uav: &UavState) -> f64 {
        self.channel.power_ladder[uav.power_level_index]
    }
}

pub fn snap_to_grid(p: &Position3, scenario: &Scenario) -> Result<CellIndex> {
    scenario.grid()?.snap(p)
}

pub fn cell_center(c: CellIndex, scenario: &Scenario) -> Result<Position3> {
    scenario.grid()?.center(c)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every scenario invariant and reports all violations found.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let b = &s.bounds;
    let finite_bounds = [b.x_max, b.y_max, b.z_min, b.z_max].iter().all(|v| v.is_finite());
    if !finite_bounds || b.x_max <= 0.0 || b.y_max <= 0.0 {
        out.push(Violation::new("bounds", "x_max and y_max must be positive and finite"));
    }
    if !(b.z_min >= 0.0 && b.z_max >= b.z_min) {
        out.push(Violation::new("bounds", "altitude range must satisfy 0 <= z_min <= z_max"));
    }
    if !(s.cell_size > 0.0 && s.cell_size.is_finite()) {
        out.push(Violation::new("cell_size", "must be positive"));
    }
    if !(s.clock.slot_duration > 0.0 && s.clock.slot_duration.is_finite()) {
        out.push(Violation::new("clock.slot_duration", "must be positive"));
    }
    out.extend(s.channel.violations("channel"));

    if s.uavs.is_empty() {
        out.push(Violation::new("uavs", "at least one UAV is required"));
    }
    if s.users.is_empty() {
        out.push(Violation::new("users", "at least one user is required"));
    }
    for (i, uav) in s.uavs.iter().enumerate() {
        let p = &uav.position;
        if !p.is_finite() {
            out.push(Violation::new(format!("uavs[{i}].position"), "non-finite coordinate"));
            continue;
        }
        if !b.contains_ground(p.x, p.y) {
            out.push(Violation::new(format!("uavs[{i}].position"), "outside the service area"));
        }
        if !(b.z_min..=b.z_max).contains(&p.z) {
            out.push(Violation::new(
                format!("uavs[{i}].position.z"),
                format!("altitude {} outside [{}, {}]", p.z, b.z_min, b.z_max),
            ));
        }
        if uav.power_level_index >= s.channel.power_ladder.len() {
            out.push(Violation::new(
                format!("uavs[{i}].power_level_index"),
                format!("index {} exceeds ladder length {}", uav.power_level_index, s.channel.power_ladder.len()),
            ));
        }
        if !(uav.bandwidth > 0.0 && uav.bandwidth.is_finite()) {
            out.push(Violation::new(format!("uavs[{i}].bandwidth"), "must be positive"));
        }
    }
    for (i, user) in s.users.iter().enumerate() {
        let p = &user.position;
        if !p.is_finite() {
            out.push(Violation::new(format!("users[{i}].position"), "non-finite coordinate"));
            continue;
        }
        if !b.contains_ground(p.x, p.y) {
            out.push(Violation::new(format!("users[{i}].position"), "outside the service area"));
        }
        if p.z != 0.0 {
            out.push(Violation::new(format!("users[{i}].position.z"), "ground users must have z = 0"));
        }
    }
    out
}
