//! Local occupancy maps from a single scan and their fusion into a global
//! map.
//!
//! Cell `(x, y)` grows east with `x` and north with `y`. Local maps put the
//! scan-head axis at cell `(l_mmax / l_r, l_mmax / l_r)` so all indices are
//! non-negative. Rasters are whole centimetres or fractions thereof; raster
//! coordinates are rounded to the nearest cell with ties away from zero.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("invalid scan config: {0}")]
    BadConfig(&'static str),
    #[error("raster {l_r} cm does not divide {span} cm")]
    NonDivisibleRaster { span: f64, l_r: f64 },
    #[error("distance {l_m} cm exceeds the sensor maximum {l_mmax} cm")]
    BeyondRange { l_m: f64, l_mmax: f64 },
    #[error("angle {0} is outside [-180, 180]")]
    BadAngle(f64),
    #[error("raster mismatch: {a} cm vs {b} cm")]
    RasterMismatch { a: f64, b: f64 },
    #[error("map too large: side {0}")]
    TooLarge(usize),
    #[error("bad map data: {0}")]
    Format(String),
}

fn whole_cells(span: f64, l_r: f64) -> Result<usize, MapError> {
    let n = span / l_r;
    if !(n.is_finite() && n >= 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(MapError::NonDivisibleRaster { span, l_r });
    }
    Ok(n.round() as usize)
}

/// Sweep `dphi` (degrees) measured in segments of `deps` degrees, rastered
/// at `l_r` cm, for a sensor reaching `l_mmax` cm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub dphi: f64,
    pub deps: f64,
    pub l_r: f64,
    pub l_mmax: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            dphi: 180.0,
            deps: 1.5,
            l_r: 1.0,
            l_mmax: 150.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.deps > 0.0 && self.deps <= self.dphi && self.dphi <= 360.0) {
            return Err(MapError::BadConfig("need 0 < deps <= dphi <= 360"));
        }
        if !(self.l_r > 0.0 && self.l_mmax > 0.0) {
            return Err(MapError::BadConfig("raster and sensor range must be positive"));
        }
        whole_cells(self.l_mmax, self.l_r)?;
        self.measurement_count()?;
        Ok(())
    }

    /// `n` with `n * deps = dphi`.
    pub fn measurement_count(&self) -> Result<usize, MapError> {
        let n = self.dphi / self.deps;
        if (n - n.round()).abs() > 1e-9 {
            return Err(MapError::BadConfig("dphi must be a whole number of segments"));
        }
        Ok(n.round() as usize)
    }

    /// Head angle of measurement `k` (0-based): the head first moves to
    /// `-dphi/2`, then advances one segment before each reading.
    pub fn measurement_angle(&self, k: usize) -> f64 {
        -self.dphi / 2.0 + (k as f64 + 1.0) * self.deps
    }
}

/// Estimated duration of a scan in seconds.
pub fn measurement_duration(cfg: &ScanConfig) -> f64 {
    cfg.dphi * (0.06 / cfg.deps + 0.0425)
}

/// Time to approach the start position or return to zero.
pub fn approach_time(dphi: f64) -> f64 {
    0.05 * (dphi / 2.0) * 0.85
}

/// Time of the measuring sweep: 0.05 s per segment step plus 0.01 s per
/// distance computation.
pub fn measuring_time(dphi: f64, deps: f64) -> f64 {
    (0.05 + 0.01) * dphi / deps
}

/// Bits needed for a local map of sensor range `l_m` at raster `l_r`.
pub fn storage_bits(l_m: f64, l_r: f64) -> Result<u64, MapError> {
    let side = whole_cells(2.0 * l_m, l_r)? as u64;
    Ok(side * side)
}

/// Round half away from zero, as an integer cell index.
pub fn round_cell(v: f64) -> i64 {
    v.round() as i64
}

/// Rastered offsets `(l_dx, l_dy)` of an echo at angle `alpha`, distance
/// `l_m`.
pub fn raster_offsets(alpha: f64, l_m: f64, l_r: f64) -> (i64, i64) {
    let a = alpha.to_radians();
    (round_cell(a.sin() * l_m / l_r), round_cell(a.cos() * l_m / l_r))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalMap {
    side: usize,
    origin: usize,
    raster_bits: u32,
    bits: Vec<u64>,
}

impl LocalMap {
    /// Empty map of side `2 * l_mmax / l_r` cells.
    pub fn new(l_mmax: f64, l_r: f64) -> Result<Self, MapError> {
        if l_r.is_nan() || l_r <= 0.0 {
            return Err(MapError::BadConfig("raster must be positive"));
        }
        let origin = whole_cells(l_mmax, l_r)?;
        if origin == 0 {
            return Err(MapError::BadConfig("sensor range must span a cell"));
        }
        Self::with_side(2 * origin, l_r)
    }

    pub fn for_config(cfg: &ScanConfig) -> Result<Self, MapError> {
        Self::new(cfg.l_mmax, cfg.l_r)
    }

    /// Empty map with an even `side`.
    pub fn with_side(side: usize, l_r: f64) -> Result<Self, MapError> {
        if side == 0 || !side.is_multiple_of(2) {
            return Err(MapError::BadConfig("side must be even and positive"));
        }
        if side > u16::MAX as usize {
            return Err(MapError::TooLarge(side));
        }
        Ok(Self {
            side,
            origin: side / 2,
            raster_bits: (l_r as f32).to_bits(),
            bits: vec![0; (side * side).div_ceil(64)],
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Cell of the scan-head axis, the same on both axes.
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn raster(&self) -> f64 {
        f64::from(f32::from_bits(self.raster_bits))
    }

    fn l_mmax(&self) -> f64 {
        self.origin as f64 * self.raster()
    }

    pub fn storage_bits(&self) -> u64 {
        (self.side * self.side) as u64
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        if x >= self.side || y >= self.side {
            return false;
        }
        let i = y * self.side + x;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize) {
        assert!(x < self.side && y < self.side, "cell ({x}, {y}) outside map");
        let i = y * self.side + x;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    /// Sets a cell given relative to the origin; returns false if it falls
    /// off the map.
    pub fn set_relative(&mut self, dx: i64, dy: i64) -> bool {
        let o = self.origin as i64;
        let (x, y) = (o + dx, o + dy);
        let side = self.side as i64;
        if (0..side).contains(&x) && (0..side).contains(&y) {
            self.set(x as usize, y as usize);
            true
        } else {
            false
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Set cells as absolute indices, row by row from the south.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let side = self.side;
        (0..side * side)
            .filter(move |i| self.bits[i / 64] >> (i % 64) & 1 == 1)
            .map(move |i| (i % side, i / side))
    }

    /// Set cells relative to the origin.
    pub fn relative_cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let o = self.origin as i64;
        self.cells().map(move |(x, y)| (x as i64 - o, y as i64 - o))
    }

    /// Marks the echo at head angle `alpha` and distance `l_m`; distance 0
    /// means no obstacle and leaves the map unchanged. Indices are clamped
    /// to the map, which only matters for `l_m == l_mmax` at the far edges.
    pub fn plot_point(&mut self, alpha: f64, l_m: f64) -> Result<Option<(usize, usize)>, MapError> {
        if !(-180.0..=180.0).contains(&alpha) {
            return Err(MapError::BadAngle(alpha));
        }
        let l_mmax = self.l_mmax();
        if l_m > l_mmax + 1e-9 {
            return Err(MapError::BeyondRange { l_m, l_mmax });
        }
        if l_m <= 0.0 {
            return Ok(None);
        }
        let a = alpha.to_radians();
        let l_r = self.raster();
        let hi = self.side as i64 - 1;
        let x = round_cell((l_mmax + a.sin() * l_m) / l_r).clamp(0, hi) as usize;
        let y = round_cell((l_mmax + a.cos() * l_m) / l_r).clamp(0, hi) as usize;
        self.set(x, y);
        Ok(Some((x, y)))
    }

    /// Rotates every set cell about the origin by the compass heading
    /// `alpha`; cells rotated off the map are dropped.
    pub fn rotate_to_north(&self, alpha: f64) -> LocalMap {
        let mut out = LocalMap {
            bits: vec![0; self.bits.len()],
            ..self.clone()
        };
        for (x, y) in self.relative_cells() {
            let (rx, ry) = rotate_cell(alpha, x, y);
            out.set_relative(rx, ry);
        }
        out
    }

    /// `"EMRM"`, side as u16 LE, rows from y = 0 upward with each row padded
    /// to whole bytes (MSB = lowest x), then the raster as f32 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let row_bytes = self.side.div_ceil(8);
        let mut out = Vec::with_capacity(6 + row_bytes * self.side + 4);
        out.extend_from_slice(b"EMRM");
        out.extend_from_slice(&(self.side as u16).to_le_bytes());
        for y in 0..self.side {
            out.extend(pack_row(self.side, |x| self.get(x, y)));
        }
        out.extend_from_slice(&self.raster_bits.to_le_bytes());
        out
    }

    /// Inverse of [`LocalMap::to_bytes`]; a missing raster trailer means 1 cm.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        if bytes.len() < 6 || &bytes[..4] != b"EMRM" {
            return Err(MapError::Format("missing EMRM header".into()));
        }
        let side = usize::from(u16::from_le_bytes([bytes[4], bytes[5]]));
        let row_bytes = side.div_ceil(8);
        let body = row_bytes * side;
        let rest = &bytes[6..];
        let raster = match rest.len().checked_sub(body) {
            Some(0) => 1.0,
            Some(4) => f32::from_le_bytes(rest[body..].try_into().expect("4 bytes")),
            _ => {
                return Err(MapError::Format(format!(
                    "expected {body} or {} data bytes, got {}",
                    body + 4,
                    rest.len()
                )))
            }
        };
        if !(raster.is_finite() && raster > 0.0) {
            return Err(MapError::Format("bad raster".into()));
        }
        let mut map = Self::with_side(side, f64::from(raster))?;
        for y in 0..side {
            let row = &rest[y * row_bytes..(y + 1) * row_bytes];
            for x in 0..side {
                if row[x / 8] & (0x80 >> (x % 8)) != 0 {
                    map.set(x, y);
                }
            }
        }
        Ok(map)
    }

    /// Plain PBM (P1) with north at the top.
    pub fn to_pbm(&self) -> String {
        render_pbm(self.side, self.side, |x, y| self.get(x, self.side - 1 - y))
    }
}

fn pack_row(width: usize, bit: impl Fn(usize) -> bool) -> Vec<u8> {
    let mut row = vec![0u8; width.div_ceil(8)];
    for x in 0..width {
        if bit(x) {
            row[x / 8] |= 0x80 >> (x % 8);
        }
    }
    row
}

fn render_pbm(width: usize, height: usize, bit: impl Fn(usize, usize) -> bool) -> String {
    let mut out = format!("P1\n{width} {height}\n");
    for row in 0..height {
        let line: Vec<&str> = (0..width).map(|x| if bit(x, row) { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// `(cos a * x + sin a * y, -sin a * x + cos a * y)`, rounded.
pub fn rotate_cell(alpha: f64, x: i64, y: i64) -> (i64, i64) {
    let (s, c) = alpha.to_radians().sin_cos();
    let (x, y) = (x as f64, y as f64);
    (round_cell(c * x + s * y), round_cell(-s * x + c * y))
}

/// Compass heading and odometry displacement (whole cells) since the
/// global map's anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotFix {
    alpha: f64,
    pub dx: i64,
    pub dy: i64,
}

impl RobotFix {
    pub fn new(alpha: f64, dx: i64, dy: i64) -> Self {
        Self {
            alpha: crate::world::normalize_deg(alpha),
            dx,
            dy,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `[[cos, sin, dx], [-sin, cos, dy], [0, 0, 1]]`.
    pub fn composite_matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.alpha.to_radians().sin_cos();
        [[c, s, self.dx as f64], [-s, c, self.dy as f64], [0.0, 0.0, 1.0]]
    }

    /// Rotation part of the composite transform.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.alpha.to_radians().sin_cos();
        [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    /// Translation part of the composite transform.
    pub fn translation_matrix(&self) -> [[f64; 3]; 3] {
        [[1.0, 0.0, self.dx as f64], [0.0, 1.0, self.dy as f64], [0.0, 0.0, 1.0]]
    }

    /// Global cell of an origin-relative local cell: rotation, rounding to
    /// the raster, then the whole-cell translation.
    pub fn transform(&self, x: i64, y: i64) -> (i64, i64) {
        let (rx, ry) = rotate_cell(self.alpha, x, y);
        (rx + self.dx, ry + self.dy)
    }
}

/// Product of two 3x3 matrices.
pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Unbounded occupancy grid in world cells, anchored at the first fix.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    raster: f64,
    cells: BTreeSet<(i64, i64)>,
}

impl GlobalMap {
    pub fn new(raster: f64) -> Self {
        Self {
            raster: f64::from(raster as f32),
            cells: BTreeSet::new(),
        }
    }

    pub fn raster(&self) -> f64 {
        self.raster
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.cells.contains(&(x, y))
    }

    pub fn insert(&mut self, x: i64, y: i64) {
        self.cells.insert((x, y));
    }

    pub fn cells(&self) -> impl Iterator<Item = &(i64, i64)> {
        self.cells.iter()
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Inclusive `(min_x, min_y, max_x, max_y)`, or `None` when empty.
    pub fn extent(&self) -> Option<(i64, i64, i64, i64)> {
        let mut it = self.cells.iter();
        let first = *it.next()?;
        Some(it.fold((first.0, first.1, first.0, first.1), |(a, b, c, d), &(x, y)| {
            (a.min(x), b.min(y), c.max(x), d.max(y))
        }))
    }

    /// ORs the local map into the grid under `fix`.
    pub fn merge(&mut self, local: &LocalMap, fix: &RobotFix) -> Result<(), MapError> {
        if (local.raster() - self.raster).abs() > 1e-9 {
            return Err(MapError::RasterMismatch {
                a: self.raster,
                b: local.raster(),
            });
        }
        for (x, y) in local.relative_cells() {
            self.cells.insert(fix.transform(x, y));
        }
        Ok(())
    }

    /// `"EMRG"`, raster f32, min_x i32, min_y i32, width u32, height u32,
    /// then rows from min_y upward, each padded to bytes (MSB = lowest x).
    pub fn to_bytes(&self) -> Vec<u8> {
        let (min_x, min_y, max_x, max_y) = self.extent().unwrap_or((0, 0, -1, -1));
        let width = (max_x - min_x + 1) as usize;
        let height = (max_y - min_y + 1) as usize;
        let mut out = b"EMRG".to_vec();
        out.extend_from_slice(&(self.raster as f32).to_le_bytes());
        out.extend_from_slice(&(min_x as i32).to_le_bytes());
        out.extend_from_slice(&(min_y as i32).to_le_bytes());
        out.extend_from_slice(&(width as u32).to_le_bytes());
        out.extend_from_slice(&(height as u32).to_le_bytes());
        for row in 0..height as i64 {
            out.extend(pack_row(width, |x| self.contains(min_x + x as i64, min_y + row)));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        if bytes.len() < 24 || &bytes[..4] != b"EMRG" {
            return Err(MapError::Format("missing EMRG header".into()));
        }
        let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).expect("4 bytes");
        let raster = f32::from_le_bytes(word(4));
        let min_x = i64::from(i32::from_le_bytes(word(8)));
        let min_y = i64::from(i32::from_le_bytes(word(12)));
        let width = u32::from_le_bytes(word(16)) as usize;
        let height = u32::from_le_bytes(word(20)) as usize;
        if !(raster.is_finite() && raster > 0.0) {
            return Err(MapError::Format("bad raster".into()));
        }
        let row_bytes = width.div_ceil(8);
        let expected = row_bytes
            .checked_mul(height)
            .ok_or_else(|| MapError::Format("size overflow".into()))?;
        let body = &bytes[24..];
        if body.len() != expected {
            return Err(MapError::Format(format!(
                "expected {expected} data bytes, got {}",
                body.len()
            )));
        }
        let mut map = GlobalMap::new(f64::from(raster));
        for row in 0..height {
            let data = &body[row * row_bytes..(row + 1) * row_bytes];
            for x in 0..width {
                if data[x / 8] & (0x80 >> (x % 8)) != 0 {
                    map.insert(min_x + x as i64, min_y + row as i64);
                }
            }
        }
        Ok(map)
    }

    /// Plain PBM of the occupied extent, north at the top.
    pub fn to_pbm(&self) -> String {
        match self.extent() {
            None => "P1\n0 0\n".to_string(),
            Some((min_x, min_y, max_x, max_y)) => {
                let w = (max_x - min_x + 1) as usize;
                let h = (max_y - min_y + 1) as usize;
                render_pbm(w, h, |x, row| self.contains(min_x + x as i64, max_y - row as i64))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        let cfg = ScanConfig::default();
        assert!((measurement_duration(&cfg) - 14.85).abs() < 1e-12);
        let z = ScanConfig { dphi: 0.0, ..cfg };
        assert_eq!(measurement_duration(&z), 0.0);
        let c2 = ScanConfig {
            dphi: 90.0,
            deps: 0.9,
            ..cfg
        };
        assert!((measurement_duration(&c2) - 9.825).abs() < 1e-9);
        assert!((2.0 * approach_time(180.0) + measuring_time(180.0, 1.5) - 14.85).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        ScanConfig::default().validate().unwrap();
        assert!(ScanConfig {
            deps: 200.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScanConfig {
            deps: 0.7,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScanConfig {
            l_r: 7.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(ScanConfig::default().measurement_count().unwrap(), 120);
        assert!((ScanConfig::default().measurement_angle(0) + 88.5).abs() < 1e-12);
        assert!((ScanConfig::default().measurement_angle(119) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn storage() {
        assert_eq!(storage_bits(150.0, 1.0).unwrap(), 90_000);
        assert_eq!(storage_bits(3.0, 3.0).unwrap(), 4);
        assert!(matches!(
            storage_bits(150.0, 7.0),
            Err(MapError::NonDivisibleRaster { .. })
        ));
        assert_eq!(LocalMap::new(150.0, 1.0).unwrap().storage_bits(), 90_000);
    }

    #[test]
    fn offsets() {
        assert_eq!(raster_offsets(0.0, 100.0, 1.0), (0, 100));
        assert_eq!(raster_offsets(90.0, 50.0, 1.0), (50, 0));
        assert_eq!(raster_offsets(30.0, 100.0, 2.0), (25, 43));
        assert_eq!(round_cell(-2.5), -3);
        assert_eq!(round_cell(2.5), 3);
    }

    #[test]
    fn plotting() {
        let mut m = LocalMap::new(150.0, 1.0).unwrap();
        assert_eq!(m.plot_point(0.0, 100.0).unwrap(), Some((150, 250)));
        assert_eq!(m.plot_point(-90.0, 150.0).unwrap(), Some((0, 150)));
        let before = m.clone();
        assert_eq!(m.plot_point(12.0, 0.0).unwrap(), None);
        assert_eq!(m, before);
        assert!(matches!(m.plot_point(0.0, 151.0), Err(MapError::BeyondRange { .. })));
        assert!(matches!(m.plot_point(181.0, 10.0), Err(MapError::BadAngle(_))));
        // Far edge clamps onto the last cell.
        assert_eq!(m.plot_point(90.0, 150.0).unwrap(), Some((299, 150)));
    }

    #[test]
    fn rotation() {
        let mut m = LocalMap::new(8.0, 1.0).unwrap();
        m.set_relative(1, 0);
        assert_eq!(m.rotate_to_north(0.0), m);
        let r = m.rotate_to_north(90.0);
        assert_eq!(r.relative_cells().collect::<Vec<_>>(), vec![(0, -1)]);
    }

    #[test]
    fn merge_basics() {
        let mut local = LocalMap::new(8.0, 1.0).unwrap();
        local.set_relative(0, 0);
        local.set_relative(3, -2);
        let mut g = GlobalMap::new(1.0);
        g.merge(&local, &RobotFix::new(0.0, 0, 0)).unwrap();
        let cells: Vec<_> = g.cells().copied().collect();
        assert_eq!(cells, vec![(0, 0), (3, -2)]);

        let mut g = GlobalMap::new(1.0);
        let mut single = LocalMap::new(8.0, 1.0).unwrap();
        single.set_relative(0, 0);
        g.merge(&single, &RobotFix::new(0.0, 10, -3)).unwrap();
        assert!(g.contains(10, -3));

        let mut other = GlobalMap::new(2.0);
        assert!(matches!(
            other.merge(&single, &RobotFix::new(0.0, 0, 0)),
            Err(MapError::RasterMismatch { .. })
        ));
    }

    #[test]
    fn composite_is_translation_times_rotation() {
        let fix = RobotFix::new(33.0, 4, -7);
        let p = mat3_mul(&fix.translation_matrix(), &fix.rotation_matrix());
        let c = fix.composite_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - c[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_binary_round_trip() {
        let mut m = LocalMap::new(10.0, 0.5).unwrap();
        m.set(0, 0);
        m.set(39, 39);
        m.set(7, 12);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..6], &[b'E', b'M', b'R', b'M', 40, 0]);
        assert_eq!(bytes.len(), 6 + 5 * 40 + 4);
        assert_eq!(bytes[6], 0x80);
        assert_eq!(LocalMap::from_bytes(&bytes).unwrap(), m);
        // Without the raster trailer the raster defaults to 1 cm.
        let bare = LocalMap::from_bytes(&bytes[..bytes.len() - 4]).unwrap();
        assert_eq!(bare.raster(), 1.0);
        assert!(LocalMap::from_bytes(b"EMRM\x04\x00\x00").is_err());
    }

    #[test]
    fn pbm_north_is_up() {
        let mut m = LocalMap::with_side(2, 1.0).unwrap();
        m.set(1, 1);
        assert_eq!(m.to_pbm(), "P1\n2 2\n0 1\n0 0\n");
    }

    #[test]
    fn global_binary_round_trip() {
        let mut g = GlobalMap::new(1.0);
        for c in [(-5, 3), (0, 0), (12, -9), (12, 3)] {
            g.insert(c.0, c.1);
        }
        let back = GlobalMap::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        assert_eq!(
            GlobalMap::from_bytes(&GlobalMap::new(1.0).to_bytes()).unwrap(),
            GlobalMap::new(1.0)
        );
    }
}
