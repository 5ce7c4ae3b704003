//! Two-layer (rolling resistance + grade) grid map at 1 m resolution and
//! the realtime plotter that stamps terrain attributes, sampled at the
//! true position, into the cell under the *estimated* position. Each cell
//! record keeps the write location alongside the value, so a two-layer
//! map is logically a `2 x m x n x 3` tensor; untouched cells hold NaN.

use crate::world::{GroundTruthMap, Rect};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("point ({x}, {y}) outside the map")]
    OutOfMap { x: f64, y: f64 },
    #[error("invalid map geometry: {0}")]
    InvalidGeometry(String),
    #[error("layer index {0} out of range")]
    LayerOutOfRange(usize),
    #[error("map parse error at byte {offset}: {what}")]
    Parse { offset: usize, what: String },
    #[error("trajectory lengths differ: {truth} truth vs {estimate} estimate")]
    LengthMismatch { truth: usize, estimate: usize },
}

pub const RESISTANCE_LAYER: usize = 0;
pub const GRADE_LAYER: usize = 1;

const MAGIC: &[u8; 4] = b"TFGM";
const FORMAT_VERSION: u16 = 1;

/// One cell: where the value was written plus the value itself. Either
/// fully unknown (all three fields NaN) or fully populated.
#[derive(Clone, Copy, Debug)]
pub struct CellRecord {
    pub x_loc: f64,
    pub y_loc: f64,
    pub value: f64,
}

impl CellRecord {
    pub fn unknown() -> Self {
        CellRecord {
            x_loc: f64::NAN,
            y_loc: f64::NAN,
            value: f64::NAN,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.value.is_nan()
    }
}

impl PartialEq for CellRecord {
    fn eq(&self, other: &Self) -> bool {
        let f = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a == b);
        f(self.x_loc, other.x_loc) && f(self.y_loc, other.y_loc) && f(self.value, other.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

/// Congruent layers over one grid. Cells are half-open `[i, i+1)` squares
/// of `resolution` meters, stored row-major by `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLayerGridMap {
    origin_x: f64,
    origin_y: f64,
    resolution: f64,
    m: usize,
    n: usize,
    layers: Vec<Vec<CellRecord>>,
    skipped: u64,
}

impl MultiLayerGridMap {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        resolution: f64,
        m: usize,
        n: usize,
        layer_count: usize,
    ) -> Result<Self, MapError> {
        if m == 0 || n == 0 {
            return Err(MapError::InvalidGeometry(format!(
                "cell counts must be >= 1, got {m} x {n}"
            )));
        }
        if !(resolution > 0.0) {
            return Err(MapError::InvalidGeometry(format!(
                "resolution {resolution} must be > 0"
            )));
        }
        if layer_count == 0 {
            return Err(MapError::InvalidGeometry("need at least one layer".into()));
        }
        Ok(MultiLayerGridMap {
            origin_x,
            origin_y,
            resolution,
            m,
            n,
            layers: vec![vec![CellRecord::unknown(); m * n]; layer_count],
            skipped: 0,
        })
    }

    /// The standard two-layer (resistance, grade) map.
    pub fn two_layer(
        origin_x: f64,
        origin_y: f64,
        resolution: f64,
        m: usize,
        n: usize,
    ) -> Result<Self, MapError> {
        Self::new(origin_x, origin_y, resolution, m, n, 2)
    }

    /// Two-layer map covering a world extent at the given resolution.
    pub fn covering(extent: &Rect, resolution: f64) -> Result<Self, MapError> {
        if !(resolution > 0.0) {
            return Err(MapError::InvalidGeometry(format!(
                "resolution {resolution} must be > 0"
            )));
        }
        let m = (extent.width() / resolution).ceil() as usize;
        let n = (extent.height() / resolution).ceil() as usize;
        Self::two_layer(extent.min_x, extent.min_y, resolution, m.max(1), n.max(1))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Out-of-map poses skipped by [`MultiLayerGridMap::record_cell`].
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn cells(&self, layer: usize) -> &[CellRecord] {
        &self.layers[layer]
    }

    pub fn cell(&self, layer: usize, idx: CellIndex) -> &CellRecord {
        &self.layers[layer][idx.j * self.m + idx.i]
    }

    /// Grid cell containing `(x, y)`; cells are half-open so every in-map
    /// point belongs to exactly one.
    pub fn cell_index(&self, x: f64, y: f64) -> Result<CellIndex, MapError> {
        let fi = ((x - self.origin_x) / self.resolution).floor();
        let fj = ((y - self.origin_y) / self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.m as f64 || fj >= self.n as f64 {
            return Err(MapError::OutOfMap { x, y });
        }
        Ok(CellIndex {
            i: fi as usize,
            j: fj as usize,
        })
    }

    pub fn cell_center(&self, idx: CellIndex) -> (f64, f64) {
        (
            self.origin_x + (idx.i as f64 + 0.5) * self.resolution,
            self.origin_y + (idx.j as f64 + 0.5) * self.resolution,
        )
    }

    /// Stamps both layers at the cell under the estimated pose with the
    /// write location and the layer values; last write wins. Out-of-map
    /// poses are counted and skipped.
    pub fn record_cell(&mut self, x: f64, y: f64, resistance: f64, grade: f64) {
        match self.cell_index(x, y) {
            Ok(idx) => {
                let flat = idx.j * self.m + idx.i;
                let values = [resistance, grade];
                for (layer, value) in self.layers.iter_mut().zip(values) {
                    layer[flat] = CellRecord {
                        x_loc: x,
                        y_loc: y,
                        value,
                    };
                }
            }
            Err(_) => self.skipped += 1,
        }
    }

    pub fn populated_count(&self, layer: usize) -> usize {
        self.layers[layer].iter().filter(|c| !c.is_unknown()).count()
    }

    /// Extracts one layer as a standalone single-layer map (the skip
    /// counter carries over).
    pub fn single_layer(&self, layer: usize) -> Result<Self, MapError> {
        let cells = self
            .layers
            .get(layer)
            .ok_or(MapError::LayerOutOfRange(layer))?;
        Ok(MultiLayerGridMap {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            resolution: self.resolution,
            m: self.m,
            n: self.n,
            layers: vec![cells.clone()],
            skipped: self.skipped,
        })
    }

    /// Binary serialization: magic "TFGM", version, layer count, m, n,
    /// resolution, origin, skip counter, then row-major cell records per
    /// layer; little-endian 64-bit floats. Bit-exact round-trip.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(4 + 2 + 2 + 8 * 5 + self.layers.len() * self.m * self.n * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.m as u64).to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.extend_from_slice(&self.origin_x.to_le_bytes());
        out.extend_from_slice(&self.origin_y.to_le_bytes());
        out.extend_from_slice(&self.skipped.to_le_bytes());
        for layer in &self.layers {
            for cell in layer {
                out.extend_from_slice(&cell.x_loc.to_le_bytes());
                out.extend_from_slice(&cell.y_loc.to_le_bytes());
                out.extend_from_slice(&cell.value.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(MapError::Parse {
                offset: 0,
                what: format!("bad magic {magic:02x?}"),
            });
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(MapError::Parse {
                offset: 4,
                what: format!("unsupported version {version}"),
            });
        }
        let layer_count = r.u16("layer count")? as usize;
        let m = r.u64("m")? as usize;
        let n = r.u64("n")? as usize;
        let resolution = r.f64("resolution")?;
        let origin_x = r.f64("origin x")?;
        let origin_y = r.f64("origin y")?;
        let skipped = r.u64("skip counter")?;
        if layer_count == 0 || m == 0 || n == 0 || !(resolution > 0.0) {
            return Err(MapError::Parse {
                offset: 6,
                what: format!("bad geometry: {layer_count} layers, {m} x {n}, res {resolution}"),
            });
        }
        let cells = m
            .checked_mul(n)
            .filter(|total| total.checked_mul(layer_count).is_some() && *total <= (1 << 32))
            .ok_or_else(|| MapError::Parse {
                offset: 8,
                what: "cell count overflow".into(),
            })?;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let mut layer = Vec::with_capacity(cells);
            for _ in 0..cells {
                layer.push(CellRecord {
                    x_loc: r.f64("cell x")?,
                    y_loc: r.f64("cell y")?,
                    value: r.f64("cell value")?,
                });
            }
            layers.push(layer);
        }
        r.expect_end()?;
        Ok(MultiLayerGridMap {
            origin_x,
            origin_y,
            resolution,
            m,
            n,
            layers,
            skipped,
        })
    }

    /// CSV export: n rows of m values, `NaN` marking unknown cells.
    pub fn write_layer_csv<W: Write>(&self, layer: usize, mut w: W) -> io::Result<()> {
        let cells = &self.layers[layer];
        for j in 0..self.n {
            let mut line = String::with_capacity(self.m * 8);
            for i in 0..self.m {
                if i > 0 {
                    line.push(',');
                }
                let c = &cells[j * self.m + i];
                if c.is_unknown() {
                    line.push_str("NaN");
                } else {
                    line.push_str(&format!("{}", c.value));
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// 8-bit binary PGM (P5), values min-max scaled, unknown cells 0.
    pub fn write_layer_pgm<W: Write>(&self, layer: usize, mut w: W) -> io::Result<()> {
        let cells = &self.layers[layer];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in cells.iter().filter(|c| !c.is_unknown()) {
            lo = lo.min(c.value);
            hi = hi.max(c.value);
        }
        write!(w, "P5\n{} {}\n255\n", self.m, self.n)?;
        let span = hi - lo;
        let mut row = vec![0u8; self.m];
        for j in 0..self.n {
            for i in 0..self.m {
                let c = &cells[j * self.m + i];
                row[i] = if c.is_unknown() {
                    0
                } else if span > 0.0 {
                    (((c.value - lo) / span) * 255.0).round() as u8
                } else {
                    255
                };
            }
            w.write_all(&row)?;
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], MapError> {
        if self.pos + len > self.buf.len() {
            return Err(MapError::Parse {
                offset: self.pos,
                what: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, MapError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, MapError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<(), MapError> {
        if self.pos != self.buf.len() {
            return Err(MapError::Parse {
                offset: self.pos,
                what: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Replays aligned truth/estimate positions through the map: terrain is
/// sampled from the ground truth at the true position and written at the
/// estimated position's cell. The localization error is what smears zone
/// values across borders.
pub fn run_plotter(
    truth_xy: &[(f64, f64)],
    estimate_xy: &[(f64, f64)],
    ground: &GroundTruthMap,
    map: &mut MultiLayerGridMap,
) -> Result<(), MapError> {
    if truth_xy.len() != estimate_xy.len() {
        return Err(MapError::LengthMismatch {
            truth: truth_xy.len(),
            estimate: estimate_xy.len(),
        });
    }
    for (truth, est) in truth_xy.iter().zip(estimate_xy) {
        let (resistance, grade) = ground.sample_ground(truth.0, truth.1);
        map.record_cell(est.0, est.1, resistance, grade);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Polygon, TerrainZone};
    use proptest::prelude::*;

    fn small_map() -> MultiLayerGridMap {
        MultiLayerGridMap::two_layer(0.0, 0.0, 1.0, 20, 10).unwrap()
    }

    #[test]
    fn cell_index_half_open_boundaries() {
        let map = small_map();
        assert_eq!(map.cell_index(0.0, 0.0).unwrap(), CellIndex { i: 0, j: 0 });
        assert_eq!(map.cell_index(0.999, 1.0).unwrap(), CellIndex { i: 0, j: 1 });
        assert_eq!(
            map.cell_index(19.999, 9.999).unwrap(),
            CellIndex { i: 19, j: 9 }
        );
        assert!(matches!(
            map.cell_index(-0.001, 0.0),
            Err(MapError::OutOfMap { .. })
        ));
        assert!(matches!(
            map.cell_index(20.0, 0.0),
            Err(MapError::OutOfMap { .. })
        ));
    }

    #[test]
    fn record_populates_both_layers() {
        let mut map = small_map();
        map.record_cell(5.5, 5.5, 0.250, 0.0);
        let idx = CellIndex { i: 5, j: 5 };
        let r = map.cell(RESISTANCE_LAYER, idx);
        assert_eq!((r.x_loc, r.y_loc, r.value), (5.5, 5.5, 0.250));
        let g = map.cell(GRADE_LAYER, idx);
        assert_eq!((g.x_loc, g.y_loc, g.value), (5.5, 5.5, 0.0));
        assert_eq!(map.populated_count(RESISTANCE_LAYER), 1);
        assert_eq!(map.populated_count(GRADE_LAYER), 1);
        // every other cell is fully unknown
        let unknown = map
            .cells(RESISTANCE_LAYER)
            .iter()
            .filter(|c| c.is_unknown())
            .count();
        assert_eq!(unknown, 20 * 10 - 1);
    }

    #[test]
    fn revisits_are_last_write_wins() {
        let mut map = small_map();
        map.record_cell(2.2, 3.3, 0.02, 0.0);
        map.record_cell(2.8, 3.6, 0.25, 15.0);
        let idx = CellIndex { i: 2, j: 3 };
        let c = map.cell(RESISTANCE_LAYER, idx);
        assert_eq!((c.x_loc, c.y_loc, c.value), (2.8, 3.6, 0.25));
        assert_eq!(map.cell(GRADE_LAYER, idx).value, 15.0);
    }

    #[test]
    fn out_of_map_writes_are_counted_not_fatal() {
        let mut map = small_map();
        map.record_cell(-3.0, 5.0, 0.02, 0.0);
        map.record_cell(5.0, 50.0, 0.02, 0.0);
        assert_eq!(map.skipped(), 2);
        assert_eq!(map.populated_count(RESISTANCE_LAYER), 0);
    }

    fn two_zone_world() -> GroundTruthMap {
        let left = TerrainZone::new(
            Polygon::rectangle(0.0, 0.0, 10.0, 10.0).unwrap(),
            0.008,
            0.0,
        )
        .unwrap();
        let right = TerrainZone::new(
            Polygon::rectangle(10.0, 0.0, 20.0, 10.0).unwrap(),
            0.250,
            0.0,
        )
        .unwrap();
        GroundTruthMap::new(
            vec![left, right],
            vec![],
            0.040,
            0.0,
            Rect::new(0.0, 0.0, 20.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_estimates_reproduce_ground_truth() {
        let ground = two_zone_world();
        let mut map = MultiLayerGridMap::covering(&ground.extent, 1.0).unwrap();
        let path: Vec<(f64, f64)> = (0..40).map(|k| (0.25 + k as f64 * 0.5, 5.5)).collect();
        run_plotter(&path, &path, &ground, &mut map).unwrap();
        for k in 0..20 {
            let idx = CellIndex { i: k, j: 5 };
            let c = map.cell(RESISTANCE_LAYER, idx);
            assert!(!c.is_unknown());
            let (cx, cy) = map.cell_center(idx);
            assert_eq!(c.value, ground.sample_ground(cx, cy).0);
        }
        assert_eq!(map.skipped(), 0);
    }

    #[test]
    fn constant_offset_smears_the_zone_border() {
        // estimate leads truth by 2 m in +x: cells at x in [10, 12) receive
        // the left zone's value although they sit in the right zone
        let ground = two_zone_world();
        let mut map = MultiLayerGridMap::covering(&ground.extent, 1.0).unwrap();
        let truth: Vec<(f64, f64)> = (0..36).map(|k| (0.25 + k as f64 * 0.5, 5.5)).collect();
        let est: Vec<(f64, f64)> = truth.iter().map(|(x, y)| (x + 2.0, *y)).collect();
        run_plotter(&truth, &est, &ground, &mut map).unwrap();
        for i in [10usize, 11] {
            let c = map.cell(RESISTANCE_LAYER, CellIndex { i, j: 5 });
            assert_eq!(c.value, 0.008, "cell {i} should carry the left value");
        }
        for i in [12usize, 13] {
            let c = map.cell(RESISTANCE_LAYER, CellIndex { i, j: 5 });
            assert_eq!(c.value, 0.250);
        }
        // the offset leaves the first cells unvisited by any estimate
        assert!(map
            .cell(RESISTANCE_LAYER, CellIndex { i: 1, j: 5 })
            .is_unknown());
    }

    #[test]
    fn empty_trajectory_leaves_all_unknown() {
        let ground = two_zone_world();
        let mut map = MultiLayerGridMap::covering(&ground.extent, 1.0).unwrap();
        run_plotter(&[], &[], &ground, &mut map).unwrap();
        assert_eq!(map.populated_count(RESISTANCE_LAYER), 0);
        assert_eq!(map.populated_count(GRADE_LAYER), 0);
    }

    #[test]
    fn mismatched_lengths_are_an_error() {
        let ground = two_zone_world();
        let mut map = MultiLayerGridMap::covering(&ground.extent, 1.0).unwrap();
        assert!(matches!(
            run_plotter(&[(1.0, 1.0)], &[], &ground, &mut map),
            Err(MapError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fresh_and_populated_maps_round_trip() {
        let fresh = small_map();
        assert_eq!(
            MultiLayerGridMap::from_bytes(&fresh.to_bytes()).unwrap(),
            fresh
        );

        let mut map = small_map();
        map.record_cell(5.5, 5.5, 0.250, 15.0);
        map.record_cell(1.1, 2.2, 0.008, 0.0);
        map.record_cell(-10.0, 0.0, 0.02, 0.0); // bumps the skip counter
        let back = MultiLayerGridMap::from_bytes(&map.to_bytes()).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.skipped(), 1);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let map = small_map();
        let bytes = map.to_bytes();
        let err = MultiLayerGridMap::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            MapError::Parse { offset, .. } => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = MultiLayerGridMap::from_bytes(b"BOGUS").unwrap_err();
        assert!(matches!(err, MapError::Parse { offset: 0, .. }));
    }

    #[test]
    fn single_layer_export_keeps_geometry() {
        let mut map = small_map();
        map.record_cell(3.3, 4.4, 0.06, 15.0);
        let grade = map.single_layer(GRADE_LAYER).unwrap();
        assert_eq!(grade.layer_count(), 1);
        assert_eq!(grade.cell(0, CellIndex { i: 3, j: 4 }).value, 15.0);
        let back = MultiLayerGridMap::from_bytes(&grade.to_bytes()).unwrap();
        assert_eq!(back, grade);
        assert!(map.single_layer(5).is_err());
    }

    #[test]
    fn csv_export_marks_unknown_cells() {
        let mut map = MultiLayerGridMap::two_layer(0.0, 0.0, 1.0, 3, 2).unwrap();
        map.record_cell(1.5, 0.5, 0.25, 0.0);
        let mut out = Vec::new();
        map.write_layer_csv(RESISTANCE_LAYER, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "NaN,0.25,NaN\nNaN,NaN,NaN\n");
    }

    #[test]
    fn pgm_export_scales_and_zeroes_unknown() {
        let mut map = MultiLayerGridMap::two_layer(0.0, 0.0, 1.0, 2, 2).unwrap();
        map.record_cell(0.5, 0.5, 0.0, 0.0);
        map.record_cell(1.5, 0.5, 1.0, 0.0);
        let mut out = Vec::new();
        map.write_layer_pgm(RESISTANCE_LAYER, &mut out).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        let pixels = &out[header.len()..];
        assert_eq!(pixels, &[0, 255, 0, 0]);
    }

    proptest! {
        #[test]
        fn serialization_round_trips_arbitrary_maps(
            writes in proptest::collection::vec(
                (0.0f64..20.0, 0.0f64..10.0, 0.0f64..0.5, 0.0f64..20.0), 0..40),
            skips in 0usize..5,
        ) {
            let mut map = small_map();
            for (x, y, r, g) in writes {
                map.record_cell(x, y, r, g);
            }
            for _ in 0..skips {
                map.record_cell(-1.0, -1.0, 0.1, 0.0);
            }
            let back = MultiLayerGridMap::from_bytes(&map.to_bytes()).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn visited_cells_exactly_cover_estimates(
            path in proptest::collection::vec((0.0f64..20.0, 0.0f64..10.0), 1..60)
        ) {
            let ground = two_zone_world();
            let mut map = MultiLayerGridMap::covering(&ground.extent, 1.0).unwrap();
            run_plotter(&path, &path, &ground, &mut map).unwrap();
            let mut expected: std::collections::BTreeSet<(usize, usize)> =
                std::collections::BTreeSet::new();
            for (x, y) in &path {
                if let Ok(idx) = map.cell_index(*x, *y) {
                    expected.insert((idx.i, idx.j));
                }
            }
            for j in 0..map.n() {
                for i in 0..map.m() {
                    let populated = !map.cell(RESISTANCE_LAYER, CellIndex { i, j }).is_unknown();
                    prop_assert_eq!(populated, expected.contains(&(i, j)));
                }
            }
        }
    }
}
