//! Quantitative evaluation: per-axis and net RMSE of estimated
//! trajectories against ground truth, and mispredicted-cell rates of
//! plotted grid maps.

use crate::gridmap::{CellIndex, MultiLayerGridMap, GRADE_LAYER, RESISTANCE_LAYER};
use crate::world::GroundTruthMap;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory lengths differ after alignment: {est} vs {truth}")]
    LengthMismatch { est: usize, truth: usize },
    #[error("timestamps diverge at sample {index}: {est} vs {truth}")]
    TimeMismatch { index: usize, est: f64, truth: f64 },
    #[error("map must carry both terrain layers, found {0}")]
    MissingLayers(usize),
}

/// Position-error summary over one trajectory. Net RMSE is the
/// root-sum-square of the per-axis RMSEs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryError {
    pub per_step: Vec<f64>,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub net_rmse: f64,
    pub max_error: f64,
}

/// A timestamped planar sample `(t, x, y)`.
pub type TrackPoint = (f64, f64, f64);

/// Linearly interpolates `(t, x, y)` samples onto the given times.
/// Times outside the track clamp to the endpoints.
pub fn resample_track(track: &[TrackPoint], times: &[f64]) -> Vec<TrackPoint> {
    assert!(!track.is_empty(), "cannot resample an empty track");
    let mut out = Vec::with_capacity(times.len());
    let mut cursor = 0usize;
    for &t in times {
        while cursor + 1 < track.len() && track[cursor + 1].0 < t {
            cursor += 1;
        }
        let (t0, x0, y0) = track[cursor];
        let point = if t <= t0 || cursor + 1 == track.len() {
            (t, x0, y0)
        } else {
            let (t1, x1, y1) = track[cursor + 1];
            let alpha = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            (t, x0 + alpha * (x1 - x0), y0 + alpha * (y1 - y0))
        };
        out.push(point);
    }
    out
}

/// RMSE of the estimated track against time-aligned ground truth.
pub fn trajectory_error(
    est: &[TrackPoint],
    truth: &[TrackPoint],
) -> Result<TrajectoryError, MetricsError> {
    if est.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            est: est.len(),
            truth: truth.len(),
        });
    }
    let n = est.len();
    let mut sum_x2 = 0.0;
    let mut sum_y2 = 0.0;
    let mut per_step = Vec::with_capacity(n);
    let mut max_error = 0.0f64;
    for (k, (e, t)) in est.iter().zip(truth).enumerate() {
        if (e.0 - t.0).abs() > 1e-6 {
            return Err(MetricsError::TimeMismatch {
                index: k,
                est: e.0,
                truth: t.0,
            });
        }
        let dx = e.1 - t.1;
        let dy = e.2 - t.2;
        sum_x2 += dx * dx;
        sum_y2 += dy * dy;
        let eucl = dx.hypot(dy);
        per_step.push(eucl);
        max_error = max_error.max(eucl);
    }
    let (rmse_x, rmse_y) = if n == 0 {
        (0.0, 0.0)
    } else {
        ((sum_x2 / n as f64).sqrt(), (sum_y2 / n as f64).sqrt())
    };
    Ok(TrajectoryError {
        per_step,
        rmse_x,
        rmse_y,
        net_rmse: rmse_x.hypot(rmse_y),
        max_error,
    })
}

/// Which terrain attribute a layer stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerrainAttribute {
    Resistance,
    Grade,
}

impl TerrainAttribute {
    fn sample(self, truth: &GroundTruthMap, x: f64, y: f64) -> f64 {
        let (r, s) = truth.sample_ground(x, y);
        match self {
            TerrainAttribute::Resistance => r,
            TerrainAttribute::Grade => s,
        }
    }
}

const VALUE_TOLERANCE: f64 = 1e-9;

/// Per-layer comparison against ground truth sampled at each populated
/// cell's center. Returns `(errors, populated, mask)` where `mask` is
/// row-major with `true` at mispredicted cells.
pub fn layer_error(
    map: &MultiLayerGridMap,
    layer: usize,
    attr: TerrainAttribute,
    truth: &GroundTruthMap,
) -> (u64, u64, Vec<bool>) {
    let mut errors = 0u64;
    let mut total = 0u64;
    let mut mask = vec![false; map.m() * map.n()];
    for j in 0..map.n() {
        for i in 0..map.m() {
            let idx = CellIndex { i, j };
            let cell = map.cell(layer, idx);
            if cell.is_unknown() {
                continue;
            }
            total += 1;
            let (cx, cy) = map.cell_center(idx);
            let expected = attr.sample(truth, cx, cy);
            if (cell.value - expected).abs() > VALUE_TOLERANCE {
                errors += 1;
                mask[j * map.m() + i] = true;
            }
        }
    }
    (errors, total, mask)
}

/// Grid-map error report: error counts, populated total, and rates per
/// layer. `empty` flags a map with no populated cells (J defined as 0).
#[derive(Clone, Debug, PartialEq)]
pub struct MapErrorReport {
    pub e_resistance: u64,
    pub e_grade: u64,
    pub total: u64,
    pub j_resistance: f64,
    pub j_grade: f64,
    pub empty: bool,
}

/// Counts mispredicted cells per layer: a populated cell is wrong when
/// its stored value differs from the ground truth at the cell center.
/// Unknown cells contribute to neither the error count nor the total.
pub fn map_error_rate(
    map: &MultiLayerGridMap,
    truth: &GroundTruthMap,
) -> Result<MapErrorReport, MetricsError> {
    if map.layer_count() < 2 {
        return Err(MetricsError::MissingLayers(map.layer_count()));
    }
    let (e_r, total_r, _) = layer_error(map, RESISTANCE_LAYER, TerrainAttribute::Resistance, truth);
    let (e_s, total_s, _) = layer_error(map, GRADE_LAYER, TerrainAttribute::Grade, truth);
    debug_assert_eq!(total_r, total_s, "layers are written together");
    let total = total_r;
    let rate = |e: u64| if total == 0 { 0.0 } else { e as f64 / total as f64 };
    Ok(MapErrorReport {
        e_resistance: e_r,
        e_grade: e_s,
        total,
        j_resistance: rate(e_r),
        j_grade: rate(e_s),
        empty: total == 0,
    })
}

/// Boolean mispredict grids for both layers, exportable as PGM masks
/// (255 marks a wrong cell).
#[derive(Clone, Debug)]
pub struct MispredictMask {
    pub m: usize,
    pub n: usize,
    pub resistance: Vec<bool>,
    pub grade: Vec<bool>,
}

impl MispredictMask {
    pub fn count(&self, attr: TerrainAttribute) -> u64 {
        let mask = match attr {
            TerrainAttribute::Resistance => &self.resistance,
            TerrainAttribute::Grade => &self.grade,
        };
        mask.iter().filter(|b| **b).count() as u64
    }

    pub fn write_pgm<W: Write>(&self, attr: TerrainAttribute, mut w: W) -> io::Result<()> {
        let mask = match attr {
            TerrainAttribute::Resistance => &self.resistance,
            TerrainAttribute::Grade => &self.grade,
        };
        write!(w, "P5\n{} {}\n255\n", self.m, self.n)?;
        let mut row = vec![0u8; self.m];
        for j in 0..self.n {
            for i in 0..self.m {
                row[i] = if mask[j * self.m + i] { 255 } else { 0 };
            }
            w.write_all(&row)?;
        }
        Ok(())
    }
}

pub fn mispredict_mask(
    map: &MultiLayerGridMap,
    truth: &GroundTruthMap,
) -> Result<MispredictMask, MetricsError> {
    if map.layer_count() < 2 {
        return Err(MetricsError::MissingLayers(map.layer_count()));
    }
    let (_, _, resistance) =
        layer_error(map, RESISTANCE_LAYER, TerrainAttribute::Resistance, truth);
    let (_, _, grade) = layer_error(map, GRADE_LAYER, TerrainAttribute::Grade, truth);
    Ok(MispredictMask {
        m: map.m(),
        n: map.n(),
        resistance,
        grade,
    })
}

/// One (group, seed) evaluation feeding the study summary.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSeedOutcome {
    pub group_id: u32,
    pub filter: String,
    pub gps_count: usize,
    pub imu_count: usize,
    pub encoder: bool,
    pub seed: u64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub net_rmse: f64,
    pub max_error: f64,
    pub j_resistance: f64,
    pub j_grade: f64,
}

/// Aggregated summary row for one sensor-configuration group.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub group_id: u32,
    pub filter: String,
    pub gps_count: usize,
    pub imu_count: usize,
    pub encoder: bool,
    pub seed_count: usize,
    pub rmse_x_mean: f64,
    pub rmse_y_mean: f64,
    pub net_rmse_mean: f64,
    pub net_rmse_std: f64,
    pub max_err_mean: f64,
    pub j_resistance: f64,
    pub j_grade: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Folds per-seed outcomes into one row per group (ordered by group id):
/// means over seeds, plus the sample standard deviation of net RMSE.
pub fn summarize_study(outcomes: &[GroupSeedOutcome]) -> Vec<StudyRow> {
    let mut group_ids: Vec<u32> = outcomes.iter().map(|o| o.group_id).collect();
    group_ids.sort_unstable();
    group_ids.dedup();

    let mut rows = Vec::with_capacity(group_ids.len());
    for gid in group_ids {
        let group: Vec<&GroupSeedOutcome> =
            outcomes.iter().filter(|o| o.group_id == gid).collect();
        let k = group.len();
        let net_mean = mean(group.iter().map(|o| o.net_rmse));
        let net_std = if k <= 1 {
            0.0
        } else {
            (group
                .iter()
                .map(|o| (o.net_rmse - net_mean).powi(2))
                .sum::<f64>()
                / (k - 1) as f64)
                .sqrt()
        };
        let first = group[0];
        rows.push(StudyRow {
            group_id: gid,
            filter: first.filter.clone(),
            gps_count: first.gps_count,
            imu_count: first.imu_count,
            encoder: first.encoder,
            seed_count: k,
            rmse_x_mean: mean(group.iter().map(|o| o.rmse_x)),
            rmse_y_mean: mean(group.iter().map(|o| o.rmse_y)),
            net_rmse_mean: net_mean,
            net_rmse_std: net_std,
            max_err_mean: mean(group.iter().map(|o| o.max_error)),
            j_resistance: mean(group.iter().map(|o| o.j_resistance)),
            j_grade: mean(group.iter().map(|o| o.j_grade)),
        });
    }
    rows
}

pub const SUMMARY_HEADER: &str = "group,filter,gps_count,imu_count,encoder,seed_count,\
rmse_x_mean,rmse_y_mean,net_rmse_mean,net_rmse_std,max_err_mean,J_r,J_s";

pub fn write_summary_csv<W: Write>(rows: &[StudyRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.group_id,
            r.filter,
            r.gps_count,
            r.imu_count,
            u8::from(r.encoder),
            r.seed_count,
            r.rmse_x_mean,
            r.rmse_y_mean,
            r.net_rmse_mean,
            r.net_rmse_std,
            r.max_err_mean,
            r.j_resistance,
            r.j_grade,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Rect;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identical_tracks_have_zero_error() {
        let track: Vec<TrackPoint> = (0..50).map(|k| (k as f64, k as f64, 0.5)).collect();
        let err = trajectory_error(&track, &track).unwrap();
        assert_eq!(err.rmse_x, 0.0);
        assert_eq!(err.rmse_y, 0.0);
        assert_eq!(err.net_rmse, 0.0);
        assert_eq!(err.max_error, 0.0);
        assert!(err.per_step.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn constant_offset_gives_that_rmse() {
        let truth: Vec<TrackPoint> = (0..50).map(|k| (k as f64, k as f64, 2.0)).collect();
        let est: Vec<TrackPoint> = truth.iter().map(|(t, x, y)| (*t, x + 1.0, *y)).collect();
        let err = trajectory_error(&est, &truth).unwrap();
        assert_relative_eq!(err.rmse_x, 1.0, epsilon = 1e-12);
        assert_eq!(err.rmse_y, 0.0);
        assert_relative_eq!(err.net_rmse, 1.0, epsilon = 1e-12);
        assert_relative_eq!(err.max_error, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn net_rmse_reproduces_published_pair() {
        // offsets chosen so rmse_x = 1.093 and rmse_y = 1.330 exactly;
        // their root-sum-square lands within 5e-4 of the published 1.7217
        let truth: Vec<TrackPoint> = (0..100).map(|k| (k as f64, 0.0, 0.0)).collect();
        let est: Vec<TrackPoint> = truth.iter().map(|(t, _, _)| (*t, 1.093, 1.330)).collect();
        let err = trajectory_error(&est, &truth).unwrap();
        assert_relative_eq!(err.rmse_x, 1.093, epsilon = 1e-12);
        assert_relative_eq!(err.rmse_y, 1.330, epsilon = 1e-12);
        assert!((err.net_rmse - 1.7217).abs() < 5e-4, "net {}", err.net_rmse);
    }

    #[test]
    fn length_and_time_mismatches_error() {
        let a: Vec<TrackPoint> = vec![(0.0, 0.0, 0.0)];
        let b: Vec<TrackPoint> = vec![(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)];
        assert!(matches!(
            trajectory_error(&a, &b),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let c: Vec<TrackPoint> = vec![(0.5, 0.0, 0.0)];
        assert!(matches!(
            trajectory_error(&a, &c),
            Err(MetricsError::TimeMismatch { .. })
        ));
    }

    #[test]
    fn resampling_interpolates_linearly() {
        let track: Vec<TrackPoint> = vec![(0.0, 0.0, 0.0), (2.0, 4.0, -2.0)];
        let out = resample_track(&track, &[-1.0, 0.0, 0.5, 2.0, 3.0]);
        assert_eq!(out[0], (-1.0, 0.0, 0.0)); // clamped to the start
        assert_eq!(out[1], (0.0, 0.0, 0.0));
        assert_eq!(out[2], (0.5, 1.0, -0.5));
        assert_eq!(out[3], (2.0, 4.0, -2.0));
        assert_eq!(out[4], (3.0, 4.0, -2.0)); // clamped to the end
    }

    proptest! {
        #[test]
        fn net_rmse_bounds(offsets in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..80)) {
            let truth: Vec<TrackPoint> = (0..offsets.len()).map(|k| (k as f64, 0.0, 0.0)).collect();
            let est: Vec<TrackPoint> = offsets.iter().zip(&truth)
                .map(|((dx, dy), (t, x, y))| (*t, x + dx, y + dy)).collect();
            let err = trajectory_error(&est, &truth).unwrap();
            let hi = err.rmse_x.max(err.rmse_y);
            prop_assert!(err.net_rmse <= 2f64.sqrt() * hi + 1e-12);
            prop_assert!(err.net_rmse >= hi - 1e-12);
        }
    }

    fn uniform_world() -> GroundTruthMap {
        GroundTruthMap::new(
            vec![],
            vec![],
            0.05,
            0.0,
            Rect::new(0.0, 0.0, 3.0, 3.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn correct_map_scores_zero() {
        let truth = uniform_world();
        let mut map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        for k in 0..3 {
            map.record_cell(k as f64 + 0.5, 1.5, 0.05, 0.0);
        }
        let report = map_error_rate(&map, &truth).unwrap();
        assert_eq!(report.e_resistance, 0);
        assert_eq!(report.e_grade, 0);
        assert_eq!(report.total, 3);
        assert_eq!(report.j_resistance, 0.0);
        assert!(!report.empty);
    }

    #[test]
    fn one_wrong_cell_of_five_scores_point_two() {
        let truth = uniform_world();
        let mut map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        // five populated cells; one carries a wrong resistance value
        map.record_cell(0.5, 0.5, 0.05, 0.0);
        map.record_cell(1.5, 0.5, 0.05, 0.0);
        map.record_cell(2.5, 0.5, 0.05, 0.0);
        map.record_cell(0.5, 1.5, 0.05, 0.0);
        map.record_cell(1.5, 1.5, 0.25, 0.0);
        let report = map_error_rate(&map, &truth).unwrap();
        assert_eq!(report.e_resistance, 1);
        assert_eq!(report.total, 5);
        assert_relative_eq!(report.j_resistance, 0.2, epsilon = 1e-12);
        assert_eq!(report.e_grade, 0);

        let mask = mispredict_mask(&map, &truth).unwrap();
        assert_eq!(mask.count(TerrainAttribute::Resistance), 1);
        assert!(mask.resistance[3 + 1]);
        assert_eq!(mask.count(TerrainAttribute::Grade), 0);
    }

    #[test]
    fn empty_map_scores_zero_with_flag() {
        let truth = uniform_world();
        let map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        let report = map_error_rate(&map, &truth).unwrap();
        assert_eq!(report.total, 0);
        assert_eq!(report.j_resistance, 0.0);
        assert_eq!(report.j_grade, 0.0);
        assert!(report.empty);
    }

    #[test]
    fn tolerance_ignores_rounding_noise() {
        let truth = uniform_world();
        let mut map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        map.record_cell(0.5, 0.5, 0.05 + 1e-12, 0.0);
        let report = map_error_rate(&map, &truth).unwrap();
        assert_eq!(report.e_resistance, 0);
    }

    #[test]
    fn mask_pgm_writes_255_for_errors() {
        let truth = uniform_world();
        let mut map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        map.record_cell(0.5, 0.5, 0.9, 0.0);
        let mask = mispredict_mask(&map, &truth).unwrap();
        let mut out = Vec::new();
        mask.write_pgm(TerrainAttribute::Resistance, &mut out).unwrap();
        let header = b"P5\n3 3\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(out[header.len()], 255);
        assert!(out[header.len() + 1..].iter().all(|b| *b == 0));
    }

    fn outcome(gid: u32, seed: u64, net: f64) -> GroupSeedOutcome {
        GroupSeedOutcome {
            group_id: gid,
            filter: "ukf".into(),
            gps_count: 2,
            imu_count: 1,
            encoder: true,
            seed,
            rmse_x: net / 2.0,
            rmse_y: net / 2.0,
            net_rmse: net,
            max_error: net * 2.0,
            j_resistance: 0.01,
            j_grade: 0.012,
        }
    }

    #[test]
    fn summary_single_group_echoes_inputs() {
        let rows = summarize_study(&[outcome(13, 7, 1.7)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group_id, 13);
        assert_eq!(rows[0].seed_count, 1);
        assert_relative_eq!(rows[0].net_rmse_mean, 1.7);
        assert_eq!(rows[0].net_rmse_std, 0.0);
    }

    #[test]
    fn summary_orders_groups_and_zeroes_identical_seed_std() {
        let mut outcomes = Vec::new();
        for gid in (1..=16).rev() {
            outcomes.push(outcome(gid, 1, 2.0));
            outcomes.push(outcome(gid, 2, 2.0));
        }
        let rows = summarize_study(&outcomes);
        assert_eq!(rows.len(), 16);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.group_id, k as u32 + 1);
            assert_eq!(row.net_rmse_std, 0.0);
            assert_eq!(row.seed_count, 2);
        }
    }

    #[test]
    fn summary_csv_header_is_pinned() {
        let rows = summarize_study(&[outcome(1, 1, 1.0)]);
        let mut out = Vec::new();
        write_summary_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            "group,filter,gps_count,imu_count,encoder,seed_count,rmse_x_mean,rmse_y_mean,net_rmse_mean,net_rmse_std,max_err_mean,J_r,J_s"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("1,ukf,2,1,1,1,"));
    }

    #[test]
    fn clearing_cells_never_increases_errors() {
        let truth = uniform_world();
        let mut map = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        map.record_cell(0.5, 0.5, 0.9, 0.0); // wrong
        map.record_cell(1.5, 0.5, 0.05, 0.0); // right
        let before = map_error_rate(&map, &truth).unwrap();
        // rebuild without the wrong cell: reverting population cannot
        // increase the error count
        let mut cleared = MultiLayerGridMap::covering(&truth.extent, 1.0).unwrap();
        cleared.record_cell(1.5, 0.5, 0.05, 0.0);
        let after = map_error_rate(&cleared, &truth).unwrap();
        assert!(after.e_resistance <= before.e_resistance);
        assert!(after.total < before.total);
    }
}
