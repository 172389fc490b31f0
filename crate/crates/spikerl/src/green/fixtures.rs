//! Reference GPU benchmark measurements used as regression fixtures for
//! the GPS-UP metric pipeline: three continuous-control workloads
//! (Ant-v4, Hopper-v4, HalfCheetah-v4), each measured under a PopSAN
//! baseline and two SpikeRL transports (NCCL, MPI).

use crate::green::RunMetrics;

#[derive(Debug, Clone, Copy)]
pub struct ReferenceRun {
    pub label: &'static str,
    pub hours: f64,
    pub energy_kwh: f64,
    /// Average power as recorded (kW); consistent with energy/hours to
    /// within rounding of the recorded values.
    pub avg_power_kw: f64,
}

impl ReferenceRun {
    /// Metrics from the recorded time and power columns (the inputs the
    /// ratio calculations were made from).
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            label: self.label.to_string(),
            wall_time_s: self.hours * 3600.0,
            energy_kwh: self.energy_kwh,
            avg_power_kw: self.avg_power_kw,
        }
    }
}

/// One comparison row: candidate over baseline with the expected
/// two-decimal Speedup/Powerup/Greenup cells.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceComparison {
    pub label: &'static str,
    /// Index of the candidate run within the table's `runs`.
    pub candidate: usize,
    /// Index of the baseline run.
    pub baseline: usize,
    pub speedup: &'static str,
    pub powerup: &'static str,
    pub greenup: &'static str,
    /// True for the one recorded cell that disagrees with its own time
    /// columns; see ANT_SPEEDUP_DISCREPANCY.
    pub speedup_note: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceTable {
    pub name: &'static str,
    /// [baseline PopSAN, SpikeRL (NCCL), SpikeRL (MPI)].
    pub runs: [ReferenceRun; 3],
    pub comparisons: [ReferenceComparison; 3],
    /// True when the over-baseline rows sit in the bottom-right
    /// (faster and lower power) zone; false for top-right (speed-driven).
    pub bottom_right_green: bool,
}

/// The recorded speedup for the Ant MPI-over-PopSAN row is 1.84, but the
/// recorded times give 11.92 / 6.46 = 1.8452, which rounds to 1.85 at two
/// decimals. The recorded greenup (1.24) matches the unrounded ratio
/// 1.8452 / 1.4904 = 1.2380, so the 1.84 cell is a presentation slip in
/// the source sheet; the time-derived value is used here.
pub const ANT_SPEEDUP_DISCREPANCY: (&str, &str) = ("1.84", "1.85");

/// The recorded Ant carbon reduction is 23.5%, but the recorded energies
/// (18.70 -> 14.40 kWh) give 22.99%. The energy-derived figure is the one
/// reports produce; the recorded figure is not reconstructible from the
/// recorded data and is kept here only as documentation.
pub const ANT_CARBON_REDUCTION_RECORDED_PCT: f64 = 23.5;
pub const ANT_CARBON_REDUCTION_DERIVED_PCT: f64 = 22.99;

pub const ANT: ReferenceTable = ReferenceTable {
    name: "ant-v4",
    runs: [
        ReferenceRun {
            label: "popsan",
            hours: 11.92,
            energy_kwh: 18.70,
            avg_power_kw: 1.57,
        },
        ReferenceRun {
            label: "spikerl-nccl",
            hours: 6.00,
            energy_kwh: 14.40,
            avg_power_kw: 2.40,
        },
        ReferenceRun {
            label: "spikerl-mpi",
            hours: 6.46,
            energy_kwh: 15.11,
            avg_power_kw: 2.34,
        },
    ],
    comparisons: [
        ReferenceComparison {
            label: "nccl-over-popsan",
            candidate: 1,
            baseline: 0,
            speedup: "1.99",
            powerup: "1.53",
            greenup: "1.30",
            speedup_note: false,
        },
        ReferenceComparison {
            label: "mpi-over-popsan",
            candidate: 2,
            baseline: 0,
            speedup: "1.85",
            powerup: "1.49",
            greenup: "1.24",
            speedup_note: true,
        },
        ReferenceComparison {
            label: "nccl-over-mpi",
            candidate: 1,
            baseline: 2,
            speedup: "1.08",
            powerup: "1.03",
            greenup: "1.05",
            speedup_note: false,
        },
    ],
    bottom_right_green: false,
};

pub const HOPPER: ReferenceTable = ReferenceTable {
    name: "hopper-v4",
    runs: [
        ReferenceRun {
            label: "popsan",
            hours: 8.52,
            energy_kwh: 18.93,
            avg_power_kw: 2.22,
        },
        ReferenceRun {
            label: "spikerl-nccl",
            hours: 6.57,
            energy_kwh: 13.63,
            avg_power_kw: 2.07,
        },
        ReferenceRun {
            label: "spikerl-mpi",
            hours: 6.22,
            energy_kwh: 13.45,
            avg_power_kw: 2.16,
        },
    ],
    comparisons: [
        ReferenceComparison {
            label: "nccl-over-popsan",
            candidate: 1,
            baseline: 0,
            speedup: "1.30",
            powerup: "0.93",
            greenup: "1.39",
            speedup_note: false,
        },
        ReferenceComparison {
            label: "mpi-over-popsan",
            candidate: 2,
            baseline: 0,
            speedup: "1.37",
            powerup: "0.97",
            greenup: "1.41",
            speedup_note: false,
        },
        ReferenceComparison {
            label: "nccl-over-mpi",
            candidate: 1,
            baseline: 2,
            speedup: "0.95",
            powerup: "0.96",
            greenup: "0.99",
            speedup_note: false,
        },
    ],
    bottom_right_green: true,
};

pub const HALFCHEETAH: ReferenceTable = ReferenceTable {
    name: "halfcheetah-v4",
    runs: [
        ReferenceRun {
            label: "popsan",
            hours: 9.09,
            energy_kwh: 19.73,
            avg_power_kw: 2.17,
        },
        ReferenceRun {
            label: "spikerl-nccl",
            hours: 6.14,
            energy_kwh: 12.99,
            avg_power_kw: 2.12,
        },
        ReferenceRun {
            label: "spikerl-mpi",
            hours: 6.43,
            energy_kwh: 13.44,
            avg_power_kw: 2.09,
        },
    ],
    comparisons: [
        ReferenceComparison {
            label: "nccl-over-popsan",
            candidate: 1,
            baseline: 0,
            speedup: "1.48",
            powerup: "0.98",
            greenup: "1.52",
            speedup_note: false,
        },
        ReferenceComparison {
            label: "mpi-over-popsan",
            candidate: 2,
            baseline: 0,
            speedup: "1.41",
            powerup: "0.96",
            greenup: "1.47",
            speedup_note: false,
        },
        ReferenceComparison {
            label: "nccl-over-mpi",
            candidate: 1,
            baseline: 2,
            speedup: "1.05",
            powerup: "1.01",
            greenup: "1.03",
            speedup_note: false,
        },
    ],
    bottom_right_green: true,
};

pub const ALL_TABLES: [&ReferenceTable; 3] = [&ANT, &HOPPER, &HALFCHEETAH];
