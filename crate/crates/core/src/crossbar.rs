//! Passive memristor crossbar.
//!
//! Columns are held at virtual ground by the neuron opamps, so the column
//! current is the exact sum of the device currents on that column and there
//! are no sneak paths. Line resistance is zero.
//!
//! Writes use the V/2 scheme: the selected cell sees the full pulse, the
//! other cells on its row and column see half of it, everything else sees 0.

use std::fmt;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device::{self, check_read, Defect, DeviceSpec, MemristorState};
use crate::grid::Grid;
use crate::rng::{self, stream, SimRng};
use crate::{Error, Result};

/// Default read bias for maps and verify reads.
pub const DEFAULT_READ_VOLTAGE: f64 = 0.2;

/// Multiplicative Gaussian read noise, applied per device term of a VMM.
#[derive(Clone, Debug)]
pub struct ReadNoise {
    sigma: f64,
    dist: Option<(Normal<f64>, SimRng)>,
}

impl ReadNoise {
    pub fn off() -> Self {
        ReadNoise {
            sigma: 0.0,
            dist: None,
        }
    }

    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "read noise sigma must be >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(ReadNoise::off());
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked");
        Ok(ReadNoise {
            sigma,
            dist: Some((normal, rng::rng(seed))),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_off(&self) -> bool {
        self.dist.is_none()
    }

    #[inline]
    fn factor(&mut self) -> f64 {
        match &mut self.dist {
            None => 1.0,
            Some((normal, rng)) => 1.0 + normal.sample(rng),
        }
    }
}

/// Cells of each line sorted by threshold, so a half-select write only has to
/// visit the devices whose threshold is below |v|/2.
#[derive(Clone, Debug, Default)]
struct HalfSelectIndex {
    row_set: Vec<Vec<(f64, u32)>>,
    row_reset: Vec<Vec<(f64, u32)>>,
    col_set: Vec<Vec<(f64, u32)>>,
    col_reset: Vec<Vec<(f64, u32)>>,
}

fn sorted_line(iter: impl Iterator<Item = (f64, u32)>) -> Vec<(f64, u32)> {
    let mut v: Vec<_> = iter.collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

#[derive(Clone, Debug)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    cells: Vec<MemristorState>,
    spec: DeviceSpec,
    index: HalfSelectIndex,
}

impl Crossbar {
    /// Builds an array of formed devices, each at `g_min`.
    pub fn build(rows: usize, cols: usize, spec: &DeviceSpec, seed: u64) -> Result<Self> {
        Self::build_with(rows, cols, spec, seed, true)
    }

    /// Builds an array of virgin (unformed) devices.
    pub fn build_virgin(rows: usize, cols: usize, spec: &DeviceSpec, seed: u64) -> Result<Self> {
        Self::build_with(rows, cols, spec, seed, false)
    }

    fn build_with(
        rows: usize,
        cols: usize,
        spec: &DeviceSpec,
        seed: u64,
        formed: bool,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config("crossbar needs at least one row and column"));
        }
        spec.validate()?;
        let cells = (0..rows * cols)
            .map(|k| {
                device::sample_unchecked(spec, rng::derive(seed, stream::DEVICE, k as u64), formed)
            })
            .collect();
        let mut xbar = Crossbar {
            rows,
            cols,
            cells,
            spec: spec.clone(),
            index: HalfSelectIndex::default(),
        };
        xbar.rebuild_index();
        Ok(xbar)
    }

    fn rebuild_index(&mut self) {
        let (rows, cols) = (self.rows, self.cols);
        let cells = &self.cells;
        self.index = HalfSelectIndex {
            row_set: (0..rows)
                .map(|r| sorted_line((0..cols).map(|c| (cells[r * cols + c].v_set, c as u32))))
                .collect(),
            row_reset: (0..rows)
                .map(|r| sorted_line((0..cols).map(|c| (cells[r * cols + c].v_reset, c as u32))))
                .collect(),
            col_set: (0..cols)
                .map(|c| sorted_line((0..rows).map(|r| (cells[r * cols + c].v_set, r as u32))))
                .collect(),
            col_reset: (0..cols)
                .map(|c| sorted_line((0..rows).map(|r| (cells[r * cols + c].v_reset, r as u32))))
                .collect(),
        };
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn device_count(&self) -> usize {
        self.cells.len()
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[MemristorState] {
        &self.cells
    }

    fn check_index(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::Index {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    pub fn cell(&self, row: usize, col: usize) -> &MemristorState {
        &self.cells[row * self.cols + col]
    }

    /// Mutable access for changes that leave the thresholds untouched.
    pub(crate) fn cell_mut(&mut self, row: usize, col: usize) -> &mut MemristorState {
        &mut self.cells[row * self.cols + col]
    }

    /// Replaces one device. The half-select index of its row and column is refreshed.
    pub fn replace_cell(&mut self, row: usize, col: usize, state: MemristorState) -> Result<()> {
        self.check_index(row, col)?;
        self.cells[row * self.cols + col] = state;
        let (rows, cols) = (self.rows, self.cols);
        let cells = &self.cells;
        self.index.row_set[row] =
            sorted_line((0..cols).map(|c| (cells[row * cols + c].v_set, c as u32)));
        self.index.row_reset[row] =
            sorted_line((0..cols).map(|c| (cells[row * cols + c].v_reset, c as u32)));
        self.index.col_set[col] =
            sorted_line((0..rows).map(|r| (cells[r * cols + col].v_set, r as u32)));
        self.index.col_reset[col] =
            sorted_line((0..rows).map(|r| (cells[r * cols + col].v_reset, r as u32)));
        Ok(())
    }

    /// Directly overwrites a programmed conductance, clamped to the device window.
    /// Stuck and unformed devices are left alone. Used for ideal (lossless) imports.
    pub fn force_conductance(&mut self, row: usize, col: usize, g: f64) -> Result<()> {
        self.check_index(row, col)?;
        let cell = &mut self.cells[row * self.cols + col];
        if cell.formed && !cell.is_stuck() {
            cell.g = g.clamp(cell.g_lo, cell.g_hi);
        }
        Ok(())
    }

    /// Stored conductances, S.
    pub fn conductances(&self) -> Grid<f64> {
        Grid::from_vec(self.rows, self.cols, self.cells.iter().map(|c| c.g).collect())
            .expect("dims match")
    }

    pub fn defects(&self) -> Grid<Defect> {
        Grid::from_vec(
            self.rows,
            self.cols,
            self.cells.iter().map(|c| c.defect).collect(),
        )
        .expect("dims match")
    }

    /// Column currents under virtual ground: `I_j = sum_i I(cell[i][j], v_in[i], t)`.
    pub fn vmm_currents(&self, v_in: &[f64], t: f64, noise: &mut ReadNoise) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.vmm_into(v_in, t, noise, &mut out)?;
        Ok(out)
    }

    pub fn vmm_into(
        &self,
        v_in: &[f64],
        t: f64,
        noise: &mut ReadNoise,
        out: &mut [f64],
    ) -> Result<()> {
        if v_in.len() != self.rows {
            return Err(Error::Dimension {
                what: "crossbar input vector",
                expected: self.rows,
                got: v_in.len(),
            });
        }
        if out.len() != self.cols {
            return Err(Error::Dimension {
                what: "crossbar output vector",
                expected: self.cols,
                got: out.len(),
            });
        }
        for &v in v_in {
            check_read(v)?;
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        for (row, &v) in self.cells.chunks_exact(self.cols).zip(v_in) {
            if v == 0.0 {
                continue;
            }
            if noise.is_off() {
                for (acc, cell) in out.iter_mut().zip(row) {
                    *acc += cell.current_unchecked(v, t);
                }
            } else {
                for (acc, cell) in out.iter_mut().zip(row) {
                    *acc += cell.current_unchecked(v, t) * noise.factor();
                }
            }
        }
        Ok(())
    }

    /// Frozen read coefficients at temperature `t` for fast repeated noise-free reads.
    pub fn read_snapshot(&self, t: f64) -> ReadSnapshot {
        let mut lin = Vec::with_capacity(self.cells.len());
        let mut quad = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            let g = c.conductance_at(t);
            lin.push(g);
            quad.push(g * c.kappa);
        }
        ReadSnapshot {
            rows: self.rows,
            cols: self.cols,
            lin,
            quad,
        }
    }

    /// Applies one write pulse at `(row, col)` with V/2 half-selection.
    pub fn write_pulse(&mut self, row: usize, col: usize, v: f64, width: f64) -> Result<()> {
        self.check_index(row, col)?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::PulseWidth(width));
        }
        let cols = self.cols;
        self.cells[row * cols + col].pulse(v, width)?;

        let half = 0.5 * v;
        if half == 0.0 {
            return Ok(());
        }
        let level = half.abs();
        let (row_line, col_line) = if half > 0.0 {
            (&self.index.row_set[row], &self.index.col_set[col])
        } else {
            (&self.index.row_reset[row], &self.index.col_reset[col])
        };
        for &(thr, c) in row_line {
            if thr >= level {
                break;
            }
            let c = c as usize;
            if c != col {
                let cell = &mut self.cells[row * cols + c];
                if cell.formed {
                    cell.pulse_unchecked(half, width);
                }
            }
        }
        for &(thr, r) in col_line {
            if thr >= level {
                break;
            }
            let r = r as usize;
            if r != row {
                let cell = &mut self.cells[r * cols + col];
                if cell.formed {
                    cell.pulse_unchecked(half, width);
                }
            }
        }
        Ok(())
    }

    /// Pins random disjoint subsets of cells stuck-on / stuck-off and returns the
    /// resulting ground-truth map.
    pub fn inject_cell_defects(
        &mut self,
        stuck_on_frac: f64,
        stuck_off_frac: f64,
        seed: u64,
    ) -> Result<DefectMap> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(stuck_on_frac) || !ok(stuck_off_frac) || stuck_on_frac + stuck_off_frac > 1.0 {
            return Err(Error::config(format!(
                "stuck fractions must be in [0, 1] with sum <= 1, got on={stuck_on_frac} off={stuck_off_frac}"
            )));
        }
        let n = self.cells.len();
        let n_on = (stuck_on_frac * n as f64).round() as usize;
        let n_off = ((stuck_off_frac * n as f64).round() as usize).min(n - n_on);
        let mut rng = rng::rng(rng::derive(seed, stream::DEFECTS, 0));
        let picked = index::sample(&mut rng, n, n_on + n_off);
        for (k, cell) in picked.iter().enumerate() {
            let defect = if k < n_on {
                Defect::StuckOn
            } else {
                Defect::StuckOff
            };
            self.cells[cell].make_stuck(defect);
        }
        Ok(DefectMap {
            flags: self.defects(),
            asymmetry: self.asymmetry_model(DEFAULT_READ_VOLTAGE),
        })
    }

    /// Perturbs every device's switching window: `g_lo` and `g_hi` are each
    /// multiplied by `1 + N(0, sigma)`. Models R_ON / R_OFF variation.
    pub fn perturb_bounds(&mut self, sigma: f64, seed: u64) -> Result<()> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config("bound variation sigma must be >= 0"));
        }
        if sigma == 0.0 {
            return Ok(());
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked");
        let mut rng = rng::rng(rng::derive(seed, stream::BOUNDS, 0));
        let floor = 0.1 * self.spec.g_min;
        for cell in &mut self.cells {
            let lo = (cell.g_lo * (1.0 + normal.sample(&mut rng))).max(floor);
            let hi = (cell.g_hi * (1.0 + normal.sample(&mut rng))).max(lo * 1.05);
            cell.g_lo = lo;
            cell.g_hi = hi;
            match cell.defect {
                Defect::StuckOn => cell.g = hi,
                Defect::StuckOff => cell.g = lo,
                Defect::None if cell.formed => cell.g = cell.g.clamp(lo, hi),
                Defect::None => {}
            }
        }
        Ok(())
    }

    fn asymmetry_model(&self, v_read: f64) -> Grid<f64> {
        let t = self.spec.t_ref;
        Grid::from_vec(
            self.rows,
            self.cols,
            self.cells
                .iter()
                .map(|c| asymmetry_percent(c.current_unchecked(v_read, t), c.current_unchecked(-v_read, t)))
                .collect(),
        )
        .expect("dims match")
    }

    /// Reads every cell at `+v_read` and `-v_read` (reference temperature):
    /// conductance = I(+v)/v, asymmetry % = 100 (|I+| - |I-|) / |I+|.
    pub fn measure_maps(&self, v_read: f64, noise: &mut ReadNoise) -> Result<MeasuredMaps> {
        check_read(v_read)?;
        if v_read <= 0.0 {
            return Err(Error::config("v_read must be positive"));
        }
        let t = self.spec.t_ref;
        let mut g = Vec::with_capacity(self.cells.len());
        let mut asym = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            let ip = cell.current_unchecked(v_read, t) * noise.factor();
            let im = cell.current_unchecked(-v_read, t) * noise.factor();
            g.push(ip / v_read);
            asym.push(asymmetry_percent(ip, im));
        }
        Ok(MeasuredMaps {
            conductance: Grid::from_vec(self.rows, self.cols, g)?,
            asymmetry: Grid::from_vec(self.rows, self.cols, asym)?,
        })
    }
}

fn asymmetry_percent(i_plus: f64, i_minus: f64) -> f64 {
    if i_plus == 0.0 {
        0.0
    } else {
        100.0 * (i_plus.abs() - i_minus.abs()) / i_plus.abs()
    }
}

/// Per-read-bias nonlinearity recovered from an asymmetry percentage:
/// `a = 1 - (1 - k v)/(1 + k v)` gives `k v = a / (2 - a)`.
pub fn kappa_from_asymmetry(asymmetry_percent: f64, v_read: f64) -> f64 {
    let a = asymmetry_percent / 100.0;
    a / (2.0 - a) / v_read
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Defect::None => "ok",
            Defect::StuckOn => "stuck_on",
            Defect::StuckOff => "stuck_off",
        })
    }
}

/// Struct-of-arrays copy of a crossbar's read law: `I = lin * v + quad * v^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadSnapshot {
    rows: usize,
    cols: usize,
    lin: Vec<f64>,
    quad: Vec<f64>,
}

impl ReadSnapshot {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column currents; same contract as [`Crossbar::vmm_into`] without noise.
    pub fn vmm_into(&self, v_in: &[f64], out: &mut [f64]) -> Result<()> {
        if v_in.len() != self.rows {
            return Err(Error::Dimension {
                what: "crossbar input vector",
                expected: self.rows,
                got: v_in.len(),
            });
        }
        if out.len() != self.cols {
            return Err(Error::Dimension {
                what: "crossbar output vector",
                expected: self.cols,
                got: out.len(),
            });
        }
        for &v in v_in {
            check_read(v)?;
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        let n = self.cols;
        for (i, &v) in v_in.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let v2 = v * v;
            let lin = &self.lin[i * n..(i + 1) * n];
            let quad = &self.quad[i * n..(i + 1) * n];
            for ((acc, &a), &b) in out.iter_mut().zip(lin).zip(quad) {
                *acc += a * v + b * v2;
            }
        }
        Ok(())
    }
}

/// Ground-truth or diagnosed defect flags plus the asymmetry map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectMap {
    pub flags: Grid<Defect>,
    pub asymmetry: Grid<f64>,
}

impl DefectMap {
    pub fn clean(rows: usize, cols: usize) -> Self {
        DefectMap {
            flags: Grid::filled(rows, cols, Defect::None),
            asymmetry: Grid::filled(rows, cols, 0.0),
        }
    }

    pub fn stuck_cells(&self) -> Vec<(usize, usize)> {
        self.flags
            .indexed()
            .filter(|(_, _, d)| **d != Defect::None)
            .map(|(r, c, _)| (r, c))
            .collect()
    }

    pub fn count(&self, defect: Defect) -> usize {
        self.flags.iter().filter(|d| **d == defect).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMaps {
    pub conductance: Grid<f64>,
    pub asymmetry: Grid<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ideal(rows: usize, cols: usize, seed: u64) -> Crossbar {
        Crossbar::build(rows, cols, &DeviceSpec::ideal(), seed).unwrap()
    }

    /// Naive V/2 write used as an oracle for the indexed implementation.
    fn naive_write(x: &mut Crossbar, row: usize, col: usize, v: f64, width: f64) {
        let cols = x.cols;
        for k in 0..x.cells.len() {
            let (r, c) = (k / cols, k % cols);
            let cell = &mut x.cells[k];
            if r == row && c == col {
                cell.pulse(v, width).unwrap();
            } else if (r == row || c == col) && cell.formed {
                cell.pulse_unchecked(v / 2.0, width);
            }
        }
    }

    #[test]
    fn builds_twenty_by_twenty() {
        let x = Crossbar::build(20, 20, &DeviceSpec::default(), 1).unwrap();
        assert_eq!(x.device_count(), 400);
        let y = Crossbar::build(20, 20, &DeviceSpec::default(), 1).unwrap();
        assert_eq!(x.cells, y.cells);
        assert!(Crossbar::build(0, 3, &DeviceSpec::default(), 1).is_err());
    }

    #[test]
    fn single_cell_array_supports_every_operation() {
        let mut x = ideal(1, 1, 5);
        x.force_conductance(0, 0, 40e-6).unwrap();
        let i = x.vmm_currents(&[0.2], 25.0, &mut ReadNoise::off()).unwrap();
        assert!((i[0] - 8e-6).abs() < 1e-18);
        x.write_pulse(0, 0, 1.4, 1e-6).unwrap();
        assert!(x.cell(0, 0).g > 40e-6);
        let m = x.measure_maps(0.2, &mut ReadNoise::off()).unwrap();
        assert_eq!(m.conductance.dims(), (1, 1));
        let map = x.inject_cell_defects(1.0, 0.0, 3).unwrap();
        assert_eq!(map.count(Defect::StuckOn), 1);
    }

    #[test]
    fn zero_input_gives_zero_current() {
        let x = Crossbar::build(5, 7, &DeviceSpec::default(), 2).unwrap();
        let i = x.vmm_currents(&[0.0; 5], 60.0, &mut ReadNoise::off()).unwrap();
        assert!(i.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn vmm_checks_dimensions_and_read_regime() {
        let x = ideal(3, 2, 1);
        assert!(matches!(
            x.vmm_currents(&[0.1, 0.1], 25.0, &mut ReadNoise::off()),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            x.vmm_currents(&[0.1, 0.9, 0.1], 25.0, &mut ReadNoise::off()),
            Err(Error::ReadRegime { .. })
        ));
    }

    #[test]
    fn vmm_is_homogeneous_for_symmetric_devices() {
        let mut x = ideal(6, 4, 3);
        for r in 0..6 {
            for c in 0..4 {
                x.force_conductance(r, c, (10.0 + 13.0 * r as f64 + 7.0 * c as f64) * 1e-6)
                    .unwrap();
            }
        }
        let v = [0.1, -0.05, 0.2, 0.0, -0.2, 0.15];
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let a = x.vmm_currents(&v, 25.0, &mut ReadNoise::off()).unwrap();
        let b = x.vmm_currents(&v2, 25.0, &mut ReadNoise::off()).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn read_noise_is_seeded() {
        let x = Crossbar::build(8, 8, &DeviceSpec::default(), 4).unwrap();
        let v = [0.2; 8];
        let a = x.vmm_currents(&v, 25.0, &mut ReadNoise::new(0.05, 1).unwrap()).unwrap();
        let b = x.vmm_currents(&v, 25.0, &mut ReadNoise::new(0.05, 1).unwrap()).unwrap();
        let c = x.vmm_currents(&v, 25.0, &mut ReadNoise::new(0.05, 2).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn half_select_spares_strong_neighbours() {
        let mut x = ideal(4, 4, 1);
        let before = x.cells.clone();
        x.write_pulse(1, 2, 1.5, 1e-6).unwrap();
        for (k, (a, b)) in before.iter().zip(&x.cells).enumerate() {
            if k == 4 + 2 {
                assert!(b.g > a.g);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sub_threshold_write_changes_nothing() {
        let mut x = ideal(4, 4, 1);
        let before = x.cells.clone();
        x.write_pulse(0, 0, 0.9, 1e-6).unwrap();
        x.write_pulse(3, 3, -0.9, 1e-6).unwrap();
        assert_eq!(before, x.cells);
    }

    #[test]
    fn weak_half_selected_cell_is_disturbed() {
        let run = |weak: bool| {
            let mut x = ideal(4, 4, 1);
            if weak {
                let mut c = x.cell(1, 3).clone();
                c.v_set = 0.7;
                x.replace_cell(1, 3, c).unwrap();
            }
            x.write_pulse(1, 0, 1.6, 1e-6).unwrap();
            x
        };
        let strong = run(false);
        let weak = run(true);
        assert_eq!(strong.cell(1, 3).g, 10e-6);
        assert!(weak.cell(1, 3).g > 10e-6);
        // the rest of the array is unaffected by the weak cell
        for k in 0..16 {
            if k != 4 + 3 {
                assert_eq!(strong.cells[k].g, weak.cells[k].g);
            }
        }
    }

    #[test]
    fn write_pulse_rejects_bad_indices() {
        let mut x = ideal(2, 2, 1);
        assert!(matches!(
            x.write_pulse(2, 0, 1.0, 1e-6),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn defect_injection_counts() {
        let mut x = Crossbar::build(20, 20, &DeviceSpec::default(), 1).unwrap();
        let clean = x.clone();
        let map = x.inject_cell_defects(0.0, 0.0, 9).unwrap();
        assert_eq!(map.stuck_cells().len(), 0);
        assert_eq!(clean.cells, x.cells);
        let map = x.inject_cell_defects(0.1, 0.0, 9).unwrap();
        assert_eq!(map.count(Defect::StuckOn), 40);
        let mut y = Crossbar::build(20, 20, &DeviceSpec::default(), 1).unwrap();
        let map = y.inject_cell_defects(0.05, 0.05, 9).unwrap();
        assert_eq!(map.count(Defect::StuckOn), 20);
        assert_eq!(map.count(Defect::StuckOff), 20);
        assert!(y.inject_cell_defects(0.7, 0.4, 1).is_err());
        assert!(y.inject_cell_defects(-0.1, 0.0, 1).is_err());
    }

    #[test]
    fn maps_recover_stuck_cells_and_asymmetry() {
        let mut x = Crossbar::build(10, 10, &DeviceSpec::default(), 1).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                x.force_conductance(r, c, 55e-6).unwrap();
            }
        }
        let truth = x.inject_cell_defects(0.1, 0.1, 4).unwrap();
        let m = x.measure_maps(0.2, &mut ReadNoise::off()).unwrap();
        for (r, c, d) in truth.flags.indexed() {
            let cell = x.cell(r, c);
            let g = *m.conductance.get(r, c) / (1.0 + cell.kappa * 0.2);
            match d {
                Defect::StuckOn => assert!((g - cell.g_hi).abs() < 1e-15),
                Defect::StuckOff => assert!((g - cell.g_lo).abs() < 1e-15),
                Defect::None => assert!((g - 55e-6).abs() < 1e-15),
            }
            let k = kappa_from_asymmetry(*m.asymmetry.get(r, c), 0.2);
            assert!((k - cell.kappa).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetry_closed_form() {
        let mut x = ideal(1, 1, 1);
        let mut c = x.cell(0, 0).clone();
        c.kappa = 0.25;
        x.replace_cell(0, 0, c).unwrap();
        let m = x.measure_maps(0.2, &mut ReadNoise::off()).unwrap();
        let expect = 100.0 * (1.0 - 0.95 / 1.05);
        assert!((m.asymmetry.get(0, 0) - expect).abs() < 1e-12);
        assert!((m.asymmetry.get(0, 0) - 9.52).abs() < 0.01);
    }

    #[test]
    fn ideal_conductance_map_is_exact() {
        let mut x = ideal(5, 5, 1);
        for r in 0..5 {
            for c in 0..5 {
                x.force_conductance(r, c, (12.0 + r as f64 * 9.0 + c as f64) * 1e-6)
                    .unwrap();
            }
        }
        let m = x.measure_maps(0.2, &mut ReadNoise::off()).unwrap();
        for (r, c, g) in x.conductances().indexed() {
            assert!((m.conductance.get(r, c) - g).abs() <= 1e-15 * g);
        }
        assert!(m.asymmetry.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn bound_perturbation_keeps_devices_valid() {
        let mut x = Crossbar::build(10, 10, &DeviceSpec::default(), 1).unwrap();
        x.inject_cell_defects(0.1, 0.1, 3).unwrap();
        x.perturb_bounds(0.2, 7).unwrap();
        for c in x.cells() {
            assert!(c.g_lo > 0.0 && c.g_lo < c.g_hi);
            assert!(c.g >= c.g_lo && c.g <= c.g_hi);
            match c.defect {
                Defect::StuckOn => assert_eq!(c.g, c.g_hi),
                Defect::StuckOff => assert_eq!(c.g, c.g_lo),
                Defect::None => {}
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn indexed_write_matches_naive_oracle(
            seed in 0u64..1000,
            pulses in prop::collection::vec((0usize..6, 0usize..5, -2.2f64..2.2), 1..40),
        ) {
            let spec = DeviceSpec { vset_sigma: 0.35, vreset_sigma: 0.35, ..DeviceSpec::default() };
            let mut fast = Crossbar::build(6, 5, &spec, seed).unwrap();
            for r in 0..6 { for c in 0..5 { fast.force_conductance(r, c, 55e-6).unwrap(); } }
            let mut slow = fast.clone();
            for (r, c, v) in pulses {
                fast.write_pulse(r, c, v, 1e-6).unwrap();
                naive_write(&mut slow, r, c, v, 1e-6);
                prop_assert_eq!(&fast.cells, &slow.cells);
            }
        }

        #[test]
        fn writes_touch_only_the_selected_lines(
            seed in 0u64..1000, r in 0usize..7, c in 0usize..9, v in -2.5f64..2.5,
        ) {
            let spec = DeviceSpec { vset_sigma: 0.4, vreset_sigma: 0.4, ..DeviceSpec::default() };
            let mut x = Crossbar::build(7, 9, &spec, seed).unwrap();
            for i in 0..7 { for j in 0..9 { x.force_conductance(i, j, 50e-6).unwrap(); } }
            let before = x.cells.clone();
            x.write_pulse(r, c, v, 1e-6).unwrap();
            let mut touched = 0;
            for k in 0..before.len() {
                let (i, j) = (k / 9, k % 9);
                if before[k] != x.cells[k] {
                    touched += 1;
                    prop_assert!(i == r || j == c);
                }
            }
            prop_assert!(touched <= 7 + 9 - 1);
        }
    }
}
