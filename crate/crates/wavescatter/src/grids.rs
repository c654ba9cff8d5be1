//! Grid and field containers: uniform radial grids, cubic 3D grids, Cauchy
//! data pairs, space-time fields sampled on solver steps, and solved
//! trajectories with derived time derivatives.

use crate::{Error, Result};

/// Uniform radial grid on [0, r_max] (or [Δr, r_max] when the origin node
/// is excluded) with spacing Δr = r_max / n_cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    r_max: f64,
    n_cells: usize,
    include_origin: bool,
}

impl RadialGrid {
    pub fn new(r_max: f64, n_cells: usize, include_origin: bool) -> Result<Self> {
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::Argument(format!("r_max must be positive, got {r_max}")));
        }
        if n_cells == 0 {
            return Err(Error::Argument("radial grid needs at least one cell".into()));
        }
        Ok(Self {
            r_max,
            n_cells,
            include_origin,
        })
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn dr(&self) -> f64 {
        self.r_max / self.n_cells as f64
    }

    pub fn includes_origin(&self) -> bool {
        self.include_origin
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        if self.include_origin {
            self.n_cells + 1
        } else {
            self.n_cells
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Radius of node `i`.
    pub fn node(&self, i: usize) -> f64 {
        let off = if self.include_origin { 0 } else { 1 };
        (i + off) as f64 * self.dr()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// Linear interpolation of nodal values at radius `r`, clamped to the
    /// grid range.
    pub fn sample(&self, values: &[f64], r: f64) -> f64 {
        let first = if self.include_origin { 0.0 } else { self.dr() };
        crate::util::lerp_uniform(values, first, self.dr(), r)
    }

    /// Index of the node nearest to `r`, if `r` lands on a node within
    /// 1e-9·Δr.
    pub fn node_index(&self, r: f64) -> Option<usize> {
        let off = if self.include_origin { 0.0 } else { 1.0 };
        let k = r / self.dr() - off;
        let i = k.round();
        if (k - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    fn check_field(&self, values: &[f64], what: &str) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Argument(format!(
                "{what} has {} samples but the grid has {} nodes",
                values.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Uniform cubic grid on [-L, L]³ with n cells (n+1 nodes) per axis and
/// spacing h = 2L/n.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    half_width: f64,
    n_cells: usize,
}

impl Grid3D {
    pub fn new(half_width: f64, n_cells: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Argument(format!("half width must be positive, got {half_width}")));
        }
        if n_cells < 2 {
            return Err(Error::Argument("3D grid needs at least two cells per axis".into()));
        }
        Ok(Self { half_width, n_cells })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n_cells as f64
    }

    /// Nodes per axis.
    pub fn nodes_per_axis(&self) -> usize {
        self.n_cells + 1
    }

    /// Total nodes.
    pub fn len(&self) -> usize {
        self.nodes_per_axis().pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let np = self.nodes_per_axis();
        (i * np + j) * np + k
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let np = self.nodes_per_axis();
        let k = flat % np;
        let j = (flat / np) % np;
        let i = flat / (np * np);
        [self.axis_coord(i), self.axis_coord(j), self.axis_coord(k)]
    }

    /// Fill a flat field by evaluating `f` at every node.
    pub fn tabulate(&self, f: impl Fn(f64, f64, f64) -> f64 + Sync) -> Vec<f64> {
        let np = self.nodes_per_axis();
        let mut out = vec![0.0; self.len()];
        for i in 0..np {
            let x = self.axis_coord(i);
            for j in 0..np {
                let y = self.axis_coord(j);
                let row = (i * np + j) * np;
                for k in 0..np {
                    out[row + k] = f(x, y, self.axis_coord(k));
                }
            }
        }
        out
    }

    /// Trilinear interpolation at a point, clamped to the cube.
    pub fn sample(&self, values: &[f64], p: [f64; 3]) -> f64 {
        let np = self.nodes_per_axis();
        let h = self.h();
        let mut cell = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let x = ((p[a] + self.half_width) / h).clamp(0.0, (np - 1) as f64);
            let i = (x.floor() as usize).min(np - 2);
            cell[a] = i;
            frac[a] = x - i as f64;
        }
        let (i, j, k) = (cell[0], cell[1], cell[2]);
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let mut acc = 0.0;
        for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
            for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
                    acc += wx * wy * wz * values[self.idx(i + di, j + dj, k + dk)];
                }
            }
        }
        acc
    }
}

/// A pair (φ, ψ) of spatial fields at one time; layout (radial or flat 3D)
/// is fixed by the grid it is used with.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyData {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl CauchyData {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if phi.len() != psi.len() {
            return Err(Error::Argument(format!(
                "phi has {} samples, psi has {}",
                phi.len(),
                psi.len()
            )));
        }
        if phi.iter().chain(psi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("Cauchy data must be finite".into()));
        }
        Ok(Self { phi, psi })
    }

    pub fn zero(len: usize) -> Self {
        Self {
            phi: vec![0.0; len],
            psi: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Sample a pair of radial profiles on the grid nodes.
    pub fn radial(
        grid: &RadialGrid,
        phi: impl Fn(f64) -> f64,
        psi: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        Self::new(
            grid.nodes().map(&phi).collect(),
            grid.nodes().map(&psi).collect(),
        )
    }

    pub(crate) fn check_radial(&self, grid: &RadialGrid) -> Result<()> {
        grid.check_field(&self.phi, "phi")?;
        grid.check_field(&self.psi, "psi")
    }

    pub(crate) fn check_cube(&self, grid: &Grid3D) -> Result<()> {
        if self.phi.len() != grid.len() {
            return Err(Error::Argument(format!(
                "data has {} samples but the cube has {} nodes",
                self.phi.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

/// A field sampled at every solver step on a radial grid; used for
/// potentials and forcing terms that must align with a companion solve.
#[derive(Debug, Clone)]
pub struct SpacetimeField {
    pub t0: f64,
    pub dt: f64,
    /// values[n][i] at time t0 + n·dt, node i.
    pub values: Vec<Vec<f64>>,
}

impl SpacetimeField {
    pub fn zeros(t0: f64, dt: f64, n_steps: usize, n_nodes: usize) -> Self {
        Self {
            t0,
            dt,
            values: vec![vec![0.0; n_nodes]; n_steps + 1],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub(crate) fn check_alignment(&self, t0: f64, dt: f64, n_steps: usize, n_nodes: usize) -> Result<()> {
        let scale = dt.abs().max(1.0);
        if (self.t0 - t0).abs() > 1e-9 * scale || (self.dt - dt).abs() > 1e-12 * scale {
            return Err(Error::Argument(format!(
                "space-time field timeline (t0 = {}, dt = {}) does not match the solve (t0 = {t0}, dt = {dt})",
                self.t0, self.dt
            )));
        }
        if self.values.len() <= n_steps {
            return Err(Error::Argument(format!(
                "space-time field has {} steps, solve needs {}",
                self.values.len().saturating_sub(1),
                n_steps
            )));
        }
        if self.values.iter().any(|row| row.len() != n_nodes) {
            return Err(Error::Argument("space-time field node count mismatch".into()));
        }
        Ok(())
    }
}

/// A solved radial trajectory: u(t, r) at every step. The time derivative
/// is a derived quantity, reconstructed from neighboring steps with a
/// fourth-order stencil in the interior.
#[derive(Debug, Clone)]
pub struct SpacetimeTrajectory {
    grid: RadialGrid,
    t0: f64,
    dt: f64,
    steps: Vec<Vec<f64>>,
    /// Set if the support reached the outer boundary during the solve.
    pub truncated: bool,
}

impl SpacetimeTrajectory {
    pub(crate) fn from_steps(
        grid: RadialGrid,
        t0: f64,
        dt: f64,
        steps: Vec<Vec<f64>>,
        truncated: bool,
    ) -> Self {
        assert!(steps.len() >= 2, "a trajectory needs at least two steps");
        Self {
            grid,
            t0,
            dt,
            steps,
            truncated,
        }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.n_steps())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps.len()).map(move |n| self.time(n))
    }

    /// u at step n.
    pub fn u_at(&self, n: usize) -> &[f64] {
        &self.steps[n]
    }

    /// ∂ₜu at step n: fourth-order centered differences in the interior,
    /// falling back to lower-order one-sided stencils near the ends.
    pub fn ut_at(&self, n: usize) -> Vec<f64> {
        let m = self.steps.len();
        let dt = self.dt;
        let node_count = self.steps[0].len();
        let mut out = vec![0.0; node_count];
        for i in 0..node_count {
            out[i] = if n >= 2 && n + 2 < m {
                (-self.steps[n + 2][i] + 8.0 * self.steps[n + 1][i] - 8.0 * self.steps[n - 1][i]
                    + self.steps[n - 2][i])
                    / (12.0 * dt)
            } else if n >= 1 && n + 1 < m {
                (self.steps[n + 1][i] - self.steps[n - 1][i]) / (2.0 * dt)
            } else if n == 0 {
                (-3.0 * self.steps[0][i] + 4.0 * self.steps[1][i] - self.steps[2][i]) / (2.0 * dt)
            } else {
                (3.0 * self.steps[n][i] - 4.0 * self.steps[n - 1][i] + self.steps[n - 2][i])
                    / (2.0 * dt)
            };
        }
        out
    }

    /// Snapshot (u, ∂ₜu) at step n.
    pub fn state(&self, n: usize) -> CauchyData {
        CauchyData {
            phi: self.steps[n].clone(),
            psi: self.ut_at(n),
        }
    }

    /// Step index and fraction for a time inside the solved window.
    pub(crate) fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let x = (t - self.t0) / self.dt;
        if x < -1e-9 || x > self.n_steps() as f64 + 1e-9 {
            return Err(Error::Argument(format!(
                "time {t} outside the solved window [{}, {}]",
                self.t0,
                self.end_time()
            )));
        }
        let x = x.clamp(0.0, self.n_steps() as f64);
        let n = (x.floor() as usize).min(self.n_steps() - 1);
        Ok((n, x - n as f64))
    }

    /// r·∂ₜu at radius `r` (a grid node or interpolated) and time `t`,
    /// cubic in time through four surrounding steps.
    pub fn r_ut(&self, t: f64, r: f64) -> Result<f64> {
        let (n, frac) = self.locate(t)?;
        // Four-point Lagrange stencil n-1..n+2, shifted at the ends.
        let m = self.steps.len();
        let base = n.saturating_sub(1).min(m.saturating_sub(4));
        let x = (n - base) as f64 + frac;
        let mut acc = 0.0;
        for a in 0..4usize {
            let mut lw = 1.0;
            for b in 0..4usize {
                if a != b {
                    lw *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            let ut = self.ut_row_sample(base + a, r);
            acc += lw * ut;
        }
        Ok(acc * r)
    }

    fn ut_row_sample(&self, n: usize, r: f64) -> f64 {
        // ut at one node via the same stencils as ut_at, interpolated in r.
        let m = self.steps.len();
        let dt = self.dt;
        let eval = |step: &[f64]| self.grid.sample(step, r);
        if n >= 2 && n + 2 < m {
            (-eval(&self.steps[n + 2]) + 8.0 * eval(&self.steps[n + 1])
                - 8.0 * eval(&self.steps[n - 1])
                + eval(&self.steps[n - 2]))
                / (12.0 * dt)
        } else if n >= 1 && n + 1 < m {
            (eval(&self.steps[n + 1]) - eval(&self.steps[n - 1])) / (2.0 * dt)
        } else if n == 0 {
            (-3.0 * eval(&self.steps[0]) + 4.0 * eval(&self.steps[1]) - eval(&self.steps[2]))
                / (2.0 * dt)
        } else {
            (3.0 * eval(&self.steps[n]) - 4.0 * eval(&self.steps[n - 1])
                + eval(&self.steps[n - 2]))
                / (2.0 * dt)
        }
    }

    /// Evaluate -f(u) on every step: the forcing that reproduces the
    /// semilinear solution through the linear representation.
    pub fn semilinear_forcing(&self, nl: &crate::nonlinearity::Nonlinearity) -> Result<SpacetimeField> {
        let mut values = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let mut row = Vec::with_capacity(step.len());
            for &u in step {
                row.push(-nl.eval(u, 0)?);
            }
            values.push(row);
        }
        Ok(SpacetimeField {
            t0: self.t0,
            dt: self.dt,
            values,
        })
    }
}
