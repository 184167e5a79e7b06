//! Steady Darcy flow on a rectangle with piecewise-constant conductivity.
//!
//! Solves `-div(kappa grad h) = f` by a conservative cell-centered finite
//! volume scheme. Face conductivities are harmonic means of the two
//! adjacent cells, which keeps fluxes continuous across jumps in `kappa`;
//! Dirichlet walls couple to the boundary value over a half cell. The
//! resulting symmetric positive definite system is solved by a banded
//! Cholesky factorization with a residual check and, when the first solve
//! is not accurate enough, a single step of iterative refinement.
//!
//! Cells are indexed `ix * ny + iy`, matching the row-major grid layout
//! used everywhere else, so the matrix bandwidth equals `ny`.

use crate::forward::{ForwardModel, SmoothedPointObserver};
use crate::grid::GridGeom;
use crate::{Error, Result};

/// Relative residual the linear solve must reach.
const SOLVE_TOL: f64 = 1e-10;

/// Boundary condition on one side of the rectangle.
#[derive(Clone, Debug, PartialEq)]
pub enum SideBc {
    /// Prescribed head, one value per boundary cell along the side.
    Dirichlet(Vec<f64>),
    /// Prescribed inward flux per unit length of boundary.
    Influx(f64),
    /// Impermeable wall.
    NoFlux,
}

impl SideBc {
    /// Dirichlet condition holding one value along the whole side.
    pub fn uniform_head(value: f64, cells: usize) -> Self {
        SideBc::Dirichlet(vec![value; cells])
    }

    fn is_dirichlet(&self) -> bool {
        matches!(self, SideBc::Dirichlet(_))
    }
}

/// Darcy problem geometry, boundary conditions, and source term. The
/// conductivity field is supplied per solve.
#[derive(Clone, Debug)]
pub struct Problem {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    left: SideBc,
    right: SideBc,
    bottom: SideBc,
    top: SideBc,
    recharge: Vec<f64>,
}

impl Problem {
    /// `left`/`right` run along `x = 0` and `x = lx` (their Dirichlet
    /// vectors hold `ny` values); `bottom`/`top` along `y = 0` and
    /// `y = ly` (`nx` values). `recharge` is the source evaluated per cell,
    /// row-major with `x` slowest.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        left: SideBc,
        right: SideBc,
        bottom: SideBc,
        top: SideBc,
        recharge: Vec<f64>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::config("grid must have at least one cell per axis".to_string()));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(Error::config(format!(
                "side lengths must be positive, got {lx} by {ly}"
            )));
        }
        if recharge.len() != nx * ny {
            return Err(Error::shape(format!(
                "recharge has {} entries for a {nx} by {ny} grid",
                recharge.len()
            )));
        }
        if recharge.iter().any(|f| !f.is_finite()) {
            return Err(Error::domain("recharge values must be finite".to_string()));
        }
        for (side, bc, cells) in [
            ("left", &left, ny),
            ("right", &right, ny),
            ("bottom", &bottom, nx),
            ("top", &top, nx),
        ] {
            match bc {
                SideBc::Dirichlet(values) => {
                    if values.len() != cells {
                        return Err(Error::shape(format!(
                            "{side} boundary needs {cells} head values, got {}",
                            values.len()
                        )));
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(Error::domain(format!(
                            "{side} boundary head values must be finite"
                        )));
                    }
                }
                SideBc::Influx(q) => {
                    if !q.is_finite() {
                        return Err(Error::domain(format!(
                            "{side} boundary influx must be finite, got {q}"
                        )));
                    }
                }
                SideBc::NoFlux => {}
            }
        }
        if ![&left, &right, &bottom, &top].iter().any(|bc| bc.is_dirichlet()) {
            return Err(Error::config(
                "at least one side must prescribe the head, otherwise the problem is singular"
                    .to_string(),
            ));
        }
        Ok(Problem {
            nx,
            ny,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
            left,
            right,
            bottom,
            top,
            recharge,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn harmonic(a: f64, b: f64) -> f64 {
        2.0 * a * b / (a + b)
    }

    fn assemble(&self, kappa: &[f64]) -> (Banded, Vec<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        let (hx, hy) = (self.hx, self.hy);
        let n = nx * ny;
        let mut mat = Banded::zeros(n, ny);
        let mut rhs = vec![0.0; n];
        let idx = |ix: usize, iy: usize| ix * ny + iy;

        for ix in 0..nx {
            for iy in 0..ny {
                let c = idx(ix, iy);
                rhs[c] += self.recharge[c] * hx * hy;
                if ix + 1 < nx {
                    let t = Self::harmonic(kappa[c], kappa[idx(ix + 1, iy)]) * hy / hx;
                    mat.add(c, c, t);
                    mat.add(idx(ix + 1, iy), idx(ix + 1, iy), t);
                    mat.add(idx(ix + 1, iy), c, -t);
                }
                if iy + 1 < ny {
                    let t = Self::harmonic(kappa[c], kappa[idx(ix, iy + 1)]) * hx / hy;
                    mat.add(c, c, t);
                    mat.add(idx(ix, iy + 1), idx(ix, iy + 1), t);
                    mat.add(idx(ix, iy + 1), c, -t);
                }
            }
        }

        let mut wall = |bc: &SideBc, cells: &mut dyn Iterator<Item = (usize, usize)>, t_unit: f64, face: f64| {
            match bc {
                SideBc::Dirichlet(values) => {
                    for (b, c) in cells {
                        let t = 2.0 * kappa[c] * t_unit;
                        mat.add(c, c, t);
                        rhs[c] += t * values[b];
                    }
                }
                SideBc::Influx(q) => {
                    for (_, c) in cells {
                        rhs[c] += q * face;
                    }
                }
                SideBc::NoFlux => {}
            }
        };

        wall(&self.left, &mut (0..ny).map(|iy| (iy, idx(0, iy))), hy / hx, hy);
        wall(&self.right, &mut (0..ny).map(|iy| (iy, idx(nx - 1, iy))), hy / hx, hy);
        wall(&self.bottom, &mut (0..nx).map(|ix| (ix, idx(ix, 0))), hx / hy, hx);
        wall(&self.top, &mut (0..nx).map(|ix| (ix, idx(ix, ny - 1))), hx / hy, hx);

        (mat, rhs)
    }

    /// Solves the head field for one conductivity grid.
    pub fn solve(&self, kappa: &[f64]) -> Result<Vec<f64>> {
        if kappa.len() != self.cell_count() {
            return Err(Error::shape(format!(
                "conductivity has {} cells, problem has {}",
                kappa.len(),
                self.cell_count()
            )));
        }
        if kappa.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::domain(
                "conductivity must be positive and finite everywhere".to_string(),
            ));
        }
        let (mat, rhs) = self.assemble(kappa);
        let chol = mat.cholesky()?;
        let mut head = chol.solve(&rhs);

        let norm_b = norm2(&rhs);
        if norm_b == 0.0 {
            return Ok(head);
        }
        let mut residual = mat.residual(&rhs, &head);
        if norm2(&residual) > SOLVE_TOL * norm_b {
            let correction = chol.solve(&residual);
            for (h, e) in head.iter_mut().zip(&correction) {
                *h += e;
            }
            residual = mat.residual(&rhs, &head);
            if norm2(&residual) > SOLVE_TOL * norm_b {
                return Err(Error::numerical(format!(
                    "linear solve stalled at relative residual {:.3e}",
                    norm2(&residual) / norm_b
                )));
            }
        }
        Ok(head)
    }

    /// Net flux leaving the domain through all Dirichlet walls, given the
    /// solved head. Balances the total source and influx exactly for an
    /// exact solve.
    pub fn dirichlet_outflux(&self, kappa: &[f64], head: &[f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let idx = |ix: usize, iy: usize| ix * ny + iy;
        let mut total = 0.0;
        let mut side = |bc: &SideBc, cells: &mut dyn Iterator<Item = (usize, usize)>, t_unit: f64| {
            if let SideBc::Dirichlet(values) = bc {
                for (b, c) in cells {
                    total += 2.0 * kappa[c] * t_unit * (head[c] - values[b]);
                }
            }
        };
        side(&self.left, &mut (0..ny).map(|iy| (iy, idx(0, iy))), self.hy / self.hx);
        side(&self.right, &mut (0..ny).map(|iy| (iy, idx(nx - 1, iy))), self.hy / self.hx);
        side(&self.bottom, &mut (0..nx).map(|ix| (ix, idx(ix, 0))), self.hx / self.hy);
        side(&self.top, &mut (0..nx).map(|ix| (ix, idx(ix, ny - 1))), self.hx / self.hy);
        total
    }

    /// Total source: recharge integrated over the domain plus influx
    /// integrated along the walls.
    pub fn source_total(&self) -> f64 {
        let mut total: f64 = self.recharge.iter().map(|f| f * self.hx * self.hy).sum();
        for (bc, len, cells) in [
            (&self.left, self.hy, self.ny),
            (&self.right, self.hy, self.ny),
            (&self.bottom, self.hx, self.nx),
            (&self.top, self.hx, self.nx),
        ] {
            if let SideBc::Influx(q) = bc {
                total += q * len * cells as f64;
            }
        }
        total
    }
}

/// Symmetric banded matrix, lower triangle stored by row:
/// `data[i * (bw + 1) + o]` holds entry `(i, i - o)`.
#[derive(Clone, Debug)]
struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    fn zeros(n: usize, bw: usize) -> Self {
        Banded {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.data[i * (self.bw + 1) + (i - j)] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    fn cholesky(&self) -> Result<Cholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let stride = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l[i * stride + (i - j)];
                for k in lo..j {
                    sum -= l[i * stride + (i - k)] * l[j * stride + (j - k)];
                }
                if j < i {
                    l[i * stride + (i - j)] = sum / l[j * stride];
                } else if sum > 0.0 {
                    l[i * stride] = sum.sqrt();
                } else {
                    return Err(Error::numerical(format!(
                        "matrix is not positive definite at pivot {i}"
                    )));
                }
            }
        }
        Ok(Cholesky { n, bw, l })
    }

    /// `b - A x` using the symmetric band.
    fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let mut r = b.to_vec();
        for i in 0..self.n {
            r[i] -= self.get(i, i) * x[i];
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.get(i, j);
                r[i] -= a * x[j];
                r[j] -= a * x[i];
            }
        }
        r
    }
}

/// Lower-banded Cholesky factor.
struct Cholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.l[i * stride + (i - k)] * y[k];
            }
            y[i] = sum / self.l[i * stride];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut sum = y[i];
            for j in i + 1..=hi {
                sum -= self.l[j * stride + (j - i)] * x[j];
            }
            x[i] = sum / self.l[i * stride];
        }
        x
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The groundwater benchmark: fixed head along the bottom, lateral inflow
/// on the left, impermeable right and top walls, and recharge increasing in
/// two steps toward the surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DarcySetup {
    pub bottom_head: f64,
    pub left_influx: f64,
    pub recharge_levels: [f64; 3],
    pub recharge_breaks: [f64; 2],
}

impl Default for DarcySetup {
    fn default() -> Self {
        DarcySetup {
            bottom_head: 100.0,
            left_influx: 500.0,
            recharge_levels: [0.0, 137.0, 274.0],
            recharge_breaks: [4.0, 5.0],
        }
    }
}

impl DarcySetup {
    /// Recharge rate at height `y`.
    pub fn recharge_at(&self, y: f64) -> f64 {
        if y <= self.recharge_breaks[0] {
            self.recharge_levels[0]
        } else if y < self.recharge_breaks[1] {
            self.recharge_levels[1]
        } else {
            self.recharge_levels[2]
        }
    }

    /// Builds the benchmark problem on a two-dimensional grid.
    pub fn problem(&self, geom: &GridGeom) -> Result<Problem> {
        if geom.dim() != 2 {
            return Err(Error::config(format!(
                "the groundwater benchmark is two-dimensional, got dim {}",
                geom.dim()
            )));
        }
        let n = geom.points_per_axis();
        let recharge = (0..geom.len())
            .map(|c| self.recharge_at(geom.cell_center(c)[1]))
            .collect();
        Problem::new(
            n,
            n,
            geom.length(0),
            geom.length(1),
            SideBc::Influx(self.left_influx),
            SideBc::NoFlux,
            SideBc::uniform_head(self.bottom_head, n),
            SideBc::NoFlux,
            recharge,
        )
    }
}

/// Darcy forward map: solve the head field for a conductivity grid, then
/// read it at the observation points.
pub struct DarcyModel {
    problem: Problem,
    observer: SmoothedPointObserver,
}

impl DarcyModel {
    pub fn new(problem: Problem, observer: SmoothedPointObserver) -> Result<Self> {
        if observer.cell_count() != problem.cell_count() {
            return Err(Error::shape(format!(
                "observer reads {} cells, problem has {}",
                observer.cell_count(),
                problem.cell_count()
            )));
        }
        Ok(DarcyModel { problem, observer })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }
}

impl ForwardModel for DarcyModel {
    fn observation_count(&self) -> usize {
        self.observer.observation_count()
    }

    fn observe(&self, field: &[f64]) -> Result<Vec<f64>> {
        let head = self.problem.solve(field)?;
        self.observer.observe(&head)
    }
}
