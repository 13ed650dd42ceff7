//! Operator toolbox for the fractional calculus of the drivers: the
//! transfer operators `Gamma*_{H,T}` and `B*_{H,T}` intertwining Brownian
//! and fBm integrals, the singular kernel `phi`, numerical Malliavin
//! derivatives in three flavours (Brownian direction `D`, fBm direction
//! `D^H`, and the phi-smoothed `DD`), the duality pairing, and the
//! Stratonovich-to-divergence trace correction.
//!
//! Malliavin derivatives are realized by central finite differences on the
//! Brownian driver increments; fBm data is regenerated through the Volterra
//! coupling after every bump, so functionals of `B^H` differentiate through
//! the kernel automatically. The `d/ds` of the transfer operators acts on
//! the product-integrated inner antiderivative on a staggered grid, which
//! keeps the difference quotient away from the `(u-s)^{1/2-H}` endpoint
//! singularity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, FracmaxError, Result};
use crate::fbm::{DriverEnsemble, HurstParam};
use crate::grid::{SamplePath, TimeGrid};
use crate::kernels::{int_abs_power, integrate_tail_power, trapezoid};
use crate::mc::{run_paths, EnsembleStats};

/// The kernel `phi(s) = H(2H-1)|s|^{2H-2}` and its derived constants.
#[derive(Debug, Clone, Copy)]
pub struct PhiKernel {
    h: HurstParam,
}

impl PhiKernel {
    pub fn new(h: HurstParam) -> Result<Self> {
        if h.is_classical() {
            return Err(FracmaxError::Unsupported(
                "phi kernel degenerates at H = 1/2".into(),
            ));
        }
        Ok(Self { h })
    }

    pub fn phi(&self, s: f64) -> f64 {
        let hh = self.h.h();
        hh * (2.0 * hh - 1.0) * s.abs().powf(2.0 * hh - 2.0)
    }

    /// `c_{1,H} = -2 H^2 (2H-1) kappa_1 / kappa_H`.
    pub fn c1(&self) -> f64 {
        let hh = self.h.h();
        -2.0 * hh * hh * (2.0 * hh - 1.0) * self.h.kappa_1() / self.h.kappa_h()
    }

    /// `phi_{1,H}(s,t) = c_{1,H} s^{1/2-H} |t-s|^{2H-2}`.
    pub fn phi_1(&self, s: f64, t: f64) -> f64 {
        let hh = self.h.h();
        self.c1() * s.powf(0.5 - hh) * (t - s).abs().powf(2.0 * hh - 2.0)
    }

    /// `\int_0^t phi(u) du = H t^{2H-1}`.
    pub fn phi_primitive(&self, t: f64) -> f64 {
        let hh = self.h.h();
        hh * t.powf(2.0 * hh - 1.0)
    }

    /// Exact `\int_0^T \int_0^T phi(s-t) ds dt = T^{2H}` by the closed-form
    /// rectangle integral; kept as a consistency probe of the kernel code.
    pub fn double_integral(&self, horizon: f64, cells: usize) -> f64 {
        let hh = self.h.h();
        let g = 2.0 * hh - 2.0;
        let scale = hh * (2.0 * hh - 1.0);
        let step = horizon / cells as f64;
        let mut acc = 0.0;
        for a in 0..cells {
            for b in 0..cells {
                acc += crate::kernels::int_abs_power_rect(
                    a as f64 * step,
                    (a + 1) as f64 * step,
                    b as f64 * step,
                    (b + 1) as f64 * step,
                    g,
                );
            }
        }
        scale * acc
    }
}

fn require_rough(h: &HurstParam, what: &str) -> Result<()> {
    if h.is_classical() {
        return Err(FracmaxError::Unsupported(format!(
            "{what} requires H > 1/2 (classical case routes through the Brownian machinery)"
        )));
    }
    Ok(())
}

/// `(Gamma* f)(t) = (H-1/2) kappa_H t^{1/2-H} \int_t^T u^{H-1/2} (u-t)^{H-3/2} f(u) du`
/// evaluated at an arbitrary `t`; `f` enters through its piecewise-linear
/// interpolant. Identity map at `H = 1/2`.
pub fn gamma_star_at(f: &SamplePath, h: &HurstParam, t: f64) -> f64 {
    if h.is_classical() {
        return f.eval_linear(t)[0];
    }
    let hh = h.h();
    let nodes = f.grid().nodes();
    let horizon = f.grid().horizon();
    if t >= horizon {
        return 0.0;
    }
    let svals: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(k, &u)| u.powf(hh - 0.5) * f.at(k))
        .collect();
    let tail = integrate_tail_power(nodes, &svals, t, hh - 1.5);
    (hh - 0.5) * h.kappa_h() * t.powf(0.5 - hh) * tail
}

/// Node evaluation of `Gamma*`; the `t = 0` node carries the first-midpoint
/// proxy value (the prefactor `t^{1/2-H}` blows up there while the square of
/// the operator stays integrable).
pub fn gamma_star(f: &SamplePath, h: &HurstParam) -> Result<SamplePath> {
    if f.dim() != 1 {
        return Err(invalid("gamma_star expects a scalar path"));
    }
    if h.is_classical() {
        return Ok(f.clone());
    }
    let grid = f.grid().clone();
    let mut vals: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| if t == 0.0 { 0.0 } else { gamma_star_at(f, h, t) })
        .collect();
    vals[0] = gamma_star_at(f, h, grid.midpoint(0));
    SamplePath::scalar(grid, vals)
}

/// Inner antiderivative `G(s) = \int_s^T (u-s)^{1/2-H} u^{H-1/2} g(u) du`
/// shared by `B*` and the Malliavin transforms.
fn bstar_inner(nodes: &[f64], gvals: &[f64], h: &HurstParam, s: f64) -> f64 {
    let hh = h.h();
    let svals: Vec<f64> = nodes
        .iter()
        .zip(gvals)
        .map(|(&u, &g)| u.powf(hh - 0.5) * g)
        .collect();
    integrate_tail_power(nodes, &svals, s, 0.5 - hh)
}

/// Staggered-derivative values of `B* g` at the grid nodes:
/// the inner integral is evaluated at cell midpoints and differenced across
/// each node. Returns the full prefactored operator values; node 0 copies
/// node 1 (prefactor limit), node n is 0 (empty inner integral).
pub(crate) fn b_star_values(grid: &TimeGrid, h: &HurstParam, gvals: &[f64]) -> Vec<f64> {
    let hh = h.h();
    let n = grid.intervals();
    let nodes = grid.nodes();
    let step = grid.step();
    let coef = -2.0 * hh * h.kappa_1() / h.kappa_h();
    let g_mid: Vec<f64> = (0..n)
        .map(|k| bstar_inner(nodes, gvals, h, grid.midpoint(k)))
        .collect();
    let mut out = vec![0.0; n + 1];
    for k in 1..n {
        let dg = (g_mid[k] - g_mid[k - 1]) / step;
        out[k] = coef * nodes[k].powf(0.5 - hh) * dg;
    }
    out[0] = out[1];
    out[n] = 0.0;
    out
}

/// `(B* f)(t) = -(2 H kappa_1 / kappа_H) t^{1/2-H} d/dt \int_t^T (u-t)^{1/2-H} u^{H-1/2} f(u) du`.
/// Identity map at `H = 1/2`.
pub fn b_star(f: &SamplePath, h: &HurstParam) -> Result<SamplePath> {
    if f.dim() != 1 {
        return Err(invalid("b_star expects a scalar path"));
    }
    if h.is_classical() {
        return Ok(f.clone());
    }
    let grid = f.grid().clone();
    let gvals: Vec<f64> = (0..grid.node_count()).map(|k| f.at(k)).collect();
    let vals = b_star_values(&grid, h, &gvals);
    SamplePath::scalar(grid, vals)
}

/// Flavour of a Malliavin field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalliavinKind {
    /// `D_s F`: sensitivity to the Brownian increments.
    Brownian,
    /// `D^H_s F`: Frechet derivative in the fBm direction, `B*` image of `D`.
    FbmFrechet,
    /// `DD_t F`: phi-smoothed derivative, only defined for `H > 1/2`.
    FbmPhi,
}

/// Per-path, per-node Malliavin derivative values of one scalar functional
/// with respect to driver component `component`.
#[derive(Debug, Clone)]
pub struct MalliavinField {
    pub grid: TimeGrid,
    pub component: usize,
    pub kind: MalliavinKind,
    pub bump_size: f64,
    /// `values[path][node]`
    pub values: Vec<Vec<f64>>,
}

impl MalliavinField {
    /// CSV export `path_id,s,value` plus a manifest with kind and bump size.
    pub fn export_csv(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut out = String::from("path_id,s,value\n");
        for (p, row) in self.values.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{p},{:.16e},{v:.16e}", self.grid.node(k));
            }
        }
        std::fs::write(dir.join(format!("{name}.csv")), out)?;
        let manifest = format!(
            "kind={:?}\ncomponent={}\nbump_size={:.16e}\n",
            self.kind, self.component, self.bump_size
        );
        std::fs::write(dir.join(format!("{name}_manifest.txt")), manifest)?;
        Ok(())
    }
}

/// Read-only view of one path's drivers handed to functionals; the bump
/// engine swaps perturbed buffers in behind it.
pub struct DriverView<'a> {
    pub grid: &'a TimeGrid,
    /// Brownian increments per component.
    pub w_increments: &'a [Vec<f64>],
    /// fBm node values per component (Volterra images of the increments).
    pub bh_values: &'a [Vec<f64>],
}

impl DriverView<'_> {
    pub fn components(&self) -> usize {
        self.w_increments.len()
    }
}

/// A functional of the driver paths with a fixed-dimensional output.
pub trait PathFunctional: Sync {
    fn out_dim(&self) -> usize;
    fn eval(&self, view: &DriverView<'_>, out: &mut [f64]);
}

/// Scalar closure adapter.
pub struct ScalarFunctional<F: Fn(&DriverView<'_>) -> f64 + Sync>(pub F);

impl<F: Fn(&DriverView<'_>) -> f64 + Sync> PathFunctional for ScalarFunctional<F> {
    fn out_dim(&self) -> usize {
        1
    }
    fn eval(&self, view: &DriverView<'_>, out: &mut [f64]) {
        out[0] = (self.0)(view);
    }
}

/// Default finite-difference bump: `1e-4 sqrt(step)`.
pub fn default_bump(grid: &TimeGrid) -> f64 {
    1e-4 * grid.step().sqrt()
}

/// Central finite-difference Malliavin derivative of a vector functional
/// with respect to the increments of driver component `l`:
/// `out[path][node][o] = dF_o / dDeltaW_{l,node}` (the cell-averaged density
/// of the Frechet derivative). Perturbed fBm paths are rebuilt through the
/// Volterra coupling, so `F` may read `bh_values` freely.
pub fn malliavin_fd_multi(
    functional: &dyn PathFunctional,
    ens: &DriverEnsemble,
    l: usize,
    bump: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if l >= ens.components() {
        return Err(invalid(format!("component {l} out of range")));
    }
    if !(bump > 0.0) {
        return Err(invalid("bump size must be positive"));
    }
    let grid = ens.grid().clone();
    let n = grid.intervals();
    let m = ens.components();
    let out_dim = functional.out_dim();

    // response of the fBm path to a unit bump of increment k
    let columns: Vec<Vec<f64>> = match ens.volterra_table() {
        Some(table) => (0..n)
            .map(|k| {
                let mut col = vec![0.0; n + 1];
                table.bump_column(k, &mut col);
                col
            })
            .collect(),
        None => (0..n)
            .map(|k| {
                let mut col = vec![0.0; n + 1];
                for v in col.iter_mut().skip(k + 1) {
                    *v = 1.0;
                }
                col
            })
            .collect(),
    };

    run_paths(ens.path_count(), 0, |p| {
        let mut w_work: Vec<Vec<f64>> = (0..m).map(|j| ens.w_increments(p, j).to_vec()).collect();
        let mut bh_work: Vec<Vec<f64>> = (0..m).map(|j| ens.bh_values(p, j).to_vec()).collect();
        let mut plus = vec![0.0; out_dim];
        let mut minus = vec![0.0; out_dim];
        let mut field = vec![vec![0.0; out_dim]; n + 1];

        for k in 0..n {
            let col = &columns[k];
            w_work[l][k] += bump;
            for (v, c) in bh_work[l].iter_mut().zip(col) {
                *v += bump * c;
            }
            {
                let view = DriverView {
                    grid: &grid,
                    w_increments: &w_work,
                    bh_values: &bh_work,
                };
                functional.eval(&view, &mut plus);
            }
            w_work[l][k] -= 2.0 * bump;
            for (v, c) in bh_work[l].iter_mut().zip(col) {
                *v -= 2.0 * bump * c;
            }
            {
                let view = DriverView {
                    grid: &grid,
                    w_increments: &w_work,
                    bh_values: &bh_work,
                };
                functional.eval(&view, &mut minus);
            }
            w_work[l][k] += bump;
            for (v, c) in bh_work[l].iter_mut().zip(col) {
                *v += bump * c;
            }
            for o in 0..out_dim {
                let d = (plus[o] - minus[o]) / (2.0 * bump);
                if !d.is_finite() {
                    return Err(FracmaxError::NonFiniteFunctional { path: p });
                }
                field[k][o] = d;
            }
        }
        // node n: no increment lives beyond the horizon
        Ok(field)
    })
}

/// Scalar-functional wrapper producing a [`MalliavinField`] of kind
/// `Brownian`.
pub fn malliavin_brownian(
    functional: &dyn PathFunctional,
    ens: &DriverEnsemble,
    l: usize,
    bump: f64,
) -> Result<MalliavinField> {
    if functional.out_dim() != 1 {
        return Err(invalid("malliavin_brownian expects a scalar functional"));
    }
    let raw = malliavin_fd_multi(functional, ens, l, bump)?;
    let values = raw
        .into_iter()
        .map(|per_node| per_node.into_iter().map(|v| v[0]).collect())
        .collect();
    Ok(MalliavinField {
        grid: ens.grid().clone(),
        component: l,
        kind: MalliavinKind::Brownian,
        bump_size: bump,
        values,
    })
}

/// Quadrature of `\int_0^T s^{1/2-H} |t-s|^{2H-2} w(s) ds` with `w` known at
/// the grid nodes: per cell, the `|t-s|^{2H-2}` (or, in the first cell, the
/// combined power) factor is integrated exactly against the remaining smooth
/// part frozen at the cell midpoint.
fn phi_one_quadrature(grid: &TimeGrid, h: &HurstParam, w: &[f64], t: f64) -> f64 {
    let hh = h.h();
    let g = 2.0 * hh - 2.0;
    let q = 0.5 - hh;
    let n = grid.intervals();
    let nodes = grid.nodes();
    let mut acc = 0.0;
    for i in 0..n {
        let (s0, s1) = (nodes[i], nodes[i + 1]);
        let mid = 0.5 * (s0 + s1);
        let wmid = 0.5 * (w[i] + w[i + 1]);
        if i == 0 {
            if t <= s1 + 1e-15 && t >= s0 {
                // both singular factors in one cell; combined exponent is
                // integrable, freeze nothing and use the dominant power
                acc += wmid * int_abs_power(s0.max(1e-300), s1, t, g + q);
            } else {
                // s^{1/2-H} singular at 0, kernel smooth here
                acc += wmid * (t - mid).abs().powf(g) * s1.powf(q + 1.0) / (q + 1.0);
            }
        } else if t >= s0 - 1e-15 && t <= s1 + 1e-15 {
            acc += wmid * mid.powf(q) * int_abs_power(s0, s1, t, g);
        } else {
            acc += wmid * mid.powf(q) * int_abs_power(s0, s1, t, g);
        }
    }
    acc
}

/// Transform a Brownian-direction field into the fBm-direction pair:
/// `D^H = B* D` (staggered scheme) and the phi-smoothed field through the
/// kernel `c_{1,H} s^{1/2-H} |t-s|^{2H-2}` applied to the inner derivative.
pub fn malliavin_transforms(
    df: &MalliavinField,
    h: &HurstParam,
) -> Result<(MalliavinField, MalliavinField)> {
    require_rough(h, "malliavin_transforms")?;
    if df.kind != MalliavinKind::Brownian {
        return Err(invalid("malliavin_transforms expects a Brownian-direction field"));
    }
    let grid = df.grid.clone();
    let n = grid.intervals();
    let nodes = grid.nodes();
    let step = grid.step();
    let hh = h.h();
    let c1 = PhiKernel::new(*h)?.c1();

    let mut frechet = Vec::with_capacity(df.values.len());
    let mut phi = Vec::with_capacity(df.values.len());
    for row in &df.values {
        // D^H: the b_star staggered scheme applied to the D field
        frechet.push(b_star_values(&grid, h, row));

        // inner derivative d/ds \int_s^T (u-s)^{1/2-H} u^{H-1/2} D_u du at
        // the nodes, from midpoint samples of the antiderivative
        let g_mid: Vec<f64> = (0..n)
            .map(|k| bstar_inner(nodes, row, h, grid.midpoint(k)))
            .collect();
        let mut dg = vec![0.0; n + 1];
        for k in 1..n {
            dg[k] = (g_mid[k] - g_mid[k - 1]) / step;
        }
        dg[0] = dg[1];
        dg[n] = dg[n - 1];

        let hrow: Vec<f64> = nodes
            .iter()
            .map(|&t| c1 * phi_one_quadrature(&grid, h, &dg, t))
            .collect();
        phi.push(hrow);
    }
    let _ = hh;
    Ok((
        MalliavinField {
            grid: grid.clone(),
            component: df.component,
            kind: MalliavinKind::FbmFrechet,
            bump_size: df.bump_size,
            values: frechet,
        },
        MalliavinField {
            grid,
            component: df.component,
            kind: MalliavinKind::FbmPhi,
            bump_size: df.bump_size,
            values: phi,
        },
    ))
}

/// Report of the duality pairing check.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
}

/// Monte Carlo check of the duality formula
/// `E[ F \int_a^b psi dB^H ] = \int_a^b E[ DD_t F psi_t ] dt`
/// for deterministic `psi`: the divergence integral on the left reduces to
/// the pathwise Young sum (zero trace correction), the right side runs the
/// finite-difference Malliavin pipeline through the phi transform.
pub fn duality_check(
    functional: &dyn PathFunctional,
    psi: &SamplePath,
    ens: &DriverEnsemble,
    j: usize,
    a: f64,
    b: f64,
    bump: f64,
) -> Result<DualityReport> {
    require_rough(ens.hurst(), "duality_check")?;
    if functional.out_dim() != 1 {
        return Err(invalid("duality_check expects a scalar functional"));
    }
    if psi.grid() != ens.grid() {
        return Err(invalid("psi must live on the ensemble grid"));
    }
    let ka = ens.grid().node_index(a)?;
    let kb = ens.grid().node_index(b)?;
    if ka >= kb {
        return Err(invalid("need a < b"));
    }

    // lhs: E[F * pathwise Young integral of psi against B^H_j]
    let grid = ens.grid().clone();
    let lhs_vals = run_paths(ens.path_count(), 0, |p| {
        let w: Vec<Vec<f64>> = (0..ens.components())
            .map(|c| ens.w_increments(p, c).to_vec())
            .collect();
        let bh: Vec<Vec<f64>> = (0..ens.components())
            .map(|c| ens.bh_values(p, c).to_vec())
            .collect();
        let view = DriverView {
            grid: &grid,
            w_increments: &w,
            bh_values: &bh,
        };
        let mut f = [0.0];
        functional.eval(&view, &mut f);
        let bhj = ens.bh_values(p, j);
        let mut integral = 0.0;
        for k in ka..kb {
            integral += psi.at(k) * (bhj[k + 1] - bhj[k]);
        }
        Ok(f[0] * integral)
    })?;
    let lhs = EnsembleStats::from_values(&lhs_vals);

    // rhs: \int_a^b E[ DD_t F ] psi(t) dt
    let d = malliavin_brownian(functional, ens, j, bump)?;
    let (_, dd) = malliavin_transforms(&d, ens.hurst())?;
    let nodes = &grid.nodes()[ka..=kb];
    let rhs_vals: Vec<f64> = dd
        .values
        .iter()
        .map(|row| {
            let integrand: Vec<f64> = (ka..=kb).map(|k| row[k] * psi.at(k)).collect();
            trapezoid(nodes, &integrand)
        })
        .collect();
    let rhs = EnsembleStats::from_values(&rhs_vals);

    Ok(DualityReport {
        lhs: lhs.mean,
        lhs_stderr: lhs.stderr,
        rhs: rhs.mean,
        rhs_stderr: rhs.stderr,
    })
}

/// A process plus the diagonal of its phi-smoothed Malliavin derivative,
/// `DD_t psi(t)`, the data entering the trace correction.
pub struct ProcessWithPhiDiagonal {
    /// `DD_t psi(t)` per path per node; kind must be `FbmPhi`.
    pub phi_diagonal: MalliavinField,
}

impl ProcessWithPhiDiagonal {
    /// Deterministic `psi`: the derivative vanishes identically.
    pub fn deterministic(grid: &TimeGrid, path_count: usize) -> Self {
        Self {
            phi_diagonal: MalliavinField {
                grid: grid.clone(),
                component: 0,
                kind: MalliavinKind::FbmPhi,
                bump_size: 0.0,
                values: vec![vec![0.0; grid.node_count()]; path_count],
            },
        }
    }

    /// `psi(t) = B^H_j(t)`: `DD_t psi(t) = \int_0^t phi(u) du = H t^{2H-1}`,
    /// the same for every path.
    pub fn bh_component(ens: &DriverEnsemble, j: usize) -> Result<Self> {
        require_rough(ens.hurst(), "phi diagonal of an fBm component")?;
        let kernel = PhiKernel::new(*ens.hurst())?;
        let grid = ens.grid().clone();
        let diag: Vec<f64> = grid.nodes().iter().map(|&t| kernel.phi_primitive(t)).collect();
        let _ = j;
        Ok(Self {
            phi_diagonal: MalliavinField {
                grid,
                component: j,
                kind: MalliavinKind::FbmPhi,
                bump_size: 0.0,
                values: vec![diag; ens.path_count()],
            },
        })
    }

    /// Scale the diagonal by a constant (linearity of the derivative).
    pub fn scaled(mut self, c: f64) -> Self {
        for row in &mut self.phi_diagonal.values {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        self
    }
}

/// Trace correction of the Stratonovich-to-divergence relation: per path,
/// `\int_a^b DD_t psi(t) dt`, so that
/// `divergence integral = pathwise integral - correction`.
pub fn strat_to_divergence(
    psi: &ProcessWithPhiDiagonal,
    ens: &DriverEnsemble,
    a: f64,
    b: f64,
) -> Result<Vec<f64>> {
    if psi.phi_diagonal.kind != MalliavinKind::FbmPhi {
        return Err(invalid(
            "strat_to_divergence needs the phi-smoothed (FbmPhi) diagonal field",
        ));
    }
    let grid = ens.grid();
    let ka = grid.node_index(a)?;
    let kb = grid.node_index(b)?;
    if psi.phi_diagonal.values.len() != ens.path_count() {
        return Err(invalid("diagonal field path count mismatch"));
    }
    let nodes = &grid.nodes()[ka..=kb];
    Ok(psi
        .phi_diagonal
        .values
        .iter()
        .map(|row| trapezoid(nodes, &row[ka..=kb]))
        .collect())
}
