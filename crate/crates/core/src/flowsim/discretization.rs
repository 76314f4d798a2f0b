//! Residual, Jacobian and parameter sensitivities of one backward-Euler step.
//!
//! Unknowns are ordered `[p_0, s_0, p_1, s_1, …]` (Pa, water saturation) with
//! the injector bottom-hole pressure as a separate border unknown. Residuals
//! are surface-volume rates (m³/s), outflow positive, water then oil per cell.

use super::fluid::{Pvt, RelPerm};
use super::{FluidParams, GridGeometry, SimError, WellSpec};
use crate::geomodel::ModelGrid;
use crate::linalg::Bordered;
use crate::{BAR, DAY};

pub(crate) const WATER: usize = 0;
pub(crate) const OIL: usize = 1;

/// Face transmissibilities of a TPFA discretisation (m³).
#[derive(Debug, Clone, PartialEq)]
pub struct Transmissibility {
    nx: usize,
    nz: usize,
    /// Faces between `(x, z)` and `(x + 1, z)`, indexed `x * nz + z`.
    pub tx: Vec<f64>,
    /// Faces between `(x, z)` and `(x, z + 1)`, indexed `x * (nz - 1) + z`.
    pub tz: Vec<f64>,
}

impl Transmissibility {
    /// Interior faces as `(cell_i, cell_j, T)`.
    pub fn faces(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let nz = self.nz;
        let xs = (0..self.nx.saturating_sub(1)).flat_map(move |x| {
            (0..nz).map(move |z| (x * nz + z, (x + 1) * nz + z, self.tx[x * nz + z]))
        });
        let zs = (0..self.nx).flat_map(move |x| {
            (0..nz.saturating_sub(1)).map(move |z| (x * nz + z, x * nz + z + 1, self.tz[x * (nz - 1) + z]))
        });
        xs.chain(zs)
    }

    /// Transmissibility between two cells, zero unless they share a face.
    pub fn between(&self, a: usize, b: usize) -> f64 {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let nz = self.nz;
        if j == i + nz && j < self.nx * nz {
            self.tx[i]
        } else if j == i + 1 && j % nz != 0 {
            let (x, z) = (i / nz, i % nz);
            self.tz[x * (nz - 1) + z]
        } else {
            0.0
        }
    }
}

#[inline]
pub(crate) fn harmonic(ki: f64, kj: f64) -> f64 {
    2.0 * ki * kj / (ki + kj)
}

/// d harmonic(ki, kj) / d ki
#[inline]
fn harmonic_dki(ki: f64, kj: f64) -> f64 {
    let s = ki + kj;
    2.0 * kj * kj / (s * s)
}

fn check_model(m: &ModelGrid, g: &GridGeometry) -> Result<(), SimError> {
    for grid in [&m.facies, &m.permeability, &m.porosity] {
        if grid.nx() != g.nx || grid.nz() != g.nz {
            return Err(SimError::InvalidInput(format!(
                "model grid {}x{} does not match geometry {}x{}",
                grid.nx(),
                grid.nz(),
                g.nx,
                g.nz
            )));
        }
    }
    if let Some((i, k)) = m.permeability.as_slice().iter().enumerate().find(|(_, k)| !(**k > 0.0) || !k.is_finite()) {
        return Err(SimError::InvalidInput(format!("non-positive permeability {k} at cell {i}")));
    }
    if let Some((i, p)) = m.porosity.as_slice().iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
        return Err(SimError::InvalidInput(format!("porosity {p} at cell {i} outside (0, 1)")));
    }
    Ok(())
}

/// Harmonic-average TPFA transmissibilities; no-flow outer boundary.
pub fn build_transmissibilities(m: &ModelGrid, g: &GridGeometry) -> Result<Transmissibility, SimError> {
    g.validate()?;
    check_model(m, g)?;
    let (nx, nz) = (g.nx, g.nz);
    let k = m.permeability.as_slice();
    let gx = g.dz * g.thickness / g.dx;
    let gz = g.dx * g.thickness / g.dz;
    let mut tx = vec![0.0; nx.saturating_sub(1) * nz];
    for x in 0..nx.saturating_sub(1) {
        for z in 0..nz {
            let i = x * nz + z;
            tx[i] = gx * harmonic(k[i], k[i + nz]);
        }
    }
    let mut tz = vec![0.0; nx * nz.saturating_sub(1)];
    for x in 0..nx {
        for z in 0..nz.saturating_sub(1) {
            let i = x * nz + z;
            tz[x * (nz - 1) + z] = gz * harmonic(k[i], k[i + 1]);
        }
    }
    Ok(Transmissibility { nx, nz, tx, tz })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Face {
    pub i: usize,
    pub j: usize,
    /// Area over centre distance.
    pub geom: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct WellCell {
    pub cell: usize,
    /// Peaceman index (m³), linear in cell permeability.
    pub wi: f64,
}

/// Solver state in SI units.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub p_bh: f64,
}

impl State {
    pub fn is_finite(&self) -> bool {
        self.p_bh.is_finite() && self.p.iter().chain(&self.s).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CellEval {
    pub b: [f64; 2],
    pub db: [f64; 2],
    pub lam: [f64; 2],
    pub dlam: [f64; 2],
}

impl CellEval {
    /// b·λ, the surface-volume mobility.
    #[inline]
    pub fn m(&self, a: usize) -> f64 {
        self.b[a] * self.lam[a]
    }
    #[inline]
    pub fn dm_dp(&self, a: usize) -> f64 {
        self.db[a] * self.lam[a]
    }
    #[inline]
    pub fn dm_ds(&self, a: usize) -> f64 {
        self.b[a] * self.dlam[a]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Residual {
    pub cells: Vec<f64>,
    pub well: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Discretization {
    pub nc: usize,
    pub nz: usize,
    pub volume: f64,
    pub porosity: Vec<f64>,
    pub perm: Vec<f64>,
    pub faces: Vec<Face>,
    pub inj: Vec<WellCell>,
    pub prod: Vec<WellCell>,
    /// m³/s
    pub q_inj: f64,
    /// Pa
    pub p_bhp: f64,
    pub pvt: Pvt,
    pub fluid: FluidParams,
}

impl Discretization {
    pub fn new(m: &ModelGrid, f: &FluidParams, g: &GridGeometry, w: &WellSpec) -> Result<Self, SimError> {
        f.validate()?;
        w.validate(g)?;
        let trans = build_transmissibilities(m, g)?;
        let nz = g.nz;
        let gx = g.dz * g.thickness / g.dx;
        let gz = g.dx * g.thickness / g.dz;
        let faces = trans
            .faces()
            .map(|(i, j, t)| Face { i, j, t, geom: if j == i + 1 && j % nz != 0 && nz > 1 { gz } else { gx } })
            .collect();
        let perm = m.permeability.as_slice().to_vec();
        let wi_unit = g.peaceman_factor(w.wellbore_radius);
        let column = |x: usize| -> Vec<WellCell> {
            (w.completion_rows.0..w.completion_rows.1)
                .map(|z| {
                    let cell = x * nz + z;
                    WellCell { cell, wi: wi_unit * perm[cell] }
                })
                .collect()
        };
        Ok(Self {
            nc: g.nx * g.nz,
            nz,
            volume: g.dx * g.dz * g.thickness,
            porosity: m.porosity.as_slice().to_vec(),
            inj: column(w.injector_column),
            prod: column(w.producer_column),
            perm,
            faces,
            q_inj: w.q_w_inj / DAY,
            p_bhp: w.p_bhp * BAR,
            pvt: Pvt::new(f),
            fluid: *f,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        2 * self.nc
    }

    pub fn bandwidth(&self) -> usize {
        2 * self.nz + 1
    }

    pub fn new_jacobian(&self) -> Bordered {
        let bw = self.bandwidth();
        Bordered::new(self.n_unknowns(), bw, bw)
    }

    #[inline]
    pub fn pv(&self, i: usize) -> f64 {
        self.porosity[i] * self.volume
    }

    pub fn initial_state(&self) -> State {
        let p = vec![self.pvt.p_ref; self.nc];
        let s = vec![self.fluid.s_wi; self.nc];
        let mut st = State { p, s, p_bh: self.pvt.p_ref };
        st.p_bh = self.consistent_injector_pressure(&st);
        st
    }

    /// Bottom-hole pressure delivering the target rate for fixed cell states.
    pub fn consistent_injector_pressure(&self, st: &State) -> f64 {
        let (mut num, mut den) = (self.q_inj, 0.0);
        for w in &self.inj {
            let e = self.eval_cell(st.p[w.cell], st.s[w.cell]);
            let c = w.wi * (e.lam[0] + e.lam[1]);
            num += c * st.p[w.cell];
            den += c;
        }
        num / den
    }

    #[inline]
    pub fn eval_cell(&self, p: f64, s: f64) -> CellEval {
        let r = RelPerm::eval(s, &self.fluid);
        let (bw, dbw) = self.pvt.b(WATER, p);
        let (bo, dbo) = self.pvt.b(OIL, p);
        let mu = self.pvt.mu;
        CellEval {
            b: [bw, bo],
            db: [dbw, dbo],
            lam: [r.krw / mu[0], r.kro / mu[1]],
            dlam: [r.dkrw / mu[0], r.dkro / mu[1]],
        }
    }

    fn evals(&self, st: &State) -> Vec<CellEval> {
        (0..self.nc).map(|i| self.eval_cell(st.p[i], st.s[i])).collect()
    }

    /// Water/oil surface volumes in place per cell (m³).
    pub fn in_place(&self, i: usize, p: f64, s: f64) -> [f64; 2] {
        let pv = self.pv(i);
        [pv * self.pvt.b(WATER, p).0 * s, pv * self.pvt.b(OIL, p).0 * (1.0 - s)]
    }

    /// Residual of one step from `prev` to `st`; fills `jac` when given.
    pub fn assemble(&self, st: &State, prev: &State, dt: f64, mut jac: Option<&mut Bordered>) -> Residual {
        let nc = self.nc;
        let mut r = vec![0.0; 2 * nc];
        let ev = self.evals(st);
        if let Some(j) = jac.as_deref_mut() {
            j.clear();
        }

        for i in 0..nc {
            let e = &ev[i];
            let (b0w, _) = self.pvt.b(WATER, prev.p[i]);
            let (b0o, _) = self.pvt.b(OIL, prev.p[i]);
            let c = self.pv(i) / dt;
            let s = st.s[i];
            let s0 = prev.s[i];
            r[2 * i] += c * (e.b[0] * s - b0w * s0);
            r[2 * i + 1] += c * (e.b[1] * (1.0 - s) - b0o * (1.0 - s0));
            if let Some(j) = jac.as_deref_mut() {
                j.band.add(2 * i, 2 * i, c * e.db[0] * s);
                j.band.add(2 * i, 2 * i + 1, c * e.b[0]);
                j.band.add(2 * i + 1, 2 * i, c * e.db[1] * (1.0 - s));
                j.band.add(2 * i + 1, 2 * i + 1, -c * e.b[1]);
            }
        }

        for f in &self.faces {
            let (i, k) = (f.i, f.j);
            let dp = st.p[i] - st.p[k];
            let u = if dp >= 0.0 { i } else { k };
            let eu = &ev[u];
            for a in 0..2 {
                let flux = f.t * eu.m(a) * dp;
                r[2 * i + a] += flux;
                r[2 * k + a] -= flux;
                if let Some(j) = jac.as_deref_mut() {
                    let mut d_pi = f.t * eu.m(a);
                    let mut d_pk = -f.t * eu.m(a);
                    if u == i {
                        d_pi += f.t * dp * eu.dm_dp(a);
                    } else {
                        d_pk += f.t * dp * eu.dm_dp(a);
                    }
                    let d_su = f.t * dp * eu.dm_ds(a);
                    for (row, sign) in [(2 * i + a, 1.0), (2 * k + a, -1.0)] {
                        j.band.add(row, 2 * i, sign * d_pi);
                        j.band.add(row, 2 * k, sign * d_pk);
                        j.band.add(row, 2 * u + 1, sign * d_su);
                    }
                }
            }
        }

        for w in &self.prod {
            let c = w.cell;
            let e = &ev[c];
            let dp = st.p[c] - self.p_bhp;
            for a in 0..2 {
                r[2 * c + a] += w.wi * e.m(a) * dp;
                if let Some(j) = jac.as_deref_mut() {
                    j.band.add(2 * c + a, 2 * c, w.wi * (e.dm_dp(a) * dp + e.m(a)));
                    j.band.add(2 * c + a, 2 * c + 1, w.wi * e.dm_ds(a) * dp);
                }
            }
        }

        let mut well = -self.q_inj;
        for w in &self.inj {
            let c = w.cell;
            let e = &ev[c];
            let lt = e.lam[0] + e.lam[1];
            let dlt = e.dlam[0] + e.dlam[1];
            let dp = st.p_bh - st.p[c];
            let q = w.wi * lt * dp;
            r[2 * c] -= q;
            well += q;
            if let Some(j) = jac.as_deref_mut() {
                j.band.add(2 * c, 2 * c, w.wi * lt);
                j.band.add(2 * c, 2 * c + 1, -w.wi * dlt * dp);
                j.col[2 * c] -= w.wi * lt;
                j.row[2 * c] -= w.wi * lt;
                j.row[2 * c + 1] += w.wi * dlt * dp;
                j.corner += w.wi * lt;
            }
        }

        Residual { cells: r, well }
    }

    /// Dimensionless convergence measures: (local volume, global balance, well).
    pub fn residual_norms(&self, r: &Residual, dt: f64) -> (f64, f64, f64) {
        let mut cnv: f64 = 0.0;
        let mut sums = [0.0; 2];
        for i in 0..self.nc {
            let scale = dt / self.pv(i);
            for a in 0..2 {
                let v = r.cells[2 * i + a];
                cnv = cnv.max(v.abs() * scale);
                sums[a] += v;
            }
        }
        let mb = sums[0].abs().max(sums[1].abs()) / self.q_inj;
        (cnv, mb, r.well.abs() / self.q_inj)
    }

    /// Producer surface rates (m³/s) for water and oil.
    pub fn producer_rates(&self, st: &State) -> [f64; 2] {
        let mut q = [0.0; 2];
        for w in &self.prod {
            let e = self.eval_cell(st.p[w.cell], st.s[w.cell]);
            let dp = st.p[w.cell] - self.p_bhp;
            for (a, qa) in q.iter_mut().enumerate() {
                *qa += w.wi * e.m(a) * dp;
            }
        }
        q
    }

    /// Accumulates `weights · ∂(producer rates)/∂(p, s)` into `out` (length 2·nc)
    /// and `weights · ∂(rates)/∂k` into `dk`.
    pub fn producer_rates_vjp(&self, st: &State, weights: [f64; 2], out: &mut [f64], dk: &mut [f64]) {
        for w in &self.prod {
            let c = w.cell;
            let e = self.eval_cell(st.p[c], st.s[c]);
            let dp = st.p[c] - self.p_bhp;
            for (a, &wt) in weights.iter().enumerate() {
                out[2 * c] += wt * w.wi * (e.dm_dp(a) * dp + e.m(a));
                out[2 * c + 1] += wt * w.wi * e.dm_ds(a) * dp;
                dk[c] += wt * (w.wi / self.perm[c]) * e.m(a) * dp;
            }
        }
    }

    /// `(∂R(st; prev)/∂prev)ᵀ λ`; only accumulation terms involve the previous state.
    pub fn prev_state_vjp(&self, prev: &State, dt: f64, lam: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.nc];
        for i in 0..self.nc {
            let c = self.pv(i) / dt;
            let (bw, dbw) = self.pvt.b(WATER, prev.p[i]);
            let (bo, dbo) = self.pvt.b(OIL, prev.p[i]);
            let s0 = prev.s[i];
            let (lw, lo) = (lam[2 * i], lam[2 * i + 1]);
            out[2 * i] = -c * (dbw * s0 * lw + dbo * (1.0 - s0) * lo);
            out[2 * i + 1] = -c * (bw * lw - bo * lo);
        }
        out
    }

    /// Accumulates `λᵀ ∂R/∂k` and `λᵀ ∂R/∂φ` for one step; `mu` weights the well equation.
    pub fn param_vjp(
        &self,
        st: &State,
        prev: &State,
        dt: f64,
        lam: &[f64],
        mu: f64,
        dk: &mut [f64],
        dphi: &mut [f64],
    ) {
        let ev = self.evals(st);
        for i in 0..self.nc {
            let e = &ev[i];
            let (b0w, _) = self.pvt.b(WATER, prev.p[i]);
            let (b0o, _) = self.pvt.b(OIL, prev.p[i]);
            let c = self.volume / dt;
            let (s, s0) = (st.s[i], prev.s[i]);
            dphi[i] += lam[2 * i] * c * (e.b[0] * s - b0w * s0)
                + lam[2 * i + 1] * c * (e.b[1] * (1.0 - s) - b0o * (1.0 - s0));
        }
        for f in &self.faces {
            let (i, k) = (f.i, f.j);
            let dp = st.p[i] - st.p[k];
            let eu = &ev[if dp >= 0.0 { i } else { k }];
            let mut d_t = 0.0;
            for a in 0..2 {
                d_t += (lam[2 * i + a] - lam[2 * k + a]) * eu.m(a) * dp;
            }
            dk[i] += d_t * f.geom * harmonic_dki(self.perm[i], self.perm[k]);
            dk[k] += d_t * f.geom * harmonic_dki(self.perm[k], self.perm[i]);
        }
        for w in &self.prod {
            let c = w.cell;
            let e = &ev[c];
            let dp = st.p[c] - self.p_bhp;
            let dwi = w.wi / self.perm[c];
            for a in 0..2 {
                dk[c] += lam[2 * c + a] * dwi * e.m(a) * dp;
            }
        }
        for w in &self.inj {
            let c = w.cell;
            let e = &ev[c];
            let q_per_wi = (e.lam[0] + e.lam[1]) * (st.p_bh - st.p[c]);
            dk[c] += (mu - lam[2 * c]) * (w.wi / self.perm[c]) * q_per_wi;
        }
    }
}
