use serde::{Deserialize, Serialize};

use super::SimError;
use crate::BAR;

/// Oil/water properties. Compressibilities are per bar, viscosities in Pa·s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidParams {
    pub mu_w: f64,
    pub mu_o: f64,
    pub rho_w: f64,
    pub rho_o: f64,
    pub c_w: f64,
    pub c_o: f64,
    pub n_w: f64,
    pub n_o: f64,
    pub s_wc: f64,
    pub s_wi: f64,
    pub s_wcr: f64,
    pub s_or: f64,
    pub s_oi: f64,
    pub s_ocr: f64,
    /// Reference pressure in bar; also the initial reservoir pressure.
    pub p_ref: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            mu_w: 3.0e-4,
            mu_o: 5.0e-3,
            rho_w: 1000.0,
            rho_o: 700.0,
            c_w: 0.0,
            c_o: 1.0e-5,
            n_w: 2.0,
            n_o: 2.0,
            s_wc: 0.10,
            s_wi: 0.15,
            s_wcr: 0.15,
            s_or: 0.10,
            s_oi: 0.15,
            s_ocr: 0.12,
            p_ref: 200.0,
        }
    }
}

impl FluidParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.mu_w > 0.0 && self.mu_o > 0.0) {
            v.push(format!("viscosities must be positive (mu_w={}, mu_o={})", self.mu_w, self.mu_o));
        }
        if !(self.rho_w > 0.0 && self.rho_o > 0.0) {
            v.push("densities must be positive".into());
        }
        if !(self.c_w >= 0.0 && self.c_o >= 0.0) {
            v.push("compressibilities must be non-negative".into());
        }
        if !(self.n_w >= 1.0 && self.n_o >= 1.0) {
            v.push("Brooks-Corey exponents must be >= 1".into());
        }
        if !(0.0 <= self.s_wc && self.s_wc <= self.s_wcr && self.s_wcr < 1.0 - self.s_or) {
            v.push("saturation end points must satisfy 0 <= s_wc <= s_wcr < 1 - s_or".into());
        }
        if !(0.0 <= self.s_ocr && self.s_ocr < 1.0 - self.s_wc) {
            v.push("critical oil saturation must lie in [0, 1 - s_wc)".into());
        }
        if !(0.0..=1.0).contains(&self.s_wi) {
            v.push("initial water saturation must lie in [0, 1]".into());
        }
        if !(self.p_ref > 0.0) {
            v.push("reference pressure must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidInput(v.join("; ")))
        }
    }
}

/// Brooks–Corey relative permeabilities `(kr_w, kr_o)` at water saturation `s_w`.
pub fn relative_permeability(s_w: f64, f: &FluidParams) -> (f64, f64) {
    let r = RelPerm::eval(s_w, f);
    (r.krw, r.kro)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RelPerm {
    pub krw: f64,
    pub dkrw: f64,
    pub kro: f64,
    pub dkro: f64,
}

impl RelPerm {
    #[inline]
    pub fn eval(s_w: f64, f: &FluidParams) -> Self {
        let den_w = 1.0 - f.s_or - f.s_wcr;
        let den_o = 1.0 - f.s_wc - f.s_ocr;
        let sw_n = (s_w - f.s_wcr) / den_w;
        let so_n = (1.0 - s_w - f.s_ocr) / den_o;
        let (krw, dkrw) = power_window(sw_n, f.n_w);
        let (kro, dkro) = power_window(so_n, f.n_o);
        Self { krw, dkrw: dkrw / den_w, kro, dkro: -dkro / den_o }
    }
}

/// `clamp(x, 0, 1)^n` and its derivative.
#[inline]
fn power_window(x: f64, n: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        (x.powf(n), n * x.powf(n - 1.0))
    }
}

/// Fluid constants converted to SI.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pvt {
    pub c: [f64; 2],
    pub mu: [f64; 2],
    pub p_ref: f64,
}

impl Pvt {
    pub fn new(f: &FluidParams) -> Self {
        Self { c: [f.c_w / BAR, f.c_o / BAR], mu: [f.mu_w, f.mu_o], p_ref: f.p_ref * BAR }
    }

    /// Inverse formation volume factor `exp(c (p - p_ref))` and its pressure derivative.
    #[inline]
    pub fn b(&self, phase: usize, p: f64) -> (f64, f64) {
        let c = self.c[phase];
        if c == 0.0 {
            (1.0, 0.0)
        } else {
            let b = (c * (p - self.p_ref)).exp();
            (b, c * b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let f = FluidParams::default();
        let (krw, _) = relative_permeability(0.15, &f);
        assert_eq!(krw, 0.0);
        let (krw, _) = relative_permeability(0.525, &f);
        assert!((krw - 0.25).abs() < 1e-14);
        let (krw, kro) = relative_permeability(0.90, &f);
        assert!((krw - 1.0).abs() < 1e-14);
        assert_eq!(kro, 0.0);
        let (_, kro) = relative_permeability(0.0, &f);
        assert_eq!(kro, 1.0);
    }

    #[test]
    fn derivatives_match_differences() {
        let f = FluidParams::default();
        for &s in &[0.2, 0.4, 0.6, 0.8, 0.85] {
            let h = 1e-7;
            let r = RelPerm::eval(s, &f);
            let p = RelPerm::eval(s + h, &f);
            let m = RelPerm::eval(s - h, &f);
            assert!((r.dkrw - (p.krw - m.krw) / (2.0 * h)).abs() < 1e-6);
            assert!((r.dkro - (p.kro - m.kro) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let f = FluidParams { mu_w: -1.0, ..FluidParams::default() };
        assert!(f.validate().is_err());
        let f = FluidParams { s_wcr: 0.95, ..FluidParams::default() };
        assert!(f.validate().is_err());
    }
}
