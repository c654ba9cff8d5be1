//! Energies and space-time norms.
//!
//! Radial energies are computed in the reduced variable w = r·u, for which
//! ½∫(ψ² + |∇φ|²)dx = 2π∫((rψ)² + (∂ᵣ(rφ))²)dr whenever the fields decay
//! before the outer boundary. The nonlinear energy adds the full potential
//! term ∫F(φ)dx with coefficient one; that, not a half, is the combination
//! the flow conserves and the one whose square root the far-field isometry
//! reproduces.

use crate::grids::{CauchyData, Grid3D, RadialGrid, SpacetimeField, SpacetimeTrajectory};
use crate::nonlinearity::Nonlinearity;
use crate::util;
use crate::{Error, Result};

fn require_origin(grid: &RadialGrid) -> Result<()> {
    if !grid.includes_origin() {
        return Err(Error::Argument(
            "energy quadrature needs a grid that includes the origin node".into(),
        ));
    }
    Ok(())
}

/// Free energy ½∫(|ψ|² + |∇φ|²)dx of radial Cauchy data.
pub fn energy_linear(grid: &RadialGrid, data: &CauchyData) -> Result<f64> {
    require_origin(grid)?;
    data.check_radial(grid)?;
    let w_phi: Vec<f64> = grid
        .nodes()
        .zip(&data.phi)
        .map(|(r, &v)| r * v)
        .collect();
    let dw = util::derivative_uniform(&w_phi, grid.dr());
    let integrand: Vec<f64> = grid
        .nodes()
        .zip(&data.psi)
        .zip(&dw)
        .map(|((r, &psi), &d)| (r * psi) * (r * psi) + d * d)
        .collect();
    Ok(2.0 * std::f64::consts::PI * util::trapz_corrected(&integrand, grid.dr()))
}

/// Nonlinear energy: the free energy plus ∫F(φ)dx.
pub fn energy_semilinear(grid: &RadialGrid, data: &CauchyData, nl: &Nonlinearity) -> Result<f64> {
    let linear = energy_linear(grid, data)?;
    if nl.is_zero() {
        return Ok(linear);
    }
    let mut integrand = Vec::with_capacity(data.phi.len());
    for (r, &phi) in grid.nodes().zip(&data.phi) {
        integrand.push(nl.antiderivative(phi)? * r * r);
    }
    let potential = 4.0 * std::f64::consts::PI * util::trapz_corrected(&integrand, grid.dr());
    Ok(linear + potential)
}

fn gradient_sq_3d(grid: &Grid3D, phi: &[f64]) -> Vec<f64> {
    let np = grid.nodes_per_axis();
    let h = grid.h();
    let mut out = vec![0.0; phi.len()];
    let strides = [np * np, np, 1usize];
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                let flat = grid.idx(i, j, k);
                let mut acc = 0.0;
                for (axis, &pos) in [i, j, k].iter().enumerate() {
                    let st = strides[axis];
                    let d = if pos == 0 {
                        (-3.0 * phi[flat] + 4.0 * phi[flat + st] - phi[flat + 2 * st])
                            / (2.0 * h)
                    } else if pos == np - 1 {
                        (3.0 * phi[flat] - 4.0 * phi[flat - st] + phi[flat - 2 * st]) / (2.0 * h)
                    } else {
                        (phi[flat + st] - phi[flat - st]) / (2.0 * h)
                    };
                    acc += d * d;
                }
                out[flat] = acc;
            }
        }
    }
    out
}

/// Free energy of Cauchy data on a cube, node sums with centered gradients.
pub fn energy_linear_3d(grid: &Grid3D, data: &CauchyData) -> Result<f64> {
    data.check_cube(grid)?;
    let grad = gradient_sq_3d(grid, &data.phi);
    let cell = grid.h().powi(3);
    let mut acc = 0.0;
    for (idx, &psi) in data.psi.iter().enumerate() {
        acc += 0.5 * (psi * psi + grad[idx]);
    }
    Ok(acc * cell)
}

/// Nonlinear energy on a cube.
pub fn energy_semilinear_3d(grid: &Grid3D, data: &CauchyData, nl: &Nonlinearity) -> Result<f64> {
    let linear = energy_linear_3d(grid, data)?;
    if nl.is_zero() {
        return Ok(linear);
    }
    let cell = grid.h().powi(3);
    let mut acc = 0.0;
    for &phi in &data.phi {
        acc += nl.antiderivative(phi)?;
    }
    Ok(linear + acc * cell)
}

/// Value of a mixed space-time Lebesgue norm together with the scaling
/// admissibility of the exponent pair.
#[derive(Debug, Clone, Copy)]
pub struct SpacetimeNorm {
    pub value: f64,
    /// Whether (p, q) sits on the line 1/p + 3/q = 1/2 that the dispersive
    /// estimates for the 3D wave equation live on.
    pub admissible: bool,
}

/// Mixed norm ‖u‖ = (∫ (∫|u|^q dx)^{p/q} dt)^{1/p} of a radial trajectory.
/// Either exponent may be `f64::INFINITY`.
pub fn norm_lplq(traj: &SpacetimeTrajectory, p: f64, q: f64) -> Result<SpacetimeNorm> {
    for (name, e) in [("p", p), ("q", q)] {
        if e.is_nan() || e <= 0.0 {
            return Err(Error::Argument(format!("exponent {name} must be positive, got {e}")));
        }
    }
    let grid = traj.grid();
    require_origin(grid)?;
    let dr = grid.dr();
    let mut slices = Vec::with_capacity(traj.n_steps() + 1);
    for n in 0..=traj.n_steps() {
        let u = traj.u_at(n);
        let m = if q.is_infinite() {
            u.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
        } else {
            let integrand: Vec<f64> = grid
                .nodes()
                .zip(u)
                .map(|(r, &v)| v.abs().powf(q) * r * r)
                .collect();
            let raw = 4.0 * std::f64::consts::PI * util::trapz_corrected(&integrand, dr);
            raw.max(0.0).powf(1.0 / q)
        };
        slices.push(m);
    }
    let value = if p.is_infinite() {
        slices.iter().fold(0.0f64, |a, &v| a.max(v))
    } else {
        let powered: Vec<f64> = slices.iter().map(|&m| m.powf(p)).collect();
        util::trapz_corrected(&powered, traj.dt()).max(0.0).powf(1.0 / p)
    };
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    let admissible = (inv_p + 3.0 * inv_q - 0.5).abs() < 1e-12;
    Ok(SpacetimeNorm { value, admissible })
}

/// L¹ₜL²ₓ norm ∫‖F(t, ·)‖_{L²} dt of a forcing field on a radial grid, the
/// quantity controlling how much a source can grow the radiation field.
pub fn forcing_l1l2(grid: &RadialGrid, field: &SpacetimeField) -> Result<f64> {
    let slices: Vec<f64> = field
        .values
        .iter()
        .map(|row| l2_radial(grid, row))
        .collect::<Result<Vec<_>>>()?;
    Ok(util::trapz_corrected(&slices, field.dt))
}

/// L² norm √(∫v²dx) of a radial field.
pub fn l2_radial(grid: &RadialGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::Argument(format!(
            "field has {} samples but the grid has {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let integrand: Vec<f64> = grid
        .nodes()
        .zip(values)
        .map(|(r, &v)| v * v * r * r)
        .collect();
    Ok((4.0 * std::f64::consts::PI * util::trapz_corrected(&integrand, grid.dr()))
        .max(0.0)
        .sqrt())
}
