//! Basis construction for the simulation studies.

use hrshift_core::design::{canonical_hrf, BasisKind, BasisSet, DoubleGamma};
use nalgebra::{DMatrix, DVector};

use crate::config::{BasisChoice, BasisConfig};
use crate::error::Result;

/// Three-function (or `beta.len()`-function) basis spanning a family of
/// double-gamma responses, rotated and scaled so that `B * beta` equals the
/// projection of the family's peak-normalised mean response onto the span.
pub fn flobs_like(dt: f64, duration: f64, beta: &[f64]) -> Result<BasisSet> {
    let mut family: Vec<Vec<f64>> = Vec::new();
    for pd in [4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5, 8.0] {
        for ud in [12.0, 14.0, 16.0, 18.0] {
            for disp in [0.8, 1.0, 1.2] {
                for ratio in [3.0, 6.0, 10.0] {
                    let g = DoubleGamma { peak_delay: pd, undershoot_delay: ud, peak_dispersion: disp, ratio, ..DoubleGamma::default() };
                    family.push(g.sample_normalized(dt, duration));
                }
            }
        }
    }
    let n = family[0].len();
    let g = beta.len();
    let f = DMatrix::from_fn(n, family.len(), |i, j| family[j][i]);
    let svd = f.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let b0 = DMatrix::from_fn(n, g, |i, j| u[(i, order[j])]);

    let mut mean = DVector::from_fn(n, |i, _| f.row(i).mean());
    let peak = mean.max();
    mean /= peak;
    let c = b0.transpose() * &mean;
    let bv = DVector::from_column_slice(beta);
    let a = &bv / bv.norm();
    let target = &c / c.norm();
    let diff = &a - &target;
    let h = if diff.norm() < 1e-14 {
        DMatrix::identity(g, g)
    } else {
        let v = &diff / diff.norm();
        DMatrix::identity(g, g) - &v * v.transpose() * 2.0
    };
    let m = b0 * h * (c.norm() / bv.norm());
    Ok(BasisSet::new(m, dt, BasisKind::Generated)?)
}

pub fn build_basis(cfg: &BasisConfig, beta: &[f64]) -> Result<BasisSet> {
    match cfg.kind {
        BasisChoice::Canonical => Ok(canonical_hrf(cfg.dt, cfg.duration)?),
        BasisChoice::FlobsLike => flobs_like(cfg.dt, cfg.duration, beta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrshift_core::shape::{shape_params, ShapeParam};

    #[test]
    fn reference_coefficients_give_unit_peak_response() {
        let beta = [3.2, -6.4, 3.2];
        let b = flobs_like(0.1, 30.0, &beta).unwrap();
        assert_eq!(b.n_basis(), 3);
        let curve = b.curve(&beta).unwrap();
        let sp = shape_params(&curve, 0.1).unwrap();
        let pm = sp.get(ShapeParam::Pm).unwrap();
        assert!((pm - 1.0).abs() < 0.05, "peak {pm}");
        let ttp = sp.get(ShapeParam::Ttp).unwrap();
        assert!((4.0..8.0).contains(&ttp));
        assert!(sp.get(ShapeParam::Na).unwrap() < 0.0);
        // Columns are orthogonal.
        let g = b.matrix().transpose() * b.matrix();
        assert!(g[(0, 1)].abs() < 1e-9 * g[(0, 0)]);
    }
}
