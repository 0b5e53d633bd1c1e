//! The reduced quadrature rules the discretization is built on, plus an
//! accurate rule for measuring errors.

use std::sync::OnceLock;

use crate::mesh::{ElementGeometry, FacetGeometry, Point};

/// One-point element rule: `|K| g(barycenter)`.
pub fn qk0(geom: &ElementGeometry, g: impl Fn(&Point) -> f64) -> f64 {
    geom.measure * g(&geom.barycenter)
}

/// Facet-barycenter element rule: `|K| / (d+1) * sum_i g(m_i)`. Exact for
/// affine integrands.
pub fn qk1(geom: &ElementGeometry, g: impl Fn(&Point) -> f64) -> f64 {
    let n = geom.n_facets();
    let s: f64 = (0..n).map(|i| g(&geom.facet_barycenters[i])).sum();
    geom.measure / n as f64 * s
}

/// One-point facet rule: `|F| g(barycenter)`.
pub fn qf0(facet: &FacetGeometry, g: impl Fn(&Point) -> f64) -> f64 {
    facet.measure * g(&facet.barycenter)
}

/// Element boundary rule: one point per facet. The integrand receives the
/// local facet index so that it can use the facet's outward normal.
pub fn q_boundary0(geom: &ElementGeometry, g: impl Fn(usize, &Point) -> f64) -> f64 {
    (0..geom.n_facets())
        .map(|i| geom.facet_measures[i] * g(i, &geom.facet_barycenters[i]))
        .sum()
}

/// Points in barycentric coordinates and weights normalized to sum to one.
#[derive(Clone, Debug)]
pub struct SimplexRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Grundmann-Moeller rule of odd degree `2s + 1` on the `dim`-simplex.
pub fn grundmann_moeller(dim: usize, s: usize) -> SimplexRule {
    let n = dim as i64;
    let d = 2 * s as i64 + 1;
    let fact = |k: i64| (1..=k).map(|v| v as f64).product::<f64>();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..=s as i64 {
        let denom = (d + n - 2 * i) as f64;
        let w = (-1f64).powi(i as i32) * 2f64.powi(-2 * s as i32) * denom.powi(d as i32) / (fact(i) * fact(d + n - i)) * fact(n);
        for beta in compositions(s - i as usize, dim + 1) {
            let mut p = [0.0; 4];
            for j in 0..=dim {
                p[j] = (2 * beta[j] + 1) as f64 / denom;
            }
            points.push(p);
            weights.push(w);
        }
    }
    SimplexRule { points, weights }
}

/// All ways to write `total` as an ordered sum of `parts` non-negative integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn error_rule(dim: usize) -> &'static SimplexRule {
    static RULES: OnceLock<[SimplexRule; 2]> = OnceLock::new();
    let rules = RULES.get_or_init(|| [grundmann_moeller(2, 2), grundmann_moeller(3, 2)]);
    &rules[dim - 2]
}

/// Degree-5 element rule for error norms. The integrand receives the physical
/// point and its barycentric coordinates.
pub fn error_quadrature(geom: &ElementGeometry, g: impl Fn(&Point, &[f64; 4]) -> f64) -> f64 {
    let rule = error_rule(geom.dim);
    let mut s = 0.0;
    for (lam, w) in rule.points.iter().zip(&rule.weights) {
        s += w * g(&geom.point_at(lam), lam);
    }
    geom.measure * s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for dim in [2, 3] {
            let r = grundmann_moeller(dim, 2);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
