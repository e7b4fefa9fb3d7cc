use serde::{Deserialize, Serialize};

use super::mesh::{Field, Grid};
use super::GridError;

/// Nodal gradient; `values[node * d + axis]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GradientField {
    pub fn at_node(&self, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn norm_at(&self, node: usize) -> f64 {
        self.at_node(node).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len()).map(|n| self.norm_at(n)).fold(0.0, f64::max)
    }

    /// Multilinear interpolation of the gradient at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.grid.dim();
        (0..d)
            .map(|a| {
                let comp: Vec<f64> = (0..self.grid.len()).map(|n| self.values[n * d + a]).collect();
                self.grid.interpolate(&comp, x)
            })
            .collect()
    }
}

/// Central differences inside, second-order one-sided differences on faces.
pub fn gradient_of(grid: &Grid, u: &[f64]) -> GradientField {
    let d = grid.dim();
    let mut values = vec![0.0; grid.len() * d];
    let mut idx = [0usize; 3];
    for node in 0..grid.len() {
        grid.multi_index(node, &mut idx[..d]);
        for a in 0..d {
            let h = grid.spacing(a);
            let st = grid.stride(a);
            let n = grid.counts[a];
            let i = idx[a];
            values[node * d + a] = if i == 0 {
                (-3.0 * u[node] + 4.0 * u[node + st] - u[node + 2 * st]) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * u[node] - 4.0 * u[node - st] + u[node - 2 * st]) / (2.0 * h)
            } else {
                (u[node + st] - u[node - st]) / (2.0 * h)
            };
        }
    }
    GradientField {
        grid: grid.clone(),
        values,
    }
}

pub fn gradient(field: &Field, t: f64) -> Result<GradientField, GridError> {
    Ok(gradient_of(&field.grid, field.at(t)?))
}
