//! Minimum-cost assignment (Kuhn–Munkres with row/column potentials).

use crate::error::{Error, Result};

/// Costs with one row per ground truth and one column per prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "cost_matrix",
                format!(
                    "{rows}x{cols} matrix needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("cost_matrix", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Number of ground truths.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of predictions.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

/// Ground truth `g` is matched to prediction `gt_to_pred[g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub gt_to_pred: Vec<usize>,
    pub total_cost: f64,
}

/// Optimal injective matching of every ground truth (row) to a distinct
/// prediction (column). Requires at least as many predictions as ground
/// truths; surplus predictions stay unmatched. Runs in `O(n^3)` on the
/// square matrix obtained by padding with dummy rows of constant cost.
pub fn hungarian_assign(cost: &CostMatrix) -> Result<Assignment> {
    let (n_gt, n_pred) = (cost.rows, cost.cols);
    if n_pred < n_gt {
        return Err(Error::invalid(
            "hungarian_assign",
            format!("{n_pred} predictions cannot cover {n_gt} ground truths"),
        ));
    }
    if let Some(bad) = cost.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "hungarian_assign",
            format!("non-finite cost {bad}"),
        ));
    }
    if n_gt == 0 {
        return Ok(Assignment {
            gt_to_pred: Vec::new(),
            total_cost: 0.0,
        });
    }

    let n = n_pred;
    let pad = cost.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let at = |i: usize, j: usize| if i < n_gt { cost.get(i, j) } else { pad };

    // 1-based potentials formulation; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut gt_to_pred = vec![usize::MAX; n_gt];
    for (j, &i) in row_of_col.iter().enumerate().skip(1) {
        if (1..=n_gt).contains(&i) {
            gt_to_pred[i - 1] = j - 1;
        }
    }
    let total_cost = gt_to_pred
        .iter()
        .enumerate()
        .map(|(g, &p)| cost.get(g, p))
        .sum();
    Ok(Assignment {
        gt_to_pred,
        total_cost,
    })
}
