use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dominance::cdf_residual;
use crate::distribution::SortedReturns;
use crate::error::{Error, Result};
use crate::harness::config::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x1: f64,
    pub x2: f64,
    pub residual_g: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub resolution: usize,
    pub points: usize,
    pub feasible_points: usize,
    /// Connected groups of feasible grid points, 4-neighbour adjacency.
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub summary: ScanSummary,
}

/// Brute-force residual grid over a two-asset problem, restricted to the
/// admissible triangle.
pub fn scan_feasible(problem: &Problem, resolution: usize, max_points: usize) -> Result<ScanResult> {
    let s = &problem.dataset.matrix;
    if s.assets() != 2 {
        return Err(Error::Config(format!(
            "scan needs exactly 2 assets, the config selects {}",
            s.assets()
        )));
    }
    if resolution == 0 {
        return Err(Error::param("scan.resolution", "must be at least 1"));
    }
    let side = resolution + 1;
    let total = side.saturating_mul(side);
    if total > max_points {
        return Err(Error::GridTooLarge {
            points: total,
            limit: max_points,
        });
    }
    let (lower, upper) = problem.root_box();
    let coord = |k: usize, i: usize| lower[k] + (upper[k] - lower[k]) * i as f64 / resolution as f64;

    let mut grid: Vec<Option<bool>> = vec![None; total];
    let mut points = Vec::new();
    for i in 0..side {
        for j in 0..side {
            let x = [coord(0, i), coord(1, j)];
            if !problem.bounds.contains(&x) {
                continue;
            }
            let r = SortedReturns::of_portfolio(s, &x)?;
            let residual_g = cdf_residual(&r, &problem.reference);
            let feasible = residual_g <= 0.0;
            grid[i * side + j] = Some(feasible);
            points.push(ScanPoint {
                x1: x[0],
                x2: x[1],
                residual_g,
                feasible,
            });
        }
    }

    let mut seen = vec![false; total];
    let mut components = 0;
    for start in 0..total {
        if grid[start] != Some(true) || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k / side, k % side);
            let mut visit = |ni: usize, nj: usize| {
                let nk = ni * side + nj;
                if grid[nk] == Some(true) && !seen[nk] {
                    seen[nk] = true;
                    queue.push_back(nk);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < side {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < side {
                visit(i, j + 1);
            }
        }
    }
    let feasible_points = points.iter().filter(|p| p.feasible).count();
    Ok(ScanResult {
        summary: ScanSummary {
            resolution,
            points: points.len(),
            feasible_points,
            components,
        },
        points,
    })
}

pub fn scan_csv(points: &[ScanPoint]) -> String {
    let mut out = String::from("x1,x2,residual_g,feasible\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.x1, p.x2, p.residual_g, u8::from(p.feasible)));
    }
    out
}
