//! Geometric multigrid for the masked Laplace problem.
//!
//! Unknowns live on the nodes of a [`Grid3D`]. Fixed (Dirichlet) nodes keep
//! their initial value; free nodes satisfy the 7-point discrete Laplace
//! equation. Faces of an axis flagged in `neumann` are mirror planes, all other
//! outer faces must be fixed. Coarse levels are built by injection of the
//! fixed-node mask, residuals are moved down by full weighting and corrections
//! back up by trilinear interpolation. Smoothing is red-black Gauss–Seidel,
//! and the symmetric V-cycle preconditions a conjugate-gradient iteration.

use super::grid::Grid3D;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Convergence threshold on `max |r_i| / diag_i` relative to the largest
    /// fixed value.
    pub tolerance: f64,
    pub max_cycles: usize,
    pub pre_smooth: usize,
    pub post_smooth: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_cycles: 100, pre_smooth: 2, post_smooth: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub cycles: usize,
    pub levels: usize,
    /// Final scaled residual `max |r_i| / diag_i` over free nodes.
    pub residual: f64,
}

struct Level {
    grid: Grid3D,
    fixed: Vec<bool>,
    u: Vec<f64>,
    f: Vec<f64>,
    r: Vec<f64>,
    c: [f64; 3],
    diag: f64,
}

impl Level {
    fn new(grid: Grid3D, fixed: Vec<bool>) -> Self {
        let n = grid.len();
        let c = [
            1.0 / (grid.spacing[0] * grid.spacing[0]),
            1.0 / (grid.spacing[1] * grid.spacing[1]),
            1.0 / (grid.spacing[2] * grid.spacing[2]),
        ];
        Self { grid, fixed, u: vec![0.0; n], f: vec![0.0; n], r: vec![0.0; n], c, diag: 2.0 * (c[0] + c[1] + c[2]) }
    }
}

/// Neighbour offsets for node index `i` of an axis with `n` points and stride
/// `s`. Offsets at a mirror face point back into the domain.
#[inline]
fn offsets(i: usize, n: usize, s: usize) -> (isize, isize) {
    let s = s as isize;
    let lo = if i == 0 { s } else { -s };
    let hi = if i + 1 == n { -s } else { s };
    (lo, hi)
}

#[inline]
fn laplace_sum(u: &[f64], p: usize, o: [(isize, isize); 3], c: [f64; 3]) -> f64 {
    let at = |d: isize| u[(p as isize + d) as usize];
    c[0] * (at(o[0].0) + at(o[0].1)) + c[1] * (at(o[1].0) + at(o[1].1)) + c[2] * (at(o[2].0) + at(o[2].1))
}

fn relax(l: &mut Level, color: usize) {
    let [nx, ny, nz] = l.grid.dims;
    let (sx, sy) = (ny * nz, nz);
    let inv = 1.0 / l.diag;
    for i in 0..nx {
        let ox = offsets(i, nx, sx);
        for j in 0..ny {
            let oy = offsets(j, ny, sy);
            let row = (i * ny + j) * nz;
            let mut k = (i + j + color) % 2;
            while k < nz {
                let p = row + k;
                if !l.fixed[p] {
                    let oz = offsets(k, nz, 1);
                    l.u[p] = (laplace_sum(&l.u, p, [ox, oy, oz], l.c) + l.f[p]) * inv;
                }
                k += 2;
            }
        }
    }
}

fn smooth(l: &mut Level, sweeps: usize) {
    for _ in 0..sweeps {
        relax(l, 0);
        relax(l, 1);
    }
}

/// Fills `l.r` and returns `max |r| / diag` over free nodes.
fn residual(l: &mut Level) -> f64 {
    let [nx, ny, nz] = l.grid.dims;
    let (sx, sy) = (ny * nz, nz);
    let mut worst = 0.0f64;
    for i in 0..nx {
        let ox = offsets(i, nx, sx);
        for j in 0..ny {
            let oy = offsets(j, ny, sy);
            let row = (i * ny + j) * nz;
            for k in 0..nz {
                let p = row + k;
                if l.fixed[p] {
                    l.r[p] = 0.0;
                    continue;
                }
                let oz = offsets(k, nz, 1);
                let r = l.f[p] - (l.diag * l.u[p] - laplace_sum(&l.u, p, [ox, oy, oz], l.c));
                l.r[p] = r;
                worst = worst.max(r.abs());
            }
        }
    }
    worst / l.diag
}

/// Mirrors an out-of-range index back into `[0, n)`; valid for offsets of 1.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

fn restrict(fine: &Level, coarse: &mut Level) {
    let [fx, fy, fz] = fine.grid.dims;
    let [cx, cy, cz] = coarse.grid.dims;
    const W: [f64; 3] = [0.25, 0.5, 0.25];
    for ci in 0..cx {
        for cj in 0..cy {
            for ck in 0..cz {
                let q = (ci * cy + cj) * cz + ck;
                coarse.u[q] = 0.0;
                if coarse.fixed[q] {
                    coarse.f[q] = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for (a, wa) in W.iter().enumerate() {
                    let i = mirror(2 * ci as isize + a as isize - 1, fx);
                    for (b, wb) in W.iter().enumerate() {
                        let j = mirror(2 * cj as isize + b as isize - 1, fy);
                        let base = (i * fy + j) * fz;
                        for (c, wc) in W.iter().enumerate() {
                            let k = mirror(2 * ck as isize + c as isize - 1, fz);
                            acc += wa * wb * wc * fine.r[base + k];
                        }
                    }
                }
                coarse.f[q] = acc;
            }
        }
    }
}

fn prolong_add(coarse: &Level, fine: &mut Level) {
    let [fx, fy, fz] = fine.grid.dims;
    let [_, cy, cz] = coarse.grid.dims;
    let span = |i: usize| -> ([usize; 2], [f64; 2], usize) {
        if i.is_multiple_of(2) {
            ([i / 2, i / 2], [1.0, 0.0], 1)
        } else {
            ([i / 2, i / 2 + 1], [0.5, 0.5], 2)
        }
    };
    for i in 0..fx {
        let (ii, wi, ni) = span(i);
        for j in 0..fy {
            let (jj, wj, nj) = span(j);
            for k in 0..fz {
                let p = (i * fy + j) * fz + k;
                if fine.fixed[p] {
                    continue;
                }
                let (kk, wk, nk) = span(k);
                let mut e = 0.0;
                for a in 0..ni {
                    for b in 0..nj {
                        let base = (ii[a] * cy + jj[b]) * cz;
                        for c in 0..nk {
                            e += wi[a] * wj[b] * wk[c] * coarse.u[base + kk[c]];
                        }
                    }
                }
                fine.u[p] += e;
            }
        }
    }
}

fn coarse_mask(fine: &Level, grid: &Grid3D) -> Vec<bool> {
    let [fx, fy, fz] = fine.grid.dims;
    let mut fixed = vec![false; grid.len()];
    for i in 0..grid.dims[0] {
        for j in 0..grid.dims[1] {
            for k in 0..grid.dims[2] {
                let mut any = false;
                for a in -1..=1isize {
                    let fi = mirror(2 * i as isize + a, fx);
                    for b in -1..=1isize {
                        let fj = mirror(2 * j as isize + b, fy);
                        for c in -1..=1isize {
                            let fk = mirror(2 * k as isize + c, fz);
                            any |= fine.fixed[(fi * fy + fj) * fz + fk];
                        }
                    }
                }
                fixed[grid.index(i, j, k)] = any;
            }
        }
    }
    fixed
}

fn smooth_reverse(l: &mut Level, sweeps: usize) {
    for _ in 0..sweeps {
        relax(l, 1);
        relax(l, 0);
    }
}

fn coarse_solve(l: &mut Level) {
    let start = residual(l);
    if start == 0.0 {
        return;
    }
    let max_sweeps = 4 * l.grid.dims.iter().copied().max().unwrap_or(2).pow(2);
    for sweep in 0..max_sweeps {
        smooth(l, 1);
        smooth_reverse(l, 1);
        if sweep % 8 == 7 && residual(l) <= 1e-8 * start {
            return;
        }
    }
}

/// One symmetric V-cycle on the error equation held in `levels[0].f`.
fn vcycle(levels: &mut [Level], opts: &SolveOptions) {
    if levels.len() == 1 {
        coarse_solve(&mut levels[0]);
        return;
    }
    let (head, tail) = levels.split_first_mut().expect("non-empty");
    smooth(head, opts.pre_smooth);
    residual(head);
    restrict(head, &mut tail[0]);
    vcycle(tail, opts);
    prolong_add(&tail[0], head);
    smooth_reverse(head, opts.post_smooth);
}

/// `out = A v` on free nodes, zero on fixed nodes.
fn apply(l: &Level, v: &[f64], out: &mut [f64]) {
    let [nx, ny, nz] = l.grid.dims;
    let (sx, sy) = (ny * nz, nz);
    for i in 0..nx {
        let ox = offsets(i, nx, sx);
        for j in 0..ny {
            let oy = offsets(j, ny, sy);
            let row = (i * ny + j) * nz;
            for k in 0..nz {
                let p = row + k;
                out[p] =
                    if l.fixed[p] { 0.0 } else { l.diag * v[p] - laplace_sum(v, p, [ox, oy, offsets(k, nz, 1)], l.c) };
            }
        }
    }
}

/// Solves in place. `u` carries the Dirichlet values at fixed nodes and the
/// initial guess elsewhere. Outer faces of non-mirror axes are treated as fixed
/// regardless of `fixed`.
///
/// The V-cycle is used as a preconditioner for conjugate gradients. Mirror
/// faces make the stencil matrix non-symmetric in the plain dot product, so
/// all inner products weight face nodes by ½ per mirror axis, which restores
/// self-adjointness of both the operator and the cycle.
pub fn solve(
    grid: &Grid3D,
    fixed: &[bool],
    u: &mut [f64],
    neumann: [bool; 3],
    opts: &SolveOptions,
    what: &str,
) -> Result<SolveStats> {
    grid.validate()?;
    if fixed.len() != grid.len() || u.len() != grid.len() {
        return Err(invalid("mask and value buffers must match the grid"));
    }
    let n = grid.len();
    let mut mask = fixed.to_vec();
    let mut weight = vec![1.0; n];
    let [nx, ny, nz] = grid.dims;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let idx = [i, j, k];
                let p = grid.index(i, j, k);
                for a in 0..3 {
                    if idx[a] == 0 || idx[a] + 1 == grid.dims[a] {
                        if neumann[a] {
                            weight[p] *= 0.5;
                        } else {
                            mask[p] = true;
                        }
                    }
                }
            }
        }
    }
    let scale = u.iter().zip(&mask).filter(|(_, &m)| m).fold(0.0f64, |s, (v, _)| s.max(v.abs()));
    if scale == 0.0 {
        u.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { cycles: 0, levels: 1, residual: 0.0 });
    }

    let mut levels = vec![Level::new(*grid, mask)];
    let mut depth = 0;
    while depth < 8 && grid.coarsenable(depth + 1) {
        depth += 1;
        let last = levels.last().expect("fine level");
        let cg = last.grid.coarsened();
        let cm = coarse_mask(last, &cg);
        levels.push(Level::new(cg, cm));
    }
    let diag = levels[0].diag;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&weight).map(|((x, y), w)| x * y * w).sum::<f64>();
    let max_res = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / diag / scale;

    // r = −A u with the fixed values in u (the right-hand side is zero).
    let mut r = vec![0.0; n];
    apply(&levels[0], u, &mut r);
    r.iter_mut().for_each(|v| *v = -*v);
    let precondition = |levels: &mut Vec<Level>, r: &[f64]| -> Vec<f64> {
        levels[0].f.copy_from_slice(r);
        levels[0].u.iter_mut().for_each(|v| *v = 0.0);
        vcycle(levels, opts);
        levels[0].u.clone()
    };
    let mut res = max_res(&r);
    let mut cycles = 0;
    if res <= opts.tolerance {
        return Ok(SolveStats { cycles, levels: levels.len(), residual: res });
    }
    let mut z = precondition(&mut levels, &r);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    while res > opts.tolerance {
        if cycles == opts.max_cycles || !rz.is_finite() {
            return Err(Error::NoConvergence { what: what.to_string(), residual: res, iterations: cycles });
        }
        apply(&levels[0], &p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        cycles += 1;
        res = max_res(&r);
        log::trace!("{what}: iteration {cycles} residual {res:.3e}");
        if res <= opts.tolerance {
            break;
        }
        z = precondition(&mut levels, &r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(SolveStats { cycles, levels: levels.len(), residual: res })
}
