//! The preconditioner stack.
//!
//! - [`ALPreconditioner`]: the decoupled block preconditioner; per species
//!   one augmented flux-block solve (direct or one multigrid V-cycle) and
//!   the exact Schur approximation `w -> -kappa_i M_p^{-1} w`.
//! - [`GmgCycle`]: a V(1,1) geometric multigrid cycle, used either on a
//!   single augmented flux block with vertex-star relaxation, or
//!   monolithically with the block preconditioner (wrapped in one damped
//!   Richardson step) or vertex-Vanka relaxation as smoother. The coarsest
//!   level is solved directly.

use crate::assemble::{BlockSystem, DgMassInv};
use crate::error::{Error, Result};
use crate::layout::Field;
use crate::linalg::csr::Csr;
use crate::linalg::gmres::Preconditioner;
use crate::linalg::lu::{lu_factor, DirectSolver};
use crate::linalg::patchsolve::PatchFactor;
use crate::patches::{vertex_star_patches, vertex_vanka_patches, PatchSet};
use crate::transfer::LevelStack;
use rayon::prelude::*;

/// Additive Schwarz damping for star sweeps used directly as multigrid
/// relaxation.
pub const STAR_DAMPING: f64 = 0.5;
/// Vanka sweeps inside monolithic multigrid.
pub const VANKA_DAMPING: f64 = 0.5;
/// The single-iteration Chebyshev wrapper reduces to damped Richardson;
/// the step is `CHEBYSHEV_SCALE / lambda_max_estimate`.
pub const CHEBYSHEV_SCALE: f64 = 0.8;
const POWER_ITERATIONS: usize = 10;

/// One additive Schwarz sweep: damped sum of dense patch corrections.
pub struct PatchSweep {
    factors: Vec<PatchFactor>,
    damping: f64,
}

impl PatchSweep {
    /// Factorizes all non-empty patches of `set` against `matrix`,
    /// subtracting `offset` from every index (species-local blocks).
    pub fn new(matrix: &Csr, set: &PatchSet, offset: usize, damping: f64) -> Result<PatchSweep> {
        let factors: Vec<PatchFactor> = set
            .patches
            .par_iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(vertex, p)| {
                let local: Vec<usize> = p.iter().map(|&d| d - offset).collect();
                PatchFactor::new(matrix, local, vertex)
            })
            .collect::<Result<_>>()?;
        Ok(PatchSweep { factors, damping })
    }

    /// `z += damping * sum_patches A_p^{-1} r_p`.
    pub fn apply_add(&self, residual: &[f64], z: &mut [f64]) {
        for f in &self.factors {
            f.accumulate(residual, z, self.damping);
        }
    }
}

/// The decoupled Schur part: `z_mu = -kappa_i M_p^{-1} r_mu` per species.
pub struct SchurApply {
    pub kappa: Vec<f64>,
    pub dg_mass: DgMassInv,
    pub dg_per: usize,
}

impl SchurApply {
    pub fn apply(&self, r_mu: &[f64], z_mu: &mut [f64]) {
        let n = self.kappa.len();
        let mut scratch = vec![0.0; self.dg_per];
        for s in 0..n {
            let slice = s * self.dg_per..(s + 1) * self.dg_per;
            self.dg_mass.apply_inv(&r_mu[slice.clone()], &mut scratch);
            for (z, v) in z_mu[slice].iter_mut().zip(&scratch) {
                *z = -self.kappa[s] * v;
            }
        }
    }
}

/// How the augmented flux blocks are inverted inside the block
/// preconditioner.
pub enum FluxSolve {
    Direct(DirectSolver),
    Cycle(GmgCycle),
}

impl FluxSolve {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            FluxSolve::Direct(f) => f.solve_into(r, z),
            FluxSolve::Cycle(c) => c.apply_cycle(r, z),
        }
    }
}

/// Block diagonal preconditioner: per-species augmented flux solves and the
/// scaled mass Schur approximation. Species never couple.
pub struct ALPreconditioner {
    flux: Vec<FluxSolve>,
    schur: SchurApply,
    rt_per: usize,
}

impl ALPreconditioner {
    /// Exact ("ideal") inner solves: one sparse factorization per species.
    pub fn direct(sys: &BlockSystem, dg_per: usize) -> Result<ALPreconditioner> {
        if sys.kappa.iter().all(|&k| k == 0.0) {
            return Err(Error::NotReady(
                "the block preconditioner needs a positive augmentation".into(),
            ));
        }
        let flux = sys
            .flux_blocks
            .par_iter()
            .map(|b| lu_factor(b).map(FluxSolve::Direct))
            .collect::<Result<_>>()?;
        Ok(ALPreconditioner {
            flux,
            schur: SchurApply {
                kappa: sys.kappa.clone(),
                dg_mass: sys.dg_mass.clone(),
                dg_per,
            },
            rt_per: sys.flux_total / sys.n_species,
        })
    }

    /// Flux blocks approximated by one geometric multigrid V-cycle each.
    pub fn with_gmg(stack: &LevelStack, systems: &[BlockSystem]) -> Result<ALPreconditioner> {
        let finest = systems.last().ok_or_else(|| Error::NotReady("no levels".into()))?;
        if finest.kappa.iter().all(|&k| k == 0.0) {
            return Err(Error::NotReady(
                "the block preconditioner needs a positive augmentation".into(),
            ));
        }
        let n = finest.n_species;
        let mut flux = Vec::with_capacity(n);
        for s in 0..n {
            flux.push(FluxSolve::Cycle(build_flux_block_gmg(stack, systems, s)?));
        }
        let layout = stack.finest_layout();
        Ok(ALPreconditioner {
            flux,
            schur: SchurApply {
                kappa: finest.kappa.clone(),
                dg_mass: finest.dg_mass.clone(),
                dg_per: layout.dg_per_species,
            },
            rt_per: layout.rt_per_species,
        })
    }

    fn apply_blocks(&self, r: &[f64], z: &mut [f64]) {
        let n = self.flux.len();
        let f = n * self.rt_per;
        for (s, solver) in self.flux.iter().enumerate() {
            let slice = s * self.rt_per..(s + 1) * self.rt_per;
            solver.apply(&r[slice.clone()], &mut z[slice]);
        }
        self.schur.apply(&r[f..], &mut z[f..]);
    }
}

impl Preconditioner for ALPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.apply_blocks(r, z);
    }
}

/// Per-level relaxation of a multigrid cycle.
pub enum LevelSmoother {
    /// One additive vertex-star sweep (single-field cycles).
    Star(PatchSweep),
    /// One damped Richardson step wrapping the block smoother: star sweeps
    /// on the augmented flux blocks (undamped), exact Schur solves.
    AlBlock {
        flux_sweeps: Vec<PatchSweep>,
        schur: SchurApply,
        rt_per: usize,
        omega: f64,
    },
    /// One additive vertex-Vanka sweep over all fields.
    Vanka(PatchSweep),
}

impl LevelSmoother {
    /// `z = S(r)` from a zero initial guess.
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        match self {
            LevelSmoother::Star(sweep) | LevelSmoother::Vanka(sweep) => {
                sweep.apply_add(r, z);
            }
            LevelSmoother::AlBlock {
                flux_sweeps,
                schur,
                rt_per,
                omega,
            } => {
                let n = flux_sweeps.len();
                let f = n * rt_per;
                for (s, sweep) in flux_sweeps.iter().enumerate() {
                    let slice = s * rt_per..(s + 1) * rt_per;
                    sweep.apply_add(&r[slice.clone()], &mut z[slice]);
                }
                schur.apply(&r[f..], &mut z[f..]);
                z.iter_mut().for_each(|v| *v *= omega);
            }
        }
    }
}

struct GmgLevel {
    matrix: Csr,
    smoother: LevelSmoother,
    essential: Vec<bool>,
}

/// A V(1,1) cycle over a level stack; one application is a fixed linear
/// operator for the stationary smoothers used here.
pub struct GmgCycle {
    levels: Vec<GmgLevel>,
    prolong: Vec<Csr>,
    restrict: Vec<Csr>,
    coarse: DirectSolver,
    coarse_essential: Vec<bool>,
}

impl GmgCycle {
    pub fn apply_cycle(&self, r: &[f64], z: &mut [f64]) {
        let top = self.levels.len() - 1;
        let out = self.v_cycle(top, r);
        z.copy_from_slice(&out);
    }

    fn v_cycle(&self, level: usize, r: &[f64]) -> Vec<f64> {
        if level == 0 {
            let mut z = vec![0.0; r.len()];
            self.coarse.solve_into(r, &mut z);
            return z;
        }
        let lvl = &self.levels[level];
        let n = lvl.matrix.n_rows;
        let mut x = vec![0.0; n];
        lvl.smoother.apply(r, &mut x);

        // Coarse correction.
        let mut d = vec![0.0; n];
        lvl.matrix.matvec(&x, &mut d);
        for i in 0..n {
            d[i] = r[i] - d[i];
        }
        let rc_len = self.restrict[level - 1].n_rows;
        let mut rc = vec![0.0; rc_len];
        self.restrict[level - 1].matvec(&d, &mut rc);
        let coarse_essential = if level >= 2 {
            &self.levels[level - 1].essential
        } else {
            &self.coarse_essential
        };
        for (i, &e) in coarse_essential.iter().enumerate() {
            if e {
                rc[i] = 0.0;
            }
        }
        let xc = self.v_cycle(level - 1, &rc);
        let mut px = vec![0.0; n];
        self.prolong[level - 1].matvec(&xc, &mut px);
        for i in 0..n {
            if !lvl.essential[i] {
                x[i] += px[i];
            }
        }

        // Post-smooth.
        lvl.matrix.matvec(&x, &mut d);
        for i in 0..n {
            d[i] = r[i] - d[i];
        }
        let mut s = vec![0.0; n];
        lvl.smoother.apply(&d, &mut s);
        for i in 0..n {
            x[i] += s[i];
        }
        x
    }
}

impl Preconditioner for GmgCycle {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.apply_cycle(r, z);
    }
}

/// Deterministic pseudo-random vector for the power iteration.
fn seed_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
    let mut next = move || {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    (0..n)
        .map(|_| (next() >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest-magnitude eigenvalue estimate of the smoothed operator
/// `y -> S(A y)`, used to damp the Richardson wrapper.
fn estimate_omega(
    matrix: &Csr,
    apply_smoother: &dyn Fn(&[f64], &mut [f64]),
    essential: &[bool],
) -> f64 {
    let n = matrix.n_rows;
    let mut y = seed_vector(n, n as u64);
    for (i, &e) in essential.iter().enumerate() {
        if e {
            y[i] = 0.0;
        }
    }
    let mut ay = vec![0.0; n];
    let mut sy = vec![0.0; n];
    let mut lambda = 1.0;
    for _ in 0..POWER_ITERATIONS {
        let scale = norm(&y);
        if scale == 0.0 {
            break;
        }
        y.iter_mut().for_each(|v| *v /= scale);
        matrix.matvec(&y, &mut ay);
        apply_smoother(&ay, &mut sy);
        lambda = norm(&sy);
        std::mem::swap(&mut y, &mut sy);
    }
    CHEBYSHEV_SCALE / lambda.max(1e-12)
}

/// Geometric multigrid for one species' augmented flux block: V(1,1) with
/// damped additive vertex-star relaxation and a direct coarse solve.
pub fn build_flux_block_gmg(
    stack: &LevelStack,
    systems: &[BlockSystem],
    species: usize,
) -> Result<GmgCycle> {
    check_levels(stack, systems)?;
    let n_levels = systems.len();
    let mut levels = Vec::with_capacity(n_levels);
    let mut coarse_essential = Vec::new();
    for (l, sys) in systems.iter().enumerate() {
        let layout = &stack.layouts[l];
        let mesh = &stack.hierarchy.levels[l];
        let offset = layout.flux_offset(species);
        let essential: Vec<bool> = (0..layout.rt_per_species)
            .map(|d| layout.essential[offset + d])
            .collect();
        if l == 0 {
            coarse_essential = essential;
            levels.push(GmgLevel {
                matrix: sys.flux_blocks[species].clone(),
                smoother: LevelSmoother::Star(PatchSweep {
                    factors: Vec::new(),
                    damping: 0.0,
                }),
                essential: Vec::new(),
            });
            continue;
        }
        let set = vertex_star_patches(mesh, layout, Field::Flux(species), l)?;
        let sweep = PatchSweep::new(&sys.flux_blocks[species], &set, offset, STAR_DAMPING)?;
        levels.push(GmgLevel {
            matrix: sys.flux_blocks[species].clone(),
            smoother: LevelSmoother::Star(sweep),
            essential,
        });
    }
    let coarse = lu_factor(&systems[0].flux_blocks[species])?;
    let prolong: Vec<Csr> = stack.transfers.iter().map(|t| t.p_rt.clone()).collect();
    let restrict = prolong.iter().map(Csr::transpose).collect();
    Ok(GmgCycle {
        levels,
        prolong,
        restrict,
        coarse,
        coarse_essential,
    })
}

/// Which relaxation the monolithic cycle uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonolithicSmoother {
    AlBlock,
    Vanka,
}

/// Monolithic geometric multigrid over the full coupled systems.
pub fn build_monolithic_gmg(
    stack: &LevelStack,
    systems: &[BlockSystem],
    smoother: MonolithicSmoother,
) -> Result<GmgCycle> {
    check_levels(stack, systems)?;
    let n_levels = systems.len();
    let mut levels = Vec::with_capacity(n_levels);
    let mut coarse_essential = Vec::new();
    for (l, sys) in systems.iter().enumerate() {
        let layout = &stack.layouts[l];
        let mesh = &stack.hierarchy.levels[l];
        if l == 0 {
            coarse_essential = layout.essential.clone();
            levels.push(GmgLevel {
                matrix: sys.matrix.clone(),
                smoother: LevelSmoother::Star(PatchSweep {
                    factors: Vec::new(),
                    damping: 0.0,
                }),
                essential: Vec::new(),
            });
            continue;
        }
        let smoother = match smoother {
            MonolithicSmoother::AlBlock => {
                let n = sys.n_species;
                let rt_per = layout.rt_per_species;
                let mut flux_sweeps = Vec::with_capacity(n);
                for s in 0..n {
                    let set = vertex_star_patches(mesh, layout, Field::Flux(s), l)?;
                    flux_sweeps.push(PatchSweep::new(
                        &sys.flux_blocks[s],
                        &set,
                        layout.flux_offset(s),
                        1.0,
                    )?);
                }
                let schur = SchurApply {
                    kappa: sys.kappa.clone(),
                    dg_mass: sys.dg_mass.clone(),
                    dg_per: layout.dg_per_species,
                };
                // Damp with the power-iteration estimate of the block
                // smoother applied to the level operator.
                let probe = LevelSmoother::AlBlock {
                    flux_sweeps,
                    schur,
                    rt_per,
                    omega: 1.0,
                };
                let omega = estimate_omega(
                    &sys.matrix,
                    &|r, z| probe.apply(r, z),
                    &layout.essential,
                );
                match probe {
                    LevelSmoother::AlBlock {
                        flux_sweeps,
                        schur,
                        rt_per,
                        ..
                    } => LevelSmoother::AlBlock {
                        flux_sweeps,
                        schur,
                        rt_per,
                        omega,
                    },
                    _ => unreachable!(),
                }
            }
            MonolithicSmoother::Vanka => {
                let set = vertex_vanka_patches(mesh, layout, l)?;
                LevelSmoother::Vanka(PatchSweep::new(&sys.matrix, &set, 0, VANKA_DAMPING)?)
            }
        };
        levels.push(GmgLevel {
            matrix: sys.matrix.clone(),
            smoother,
            essential: layout.essential.clone(),
        });
    }
    let coarse = lu_factor(&systems[0].matrix)?;
    let prolong = stack.prolongations.clone();
    let restrict = prolong.iter().map(Csr::transpose).collect();
    Ok(GmgCycle {
        levels,
        prolong,
        restrict,
        coarse,
        coarse_essential,
    })
}

fn check_levels(stack: &LevelStack, systems: &[BlockSystem]) -> Result<()> {
    if systems.is_empty() || systems.len() != stack.n_levels() {
        return Err(Error::LevelMismatch(format!(
            "{} assembled systems for {} mesh levels",
            systems.len(),
            stack.n_levels()
        )));
    }
    Ok(())
}

/// The preconditioners the driver can request.
pub enum PcImpl {
    Direct(DirectSolver),
    Al(ALPreconditioner),
    Gmg(GmgCycle),
}

impl Preconditioner for PcImpl {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            PcImpl::Direct(f) => f.solve_into(r, z),
            PcImpl::Al(p) => p.apply_blocks(r, z),
            PcImpl::Gmg(c) => c.apply_cycle(r, z),
        }
    }
}
