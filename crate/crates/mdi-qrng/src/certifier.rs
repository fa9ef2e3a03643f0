//! Certified randomness lower bounds.
//!
//! Two routes are implemented. The qubit route substitutes worst-case
//! tomography parameters into the closed form
//! `R >= 2 a0 F((1 + sqrt(1 - ny^2 - nz^2)) / 2)`. The coherent-source route
//! minimizes `2 a0 (1+mu) e^(-mu) F(...)` over every POVM consistent with
//! the observed statistics once the multi-photon fraction of the source is
//! conceded to the device, i.e. subject to per-state interval constraints on
//! the directional moments `a0 (1 + n_axis)`.
//!
//! The minimizer is a deterministic coarse-to-fine grid over the interval
//! coordinates; `brute_force_bound` is an independent dense grid over
//! `(a0, ny, nz)` used as an oracle for it.

use crate::extractor::output_length;
use crate::finite_size::{entropy_bits, FluctuationError, FluctuationSet};
use crate::protocol::SeedAccounting;
use crate::tomography::reconstruct;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CertifyError {
    #[error("infeasible constraint region: {details}")]
    InfeasibleRegion { details: String },
    #[error("worst-case substitution left the constraint region: {details}")]
    InfeasibleSubstitution { details: String },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Fluctuation(#[from] FluctuationError),
}

/// Entropy functional applied to the max-outcome probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyFunctional {
    /// `-log2(p)`.
    MinEntropy,
    /// Binary Shannon entropy.
    ShannonBinary,
}

impl EntropyFunctional {
    #[inline]
    pub fn eval(self, p: f64) -> f64 {
        match self {
            EntropyFunctional::MinEntropy => -p.log2(),
            EntropyFunctional::ShannonBinary => entropy_bits(p),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EntropyFunctional::MinEntropy => "min_entropy",
            EntropyFunctional::ShannonBinary => "shannon_binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CertifyError> {
        match s {
            "min_entropy" => Ok(EntropyFunctional::MinEntropy),
            "shannon_binary" => Ok(EntropyFunctional::ShannonBinary),
            other => Err(CertifyError::BadParameter(format!("unknown functional '{other}'"))),
        }
    }
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Slack on interval membership; degenerate (zero-width) intervals would
/// otherwise reject their own defining point through round-off. Enlarging
/// the feasible set can only lower the certified minimum, never inflate it.
const MEMBER_TOL: f64 = 1e-12;

impl Interval {
    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    fn contains(&self, x: f64) -> bool {
        x >= self.lo - MEMBER_TOL && x <= self.hi + MEMBER_TOL
    }

    fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi + MEMBER_TOL).then_some(Interval { lo, hi: hi.max(lo) })
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Single-photon fraction of a phase-randomized source of intensity `mu`.
pub fn good_fraction(mu: f64) -> f64 {
    (1.0 + mu) * (-mu).exp()
}

/// Multi-photon probability mass conceded to the device.
pub fn multi_photon_mass(mu: f64) -> f64 {
    1.0 - (-mu).exp() - mu * (-mu).exp()
}

/// Constraint region of the coherent-source minimization.
///
/// `g[i]` bounds the directional moment observed with probe `i`
/// (`g1 = a0(1+nz)`, `g2 = a0(1-nz)`, `g3 = a0(1+nx)`, `g4 = a0(1+ny)`):
/// the confidence interval `[p_i - theta_i, p_i + theta_i]` must overlap
/// `[g_i kappa, g_i kappa + P_multi]`, which reads
/// `g_i in [(p_i - theta_i - P_multi)/kappa, (p_i + theta_i)/kappa]`.
/// On top of the intervals the parameters must form a valid POVM:
/// `0 <= a0 <= 1` and `|n| <= min(1, (1-a0)/a0)`, the latter keeping both
/// measurement operators positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub g: [Interval; 4],
    pub mu: f64,
    pub kappa: f64,
    pub p_multi: f64,
}

impl FeasibleRegion {
    pub fn new(p: &[f64; 4], thetas: &[f64; 4], mu: f64) -> Result<Self, CertifyError> {
        if !(mu >= 0.0) {
            return Err(CertifyError::BadParameter(format!("mu = {mu} must be >= 0")));
        }
        for (i, &v) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(CertifyError::BadParameter(format!("p{} = {v} outside [0, 1]", i + 1)));
            }
            if thetas[i] < 0.0 {
                return Err(CertifyError::BadParameter(format!("theta{} negative", i + 1)));
            }
        }
        let kappa = good_fraction(mu);
        let p_multi = multi_photon_mass(mu);
        let g = core::array::from_fn(|i| Interval {
            lo: (p[i] - thetas[i] - p_multi).max(0.0) / kappa,
            hi: (p[i] + thetas[i]).min(1.0) / kappa,
        });
        let region = Self { g, mu, kappa, p_multi };
        let a0 = region.a0_box();
        if a0.hi <= 0.0 {
            return Err(CertifyError::InfeasibleRegion { details: region.describe() });
        }
        Ok(region)
    }

    /// From tally-level inputs.
    pub fn from_statistics(
        p: &[f64; 4],
        fluct: &FluctuationSet,
        mu: f64,
    ) -> Result<Self, CertifyError> {
        Self::new(p, &fluct.thetas, mu)
    }

    /// Range of `a0 = (g1 + g2)/2`, clipped to `[0, 1]`.
    pub fn a0_box(&self) -> Interval {
        Interval {
            lo: ((self.g[0].lo + self.g[1].lo) / 2.0).max(0.0),
            hi: ((self.g[0].hi + self.g[1].hi) / 2.0).min(1.0),
        }
    }

    /// Bounding box of `nz` consistent with the g1/g2 intervals.
    fn nz_box(&self) -> Option<Interval> {
        let a = self.a0_box();
        if a.hi <= 0.0 {
            return None;
        }
        let lo_a = a.lo.max(1e-12);
        let from_g1 = Interval { lo: self.g[0].lo / a.hi - 1.0, hi: self.g[0].hi / lo_a - 1.0 };
        let from_g2 = Interval { lo: 1.0 - self.g[1].hi / lo_a, hi: 1.0 - self.g[1].lo / a.hi };
        from_g1
            .intersect(&from_g2)
            .and_then(|b| b.intersect(&Interval { lo: -1.0, hi: 1.0 }))
    }

    /// Bounding box of `ny` consistent with the g4 interval.
    fn ny_box(&self) -> Option<Interval> {
        let a = self.a0_box();
        if a.hi <= 0.0 {
            return None;
        }
        let lo_a = a.lo.max(1e-12);
        Interval { lo: self.g[3].lo / a.hi - 1.0, hi: self.g[3].hi / lo_a - 1.0 }
            .intersect(&Interval { lo: -1.0, hi: 1.0 })
    }

    /// Largest admissible `|n|` at a given weight: POVM positivity.
    #[inline]
    fn n_cap(a0: f64) -> f64 {
        if a0 <= 0.5 {
            1.0
        } else {
            (1.0 - a0) / a0
        }
    }

    /// Checks a full parameter point, returning the admissible `nx` choice
    /// closest to zero when the point is feasible.
    #[inline]
    pub fn admissible_nx(&self, a0: f64, ny: f64, nz: f64) -> Option<f64> {
        if !(0.0..=1.0).contains(&a0) || a0 <= 0.0 {
            return None;
        }
        if !self.g[0].contains(a0 * (1.0 + nz)) || !self.g[1].contains(a0 * (1.0 - nz)) {
            return None;
        }
        if !self.g[3].contains(a0 * (1.0 + ny)) {
            return None;
        }
        let cap = Self::n_cap(a0);
        let s = ny * ny + nz * nz;
        let max_nx_sq = cap * cap - s;
        if max_nx_sq < 0.0 {
            return None;
        }
        let x_cap = max_nx_sq.sqrt();
        let nx_range = Interval { lo: self.g[2].lo / a0 - 1.0, hi: self.g[2].hi / a0 - 1.0 }
            .intersect(&Interval { lo: -x_cap, hi: x_cap })?;
        Some(nx_range.clamp(0.0))
    }

    pub fn describe(&self) -> String {
        let a = self.a0_box();
        format!(
            "g1=[{:.6e},{:.6e}] g2=[{:.6e},{:.6e}] g3=[{:.6e},{:.6e}] g4=[{:.6e},{:.6e}] \
             a0=[{:.6e},{:.6e}] mu={} kappa={:.9} p_multi={:.6e}",
            self.g[0].lo, self.g[0].hi, self.g[1].lo, self.g[1].hi, self.g[2].lo, self.g[2].hi,
            self.g[3].lo, self.g[3].hi, a.lo, a.hi, self.mu, self.kappa, self.p_multi,
        )
    }
}

/// Parameters at which a bound was attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub a0: f64,
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
}

/// A certified bound with its minimizing witness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertBound {
    /// Bits per pulse, clamped at zero.
    pub value: f64,
    pub witness: Witness,
    /// Grid points that passed every constraint (search diagnostics).
    pub feasible_points: u64,
}

#[inline]
fn objective(a0: f64, ny: f64, nz: f64, kappa: f64, functional: EntropyFunctional) -> f64 {
    let s = ny * ny + nz * nz;
    let root = (1.0 - s).max(0.0).sqrt();
    2.0 * a0 * kappa * functional.eval((1.0 + root) / 2.0)
}

/// Worst-case qubit-route bound from the observed probabilities and their
/// finite-size deviations:
///
/// ```text
/// ny = 2(p4 - t4)/(p1 + p2 + t1 + t2) - 1
/// nz = 2(p1 - t1)/(p1 + p2 + t1 + t2) - 1
/// a0 = (p1 + p2 - t1 - t2)/2
/// ```
pub fn qubit_bound(
    p: &[f64; 4],
    fluct: &FluctuationSet,
    functional: EntropyFunctional,
) -> Result<CertBound, CertifyError> {
    let t = &fluct.thetas;
    let den = p[0] + p[1] + t[0] + t[1];
    if den <= 0.0 {
        return Err(CertifyError::InfeasibleSubstitution {
            details: format!("p1 + p2 + theta1 + theta2 = {den} <= 0"),
        });
    }
    let ny = (2.0 * p[3] - 2.0 * t[3]) / den - 1.0;
    let nz = (2.0 * p[0] - 2.0 * t[0]) / den - 1.0;
    let a0 = (p[0] + p[1] - t[0] - t[1]) / 2.0;
    let s = ny * ny + nz * nz;
    if s > 1.0 {
        return Err(CertifyError::InfeasibleSubstitution {
            details: format!("ny^2 + nz^2 = {s} > 1 after substitution"),
        });
    }
    let value = (2.0 * a0 * functional.eval((1.0 + (1.0 - s).sqrt()) / 2.0)).max(0.0);
    Ok(CertBound { value, witness: Witness { a0, nx: 0.0, ny, nz }, feasible_points: 1 })
}

/// Coarse-to-fine schedule of the deterministic minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridProfile {
    pub rounds: [usize; 3],
}

impl GridProfile {
    /// Certification grade.
    pub const DEFAULT: GridProfile = GridProfile { rounds: [64, 256, 1024] };
    /// Fast grade for inner loops such as the intensity scan.
    pub const LIGHT: GridProfile = GridProfile { rounds: [32, 128, 256] };
}

fn grid_values(iv: &Interval, n: usize) -> Vec<f64> {
    if iv.width() <= 0.0 || n <= 1 {
        return vec![iv.lo];
    }
    (0..n).map(|k| iv.lo + iv.width() * k as f64 / (n - 1) as f64).collect()
}

struct SearchState {
    best: Option<(f64, Witness)>,
    feasible: u64,
}

impl SearchState {
    fn offer(&mut self, value: f64, w: Witness) {
        self.feasible += 1;
        if self.best.map_or(true, |(v, _)| value < v) {
            self.best = Some((value, w));
        }
    }
}

/// Coherent-source bound: deterministic minimization of the objective over
/// the feasible region.
///
/// The search runs over the interval coordinates `(g1, g4)`; for
/// each pair the remaining freedom is resolved exactly: the objective is
/// strictly increasing in `ny^2`, so the admissible `ny` closest to zero is
/// optimal, and likewise the `g2` grid is augmented with the value that makes
/// `nz` exactly zero whenever that is admissible. Three refinement rounds
/// shrink the box around the incumbent minimum.
pub fn coherent_bound(
    p: &[f64; 4],
    fluct: &FluctuationSet,
    mu: f64,
    functional: EntropyFunctional,
    profile: GridProfile,
) -> Result<CertBound, CertifyError> {
    let region = FeasibleRegion::new(p, &fluct.thetas, mu)?;
    minimize_over_region(&region, functional, profile)
}

/// The minimization behind `coherent_bound`, reusable on a prebuilt region.
pub fn minimize_over_region(
    region: &FeasibleRegion,
    functional: EntropyFunctional,
    profile: GridProfile,
) -> Result<CertBound, CertifyError> {
    let full_g1 = region.g[0];
    let full_g2 = region.g[1];
    let mut box_g1 = full_g1;
    let mut box_g2 = full_g2;
    let mut result: Option<(f64, Witness)> = None;
    let mut feasible_total = 0u64;

    for (round, &n) in profile.rounds.iter().enumerate() {
        let g1v = grid_values(&box_g1, n);
        let g2v = grid_values(&box_g2, n);
        let mut state = SearchState { best: None, feasible: 0 };
        let mut best_cell: Option<(usize, usize)> = None;
        for (i, &g1) in g1v.iter().enumerate() {
            // augment the g2 grid with the exact nz = 0 point when admissible
            let symmetric = full_g2.contains(g1).then_some(g1);
            for (j, g2) in g2v
                .iter()
                .enumerate()
                .map(|(j, v)| (Some(j), *v))
                .chain(symmetric.into_iter().map(|v| (None, v)))
            {
                let a0 = (g1 + g2) / 2.0;
                if a0 <= 0.0 || a0 > 1.0 {
                    continue;
                }
                let nz = (g1 - g2) / (g1 + g2);
                // optimal ny: admissible value closest to zero
                let ny_lo = region.g[3].lo / a0 - 1.0;
                let ny_hi = region.g[3].hi / a0 - 1.0;
                let ny_iv = match (Interval { lo: ny_lo, hi: ny_hi })
                    .intersect(&Interval { lo: -1.0, hi: 1.0 })
                {
                    Some(iv) => iv,
                    None => continue,
                };
                let ny = ny_iv.clamp(0.0);
                let nx = match region.admissible_nx(a0, ny, nz) {
                    Some(nx) => nx,
                    None => continue,
                };
                let value = objective(a0, ny, nz, region.kappa, functional);
                let improved = state.best.map_or(true, |(v, _)| value < v);
                state.offer(value, Witness { a0, nx, ny, nz });
                if improved {
                    if let Some(j) = j {
                        best_cell = Some((i, j));
                    }
                }
            }
        }
        feasible_total += state.feasible;
        if let Some((value, w)) = state.best {
            if result.map_or(true, |(v, _)| value < v) {
                result = Some((value, w));
            }
        }
        // shrink the box around the incumbent cell for the next round
        if round + 1 < profile.rounds.len() {
            if let Some((i, j)) = best_cell {
                let h1 = if g1v.len() > 1 { g1v[1] - g1v[0] } else { 0.0 };
                let h2 = if g2v.len() > 1 { g2v[1] - g2v[0] } else { 0.0 };
                box_g1 = Interval {
                    lo: (g1v[i] - 2.0 * h1).max(full_g1.lo),
                    hi: (g1v[i] + 2.0 * h1).min(full_g1.hi),
                };
                box_g2 = Interval {
                    lo: (g2v[j] - 2.0 * h2).max(full_g2.lo),
                    hi: (g2v[j] + 2.0 * h2).min(full_g2.hi),
                };
            }
        }
    }

    match result {
        Some((value, witness)) => Ok(CertBound {
            value: value.max(0.0),
            witness,
            feasible_points: feasible_total,
        }),
        None => Err(CertifyError::InfeasibleRegion { details: region.describe() }),
    }
}

/// Independent oracle: exhaustive dense grid over `(a0, nz, ny)` with exact
/// feasibility checks, no refinement, no analytic shortcuts.
pub fn brute_force_bound(
    p: &[f64; 4],
    fluct: &FluctuationSet,
    mu: f64,
    functional: EntropyFunctional,
    grid_density: usize,
) -> Result<CertBound, CertifyError> {
    if grid_density < 10 {
        return Err(CertifyError::BadParameter(format!(
            "grid_density {grid_density} below minimum 10"
        )));
    }
    let region = FeasibleRegion::new(p, &fluct.thetas, mu)?;
    let a_box = region.a0_box();
    let nz_box = region
        .nz_box()
        .ok_or_else(|| CertifyError::InfeasibleRegion { details: region.describe() })?;
    let ny_box = region
        .ny_box()
        .ok_or_else(|| CertifyError::InfeasibleRegion { details: region.describe() })?;
    let av = grid_values(&a_box, grid_density);
    let zv = grid_values(&nz_box, grid_density);
    let yv = grid_values(&ny_box, grid_density);

    let slices: Vec<(Option<(f64, Witness)>, u64)> = av
        .par_iter()
        .map(|&a0| {
            let mut best: Option<(f64, Witness)> = None;
            let mut feasible = 0u64;
            if a0 <= 0.0 || a0 > 1.0 {
                return (best, feasible);
            }
            for &nz in &zv {
                if !region.g[0].contains(a0 * (1.0 + nz))
                    || !region.g[1].contains(a0 * (1.0 - nz))
                {
                    continue;
                }
                for &ny in &yv {
                    if let Some(nx) = region.admissible_nx(a0, ny, nz) {
                        feasible += 1;
                        let value = objective(a0, ny, nz, region.kappa, functional);
                        if best.map_or(true, |(v, _)| value < v) {
                            best = Some((value, Witness { a0, nx, ny, nz }));
                        }
                    }
                }
            }
            (best, feasible)
        })
        .collect();

    let mut best: Option<(f64, Witness)> = None;
    let mut feasible_points = 0u64;
    for (slice_best, n) in slices {
        feasible_points += n;
        if let Some((v, w)) = slice_best {
            if best.map_or(true, |(bv, _)| v < bv) {
                best = Some((v, w));
            }
        }
    }
    match best {
        Some((value, witness)) => {
            Ok(CertBound { value: value.max(0.0), witness, feasible_points })
        }
        None => Err(CertifyError::InfeasibleRegion {
            details: format!("no grid point admitted at density {grid_density}: {}", region.describe()),
        }),
    }
}

/// Objective evaluated at the exact tomography solution with zero deviations:
/// the asymptotic envelope a certificate reports alongside the finite-size
/// bound.
pub fn asymptotic_envelope(
    p: &[f64; 4],
    mu: f64,
    functional: EntropyFunctional,
) -> Result<f64, CertifyError> {
    let est = reconstruct(*p)
        .map_err(|e| CertifyError::BadParameter(format!("tomography failed: {e}")))?;
    Ok(objective(est.a0, est.ny, est.nz, good_fraction(mu), functional).max(0.0))
}

/// How the intensity optimum was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuSearchMethod {
    GoldenSection,
    /// The scan profile was not unimodal; the best scan point was returned.
    ScanFallback,
}

#[derive(Debug, Clone)]
pub struct MuOptimum {
    pub mu: f64,
    pub bound: CertBound,
    pub method: MuSearchMethod,
    /// The coarse scan, `(mu, bound)`; infeasible points are `None`.
    pub scan: Vec<(f64, Option<f64>)>,
}

const MU_SCAN_POINTS: usize = 33;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Optimizes the source intensity for the coherent bound of a forward-model
/// tally. `evaluate` maps an intensity to the observed '0' probabilities and
/// the per-round counts `(p, n_test, n_gen)`.
pub fn optimize_mu(
    mut statistics_at: impl FnMut(f64) -> ([f64; 4], [f64; 4], f64),
    epsilon_theta: f64,
    functional: EntropyFunctional,
    mu_range: (f64, f64),
    profile: GridProfile,
) -> Result<MuOptimum, CertifyError> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(CertifyError::BadParameter(format!("bad mu range [{lo}, {hi}]")));
    }
    let mut eval = |mu: f64| -> Result<Option<CertBound>, CertifyError> {
        let (p, n_test, n_gen) = statistics_at(mu);
        let fluct = FluctuationSet::solve(epsilon_theta, &p, &n_test, n_gen)?;
        match coherent_bound(&p, &fluct, mu, functional, profile) {
            Ok(b) => Ok(Some(b)),
            Err(CertifyError::InfeasibleRegion { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut scan = Vec::with_capacity(MU_SCAN_POINTS);
    let mut bounds = Vec::with_capacity(MU_SCAN_POINTS);
    for k in 0..MU_SCAN_POINTS {
        let mu = lo + (hi - lo) * k as f64 / (MU_SCAN_POINTS - 1) as f64;
        let b = eval(mu)?;
        scan.push((mu, b.as_ref().map(|b| b.value)));
        bounds.push((mu, b));
    }
    let (best_idx, _) = bounds
        .iter()
        .enumerate()
        .filter_map(|(i, (_, b))| b.as_ref().map(|b| (i, b.value)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| CertifyError::InfeasibleRegion {
            details: "every scanned intensity was infeasible".into(),
        })?;

    // unimodality check on the feasible part of the scan profile
    let values: Vec<f64> = bounds.iter().map(|(_, b)| b.as_ref().map_or(-1.0, |b| b.value)).collect();
    let mut local_maxima = 0;
    for i in 1..values.len() - 1 {
        if values[i] > values[i - 1] && values[i] > values[i + 1] {
            local_maxima += 1;
        }
    }
    let edge_max = (values[0] > values[1]) as usize
        + (values[values.len() - 1] > values[values.len() - 2]) as usize;
    if local_maxima + edge_max > 1 {
        let (mu, bound) = bounds.swap_remove(best_idx);
        return Ok(MuOptimum {
            mu,
            bound: bound.expect("best scan point is feasible"),
            method: MuSearchMethod::ScanFallback,
            scan,
        });
    }

    let mut a = bounds[best_idx.saturating_sub(1)].0;
    let mut b = bounds[(best_idx + 1).min(bounds.len() - 1)].0;
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let value_of = |b: &Option<CertBound>| b.as_ref().map_or(f64::NEG_INFINITY, |b| b.value);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    for _ in 0..60 {
        if b - a < 1e-6 {
            break;
        }
        if value_of(&f1) < value_of(&f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = eval(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = eval(x1)?;
        }
    }
    let mu_star = if value_of(&f1) >= value_of(&f2) { x1 } else { x2 };
    let bound = eval(mu_star)?.ok_or_else(|| CertifyError::InfeasibleRegion {
        details: format!("optimum mu = {mu_star} became infeasible"),
    })?;
    Ok(MuOptimum { mu: mu_star, bound, method: MuSearchMethod::GoldenSection, scan })
}

/// Throughput and seed-gain accounting for a certified rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    /// `R x clock`.
    pub rate_bps: f64,
    /// `floor(N_raw R)`, before the extractor margin.
    pub extractable_bits: u64,
    /// Leftover-hash output length at the extractor failure probability.
    pub extracted_bits_with_margin: u64,
    /// Output over protocol seed (positions + states only).
    pub gain_protocol_only: f64,
    /// Output over every consumed bit, extractor seed included.
    pub gain_with_extractor_seed: f64,
}

pub fn throughput_report(
    r: f64,
    clock_hz: f64,
    seed: &SeedAccounting,
    n_raw: u64,
    eps_ext: f64,
) -> Throughput {
    let r = r.max(0.0);
    let extractable_bits = (n_raw as f64 * r).floor() as u64;
    let extracted_bits_with_margin = output_length(n_raw, r, eps_ext);
    let ratio = |d: u64| {
        if d == 0 {
            0.0
        } else {
            extracted_bits_with_margin as f64 / d as f64
        }
    };
    Throughput {
        rate_bps: r * clock_hz,
        extractable_bits,
        extracted_bits_with_margin,
        gain_protocol_only: ratio(seed.protocol_bits()),
        gain_with_extractor_seed: ratio(seed.total_consumed()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_size::ThetaOutcome;

    pub(crate) const REFERENCE_P: [f64; 4] = [
        0.99985249622707292,
        0.98403063107543623,
        0.99214893941706089,
        0.9921829122833148,
    ];

    fn zero_fluct() -> FluctuationSet {
        FluctuationSet::zero()
    }

    fn fluct(thetas: [f64; 4]) -> FluctuationSet {
        FluctuationSet { thetas, epsilon_theta: 1e-10, outcomes: [ThetaOutcome::Solved; 4] }
    }

    #[test]
    fn qubit_bound_on_ideal_coin() {
        let b = qubit_bound(&[1.0, 0.0, 0.5, 0.5], &zero_fluct(), EntropyFunctional::MinEntropy)
            .unwrap();
        assert!((b.value - 1.0).abs() < 1e-12);
        assert!((b.witness.a0 - 0.5).abs() < 1e-12);
        assert!((b.witness.nz - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qubit_bound_on_always_zero_device() {
        for f in [EntropyFunctional::MinEntropy, EntropyFunctional::ShannonBinary] {
            let b = qubit_bound(&[1.0, 1.0, 1.0, 1.0], &zero_fluct(), f).unwrap();
            assert_eq!(b.value, 0.0);
            assert_eq!((b.witness.ny, b.witness.nz), (0.0, 0.0));
        }
    }

    #[test]
    fn qubit_bound_reference_dataset() {
        // frozen from an independent arbitrary-precision evaluation
        let b = qubit_bound(&REFERENCE_P, &zero_fluct(), EntropyFunctional::MinEntropy).unwrap();
        assert!((b.value - 4.5554178844866434e-5).abs() < 1e-12, "{}", b.value);
        let b = qubit_bound(&REFERENCE_P, &zero_fluct(), EntropyFunctional::ShannonBinary).unwrap();
        assert!((b.value - 0.00054884045196100021).abs() < 1e-12, "{}", b.value);
    }

    #[test]
    fn qubit_bound_never_negative() {
        let b = qubit_bound(
            &[0.6, 0.6, 0.6, 0.6],
            &fluct([0.3, 0.3, 0.0, 0.0]),
            EntropyFunctional::ShannonBinary,
        )
        .unwrap();
        assert!(b.value >= 0.0);
    }

    #[test]
    fn region_intervals_collapse_at_mu_zero() {
        let r = FeasibleRegion::new(&REFERENCE_P, &[0.0; 4], 0.0).unwrap();
        for i in 0..4 {
            assert!((r.g[i].lo - REFERENCE_P[i]).abs() < 1e-15);
            assert!((r.g[i].hi - REFERENCE_P[i]).abs() < 1e-15);
        }
        assert_eq!(r.p_multi, 0.0);
    }

    #[test]
    fn multi_photon_mass_value() {
        // frozen from an independent evaluation of 1 - (1 + mu) e^(-mu)
        assert!((multi_photon_mass(0.06) - 0.0017295944006963679).abs() < 1e-15);
        assert!((good_fraction(0.06) - 0.99827040559930363).abs() < 1e-15);
    }

    #[test]
    fn coherent_reduces_to_qubit_at_mu_zero() {
        let p = [1.0, 0.0, 0.5, 0.5];
        let qubit = qubit_bound(&p, &zero_fluct(), EntropyFunctional::ShannonBinary).unwrap();
        let coh = coherent_bound(&p, &zero_fluct(), 0.0, EntropyFunctional::ShannonBinary, GridProfile::DEFAULT)
            .unwrap();
        assert!((coh.value - qubit.value).abs() < 1e-9);
        let coh_ref = coherent_bound(
            &REFERENCE_P,
            &zero_fluct(),
            0.0,
            EntropyFunctional::ShannonBinary,
            GridProfile::DEFAULT,
        )
        .unwrap();
        let qubit_ref =
            qubit_bound(&REFERENCE_P, &zero_fluct(), EntropyFunctional::ShannonBinary).unwrap();
        assert!((coh_ref.value - qubit_ref.value).abs() < 1e-9);
    }

    #[test]
    fn coherent_bound_is_exactly_zero_for_deterministic_statistics() {
        for p in [[1.0; 4], [0.5; 4]] {
            let b = coherent_bound(
                &p,
                &fluct([1e-3; 4]),
                0.06,
                EntropyFunctional::ShannonBinary,
                GridProfile::DEFAULT,
            )
            .unwrap();
            assert_eq!(b.value, 0.0, "p = {p:?}");
        }
    }

    #[test]
    fn coherent_bound_reference_dataset_matches_independent_minimum() {
        // per-round deviations at eps = 1e-10, frozen from the oracle solve
        let thetas = [
            7.3751886463542187e-5,
            0.0048605118402569675,
            0.0030023323054708031,
            0.0029930088095055645,
        ];
        let b = coherent_bound(
            &REFERENCE_P,
            &fluct(thetas),
            0.06,
            EntropyFunctional::ShannonBinary,
            GridProfile::DEFAULT,
        )
        .unwrap();
        // frozen independent corner evaluation: 2.0013301748350995e-4
        assert!(
            (b.value - 2.0013301748350995e-4).abs() < 5e-8,
            "bound {} vs frozen 2.0013e-4",
            b.value
        );
        assert!(b.witness.ny.abs() < 1e-12);
        assert!((b.witness.nz - 0.0046091002619198129).abs() < 1e-5);
    }

    #[test]
    fn enlarging_deviations_never_increases_the_bound() {
        let base = fluct([1e-4, 1e-3, 1e-3, 1e-3]);
        let b0 = coherent_bound(&REFERENCE_P, &base, 0.06, EntropyFunctional::ShannonBinary, GridProfile::DEFAULT)
            .unwrap();
        for i in 0..4 {
            let mut wider = base.clone();
            wider.thetas[i] *= 3.0;
            let b = coherent_bound(&REFERENCE_P, &wider, 0.06, EntropyFunctional::ShannonBinary, GridProfile::DEFAULT)
                .unwrap();
            assert!(
                b.value <= b0.value + 1e-12,
                "theta{i} widened: {} > {}",
                b.value,
                b0.value
            );
        }
    }

    #[test]
    fn infeasible_cross_constraints_are_reported() {
        // device answering '0' always on probes 1-3 but never on probe 4:
        // no valid POVM is consistent, the region must come back empty
        let p = [1.0, 1.0, 1.0, 0.0];
        let err = coherent_bound(&p, &zero_fluct(), 0.0, EntropyFunctional::ShannonBinary, GridProfile::DEFAULT)
            .unwrap_err();
        assert!(matches!(err, CertifyError::InfeasibleRegion { .. }));
    }

    #[test]
    fn oracle_agrees_on_the_reference_dataset() {
        let thetas = [
            7.3751886463542187e-5,
            0.0048605118402569675,
            0.0030023323054708031,
            0.0029930088095055645,
        ];
        let f = fluct(thetas);
        let opt = coherent_bound(&REFERENCE_P, &f, 0.06, EntropyFunctional::ShannonBinary, GridProfile::DEFAULT)
            .unwrap();
        let oracle =
            brute_force_bound(&REFERENCE_P, &f, 0.06, EntropyFunctional::ShannonBinary, 512).unwrap();
        // the oracle grid is coarse; agreement within its cell variation
        assert!(
            (opt.value - oracle.value).abs() < 2e-6,
            "optimizer {} oracle {}",
            opt.value,
            oracle.value
        );
        assert!(opt.value <= oracle.value + 1e-12);
    }

    #[test]
    fn envelope_reference_value() {
        let env = asymptotic_envelope(&REFERENCE_P, 0.06, EntropyFunctional::ShannonBinary).unwrap();
        assert!((env - 0.0005478911805884128).abs() < 1e-12, "{env}");
    }

    #[test]
    fn throughput_arithmetic() {
        let seed = SeedAccounting {
            bits_for_positions: 34 * (1 << 15),
            bits_for_states: 2 * (1 << 15),
            bits_for_extractor_seed: 0,
        };
        let t = throughput_report(2.3e-4, 25e6, &seed, 1 << 34, 2f64.powi(-100));
        assert!((t.rate_bps - 5750.0).abs() < 1e-9);
        assert_eq!(seed.protocol_bits(), 1_179_648);
        let zero = throughput_report(0.0, 25e6, &seed, 1 << 34, 2f64.powi(-100));
        assert_eq!(zero.rate_bps, 0.0);
        assert_eq!(zero.extractable_bits, 0);
        assert_eq!(zero.gain_protocol_only, 0.0);
    }

    #[test]
    fn mu_optimization_finds_interior_peak() {
        // toy forward model with a clean interior optimum
        let stats = |mu: f64| {
            let click = 1.0 - (-mu * 0.25f64).exp();
            let p = [1.0 - 1.5e-4, 1.0 - click, 1.0 - click / 2.0, 1.0 - click / 2.0];
            (p, [8192.0; 4], (1u64 << 34) as f64)
        };
        let opt = optimize_mu(
            stats,
            1e-10,
            EntropyFunctional::ShannonBinary,
            (0.01, 1.0),
            GridProfile::LIGHT,
        )
        .unwrap();
        assert!(opt.bound.value > 0.0);
        assert!(opt.mu > 0.01 && opt.mu < 1.0);
        // beyond the optimum the scan profile decreases
        let after: Vec<f64> = opt
            .scan
            .iter()
            .filter(|(mu, v)| *mu > opt.mu && v.is_some())
            .map(|(_, v)| v.unwrap())
            .collect();
        for w in after.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
