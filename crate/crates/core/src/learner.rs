//! Full-batch descent on the total loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{check_dims, check_triplets, total_loss_unchecked, LossReport, LossVariant};
use crate::store::FeatureStore;
use crate::types::{HyperParams, Triplet, WeightVector};

/// Step halvings tried before an iteration is declared stationary.
const MAX_HALVINGS: usize = 40;

/// Hinges whose argument lies within this distance of zero are treated as
/// sitting on their kink when choosing the descent direction.
const KINK_BAND: f64 = 1e-4;

/// Step doublings tried after the first accepted step.
const MAX_DOUBLINGS: usize = 30;

const HINGE_SLOTS: usize = 3;

/// Coordinate sweeps for the min-norm subgradient solve.
const MIN_NORM_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub w: WeightVector,
    pub final_loss: LossReport,
    pub iters_used: usize,
    pub converged: bool,
}

/// Learns a weight vector from `triplets`, starting at all-ones.
///
/// The loss depends on `w` only through the squared weights `u = w * w`, and
/// is convex in `u`. Descent runs on `u` (kept non-negative by projection)
/// and the result is reported as `w = sqrt(u)`.
///
/// Each iteration tries a step of `hp.learning_rate` against the gradient,
/// halving it while the loss would increase, so the loss never increases.
/// Hinges that crossed their kink on the previous step, or sit within
/// `1e-4` of it, enter the direction with a weight in `[0, 1]` chosen to
/// minimize its norm; away from kinks the direction is the plain gradient.
///
/// Stops when the loss hits exactly zero, when successive losses differ by
/// less than `hp.tol`, when no step size decreases the loss, or after
/// `hp.max_iters` iterations. If some negative coincides with its query (or,
/// for the full loss, its positive) the outer-margin hinge can never be
/// satisfied; such runs use the whole budget and report `converged = false`.
pub fn learn(
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
    variant: LossVariant,
) -> Result<LearnResult> {
    check_triplets(store, triplets)?;
    if !(hp.learning_rate >= 0.0 && hp.learning_rate.is_finite()) {
        return Err(Error::param("learning_rate", "must be finite and >= 0"));
    }
    let dim = store.dim();
    check_dims(&WeightVector::ones(dim), store)?;
    let mut u = vec![1.0; dim];
    let mut w = vec![1.0; dim];

    let mut current = total_loss_unchecked(variant, &w, store, triplets, hp);
    if !current.total.is_finite() {
        return Err(Error::Diverged { iter: 0 });
    }
    if current.total == 0.0 {
        return Ok(LearnResult {
            w: WeightVector(w),
            final_loss: current,
            iters_used: 0,
            converged: true,
        });
    }

    let stuck = has_unsatisfiable(variant, store, triplets, hp);
    let problem = Linearized::new(variant, store, triplets, hp);
    let hinges = problem.offsets.len();
    let mut dir = vec![0.0; dim];
    let mut u_next = vec![0.0; dim];
    let mut w_next = vec![0.0; dim];
    let mut z = vec![0.0; hinges];
    let mut z_next = vec![0.0; hinges];
    let mut on_kink = vec![false; hinges];
    problem.hinge_args(&u, &mut z);
    let mut iters_used = 0;
    let mut converged = false;
    let mut retried = false;

    for iter in 1..=hp.max_iters {
        iters_used = iter;
        for (flag, &v) in on_kink.iter_mut().zip(&z) {
            *flag |= v.abs() <= KINK_BAND;
        }
        let mut accepted = None;
        let mut widened;
        loop {
            problem.descent_direction(&u, &z, &on_kink, &mut dir);
            let mut step = hp.learning_rate;
            for _ in 0..=MAX_HALVINGS {
                let loss = take_step(&problem, &u, &dir, step, &mut u_next, &mut w_next, iter)?;
                if loss.total <= current.total {
                    accepted = Some(loss);
                    break;
                }
                step *= 0.5;
            }
            if let Some(mut best) = accepted {
                let mut trial_u = vec![0.0; dim];
                let mut trial_w = vec![0.0; dim];
                for _ in 0..MAX_DOUBLINGS {
                    step *= 2.0;
                    let loss = take_step(&problem, &u, &dir, step, &mut trial_u, &mut trial_w, iter)?;
                    if loss.total >= best.total {
                        break;
                    }
                    best = loss;
                    std::mem::swap(&mut u_next, &mut trial_u);
                    std::mem::swap(&mut w_next, &mut trial_w);
                }
                accepted = Some(best);
            }
            widened = on_kink.iter().zip(&z).any(|(&f, &v)| f && v.abs() > KINK_BAND);
            if accepted.is_some() || !on_kink.iter().any(|&f| f) {
                break;
            }
            // Retry with the flags narrowed to the band, then with none.
            for (flag, &v) in on_kink.iter_mut().zip(&z) {
                *flag = widened && v.abs() <= KINK_BAND;
            }
        }
        let Some(loss) = accepted else {
            if stuck {
                continue;
            }
            converged = true;
            break;
        };
        problem.hinge_args(&u_next, &mut z_next);
        let delta = current.total - loss.total;
        let stalled = delta < hp.tol && loss.total != 0.0;
        for k in 0..hinges {
            on_kink[k] = !(stalled && widened) && (z[k] > 0.0) != (z_next[k] > 0.0);
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut w, &mut w_next);
        std::mem::swap(&mut z, &mut z_next);
        current = loss;
        if stalled && widened {
            continue;
        }
        if stalled && !retried {
            // A shrinking step against a nearby kink looks like a stall;
            // flag the hinges a full step would carry across and retry once
            // before accepting convergence.
            problem.hinge_args_along(&u, &dir, hp.learning_rate, &mut z_next);
            for k in 0..hinges {
                on_kink[k] |= (z[k] > 0.0) != (z_next[k] > 0.0);
            }
            if on_kink.iter().any(|&f| f) {
                retried = true;
                continue;
            }
        }
        if !stalled {
            retried = false;
        }
        if !stuck && (loss.total == 0.0 || delta < hp.tol) {
            converged = true;
            break;
        }
    }

    Ok(LearnResult {
        w: WeightVector(w),
        final_loss: current,
        iters_used,
        converged,
    })
}

/// Takes the projected step `u - step * dir` into `u_next` / `w_next` and
/// returns the loss there.
#[allow(clippy::too_many_arguments)]
fn take_step(
    problem: &Linearized<'_>,
    u: &[f64],
    dir: &[f64],
    step: f64,
    u_next: &mut [f64],
    w_next: &mut [f64],
    iter: usize,
) -> Result<LossReport> {
    for j in 0..u.len() {
        u_next[j] = (u[j] - step * dir[j]).max(0.0);
        w_next[j] = u_next[j].sqrt();
    }
    let loss = total_loss_unchecked(problem.variant, w_next, problem.store, problem.triplets, problem.hp);
    if !loss.total.is_finite() || u_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { iter });
    }
    Ok(loss)
}

/// The loss written in terms of `u = w * w`: every hinge argument is affine
/// in `u` and every regularizer residual is affine in `u`.
struct Linearized<'a> {
    variant: LossVariant,
    store: &'a FeatureStore,
    triplets: &'a [Triplet],
    hp: &'a HyperParams,
    dim: usize,
    /// `HINGE_SLOTS` coefficient rows per triplet, `dim` entries each.
    coeffs: Vec<f64>,
    /// Constant term per hinge; `None` for unused slots.
    offsets: Vec<Option<f64>>,
    /// Squared feature rows entering the regularizer, one per triplet member.
    reg_rows: Vec<f64>,
    lambda: f64,
}

impl<'a> Linearized<'a> {
    fn new(
        variant: LossVariant,
        store: &'a FeatureStore,
        triplets: &'a [Triplet],
        hp: &'a HyperParams,
    ) -> Self {
        let dim = store.dim();
        let sq = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect()
        };
        let neg = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| -x).collect() };
        let mut coeffs = Vec::with_capacity(triplets.len() * HINGE_SLOTS * dim);
        let mut offsets = Vec::with_capacity(triplets.len() * HINGE_SLOTS);
        let mut reg_rows = Vec::with_capacity(triplets.len() * 3 * dim);
        for t in triplets {
            let (xq, xp, xn) = (store.row(t.q), store.row(t.p), store.row(t.n));
            let slots: [Option<(Vec<f64>, f64)>; HINGE_SLOTS] = match variant {
                LossVariant::SingleMargin => {
                    let c = sq(xq, xp).iter().zip(sq(xq, xn)).map(|(a, b)| a - b).collect();
                    [Some((c, hp.alpha)), None, None]
                }
                LossVariant::TwoMargin => [
                    Some((sq(xq, xp), -hp.alpha_p)),
                    Some((neg(sq(xq, xn)), hp.alpha_n)),
                    None,
                ],
                LossVariant::TwoMarginFull => [
                    Some((sq(xq, xp), -hp.alpha_p)),
                    Some((neg(sq(xq, xn)), hp.alpha_n)),
                    Some((neg(sq(xp, xn)), hp.alpha_n)),
                ],
            };
            for slot in slots {
                match slot {
                    Some((c, b)) => {
                        coeffs.extend(c);
                        offsets.push(Some(b));
                    }
                    None => {
                        coeffs.extend(std::iter::repeat_n(0.0, dim));
                        offsets.push(None);
                    }
                }
            }
            for x in [xq, xp, xn] {
                reg_rows.extend(x.iter().map(|v| v * v));
            }
        }
        Linearized {
            variant,
            store,
            triplets,
            hp,
            dim,
            coeffs,
            offsets,
            reg_rows,
            lambda: hp.lambda,
        }
    }

    fn coeff(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.dim..(k + 1) * self.dim]
    }

    /// Hinge arguments at `u`; unused slots hold `f64::NEG_INFINITY`.
    fn hinge_args(&self, u: &[f64], out: &mut [f64]) {
        for (k, (o, b)) in out.iter_mut().zip(&self.offsets).enumerate() {
            *o = match b {
                Some(b) => dot(self.coeff(k), u) + b,
                None => f64::NEG_INFINITY,
            };
        }
    }

    /// Hinge arguments at the projected point `u - step * dir`.
    fn hinge_args_along(&self, u: &[f64], dir: &[f64], step: f64, out: &mut [f64]) {
        let moved: Vec<f64> = u.iter().zip(dir).map(|(u, d)| (u - step * d).max(0.0)).collect();
        self.hinge_args(&moved, out);
    }

    /// Writes the descent direction at `u` into `out`: the gradient of the
    /// regularizer and of every active hinge, except that hinges flagged in
    /// `on_kink` get a weight in `[0, 1]` chosen to minimize the norm of the
    /// sum. Coordinates pinned at zero whose component would push them
    /// negative are dropped.
    fn descent_direction(&self, u: &[f64], z: &[f64], on_kink: &[bool], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut near = Vec::new();
        for (k, b) in self.offsets.iter().enumerate() {
            if b.is_none() {
                continue;
            }
            if on_kink[k] {
                near.push(k);
            } else if z[k] > 0.0 {
                for (o, c) in out.iter_mut().zip(self.coeff(k)) {
                    *o += c;
                }
            }
        }
        if self.lambda != 0.0 {
            for x2 in self.reg_rows.chunks(self.dim) {
                let r = 2.0 * self.lambda * (dot(x2, u) - 1.0);
                for (o, v) in out.iter_mut().zip(x2) {
                    *o += r * v;
                }
            }
        }
        let base = out.to_vec();
        let mut free: Vec<bool> = u.iter().zip(&base).map(|(&u, &g)| u > 0.0 || g < 0.0).collect();
        for _ in 0..=self.dim {
            out.copy_from_slice(&base);
            if !near.is_empty() {
                self.min_norm(&near, &free, out);
            }
            let next: Vec<bool> = u.iter().zip(out.iter()).map(|(&u, &g)| u > 0.0 || g < 0.0).collect();
            if next == free {
                break;
            }
            free = next;
        }
        for (o, f) in out.iter_mut().zip(&free) {
            if !f {
                *o = 0.0;
            }
        }
    }

    /// Box-constrained least squares over the weights of the `near` hinges,
    /// measured on the `free` coordinates, by cyclic coordinate descent
    /// starting from every weight at zero.
    fn min_norm(&self, near: &[usize], free: &[bool], out: &mut [f64]) {
        let masked = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .zip(free)
                .filter(|(_, &f)| f)
                .map(|((x, y), _)| x * y)
                .sum()
        };
        let norms: Vec<f64> = near.iter().map(|&k| masked(self.coeff(k), self.coeff(k))).collect();
        let mut theta = vec![0.0; near.len()];
        for _ in 0..MIN_NORM_SWEEPS {
            let mut moved = 0.0f64;
            for (i, &k) in near.iter().enumerate() {
                if norms[i] == 0.0 {
                    continue;
                }
                let h = self.coeff(k);
                let new = (theta[i] - masked(h, out) / norms[i]).clamp(0.0, 1.0);
                let delta = new - theta[i];
                if delta != 0.0 {
                    for (o, v) in out.iter_mut().zip(h) {
                        *o += delta * v;
                    }
                    theta[i] = new;
                    moved = moved.max(delta.abs());
                }
            }
            if moved < 1e-12 {
                break;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// True when a negative shares its feature vector with the query (or the
/// positive, for the full loss), so a margin hinge is pinned active for every `w`.
fn has_unsatisfiable(
    variant: LossVariant,
    store: &FeatureStore,
    triplets: &[Triplet],
    hp: &HyperParams,
) -> bool {
    triplets.iter().any(|t| {
        let qn = store.row(t.q) == store.row(t.n);
        let pn = store.row(t.p) == store.row(t.n);
        match variant {
            LossVariant::SingleMargin => qn && hp.alpha > 0.0,
            LossVariant::TwoMargin => qn && hp.alpha_n > 0.0,
            LossVariant::TwoMarginFull => (qn || pn) && hp.alpha_n > 0.0,
        }
    })
}
