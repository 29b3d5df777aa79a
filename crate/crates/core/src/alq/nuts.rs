//! No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling,
//! a diagonal metric and dual-averaging step size adaptation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mcmc_stats::{ChainRun, Welford};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns the log density at `x` and writes its gradient into `grad`.
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NutsSettings {
    pub target_accept: f64,
    pub max_depth: usize,
    pub max_energy_error: f64,
    pub initial_step: f64,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self { target_accept: 0.8, max_depth: 10, max_energy_error: 1000.0, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

/// A finished subtree: the proposal plus what the U-turn checks need from
/// both of its ends.
struct Subtree {
    propose: Point,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    sharp_beg: Vec<f64>,
    sharp_end: Vec<f64>,
    rho: Vec<f64>,
    log_weight: f64,
}

#[derive(Default)]
struct TreeStats {
    n_leapfrog: usize,
    sum_accept: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0
}

struct Integrator<'a, T: LogDensity> {
    target: &'a T,
    inv_metric: Vec<f64>,
    step: f64,
    settings: &'a NutsSettings,
}

impl<T: LogDensity> Integrator<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_and_gradient(&z.q, &mut z.g);
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += 0.5 * eps * g;
        }
    }

    fn draw_momentum<R: Rng>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn build_tree<R: Rng>(
        &self,
        z: &mut Point,
        depth: usize,
        sign: f64,
        h0: f64,
        stats: &mut TreeStats,
        rng: &mut R,
    ) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, sign * self.step);
            stats.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > self.settings.max_energy_error {
                stats.divergent = true;
            }
            stats.sum_accept += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            if stats.divergent {
                return None;
            }
            let sharp = self.sharp(&z.p);
            return Some(Subtree {
                propose: z.clone(),
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                sharp_beg: sharp.clone(),
                sharp_end: sharp,
                rho: z.p.clone(),
                log_weight: h0 - h,
            });
        }
        let init = self.build_tree(z, depth - 1, sign, h0, stats, rng)?;
        let fin = self.build_tree(z, depth - 1, sign, h0, stats, rng)?;

        let log_weight = log_sum_exp(init.log_weight, fin.log_weight);
        let take_final = rng.random::<f64>() < (fin.log_weight - log_weight).exp();
        let rho = add(&init.rho, &fin.rho);
        let persist = no_u_turn(&init.sharp_beg, &fin.sharp_end, &rho)
            && no_u_turn(&init.sharp_beg, &fin.sharp_beg, &add(&init.rho, &fin.p_beg))
            && no_u_turn(&init.sharp_end, &fin.sharp_end, &add(&fin.rho, &init.p_end));
        if !persist {
            return None;
        }
        Some(Subtree {
            propose: if take_final { fin.propose } else { init.propose },
            p_beg: init.p_beg,
            p_end: fin.p_end,
            sharp_beg: init.sharp_beg,
            sharp_end: fin.sharp_end,
            rho,
            log_weight,
        })
    }

    /// One NUTS transition from `z`; returns the acceptance statistic.
    fn transition<R: Rng>(&self, z: &mut Point, rng: &mut R) -> (f64, bool, usize) {
        self.draw_momentum(z, rng);
        let h0 = self.hamiltonian(z);
        let mut fwd = z.clone();
        let mut bck = z.clone();
        let mut sample = z.clone();

        // Momenta at the backward and forward ends of the whole trajectory.
        let mut p_bck = z.p.clone();
        let mut p_fwd = z.p.clone();
        let mut sharp_bck = self.sharp(&z.p);
        let mut sharp_fwd = sharp_bck.clone();
        let mut rho = z.p.clone();
        let mut log_weight = 0.0;

        let mut stats = TreeStats::default();
        let mut depth = 0;
        while depth < self.settings.max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let sub = if forward {
                self.build_tree(&mut fwd, depth, 1.0, h0, &mut stats, rng)
            } else {
                self.build_tree(&mut bck, depth, -1.0, h0, &mut stats, rng)
            };
            let Some(sub) = sub else { break };
            depth += 1;

            if sub.log_weight > log_weight
                || rng.random::<f64>() < (sub.log_weight - log_weight).exp()
            {
                sample = sub.propose.clone();
            }
            log_weight = log_sum_exp(log_weight, sub.log_weight);

            // The subtree's outer end becomes the trajectory's new end; its
            // inner end sits next to the old end on that side.
            let (old_p, old_sharp) = if forward { (&p_fwd, &sharp_fwd) } else { (&p_bck, &sharp_bck) };
            let far_sharp = if forward { &sharp_bck } else { &sharp_fwd };
            let total = add(&rho, &sub.rho);
            let persist = no_u_turn(far_sharp, &sub.sharp_end, &total)
                && no_u_turn(far_sharp, &sub.sharp_beg, &add(&rho, &sub.p_beg))
                && no_u_turn(old_sharp, &sub.sharp_end, &add(&sub.rho, old_p));
            rho = total;
            if forward {
                p_fwd = sub.p_end;
                sharp_fwd = sub.sharp_end;
            } else {
                p_bck = sub.p_end;
                sharp_bck = sub.sharp_end;
            }
            if !persist {
                break;
            }
        }
        *z = sample;
        let accept = if stats.n_leapfrog == 0 { 0.0 } else { stats.sum_accept / stats.n_leapfrog as f64 };
        (accept, stats.divergent, depth)
    }

    fn find_reasonable_step<R: Rng>(&mut self, z: &Point, rng: &mut R) -> Result<()> {
        let threshold = 0.8f64.ln();
        let trial = |integ: &Self, rng: &mut R| {
            let mut w = z.clone();
            integ.draw_momentum(&mut w, rng);
            let h0 = integ.hamiltonian(&w);
            integ.leapfrog(&mut w, integ.step);
            h0 - integ.hamiltonian(&w)
        };
        let delta = trial(self, rng);
        let up = delta > threshold;
        for _ in 0..200 {
            let delta = trial(self, rng);
            if (up && !(delta > threshold)) || (!up && !(delta < threshold)) {
                return Ok(());
            }
            self.step = if up { 2.0 * self.step } else { 0.5 * self.step };
            if !(self.step > 1e-300 && self.step < 1e7) {
                return Err(Error::Sampler(format!(
                    "step size search diverged (step {}) at state {:?}",
                    self.step, z.q
                )));
            }
        }
        Ok(())
    }
}

struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, delta: f64) -> Self {
        Self { mu: (10.0 * step).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept.min(1.0));
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Expanding metric-adaptation windows inside warmup.
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window: usize,
    next_end: usize,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - (init + term);
        }
        Self { warmup, init_buffer: init, term_buffer: term, window: base, next_end: init + base - 1 }
    }

    fn collecting(&self, i: usize) -> bool {
        i >= self.init_buffer && i < self.warmup - self.term_buffer
    }

    fn window_ends(&self, i: usize) -> bool {
        i == self.next_end && i < self.warmup
    }

    fn advance(&mut self, i: usize) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_end == last {
            return;
        }
        self.window *= 2;
        self.next_end = i + self.window;
        if self.next_end != last && self.next_end + 2 * self.window >= self.warmup - self.term_buffer {
            self.next_end = last;
        }
    }
}

/// Runs one adapted NUTS chain from `init`.
pub fn sample_nuts<T: LogDensity, R: Rng>(
    target: &T,
    init: Vec<f64>,
    warmup: usize,
    draws: usize,
    settings: &NutsSettings,
    rng: &mut R,
) -> Result<ChainRun> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} coordinates, target has {dim}",
            init.len()
        )));
    }
    let mut g = vec![0.0; dim];
    let logp = target.log_density_and_gradient(&init, &mut g);
    if !logp.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler(format!("non-finite log density at initial state {init:?}")));
    }
    let mut z = Point { q: init, p: vec![0.0; dim], g, logp };
    let mut integ = Integrator { target, inv_metric: vec![1.0; dim], step: settings.initial_step, settings };
    integ.find_reasonable_step(&z, rng)?;

    let mut dual = DualAveraging::new(integ.step, settings.target_accept);
    let mut windows = Windows::new(warmup);
    let mut welford = Welford::new(dim);
    let adapt_metric = warmup >= 20;
    for i in 0..warmup {
        let (accept, _, _) = integ.transition(&mut z, rng);
        integ.step = dual.learn(accept);
        if !adapt_metric {
            continue;
        }
        if windows.collecting(i) {
            welford.add(&z.q);
        }
        if windows.window_ends(i) {
            windows.advance(i);
            let n = welford.count() as f64;
            integ.inv_metric = welford
                .variance()
                .iter()
                .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
                .collect();
            welford = Welford::new(dim);
            integ.find_reasonable_step(&z, rng)?;
            dual = DualAveraging::new(integ.step, settings.target_accept);
        }
    }
    if warmup > 0 {
        integ.step = dual.final_step();
    }

    let mut run = ChainRun::with_capacity(dim, draws);
    for _ in 0..draws {
        let (accept, divergent, depth) = integ.transition(&mut z, rng);
        if !z.logp.is_finite() {
            return Err(Error::Sampler(format!("non-finite log density at state {:?}", z.q)));
        }
        run.push(&z.q, z.logp, accept, divergent);
        run.max_depth_hits += usize::from(depth >= settings.max_depth);
    }
    run.step_size = integ.step;
    run.inv_metric = integ.inv_metric;
    Ok(run)
}
