//! The no-U-turn transition kernel and warmup adaptation.
//!
//! The trajectory-doubling scheme, multinomial state selection, generalized
//! U-turn checks across merged subtrees, step size search, dual averaging,
//! and windowed metric estimation follow the reference Hamiltonian Monte
//! Carlo implementations used across the probabilistic programming
//! ecosystem, specialized to a diagonal metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SamplerConfig, SamplerError, Target, MAX_DELTA_H};

const EPSILON_LOWER_BOUND: f64 = 1e-16;
const EPSILON_UPPER_BOUND: f64 = 1e7;
const INIT_ATTEMPTS: usize = 100;

/// Position, momentum, and cached density information for one state.
#[derive(Debug, Clone)]
struct Phase {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Momentum trackers for one side of a growing trajectory.
#[derive(Debug, Clone)]
struct Edges {
    /// Velocity at the inner end of the newest subtree.
    p_sharp_beg: Vec<f64>,
    /// Velocity at the outer end of the newest subtree.
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
}

impl Edges {
    fn zeros(dim: usize) -> Self {
        Self {
            p_sharp_beg: vec![0.0; dim],
            p_sharp_end: vec![0.0; dim],
            p_beg: vec![0.0; dim],
            p_end: vec![0.0; dim],
            rho: vec![0.0; dim],
        }
    }
}

struct Transition {
    state: Phase,
    accept_stat: f64,
    divergent: bool,
    depth: usize,
    n_leapfrog: usize,
}

pub(super) struct ChainOutput {
    /// Constrained draws, `[iteration][parameter]` row-major.
    pub draws: Vec<f64>,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    /// Gradient-step count over all iterations, warmup included.
    pub leapfrogs: usize,
}

struct Chain<'a, T: Target> {
    target: &'a T,
    chain_id: usize,
    dim: usize,
    /// Diagonal inverse mass matrix, i.e. estimated posterior variances.
    inv_mass: Vec<f64>,
    eps: f64,
    max_depth: usize,
    rng: ChaCha8Rng,
    divergent: bool,
}

impl<'a, T: Target> Chain<'a, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(pi, im)| pi * pi * im)
            .sum::<f64>()
    }

    /// Hamiltonian with the convention that not-a-number means divergence.
    fn hamiltonian(&self, z: &Phase) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sample_momentum(&mut self, z: &mut Phase) {
        for (pi, im) in z.p.iter_mut().zip(&self.inv_mass) {
            let std: f64 = self.rng.sample(StandardNormal);
            *pi = std / im.sqrt();
        }
    }

    /// Velocity dH/dp = M^-1 p.
    fn p_sharp(&self, z: &Phase, out: &mut [f64]) {
        for ((o, p), im) in out.iter_mut().zip(&z.p).zip(&self.inv_mass) {
            *o = p * im;
        }
    }

    fn leapfrog(&mut self, z: &mut Phase, eps: f64) {
        for i in 0..self.dim {
            z.p[i] += 0.5 * eps * z.grad[i];
        }
        for i in 0..self.dim {
            z.q[i] += eps * self.inv_mass[i] * z.p[i];
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        for i in 0..self.dim {
            z.p[i] += 0.5 * eps * z.grad[i];
        }
    }

    /// Doubles the step size up or down until one leapfrog step crosses an
    /// acceptance of 0.8, starting from 1.0.
    fn find_reasonable_eps(&mut self, init: &Phase) -> Result<f64, SamplerError> {
        let threshold = 0.8f64.ln();
        let mut eps = 1.0;
        let mut direction: Option<i8> = None;
        loop {
            let mut z = init.clone();
            self.sample_momentum(&mut z);
            let h0 = self.hamiltonian(&z);
            self.leapfrog(&mut z, eps);
            let h = self.hamiltonian(&z);
            let delta = h0 - h;
            let above = delta > threshold;
            match direction {
                None => direction = Some(if above { 1 } else { -1 }),
                Some(1) => {
                    if above {
                        eps *= 2.0;
                    } else {
                        break;
                    }
                }
                Some(_) => {
                    if above {
                        break;
                    } else {
                        eps *= 0.5;
                    }
                }
            }
            if !(EPSILON_LOWER_BOUND..=EPSILON_UPPER_BOUND).contains(&eps) {
                return Err(SamplerError::StepSizeSearchFailed {
                    chain: self.chain_id,
                    lo: EPSILON_LOWER_BOUND,
                    hi: EPSILON_UPPER_BOUND,
                });
            }
        }
        Ok(eps)
    }

    /// One doubling of the trajectory: 2^depth leapfrog steps in one
    /// direction. Returns false when the subtree contains a divergence or
    /// an internal U-turn, in which case it must not be selected from.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Phase,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro_prob: &mut f64,
        propose: &mut Phase,
        edges: &mut Edges,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            propose.clone_from(z);
            self.p_sharp(z, &mut edges.p_sharp_beg);
            edges.p_sharp_end.clone_from_slice(&edges.p_sharp_beg);
            for i in 0..self.dim {
                edges.rho[i] += z.p[i];
            }
            edges.p_beg.clone_from_slice(&z.p);
            edges.p_end.clone_from_slice(&z.p);
            return !self.divergent;
        }

        let mut lsw_left = f64::NEG_INFINITY;
        let mut edges_left = Edges::zeros(self.dim);
        let valid_left = self.build_tree(
            depth - 1,
            z,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_left,
            sum_metro_prob,
            propose,
            &mut edges_left,
        );
        if !valid_left {
            return false;
        }

        let mut propose_right = z.clone();
        let mut lsw_right = f64::NEG_INFINITY;
        let mut edges_right = Edges::zeros(self.dim);
        let valid_right = self.build_tree(
            depth - 1,
            z,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_right,
            sum_metro_prob,
            &mut propose_right,
            &mut edges_right,
        );
        if !valid_right {
            return false;
        }

        // Biased progressive selection between the two halves.
        let lsw_subtree = log_sum_exp(lsw_left, lsw_right);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        // Short-circuit so the certain accept consumes no uniform draw.
        if lsw_right > lsw_subtree
            || self.rng.gen::<f64>() < (lsw_right - lsw_subtree).exp()
        {
            propose.clone_from(&propose_right);
        }

        edges.p_sharp_beg.clone_from_slice(&edges_left.p_sharp_beg);
        edges.p_beg.clone_from_slice(&edges_left.p_beg);
        edges.p_sharp_end.clone_from_slice(&edges_right.p_sharp_end);
        edges.p_end.clone_from_slice(&edges_right.p_end);
        let mut rho_subtree = vec![0.0; self.dim];
        for (i, rs) in rho_subtree.iter_mut().enumerate() {
            *rs = edges_left.rho[i] + edges_right.rho[i];
            edges.rho[i] += *rs;
        }

        // U-turn checks across the merged halves and across each boundary.
        let mut persist = criterion(&edges.p_sharp_beg, &edges.p_sharp_end, &rho_subtree);
        let rho_ext: Vec<f64> = (0..self.dim)
            .map(|i| edges_left.rho[i] + edges_right.p_beg[i])
            .collect();
        persist = persist
            && criterion(&edges.p_sharp_beg, &edges_right.p_sharp_beg, &rho_ext);
        let rho_ext: Vec<f64> = (0..self.dim)
            .map(|i| edges_right.rho[i] + edges_left.p_end[i])
            .collect();
        persist = persist
            && criterion(&edges_left.p_sharp_end, &edges.p_sharp_end, &rho_ext);
        persist
    }

    fn transition(&mut self, init: &Phase) -> Transition {
        self.divergent = false;
        let mut z = init.clone();
        self.sample_momentum(&mut z);
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut p_sharp0 = vec![0.0; self.dim];
        self.p_sharp(&z, &mut p_sharp0);
        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = p_sharp0.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp0.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp0.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp0;

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0f64;
        let mut sum_metro_prob = 0.0f64;
        let mut n_leapfrog = 0usize;
        let mut z_sample = z.clone();
        let mut depth = 0usize;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; self.dim];
            let mut rho_bck = vec![0.0; self.dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let mut propose = z.clone();
            let mut edges = Edges::zeros(self.dim);

            let valid = if self.rng.gen::<f64>() > 0.5 {
                // Expand forward; the backward piece is the whole old tree.
                z.clone_from(&z_fwd);
                rho_bck.clone_from_slice(&rho);
                p_bck_fwd.clone_from_slice(&p_fwd_fwd);
                p_sharp_bck_fwd.clone_from_slice(&p_sharp_fwd_fwd);
                let valid = self.build_tree(
                    depth,
                    &mut z,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro_prob,
                    &mut propose,
                    &mut edges,
                );
                z_fwd.clone_from(&z);
                p_sharp_fwd_bck.clone_from_slice(&edges.p_sharp_beg);
                p_sharp_fwd_fwd.clone_from_slice(&edges.p_sharp_end);
                p_fwd_bck.clone_from_slice(&edges.p_beg);
                p_fwd_fwd.clone_from_slice(&edges.p_end);
                rho_fwd.clone_from_slice(&edges.rho);
                valid
            } else {
                // Expand backward; the forward piece is the whole old tree.
                z.clone_from(&z_bck);
                rho_fwd.clone_from_slice(&rho);
                p_fwd_bck.clone_from_slice(&p_bck_bck);
                p_sharp_fwd_bck.clone_from_slice(&p_sharp_bck_bck);
                let valid = self.build_tree(
                    depth,
                    &mut z,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro_prob,
                    &mut propose,
                    &mut edges,
                );
                z_bck.clone_from(&z);
                p_sharp_bck_fwd.clone_from_slice(&edges.p_sharp_beg);
                p_sharp_bck_bck.clone_from_slice(&edges.p_sharp_end);
                p_bck_fwd.clone_from_slice(&edges.p_beg);
                p_bck_bck.clone_from_slice(&edges.p_end);
                rho_bck.clone_from_slice(&edges.rho);
                valid
            };

            if !valid {
                break;
            }
            depth += 1;

            // Short-circuit so the certain accept consumes no uniform draw.
            if lsw_subtree > log_sum_weight
                || self.rng.gen::<f64>() < (lsw_subtree - log_sum_weight).exp()
            {
                z_sample.clone_from(&propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            for i in 0..self.dim {
                rho[i] = rho_bck[i] + rho_fwd[i];
            }
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext: Vec<f64> =
                (0..self.dim).map(|i| rho_bck[i] + p_fwd_bck[i]).collect();
            persist = persist && criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext: Vec<f64> =
                (0..self.dim).map(|i| rho_fwd[i] + p_bck_fwd[i]).collect();
            persist = persist && criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let accept_stat = if n_leapfrog > 0 {
            sum_metro_prob / n_leapfrog as f64
        } else {
            0.0
        };
        Transition {
            state: z_sample,
            accept_stat,
            divergent: self.divergent,
            depth,
            n_leapfrog,
        }
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    let fwd: f64 = p_sharp_plus.iter().zip(rho).map(|(a, b)| a * b).sum();
    let bck: f64 = p_sharp_minus.iter().zip(rho).map(|(a, b)| a * b).sum();
    fwd > 0.0 && bck > 0.0
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Nesterov dual averaging of the log step size toward a target acceptance
/// statistic.
struct DualAveraging {
    mu: f64,
    target: f64,
    counter: u64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(mu: f64, target: f64) -> Self {
        Self { mu, target, counter: 0, s_bar: 0.0, x_bar: 0.0 }
    }

    /// Returns the step size for the next iteration.
    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1;
        let accept = accept_stat.min(1.0);
        let count = self.counter as f64;
        let eta = 1.0 / (count + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * count.sqrt() / Self::GAMMA;
        let x_eta = count.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Smoothed final step size for the sampling phase.
    fn completed(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup phase schedule: a fast initial buffer adapting only the step
/// size, doubling slow windows estimating the metric, and a fast terminal
/// buffer. Short warmups shrink the buffers proportionally.
struct WindowedSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowedSchedule {
    fn new(num_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
        if init + term + base > num_warmup {
            init = (0.15 * num_warmup as f64) as usize;
            term = (0.10 * num_warmup as f64) as usize;
            base = num_warmup - init - term;
        }
        Self {
            num_warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: init + base - 1,
            counter: 0,
        }
    }

    fn in_metric_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last_slow = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last_slow {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window == last_slow {
            return;
        }
        // Merge with the following window when it would spill into the
        // terminal buffer.
        let following_boundary = self.next_window + 2 * self.window_size;
        if following_boundary >= self.num_warmup - self.term_buffer {
            self.next_window = last_slow;
        }
    }

    fn advance(&mut self) {
        self.counter += 1;
    }
}

/// Streaming mean and variance over metric-window draws.
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for (i, &qi) in q.iter().enumerate() {
            let delta = qi - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (qi - self.mean[i]);
        }
    }

    fn count(&self) -> u64 {
        self.n
    }

    fn sample_variance(&self) -> Vec<f64> {
        let denom = (self.n - 1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }

    fn reset(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

pub(super) fn run_chain<T: Target>(
    target: &T,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainOutput, SamplerError> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_id as u64);

    // Jittered initialization: retry until both the density and gradient
    // are finite.
    let mut q = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    let mut initialized = false;
    for _ in 0..INIT_ATTEMPTS {
        for v in q.iter_mut() {
            *v = rng.gen_range(-config.init_radius..config.init_radius);
        }
        logp = target.log_density_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            initialized = true;
            break;
        }
    }
    if !initialized {
        return Err(SamplerError::InitFailed { chain: chain_id, attempts: INIT_ATTEMPTS });
    }

    let mut chain = Chain {
        target,
        chain_id,
        dim,
        inv_mass: vec![1.0; dim],
        eps: 1.0,
        max_depth: config.max_tree_depth,
        rng,
        divergent: false,
    };
    let mut state = Phase { q, p: vec![0.0; dim], grad, logp };

    chain.eps = chain.find_reasonable_eps(&state)?;
    let mut da = DualAveraging::new((10.0 * chain.eps).ln(), config.target_accept);
    let mut schedule = WindowedSchedule::new(config.n_warmup);
    let mut welford = Welford::new(dim);

    let kept = config.n_kept();
    let mut draws = Vec::with_capacity(kept * dim);
    let mut divergences = 0usize;
    let mut max_depth_hits = 0usize;
    let mut accept_sum = 0.0f64;
    let mut leapfrogs = 0usize;

    for iter in 0..config.n_iter {
        let out = chain.transition(&state);
        state = out.state;
        leapfrogs += out.n_leapfrog;

        if iter < config.n_warmup {
            chain.eps = da.learn(out.accept_stat);
            if schedule.in_metric_window() {
                welford.add(&state.q);
            }
            if schedule.at_window_end() {
                schedule.compute_next_window();
                if welford.count() >= 2 {
                    let count = welford.count() as f64;
                    let shrink = count / (count + 5.0);
                    let mut variance = welford.sample_variance();
                    for v in &mut variance {
                        *v = shrink * *v + 1e-3 * (1.0 - shrink);
                    }
                    chain.inv_mass = variance;
                }
                welford.reset();
                chain.eps = chain.find_reasonable_eps(&state)?;
                da = DualAveraging::new((10.0 * chain.eps).ln(), config.target_accept);
            }
            schedule.advance();
            if iter + 1 == config.n_warmup {
                chain.eps = da.completed();
            }
        } else {
            if out.divergent {
                divergences += 1;
            }
            if out.depth == config.max_tree_depth {
                max_depth_hits += 1;
            }
            accept_sum += out.accept_stat;
            draws.extend(target.to_constrained(&state.q));
        }
    }

    Ok(ChainOutput {
        draws,
        divergences,
        max_depth_hits,
        step_size: chain.eps,
        mean_accept: accept_sum / kept as f64,
        leapfrogs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_averaging_shrinks_step_size_under_rejection() {
        let mut da = DualAveraging::new((10.0f64).ln(), 0.8);
        let mut eps = 1.0;
        for _ in 0..50 {
            eps = da.learn(0.0);
        }
        assert!(eps < 0.05, "eps {eps}");
        let mut da = DualAveraging::new((10.0f64).ln(), 0.8);
        for _ in 0..50 {
            eps = da.learn(1.0);
        }
        assert!(eps > 2.0, "eps {eps}");
    }

    #[test]
    fn windowed_schedule_matches_reference_breakpoints() {
        // Classic 1000-iteration warmup: doubling windows end at 99, 149,
        // 249, 449, then the merged final window at 949.
        let mut s = WindowedSchedule::new(1000);
        assert_eq!((s.init_buffer, s.term_buffer, s.window_size), (75, 50, 25));
        let mut ends = Vec::new();
        for _ in 0..1000 {
            if s.at_window_end() {
                ends.push(s.counter);
                s.compute_next_window();
            }
            s.advance();
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_shrinks_buffers_proportionally() {
        let s = WindowedSchedule::new(100);
        assert_eq!(s.init_buffer, 15);
        assert_eq!(s.term_buffer, 10);
        assert_eq!(s.window_size, 75);
        assert_eq!(s.next_window, 89);

        let mut s = WindowedSchedule::new(100);
        let mut ends = Vec::new();
        for _ in 0..100 {
            if s.at_window_end() {
                ends.push(s.counter);
                s.compute_next_window();
            }
            s.advance();
        }
        assert_eq!(ends, vec![89]);
    }

    #[test]
    fn welford_matches_two_pass_variance() {
        let xs = [0.3, -1.2, 2.4, 0.0, 0.7, -0.4];
        let mut w = Welford::new(1);
        for x in xs {
            w.add(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((w.sample_variance()[0] - var).abs() < 1e-14);
        assert_eq!(w.count(), 6);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(log_sum_exp(-1.0, f64::NEG_INFINITY), -1.0);
        let v = log_sum_exp(0.0, 0.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
