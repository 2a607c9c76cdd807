//! Thompson sampling over items with Gaussian conjugate posteriors and the
//! gradient-dynamics reward that drives it.
//!
//! Each item is an arm. Its unknown mean reward has a normal prior
//! `N(mu_prior, 1/tau_prior)`; rewards are modelled as `N(mean, 1/likelihood_tau)`.
//! Each round every arm draws a mean from its posterior and the largest
//! draws win.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cf::GradientBlock;
use crate::error::{Error, Result};

/// How the cosine term of the reward is weighted over iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `1 − γ^t`: grows towards 1 as training proceeds.
    #[default]
    DecayedPower,
    /// `1 − γ·t`, the coefficient exactly as usually printed.
    LiteralLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub mu_prior: f64,
    pub tau_prior: f64,
    /// Balance between gradual (cosine) and immediate (L1) gradient change.
    pub gamma: f64,
    /// Precision of the reward likelihood.
    pub likelihood_tau: f64,
    pub reward_mode: RewardMode,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            mu_prior: 0.0,
            tau_prior: 10_000.0,
            gamma: 0.999,
            likelihood_tau: 1.0,
            reward_mode: RewardMode::DecayedPower,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_prior.is_finite() || !(self.tau_prior > 0.0 && self.tau_prior.is_finite()) {
            return Err(Error::invalid("prior needs a finite mean and a positive precision"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        if !(self.likelihood_tau > 0.0 && self.likelihood_tau.is_finite()) {
            return Err(Error::invalid("likelihood precision must be positive"));
        }
        Ok(())
    }
}

/// Posterior over one item's mean reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemPosterior {
    pub mu_hat: f64,
    pub tau_hat: f64,
    /// Times the item has been selected and rewarded.
    pub n: u64,
    pub reward_sum: f64,
    /// Neumaier compensation term of `reward_sum`.
    #[serde(default)]
    reward_carry: f64,
}

impl ItemPosterior {
    pub fn prior(cfg: &BanditConfig) -> Self {
        Self {
            mu_hat: cfg.mu_prior,
            tau_hat: cfg.tau_prior,
            n: 0,
            reward_sum: 0.0,
            reward_carry: 0.0,
        }
    }

    /// Mean observed reward, `None` before the first update.
    pub fn mean_reward(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.reward_sum + self.reward_carry) / self.n as f64)
    }
}

/// Closed-form posterior after `n` rewards with mean `z`.
pub fn batch_posterior(n: u64, z: f64, cfg: &BanditConfig) -> (f64, f64) {
    let nt = n as f64 * cfg.likelihood_tau;
    let tau_hat = cfg.tau_prior + nt;
    let mu_hat = (cfg.tau_prior * cfg.mu_prior + nt * z) / tau_hat;
    (mu_hat, tau_hat)
}

/// Folds one reward into an item posterior.
pub fn update_posterior(post: &ItemPosterior, r: f64, cfg: &BanditConfig) -> Result<ItemPosterior> {
    if !r.is_finite() {
        return Err(Error::invalid(format!("reward {r} is not finite")));
    }
    let mut next = *post;
    next.n += 1;
    // Neumaier summation keeps the mean independent of reward order to ~1 ulp.
    let t = next.reward_sum + r;
    if next.reward_sum.abs() >= r.abs() {
        next.reward_carry += (next.reward_sum - t) + r;
    } else {
        next.reward_carry += (r - t) + next.reward_sum;
    }
    next.reward_sum = t;
    let z = next.mean_reward().expect("n > 0");
    let (mu_hat, tau_hat) = batch_posterior(next.n, z, cfg);
    next.mu_hat = mu_hat;
    next.tau_hat = tau_hat;
    Ok(next)
}

fn by_draw_then_id(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Draws a mean for every item and returns the `m_s` items with the largest
/// draws, best first. Ties go to the smaller item id.
pub fn sample_items<R: Rng + ?Sized>(posteriors: &[ItemPosterior], m_s: usize, rng: &mut R) -> Result<Vec<u32>> {
    if m_s == 0 || m_s > posteriors.len() {
        return Err(Error::invalid(format!(
            "cannot select {m_s} of {} items",
            posteriors.len()
        )));
    }
    let mut draws: Vec<(f64, u32)> = posteriors
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let z: f64 = StandardNormal.sample(rng);
            (p.mu_hat + z / p.tau_hat.sqrt(), j as u32)
        })
        .collect();
    if m_s < draws.len() {
        draws.select_nth_unstable_by(m_s - 1, by_draw_then_id);
        draws.truncate(m_s);
    }
    draws.sort_unstable_by(by_draw_then_id);
    Ok(draws.into_iter().map(|(_, j)| j).collect())
}

/// `(β₂·v + (1 − β₂)·g²) / (1 − β₂)`, elementwise.
pub fn update_second_moment(v_prev: &[f64], grad: &[f64], beta2: f64) -> Result<Vec<f64>> {
    check_beta2(beta2)?;
    if v_prev.len() != grad.len() {
        return Err(Error::invalid("moment and gradient lengths differ"));
    }
    Ok(v_prev
        .iter()
        .zip(grad)
        .map(|(v, g)| (beta2 * v + (1.0 - beta2) * g * g) / (1.0 - beta2))
        .collect())
}

fn check_beta2(beta2: f64) -> Result<()> {
    if !(beta2 > 0.0 && beta2 < 1.0) {
        return Err(Error::invalid(format!("beta2 = {beta2} not in (0, 1)")));
    }
    Ok(())
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Weight of the cosine term at iteration `t`.
pub fn cosine_weight(t: u64, cfg: &BanditConfig) -> f64 {
    match cfg.reward_mode {
        RewardMode::DecayedPower => 1.0 - cfg.gamma.powf(t as f64),
        RewardMode::LiteralLinear => 1.0 - cfg.gamma * t as f64,
    }
}

/// `w(t)·cos(v, g_t) + (γ/t)·Σ_k |g_{t−1,k} − g_{t,k}|`.
pub fn compute_reward(grad_prev: &[f64], grad_cur: &[f64], v_cur: &[f64], t: u64, cfg: &BanditConfig) -> f64 {
    assert!(t >= 1, "iterations are counted from 1");
    let l1: f64 = grad_prev.iter().zip(grad_cur).map(|(a, b)| (a - b).abs()).sum();
    cosine_weight(t, cfg) * cosine_sim(v_cur, grad_cur) + cfg.gamma / t as f64 * l1
}

/// Per-item gradient memory: the last aggregated gradient and the decayed
/// squared-gradient accumulator.
///
/// The accumulator recursion `v ← β₂/(1−β₂)·v + g²` grows geometrically, so
/// it is kept as `exp(log_scale)·unit` with `max(unit) = 1`. The direction,
/// which is all the cosine term needs, stays exact after the raw value would
/// have overflowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDynamics {
    k: usize,
    last_gradient: Vec<f64>,
    moment_unit: Vec<f64>,
    moment_log_scale: Vec<f64>,
}

impl ItemDynamics {
    pub fn new(n_items: usize, k: usize) -> Self {
        Self {
            k,
            last_gradient: vec![0.0; n_items * k],
            moment_unit: vec![0.0; n_items * k],
            moment_log_scale: vec![0.0; n_items],
        }
    }

    pub fn last_gradient(&self, item: usize) -> &[f64] {
        &self.last_gradient[item * self.k..(item + 1) * self.k]
    }

    /// Second-moment direction, scaled so its largest entry is 1 (or all zero).
    pub fn moment_direction(&self, item: usize) -> &[f64] {
        &self.moment_unit[item * self.k..(item + 1) * self.k]
    }

    /// Raw second-moment value; may be `inf` once the recursion outgrows f64.
    pub fn second_moment(&self, item: usize) -> Vec<f64> {
        let s = self.moment_log_scale[item].exp();
        self.moment_direction(item).iter().map(|u| u * s).collect()
    }

    /// Advances the squared-gradient accumulator of `item`.
    pub fn advance_moment(&mut self, item: usize, grad: &[f64], beta2: f64) -> Result<()> {
        check_beta2(beta2)?;
        let k = self.k;
        let decay = beta2 / (1.0 - beta2);
        let log_scale = self.moment_log_scale[item];
        let unit = &mut self.moment_unit[item * k..(item + 1) * k];
        let mut peak = 0.0f64;
        for (u, g) in unit.iter_mut().zip(grad) {
            let g2 = g * g;
            let fresh = if g2 == 0.0 { 0.0 } else { (g2.ln() - log_scale).exp() };
            *u = decay * *u + fresh;
            peak = peak.max(*u);
        }
        if peak > 0.0 && peak.is_finite() {
            unit.iter_mut().for_each(|u| *u /= peak);
            self.moment_log_scale[item] = log_scale + peak.ln();
        } else {
            unit.iter_mut().for_each(|u| *u = 0.0);
            self.moment_log_scale[item] = 0.0;
        }
        Ok(())
    }

    pub fn set_last_gradient(&mut self, item: usize, grad: &[f64]) {
        self.last_gradient[item * self.k..(item + 1) * self.k].copy_from_slice(grad);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub iteration: u64,
    pub items: Vec<u32>,
    pub rewards: Vec<f64>,
}

/// Selected items and their rewards, one record per global update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub records: Vec<SelectionRecord>,
}

/// The full bandit: one posterior per item plus gradient memory.
#[derive(Debug, Clone)]
pub struct BanditState {
    config: BanditConfig,
    posteriors: Vec<ItemPosterior>,
    dynamics: ItemDynamics,
    log: Option<SelectionLog>,
}

impl BanditState {
    pub fn new(n_items: usize, k: usize, config: BanditConfig, keep_log: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            posteriors: vec![ItemPosterior::prior(&config); n_items],
            dynamics: ItemDynamics::new(n_items, k),
            log: keep_log.then(SelectionLog::default),
        })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn posteriors(&self) -> &[ItemPosterior] {
        &self.posteriors
    }

    pub fn dynamics(&self) -> &ItemDynamics {
        &self.dynamics
    }

    pub fn log(&self) -> Option<&SelectionLog> {
        self.log.as_ref()
    }

    pub fn select<R: Rng + ?Sized>(&self, m_s: usize, rng: &mut R) -> Result<Vec<u32>> {
        sample_items(&self.posteriors, m_s, rng)
    }

    /// Rewards every column of the aggregated gradient block at iteration `t`
    /// and folds the rewards into the posteriors. Returns the rewards in
    /// column order.
    pub fn feedback(&mut self, t: u64, grads: &GradientBlock, beta2: f64) -> Result<Vec<f64>> {
        let mut rewards = Vec::with_capacity(grads.item_ids().len());
        for (col, &item) in grads.item_ids().iter().enumerate() {
            let j = item as usize;
            let g = grads.column(col);
            self.dynamics.advance_moment(j, g, beta2)?;
            let r = compute_reward(
                self.dynamics.last_gradient(j),
                g,
                self.dynamics.moment_direction(j),
                t,
                &self.config,
            );
            self.posteriors[j] = update_posterior(&self.posteriors[j], r, &self.config)?;
            self.dynamics.set_last_gradient(j, g);
            rewards.push(r);
        }
        if let Some(log) = &mut self.log {
            log.records.push(SelectionRecord {
                iteration: t,
                items: grads.item_ids().to_vec(),
                rewards: rewards.clone(),
            });
        }
        Ok(rewards)
    }
}
