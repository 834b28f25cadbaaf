//! Hyperparameter laws: step sizes, momentum weights, batch/local-update
//! trade-off maps for STEM and FedAvg, and the tuned practical mode.
//!
//! The theoretical mode fixes, for given (σ, L, b, K, I, T):
//!
//! ```text
//!   κ̄  = (bK)^{2/3} σ^{2/3} / L
//!   c   = 64 L²/(bK) + σ²/(24 κ̄³ L I)          (≤ 128 L²/(bK))
//!   w_t = max{ 2σ²,  4096 L³I³κ̄³ − σ²t,  c³κ̄³/(4096 L³I³) }
//!   η_t = κ̄ / (w_t + σ² t)^{1/3}               (≤ 1/(16 L I), nonincreasing)
//!   a_{t+1} = c η_t²                            (raw value ≤ 1/2)
//!   B   = b·I
//! ```
//!
//! The practical mode replaces the w-envelope by w ≡ 1 and c = c̄/κ̄², with
//! κ̄ and c̄ as tuning dials; η then decays per iteration (or per epoch when
//! `epoch_len > 1`).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step-size law variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Theoretical,
    Practical,
}

/// Fully resolved hyperparameter schedule for one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleState {
    pub mode: ScheduleMode,
    /// κ̄ — step-size numerator.
    pub kappa_bar: f64,
    /// c — momentum-law coefficient, a_{t+1} = c·η_t².
    pub c: f64,
    /// σ — intra-node deviation bound used by the law (0 in practical mode).
    pub sigma: f64,
    /// L — smoothness constant used by the law (1 in practical mode).
    pub l_smooth: f64,
    /// I — local updates per communication round.
    pub local_updates: u64,
    /// b — minibatch size.
    pub batch: u64,
    /// B — initial batch size (b·I unless overridden).
    pub init_batch: u64,
    /// K — number of workers.
    pub workers: u64,
    /// T — total iterations (a multiple of I).
    pub total_iters: u64,
    /// ν — trade-off dial the (I, b) pair was derived from, if any.
    pub nu: Option<f64>,
    /// c̄ — practical-mode momentum dial.
    pub practical_cbar: Option<f64>,
    /// κ̄_p — practical-mode step dial (mirrored into `kappa_bar`).
    pub practical_kappa: Option<f64>,
    /// Practical-mode epoch length: η decays once per `epoch_len` iterations.
    pub epoch_len: u64,
    /// Forced momentum value (`Some(1.0)` turns the direction into a plain
    /// minibatch gradient). `None` applies the c·η² law.
    pub a_override: Option<f64>,
}

/// (I, b) choice returned by a trade-off map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeoffChoice {
    pub local_updates: u64,
    pub batch: u64,
    /// Set when the horizon was too short for the map (T < K² resp. K³) and
    /// the choice was clamped to (1, 1).
    pub clamped: bool,
}

fn check_positive(b: u64, k: u64, i: u64, t: u64) -> Result<()> {
    if b == 0 || k == 0 || i == 0 || t == 0 {
        return Err(Error::Config(format!(
            "b, K, I, T must be positive (got b={b}, K={k}, I={i}, T={t})"
        )));
    }
    Ok(())
}

/// Theoretical-mode schedule for given measured constants.
///
/// `T` must be a multiple of `I` (pad it up first); σ = 0 is rejected as a
/// degenerate schedule (the step law becomes 0/0), callers fall back to
/// [`practical_schedule`].
pub fn theoretical_schedule(
    sigma: f64,
    l_smooth: f64,
    batch: u64,
    workers: u64,
    local_updates: u64,
    total_iters: u64,
) -> Result<ScheduleState> {
    check_positive(batch, workers, local_updates, total_iters)?;
    if sigma <= 0.0 {
        return Err(Error::DegenerateSchedule(
            "theoretical step sizes require sigma > 0; use the practical mode".into(),
        ));
    }
    if l_smooth <= 0.0 {
        return Err(Error::Config(
            "smoothness constant L must be positive".into(),
        ));
    }
    if !total_iters.is_multiple_of(local_updates) {
        return Err(Error::Config(format!(
            "T = {total_iters} must be a multiple of I = {local_updates}; pad T up"
        )));
    }
    let bk = (batch * workers) as f64;
    let kappa_bar = bk.powf(2.0 / 3.0) * sigma.powf(2.0 / 3.0) / l_smooth;
    let c = 64.0 * l_smooth * l_smooth / bk
        + sigma * sigma / (24.0 * kappa_bar.powi(3) * l_smooth * local_updates as f64);
    Ok(ScheduleState {
        mode: ScheduleMode::Theoretical,
        kappa_bar,
        c,
        sigma,
        l_smooth,
        local_updates,
        batch,
        init_batch: batch * local_updates,
        workers,
        total_iters,
        nu: None,
        practical_cbar: None,
        practical_kappa: None,
        epoch_len: 1,
        a_override: None,
    })
}

/// Tuned schedule: w ≡ 1, c = c̄/κ̄², η_t = κ̄/(1 + ⌊t/epoch_len⌋)^{1/3}.
pub fn practical_schedule(
    kappa: f64,
    cbar: f64,
    batch: u64,
    workers: u64,
    local_updates: u64,
    total_iters: u64,
    epoch_len: u64,
) -> Result<ScheduleState> {
    check_positive(batch, workers, local_updates, total_iters)?;
    if kappa <= 0.0 || cbar <= 0.0 {
        return Err(Error::Config(format!(
            "practical mode needs kappa > 0 and cbar > 0 (got {kappa}, {cbar})"
        )));
    }
    if epoch_len == 0 {
        return Err(Error::Config("epoch_len must be positive".into()));
    }
    if !total_iters.is_multiple_of(local_updates) {
        return Err(Error::Config(format!(
            "T = {total_iters} must be a multiple of I = {local_updates}; pad T up"
        )));
    }
    Ok(ScheduleState {
        mode: ScheduleMode::Practical,
        kappa_bar: kappa,
        c: cbar / (kappa * kappa),
        sigma: 0.0,
        l_smooth: 1.0,
        local_updates,
        batch,
        init_batch: batch * local_updates,
        workers,
        total_iters,
        nu: None,
        practical_cbar: Some(cbar),
        practical_kappa: Some(kappa),
        epoch_len,
        a_override: None,
    })
}

impl ScheduleState {
    /// w_t: the three-way max envelope (theoretical) or 1 (practical).
    pub fn weight_at(&self, t: u64) -> f64 {
        match self.mode {
            ScheduleMode::Practical => 1.0,
            ScheduleMode::Theoretical => {
                let li = self.l_smooth * self.local_updates as f64;
                let li3 = li.powi(3);
                let k3 = self.kappa_bar.powi(3);
                let first = 2.0 * self.sigma * self.sigma;
                let second = 4096.0 * li3 * k3 - self.sigma * self.sigma * t as f64;
                let third = self.c.powi(3) * k3 / (4096.0 * li3);
                first.max(second).max(third)
            }
        }
    }

    /// η_t = κ̄/(w_t + σ²t)^{1/3}; defined from t = 0 (η₀ feeds the gradient
    /// error potential for the first iterate).
    pub fn eta_at(&self, t: u64) -> f64 {
        match self.mode {
            ScheduleMode::Practical => {
                let epochs = (t / self.epoch_len) as f64;
                self.kappa_bar / (1.0 + epochs).cbrt()
            }
            ScheduleMode::Theoretical => {
                let denom = self.weight_at(t) + self.sigma * self.sigma * t as f64;
                self.kappa_bar / denom.cbrt()
            }
        }
    }

    /// a_{t+1} = min(1, c·η_t²), or the forced override when one is set.
    pub fn momentum_at(&self, t: u64) -> f64 {
        if let Some(a) = self.a_override {
            return a.min(1.0);
        }
        (self.c * self.eta_at(t) * self.eta_at(t)).min(1.0)
    }

    /// Raw (unclamped) momentum value, for bound checks.
    pub fn raw_momentum_at(&self, t: u64) -> f64 {
        self.c * self.eta_at(t) * self.eta_at(t)
    }

    /// Upper bound `1/(16 L I)` the theoretical η never exceeds.
    pub fn eta_cap(&self) -> f64 {
        1.0 / (16.0 * self.l_smooth * self.local_updates as f64)
    }

    /// Number of communication rounds, S = T/I.
    pub fn rounds(&self) -> u64 {
        self.total_iters / self.local_updates
    }

    /// Returns a copy with the momentum forced to the given value.
    pub fn with_a_override(mut self, a: f64) -> Self {
        self.a_override = Some(a);
        self
    }
}

/// STEM trade-off map (constants-one convention, floored and clamped at 1):
/// `I = ⌊(T/K²)^{ν/3}⌋`, `b = ⌊(T/K²)^{1/2 − ν/2}⌋`.
pub fn stem_tradeoff(nu: f64, total_iters: u64, workers: u64) -> Result<TradeoffChoice> {
    tradeoff(nu, total_iters, workers, 2, |base, nu| {
        (base.powf(nu / 3.0), base.powf(0.5 - nu / 2.0))
    })
}

/// FedAvg trade-off map: `I = ⌊(T/K³)^{ν/4}⌋`, `b = ⌊(T/K³)^{1/3 − ν/3}⌋`.
pub fn fedavg_tradeoff(nu: f64, total_iters: u64, workers: u64) -> Result<TradeoffChoice> {
    tradeoff(nu, total_iters, workers, 3, |base, nu| {
        (base.powf(nu / 4.0), base.powf(1.0 / 3.0 - nu / 3.0))
    })
}

fn tradeoff(
    nu: f64,
    total_iters: u64,
    workers: u64,
    k_power: u32,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> Result<TradeoffChoice> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Config(format!("nu must lie in [0, 1], got {nu}")));
    }
    if total_iters == 0 || workers == 0 {
        return Err(Error::Config("T and K must be positive".into()));
    }
    let k_pow = (workers as f64).powi(k_power as i32);
    let base = total_iters as f64 / k_pow;
    if base < 1.0 {
        return Ok(TradeoffChoice {
            local_updates: 1,
            batch: 1,
            clamped: true,
        });
    }
    let (i_raw, b_raw) = map(base, nu);
    Ok(TradeoffChoice {
        local_updates: (i_raw.floor() as u64).max(1),
        batch: (b_raw.floor() as u64).max(1),
        clamped: false,
    })
}

/// FedAvg's constant step size η = √(bK/T).
pub fn fedavg_eta(batch: u64, workers: u64, total_iters: u64) -> f64 {
    ((batch * workers) as f64 / total_iters as f64).sqrt()
}

/// Horizon floor `81 L² I² b K` below which the FedAvg guarantee does not
/// apply; callers may warn when T falls short.
pub fn fedavg_min_horizon(l_smooth: f64, local_updates: u64, batch: u64, workers: u64) -> f64 {
    81.0 * l_smooth * l_smooth * (local_updates * local_updates * batch * workers) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use proptest::prelude::*;

    fn unit_schedule() -> ScheduleState {
        theoretical_schedule(1.0, 1.0, 1, 1, 1, 4096).unwrap()
    }

    #[test]
    fn unit_inputs_anchor_values() {
        let s = unit_schedule();
        assert!((s.kappa_bar - 1.0).abs() < 1e-15);
        assert!((s.c - (64.0 + 1.0 / 24.0)).abs() < 1e-12);
        assert_eq!(s.init_batch, 1);

        // w₁ = max{2, 4095, c³/4096} = 4095, so η₁ = 1/16 exactly.
        assert_eq!(s.weight_at(1), 4095.0);
        assert_eq!(s.eta_at(1), 1.0 / 16.0);
        assert_eq!(s.eta_at(1), s.eta_cap());

        // At t = 4096 the middle envelope term hits zero.
        let w = s.weight_at(4096);
        let third = s.c.powi(3) / 4096.0;
        assert!((w - third).abs() < 1e-9, "w = {w}, third = {third}");
        assert!((third - 64.13).abs() < 0.01);

        // a₂ = c·η₁² ≈ 0.25016.
        let a2 = s.momentum_at(1);
        assert!((a2 - (64.0 + 1.0 / 24.0) / 256.0).abs() < 1e-12);
        assert!((a2 - 0.25016).abs() < 1e-4);
    }

    #[test]
    fn kappa_scales_as_two_thirds_power_of_batch() {
        let s1 = theoretical_schedule(0.7, 2.0, 3, 5, 2, 64).unwrap();
        let s4 = theoretical_schedule(0.7, 2.0, 12, 5, 2, 64).unwrap();
        let ratio = s4.kappa_bar / s1.kappa_bar;
        assert!((ratio - 4.0f64.powf(2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn sigma_zero_is_degenerate() {
        assert!(matches!(
            theoretical_schedule(0.0, 1.0, 1, 1, 1, 16),
            Err(Error::DegenerateSchedule(_))
        ));
    }

    #[test]
    fn t_not_multiple_of_i_is_config_error() {
        assert!(matches!(
            theoretical_schedule(1.0, 1.0, 1, 1, 3, 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn theoretical_bounds_over_random_grid() {
        let mut rng = DetRng::from_key(99, 0x67726964, 0, 0);
        for _ in 0..1000 {
            let sigma = rng.uniform_in(0.05, 5.0);
            let l = rng.uniform_in(0.1, 8.0);
            let b = rng.index(32) as u64 + 1;
            let k = rng.index(16) as u64 + 1;
            let i = rng.index(12) as u64 + 1;
            let t = i * (rng.index(64) as u64 + 1);
            let s = theoretical_schedule(sigma, l, b, k, i, t).unwrap();

            assert!(s.c <= 128.0 * l * l / ((b * k) as f64) * (1.0 + 1e-12));

            let cap = s.eta_cap();
            let mut prev_eta = f64::INFINITY;
            let mut prev_w = f64::INFINITY;
            for t_probe in 0..=t {
                let eta = s.eta_at(t_probe);
                let w = s.weight_at(t_probe);
                assert!(eta <= cap * (1.0 + 1e-12), "eta cap violated");
                assert!(eta <= prev_eta * (1.0 + 1e-12), "eta not nonincreasing");
                assert!(w <= prev_w * (1.0 + 1e-12), "w not nonincreasing");
                assert!(
                    s.raw_momentum_at(t_probe) <= 0.5 + 1e-12,
                    "raw momentum too big"
                );
                let a = s.momentum_at(t_probe);
                assert!(a > 0.0 && a <= 1.0);
                prev_eta = eta;
                prev_w = w;
            }
        }
    }

    #[test]
    fn practical_mode_values() {
        let s = practical_schedule(0.1, 2.0, 4, 2, 2, 8, 1).unwrap();
        assert_eq!(s.weight_at(0), 1.0);
        assert_eq!(s.weight_at(1000), 1.0);
        assert_eq!(s.eta_at(0), 0.1);
        assert!((s.c - 2.0 / 0.01).abs() < 1e-12);
        // a₁ = min(1, c·η₀²) = min(1, c̄) = 1 here.
        assert_eq!(s.momentum_at(0), 1.0);
        // Momentum decays like c̄/(1+t)^{2/3} once below the clamp.
        let a = s.momentum_at(7);
        assert!((a - 2.0 / 8.0f64.powf(2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn practical_epoch_len_steps_eta_in_plateaus() {
        let s = practical_schedule(0.2, 1.0, 1, 1, 1, 12, 4).unwrap();
        assert_eq!(s.eta_at(0), s.eta_at(3));
        assert!(s.eta_at(4) < s.eta_at(3));
        assert_eq!(s.eta_at(4), s.eta_at(7));
    }

    #[test]
    fn forced_momentum_overrides_law() {
        let s = unit_schedule().with_a_override(1.0);
        assert_eq!(s.momentum_at(1), 1.0);
        assert_eq!(s.momentum_at(1000), 1.0);
    }

    #[test]
    fn stem_tradeoff_examples() {
        let lo = stem_tradeoff(0.0, 4096, 4).unwrap();
        assert_eq!((lo.local_updates, lo.batch), (1, 16));
        let hi = stem_tradeoff(1.0, 4096, 4).unwrap();
        assert_eq!((hi.local_updates, hi.batch), (6, 1));
        // T = K²: base 1, every ν gives (1, 1).
        for nu in [0.0, 0.3, 1.0] {
            let c = stem_tradeoff(nu, 16, 4).unwrap();
            assert_eq!((c.local_updates, c.batch), (1, 1));
            assert!(!c.clamped);
        }
        // T below K² clamps with a warning flag.
        let c = stem_tradeoff(0.5, 10, 4).unwrap();
        assert!(c.clamped);
    }

    #[test]
    fn fedavg_tradeoff_examples() {
        let hi = fedavg_tradeoff(1.0, 6561, 3).unwrap();
        assert_eq!((hi.local_updates, hi.batch), (3, 1));
        let lo = fedavg_tradeoff(0.0, 6561, 3).unwrap();
        assert_eq!((lo.local_updates, lo.batch), (1, 6));
        assert!(fedavg_tradeoff(0.5, 8, 3).unwrap().clamped);
    }

    #[test]
    fn fedavg_eta_value() {
        assert!((fedavg_eta(1, 1, 100) - 0.1).abs() < 1e-15);
        assert!((fedavg_eta(4, 8, 8192) - (32.0f64 / 8192.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stem_tradeoff_product_shrinks_with_nu() {
        // b·I ≤ (T/K²)^{1/2} at ν = 0 and b decreases as ν grows.
        for (t, k) in [(4096u64, 4u64), (65536, 8), (1 << 20, 16)] {
            let base = t as f64 / (k * k) as f64;
            let mut prev_b = u64::MAX;
            for step in 0..=10 {
                let nu = step as f64 / 10.0;
                let c = stem_tradeoff(nu, t, k).unwrap();
                assert!(c.batch <= prev_b, "b must not grow with nu");
                prev_b = c.batch;
                if step == 0 {
                    assert!((c.batch * c.local_updates) as f64 <= base.sqrt() + 1e-9);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn eta_monotone_under_random_inputs(
            sigma in 0.01f64..10.0,
            l in 0.05f64..10.0,
            b in 1u64..64,
            k in 1u64..32,
            i in 1u64..16,
            s_rounds in 1u64..64,
        ) {
            let t = i * s_rounds;
            let s = theoretical_schedule(sigma, l, b, k, i, t).unwrap();
            let mut prev = f64::INFINITY;
            for tp in 0..=t.min(200) {
                let eta = s.eta_at(tp);
                prop_assert!(eta > 0.0);
                prop_assert!(eta <= prev * (1.0 + 1e-12));
                prev = eta;
            }
        }
    }
}
