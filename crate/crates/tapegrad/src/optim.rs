//! AdamW with per-group learning rates and an optional EMA shadow.

use crate::tensor::Tensor;

/// Decoupled weight decay Adam (Loshchilov & Hutter).
#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Shadow decay rate; `None` disables the EMA entirely.
    pub ema_decay: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, ema_decay: None }
    }
}

/// One learning-rate group. `warmup_steps > 0` ramps the rate linearly from
/// zero over that many steps, then holds it constant.
#[derive(Clone, Debug)]
pub struct LrGroup {
    pub lr: f64,
    pub warmup_steps: usize,
}

impl LrGroup {
    pub fn constant(lr: f64) -> Self {
        LrGroup { lr, warmup_steps: 0 }
    }

    fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step as f64 + 1.0) / self.warmup_steps as f64).min(1.0)
        }
    }
}

struct Slot {
    name: String,
    param: Tensor,
    group: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    shadow: Option<Vec<f64>>,
}

/// Optimizer state: first/second moment buffers per parameter, a step
/// counter, the learning-rate groups, and the optional EMA shadow.
pub struct AdamW {
    cfg: AdamWConfig,
    groups: Vec<LrGroup>,
    slots: Vec<Slot>,
    step: usize,
}

impl AdamW {
    /// `params` pairs each named parameter with the index of its rate group.
    /// Every parameter must carry a gradient buffer.
    pub fn new(cfg: AdamWConfig, groups: Vec<LrGroup>, params: &[(String, Tensor, usize)]) -> AdamW {
        assert!(!groups.is_empty(), "optimizer: no learning-rate groups");
        let slots = params
            .iter()
            .map(|(name, t, group)| {
                assert!(
                    t.requires_grad(),
                    "optimizer: parameter `{name}` has no gradient buffer"
                );
                assert!(*group < groups.len(), "optimizer: parameter `{name}` references group {group}");
                let n = t.numel();
                let (ema_on, data) = (cfg.ema_decay.is_some(), t.data());
                Slot {
                    name: name.clone(),
                    param: t.clone(),
                    group: *group,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    shadow: if ema_on { Some(data) } else { None },
                }
            })
            .collect();
        AdamW { cfg, groups, slots, step: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update from the gradients currently held by the parameters.
    pub fn step(&mut self) {
        let t = self.step;
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for slot in &mut self.slots {
            let lr = self.groups[slot.group].rate_at(t);
            let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay);
            let grad = slot
                .param
                .grad()
                .unwrap_or_else(|| panic!("optimizer: parameter `{}` is missing its gradient", slot.name));
            let (m, v) = (&mut slot.m, &mut slot.v);
            slot.param.modify_data(|p| {
                for i in 0..p.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
                }
            });
            if let Some(shadow) = slot.shadow.as_mut() {
                let decay = self.cfg.ema_decay.unwrap();
                slot.param.with_data(|p| {
                    for (s, pi) in shadow.iter_mut().zip(p) {
                        *s = decay * *s + (1.0 - decay) * pi;
                    }
                });
            }
        }
    }

    pub fn ema_enabled(&self) -> bool {
        self.cfg.ema_decay.is_some()
    }

    pub fn ema_shadow(&self, name: &str) -> Option<&[f64]> {
        self.slots.iter().find(|s| s.name == name).and_then(|s| s.shadow.as_deref())
    }

    /// Swap each parameter's live value with its EMA shadow (call twice to
    /// restore). Used to evaluate the averaged weights.
    pub fn swap_ema(&mut self) {
        assert!(self.ema_enabled(), "swap_ema: EMA is not enabled");
        for slot in &mut self.slots {
            let shadow = slot.shadow.as_mut().unwrap();
            slot.param.modify_data(|p| {
                for (pi, si) in p.iter_mut().zip(shadow.iter_mut()) {
                    std::mem::swap(pi, si);
                }
            });
        }
    }

    /// Serialize the moment buffers for checkpointing.
    pub fn export_state(&self) -> OptimizerState {
        OptimizerState {
            step: self.step,
            moments: self
                .slots
                .iter()
                .map(|s| (s.name.clone(), s.m.clone(), s.v.clone(), s.shadow.clone()))
                .collect(),
        }
    }

    pub fn import_state(&mut self, state: OptimizerState) {
        self.step = state.step;
        for (name, m, v, shadow) in state.moments {
            let slot = self
                .slots
                .iter_mut()
                .find(|s| s.name == name)
                .unwrap_or_else(|| panic!("optimizer state: unknown parameter `{name}`"));
            assert_eq!(slot.m.len(), m.len(), "optimizer state: moment size mismatch for `{name}`");
            slot.m = m;
            slot.v = v;
            slot.shadow = shadow;
        }
    }
}

/// Per-parameter persisted state: name, first moment, second moment, EMA shadow.
pub type MomentEntry = (String, Vec<f64>, Vec<f64>, Option<Vec<f64>>);

/// Plain-data snapshot of optimizer state for persistence.
pub struct OptimizerState {
    pub step: usize,
    pub moments: Vec<MomentEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn single_param(v: f64) -> (std::rc::Rc<Tape>, Tensor) {
        let tape = Tape::new();
        let p = tape.param(&[1], vec![v]);
        (tape, p)
    }

    #[test]
    fn zero_grads_and_zero_decay_leave_params_unchanged() {
        let (_tape, p) = single_param(1.25);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, vec![LrGroup::constant(0.1)], &[("p".into(), p.clone(), 0)]);
        opt.step();
        opt.step();
        assert_eq!(p.data(), vec![1.25]);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn single_step_matches_hand_computed_update() {
        let (_tape, p) = single_param(1.0);
        p.modify_grad(|g| g[0] = 0.5);
        let cfg = AdamWConfig { weight_decay: 0.01, ..Default::default() };
        let mut opt = AdamW::new(cfg, vec![LrGroup::constant(0.1)], &[("p".into(), p.clone(), 0)]);
        opt.step();

        // Decoupled-decay update, evaluated independently.
        let g = 0.5;
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9f64);
        let v_hat = v / (1.0 - 0.999f64);
        let want = 1.0 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.01 * 1.0);
        assert!((p.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn ema_is_a_convex_combination() {
        // Param driven 0 -> 1 in one exact step; decay 0.5 gives shadow 0.5.
        let (_tape, p) = single_param(0.0);
        p.modify_grad(|g| g[0] = -1.0);
        let cfg = AdamWConfig { weight_decay: 0.0, eps: 0.0, ema_decay: Some(0.5), ..Default::default() };
        let mut opt = AdamW::new(cfg, vec![LrGroup::constant(1.0)], &[("p".into(), p.clone(), 0)]);
        opt.step();
        assert_eq!(p.data(), vec![1.0]);
        assert_eq!(opt.ema_shadow("p").unwrap(), &[0.5]);

        opt.swap_ema();
        assert_eq!(p.data(), vec![0.5]);
        opt.swap_ema();
        assert_eq!(p.data(), vec![1.0]);
    }

    #[test]
    #[should_panic(expected = "no gradient buffer")]
    fn missing_grad_names_the_parameter() {
        let tape = Tape::new();
        let c = tape.constant(&[1], vec![1.0]);
        let _ = AdamW::new(AdamWConfig::default(), vec![LrGroup::constant(0.1)], &[("frozen.w".into(), c, 0)]);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let g = LrGroup { lr: 1.0, warmup_steps: 4 };
        assert_eq!(g.rate_at(0), 0.25);
        assert_eq!(g.rate_at(1), 0.5);
        assert_eq!(g.rate_at(3), 1.0);
        assert_eq!(g.rate_at(100), 1.0);
    }

    #[test]
    fn moment_buffers_round_trip_through_state() {
        let (_tape, p) = single_param(2.0);
        p.modify_grad(|g| g[0] = 0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), vec![LrGroup::constant(0.05)], &[("p".into(), p.clone(), 0)]);
        opt.step();
        let state = opt.export_state();
        assert_eq!(state.step, 1);

        let (_tape2, q) = single_param(2.0);
        let mut opt2 = AdamW::new(AdamWConfig::default(), vec![LrGroup::constant(0.05)], &[("p".into(), q, 0)]);
        opt2.import_state(state);
        assert_eq!(opt2.step_count(), 1);
        assert_eq!(opt2.export_state().moments[0].1, opt.export_state().moments[0].1);
    }
}
