//! Adam over the trainable LSTM weights and the plateau learning-rate rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LstmWeights;

pub const DEFAULT_LR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: LstmWeights,
    pub v: LstmWeights,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(hidden: usize, lr: f64) -> Self {
        Self {
            m: LstmWeights::zeros(hidden),
            v: LstmWeights::zeros(hidden),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Takes [`LstmWeights`] rather than the full parameter set, so the frozen
/// embedding cannot be reached from here.
pub fn adam_step(params: &mut LstmWeights, grads: &LstmWeights, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Shape("adam_step: parameter, gradient and moment shapes differ".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Halve the learning rate after `patience` consecutive epochs without a
/// strict improvement in validation loss. The counter restarts after each
/// halving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best_val_loss: Option<f64>,
    pub epochs_since_improvement: u32,
    pub halvings: u32,
    pub patience: u32,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best_val_loss: None,
            epochs_since_improvement: 0,
            halvings: 0,
            patience: 3,
        }
    }
}

impl PlateauState {
    /// Feed one epoch's validation loss; returns the learning rate to use next.
    pub fn update(&mut self, val_loss: f64, lr: f64) -> f64 {
        let improved = match self.best_val_loss {
            None => true,
            Some(best) => val_loss < best,
        };
        if improved {
            self.best_val_loss = Some(val_loss);
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.epochs_since_improvement = 0;
            self.halvings += 1;
            return lr * 0.5;
        }
        lr
    }
}

/// Free-function form of [`PlateauState::update`].
pub fn plateau_update(state: &mut PlateauState, val_loss: f64, lr: f64) -> f64 {
    state.update(val_loss, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_weights(x: f64) -> LstmWeights {
        let mut w = LstmWeights::zeros(1);
        w.b[0] = x;
        w
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar_weights(0.5);
        p.w_x.set(2, 0, -1.0);
        let before = p.clone();
        let mut st = AdamState::new(1, DEFAULT_LR);
        adam_step(&mut p, &LstmWeights::zeros(1), &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m, LstmWeights::zeros(1));
        assert_eq!(st.v, LstmWeights::zeros(1));
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 250.0] {
            let mut p = scalar_weights(1.0);
            let mut st = AdamState::new(1, DEFAULT_LR);
            adam_step(&mut p, &scalar_weights(g), &mut st).unwrap();
            let moved = p.b[0] - 1.0;
            assert!((moved + DEFAULT_LR * g.signum()).abs() < 1e-8, "g={g} moved {moved}");
        }
    }

    #[test]
    fn three_step_scalar_trace() {
        // Recurrence written out by hand for gradients 1.0, -2.0, 0.5.
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.001f64, 1e-8f64);
        let grads = [1.0, -2.0, 0.5];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        let mut expected = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let t = (k + 1) as i32;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            expected.push(x);
        }

        let mut p = scalar_weights(0.3);
        let mut st = AdamState::new(1, lr);
        for (g, e) in grads.iter().zip(expected) {
            adam_step(&mut p, &scalar_weights(*g), &mut st).unwrap();
            assert!((p.b[0] - e).abs() < 1e-12);
        }
        assert!(st.v.b.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = LstmWeights::zeros(2);
        let mut st = AdamState::new(2, DEFAULT_LR);
        assert!(adam_step(&mut p, &LstmWeights::zeros(3), &mut st).is_err());
    }

    #[test]
    fn flat_losses_halve_once_after_three_epochs() {
        let mut st = PlateauState::default();
        let mut lr = DEFAULT_LR;
        let mut trace = Vec::new();
        for loss in [1.0, 1.0, 1.0, 1.0] {
            lr = plateau_update(&mut st, loss, lr);
            trace.push(lr);
        }
        assert_eq!(trace, vec![0.001, 0.001, 0.001, 0.0005]);
        assert_eq!(st.halvings, 1);
    }

    #[test]
    fn decreasing_losses_never_halve() {
        let mut st = PlateauState::default();
        let mut lr = DEFAULT_LR;
        for k in 0..50 {
            lr = st.update(1.0 / (k + 1) as f64, lr);
        }
        assert_eq!(lr, DEFAULT_LR);
        assert_eq!(st.halvings, 0);
    }

    #[test]
    fn halving_then_reset_on_improvement() {
        let mut st = PlateauState::default();
        let mut lr = DEFAULT_LR;
        let mut lrs = Vec::new();
        for loss in [1.0, 0.9, 1.0, 1.0, 1.0, 0.8] {
            lr = st.update(loss, lr);
            lrs.push(lr);
        }
        assert_eq!(lrs, vec![0.001, 0.001, 0.001, 0.001, 0.0005, 0.0005]);
        assert_eq!(st.halvings, 1);
        assert_eq!(st.epochs_since_improvement, 0);
        assert_eq!(st.best_val_loss, Some(0.8));
    }

    #[test]
    fn counter_restarts_after_halving() {
        let mut st = PlateauState::default();
        let mut lr = DEFAULT_LR;
        let mut lrs = Vec::new();
        for _ in 0..7 {
            lr = st.update(1.0, lr);
            lrs.push(lr);
        }
        assert_eq!(lrs, vec![0.001, 0.001, 0.001, 0.0005, 0.0005, 0.0005, 0.00025]);
        assert_eq!(lr, DEFAULT_LR / 2f64.powi(st.halvings as i32));
    }
}
