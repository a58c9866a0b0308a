use crate::error::{Error, Result};

/// Generalized advantage estimates for one finished episode, computed by the
/// backward recursion `Â_i = δ_i + γλ Â_{i+1}` with
/// `δ_i = r_i + γ V(s_{i+1}) - V(s_i)` and `V(s_T) = 0`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("episode has no steps".into()));
    }
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut next_adv = 0.0;
    for i in (0..t).rev() {
        let next_value = if i + 1 < t { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + gamma * next_value - values[i];
        next_adv = delta + gamma * lambda * next_adv;
        adv[i] = next_adv;
    }
    Ok(adv)
}

/// Discounted return-to-go `Σ_{j≥i} γ^{j-i} r_j`, the value-function target.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}
