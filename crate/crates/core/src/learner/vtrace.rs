//! V-trace targets with both truncation levels fixed at 1.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VTrace {
    /// `v_s`, the value targets.
    pub values: Vec<f64>,
    /// `ρ_s (r_s + γ v_{s+1} − V_s)`.
    pub advantages: Vec<f64>,
}

pub fn vtrace_targets(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    behavior_logp: &[f64],
    target_logp: &[f64],
    discount: f64,
) -> Result<VTrace> {
    let n = rewards.len();
    if values.len() != n || behavior_logp.len() != n || target_logp.len() != n {
        return Err(Error::arg(format!(
            "v-trace inputs differ in length: rewards {n}, values {}, behavior {}, target {}",
            values.len(),
            behavior_logp.len(),
            target_logp.len()
        )));
    }
    let ratios: Vec<f64> = target_logp.iter().zip(behavior_logp).map(|(t, b)| (t - b).exp().min(1.0)).collect();
    let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap_value };

    let mut vs = vec![0.0; n];
    // v_s − V_s = δ_s + γ c_s (v_{s+1} − V_{s+1}), zero past the end.
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let delta = ratios[t] * (rewards[t] + discount * next_value(t) - values[t]);
        carry = delta + discount * ratios[t] * carry;
        vs[t] = values[t] + carry;
    }
    let advantages = (0..n)
        .map(|t| {
            let v_next = if t + 1 < n { vs[t + 1] } else { bootstrap_value };
            ratios[t] * (rewards[t] + discount * v_next - values[t])
        })
        .collect();
    Ok(VTrace { values: vs, advantages })
}
