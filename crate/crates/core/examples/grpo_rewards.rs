//! Turn-aware rewards, group advantages and the clipped surrogate.

use deepresearch::reward::{
    compute_reward, difficulty_omega, group_accuracy, grpo_surrogate, mean_successful_turns, normalize_advantages,
    PolicyLogProbs, RewardConfig, Verdict,
};
use deepresearch::trajectory::LossMask;

fn main() -> anyhow::Result<()> {
    let cfg = RewardConfig::default();
    // (correct, tool turns) for a group of eight.
    let group = [(true, 2), (true, 3), (true, 9), (false, 1), (true, 4), (false, 6), (true, 2), (true, 12)];
    let mut verdicts: Vec<Verdict> = group
        .iter()
        .map(|&(a, n)| Verdict { format_ok: true, accurate: a, within_budget: true, turns: n })
        .collect();
    let n_bar = mean_successful_turns(&verdicts);
    for v in &mut verdicts {
        v.within_budget = n_bar.is_none_or(|m| f64::from(v.turns) <= m);
    }
    let acc = group_accuracy(&verdicts);
    let omega = difficulty_omega(acc, &cfg);
    println!("accuracy {acc:.3}, omega {omega:.4}, mean successful turns {:.3}", n_bar.unwrap_or(0.0));

    let rewards: Vec<f64> = verdicts.iter().map(|v| compute_reward(v, n_bar, omega, &cfg)).collect::<Result<_, _>>()?;
    let adv = normalize_advantages(&rewards, &cfg)?;
    for ((v, r), a) in verdicts.iter().zip(&rewards).zip(&adv) {
        println!("N_i {:>2}  correct {:<5}  reward {r:.4}  advantage {a:+.4}", v.turns, v.accurate);
    }

    let lp: Vec<PolicyLogProbs> = adv
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let old = vec![-1.0; 6];
            let new = old.iter().map(|o| o + 0.05 * (i as f64 - 3.5)).collect();
            PolicyLogProbs { new, old, mask: LossMask(vec![0, 1, 1, 0, 1, 1]) }
        })
        .collect();
    println!("surrogate {:.6}", grpo_surrogate(&lp, &adv, &cfg)?);
    Ok(())
}
