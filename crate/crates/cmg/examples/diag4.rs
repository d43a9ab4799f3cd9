//! Dataset composition probe: per-source return and calm statistics.
use cmg::env::{Task, TaskConfig};
use cmg::rollouts::{generate_dataset, ripple_goal_association, ScriptedPolicy};

fn main() {
    let config = TaskConfig::new(Task::Empty);
    let mut policies = ScriptedPolicy::standard_trio(&config);
    let ds = generate_dataset(&config, &mut policies, 60, 0).unwrap();
    println!("n={} lows={}", ds.len(), ds.low_return_count());
    for r in &ds.rollouts {
        let calm_frac = r
            .steps
            .iter()
            .filter(|(s, _, _)| s.ripple.unwrap_or(1.0) <= 0.1)
            .count() as f64
            / r.steps.len() as f64;
        println!("id={:2} src={:?} ret={:4.1} calm={:.2}", r.id, r.source_policy, r.gt_return, calm_frac);
    }
    let q = ripple_goal_association(&ds.rollouts);
    println!("pooled q={q:?}");
}
