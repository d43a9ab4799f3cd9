use cmg::env::{Action, Task, TaskConfig};
use cmg::oracle::PreferenceLabel;
use cmg::planner::{evaluate_policy, PlanningPolicy, RewardSource, DEFAULT_GAMMA};
use cmg::reward::{
    step_input, BayesianRewardNet, FeatureTable, PreferencePair, Provenance, TrainConfig,
    Trainer, DEFAULT_PRIOR_SIGMA,
};
use cmg::rollouts::{generate_dataset, ScriptedPolicy};
use cmg::seeding::{stream_rng, stream_seed, Stream};

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let temp: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let batch: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let tc = TaskConfig::new(Task::Empty);
    let mut pol = ScriptedPolicy::standard_trio(&tc);
    let ds = generate_dataset(&tc, &mut pol, 60, 0).unwrap();
    let features = FeatureTable::build(&ds);
    // Idealized chain: every pair labeled by true return (what a perfect
    // ranking would derive).
    let mut pairs = Vec::new();
    for i in 0..ds.rollouts.len() {
        for j in (i + 1)..ds.rollouts.len() {
            let (a, b) = (&ds.rollouts[i], &ds.rollouts[j]);
            let label = if (a.gt_return - b.gt_return).abs() < 1e-9 {
                PreferenceLabel::Equal
            } else if a.gt_return > b.gt_return {
                PreferenceLabel::FirstPreferred
            } else {
                PreferenceLabel::SecondPreferred
            };
            pairs.push(PreferencePair::new(a.id, b.id, label, Provenance::Derived));
        }
    }
    println!("perfect pairs: {}", pairs.len());
    let layout = BayesianRewardNet::task_layout(tc.observation_dim());
    let net = BayesianRewardNet::init(&layout, DEFAULT_PRIOR_SIGMA, stream_seed(0, Stream::NetInit, 0)).unwrap();
    let mut trainer = Trainer::new(net, TrainConfig { learning_rate: lr, temperature: temp, batch_size: batch, ..TrainConfig::default() });
    let mut trng = stream_rng(0, Stream::NetSample, 1);
    for e in 0..20 {
        let loss = trainer.train_epoch(&pairs, &features, &mut trng).unwrap();
        if e == 0 || e == 19 { println!("epoch {e}: loss {loss:.3}"); }
    }
    let mean_w = trainer.net.mean_weights();
    let reward = |obs: &Vec<f64>, action: Action| {
        trainer.net.forward(&mean_w, &step_input(obs, action)).unwrap()
    };
    let mut lp = PlanningPolicy::new(tc.clone(), RewardSource::Learned(&reward), DEFAULT_GAMMA);
    let lrep = evaluate_policy(&mut |s| lp.act(s), &tc, 20, 100, 10.0, stream_seed(0, Stream::Evaluation, 0)).unwrap();
    println!("perfect-chain planning: return {:.2} ± {:.2}", lrep.mean_return, lrep.std_return);
}
