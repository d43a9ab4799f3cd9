use cmg::env::{build_observation, Action, Env, Task, TaskConfig};
use cmg::oracle::PreferenceLabel;
use cmg::reward::{
    step_input, BayesianRewardNet, FeatureTable, PreferencePair, Provenance, TrainConfig,
    Trainer, DEFAULT_PRIOR_SIGMA,
};
use cmg::rollouts::{generate_dataset, ScriptedPolicy};
use cmg::seeding::{stream_rng, stream_seed, Stream};

fn main() {
    let tc = TaskConfig::new(Task::Empty);
    let mut pol = ScriptedPolicy::standard_trio(&tc);
    let ds = generate_dataset(&tc, &mut pol, 60, 0).unwrap();
    let features = FeatureTable::build(&ds);
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
    let layout = BayesianRewardNet::task_layout(tc.observation_dim());
    let net = BayesianRewardNet::init(&layout, DEFAULT_PRIOR_SIGMA, stream_seed(0, Stream::NetInit, 0)).unwrap();
    let mut trainer = Trainer::new(net, TrainConfig { learning_rate: 0.01, temperature: 1.0, batch_size: 8, ..TrainConfig::default() });
    let mut trng = stream_rng(0, Stream::NetSample, 1);
    for _ in 0..20 { trainer.train_epoch(&pairs, &features, &mut trng).unwrap(); }
    let w = trainer.net.mean_weights();

    // Fresh episode: goal somewhere; print reward of Forward per cell at
    // ripple 0, and the ripple slope at the agent's start.
    let mut env = Env::new(tc.clone()).unwrap();
    env.reset(12345);
    let goal = match env.state().goal_spec { cmg::env::GoalSpec::Cell(p) => p, _ => unreachable!() };
    println!("goal at {goal:?}");
    let base = env.state().clone();
    for ripple in [0.0, 1.0] {
        println!("-- ripple {ripple}: reward(Forward) by cell (rows = y)");
        for y in 1..tc.grid_size - 1 {
            let mut row = String::new();
            for x in 1..tc.grid_size - 1 {
                let mut s = base.clone();
                s.agent_pos = (x, y);
                s.ripple = Some(ripple);
                let obs = build_observation(&tc, &s);
                let r = trainer.net.forward(&w, &step_input(&obs, Action::Forward)).unwrap();
                row.push_str(&format!("{r:7.3}"));
            }
            println!("{row}");
        }
    }
}
