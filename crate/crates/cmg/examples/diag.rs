use cmg::env::{Action, Task, TaskConfig};
use cmg::oracle::Oracle;
use cmg::planner::{evaluate_policy, PlanningPolicy, RewardSource, DEFAULT_GAMMA};
use cmg::reward::{
    step_input, BayesianRewardNet, FeatureTable, PreferencePair, Provenance, TrainConfig,
    Trainer, DEFAULT_PRIOR_SIGMA,
};
use cmg::rollouts::{generate_dataset, sample_initial_pairs, ScriptedPolicy};
use cmg::seeding::{stream_rng, stream_seed, Stream};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
    cov / (va.sqrt() * vb.sqrt())
}

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let temp: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let tc = TaskConfig::new(Task::Empty);
    let mut pol = ScriptedPolicy::standard_trio(&tc);
    let ds = generate_dataset(&tc, &mut pol, 60, 0).unwrap();
    let features = FeatureTable::build(&ds);
    let layout = BayesianRewardNet::task_layout(tc.observation_dim());
    let net = BayesianRewardNet::init(&layout, DEFAULT_PRIOR_SIGMA, stream_seed(0, Stream::NetInit, 0)).unwrap();
    let train_cfg = TrainConfig { learning_rate: lr, temperature: temp, ..TrainConfig::default() };
    println!("train cfg: lr {} temp {} kl_w {} batch {}", train_cfg.learning_rate, train_cfg.temperature, train_cfg.kl_weight, train_cfg.batch_size);
    let mut trainer = Trainer::new(net, train_cfg);
    let mut oracle = Oracle::new(5.0);
    let mut orng = stream_rng(0, Stream::Oracle, 0);
    let mut trng = stream_rng(0, Stream::NetSample, 1);
    let mut pairs = Vec::new();
    for (a, b) in sample_initial_pairs(&ds, 300, 0).unwrap() {
        let l = oracle.compare(ds.rollout(a).unwrap(), ds.rollout(b).unwrap(), &mut orng);
        pairs.push(PreferencePair::new(a, b, l, Provenance::Initial));
    }
    for e in 0..20 {
        let loss = trainer.train_epoch(&pairs, &features, &mut trng).unwrap();
        if e % 5 == 0 || e == 19 { println!("epoch {e}: loss {loss:.3}"); }
    }
    let mean_w = trainer.net.mean_weights();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for r in &ds.rollouts {
        let steps = features.steps(r.id).unwrap();
        let total: f64 = steps.iter().map(|x| trainer.net.forward(&mean_w, x).unwrap()).sum();
        pred.push(total);
        gt.push(r.gt_return);
    }
    println!("return corr(pred, gt) = {:.4}", corr(&pred, &gt));
    println!("gt returns:   min {:.1} max {:.1}", gt.iter().cloned().fold(f64::MAX, f64::min), gt.iter().cloned().fold(f64::MIN, f64::max));
    println!("pred returns: min {:.2} max {:.2}", pred.iter().cloned().fold(f64::MAX, f64::min), pred.iter().cloned().fold(f64::MIN, f64::max));

    // How concordant are pairwise orderings?
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..ds.rollouts.len() {
        for j in (i + 1)..ds.rollouts.len() {
            if (gt[i] - gt[j]).abs() < 1e-9 { continue; }
            total += 1;
            if (pred[i] - pred[j]) * (gt[i] - gt[j]) > 0.0 { agree += 1; }
        }
    }
    println!("pairwise order agreement: {agree}/{total} = {:.3}", agree as f64 / total as f64);

    let reward = |obs: &Vec<f64>, action: Action| {
        trainer.net.forward(&mean_w, &step_input(obs, action)).unwrap()
    };
    let mut lp = PlanningPolicy::new(tc.clone(), RewardSource::Learned(&reward), DEFAULT_GAMMA);
    let lrep = evaluate_policy(&mut |s| lp.act(s), &tc, 20, 100, 10.0, stream_seed(0, Stream::Evaluation, 0)).unwrap();
    println!("learned-reward planning: return {:.2} ± {:.2}", lrep.mean_return, lrep.std_return);
    let mut gp = PlanningPolicy::new(tc.clone(), RewardSource::GroundTruth, DEFAULT_GAMMA);
    let grep = evaluate_policy(&mut |s| gp.act(s), &tc, 20, 100, 10.0, stream_seed(0, Stream::Evaluation, 0)).unwrap();
    println!("ground-truth planning:   return {:.2} ± {:.2}", grep.mean_return, grep.std_return);
}
