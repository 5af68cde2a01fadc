// Throwaway diagnostic: dissect SCS vs baseline dynamics per task.

use scs_core::*;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.env.signal_scale = 2.0;
    cfg.env.obs_clutter = 0.3;
    cfg.env.evidence_density = 0.7;
    cfg.policy.evidence_gain = 1.0;
    cfg.sampler.sigma_max = 0.5;
    cfg.trainer.learning_rate = 0.2;
    cfg.trainer.samples_per_prompt = Some(8);
    cfg.trainer.total_steps = 400;
    cfg.trainer.seed = 0;
    cfg.resolve();

    let task_set = TaskSet::generate(&cfg.env, cfg.trainer.seed).unwrap();
    let cap = cfg.env.enumeration_cap;

    // Per-task spike pattern and structure.
    for (i, task) in task_set.tasks.iter().enumerate() {
        let tree = &task.tree;
        let spikes: Vec<bool> = (0..tree.depth)
            .map(|t| {
                let node = tree.node_at(&tree.faithful_path[..t]);
                task.observation[node * tree.branching + tree.faithful_path[t]] > 1.0
            })
            .collect();
        let n_correct_leaves =
            tree.leaf_option_map.iter().filter(|&&o| o == task.correct_option).count();
        println!("task {i:2}: spikes {spikes:?} correct_leaves {n_correct_leaves}");
    }

    for scs in [true, false] {
        let mut c = cfg.clone();
        c.trainer.scs_enabled = scs;
        let policy0 = init_policy(&c.env, &c.policy, c.trainer.seed).unwrap();
        println!("\n=== scs={scs} ===");

        // Instrument r_con by faithfulness class on the initial policy.
        if scs {
            let root = RngStream::from_seed(999);
            let mut stats = [(0.0, 0usize); 3]; // faithful, lucky, wrong
            for (ti, task) in task_set.tasks.iter().enumerate() {
                for r in 0..200u64 {
                    let mut rng = root.child(ti as u64).child(r).rng();
                    let traj = policy0.sample_trajectory(task, &mut rng).unwrap();
                    let set = collect_answers(
                        &policy0,
                        task,
                        &traj,
                        &c.sampler,
                        &root.child(ti as u64).child(r).child(1),
                    )
                    .unwrap();
                    let b = compose(task, &traj, Some(&set), &c.rewards).unwrap();
                    let class = if traj.is_faithful {
                        0
                    } else if traj.terminal_option == Some(task.correct_option) {
                        1
                    } else {
                        2
                    };
                    stats[class].0 += b.r_con;
                    stats[class].1 += 1;
                }
            }
            for (name, (sum, n)) in ["faithful", "lucky", "wrong"].iter().zip(stats) {
                println!("init r_con[{name}] = {:.4} (n={n})", sum / n as f64);
            }
        }

        let setup = TrainSetup {
            trainer: &c.trainer,
            sampler: &c.sampler,
            rewards: &c.rewards,
            estimator: &c.estimator,
        };
        let (final_policy, metrics) = train(&task_set, policy0, &setup).unwrap();
        let last = metrics.last().unwrap();
        println!("final: acc {:.3} uf {:.3}", last.mean_r_acc, last.unfaithful_mass);
        for (i, task) in task_set.tasks.iter().enumerate() {
            let uf = unfaithful_mass(&final_policy, task, cap).unwrap();
            let p_faithful = trajectory_probability(
                &task.tree,
                &final_policy,
                &task.observation,
                &task.tree.faithful_path,
            )
            .unwrap();
            if uf > 0.2 {
                println!("  task {i:2}: uf {uf:.3} P(tau+) {p_faithful:.3}");
            }
        }
    }
}
