use wbmanip::env::AgentMode;
use wbmanip::rl::{train, evaluate, SacHyperparams, TrainSetup};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(20000);
    let hidden: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(128);
    let update_every: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);

    let mut hyper = SacHyperparams::default();
    hyper.hidden = vec![hidden, hidden];
    hyper.batch_size = batch;
    hyper.update_every = update_every;
    hyper.seed = seed;
    hyper.buffer_capacity = 300_000;
    let mut setup = TrainSetup::new(AgentMode::FloatingHand, vec![0], hyper, steps);
    setup.curve_interval = 2500;
    setup.eval_episodes_per_point = 10;

    let t0 = std::time::Instant::now();
    let out = train(&setup);
    let dt = t0.elapsed().as_secs_f64();
    println!("steps={steps} hidden={hidden} batch={batch} ue={update_every} time={dt:.1}s ({:.0} steps/s)", steps as f64 / dt);
    for p in &out.curve {
        println!("  step {:>7}  return {:>8.2}  eval_success {:.2}", p.step, p.avg_return, p.eval_success);
    }
    let summary = evaluate(&out.agent, &setup, &[0], 30);
    println!("final eval: success {:.3} len {:.1}", summary.success_rate, summary.avg_length);
}
