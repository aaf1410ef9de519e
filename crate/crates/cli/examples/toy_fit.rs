//! Runs the toy fit and reports Chamfer distance and normal consistency.
//!
//! Usage: toy_fit [batch_size] [offset] [key=value ...]

use gmr_cli::toy;
use gmr_core::mesh::shift_initialization;
use gmr_core::metrics::geometric_metrics;
use gmr_core::optimize::fit_with_observer;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args.get(1).map_or(1, |s| s.parse().expect("batch size"));
    let offset: f64 = args.get(2).map_or(0.0, |s| s.parse().expect("offset"));
    let mut cfg = toy::fit_config(batch);
    for kv in args.iter().skip(3) {
        let (k, v) = kv.split_once('=').expect("key=value");
        assert!(cfg.set(k, v).expect("valid value"), "unknown key {k}");
    }
    let target = toy::target();
    let views = toy::views(&target).unwrap();
    let init = shift_initialization(&toy::initial_mesh(), &(toy::random_direction(0) * offset));
    let (cd0, _) = geometric_metrics(&init, &target, 20_000, 0).unwrap();
    let start = std::time::Instant::now();
    let result = fit_with_observer(&init, &views, &cfg, None, &mut |h| {
        if h.iteration % 250 == 0 {
            println!("{:>5}  loss {:.4e}", h.iteration, h.total);
        }
    })
    .unwrap();
    let (cd, nc) = geometric_metrics(&result.mesh, &target, 20_000, 0).unwrap();
    println!(
        "cd {cd0:.4e} -> {cd:.4e} ({:.1}% lower), nc {nc:.4}, {:.1}s",
        100.0 * (1.0 - cd / cd0),
        start.elapsed().as_secs_f64()
    );
}
