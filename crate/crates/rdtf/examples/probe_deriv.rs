//! Scratch probe: full sup|grad h| decay curve for the amplitude-0.05 noise
//! run, dense in time, to locate any window where the log-log slope sits in
//! the [-0.7, -0.3] band.

use rdtf::flow::{evolve, gradient_sups, StorePolicy, CFL_SIGMA};
use rdtf::harness::noise_metric;
use rdtf::lattice::Lattice;

fn main() {
    let lat = Lattice::new(3, 32, 2.0).unwrap();
    let m0 = noise_metric(lat, 0.05, 42).unwrap();
    let policy = StorePolicy {
        dyadic: true,
        uniform: 300,
        window: None,
    };
    let traj = evolve(&m0, 0.3, &policy, CFL_SIGMA).unwrap();
    let dx2 = lat.dx() * lat.dx();
    println!("# dt0 = {:.6e}, dx^2 = {:.6e}", traj.dt0, dx2);
    println!("# t, t/dx^2, grad1, grad2");
    for k in 0..traj.len() {
        let t = traj.times()[k];
        if t <= 0.0 {
            continue;
        }
        let g = gradient_sups(traj.slice(k));
        println!("{:.6e} {:.4} {:.6e} {:.6e}", t, t / dx2, g[0], g[1]);
    }
}
