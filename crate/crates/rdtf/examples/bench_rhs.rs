use rdtf::flow::{cfl_dt, CFL_SIGMA};
use rdtf::geometry::{rdtf_rhs_into, MetricField, RhsScratch};
use rdtf::lattice::{Field, Lattice};
use std::time::Instant;

fn main() {
    let res = 48usize;
    let lat = Lattice::new(3, res, 2.0 * std::f64::consts::PI).unwrap();
    let h = Field::from_fn(lat, 6, |p, c| {
        let (i, j) = rdtf::lattice::sym_pair(3, c);
        if i == j { 0.04 * (p[0] + p[1]).sin() } else { 0.02 * p[2].cos() }
    });
    let m = MetricField::new(h).unwrap();
    let mut scratch = RhsScratch::new(lat);
    let mut out = Field::sym2(lat);

    let start = Instant::now();
    for _ in 0..10 { rdtf_rhs_into(&m, &mut scratch, &mut out).unwrap(); }
    println!("rhs: {:.1} ms", 1e3 * start.elapsed().as_secs_f64() / 10.0);

    let start = Instant::now();
    for _ in 0..10 { let _ = cfl_dt(&m, CFL_SIGMA).unwrap(); }
    println!("cfl: {:.1} ms", 1e3 * start.elapsed().as_secs_f64() / 10.0);

    let start = Instant::now();
    for _ in 0..10 { let _ = m.h().check_finite("x").unwrap(); }
    println!("finite scan: {:.2} ms", 1e3 * start.elapsed().as_secs_f64() / 10.0);

    // Stencil alone
    let mut d = Field::sym2(lat);
    let start = Instant::now();
    for _ in 0..30 { rdtf::lattice::fd_derivative_into(m.h(), &mut d, 1); }
    println!("one stencil pass: {:.2} ms", 1e3 * start.elapsed().as_secs_f64() / 30.0);
}
