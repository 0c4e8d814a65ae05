//! Time integration of the Ricci-DeTurck evolution: CFL-guarded midpoint
//! stepping, slice storage policies, per-slice diagnostics, the scalar
//! supersolution residual, Lagrangian pullback consistency, and exact
//! parabolic rescaling.

use crate::error::{Error, Result};
use crate::geometry::{
    self, curvature, deturck_field, rdtf_rhs_into, scalar_curvature, MetricField, RhsScratch,
};
use crate::lattice::{fd_derivative_into, sym_index, Field, Lattice, MAX_N};

/// Default CFL safety factor.
pub const CFL_SIGMA: f64 = 0.25;
/// Dyadic slice ladder stops at this multiple of the initial step.
pub const DYADIC_FLOOR_STEPS: f64 = 16.0;

/// Which times to keep while marching.
#[derive(Clone, Debug)]
pub struct StorePolicy {
    /// Halving ladder horizon/2^j down to DYADIC_FLOOR_STEPS * dt0.
    pub dyadic: bool,
    /// Uniformly spaced slices across [0, horizon] (count of intervals).
    pub uniform: usize,
    /// Extra uniform slices across [t1/16, t1] for kernel work.
    pub window: Option<KernelWindow>,
}

#[derive(Clone, Copy, Debug)]
pub struct KernelWindow {
    pub t1: f64,
    pub count: usize,
}

impl Default for StorePolicy {
    fn default() -> Self {
        StorePolicy {
            dyadic: true,
            uniform: 32,
            window: None,
        }
    }
}

/// Scalar diagnostics attached to a stored slice.
#[derive(Clone, Copy, Debug)]
pub struct SliceDiag {
    pub t: f64,
    pub min_scalar: f64,
    pub max_scalar: f64,
    pub sup_riem: f64,
    /// sup |d^k h| for k = 1..=4 (iterated centered differences).
    pub grad_sup: [f64; 4],
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Stored evolution: slice times, h fields, and bookkeeping.
#[derive(Clone, Debug)]
pub struct Trajectory {
    lat: Lattice,
    times: Vec<f64>,
    slices: Vec<Field>,
    pub diags: Vec<SliceDiag>,
    pub dt0: f64,
    pub steps: usize,
}

impl Trajectory {
    /// Assemble a trajectory from slices produced elsewhere (an integral-
    /// equation iterate, a file load, or a synthetic test sequence).
    pub fn from_slices(lat: Lattice, times: Vec<f64>, slices: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::invalid(
                "trajectory",
                "times and slices must be non-empty and of equal length",
            ));
        }
        let nc = lat.n() * (lat.n() + 1) / 2;
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (lat, nc) {
                return Err(Error::LatticeMismatch {
                    expected: format!("{:?} with {} components", lat, nc),
                    got: format!("{:?} with {} components", s.lat(), s.comps()),
                });
            }
            if k > 0 && !(times[k] > times[k - 1]) {
                return Err(Error::invalid("trajectory", "times must be strictly increasing"));
            }
            if !times[k].is_finite() || times[k] < 0.0 {
                return Err(Error::invalid("trajectory", "times must be finite and nonnegative"));
            }
        }
        let dt0 = if times.len() > 1 {
            times[1] - times[0]
        } else {
            times[0].max(1e-12)
        };
        Ok(Self {
            lat,
            times,
            slices,
            diags: Vec::new(),
            dt0,
            steps: 0,
        })
    }

    #[inline]
    pub fn lat(&self) -> Lattice {
        self.lat
    }

    #[inline]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    pub fn slice(&self, k: usize) -> &Field {
        &self.slices[k]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Index of a stored slice matching t to within a quarter step.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let tol = 0.25 * self.dt0.max(1e-300);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol.max(1e-9 * self.horizon()))
    }

    /// Perturbation h at time t, linearly interpolated between slices.
    pub fn h_at(&self, t: f64) -> Result<Field> {
        let (lo, hi) = (self.times[0], self.horizon());
        if !(t >= lo - 1e-12 && t <= hi * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::TimeOutsideTrajectory { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let k = match self.times.iter().position(|&s| s >= t) {
            Some(0) => return Ok(self.slices[0].clone()),
            Some(k) => k,
            None => return Ok(self.slices.last().unwrap().clone()),
        };
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let th = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let mut out = self.slices[k - 1].clone();
        out.scale(1.0 - th);
        out.axpy(th, &self.slices[k]);
        Ok(out)
    }

    pub fn metric_at(&self, t: f64) -> Result<MetricField> {
        MetricField::new(self.h_at(t)?)
    }

    /// Fill per-slice diagnostics (curvature extremes, gradient sups,
    /// bilipschitz range).
    pub fn compute_diagnostics(&mut self) -> Result<()> {
        let mut diags = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let m = MetricField::new(self.slices[k].clone())?;
            let cur = curvature(&m)?;
            let b = m.bilipschitz_bounds()?;
            let mut min_r = f64::INFINITY;
            let mut max_r = f64::NEG_INFINITY;
            for node in 0..self.lat.nodes() {
                let r = cur.scalar.get(node, 0);
                min_r = min_r.min(r);
                max_r = max_r.max(r);
            }
            let sup_riem = cur.riem_norm2.data().iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
            let grad_sup = gradient_sups(&self.slices[k]);
            diags.push(SliceDiag {
                t: self.times[k],
                min_scalar: min_r,
                max_scalar: max_r,
                sup_riem,
                grad_sup,
                min_eig: b.min_eig,
                max_eig: b.max_eig,
            });
        }
        self.diags = diags;
        Ok(())
    }
}

/// sup |d^k h| for k = 1..=4 by iterated centered differences; each level
/// maxes over all axis multisets of that depth.
pub fn gradient_sups(h: &Field) -> [f64; 4] {
    let lat = h.lat();
    let n = lat.n();
    let mut out = [0.0f64; 4];
    // level holds all distinct iterated derivatives of the previous level.
    let mut level: Vec<(Field, usize)> = vec![(h.clone(), 0)];
    for k in 0..4 {
        let mut next: Vec<(Field, usize)> = Vec::new();
        for (f, first_axis) in &level {
            // Only differentiate along axes >= first_axis to enumerate each
            // multiset once (centered differences commute).
            for a in *first_axis..n {
                let mut d = Field::zeros(lat, f.comps());
                fd_derivative_into(f, &mut d, a);
                next.push((d, a));
            }
        }
        let mut sup = 0.0f64;
        for (f, _) in &next {
            sup = sup.max(f.sup_norm());
        }
        out[k] = sup;
        level = next;
    }
    out
}

/// Largest stable step for the current metric: sigma dx^2 lambda_min(g) / (2n).
pub fn cfl_dt(m: &MetricField, sigma: f64) -> Result<f64> {
    let min_eig = geometry::metric_min_eig(m)?;
    let lat = m.lat();
    Ok(sigma * lat.dx() * lat.dx() * min_eig / (2.0 * lat.n() as f64))
}

/// One midpoint (RK2) step of the fused right-hand side.
pub fn step_rk2(
    m: &MetricField,
    dt: f64,
    sigma: f64,
    scratch: &mut RhsScratch,
    k1: &mut Field,
    k2: &mut Field,
    mid: &mut Field,
) -> Result<MetricField> {
    let dt_max = cfl_dt(m, sigma)?;
    step_rk2_bounded(m, dt, dt_max, scratch, k1, k2, mid)
}

/// Midpoint step with a caller-supplied stability bound (so the bound is not
/// recomputed when the march loop already has it).
fn step_rk2_bounded(
    m: &MetricField,
    dt: f64,
    dt_max: f64,
    scratch: &mut RhsScratch,
    k1: &mut Field,
    k2: &mut Field,
    mid: &mut Field,
) -> Result<MetricField> {
    if dt > dt_max * (1.0 + 1e-9) {
        return Err(Error::CflViolation { dt, dt_max });
    }
    rdtf_rhs_into(m, scratch, k1)?;
    mid.copy_from(m.h());
    mid.axpy(0.5 * dt, k1);
    let m_mid = MetricField::new(std::mem::replace(mid, Field::sym2(m.lat())))?;
    rdtf_rhs_into(&m_mid, scratch, k2)?;
    *mid = m_mid.into_h();
    let mut h_new = m.h().clone();
    h_new.axpy(dt, k2);
    h_new.check_finite("step_rk2 output")?;
    MetricField::new(h_new)
}

/// March the metric to `horizon`, storing slices per `policy`.
pub fn evolve(m0: &MetricField, horizon: f64, policy: &StorePolicy, sigma: f64) -> Result<Trajectory> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("evolve", format!("horizon {horizon} not positive")));
    }
    let lat = m0.lat();
    let dt0 = cfl_dt(m0, sigma)?;
    let store_times = build_store_times(horizon, dt0, policy);

    let mut scratch = RhsScratch::new(lat);
    let mut k1 = Field::sym2(lat);
    let mut k2 = Field::sym2(lat);
    let mut mid = Field::sym2(lat);

    let mut m = m0.clone();
    let mut t = 0.0f64;
    let mut steps = 0usize;
    let mut times = Vec::with_capacity(store_times.len() + 1);
    let mut slices = Vec::with_capacity(store_times.len() + 1);
    times.push(0.0);
    slices.push(m.h().clone());

    for &target in &store_times {
        while t < target - 1e-13 * horizon {
            let dt_max = cfl_dt(&m, sigma)?;
            let dt = dt_max.min(target - t);
            m = step_rk2_bounded(&m, dt, dt_max, &mut scratch, &mut k1, &mut k2, &mut mid)?;
            t += dt;
            steps += 1;
        }
        t = target;
        times.push(t);
        slices.push(m.h().clone());
    }

    Ok(Trajectory {
        lat,
        times,
        slices,
        diags: Vec::new(),
        dt0,
        steps,
    })
}

fn build_store_times(horizon: f64, dt0: f64, policy: &StorePolicy) -> Vec<f64> {
    let mut ts: Vec<f64> = Vec::new();
    if policy.uniform > 0 {
        for k in 1..=policy.uniform {
            ts.push(horizon * k as f64 / policy.uniform as f64);
        }
    }
    if policy.dyadic {
        let floor = DYADIC_FLOOR_STEPS * dt0;
        let mut t = horizon;
        while t >= floor && t > 0.0 {
            ts.push(t);
            t *= 0.5;
        }
    }
    if let Some(w) = policy.window {
        let lo = w.t1 / 16.0;
        let count = w.count.max(2);
        for k in 0..count {
            ts.push(lo + (w.t1 - lo) * k as f64 / (count - 1) as f64);
        }
    }
    ts.push(horizon);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Merge near-coincident targets.
    let tol = 0.25 * dt0;
    let mut merged: Vec<f64> = Vec::with_capacity(ts.len());
    for t in ts {
        if let Some(&last) = merged.last() {
            if t - last <= tol {
                continue;
            }
        }
        if t > 0.0 && t <= horizon {
            merged.push(t);
        }
    }
    merged
}

/// Pointwise residual of the scalar evolution inequality
///   dt R - Lap_g R + X . grad R - (2/n) R^2  >= 0
/// evaluated at interior slices of a uniformly spaced triple ladder.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub min_residual: f64,
    pub per_time: Vec<(f64, f64)>,
}

pub fn scalar_supersolution_residual(traj: &Trajectory, times: &[f64]) -> Result<ResidualReport> {
    if times.len() < 3 {
        return Err(Error::invalid(
            "scalar_supersolution_residual",
            "need at least three slice times",
        ));
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        let d = w[1] - w[0];
        if (d - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
            return Err(Error::NonUniformSlices {
                lo: times[0],
                hi: *times.last().unwrap(),
            });
        }
    }
    let lat = traj.lat();
    let n = lat.n() as f64;
    let mut rs = Vec::with_capacity(times.len());
    let mut metrics = Vec::with_capacity(times.len());
    for &t in times {
        let idx = traj.index_at(t).ok_or(Error::TimeOutsideTrajectory {
            t,
            lo: traj.times()[0],
            hi: traj.horizon(),
        })?;
        let m = MetricField::new(traj.slice(idx).clone())?;
        rs.push(scalar_curvature(&m)?);
        metrics.push(m);
    }
    let mut min_res = f64::INFINITY;
    let mut per_time = Vec::new();
    for k in 1..times.len() - 1 {
        let m = &metrics[k];
        let lap = geometry::laplace_beltrami(m, &rs[k])?;
        let x = deturck_field(m)?;
        let adv = geometry::advect(&x, &rs[k])?;
        let mut slice_min = f64::INFINITY;
        for node in 0..lat.nodes() {
            let dtr = (rs[k + 1].get(node, 0) - rs[k - 1].get(node, 0)) / (2.0 * dt);
            let r = rs[k].get(node, 0);
            let res = dtr - lap.get(node, 0) + adv.get(node, 0) - (2.0 / n) * r * r;
            slice_min = slice_min.min(res);
        }
        min_res = min_res.min(slice_min);
        per_time.push((times[k], slice_min));
    }
    Ok(ResidualReport {
        min_residual: min_res,
        per_time,
    })
}

/// Volume-law consistency along Lagrangian trajectories of the DeTurck drift:
/// after undoing the gauge, d/dt log det g = -2 R, so for each probe
///   log det(J^T g(t1, phi) J) - log det g(t0, x0) + 2 int R(phi(t), t) dt ~ 0.
#[derive(Clone, Debug)]
pub struct PullbackReport {
    pub max_defect: f64,
    pub per_probe: Vec<f64>,
}

pub fn pullback_consistency(
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    probes: &[[f64; MAX_N]],
) -> Result<PullbackReport> {
    let lat = traj.lat();
    let n = lat.n();
    // Slice indices covering [t0, t1].
    let mut ks: Vec<usize> = Vec::new();
    for (k, &t) in traj.times().iter().enumerate() {
        if t >= t0 - 1e-12 && t <= t1 + 1e-12 {
            ks.push(k);
        }
    }
    if ks.len() < 2 {
        return Err(Error::invalid(
            "pullback_consistency",
            "need at least two stored slices in the window",
        ));
    }
    // Velocity, its gradient, and scalar curvature at each covered slice.
    let mut xs = Vec::with_capacity(ks.len());
    let mut dxs = Vec::with_capacity(ks.len());
    let mut rs = Vec::with_capacity(ks.len());
    let mut ts = Vec::with_capacity(ks.len());
    for &k in &ks {
        let m = MetricField::new(traj.slice(k).clone())?;
        let x = deturck_field(&m)?;
        let mut dx = Vec::with_capacity(n);
        for a in 0..n {
            let mut d = Field::vector(lat);
            fd_derivative_into(&x, &mut d, a);
            dx.push(d);
        }
        rs.push(scalar_curvature(&m)?);
        xs.push(x);
        dxs.push(dx);
        ts.push(traj.times()[k]);
    }

    let sample_vec = |f: &Field, p: &[f64; MAX_N]| -> [f64; MAX_N] {
        let mut out = [0.0; MAX_N];
        for c in 0..f.comps() {
            out[c] = interp_linear(f, p, c);
        }
        out
    };

    let mut per_probe = Vec::with_capacity(probes.len());
    let mut max_defect = 0.0f64;
    for probe in probes {
        let mut phi = *probe;
        let mut jac = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            jac[i][i] = 1.0;
        }
        let mut int_r = 0.0f64;
        for s in 0..ts.len() - 1 {
            let dt = ts[s + 1] - ts[s];
            // Midpoint step for phi and J with slice-held coefficients
            // (velocity linear in t between slices).
            let v0 = sample_vec(&xs[s], &phi);
            let mut phi_mid = phi;
            for a in 0..n {
                phi_mid[a] += 0.5 * dt * v0[a];
            }
            let v_mid = {
                let va = sample_vec(&xs[s], &phi_mid);
                let vb = sample_vec(&xs[s + 1], &phi_mid);
                let mut v = [0.0; MAX_N];
                for a in 0..n {
                    v[a] = 0.5 * (va[a] + vb[a]);
                }
                v
            };
            let r0 = interp_linear(&rs[s], &phi, 0);
            let mut phi_new = phi;
            for a in 0..n {
                phi_new[a] += dt * v_mid[a];
            }
            // grad X at the midpoint, averaged between slices: (dX)_{ak} = d_a X^k.
            let mut gx = [[0.0; MAX_N]; MAX_N];
            for a in 0..n {
                for k in 0..n {
                    let ga = interp_linear(&dxs[s][a], &phi_mid, k);
                    let gb = interp_linear(&dxs[s + 1][a], &phi_mid, k);
                    gx[a][k] = 0.5 * (ga + gb);
                }
            }
            // dJ/dt = (DX) J with (DX)_{k a} = d_a X^k.
            let mut jac_new = [[0.0; MAX_N]; MAX_N];
            for i in 0..n {
                for j in 0..n {
                    let mut s_ = jac[i][j];
                    for a in 0..n {
                        s_ += dt * gx[a][i] * jac[a][j];
                    }
                    jac_new[i][j] = s_;
                }
            }
            let r1 = interp_linear(&rs[s + 1], &phi_new, 0);
            int_r += 0.5 * dt * (r0 + r1);
            phi = phi_new;
            jac = jac_new;
        }
        // Pulled-back metric at t1 and initial metric at t0.
        let h1 = traj.h_at(t1)?;
        let m1 = MetricField::new(h1)?;
        let mut g1 = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            for j in 0..n {
                let c = sym_index(n, i.min(j), i.max(j));
                g1[i][j] = interp_linear(m1.h(), &phi, c) + if i == j { 1.0 } else { 0.0 };
            }
        }
        let mut pulled = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            for j in 0..n {
                let mut s_ = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s_ += jac[a][i] * g1[a][b] * jac[b][j];
                    }
                }
                pulled[i][j] = s_;
            }
        }
        let h0 = traj.h_at(t0)?;
        let m0 = MetricField::new(h0)?;
        let mut g0 = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            for j in 0..n {
                let c = sym_index(n, i.min(j), i.max(j));
                g0[i][j] = interp_linear(m0.h(), probe, c) + if i == j { 1.0 } else { 0.0 };
            }
        }
        let det1 = geometry::sym_inverse_det(n, &pulled)
            .ok_or_else(|| Error::invalid("pullback_consistency", "pulled metric not PD"))?
            .1;
        let det0 = geometry::sym_inverse_det(n, &g0)
            .ok_or_else(|| Error::invalid("pullback_consistency", "initial metric not PD"))?
            .1;
        let defect = det1.ln() - det0.ln() + 2.0 * int_r;
        per_probe.push(defect);
        max_defect = max_defect.max(defect.abs());
    }
    Ok(PullbackReport {
        max_defect,
        per_probe,
    })
}

/// Multilinear interpolation of one component at a continuous point.
pub fn interp_linear(f: &Field, p: &[f64; MAX_N], comp: usize) -> f64 {
    let lat = f.lat();
    let n = lat.n();
    let dx = lat.dx();
    let mut i0 = [0usize; MAX_N];
    let mut w = [0.0f64; MAX_N];
    for a in 0..n {
        let u = (p[a] + 0.5 * lat.extent()) / dx;
        let fl = u.floor();
        i0[a] = (fl as i64).rem_euclid(lat.res() as i64) as usize;
        w[a] = u - fl;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut ix = [0usize; MAX_N];
        let mut weight = 1.0;
        for a in 0..n {
            if corner & (1 << a) != 0 {
                ix[a] = (i0[a] + 1) % lat.res();
                weight *= w[a];
            } else {
                ix[a] = i0[a];
                weight *= 1.0 - w[a];
            }
        }
        acc += weight * f.get(lat.encode(&ix), comp);
    }
    acc
}

/// Parabolic rescaling g'(x, t) = g(x / sqrt(lambda), t / lambda) with
/// lambda = 4^k: same node values on a lattice stretched by 2^k, times
/// scaled by 4^k.
pub fn parabolic_rescale_metric(m: &MetricField, k: u32) -> Result<MetricField> {
    let lat = m.lat();
    let lat2 = Lattice::new(lat.n(), lat.res(), lat.extent() * 2f64.powi(k as i32))?;
    let mut h = Field::zeros(lat2, m.h().comps());
    h.data_mut().copy_from_slice(m.h().data());
    MetricField::new(h)
}

pub fn parabolic_rescale(traj: &Trajectory, k: u32) -> Result<Trajectory> {
    let lam = 4f64.powi(k as i32);
    let lat = traj.lat();
    let lat2 = Lattice::new(lat.n(), lat.res(), lat.extent() * 2f64.powi(k as i32))?;
    let mut slices = Vec::with_capacity(traj.len());
    for s in 0..traj.len() {
        let mut h = Field::zeros(lat2, traj.slice(s).comps());
        h.data_mut().copy_from_slice(traj.slice(s).data());
        slices.push(h);
    }
    Ok(Trajectory {
        lat: lat2,
        times: traj.times().iter().map(|t| t * lam).collect(),
        slices,
        diags: Vec::new(),
        dt0: traj.dt0 * lam,
        steps: traj.steps,
    })
}
