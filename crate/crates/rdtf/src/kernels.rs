//! Conjugate heat kernels along the evolving metric: forward kernel with
//! Gaussian-bound fits, backward kernel with the scalar-curvature pairing,
//! and the duality/mass audits. The scalar operator uses the exact gauge
//! cancellation Delta_g u - d_X u = g^{ij} d2_{ij} u, so no Christoffel
//! assembly is needed per step.

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::flow::Trajectory;
use crate::geometry::{metric_min_eig, scalar_curvature, scalar_hessian, MetricField};
use crate::lattice::{Field, Lattice};

/// Cap on stored kernel slices; marching keeps exact step values at a
/// decimated ladder when the step count exceeds it.
const STORE_CAP: usize = 384;
/// Forward marching step as a fraction of the trajectory step.
const FWD_DT_FRACTION: f64 = 0.125;
/// Negativity floor relative to the kernel peak.
const NEG_FLOOR: f64 = 1e-12;
/// Minimum dynamic range of fit samples: two decades.
const MIN_LN_RANGE: f64 = 4.605170185988092;
/// Relative noise floor of fit samples: the window spans three decades, the
/// core where the profile is Gaussian (deeper lattice tails are fatter and
/// would tilt the exponent).
const FIT_FLOOR: f64 = 1e-3;
/// Fit samples stay inside this fraction of the extent, where the nearest
/// periodic image is negligible.
const WRAP_RADIUS_FRACTION: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelDirection {
    Forward,
    Backward,
}

/// Kernel values marched along a trajectory, stored at exact step times.
#[derive(Clone, Debug)]
pub struct KernelField {
    direction: KernelDirection,
    lat: Lattice,
    base_node: usize,
    /// Source time s (forward) or t1 (backward).
    base_time: f64,
    /// Dirac-surrogate Gaussian width (sigma).
    sigma0: f64,
    /// Largest marching step used.
    dt: f64,
    times: Vec<f64>,
    values: Vec<Field>,
    /// Metric mass sum u sqrt(det g) dx^n per stored slice.
    masses: Vec<f64>,
    /// Euclidean mass sum u dx^n per stored slice.
    flat_masses: Vec<f64>,
    min_value: f64,
}

impl KernelField {
    pub fn direction(&self) -> KernelDirection {
        self.direction
    }

    pub fn lat(&self) -> Lattice {
        self.lat
    }

    pub fn base_node(&self) -> usize {
        self.base_node
    }

    pub fn base_time(&self) -> f64 {
        self.base_time
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, k: usize) -> &Field {
        &self.values[k]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn flat_masses(&self) -> &[f64] {
        &self.flat_masses
    }

    /// Most negative value seen at any marching step.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    /// Largest metric-mass deviation from the initial slice.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.masses[0];
        self.masses
            .iter()
            .map(|m| (m - m0).abs())
            .fold(0.0, f64::max)
    }

    /// Stored slice index nearest to time `t`.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, &tk) in self.times.iter().enumerate() {
            if (tk - t).abs() < dist {
                dist = (tk - t).abs();
                best = k;
            }
        }
        best
    }
}

/// Normalized Gaussian bump of width 2dx (sigma = dx) at a node: the discrete
/// Dirac surrogate, unit mass against the given volume weights.
pub fn dirac_surrogate(lat: &Lattice, node: usize, vol: &Field) -> Field {
    let sigma = lat.dx();
    let center = lat.position(node);
    let mut u = Field::from_fn_scalar(*lat, |p| (-lat.dist2(p, &center) / (2.0 * sigma * sigma)).exp());
    let dxn = lat.dx().powi(lat.n() as i32);
    let mut z = 0.0;
    for i in 0..lat.nodes() {
        z += u.get(i, 0) * vol.get(i, 0) * dxn;
    }
    u.scale(1.0 / z);
    u
}

/// Frozen per-time coefficients of the scalar parabolic operator.
struct StepOp {
    ginv: Field,
    r: Option<Field>,
    vol: Field,
    min_eig: f64,
}

impl StepOp {
    fn build(h: Field, with_r: bool) -> Result<StepOp> {
        let m = MetricField::new(h)?;
        let ginv = m.inverse()?;
        let vol = m.volume_weight()?;
        let min_eig = metric_min_eig(&m)?;
        let r = if with_r {
            Some(scalar_curvature(&m)?)
        } else {
            None
        };
        Ok(StepOp {
            ginv,
            r,
            vol,
            min_eig,
        })
    }

    /// out = g^{ij} Hess_{ij} u - c_r R u.
    fn rhs_into(&self, u: &Field, c_r: f64, out: &mut Field) {
        let lat = u.lat();
        let n = lat.n();
        let hess = scalar_hessian(lat, u);
        for node in 0..lat.nodes() {
            let gi = self.ginv.at(node);
            let hs = hess.at(node);
            let mut s = 0.0;
            let mut c = 0;
            for i in 0..n {
                for j in i..n {
                    let w = if i == j { 1.0 } else { 2.0 };
                    s += w * gi[c] * hs[c];
                    c += 1;
                }
            }
            if let Some(r) = &self.r {
                s -= c_r * r.get(node, 0) * u.get(node, 0);
            }
            out.set(node, 0, s);
        }
    }
}

/// One explicit trapezoid (Heun) step from op_a to op_b over dt.
fn heun_step(
    u: &mut Field,
    op_a: &StepOp,
    op_b: &StepOp,
    dt: f64,
    c_r: f64,
    f1: &mut Field,
    f2: &mut Field,
    ustar: &mut Field,
) {
    op_a.rhs_into(u, c_r, f1);
    ustar.copy_from(u);
    ustar.axpy(dt, f1);
    op_b.rhs_into(ustar, c_r, f2);
    u.axpy(0.5 * dt, f1);
    u.axpy(0.5 * dt, f2);
}

fn masses_of(u: &Field, vol: &Field, dxn: f64) -> (f64, f64) {
    let mut g_mass = 0.0;
    let mut flat = 0.0;
    for i in 0..u.lat().nodes() {
        let v = u.get(i, 0);
        g_mass += v * vol.get(i, 0) * dxn;
        flat += v * dxn;
    }
    (g_mass, flat)
}

fn extrema(u: &Field) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in u.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Forward conjugate kernel: marches dt u = Delta_g u - d_X u from the Dirac
/// surrogate at (y, s) to t_end, metric linearly interpolated between stored
/// slices.
pub fn forward_kernel(traj: &Trajectory, y: usize, s: f64, t_end: f64) -> Result<KernelField> {
    let lat = traj.lat();
    let n = lat.n();
    if y >= lat.nodes() {
        return Err(Error::invalid("forward_kernel", "base node out of range"));
    }
    let t0 = traj.times()[0];
    let th = traj.horizon();
    if !(s >= t0 - 1e-12 && t_end <= th * (1.0 + 1e-12) + 1e-12 && s < t_end) {
        return Err(Error::invalid(
            "forward_kernel",
            format!("need {t0:.3e} <= s < t_end <= {th:.3e}, got s = {s:.3e}, t_end = {t_end:.3e}"),
        ));
    }

    let op_s = StepOp::build(traj.h_at(s)?, false)?;
    let dxx = lat.dx() * lat.dx();
    let cfl = dxx * op_s.min_eig / (2.0 * n as f64);
    let dt_target = (FWD_DT_FRACTION * traj.dt0).min(0.25 * cfl);
    let total = t_end - s;
    let steps = ((total / dt_target).ceil() as usize).max(1);
    let dt = total / steps as f64;
    let keep = steps.div_ceil(STORE_CAP);

    let dxn = lat.dx().powi(n as i32);
    let mut u = dirac_surrogate(&lat, y, &op_s.vol);
    let mut kf = KernelField {
        direction: KernelDirection::Forward,
        lat,
        base_node: y,
        base_time: s,
        sigma0: lat.dx(),
        dt,
        times: Vec::new(),
        values: Vec::new(),
        masses: Vec::new(),
        flat_masses: Vec::new(),
        min_value: f64::INFINITY,
    };
    let mut peak = 0.0f64;
    let record = |kf: &mut KernelField, t: f64, u: &Field, op: &StepOp| {
        let (gm, fm) = masses_of(u, &op.vol, dxn);
        kf.times.push(t);
        kf.values.push(u.clone());
        kf.masses.push(gm);
        kf.flat_masses.push(fm);
    };
    record(&mut kf, s, &u, &op_s);
    let (lo0, hi0) = extrema(&u);
    kf.min_value = lo0;
    peak = peak.max(hi0);

    let mut f1 = Field::scalar(lat);
    let mut f2 = Field::scalar(lat);
    let mut ustar = Field::scalar(lat);
    let mut op_a = op_s;
    for k in 0..steps {
        let t_b = s + (k + 1) as f64 * dt;
        let op_b = StepOp::build(traj.h_at(t_b.min(th))?, false)?;
        heun_step(&mut u, &op_a, &op_b, dt, 0.0, &mut f1, &mut f2, &mut ustar);
        u.check_finite("forward_kernel")?;
        let (lo, hi) = extrema(&u);
        kf.min_value = kf.min_value.min(lo);
        peak = peak.max(hi);
        if lo < -NEG_FLOOR * peak.max(1.0) {
            return Err(Error::invalid(
                "forward_kernel",
                format!("kernel negativity {lo:.3e} beyond floor: scheme failure"),
            ));
        }
        if (k + 1) % keep == 0 || k + 1 == steps {
            record(&mut kf, t_b, &u, &op_b);
        }
        op_a = op_b;
    }
    Ok(kf)
}

/// Backward kernel: marches -dt u = Delta_g u - d_X u - (1 - 2/n) R u down
/// from the Dirac surrogate at (p, t1) to t1/16, one stored value per dense
/// window slice, substepped under the stability bound with the metric
/// linearly interpolated.
pub fn backward_kernel(traj: &Trajectory, p: usize, t1: f64) -> Result<KernelField> {
    let lat = traj.lat();
    let n = lat.n();
    if p >= lat.nodes() {
        return Err(Error::invalid("backward_kernel", "base node out of range"));
    }
    let idx1 = traj
        .index_at(t1)
        .ok_or_else(|| Error::invalid("backward_kernel", "t1 must be a stored slice time"))?;
    let t1v = traj.times()[idx1];
    if !(t1v > 0.0) {
        return Err(Error::invalid("backward_kernel", "t1 must be positive"));
    }
    let lo_target = t1v / 16.0;
    let win: Vec<usize> = (0..=idx1)
        .filter(|&i| traj.times()[i] >= lo_target * (1.0 - 1e-9))
        .collect();
    if win.len() < 8 || traj.times()[win[0]] > lo_target * 1.05 {
        return Err(Error::invalid(
            "backward_kernel",
            "kernel window [t1/16, t1] is not covered by dense stored slices",
        ));
    }
    let mut max_gap = 0.0f64;
    for w in win.windows(2) {
        max_gap = max_gap.max(traj.times()[w[1]] - traj.times()[w[0]]);
    }
    if max_gap > 32.0 * traj.dt0 {
        return Err(Error::invalid(
            "backward_kernel",
            format!(
                "kernel window slice gap {max_gap:.3e} exceeds 32 steps of {:.3e}",
                traj.dt0
            ),
        ));
    }

    let c_r = 1.0 - 2.0 / n as f64;
    let op1 = StepOp::build(traj.h_at(t1v)?, true)?;
    let dxx = lat.dx() * lat.dx();
    let dxn = lat.dx().powi(n as i32);
    let mut u = dirac_surrogate(&lat, p, &op1.vol);
    let mut kf = KernelField {
        direction: KernelDirection::Backward,
        lat,
        base_node: p,
        base_time: t1v,
        sigma0: lat.dx(),
        dt: 0.0,
        times: Vec::new(),
        values: Vec::new(),
        masses: Vec::new(),
        flat_masses: Vec::new(),
        min_value: f64::INFINITY,
    };
    let mut peak = 0.0f64;
    let record = |kf: &mut KernelField, t: f64, u: &Field, op: &StepOp| {
        let (gm, fm) = masses_of(u, &op.vol, dxn);
        kf.times.push(t);
        kf.values.push(u.clone());
        kf.masses.push(gm);
        kf.flat_masses.push(fm);
    };
    record(&mut kf, t1v, &u, &op1);
    let (lo0, hi0) = extrema(&u);
    kf.min_value = lo0;
    peak = peak.max(hi0);

    let mut f1 = Field::scalar(lat);
    let mut f2 = Field::scalar(lat);
    let mut ustar = Field::scalar(lat);
    let mut op_a = op1;
    for pair in win.windows(2).rev() {
        let (ilo, ihi) = (pair[0], pair[1]);
        let t_hi = traj.times()[ihi];
        let t_lo = traj.times()[ilo];
        let spacing = t_hi - t_lo;
        let cfl = dxx * op_a.min_eig / (2.0 * n as f64);
        let subdiv = ((spacing / (0.25 * cfl)).ceil() as usize).max(2);
        let sub_dt = spacing / subdiv as f64;
        kf.dt = kf.dt.max(sub_dt);
        for j in 0..subdiv {
            let t_b = if j + 1 == subdiv {
                t_lo
            } else {
                t_hi - (j + 1) as f64 * sub_dt
            };
            let op_b = StepOp::build(traj.h_at(t_b)?, true)?;
            heun_step(&mut u, &op_a, &op_b, sub_dt, c_r, &mut f1, &mut f2, &mut ustar);
            u.check_finite("backward_kernel")?;
            let (lo, hi) = extrema(&u);
            kf.min_value = kf.min_value.min(lo);
            peak = peak.max(hi);
            if lo < -NEG_FLOOR * peak.max(1.0) {
                return Err(Error::invalid(
                    "backward_kernel",
                    format!("kernel negativity {lo:.3e} beyond floor: scheme failure"),
                ));
            }
            op_a = op_b;
        }
        record(&mut kf, t_lo, &u, &op_a);
    }
    kf.times.reverse();
    kf.values.reverse();
    kf.masses.reverse();
    kf.flat_masses.reverse();
    Ok(kf)
}

/// Pointwise Gaussian envelope fitted to one kernel slice.
#[derive(Clone, Debug)]
pub struct GaussianFit {
    pub c_fit: f64,
    pub d_fit: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// Radius window of the accepted samples.
    pub window: (f64, f64),
    pub samples: usize,
    pub tail: Option<TailFit>,
}

/// Integrated-tail envelope over the radius ladder.
#[derive(Clone, Debug)]
pub struct TailFit {
    pub c2: f64,
    pub d2: f64,
    /// (radius, mass fraction outside the ball).
    pub rungs: Vec<(f64, f64)>,
}

/// Fraction of Euclidean kernel mass within min-image radius `r` of the base
/// point, on stored slice `idx`.
pub fn mass_within(k: &KernelField, idx: usize, r: f64) -> f64 {
    let lat = k.lat;
    let center = lat.position(k.base_node);
    let u = &k.values[idx];
    let mut inside = 0.0;
    let mut total = 0.0;
    for node in 0..lat.nodes() {
        let v = u.get(node, 0);
        total += v;
        if lat.dist2(&lat.position(node), &center) <= r * r {
            inside += v;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// Least-squares Gaussian-envelope fit of the stored slice nearest `t`. The
/// abscissa uses tau_eff = tau + sigma0^2/2, compensating the surrogate
/// width so the flat kernel sits at D = 4 for every offset.
pub fn gaussian_bound_fit(k: &KernelField, t: f64) -> Result<GaussianFit> {
    let lat = k.lat;
    let n = lat.n();
    let idx = k.nearest_slice(t);
    let tk = k.times[idx];
    let tau = (tk - k.base_time).abs();
    if tau < 16.0 * k.dt {
        return Err(Error::invalid(
            "gaussian_bound_fit",
            format!("offset {tau:.3e} below 16 steps of {:.3e}", k.dt),
        ));
    }
    let tau_eff = tau + 0.5 * k.sigma0 * k.sigma0;
    let u = &k.values[idx];
    let peak = u.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::DegenerateFit {
            reason: "kernel slice has no positive values".into(),
        });
    }
    let center = lat.position(k.base_node);
    let rmax = WRAP_RADIUS_FRACTION * lat.extent();
    let floor = peak * FIT_FLOOR;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for node in 0..lat.nodes() {
        let v = u.get(node, 0);
        if v < floor || v <= 0.0 {
            continue;
        }
        let d2 = lat.dist2(&lat.position(node), &center);
        if d2 > rmax * rmax {
            continue;
        }
        xs.push(d2 / tau_eff);
        ys.push(v.ln());
        dmin = dmin.min(d2.sqrt());
        dmax = dmax.max(d2.sqrt());
    }
    let range = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    if xs.len() < 8 || range < MIN_LN_RANGE {
        return Err(Error::DegenerateFit {
            reason: format!(
                "dynamic range {:.2} decades over {} samples, need 2 decades",
                range / std::f64::consts::LN_10,
                xs.len()
            ),
        });
    }
    let line = fit_line(&xs, &ys)?;
    if !(line.slope < 0.0) {
        return Err(Error::DegenerateFit {
            reason: "kernel profile does not decay with radius".into(),
        });
    }
    let max_resid = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (line.intercept + line.slope * x))
        .fold(f64::NEG_INFINITY, f64::max);
    let a_inf = line.intercept + max_resid;
    let d_fit = -1.0 / line.slope;
    let c_fit = a_inf.exp() * tau_eff.powf(n as f64 / 2.0);
    // The inflated envelope must dominate every accepted sample.
    for (x, y) in xs.iter().zip(&ys) {
        let bound = a_inf + line.slope * x;
        if *y > bound + 1e-9 {
            return Err(Error::invalid(
                "gaussian_bound_fit",
                "pointwise envelope verification failed",
            ));
        }
    }

    // Tail ladder: Euclidean mass fraction outside dyadic balls.
    let dx = lat.dx();
    let mut rungs = Vec::new();
    let mut r = 2.0 * dx;
    while r <= 0.45 * lat.extent() {
        let frac = 1.0 - mass_within(k, idx, r);
        if frac > 1e-13 {
            rungs.push((r, frac));
        }
        r *= 2.0;
    }
    let tail = if rungs.len() >= 3 {
        let txs: Vec<f64> = rungs.iter().map(|(r, _)| r * r / tau_eff).collect();
        let tys: Vec<f64> = rungs.iter().map(|(_, f)| f.ln()).collect();
        let tline = fit_line(&txs, &tys)?;
        if tline.slope < 0.0 {
            let tmax = txs
                .iter()
                .zip(&tys)
                .map(|(x, y)| y - (tline.intercept + tline.slope * x))
                .fold(f64::NEG_INFINITY, f64::max);
            let c2 = (tline.intercept + tmax).exp();
            let d2 = -1.0 / tline.slope;
            for (x, y) in txs.iter().zip(&tys) {
                if *y > tline.intercept + tmax + tline.slope * x + 1e-9 {
                    return Err(Error::invalid(
                        "gaussian_bound_fit",
                        "tail envelope verification failed",
                    ));
                }
            }
            Some(TailFit { c2, d2, rungs })
        } else {
            None
        }
    } else {
        None
    };

    Ok(GaussianFit {
        c_fit,
        d_fit,
        residual: line.rms,
        window: (dmin, dmax),
        samples: xs.len(),
        tail,
    })
}

/// The scalar-curvature pairing of a backward kernel along the flow.
#[derive(Clone, Debug)]
pub struct PairingCurve {
    /// (t, integral of R u dg_t), ascending in t.
    pub rows: Vec<(f64, f64)>,
    /// Largest decrease over consecutive pairs (0 when non-decreasing).
    pub monotonicity_defect: f64,
    pub final_value: f64,
    /// R at the base slice averaged over the Dirac surrogate.
    pub base_average: f64,
}

impl PairingCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("time,pairing\n");
        for &(t, v) in &self.rows {
            s.push_str(&format!("{t:.6e},{v:.6e}\n"));
        }
        s
    }
}

/// Discrete pairing integral sum R u sqrt(det g) dx^n per stored kernel
/// slice, with the monotonicity defect and the base-slice comparison.
pub fn pairing_curve(traj: &Trajectory, k: &KernelField) -> Result<PairingCurve> {
    if k.direction != KernelDirection::Backward {
        return Err(Error::invalid(
            "pairing_curve",
            "pairing needs a backward kernel",
        ));
    }
    if traj.lat() != k.lat {
        return Err(Error::LatticeMismatch {
            expected: format!("{:?}", traj.lat()),
            got: format!("{:?}", k.lat),
        });
    }
    let lat = k.lat;
    let dxn = lat.dx().powi(lat.n() as i32);
    let mut rows = Vec::with_capacity(k.len());
    for (idx, &t) in k.times.iter().enumerate() {
        let m = traj.metric_at(t)?;
        let r = scalar_curvature(&m)?;
        let vol = m.volume_weight()?;
        let u = &k.values[idx];
        let mut s = 0.0;
        for node in 0..lat.nodes() {
            s += r.get(node, 0) * u.get(node, 0) * vol.get(node, 0) * dxn;
        }
        rows.push((t, s));
    }
    let mut defect = 0.0f64;
    for w in rows.windows(2) {
        defect = defect.max(w[0].1 - w[1].1);
    }
    let defect = defect.max(0.0);
    let final_value = rows.last().map(|r| r.1).unwrap_or(0.0);

    let m1 = traj.metric_at(k.base_time)?;
    let r1 = scalar_curvature(&m1)?;
    let vol1 = m1.volume_weight()?;
    let surrogate = dirac_surrogate(&lat, k.base_node, &vol1);
    let mut base_average = 0.0;
    for node in 0..lat.nodes() {
        base_average += r1.get(node, 0) * surrogate.get(node, 0) * vol1.get(node, 0) * dxn;
    }
    Ok(PairingCurve {
        rows,
        monotonicity_defect: defect,
        final_value,
        base_average,
    })
}

/// c0 = sup over stored t > 0 of t * max(0, -min R(t)): the measured
/// constant in the lower bound R >= -c0/t.
pub fn measured_c0(traj: &Trajectory) -> Result<f64> {
    let mut c0 = 0.0f64;
    for (idx, &t) in traj.times().iter().enumerate() {
        if !(t > 0.0) {
            continue;
        }
        let m = MetricField::new(traj.slice(idx).clone())?;
        let r = scalar_curvature(&m)?;
        let rmin = r.data().iter().cloned().fold(f64::INFINITY, f64::min);
        c0 = c0.max(t * (-rmin).max(0.0));
    }
    Ok(c0)
}

/// (t, sup u(t) * t^{(1-2/n) c0}) over stored backward-kernel times up to
/// t1/2: the quantity the universal backward bound keeps bounded.
pub fn backward_bound_curve(k: &KernelField, c0: f64) -> Vec<(f64, f64)> {
    let n = k.lat.n();
    let pow = (1.0 - 2.0 / n as f64) * c0;
    let mut rows = Vec::new();
    for (idx, &t) in k.times.iter().enumerate() {
        if t > 0.5 * k.base_time * (1.0 + 1e-9) {
            continue;
        }
        let sup = k.values[idx]
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push((t, sup * t.powf(pow)));
    }
    rows
}

/// Re-run the forward kernel from two nearby source times and compare the
/// pairing with a fixed test function at t_end; returns the defect.
pub fn duality_audit(
    traj: &Trajectory,
    y: usize,
    s1: f64,
    s2: f64,
    t_end: f64,
    phi: &Field,
) -> Result<f64> {
    if phi.comps() != 1 || phi.lat() != traj.lat() {
        return Err(Error::invalid(
            "duality_audit",
            "test function must be a scalar field on the trajectory lattice",
        ));
    }
    let k1 = forward_kernel(traj, y, s1, t_end)?;
    let k2 = forward_kernel(traj, y, s2, t_end)?;
    let m = traj.metric_at(t_end)?;
    let vol = m.volume_weight()?;
    let lat = traj.lat();
    let dxn = lat.dx().powi(lat.n() as i32);
    let pair = |k: &KernelField| -> f64 {
        let u = &k.values[k.len() - 1];
        let mut s = 0.0;
        for node in 0..lat.nodes() {
            s += u.get(node, 0) * phi.get(node, 0) * vol.get(node, 0) * dxn;
        }
        s
    };
    Ok((pair(&k1) - pair(&k2)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve, KernelWindow, StorePolicy};
    use crate::lattice::{fd_laplacian, sym_index, MAX_N};
    use std::f64::consts::PI;

    fn flat_trajectory(n: usize, res: usize, horizon: f64, policy: &StorePolicy) -> Trajectory {
        let lat = Lattice::new(n, res, 2.0).unwrap();
        let m0 = MetricField::new(Field::sym2(lat)).unwrap();
        evolve(&m0, horizon, policy, 0.25).unwrap()
    }

    /// Exact discrete heat semigroup exp(tau Lap_d) of u0 by brute-force DFT
    /// (2-D only): the lattice heat kernel reference.
    fn lattice_heat_reference(lat: &Lattice, u0: &Field, tau: f64) -> Field {
        assert_eq!(lat.n(), 2);
        let nres = lat.res();
        let dx = lat.dx();
        let v = lat.nodes();
        let mut sre = vec![0.0; v];
        let mut sim = vec![0.0; v];
        for m0 in 0..nres {
            for m1 in 0..nres {
                let mut ar = 0.0;
                let mut ai = 0.0;
                for j0 in 0..nres {
                    for j1 in 0..nres {
                        let ang =
                            -2.0 * PI * (m0 * j0 + m1 * j1) as f64 / nres as f64;
                        let val = u0.get(j0 * nres + j1, 0);
                        ar += val * ang.cos();
                        ai += val * ang.sin();
                    }
                }
                let mu = (2.0 - 2.0 * (2.0 * PI * m0 as f64 / nres as f64).cos()) / (dx * dx)
                    + (2.0 - 2.0 * (2.0 * PI * m1 as f64 / nres as f64).cos()) / (dx * dx);
                let damp = (-mu * tau).exp();
                sre[m0 * nres + m1] = ar * damp;
                sim[m0 * nres + m1] = ai * damp;
            }
        }
        let mut out = Field::scalar(*lat);
        for j0 in 0..nres {
            for j1 in 0..nres {
                let mut acc = 0.0;
                for m0 in 0..nres {
                    for m1 in 0..nres {
                        let ang = 2.0 * PI * (m0 * j0 + m1 * j1) as f64 / nres as f64;
                        acc += sre[m0 * nres + m1] * ang.cos() - sim[m0 * nres + m1] * ang.sin();
                    }
                }
                out.set(j0 * nres + j1, 0, acc / v as f64);
            }
        }
        out
    }

    fn conformal_h(lat: Lattice, eps: f64) -> Field {
        let ell = lat.extent();
        let n = lat.n();
        let nc = n * (n + 1) / 2;
        Field::from_fn(lat, nc, |p, c| {
            let mut diag = false;
            for i in 0..n {
                if c == sym_index(n, i, i) {
                    diag = true;
                }
            }
            if diag {
                let mut phi = 1.0;
                for (a, pa) in p.iter().enumerate().take(n) {
                    phi *= (2.0 * PI * pa / ell + 0.3 * a as f64).sin() * 0.8 + 0.1;
                }
                eps * phi
            } else {
                0.0
            }
        })
    }

    #[test]
    fn flat_forward_kernel_matches_the_lattice_heat_kernel() {
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: None,
        };
        let traj = flat_trajectory(2, 32, 0.0625, &policy);
        let lat = traj.lat();
        let center = lat.encode(&[16, 16, 0, 0]);
        let k = forward_kernel(&traj, center, 0.0, 0.0625).unwrap();
        let reference = lattice_heat_reference(&lat, k.value(0), 0.0625);
        let defect = k.value(k.len() - 1).sup_diff(&reference);
        assert!(defect <= 1e-6, "flat kernel defect {defect:.3e}");
        assert!(k.min_value() >= -1e-12);
        assert!(k.mass_drift() <= 1e-9, "mass drift {:.3e}", k.mass_drift());
    }

    #[test]
    fn forward_mass_concentrates_near_the_source() {
        let lat = Lattice::new(3, 16, 2.0).unwrap();
        let m0 = MetricField::new(Field::sym2(lat)).unwrap();
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: None,
        };
        let dt0 = 0.25 * lat.dx() * lat.dx() / 6.0;
        let horizon = 16.0 * dt0;
        let traj = evolve(&m0, horizon, &policy, 0.25).unwrap();
        let center = lat.encode(&[8, 8, 8, 0]);
        let k = forward_kernel(&traj, center, 0.0, horizon).unwrap();
        let frac = mass_within(&k, k.len() - 1, 6.0 * lat.dx());
        assert!(frac >= 0.99, "mass within 6 dx is {frac:.4}");
    }

    #[test]
    fn flat_fit_recovers_the_euclidean_envelope() {
        let policy = StorePolicy {
            dyadic: false,
            uniform: 8,
            window: None,
        };
        let traj = flat_trajectory(2, 32, 0.0125, &policy);
        let lat = traj.lat();
        let center = lat.encode(&[16, 16, 0, 0]);
        let k = forward_kernel(&traj, center, 0.0, 0.01).unwrap();
        let fit = gaussian_bound_fit(&k, 0.01).unwrap();
        // The lattice symbol exceeds the continuum one by exp(k^4 dx^2 t/12),
        // tilting the exponent upward by roughly W dx^2/(12 t_eff) of itself
        // over a window of depth W; at this resolution that is about 0.19.
        assert!(
            (fit.d_fit - 4.0).abs() <= 0.2,
            "flat exponent {:.4}",
            fit.d_fit
        );
        let c_true = 1.0 / (4.0 * PI);
        assert!(
            fit.c_fit >= 0.8 * c_true && fit.c_fit <= 1.6 * c_true,
            "flat amplitude {:.4e} vs {:.4e}",
            fit.c_fit,
            c_true
        );
        assert!(fit.residual <= 0.15, "fit residual {:.3e}", fit.residual);
        let tail = fit.tail.expect("tail ladder");
        assert!(
            (tail.d2 - 4.0).abs() <= 0.5,
            "tail exponent {:.4}",
            tail.d2
        );

        // Mass fraction outside 4 sqrt(tau): the 2-D Gaussian tail at the
        // surrogate-compensated time, exp(-4 tau / tau_eff).
        let tau = 0.01f64;
        let tau_eff = tau + 0.5 * lat.dx() * lat.dx();
        let predicted = (-4.0 * tau / tau_eff).exp();
        let measured = 1.0 - mass_within(&k, k.len() - 1, 4.0 * tau.sqrt());
        assert!(
            (measured - predicted).abs() <= 4e-3,
            "tail fraction {measured:.4e} vs predicted {predicted:.4e}"
        );
    }

    #[test]
    fn perturbed_fit_stays_in_the_bilipschitz_band() {
        let lat = Lattice::new(3, 16, 2.0).unwrap();
        let m0 = MetricField::new(conformal_h(lat, 0.05)).unwrap();
        let policy = StorePolicy {
            dyadic: false,
            uniform: 8,
            window: None,
        };
        let traj = evolve(&m0, 0.01, &policy, 0.25).unwrap();
        let center = lat.encode(&[8, 8, 8, 0]);
        let k = forward_kernel(&traj, center, 0.0, 0.01).unwrap();
        let fit = gaussian_bound_fit(&k, 0.01).unwrap();
        assert!(
            fit.d_fit >= 4.0 / 1.2 && fit.d_fit <= 4.0 * 1.2,
            "perturbed exponent {:.4}",
            fit.d_fit
        );
    }

    #[test]
    fn flat_backward_kernel_matches_reversed_heat_flow() {
        let t1 = 0.0625;
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: Some(KernelWindow { t1, count: 768 }),
        };
        let traj = flat_trajectory(2, 32, t1, &policy);
        let lat = traj.lat();
        let center = lat.encode(&[16, 16, 0, 0]);
        let k = backward_kernel(&traj, center, t1).unwrap();
        assert!(k.min_value() >= -1e-12);
        for probe in [t1 / 16.0, t1 / 2.0] {
            let idx = k.nearest_slice(probe);
            let t = k.times()[idx];
            let reference =
                lattice_heat_reference(&lat, k.value(k.len() - 1), t1 - t);
            let defect = k.value(idx).sup_diff(&reference);
            // 5e-6 is the second-order time error of the march at this
            // subdivision; the kernel peak is about 2.4.
            assert!(
                defect <= 5e-6,
                "backward defect {defect:.3e} at t = {t:.4e}"
            );
        }

        // Gaussian profile late in the window, where tau = t1 - t is small.
        let fit = gaussian_bound_fit(&k, 0.75 * t1).unwrap();
        assert!(
            fit.d_fit >= 4.0 / 1.2 && fit.d_fit <= 4.0 * 1.2,
            "backward profile exponent {:.4}",
            fit.d_fit
        );

        // Flat geometry: R = 0 exactly, so the pairing vanishes identically
        // and the measured c0 is zero.
        let curve = pairing_curve(&traj, &k).unwrap();
        for &(_, v) in &curve.rows {
            assert!(v.abs() <= 1e-14, "flat pairing {v:.3e}");
        }
        assert_eq!(curve.monotonicity_defect, 0.0);
        assert!(curve.base_average.abs() <= 1e-14);
        assert_eq!(measured_c0(&traj).unwrap(), 0.0);

        // Backward spreading: the sup decreases toward earlier times, so the
        // c0 = 0 bound curve is trivially bounded by its latest entry.
        let bound = backward_bound_curve(&k, 0.0);
        assert!(!bound.is_empty());
        for w in bound.windows(2) {
            assert!(w[0].1 <= w[1].1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn pairing_is_monotone_on_a_conformal_run() {
        let lat = Lattice::new(3, 16, 2.0).unwrap();
        let m0 = MetricField::new(conformal_h(lat, 0.05)).unwrap();
        let t1 = 0.02;
        let policy = StorePolicy {
            dyadic: false,
            uniform: 8,
            window: Some(KernelWindow { t1, count: 64 }),
        };
        let traj = evolve(&m0, t1, &policy, 0.25).unwrap();
        let center = lat.encode(&[8, 8, 8, 0]);
        let k = backward_kernel(&traj, center, t1).unwrap();
        let curve = pairing_curve(&traj, &k).unwrap();
        let scale = curve
            .rows
            .iter()
            .map(|r| r.1.abs())
            .fold(0.0f64, f64::max);
        assert!(
            curve.monotonicity_defect <= 0.1 * scale + 1e-12,
            "defect {:.3e} vs scale {:.3e}",
            curve.monotonicity_defect,
            scale
        );
        assert!(
            (curve.final_value - curve.base_average).abs() <= 1e-10 * (1.0 + scale),
            "final {:.6e} vs base average {:.6e}",
            curve.final_value,
            curve.base_average
        );
    }

    #[test]
    fn duality_defect_is_first_order_in_the_source_shift() {
        let lat = Lattice::new(2, 32, 2.0).unwrap();
        let m0 = MetricField::new(conformal_h(lat, 0.05)).unwrap();
        let policy = StorePolicy {
            dyadic: false,
            uniform: 16,
            window: None,
        };
        let traj = evolve(&m0, 0.02, &policy, 0.25).unwrap();
        let ell = lat.extent();
        let phi = Field::from_fn_scalar(lat, |p| {
            (2.0 * PI * p[0] / ell).sin() + 0.5 * (2.0 * PI * (p[0] + p[1]) / ell).cos()
        });
        let ds = 4.0 * traj.dt0;
        let center = lat.encode(&[16, 16, 0, 0]);
        let defect = duality_audit(&traj, center, 0.0, ds, 0.02, &phi).unwrap();
        let lap = fd_laplacian(&phi).unwrap();
        let mut dphi = Field::scalar(lat);
        let mut grad_sup = 0.0f64;
        for a in 0..lat.n() {
            crate::lattice::fd_derivative_into(&phi, &mut dphi, a);
            grad_sup = grad_sup.max(dphi.sup_norm());
        }
        let bound = 3.0 * ds * (lap.sup_norm() + grad_sup);
        assert!(
            defect <= bound,
            "duality defect {defect:.3e} exceeds first-order bound {bound:.3e}"
        );
        assert!(defect > 0.0);
    }

    #[test]
    fn preconditions_are_enforced() {
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: None,
        };
        let traj = flat_trajectory(2, 16, 0.0625, &policy);
        let lat = traj.lat();
        let center = lat.encode(&[8, 8, 0, 0]);
        assert!(forward_kernel(&traj, center, 0.03, 0.01).is_err());
        assert!(forward_kernel(&traj, lat.nodes(), 0.0, 0.01).is_err());

        // No dense window stored: the earliest window slice is missing.
        assert!(backward_kernel(&traj, center, 0.0625).is_err());

        // Offset below 16 steps.
        let k = forward_kernel(&traj, center, 0.0, 0.002).unwrap();
        let err = gaussian_bound_fit(&k, 1e-4);
        assert!(err.is_err());
    }

    #[test]
    fn near_uniform_slice_has_no_fittable_range() {
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: None,
        };
        let traj = flat_trajectory(2, 8, 0.3, &policy);
        let lat = traj.lat();
        let center = lat.encode(&[4, 4, 0, 0]);
        let k = forward_kernel(&traj, center, 0.0, 0.3).unwrap();
        match gaussian_bound_fit(&k, 0.3) {
            Err(Error::DegenerateFit { .. }) => {}
            other => panic!("expected degenerate fit, got {other:?}"),
        }
    }

    #[test]
    fn surrogate_has_unit_mass_and_nyquist_safe_width() {
        let lat = Lattice::new(3, 16, 2.0).unwrap();
        let vol = Field::from_fn_scalar(lat, |_| 1.0);
        let node = lat.encode(&[8, 8, 8, 0]);
        let u = dirac_surrogate(&lat, node, &vol);
        let dxn = lat.dx().powi(3);
        let mass: f64 = u.data().iter().sum::<f64>() * dxn;
        assert!((mass - 1.0).abs() <= 1e-12);
        let mut ix = [8usize; MAX_N];
        ix[3] = 0;
        let peak = u.get(lat.encode(&ix), 0);
        ix[0] = 9;
        let next = u.get(lat.encode(&ix), 0);
        assert!((next / peak - (-0.5f64).exp()).abs() <= 1e-12);
    }
}
