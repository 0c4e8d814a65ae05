//! Scenario runner and the verification suite: pointwise and ball-infimum
//! scalar-curvature checks, the spatial deficit-envelope regression,
//! derivative boundedness and decay ladders, kernel pairing, tolerances
//! calibrated from a half-resolution companion run, and deterministic
//! report plus CSV/SVG artifact emission.

use crate::config::{CheckName, Config, InitialKind};
use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::flow::{evolve, KernelWindow, StorePolicy, Trajectory};
use crate::geometry::{scalar_curvature, MetricField};
use crate::kernels::{backward_kernel, pairing_curve, PairingCurve};
use crate::lattice::{fd_derivative_into, Field, Lattice, MAX_N};
use crate::report::{csv_encode, CheckRecord, EnvInfo, EstimateReport, Plot, Series};
use crate::singular::{anchors, generate_metric, SingularSpec, ValidityReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::path::{Path, PathBuf};

/// Below this multiple of dx^2 lattice mollification dominates; asymptotic
/// statements are gated above it.
pub const T_RESOLVE_FACTOR: f64 = 64.0;
/// Smallest-reliable-time multiple of dx^2 for liminf proxies.
pub const T_RELIABLE_FACTOR: f64 = 16.0;
/// Derivative ladders are resolved once the smoothing width clears a node.
pub const T_DERIV_FACTOR: f64 = 4.0;
/// Safety multiple on the fitted scheme-order tolerance model.
pub const TOL_SAFETY: f64 = 3.0;
/// Minimum admissible growth exponent for a bounded derivative ladder.
pub const CK_EXPONENT_FLOOR: f64 = -0.1;
/// Pass band for the rough-data first-derivative decay slope.
pub const DERIV_SLOPE_BAND: (f64, f64) = (-0.7, -0.3);
/// Default ball-growth prefactors for the ball-infimum check.
pub const C_LADDER_DEFAULT: [f64; 3] = [1.0, 2.0, 4.0];

const ANCHOR_MAX_PRINCIPLE: &str = "scalar/max-principle";
const ANCHOR_GLOBAL_NNSC: &str = "scalar/global-nnsc";
const ANCHOR_BETA_WEAK: &str = "scalar/beta-weak";
const ANCHOR_SPATIAL: &str = "scalar/spatial-lower-bound";
const ANCHOR_CK: &str = "smooth/ck-bounds";
const ANCHOR_DERIV: &str = "smooth/derivative-decay";
const ANCHOR_PAIRING: &str = "kernel/pairing-monotonicity";

/// Where checks read their scalar field from. The injected variants exist
/// for negative controls: deliberately violated hypotheses that the checks
/// must detect.
#[derive(Clone, Debug)]
pub enum ScalarSource {
    /// Scalar curvature of the slice metric.
    Metric,
    /// Curvature forced down to `floor` on a ball.
    FlooredBall {
        center: [f64; MAX_N],
        radius: f64,
        floor: f64,
    },
    /// Curvature minus a decaying off-center sink
    /// amp * exp(-rate t) * exp(-d(x, center)^2 / width2).
    TransientSink {
        center: [f64; MAX_N],
        width2: f64,
        amp: f64,
        rate: f64,
    },
}

impl ScalarSource {
    pub fn field(&self, m: &MetricField, t: f64) -> Result<Field> {
        let mut r = scalar_curvature(m)?;
        let lat = m.lat();
        match self {
            ScalarSource::Metric => {}
            ScalarSource::FlooredBall {
                center,
                radius,
                floor,
            } => {
                for node in 0..lat.nodes() {
                    if lat.dist2(&lat.position(node), center) < radius * radius {
                        let v = r.get(node, 0).min(*floor);
                        r.set(node, 0, v);
                    }
                }
            }
            ScalarSource::TransientSink {
                center,
                width2,
                amp,
                rate,
            } => {
                let scale = amp * (-rate * t).exp();
                for node in 0..lat.nodes() {
                    let d2 = lat.dist2(&lat.position(node), center);
                    let v = r.get(node, 0) - scale * (-d2 / width2).exp();
                    r.set(node, 0, v);
                }
            }
        }
        Ok(r)
    }

    fn note(&self) -> Option<String> {
        match self {
            ScalarSource::Metric => None,
            ScalarSource::FlooredBall { floor, radius, .. } => Some(format!(
                "injected scalar floor {floor:.3e} on a ball of radius {radius:.3e}"
            )),
            ScalarSource::TransientSink { amp, rate, .. } => Some(format!(
                "injected transient sink amp {amp:.3e} rate {rate:.3e}"
            )),
        }
    }
}

/// Grid tolerance from the scheme-order model C (dx^2 + dt); C is fitted
/// from a half-resolution companion when one is available and floored at
/// the model's unit scale.
#[derive(Clone, Debug)]
pub struct GridTol {
    pub tol: f64,
    pub c_model: f64,
    pub fitted: bool,
    pub note: String,
}

pub fn grid_tolerance(
    q_fine: Option<f64>,
    q_coarse: Option<f64>,
    model_fine: f64,
    model_coarse: f64,
) -> GridTol {
    if let (Some(a), Some(b)) = (q_fine, q_coarse) {
        if model_coarse > model_fine * (1.0 + 1e-12) {
            let c_raw = (a - b).abs() / (model_coarse - model_fine);
            let c = c_raw.clamp(1.0, 1e6);
            return GridTol {
                tol: TOL_SAFETY * c * model_fine,
                c_model: c,
                fitted: true,
                note: format!(
                    "scheme-order model fitted from companion: c_raw={c_raw:.3e} q_fine={a:.3e} q_coarse={b:.3e}"
                ),
            };
        }
    }
    GridTol {
        tol: TOL_SAFETY * model_fine,
        c_model: 1.0,
        fitted: false,
        note: "companion unavailable; scheme-order unit floor".into(),
    }
}

impl GridTol {
    pub fn floor(model_fine: f64) -> GridTol {
        grid_tolerance(None, None, model_fine, model_fine)
    }

    fn base_constants(&self) -> Vec<(String, f64)> {
        vec![
            ("tol_grid".into(), self.tol),
            ("c_model".into(), self.c_model),
        ]
    }
}

/// Min-image distance from every node to the nearest anchor; infinite when
/// the anchor set is empty.
pub fn anchor_distances(lat: Lattice, points: &[[f64; MAX_N]]) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; lat.nodes()];
    for (node, slot) in d.iter_mut().enumerate() {
        let p = lat.position(node);
        for a in points {
            let dd = lat.dist2(&p, a);
            if dd < *slot * *slot || slot.is_infinite() {
                *slot = slot.min(dd.sqrt());
            }
        }
    }
    d
}

fn stored_indices_in(traj: &Trajectory, lo: f64, hi: f64) -> Vec<usize> {
    (0..traj.len())
        .filter(|&k| {
            let t = traj.times()[k];
            t >= lo - 1e-12 && t <= hi * (1.0 + 1e-12)
        })
        .collect()
}

/// Evenly subsample indices keeping both endpoints.
fn subsample(idxs: &[usize], cap: usize) -> Vec<usize> {
    if idxs.len() <= cap || cap < 2 {
        return idxs.to_vec();
    }
    let mut out = Vec::with_capacity(cap);
    for k in 0..cap {
        let pos = k * (idxs.len() - 1) / (cap - 1);
        out.push(idxs[pos]);
    }
    out.dedup();
    out
}

fn field_min(f: &Field) -> f64 {
    f.data().iter().fold(f64::INFINITY, |m, v| m.min(*v))
}

/// Worst gated negative excursion of min R: the raw quantity behind the
/// tolerance model fit (0 for nonnegative-curvature runs).
pub fn scenario_quantity(traj: &Trajectory, gate: f64) -> Result<Option<f64>> {
    let idxs = stored_indices_in(traj, gate, traj.horizon());
    if idxs.is_empty() {
        return Ok(None);
    }
    let mut q = 0.0f64;
    for &k in &subsample(&idxs, 8) {
        let m = MetricField::new(traj.slice(k).clone())?;
        let r = scalar_curvature(&m)?;
        q = q.min(field_min(&r));
    }
    Ok(Some(q.min(0.0)))
}

/// Pointwise-in-time scalar lower bound: min R(g_t) >= -n/(2t) - tol on
/// every resolved stored slice.
pub fn check_max_principle(
    traj: &Trajectory,
    source: &ScalarSource,
    gtol: &GridTol,
) -> Result<CheckRecord> {
    let lat = traj.lat();
    let n = lat.n() as f64;
    let gate = T_RESOLVE_FACTOR * lat.dx() * lat.dx();
    let idxs = stored_indices_in(traj, gate, traj.horizon());
    let mut notes = Vec::new();
    if let Some(s) = source.note() {
        notes.push(s);
    }
    let mut constants = gtol.base_constants();
    let (pass, margin) = if idxs.is_empty() {
        notes.push(format!(
            "no stored slice at or above the resolved-time gate {gate:.3e}; vacuous"
        ));
        (true, 0.0)
    } else {
        let mut worst = f64::INFINITY;
        let mut worst_t = 0.0;
        for &k in &subsample(&idxs, 16) {
            let t = traj.times()[k];
            let m = MetricField::new(traj.slice(k).clone())?;
            let r = source.field(&m, t)?;
            let slack = field_min(&r) + n / (2.0 * t);
            if slack < worst {
                worst = slack;
                worst_t = t;
            }
        }
        constants.push(("worst_slack".into(), worst));
        constants.push(("worst_t".into(), worst_t));
        notes.push(format!("gated slices checked: {}", subsample(&idxs, 16).len()));
        (worst >= -gtol.tol, worst + gtol.tol)
    };
    Ok(CheckRecord {
        name: "max_principle".into(),
        anchor: ANCHOR_MAX_PRINCIPLE.into(),
        constants,
        tolerance: gtol.tol,
        margin,
        pass,
        notes,
    })
}

/// Global nonnegativity on resolved slices, plus the upward trend of
/// (min R) t. Runs with declared co-dimension exponent alpha <= 2 are
/// outside the hypothesis bookkeeping and recorded without assertion.
pub fn check_global_nnsc(
    traj: &Trajectory,
    alpha: Option<f64>,
    source: &ScalarSource,
    gtol: &GridTol,
) -> Result<CheckRecord> {
    let lat = traj.lat();
    let gate = T_RESOLVE_FACTOR * lat.dx() * lat.dx();
    let idxs = stored_indices_in(traj, gate, traj.horizon());
    let mut notes = Vec::new();
    if let Some(s) = source.note() {
        notes.push(s);
    }
    let mut constants = gtol.base_constants();
    let asserted = alpha.map_or(true, |a| a > 2.0);
    if let Some(a) = alpha {
        constants.push(("alpha".into(), a));
        if !asserted {
            notes.push(
                "alpha <= 2: outside hypothesis bookkeeping; result recorded, not asserted".into(),
            );
        }
    }
    let (mut pass, margin) = if idxs.is_empty() {
        notes.push(format!(
            "no stored slice at or above the resolved-time gate {gate:.3e}; vacuous"
        ));
        (true, 0.0)
    } else {
        let picked = subsample(&idxs, 16);
        let mut series = Vec::with_capacity(picked.len());
        for &k in &picked {
            let t = traj.times()[k];
            let m = MetricField::new(traj.slice(k).clone())?;
            let r = source.field(&m, t)?;
            series.push((t, field_min(&r)));
        }
        let worst = series.iter().fold(f64::INFINITY, |m, &(_, v)| m.min(v));
        let s_first = series[0].0 * series[0].1;
        let s_last = series[series.len() - 1].0 * series[series.len() - 1].1;
        let uplift = s_last - s_first;
        constants.push(("min_r_worst".into(), worst));
        constants.push(("trend_first".into(), s_first));
        constants.push(("trend_last".into(), s_last));
        notes.push(format!("gated slices checked: {}", picked.len()));
        let pointwise = worst >= -gtol.tol;
        let trend = uplift >= -gtol.tol || s_last >= -gtol.tol;
        (pointwise && trend, worst + gtol.tol)
    };
    if !asserted {
        pass = true;
    }
    Ok(CheckRecord {
        name: "global_nnsc".into(),
        anchor: ANCHOR_GLOBAL_NNSC.into(),
        constants,
        tolerance: gtol.tol,
        margin,
        pass,
        notes,
    })
}

/// Default probe set: every corner of the half-box, at coordinates +-L/4.
pub fn default_probes(lat: Lattice) -> Vec<[f64; MAX_N]> {
    let n = lat.n();
    let q = lat.extent() / 4.0;
    (0..1usize << n)
        .map(|bits| {
            let mut p = [0.0; MAX_N];
            for (a, slot) in p.iter_mut().enumerate().take(n) {
                *slot = if bits & (1 << a) != 0 { q } else { -q };
            }
            p
        })
        .collect()
}

/// Ball-infimum proxy for the liminf condition: for each admissible probe x
/// and each prefactor C, inf of R over B(x, C t^beta) along the stored
/// ladder, recorded at the smallest reliable time.
#[allow(clippy::too_many_arguments)]
pub fn check_beta_weak(
    traj: &Trajectory,
    sing: &[[f64; MAX_N]],
    beta: f64,
    kappa0: f64,
    c_ladder: &[f64],
    probes: Option<&[[f64; MAX_N]]>,
    source: &ScalarSource,
    gtol: &GridTol,
) -> Result<CheckRecord> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::invalid("check_beta_weak", format!("beta {beta} outside (0, 1/2)")));
    }
    let lat = traj.lat();
    let mut notes = vec![
        "liminf proxy convention: ball infimum at the smallest stored time >= 16 dx^2".into(),
    ];
    if let Some(s) = source.note() {
        notes.push(s);
    }
    let all_probes: Vec<[f64; MAX_N]> = match probes {
        Some(p) => p.to_vec(),
        None => default_probes(lat),
    };
    let exclusion = (lat.extent() / 16.0).max(4.0 * lat.dx());
    let mut kept_probes = Vec::new();
    for (pi, p) in all_probes.iter().enumerate() {
        let d = sing
            .iter()
            .map(|a| lat.dist2(p, a).sqrt())
            .fold(f64::INFINITY, f64::min);
        if d < exclusion {
            notes.push(format!(
                "probe {pi} excluded: distance {d:.3e} to the singular set is below {exclusion:.3e}"
            ));
        } else {
            kept_probes.push(*p);
        }
    }
    let gate = T_RELIABLE_FACTOR * lat.dx() * lat.dx();
    let idxs = subsample(&stored_indices_in(traj, gate, traj.horizon()), 10);
    let mut constants = gtol.base_constants();
    constants.push(("beta".into(), beta));
    constants.push(("kappa0".into(), kappa0));

    if kept_probes.is_empty() || idxs.is_empty() {
        if idxs.is_empty() {
            notes.push(format!("no stored slice above the reliable gate {gate:.3e}; vacuous"));
        } else {
            notes.push("every probe excluded; vacuous".into());
        }
        return Ok(CheckRecord {
            name: "beta_weak".into(),
            anchor: ANCHOR_BETA_WEAK.into(),
            constants,
            tolerance: gtol.tol,
            margin: 0.0,
            pass: true,
            notes,
        });
    }

    // proxy[probe][c] = ball infimum at the smallest admissible time.
    let mut proxy = vec![vec![f64::INFINITY; c_ladder.len()]; kept_probes.len()];
    let mut proxy_set = vec![vec![false; c_ladder.len()]; kept_probes.len()];
    let mut skipped = 0usize;
    for &k in idxs.iter() {
        let t = traj.times()[k];
        let m = MetricField::new(traj.slice(k).clone())?;
        let r = source.field(&m, t)?;
        for (ci, &c) in c_ladder.iter().enumerate() {
            let radius = c * t.powf(beta);
            if radius > lat.extent() / 2.0 {
                skipped += 1;
                continue;
            }
            for (pi, p) in kept_probes.iter().enumerate() {
                if proxy_set[pi][ci] {
                    continue;
                }
                let mut inf = f64::INFINITY;
                for node in 0..lat.nodes() {
                    if lat.dist2(&lat.position(node), p) < radius * radius {
                        inf = inf.min(r.get(node, 0));
                    }
                }
                if inf.is_finite() {
                    proxy[pi][ci] = inf;
                    proxy_set[pi][ci] = true;
                } else {
                    skipped += 1;
                }
            }
        }
    }
    if skipped > 0 {
        notes.push(format!("(C, t) pairs skipped (ball outside the box or empty): {skipped}"));
    }
    let mut proxy_min = f64::INFINITY;
    let mut evaluated = 0usize;
    for pi in 0..kept_probes.len() {
        for ci in 0..c_ladder.len() {
            if proxy_set[pi][ci] {
                evaluated += 1;
                proxy_min = proxy_min.min(proxy[pi][ci]);
            }
        }
    }
    notes.push(format!(
        "probes {} x prefactors {}: proxies evaluated {evaluated}",
        kept_probes.len(),
        c_ladder.len()
    ));
    let (pass, margin) = if evaluated == 0 {
        notes.push("every (probe, C) pair skipped; vacuous".into());
        (true, 0.0)
    } else {
        constants.push(("proxy_min".into(), proxy_min));
        let slack = proxy_min - (kappa0 - gtol.tol);
        (slack >= 0.0, slack)
    };
    Ok(CheckRecord {
        name: "beta_weak".into(),
        anchor: ANCHOR_BETA_WEAK.into(),
        constants,
        tolerance: gtol.tol,
        margin,
        pass,
        notes,
    })
}

fn spatial_inner(
    traj: &Trajectory,
    sing: &[[f64; MAX_N]],
    beta: f64,
    kappa0: f64,
    eta: f64,
    source: &ScalarSource,
    gtol: &GridTol,
) -> Result<(CheckRecord, Vec<(f64, f64, f64)>)> {
    if !(eta > 0.0 && eta <= (1.0 - 2.0 * beta) / 2.0 + 1e-12) {
        return Err(Error::invalid(
            "check_spatial_lower_bound",
            format!("eta {eta} outside (0, (1 - 2 beta)/2]"),
        ));
    }
    let lat = traj.lat();
    let dx = lat.dx();
    let mut notes = Vec::new();
    if let Some(s) = source.note() {
        notes.push(s);
    }
    let mut constants = gtol.base_constants();
    constants.push(("beta".into(), beta));
    constants.push(("eta".into(), eta));

    // Shell annuli stay inside the quarter box minus a stencil margin so
    // the periodic construction's far-field taper cannot leak in; times
    // stay early, while deficits are alive.
    let rho_cap = lat.extent() / 4.0 - 2.0 * dx;
    let mut shells = Vec::new();
    let mut rho = 2.0 * dx;
    while rho < rho_cap - 1e-12 {
        shells.push((rho, (2.0 * rho).min(rho_cap)));
        rho *= 2.0;
    }
    let lo = T_RELIABLE_FACTOR * traj.dt0;
    let hi = (T_DERIV_FACTOR * dx * dx).min(traj.horizon());
    let idxs = subsample(&stored_indices_in(traj, lo, hi), 8);

    let mut table = Vec::new();
    let vacuous = |notes: Vec<String>, constants: Vec<(String, f64)>, table: Vec<(f64, f64, f64)>| {
        Ok((
            CheckRecord {
                name: "spatial_lower_bound".into(),
                anchor: ANCHOR_SPATIAL.into(),
                constants,
                tolerance: gtol.tol,
                margin: 0.0,
                pass: true,
                notes,
            },
            table,
        ))
    };
    if sing.is_empty() || shells.is_empty() || idxs.len() < 3 {
        notes.push("no singular set, shells, or early stored times; deficit undefined; vacuous".into());
        return vacuous(notes, constants, table);
    }
    let d = anchor_distances(lat, sing);
    let mut pairs_x = Vec::new();
    let mut pairs_y = Vec::new();
    let mut zero_pairs = 0usize;
    let mut c_bar = f64::INFINITY;
    for &k in &idxs {
        let t = traj.times()[k];
        let m = MetricField::new(traj.slice(k).clone())?;
        let r = source.field(&m, t)?;
        for &(rho, outer) in &shells {
            let mut min_r = f64::INFINITY;
            for node in 0..lat.nodes() {
                if d[node] >= rho && d[node] < outer {
                    min_r = min_r.min(r.get(node, 0));
                }
            }
            if !min_r.is_finite() {
                continue;
            }
            let deficit = (kappa0 - min_r).max(0.0);
            table.push((rho, t, deficit));
            if deficit > 1e-12 {
                c_bar = c_bar.min(rho / t.powf(eta));
                pairs_x.push(rho * rho / t.powf(1.0 - 2.0 * beta));
                pairs_y.push((t * deficit).ln());
            } else {
                zero_pairs += 1;
            }
        }
    }
    notes.push(format!(
        "deficit pairs: {} positive, {zero_pairs} zero, over {} shells x {} times",
        pairs_x.len(),
        shells.len(),
        idxs.len()
    ));
    if pairs_x.is_empty() {
        notes.push("deficit identically zero; vacuous pass".into());
        return vacuous(notes, constants, table);
    }
    constants.push(("c_bar".into(), c_bar));
    notes.push("c_bar fitted as the largest gate threshold admitting every observed pair".into());
    if pairs_x.len() < 2 {
        notes.push("single deficit pair; envelope not fittable; recorded without assertion".into());
        return vacuous(notes, constants, table);
    }
    let fit = fit_line(&pairs_x, &pairs_y)?;
    let mut max_resid = f64::NEG_INFINITY;
    for (x, y) in pairs_x.iter().zip(&pairs_y) {
        max_resid = max_resid.max(y - (fit.intercept + fit.slope * x));
    }
    constants.push(("slope".into(), fit.slope));
    constants.push(("rms".into(), fit.rms));
    constants.push(("pairs".into(), pairs_x.len() as f64));
    let pass = fit.slope < 0.0;
    if pass {
        constants.push(("d_bar".into(), -1.0 / fit.slope));
        constants.push(("c_env".into(), (fit.intercept + max_resid).exp()));
        notes.push("envelope t deficit <= c_env exp(-x / d_bar) holds at every pair by construction".into());
    }
    Ok((
        CheckRecord {
            name: "spatial_lower_bound".into(),
            anchor: ANCHOR_SPATIAL.into(),
            constants,
            tolerance: gtol.tol,
            margin: -fit.slope,
            pass,
            notes,
        },
        table,
    ))
}

/// Deficit-envelope regression: over dyadic shells around the singular set
/// and early stored times, fit log(t deficit) against rho^2 / t^(1 - 2 beta)
/// and demand a negative slope with a single bounding envelope.
pub fn check_spatial_lower_bound(
    traj: &Trajectory,
    sing: &[[f64; MAX_N]],
    beta: f64,
    kappa0: f64,
    eta: f64,
    source: &ScalarSource,
    gtol: &GridTol,
) -> Result<CheckRecord> {
    spatial_inner(traj, sing, beta, kappa0, eta, source, gtol).map(|(rec, _)| rec)
}

fn far_corner(lat: Lattice) -> [f64; MAX_N] {
    lat.position(0)
}

fn ball_mask(lat: Lattice, center: &[f64; MAX_N], radius: f64) -> Vec<bool> {
    (0..lat.nodes())
        .map(|node| lat.dist2(&lat.position(node), center) < radius * radius)
        .collect()
}

/// Sup over the masked region of all iterated centered differences of
/// depth k (every axis multiset enumerated once).
pub fn region_derivative_sup(f: &Field, mask: Option<&[bool]>, k: usize) -> f64 {
    let lat = f.lat();
    let n = lat.n();
    let mut level: Vec<(Field, usize)> = vec![(f.clone(), 0)];
    for _ in 0..k {
        let mut next = Vec::new();
        for (g, first) in &level {
            for a in *first..n {
                let mut d = Field::zeros(lat, g.comps());
                fd_derivative_into(g, &mut d, a);
                next.push((d, a));
            }
        }
        level = next;
    }
    let mut sup = 0.0f64;
    for (g, _) in &level {
        match mask {
            None => sup = sup.max(g.sup_norm()),
            Some(m) => {
                for node in 0..lat.nodes() {
                    if m[node] {
                        for c in 0..g.comps() {
                            sup = sup.max(g.get(node, c).abs());
                        }
                    }
                }
            }
        }
    }
    sup
}

/// Derivative boundedness over a region far from the singular set: the
/// fitted growth exponent of sup |grad^k h| toward t -> 0 must clear the
/// floor, and grad^k (g_t - g_0) must shrink as t decreases to the
/// resolved floor.
pub fn check_ck_bounds(
    traj: &Trajectory,
    sing: &[[f64; MAX_N]],
    k: usize,
    gtol: &GridTol,
) -> Result<CheckRecord> {
    if k == 0 || k > 4 {
        return Err(Error::invalid("check_ck_bounds", format!("order {k} outside 1..=4")));
    }
    let lat = traj.lat();
    let radius = lat.extent() / 8.0;
    let center = far_corner(lat);
    for a in sing {
        let d = lat.dist2(&center, a).sqrt();
        if d < 2.0 * radius {
            return Err(Error::invalid(
                "check_ck_bounds",
                format!("region ball intersects the singular tube: anchor at distance {d:.3e}"),
            ));
        }
    }
    let mask = ball_mask(lat, &center, radius);
    let mut notes = Vec::new();
    let mut constants = gtol.base_constants();
    constants.push(("order".into(), k as f64));

    // The growth fit anchors at the earliest stored rungs: that is where
    // blow-up toward t -> 0 would show. Late times only see equilibration.
    let idxs: Vec<usize> = stored_indices_in(traj, T_DERIV_FACTOR * traj.dt0, traj.horizon())
        .into_iter()
        .take(8)
        .collect();
    let mut ts = Vec::new();
    let mut sups = Vec::new();
    for &i in &idxs {
        let s = region_derivative_sup(traj.slice(i), Some(&mask), k);
        ts.push(traj.times()[i]);
        sups.push(s);
    }
    let peak = sups.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut pass_growth = true;
    let mut margin = 0.0;
    let kept: Vec<(f64, f64)> = ts
        .iter()
        .zip(&sups)
        .filter(|&(_, s)| *s > 1e-9 * peak)
        .map(|(t, s)| (*t, *s))
        .collect();
    if peak < 1e-250 || kept.len() < 3 {
        notes.push("derivative ladder identically zero or too short; growth fit vacuous".into());
        constants.push(("sup_peak".into(), peak));
    } else {
        let xs: Vec<f64> = kept.iter().map(|(t, _)| t.ln()).collect();
        let ys: Vec<f64> = kept.iter().map(|(_, s)| s.ln()).collect();
        let fit = fit_line(&xs, &ys)?;
        constants.push(("growth_exponent".into(), fit.slope));
        constants.push(("sup_peak".into(), peak));
        pass_growth = fit.slope >= CK_EXPONENT_FLOOR - 1e-9;
        margin = fit.slope - CK_EXPONENT_FLOOR;
    }

    // Local convergence: the distance to the initial metric in the same
    // seminorm must be smaller at the resolved floor than at horizon/4.
    let gate = T_RESOLVE_FACTOR * lat.dx() * lat.dx();
    let floor_idx = (0..traj.len()).find(|&i| traj.times()[i] >= gate);
    let ref_t = traj.horizon() / 4.0;
    let ref_idx = (0..traj.len()).min_by(|&a, &b| {
        (traj.times()[a] - ref_t)
            .abs()
            .partial_cmp(&(traj.times()[b] - ref_t).abs())
            .unwrap()
    });
    let mut pass_conv = true;
    match (floor_idx, ref_idx) {
        (Some(fi), Some(ri)) if traj.times()[ri] > traj.times()[fi] * 1.05 => {
            let mut da = traj.slice(fi).clone();
            da.axpy(-1.0, traj.slice(0));
            let mut db = traj.slice(ri).clone();
            db.axpy(-1.0, traj.slice(0));
            let d_floor = region_derivative_sup(&da, Some(&mask), k);
            let d_ref = region_derivative_sup(&db, Some(&mask), k);
            constants.push(("dist_floor".into(), d_floor));
            constants.push(("dist_ref".into(), d_ref));
            pass_conv = d_floor <= d_ref * 1.05 + 1e-14;
        }
        _ => {
            notes.push(
                "convergence pair degenerate (horizon/4 at or below the resolved floor); skipped"
                    .into(),
            );
        }
    }
    Ok(CheckRecord {
        name: "ck_bounds".into(),
        anchor: ANCHOR_CK.into(),
        constants,
        tolerance: -CK_EXPONENT_FLOOR,
        margin,
        pass: pass_growth && pass_conv,
        notes,
    })
}

/// First-derivative decay of rough data: fitted log-log slope of
/// sup |grad h_t| over the decade [4 dx^2, 40 dx^2].
pub fn check_derivative_decay(traj: &Trajectory, gtol: &GridTol) -> Result<CheckRecord> {
    let lat = traj.lat();
    let lo = T_DERIV_FACTOR * lat.dx() * lat.dx();
    let hi = 10.0 * lo;
    let idxs = subsample(&stored_indices_in(traj, lo, hi), 12);
    let mut notes = vec![format!(
        "window [{lo:.3e}, {hi:.3e}]: one decade above the derivative-resolved floor"
    )];
    let mut constants = gtol.base_constants();
    constants.push(("window_lo".into(), lo));
    constants.push(("window_hi".into(), hi));
    let mut ts = Vec::new();
    let mut sups = Vec::new();
    for &i in &idxs {
        ts.push(traj.times()[i]);
        sups.push(region_derivative_sup(traj.slice(i), None, 1));
    }
    let peak = sups.iter().fold(0.0f64, |m, v| m.max(*v));
    if peak < 1e-250 || ts.len() < 4 {
        notes.push("gradient identically zero or window underfilled; vacuous".into());
        return Ok(CheckRecord {
            name: "derivative_decay".into(),
            anchor: ANCHOR_DERIV.into(),
            constants,
            tolerance: 0.2,
            margin: 0.0,
            pass: true,
            notes,
        });
    }
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = sups.iter().map(|s| s.max(1e-300).ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    constants.push(("slope".into(), fit.slope));
    constants.push(("points".into(), ts.len() as f64));
    let (lo_b, hi_b) = DERIV_SLOPE_BAND;
    let margin = (fit.slope - lo_b).min(hi_b - fit.slope);
    Ok(CheckRecord {
        name: "derivative_decay".into(),
        anchor: ANCHOR_DERIV.into(),
        constants,
        tolerance: 0.2,
        margin,
        pass: margin >= 0.0,
        notes,
    })
}

fn pairing_inner(traj: &Trajectory, t1: f64, gtol: &GridTol) -> Result<(CheckRecord, PairingCurve)> {
    let lat = traj.lat();
    let mut idx = [0usize; MAX_N];
    for a in idx.iter_mut().take(lat.n()) {
        *a = lat.res() / 2;
    }
    let center = lat.encode(&idx);
    let kernel = backward_kernel(traj, center, t1)?;
    let curve = pairing_curve(traj, &kernel)?;
    let earliest = curve.rows.first().map(|r| r.1).unwrap_or(0.0);
    let mut constants = gtol.base_constants();
    constants.push(("monotonicity_defect".into(), curve.monotonicity_defect));
    constants.push(("earliest_value".into(), earliest));
    constants.push(("final_value".into(), curve.final_value));
    constants.push(("base_average".into(), curve.base_average));
    let pass = curve.monotonicity_defect <= gtol.tol && earliest >= -gtol.tol;
    let margin = (gtol.tol - curve.monotonicity_defect).min(earliest + gtol.tol);
    let rec = CheckRecord {
        name: "pairing".into(),
        anchor: ANCHOR_PAIRING.into(),
        constants,
        tolerance: gtol.tol,
        margin,
        pass,
        notes: vec![format!("backward kernel base at the domain center, t1 = {t1:.6e}")],
    };
    Ok((rec, curve))
}

/// Pairing monotonicity: the integral of R u dg along a backward kernel
/// never drops by more than the grid tolerance between stored slices, and
/// its earliest value clears -tol.
pub fn check_pairing(traj: &Trajectory, t1: f64, gtol: &GridTol) -> Result<CheckRecord> {
    pairing_inner(traj, t1, gtol).map(|(rec, _)| rec)
}

/// Uniform i.i.d. components rescaled to the requested sup norm.
pub fn noise_metric(lat: Lattice, amplitude: f64, seed: u64) -> Result<MetricField> {
    let nc = lat.n() * (lat.n() + 1) / 2;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut h = Field::zeros(lat, nc);
    for node in 0..lat.nodes() {
        for c in 0..nc {
            h.set(node, c, rng.gen_range(-1.0..=1.0));
        }
    }
    let sup = h.sup_norm();
    if sup > 0.0 {
        h.scale(amplitude / sup);
    }
    MetricField::new(h)
}

/// Conformal dip u = 1 - a exp(-d^2 / (2 w^2)), w = L/8: scalar curvature
/// is strictly negative on the blob (negative control).
pub fn bump_metric(lat: Lattice, amplitude: f64) -> Result<MetricField> {
    let n = lat.n();
    if n < 3 {
        return Err(Error::invalid("bump_metric", "conformal family needs n >= 3"));
    }
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::invalid("bump_metric", format!("amplitude {amplitude} outside [0, 1)")));
    }
    let w = lat.extent() / 8.0;
    let center = [0.0f64; MAX_N];
    let expo = 4.0 / (n as f64 - 2.0);
    let nc = n * (n + 1) / 2;
    let h = Field::from_fn(lat, nc, |p, c| {
        let (i, j) = crate::lattice::sym_pair(n, c);
        if i != j {
            return 0.0;
        }
        let d2 = {
            let mut s = 0.0;
            for a in 0..n {
                let mut d = p[a] - center[a];
                let ell = lat.extent();
                d -= ell * (d / ell).round();
                s += d * d;
            }
            s
        };
        let u = 1.0 - amplitude * (-d2 / (2.0 * w * w)).exp();
        u.powf(expo) - 1.0
    });
    MetricField::new(h)
}

/// Initial data of a scenario: the metric, the singular anchor proxy, the
/// generator validity report when one exists, and the declared co-dimension
/// exponent.
type InitialData = (
    MetricField,
    Vec<[f64; MAX_N]>,
    Option<ValidityReport>,
    Option<f64>,
);

pub fn initial_metric(cfg: &Config, lat: Lattice, seed: u64) -> Result<InitialData> {
    let a = cfg.initial.amplitude;
    match cfg.initial.kind {
        InitialKind::Flat => Ok((MetricField::flat(lat), Vec::new(), None, None)),
        InitialKind::Noise => Ok((noise_metric(lat, a, seed)?, Vec::new(), None, None)),
        InitialKind::Bump => Ok((bump_metric(lat, a)?, vec![[0.0; MAX_N]], None, None)),
        InitialKind::Point | InitialKind::Segment | InitialKind::Dust => {
            let spec = match cfg.initial.kind {
                InitialKind::Point => SingularSpec::point(a),
                InitialKind::Segment => SingularSpec::segment(a),
                _ => SingularSpec::dust(a, cfg.initial.depth),
            };
            let provisional = 4.0 * lat.dx() * lat.dx();
            let (m, report) = generate_metric(&spec, lat, cfg.initial.eps_bar, provisional)?;
            let pts = anchors(&spec.kind, lat.extent(), lat.dx());
            let alpha = report.alpha;
            Ok((m, pts, Some(report), Some(alpha)))
        }
    }
}

/// Kind-appropriate default check set; an explicit config list wins.
pub fn effective_checks(cfg: &Config) -> Vec<CheckName> {
    if !cfg.checks.run.is_empty() {
        return cfg.checks.run.clone();
    }
    let mut list = match cfg.initial.kind {
        InitialKind::Flat => vec![
            CheckName::MaxPrinciple,
            CheckName::GlobalNnsc,
            CheckName::CkBounds,
        ],
        InitialKind::Noise => vec![CheckName::MaxPrinciple, CheckName::DerivativeDecay],
        InitialKind::Bump => vec![CheckName::GlobalNnsc],
        _ => vec![
            CheckName::MaxPrinciple,
            CheckName::GlobalNnsc,
            CheckName::BetaWeak,
            CheckName::SpatialLowerBound,
            CheckName::CkBounds,
        ],
    };
    if cfg.flow.kernel_t1.is_some() && !list.contains(&CheckName::Pairing) {
        list.push(CheckName::Pairing);
    }
    list
}

#[derive(Debug)]
pub struct ScenarioOutput {
    pub report: EstimateReport,
    pub text: String,
    pub artifacts: Vec<PathBuf>,
    pub trajectory: Trajectory,
}

fn write_artifact(
    dir: &Path,
    name: &str,
    content: &str,
    artifacts: &mut Vec<PathBuf>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    artifacts.push(path);
    Ok(())
}

fn fmt_rows(rows: Vec<Vec<f64>>, header: &[&str]) -> Vec<Vec<String>> {
    let mut out = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for row in rows {
        out.push(row.iter().map(|v| format!("{v:.6e}")).collect());
    }
    out
}

/// End-to-end pipeline: initial metric, evolution, half-resolution
/// tolerance companion, selected checks, artifacts, deterministic report.
pub fn run_scenario(
    cfg: &Config,
    out_dir: &Path,
    deterministic: bool,
    seed_override: Option<u64>,
) -> Result<ScenarioOutput> {
    let start = std::time::Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let lat = Lattice::new(cfg.lattice.n, cfg.lattice.res, cfg.lattice.extent)?;
    let seed = seed_override.unwrap_or(cfg.initial.seed);
    let (m0, sing, validity, alpha) = initial_metric(cfg, lat, seed)?;
    let policy = StorePolicy {
        dyadic: cfg.flow.dyadic,
        uniform: cfg.flow.uniform,
        window: cfg.flow.kernel_t1.map(|t1| KernelWindow {
            t1,
            count: cfg.flow.kernel_count,
        }),
    };
    let traj = evolve(&m0, cfg.flow.horizon, &policy, cfg.flow.sigma)?;

    // Half-resolution companion for the tolerance model.
    let mut extras: Vec<(String, String)> = Vec::new();
    let gtol = {
        let res_c = cfg.lattice.res / 2;
        let companion = if cfg.lattice.res % 2 == 0 && res_c >= 8 {
            (|| -> Result<Trajectory> {
                let lat_c = Lattice::new(cfg.lattice.n, res_c, cfg.lattice.extent)?;
                let (m0_c, _, _, _) = initial_metric(cfg, lat_c, seed)?;
                let policy_c = StorePolicy {
                    window: None,
                    ..policy.clone()
                };
                evolve(&m0_c, cfg.flow.horizon, &policy_c, cfg.flow.sigma)
            })()
            .ok()
        } else {
            None
        };
        match companion {
            Some(tc) => {
                let gate = T_RESOLVE_FACTOR * tc.lat().dx() * tc.lat().dx();
                let qf = scenario_quantity(&traj, gate)?;
                let qc = scenario_quantity(&tc, gate)?;
                let mut g = grid_tolerance(
                    qf,
                    qc,
                    lat.dx() * lat.dx() + traj.dt0,
                    tc.lat().dx() * tc.lat().dx() + tc.dt0,
                );
                if !g.fitted {
                    g.note = "companion gated window empty; scheme-order unit floor".into();
                }
                g
            }
            None => GridTol::floor(lat.dx() * lat.dx() + traj.dt0),
        }
    };
    extras.push(("tolerance_model".into(), gtol.note.clone()));
    extras.push(("initial_kind".into(), cfg.initial.kind.label().into()));
    extras.push(("amplitude".into(), format!("{:.6e}", cfg.initial.amplitude)));
    if let Some(v) = &validity {
        extras.push(("eps_measured".into(), format!("{:.6e}", v.eps_measured)));
        extras.push(("min_r_off_tube".into(), format!("{:.6e}", v.min_r_off_tube)));
        extras.push(("min_r_taper_band".into(), format!("{:.6e}", v.min_r_taper_band)));
        extras.push(("alpha".into(), format!("{:.6e}", v.alpha)));
        extras.push((
            "bilipschitz".into(),
            format!("[{:.6e}, {:.6e}]", v.bilipschitz.0, v.bilipschitz.1),
        ));
        extras.push(("eps_pass".into(), format!("{}", v.eps_pass)));
    }

    let source = match cfg.checks.inject_floor {
        None => ScalarSource::Metric,
        Some(floor) => {
            let mut center = [0.0; MAX_N];
            for slot in center.iter_mut().take(cfg.lattice.n) {
                *slot = cfg.lattice.extent / 4.0;
            }
            ScalarSource::FlooredBall {
                center,
                radius: cfg.lattice.extent / 8.0,
                floor,
            }
        }
    };

    let beta = cfg.checks.beta;
    let kappa0 = cfg.checks.kappa0;
    let eta = cfg.eta();
    let mut checks = Vec::new();
    let mut deficit_table = None;
    let mut pairing_data = None;
    for name in effective_checks(cfg) {
        let outcome = match name {
            CheckName::MaxPrinciple => check_max_principle(&traj, &source, &gtol),
            CheckName::GlobalNnsc => check_global_nnsc(&traj, alpha, &source, &gtol),
            CheckName::BetaWeak => check_beta_weak(
                &traj,
                &sing,
                beta,
                kappa0,
                &C_LADDER_DEFAULT,
                None,
                &source,
                &gtol,
            ),
            CheckName::SpatialLowerBound => {
                spatial_inner(&traj, &sing, beta, kappa0, eta, &source, &gtol).map(|(rec, table)| {
                    deficit_table = Some(table);
                    rec
                })
            }
            CheckName::CkBounds => check_ck_bounds(&traj, &sing, cfg.checks.ck_order, &gtol),
            CheckName::DerivativeDecay => check_derivative_decay(&traj, &gtol),
            CheckName::Pairing => match cfg.flow.kernel_t1 {
                Some(t1) => pairing_inner(&traj, t1, &gtol).map(|(rec, curve)| {
                    pairing_data = Some(curve);
                    rec
                }),
                None => Err(Error::invalid(
                    "check_pairing",
                    "pairing needs a kernel storage window (flow.kernel_t1)",
                )),
            },
        };
        match outcome {
            Ok(rec) => checks.push(rec),
            Err(e) => checks.push(CheckRecord {
                name: name.label().into(),
                anchor: "runner/check-error".into(),
                constants: Vec::new(),
                tolerance: 0.0,
                margin: f64::NEG_INFINITY,
                pass: false,
                notes: vec![format!("check errored: {e}")],
            }),
        }
    }

    let mut artifacts = Vec::new();
    if cfg.output.csv || cfg.output.svg {
        // min R ladder over a bounded subsample of stored slices.
        let idxs = subsample(&(0..traj.len()).collect::<Vec<_>>(), 48);
        let mut rows = Vec::new();
        for &k in &idxs {
            let t = traj.times()[k];
            if !(t > 0.0) {
                continue;
            }
            let m = MetricField::new(traj.slice(k).clone())?;
            let r = source.field(&m, t)?;
            let mn = field_min(&r);
            rows.push(vec![t, mn, mn * t]);
        }
        let min_r_series = Series {
            label: "min R".into(),
            points: rows.iter().map(|r| (r[0], r[1])).collect(),
        };
        let trend_series = Series {
            label: "min R * t".into(),
            points: rows.iter().map(|r| (r[0], r[2])).collect(),
        };
        if cfg.output.csv {
            let table = fmt_rows(rows, &["t", "min_r", "min_r_times_t"]);
            write_artifact(out_dir, "min_r.csv", &csv_encode(&table), &mut artifacts)?;
        }
        if cfg.output.svg {
            let plot = Plot {
                title: "scalar floor along the flow".into(),
                x_label: "t".into(),
                y_label: "min R".into(),
                series: vec![min_r_series, trend_series],
            };
            write_artifact(out_dir, "min_r.svg", &plot.svg(), &mut artifacts)?;
        }

        // Derivative sups over the same ladder, thinned further.
        let idxs = subsample(&(0..traj.len()).collect::<Vec<_>>(), 12);
        let mut rows = Vec::new();
        for &k in &idxs {
            let t = traj.times()[k];
            if !(t > 0.0) {
                continue;
            }
            let mut row = vec![t];
            for order in 1..=4usize {
                row.push(region_derivative_sup(traj.slice(k), None, order));
            }
            rows.push(row);
        }
        if cfg.output.csv {
            let table = fmt_rows(rows.clone(), &["t", "grad1", "grad2", "grad3", "grad4"]);
            write_artifact(
                out_dir,
                "derivative_decay.csv",
                &csv_encode(&table),
                &mut artifacts,
            )?;
        }
        if cfg.output.svg {
            let series = (1..=4usize)
                .map(|order| Series {
                    label: format!("sup |grad^{order} h|"),
                    points: rows.iter().map(|r| (r[0], r[order])).collect(),
                })
                .collect();
            let plot = Plot {
                title: "derivative sups along the flow".into(),
                x_label: "t".into(),
                y_label: "sup".into(),
                series,
            };
            write_artifact(out_dir, "derivative_decay.svg", &plot.svg(), &mut artifacts)?;
        }

        if let Some(table) = &deficit_table {
            if cfg.output.csv {
                let rows = fmt_rows(
                    table.iter().map(|&(r, t, d)| vec![r, t, d]).collect(),
                    &["rho", "t", "deficit"],
                );
                write_artifact(out_dir, "deficit.csv", &csv_encode(&rows), &mut artifacts)?;
            }
            if cfg.output.svg {
                // One series per shell radius, deficit vs time.
                let mut shells: Vec<f64> = table.iter().map(|r| r.0).collect();
                shells.sort_by(|a, b| a.partial_cmp(b).unwrap());
                shells.dedup();
                let series = shells
                    .iter()
                    .map(|&rho| Series {
                        label: format!("rho = {rho:.3e}"),
                        points: table
                            .iter()
                            .filter(|r| r.0 == rho)
                            .map(|&(_, t, d)| (t, d))
                            .collect(),
                    })
                    .collect();
                let plot = Plot {
                    title: "shell deficit vs time".into(),
                    x_label: "t".into(),
                    y_label: "deficit".into(),
                    series,
                };
                write_artifact(out_dir, "deficit.svg", &plot.svg(), &mut artifacts)?;
            }
        }

        if let Some(curve) = &pairing_data {
            if cfg.output.csv {
                let rows = fmt_rows(
                    curve.rows.iter().map(|&(t, v)| vec![t, v]).collect(),
                    &["t", "pairing"],
                );
                write_artifact(out_dir, "pairing.csv", &csv_encode(&rows), &mut artifacts)?;
            }
            if cfg.output.svg {
                let plot = Plot {
                    title: "kernel pairing along the flow".into(),
                    x_label: "t".into(),
                    y_label: "integral of R u dg".into(),
                    series: vec![Series {
                        label: "pairing".into(),
                        points: curve.rows.clone(),
                    }],
                };
                write_artifact(out_dir, "pairing.svg", &plot.svg(), &mut artifacts)?;
            }
        }
    }

    let report = EstimateReport {
        scenario: cfg.scenario_id(),
        env: EnvInfo {
            n: cfg.lattice.n,
            res: cfg.lattice.res,
            extent: cfg.lattice.extent,
            dx: lat.dx(),
            dt0: traj.dt0,
            steps: traj.steps,
            horizon: cfg.flow.horizon,
            seed: (cfg.initial.kind == InitialKind::Noise).then_some(seed),
            deterministic,
            extras,
        },
        checks,
        runtime_seconds: Some(start.elapsed().as_secs_f64()),
    };
    let text = report.render()?;
    let path = out_dir.join("report.txt");
    std::fs::write(&path, &text)?;
    artifacts.push(path);
    Ok(ScenarioOutput {
        report,
        text,
        artifacts,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("rdtf-harness-{}-{tag}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    fn flat_traj(n: usize, res: usize, extent: f64, horizon: f64, uniform: usize) -> Trajectory {
        let lat = Lattice::new(n, res, extent).unwrap();
        let m0 = MetricField::flat(lat);
        let policy = StorePolicy {
            dyadic: true,
            uniform,
            window: None,
        };
        evolve(&m0, horizon, &policy, crate::flow::CFL_SIGMA).unwrap()
    }

    #[test]
    fn grid_tolerance_fits_and_falls_back() {
        let g = grid_tolerance(Some(-0.01), Some(-0.05), 1e-3, 5e-3);
        assert!(g.fitted);
        let c_expected: f64 = 0.04 / 4e-3;
        assert!((g.c_model - c_expected).abs() < 1e-12);
        assert!((g.tol - TOL_SAFETY * c_expected * 1e-3).abs() < 1e-12);
        // Sub-unit fitted constants are floored at the model scale.
        let g = grid_tolerance(Some(-0.001), Some(-0.0011), 1e-3, 5e-3);
        assert!(g.fitted && g.c_model == 1.0);
        let g = grid_tolerance(Some(-0.01), None, 1e-3, 5e-3);
        assert!(!g.fitted && g.c_model == 1.0 && (g.tol - TOL_SAFETY * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn flat_scenario_is_deterministic_and_all_checks_pass() {
        let text = "\
[lattice]
n = 3
res = 8
extent = 1.0
[initial]
kind = flat
[flow]
horizon = 1.1
uniform = 16
";
        let cfg = parse_config(text).unwrap();
        let d1 = temp_dir("flat-a");
        let d2 = temp_dir("flat-b");
        let a = run_scenario(&cfg, &d1, true, None).unwrap();
        let b = run_scenario(&cfg, &d2, true, None).unwrap();
        assert_eq!(a.text, b.text, "deterministic reports differ");
        assert!(a.report.passed(), "flat report failed:\n{}", a.text);
        assert!(a.text.contains("check max_principle"));
        assert!(a.text.contains("check global_nnsc"));
        assert!(a.text.contains("check ck_bounds"));
        assert!(a.text.contains("verdict: PASS"));
        assert!(!a.text.contains("runtime-seconds"));
        for name in ["report.txt", "min_r.csv", "min_r.svg", "derivative_decay.csv"] {
            assert!(d1.join(name).is_file(), "missing artifact {name}");
        }
        let csv_a = std::fs::read(d1.join("min_r.csv")).unwrap();
        let csv_b = std::fs::read(d2.join("min_r.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
        let _ = std::fs::remove_dir_all(&d1);
        let _ = std::fs::remove_dir_all(&d2);
    }

    #[test]
    fn injected_floor_fails_pointwise_and_global_checks_on_flat_data() {
        // L = 1: the resolved gate sits at 64 dx^2 = 1 and by t ~ 3.4 the
        // heat bound -n/(2t) rises above the injected floor -0.5.
        let traj = flat_traj(3, 8, 1.0, 4.0, 32);
        let lat = traj.lat();
        let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
        let mut center = [0.0; MAX_N];
        center[0] = 0.25;
        let floored = ScalarSource::FlooredBall {
            center,
            radius: 0.2,
            floor: -0.5,
        };
        let clean_mp = check_max_principle(&traj, &ScalarSource::Metric, &gtol).unwrap();
        assert!(clean_mp.pass);
        let mp = check_max_principle(&traj, &floored, &gtol).unwrap();
        assert!(!mp.pass, "floored max principle passed: {mp:?}");
        assert!(mp.constant("worst_slack").unwrap() < -0.05);
        let clean_nnsc = check_global_nnsc(&traj, None, &ScalarSource::Metric, &gtol).unwrap();
        assert!(clean_nnsc.pass);
        let nnsc = check_global_nnsc(&traj, None, &floored, &gtol).unwrap();
        assert!(!nnsc.pass);
        assert!((nnsc.constant("min_r_worst").unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn injected_floor_fails_the_ball_infimum_check_and_skips_wide_balls() {
        // Roomy box so the smallest prefactor ball fits: C t^beta ~ 1.15
        // against L/2 = 2. The tolerance is pinned at a fine-grid scale;
        // the coarse box's own model would swamp the injected floor.
        let traj = flat_traj(3, 8, 4.0, 4.2, 16);
        let gtol = GridTol::floor(0.01);
        let mut center = [0.0; MAX_N];
        for a in center.iter_mut().take(3) {
            *a = 1.0;
        }
        let floored = ScalarSource::FlooredBall {
            center,
            radius: 0.5,
            floor: -0.5,
        };
        let clean = check_beta_weak(
            &traj,
            &[],
            0.1,
            0.0,
            &C_LADDER_DEFAULT,
            None,
            &ScalarSource::Metric,
            &gtol,
        )
        .unwrap();
        assert!(clean.pass);
        assert!(
            clean.notes.iter().any(|s| s.contains("skipped")),
            "no skip note in {:?}",
            clean.notes
        );
        let rec = check_beta_weak(
            &traj,
            &[],
            0.1,
            0.0,
            &C_LADDER_DEFAULT,
            None,
            &floored,
            &gtol,
        )
        .unwrap();
        assert!(!rec.pass, "floored ball infimum passed: {rec:?}");
        assert!((rec.constant("proxy_min").unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn probe_on_the_singular_set_is_excluded_not_failed() {
        let traj = flat_traj(3, 8, 4.0, 4.2, 16);
        let lat = traj.lat();
        let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
        let mut probe = [0.0; MAX_N];
        probe[0] = 1.0;
        // The singular set sits exactly at the only probe.
        let rec = check_beta_weak(
            &traj,
            &[probe],
            0.1,
            0.0,
            &C_LADDER_DEFAULT,
            Some(&[probe]),
            &ScalarSource::Metric,
            &gtol,
        )
        .unwrap();
        assert!(rec.pass);
        assert!(
            rec.notes.iter().any(|s| s.contains("probe 0 excluded")),
            "no exclusion note in {:?}",
            rec.notes
        );
    }

    #[test]
    fn transient_sink_turns_the_deficit_envelope_inside_out() {
        // A sink decaying much faster than 1/t makes ln(t deficit) increase
        // along rho^2/t^(1-2 beta), so the fitted envelope slope turns
        // positive. res 24 leaves one shell inside the quarter-box cap.
        let traj = flat_traj(3, 24, 2.0, 0.05, 4);
        let gtol = GridTol::floor(0.01);
        let origin = [[0.0; MAX_N]];
        let mut center = [0.0; MAX_N];
        center[0] = 0.25;
        let sink = ScalarSource::TransientSink {
            center,
            width2: 0.01,
            amp: 0.5,
            rate: 600.0,
        };
        let clean =
            check_spatial_lower_bound(&traj, &origin, 0.1, 0.0, 0.4, &ScalarSource::Metric, &gtol)
                .unwrap();
        assert!(clean.pass);
        assert!(
            clean.notes.iter().any(|s| s.contains("identically zero")),
            "flat run should be vacuous: {:?}",
            clean.notes
        );
        let rec = check_spatial_lower_bound(&traj, &origin, 0.1, 0.0, 0.4, &sink, &gtol).unwrap();
        assert!(!rec.pass, "sink envelope passed: {rec:?}");
        assert!(rec.constant("slope").unwrap() > 0.0);
        assert!(rec.constant("pairs").unwrap() >= 3.0);
    }

    #[test]
    fn eta_above_the_admissible_band_is_rejected() {
        let traj = flat_traj(3, 8, 1.0, 0.1, 4);
        let gtol = GridTol::floor(0.01);
        let r = check_spatial_lower_bound(
            &traj,
            &[],
            0.1,
            0.0,
            0.45,
            &ScalarSource::Metric,
            &gtol,
        );
        assert!(matches!(r, Err(Error::Invalid { .. })));
    }

    #[test]
    fn smooth_mode_has_bounded_derivatives_but_no_rough_decay() {
        // Single low mode: derivative sups are flat in t (exponent ~ -mu t,
        // small over this window), so the boundedness check passes and the
        // rough-data decay band check fails.
        let lat = Lattice::new(3, 12, 2.0 * std::f64::consts::PI).unwrap();
        let h = Field::from_fn(lat, 6, |p, c| {
            let (i, j) = crate::lattice::sym_pair(3, c);
            if i == j {
                0.04 * p[0].sin()
            } else {
                0.0
            }
        });
        let m0 = MetricField::new(h).unwrap();
        let policy = StorePolicy {
            dyadic: false,
            uniform: 16,
            window: None,
        };
        let traj = evolve(&m0, 0.08, &policy, crate::flow::CFL_SIGMA).unwrap();
        let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
        let ck = check_ck_bounds(&traj, &[], 2, &gtol).unwrap();
        assert!(ck.pass, "smooth ck failed: {ck:?}");
        let expo = ck.constant("growth_exponent").unwrap();
        assert!(
            (-0.1..=0.05).contains(&expo),
            "smooth growth exponent {expo}"
        );
        assert!(
            ck.notes.iter().any(|s| s.contains("degenerate")),
            "short horizon should skip the convergence pair: {:?}",
            ck.notes
        );
        // Region rejection: an anchor at the far corner overlaps the ball.
        let corner = lat.position(0);
        assert!(matches!(
            check_ck_bounds(&traj, &[corner], 2, &gtol),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn synthetic_slow_power_ladder_passes_both_ck_clauses() {
        // h_t = (1 + t)^(-0.05) h_0 on a coarse box with long times: the
        // growth exponent is ~ -0.05 t/(1+t) and the distance to h_0 in the
        // seminorm shrinks toward the resolved floor.
        let lat = Lattice::new(3, 8, 4.0).unwrap();
        // Cosine phase keeps the mode's second difference nonzero at the
        // far-corner region.
        let h0 = Field::from_fn(lat, 6, |p, c| {
            let (i, j) = crate::lattice::sym_pair(3, c);
            if i == j {
                0.05 * (std::f64::consts::PI * p[0] / 2.0).cos()
            } else {
                0.0
            }
        });
        let times: Vec<f64> = (1..=48).map(|k| k as f64 * 2.0).collect();
        let slices: Vec<Field> = times
            .iter()
            .map(|t| {
                let mut f = h0.clone();
                f.scale((1.0 + t).powf(-0.05));
                f
            })
            .collect();
        let traj = Trajectory::from_slices(lat, times, slices).unwrap();
        // Resolved floor 64 dx^2 = 16 < horizon/4 = 24: the convergence
        // pair is active.
        let gtol = GridTol::floor(0.01);
        let ck = check_ck_bounds(&traj, &[], 2, &gtol).unwrap();
        assert!(ck.pass, "synthetic ladder failed: {ck:?}");
        let d_floor = ck.constant("dist_floor").unwrap();
        let d_ref = ck.constant("dist_ref").unwrap();
        assert!(d_floor < d_ref && d_floor > 0.0);
    }

    #[test]
    fn noise_metric_is_seed_deterministic_with_exact_amplitude() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let a = noise_metric(lat, 0.05, 7).unwrap();
        let b = noise_metric(lat, 0.05, 7).unwrap();
        assert!(a.h().bit_identical(b.h()));
        let c = noise_metric(lat, 0.05, 8).unwrap();
        assert!(!a.h().bit_identical(c.h()));
        assert!((a.h().sup_norm() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rough_noise_fails_the_boundedness_check_by_design() {
        // Rough data has |grad h| ~ t^(-1/2): the ck boundedness fit must
        // detect the growth toward t -> 0 and fail.
        let lat = Lattice::new(3, 12, 2.0).unwrap();
        let m0 = noise_metric(lat, 0.05, 11).unwrap();
        let policy = StorePolicy {
            dyadic: true,
            uniform: 24,
            window: None,
        };
        let traj = evolve(&m0, 0.1, &policy, crate::flow::CFL_SIGMA).unwrap();
        let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
        let ck = check_ck_bounds(&traj, &[], 1, &gtol).unwrap();
        assert!(!ck.pass, "noise ck passed: {ck:?}");
        assert!(ck.constant("growth_exponent").unwrap() < -0.25);
    }

    #[test]
    fn flat_kernel_window_pairing_is_exactly_zero() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let m0 = MetricField::flat(lat);
        let policy = StorePolicy {
            dyadic: false,
            uniform: 4,
            window: Some(KernelWindow {
                t1: 0.03,
                count: 16,
            }),
        };
        let traj = evolve(&m0, 0.0625, &policy, crate::flow::CFL_SIGMA).unwrap();
        let gtol = GridTol::floor(lat.dx() * lat.dx() + traj.dt0);
        let rec = check_pairing(&traj, 0.03, &gtol).unwrap();
        assert!(rec.pass, "flat pairing failed: {rec:?}");
        assert_eq!(rec.constant("monotonicity_defect").unwrap(), 0.0);
        assert!(rec.constant("earliest_value").unwrap().abs() < 1e-14);
    }

    #[test]
    fn point_scenario_pipeline_passes_and_reports_validity() {
        let text = "\
[lattice]
n = 3
res = 16
extent = 2.0
[initial]
kind = point
amplitude = 0.01
[flow]
horizon = 1.05
uniform = 24
[output]
svg = false
";
        let cfg = parse_config(text).unwrap();
        let dir = temp_dir("point");
        let out = run_scenario(&cfg, &dir, true, None).unwrap();
        assert!(out.report.passed(), "point scenario failed:\n{}", out.text);
        for name in [
            "max_principle",
            "global_nnsc",
            "beta_weak",
            "spatial_lower_bound",
            "ck_bounds",
        ] {
            assert!(out.report.check(name).is_some(), "missing check {name}");
        }
        assert!(out.text.contains("env eps_measured"));
        // The profile scale 4 dx exceeds the taper start at res 8, so the
        // companion falls back to the unit-scale tolerance floor.
        assert!(out.text.contains("scheme-order unit floor"));
        assert!(dir.join("deficit.csv").is_file());
        assert!(!dir.join("min_r.svg").exists());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn planar_flat_scenario_fits_the_companion_tolerance() {
        // n = 2 keeps the march cheap while the horizon clears the coarse
        // companion's resolved gate, exercising the fitted branch.
        let text = "\
[lattice]
n = 2
res = 16
extent = 1.0
[initial]
kind = flat
[flow]
horizon = 1.05
uniform = 8
[output]
csv = false
svg = false
";
        let cfg = parse_config(text).unwrap();
        let dir = temp_dir("flat-n2");
        let out = run_scenario(&cfg, &dir, true, None).unwrap();
        assert!(out.report.passed(), "planar flat failed:\n{}", out.text);
        assert!(
            out.text.contains("fitted from companion"),
            "companion fit missing:\n{}",
            out.text
        );
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn bump_scenario_carries_negative_curvature_initially() {
        let lat = Lattice::new(3, 12, 2.0).unwrap();
        let m = bump_metric(lat, 0.15).unwrap();
        let r = scalar_curvature(&m).unwrap();
        let mn = field_min(&r);
        assert!(mn < -1.0, "bump min R {mn} not strongly negative");
        assert!(bump_metric(lat, 1.2).is_err());
        let lat2 = Lattice::new(2, 12, 2.0).unwrap();
        assert!(bump_metric(lat2, 0.1).is_err());
    }

    #[test]
    fn default_check_sets_follow_the_initial_kind() {
        let base = "\
[lattice]
n = 3
res = 8
extent = 1.0
[initial]
kind = KIND
[flow]
horizon = 0.1
";
        let flat = parse_config(&base.replace("KIND", "flat")).unwrap();
        assert_eq!(
            effective_checks(&flat),
            vec![
                CheckName::MaxPrinciple,
                CheckName::GlobalNnsc,
                CheckName::CkBounds
            ]
        );
        let noise = parse_config(&base.replace("KIND", "noise")).unwrap();
        assert_eq!(
            effective_checks(&noise),
            vec![CheckName::MaxPrinciple, CheckName::DerivativeDecay]
        );
        let bump = parse_config(&base.replace("KIND", "bump")).unwrap();
        assert_eq!(effective_checks(&bump), vec![CheckName::GlobalNnsc]);
        let point = parse_config(&base.replace("KIND", "point")).unwrap();
        assert_eq!(effective_checks(&point).len(), 5);
        let explicit = parse_config(
            &base
                .replace("KIND", "point")
                .replace("[flow]", "[checks]\nrun = max_principle\n[flow]"),
        )
        .unwrap();
        assert_eq!(effective_checks(&explicit), vec![CheckName::MaxPrinciple]);
        let windowed = parse_config(
            &base
                .replace("KIND", "point")
                .replace("horizon = 0.1", "horizon = 0.1\nkernel_t1 = 0.05\nkernel_count = 8"),
        )
        .unwrap();
        assert!(effective_checks(&windowed).contains(&CheckName::Pairing));
    }
}
