//! Rough initial metrics with a prescribed singular set: capped conformal
//! Green profiles u = 1 + a sum_p min(M, (r0/d)^(n-2)) tapered to flat in the
//! far field, plus Minkowski content and dimension estimation of point-set
//! proxies at grid resolution.

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::geometry::{metric_min_eig, scalar_curvature, sup_spectral, MetricField};
use crate::lattice::{fd_laplacian, sym_index, Field, Lattice, MAX_N};

/// Taper band: the profile ramps to flat between these fractions of the
/// extent, measured from the domain center.
pub const TAPER_INNER_FRACTION: f64 = 0.25;
pub const TAPER_OUTER_FRACTION: f64 = 0.375;
/// The conformal cap flattens the profile inside this many cells, so the
/// non-smooth cap locus stays inside the grid-scale singular tube.
pub const CAP_RADIUS_CELLS: f64 = 2.0;
/// Nominal dimension of the planar Cantor cross product, 2 log 2 / log 3.
pub const DUST_DIMENSION: f64 = 1.2618595071429148;

#[derive(Clone, Debug)]
pub enum SingularKind {
    /// Single anchor at the domain center.
    Point,
    /// Axis-0 segment of length L/4 centered in the box: the alpha = 2
    /// boundary case, outside the n = 3 compact-set hypotheses.
    Segment,
    /// Depth-d planar Cantor midpoint construction crossed with itself,
    /// 2^(2d) anchors in the central cross-section plane.
    Dust { depth: usize },
    Custom(Vec<[f64; MAX_N]>),
}

#[derive(Clone, Debug)]
pub struct SingularSpec {
    pub kind: SingularKind,
    /// Profile amplitude a >= 0.
    pub amplitude: f64,
    /// Profile scale r0 in units of dx.
    pub profile_cells: f64,
    /// Conformal cap; default (r0/(2dx))^(n-2) puts the cap sphere at
    /// radius exactly 2dx.
    pub cap: Option<f64>,
}

impl SingularSpec {
    pub fn point(amplitude: f64) -> SingularSpec {
        SingularSpec {
            kind: SingularKind::Point,
            amplitude,
            profile_cells: 4.0,
            cap: None,
        }
    }

    pub fn segment(amplitude: f64) -> SingularSpec {
        SingularSpec {
            kind: SingularKind::Segment,
            ..SingularSpec::point(amplitude)
        }
    }

    pub fn dust(amplitude: f64, depth: usize) -> SingularSpec {
        SingularSpec {
            kind: SingularKind::Dust { depth },
            ..SingularSpec::point(amplitude)
        }
    }
}

/// Numerically measured hypotheses of the generated metric; pass flags are
/// computed, never assumed.
#[derive(Clone, Debug)]
pub struct ValidityReport {
    /// sup-spectral norm of g - delta.
    pub eps_measured: f64,
    /// min R outside the 3dx tube of the singular locus and outside the
    /// taper band plus a 2dx stencil margin (the band is reported separately
    /// below). Dominated by the profile-truncation spike at the tube edge,
    /// which scales like amplitude / dx^2 because the profile scale r0 is
    /// tied to the grid.
    pub min_r_off_tube: f64,
    /// min R inside the taper band alone, where the ramp can push the
    /// profile off superharmonicity.
    pub min_r_taper_band: f64,
    /// (min, max) metric eigenvalue over all nodes.
    pub bilipschitz: (f64, f64),
    /// Declared co-dimension exponent: singular set has dimension n - alpha.
    pub alpha: f64,
    /// max discrete Laplacian of u off the tube and inside the taper-free
    /// core (superharmonicity up to truncation error).
    pub superharmonic_defect: f64,
    pub eps_pass: bool,
    pub nnsc_pass: bool,
}

/// Midpoints of the depth-d Cantor intervals on [lo, hi] (outer thirds kept).
fn cantor_midpoints(lo: f64, hi: f64, depth: usize) -> Vec<f64> {
    let mut ivs = vec![(lo, hi)];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(ivs.len() * 2);
        for (a, b) in ivs {
            let third = (b - a) / 3.0;
            next.push((a, a + third));
            next.push((b - third, b));
        }
        ivs = next;
    }
    ivs.iter().map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Anchor positions for a singular kind on a box of extent `ell`
/// (coordinates in [-L/2, L/2), center at the origin); every anchor lies in
/// the central box of side L/2. `spacing` sets the sample gap along the
/// segment and is ignored by the other kinds.
pub fn anchors(kind: &SingularKind, ell: f64, spacing: f64) -> Vec<[f64; MAX_N]> {
    match kind {
        SingularKind::Point => vec![[0.0; MAX_N]],
        SingularKind::Segment => {
            let len = 0.25 * ell;
            let count = (len / spacing).round() as usize;
            (0..=count)
                .map(|i| {
                    let mut p = [0.0; MAX_N];
                    p[0] = -0.5 * len + i as f64 * len / count as f64;
                    p
                })
                .collect()
        }
        SingularKind::Dust { depth } => {
            let line = cantor_midpoints(-0.25 * ell, 0.25 * ell, *depth);
            let mut pts = Vec::with_capacity(line.len() * line.len());
            for &x in &line {
                for &y in &line {
                    let mut p = [0.0; MAX_N];
                    p[0] = x;
                    p[1] = y;
                    pts.push(p);
                }
            }
            pts
        }
        SingularKind::Custom(pts) => pts.clone(),
    }
}

/// RFC-style CSV export of anchor coordinates, one point per row.
pub fn anchors_csv(points: &[[f64; MAX_N]], n: usize) -> String {
    let mut s = String::new();
    for a in 0..n {
        if a > 0 {
            s.push(',');
        }
        s.push_str(&format!("x{a}"));
    }
    s.push('\n');
    for p in points {
        for (a, pa) in p.iter().enumerate().take(n) {
            if a > 0 {
                s.push(',');
            }
            s.push_str(&format!("{pa:.6e}"));
        }
        s.push('\n');
    }
    s
}

fn snap_to_node(lat: &Lattice, p: &[f64; MAX_N]) -> usize {
    let res = lat.res();
    let dx = lat.dx();
    let half = 0.5 * lat.extent();
    let mut ix = [0usize; MAX_N];
    for (a, i) in ix.iter_mut().enumerate().take(lat.n()) {
        let k = ((p[a] + half) / dx).round() as i64;
        *i = k.rem_euclid(res as i64) as usize;
    }
    lat.encode(&ix)
}

fn declared_alpha(kind: &SingularKind, n: usize) -> f64 {
    match kind {
        SingularKind::Point | SingularKind::Custom(_) => n as f64,
        SingularKind::Segment => n as f64 - 1.0,
        SingularKind::Dust { .. } => n as f64 - DUST_DIMENSION,
    }
}

/// Quintic ramp: 1 inside the taper band, 0 outside, two continuous
/// derivatives across both edges.
fn taper(d: f64, ell: f64) -> f64 {
    let lo = TAPER_INNER_FRACTION * ell;
    let hi = TAPER_OUTER_FRACTION * ell;
    if d <= lo {
        1.0
    } else if d >= hi {
        0.0
    } else {
        let x = (d - lo) / (hi - lo);
        1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    }
}

/// Conformal NNSC-off-singular-set metric g = u^(4/(n-2)) delta from capped
/// Green profiles at the spec anchors, with the validity hypotheses measured
/// on the grid. `eps_bar` and `tol_grid` are the configured thresholds the
/// pass flags are judged against.
pub fn generate_metric(
    spec: &SingularSpec,
    lat: Lattice,
    eps_bar: f64,
    tol_grid: f64,
) -> Result<(MetricField, ValidityReport)> {
    let n = lat.n();
    if n < 3 {
        return Err(Error::invalid(
            "generate_metric",
            "conformal singular family needs n >= 3",
        ));
    }
    if !(spec.amplitude >= 0.0 && spec.amplitude.is_finite()) {
        return Err(Error::invalid("generate_metric", "amplitude must be >= 0"));
    }
    if !(spec.profile_cells > 0.0) {
        return Err(Error::invalid("generate_metric", "profile scale must be > 0"));
    }
    let ell = lat.extent();
    let dx = lat.dx();
    let r0 = spec.profile_cells * dx;
    let cap_radius = CAP_RADIUS_CELLS * dx;
    let m_cap = spec
        .cap
        .unwrap_or_else(|| (r0 / cap_radius).powi(n as i32 - 2));
    if !(m_cap > 0.0) {
        return Err(Error::invalid("generate_metric", "cap must be positive"));
    }

    let raw = anchors(&spec.kind, ell, dx);
    if raw.is_empty() {
        return Err(Error::invalid("generate_metric", "no anchors"));
    }
    for p in &raw {
        for pa in p.iter().take(n) {
            if pa.abs() > 0.25 * ell + 1e-9 {
                return Err(Error::invalid(
                    "generate_metric",
                    "anchors must lie in the central box of side L/2",
                ));
            }
        }
    }
    let mut nodes: Vec<usize> = raw.iter().map(|p| snap_to_node(&lat, p)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let anchor_pos: Vec<[f64; MAX_N]> = nodes.iter().map(|&i| lat.position(i)).collect();

    let center = [0.0; MAX_N];
    let a = spec.amplitude;
    let expo = 4.0 / (n as f64 - 2.0);
    let mut u = Field::scalar(lat);
    let mut sing_d2 = vec![0.0f64; lat.nodes()];
    for node in 0..lat.nodes() {
        let p = lat.position(node);
        let mut sum = 0.0;
        let mut d2min = f64::INFINITY;
        for q in &anchor_pos {
            let d2 = lat.dist2(&p, q);
            d2min = d2min.min(d2);
            let d = d2.sqrt();
            sum += if d <= cap_radius {
                m_cap
            } else {
                m_cap.min((r0 / d).powi(n as i32 - 2))
            };
        }
        let dc = lat.dist2(&p, &center).sqrt();
        u.set(node, 0, 1.0 + taper(dc, ell) * a * sum);
        sing_d2[node] = d2min;
    }

    let nc = n * (n + 1) / 2;
    let mut h = Field::zeros(lat, nc);
    for node in 0..lat.nodes() {
        let w = u.get(node, 0).powf(expo) - 1.0;
        for i in 0..n {
            h.set(node, sym_index(n, i, i), w);
        }
    }
    let eps_measured = sup_spectral(&h);
    let metric = MetricField::new(h)?;
    let r = scalar_curvature(&metric)?;
    let lap_u = fd_laplacian(&u)?;

    // Tube: distance to anchors or to the cap sphere below 3dx. The taper
    // band is excluded with a 2dx margin so its stencil footprint does not
    // leak into the off-tube minimum; the band is reported on its own.
    let tube_r = 3.0 * dx;
    let mut min_r_off_tube = f64::INFINITY;
    let mut min_r_taper_band = f64::INFINITY;
    let mut superharmonic_defect = f64::NEG_INFINITY;
    let lo = TAPER_INNER_FRACTION * ell - 2.0 * dx;
    let hi = TAPER_OUTER_FRACTION * ell + 2.0 * dx;
    for node in 0..lat.nodes() {
        let d = sing_d2[node].sqrt();
        let in_tube = d < tube_r || (d - cap_radius).abs() < tube_r;
        let dc = lat.dist2(&lat.position(node), &center).sqrt();
        let rv = r.get(node, 0);
        let in_band = dc >= lo && dc <= hi;
        if !in_tube && !in_band {
            min_r_off_tube = min_r_off_tube.min(rv);
            if dc < lo {
                superharmonic_defect = superharmonic_defect.max(lap_u.get(node, 0));
            }
        }
        if in_band {
            min_r_taper_band = min_r_taper_band.min(rv);
        }
    }
    let bilipschitz = (metric_min_eig(&metric)?, 1.0 + eps_measured);
    let report = ValidityReport {
        eps_measured,
        min_r_off_tube,
        min_r_taper_band,
        bilipschitz,
        alpha: declared_alpha(&spec.kind, n),
        superharmonic_defect,
        eps_pass: eps_measured < eps_bar,
        nnsc_pass: min_r_off_tube >= -tol_grid,
    };
    Ok((metric, report))
}

/// Node mask of the open tube T(S, r) under the min-image metric, with its
/// Euclidean measure.
pub fn tube_mask(points: &[[f64; MAX_N]], r: f64, lat: Lattice) -> Result<(Vec<bool>, f64)> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::invalid("tube_mask", "radius must be finite and >= 0"));
    }
    if r >= 0.25 * lat.extent() {
        return Err(Error::RadiusTooLarge {
            r,
            max: 0.25 * lat.extent(),
        });
    }
    let r2 = r * r;
    let mut mask = vec![false; lat.nodes()];
    let mut count = 0usize;
    for (node, slot) in mask.iter_mut().enumerate() {
        let p = lat.position(node);
        for q in points {
            if lat.dist2(&p, q) < r2 {
                *slot = true;
                count += 1;
                break;
            }
        }
    }
    Ok((mask, count as f64 * lat.dx().powi(lat.n() as i32)))
}

/// Volume of the unit k-ball, pi^(k/2) / Gamma(k/2 + 1), for real k >= 0.
pub fn unit_ball_volume(k: f64) -> f64 {
    std::f64::consts::PI.powf(0.5 * k) / gamma(0.5 * k + 1.0)
}

/// Lanczos approximation (g = 7, 9 terms), |relative error| < 1e-13 on the
/// positive axis.
fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = C[0];
        for (i, c) in C.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

#[derive(Clone, Debug)]
pub struct ContentRow {
    pub r: f64,
    pub tube_measure: f64,
    pub content: f64,
}

#[derive(Clone, Debug)]
pub struct ContentEstimate {
    /// Dyadic ladder rows, ascending radius.
    pub rows: Vec<ContentRow>,
    /// Content at the smallest rung.
    pub content: f64,
    /// Fitted box dimension: n minus the log tube-measure slope.
    pub dimension: f64,
    pub m: f64,
}

impl ContentEstimate {
    pub fn csv(&self) -> String {
        let mut s = String::from("radius,tube_measure,content\n");
        for row in &self.rows {
            s.push_str(&format!(
                "{:.6e},{:.6e},{:.6e}\n",
                row.r, row.tube_measure, row.content
            ));
        }
        s
    }
}

/// m-dimensional Minkowski content over the dyadic radius ladder
/// [2dx, L/8]: content(r) = |T(S, r)| / (omega(n-m) r^(n-m)), and the box
/// dimension from the fitted log |T| vs log r slope.
pub fn minkowski_content(points: &[[f64; MAX_N]], m: f64, lat: Lattice) -> Result<ContentEstimate> {
    let n = lat.n();
    let dx = lat.dx();
    let ell = lat.extent();
    if points.is_empty() {
        return Err(Error::invalid("minkowski_content", "empty point set"));
    }
    if !(m >= 0.0 && m <= n as f64) {
        return Err(Error::invalid(
            "minkowski_content",
            format!("dimension parameter {m} outside [0, {n}]"),
        ));
    }
    let mut rungs = Vec::new();
    let mut r = 2.0 * dx;
    while r <= ell / 8.0 * (1.0 + 1e-12) {
        rungs.push(r);
        r *= 2.0;
    }
    if rungs.len() < 5 {
        return Err(Error::LadderTooShort {
            got: rungs.len(),
            need: 5,
        });
    }
    let rmax = *rungs.last().unwrap();

    // Scatter pass: nearest-anchor distance per node, visiting only the
    // bounding box of each anchor (box width < L by the L/8 radius cap).
    let res = lat.res();
    let mut d2min = vec![f64::INFINITY; lat.nodes()];
    let reach = (rmax / dx).ceil() as i64 + 1;
    for q in points {
        let mut visit = |ix: &[i64]| {
            let mut node = 0usize;
            for a in 0..n {
                node = node * res + ix[a].rem_euclid(res as i64) as usize;
            }
            let p = lat.position(node);
            let d2 = lat.dist2(&p, q);
            if d2 < d2min[node] {
                d2min[node] = d2;
            }
        };
        let base: Vec<i64> = (0..n)
            .map(|a| ((q[a] + 0.5 * ell) / dx).round() as i64)
            .collect();
        let mut ix = vec![0i64; n];
        let mut off = vec![-reach; n];
        'odometer: loop {
            for a in 0..n {
                ix[a] = base[a] + off[a];
            }
            visit(&ix);
            for a in (0..n).rev() {
                off[a] += 1;
                if off[a] <= reach {
                    continue 'odometer;
                }
                off[a] = -reach;
            }
            break;
        }
    }

    let dxn = dx.powi(n as i32);
    let mut rows = Vec::with_capacity(rungs.len());
    for &r in &rungs {
        let count = d2min.iter().filter(|&&d2| d2 < r * r).count();
        if count == 0 {
            return Err(Error::DegenerateFit {
                reason: format!("empty tube at radius {r:.3e}"),
            });
        }
        let measure = count as f64 * dxn;
        let content = measure / (unit_ball_volume(n as f64 - m) * r.powf(n as f64 - m));
        rows.push(ContentRow {
            r,
            tube_measure: measure,
            content,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|row| row.r.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|row| row.tube_measure.ln()).collect();
    let line = fit_line(&xs, &ys)?;
    Ok(ContentEstimate {
        content: rows[0].content,
        rows,
        dimension: n as f64 - line.slope,
        m,
    })
}
