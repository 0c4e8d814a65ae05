//! Integral-equation solver used to cross-validate the stepped flow: a
//! periodic Euclidean heat propagator plus Picard iteration on the Duhamel
//! form of the perturbation equation dh/dt = lap h + Q0 + div Q1. The
//! divergence term is handled by convolving with the kernel's spatial
//! gradient, so no derivative ever lands on Q1.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::geometry::{q_decomposition, sup_spectral, MetricField};
use crate::lattice::{Field, Lattice, MAX_N};
use crate::norms::norm_parabolic_slices;

/// Sup-norm radius of the small-data band the Picard iteration contracts in.
pub const SMALL_DATA_BAND: f64 = 0.1;

/// 6-point Gauss-Legendre rule on [-1, 1].
const GL6: [(f64, f64); 6] = [
    (-0.932_469_514_203_152_1, 0.171_324_492_379_170_4),
    (-0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (-0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (0.932_469_514_203_152_1, 0.171_324_492_379_170_4),
];

/// One-dimensional periodized heat kernel at a fixed time offset, sampled on
/// the lattice line, with its spatial derivative and both DFT symbols.
struct LineKernel {
    /// Convolution weights w[j] = theta(j dx) dx, normalized so sum w = 1.
    w: Vec<f64>,
    /// Derivative weights dw[j] = theta'(j dx) dx, same normalization.
    dw: Vec<f64>,
    /// DFT symbol of w; real because w is even around 0.
    sym: Vec<f64>,
    /// Imaginary part of the DFT symbol of dw; dw is odd, so its symbol is
    /// purely imaginary.
    dsym_im: Vec<f64>,
}

fn build_line(lat: &Lattice, tau: f64) -> LineKernel {
    let nres = lat.res();
    let dx = lat.dx();
    let ell = lat.extent();
    let pref = 1.0 / (4.0 * PI * tau).sqrt();
    // Images beyond exp(-x^2/4 tau) < 1e-16 of the peak contribute nothing.
    let mmax = (((148.0 * tau).sqrt() + ell) / ell).ceil() as i64;
    let mut w = vec![0.0; nres];
    let mut dw = vec![0.0; nres];
    for (j, (wj, dwj)) in w.iter_mut().zip(dw.iter_mut()).enumerate() {
        let xj = j as f64 * dx;
        let mut s = 0.0;
        let mut ds = 0.0;
        for m in -mmax..=mmax {
            let x = xj + m as f64 * ell;
            let e = pref * (-(x * x) / (4.0 * tau)).exp();
            s += e;
            ds -= x / (2.0 * tau) * e;
        }
        *wj = s * dx;
        *dwj = ds * dx;
    }
    let mass: f64 = w.iter().sum();
    for v in &mut w {
        *v /= mass;
    }
    for v in &mut dw {
        *v /= mass;
    }
    let mut sym = vec![0.0; nres];
    let mut dsym_im = vec![0.0; nres];
    for (m, (sm, dm)) in sym.iter_mut().zip(dsym_im.iter_mut()).enumerate() {
        let ang = 2.0 * PI * m as f64 / nres as f64;
        let mut cs = 0.0;
        let mut ss = 0.0;
        for j in 0..nres {
            let a = ang * j as f64;
            cs += w[j] * a.cos();
            ss -= dw[j] * a.sin();
        }
        *sm = cs;
        *dm = ss;
    }
    LineKernel { w, dw, sym, dsym_im }
}

/// Periodic Euclidean heat propagator with cached per-offset line kernels.
pub struct HeatPropagator {
    lat: Lattice,
    lines: RefCell<HashMap<u64, Rc<LineKernel>>>,
}

impl HeatPropagator {
    pub fn new(lat: Lattice) -> Self {
        HeatPropagator {
            lat,
            lines: RefCell::new(HashMap::new()),
        }
    }

    fn line(&self, tau: f64) -> Rc<LineKernel> {
        let key = tau.to_bits();
        if let Some(k) = self.lines.borrow().get(&key) {
            return k.clone();
        }
        let k = Rc::new(build_line(&self.lat, tau));
        self.lines.borrow_mut().insert(key, k.clone());
        k
    }

    /// Periodic convolution with the heat kernel at offset `tau`; tau = 0 is
    /// the identity. Separable: one line convolution per axis.
    pub fn heat_convolve(&self, f: &Field, tau: f64) -> Field {
        assert!(
            tau >= 0.0 && tau.is_finite(),
            "heat offset must be a finite nonnegative time"
        );
        assert_eq!(f.lat(), self.lat, "field lives on a different lattice");
        if tau == 0.0 {
            return f.clone();
        }
        let line = self.line(tau);
        let mut cur = f.clone();
        let mut next = Field::zeros(self.lat, f.comps());
        for axis in 0..self.lat.n() {
            convolve_axis(&self.lat, &cur, &mut next, axis, &line.w);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Convolution with the spatial derivative of the heat kernel along
    /// `axis` (plain heat factors on the remaining axes).
    pub fn deriv_convolve(&self, f: &Field, tau: f64, axis: usize) -> Field {
        assert!(
            tau > 0.0 && tau.is_finite(),
            "derivative kernel needs a positive offset"
        );
        assert!(axis < self.lat.n(), "axis out of range");
        assert_eq!(f.lat(), self.lat, "field lives on a different lattice");
        let line = self.line(tau);
        let mut cur = f.clone();
        let mut next = Field::zeros(self.lat, f.comps());
        for a in 0..self.lat.n() {
            let kernel = if a == axis { &line.dw } else { &line.w };
            convolve_axis(&self.lat, &cur, &mut next, a, kernel);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

fn convolve_axis(lat: &Lattice, src: &Field, dst: &mut Field, axis: usize, kernel: &[f64]) {
    let nres = lat.res();
    let comps = src.comps();
    let stride = lat.strides()[axis];
    let sdata = src.data();
    let ddata = dst.data_mut();
    let mut line = vec![0.0; nres];
    for base in lat.line_bases(axis) {
        for c in 0..comps {
            for (j, l) in line.iter_mut().enumerate() {
                *l = sdata[(base + j * stride) * comps + c];
            }
            for i in 0..nres {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    acc += k * line[(i + nres - j) % nres];
                }
                ddata[(base + i * stride) * comps + c] = acc;
            }
        }
    }
}

/// Radix-2 complex FFT plan: bit-reversal permutation plus per-stage twiddle
/// tables, shared by every line transform on the lattice.
struct FftPlan {
    n: usize,
    rev: Vec<usize>,
    stages: Vec<Vec<(f64, f64)>>,
}

impl FftPlan {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two() && n >= 2);
        let bits = n.trailing_zeros();
        let mut rev = vec![0usize; n];
        for (i, r) in rev.iter_mut().enumerate() {
            *r = i.reverse_bits() >> (usize::BITS - bits);
        }
        let mut stages = Vec::new();
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let mut tw = Vec::with_capacity(half);
            for k in 0..half {
                let ang = -2.0 * PI * k as f64 / len as f64;
                tw.push((ang.cos(), ang.sin()));
            }
            stages.push(tw);
            len *= 2;
        }
        FftPlan { n, rev, stages }
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        for (stage, tw) in self.stages.iter().enumerate() {
            let len = 2usize << stage;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for (k, &(wr, wi0)) in tw.iter().enumerate() {
                    let wi = if inverse { -wi0 } else { wi0 };
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
        }
        if inverse {
            let inv = 1.0 / n as f64;
            for v in re.iter_mut() {
                *v *= inv;
            }
            for v in im.iter_mut() {
                *v *= inv;
            }
        }
    }
}

/// Complex-valued field in mode space, same node-major-by-component layout as
/// `Field`.
struct SpecField {
    comps: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

fn transform_axis(lat: &Lattice, plan: &FftPlan, s: &mut SpecField, axis: usize, inverse: bool) {
    let nres = lat.res();
    let comps = s.comps;
    let stride = lat.strides()[axis];
    let mut lre = vec![0.0; nres];
    let mut lim = vec![0.0; nres];
    for base in lat.line_bases(axis) {
        for c in 0..comps {
            for j in 0..nres {
                let idx = (base + j * stride) * comps + c;
                lre[j] = s.re[idx];
                lim[j] = s.im[idx];
            }
            plan.transform(&mut lre, &mut lim, inverse);
            for j in 0..nres {
                let idx = (base + j * stride) * comps + c;
                s.re[idx] = lre[j];
                s.im[idx] = lim[j];
            }
        }
    }
}

fn fft_field(lat: &Lattice, plan: &FftPlan, f: &Field) -> SpecField {
    let mut s = SpecField {
        comps: f.comps(),
        re: f.data().to_vec(),
        im: vec![0.0; f.data().len()],
    };
    for axis in 0..lat.n() {
        transform_axis(lat, plan, &mut s, axis, false);
    }
    s
}

fn ifft_field(lat: &Lattice, plan: &FftPlan, s: &SpecField) -> Field {
    let mut t = SpecField {
        comps: s.comps,
        re: s.re.clone(),
        im: s.im.clone(),
    };
    for axis in 0..lat.n() {
        transform_axis(lat, plan, &mut t, axis, true);
    }
    let mut f = Field::zeros(*lat, s.comps);
    f.data_mut().copy_from_slice(&t.re);
    f
}

/// Visit nodes in storage order together with their integer coordinates.
fn for_each_node_coords(lat: &Lattice, mut f: impl FnMut(usize, &[usize; MAX_N])) {
    let n = lat.n();
    let nres = lat.res();
    let mut ix = [0usize; MAX_N];
    for node in 0..lat.nodes() {
        f(node, &ix);
        for a in (0..n).rev() {
            ix[a] += 1;
            if ix[a] < nres {
                break;
            }
            ix[a] = 0;
        }
    }
}

/// Per-node product of a real symbol line over all axes.
fn separable_factor(lat: &Lattice, sym: &[f64]) -> Vec<f64> {
    let n = lat.n();
    let mut out = vec![0.0; lat.nodes()];
    for_each_node_coords(lat, |node, ix| {
        let mut prod = 1.0;
        for a in 0..n {
            prod *= sym[ix[a]];
        }
        out[node] = prod;
    });
    out
}

/// Convergence diagnostics of the Picard iteration.
#[derive(Clone, Debug)]
pub struct DuhamelReport {
    /// Parabolic X-norm of each iterate (initial heat-only iterate first).
    pub iterate_x_norms: Vec<f64>,
    /// X-norm of each successive increment h^(m+1) - h^(m).
    pub increment_x_norms: Vec<f64>,
    /// Ratios of successive increment norms.
    pub contraction_ratios: Vec<f64>,
    /// Geometric-mean contraction ratio, when ratios are available.
    pub fitted_rho: Option<f64>,
    /// Sup norm of the initial data.
    pub h0_sup: f64,
    /// max iterate X-norm / h0 sup: the ball constant the iterates stay in.
    pub ball_constant: f64,
}

/// Integral-equation solve with an explicit slice count; returns the final
/// iterate as a trajectory plus convergence diagnostics.
pub fn duhamel_solve_with(
    h0: &Field,
    horizon: f64,
    iterations: usize,
    slices: usize,
) -> Result<(Trajectory, DuhamelReport)> {
    let lat = h0.lat();
    let n = lat.n();
    let nc = n * (n + 1) / 2;
    if h0.comps() != nc {
        return Err(Error::invalid(
            "duhamel_solve",
            "initial data must be a symmetric 2-tensor field",
        ));
    }
    if !lat.res().is_power_of_two() {
        return Err(Error::invalid(
            "duhamel_solve",
            "spectral path requires a power-of-two resolution",
        ));
    }
    if iterations == 0 {
        return Err(Error::invalid(
            "duhamel_solve",
            "need at least one Picard iteration",
        ));
    }
    if slices < 2 {
        return Err(Error::invalid("duhamel_solve", "need at least two slices"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("duhamel_solve", "horizon must be positive"));
    }
    h0.check_finite("duhamel_solve")?;
    MetricField::new(h0.clone())?;
    let h0_sup = sup_spectral(h0);
    if h0_sup > SMALL_DATA_BAND {
        return Err(Error::invalid(
            "duhamel_solve",
            format!(
                "initial data sup {:.3e} outside the small-data band {:.3e}",
                h0_sup, SMALL_DATA_BAND
            ),
        ));
    }

    let delta = horizon / slices as f64;
    let times: Vec<f64> = (0..=slices).map(|k| k as f64 * delta).collect();
    let prop = HeatPropagator::new(lat);
    let plan = FftPlan::new(lat.res());
    let nodes = lat.nodes();

    // Heat factors for the initial-data term at each ladder time.
    let heat_fac: Vec<Vec<f64>> = (1..=slices)
        .map(|k| separable_factor(&lat, &prop.line(k as f64 * delta).sym))
        .collect();

    // One-step factors for the history recurrence: f0 multiplies Q0 and the
    // running sum, fp[p] (times i) multiplies the divergence-form Q1 piece.
    let line_d = prop.line(delta);
    let f0 = separable_factor(&lat, &line_d.sym);
    let mut fp: Vec<Vec<f64>> = vec![vec![0.0; nodes]; n];
    for_each_node_coords(&lat, |node, ix| {
        for (p, fpp) in fp.iter_mut().enumerate() {
            let mut q = line_d.dsym_im[ix[p]];
            for a in 0..n {
                if a != p {
                    q *= line_d.sym[ix[a]];
                }
            }
            fpp[node] = q;
        }
    });

    // Endpoint half-cell multipliers: J = int_0^{delta/2} heat(tau) dtau and
    // its spatial gradients, by Gauss-Legendre in sigma = sqrt(tau).
    let mut jmul = vec![0.0; nodes];
    let mut djmul: Vec<Vec<f64>> = vec![vec![0.0; nodes]; n];
    let b = (delta / 2.0).sqrt();
    for &(xg, wg) in &GL6 {
        let sg = b * (xg + 1.0) / 2.0;
        let cg = wg * b / 2.0 * 2.0 * sg;
        let lk = prop.line(sg * sg);
        for_each_node_coords(&lat, |node, ix| {
            let mut prod = 1.0;
            for a in 0..n {
                prod *= lk.sym[ix[a]];
            }
            jmul[node] += cg * prod;
            for (p, djp) in djmul.iter_mut().enumerate() {
                let mut q = cg * lk.dsym_im[ix[p]];
                for a in 0..n {
                    if a != p {
                        q *= lk.sym[ix[a]];
                    }
                }
                djp[node] += q;
            }
        });
    }

    let h0_hat = fft_field(&lat, &plan, h0);

    // Initial iterate: pure heat evolution of the data.
    let mut cur: Vec<Field> = Vec::with_capacity(slices + 1);
    cur.push(h0.clone());
    for k in 1..=slices {
        let mut s = SpecField {
            comps: nc,
            re: h0_hat.re.clone(),
            im: h0_hat.im.clone(),
        };
        apply_real_factor(&mut s, &heat_fac[k - 1]);
        cur.push(ifft_field(&lat, &plan, &s));
    }

    let mut iterate_x = vec![x_norm(&lat, &times, &cur, horizon)?];
    let mut increments = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let next = picard_step(
            &lat, &plan, &heat_fac, &f0, &fp, &jmul, &djmul, h0, &h0_hat, delta, &cur,
        )?;
        let diffs: Vec<Field> = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| {
                let mut d = a.clone();
                d.axpy(-1.0, b);
                d
            })
            .collect();
        increments.push(x_norm(&lat, &times, &diffs, horizon)?);
        cur = next;
        iterate_x.push(x_norm(&lat, &times, &cur, horizon)?);
    }

    let mut ratios = Vec::new();
    for w in increments.windows(2) {
        if w[0] > 0.0 {
            ratios.push(w[1] / w[0]);
        }
    }
    let fitted_rho = if ratios.is_empty() || ratios.len() + 1 != increments.len() {
        None
    } else {
        let mean = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
        Some(mean.exp())
    };
    let max_x = iterate_x.iter().cloned().fold(0.0, f64::max);
    let report = DuhamelReport {
        iterate_x_norms: iterate_x,
        increment_x_norms: increments,
        contraction_ratios: ratios,
        fitted_rho,
        h0_sup,
        ball_constant: if h0_sup > 0.0 { max_x / h0_sup } else { 0.0 },
    };
    let traj = Trajectory::from_slices(lat, times, cur)?;
    Ok((traj, report))
}

fn apply_real_factor(s: &mut SpecField, fac: &[f64]) {
    let nc = s.comps;
    for (node, &f) in fac.iter().enumerate() {
        for c in 0..nc {
            let idx = node * nc + c;
            s.re[idx] *= f;
            s.im[idx] *= f;
        }
    }
}

/// Mode-space Q0 and Q1 of one iterate slice.
fn q_spectra(lat: &Lattice, plan: &FftPlan, h: &Field) -> Result<(SpecField, Vec<SpecField>)> {
    let m = MetricField::new(h.clone())?;
    let (q0, q1) = q_decomposition(&m)?;
    let q0h = fft_field(lat, plan, &q0);
    let q1h = q1.iter().map(|f| fft_field(lat, plan, f)).collect();
    Ok((q0h, q1h))
}

#[allow(clippy::too_many_arguments)]
fn picard_step(
    lat: &Lattice,
    plan: &FftPlan,
    heat_fac: &[Vec<f64>],
    f0: &[f64],
    fp: &[Vec<f64>],
    jmul: &[f64],
    djmul: &[Vec<f64>],
    h0: &Field,
    h0_hat: &SpecField,
    delta: f64,
    prev: &[Field],
) -> Result<Vec<Field>> {
    let n = lat.n();
    let nc = n * (n + 1) / 2;
    let nodes = lat.nodes();
    let mut out = Vec::with_capacity(prev.len());
    out.push(h0.clone());

    // Running mode-space sum over fully covered history cells.
    let mut w_re = vec![0.0; nodes * nc];
    let mut w_im = vec![0.0; nodes * nc];
    let (mut q0_prev, mut q1_prev) = q_spectra(lat, plan, &prev[0])?;

    for k in 1..prev.len() {
        // Midpoint cell weight: the s = 0 cell is half width.
        let wq = if k == 1 { delta / 2.0 } else { delta };
        for node in 0..nodes {
            let a = f0[node];
            for c in 0..nc {
                let idx = node * nc + c;
                let mut cre = a * q0_prev.re[idx];
                let mut cim = a * q0_prev.im[idx];
                for (p, fpp) in fp.iter().enumerate() {
                    let bq = fpp[node];
                    cre -= bq * q1_prev[p].im[idx];
                    cim += bq * q1_prev[p].re[idx];
                }
                w_re[idx] = a * w_re[idx] + wq * cre;
                w_im[idx] = a * w_im[idx] + wq * cim;
            }
        }

        let (q0_cur, q1_cur) = q_spectra(lat, plan, &prev[k])?;
        let hf = &heat_fac[k - 1];
        let mut s = SpecField {
            comps: nc,
            re: vec![0.0; nodes * nc],
            im: vec![0.0; nodes * nc],
        };
        for node in 0..nodes {
            let g = hf[node];
            let jm = jmul[node];
            for c in 0..nc {
                let idx = node * nc + c;
                let mut re = g * h0_hat.re[idx] + w_re[idx] + jm * q0_cur.re[idx];
                let mut im = g * h0_hat.im[idx] + w_im[idx] + jm * q0_cur.im[idx];
                for (p, djp) in djmul.iter().enumerate() {
                    let bq = djp[node];
                    re -= bq * q1_cur[p].im[idx];
                    im += bq * q1_cur[p].re[idx];
                }
                s.re[idx] = re;
                s.im[idx] = im;
            }
        }
        let slice = ifft_field(lat, plan, &s);
        slice.check_finite("duhamel iterate")?;
        let sup = sup_spectral(&slice);
        if sup > 2.0 * SMALL_DATA_BAND {
            return Err(Error::invalid(
                "duhamel_solve",
                format!(
                    "Picard iterate left the contraction band: sup {:.3e} > {:.3e}",
                    sup,
                    2.0 * SMALL_DATA_BAND
                ),
            ));
        }
        q0_prev = q0_cur;
        q1_prev = q1_cur;
        out.push(slice);
    }
    Ok(out)
}

fn x_norm(lat: &Lattice, times: &[f64], slices: &[Field], horizon: f64) -> Result<f64> {
    let refs: Vec<&Field> = slices.iter().collect();
    Ok(norm_parabolic_slices(lat, times, &refs, horizon)?.x_value)
}

/// Integral-equation solve with the default slice ladder (spacing near
/// dx^2/2, so time-quadrature error refines at the same rate as the spatial
/// error).
pub fn duhamel_solve_report(
    h0: &Field,
    horizon: f64,
    iterations: usize,
) -> Result<(Trajectory, DuhamelReport)> {
    let dx = h0.lat().dx();
    let target = 0.5 * dx * dx;
    let slices = ((horizon / target).round() as usize).clamp(4, 256);
    duhamel_solve_with(h0, horizon, iterations, slices)
}

/// Picard iteration for the perturbation equation; returns the final iterate
/// as a trajectory on a uniform slice ladder.
pub fn duhamel_solve(h0: &Field, horizon: f64, iterations: usize) -> Result<Trajectory> {
    Ok(duhamel_solve_report(h0, horizon, iterations)?.0)
}

/// Slice-by-slice comparison of two trajectories at their common times.
#[derive(Clone, Debug)]
pub struct SolverComparison {
    /// (time, sup difference, difference / amplitude) per common time.
    pub rows: Vec<(f64, f64, f64)>,
    pub max_sup_diff: f64,
    pub max_ratio: f64,
    /// Largest slice sup over both trajectories; the ratio denominator.
    pub amplitude: f64,
}

impl SolverComparison {
    /// CSV rendering: time, sup-difference, ratio.
    pub fn csv(&self) -> String {
        let mut s = String::from("time,sup_difference,ratio\n");
        for &(t, d, r) in &self.rows {
            s.push_str(&format!("{:.6e},{:.6e},{:.6e}\n", t, d, r));
        }
        s
    }
}

/// Compare two trajectories (stepped vs integral-equation, or two iteration
/// depths) at every stored time they share.
pub fn compare_solvers(ta: &Trajectory, tb: &Trajectory) -> Result<SolverComparison> {
    if ta.lat() != tb.lat() {
        return Err(Error::LatticeMismatch {
            expected: format!("{:?}", ta.lat()),
            got: format!("{:?}", tb.lat()),
        });
    }
    let mut amp = 0.0f64;
    for k in 0..ta.len() {
        amp = amp.max(ta.slice(k).sup_norm());
    }
    for k in 0..tb.len() {
        amp = amp.max(tb.slice(k).sup_norm());
    }
    let mut rows = Vec::new();
    for (k, &t) in ta.times().iter().enumerate() {
        if let Some(j) = tb.index_at(t) {
            let d = ta.slice(k).sup_diff(tb.slice(j));
            let r = if amp > 0.0 { d / amp } else { 0.0 };
            rows.push((t, d, r));
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(
            "compare_solvers",
            "trajectories share no stored times",
        ));
    }
    let max_sup_diff = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_ratio = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(SolverComparison {
        rows,
        max_sup_diff,
        max_ratio,
        amplitude: amp,
    })
}
