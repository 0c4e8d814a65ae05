//! Pointwise Riemannian geometry of g = delta + h and the Ricci-DeTurck
//! right-hand side, gauge-fixed against the flat background. Two independent
//! discretizations of the same evolution are provided: a geometric composition
//! (-2 Ric - Lie_X g) and a fused quadratic-gradient form used by the stepper.

use crate::error::{Error, Result};
use crate::lattice::{
    fd_derivative_into, fd_laplacian_into, fd_second_into, sym_comps, sym_index, Field, Lattice,
    MAX_N,
};

pub type Mat = [[f64; MAX_N]; MAX_N];

#[inline]
pub(crate) fn sym_to_full(n: usize, s: &[f64]) -> Mat {
    let mut m = [[0.0; MAX_N]; MAX_N];
    for i in 0..n {
        for j in i..n {
            let v = s[sym_index(n, i, j)];
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

#[inline]
pub(crate) fn full_to_sym(n: usize, m: &Mat, out: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            out[sym_index(n, i, j)] = m[i][j];
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix, or None.
pub(crate) fn cholesky(n: usize, a: &Mat) -> Option<Mat> {
    let mut l = [[0.0; MAX_N]; MAX_N];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse and determinant of a symmetric positive definite matrix.
pub(crate) fn sym_inverse_det(n: usize, a: &Mat) -> Option<(Mat, f64)> {
    let l = cholesky(n, a)?;
    let mut det = 1.0;
    for i in 0..n {
        det *= l[i][i] * l[i][i];
    }
    // Solve L y = e_k, then L^T x = y, column by column.
    let mut inv = [[0.0; MAX_N]; MAX_N];
    for k in 0..n {
        let mut y = [0.0; MAX_N];
        for i in 0..n {
            let mut s = if i == k { 1.0 } else { 0.0 };
            for j in 0..i {
                s -= l[i][j] * y[j];
            }
            y[i] = s / l[i][i];
        }
        let mut x = [0.0; MAX_N];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= l[j][i] * x[j];
            }
            x[i] = s / l[i][i];
        }
        for i in 0..n {
            inv[i][k] = x[i];
        }
    }
    Some((inv, det))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub(crate) fn sym_eigenvalues(n: usize, a: &Mat) -> [f64; MAX_N] {
    let mut m = *a;
    for _sweep in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs = [0.0; MAX_N];
    for i in 0..n {
        eigs[i] = m[i][i];
    }
    eigs[..n].sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Metric g = delta + h stored through its bounded perturbation h.
#[derive(Clone, Debug)]
pub struct MetricField {
    h: Field,
}

impl MetricField {
    pub fn new(h: Field) -> Result<Self> {
        let (lat, comps) = h.shape();
        if comps != sym_comps(lat.n()) {
            return Err(Error::invalid(
                "MetricField::new",
                format!("expected {} components, got {comps}", sym_comps(lat.n())),
            ));
        }
        h.check_finite("metric perturbation")?;
        Ok(MetricField { h })
    }

    pub fn flat(lat: Lattice) -> Self {
        MetricField {
            h: Field::sym2(lat),
        }
    }

    #[inline]
    pub fn h(&self) -> &Field {
        &self.h
    }

    pub fn h_mut(&mut self) -> &mut Field {
        &mut self.h
    }

    pub fn into_h(self) -> Field {
        self.h
    }

    #[inline]
    pub fn lat(&self) -> Lattice {
        self.h.lat()
    }

    /// Full metric matrix at a node.
    #[inline]
    pub fn g_at(&self, node: usize) -> Mat {
        let n = self.lat().n();
        let mut m = sym_to_full(n, self.h.at(node));
        for i in 0..n {
            m[i][i] += 1.0;
        }
        m
    }

    /// Pointwise inverse metric as a symmetric field.
    pub fn inverse(&self) -> Result<Field> {
        let lat = self.lat();
        let n = lat.n();
        let mut out = Field::sym2(lat);
        for node in 0..lat.nodes() {
            let g = self.g_at(node);
            let (inv, _) = sym_inverse_det(n, &g).ok_or_else(|| {
                let eigs = sym_eigenvalues(n, &g);
                Error::NotPositiveDefinite {
                    node,
                    min_eig: eigs[0],
                }
            })?;
            full_to_sym(n, &inv, out.at_mut(node));
        }
        Ok(out)
    }

    /// Riemannian volume weight sqrt(det g) per node.
    pub fn volume_weight(&self) -> Result<Field> {
        let lat = self.lat();
        let n = lat.n();
        let mut out = Field::scalar(lat);
        for node in 0..lat.nodes() {
            let g = self.g_at(node);
            let (_, det) = sym_inverse_det(n, &g).ok_or_else(|| {
                let eigs = sym_eigenvalues(n, &g);
                Error::NotPositiveDefinite {
                    node,
                    min_eig: eigs[0],
                }
            })?;
            out.set(node, 0, det.sqrt());
        }
        Ok(out)
    }

    /// Global eigenvalue range of g over all nodes.
    pub fn bilipschitz_bounds(&self) -> Result<BilipschitzBounds> {
        let lat = self.lat();
        let n = lat.n();
        let mut b = BilipschitzBounds {
            min_eig: f64::INFINITY,
            max_eig: f64::NEG_INFINITY,
            min_node: 0,
            max_node: 0,
        };
        for node in 0..lat.nodes() {
            let g = self.g_at(node);
            let eigs = sym_eigenvalues(n, &g);
            if eigs[0] <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    node,
                    min_eig: eigs[0],
                });
            }
            if eigs[0] < b.min_eig {
                b.min_eig = eigs[0];
                b.min_node = node;
            }
            if eigs[n - 1] > b.max_eig {
                b.max_eig = eigs[n - 1];
                b.max_node = node;
            }
        }
        Ok(b)
    }

    /// Enforce that every metric eigenvalue lies in [lo, hi].
    pub fn validate_band(&self, lo: f64, hi: f64) -> Result<BilipschitzBounds> {
        let b = self.bilipschitz_bounds()?;
        if b.min_eig < lo {
            return Err(Error::BilipschitzViolation {
                node: b.min_node,
                eig: b.min_eig,
                lo,
                hi,
            });
        }
        if b.max_eig > hi {
            return Err(Error::BilipschitzViolation {
                node: b.max_node,
                eig: b.max_eig,
                lo,
                hi,
            });
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BilipschitzBounds {
    pub min_eig: f64,
    pub max_eig: f64,
    pub min_node: usize,
    pub max_node: usize,
}

/// Christoffel symbols of g, layout k-major over symmetric (i, j).
pub fn christoffel(m: &MetricField) -> Result<Field> {
    let lat = m.lat();
    let n = lat.n();
    let nc = sym_comps(n);
    let ginv = m.inverse()?;
    let mut dh = Vec::with_capacity(n);
    for a in 0..n {
        let mut d = Field::sym2(lat);
        fd_derivative_into(m.h(), &mut d, a);
        dh.push(d);
    }
    let mut out = Field::zeros(lat, n * nc);
    for node in 0..lat.nodes() {
        let g_up = sym_to_full(n, ginv.at(node));
        let o = out.at_mut(node);
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let t = dh[i].get(node, sym_index(n, l, j))
                            + dh[j].get(node, sym_index(n, i, l))
                            - dh[l].get(node, sym_index(n, i, j));
                        s += g_up[k][l] * t;
                    }
                    o[k * nc + sym_index(n, i, j)] = 0.5 * s;
                }
            }
        }
    }
    Ok(out)
}

/// DeTurck vector field X^k = -g^{ij} Gamma^k_ij against the flat background.
pub fn deturck_field(m: &MetricField) -> Result<Field> {
    let lat = m.lat();
    let n = lat.n();
    let nc = sym_comps(n);
    let gamma = christoffel(m)?;
    let ginv = m.inverse()?;
    let mut out = Field::vector(lat);
    for node in 0..lat.nodes() {
        let g_up = sym_to_full(n, ginv.at(node));
        let ga = gamma.at(node);
        let o = out.at_mut(node);
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += g_up[i][j] * ga[k * nc + sym_index(n, i, j)];
                }
            }
            o[k] = -s;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Curvature {
    pub ricci: Field,
    pub scalar: Field,
    /// |Rm|_g^2 with all indices contracted by g.
    pub riem_norm2: Field,
}

/// Ricci, scalar, and Riemann-norm fields of g.
pub fn curvature(m: &MetricField) -> Result<Curvature> {
    curvature_impl(m, true)
}

/// Scalar curvature field only; skips the Riemann-norm contraction.
pub fn scalar_curvature(m: &MetricField) -> Result<Field> {
    Ok(curvature_impl(m, false)?.scalar)
}

fn curvature_impl(m: &MetricField, want_riem: bool) -> Result<Curvature> {
    let lat = m.lat();
    let n = lat.n();
    let nc = sym_comps(n);
    let gamma = christoffel(m)?;
    let ginv = m.inverse()?;
    let mut dgamma = Vec::with_capacity(n);
    for a in 0..n {
        let mut d = Field::zeros(lat, n * nc);
        fd_derivative_into(&gamma, &mut d, a);
        dgamma.push(d);
    }
    let mut ricci = Field::sym2(lat);
    let mut scalar = Field::scalar(lat);
    let mut riem_norm2 = Field::scalar(lat);

    let gam = |ga: &[f64], k: usize, i: usize, j: usize| ga[k * nc + sym_index(n, i, j)];

    for node in 0..lat.nodes() {
        let ga = gamma.at(node);
        let g_up = sym_to_full(n, ginv.at(node));
        let g_lo = m.g_at(node);
        // trace Gamma^mu_{mu lambda}
        let mut trg = [0.0; MAX_N];
        for lam in 0..n {
            for mu in 0..n {
                trg[lam] += gam(ga, mu, mu, lam);
            }
        }
        // Ricci
        let mut ric = [[0.0; MAX_N]; MAX_N];
        for s in 0..n {
            for v in s..n {
                let mut r = 0.0;
                for mu in 0..n {
                    r += gam(dgamma[mu].at(node), mu, v, s);
                    r -= gam(dgamma[v].at(node), mu, mu, s);
                }
                for lam in 0..n {
                    r += trg[lam] * gam(ga, lam, v, s);
                    for mu in 0..n {
                        r -= gam(ga, mu, v, lam) * gam(ga, lam, mu, s);
                    }
                }
                ric[s][v] = r;
                ric[v][s] = r;
            }
        }
        {
            let o = ricci.at_mut(node);
            full_to_sym(n, &ric, o);
        }
        let mut sc = 0.0;
        for s in 0..n {
            for v in 0..n {
                sc += g_up[s][v] * ric[s][v];
            }
        }
        scalar.set(node, 0, sc);

        if want_riem {
            // Full Riemann R^r_{s m v}, then |Rm|^2 by lowering the first
            // index and raising the last three.
            let mut riem = [[[[0.0; MAX_N]; MAX_N]; MAX_N]; MAX_N];
            for r in 0..n {
                for s in 0..n {
                    for mu in 0..n {
                        for v in 0..mu {
                            let mut t = gam(dgamma[mu].at(node), r, v, s)
                                - gam(dgamma[v].at(node), r, mu, s);
                            for lam in 0..n {
                                t += gam(ga, r, mu, lam) * gam(ga, lam, v, s)
                                    - gam(ga, r, v, lam) * gam(ga, lam, mu, s);
                            }
                            riem[r][s][mu][v] = t;
                            riem[r][s][v][mu] = -t;
                        }
                    }
                }
            }
            let mut low = [[[[0.0; MAX_N]; MAX_N]; MAX_N]; MAX_N];
            for a in 0..n {
                for s in 0..n {
                    for mu in 0..n {
                        for v in 0..n {
                            let mut t = 0.0;
                            for r in 0..n {
                                t += g_lo[a][r] * riem[r][s][mu][v];
                            }
                            low[a][s][mu][v] = t;
                        }
                    }
                }
            }
            let mut norm2 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            // Raise the last three indices of `low` against
                            // the upper-index tensor `riem` contracted with g.
                            let mut up = 0.0;
                            for s in 0..n {
                                for mu in 0..n {
                                    for v in 0..n {
                                        up += g_up[b][s]
                                            * g_up[c][mu]
                                            * g_up[d][v]
                                            * riem[a][s][mu][v];
                                    }
                                }
                            }
                            norm2 += low[a][b][c][d] * up;
                        }
                    }
                }
            }
            riem_norm2.set(node, 0, norm2);
        }
    }
    Ok(Curvature {
        ricci,
        scalar,
        riem_norm2,
    })
}

/// Geometric route to the evolution: -2 Ric(g) - Lie_X g.
pub fn rdtf_rhs_geometric(m: &MetricField) -> Result<Field> {
    let lat = m.lat();
    let n = lat.n();
    let cur = curvature_impl(m, false)?;
    let x = deturck_field(m)?;
    let mut dh = Vec::with_capacity(n);
    let mut dx = Vec::with_capacity(n);
    for a in 0..n {
        let mut d = Field::sym2(lat);
        fd_derivative_into(m.h(), &mut d, a);
        dh.push(d);
        let mut d2 = Field::vector(lat);
        fd_derivative_into(&x, &mut d2, a);
        dx.push(d2);
    }
    let mut out = Field::sym2(lat);
    for node in 0..lat.nodes() {
        let g = m.g_at(node);
        let xs = x.at(node);
        for i in 0..n {
            for j in i..n {
                let c = sym_index(n, i, j);
                let mut lie = 0.0;
                for k in 0..n {
                    lie += xs[k] * dh[k].get(node, c);
                    lie += g[k][j] * dx[i].get(node, k);
                    lie += g[i][k] * dx[j].get(node, k);
                }
                let v = -2.0 * cur.ricci.get(node, c) - lie;
                out.set(node, c, v);
            }
        }
    }
    Ok(out)
}

/// Reusable buffers for the fused right-hand side.
pub struct RhsScratch {
    ginv: Field,
    dh: Vec<Field>,
    divg: Field,
    lap: Field,
    flux: Field,
    face: Field,
    tmp: Field,
}

impl RhsScratch {
    pub fn new(lat: Lattice) -> Self {
        let n = lat.n();
        RhsScratch {
            ginv: Field::sym2(lat),
            dh: (0..n).map(|_| Field::sym2(lat)).collect(),
            divg: Field::vector(lat),
            lap: Field::sym2(lat),
            flux: Field::sym2(lat),
            face: Field::sym2(lat),
            tmp: Field::sym2(lat),
        }
    }
}

/// Closed-form inverse of a symmetric 3x3 in packed order
/// (00, 01, 02, 11, 12, 22); None unless positive definite (Sylvester).
#[inline]
pub(crate) fn inv3_sym(s: &[f64]) -> Option<[f64; 6]> {
    let (a, b, c, d, e, f) = (s[0], s[1], s[2], s[3], s[4], s[5]);
    let m2 = a * d - b * b;
    let cof00 = d * f - e * e;
    let cof01 = c * e - b * f;
    let cof02 = b * e - c * d;
    let det = a * cof00 + b * cof01 + c * cof02;
    if !(a > 0.0 && m2 > 0.0 && det > 0.0) {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        cof00 * inv_det,
        cof01 * inv_det,
        cof02 * inv_det,
        (a * f - c * c) * inv_det,
        (b * c - a * e) * inv_det,
        m2 * inv_det,
    ])
}

/// Smallest eigenvalue of a symmetric 3x3 in packed order, by the
/// trigonometric closed form.
#[inline]
pub(crate) fn eig3_min_sym(s: &[f64]) -> f64 {
    let (a, b, c, d, e, f) = (s[0], s[1], s[2], s[3], s[4], s[5]);
    let p1 = b * b + c * c + e * e;
    if p1 < 1e-300 {
        return a.min(d).min(f);
    }
    let q = (a + d + f) / 3.0;
    let p2 = (a - q) * (a - q) + (d - q) * (d - q) + (f - q) * (f - q) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let inv_p = 1.0 / p;
    // B = (A - q I) / p, r = det(B) / 2.
    let (ba, bb, bc, bd, be, bf) = (
        (a - q) * inv_p,
        b * inv_p,
        c * inv_p,
        (d - q) * inv_p,
        e * inv_p,
        (f - q) * inv_p,
    );
    let det_b = ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

/// Extreme eigenvalues of a packed symmetric 3x3 matrix (trig closed form).
pub(crate) fn eig3_minmax_sym(s: &[f64]) -> (f64, f64) {
    let (a, b, c, d, e, f) = (s[0], s[1], s[2], s[3], s[4], s[5]);
    let p1 = b * b + c * c + e * e;
    if p1 < 1e-300 {
        return (a.min(d).min(f), a.max(d).max(f));
    }
    let q = (a + d + f) / 3.0;
    let p2 = (a - q) * (a - q) + (d - q) * (d - q) + (f - q) * (f - q) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let inv_p = 1.0 / p;
    let (ba, bb, bc, bd, be, bf) = (
        (a - q) * inv_p,
        b * inv_p,
        c * inv_p,
        (d - q) * inv_p,
        e * inv_p,
        (f - q) * inv_p,
    );
    let det_b = ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let third = 2.0 * std::f64::consts::PI / 3.0;
    (q + 2.0 * p * (phi + third).cos(), q + 2.0 * p * phi.cos())
}

/// Spectral norm (largest absolute eigenvalue) of a packed symmetric matrix.
pub(crate) fn sym_spectral_norm(n: usize, s: &[f64]) -> f64 {
    if n == 3 {
        let (lo, hi) = eig3_minmax_sym(s);
        return lo.abs().max(hi.abs());
    }
    let eigs = sym_eigenvalues(n, &sym_to_full(n, s));
    let mut m = 0.0f64;
    for &l in eigs.iter().take(n) {
        m = m.max(l.abs());
    }
    m
}

/// Largest pointwise spectral norm of a symmetric 2-tensor field.
pub fn sup_spectral(f: &Field) -> f64 {
    let n = f.lat().n();
    let mut m = 0.0f64;
    for node in 0..f.lat().nodes() {
        m = m.max(sym_spectral_norm(n, f.at(node)));
    }
    m
}

/// Lowest metric eigenvalue over all nodes (fast path used by the CFL bound).
pub fn metric_min_eig(m: &MetricField) -> Result<f64> {
    let lat = m.lat();
    let n = lat.n();
    if n == 3 {
        let mut min_eig = f64::INFINITY;
        for (node, s) in m.h().data().chunks_exact(6).enumerate() {
            let g = [s[0] + 1.0, s[1], s[2], s[3] + 1.0, s[4], s[5] + 1.0];
            let e = eig3_min_sym(&g);
            if !(e > 0.0) {
                return Err(Error::NotPositiveDefinite { node, min_eig: e });
            }
            if e < min_eig {
                min_eig = e;
            }
        }
        Ok(min_eig)
    } else {
        Ok(m.bilipschitz_bounds()?.min_eig)
    }
}

/// Fused evolution right-hand side in h-form:
///   dt h = Lap h + Q0(g^-1, Dh) - d_p(g^{pq}) d_q h + d_p((g^{pq}-delta) d_q h)
/// with the last divergence discretized conservatively on faces.
pub fn rdtf_rhs_into(m: &MetricField, scratch: &mut RhsScratch, out: &mut Field) -> Result<()> {
    if m.lat().n() == 3 {
        rhs_into_n3(m, scratch, out)
    } else {
        rhs_into_generic(m, scratch, out)
    }
}

/// Specialized three-dimensional kernel: same arithmetic as the generic
/// route, restructured over fixed-size arrays.
fn rhs_into_n3(m: &MetricField, scratch: &mut RhsScratch, out: &mut Field) -> Result<()> {
    let lat = m.lat();
    let nc = 6usize;
    assert_eq!(out.shape(), (lat, nc), "output shape mismatch");
    let nodes = lat.nodes();

    // Pointwise inverse metric.
    {
        let hdata = m.h().data();
        let gdata = scratch.ginv.data_mut();
        for node in 0..nodes {
            let s = &hdata[node * 6..node * 6 + 6];
            let g = [s[0] + 1.0, s[1], s[2], s[3] + 1.0, s[4], s[5] + 1.0];
            match inv3_sym(&g) {
                Some(inv) => gdata[node * 6..node * 6 + 6].copy_from_slice(&inv),
                None => {
                    let gm = sym_to_full(3, &g);
                    let eigs = sym_eigenvalues(3, &gm);
                    return Err(Error::NotPositiveDefinite {
                        node,
                        min_eig: eigs[0],
                    });
                }
            }
        }
    }

    for a in 0..3 {
        fd_derivative_into(m.h(), &mut scratch.dh[a], a);
    }

    // divg_q = sum_p d_p g^{pq}
    scratch.divg.fill(0.0);
    for p in 0..3 {
        fd_derivative_into(&scratch.ginv, &mut scratch.tmp, p);
        let syms = [sym_index(3, p, 0), sym_index(3, p, 1), sym_index(3, p, 2)];
        let t = scratch.tmp.data();
        let dv = scratch.divg.data_mut();
        for (dc, tc) in dv.chunks_exact_mut(3).zip(t.chunks_exact(6)) {
            dc[0] += tc[syms[0]];
            dc[1] += tc[syms[1]];
            dc[2] += tc[syms[2]];
        }
    }

    fd_laplacian_into(m.h(), &mut scratch.lap);

    // Conservative divergence of (g^{pq} - delta^{pq}) d_q h over faces.
    scratch.flux.fill(0.0);
    let res = lat.res();
    let dx = lat.dx();
    let inv_dx = 1.0 / dx;
    let strides = lat.strides();
    let hdata = m.h().data();
    for p in 0..3 {
        let st = strides[p] * nc;
        let syms = [sym_index(3, p, 0), sym_index(3, p, 1), sym_index(3, p, 2)];
        let (qa, qb) = match p {
            0 => (1usize, 2usize),
            1 => (0, 2),
            _ => (0, 1),
        };
        let bases = lat.line_bases(p);
        {
            let face = scratch.face.data_mut();
            let gdata = scratch.ginv.data();
            let dqa = scratch.dh[qa].data();
            let dqb = scratch.dh[qb].data();
            for &base in &bases {
                let b = base * nc;
                for j in 0..res {
                    let here = b + j * st;
                    let plus = if j + 1 == res { b } else { here + st };
                    let g_h = &gdata[here..here + 6];
                    let g_p = &gdata[plus..plus + 6];
                    let app = 0.5 * (g_h[syms[p]] + g_p[syms[p]]) - 1.0;
                    let apa = 0.5 * (g_h[syms[qa]] + g_p[syms[qa]]);
                    let apb = 0.5 * (g_h[syms[qb]] + g_p[syms[qb]]);
                    let h_h = &hdata[here..here + 6];
                    let h_p = &hdata[plus..plus + 6];
                    let da_h = &dqa[here..here + 6];
                    let da_p = &dqa[plus..plus + 6];
                    let db_h = &dqb[here..here + 6];
                    let db_p = &dqb[plus..plus + 6];
                    let f = &mut face[here..here + 6];
                    for c in 0..6 {
                        let dp = (h_p[c] - h_h[c]) * inv_dx;
                        let va = 0.5 * (da_h[c] + da_p[c]);
                        let vb = 0.5 * (db_h[c] + db_p[c]);
                        f[c] = app * dp + apa * va + apb * vb;
                    }
                }
            }
        }
        {
            let face = scratch.face.data();
            let flux = scratch.flux.data_mut();
            for &base in &bases {
                let b = base * nc;
                for j in 0..res {
                    let here = b + j * st;
                    let minus = if j == 0 { b + (res - 1) * st } else { here - st };
                    let f_h = &face[here..here + 6];
                    let f_m = &face[minus..minus + 6];
                    let o = &mut flux[here..here + 6];
                    for c in 0..6 {
                        o[c] += (f_h[c] - f_m[c]) * inv_dx;
                    }
                }
            }
        }
    }

    // Pointwise assembly over flat 3x3 matrices (row-major [f64; 9]).
    #[inline(always)]
    fn unpack(s: &[f64]) -> [f64; 9] {
        [s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]]
    }
    #[inline(always)]
    fn matmul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
        let mut o = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                o[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
            }
        }
        o
    }

    let gdata = scratch.ginv.data();
    let d0data = scratch.dh[0].data();
    let d1data = scratch.dh[1].data();
    let d2data = scratch.dh[2].data();
    let dvdata = scratch.divg.data();
    let lpdata = scratch.lap.data();
    let fxdata = scratch.flux.data();
    let odata = out.data_mut();

    for node in 0..nodes {
        let b6 = node * 6;
        let g = unpack(&gdata[b6..b6 + 6]);
        let d = [
            unpack(&d0data[b6..b6 + 6]),
            unpack(&d1data[b6..b6 + 6]),
            unpack(&d2data[b6..b6 + 6]),
        ];
        let mut e = [[0.0; 9]; 3]; // D[a] G
        let mut gdg = [[0.0; 9]; 3]; // G D[a] G
        let mut s = [[0.0; 9]; 3]; // S[a] = sum_d G_{ad} D[d]
        for a in 0..3 {
            e[a] = matmul3(&d[a], &g);
            gdg[a] = matmul3(&g, &e[a]);
            let (c0, c1, c2) = (g[3 * a], g[3 * a + 1], g[3 * a + 2]);
            for k in 0..9 {
                s[a][k] = c0 * d[0][k] + c1 * d[1][k] + c2 * d[2][k];
            }
        }
        let mut pm = [[0.0; 9]; 3]; // P[q]_{il} = sum_m E[m]_{iq} G_{ml}
        for q in 0..3 {
            for i in 0..3 {
                for l in 0..3 {
                    pm[q][3 * i + l] = e[0][3 * i + q] * g[l]
                        + e[1][3 * i + q] * g[3 + l]
                        + e[2][3 * i + q] * g[6 + l];
                }
            }
        }
        let rm = [
            matmul3(&s[0], &g),
            matmul3(&s[1], &g),
            matmul3(&s[2], &g),
        ];

        let dv = &dvdata[node * 3..node * 3 + 3];
        let lp = &lpdata[b6..b6 + 6];
        let fx = &fxdata[b6..b6 + 6];
        let o = &mut odata[b6..b6 + 6];
        for i in 0..3 {
            for j in i..3 {
                let c = sym_index(3, i, j);
                let mut t1 = 0.0;
                let mut t2 = 0.0;
                let mut t3 = 0.0;
                let mut t4 = 0.0;
                let mut t5 = 0.0;
                for a in 0..3 {
                    for bb in 0..3 {
                        t1 += gdg[i][3 * a + bb] * d[j][3 * a + bb];
                        t2 += pm[a][3 * i + bb] * d[a][3 * j + bb];
                        t3 += e[a][3 * i + bb] * s[a][3 * j + bb];
                        t4 += d[a][3 * i + bb] * gdg[j][3 * a + bb];
                        t5 += d[i][3 * a + bb] * rm[a][3 * j + bb];
                    }
                }
                let q0 = 0.5 * (t1 + 2.0 * t2 - 2.0 * t3 - 2.0 * t4 - 2.0 * t5);
                let adv = dv[0] * d[0][3 * i + j] + dv[1] * d[1][3 * i + j] + dv[2] * d[2][3 * i + j];
                o[c] = lp[c] + fx[c] + q0 - adv;
            }
        }
    }
    Ok(())
}

fn rhs_into_generic(m: &MetricField, scratch: &mut RhsScratch, out: &mut Field) -> Result<()> {
    let lat = m.lat();
    let n = lat.n();
    let nc = sym_comps(n);
    assert_eq!(out.shape(), (lat, nc), "output shape mismatch");

    // Pointwise inverse metric; failure reports the node.
    {
        let ginv = &mut scratch.ginv;
        for node in 0..lat.nodes() {
            let g = m.g_at(node);
            let (inv, _) = sym_inverse_det(n, &g).ok_or_else(|| {
                let eigs = sym_eigenvalues(n, &g);
                Error::NotPositiveDefinite {
                    node,
                    min_eig: eigs[0],
                }
            })?;
            full_to_sym(n, &inv, ginv.at_mut(node));
        }
    }

    for a in 0..n {
        fd_derivative_into(m.h(), &mut scratch.dh[a], a);
    }

    // divg_q = sum_p d_p g^{pq}
    scratch.divg.fill(0.0);
    for p in 0..n {
        fd_derivative_into(&scratch.ginv, &mut scratch.tmp, p);
        for node in 0..lat.nodes() {
            let t = scratch.tmp.at(node);
            let d = scratch.divg.at_mut(node);
            for q in 0..n {
                d[q] += t[sym_index(n, p, q)];
            }
        }
    }

    fd_laplacian_into(m.h(), &mut scratch.lap);

    // Conservative divergence of (g^{pq} - delta^{pq}) d_q h over faces.
    scratch.flux.fill(0.0);
    let res = lat.res();
    let dx = lat.dx();
    let inv_dx = 1.0 / dx;
    let strides = lat.strides();
    let hdata = m.h().data();
    for p in 0..n {
        let st = strides[p] * nc;
        // Face值 F(x) lives on the face between x and x+e_p.
        {
            let face = scratch.face.data_mut();
            let gdata = scratch.ginv.data();
            for base in lat.line_bases(p) {
                let b = base * nc;
                for j in 0..res {
                    let here = b + j * st;
                    let plus = if j + 1 == res { b } else { here + st };
                    let node_here = here / nc;
                    let node_plus = plus / nc;
                    // Face-averaged coefficients A^{pq} = g^{pq} - delta^{pq}.
                    let mut a_face = [0.0; MAX_N];
                    for q in 0..n {
                        let c = sym_index(n, p, q);
                        let mut v = 0.5 * (gdata[here / nc * nc + c] + gdata[plus / nc * nc + c]);
                        if q == p {
                            v -= 1.0;
                        }
                        a_face[q] = v;
                    }
                    for c in 0..nc {
                        let mut f = 0.0;
                        for q in 0..n {
                            let dq = if q == p {
                                (hdata[plus + c] - hdata[here + c]) * inv_dx
                            } else {
                                0.5 * (scratch.dh[q].get(node_here, c)
                                    + scratch.dh[q].get(node_plus, c))
                            };
                            f += a_face[q] * dq;
                        }
                        face[here + c] = f;
                    }
                }
            }
        }
        // Divergence: (F(x) - F(x - e_p)) / dx.
        {
            let face = scratch.face.data();
            let flux = scratch.flux.data_mut();
            for base in lat.line_bases(p) {
                let b = base * nc;
                for j in 0..res {
                    let here = b + j * st;
                    let minus = if j == 0 { b + (res - 1) * st } else { here - st };
                    for c in 0..nc {
                        flux[here + c] += (face[here + c] - face[minus + c]) * inv_dx;
                    }
                }
            }
        }
    }

    // Pointwise assembly.
    for node in 0..lat.nodes() {
        let g_up = sym_to_full(n, scratch.ginv.at(node));
        let mut d = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        for a in 0..n {
            d[a] = sym_to_full(n, scratch.dh[a].at(node));
        }
        // Shared contractions.
        let mut gdg = [[[0.0; MAX_N]; MAX_N]; MAX_N]; // G D[a] G
        let mut e = [[[0.0; MAX_N]; MAX_N]; MAX_N]; // D[a] G
        let mut s = [[[0.0; MAX_N]; MAX_N]; MAX_N]; // S[a]_{bc} = G_{ad} D[d]_{bc}
        for a in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += d[a][i][k] * g_up[k][j];
                    }
                    e[a][i][j] = acc;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += g_up[i][k] * e[a][k][j];
                    }
                    gdg[a][i][j] = acc;
                }
            }
            for b in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for dd in 0..n {
                        acc += g_up[a][dd] * d[dd][b][c];
                    }
                    s[a][b][c] = acc;
                }
            }
        }
        // P[q]_{il} = sum_m E[m]_{iq} G_{ml}; R[p] = S[p] G.
        let mut pm = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        let mut rm = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        for q in 0..n {
            for i in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for mm in 0..n {
                        acc += e[mm][i][q] * g_up[mm][l];
                    }
                    pm[q][i][l] = acc;
                }
            }
        }
        for p in 0..n {
            for j in 0..n {
                for mmm in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += s[p][j][l] * g_up[l][mmm];
                    }
                    rm[p][j][mmm] = acc;
                }
            }
        }

        let divg = scratch.divg.at(node);
        let lap = scratch.lap.at(node);
        let flux = scratch.flux.at(node);
        let o = out.at_mut(node);
        for i in 0..n {
            for j in i..n {
                let c = sym_index(n, i, j);
                // term1 = GDG[i] : D[j]
                let mut t1 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        t1 += gdg[i][a][b] * d[j][a][b];
                    }
                }
                // term2 = 2 sum_q (P[q] D[q])_{ij}
                let mut t2 = 0.0;
                for q in 0..n {
                    for l in 0..n {
                        t2 += pm[q][i][l] * d[q][j][l];
                    }
                }
                t2 *= 2.0;
                // term3 = -2 sum_m (E[m] S[m]^T)_{ij}
                let mut t3 = 0.0;
                for mm in 0..n {
                    for q in 0..n {
                        t3 += e[mm][i][q] * s[mm][j][q];
                    }
                }
                t3 *= -2.0;
                // term4 = -2 sum_{p,l} D[p]_{il} GDG[j]_{pl}
                let mut t4 = 0.0;
                for p in 0..n {
                    for l in 0..n {
                        t4 += d[p][i][l] * gdg[j][p][l];
                    }
                }
                t4 *= -2.0;
                // term5 = -2 sum_{p,m} D[i]_{pm} R[p]_{jm}
                let mut t5 = 0.0;
                for p in 0..n {
                    for mm in 0..n {
                        t5 += d[i][p][mm] * rm[p][j][mm];
                    }
                }
                t5 *= -2.0;
                let q0 = 0.5 * (t1 + t2 + t3 + t4 + t5);
                let mut adv = 0.0;
                for q in 0..n {
                    adv += divg[q] * d[q][i][j];
                }
                o[c] = lap[c] + flux[c] + q0 - adv;
            }
        }
    }
    Ok(())
}

/// Allocating wrapper over the fused right-hand side.
pub fn rdtf_rhs(m: &MetricField) -> Result<Field> {
    let mut scratch = RhsScratch::new(m.lat());
    let mut out = Field::sym2(m.lat());
    rdtf_rhs_into(m, &mut scratch, &mut out)?;
    Ok(out)
}

/// Split the evolution into dt h = Lap h + Q0 + div Q1: returns the
/// zeroth-order source Q0 (quadratic gradient terms plus the inverse-metric
/// advection) and the divergence-form coefficients Q1_p = (g^{pq} -
/// delta^{pq}) d_q h, one symmetric field per axis, at cell centers.
pub fn q_decomposition(m: &MetricField) -> Result<(Field, Vec<Field>)> {
    let lat = m.lat();
    let n = lat.n();
    let mut scratch = RhsScratch::new(lat);

    {
        let ginv = &mut scratch.ginv;
        for node in 0..lat.nodes() {
            let g = m.g_at(node);
            let (inv, _) = sym_inverse_det(n, &g).ok_or_else(|| {
                let eigs = sym_eigenvalues(n, &g);
                Error::NotPositiveDefinite {
                    node,
                    min_eig: eigs[0],
                }
            })?;
            full_to_sym(n, &inv, ginv.at_mut(node));
        }
    }
    for a in 0..n {
        fd_derivative_into(m.h(), &mut scratch.dh[a], a);
    }
    scratch.divg.fill(0.0);
    for p in 0..n {
        fd_derivative_into(&scratch.ginv, &mut scratch.tmp, p);
        for node in 0..lat.nodes() {
            let t = scratch.tmp.at(node);
            let d = scratch.divg.at_mut(node);
            for q in 0..n {
                d[q] += t[sym_index(n, p, q)];
            }
        }
    }

    let mut q0 = Field::sym2(lat);
    let mut q1: Vec<Field> = (0..n).map(|_| Field::sym2(lat)).collect();

    for node in 0..lat.nodes() {
        let g_up = sym_to_full(n, scratch.ginv.at(node));
        let mut d = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        for a in 0..n {
            d[a] = sym_to_full(n, scratch.dh[a].at(node));
        }
        let mut gdg = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        let mut e = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        let mut s = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        for a in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += d[a][i][k] * g_up[k][j];
                    }
                    e[a][i][j] = acc;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += g_up[i][k] * e[a][k][j];
                    }
                    gdg[a][i][j] = acc;
                }
            }
            for b in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for dd in 0..n {
                        acc += g_up[a][dd] * d[dd][b][c];
                    }
                    s[a][b][c] = acc;
                }
            }
        }
        let mut pm = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        let mut rm = [[[0.0; MAX_N]; MAX_N]; MAX_N];
        for q in 0..n {
            for i in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for mm in 0..n {
                        acc += e[mm][i][q] * g_up[mm][l];
                    }
                    pm[q][i][l] = acc;
                }
            }
        }
        for p in 0..n {
            for j in 0..n {
                for mmm in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += s[p][j][l] * g_up[l][mmm];
                    }
                    rm[p][j][mmm] = acc;
                }
            }
        }

        let divg = scratch.divg.at(node);
        let ginv = scratch.ginv.at(node);
        let o = q0.at_mut(node);
        for i in 0..n {
            for j in i..n {
                let c = sym_index(n, i, j);
                let mut t1 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        t1 += gdg[i][a][b] * d[j][a][b];
                    }
                }
                let mut t2 = 0.0;
                for q in 0..n {
                    for l in 0..n {
                        t2 += pm[q][i][l] * d[q][j][l];
                    }
                }
                t2 *= 2.0;
                let mut t3 = 0.0;
                for mm in 0..n {
                    for q in 0..n {
                        t3 += e[mm][i][q] * s[mm][j][q];
                    }
                }
                t3 *= -2.0;
                let mut t4 = 0.0;
                for p in 0..n {
                    for l in 0..n {
                        t4 += d[p][i][l] * gdg[j][p][l];
                    }
                }
                t4 *= -2.0;
                let mut t5 = 0.0;
                for p in 0..n {
                    for mm in 0..n {
                        t5 += d[i][p][mm] * rm[p][j][mm];
                    }
                }
                t5 *= -2.0;
                let mut adv = 0.0;
                for q in 0..n {
                    adv += divg[q] * d[q][i][j];
                }
                o[c] = 0.5 * (t1 + t2 + t3 + t4 + t5) - adv;
                for p in 0..n {
                    let mut w = 0.0;
                    for q in 0..n {
                        let mut a_pq = ginv[sym_index(n, p, q)];
                        if p == q {
                            a_pq -= 1.0;
                        }
                        w += a_pq * d[q][i][j];
                    }
                    q1[p].at_mut(node)[c] = w;
                }
            }
        }
    }
    Ok((q0, q1))
}

/// Laplace-Beltrami of a scalar: g^{ij} (d_i d_j f - Gamma^k_ij d_k f).
pub fn laplace_beltrami(m: &MetricField, f: &Field) -> Result<Field> {
    let lat = m.lat();
    let n = lat.n();
    let nc = sym_comps(n);
    assert_eq!(f.comps(), 1, "scalar field expected");
    let ginv = m.inverse()?;
    let gamma = christoffel(m)?;
    let hess = scalar_hessian(lat, f);
    let mut df = Vec::with_capacity(n);
    for a in 0..n {
        let mut d = Field::scalar(lat);
        fd_derivative_into(f, &mut d, a);
        df.push(d);
    }
    let mut out = Field::scalar(lat);
    for node in 0..lat.nodes() {
        let g_up = sym_to_full(n, ginv.at(node));
        let ga = gamma.at(node);
        let hs = hess.at(node);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut t = hs[sym_index(n, i, j)];
                for k in 0..n {
                    t -= ga[k * nc + sym_index(n, i, j)] * df[k].get(node, 0);
                }
                s += g_up[i][j] * t;
            }
        }
        out.set(node, 0, s);
    }
    Ok(out)
}

/// Symmetric matrix of second differences of a scalar (mixed via composed
/// centered first differences).
pub fn scalar_hessian(lat: Lattice, f: &Field) -> Field {
    let n = lat.n();
    let mut out = Field::sym2(lat);
    let mut tmp = Field::scalar(lat);
    let mut tmp2 = Field::scalar(lat);
    for i in 0..n {
        fd_second_into(f, &mut tmp, i);
        for node in 0..lat.nodes() {
            out.set(node, sym_index(n, i, i), tmp.get(node, 0));
        }
        fd_derivative_into(f, &mut tmp, i);
        for j in i + 1..n {
            fd_derivative_into(&tmp, &mut tmp2, j);
            for node in 0..lat.nodes() {
                out.set(node, sym_index(n, i, j), tmp2.get(node, 0));
            }
        }
    }
    out
}

/// Advection X^k d_k f of a scalar along a vector field.
pub fn advect(x: &Field, f: &Field) -> Result<Field> {
    let lat = f.lat();
    let n = lat.n();
    assert_eq!(f.comps(), 1, "scalar field expected");
    assert_eq!(x.comps(), n, "vector field expected");
    let mut out = Field::scalar(lat);
    let mut d = Field::scalar(lat);
    for k in 0..n {
        fd_derivative_into(f, &mut d, k);
        for node in 0..lat.nodes() {
            let v = out.get(node, 0) + x.get(node, k) * d.get(node, 0);
            out.set(node, 0, v);
        }
    }
    Ok(out)
}
