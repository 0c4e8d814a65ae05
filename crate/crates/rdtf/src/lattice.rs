//! Periodic lattice, multi-component node fields, and second-order centered
//! finite-difference stencils. All geometry sits on the flat torus
//! [-L/2, L/2)^n sampled at res^n nodes; indices wrap.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest supported spatial dimension. Small fixed arrays are sized by this.
pub const MAX_N: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    n: usize,
    res: usize,
    extent: f64,
}

impl Lattice {
    pub fn new(n: usize, res: usize, extent: f64) -> Result<Self> {
        if !(2..=MAX_N).contains(&n) {
            return Err(Error::InvalidLattice {
                reason: format!("dimension {n} outside supported range 2..=4"),
            });
        }
        if res < 8 {
            return Err(Error::InvalidLattice {
                reason: format!("resolution {res} below minimum 8"),
            });
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidLattice {
                reason: format!("extent {extent} not a positive finite number"),
            });
        }
        // res^n must fit comfortably in memory bookkeeping.
        let nodes = (res as u128).pow(n as u32);
        if nodes > (1u128 << 40) {
            return Err(Error::InvalidLattice {
                reason: format!("res^n = {nodes} exceeds addressable budget"),
            });
        }
        Ok(Lattice { n, res, extent })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn res(&self) -> usize {
        self.res
    }

    #[inline]
    pub fn extent(&self) -> f64 {
        self.extent
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.extent / self.res as f64
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.res.pow(self.n as u32)
    }

    /// Node-index stride of each axis (axis 0 slowest, axis n-1 contiguous).
    #[inline]
    pub fn strides(&self) -> [usize; MAX_N] {
        let mut s = [0usize; MAX_N];
        let mut acc = 1usize;
        for a in (0..self.n).rev() {
            s[a] = acc;
            acc *= self.res;
        }
        s
    }

    /// Coordinate of grid line `i` on any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.extent + i as f64 * self.dx()
    }

    #[inline]
    pub fn decode(&self, node: usize) -> [usize; MAX_N] {
        debug_assert!(node < self.nodes());
        let mut ix = [0usize; MAX_N];
        let mut rem = node;
        for a in (0..self.n).rev() {
            ix[a] = rem % self.res;
            rem /= self.res;
        }
        ix
    }

    #[inline]
    pub fn encode(&self, ix: &[usize; MAX_N]) -> usize {
        let mut node = 0usize;
        for a in 0..self.n {
            debug_assert!(ix[a] < self.res);
            node = node * self.res + ix[a];
        }
        node
    }

    #[inline]
    pub fn position(&self, node: usize) -> [f64; MAX_N] {
        let ix = self.decode(node);
        let mut p = [0.0; MAX_N];
        for a in 0..self.n {
            p[a] = self.coord(ix[a]);
        }
        p
    }

    /// Periodic representative of a coordinate difference in [-L/2, L/2).
    #[inline]
    pub fn min_image(&self, d: f64) -> f64 {
        let l = self.extent;
        let mut r = d - l * (d / l).round();
        if r >= 0.5 * l {
            r -= l;
        } else if r < -0.5 * l {
            r += l;
        }
        r
    }

    /// Squared min-image distance between two coordinate points.
    #[inline]
    pub fn dist2(&self, a: &[f64; MAX_N], b: &[f64; MAX_N]) -> f64 {
        let mut s = 0.0;
        for ax in 0..self.n {
            let d = self.min_image(a[ax] - b[ax]);
            s += d * d;
        }
        s
    }

    /// Nodes within min-image distance `r` of `center`, ascending node order.
    /// Radius is capped at extent/4 so the min-image ball is unambiguous.
    pub fn restrict_ball(&self, center: &[f64; MAX_N], r: f64) -> Result<Vec<usize>> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::invalid("restrict_ball", format!("radius {r} not finite")));
        }
        let max_r = 0.25 * self.extent;
        if r > max_r {
            return Err(Error::RadiusTooLarge { r, max: max_r });
        }
        let dx = self.dx();
        let reach = (r / dx).floor() as i64 + 1;
        // Nearest grid line per axis, then scan the bounding box.
        let mut base = [0i64; MAX_N];
        for a in 0..self.n {
            base[a] = ((center[a] + 0.5 * self.extent) / dx).round() as i64;
        }
        let r2 = r * r;
        let mut out = Vec::new();
        let mut off = [0i64; MAX_N];
        for a in 0..self.n {
            off[a] = -reach;
        }
        loop {
            let mut p = [0.0; MAX_N];
            let mut ix = [0usize; MAX_N];
            for a in 0..self.n {
                let i = (base[a] + off[a]).rem_euclid(self.res as i64) as usize;
                ix[a] = i;
                p[a] = self.coord(i);
            }
            if self.dist2(&p, center) < r2 {
                out.push(self.encode(&ix));
            }
            // Advance the odometer over the bounding box.
            let mut a = self.n;
            loop {
                if a == 0 {
                    break;
                }
                a -= 1;
                off[a] += 1;
                if off[a] <= reach {
                    break;
                }
                off[a] = -reach;
                if a == 0 {
                    a = usize::MAX;
                    break;
                }
            }
            if a == usize::MAX {
                break;
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Iterate base nodes of all grid lines along `axis` (nodes with index 0
    /// on that axis).
    pub(crate) fn line_bases(&self, axis: usize) -> Vec<usize> {
        debug_assert!(axis < self.n);
        let strides = self.strides();
        let mut bases = Vec::with_capacity(self.nodes() / self.res);
        let mut stack = vec![0usize];
        for a in 0..self.n {
            if a == axis {
                continue;
            }
            let mut next = Vec::with_capacity(stack.len() * self.res);
            for &b in &stack {
                for i in 0..self.res {
                    next.push(b + i * strides[a]);
                }
            }
            stack = next;
        }
        bases.extend(stack);
        bases.sort_unstable();
        bases
    }
}

/// Number of independent components of a symmetric 2-tensor in dimension n.
#[inline]
pub const fn sym_comps(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat component index of the (i, j) entry of a symmetric 2-tensor, i <= j
/// not required. Row-major over the upper triangle.
#[inline]
pub const fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// The (i, j) pair of a flat symmetric component index.
#[inline]
pub fn sym_pair(n: usize, c: usize) -> (usize, usize) {
    let mut i = 0;
    let mut c0 = c;
    loop {
        let row = n - i;
        if c0 < row {
            return (i, i + c0);
        }
        c0 -= row;
        i += 1;
    }
}

/// Dense node field with `comps` values per node, node-major layout.
#[derive(Clone, Debug)]
pub struct Field {
    lat: Lattice,
    comps: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(lat: Lattice, comps: usize) -> Self {
        Field {
            lat,
            comps,
            data: vec![0.0; lat.nodes() * comps],
        }
    }

    pub fn scalar(lat: Lattice) -> Self {
        Self::zeros(lat, 1)
    }

    pub fn vector(lat: Lattice) -> Self {
        Self::zeros(lat, lat.n())
    }

    pub fn sym2(lat: Lattice) -> Self {
        Self::zeros(lat, sym_comps(lat.n()))
    }

    /// Gradient-of-sym2 layout: axis-major blocks of sym2 components.
    pub fn sym2_grad(lat: Lattice) -> Self {
        Self::zeros(lat, lat.n() * sym_comps(lat.n()))
    }

    pub fn from_fn_scalar(lat: Lattice, mut f: impl FnMut(&[f64; MAX_N]) -> f64) -> Self {
        let mut out = Self::scalar(lat);
        for node in 0..lat.nodes() {
            let p = lat.position(node);
            out.data[node] = f(&p);
        }
        out
    }

    pub fn from_fn(
        lat: Lattice,
        comps: usize,
        mut f: impl FnMut(&[f64; MAX_N], usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(lat, comps);
        for node in 0..lat.nodes() {
            let p = lat.position(node);
            for c in 0..comps {
                out.data[node * comps + c] = f(&p, c);
            }
        }
        out
    }

    #[inline]
    pub fn lat(&self) -> Lattice {
        self.lat
    }

    #[inline]
    pub fn comps(&self) -> usize {
        self.comps
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.data[node * self.comps..(node + 1) * self.comps]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.comps..(node + 1) * self.comps]
    }

    #[inline]
    pub fn get(&self, node: usize, c: usize) -> f64 {
        self.data[node * self.comps + c]
    }

    #[inline]
    pub fn set(&mut self, node: usize, c: usize, v: f64) {
        self.data[node * self.comps + c] = v;
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sup_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.shape(), other.shape(), "field shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Exact bit-level equality, including shape.
    pub fn bit_identical(&self, other: &Field) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn shape(&self) -> (Lattice, usize) {
        (self.lat, self.comps)
    }

    /// Error with the index of the first non-finite node value, if any.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (k, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    node: k / self.comps,
                });
            }
        }
        Ok(())
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        assert_eq!(self.shape(), other.shape(), "field shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn copy_from(&mut self, other: &Field) {
        assert_eq!(self.shape(), other.shape(), "field shape mismatch");
        self.data.copy_from_slice(&other.data);
    }
}

/// Centered first derivative along `axis`, second-order accurate.
/// Rejects non-finite input, reporting the offending node.
pub fn fd_derivative(src: &Field, axis: usize) -> Result<Field> {
    src.check_finite("fd_derivative input")?;
    let mut dst = Field::zeros(src.lat(), src.comps());
    fd_derivative_into(src, &mut dst, axis);
    Ok(dst)
}

/// In-place centered first derivative; skips the finiteness scan for hot paths.
pub fn fd_derivative_into(src: &Field, dst: &mut Field, axis: usize) {
    stencil_into(src, dst, axis, StencilKind::First, false);
}

/// Centered same-axis second derivative.
pub fn fd_second(src: &Field, axis: usize) -> Result<Field> {
    src.check_finite("fd_second input")?;
    let mut dst = Field::zeros(src.lat(), src.comps());
    fd_second_into(src, &mut dst, axis);
    Ok(dst)
}

pub fn fd_second_into(src: &Field, dst: &mut Field, axis: usize) {
    stencil_into(src, dst, axis, StencilKind::Second, false);
}

/// Flat 2n+1-point Laplacian.
pub fn fd_laplacian(src: &Field) -> Result<Field> {
    src.check_finite("fd_laplacian input")?;
    let mut dst = Field::zeros(src.lat(), src.comps());
    fd_laplacian_into(src, &mut dst);
    Ok(dst)
}

pub fn fd_laplacian_into(src: &Field, dst: &mut Field) {
    dst.fill(0.0);
    for a in 0..src.lat().n() {
        stencil_into(src, dst, a, StencilKind::Second, true);
    }
}

/// dst += centered second difference along `axis`.
pub fn fd_second_acc_into(src: &Field, dst: &mut Field, axis: usize) {
    stencil_into(src, dst, axis, StencilKind::Second, true);
}

enum StencilKind {
    First,
    Second,
}

fn stencil_into(src: &Field, dst: &mut Field, axis: usize, kind: StencilKind, acc: bool) {
    let lat = src.lat();
    assert_eq!(src.shape(), dst.shape(), "field shape mismatch");
    assert!(axis < lat.n(), "axis {axis} out of range");
    let res = lat.res();
    let cc = src.comps();
    let st = lat.strides()[axis] * cc;
    let dx = lat.dx();
    let (c_m, c_0, c_p, scale) = match kind {
        StencilKind::First => (-1.0, 0.0, 1.0, 1.0 / (2.0 * dx)),
        StencilKind::Second => (1.0, -2.0, 1.0, 1.0 / (dx * dx)),
    };
    let sdata = src.data();
    let ddata = dst.data_mut();
    for base in lat.line_bases(axis) {
        let b = base * cc;
        for j in 0..res {
            let here = b + j * st;
            let plus = if j + 1 == res { b } else { here + st };
            let minus = if j == 0 { b + (res - 1) * st } else { here - st };
            let (s_m, s_0, s_p) = (
                &sdata[minus..minus + cc],
                &sdata[here..here + cc],
                &sdata[plus..plus + cc],
            );
            let d = &mut ddata[here..here + cc];
            for c in 0..cc {
                let v = (c_m * s_m[c] + c_0 * s_0[c] + c_p * s_p[c]) * scale;
                if acc {
                    d[c] += v;
                } else {
                    d[c] = v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn lattice_validation() {
        assert!(Lattice::new(3, 16, 1.0).is_ok());
        assert!(Lattice::new(1, 16, 1.0).is_err());
        assert!(Lattice::new(5, 16, 1.0).is_err());
        assert!(Lattice::new(3, 4, 1.0).is_err());
        assert!(Lattice::new(3, 16, 0.0).is_err());
        assert!(Lattice::new(3, 16, f64::NAN).is_err());
    }

    #[test]
    fn sym_index_bijection() {
        for n in 2..=4 {
            let mut seen = vec![false; sym_comps(n)];
            for i in 0..n {
                for j in i..n {
                    let c = sym_index(n, i, j);
                    assert!(!seen[c], "collision at ({i},{j})");
                    seen[c] = true;
                    assert_eq!(sym_pair(n, c), (i, j));
                    assert_eq!(sym_index(n, j, i), c);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    /// The centered stencil applied to a plane wave has the exact discrete
    /// symbol sin(k dx)/dx; freeze that identity, then check the symbol
    /// converges to k at second order.
    #[test]
    fn derivative_matches_discrete_symbol() {
        let lat = Lattice::new(3, 16, 2.0 * std::f64::consts::PI).unwrap();
        let k = [3.0, 1.0, 2.0];
        let phase = 0.3;
        let f = Field::from_fn_scalar(lat, |p| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin());
        for axis in 0..3 {
            let d = fd_derivative(&f, axis).unwrap();
            let dx = lat.dx();
            let symbol = (k[axis] * dx).sin() / dx;
            for node in (0..lat.nodes()).step_by(7) {
                let p = lat.position(node);
                let expect = symbol * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).cos();
                assert_relative_eq!(d.get(node, 0), expect, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn derivative_order_two_against_continuum() {
        let mut errs = Vec::new();
        let mut dxs = Vec::new();
        for res in [16usize, 32, 64] {
            let lat = Lattice::new(2, res, 2.0 * std::f64::consts::PI).unwrap();
            let f = Field::from_fn_scalar(lat, |p| (2.0 * p[0]).sin() * (3.0 * p[1]).cos());
            let d = fd_derivative(&f, 0).unwrap();
            let mut err = 0.0f64;
            for node in 0..lat.nodes() {
                let p = lat.position(node);
                let exact = 2.0 * (2.0 * p[0]).cos() * (3.0 * p[1]).cos();
                err = err.max((d.get(node, 0) - exact).abs());
            }
            errs.push(err);
            dxs.push(lat.dx());
        }
        let order = crate::fit::fit_order(&dxs, &errs).unwrap();
        assert!((1.8..=2.2).contains(&order), "order {order}");
    }

    #[test]
    fn laplacian_matches_discrete_eigenvalue() {
        let lat = Lattice::new(3, 12, 2.0 * std::f64::consts::PI).unwrap();
        let k = [2.0, 5.0, 1.0];
        let f = Field::from_fn_scalar(lat, |p| {
            (k[0] * p[0]).sin() * (k[1] * p[1]).sin() * (k[2] * p[2]).sin()
        });
        let lap = fd_laplacian(&f).unwrap();
        let dx = lat.dx();
        let mut eig = 0.0;
        for a in 0..3 {
            eig -= (2.0 - 2.0 * (k[a] * dx).cos()) / (dx * dx);
        }
        for node in (0..lat.nodes()).step_by(11) {
            assert_relative_eq!(lap.get(node, 0), eig * f.get(node, 0), epsilon = 1e-11);
        }
    }

    #[test]
    fn non_finite_input_is_located() {
        let lat = Lattice::new(2, 8, 1.0).unwrap();
        let mut f = Field::scalar(lat);
        f.set(37, 0, f64::NAN);
        match fd_derivative(&f, 0) {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, 37),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    /// Brute-force oracle: recount the ball over every node with the direct
    /// min-image metric, computed independently of restrict_ball internals.
    #[test]
    fn restrict_ball_matches_brute_force() {
        let lat = Lattice::new(3, 10, 1.0).unwrap();
        let center = [0.12, -0.43, 0.31, 0.0];
        let r = 0.21;
        let got = lat.restrict_ball(&center, r).unwrap();
        let mut expect = Vec::new();
        for node in 0..lat.nodes() {
            let p = lat.position(node);
            let mut d2 = 0.0;
            for a in 0..3 {
                let mut d = (p[a] - center[a]).abs() % 1.0;
                if d > 0.5 {
                    d = 1.0 - d;
                }
                d2 += d * d;
            }
            if d2 < r * r {
                expect.push(node);
            }
        }
        assert_eq!(got, expect);
        assert!(!got.is_empty());
    }

    #[test]
    fn restrict_ball_radius_cap() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let err = lat.restrict_ball(&[0.0; 4], 0.3);
        assert!(matches!(err, Err(Error::RadiusTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(n in 2usize..=4, seed in 0usize..10_000) {
            let lat = Lattice::new(n, 9, 1.7).unwrap();
            let node = seed % lat.nodes();
            let ix = lat.decode(node);
            prop_assert_eq!(lat.encode(&ix), node);
            for a in 0..n {
                prop_assert!(ix[a] < lat.res());
            }
        }

        #[test]
        fn min_image_in_half_open_box(d in -50.0f64..50.0) {
            let lat = Lattice::new(2, 8, 3.0).unwrap();
            let r = lat.min_image(d);
            prop_assert!(r >= -1.5 && r < 1.5);
            // Difference is an integer multiple of the extent.
            let k = (d - r) / 3.0;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
