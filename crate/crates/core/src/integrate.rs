//! Fixed-step explicit Runge-Kutta stepping over fixed-size state arrays.

/// One classical RK4 step of size `h` for the autonomous system `f`.
pub fn rk4_step<const N: usize, F>(f: &F, x: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = f(x);
    let k2 = f(&axpy(x, 0.5 * h, &k1));
    let k3 = f(&axpy(x, 0.5 * h, &k2));
    let k4 = f(&axpy(x, h, &k3));
    let mut out = *x;
    for i in 0..N {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(x: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

/// Number of equal substeps of at most `max_substep` covering `dt`.
pub fn substeps(dt: f64, max_substep: f64) -> usize {
    let n = (dt / max_substep - 1e-9).ceil();
    (n as usize).max(1)
}
