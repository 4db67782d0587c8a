use crate::Scalar;

/// Chebyshev polynomial of the first kind, T_k(x).
///
/// Three-term recurrence T_0 = 1, T_1 = x, T_{k+1} = 2x T_k - T_{k-1};
/// defined for all real x.
pub fn chebyshev_t_scalar<T: Scalar>(k: usize, x: T) -> T {
    match k {
        0 => T::one(),
        1 => x,
        _ => {
            let two = T::from_f64_lossy(2.0);
            let mut prev = T::one();
            let mut cur = x;
            for _ in 2..=k {
                let next = two * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Chebyshev polynomial of the second kind, U_k(x).
///
/// Recurrence U_0 = 1, U_1 = 2x, U_{k+1} = 2x U_k - U_{k-1}.
/// Satisfies T_k'(x) = k U_{k-1}(x) and |U_{k-1}(x)| <= k on [-1, 1].
pub fn chebyshev_u_scalar<T: Scalar>(k: usize, x: T) -> T {
    let two = T::from_f64_lossy(2.0);
    match k {
        0 => T::one(),
        1 => two * x,
        _ => {
            let mut prev = T::one();
            let mut cur = two * x;
            for _ in 2..=k {
                let next = two * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// All of T_0(x) .. T_kmax(x) in one recurrence pass.
pub fn chebyshev_t_upto<T: Scalar>(k_max: usize, x: T) -> Vec<T> {
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(T::one());
    if k_max == 0 {
        return out;
    }
    out.push(x);
    let two = T::from_f64_lossy(2.0);
    for k in 2..=k_max {
        let next = two * x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    out
}

/// All of U_0(x) .. U_kmax(x) in one recurrence pass.
pub fn chebyshev_u_upto<T: Scalar>(k_max: usize, x: T) -> Vec<T> {
    let two = T::from_f64_lossy(2.0);
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(T::one());
    if k_max == 0 {
        return out;
    }
    out.push(two * x);
    for k in 2..=k_max {
        let next = two * x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    out
}
