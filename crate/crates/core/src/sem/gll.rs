//! Gauss-Lobatto-Legendre nodes, weights and 1D basis tables.

use nalgebra::DMatrix;

use crate::{real, Real};

/// Legendre `L_n(x)` and its first derivative by the three-term recurrence.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    if n == 0 {
        return (T::one(), T::zero());
    }
    let mut lm1 = T::one();
    let mut l = x;
    for k in 1..n {
        let kf = real::<T>(k as f64);
        let next = ((kf + kf + T::one()) * x * l - kf * lm1) / (kf + T::one());
        lm1 = l;
        l = next;
    }
    // (1 - x^2) L_n' = n (L_{n-1} - x L_n)
    let nf = real::<T>(n as f64);
    let denom = T::one() - x * x;
    let dl = if denom.abs() > real(1e-300) {
        nf * (lm1 - x * l) / denom
    } else {
        // endpoint value n(n+1)/2 * sign
        let v = nf * (nf + T::one()) / (T::one() + T::one());
        if x > T::zero() {
            v
        } else if n % 2 == 0 {
            -v
        } else {
            v
        }
    };
    (l, dl)
}

/// Gauss-Lobatto-Legendre nodes and weights for basis order `P`
/// (`P + 1` points). Integrates polynomials up to degree `2P - 1` exactly.
pub fn gll_nodes_weights<T: Real>(order: usize) -> (Vec<T>, Vec<T>) {
    assert!(order >= 1, "GLL rule needs order >= 1");
    let p = order;
    let n = p + 1;
    let mut nodes = vec![T::zero(); n];
    nodes[0] = -T::one();
    nodes[p] = T::one();
    // interior nodes: roots of L_P', Newton from Chebyshev-Lobatto guesses
    for k in 1..p {
        let mut x = -real::<T>((std::f64::consts::PI * k as f64 / p as f64).cos());
        for _ in 0..100 {
            let (l, dl) = legendre_with_derivative(p, x);
            // d/dx L_P' from the Legendre ODE:
            // (1-x^2) L'' = 2x L' - P(P+1) L
            let pf = real::<T>(p as f64);
            let ddl = ((x + x) * dl - pf * (pf + T::one()) * l) / (T::one() - x * x);
            let dx = dl / ddl;
            x -= dx;
            if dx.abs() < real(1e-16) {
                break;
            }
        }
        nodes[k] = x;
    }
    // enforce exact symmetry so mirrored meshes map node-to-node
    for k in 0..n / 2 {
        let s = (nodes[k] - nodes[p - k]) / (T::one() + T::one());
        nodes[k] = s;
        nodes[p - k] = -s;
    }
    if n % 2 == 1 {
        nodes[p / 2] = T::zero();
    }
    let scale = real::<T>(2.0) / (real::<T>(p as f64) * real::<T>((p + 1) as f64));
    let weights = nodes
        .iter()
        .map(|&x| {
            let (l, _) = legendre_with_derivative(p, x);
            scale / (l * l)
        })
        .collect();
    (nodes, weights)
}

/// Barycentric weights of a node set.
fn barycentric_weights<T: Real>(nodes: &[T]) -> Vec<T> {
    let n = nodes.len();
    let mut w = vec![T::one(); n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                w[j] *= nodes[j] - nodes[k];
            }
        }
        w[j] = T::one() / w[j];
    }
    w
}

/// Values and derivatives of the Lagrange basis on `nodes`, evaluated at
/// `points`. Returns `(V, D)` with `V[(j, q)] = l_j(points[q])`.
///
/// Evaluation points that coincide exactly with a node (endpoints, the
/// origin for even orders) are handled by the nodal formulas.
pub fn lagrange_tables<T: Real>(nodes: &[T], points: &[T]) -> (DMatrix<T>, DMatrix<T>) {
    let n = nodes.len();
    let m = points.len();
    let bw = barycentric_weights(nodes);
    let mut v = DMatrix::zeros(n, m);
    let mut d = DMatrix::zeros(n, m);
    for (q, &y) in points.iter().enumerate() {
        if let Some(i) = nodes.iter().position(|&x| x == y) {
            v[(i, q)] = T::one();
            let mut diag = T::zero();
            for j in 0..n {
                if j != i {
                    let val = (bw[j] / bw[i]) / (nodes[i] - nodes[j]);
                    d[(j, q)] = val;
                    diag -= val;
                }
            }
            d[(i, q)] = diag;
            continue;
        }
        let mut s0 = T::zero();
        let mut s1 = T::zero();
        for j in 0..n {
            let t = bw[j] / (y - nodes[j]);
            s0 += t;
            s1 += t / (y - nodes[j]);
        }
        for j in 0..n {
            let t = bw[j] / (y - nodes[j]);
            v[(j, q)] = t / s0;
            // derivative of t_j / sum(t_k)
            d[(j, q)] = (-t / (y - nodes[j]) + v[(j, q)] * s1) / s0;
        }
    }
    (v, d)
}

/// Values of the Legendre polynomials `L_0 .. L_deg` at `points`:
/// `V[(k, q)] = L_k(points[q])`.
pub fn legendre_tables<T: Real>(deg: usize, points: &[T]) -> DMatrix<T> {
    let m = points.len();
    let mut v = DMatrix::zeros(deg + 1, m);
    for (q, &x) in points.iter().enumerate() {
        v[(0, q)] = T::one();
        if deg >= 1 {
            v[(1, q)] = x;
        }
        for k in 1..deg {
            let kf = real::<T>(k as f64);
            v[(k + 1, q)] =
                ((kf + kf + T::one()) * x * v[(k, q)] - kf * v[(k - 1, q)]) / (kf + T::one());
        }
    }
    v
}
