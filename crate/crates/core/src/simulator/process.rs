use nalgebra::DMatrix;

use super::density::{pauli_matrix, DensityMatrix};
use crate::circuit::C64;
use crate::error::Result;
use crate::pauli::{num_paulis, PauliString};

/// Chi matrix of a linear map on `n` qubits in the Pauli basis,
/// `E(rho) = sum_ab chi_ab P_a rho P_b`, obtained from the Choi matrix.
pub fn chi_matrix(n: usize, channel: impl Fn(DensityMatrix) -> Result<DensityMatrix>) -> Result<DMatrix<C64>> {
    let d = 1usize << n;
    // choi[(k, m), (l, r)] = E(|k><l|)[m, r]
    let mut choi = DMatrix::<C64>::zeros(d * d, d * d);
    for k in 0..d {
        for l in 0..d {
            let mut e = DMatrix::<C64>::zeros(d, d);
            e[(k, l)] = C64::new(1.0, 0.0);
            let out = channel(DensityMatrix::from_operator(n, &e)?)?;
            for m in 0..d {
                for r in 0..d {
                    choi[(k * d + m, l * d + r)] = out.get(m, r);
                }
            }
        }
    }
    let np = num_paulis(n);
    // |P>> = sum_k |k> (x) P|k>
    let vecs: Vec<Vec<C64>> = (0..np)
        .map(|a| {
            let p = pauli_matrix(&PauliString::from_index(n, a).expect("index"));
            let mut v = vec![C64::new(0.0, 0.0); d * d];
            for k in 0..d {
                for m in 0..d {
                    v[k * d + m] = p[(m, k)];
                }
            }
            v
        })
        .collect();
    let norm = C64::new((d * d) as f64, 0.0);
    Ok(DMatrix::from_fn(np, np, |a, b| {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d * d {
            if vecs[a][i] == C64::new(0.0, 0.0) {
                continue;
            }
            let row: C64 = (0..d * d).map(|j| choi[(i, j)] * vecs[b][j]).sum();
            acc += vecs[a][i].conj() * row;
        }
        acc / norm
    }))
}

/// Largest magnitude among off-diagonal chi entries.
pub fn max_offdiagonal(chi: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..chi.nrows() {
        for b in 0..chi.ncols() {
            if a != b {
                worst = worst.max(chi[(a, b)].norm());
            }
        }
    }
    worst
}

/// Root mean square of the off-diagonal chi entries.
pub fn rms_offdiagonal(chi: &DMatrix<C64>) -> f64 {
    let n = chi.nrows();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                s += chi[(a, b)].norm_sqr();
            }
        }
    }
    (s / (n * n - n) as f64).sqrt()
}
