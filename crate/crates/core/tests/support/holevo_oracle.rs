//! Independent Holevo-bound oracle built from explicit covariance matrices.
//!
//! The entangling-cloner state of Alice and Bob is written down mode by
//! mode, the trusted detector is modelled as a beam splitter mixing Bob's
//! mode with one half of an EPR pair, the homodyne measurement is applied by
//! Schur complement, and symplectic eigenvalues come from a symmetric
//! eigen-decomposition. No code is shared with the closed-form path.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

pub struct OracleSpectrum {
    /// Symplectic eigenvalues of the Alice-Bob state, descending.
    pub joint: Vec<f64>,
    /// Symplectic eigenvalues of the conditional (A, F, G) state, descending.
    pub conditional: Vec<f64>,
}

fn omega(modes: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(2 * modes, 2 * modes);
    for k in 0..modes {
        o[(2 * k, 2 * k + 1)] = 1.0;
        o[(2 * k + 1, 2 * k)] = -1.0;
    }
    o
}

fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Symplectic eigenvalues of a covariance matrix, descending.
pub fn symplectic_eigenvalues(gamma: &DMatrix<f64>) -> Vec<f64> {
    let modes = gamma.nrows() / 2;
    let om = omega(modes);
    let root = sqrtm(gamma);
    let m = &root * om.transpose() * gamma * &om * &root;
    let m = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev.into_iter().step_by(2).collect()
}

fn set_block(m: &mut DMatrix<f64>, i: usize, j: usize, diag: (f64, f64)) {
    m[(2 * i, 2 * j)] = diag.0;
    m[(2 * i + 1, 2 * j + 1)] = diag.1;
}

/// Builds the covariance matrices for GMCS/homodyne with a trusted detector
/// and returns their symplectic spectra. Requires `eta < 1`.
pub fn oracle_spectrum(v_a: f64, t: f64, eps: f64, eta: f64, nu_el: f64) -> OracleSpectrum {
    assert!(eta < 1.0);
    let v = v_a + 1.0;
    let chi_line = (1.0 - t) / t + eps;
    let w = t * (v + chi_line);
    let c_ab = (t * (v * v - 1.0)).sqrt();
    let v_el = 1.0 + nu_el / (1.0 - eta);
    let c_el = (v_el * v_el - 1.0).sqrt();

    // Mode order: A, B1, F0, G.
    let mut g = DMatrix::<f64>::zeros(8, 8);
    set_block(&mut g, 0, 0, (v, v));
    set_block(&mut g, 1, 1, (w, w));
    set_block(&mut g, 0, 1, (c_ab, -c_ab));
    set_block(&mut g, 1, 0, (c_ab, -c_ab));
    set_block(&mut g, 2, 2, (v_el, v_el));
    set_block(&mut g, 3, 3, (v_el, v_el));
    set_block(&mut g, 2, 3, (c_el, -c_el));
    set_block(&mut g, 3, 2, (c_el, -c_el));

    let joint = symplectic_eigenvalues(&g.view((0, 0), (4, 4)).into_owned());

    // Beam splitter of transmissivity eta between B1 and F0 -> (B, F).
    let (se, sr) = (eta.sqrt(), (1.0 - eta).sqrt());
    let mut s = DMatrix::<f64>::identity(8, 8);
    for q in 0..2 {
        let (b, f) = (2 + q, 4 + q);
        s[(b, b)] = se;
        s[(b, f)] = sr;
        s[(f, b)] = -sr;
        s[(f, f)] = se;
    }
    let g = &s * g * s.transpose();

    // Homodyne on the x quadrature of B (index 2): Schur complement against it.
    let rest: Vec<usize> = vec![0, 1, 4, 5, 6, 7];
    let gbx = g[(2, 2)];
    let mut cond = DMatrix::<f64>::zeros(6, 6);
    for (i, &ri) in rest.iter().enumerate() {
        for (j, &rj) in rest.iter().enumerate() {
            cond[(i, j)] = g[(ri, rj)] - g[(ri, 2)] * g[(rj, 2)] / gbx;
        }
    }
    let cond = (&cond + cond.transpose()) * 0.5;
    let conditional = symplectic_eigenvalues(&cond);
    OracleSpectrum { joint, conditional }
}

fn thermal(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (x + 1.0) * (x + 1.0).log2() - x * x.log2()
    }
}

/// Holevo bound from the oracle spectra, evaluating von Neumann entropies
/// of all modes (including the unit eigenvalue of the conditional state).
pub fn oracle_holevo(v_a: f64, t: f64, eps: f64, eta: f64, nu_el: f64) -> f64 {
    let s = oracle_spectrum(v_a, t, eps, eta, nu_el);
    let ent = |ls: &[f64]| ls.iter().map(|l| thermal((l - 1.0) / 2.0)).sum::<f64>();
    ent(&s.joint) - ent(&s.conditional)
}
