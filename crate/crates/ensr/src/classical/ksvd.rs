//! Orthogonal matching pursuit and (approximate) K-SVD dictionary
//! learning, the engine behind both dictionary-based upscalers.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Default)]
pub struct SparseCode {
    pub support: Vec<usize>,
    pub coefs: Vec<f64>,
}

impl SparseCode {
    pub fn reconstruct(&self, dict: &DMatrix<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(dict.nrows());
        for (&k, &c) in self.support.iter().zip(&self.coefs) {
            y.axpy(c, &dict.column(k).clone_owned(), 1.0);
        }
        y
    }
}

/// Greedy sparse coding: pick the atom most correlated with the
/// residual, re-fit all picked coefficients by least squares, repeat.
/// Ties break toward the lower atom index.
pub fn omp(dict: &DMatrix<f64>, x: &DVector<f64>, sparsity: usize) -> SparseCode {
    let k_atoms = dict.ncols();
    let mut support: Vec<usize> = Vec::with_capacity(sparsity);
    let mut coefs = DVector::zeros(0);
    let mut residual = x.clone();
    for _ in 0..sparsity.min(k_atoms) {
        let corr = dict.transpose() * &residual;
        let mut best = usize::MAX;
        let mut best_v = 1e-12; // below this the residual is as good as coded
        for k in 0..k_atoms {
            if support.contains(&k) {
                continue;
            }
            let v = corr[k].abs();
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        if best == usize::MAX {
            break;
        }
        support.push(best);
        let s = dict.select_columns(support.iter());
        let g = s.transpose() * &s;
        let b = s.transpose() * x;
        match g.lu().solve(&b) {
            Some(c) => {
                residual = x - &s * &c;
                coefs = c;
            }
            None => {
                support.pop();
                break;
            }
        }
    }
    SparseCode {
        support,
        coefs: coefs.iter().copied().collect(),
    }
}

fn normalize_or_unit(mut v: DVector<f64>, fallback_axis: usize) -> DVector<f64> {
    let n = v.norm();
    if n > 1e-12 {
        v /= n;
        v
    } else {
        let mut e = DVector::zeros(v.nrows());
        e[fallback_axis % v.nrows()] = 1.0;
        e
    }
}

/// Dictionary learning over unit-norm atoms. Uses the single-alternation
/// (approximate) K-SVD atom update; unused atoms are replaced by the
/// currently worst-represented sample. Fully deterministic for a seed.
pub fn ksvd(
    samples: &DMatrix<f64>,
    atoms: usize,
    sparsity: usize,
    iters: usize,
    seed: u64,
) -> (DMatrix<f64>, Vec<SparseCode>) {
    let d = samples.nrows();
    let n = samples.ncols();
    assert!(atoms <= n, "need at least as many samples as atoms");
    assert!(atoms > 0 && n > 0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut dict = DMatrix::zeros(d, atoms);
    for (k, &i) in idx.iter().take(atoms).enumerate() {
        dict.set_column(k, &normalize_or_unit(samples.column(i).clone_owned(), k));
    }

    let mut codes: Vec<SparseCode> = vec![SparseCode::default(); n];
    for _ in 0..iters {
        let mut res_norms = vec![0.0f64; n];
        for i in 0..n {
            let x = samples.column(i).clone_owned();
            let c = omp(&dict, &x, sparsity);
            res_norms[i] = (&x - c.reconstruct(&dict)).norm_squared();
            codes[i] = c;
        }
        for k in 0..atoms {
            let users: Vec<usize> = (0..n)
                .filter(|&i| codes[i].support.contains(&k))
                .collect();
            if users.is_empty() {
                let mut worst = 0usize;
                for i in 1..n {
                    if res_norms[i] > res_norms[worst] {
                        worst = i;
                    }
                }
                dict.set_column(
                    k,
                    &normalize_or_unit(samples.column(worst).clone_owned(), k),
                );
                res_norms[worst] = 0.0; // don't seed two atoms from one sample
                continue;
            }
            // residuals excluding atom k, and k's coefficient row
            let mut e = DMatrix::zeros(d, users.len());
            let mut g = DVector::zeros(users.len());
            for (j, &i) in users.iter().enumerate() {
                let mut r = samples.column(i).clone_owned();
                for (&ka, &c) in codes[i].support.iter().zip(&codes[i].coefs) {
                    if ka != k {
                        r.axpy(-c, &dict.column(ka).clone_owned(), 1.0);
                    }
                }
                let pos = codes[i].support.iter().position(|&a| a == k).unwrap();
                g[j] = codes[i].coefs[pos];
                e.set_column(j, &r);
            }
            let atom = normalize_or_unit(&e * &g, k);
            let new_g = e.transpose() * &atom;
            dict.set_column(k, &atom);
            for (j, &i) in users.iter().enumerate() {
                let pos = codes[i].support.iter().position(|&a| a == k).unwrap();
                codes[i].coefs[pos] = new_g[j];
            }
        }
    }
    // final coding pass against the settled dictionary
    for i in 0..n {
        codes[i] = omp(&dict, &samples.column(i).clone_owned(), sparsity);
    }
    (dict, codes)
}

/// Second dictionary solved to reproduce paired targets from the codes
/// of the first: D = Y A^T (A A^T + eps I)^-1.
pub fn paired_dictionary(
    targets: &DMatrix<f64>,
    codes: &[SparseCode],
    atoms: usize,
) -> DMatrix<f64> {
    let rows = targets.nrows();
    let mut aat = DMatrix::<f64>::zeros(atoms, atoms);
    let mut yat = DMatrix::<f64>::zeros(rows, atoms);
    for (i, code) in codes.iter().enumerate() {
        for (a, &ka) in code.support.iter().enumerate() {
            let ca = code.coefs[a];
            for (b, &kb) in code.support.iter().enumerate() {
                aat[(ka, kb)] += ca * code.coefs[b];
            }
            for r in 0..rows {
                yat[(r, ka)] += targets[(r, i)] * ca;
            }
        }
    }
    for k in 0..atoms {
        aat[(k, k)] += 1e-8;
    }
    let inv = aat
        .cholesky()
        .expect("regularized gram matrix is positive definite")
        .inverse();
    yat * inv
}
