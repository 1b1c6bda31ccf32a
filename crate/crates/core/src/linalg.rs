//! Dense least-squares solver shared by the hedging-baseline and model fits.
//!
//! Householder QR with column pivoting on a column-equilibrated copy of the
//! design. Designs here are tall and narrow (a handful of columns), so the
//! O(n·p²) factorization is recomputed from scratch on every call.

/// Least-squares solution with rank diagnostics.
#[derive(Debug, Clone)]
pub struct Lstsq {
    /// One coefficient per input column; columns judged dependent are zero.
    pub coefficients: Vec<f64>,
    /// Numerical rank of the equilibrated design.
    pub rank: usize,
    /// Original indices of columns zeroed by the rank decision.
    pub dropped: Vec<usize>,
}

/// Relative pivot threshold below which a column counts as dependent.
const RANK_RTOL: f64 = 1e-10;

/// Minimizes ‖y − Σ_j coeff_j · col_j‖₂ over the coefficients.
///
/// `columns` are the design columns (each of length `y.len()`). Columns are
/// rescaled to unit max-abs before factorization and the coefficients are
/// mapped back, so wildly different column scales do not hurt the rank test.
pub fn lstsq(columns: &[Vec<f64>], y: &[f64]) -> Lstsq {
    let p = columns.len();
    let n = y.len();
    assert!(p > 0 && columns.iter().all(|c| c.len() == n));

    let mut scale = vec![0.0f64; p];
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(p);
    for (j, col) in columns.iter().enumerate() {
        let m = col.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        scale[j] = m;
        if m > 0.0 {
            a.push(col.iter().map(|v| v / m).collect());
        } else {
            a.push(vec![0.0; n]);
        }
    }
    let mut rhs = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();

    let pivot_floor = RANK_RTOL * (n as f64).sqrt();
    let mut r_diag = vec![0.0f64; p];
    let mut rank = p.min(n);

    for k in 0..p.min(n) {
        // Pivot on the column with the largest remaining norm.
        let mut best = k;
        let mut best_norm = 0.0;
        for (offset, col) in a[k..].iter().enumerate() {
            let norm: f64 = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = k + offset;
            }
        }
        if best_norm <= pivot_floor {
            rank = k;
            break;
        }
        a.swap(k, best);
        perm.swap(k, best);

        // Householder reflector for column k.
        let alpha = -best_norm * a[k][k].signum();
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq > 0.0 {
            for col in a.iter_mut().skip(k + 1) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(vi, ci)| vi * ci).sum();
                let f = 2.0 * dot / vnorm_sq;
                for (vi, ci) in v.iter().zip(col[k..].iter_mut()) {
                    *ci -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&rhs[k..]).map(|(vi, ci)| vi * ci).sum();
            let f = 2.0 * dot / vnorm_sq;
            for (vi, ci) in v.iter().zip(rhs[k..].iter_mut()) {
                *ci -= f * vi;
            }
        }
        a[k][k] = alpha;
        for row in a[k][k + 1..].iter_mut() {
            *row = 0.0;
        }
        r_diag[k] = alpha;
    }

    // Back substitution on the leading rank×rank triangle.
    let mut sol = vec![0.0f64; p];
    for k in (0..rank).rev() {
        let mut acc = rhs[k];
        for j in k + 1..rank {
            acc -= a[j][k] * sol[j];
        }
        sol[k] = acc / r_diag[k];
    }

    let mut coefficients = vec![0.0f64; p];
    let mut dropped: Vec<usize> = Vec::new();
    for (pos, &orig) in perm.iter().enumerate() {
        if pos < rank && scale[orig] > 0.0 {
            coefficients[orig] = sol[pos] / scale[orig];
        } else {
            dropped.push(orig);
        }
    }
    dropped.sort_unstable();

    Lstsq {
        coefficients,
        rank,
        dropped,
    }
}
