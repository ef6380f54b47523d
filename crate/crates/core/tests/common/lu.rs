//! Textbook LU with partial pivoting (physical row swaps).

use ofrr::DenseMatrix;

pub struct Lu {
    /// Original index of the row pivoted at each step.
    pub pivots: Vec<usize>,
    /// `P'L`: unit lower factor with rows returned to their original order,
    /// `rows x cols`.
    pub permuted_l: Vec<Vec<f64>>,
}

pub fn lu_partial_pivot(x: &DenseMatrix) -> Lu {
    let (n, k) = (x.rows(), x.cols());
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| x.row(i)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..k {
        let mut p = j;
        for i in j + 1..n {
            if a[i][j].abs() > a[p][j].abs() {
                p = i;
            }
        }
        a.swap(j, p);
        perm.swap(j, p);
        let piv = a[j][j];
        for i in j + 1..n {
            let l = a[i][j] / piv;
            a[i][j] = l;
            let (top, rest) = a.split_at_mut(i);
            for (x, p) in rest[0][j + 1..k].iter_mut().zip(&top[j][j + 1..k]) {
                *x -= l * p;
            }
        }
    }
    let mut permuted_l = vec![vec![0.0; k]; n];
    for i in 0..n {
        for j in 0..k {
            let l = match i.cmp(&j) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => a[i][j],
            };
            permuted_l[perm[i]][j] = l;
        }
    }
    Lu {
        pivots: perm[..k].to_vec(),
        permuted_l,
    }
}
