//! Point clouds, centered Gram matrices, squared distance matrices and the
//! conversions between them, including classical MDS.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EdmcError, Result};
use crate::linalg;

/// Leading negative eigenvalues up to this fraction of |λ₁| are clamped to 0.
pub const EMBED_TOL: f64 = 1e-8;

/// n points in r dimensions, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: DMatrix<f64>,
    centered: bool,
}

impl PointCloud {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(EdmcError::InvalidInput("non-finite coordinate".into()));
        }
        let centered = columns_centered(&coords);
        Ok(PointCloud { coords, centered })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let r = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != r) {
            return Err(EdmcError::InvalidInput("ragged point rows".into()));
        }
        Self::new(DMatrix::from_fn(n, r, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn r(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DMatrix<f64> {
        self.coords
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }
}

fn columns_centered(coords: &DMatrix<f64>) -> bool {
    let n = coords.nrows();
    let max_abs = coords.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * n as f64 * max_abs;
    coords.column_iter().all(|c| c.sum().abs() <= tol)
}

/// Dense symmetric n×n matrix; the lower triangle always mirrors the upper.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    data: DMatrix<f64>,
}

impl DenseSym {
    /// Takes the upper triangle of `m` as authoritative.
    pub fn from_upper(mut m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(EdmcError::ShapeMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(EdmcError::InvalidInput("non-finite matrix entry".into()));
        }
        linalg::mirror_upper(&mut m);
        Ok(DenseSym { data: m })
    }

    /// Rejects inputs that are not exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.is_square() && m != m.transpose() {
            return Err(EdmcError::InvalidInput("matrix is not symmetric".into()));
        }
        Self::from_upper(m)
    }

    pub fn zeros(n: usize) -> Self {
        DenseSym {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        DenseSym {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.data.row_iter().map(|r| r.sum()))
    }
}

/// Rank-r symmetric matrix X = U diag(λ) Uᵀ with orthonormal U.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRGram {
    u: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl RankRGram {
    /// Builds the factored form, reordering eigenpairs by descending magnitude.
    pub fn new(u: DMatrix<f64>, lambda: DVector<f64>) -> Result<Self> {
        if u.ncols() != lambda.len() {
            return Err(EdmcError::ShapeMismatch(format!(
                "U has {} columns but {} eigenvalues given",
                u.ncols(),
                lambda.len()
            )));
        }
        if u.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
            return Err(EdmcError::InvalidInput("non-finite factor".into()));
        }
        let order = linalg::magnitude_order(lambda.as_slice());
        let mut su = DMatrix::zeros(u.nrows(), u.ncols());
        let mut sl = DVector::zeros(lambda.len());
        for (k, &src) in order.iter().enumerate() {
            su.set_column(k, &u.column(src));
            sl[k] = lambda[src];
        }
        Ok(RankRGram { u: su, lambda: sl })
    }

    /// Best rank-r approximation of a dense symmetric matrix, by magnitude.
    pub fn from_dense(x: &DenseSym, r: usize) -> Self {
        crate::manifold::hard_threshold(x, r).gram
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn r(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn to_dense(&self) -> DenseSym {
        let scaled = &self.u * DMatrix::from_diagonal(&self.lambda);
        let mut x = scaled * self.u.transpose();
        linalg::mirror_upper(&mut x);
        DenseSym { data: x }
    }

    /// ‖X‖_F, exact for orthonormal U.
    pub fn fro_norm(&self) -> f64 {
        self.lambda.norm()
    }

    /// Entry X_ij in O(r).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.r())
            .map(|k| self.u[(i, k)] * self.lambda[k] * self.u[(j, k)])
            .sum()
    }

    /// λ₁/λ_r by magnitude.
    pub fn condition_number(&self) -> f64 {
        let r = self.r();
        if r == 0 {
            return 1.0;
        }
        self.lambda[0].abs() / self.lambda[r - 1].abs()
    }

    /// max |UᵀU − I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.u.transpose() * &self.u - DMatrix::identity(self.r(), self.r());
        g.amax()
    }

    /// max |Uᵀ1|.
    pub fn centering_defect(&self) -> f64 {
        self.u
            .column_iter()
            .fold(0.0_f64, |m, c| m.max(c.sum().abs()))
    }

    /// ‖X − Y‖_F between two factored matrices, computed on the joint span
    /// so that small differences are not lost to cancellation.
    pub fn distance(&self, other: &RankRGram) -> f64 {
        let n = self.n();
        let (r1, r2) = (self.r(), other.r());
        let mut stacked = DMatrix::zeros(n, r1 + r2);
        stacked.view_mut((0, 0), (n, r1)).copy_from(&self.u);
        stacked.view_mut((0, r1), (n, r2)).copy_from(&other.u);
        let (q, _) = linalg::thin_q(&stacked);
        let a = q.transpose() * &self.u;
        let b = q.transpose() * &other.u;
        let core = &a * DMatrix::from_diagonal(&self.lambda) * a.transpose()
            - &b * DMatrix::from_diagonal(&other.lambda) * b.transpose();
        core.norm()
    }
}

/// JSON form of a factored Gram matrix: U stored row by row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactoredGramRecord {
    pub n: usize,
    pub r: usize,
    pub u: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

impl From<&RankRGram> for FactoredGramRecord {
    fn from(x: &RankRGram) -> Self {
        FactoredGramRecord {
            n: x.n(),
            r: x.r(),
            u: x.u
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
            lambda: x.lambda.iter().copied().collect(),
        }
    }
}

impl TryFrom<FactoredGramRecord> for RankRGram {
    type Error = EdmcError;

    fn try_from(rec: FactoredGramRecord) -> Result<Self> {
        if rec.u.len() != rec.n
            || rec.u.iter().any(|row| row.len() != rec.r)
            || rec.lambda.len() != rec.r
        {
            return Err(EdmcError::ShapeMismatch(
                "factored Gram record dimensions".into(),
            ));
        }
        let u = DMatrix::from_fn(rec.n, rec.r, |i, j| rec.u[i][j]);
        RankRGram::new(u, DVector::from_vec(rec.lambda))
    }
}

pub fn center_points(p: &PointCloud) -> PointCloud {
    let mut coords = p.coords.clone();
    linalg::center_columns(&mut coords);
    PointCloud {
        coords,
        centered: true,
    }
}

/// X = PPᵀ of the centered cloud; uncentered input is centered first.
pub fn gram_from_points(p: &PointCloud) -> Result<DenseSym> {
    let centered = if p.is_centered() {
        p.clone()
    } else {
        center_points(p)
    };
    let c = &centered.coords;
    DenseSym::from_upper(c * c.transpose())
}

/// Exact rank-r factored Gram of the centered cloud, via the r×r matrix PᵀP.
pub fn factored_gram_from_points(p: &PointCloud) -> Result<RankRGram> {
    let c = center_points(p).coords;
    let svd = c.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| EdmcError::InvalidInput("svd failed".into()))?;
    let lambda = svd.singular_values.map(|s| s * s);
    RankRGram::new(u, lambda)
}

/// D_ij = X_ii + X_jj − 2X_ij.
pub fn distances_from_gram(x: &DenseSym) -> DenseSym {
    let n = x.n();
    let m = &x.data;
    let mut d = DMatrix::from_fn(n, n, |i, j| m[(i, i)] + m[(j, j)] - 2.0 * m[(i, j)]);
    for i in 0..n {
        d[(i, i)] = 0.0;
    }
    linalg::mirror_upper(&mut d);
    DenseSym { data: d }
}

/// X = −½ J D J.
pub fn gram_from_distances(d: &DenseSym) -> DenseSym {
    let mut x = linalg::double_center(&d.data);
    x.scale_mut(-0.5);
    linalg::mirror_upper(&mut x);
    DenseSym { data: x }
}

/// Classical MDS: P = U Λ^{1/2} from the rank-r truncation of −½JDJ.
pub fn classical_mds(d: &DenseSym, r: usize) -> Result<PointCloud> {
    let n = d.n();
    if r > n {
        return Err(EdmcError::InvalidInput(format!(
            "embedding dimension {r} exceeds n = {n}"
        )));
    }
    let x = gram_from_distances(d);
    let eig = linalg::sorted_eigen(&x.data);
    let scale = eig.values.get(0).map_or(0.0, |v| v.abs());
    let mut coords = DMatrix::zeros(n, r);
    for k in 0..r {
        let lam = eig.values[k];
        if lam < -EMBED_TOL * scale {
            return Err(EdmcError::NotEmbeddable { eigenvalue: lam });
        }
        let s = lam.max(0.0).sqrt();
        coords.set_column(k, &(eig.vectors.column(k) * s));
    }
    linalg::center_columns(&mut coords);
    PointCloud::new(coords)
}

/// min over orthogonal Q of ‖A − BQ‖_F after centering both clouds.
pub fn procrustes_error(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.n() != b.n() || a.r() != b.r() {
        return Err(EdmcError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.n(),
            a.r(),
            b.n(),
            b.r()
        )));
    }
    let ac = center_points(a).coords;
    let bc = center_points(b).coords;
    let m = bc.transpose() * &ac;
    let svd = m.svd(true, true);
    let (w, vt) = match (svd.u, svd.v_t) {
        (Some(w), Some(vt)) => (w, vt),
        _ => return Err(EdmcError::InvalidInput("svd failed".into())),
    };
    let q = w * vt;
    Ok((ac - bc * q).norm())
}

/// Reads a point cloud from CSV: one point per row, optional header line.
pub fn read_points_csv<R: Read>(reader: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(EdmcError::InvalidInput(format!("row {}: {e}", k + 1))),
        }
    }
    PointCloud::from_rows(&rows)
}

pub fn read_points_file(path: &Path) -> Result<PointCloud> {
    read_points_csv(std::fs::File::open(path)?)
}

/// Writes a header `x0,x1,...` followed by one full-precision row per point.
pub fn write_points_csv<W: Write>(p: &PointCloud, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..p.r()).map(|k| format!("x{k}")))?;
    for i in 0..p.n() {
        w.write_record(p.coords.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_file(p: &PointCloud, path: &Path) -> Result<()> {
    write_points_csv(p, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cloud(rows: &[&[f64]]) -> PointCloud {
        PointCloud::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn triangle() -> PointCloud {
        let s = (2.0_f64 / 3.0).sqrt();
        let h = 3.0_f64.sqrt() / 2.0;
        cloud(&[&[s, 0.0], &[-0.5 * s, h * s], &[-0.5 * s, -h * s]])
    }

    #[test]
    fn two_antipodal_points() {
        let x = gram_from_points(&cloud(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(
            x.matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        let d = distances_from_gram(&x);
        assert_eq!(
            d.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0])
        );
        let back = gram_from_distances(&d);
        assert_eq!(back.matrix(), x.matrix());
    }

    #[test]
    fn zero_cases() {
        let p = PointCloud::new(DMatrix::zeros(4, 2)).unwrap();
        let x = gram_from_points(&p).unwrap();
        assert_eq!(x.fro_norm(), 0.0);
        assert_eq!(distances_from_gram(&x).fro_norm(), 0.0);
        assert_eq!(gram_from_distances(&DenseSym::zeros(4)).fro_norm(), 0.0);
    }

    #[test]
    fn triangle_gram_has_unit_eigenvalues() {
        let x = gram_from_points(&triangle()).unwrap();
        let eig = linalg::sorted_eigen(x.matrix());
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[2], 0.0, epsilon = 1e-12);
        assert!(x.row_sums().amax() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(PointCloud::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
        assert!(DenseSym::from_upper(DMatrix::from_element(2, 2, f64::INFINITY)).is_err());
    }

    #[test]
    fn center_examples() {
        let c = center_points(&cloud(&[&[1.0, 1.0], &[3.0, 1.0]]));
        assert_eq!(
            c.coords(),
            &DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0])
        );
        let again = center_points(&c);
        assert_eq!(again.coords(), c.coords());
        let single = center_points(&cloud(&[&[4.0, -2.0, 7.0]]));
        assert_eq!(single.coords(), &DMatrix::zeros(1, 3));
    }

    #[test]
    fn mds_two_points() {
        let d = DenseSym::new(DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0])).unwrap();
        let p = classical_mds(&d, 1).unwrap();
        assert_abs_diff_eq!(p.coords()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            p.coords()[(0, 0)] + p.coords()[(1, 0)],
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mds_unit_square() {
        let sq = cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let d = distances_from_gram(&gram_from_points(&sq).unwrap());
        let p = classical_mds(&d, 2).unwrap();
        assert!(p.is_centered());
        assert!(procrustes_error(&p, &sq).unwrap() < 1e-8);
    }

    #[test]
    fn mds_rejects_negative_leading_eigenvalue() {
        // X = diag-like matrix in 𝕊 with eigenvalues {1, -0.5}.
        let a = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]).normalize();
        let b = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]).normalize();
        let x = &a * a.transpose() - 0.5 * &b * b.transpose();
        let d = distances_from_gram(&DenseSym::from_upper(x).unwrap());
        assert!(matches!(
            classical_mds(&d, 2),
            Err(EdmcError::NotEmbeddable { .. })
        ));
    }

    #[test]
    fn procrustes_basics() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0], &[0.5, 1.5], &[-1.0, 0.3]]);
        assert!(procrustes_error(&a, &a).unwrap() < 1e-14);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let b = PointCloud::new(a.coords() * rot).unwrap();
        assert!(procrustes_error(&a, &b).unwrap() < 1e-10);
        let bad = PointCloud::new(DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(
            procrustes_error(&a, &bad),
            Err(EdmcError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn procrustes_rank_one_perturbation_bounded() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0], &[0.5, 1.5], &[-1.0, 0.3]]);
        let x = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.2]).normalize();
        let y = DVector::from_vec(vec![1.0, 2.0]).normalize();
        for eps in [1e-6, 1e-3, 0.1, 1.0] {
            let b = PointCloud::new(a.coords() + eps * &x * y.transpose()).unwrap();
            assert!(procrustes_error(&a, &b).unwrap() <= eps * (1.0 + 1e-12));
        }
    }

    #[test]
    fn csv_round_trip_and_ragged() {
        let p = triangle();
        let mut buf = Vec::new();
        write_points_csv(&p, &mut buf).unwrap();
        let q = read_points_csv(buf.as_slice()).unwrap();
        assert_eq!(p.coords(), q.coords());
        let no_header = read_points_csv("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(no_header.n(), 2);
        assert!(read_points_csv("1,2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn factored_gram_matches_dense() {
        let p = center_points(&cloud(&[
            &[0.0, 0.0],
            &[2.0, 0.0],
            &[0.5, 1.5],
            &[-1.0, 0.3],
        ]));
        let f = factored_gram_from_points(&p).unwrap();
        let d = gram_from_points(&p).unwrap();
        assert!((f.to_dense().matrix() - d.matrix()).amax() < 1e-12);
        assert!(f.centering_defect() < 1e-12);
    }
}
