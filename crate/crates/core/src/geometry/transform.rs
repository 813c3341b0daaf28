use super::Point;

/// Top three rows of a homogeneous 4x4 affine matrix, stored as the three
/// linear columns followed by the translation:
/// `[ax, ay, az, bx, by, bz, cx, cy, cz, tx, ty, tz]`, so that
/// `p' = a*p.x + b*p.y + c*p.z + t`.
pub type AffineRow = [f64; 12];

pub const IDENTITY_ROW: AffineRow = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

pub fn apply_transform(f: &AffineRow, p: Point) -> Point {
    [0, 1, 2].map(|k| f[k] * p[0] + f[3 + k] * p[1] + f[6 + k] * p[2] + f[9 + k])
}

/// The full 4x4 matrix, row-major.
pub fn to_matrix(f: &AffineRow) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (r, row) in m.iter_mut().take(3).enumerate() {
        *row = [f[r], f[3 + r], f[6 + r], f[9 + r]];
    }
    m[3][3] = 1.0;
    m
}

fn from_matrix(m: &[[f64; 4]; 4]) -> AffineRow {
    let mut f = [0.0; 12];
    for r in 0..3 {
        f[r] = m[r][0];
        f[3 + r] = m[r][1];
        f[6 + r] = m[r][2];
        f[9 + r] = m[r][3];
    }
    f
}

/// The transform that applies `first` and then `second`.
pub fn compose(second: &AffineRow, first: &AffineRow) -> AffineRow {
    let (a, b) = (to_matrix(second), to_matrix(first));
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    from_matrix(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        let p = [0.3, -1.0, 2.0];
        assert_eq!(apply_transform(&IDENTITY_ROW, p), p);
        let mut t = IDENTITY_ROW;
        t[9..].copy_from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(apply_transform(&t, [0.0; 3]), [1.0, 2.0, 3.0]);
    }
}
