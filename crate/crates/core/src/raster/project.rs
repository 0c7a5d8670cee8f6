use nalgebra::{Matrix2, Matrix2x3, Vector3};

use crate::scene::{covariance_of, Camera, Gaussian};

use super::{ALPHA_MIN, COV2D_DILATION, NEAR_PLANE};

/// A Gaussian after perspective projection into a camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    /// Pixel coordinates of the projected mean.
    pub mean2d: [f64; 2],
    /// J·W·Σ·Wᵀ·Jᵀ, before the low-pass dilation.
    pub cov2d: Matrix2<f64>,
    /// Upper triangle (a, b, c) of (cov2d + dilation·I)⁻¹.
    pub conic: [f64; 3],
    pub depth: f64,
    pub gaussian_index: usize,
    pub opacity: f64,
    /// Pixel radius beyond which α < `ALPHA_MIN`.
    pub radius: f64,
}

impl Projected2D {
    /// α = o·exp(−½ δᵀ conic δ) at the pixel-space point (px, py).
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        self.opacity * power.exp()
    }

    pub fn dilated_cov(&self) -> Matrix2<f64> {
        self.cov2d + Matrix2::identity() * COV2D_DILATION
    }

    /// Inclusive pixel index range `[x0, x1] × [y0, y1]` whose centers fall
    /// inside the footprint box, or `None` if it misses the image.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        // pixel i has its center at i + 0.5
        let lo_x = (self.mean2d[0] - self.radius - 0.5).ceil();
        let hi_x = (self.mean2d[0] + self.radius - 0.5).floor();
        let lo_y = (self.mean2d[1] - self.radius - 0.5).ceil();
        let hi_y = (self.mean2d[1] + self.radius - 0.5).floor();
        if hi_x < 0.0 || hi_y < 0.0 || lo_x > (width - 1) as f64 || lo_y > (height - 1) as f64 || lo_x > hi_x || lo_y > hi_y {
            return None;
        }
        Some((lo_x.max(0.0) as usize, (hi_x as usize).min(width - 1), lo_y.max(0.0) as usize, (hi_y as usize).min(height - 1)))
    }
}

/// EWA projection without any footprint culling; `None` only at or behind the near plane.
pub(crate) fn project_unculled(g: &Gaussian, index: usize, cam: &Camera) -> Option<Projected2D> {
    let w = cam.rotation();
    let t: Vector3<f64> = cam.to_camera(&g.position());
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let mean2d = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    let j = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
    let jw = j * w;
    let cov = jw * covariance_of(g) * jw.transpose();
    let cov2d = (cov + cov.transpose()) * 0.5;

    let a = cov2d[(0, 0)] + COV2D_DILATION;
    let b = cov2d[(0, 1)];
    let c = cov2d[(1, 1)] + COV2D_DILATION;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    let opacity = g.opacity as f64;
    // α = o·exp(−m/2) drops below ALPHA_MIN once m > 2 ln(255·o); the
    // Mahalanobis distance bounds |δ|² / λmax, so that fixes a pixel radius.
    let cutoff = 2.0 * (opacity / ALPHA_MIN).ln();
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = if cutoff > 0.0 { (cutoff * lambda_max).sqrt() * (1.0 + 1e-9) + 1e-9 } else { 0.0 };

    Some(Projected2D { mean2d, cov2d, conic, depth: z, gaussian_index: index, opacity, radius })
}

/// Projects `g` into `cam`, returning `None` when the splat is at or behind
/// the near plane, can never reach `ALPHA_MIN`, or its footprint misses the image.
pub fn project(g: &Gaussian, index: usize, cam: &Camera) -> Option<Projected2D> {
    let p = project_unculled(g, index, cam)?;
    if (g.opacity as f64) < ALPHA_MIN {
        return None;
    }
    p.pixel_bounds(cam.width, cam.height)?;
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> Camera {
        Camera::identity_pose(100.0, 100.0, 32.5, 24.5, 64, 48).unwrap()
    }

    fn splat(mu: [f32; 3], s: f32) -> Gaussian {
        Gaussian::isotropic(mu, s, [0.5; 3], 1.0, vec![]).unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let p = project(&splat([0.0, 0.0, 5.0], 0.1), 0, &cam()).unwrap();
        assert_eq!(p.mean2d, [32.5, 24.5]);
        assert_eq!(p.depth, 5.0);
    }

    #[test]
    fn on_axis_isotropic_covariance() {
        let (f, s, z) = (100.0, 0.1f32, 4.0);
        let p = project(&splat([0.0, 0.0, z as f32], s), 0, &cam()).unwrap();
        // J = diag(f/z, f/z) on axis, so cov2d = (f s / z)² I
        let expected = (f * s as f64 / z).powi(2);
        assert_relative_eq!(p.cov2d, Matrix2::identity() * expected, max_relative = 1e-6);
    }

    #[test]
    fn off_axis_covariance_matches_jacobian_by_hand() {
        let cam = Camera::identity_pose(50.0, 80.0, 0.0, 0.0, 400, 400).unwrap();
        let g = Gaussian::new([1.0, 2.0, 4.0], [0.3, 0.2, 0.1], [1.0, 0.0, 0.0, 0.0], [0.5; 3], 1.0, vec![]).unwrap();
        let p = project_unculled(&g, 0, &cam).unwrap();
        // J rows: (fx/z, 0, -fx x/z²), (0, fy/z, -fy y/z²); Σ diagonal
        let j = [[12.5, 0.0, -3.125], [0.0, 20.0, -10.0]];
        let s = [0.09f64, 0.04, 0.01];
        let e = |r: usize, c: usize| (0..3).map(|k| j[r][k] * s[k] * j[c][k]).sum::<f64>();
        assert_relative_eq!(p.cov2d[(0, 0)], e(0, 0), max_relative = 1e-6);
        assert_relative_eq!(p.cov2d[(0, 1)], e(0, 1), max_relative = 1e-6);
        assert_relative_eq!(p.cov2d[(1, 1)], e(1, 1), max_relative = 1e-6);
    }

    #[test]
    fn culls_behind_camera_and_off_screen() {
        assert!(project(&splat([0.0, 0.0, -1.0], 0.1), 0, &cam()).is_none());
        assert!(project(&splat([0.0, 0.0, 0.0], 0.1), 0, &cam()).is_none());
        assert!(project(&splat([50.0, 0.0, 5.0], 0.1), 0, &cam()).is_none());
        let faint = Gaussian::isotropic([0.0, 0.0, 5.0], 0.1, [0.5; 3], 0.001, vec![]).unwrap();
        assert!(project(&faint, 0, &cam()).is_none());
    }

    #[test]
    fn alpha_below_threshold_outside_radius() {
        let p = project(&splat([0.1, -0.05, 3.0], 0.05), 0, &cam()).unwrap();
        for k in 0..64 {
            let th = k as f64 * std::f64::consts::TAU / 64.0;
            let (x, y) = (p.mean2d[0] + p.radius * th.cos() * 1.001, p.mean2d[1] + p.radius * th.sin() * 1.001);
            assert!(p.alpha_at(x, y) < ALPHA_MIN);
        }
        assert_relative_eq!(p.alpha_at(p.mean2d[0], p.mean2d[1]), 1.0);
    }
}
