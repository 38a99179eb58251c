use super::ZeroSumProblem;
use crate::vecspace::JointPoint;

/// `g3(x, y) = (4x² - (y - 3x + 0.05x³)² - 0.1y⁴) · exp(-0.01(x² + y²))`.
///
/// Only the gradient is closed-form; Hessian blocks come from finite
/// differences of the gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct G3;

pub fn make_g3() -> G3 {
    G3
}

impl G3 {
    fn parts(x: f64, y: f64) -> (f64, f64, f64) {
        let u = y - 3.0 * x + 0.05 * x.powi(3);
        let p = 4.0 * x * x - u * u - 0.1 * y.powi(4);
        let e = (-0.01 * (x * x + y * y)).exp();
        (u, p, e)
    }
}

impl ZeroSumProblem for G3 {
    fn id(&self) -> String {
        "g3".into()
    }

    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn value(&self, z: &JointPoint) -> f64 {
        let (_, p, e) = Self::parts(z.x[0], z.y[0]);
        p * e
    }

    fn grad(&self, z: &JointPoint) -> JointPoint {
        let (x, y) = (z.x[0], z.y[0]);
        let (u, p, e) = Self::parts(x, y);
        let px = 8.0 * x - 2.0 * u * (-3.0 + 0.15 * x * x);
        let py = -2.0 * u - 0.4 * y.powi(3);
        JointPoint::new(vec![(px - 0.02 * x * p) * e], vec![(py - 0.02 * y * p) * e])
    }

    fn target(&self) -> Option<JointPoint> {
        Some(JointPoint::zeros(1, 1))
    }

    fn default_start(&self) -> JointPoint {
        JointPoint::new(vec![-4.0], vec![3.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_stationary() {
        let g = G3.grad(&JointPoint::zeros(1, 1));
        assert_eq!((g.x[0], g.y[0]), (0.0, 0.0));
        assert_eq!(G3.value(&JointPoint::zeros(1, 1)), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for &(x, y) in &[(0.3, -0.7), (-4.0, 3.0), (2.5, 1.5), (-1.0, -2.0)] {
            let g = G3.grad(&JointPoint::new(vec![x], vec![y]));
            let h = 1e-6;
            let f = |a: f64, b: f64| G3.value(&JointPoint::new(vec![a], vec![b]));
            let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            assert!((g.x[0] - fx).abs() <= 1e-6 * (1.0 + fx.abs()));
            assert!((g.y[0] - fy).abs() <= 1e-6 * (1.0 + fy.abs()));
        }
    }
}
