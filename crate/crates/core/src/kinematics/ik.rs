use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{forward_kinematics, jacobian, DhTable, HomTransform, JointAngles, KinematicsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    /// Loop guard on the Frobenius transform error.
    pub e_max: f64,
    pub max_iterations: usize,
    /// Fraction of the Gauss-Newton step taken per iteration, in `(0, 1]`.
    pub step_scale: f64,
    /// Damping used once the Jacobian is considered singular.
    pub singular_damping: f64,
    /// Condition number above which the damped pseudo-inverse is used.
    pub singularity_threshold: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        IkSettings {
            e_max: 1e-4,
            max_iterations: 200,
            step_scale: 0.5,
            singular_damping: 1e-6,
            singularity_threshold: 1e6,
        }
    }
}

impl IkSettings {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.e_max > 0.0) {
            return Err(KinematicsError::InvalidSettings("e_max must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(KinematicsError::InvalidSettings("max_iterations must be at least 1"));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(KinematicsError::InvalidSettings("step_scale must lie in (0, 1]"));
        }
        if !(self.singular_damping >= 0.0) {
            return Err(KinematicsError::InvalidSettings("singular_damping must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointAngles,
    pub iterations: usize,
    pub error: f64,
}

/// Frobenius norm of `a - b` over all 16 entries.
pub fn transform_error(a: &HomTransform, b: &HomTransform) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Rotation vector (axis times angle, radians) of a proper rotation matrix.
pub(crate) fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee(r);
    let sin2 = v.norm(); // 2 sin(theta)
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = (0.5 * sin2).atan2(cos);
    if theta < 1e-8 {
        return 0.5 * v;
    }
    if theta < 0.5 * PI {
        return v * (theta / sin2);
    }
    // Near pi the skew part vanishes; recover k from the symmetric part
    // (R + Rᵀ)/2 = cos(θ) I + (1 - cos(θ)) k kᵀ.
    let s = (r + r.transpose()) * 0.5;
    let kk = (s - Matrix3::identity() * cos) / (1.0 - cos);
    let mut pivot = 0;
    for i in 1..3 {
        if kk[(i, i)] > kk[(pivot, pivot)] {
            pivot = i;
        }
    }
    let kp = kk[(pivot, pivot)].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == pivot { kp } else { kk[(j, pivot)] / kp };
    }
    axis.normalize_mut();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Twist taking `current` to `target`: translation difference followed by
/// the rotation vector of `R_target * R_currentᵀ`.
pub fn angle_axis_twist(current: &HomTransform, target: &HomTransform) -> Vector6<f64> {
    let dp = target.translation() - current.translation();
    let dr = rotation_log(&(target.rotation() * current.rotation().transpose()));
    let mut g = Vector6::zeros();
    g.fixed_rows_mut::<3>(0).copy_from(&dp);
    g.fixed_rows_mut::<3>(3).copy_from(&dr);
    g
}

fn gauss_newton_step(j: &Matrix6<f64>, g: &Vector6<f64>, settings: &IkSettings) -> Vector6<f64> {
    let sv = j.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond <= settings.singularity_threshold {
        if let Some(inv) = j.try_inverse() {
            return inv * g;
        }
    }
    let jjt = j * j.transpose() + Matrix6::identity() * settings.singular_damping;
    match jjt.try_inverse() {
        Some(inv) => j.transpose() * (inv * g),
        None => j.transpose() * g,
    }
}

/// Iterative Gauss-Newton inverse kinematics seeded at `q0`.
///
/// Returns `NotConverged` when `max_iterations` steps do not bring the
/// transform error under `e_max`; callers may retry from another seed.
pub fn solve_ik(
    dh: &DhTable,
    q0: &JointAngles,
    target: &HomTransform,
    settings: &IkSettings,
) -> Result<IkSolution, KinematicsError> {
    settings.validate()?;
    let mut q = *q0;
    let mut current = forward_kinematics(dh, &q);
    let mut err = transform_error(target, &current);
    let mut iterations = 0;
    while err > settings.e_max {
        if iterations == settings.max_iterations || !err.is_finite() {
            return Err(KinematicsError::NotConverged { iterations, error: err });
        }
        let j = jacobian(dh, &q);
        let g = angle_axis_twist(&current, target);
        let dq = gauss_newton_step(&j, &g, settings) * settings.step_scale;
        let mut raw = q.radians();
        for (qi, d) in raw.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        q = JointAngles::from_radians(raw);
        current = forward_kinematics(dh, &q);
        err = transform_error(target, &current);
        iterations += 1;
    }
    Ok(IkSolution { q, iterations, error: err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> HomTransform {
        let axis = Vector3::new(rng.random(), rng.random(), rng.random()) - Vector3::repeat(0.5);
        let angle = rng.random_range(0.0..PI);
        let rot = Rotation3::new(axis.normalize() * angle);
        let p = Vector3::new(rng.random(), rng.random(), rng.random());
        HomTransform::from_parts(rot.matrix(), &p)
    }

    #[test]
    fn error_is_zero_for_equal_and_frobenius_for_translation() {
        let a = HomTransform::identity();
        assert_eq!(transform_error(&a, &a), 0.0);
        let b = HomTransform::from_parts(&Matrix3::identity(), &Vector3::new(0.1, 0.0, 0.0));
        assert_abs_diff_eq!(transform_error(&a, &b), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn error_matches_elementwise_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let (ma, mb) = (a.to_row_major(), b.to_row_major());
            let oracle: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert_abs_diff_eq!(transform_error(&a, &b), oracle, epsilon = 1e-14);
            assert_eq!(transform_error(&a, &b), transform_error(&b, &a));
        }
    }

    #[test]
    fn twist_of_identical_poses_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        assert_eq!(angle_axis_twist(&t, &t).norm(), 0.0);
    }

    #[test]
    fn twist_of_quarter_turn_about_z() {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.5 * PI);
        let target = HomTransform::from_parts(r.matrix(), &Vector3::zeros());
        let g = angle_axis_twist(&HomTransform::identity(), &target);
        let expected = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.5 * PI);
        assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
    }

    #[test]
    fn twist_round_trips_through_exponential_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let current = random_transform(&mut rng);
            let target = random_transform(&mut rng);
            let g = angle_axis_twist(&current, &target);
            let rot = Rotation3::new(Vector3::new(g[3], g[4], g[5]));
            let recovered_r = rot.matrix() * current.rotation();
            let recovered_p = current.translation() + Vector3::new(g[0], g[1], g[2]);
            let recovered = HomTransform::from_parts(&recovered_r, &recovered_p);
            assert!(transform_error(&recovered, &target) < 1e-9);
        }
    }

    #[test]
    fn log_at_exactly_pi_is_deterministic() {
        let r = Rotation3::from_axis_angle(&Vector3::x_axis(), PI);
        let v = rotation_log(r.matrix());
        assert_abs_diff_eq!(v.norm(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(v.x.abs(), PI, epsilon = 1e-12);
        assert_eq!(v, rotation_log(r.matrix()));
        let back = Rotation3::new(v);
        assert_abs_diff_eq!(*back.matrix(), *r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi_is_accurate() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for delta in [1e-3, 1e-6, 1e-9] {
            let r = Rotation3::new(axis * (PI - delta));
            let v = rotation_log(r.matrix());
            let back = Rotation3::new(v);
            assert_abs_diff_eq!(*back.matrix(), *r.matrix(), epsilon = 1e-10);
        }
    }

    #[test]
    fn already_solved_target_takes_zero_iterations() {
        let dh = DhTable::ur3();
        let q0 = JointAngles::from_degrees([12.0, -70.0, 80.0, -100.0, -90.0, 30.0]);
        let target = forward_kinematics(&dh, &q0);
        let sol = solve_ik(&dh, &q0, &target, &IkSettings::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.q, q0);
    }

    #[test]
    fn recovers_nearby_target() {
        let dh = DhTable::ur3();
        let q_true = JointAngles::from_degrees([30.0, -60.0, 75.0, -100.0, -80.0, 15.0]);
        let target = forward_kinematics(&dh, &q_true);
        let q0 = q_true.offset(&[3.0, -2.0, 4.0, 1.0, -3.0, 2.0]);
        let settings = IkSettings::default();
        let sol = solve_ik(&dh, &q0, &target, &settings).unwrap();
        assert!(transform_error(&forward_kinematics(&dh, &sol.q), &target) <= settings.e_max);
        assert!(sol.q.degrees().iter().all(|v| (-180.0..=180.0).contains(v)));
    }

    #[test]
    fn far_target_is_not_converged() {
        let dh = DhTable::ur3();
        let target = HomTransform::from_parts(&Matrix3::identity(), &Vector3::new(0.6, 0.0, 0.8));
        assert_abs_diff_eq!(target.translation().norm(), 1.0, epsilon = 1e-12);
        let q0 = JointAngles::from_degrees([0.0, -90.0, 45.0, -45.0, -90.0, 0.0]);
        assert!(matches!(
            solve_ik(&dh, &q0, &target, &IkSettings::default()),
            Err(KinematicsError::NotConverged { .. })
        ));
    }

    #[test]
    fn settings_are_validated() {
        let dh = DhTable::ur3();
        let t = HomTransform::identity();
        let bad = IkSettings { max_iterations: 0, ..IkSettings::default() };
        assert!(matches!(
            solve_ik(&dh, &JointAngles::ZERO, &t, &bad),
            Err(KinematicsError::InvalidSettings(_))
        ));
    }
}
