//! Synthetic partial-overlap views: a range sensor with a limited field of
//! view observing a dense cloud from a sequence of poses.
//!
//! Views are cut from the world cloud by the view frustum alone; there is no
//! hidden-surface removal.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eoe::{calc_omega_weights, fov_penalty, PenaltyConstants};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform, SensorFov};

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    /// Sensor-to-world pose.
    pub pose: RigidTransform,
    pub fov: SensorFov,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedView {
    /// Points in the sensor frame.
    pub cloud: PointCloud,
    /// Sensor-to-world ground truth.
    pub pose: RigidTransform,
    pub fov: SensorFov,
}

/// Whether a sensor-frame point lies inside the frustum (zero penalty).
pub fn in_view(local: &Point, fov: &SensorFov) -> bool {
    fov_penalty(local, fov, &PenaltyConstants::default()) == 0.0
}

pub fn simulate_view(world: &PointCloud, spec: &ViewSpec) -> Result<SimulatedView> {
    if world.is_empty() {
        return Err(Error::InvalidCloud("world cloud is empty".into()));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {}", spec.noise_sigma)));
    }
    spec.fov.validate()?;
    let local = spec.pose.inverse().apply(world);
    let keep: Vec<usize> = local
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| in_view(p, &spec.fov))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyView);
    }
    let culled = local.select(&keep);
    let cloud = if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        let noisy = culled
            .points()
            .iter()
            .map(|p| p + Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        PointCloud::with_intensity(noisy, culled.intensity().map(<[f64]>::to_vec))?
    } else {
        culled
    };
    Ok(SimulatedView {
        cloud,
        pose: spec.pose,
        fov: spec.fov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub views: Vec<SimulatedView>,
    /// `relative[i]` maps frame `i + 1` coordinates into frame `i`.
    pub relative: Vec<RigidTransform>,
}

pub fn make_sequence(world: &PointCloud, specs: &[ViewSpec]) -> Result<Sequence> {
    if specs.len() < 2 {
        return Err(Error::InvalidParameter("a sequence needs at least two views".into()));
    }
    let views = specs.iter().map(|s| simulate_view(world, s)).collect::<Result<Vec<_>>>()?;
    let relative = views
        .windows(2)
        .map(|w| w[0].pose.inverse().compose(&w[1].pose))
        .collect();
    Ok(Sequence { views, relative })
}

/// Mean of the fraction of `a` inside `b`'s view and of `b` inside `a`'s.
/// `b_in_a` maps `b` coordinates into `a`'s frame (the pose of sensor `b`
/// seen from `a`).
pub fn overlap_fraction(
    a: &PointCloud,
    b: &PointCloud,
    fov_a: &SensorFov,
    fov_b: &SensorFov,
    b_in_a: &RigidTransform,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidCloud("overlap of an empty cloud".into()));
    }
    let k = PenaltyConstants::default();
    let inside = |cloud: &PointCloud, pose: &RigidTransform, fov: &SensorFov| -> Result<f64> {
        let w = calc_omega_weights(cloud, pose, fov, &k)?;
        Ok(w.penalties.iter().filter(|&&xi| xi == 0.0).count() as f64 / cloud.len() as f64)
    };
    let a_in_b = inside(a, b_in_a, fov_b)?;
    let b_in_a_frac = inside(b, &b_in_a.inverse(), fov_a)?;
    Ok(0.5 * (a_in_b + b_in_a_frac))
}

/// A sensor at `position` looking at `look_at`, `+z` up. The sensor frame
/// has `+x` forward and `+z` up.
pub fn look_at_pose(position: Point, look_at: Point) -> Result<RigidTransform> {
    let forward = (look_at - position).normalize();
    let mut left = Vector3::z().cross(&forward);
    if left.norm() < 1e-9 {
        left = Vector3::y();
    }
    let left = left.normalize();
    let up = forward.cross(&left);
    RigidTransform::new(Matrix3::from_columns(&[forward, left, up]), position)
}

/// Parameters of the orbiting-sensor preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitPreset {
    pub views: usize,
    /// Degrees between consecutive sensor positions on the orbit.
    pub yaw_step_deg: f64,
    /// Orbit angle of the first sensor, degrees.
    pub start_deg: f64,
    pub radius: f64,
    pub height: f64,
    /// Point the sensors look at.
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub noise_sigma: f64,
    pub world_points: usize,
    pub seed: u64,
}

impl Default for OrbitPreset {
    fn default() -> Self {
        Self {
            views: 5,
            yaw_step_deg: 25.0,
            start_deg: -130.0,
            radius: 0.24,
            height: 0.1,
            look_at: [0.0, 0.0, 0.0],
            fov_deg: 60.0,
            psi_min: 0.01,
            psi_max: 10.0,
            noise_sigma: 0.0,
            world_points: 8_000,
            seed: 1,
        }
    }
}

impl OrbitPreset {
    pub fn fov(&self) -> Result<SensorFov> {
        SensorFov::from_degrees(self.psi_min, self.psi_max, self.fov_deg, self.fov_deg)
    }

    pub fn view_specs(&self) -> Result<Vec<ViewSpec>> {
        let fov = self.fov()?;
        let target = Point::from(self.look_at);
        (0..self.views)
            .map(|i| {
                let angle = (self.start_deg + i as f64 * self.yaw_step_deg).to_radians();
                let position = target + Vector3::new(self.radius * angle.cos(), self.radius * angle.sin(), self.height);
                Ok(ViewSpec {
                    pose: look_at_pose(position, target)?,
                    fov,
                    noise_sigma: self.noise_sigma,
                    rng_seed: self.seed.wrapping_add(i as u64),
                })
            })
            .collect()
    }
}

/// A procedural stand-in for the Stanford Bunny: the surface of a union of
/// ellipsoids (body, haunch, head, ears, tail, feet) with low-amplitude
/// surface ripple, about one unit across.
pub fn synthetic_bunny(n: usize, seed: u64) -> PointCloud {
    struct Part {
        center: Point,
        radii: Vector3<f64>,
        yaw: f64,
        pitch: f64,
    }
    let part = |c: [f64; 3], r: [f64; 3], yaw: f64, pitch: f64| Part {
        center: Point::from(c),
        radii: Vector3::from(r),
        yaw,
        pitch,
    };
    let parts = [
        part([-0.05, 0.0, 0.0], [0.36, 0.26, 0.25], 0.0, 0.15),
        part([-0.22, 0.0, -0.05], [0.22, 0.24, 0.2], 0.0, 0.0),
        part([0.3, 0.0, 0.2], [0.15, 0.13, 0.13], 0.0, -0.3),
        part([0.22, 0.07, 0.43], [0.05, 0.035, 0.17], 0.2, 0.35),
        part([0.2, -0.08, 0.42], [0.05, 0.035, 0.16], -0.3, 0.5),
        part([-0.43, 0.0, 0.05], [0.06, 0.06, 0.06], 0.0, 0.0),
        part([0.22, 0.12, -0.22], [0.12, 0.05, 0.04], 0.1, 0.0),
        part([0.22, -0.12, -0.22], [0.12, 0.05, 0.04], -0.1, 0.0),
        part([-0.2, 0.17, -0.2], [0.16, 0.07, 0.06], 0.0, 0.0),
        part([-0.2, -0.17, -0.2], [0.16, 0.07, 0.06], 0.0, 0.0),
    ];
    let frames: Vec<RigidTransform> = parts
        .iter()
        .map(|p| RigidTransform::from_euler_zyx(p.yaw, p.pitch, 0.0, p.center))
        .collect();
    let inside = |q: &Point, skip: usize| {
        parts.iter().zip(&frames).enumerate().any(|(j, (p, f))| {
            if j == skip {
                return false;
            }
            let l = f.inverse().apply_point(q);
            (l[0] / p.radii[0]).powi(2) + (l[1] / p.radii[1]).powi(2) + (l[2] / p.radii[2]).powi(2) < 1.0
        })
    };
    // Approximate surface areas to spread samples evenly across parts.
    let areas: Vec<f64> = parts
        .iter()
        .map(|p| {
            let (a, b, c) = (p.radii[0], p.radii[1], p.radii[2]);
            let q = 1.6075;
            4.0 * std::f64::consts::PI * (((a * b).powf(q) + (a * c).powf(q) + (b * c).powf(q)) / 3.0).powf(1.0 / q)
        })
        .collect();
    let total_area: f64 = areas.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut guard = 0usize;
    while points.len() < n && guard < 200 * n.max(1) {
        guard += 1;
        let mut u = rng.random_range(0.0..total_area);
        let mut which = parts.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if u < *a {
                which = i;
                break;
            }
            u -= a;
        }
        let p = &parts[which];
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let dir = Vector3::new(s * phi.cos(), s * phi.sin(), z);
        let ripple = 1.0 + 0.04 * (7.0 * phi).sin() * (5.0 * z).cos() + 0.025 * (11.0 * z + 3.0 * phi).sin();
        let local = dir.component_mul(&p.radii) * ripple;
        let world = frames[which].apply_point(&local);
        if !inside(&world, which) {
            points.push(world);
        }
    }
    PointCloud::new(points).expect("finite synthetic points")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform_delta;

    fn small_world() -> PointCloud {
        synthetic_bunny(3000, 5)
    }

    #[test]
    fn full_sphere_keeps_everything() {
        let world = small_world();
        let pose = RigidTransform::from_euler_zyx(0.3, 0.0, 0.0, Vector3::new(2.0, 0.0, 0.0));
        let view = simulate_view(
            &world,
            &ViewSpec {
                pose,
                fov: SensorFov::full_sphere(),
                noise_sigma: 0.0,
                rng_seed: 0,
            },
        )
        .unwrap();
        assert_eq!(view.cloud, pose.inverse().apply(&world));
    }

    #[test]
    fn looking_away_is_empty() {
        let world = small_world();
        let pose = look_at_pose(Point::new(3.0, 0.0, 0.0), Point::new(6.0, 0.0, 0.0)).unwrap();
        let spec = ViewSpec {
            pose,
            fov: SensorFov::from_degrees(0.01, 10.0, 60.0, 60.0).unwrap(),
            noise_sigma: 0.0,
            rng_seed: 0,
        };
        assert!(matches!(simulate_view(&world, &spec), Err(Error::EmptyView)));
    }

    #[test]
    fn culled_set_matches_membership_oracle() {
        let world = small_world();
        let fov = SensorFov::from_degrees(0.01, 10.0, 60.0, 60.0).unwrap();
        let pose = look_at_pose(Point::new(0.8, 0.2, 0.1), Point::zeros()).unwrap();
        let view = simulate_view(&world, &ViewSpec { pose, fov, noise_sigma: 0.0, rng_seed: 0 }).unwrap();
        // Oracle: horizontal angle from +x and elevation by direct trig.
        let half = 30f64.to_radians();
        let expected: Vec<Point> = pose
            .inverse()
            .apply(&world)
            .points()
            .iter()
            .copied()
            .filter(|p| {
                let d = p.norm();
                let horiz = p[1].abs().atan2(p[0]);
                let elev = (p[2] / d).asin();
                (0.01..=10.0).contains(&d) && horiz <= half && elev.abs() <= half
            })
            .collect();
        assert_eq!(view.cloud.points(), expected.as_slice());
        for p in view.cloud.points() {
            assert!(in_view(p, &fov));
        }
    }

    #[test]
    fn identical_views_have_identity_relative_pose() {
        let world = small_world();
        let spec = ViewSpec {
            pose: look_at_pose(Point::new(1.0, 0.0, 0.0), Point::zeros()).unwrap(),
            fov: SensorFov::from_degrees(0.01, 10.0, 60.0, 60.0).unwrap(),
            noise_sigma: 0.001,
            rng_seed: 3,
        };
        let seq = make_sequence(&world, &[spec.clone(), spec]).unwrap();
        let d = transform_delta(&seq.relative[0], &RigidTransform::identity());
        assert!(d.rotation_error < 1e-12 && d.translation_error < 1e-12);
        assert_eq!(seq.views[0].cloud, seq.views[1].cloud);
    }

    #[test]
    fn sequence_is_deterministic() {
        let preset = OrbitPreset {
            world_points: 3000,
            noise_sigma: 0.002,
            ..OrbitPreset::default()
        };
        let world = synthetic_bunny(preset.world_points, preset.seed);
        let specs = preset.view_specs().unwrap();
        assert_eq!(make_sequence(&world, &specs).unwrap(), make_sequence(&world, &specs).unwrap());
    }

    #[test]
    fn relative_pose_maps_next_frame_into_previous() {
        let preset = OrbitPreset::default();
        let world = synthetic_bunny(2000, 1);
        let seq = make_sequence(&world, &preset.view_specs().unwrap()).unwrap();
        let world_pt = Point::new(0.1, 0.05, 0.0);
        let in1 = seq.views[1].pose.inverse().apply_point(&world_pt);
        let in0 = seq.views[0].pose.inverse().apply_point(&world_pt);
        assert!((seq.relative[0].apply_point(&in1) - in0).norm() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let a = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [2.0, 0.1, 0.0], [3.0, -0.1, 0.2], [4.0, 0.0, 0.0]]).unwrap();
        let fov = SensorFov::full_sphere();
        let one = overlap_fraction(&a, &a, &fov, &fov, &RigidTransform::identity()).unwrap();
        assert_eq!(one, 1.0);

        let narrow = SensorFov::from_degrees(0.01, 10.0, 60.0, 60.0).unwrap();
        let flipped = RigidTransform::from_euler_zyx(std::f64::consts::PI, 0.0, 0.0, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(overlap_fraction(&a, &a, &narrow, &narrow, &flipped).unwrap(), 0.0);

        // b sees all of a's half within range, a sees all of b.
        let short = SensorFov::new(0.01, 2.5, 1.0, 1.0).unwrap();
        let b = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let v = overlap_fraction(&a, &b, &narrow, &short, &RigidTransform::identity()).unwrap();
        assert_eq!(v, 0.75);
        assert!(overlap_fraction(&PointCloud::default(), &b, &narrow, &short, &RigidTransform::identity()).is_err());
    }

    #[test]
    fn overlap_symmetry() {
        let preset = OrbitPreset::default();
        let world = synthetic_bunny(3000, 2);
        let seq = make_sequence(&world, &preset.view_specs().unwrap()).unwrap();
        let (a, b) = (&seq.views[0], &seq.views[1]);
        let ab = overlap_fraction(&a.cloud, &b.cloud, &a.fov, &b.fov, &seq.relative[0]).unwrap();
        let ba = overlap_fraction(&b.cloud, &a.cloud, &b.fov, &a.fov, &seq.relative[0].inverse()).unwrap();
        assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn default_preset_overlap_is_partial() {
        let preset = OrbitPreset::default();
        let world = synthetic_bunny(preset.world_points, preset.seed);
        let seq = make_sequence(&world, &preset.view_specs().unwrap()).unwrap();
        let fov = preset.fov().unwrap();
        for i in 0..seq.views.len() - 1 {
            let v = overlap_fraction(&seq.views[i].cloud, &seq.views[i + 1].cloud, &fov, &fov, &seq.relative[i]).unwrap();
            assert!((0.5..0.9).contains(&v), "pair {i}: {v}");
        }
    }

    #[test]
    fn bunny_is_deterministic_and_sized() {
        let a = synthetic_bunny(1000, 9);
        assert_eq!(a.len(), 1000);
        assert_eq!(a, synthetic_bunny(1000, 9));
        let (lo, hi) = a.bounds().unwrap();
        let extent = hi - lo;
        assert!(extent.max() < 1.5 && extent.min() > 0.3);
    }
}
