//! Calibration error metrics and depth-colored reprojection rendering.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraError, CameraIntrinsics};
use crate::geometry::{geodesic_angle, Point3, PointCloud, RigidTransform};
use crate::scalar::Real;

/// Errors of an estimated extrinsic against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationErrors<T> {
    pub rotation_error_deg: T,
    pub translation_error_m: T,
    /// Absolute roll, pitch and yaw differences in degrees (Z-Y-X convention).
    pub per_axis_rotation: [T; 3],
    /// Absolute x, y and z differences in meters.
    pub per_axis_translation: [T; 3],
}

/// Geodesic angle between two rotations, `acos((tr(Rc·Rtrueᵀ) − 1)/2)`, in degrees.
pub fn rotation_error<T: Real>(rc: &Matrix3<T>, rtrue: &Matrix3<T>) -> T {
    geodesic_angle(rc, rtrue).to_deg()
}

/// Euler angles `(roll, pitch, yaw)` in degrees with `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn euler_zyx_deg<T: Real>(r: &Matrix3<T>) -> [T; 3] {
    let sp = (-r[(2, 0)]).clamp(-T::one(), T::one());
    let pitch = sp.asin();
    let (roll, yaw) = if sp.abs() < T::lit(1.0 - 1.0e-12) {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    } else {
        // Gimbal lock: only roll ± yaw is defined; put it all in yaw.
        (T::zero(), (-r[(0, 1)]).atan2(r[(1, 1)]))
    };
    [roll.to_deg(), pitch.to_deg(), yaw.to_deg()]
}

/// `|a − b|` for angles in degrees, wrapped into `[0, 180]`.
fn angle_gap<T: Real>(a: T, b: T) -> T {
    let full = T::lit(360.0);
    let mut d = (a - b) % full;
    if d < T::zero() {
        d += full;
    }
    if d > T::lit(180.0) {
        full - d
    } else {
        d
    }
}

/// Per-axis rotation differences `(|Δroll|, |Δpitch|, |Δyaw|)` in degrees.
pub fn per_axis_rotation_error<T: Real>(rc: &Matrix3<T>, rtrue: &Matrix3<T>) -> [T; 3] {
    let a = euler_zyx_deg(rc);
    let b = euler_zyx_deg(rtrue);
    [angle_gap(a[0], b[0]), angle_gap(a[1], b[1]), angle_gap(a[2], b[2])]
}

/// Euclidean distance between translations, `‖tc − ttrue‖`.
pub fn translation_error<T: Real>(tc: &Vector3<T>, ttrue: &Vector3<T>) -> T {
    (tc - ttrue).norm()
}

pub fn calibration_errors<T: Real>(estimate: &RigidTransform<T>, truth: &RigidTransform<T>) -> CalibrationErrors<T> {
    let d = estimate.translation() - truth.translation();
    CalibrationErrors {
        rotation_error_deg: rotation_error(estimate.rotation(), truth.rotation()),
        translation_error_m: d.norm(),
        per_axis_rotation: per_axis_rotation_error(estimate.rotation(), truth.rotation()),
        per_axis_translation: [d.x.abs(), d.y.abs(), d.z.abs()],
    }
}

/// Pixel distance between a LiDAR point projected through `extrinsic` and
/// its observed image location.
pub fn reprojection_error<T: Real>(
    center_3d: &Point3<T>,
    extrinsic: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
    observed: &Vector2<T>,
) -> Result<T, CameraError> {
    let px = project_point(k, &extrinsic.apply(center_3d))?;
    Ok((px - observed).norm())
}

/// Center of a flat target from its LiDAR hits, for a sensor sampling a
/// regular azimuth/elevation grid (`y` down, `z` forward). Each hit is
/// weighted by the target area its ray covers, `r²·cos(el)/|d·n|`, so the
/// denser near side of a tilted or off-axis target does not pull the
/// estimate. `None` for fewer than three hits or a degenerate spread.
pub fn target_center<T: Real>(cloud: &PointCloud<T>) -> Option<Point3<T>> {
    let (normal, _) = crate::extraction::smallest_principal_axis(cloud.points.iter().copied())?;
    let mut total = T::zero();
    let mut acc = Vector3::zeros();
    for p in &cloud.points {
        let r = p.norm();
        if !(r > T::zero()) {
            continue;
        }
        let d = p / r;
        let cos_el = (T::one() - d.y * d.y).max(T::zero()).sqrt();
        let incidence = d.dot(&normal).abs().max(T::lit(1.0e-3));
        let w = r * r * cos_el / incidence;
        total += w;
        acc += p * w;
    }
    (total > T::zero()).then(|| acc / total)
}

/// Pixel position and camera depth of every point in front of the camera.
pub fn project_cloud<T: Real>(
    cloud: &PointCloud<T>,
    extrinsic: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
) -> Vec<(Vector2<T>, T)> {
    cloud
        .points
        .iter()
        .filter_map(|p| {
            let c = extrinsic.apply(p);
            project_point(k, &c).ok().map(|px| (px, c.z))
        })
        .collect()
}

/// Jet-style ramp: near points blue, far points red.
fn depth_color(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let channel = |center: f64| ((1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([channel(3.0), channel(2.0), channel(1.0)])
}

/// Splats every point onto `image`, one pixel each, colored by camera depth.
/// Far points are drawn first so nearer ones stay on top. Returns the number
/// of points that landed inside the image.
pub fn render_onto<T: Real>(
    image: &mut RgbImage,
    cloud: &PointCloud<T>,
    extrinsic: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
) -> usize {
    let (w, h) = image.dimensions();
    let mut splats: Vec<(u32, u32, f64)> = project_cloud(cloud, extrinsic, k)
        .into_iter()
        .filter_map(|(px, z)| {
            let (u, v) = (px.x.as_f64().floor(), px.y.as_f64().floor());
            (u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64).then_some((u as u32, v as u32, z.as_f64()))
        })
        .collect();
    if splats.is_empty() {
        return 0;
    }
    let near = splats.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let far = splats.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let span = if far > near { far - near } else { 1.0 };
    // Stable sort keeps input order among equal depths.
    splats.sort_by(|a, b| b.2.total_cmp(&a.2));
    for &(u, v, z) in &splats {
        image.put_pixel(u, v, depth_color((z - near) / span));
    }
    splats.len()
}

/// Renders the cloud onto a blank `width × height` image.
pub fn render_reprojection<T: Real>(
    cloud: &PointCloud<T>,
    extrinsic: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
    width: u32,
    height: u32,
) -> RgbImage {
    let mut image = RgbImage::new(width, height);
    render_onto(&mut image, cloud, extrinsic, k);
    image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, rotation_about, Frame};
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn rz(a: f64) -> Matrix3<f64> {
        rotation_about(&Vector3::z(), a)
    }

    #[test]
    fn rotation_error_examples() {
        let r = rotation_about(&Vector3::new(0.3, -1.0, 0.2), 0.8);
        assert_eq!(rotation_error(&r, &r), 0.0);
        for axis in [Vector3::x(), Vector3::y(), Vector3::new(1.0, 1.0, -2.0)] {
            let rc = r * rotation_about(&axis, 1f64.to_radians());
            assert!((rotation_error(&rc, &r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_error_examples() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(translation_error(&a, &a), 0.0);
        assert!((translation_error(&Vector3::new(0.03f64, 0.04, 0.0), &Vector3::zeros()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn euler_decomposition_round_trip() {
        let (roll, pitch, yaw) = (10f64, -20f64, 30f64);
        let r = rz(yaw.to_radians())
            * rotation_about(&Vector3::y(), pitch.to_radians())
            * rotation_about(&Vector3::x(), roll.to_radians());
        let e = euler_zyx_deg(&r);
        assert!((e[0] - roll).abs() < 1e-9 && (e[1] - pitch).abs() < 1e-9 && (e[2] - yaw).abs() < 1e-9);
    }

    #[test]
    fn yaw_offset_lands_in_yaw_column() {
        let truth = RigidTransform::identity(Frame::Lidar, Frame::Camera);
        let est = RigidTransform::new(rz(1f64.to_radians()), Vector3::zeros(), Frame::Lidar, Frame::Camera).unwrap();
        let e = calibration_errors(&est, &truth);
        assert!((e.per_axis_rotation[2] - 1.0).abs() < 1e-9);
        assert!(e.per_axis_rotation[0] < 1e-9 && e.per_axis_rotation[1] < 1e-9);
        assert!((e.rotation_error_deg - 1.0).abs() < 1e-9);
        assert_eq!(e.translation_error_m, 0.0);
    }

    #[test]
    fn angle_gap_wraps() {
        assert!((angle_gap(179.0f64, -179.0) - 2.0).abs() < 1e-12);
        assert!((angle_gap(-90.0f64, 90.0) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn target_center_removes_grid_density_bias() {
        use crate::synth::{scan, Label, LidarModel, Primitive, Shape};
        use rand::SeedableRng;
        let lidar = LidarModel { range_noise_sigma: 0.0, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let center = Vector3::new(0.3, 0.4, 2.0);
        let disk = Primitive {
            shape: Shape::Disk { center: [0.3, 0.4, 2.0], normal: [0.0, -0.5, -1.0], radius: 0.2 },
            label: Label::Target,
        };
        let (points, _) = scan(&lidar, &[disk], &mut rng);
        let cloud = PointCloud::new(points, Frame::Lidar);
        let plain = (cloud.centroid().unwrap() - center).norm();
        let weighted = (target_center(&cloud).unwrap() - center).norm();
        assert!(plain > 2e-3, "plain centroid off by {plain}");
        assert!(weighted < 0.25 * plain, "weighted {weighted} vs plain {plain}");
        assert!(target_center(&PointCloud::new(vec![Vector3::new(0.0, 0.0, 1.0f64)], Frame::Lidar)).is_none());
    }

    #[test]
    fn reprojection_examples() {
        let id = RigidTransform::identity(Frame::Lidar, Frame::Camera);
        let p = Vector3::new(0.3, -0.2, 3.0);
        let observed = project_point(&k(), &p).unwrap();
        assert!(reprojection_error(&p, &id, &k(), &observed).unwrap() < 1e-9);

        // A point on the optical axis at 3 m under a 0.05° yaw error moves by f·tan(0.05°).
        let on_axis = Vector3::new(0.0, 0.0, 3.0);
        let tilt = RigidTransform::new(
            rotation_about(&Vector3::y(), 0.05f64.to_radians()),
            Vector3::zeros(),
            Frame::Lidar,
            Frame::Camera,
        )
        .unwrap();
        let err = reprojection_error(&on_axis, &tilt, &k(), &Vector2::new(320.0, 240.0)).unwrap();
        assert!((err - 500.0 * 0.05f64.to_radians().tan()).abs() < 1e-9);
        assert!((err - 0.44).abs() < 0.01);

        let behind = Vector3::new(0.0, 0.0, -1.0);
        assert!(reprojection_error(&behind, &id, &k(), &observed).is_err());
    }

    #[test]
    fn rendering_examples() {
        let id = RigidTransform::identity(Frame::Lidar, Frame::Camera);
        let blank = render_reprojection(&PointCloud::<f64>::empty(Frame::Lidar), &id, &k(), 640, 480);
        assert!(blank.pixels().all(|p| p.0 == [0, 0, 0]));

        let one = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0)], Frame::Lidar);
        let img = render_reprojection(&one, &id, &k(), 640, 480);
        let lit: Vec<_> = img.enumerate_pixels().filter(|(_, _, p)| p.0 != [0, 0, 0]).map(|(x, y, _)| (x, y)).collect();
        assert_eq!(lit, vec![(320, 240)]);
    }

    #[test]
    fn nearer_points_win_and_rendering_is_deterministic() {
        let id = RigidTransform::identity(Frame::Lidar, Frame::Camera);
        // Both points hit pixel (320, 240); the near one must stay visible.
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 6.0)], Frame::Lidar);
        let img = render_reprojection(&cloud, &id, &k(), 640, 480);
        assert_eq!(*img.get_pixel(320, 240), depth_color(0.0));
        let again = render_reprojection(&cloud, &id, &k(), 640, 480);
        assert_eq!(img, again);
    }

    #[test]
    fn board_splats_stay_inside_the_board_quad() {
        let id = RigidTransform::identity(Frame::Lidar, Frame::Camera);
        let r = rotation_about(&Vector3::new(0.2, 1.0, 0.0), 0.5);
        let center = Vector3::new(0.1, -0.1, 2.5);
        let (hx, hy) = (0.4, 0.3);
        let to_cam = |x: f64, y: f64| r * Vector3::new(x, y, 0.0) + center;
        let mut pts = Vec::new();
        for i in 0..=40 {
            for j in 0..=30 {
                pts.push(to_cam(-hx + 2.0 * hx * i as f64 / 40.0, -hy + 2.0 * hy * j as f64 / 30.0));
            }
        }
        let cloud = PointCloud::new(pts, Frame::Lidar);
        let quad: Vec<Vector2<f64>> = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            .iter()
            .map(|&(x, y)| project_point(&k(), &to_cam(x, y)).unwrap())
            .collect();
        // Convex point-in-polygon: the sign of every edge cross product agrees.
        let inside = |p: &Vector2<f64>| {
            let s: Vec<f64> = (0..4)
                .map(|i| {
                    let (a, b) = (quad[i], quad[(i + 1) % 4]);
                    (b - a).perp(&(p - a))
                })
                .collect();
            s.iter().all(|&v| v >= -1e-9) || s.iter().all(|&v| v <= 1e-9)
        };
        let projected = project_cloud(&cloud, &id, &k());
        assert_eq!(projected.len(), cloud.len());
        assert!(projected.iter().all(|(px, _)| inside(px)));
        let mut img = RgbImage::new(640, 480);
        assert_eq!(render_onto(&mut img, &cloud, &id, &k()), cloud.len());
    }

    fn arb_rotation() -> impl Strategy<Value = Matrix3<f64>> {
        prop::array::uniform3(-3.0..3.0f64).prop_map(|w| exp_so3(&Vector3::from(w)))
    }

    proptest! {
        #[test]
        fn rotation_error_is_symmetric(a in arb_rotation(), b in arb_rotation()) {
            prop_assert!((rotation_error(&a, &b) - rotation_error(&b, &a)).abs() < 1e-9);
        }

        #[test]
        fn rotation_error_is_bi_invariant(a in arb_rotation(), b in arb_rotation(), c in arb_rotation()) {
            let e = rotation_error(&a, &b);
            prop_assert!((rotation_error(&(c * a), &(c * b)) - e).abs() < 1e-9);
            prop_assert!((rotation_error(&(a * c), &(b * c)) - e).abs() < 1e-9);
        }

        #[test]
        fn rotation_error_matches_axis_angle_oracle(a in arb_rotation(), b in arb_rotation()) {
            // nalgebra's own rotation type supplies the relative angle.
            let rel = nalgebra::Rotation3::from_matrix_unchecked(a * b.transpose());
            prop_assert!((rotation_error(&a, &b) - rel.angle().to_degrees()).abs() < 1e-6);
        }

        #[test]
        fn translation_error_matches_components(a in prop::array::uniform3(-5.0..5.0f64), b in prop::array::uniform3(-5.0..5.0f64)) {
            let d: f64 = (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
            prop_assert!((translation_error(&Vector3::from(a), &Vector3::from(b)) - d).abs() < 1e-12);
        }
    }
}
