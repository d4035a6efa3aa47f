//! Pose statistics shared by the sweep and compare commands.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};

/// Mean rotation of samples taken in time order. Each quaternion is put on
/// the hemisphere of its predecessor before averaging, so slow drifts across
/// the sign flip stay continuous.
pub fn mean_rotation(samples: &[UnitQuaternion<f64>]) -> Option<UnitQuaternion<f64>> {
    let first = samples.first()?;
    let mut prev = first.coords;
    let mut sum = Vector4::zeros();
    for q in samples {
        let mut c = q.coords;
        if c.dot(&prev) < 0.0 {
            c = -c;
        }
        sum += c;
        prev = c;
    }
    Some(UnitQuaternion::from_quaternion(Quaternion::from(sum)))
}

/// Root mean square of the angles between each sample and their mean
/// rotation, radians.
pub fn orientation_sigma(samples: &[UnitQuaternion<f64>]) -> Option<f64> {
    let mean = mean_rotation(samples)?;
    let ss: f64 = samples.iter().map(|q| q.angle_to(&mean).powi(2)).sum();
    Some((ss / samples.len() as f64).sqrt())
}

/// Per-axis population standard deviation.
pub fn axis_sigma(samples: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Vector3<f64>>() / n;
    let var = samples
        .iter()
        .map(|p| (p - mean).component_mul(&(p - mean)))
        .sum::<Vector3<f64>>()
        / n;
    Some(var.map(f64::sqrt))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn quat_wxyz(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}
