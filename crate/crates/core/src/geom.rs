//! Small planar-angle helpers shared by the heading and turn logic.

/// Normalizes an angle in degrees to `[0, 360)`.
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid can return exactly 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed minimal difference `to - from` in `(-180, 180]`.
pub fn angle_diff_deg(to: f64, from: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Circular mean of a set of headings in degrees, `None` when empty or when
/// the resultant vector vanishes.
pub fn circular_mean_deg(headings: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for h in headings {
        let r = h.to_radians();
        s += r.sin();
        c += r.cos();
        n += 1;
    }
    if n == 0 || (s * s + c * c) < 1e-18 {
        return None;
    }
    Some(normalize_deg(s.atan2(c).to_degrees()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_wraps() {
        assert_eq!(angle_diff_deg(30.0, 350.0), 40.0);
        assert_eq!(angle_diff_deg(350.0, 30.0), -40.0);
        assert_eq!(angle_diff_deg(180.0, 0.0), 180.0);
        assert_eq!(angle_diff_deg(0.0, 180.0), 180.0);
    }

    #[test]
    fn mean_across_north() {
        let m = circular_mean_deg([350.0, 10.0]).unwrap();
        assert!(m.min(360.0 - m) < 1e-9);
        assert!(circular_mean_deg([0.0, 180.0]).is_none());
    }
}
