mod common;

use std::f64::consts::PI;

use common::view;
use proptest::prelude::*;
use surface_sync_core::geo::*;

const R: f64 = 6_378_137.0;

fn oracle_y(lat: f64) -> f64 {
    R * (PI / 4.0 + lat.to_radians() / 2.0).tan().ln()
}

#[test]
fn closed_form_fixed_points() {
    let m = project_mercator(GeoPoint { lat: 0.0, lon: 0.0 }).unwrap();
    assert_eq!((m.x, m.y), (0.0, 0.0));
    let m = project_mercator(GeoPoint { lat: 0.0, lon: 180.0 }).unwrap();
    assert!((m.x - R * PI).abs() <= 1e-3 && (m.x - 20_037_508.3428).abs() <= 1e-3);
    assert!(m.y.abs() <= 1e-3);
    let m = project_mercator(GeoPoint { lat: 85.051_128_78, lon: 0.0 }).unwrap();
    assert!((m.y - oracle_y(85.051_128_78)).abs() <= 1e-3);
    assert!((m.y - 20_037_508.3428).abs() <= 1e-3);
    let g = unproject_mercator(MercatorMeters { x: 20_037_508.3428, y: 0.0 }).unwrap();
    assert!((g.lon - 180.0).abs() <= 1e-7 && g.lat.abs() <= 1e-7);
    assert!(matches!(
        project_mercator(GeoPoint { lat: 85.1, lon: 0.0 }),
        Err(GeoError::LatOutOfRange(_))
    ));
    assert!(unproject_mercator(MercatorMeters { x: 3.0e7, y: 0.0 }).is_err());
}

#[test]
fn screen_worked_examples() {
    let v = view(0.0, 0.0, 1.0, 0.0, 512, 512);
    assert_eq!(geo_to_screen(&v, GeoPoint { lat: 0.0, lon: 0.0 }).unwrap(), [256.0, 256.0]);
    let p = geo_to_screen(&v, GeoPoint { lat: 0.0, lon: 90.0 }).unwrap();
    assert!((p[0] - 384.0).abs() <= 1e-6 && (p[1] - 256.0).abs() <= 1e-6);
    let g = screen_to_geo(&v, [384.0, 256.0]).unwrap();
    assert!((g.lon - 90.0).abs() <= 1e-7 && g.lat.abs() <= 1e-7);
    let r = view(0.0, 0.0, 1.0, 90.0, 512, 512);
    let p = geo_to_screen(&r, GeoPoint { lat: 0.0, lon: 90.0 }).unwrap();
    assert!((p[0] - 256.0).abs() <= 1e-6 && (p[1] - 384.0).abs() <= 1e-6, "{p:?}");
}

#[test]
fn calibration_examples() {
    let pose = QrWorldPose { origin: [0.0; 3], yaw_deg: 0.0 };
    let n = [0.0, 1.0, 0.0];
    let c = calibrate_anchor(pose, [0.0, 0.0], 200.0, 0.10, n).unwrap();
    assert!((c.px_to_m - 5e-4).abs() < 1e-15);
    assert_eq!(screen_to_world(&c, [0.0, 0.0], 0.0), [0.0, 0.0, 0.0]);
    let c2 = calibrate_anchor(pose, [0.0, 0.0], 400.0, 0.10, n).unwrap();
    assert!((c2.px_to_m - c.px_to_m / 2.0).abs() < 1e-15);
    let w = screen_to_world(&c, [200.0, 0.0], 0.0);
    assert!((norm(w) - 0.10).abs() < 1e-12);
    let up = screen_to_world(&c, [200.0, 0.0], 0.3);
    let d = sub(up, w);
    assert!((d[0] - 0.0).abs() < 1e-12 && (d[1] - 0.3).abs() < 1e-12 && d[2].abs() < 1e-12);
    assert!(matches!(calibrate_anchor(pose, [0.0, 0.0], 0.0, 0.1, n), Err(GeoError::DegenerateQr(_))));
    assert!(matches!(calibrate_anchor(pose, [0.0, 0.0], 200.0, -1.0, n), Err(GeoError::DegenerateQr(_))));
}

/// The tables in docs/coordinates.md.
#[test]
fn documented_coordinate_examples() {
    let m = project_mercator(GeoPoint { lat: 45.0, lon: 90.0 }).unwrap();
    assert!((m.x - 10_018_754.1714).abs() <= 1e-3 && (m.y - 5_621_521.4862).abs() <= 1e-3, "{m:?}");
    let v = view(0.0, 0.0, 1.0, 0.0, 512, 512);
    let p = geo_to_screen(&v, GeoPoint { lat: 45.0, lon: 0.0 }).unwrap();
    assert!((p[0] - 256.0).abs() <= 1e-6 && (p[1] - 184.1792).abs() <= 1e-4, "{p:?}");
    let n = [0.0, 1.0, 0.0];
    let at = |yaw: f64, alt: f64| {
        let c = calibrate_anchor(QrWorldPose { origin: [0.0, 0.9, 0.0], yaw_deg: yaw }, [256.0, 256.0], 200.0, 0.10, n).unwrap();
        geo_to_ar(&c, &v, GeoPoint { lat: 0.0, lon: 90.0 }, alt).unwrap()
    };
    for (got, want) in [(at(0.0, 0.0), [0.064, 0.9, 0.0]), (at(0.0, 0.25), [0.064, 1.15, 0.0]), (at(90.0, 0.0), [0.0, 0.9, -0.064])] {
        assert!(norm(sub(got, want)) <= 1e-12, "{got:?} vs {want:?}");
    }
}

fn calib(yaw: f64) -> AnchorCalibration {
    calibrate_anchor(QrWorldPose { origin: [0.3, 0.9, -0.2], yaw_deg: yaw }, [120.0, 960.0], 200.0, 0.10, [0.0, 1.0, 0.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mercator_round_trip(lat in -85.051_128_78..=85.051_128_78f64, lon in -180.0..=180.0f64) {
        let p = GeoPoint { lat, lon };
        let m = project_mercator(p).unwrap();
        prop_assert!((m.x - R * lon.to_radians()).abs() <= 1e-3);
        prop_assert!((m.y - oracle_y(lat)).abs() <= 1e-3);
        let q = unproject_mercator(m).unwrap();
        prop_assert!((q.lat - lat).abs() <= 1e-9 && (q.lon - lon).abs() <= 1e-9, "{p:?} -> {q:?}");
    }

    #[test]
    fn screen_round_trip(
        clat in -60.0..60.0f64, clon in -170.0..170.0f64, zoom in 0.0..18.0f64,
        bearing in 0.0..360.0f64, fx in 0.0..1.0f64, fy in 0.0..1.0f64,
    ) {
        let v = view(clat, clon, zoom, bearing, 1920, 1080);
        let px = [fx * 1920.0, fy * 1080.0];
        let Ok(g) = screen_to_geo(&v, px) else { return Ok(()); };
        let back = geo_to_screen(&v, g).unwrap();
        prop_assert!((back[0] - px[0]).abs() <= 1e-6 && (back[1] - px[1]).abs() <= 1e-6, "{px:?} {back:?}");
        let g2 = screen_to_geo(&v, back).unwrap();
        prop_assert!((g2.lat - g.lat).abs() <= 1e-9 && (g2.lon - g.lon).abs() <= 1e-9);
    }

    #[test]
    fn monotone_projection(a in -85.0..84.0f64, d in 1e-6..1.0f64, lon in -179.0..179.0f64) {
        let p = project_mercator(GeoPoint { lat: a, lon }).unwrap();
        let q = project_mercator(GeoPoint { lat: a + d, lon: lon + d }).unwrap();
        prop_assert!(q.y > p.y && q.x > p.x);
    }

    #[test]
    fn view_stays_consistent(
        clat in -70.0..70.0f64, clon in -180.0..180.0f64, zoom in 0.0..15.0f64, bearing in -720.0..720.0f64,
        dx in -500.0..500.0f64, dy in -500.0..500.0f64, dz in -3.0..3.0f64,
    ) {
        let v = view(clat, clon, zoom, bearing, 1024, 768);
        prop_assert!(v.check_consistency().is_ok());
        prop_assert!((0.0..360.0).contains(&v.orientation_deg));
        if let Ok(p) = v.panned_by([dx, dy]) { prop_assert!(p.check_consistency().is_ok()); }
        if let Ok(z) = v.zoomed_about(dz, [300.0, 200.0]) { prop_assert!(z.check_consistency().is_ok()); }
    }

    #[test]
    fn zoom_plus_one_doubles_ar_offsets(
        clat in -50.0..50.0f64, clon in -150.0..150.0f64, zoom in 0.0..12.0f64, bearing in 0.0..360.0f64,
        dlat in -1.0..1.0f64, dlon in -1.0..1.0f64, yaw in 0.0..360.0f64,
    ) {
        let c = calib(yaw);
        let v1 = view(clat, clon, zoom, bearing, 1920, 1080);
        let v2 = view(clat, clon, zoom + 1.0, bearing, 1920, 1080);
        let p = GeoPoint { lat: clat + dlat, lon: clon + dlon };
        let d1 = norm(sub(geo_to_ar(&c, &v1, p, 0.0).unwrap(), geo_to_ar(&c, &v1, v1.center, 0.0).unwrap()));
        let d2 = norm(sub(geo_to_ar(&c, &v2, p, 0.0).unwrap(), geo_to_ar(&c, &v2, v2.center, 0.0).unwrap()));
        prop_assert!((d2 - 2.0 * d1).abs() <= 1e-9 * (1.0 + d2), "{d1} {d2}");
    }

    #[test]
    fn bearing_rotates_planar_offsets(
        clat in -50.0..50.0f64, clon in -150.0..150.0f64, zoom in 0.0..10.0f64, theta in 0.0..360.0f64,
        dlat in -2.0..2.0f64, dlon in -2.0..2.0f64,
    ) {
        let c = calib(0.0);
        let (right, down) = c.table_axes();
        let planar = |v: &ViewState| {
            let o = sub(geo_to_ar(&c, v, GeoPoint { lat: clat + dlat, lon: clon + dlon }, 0.0).unwrap(),
                        geo_to_ar(&c, v, v.center, 0.0).unwrap());
            [dot(o, right), dot(o, down)]
        };
        let a = planar(&view(clat, clon, zoom, 0.0, 1920, 1080));
        let b = planar(&view(clat, clon, zoom, theta, 1920, 1080));
        let (s, co) = theta.to_radians().sin_cos();
        // Screen y points down, so this matrix turns content clockwise.
        let expect = [a[0] * co - a[1] * s, a[0] * s + a[1] * co];
        prop_assert!((b[0] - expect[0]).abs() <= 1e-9 && (b[1] - expect[1]).abs() <= 1e-9);
        prop_assert!((a[0].hypot(a[1]) - b[0].hypot(b[1])).abs() <= 1e-9);
    }

    #[test]
    fn mirror_symmetry_about_center_column(clat in -50.0..50.0f64, clon in -150.0..150.0f64, zoom in 0.0..8.0f64, d in 0.0..5.0f64, lat in -60.0..60.0f64) {
        let c = calib(0.0);
        let v = view(clat, clon, zoom, 0.0, 1920, 1080);
        let (right, down) = c.table_axes();
        let center = geo_to_ar(&c, &v, v.center, 0.0).unwrap();
        let e = sub(geo_to_ar(&c, &v, GeoPoint { lat, lon: clon + d }, 0.0).unwrap(), center);
        let w = sub(geo_to_ar(&c, &v, GeoPoint { lat, lon: clon - d }, 0.0).unwrap(), center);
        prop_assert!((dot(e, right) + dot(w, right)).abs() <= 1e-9);
        prop_assert!((dot(e, down) - dot(w, down)).abs() <= 1e-9);
    }
}
