use std::time::Instant;

use event_spectra::depth::{match_events, reconstruct_depth, DepthConfig, PolarityFilter};
use event_spectra::events::EventStream;
use event_spectra::projector::{ProjectorConfig, ProjectorView};
use event_spectra::scene::{make_plane_scene, make_step_scene, RigGeometry, SceneModel};
use event_spectra::sensor::{simulate, SensorConfig};
use nalgebra::Point3;

/// Scan slow enough that every projector pixel dwells 2 µs.
fn slow_projector(rig: &RigGeometry) -> ProjectorConfig {
    let n = (rig.projector.width * rig.projector.height) as f64;
    ProjectorConfig {
        width: rig.projector.width,
        height: rig.projector.height,
        frame_rate: 1.0 / (2e-6 * n),
        ..Default::default()
    }
}

fn one_frame(scene: &SceneModel, rig: &RigGeometry) -> (EventStream, ProjectorConfig) {
    let projector = slow_projector(rig);
    let sensor = SensorConfig::ideal().with_resolution(rig.camera.width, rig.camera.height);
    let frame = projector.schedule().unwrap().frame_time();
    let out = simulate(scene, rig, &projector, &sensor, frame, 638.0).unwrap();
    (out.events, projector)
}

#[test]
fn plane_at_one_meter() {
    let rig = RigGeometry::default();
    let scene = make_plane_scene(640, 480, 1.0).unwrap();
    let start = Instant::now();
    let (stream, projector) = one_frame(&scene, &rig);
    let schedule = projector.schedule().unwrap();

    // Correspondences land on the column the pixel center projects to, ±1.
    let corr = match_events(&stream, &schedule, PolarityFilter::On).unwrap();
    let mut good = 0;
    for c in &corr {
        let p = rig.camera.unproject(c.x as f64, c.y as f64, 1.0);
        let (u, _) = rig.projector.project(&Point3::new(p.x - rig.baseline, p.y, p.z));
        if (c.col as f64 - u.round()).abs() <= 1.0 {
            good += 1;
        }
    }
    let lit = ProjectorView::build(&scene, &rig).unwrap().lit_mask(640, 480).unwrap();
    let lit_count = lit.data().iter().filter(|&&v| v).count();
    assert!(good as f64 >= 0.95 * lit_count as f64, "{good} of {lit_count}");

    let depth = reconstruct_depth(&stream, &rig, &schedule, &DepthConfig::default()).unwrap();
    let covered = (0..480)
        .flat_map(|y| (0..640).map(move |x| (x, y)))
        .filter(|&(x, y)| *lit.get(x, y) && depth.at(x, y).is_some())
        .count();
    assert!(covered as f64 >= 0.95 * lit_count as f64);
    let vals = depth.valid_values();
    let rmse = (vals.iter().map(|&z| (z as f64 - 1.0).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    assert!(rmse < 0.005, "rmse {rmse}");
    // One projector pixel of disparity error at this depth.
    let bound = 1.0 * 1.0 / (rig.projector.focal * rig.baseline);
    assert!(vals.iter().all(|&z| (z as f64 - 1.0).abs() <= bound));
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn step_edge_localized() {
    let rig = RigGeometry::default();
    let edge = 320;
    let scene = make_step_scene(640, 480, 0.8, 1.2, edge).unwrap();
    let (stream, projector) = one_frame(&scene, &rig);
    let depth = reconstruct_depth(&stream, &rig, &projector.schedule().unwrap(), &DepthConfig::default()).unwrap();
    let y = 240;
    let near: Vec<f32> = (edge - 60..edge - 5).filter_map(|x| depth.at(x, y)).collect();
    let far: Vec<f32> = (edge + 5..edge + 60).filter_map(|x| depth.at(x, y)).collect();
    assert!(near.iter().all(|&z| (z - 0.8).abs() < 0.01));
    assert!(far.iter().all(|&z| (z - 1.2).abs() < 0.02));
    // Edge = first column whose depth is closer to the far plane.
    let found = (edge - 20..edge + 20)
        .find(|&x| depth.at(x, y).is_some_and(|z| z > 1.0))
        .unwrap();
    assert!((found as i64 - edge as i64).abs() <= 2, "edge at {found}");
}

#[test]
fn empty_stream_all_invalid() {
    let rig = RigGeometry::default();
    let projector = slow_projector(&rig);
    let stream = EventStream::empty(640, 480);
    let d = reconstruct_depth(&stream, &rig, &projector.schedule().unwrap(), &DepthConfig::default()).unwrap();
    assert_eq!(d.valid_count(), 0);
}
