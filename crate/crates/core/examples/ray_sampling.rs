//! Casts one camera ray through the posed body boxes, draws stratified
//! depths and integrates a constant medium against its closed form.

use cch::body::{BodyRig, PosedBody, ShapeParams};
use cch::fields::RadianceSample;
use cch::rays::{ray_boxes_interval, stratified_samples, Camera, CameraConfig};
use cch::render::integrate_ray;
use cch::rng;

fn main() -> cch::Result<()> {
    let rig = BodyRig::humanoid();
    let posed = PosedBody::new(&rig, &ShapeParams::zeros(rig.shape_count()), &rig.relaxed_pose())?;
    let camera = Camera::from_config(&CameraConfig::default())?;
    let ray = camera.ray(camera.height / 3, camera.width / 2);
    let Some((near, far)) = ray_boxes_interval(&ray, &posed.boxes) else {
        println!("centre ray misses every box");
        return Ok(());
    };
    println!("ray enters the box union at t = {near:.4} and leaves at t = {far:.4}");

    let (sigma, color, bg) = (0.8, [0.9, 0.4, 0.1], [1.0; 3]);
    let keep = (-sigma * (far - near)).exp();
    let exact: Vec<f64> = (0..3).map(|c| color[c] * (1.0 - keep) + bg[c] * keep).collect();
    for n in [8, 32, 128] {
        let ts = stratified_samples(near, far, n, &mut rng::stream(0, 0))?;
        let s = RadianceSample {
            color,
            sigma,
            delta_d: 0.0,
        };
        let samples: Vec<_> = ts.iter().map(|t| (*t, s)).collect();
        let out = integrate_ray(&samples, (far - near) / n as f64, bg)?;
        let err = (0..3).map(|c| (out.rgb[c] - exact[c]).abs() / exact[c]).fold(0.0, f64::max);
        println!("N = {n:>3}: rgb {:.5?}, relative error {err:.2e}", out.rgb);
    }
    Ok(())
}
