//! Shades one scene under all four lights of the default rig and writes
//! the renderings to target/example_out/lights/. The three basis lights
//! catch surface detail from orthogonal directions; the fourth, oblique
//! light is the one that makes silhouette errors most visible.

use std::fs;
use std::path::PathBuf;

use depthvis::geometry::{normals_from_depth, render, LightRig, NormalModel};
use depthvis::io::save_rendering;
use depthvis::scenegen::{generate, SceneKind, SceneSpec};
use depthvis::Result;

fn main() -> Result<()> {
    let out = PathBuf::from("target/example_out/lights");
    fs::create_dir_all(&out).expect("create output dir");
    let spec = SceneSpec {
        kind: SceneKind::SphereOnPlane { radius: 44.0 },
        width: 128,
        height: 128,
        depth_range: 60.0,
    };
    let map = generate(&spec)?;
    let normals = normals_from_depth(&map, NormalModel::height_field())?;
    let rig = LightRig::default();
    for (i, light) in rig.lights().into_iter().enumerate() {
        let shaded = render(&normals, light)?;
        let mean: f64 =
            shaded.values.data().iter().sum::<f64>() / shaded.values.data().len() as f64;
        let path = out.join(format!("e{}.pgm", i + 1));
        save_rendering(&shaded, &path)?;
        println!(
            "e{}: direction ({:+.3}, {:+.3}, {:+.3}), mean shade {:+.3} -> {}",
            i + 1,
            light.x,
            light.y,
            light.z,
            mean,
            path.display()
        );
    }
    Ok(())
}
