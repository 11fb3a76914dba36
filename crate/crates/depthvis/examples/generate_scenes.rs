//! Generates every built-in scene kind and writes the depth map plus a
//! shaded preview for each to target/example_out/scenes/.

use std::fs;
use std::path::PathBuf;

use depthvis::geometry::{normals_from_depth, render, LightRig, NormalModel};
use depthvis::io::{save_depth, save_rendering, DepthFormat};
use depthvis::scenegen::{generate, SceneKind, SceneSpec};
use depthvis::Result;

fn main() -> Result<()> {
    let out = PathBuf::from("target/example_out/scenes");
    fs::create_dir_all(&out).expect("create output dir");
    let kinds = [
        SceneKind::SphereOnPlane { radius: 44.0 },
        SceneKind::CylinderOnPlane { radius: 40.0 },
        SceneKind::Cube { size: 48.0 },
        SceneKind::Ramp { slope: 0.05 },
        SceneKind::SineRelief {
            amplitude: 1.2,
            period: 32.0,
        },
    ];
    let rig = LightRig::default();
    for kind in kinds {
        let spec = SceneSpec {
            kind,
            width: 128,
            height: 128,
            depth_range: 60.0,
        };
        let map = generate(&spec)?;
        let depth_path = out.join(format!("{}.pfm", spec.kind.id()));
        save_depth(&map, &depth_path, DepthFormat::Pfm)?;
        let normals = normals_from_depth(&map, NormalModel::height_field())?;
        let shaded = render(&normals, rig.extra())?;
        save_rendering(&shaded, &out.join(format!("{}.pgm", spec.kind.id())))?;
        println!("{:18} -> {}", spec.kind.id(), depth_path.display());
    }
    Ok(())
}
