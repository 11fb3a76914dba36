//! Builds a degradation pool over five scenes, scores every variant with
//! the depth-space and rendering-space metrics, and ranks the candidates
//! by correlation against DSSIM. CSVs and scatter plots land in
//! target/example_out/correlation/.

use std::fs;
use std::path::PathBuf;

use depthvis::geometry::LightRig;
use depthvis::harness::{
    correlation_report, degradation_study, scatter_plot, write_correlation_csv,
    write_scatter_csv, SceneSource,
};
use depthvis::io::save_rendering;
use depthvis::scenegen::{SceneKind, SceneSpec};
use depthvis::Result;

fn main() -> Result<()> {
    let out = PathBuf::from("target/example_out/correlation");
    fs::create_dir_all(&out).expect("create output dir");
    let scene = |kind| {
        SceneSource::Generate(SceneSpec {
            kind,
            width: 128,
            height: 128,
            depth_range: 60.0,
        })
    };
    let scenes = [
        scene(SceneKind::SphereOnPlane { radius: 44.0 }),
        scene(SceneKind::CylinderOnPlane { radius: 40.0 }),
        scene(SceneKind::Cube { size: 48.0 }),
        scene(SceneKind::Ramp { slope: 0.05 }),
        scene(SceneKind::SineRelief {
            amplitude: 1.2,
            period: 32.0,
        }),
    ];
    let rig = LightRig::default();
    let reference = "dssim_v_max";
    let candidates: Vec<String> = ["rmse_d", "rmse_v", "rmse_v1_max", "bumpiness"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let points = degradation_study(&scenes, &rig, 17, &PathBuf::from("."))?;
    let rows = correlation_report(&points, reference, &candidates)?;

    println!("{} points, reference {reference}", points.len());
    println!("{:12} {:>9} {:>9}", "metric", "pearson", "spearman");
    for row in &rows {
        let fmt = |v: Option<f64>| {
            v.map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "undefined".into())
        };
        println!(
            "{:12} {:>9} {:>9}",
            row.metric,
            fmt(row.pearson),
            fmt(row.spearman)
        );
    }

    write_correlation_csv(&rows, &out.join("correlation.csv"))?;
    write_scatter_csv(&points, reference, &candidates, &out.join("scatter.csv"))?;
    for candidate in &candidates {
        let plot = scatter_plot(&points, candidate, reference, 256)?;
        save_rendering(&plot, &out.join(format!("{candidate}_vs_{reference}.pgm")))?;
    }
    println!("wrote CSVs and plots to {}", out.display());
    Ok(())
}
