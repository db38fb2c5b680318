use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{Vector2, Vector3};
use raypose_core::analysis::{gaussian_smooth_track, TrackPose};
use raypose_core::dataset::DroneClassSpec;
use raypose_core::geometry::{
    euler_norm_to_matrix, matrix_to_euler_norm, project_point, relative_rotation_angle, CameraIntrinsics,
    NormalizedEuler, RigidPose,
};
use raypose_core::model::{Model, ModelInput};
use raypose_core::pnp::{pnp_solve, PnpProblem};
use raypose_core::training::TrainConfig;
use raypose_core::{DType, Device, Tensor};

fn geometry(c: &mut Criterion) {
    let a = euler_norm_to_matrix(&NormalizedEuler::wrapped([0.3, 0.1, 0.45]));
    let b = euler_norm_to_matrix(&NormalizedEuler::wrapped([0.31, 0.12, 0.47]));
    c.bench_function("euler_round_trip", |bench| {
        bench.iter(|| matrix_to_euler_norm(&euler_norm_to_matrix(black_box(&NormalizedEuler::wrapped([0.3, 0.1, 0.45])))))
    });
    c.bench_function("relative_rotation_angle", |bench| {
        bench.iter(|| relative_rotation_angle(black_box(&a), black_box(&b)))
    });
}

fn pnp(c: &mut Criterion) {
    let k = CameraIntrinsics::new(160.0, 160.0, 64.0, 64.0).unwrap();
    let spec = DroneClassSpec::square(0, "bench", 0.3);
    let pose = RigidPose::from_euler(&NormalizedEuler::wrapped([0.2, 0.1, 0.5]), Vector3::new(0.05, -0.02, 1.2));
    let points_2d: Vec<Vector2<f64>> = spec
        .propeller_layout
        .iter()
        .map(|p| project_point(&k, &pose.transform(p)).unwrap())
        .collect();
    let problem = PnpProblem {
        points_3d_body: spec.propeller_layout.to_vec(),
        points_2d,
        intrinsics: k,
    };
    c.bench_function("pnp_solve_planar_4pt", |bench| bench.iter(|| pnp_solve(black_box(&problem)).unwrap()));
}

fn forward(c: &mut Criterion) {
    let device = Device::Cpu;
    let model = Model::new(TrainConfig::desk().model_config(128, 128), DType::F32, &device).unwrap();
    let k = CameraIntrinsics::new(160.0, 160.0, 64.0, 64.0).unwrap();
    let image = Tensor::rand(0f32, 1f32, (1, 3, 128, 128), &device).unwrap();
    c.bench_function("model_forward_128px", |bench| {
        bench.iter(|| model.forward(ModelInput::Images(black_box(&image)), &k).unwrap())
    });
}

fn smoothing(c: &mut Criterion) {
    let track: Vec<TrackPose> = (0..360)
        .map(|i| {
            let s = i as f64 / 360.0;
            TrackPose {
                r: [s, 0.1 + 0.02 * (6.0 * s).sin(), 0.5],
                t: [0.1 * s, 0.0, 1.0 + s],
            }
        })
        .collect();
    c.bench_function("gaussian_smooth_360_frames", |bench| {
        bench.iter(|| gaussian_smooth_track(black_box(&track), 2.0).unwrap())
    });
}

criterion_group!(benches, geometry, pnp, forward, smoothing);
criterion_main!(benches);
