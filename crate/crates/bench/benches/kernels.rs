use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use wifipose::eval::{pck, PckConfig};
use wifipose::nnet::ops::{conv2d, conv2d_backward, group_norm, ConvGeom, Workspace};
use wifipose::nnet::{build_wpnet, WpnetConfig};
use wifipose::pose::PoseLandmarks;
use wifipose::preprocess::preprocess;
use wifipose::synth::{make_scene, render_csi, SceneConfig};
use wifipose::train::batch_gradient;

fn wave(n: usize, k: f32) -> Vec<f32> {
    (0..n).map(|i| (i as f32 * k).sin()).collect()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    group.sample_size(10);
    for (ch, hw) in [(16usize, 136usize), (32, 68), (64, 34), (128, 17)] {
        let g = ConvGeom { cin: ch, cout: ch, kernel: 3, stride: 1, pad: 1 };
        let x = wave(ch * hw * hw, 0.013);
        let w: Vec<f32> = wave(ch * ch * 9, 0.7).iter().map(|v| v * 0.1).collect();
        let mut ws = Workspace::new();
        group.throughput(Throughput::Elements((ch * ch * 9 * hw * hw) as u64));
        group.bench_function(BenchmarkId::new("forward", format!("{ch}x{hw}")), |b| {
            b.iter(|| black_box(conv2d(&g, &w, &x, hw, hw, &mut ws)))
        });
        let mut dw = vec![0.0f32; w.len()];
        group.bench_function(BenchmarkId::new("backward", format!("{ch}x{hw}")), |b| {
            b.iter(|| black_box(conv2d_backward(&g, &w, &x, hw, hw, &x, &mut dw, true, &mut ws)))
        });
    }
    group.finish();
}

fn norm(c: &mut Criterion) {
    let (ch, hw) = (16, 136);
    let x = wave(ch * hw * hw, 0.013);
    let (s, o) = (vec![1.0f32; ch], vec![0.0f32; ch]);
    c.bench_function("group_norm 16x136", |b| b.iter(|| black_box(group_norm(&x, ch, 8, &s, &o, true))));
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("wpnet_quarter");
    group.sample_size(10);
    let params = build_wpnet::<f32>(WpnetConfig { width_multiplier: 0.25, ..Default::default() }, 0).unwrap();
    let xs: Vec<Vec<f32>> = (0..4).map(|i| wave(136 * 136, 0.01 + i as f32 * 1e-3)).collect();
    let ts = vec![vec![0.5f32; 34]; 4];
    let xr: Vec<&[f32]> = xs.iter().map(|x| x.as_slice()).collect();
    let tr: Vec<&[f32]> = ts.iter().map(|x| x.as_slice()).collect();
    group.bench_function("forward", |b| b.iter(|| black_box(params.forward_raw(xr[0]).unwrap())));
    group.throughput(Throughput::Elements(4));
    group.bench_function("gradient batch 4", |b| b.iter(|| black_box(batch_gradient(&params, &xr, &tr).unwrap())));
    group.finish();
}

fn data_path(c: &mut Criterion) {
    let scene = make_scene(SceneConfig { n_frames: 20, ..Default::default() }).unwrap();
    c.bench_function("render_csi frame", |b| b.iter(|| black_box(render_csi(&scene, 3).unwrap())));
    let frame = render_csi(&scene, 3).unwrap();
    c.bench_function("preprocess frame", |b| b.iter(|| black_box(preprocess(&frame).unwrap())));

    let gts: Vec<PoseLandmarks> = (0..1000).map(|i| scene.landmarks_per_frame[i % 20]).collect();
    let preds: Vec<PoseLandmarks> = gts
        .iter()
        .map(|p| {
            let mut q = *p;
            q.points.iter_mut().for_each(|v| v[0] += 3.0);
            q
        })
        .collect();
    c.bench_function("pck 1000 frames", |b| b.iter(|| black_box(pck(&preds, &gts, &PckConfig::default()).unwrap())));
}

criterion_group!(benches, conv, norm, network, data_path);
criterion_main!(benches);
