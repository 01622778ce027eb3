// temporary calibration probe; removed before release
use std::time::Instant;

use mcd_core::data::{make_moons, LabeledDataset, UnlabeledDataset};
use mcd_core::mcd::{predictions, train, DiscrepancyKind, McdArch, TrainingConfig, Variant};
use mcd_core::nn::OptimizerKind;

fn base_cfg() -> TrainingConfig {
    TrainingConfig {
        n: 3,
        k: 2,
        batch_size: 200,
        optimizer: OptimizerKind::Adam { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        lambda_cb: 0.0,
        discrepancy: DiscrepancyKind::L1,
        variant: Variant::ThreeStep,
        max_iters: 3000,
        eval_every: 500,
        g_seed: 11,
        f1_seed: 12,
        f2_seed: 13,
        data_seed: 14,
    }
}

fn run(tag: &str, cfg: &TrainingConfig, independent_target: bool, dump: Option<&str>) {
    let source = make_moons(300, 0.1, 14);
    let target = if independent_target {
        make_moons(300, 0.1, 15).rotate(30.0).unwrap().to_unlabeled()
    } else {
        source.rotate(30.0).unwrap().to_unlabeled()
    };
    let eval = make_moons(500, 0.1, 14 ^ 0xE7A1).rotate(30.0).unwrap();
    let t0 = Instant::now();
    let out = train(cfg, &McdArch::toy(), &source, &target, &eval).unwrap();
    let r = out.metrics.last().unwrap();
    println!(
        "{tag:32} adv {:.4}  src {:.3}  tgt1 {:.3}  tgt2 {:.3}  ({:.0}s)",
        r.loss_adv, r.acc_src_f1, r.acc_tgt_f1, r.acc_tgt_f2, t0.elapsed().as_secs_f64()
    );

    if let Some(path) = dump {
        // 200x200 raster over the joint bounding box, plus sample overlays
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in [&source.features, &target.features] {
            for i in 0..t.shape()[0] {
                xmin = xmin.min(t.data()[2 * i]);
                xmax = xmax.max(t.data()[2 * i]);
                ymin = ymin.min(t.data()[2 * i + 1]);
                ymax = ymax.max(t.data()[2 * i + 1]);
            }
        }
        let (w, h) = (200usize, 200usize);
        let mut grid = Vec::with_capacity(w * h * 2);
        for j in 0..h {
            for i in 0..w {
                let x = xmin + (xmax - xmin) * i as f64 / (w - 1) as f64;
                let y = ymax - (ymax - ymin) * j as f64 / (h - 1) as f64;
                grid.push(x);
                grid.push(y);
            }
        }
        let grid_t = mcd_core::Tensor::matrix(w * h, 2, grid).unwrap();
        let p1 = predictions(&out.g, &out.f1, &grid_t).unwrap();
        let p2 = predictions(&out.g, &out.f2, &grid_t).unwrap();
        let mut img = vec![0u8; w * h * 3];
        for idx in 0..w * h {
            let px = &mut img[idx * 3..idx * 3 + 3];
            match (p1[idx], p2[idx]) {
                (0, 0) => px.copy_from_slice(&[255, 182, 193]),
                (1, 1) => px.copy_from_slice(&[144, 238, 144]),
                _ => px.copy_from_slice(&[0, 0, 0]),
            }
        }
        // overlay: source class0 red, class1 dark green, target blue
        let mut put = |x: f64, y: f64, color: [u8; 3]| {
            let i = ((x - xmin) / (xmax - xmin) * (w - 1) as f64).round() as isize;
            let j = ((ymax - y) / (ymax - ymin) * (h - 1) as f64).round() as isize;
            if (0..w as isize).contains(&i) && (0..h as isize).contains(&j) {
                let o = (j as usize * w + i as usize) * 3;
                img[o..o + 3].copy_from_slice(&color);
            }
        };
        for i in 0..source.len() {
            let (x, y) = (source.features.data()[2 * i], source.features.data()[2 * i + 1]);
            let c = if source.labels[i] == 0 { [200, 0, 0] } else { [0, 120, 0] };
            put(x, y, c);
        }
        for i in 0..target.len() {
            let (x, y) = (target.features.data()[2 * i], target.features.data()[2 * i + 1]);
            put(x, y, [0, 0, 255]);
        }
        let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
        ppm.extend_from_slice(&img);
        std::fs::write(path, ppm).unwrap();
        println!("  wrote {path}");
    }
}

fn main() {
    run("3step 2e-4 3k", &base_cfg(), false, Some("/tmp/b_3step.ppm"));
    run("srconly 2e-4 3k", &TrainingConfig { variant: Variant::SourceOnly, ..base_cfg() }, false, Some("/tmp/b_src.ppm"));
    run("noC 2e-4 3k", &TrainingConfig { variant: Variant::NoStepC, ..base_cfg() }, false, Some("/tmp/b_noc.ppm"));
    run("3step indep-target", &base_cfg(), true, None);
    run("3step lr1e-3 diag", &TrainingConfig { optimizer: OptimizerKind::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, ..base_cfg() }, false, Some("/tmp/b_lr13.ppm"));
    run("3step lr1e-3 6k diag", &TrainingConfig { max_iters: 6000, optimizer: OptimizerKind::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, ..base_cfg() }, false, None);
    run("3step 2e-4 20k", &TrainingConfig { max_iters: 20000, ..base_cfg() }, false, Some("/tmp/b_20k.ppm"));
}
