//! Desk-scale run of the whole workflow through the command functions:
//! phantoms, three stage ensembles, cascade prediction and evaluation.
//!
//! `cargo run --release --example desk_pipeline -- [train_cases] [test_cases] [epochs]`

use std::time::Instant;

use hcdnn::cascade::CascadeModels;
use hcdnn::cli::{case_paths, cmd_evaluate, cmd_phantom, cmd_predict, cmd_train, PhantomConfig, TrainArgs};
use hcdnn::eval::{dice, SummaryReport};
use hcdnn::train::Stage;
use hcdnn::volio::read_labels;

fn stage_config(stage: Stage, epochs: usize, ensemble: &str) -> String {
    let geometry = match stage {
        Stage::Localize => "z_mm = native\naxial = resize 32\ncontext_slices = 3\n",
        Stage::Liver => "z_mm = native\naxial = voi-square 64\nmargin = 3\n",
        Stage::Tumor => "z_mm = native\naxial = voi-aligned 8\nmargin = 3\n",
    };
    format!(
        "stage = {stage}\nmodel = reduced\nlevels = 16:3, 32:3\nensemble = {ensemble}\nepochs = {epochs}\nbatch_size = 8\nseed = {}\n{geometry}",
        10 + stage.number()
    )
}

fn main() -> hcdnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (n_train, n_test, epochs) = (args.first().copied().unwrap_or(20), args.get(1).copied().unwrap_or(10), args.get(2).copied().unwrap_or(30));
    let root = std::env::temp_dir().join("hcdnn_desk_pipeline");
    let _ = std::fs::remove_dir_all(&root);
    let (train_dir, test_dir) = (root.join("train"), root.join("test"));

    let phantoms = PhantomConfig { count: n_train + n_test, size: [64, 64, 40], spacing: [2.0, 2.0, 3.0], seed: 2024, ..Default::default() };
    let ids = cmd_phantom(&phantoms, &train_dir)?;
    std::fs::create_dir_all(&test_dir).ok();
    for id in &ids[n_train..] {
        let (v, l) = case_paths(&train_dir, id);
        let (tv, tl) = case_paths(&test_dir, id);
        for (a, b) in [(v, tv), (l, tl)] {
            std::fs::rename(&a, &b).ok();
            std::fs::rename(a.with_extension("raw"), b.with_extension("raw")).ok();
        }
    }

    let t = Instant::now();
    for stage in [Stage::Localize, Stage::Liver, Stage::Tumor] {
        let config = root.join(format!("stage{stage}.cfg"));
        std::fs::write(&config, stage_config(stage, epochs, &std::env::var("ENSEMBLE").unwrap_or("cv".into()))).ok();
        let s = Instant::now();
        cmd_train(&TrainArgs {
            stage,
            data: train_dir.clone(),
            config,
            out: root.join(format!("models{stage}")),
            epochs: None,
            seed: None,
        })?;
        println!("stage {stage} trained in {:.0} s", s.elapsed().as_secs_f64());
    }

    let models = CascadeModels::load(root.join("models1"), root.join("models2"), root.join("models3"))?;
    let pred_dir = root.join("pred");
    let mut coarse_sum = 0.0;
    let mut fine_sum = 0.0;
    for id in &ids[n_train..] {
        let (v, l) = case_paths(&test_dir, id);
        let out = cmd_predict(&models, &v, pred_dir.join(format!("{id}_labels.mhd")))?;
        let truth = read_labels(&l)?.liver_mask();
        let (c, f) = (dice(&out.coarse_liver, &truth)?, dice(&out.labels.liver_mask(), &truth)?);
        println!("{id}: {}, coarse liver dice {c:.4}, fine {f:.4}", out.status);
        coarse_sum += c;
        fine_sum += f;
    }
    let rows = cmd_evaluate(&pred_dir, &test_dir, root.join("report.txt"))?;
    let s = SummaryReport::new(rows)?;
    println!("{}", std::fs::read_to_string(root.join("report.txt")).unwrap_or_default());
    println!(
        "liver dice {:.4}, tumor dice {:.4}, burden rmse {:.4}, coarse {:.4} vs fine {:.4}, {:.0} s total",
        s.liver.dice_per_case,
        s.tumor.dice_per_case,
        s.burden_rmse,
        coarse_sum / n_test as f64,
        fine_sum / n_test as f64,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
